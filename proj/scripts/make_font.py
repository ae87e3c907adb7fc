#!/usr/bin/env python3
"""Rasterize printable ASCII from DejaVu Sans Mono into an 8x12 1-bit table.

Writes include/hvqa/detail/font8x12.hpp. Only needed when changing the font;
the generated header is checked in.
"""
import sys
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

WIDTH, HEIGHT = 8, 12
FONT_PATH = "/usr/share/fonts/truetype/dejavu/DejaVuSansMono.ttf"


def rasterize(font, ch):
    img = Image.new("L", (WIDTH, HEIGHT), 0)
    draw = ImageDraw.Draw(img)
    draw.text((0, -1), ch, fill=255, font=font)
    rows = []
    for y in range(HEIGHT):
        bits = 0
        for x in range(WIDTH):
            if img.getpixel((x, y)) >= 100:
                bits |= 0x80 >> x
        rows.append(bits)
    return rows


def main(out):
    font = ImageFont.truetype(FONT_PATH, 11)
    lines = [
        "// Generated by scripts/make_font.py from DejaVu Sans Mono (Bitstream Vera license).",
        "// Do not edit by hand.",
        "#pragma once",
        "",
        "#include <array>",
        "#include <cstdint>",
        "",
        "namespace hvqa::detail {",
        "",
        f"inline constexpr int kFontWidth = {WIDTH};",
        f"inline constexpr int kFontHeight = {HEIGHT};",
        "inline constexpr char32_t kFontFirst = 0x20;",
        "inline constexpr char32_t kFontLast = 0x7e;",
        "",
        "// One row per byte, MSB is the leftmost pixel.",
        f"inline constexpr std::array<std::array<std::uint8_t, {HEIGHT}>, 95> kFont8x12 = {{{{",
    ]
    for code in range(0x20, 0x7F):
        rows = rasterize(font, chr(code))
        body = ", ".join(f"0x{r:02x}" for r in rows)
        label = chr(code) if chr(code) not in "\\" else "backslash"
        lines.append(f"    {{{{{body}}}}},  // '{label}'")
    lines += ["}};", "", "}  // namespace hvqa::detail", ""]
    Path(out).write_text("\n".join(lines))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "include/hvqa/detail/font8x12.hpp")
