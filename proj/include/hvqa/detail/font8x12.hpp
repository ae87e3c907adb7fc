// Generated by scripts/make_font.py from DejaVu Sans Mono (Bitstream Vera license).
// Do not edit by hand.
#pragma once

#include <array>
#include <cstdint>

namespace hvqa::detail {

inline constexpr int kFontWidth = 8;
inline constexpr int kFontHeight = 12;
inline constexpr char32_t kFontFirst = 0x20;
inline constexpr char32_t kFontLast = 0x7e;

// One row per byte, MSB is the leftmost pixel.
inline constexpr std::array<std::array<std::uint8_t, 12>, 95> kFont8x12 = {{
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},  // ' '
    {{0x00, 0x00, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x00, 0x10, 0x00, 0x00}},  // '!'
    {{0x00, 0x00, 0x28, 0x28, 0x28, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},  // '"'
    {{0x00, 0x00, 0x14, 0x2c, 0x7e, 0x28, 0x28, 0xfc, 0x50, 0x50, 0x00, 0x00}},  // '#'
    {{0x00, 0x00, 0x10, 0x3c, 0x50, 0x50, 0x38, 0x1c, 0x14, 0x78, 0x10, 0x10}},  // '$'
    {{0x00, 0x00, 0x60, 0x90, 0x64, 0x18, 0x20, 0x5c, 0x16, 0x1c, 0x00, 0x00}},  // '%'
    {{0x00, 0x00, 0x38, 0x60, 0x60, 0x60, 0xd6, 0x8c, 0xcc, 0x7c, 0x00, 0x00}},  // '&'
    {{0x00, 0x00, 0x10, 0x10, 0x10, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},  // '''
    {{0x00, 0x18, 0x10, 0x10, 0x30, 0x20, 0x20, 0x30, 0x10, 0x10, 0x08, 0x00}},  // '('
    {{0x00, 0x20, 0x30, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x30, 0x20, 0x00}},  // ')'
    {{0x00, 0x00, 0x10, 0x54, 0x38, 0x38, 0x54, 0x10, 0x00, 0x00, 0x00, 0x00}},  // '*'
    {{0x00, 0x00, 0x00, 0x00, 0x10, 0x10, 0xfc, 0x10, 0x10, 0x00, 0x00, 0x00}},  // '+'
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x10, 0x30, 0x20, 0x00}},  // ','
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x38, 0x00, 0x00, 0x00, 0x00, 0x00}},  // '-'
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x10, 0x10, 0x00, 0x00}},  // '.'
    {{0x00, 0x00, 0x0c, 0x08, 0x18, 0x10, 0x10, 0x20, 0x20, 0x40, 0x40, 0x00}},  // '/'
    {{0x00, 0x00, 0x38, 0x6c, 0x44, 0x44, 0x54, 0x44, 0x6c, 0x38, 0x00, 0x00}},  // '0'
    {{0x00, 0x00, 0x70, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x7c, 0x00, 0x00}},  // '1'
    {{0x00, 0x00, 0x78, 0x4c, 0x0c, 0x08, 0x18, 0x30, 0x60, 0x7c, 0x00, 0x00}},  // '2'
    {{0x00, 0x00, 0x38, 0x4c, 0x0c, 0x38, 0x0c, 0x04, 0x4c, 0x78, 0x00, 0x00}},  // '3'
    {{0x00, 0x00, 0x18, 0x18, 0x28, 0x48, 0x48, 0xfc, 0x08, 0x08, 0x00, 0x00}},  // '4'
    {{0x00, 0x00, 0x78, 0x40, 0x40, 0x78, 0x0c, 0x0c, 0x0c, 0x78, 0x00, 0x00}},  // '5'
    {{0x00, 0x00, 0x38, 0x60, 0x40, 0x78, 0x4c, 0x44, 0x4c, 0x38, 0x00, 0x00}},  // '6'
    {{0x00, 0x00, 0x7c, 0x0c, 0x08, 0x18, 0x10, 0x10, 0x30, 0x20, 0x00, 0x00}},  // '7'
    {{0x00, 0x00, 0x38, 0x4c, 0x4c, 0x38, 0x4c, 0x44, 0x4c, 0x38, 0x00, 0x00}},  // '8'
    {{0x00, 0x00, 0x78, 0x4c, 0x44, 0x4c, 0x7c, 0x04, 0x08, 0x78, 0x00, 0x00}},  // '9'
    {{0x00, 0x00, 0x00, 0x00, 0x10, 0x10, 0x00, 0x00, 0x10, 0x10, 0x00, 0x00}},  // ':'
    {{0x00, 0x00, 0x00, 0x00, 0x10, 0x10, 0x00, 0x00, 0x10, 0x30, 0x20, 0x00}},  // ';'
    {{0x00, 0x00, 0x00, 0x00, 0x0c, 0x38, 0xc0, 0x38, 0x0c, 0x00, 0x00, 0x00}},  // '<'
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0xfc, 0x00, 0xfc, 0x00, 0x00, 0x00, 0x00}},  // '='
    {{0x00, 0x00, 0x00, 0x00, 0xc0, 0x38, 0x0c, 0x38, 0xc0, 0x00, 0x00, 0x00}},  // '>'
    {{0x00, 0x00, 0x78, 0x0c, 0x08, 0x18, 0x10, 0x10, 0x00, 0x30, 0x00, 0x00}},  // '?'
    {{0x00, 0x00, 0x38, 0x64, 0xc4, 0x9c, 0xa4, 0xa4, 0x9c, 0x40, 0x60, 0x3c}},  // '@'
    {{0x00, 0x00, 0x30, 0x38, 0x28, 0x68, 0x48, 0x7c, 0x44, 0xc4, 0x00, 0x00}},  // 'A'
    {{0x00, 0x00, 0x78, 0x4c, 0x4c, 0x78, 0x4c, 0x44, 0x44, 0x78, 0x00, 0x00}},  // 'B'
    {{0x00, 0x00, 0x38, 0x64, 0x40, 0x40, 0x40, 0x40, 0x64, 0x38, 0x00, 0x00}},  // 'C'
    {{0x00, 0x00, 0x70, 0x48, 0x44, 0x44, 0x44, 0x44, 0x4c, 0x78, 0x00, 0x00}},  // 'D'
    {{0x00, 0x00, 0x7c, 0x40, 0x40, 0x7c, 0x40, 0x40, 0x40, 0x7c, 0x00, 0x00}},  // 'E'
    {{0x00, 0x00, 0x7c, 0x40, 0x40, 0x7c, 0x40, 0x40, 0x40, 0x40, 0x00, 0x00}},  // 'F'
    {{0x00, 0x00, 0x38, 0x64, 0x40, 0xc0, 0xcc, 0x44, 0x64, 0x38, 0x00, 0x00}},  // 'G'
    {{0x00, 0x00, 0x44, 0x44, 0x44, 0x7c, 0x44, 0x44, 0x44, 0x44, 0x00, 0x00}},  // 'H'
    {{0x00, 0x00, 0x7c, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x7c, 0x00, 0x00}},  // 'I'
    {{0x00, 0x00, 0x38, 0x08, 0x08, 0x08, 0x08, 0x08, 0x08, 0x70, 0x00, 0x00}},  // 'J'
    {{0x00, 0x00, 0x44, 0x48, 0x50, 0x70, 0x50, 0x48, 0x4c, 0x44, 0x00, 0x00}},  // 'K'
    {{0x00, 0x00, 0x40, 0x40, 0x40, 0x40, 0x40, 0x40, 0x40, 0x7c, 0x00, 0x00}},  // 'L'
    {{0x00, 0x00, 0xcc, 0xec, 0xec, 0xf4, 0xd4, 0xc4, 0xc4, 0xc4, 0x00, 0x00}},  // 'M'
    {{0x00, 0x00, 0x44, 0x64, 0x64, 0x54, 0x54, 0x5c, 0x4c, 0x4c, 0x00, 0x00}},  // 'N'
    {{0x00, 0x00, 0x38, 0x4c, 0x44, 0x44, 0x44, 0x44, 0x4c, 0x38, 0x00, 0x00}},  // 'O'
    {{0x00, 0x00, 0x78, 0x4c, 0x44, 0x4c, 0x78, 0x40, 0x40, 0x40, 0x00, 0x00}},  // 'P'
    {{0x00, 0x00, 0x38, 0x4c, 0x44, 0x44, 0x44, 0x44, 0x4c, 0x38, 0x08, 0x00}},  // 'Q'
    {{0x00, 0x00, 0x78, 0x4c, 0x4c, 0x4c, 0x78, 0x48, 0x44, 0x44, 0x00, 0x00}},  // 'R'
    {{0x00, 0x00, 0x38, 0x40, 0x40, 0x70, 0x18, 0x04, 0x4c, 0x78, 0x00, 0x00}},  // 'S'
    {{0x00, 0x00, 0xfc, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x00, 0x00}},  // 'T'
    {{0x00, 0x00, 0x44, 0x44, 0x44, 0x44, 0x44, 0x44, 0x4c, 0x38, 0x00, 0x00}},  // 'U'
    {{0x00, 0x00, 0xc4, 0x44, 0x4c, 0x48, 0x28, 0x28, 0x38, 0x30, 0x00, 0x00}},  // 'V'
    {{0x00, 0x00, 0x86, 0x86, 0x94, 0xf4, 0x7c, 0x6c, 0x6c, 0x4c, 0x00, 0x00}},  // 'W'
    {{0x00, 0x00, 0x44, 0x68, 0x38, 0x30, 0x38, 0x28, 0x4c, 0xc4, 0x00, 0x00}},  // 'X'
    {{0x00, 0x00, 0xc4, 0x4c, 0x28, 0x30, 0x10, 0x10, 0x10, 0x10, 0x00, 0x00}},  // 'Y'
    {{0x00, 0x00, 0x7c, 0x0c, 0x08, 0x10, 0x10, 0x20, 0x40, 0x7c, 0x00, 0x00}},  // 'Z'
    {{0x00, 0x38, 0x30, 0x30, 0x30, 0x30, 0x30, 0x30, 0x30, 0x30, 0x38, 0x00}},  // '['
    {{0x00, 0x00, 0x40, 0x40, 0x20, 0x20, 0x10, 0x10, 0x18, 0x08, 0x0c, 0x00}},  // 'backslash'
    {{0x00, 0x30, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x30, 0x00}},  // ']'
    {{0x00, 0x00, 0x30, 0x28, 0x44, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},  // '^'
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},  // '_'
    {{0x00, 0x20, 0x10, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},  // '`'
    {{0x00, 0x00, 0x00, 0x00, 0x78, 0x0c, 0x7c, 0x44, 0x4c, 0x7c, 0x00, 0x00}},  // 'a'
    {{0x00, 0x40, 0x40, 0x40, 0x78, 0x6c, 0x44, 0x44, 0x6c, 0x78, 0x00, 0x00}},  // 'b'
    {{0x00, 0x00, 0x00, 0x00, 0x3c, 0x60, 0x40, 0x40, 0x60, 0x3c, 0x00, 0x00}},  // 'c'
    {{0x00, 0x0c, 0x0c, 0x0c, 0x3c, 0x4c, 0x4c, 0x4c, 0x4c, 0x3c, 0x00, 0x00}},  // 'd'
    {{0x00, 0x00, 0x00, 0x00, 0x38, 0x44, 0x7c, 0x40, 0x40, 0x3c, 0x00, 0x00}},  // 'e'
    {{0x00, 0x1c, 0x10, 0x10, 0x7c, 0x10, 0x10, 0x10, 0x10, 0x10, 0x00, 0x00}},  // 'f'
    {{0x00, 0x00, 0x00, 0x00, 0x3c, 0x4c, 0x4c, 0x4c, 0x4c, 0x3c, 0x0c, 0x78}},  // 'g'
    {{0x00, 0x40, 0x40, 0x40, 0x78, 0x6c, 0x44, 0x44, 0x44, 0x44, 0x00, 0x00}},  // 'h'
    {{0x00, 0x10, 0x00, 0x00, 0x70, 0x10, 0x10, 0x10, 0x10, 0x7c, 0x00, 0x00}},  // 'i'
    {{0x00, 0x10, 0x00, 0x00, 0x70, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x70}},  // 'j'
    {{0x00, 0x40, 0x40, 0x40, 0x4c, 0x58, 0x70, 0x78, 0x48, 0x44, 0x00, 0x00}},  // 'k'
    {{0x00, 0x70, 0x30, 0x30, 0x30, 0x30, 0x30, 0x30, 0x30, 0x1c, 0x00, 0x00}},  // 'l'
    {{0x00, 0x00, 0x00, 0x00, 0xfc, 0xd4, 0xd4, 0xd4, 0xd4, 0xd4, 0x00, 0x00}},  // 'm'
    {{0x00, 0x00, 0x00, 0x00, 0x78, 0x6c, 0x44, 0x44, 0x44, 0x44, 0x00, 0x00}},  // 'n'
    {{0x00, 0x00, 0x00, 0x00, 0x38, 0x4c, 0x44, 0x44, 0x4c, 0x38, 0x00, 0x00}},  // 'o'
    {{0x00, 0x00, 0x00, 0x00, 0x78, 0x6c, 0x44, 0x44, 0x6c, 0x78, 0x40, 0x40}},  // 'p'
    {{0x00, 0x00, 0x00, 0x00, 0x3c, 0x4c, 0x44, 0x44, 0x4c, 0x3c, 0x04, 0x04}},  // 'q'
    {{0x00, 0x00, 0x00, 0x00, 0x3c, 0x30, 0x20, 0x20, 0x20, 0x20, 0x00, 0x00}},  // 'r'
    {{0x00, 0x00, 0x00, 0x00, 0x38, 0x40, 0x70, 0x18, 0x0c, 0x78, 0x00, 0x00}},  // 's'
    {{0x00, 0x00, 0x20, 0x20, 0x7c, 0x20, 0x20, 0x20, 0x30, 0x1c, 0x00, 0x00}},  // 't'
    {{0x00, 0x00, 0x00, 0x00, 0x44, 0x44, 0x44, 0x44, 0x4c, 0x3c, 0x00, 0x00}},  // 'u'
    {{0x00, 0x00, 0x00, 0x00, 0x44, 0x4c, 0x68, 0x28, 0x38, 0x30, 0x00, 0x00}},  // 'v'
    {{0x00, 0x00, 0x00, 0x00, 0x86, 0x84, 0xd4, 0x74, 0x6c, 0x68, 0x00, 0x00}},  // 'w'
    {{0x00, 0x00, 0x00, 0x00, 0x4c, 0x28, 0x30, 0x30, 0x68, 0x44, 0x00, 0x00}},  // 'x'
    {{0x00, 0x00, 0x00, 0x00, 0x44, 0x4c, 0x68, 0x28, 0x30, 0x10, 0x30, 0x60}},  // 'y'
    {{0x00, 0x00, 0x00, 0x00, 0x7c, 0x08, 0x10, 0x20, 0x20, 0x7c, 0x00, 0x00}},  // 'z'
    {{0x00, 0x1c, 0x10, 0x10, 0x10, 0x60, 0x30, 0x10, 0x10, 0x10, 0x1c, 0x00}},  // '{'
    {{0x00, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x10}},  // '|'
    {{0x00, 0x60, 0x10, 0x10, 0x10, 0x1c, 0x10, 0x10, 0x10, 0x30, 0x60, 0x00}},  // '}'
    {{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x74, 0x1c, 0x00, 0x00, 0x00, 0x00}},  // '~'
}};

}  // namespace hvqa::detail
