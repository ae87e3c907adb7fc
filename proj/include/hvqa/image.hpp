// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hvqa {

/// Pixel rectangle in image coordinates.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const Rect&, const Rect&) = default;
};

/// 8-bit grayscale raster, row-major, 0 = black.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill) : width(w), height(h), pixels(std::size_t(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }

  bool contains(const Rect& r) const {
    return r.x >= 0 && r.y >= 0 && r.w >= 0 && r.h >= 0 && r.x + r.w <= width &&
           r.y + r.h <= height;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char (&type)[5],
                      const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const auto type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = ::crc32(0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Encodes as an 8-bit grayscale PNG (color type 0, filter 0 on every row).
/// Output is a pure function of the pixels.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("encode_png: empty image");

  std::vector<std::uint8_t> raw;
  raw.reserve(std::size_t(img.width + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const auto* row = img.pixels.data() + std::size_t(y) * img.width;
    raw.insert(raw.end(), row, row + img.width);
  }
  uLongf cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> idat(cap);
  if (compress2(idat.data(), &cap, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("encode_png: zlib compression failed");
  }
  idat.resize(cap);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth, gray, deflate, filter, no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", idat);
  detail::put_chunk(out, "IEND", {});
  return out;
}

/// Decodes PNGs written by encode_png (grayscale, 8-bit, filter 0). Not a
/// general PNG reader.
inline Image decode_png(const std::vector<std::uint8_t>& png) {
  auto fail = [] { throw std::runtime_error("decode_png: unsupported or corrupt PNG"); };
  if (png.size() < 8 + 25 + 12) fail();
  auto u32 = [&](std::size_t at) {
    return (std::uint32_t(png[at]) << 24) | (std::uint32_t(png[at + 1]) << 16) |
           (std::uint32_t(png[at + 2]) << 8) | std::uint32_t(png[at + 3]);
  };
  std::size_t pos = 8;
  Image img;
  std::vector<std::uint8_t> zdata;
  while (pos + 12 <= png.size()) {
    const auto len = u32(pos);
    if (pos + 12 + len > png.size()) fail();
    const std::string type(png.begin() + pos + 4, png.begin() + pos + 8);
    const auto* data = png.data() + pos + 8;
    if (type == "IHDR") {
      if (len != 13 || data[8] != 8 || data[9] != 0) fail();
      img.width = static_cast<int>(u32(pos + 8));
      img.height = static_cast<int>(u32(pos + 12));
    } else if (type == "IDAT") {
      zdata.insert(zdata.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0) fail();
  uLongf raw_len = static_cast<uLongf>(std::size_t(img.width + 1) * img.height);
  std::vector<std::uint8_t> raw(raw_len);
  if (uncompress(raw.data(), &raw_len, zdata.data(), static_cast<uLong>(zdata.size())) != Z_OK ||
      raw_len != raw.size()) {
    fail();
  }
  img.pixels.resize(std::size_t(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    const auto* row = raw.data() + std::size_t(y) * (img.width + 1);
    if (row[0] != 0) fail();
    std::copy(row + 1, row + 1 + img.width, img.pixels.begin() + std::size_t(y) * img.width);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace hvqa
