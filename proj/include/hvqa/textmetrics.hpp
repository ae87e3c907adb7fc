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

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <ranges>
#include <string>
#include <string_view>
#include <vector>

namespace hvqa {

namespace utf8 {

inline constexpr char32_t kReplacement = 0xFFFD;

/// Decodes UTF-8 into Unicode scalar values. Malformed sequences, overlong
/// forms and surrogates decode to U+FFFD one byte at a time, so the result
/// is total over arbitrary bytes.
inline std::u32string decode(std::string_view in) {
  std::u32string out;
  out.reserve(in.size());
  std::size_t i = 0;
  const auto n = in.size();
  while (i < n) {
    const auto b0 = static_cast<unsigned char>(in[i]);
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    }
    int len = 0;
    char32_t cp = 0;
    char32_t min = 0;
    if ((b0 & 0xE0) == 0xC0) {
      len = 2, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4, cp = b0 & 0x07, min = 0x10000;
    }
    bool ok = len > 0 && i + len <= n;
    for (int k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(in[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (b & 0x3F);
      }
    }
    if (ok && (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) {
      ok = false;
    }
    if (ok) {
      out.push_back(cp);
      i += len;
    } else {
      out.push_back(kReplacement);
      ++i;
    }
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = kReplacement;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view in) {
  std::string out;
  out.reserve(in.size());
  for (char32_t cp : in) append(out, cp);
  return out;
}

inline std::string encode(char32_t cp) {
  std::string out;
  append(out, cp);
  return out;
}

}  // namespace utf8

/// A random-access sequence of symbols. Anything convertible to
/// std::string_view is excluded so narrow strings are always decoded as UTF-8
/// instead of being compared byte by byte.
template <typename R>
concept SymbolSequence =
    std::ranges::random_access_range<R> && std::ranges::sized_range<R> &&
    !std::convertible_to<const R&, std::string_view>;

/// Unit-cost edit distance (insert, delete, substitute) between two symbol
/// sequences. Two-row dynamic program, O(|a|·|b|) time, O(min) space.
template <SymbolSequence A, SymbolSequence B>
std::size_t levenshtein(const A& a, const B& b) {
  const auto n = static_cast<std::size_t>(std::ranges::size(a));
  const auto m = static_cast<std::size_t>(std::ranges::size(b));
  if (n < m) return levenshtein(b, a);
  if (m == 0) return n;

  std::vector<std::size_t> row(m + 1);
  for (std::size_t j = 0; j <= m; ++j) row[j] = j;
  auto ai = std::ranges::begin(a);
  const auto bi = std::ranges::begin(b);
  for (std::size_t i = 1; i <= n; ++i, ++ai) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t up = row[j];
      const std::size_t cost = (*ai == bi[j - 1]) ? 0 : 1;
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + cost});
      diag = up;
    }
  }
  return row[m];
}

/// Distance over Unicode scalar values, not bytes.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  return levenshtein(utf8::decode(a), utf8::decode(b));
}

/// Normalized similarity 1 - d/max_len in [0, 1]; two empty sequences are
/// identical and score 1.
template <SymbolSequence A, SymbolSequence B>
double similarity(const A& pred, const B& truth) {
  const auto n = static_cast<std::size_t>(std::ranges::size(pred));
  const auto m = static_cast<std::size_t>(std::ranges::size(truth));
  if (n == 0 && m == 0) return 1.0;
  const auto d = levenshtein(pred, truth);
  return 1.0 - static_cast<double>(d) / static_cast<double>(std::max(n, m));
}

inline double similarity(std::string_view pred, std::string_view truth) {
  return similarity(utf8::decode(pred), utf8::decode(truth));
}

}  // namespace hvqa
