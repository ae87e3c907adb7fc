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
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hvqa/textmetrics.hpp"
#include "json.hpp"

namespace hvqa {

/// The five-field character-level OCR answer.
struct StructuredAnswer {
  std::u32string clear_chars;
  std::u32string not_clear_chars;
  std::uint64_t clear_count = 0;
  std::uint64_t not_clear_count = 0;
  std::string final_ocr;  // UTF-8; occlusion spaces are significant

  friend bool operator==(const StructuredAnswer&, const StructuredAnswer&) = default;
};

namespace keys {
inline constexpr std::string_view kClearChars = "clear char-level OCR";
inline constexpr std::string_view kNotClearChars = "not clear enough char-level OCR";
inline constexpr std::string_view kClearCount = "clear number";
inline constexpr std::string_view kNotClearCount = "not clear enough number";
inline constexpr std::string_view kFinal = "final OCR";
}  // namespace keys

struct FormatVerdict {
  std::optional<StructuredAnswer> parsed;
  int score = 0;
  std::vector<std::string> issues;
};

namespace detail {

inline std::string normalize_key(std::string_view k) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!k.empty() && is_space(k.front())) k.remove_prefix(1);
  while (!k.empty() && is_space(k.back())) k.remove_suffix(1);
  std::string out(k);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Returns the index one past the '}' closing the object opened at `open`,
/// skipping braces inside JSON strings, or npos when unbalanced.
inline std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

/// Splits on single spaces; each token contributes its symbols in order.
inline std::u32string split_char_list(std::string_view field) {
  std::u32string out;
  for (char32_t cp : utf8::decode(field)) {
    if (cp != U' ') out.push_back(cp);
  }
  return out;
}

inline std::string join_char_list(std::u32string_view chars) {
  std::string out;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    if (i) out.push_back(' ');
    utf8::append(out, chars[i]);
  }
  return out;
}

inline std::optional<std::uint64_t> parse_count(const nlohmann::json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const auto x = v.get<std::int64_t>();
    if (x >= 0) return static_cast<std::uint64_t>(x);
    return std::nullopt;
  }
  if (v.is_string()) {
    std::string_view s = v.get_ref<const std::string&>();
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty() || s.size() > 19) return std::nullopt;
    std::uint64_t x = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return std::nullopt;
      x = x * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return x;
  }
  return std::nullopt;
}

}  // namespace detail

struct ObjectSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  nlohmann::json value;
};

/// Finds the last top-level JSON object embedded in `text` (reasoning prose may
/// precede it), with its byte range.
inline std::optional<ObjectSpan> find_last_object(std::string_view text) {
  std::optional<ObjectSpan> last;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string_view::npos) {
    const auto end = detail::match_brace(text, pos);
    if (end != std::string_view::npos) {
      auto j = nlohmann::json::parse(text.substr(pos, end - pos), nullptr, false);
      if (!j.is_discarded() && j.is_object()) {
        last = ObjectSpan{pos, end, std::move(j)};
        pos = end;
        continue;
      }
    }
    ++pos;
  }
  return last;
}

inline std::optional<nlohmann::json> extract_last_object(std::string_view text) {
  if (auto span = find_last_object(text)) return std::move(span->value);
  return std::nullopt;
}

/// Tolerant parse of a model completion. Never throws.
inline FormatVerdict parse_answer(std::string_view completion) {
  FormatVerdict v;
  try {
    auto obj = extract_last_object(completion);
    if (!obj) {
      v.issues.emplace_back("no JSON object found");
      return v;
    }

    const nlohmann::json* fields[5] = {};
    constexpr std::string_view names[5] = {keys::kClearChars, keys::kNotClearChars,
                                           keys::kClearCount, keys::kNotClearCount, keys::kFinal};
    for (auto it = obj->begin(); it != obj->end(); ++it) {
      const auto k = detail::normalize_key(it.key());
      for (int f = 0; f < 5; ++f) {
        if (k == detail::normalize_key(names[f])) fields[f] = &it.value();
      }
    }

    StructuredAnswer a;
    bool ok = true;
    auto need_string = [&](int f, auto&& assign) {
      if (!fields[f]) {
        v.issues.push_back("missing field \"" + std::string(names[f]) + "\"");
        ok = false;
      } else if (!fields[f]->is_string()) {
        v.issues.push_back("field \"" + std::string(names[f]) + "\" is not a string");
        ok = false;
      } else {
        assign(fields[f]->get_ref<const std::string&>());
      }
    };
    auto need_count = [&](int f, std::uint64_t& out) {
      if (!fields[f]) {
        v.issues.push_back("missing field \"" + std::string(names[f]) + "\"");
        ok = false;
        return;
      }
      if (auto n = detail::parse_count(*fields[f])) {
        out = *n;
      } else {
        v.issues.push_back("field \"" + std::string(names[f]) + "\" is not a nonnegative integer");
        ok = false;
      }
    };

    need_string(0, [&](const std::string& s) { a.clear_chars = detail::split_char_list(s); });
    need_string(1, [&](const std::string& s) { a.not_clear_chars = detail::split_char_list(s); });
    need_count(2, a.clear_count);
    need_count(3, a.not_clear_count);
    need_string(4, [&](const std::string& s) { a.final_ocr = s; });

    if (ok) {
      v.parsed = std::move(a);
      v.score = 1;
    }
  } catch (const std::exception& e) {
    v.parsed.reset();
    v.score = 0;
    v.issues.emplace_back(std::string("internal parse failure: ") + e.what());
  }
  return v;
}

inline nlohmann::ordered_json to_json(const StructuredAnswer& a) {
  nlohmann::ordered_json j;
  j[std::string(keys::kClearChars)] = detail::join_char_list(a.clear_chars);
  j[std::string(keys::kNotClearChars)] = detail::join_char_list(a.not_clear_chars);
  j[std::string(keys::kClearCount)] = a.clear_count;
  j[std::string(keys::kNotClearCount)] = a.not_clear_count;
  j[std::string(keys::kFinal)] = a.final_ocr;
  return j;
}

/// Strict counterpart of to_json for trusted files (manifests). Throws on
/// schema violations.
inline StructuredAnswer structured_answer_from_json(const nlohmann::json& j) {
  auto v = parse_answer(j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
  if (!v.parsed) {
    std::string msg = "invalid structured answer";
    for (const auto& i : v.issues) msg += "; " + i;
    throw std::invalid_argument(msg);
  }
  return *v.parsed;
}

/// Canonical compact JSON, keys in output-format order, lists space-joined.
inline std::string serialize_answer(const StructuredAnswer& a) {
  return to_json(a).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace hvqa
