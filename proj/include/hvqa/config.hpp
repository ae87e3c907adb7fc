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

// Flat key/value configuration in a TOML-like syntax:
//
//   # comment
//   seed = 7
//   [reward]
//   c1 = 0.5          # becomes "reward.c1"
//   name = "quoted string"
//
// Values stay strings until requested; nested tables and arrays are not
// supported.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hvqa {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string_view origin = "<config>") {
    KeyValueConfig cfg;
    std::string section;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
      ++lineno;
      auto fail = [&](const std::string& why) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + why);
      };
      std::string_view line = strip_comment(raw);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail("unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (section.empty()) fail("empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) fail("expected key = value");
      std::string key(trim(line.substr(0, eq)));
      if (key.empty()) fail("empty key");
      std::string_view value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'')) {
        if (value.back() != value.front()) fail("unterminated string");
        value = value.substr(1, value.size() - 2);
      }
      if (!section.empty()) key = section + "." + key;
      cfg.values_[key] = std::string(value);
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  template <typename T>
  static T convert(const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
      if (v == "false" || v == "0" || v == "no" || v == "off") return false;
      throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t used = 0;
      double d = 0;
      try {
        d = std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || v.empty()) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
      return static_cast<T>(d);
    } else {
      T out{};
      const auto* end = v.data() + v.size();
      const auto [ptr, ec] = std::from_chars(v.data(), end, out);
      if (ec != std::errc() || ptr != end) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
      }
      return out;
    }
  }

 private:
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::string_view strip_comment(std::string_view s) {
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '#') {
        return s.substr(0, i);
      }
    }
    return s;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace hvqa
