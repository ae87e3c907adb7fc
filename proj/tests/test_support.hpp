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

// Test-only oracles and helpers. Nothing here calls into the code paths it is
// used to check.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "httplib.h"

namespace hvqa::testing {

/// Plain recursive edit distance with memoization over (i, j) suffixes.
template <typename Seq>
std::size_t recursive_levenshtein(const Seq& a, const Seq& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best;
    if (a[i] == b[j]) {
      best = go(i + 1, j + 1);
    } else {
      best = 1 + std::min({go(i + 1, j), go(i, j + 1), go(i + 1, j + 1)});
    }
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

inline double oracle_similarity(const std::u32string& a, const std::u32string& b) {
  if (a.empty() && b.empty()) return 1.0;
  return 1.0 - double(recursive_levenshtein(a, b)) / double(std::max(a.size(), b.size()));
}

inline std::u32string random_string(std::mt19937_64& rng, std::size_t max_len, int alphabet,
                                    char32_t base = U'a') {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> sym(0, alphabet - 1);
  std::u32string s(len(rng), U'a');
  for (auto& c : s) c = base + static_cast<char32_t>(sym(rng));
  return s;
}

/// Central finite-difference gradient of f over a 3x3 parameter table.
template <typename F>
std::array<std::array<double, 3>, 3> central_difference(std::array<std::array<double, 3>, 3> x, F&& f,
                                                        double h) {
  std::array<std::array<double, 3>, 3> g{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double keep = x[r][c];
      x[r][c] = keep + h;
      const double up = f(x);
      x[r][c] = keep - h;
      const double down = f(x);
      x[r][c] = keep;
      g[r][c] = (up - down) / (2 * h);
    }
  }
  return g;
}

/// ||a - b|| / max(||b||, floor), Frobenius norms.
inline double relative_error(const std::array<std::array<double, 3>, 3>& a,
                             const std::array<std::array<double, 3>, 3>& b, double floor = 1e-12) {
  double diff = 0, norm = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      diff += (a[r][c] - b[r][c]) * (a[r][c] - b[r][c]);
      norm += b[r][c] * b[r][c];
    }
  return std::sqrt(diff) / std::max(std::sqrt(norm), floor);
}

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen((cmd + " 2>&1").c_str(), "r"), pclose);
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe.get())) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe.release());
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hvqa-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Local HTTP server for endpoint tests. Handlers are installed before start().
class StubServer {
 public:
  httplib::Server& server() { return server_; }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    for (int i = 0; i < 200 && !server_.is_running(); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }

  std::string url(const std::string& path = "/v1/chat/completions") const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

  ~StubServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

inline std::string chat_response(const std::string& content) {
  // Minimal chat-completions body.
  std::string escaped;
  for (char c : content) {
    switch (c) {
      case '"': escaped += "\\\""; break;
      case '\\': escaped += "\\\\"; break;
      case '\n': escaped += "\\n"; break;
      default: escaped += c;
    }
  }
  return R"({"id":"stub","choices":[{"index":0,"message":{"role":"assistant","content":")" + escaped +
         R"("}}]})";
}

}  // namespace hvqa::testing
