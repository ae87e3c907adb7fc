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

// Cold-start reasoning data synthesis against a chat-completions endpoint.
//
// Captions and character descriptions are produced locally from the sample
// annotations; only the reasoning step calls out to a model.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "hvqa/answerformat.hpp"
#include "hvqa/parallel.hpp"
#include "hvqa/prompts.hpp"
#include "hvqa/synthgen.hpp"
#include "hvqa/textmetrics.hpp"
#include "httplib.h"
#include "json.hpp"

namespace hvqa {

struct EndpointConfig {
  std::string url;  // full endpoint, e.g. http://127.0.0.1:8000/v1/chat/completions
  std::string model = "deepseek-reasoner";
  std::string token_env = "HVQA_API_TOKEN";
  double timeout_seconds = 120;
  int max_retries = 3;
  double backoff_seconds = 1.0;  // first retry delay; doubles per attempt
  double backoff_max_seconds = 30.0;

  void validate() const {
    if (url.empty()) throw std::invalid_argument("endpoint url is empty");
    if (!(timeout_seconds > 0)) throw std::invalid_argument("timeout must be positive");
    if (max_retries < 0) throw std::invalid_argument("max_retries must be nonnegative");
    if (backoff_seconds < 0 || backoff_max_seconds < 0) throw std::invalid_argument("backoff must be nonnegative");
  }
};

/// No usable HTTP response after all retries.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, int status, int attempts)
      : std::runtime_error(what), status_(status), attempts_(attempts) {}
  int status() const { return status_; }  // 0 when no response was received
  int attempts() const { return attempts_; }

 private:
  int status_;
  int attempts_;
};

/// A response arrived but its body was not a chat completion.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CompletionResult {
  std::string text;
  int retries = 0;
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw std::invalid_argument("endpoint url needs a scheme: " + std::string(url));
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_begin)), std::string(url.substr(path_begin))};
}

inline bool retryable(int status) { return status == 429 || (status >= 500 && status <= 599); }

}  // namespace detail

/// POSTs a single-user-message chat request and returns the first choice's
/// message text. 429 and 5xx responses, and connection failures, are retried
/// with exponential backoff up to cfg.max_retries times.
inline CompletionResult request_completion(const EndpointConfig& cfg, std::string_view prompt) {
  cfg.validate();
  const auto url = detail::split_url(cfg.url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(cfg.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  httplib::Headers headers;
  if (const char* token = std::getenv(cfg.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  nlohmann::json body;
  body["model"] = cfg.model;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}});
  const auto payload = body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);

  int status = 0;
  std::string last_error;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (res) {
      status = res->status;
      if (status >= 200 && status < 300) {
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) throw ProtocolError("response body is not JSON");
        try {
          const auto& content = j.at("choices").at(0).at("message").at("content");
          if (!content.is_string()) throw ProtocolError("message content is not a string");
          return {content.get<std::string>(), attempt};
        } catch (const nlohmann::json::exception& e) {
          throw ProtocolError(std::string("unexpected response shape: ") + e.what());
        }
      }
      last_error = "HTTP " + std::to_string(status);
      if (!detail::retryable(status)) throw TransportError(last_error, status, attempt + 1);
    } else {
      status = 0;
      last_error = httplib::to_string(res.error());
    }
    if (attempt >= cfg.max_retries) {
      throw TransportError(last_error + " after " + std::to_string(attempt + 1) + " attempts", status,
                           attempt + 1);
    }
    const double delay = std::min(cfg.backoff_max_seconds, cfg.backoff_seconds * std::pow(2.0, attempt));
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
  }
}

/// One line per character: glyph ("?" when fully occluded), class, fraction.
inline std::string describe_character_info(const DegradedSample& sample) {
  std::string out;
  char frac[16];
  for (std::size_t i = 0; i < sample.chars.size(); ++i) {
    const auto& c = sample.chars[i];
    std::string glyph = c.cls == DegradationClass::FullOcclusion ? "?" : utf8::encode(c.glyph);
    if (is_whitespace(c.glyph)) glyph = "<space>";
    std::snprintf(frac, sizeof frac, "%.2f", c.occluded_fraction);
    out += std::to_string(i + 1) + ". " + glyph + " " + std::string(to_string(c.cls)) + " " + frac + "\n";
  }
  return out;
}

/// Plain-language stand-in for an image caption, derived from annotations.
inline std::string describe_caption(const DegradedSample& sample) {
  std::size_t visible = 0, partial = 0, full = 0;
  for (const auto& c : sample.chars) {
    if (is_whitespace(c.glyph)) continue;
    ++visible;
    if (c.cls == DegradationClass::PartialOcclusion) ++partial;
    if (c.cls == DegradationClass::FullOcclusion) ++full;
  }
  return "A grayscale image showing one line of " + std::to_string(visible) +
         " dark characters on a light background; " + std::to_string(partial) +
         " of them are blurred, faded or partly covered, and " + std::to_string(full) +
         " are completely covered by a dark bar";
}

inline std::string build_coldstart_prompt(std::string_view question, std::string_view caption,
                                          std::string_view char_info) {
  return prompts::fill_coldstart(question, caption, char_info);
}

inline std::string build_coldstart_prompt(const DegradedSample& sample) {
  return build_coldstart_prompt(sample.question, describe_caption(sample),
                                describe_character_info(sample));
}

struct ColdStartRecord {
  std::string id;
  std::string image_path;
  std::string question;
  std::string caption;
  std::string char_info;
  std::string reasoning;
  std::string answer;  // canonical structured answer
};

inline nlohmann::ordered_json to_json(const ColdStartRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["image_path"] = r.image_path;
  j["question"] = r.question;
  j["caption"] = r.caption;
  j["char_info"] = r.char_info;
  j["reasoning"] = r.reasoning;
  j["answer"] = r.answer;
  return j;
}

struct SynthesisOptions {
  double min_final_similarity = 0.9;
  unsigned max_in_flight = 1;
};

struct SynthesisReject {
  std::string id;
  std::string reason;
};

struct SynthesisResult {
  std::vector<ColdStartRecord> records;  // manifest order
  std::vector<SynthesisReject> rejects;  // manifest order
};

using CompletionBackend = std::function<CompletionResult(std::string_view prompt)>;

/// Accepts a completion iff its trailing structured answer parses and its
/// final OCR is at least `min_final_similarity` similar to the expected one.
inline SynthesisResult synthesize_cot_dataset(std::span<const ManifestRecord> manifest,
                                              const CompletionBackend& backend,
                                              const SynthesisOptions& opt = {}) {
  struct Slot {
    std::optional<ColdStartRecord> record;
    std::string reject;
  };
  std::vector<Slot> slots(manifest.size());
  parallel_for(manifest.size(), std::max(1u, opt.max_in_flight), [&](std::size_t i) {
    const auto& m = manifest[i];
    ColdStartRecord rec;
    rec.id = m.sample.id;
    rec.image_path = m.image_path;
    rec.question = m.sample.question;
    rec.caption = describe_caption(m.sample);
    rec.char_info = describe_character_info(m.sample);
    std::string text;
    try {
      text = backend(build_coldstart_prompt(rec.question, rec.caption, rec.char_info)).text;
    } catch (const std::exception& e) {
      slots[i].reject = std::string("endpoint failure: ") + e.what();
      return;
    }
    const auto verdict = parse_answer(text);
    if (!verdict.parsed) {
      slots[i].reject = "unparseable answer";
      for (const auto& issue : verdict.issues) slots[i].reject += "; " + issue;
      return;
    }
    const double sim = similarity(verdict.parsed->final_ocr, m.sample.expected.final_ocr);
    if (sim < opt.min_final_similarity) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "final OCR similarity %.4f below threshold %.4f", sim,
                    opt.min_final_similarity);
      slots[i].reject = buf;
      return;
    }
    const auto span = find_last_object(text);
    std::string_view reasoning(text.data(), span ? span->begin : text.size());
    while (!reasoning.empty() && std::isspace(static_cast<unsigned char>(reasoning.back())))
      reasoning.remove_suffix(1);
    rec.reasoning = std::string(reasoning);
    rec.answer = serialize_answer(*verdict.parsed);
    slots[i].record = std::move(rec);
  });

  SynthesisResult out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].record) {
      out.records.push_back(std::move(*slots[i].record));
    } else {
      out.rejects.push_back({manifest[i].sample.id, std::move(slots[i].reject)});
    }
  }
  return out;
}

inline SynthesisResult synthesize_cot_dataset(std::span<const ManifestRecord> manifest,
                                              const EndpointConfig& cfg,
                                              const SynthesisOptions& opt = {}) {
  cfg.validate();
  return synthesize_cot_dataset(
      manifest, [&cfg](std::string_view prompt) { return request_completion(cfg, prompt); }, opt);
}

inline void write_coldstart_records(const std::filesystem::path& path,
                                    std::span<const ColdStartRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& r : records)
    out << to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace hvqa
