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
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string_view>

#include "hvqa/answerformat.hpp"
#include "hvqa/textmetrics.hpp"

namespace hvqa {

/// c1, c2, c3 weight the not-clear, clear and final similarities and sum to
/// one. The total reward is w_fmt * format + (1 - w_fmt) * content.
struct RewardWeights {
  double c1 = 1.0 / 3.0;
  double c2 = 1.0 / 3.0;
  double c3 = 1.0 / 3.0;
  double w_fmt = 0.1;

  double w_content() const { return 1.0 - w_fmt; }

  void validate() const {
    if (c1 < 0 || c2 < 0 || c3 < 0) throw std::invalid_argument("reward weights c1..c3 must be nonnegative");
    if (std::abs(c1 + c2 + c3 - 1.0) > 1e-9) throw std::invalid_argument("reward weights c1 + c2 + c3 must equal 1");
    if (w_fmt < 0 || w_fmt > 1) throw std::invalid_argument("reward.w_fmt must lie in [0, 1]");
  }
};

struct CategoryMetrics {
  double clear = 0;
  double not_clear = 0;
  double final = 0;
};

struct RewardBreakdown {
  double clear_metric = 0;
  double not_clear_metric = 0;
  double final_metric = 0;
  double count_penalty = 0;
  int format_score = 0;
  double content_reward = 0;
  double total = 0;
};

/// Per-category normalized similarities. Character lists compare as ordered
/// symbol sequences; the final string compares over its scalar values.
inline CategoryMetrics category_metrics(const StructuredAnswer& pred, const StructuredAnswer& gt) {
  return {similarity(pred.clear_chars, gt.clear_chars),
          similarity(pred.not_clear_chars, gt.not_clear_chars),
          similarity(pred.final_ocr, gt.final_ocr)};
}

/// Sum over both categories of |pred - gt| / max(gt, 1), clipped to [0, 1].
inline double count_penalty(const StructuredAnswer& pred, const StructuredAnswer& gt) {
  auto term = [](std::uint64_t p, std::uint64_t g) {
    const double diff = p > g ? double(p - g) : double(g - p);
    return diff / double(std::max<std::uint64_t>(g, 1));
  };
  const double sum = term(pred.clear_count, gt.clear_count) +
                     term(pred.not_clear_count, gt.not_clear_count);
  return std::clamp(sum, 0.0, 1.0);
}

/// Reward for an already-parsed answer (format assumed valid).
inline RewardBreakdown score_answer(const StructuredAnswer& pred, const StructuredAnswer& gt,
                                    const RewardWeights& w) {
  RewardBreakdown b;
  const auto m = category_metrics(pred, gt);
  b.clear_metric = m.clear;
  b.not_clear_metric = m.not_clear;
  b.final_metric = m.final;
  b.count_penalty = count_penalty(pred, gt);
  b.format_score = 1;
  const double similarity_sum = w.c1 * m.not_clear + w.c2 * m.clear + w.c3 * m.final;
  b.content_reward = std::clamp(similarity_sum * (1.0 - b.count_penalty), 0.0, 1.0);
  b.total = std::clamp(w.w_fmt * 1.0 + w.w_content() * b.content_reward, 0.0, 1.0);
  return b;
}

/// Parses the completion and scores it. An unparseable completion earns
/// nothing: format, content and total are all zero.
inline RewardBreakdown composite_reward(std::string_view completion, const StructuredAnswer& gt,
                                        const RewardWeights& w = {}) {
  w.validate();
  const auto verdict = parse_answer(completion);
  if (verdict.score == 0 || !verdict.parsed) return {};
  return score_answer(*verdict.parsed, gt, w);
}

}  // namespace hvqa
