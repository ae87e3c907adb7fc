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

// Group relative policy optimization over a tabular categorical policy.
//
// The policy sees a (possibly noisy) degradation class per character and picks
// one of three actions. A completion is the structured answer rendered from
// those actions, so the policy is scored with the same composite reward a
// language model would be. Because the policy is a 3x3 softmax table, the
// objective, its gradient and the KL to the reference are all available in
// closed form.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hvqa/answerformat.hpp"
#include "hvqa/parallel.hpp"
#include "hvqa/random.hpp"
#include "hvqa/reward.hpp"
#include "hvqa/synthgen.hpp"
#include "json.hpp"

namespace hvqa {

enum class Action : std::uint8_t { EmitVerbatim, EmitFlagged, RefuseSpace };

inline constexpr int kNumClasses = 3;
inline constexpr int kNumActions = 3;

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::EmitVerbatim: return "EmitVerbatim";
    case Action::EmitFlagged: return "EmitFlagged";
    case Action::RefuseSpace: return "RefuseSpace";
  }
  return "EmitVerbatim";
}

using Matrix3 = std::array<std::array<double, 3>, 3>;
using Vector3 = std::array<double, 3>;

inline int row_of(DegradationClass c) { return static_cast<int>(c); }

/// Softmax logit table: rows are observed classes, columns are actions.
struct ToyOcrPolicy {
  Matrix3 logits{};

  static ToyOcrPolicy uniform() { return {}; }

  Vector3 log_probs(int row) const {
    const auto& l = logits[row];
    const double m = std::max({l[0], l[1], l[2]});
    const double lse = m + std::log(std::exp(l[0] - m) + std::exp(l[1] - m) + std::exp(l[2] - m));
    return {l[0] - lse, l[1] - lse, l[2] - lse};
  }

  Vector3 probs(int row) const {
    const auto lp = log_probs(row);
    return {std::exp(lp[0]), std::exp(lp[1]), std::exp(lp[2])};
  }

  Action argmax(int row) const {
    const auto& l = logits[row];
    int best = 0;
    for (int a = 1; a < kNumActions; ++a)
      if (l[a] > l[best]) best = a;
    return static_cast<Action>(best);
  }

  friend bool operator==(const ToyOcrPolicy&, const ToyOcrPolicy&) = default;
};

/// Row-stochastic confusion from true class to observed class.
struct ObservationChannel {
  Matrix3 confusion{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  static ObservationChannel identity() { return {}; }

  /// Keeps the true class with probability 1 - noise, otherwise picks one of
  /// the other two classes uniformly.
  static ObservationChannel symmetric(double noise) {
    ObservationChannel ch;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) ch.confusion[r][c] = r == c ? 1.0 - noise : noise / 2.0;
    ch.validate();
    return ch;
  }

  void validate() const {
    for (const auto& row : confusion) {
      double sum = 0;
      for (double p : row) {
        if (!(p >= 0)) throw std::invalid_argument("confusion entries must be nonnegative");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("confusion rows must sum to 1");
    }
  }

  int observe(int true_row, Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0;
    for (int c = 0; c < 2; ++c) {
      acc += confusion[true_row][c];
      if (u < acc) return c;
    }
    return 2;
  }
};

/// One per-character decision of a rollout. Whitespace is not a decision.
struct Decision {
  std::uint8_t true_class = 0;
  std::uint8_t observed = 0;
  std::uint8_t action = 0;
};

struct Completion {
  std::vector<Decision> decisions;
  Matrix3 action_counts{};  // [observed][action]
  Vector3 visits{};         // decisions per observed class
  StructuredAnswer answer;
  std::string text;
  double log_prob = 0;  // under the generating policy
};

struct GroupRollout {
  std::string sample_id;
  std::vector<Completion> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

namespace detail {

inline int sample_categorical(const Vector3& p, Rng& rng) {
  const double u = rng.uniform();
  if (u < p[0]) return 0;
  if (u < p[0] + p[1]) return 1;
  return 2;
}

inline double sequence_log_prob(const ToyOcrPolicy& policy, const Matrix3& counts) {
  double lp = 0;
  for (int r = 0; r < kNumClasses; ++r) {
    const auto row = policy.log_probs(r);
    for (int a = 0; a < kNumActions; ++a)
      if (counts[r][a] != 0) lp += counts[r][a] * row[a];
  }
  return lp;
}

}  // namespace detail

/// Renders the structured answer implied by a sequence of actions: verbatim
/// glyphs go to the clear list, flagged glyphs to the not-clear list, refused
/// glyphs become a space. Both listed kinds appear in the final string.
inline StructuredAnswer render_actions(const std::vector<CharAnnotation>& chars,
                                       const std::vector<Decision>& decisions) {
  StructuredAnswer a;
  std::size_t d = 0;
  for (const auto& c : chars) {
    if (is_whitespace(c.glyph)) {
      utf8::append(a.final_ocr, c.glyph);
      continue;
    }
    switch (static_cast<Action>(decisions.at(d++).action)) {
      case Action::EmitVerbatim:
        a.clear_chars.push_back(c.glyph);
        utf8::append(a.final_ocr, c.glyph);
        break;
      case Action::EmitFlagged:
        a.not_clear_chars.push_back(c.glyph);
        utf8::append(a.final_ocr, c.glyph);
        break;
      case Action::RefuseSpace:
        a.final_ocr.push_back(' ');
        break;
    }
  }
  a.clear_count = a.clear_chars.size();
  a.not_clear_count = a.not_clear_chars.size();
  return a;
}

/// Draws one completion: for each non-whitespace character an observed class
/// from the channel, then an action from that row of the policy.
inline Completion policy_sample(const ToyOcrPolicy& policy, const ObservationChannel& channel,
                                const DegradedSample& sample, Rng& rng) {
  Completion out;
  std::array<Vector3, kNumClasses> probs;
  for (int r = 0; r < kNumClasses; ++r) probs[r] = policy.probs(r);
  for (const auto& c : sample.chars) {
    if (is_whitespace(c.glyph)) continue;
    Decision d;
    d.true_class = static_cast<std::uint8_t>(row_of(c.cls));
    d.observed = static_cast<std::uint8_t>(channel.observe(d.true_class, rng));
    d.action = static_cast<std::uint8_t>(detail::sample_categorical(probs[d.observed], rng));
    out.action_counts[d.observed][d.action] += 1;
    out.visits[d.observed] += 1;
    out.decisions.push_back(d);
  }
  out.log_prob = detail::sequence_log_prob(policy, out.action_counts);
  out.answer = render_actions(sample.chars, out.decisions);
  out.text = serialize_answer(out.answer);
  return out;
}

inline constexpr double kAdvantageEpsilon = 1e-8;

/// Standardizes rewards within a group with the population standard
/// deviation, floored at 1e-8. Identical rewards give all-zero advantages.
inline std::vector<double> normalize_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("normalize_advantages needs at least 2 rewards");
  const auto n = static_cast<double>(rewards.size());
  std::vector<double> out(rewards.size(), 0.0);
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return out;
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::max(std::sqrt(var / n), kAdvantageEpsilon);
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

/// KL(p || q) between two categorical rows given as logits.
inline double row_kl(const ToyOcrPolicy& p, const ToyOcrPolicy& q, int row) {
  const auto lp = p.log_probs(row);
  const auto lq = q.log_probs(row);
  double kl = 0;
  for (int a = 0; a < kNumActions; ++a) kl += std::exp(lp[a]) * (lp[a] - lq[a]);
  return std::max(kl, 0.0);
}

/// Exact visit-weighted KL of the policy to the reference.
inline double kl_reference(const ToyOcrPolicy& policy, const ToyOcrPolicy& reference,
                           const Vector3& class_visit_weights) {
  double kl = 0;
  for (int r = 0; r < kNumClasses; ++r) {
    if (class_visit_weights[r] < 0) throw std::invalid_argument("class visit weights must be nonnegative");
    if (class_visit_weights[r] != 0) kl += class_visit_weights[r] * row_kl(policy, reference, r);
  }
  return kl;
}

struct ObjectiveOptions {
  double beta = 0.04;
  bool clip_enabled = false;
  double clip_epsilon = 0.2;
};

struct ObjectiveValue {
  double value = 0;
  Matrix3 gradient{};  // d value / d policy.logits
};

/// GRPO objective for one group and its gradient w.r.t. the policy logits:
///
///   J = 1/G sum_i [ ratio_i * A_i - beta * KL_i ]
///   ratio_i = exp(logp_theta(o_i) - logp_old(o_i))
///
/// with KL_i the exact KL to the reference weighted by completion i's
/// observed-class visits. With clipping enabled the surrogate term becomes
/// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
inline ObjectiveValue grpo_objective_and_gradient(const ToyOcrPolicy& policy,
                                                  const ToyOcrPolicy& old_policy,
                                                  const ToyOcrPolicy& reference,
                                                  const GroupRollout& group,
                                                  const ObjectiveOptions& opt) {
  const auto& cs = group.completions;
  if (cs.empty() || group.advantages.size() != cs.size()) {
    throw std::invalid_argument("group needs one advantage per completion");
  }
  const double inv_g = 1.0 / static_cast<double>(cs.size());

  std::array<Vector3, kNumClasses> p, lp, lq;
  Vector3 kl_row{};
  for (int r = 0; r < kNumClasses; ++r) {
    lp[r] = policy.log_probs(r);
    lq[r] = reference.log_probs(r);
    for (int a = 0; a < kNumActions; ++a) p[r][a] = std::exp(lp[r][a]);
    kl_row[r] = row_kl(policy, reference, r);
  }

  ObjectiveValue out;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const auto& c = cs[i];
    const double adv = group.advantages[i];
    const double logp_new = detail::sequence_log_prob(policy, c.action_counts);
    const double logp_old = detail::sequence_log_prob(old_policy, c.action_counts);
    const double ratio = std::exp(logp_new - logp_old);

    double surrogate = ratio * adv;
    bool differentiable = true;
    if (opt.clip_enabled) {
      const double clipped =
          std::clamp(ratio, 1.0 - opt.clip_epsilon, 1.0 + opt.clip_epsilon) * adv;
      if (clipped < surrogate) {
        surrogate = clipped;
        differentiable = ratio >= 1.0 - opt.clip_epsilon && ratio <= 1.0 + opt.clip_epsilon;
      }
    }
    double kl_i = 0;
    for (int r = 0; r < kNumClasses; ++r) kl_i += c.visits[r] * kl_row[r];
    out.value += inv_g * (surrogate - opt.beta * kl_i);

    // d logp / d logit[r][a] = n_ra - n_r * p_ra
    // d KL_r / d logit[r][a] = p_ra * (log p_ra - log q_ra - KL_r)
    for (int r = 0; r < kNumClasses; ++r) {
      for (int a = 0; a < kNumActions; ++a) {
        double g = 0;
        if (differentiable) g += ratio * adv * (c.action_counts[r][a] - c.visits[r] * p[r][a]);
        g -= opt.beta * c.visits[r] * p[r][a] * (lp[r][a] - lq[r][a] - kl_row[r]);
        out.gradient[r][a] += inv_g * g;
      }
    }
  }
  return out;
}

inline double grpo_objective(const ToyOcrPolicy& policy, const ToyOcrPolicy& old_policy,
                             const ToyOcrPolicy& reference, const GroupRollout& group,
                             const ObjectiveOptions& opt) {
  return grpo_objective_and_gradient(policy, old_policy, reference, group, opt).value;
}

/// Samples and scores G completions for one sample. Completion g draws from
/// Rng(derive_seed({stream_seed, g})).
inline GroupRollout rollout_group(const ToyOcrPolicy& policy, const ObservationChannel& channel,
                                  const DegradedSample& sample, const RewardWeights& weights,
                                  std::size_t group_size, std::uint64_t stream_seed) {
  GroupRollout g;
  g.sample_id = sample.id;
  g.completions.resize(group_size);
  g.rewards.resize(group_size);
  for (std::size_t k = 0; k < group_size; ++k) {
    Rng rng(derive_seed({stream_seed, static_cast<std::uint64_t>(k)}));
    g.completions[k] = policy_sample(policy, channel, sample, rng);
    g.rewards[k] = composite_reward(g.completions[k].text, sample.expected, weights).total;
  }
  g.advantages = normalize_advantages(g.rewards);
  return g;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t iterations = 300;
  std::size_t group_size = 8;
  std::size_t batch_size = 4;
  std::size_t inner_epochs = 1;
  double beta = 0.04;
  double lr = 0.5;
  std::uint64_t seed = 0;
  bool clip_enabled = false;
  double clip_epsilon = 0.2;
  RewardWeights reward;
  ObservationChannel channel;
  unsigned jobs = 1;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (inner_epochs < 1) throw std::invalid_argument("inner_epochs must be at least 1");
    if (!(beta >= 0)) throw std::invalid_argument("beta must be nonnegative");
    if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
    if (!(clip_epsilon > 0)) throw std::invalid_argument("clip_epsilon must be positive");
    reward.validate();
    channel.validate();
  }
};

struct IterationRecord {
  std::size_t iteration = 0;
  double mean_reward = 0;
  double objective = 0;  // at the old policy, before the update
  double kl = 0;         // per-decision KL to the reference after the update
  double hallucination_rate = 0;
  std::string policy_hash;
};

struct TrainingTrace {
  std::vector<IterationRecord> records;
  ToyOcrPolicy initial_policy;
  ToyOcrPolicy final_policy;
  std::optional<std::string> abort_reason;
};

/// FNV-1a over the shortest round-trip text of the nine logits.
inline std::string policy_hash(const ToyOcrPolicy& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[32];
  for (const auto& row : p.logits) {
    for (double v : row) {
      const int n = std::snprintf(buf, sizeof buf, "%.17g;", v);
      for (int i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001b3ull;
      }
    }
  }
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Fraction of FullOcclusion decisions that emitted a glyph instead of a space.
inline double hallucination_rate(std::span<const GroupRollout> groups) {
  double full = 0, emitted = 0;
  for (const auto& g : groups)
    for (const auto& c : g.completions)
      for (const auto& d : c.decisions)
        if (d.true_class == row_of(DegradationClass::FullOcclusion)) {
          full += 1;
          if (d.action != static_cast<std::uint8_t>(Action::RefuseSpace)) emitted += 1;
        }
  return full > 0 ? emitted / full : 0.0;
}

namespace detail {
inline constexpr std::uint64_t kBatchStream = 0x62617463;
inline constexpr std::uint64_t kRolloutStream = 0x726f6c6c;
inline constexpr std::uint64_t kEvalStream = 0x6576616c;

inline bool all_finite(const Matrix3& m) {
  for (const auto& row : m)
    for (double v : row)
      if (!std::isfinite(v)) return false;
  return true;
}
}  // namespace detail

/// Rolls out every batch item of one iteration. Work is split across jobs by
/// batch item; each item's stream depends only on (seed, iteration, item).
inline std::vector<GroupRollout> rollout_batch(const ToyOcrPolicy& policy,
                                               std::span<const DegradedSample> dataset,
                                               const TrainConfig& cfg, std::size_t iteration) {
  Rng pick(derive_seed({cfg.seed, iteration, detail::kBatchStream}));
  std::vector<std::size_t> items(cfg.batch_size);
  for (auto& i : items) i = static_cast<std::size_t>(pick.index(dataset.size()));
  std::vector<GroupRollout> groups(items.size());
  parallel_for(items.size(), cfg.jobs, [&](std::size_t b) {
    const auto stream = derive_seed({cfg.seed, iteration, static_cast<std::uint64_t>(b),
                                     detail::kRolloutStream});
    groups[b] = rollout_group(policy, cfg.channel, dataset[items[b]], cfg.reward, cfg.group_size, stream);
  });
  return groups;
}

/// Batch objective: mean over groups of the per-group objective.
inline ObjectiveValue batch_objective(const ToyOcrPolicy& policy, const ToyOcrPolicy& old_policy,
                                      const ToyOcrPolicy& reference,
                                      std::span<const GroupRollout> groups,
                                      const ObjectiveOptions& opt) {
  ObjectiveValue total;
  const double inv = 1.0 / static_cast<double>(groups.size());
  for (const auto& g : groups) {
    const auto v = grpo_objective_and_gradient(policy, old_policy, reference, g, opt);
    total.value += inv * v.value;
    for (int r = 0; r < 3; ++r)
      for (int a = 0; a < 3; ++a) total.gradient[r][a] += inv * v.gradient[r][a];
  }
  return total;
}

/// Trains by gradient ascent on the GRPO objective. The reference policy is
/// frozen at `init`; the old policy is refreshed every iteration.
inline TrainingTrace train(const TrainConfig& cfg, std::span<const DegradedSample> dataset,
                           const ToyOcrPolicy& init = ToyOcrPolicy::uniform()) {
  cfg.validate();
  TrainingTrace trace;
  trace.initial_policy = init;
  trace.final_policy = init;
  if (cfg.iterations == 0) return trace;
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");

  const ToyOcrPolicy reference = init;
  ToyOcrPolicy policy = init;
  const ObjectiveOptions opt{cfg.beta, cfg.clip_enabled, cfg.clip_epsilon};

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const ToyOcrPolicy old_policy = policy;
    const auto groups = rollout_batch(old_policy, dataset, cfg, it);

    IterationRecord rec;
    rec.iteration = it;
    double reward_sum = 0, count = 0;
    Vector3 visits{};
    for (const auto& g : groups) {
      for (std::size_t k = 0; k < g.rewards.size(); ++k) {
        reward_sum += g.rewards[k];
        count += 1;
        for (int r = 0; r < 3; ++r) visits[r] += g.completions[k].visits[r];
      }
    }
    rec.mean_reward = reward_sum / count;
    rec.hallucination_rate = hallucination_rate(groups);

    for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
      const auto obj = batch_objective(policy, old_policy, reference, groups, opt);
      if (epoch == 0) rec.objective = obj.value;
      if (!std::isfinite(obj.value) || !detail::all_finite(obj.gradient)) {
        trace.abort_reason = "non-finite objective or gradient at iteration " + std::to_string(it);
        trace.final_policy = policy;
        trace.records.push_back(rec);
        return trace;
      }
      for (int r = 0; r < 3; ++r)
        for (int a = 0; a < 3; ++a) policy.logits[r][a] += cfg.lr * obj.gradient[r][a];
    }

    const double total_visits = visits[0] + visits[1] + visits[2];
    Vector3 freq{};
    if (total_visits > 0)
      for (int r = 0; r < 3; ++r) freq[r] = visits[r] / total_visits;
    rec.kl = kl_reference(policy, reference, freq);
    rec.policy_hash = policy_hash(policy);
    trace.records.push_back(std::move(rec));
  }
  trace.final_policy = policy;
  return trace;
}

struct PolicyEvaluation {
  double mean_reward = 0;
  double clear_metric = 0;
  double not_clear_metric = 0;
  double final_metric = 0;
  double hallucination_rate = 0;
};

/// Monte-Carlo estimate of a policy's reward and metrics over a dataset.
inline PolicyEvaluation evaluate_policy(const ToyOcrPolicy& policy, const ObservationChannel& channel,
                                        std::span<const DegradedSample> dataset,
                                        const RewardWeights& weights, std::size_t rollouts_per_sample,
                                        std::uint64_t seed) {
  PolicyEvaluation ev;
  double n = 0, full = 0, emitted = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t k = 0; k < rollouts_per_sample; ++k) {
      Rng rng(derive_seed({seed, detail::kEvalStream, i, k}));
      const auto c = policy_sample(policy, channel, dataset[i], rng);
      const auto b = score_answer(c.answer, dataset[i].expected, weights);
      ev.mean_reward += b.total;
      ev.clear_metric += b.clear_metric;
      ev.not_clear_metric += b.not_clear_metric;
      ev.final_metric += b.final_metric;
      n += 1;
      for (const auto& d : c.decisions) {
        if (d.true_class != row_of(DegradationClass::FullOcclusion)) continue;
        full += 1;
        if (d.action != static_cast<std::uint8_t>(Action::RefuseSpace)) emitted += 1;
      }
    }
  }
  if (n > 0) {
    ev.mean_reward /= n;
    ev.clear_metric /= n;
    ev.not_clear_metric /= n;
    ev.final_metric /= n;
  }
  ev.hallucination_rate = full > 0 ? emitted / full : 0.0;
  return ev;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["mean_reward"] = r.mean_reward;
  j["objective"] = r.objective;
  j["kl"] = r.kl;
  j["hallucination_rate"] = r.hallucination_rate;
  j["policy_hash"] = r.policy_hash;
  return j;
}

inline nlohmann::ordered_json to_json(const ToyOcrPolicy& p) {
  nlohmann::ordered_json j;
  j["rows"] = {"Clear", "PartialOcclusion", "FullOcclusion"};
  j["actions"] = {"EmitVerbatim", "EmitFlagged", "RefuseSpace"};
  auto logits = nlohmann::ordered_json::array();
  auto probs = nlohmann::ordered_json::array();
  auto argmax = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) {
    logits.push_back(p.logits[r]);
    probs.push_back(p.probs(r));
    argmax.push_back(to_string(p.argmax(r)));
  }
  j["logits"] = std::move(logits);
  j["probs"] = std::move(probs);
  j["argmax"] = std::move(argmax);
  return j;
}

inline ToyOcrPolicy policy_from_json(const nlohmann::json& j) {
  ToyOcrPolicy p;
  const auto& l = j.at("logits");
  for (int r = 0; r < 3; ++r)
    for (int a = 0; a < 3; ++a) p.logits[r][a] = l.at(r).at(a).get<double>();
  return p;
}

}  // namespace hvqa
