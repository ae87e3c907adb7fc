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

// hvqa: generate degraded OCR samples, score and evaluate structured answers,
// train the tabular GRPO policy, and synthesize cold-start reasoning data.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "hvqa/config.hpp"
#include "hvqa/eval.hpp"
#include "hvqa/grpo.hpp"
#include "hvqa/llmclient.hpp"
#include "hvqa/parallel.hpp"
#include "hvqa/prompts.hpp"
#include "hvqa/reward.hpp"
#include "hvqa/synthgen.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Every setting is a string-valued option named after its config key.
/// Resolution order: command-line flag, then config file, then default.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "Flat key/value config file");
  }

  void add(const std::string& key, std::string default_value, const std::string& help) {
    auto& slot = slots_[key];
    slot.fallback = std::move(default_value);
    slot.option = app_->add_option("--" + key, slot.flag, help + " [default: " + slot.fallback + "]");
    order_.push_back(key);
  }

  void load_config() {
    if (!config_path_.empty()) file_ = hvqa::KeyValueConfig::load(config_path_);
    for (const auto& [key, value] : file_.values()) {
      if (!slots_.count(key)) std::cerr << "warning: ignoring unknown config key '" << key << "'\n";
    }
  }

  std::string raw(const std::string& key) const {
    const auto& slot = slots_.at(key);
    if (slot.option->count() > 0) return slot.flag;
    if (auto v = file_.get(key)) return *v;
    return slot.fallback;
  }

  template <typename T>
  T get(const std::string& key) const {
    try {
      return hvqa::KeyValueConfig::convert<T>(key, raw(key));
    } catch (const hvqa::ConfigError& e) {
      throw UsageError(e.what());
    }
  }

 private:
  struct Slot {
    std::string flag;
    std::string fallback;
    CLI::Option* option = nullptr;
  };
  CLI::App* app_;
  std::string config_path_;
  hvqa::KeyValueConfig file_;
  std::map<std::string, Slot> slots_;
  std::vector<std::string> order_;
};

void add_common(Settings& s) {
  s.add("seed", "0", "Master seed");
  s.add("jobs", "1", "Worker threads");
  s.add("out", "out", "Output directory");
}

void add_generation(Settings& s) {
  s.add("count", "100", "Number of samples");
  s.add("source", "mixed", "Text source: free, id-card, receipt, mixed");
  s.add("partial_rate", "0.25", "Per-character PartialOcclusion rate");
  s.add("full_rate", "0.2", "Per-character FullOcclusion rate");
  s.add("font_scale", "2", "Integer glyph scale");
  s.add("padding", "4", "Image padding in pixels");
  s.add("max_width", "2048", "Maximum image width in pixels");
  s.add("mix.occlusion", "1", "Weight of the occlusion bar for partial glyphs");
  s.add("mix.blur", "1", "Weight of box blur for partial glyphs");
  s.add("mix.contrast", "1", "Weight of contrast fade for partial glyphs");
}

void add_reward(Settings& s) {
  s.add("reward.c1", "0.3333333333333333", "Weight of the not-clear similarity");
  s.add("reward.c2", "0.3333333333333333", "Weight of the clear similarity");
  s.add("reward.c3", "0.3333333333333333", "Weight of the final similarity");
  s.add("reward.w_fmt", "0.1", "Share of the format reward");
}

hvqa::GenerationConfig generation_config(const Settings& s) {
  hvqa::GenerationConfig g;
  g.master_seed = s.get<std::uint64_t>("seed");
  g.sample_count = s.get<std::size_t>("count");
  const auto source = hvqa::parse_text_source(s.raw("source"));
  if (!source) throw UsageError("unknown source '" + s.raw("source") + "'");
  g.source = *source;
  g.partial_rate = s.get<double>("partial_rate");
  g.full_rate = s.get<double>("full_rate");
  g.font_scale = s.get<int>("font_scale");
  g.padding = s.get<int>("padding");
  g.max_width = s.get<int>("max_width");
  g.mix = {s.get<double>("mix.occlusion"), s.get<double>("mix.blur"), s.get<double>("mix.contrast")};
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return g;
}

hvqa::RewardWeights reward_weights(const Settings& s) {
  hvqa::RewardWeights w{s.get<double>("reward.c1"), s.get<double>("reward.c2"),
                        s.get<double>("reward.c3"), s.get<double>("reward.w_fmt")};
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return w;
}

unsigned jobs_of(const Settings& s) {
  const int j = s.get<int>("jobs");
  if (j < 1) throw UsageError("--jobs must be at least 1");
  return static_cast<unsigned>(j);
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::string dump(const nlohmann::ordered_json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

struct CompletionLine {
  std::string id;
  std::string completion;
};

std::vector<CompletionLine> read_completions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open completions: " + path.string());
  std::vector<CompletionLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("completion") || !j["completion"].is_string()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected {\"id\": string, \"completion\": string}");
    }
    out.push_back({j["id"].get<std::string>(), j["completion"].get<std::string>()});
  }
  return out;
}

std::unordered_map<std::string, std::size_t> index_by_id(const std::vector<hvqa::ManifestRecord>& m) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i) idx.emplace(m[i].sample.id, i);
  return idx;
}

// ---------------------------------------------------------------------------

int cmd_gen(const Settings& s) {
  const auto cfg = generation_config(s);
  const fs::path out = s.raw("out");
  const auto manifest = hvqa::generate_dataset(cfg, out, jobs_of(s));
  std::cout << "generated " << manifest.records.size() << " samples\n"
            << "manifest: " << manifest.path.string() << "\n";
  return kExitOk;
}

int cmd_score(const Settings& s) {
  const auto weights = reward_weights(s);
  const auto manifest = hvqa::read_manifest(s.raw("manifest"));
  const auto completions = read_completions(s.raw("completions"));
  const auto idx = index_by_id(manifest);
  const fs::path out = ensure_dir(s.raw("out"));

  std::vector<const CompletionLine*> known;
  std::size_t skipped = 0;
  for (const auto& c : completions) {
    if (idx.count(c.id)) {
      known.push_back(&c);
    } else {
      std::cerr << "skipping unknown id '" << c.id << "'\n";
      ++skipped;
    }
  }
  std::vector<hvqa::RewardBreakdown> results(known.size());
  hvqa::parallel_for(known.size(), jobs_of(s), [&](std::size_t i) {
    const auto& gt = manifest[idx.at(known[i]->id)].sample.expected;
    results[i] = hvqa::composite_reward(known[i]->completion, gt, weights);
  });

  std::string lines;
  double total = 0;
  for (std::size_t i = 0; i < known.size(); ++i) {
    const auto& b = results[i];
    nlohmann::ordered_json j;
    j["id"] = known[i]->id;
    j["clear_metric"] = b.clear_metric;
    j["not_clear_metric"] = b.not_clear_metric;
    j["final_metric"] = b.final_metric;
    j["count_penalty"] = b.count_penalty;
    j["format_score"] = b.format_score;
    j["content_reward"] = b.content_reward;
    j["total"] = b.total;
    lines += dump(j) + "\n";
    total += b.total;
  }
  write_text(out / "scores.jsonl", lines);

  nlohmann::ordered_json summary;
  summary["scored"] = known.size();
  summary["skipped"] = skipped;
  summary["mean_total"] = known.empty() ? 0.0 : total / static_cast<double>(known.size());
  write_text(out / "summary.json", dump(summary) + "\n");
  if (known.empty()) std::cerr << "warning: no completions were scored\n";
  std::cout << dump(summary) << "\n";
  return kExitOk;
}

int cmd_eval(const Settings& s) {
  const auto manifest = hvqa::read_manifest(s.raw("manifest"));
  const auto completions = read_completions(s.raw("completions"));
  const fs::path out = ensure_dir(s.raw("out"));
  if (manifest.empty()) throw std::runtime_error("manifest has no samples to evaluate");

  std::unordered_map<std::string, const std::string*> by_id;
  for (const auto& c : completions) by_id[c.id] = &c.completion;
  for (const auto& c : completions) {
    bool found = false;
    for (const auto& m : manifest) found = found || m.sample.id == c.id;
    if (!found) std::cerr << "skipping unknown id '" << c.id << "'\n";
  }

  static const std::string kMissing;
  std::size_t missing = 0;
  std::vector<const std::string*> inputs(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto it = by_id.find(manifest[i].sample.id);
    if (it == by_id.end()) {
      inputs[i] = &kMissing;
      ++missing;
    } else {
      inputs[i] = it->second;
    }
  }
  if (missing) std::cerr << "warning: " << missing << " samples have no completion and score 0\n";

  std::vector<hvqa::SampleScore> scores(manifest.size());
  hvqa::parallel_for(manifest.size(), jobs_of(s), [&](std::size_t i) {
    scores[i] = hvqa::score_sample(*inputs[i], manifest[i].sample);
  });
  const auto report = hvqa::aggregate(scores);
  const auto table = hvqa::render_table(report);
  write_text(out / "report.json", hvqa::to_json(report).dump(2) + "\n");
  write_text(out / "report.txt", table);
  std::cout << table;
  return kExitOk;
}

std::vector<hvqa::DegradedSample> training_dataset(const Settings& s) {
  std::vector<hvqa::DegradedSample> data;
  const auto manifest_path = s.raw("manifest");
  if (!manifest_path.empty()) {
    for (auto& r : hvqa::read_manifest(manifest_path)) data.push_back(std::move(r.sample));
    return data;
  }
  const auto cfg = generation_config(s);
  data.resize(cfg.sample_count);
  hvqa::parallel_for(cfg.sample_count, jobs_of(s), [&](std::size_t i) {
    data[i] = hvqa::make_sample(cfg, i);
    data[i].image = {};
  });
  return data;
}

int cmd_train(const Settings& s) {
  hvqa::TrainConfig cfg;
  cfg.iterations = s.get<std::size_t>("iterations");
  cfg.group_size = s.get<std::size_t>("group_size");
  cfg.batch_size = s.get<std::size_t>("batch_size");
  cfg.inner_epochs = s.get<std::size_t>("inner_epochs");
  cfg.beta = s.get<double>("beta");
  cfg.lr = s.get<double>("lr");
  cfg.seed = s.get<std::uint64_t>("seed");
  cfg.clip_enabled = s.get<bool>("clip_enabled");
  cfg.clip_epsilon = s.get<double>("clip_epsilon");
  cfg.reward = reward_weights(s);
  cfg.jobs = jobs_of(s);
  const double noise = s.get<double>("noise");
  if (noise < 0 || noise > 1) throw UsageError("--noise must lie in [0, 1]");
  cfg.channel = hvqa::ObservationChannel::symmetric(noise);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto data = training_dataset(s);
  if (data.empty() && cfg.iterations > 0) throw UsageError("training dataset is empty");
  const fs::path out = ensure_dir(s.raw("out"));

  const auto trace = hvqa::train(cfg, data);
  std::string lines;
  for (const auto& r : trace.records) lines += dump(hvqa::to_json(r)) + "\n";
  write_text(out / "trace.jsonl", lines);
  write_text(out / "policy.json", hvqa::to_json(trace.final_policy).dump(2) + "\n");

  const auto eval_n = s.get<std::size_t>("eval_rollouts");
  nlohmann::ordered_json summary;
  summary["iterations"] = trace.records.size();
  if (!data.empty() && eval_n > 0) {
    const auto before = hvqa::evaluate_policy(trace.initial_policy, cfg.channel, data, cfg.reward, eval_n, cfg.seed);
    const auto after = hvqa::evaluate_policy(trace.final_policy, cfg.channel, data, cfg.reward, eval_n, cfg.seed);
    summary["initial_mean_reward"] = before.mean_reward;
    summary["final_mean_reward"] = after.mean_reward;
    summary["initial_hallucination_rate"] = before.hallucination_rate;
    summary["final_hallucination_rate"] = after.hallucination_rate;
    summary["final_not_clear_metric"] = after.not_clear_metric;
  }
  summary["policy_hash"] = hvqa::policy_hash(trace.final_policy);
  auto argmax = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) argmax.push_back(hvqa::to_string(trace.final_policy.argmax(r)));
  summary["argmax"] = argmax;
  write_text(out / "summary.json", dump(summary) + "\n");
  std::cout << dump(summary) << "\n";
  if (trace.abort_reason) {
    std::cerr << "training aborted: " << *trace.abort_reason << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_coldstart(const Settings& s, bool dry_run) {
  const auto manifest = hvqa::read_manifest(s.raw("manifest"));
  if (dry_run) {
    if (manifest.empty()) {
      std::cout << "(manifest is empty; no prompt to show)\n";
    } else {
      std::cout << hvqa::build_coldstart_prompt(manifest.front().sample);
    }
    return kExitOk;
  }
  hvqa::EndpointConfig ep;
  ep.url = s.raw("endpoint.url");
  if (ep.url.empty()) {
    throw UsageError(
        "coldstart needs an endpoint: pass --endpoint.url http://host:port/v1/chat/completions "
        "(token read from $" + s.raw("endpoint.token_env") + "), or use --dry-run to print the first prompt");
  }
  ep.model = s.raw("endpoint.model");
  ep.token_env = s.raw("endpoint.token_env");
  ep.timeout_seconds = s.get<double>("endpoint.timeout");
  ep.max_retries = s.get<int>("endpoint.max_retries");
  ep.backoff_seconds = s.get<double>("endpoint.backoff");
  try {
    ep.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  hvqa::SynthesisOptions opt;
  opt.min_final_similarity = s.get<double>("threshold");
  opt.max_in_flight = jobs_of(s);

  const fs::path out = ensure_dir(s.raw("out"));
  const auto result = hvqa::synthesize_cot_dataset(manifest, ep, opt);
  for (const auto& r : result.rejects) std::cerr << "rejected " << r.id << ": " << r.reason << "\n";
  hvqa::write_coldstart_records(out / "coldstart.jsonl", result.records);
  std::cout << "accepted " << result.records.size() << ", rejected " << result.rejects.size() << "\n"
            << "records: " << (out / "coldstart.jsonl").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Degradation-aware OCR reward, evaluation and GRPO laboratory"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a degraded sample dataset");
  Settings gen_s(gen);
  add_common(gen_s);
  add_generation(gen_s);

  auto* score = app.add_subcommand("score", "Score completions with the composite reward");
  Settings score_s(score);
  add_common(score_s);
  add_reward(score_s);
  score_s.add("manifest", "out/manifest.jsonl", "Dataset manifest");
  score_s.add("completions", "completions.jsonl", "Completions JSONL ({id, completion})");

  auto* evalc = app.add_subcommand("eval", "Evaluate completions and write a report");
  Settings eval_s(evalc);
  add_common(eval_s);
  eval_s.add("manifest", "out/manifest.jsonl", "Dataset manifest");
  eval_s.add("completions", "completions.jsonl", "Completions JSONL ({id, completion})");

  auto* train = app.add_subcommand("train", "Train the tabular policy with GRPO");
  Settings train_s(train);
  add_common(train_s);
  add_generation(train_s);
  add_reward(train_s);
  train_s.add("manifest", "", "Dataset manifest (empty: generate in memory from the generation keys)");
  train_s.add("iterations", "300", "Training iterations");
  train_s.add("group_size", "8", "Completions per group");
  train_s.add("batch_size", "4", "Samples per iteration");
  train_s.add("inner_epochs", "1", "Gradient steps per rollout batch");
  train_s.add("beta", "0.04", "KL penalty coefficient");
  train_s.add("lr", "0.5", "Learning rate");
  train_s.add("clip_enabled", "false", "Enable ratio clipping");
  train_s.add("clip_epsilon", "0.2", "Clipping range");
  train_s.add("noise", "0", "Observation noise (0 = noiseless channel)");
  train_s.add("eval_rollouts", "16", "Rollouts per sample for the final evaluation");

  auto* cold = app.add_subcommand("coldstart", "Synthesize cold-start reasoning records");
  Settings cold_s(cold);
  add_common(cold_s);
  cold_s.add("manifest", "out/manifest.jsonl", "Dataset manifest");
  cold_s.add("endpoint.url", "", "Chat-completions endpoint URL");
  cold_s.add("endpoint.model", "deepseek-reasoner", "Model name");
  cold_s.add("endpoint.token_env", "HVQA_API_TOKEN", "Environment variable holding the auth token");
  cold_s.add("endpoint.timeout", "120", "Request timeout in seconds");
  cold_s.add("endpoint.max_retries", "3", "Retries on 429/5xx");
  cold_s.add("endpoint.backoff", "1", "Initial retry backoff in seconds");
  cold_s.add("threshold", "0.9", "Minimum final-OCR similarity to accept a record");
  bool dry_run = false;
  cold->add_flag("--dry-run,--dry_run", dry_run, "Print the first prompt and exit without network use");

  auto* prompt = app.add_subcommand("prompt", "Print a prompt template");
  Settings prompt_s(prompt);
  add_common(prompt_s);
  prompt_s.add("kind", "zero-shot", "zero-shot or coldstart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      gen_s.load_config();
      return cmd_gen(gen_s);
    }
    if (score->parsed()) {
      score_s.load_config();
      return cmd_score(score_s);
    }
    if (evalc->parsed()) {
      eval_s.load_config();
      return cmd_eval(eval_s);
    }
    if (train->parsed()) {
      train_s.load_config();
      return cmd_train(train_s);
    }
    if (cold->parsed()) {
      cold_s.load_config();
      return cmd_coldstart(cold_s, dry_run);
    }
    if (prompt->parsed()) {
      prompt_s.load_config();
      const auto kind = prompt_s.raw("kind");
      if (kind == "zero-shot") {
        std::cout << hvqa::prompts::kZeroShot;
      } else if (kind == "coldstart") {
        std::cout << hvqa::prompts::kColdStart;
      } else {
        throw UsageError("unknown prompt kind '" + kind + "'");
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const hvqa::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
