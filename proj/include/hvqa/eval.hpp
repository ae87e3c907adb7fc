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

#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hvqa/answerformat.hpp"
#include "hvqa/reward.hpp"
#include "hvqa/synthgen.hpp"
#include "json.hpp"

namespace hvqa {

struct SampleScore {
  std::string id;
  std::string subset;
  double clear_metric = 0;
  double not_clear_metric = 0;
  double final_metric = 0;
  bool exact_final_match = false;
  std::size_t hallucination_count = 0;
  int format_score = 0;
};

namespace detail {

/// Glyphs emitted at FullOcclusion positions. With equal lengths the final
/// strings are compared position by position. Otherwise every occluded
/// position counts as hallucinated iff the prediction holds a non-space symbol
/// beyond the multiset of legible ground-truth glyphs.
inline std::size_t count_hallucinations(const StructuredAnswer& pred, const StructuredAnswer& gt,
                                        const std::vector<CharAnnotation>& chars) {
  std::size_t occluded = 0;
  for (const auto& c : chars)
    if (c.cls == DegradationClass::FullOcclusion) ++occluded;
  if (occluded == 0) return 0;

  const auto p = utf8::decode(pred.final_ocr);
  const auto g = utf8::decode(gt.final_ocr);
  if (p.size() == g.size()) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < chars.size(); ++i)
      if (chars[i].cls == DegradationClass::FullOcclusion && p[i] != U' ') ++n;
    return n;
  }
  std::map<char32_t, long> budget;
  for (char32_t c : gt.clear_chars) ++budget[c];
  for (char32_t c : gt.not_clear_chars) ++budget[c];
  for (char32_t c : p) {
    if (c == U' ') continue;
    if (--budget[c] < 0) return occluded;
  }
  return 0;
}

struct CompensatedSum {
  double sum = 0;
  double carry = 0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace detail

/// Scores one completion against its ground truth. `chars` must describe the
/// same sample as `gt` (one annotation per symbol of gt.final_ocr).
inline SampleScore score_sample(std::string_view completion, const StructuredAnswer& gt,
                                const std::vector<CharAnnotation>& chars, std::string subset = {}) {
  if (utf8::decode(gt.final_ocr).size() != chars.size()) {
    throw std::invalid_argument("score_sample: annotations do not match ground-truth final OCR");
  }
  SampleScore s;
  s.subset = std::move(subset);
  const auto verdict = parse_answer(completion);
  if (!verdict.parsed) return s;
  const auto& pred = *verdict.parsed;
  const auto m = category_metrics(pred, gt);
  s.format_score = 1;
  s.clear_metric = m.clear;
  s.not_clear_metric = m.not_clear;
  s.final_metric = m.final;
  s.exact_final_match = pred.final_ocr == gt.final_ocr;
  s.hallucination_count = detail::count_hallucinations(pred, gt, chars);
  return s;
}

inline SampleScore score_sample(std::string_view completion, const DegradedSample& sample) {
  auto s = score_sample(completion, sample.expected, sample.chars, subset_of(sample.id));
  s.id = sample.id;
  return s;
}

/// One table row; Clr/Nc/Final/Avg are percentages.
struct ReportRow {
  std::string subset;
  std::size_t count = 0;
  double clr = 0;
  double nc = 0;
  double final = 0;
  double avg = 0;
  std::size_t hallucinations = 0;
};

struct Report {
  std::vector<ReportRow> rows;  // sorted by subset name
  ReportRow macro;              // unweighted mean of subset rows
  ReportRow micro;              // mean over all samples
};

inline ReportRow make_row(std::string subset, std::size_t count, double clr, double nc, double fin) {
  return {std::move(subset), count, clr, nc, fin, (clr + nc + fin) / 3.0, 0};
}

inline Report aggregate(std::span<const SampleScore> scores) {
  if (scores.empty()) throw std::invalid_argument("aggregate: no scores");
  struct Bucket {
    detail::CompensatedSum clr, nc, fin;
    std::size_t n = 0;
    std::size_t halluc = 0;
  };
  std::map<std::string, Bucket> buckets;
  Bucket all;
  for (const auto& s : scores) {
    for (Bucket* b : {&buckets[s.subset], &all}) {
      b->clr.add(s.clear_metric);
      b->nc.add(s.not_clear_metric);
      b->fin.add(s.final_metric);
      b->n += 1;
      b->halluc += s.hallucination_count;
    }
  }
  auto row_of_bucket = [](const std::string& name, const Bucket& b) {
    const double n = static_cast<double>(b.n);
    auto r = make_row(name, b.n, 100.0 * b.clr.value() / n, 100.0 * b.nc.value() / n,
                      100.0 * b.fin.value() / n);
    r.hallucinations = b.halluc;
    return r;
  };

  Report rep;
  detail::CompensatedSum mc, mn, mf;
  for (const auto& [name, b] : buckets) {
    rep.rows.push_back(row_of_bucket(name, b));
    mc.add(rep.rows.back().clr);
    mn.add(rep.rows.back().nc);
    mf.add(rep.rows.back().final);
  }
  const double k = static_cast<double>(rep.rows.size());
  rep.macro = make_row("overall (macro)", all.n, mc.value() / k, mn.value() / k, mf.value() / k);
  rep.macro.hallucinations = all.halluc;
  rep.micro = row_of_bucket("overall (micro)", all);
  return rep;
}

struct ReportDelta {
  Report cells;  // every numeric cell holds a - b; counts are a's
};

inline ReportDelta compare_reports(const Report& a, const Report& b) {
  if (a.rows.size() != b.rows.size()) throw std::invalid_argument("compare_reports: subset structure differs");
  auto diff = [](const ReportRow& x, const ReportRow& y) {
    ReportRow d = x;
    d.clr = x.clr - y.clr;
    d.nc = x.nc - y.nc;
    d.final = x.final - y.final;
    d.avg = x.avg - y.avg;
    d.hallucinations = 0;
    return d;
  };
  ReportDelta out;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    if (a.rows[i].subset != b.rows[i].subset) {
      throw std::invalid_argument("compare_reports: subset '" + a.rows[i].subset + "' vs '" +
                                  b.rows[i].subset + "'");
    }
    out.cells.rows.push_back(diff(a.rows[i], b.rows[i]));
  }
  out.cells.macro = diff(a.macro, b.macro);
  out.cells.micro = diff(a.micro, b.micro);
  return out;
}

/// Half-up rounding to two decimals. The 1e-9 nudge absorbs binary
/// representation error (29.325 is stored as 29.32499...).
inline double round2(double x) { return std::floor(x * 100.0 + 0.5 + 1e-9) / 100.0; }

inline std::string format2(double x) {
  char buf[32];
  const double r = round2(x);
  std::snprintf(buf, sizeof buf, "%.2f", r == 0.0 ? 0.0 : r);
  return buf;
}

inline nlohmann::ordered_json to_json(const ReportRow& r) {
  nlohmann::ordered_json j;
  j["subset"] = r.subset;
  j["n"] = r.count;
  j["Clr"] = round2(r.clr);
  j["Nc"] = round2(r.nc);
  j["Final"] = round2(r.final);
  j["Avg"] = round2(r.avg);
  j["hallucinations"] = r.hallucinations;
  return j;
}

inline nlohmann::ordered_json to_json(const Report& rep) {
  nlohmann::ordered_json j;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows) rows.push_back(to_json(r));
  j["subsets"] = std::move(rows);
  j["overall_macro"] = to_json(rep.macro);
  j["overall_micro"] = to_json(rep.micro);
  return j;
}

inline std::string render_table(const Report& rep) {
  std::size_t width = 6;
  for (const auto& r : rep.rows) width = std::max(width, r.subset.size());
  width = std::max(width, rep.macro.subset.size());
  std::string out;
  char buf[256];
  auto line = [&](const ReportRow& r) {
    std::snprintf(buf, sizeof buf, "%-*s %6zu %8s %8s %8s %8s %6zu\n", int(width), r.subset.c_str(),
                  r.count, format2(r.clr).c_str(), format2(r.nc).c_str(), format2(r.final).c_str(),
                  format2(r.avg).c_str(), r.hallucinations);
    out += buf;
  };
  std::snprintf(buf, sizeof buf, "%-*s %6s %8s %8s %8s %8s %6s\n", int(width), "subset", "n", "Clr",
                "Nc", "Final", "Avg", "hall.");
  out += buf;
  out += std::string(width + 50, '-') + "\n";
  for (const auto& r : rep.rows) line(r);
  out += std::string(width + 50, '-') + "\n";
  line(rep.macro);
  line(rep.micro);
  return out;
}

}  // namespace hvqa
