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

// Synthetic degraded-text samples with per-character reliability labels.
//
// Every glyph occupies one fixed cell of an embedded 8x12 monospace font, so
// character boxes are exact by construction. Each non-whitespace glyph is
// assigned a degradation class and an operator whose strength lands inside
// that class's band of occluded fraction:
//
//   Clear             [0, 0.05)     untouched (fraction 0)
//   PartialOcclusion  [0.25, 0.60]  occlusion bar, box blur or contrast fade
//   FullOcclusion     [0.90, 1.0]   occlusion bar only
//
// The gaps between bands are never produced, so a label can be recovered from
// the fraction alone.

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hvqa/answerformat.hpp"
#include "hvqa/detail/font8x12.hpp"
#include "hvqa/image.hpp"
#include "hvqa/parallel.hpp"
#include "hvqa/random.hpp"
#include "hvqa/textmetrics.hpp"
#include "json.hpp"

namespace hvqa {

enum class DegradationClass : std::uint8_t { Clear, PartialOcclusion, FullOcclusion };

inline std::string_view to_string(DegradationClass c) {
  switch (c) {
    case DegradationClass::Clear: return "Clear";
    case DegradationClass::PartialOcclusion: return "PartialOcclusion";
    case DegradationClass::FullOcclusion: return "FullOcclusion";
  }
  return "Clear";
}

inline std::optional<DegradationClass> parse_degradation_class(std::string_view s) {
  if (s == "Clear") return DegradationClass::Clear;
  if (s == "PartialOcclusion") return DegradationClass::PartialOcclusion;
  if (s == "FullOcclusion") return DegradationClass::FullOcclusion;
  return std::nullopt;
}

namespace bands {
inline constexpr double kClearMax = 0.05;  // exclusive
inline constexpr double kPartialLo = 0.25;
inline constexpr double kPartialHi = 0.60;
inline constexpr double kFullLo = 0.90;
}  // namespace bands

/// Class implied by an occluded fraction, or nullopt inside a gap band.
inline std::optional<DegradationClass> classify_fraction(double f) {
  if (f >= 0.0 && f < bands::kClearMax) return DegradationClass::Clear;
  if (f >= bands::kPartialLo && f <= bands::kPartialHi) return DegradationClass::PartialOcclusion;
  if (f >= bands::kFullLo && f <= 1.0) return DegradationClass::FullOcclusion;
  return std::nullopt;
}

inline bool is_whitespace(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == 0xA0 || c == 0x3000;
}

struct CharAnnotation {
  char32_t glyph = U' ';
  Rect bbox;
  DegradationClass cls = DegradationClass::Clear;
  double occluded_fraction = 0.0;

  friend bool operator==(const CharAnnotation&, const CharAnnotation&) = default;
};

struct DegradedSample {
  std::string id;
  Image image;  // empty when loaded from a manifest
  std::string question;
  std::string gt_text;
  std::vector<CharAnnotation> chars;
  StructuredAnswer expected;
  std::uint64_t seed = 0;
};

enum class TextSource { FreeText, IdCard, Receipt, Mixed };

inline std::string_view to_string(TextSource s) {
  switch (s) {
    case TextSource::FreeText: return "free";
    case TextSource::IdCard: return "id-card";
    case TextSource::Receipt: return "receipt";
    case TextSource::Mixed: return "mixed";
  }
  return "free";
}

inline std::optional<TextSource> parse_text_source(std::string_view s) {
  if (s == "free" || s == "free-text") return TextSource::FreeText;
  if (s == "id-card") return TextSource::IdCard;
  if (s == "receipt") return TextSource::Receipt;
  if (s == "mixed") return TextSource::Mixed;
  return std::nullopt;
}

/// Relative weights of the operators used for PartialOcclusion glyphs.
struct OperatorMix {
  double occlusion = 1.0;
  double blur = 1.0;
  double contrast = 1.0;
};

struct GenerationConfig {
  std::uint64_t master_seed = 0;
  std::size_t sample_count = 0;
  TextSource source = TextSource::Mixed;
  double partial_rate = 0.25;
  double full_rate = 0.2;
  int font_scale = 2;
  int padding = 4;
  int max_width = 2048;
  OperatorMix mix;

  void validate() const {
    if (partial_rate < 0 || full_rate < 0 || partial_rate + full_rate > 1.0 + 1e-12) {
      throw std::invalid_argument("degradation rates must be nonnegative and sum to at most 1");
    }
    if (font_scale < 1) throw std::invalid_argument("font_scale must be >= 1");
    if (padding < 0) throw std::invalid_argument("padding must be >= 0");
    if (max_width < 1) throw std::invalid_argument("max_width must be >= 1");
    if (mix.occlusion < 0 || mix.blur < 0 || mix.contrast < 0 ||
        mix.occlusion + mix.blur + mix.contrast <= 0) {
      throw std::invalid_argument("operator mix weights must be nonnegative and not all zero");
    }
  }
};

/// Text wider than the configured maximum image width.
class SizingError : public std::length_error {
 public:
  using std::length_error::length_error;
};

namespace detail {

// Stream tags so planning, rendering and text choice never share draws.
inline constexpr std::uint64_t kPlanStream = 0x706c616e;
inline constexpr std::uint64_t kRenderStream = 0x726e6472;
inline constexpr std::uint64_t kTextStream = 0x74657874;

inline constexpr std::uint8_t kBackground = 255;
inline constexpr std::uint8_t kInk = 0;
inline constexpr std::uint8_t kOccluder = 48;

inline const std::array<std::uint8_t, kFontHeight>& glyph_rows(char32_t c) {
  // Non-ASCII symbols render as a hollow box.
  static constexpr std::array<std::uint8_t, kFontHeight> kMissing = {
      0x00, 0x7e, 0x42, 0x42, 0x42, 0x42, 0x42, 0x42, 0x42, 0x7e, 0x00, 0x00};
  if (c < kFontFirst || c > kFontLast) return kMissing;
  return kFont8x12[c - kFontFirst];
}

inline void draw_glyph(Image& img, const Rect& cell, char32_t c, int scale) {
  if (is_whitespace(c)) return;
  const auto& rows = glyph_rows(c);
  for (int gy = 0; gy < kFontHeight; ++gy) {
    for (int gx = 0; gx < kFontWidth; ++gx) {
      if (!(rows[gy] & (0x80 >> gx))) continue;
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx)
          img.at(cell.x + gx * scale + dx, cell.y + gy * scale + dy) = kInk;
    }
  }
}

/// Full-width bar of `rows` pixel rows inside the cell, starting at `top`.
inline void occlusion_bar(Image& img, const Rect& cell, int top, int rows) {
  for (int y = cell.y + top; y < cell.y + top + rows; ++y)
    for (int x = cell.x; x < cell.x + cell.w; ++x) img.at(x, y) = kOccluder;
}

/// Separable box blur restricted to the cell, edges clamped.
inline void box_blur(Image& img, const Rect& cell, int kernel) {
  const int r = kernel / 2;
  std::vector<int> buf(std::size_t(cell.w) * cell.h);
  auto px = [&](int x, int y) { return int(img.at(cell.x + x, cell.y + y)); };
  for (int y = 0; y < cell.h; ++y) {
    for (int x = 0; x < cell.w; ++x) {
      int sum = 0;
      for (int k = -r; k <= r; ++k) sum += px(std::clamp(x + k, 0, cell.w - 1), y);
      buf[std::size_t(y) * cell.w + x] = sum;
    }
  }
  for (int y = 0; y < cell.h; ++y) {
    for (int x = 0; x < cell.w; ++x) {
      int sum = 0;
      for (int k = -r; k <= r; ++k) sum += buf[std::size_t(std::clamp(y + k, 0, cell.h - 1)) * cell.w + x];
      const int denom = kernel * kernel;
      img.at(cell.x + x, cell.y + y) = static_cast<std::uint8_t>((sum + denom / 2) / denom);
    }
  }
}

/// Pulls every pixel toward the background by `amount` of its contrast.
inline void contrast_fade(Image& img, const Rect& cell, double amount) {
  for (int y = cell.y; y < cell.y + cell.h; ++y) {
    for (int x = cell.x; x < cell.x + cell.w; ++x) {
      const double v = img.at(x, y);
      const double faded = kBackground - (kBackground - v) * (1.0 - amount);
      img.at(x, y) = static_cast<std::uint8_t>(std::lround(faded));
    }
  }
}

inline const std::vector<std::string_view>& free_words() {
  static const std::vector<std::string_view> kWords = {
      "Beautiful", "Invoice",  "Pharmacy", "Quantity", "Passport", "Medicine", "Balance",
      "Signature", "Address",  "Customer", "Discount", "Payment",  "Morning",  "Evening",
      "Capsule",   "Receipt",  "Station",  "Account",  "Transfer", "Delivery", "Holiday",
      "Kitchen",   "Library",  "Museum",   "Harbor",   "Garden",   "Orchard",  "Velvet",
      "Crystal",   "Thunder",  "Journey",  "Lantern",  "Meadow",   "Compass",  "Harvest",
      "Silver",    "Winter",   "Summer",   "Autumn",   "Spring",   "Dosage",   "Tablet",
      "Clinic",    "Ticket",   "Voucher",  "Coupon",   "Charge",   "Refund",   "Office",
      "Permit",    "Licence",  "Member",   "Student",  "Visitor",  "Counter",  "Window",
  };
  return kWords;
}

inline const std::vector<std::string_view>& given_names() {
  static const std::vector<std::string_view> kNames = {
      "Alice", "Bruno", "Chen", "Dara", "Elif", "Farah", "Goran", "Hana", "Ivan", "Jia",
      "Kofi", "Lena", "Mateo", "Nadia", "Omar", "Priya", "Quinn", "Rosa", "Sven", "Tomas"};
  return kNames;
}

inline const std::vector<std::string_view>& family_names() {
  static const std::vector<std::string_view> kNames = {
      "Adams", "Berg", "Costa", "Dubois", "Evans", "Fischer", "Garcia", "Haas", "Ito", "Jensen",
      "Kim", "Lopez", "Meyer", "Novak", "Okafor", "Petrov", "Rossi", "Silva", "Tanaka", "Weber"};
  return kNames;
}

inline const std::vector<std::string_view>& nations() {
  static const std::vector<std::string_view> kNations = {
      "Canada", "Chile", "Denmark", "Egypt", "France", "Ghana", "India", "Japan",
      "Kenya",  "Mexico", "Norway", "Peru", "Poland", "Spain", "Sweden", "Vietnam"};
  return kNations;
}

inline const std::vector<std::string_view>& stores() {
  static const std::vector<std::string_view> kStores = {
      "FreshMart", "CornerShop", "GreenLeaf", "CityDrug", "BlueHarbor", "SunBakery",
      "MegaSave",  "QuickStop",  "NorthStar", "Maple Deli"};
  return kStores;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.index(v.size())];
}

inline std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rng.index(10)));
  return s;
}

inline std::string date(Rng& rng, int year_lo, int year_span) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year_lo + int(rng.index(year_span)),
                1 + int(rng.index(12)), 1 + int(rng.index(28)));
  return buf;
}

}  // namespace detail

/// Field names embedded in a template family's questions. Free text has none.
inline const std::vector<std::string_view>& template_fields(TextSource source) {
  static const std::vector<std::string_view> kNone;
  static const std::vector<std::string_view> kIdCard = {"Name", "ID Number", "Date of Birth",
                                                        "Nationality", "Expiry Date"};
  static const std::vector<std::string_view> kReceipt = {"Total", "Date", "Store", "Invoice No",
                                                         "Tax"};
  switch (source) {
    case TextSource::IdCard: return kIdCard;
    case TextSource::Receipt: return kReceipt;
    default: return kNone;
  }
}

inline constexpr std::string_view kFreeTextQuestion = "What is the text in the image?";

struct TextItem {
  std::string subset;
  std::string question;
  std::string text;
};

/// Family used for sample `index`; Mixed cycles free / id-card / receipt.
inline TextSource source_for_index(TextSource source, std::size_t index) {
  if (source != TextSource::Mixed) return source;
  constexpr TextSource kCycle[3] = {TextSource::FreeText, TextSource::IdCard, TextSource::Receipt};
  return kCycle[index % 3];
}

inline TextItem draw_text(TextSource source, std::uint64_t sample_seed) {
  Rng rng(derive_seed({sample_seed, detail::kTextStream}));
  TextItem item;
  item.subset = std::string(to_string(source));
  switch (source) {
    case TextSource::Mixed:
    case TextSource::FreeText:
      item.subset = "free";
      item.question = std::string(kFreeTextQuestion);
      item.text = std::string(detail::pick(rng, detail::free_words()));
      break;
    case TextSource::IdCard: {
      const auto& fields = template_fields(source);
      const auto field = fields[rng.index(fields.size())];
      item.question = "What is the " + std::string(field) + " on the ID card?";
      if (field == "Name") {
        item.text = std::string(detail::pick(rng, detail::given_names())) + " " +
                    std::string(detail::pick(rng, detail::family_names()));
      } else if (field == "ID Number") {
        item.text = detail::digits(rng, 9 + int(rng.index(4)));
      } else if (field == "Date of Birth") {
        item.text = detail::date(rng, 1950, 55);
      } else if (field == "Nationality") {
        item.text = std::string(detail::pick(rng, detail::nations()));
      } else {
        item.text = detail::date(rng, 2026, 10);
      }
      break;
    }
    case TextSource::Receipt: {
      const auto& fields = template_fields(source);
      const auto field = fields[rng.index(fields.size())];
      item.question = "What is the " + std::string(field) + " on the receipt?";
      if (field == "Total" || field == "Tax") {
        item.text = "$" + std::to_string(1 + rng.index(field == "Tax" ? 40 : 400)) + "." +
                    detail::digits(rng, 2);
      } else if (field == "Date") {
        item.text = detail::date(rng, 2019, 8);
      } else if (field == "Store") {
        item.text = std::string(detail::pick(rng, detail::stores()));
      } else {
        item.text = "INV-" + detail::digits(rng, 5);
      }
      break;
    }
  }
  return item;
}

/// One class per character from the per-class rates. Whitespace is always
/// Clear. A draw is consumed for every character so positions stay aligned.
inline std::vector<DegradationClass> plan_degradation(std::string_view text,
                                                      const GenerationConfig& config,
                                                      std::uint64_t sample_seed) {
  if (text.empty()) throw std::invalid_argument("plan_degradation: empty text");
  config.validate();
  Rng rng(derive_seed({sample_seed, detail::kPlanStream}));
  std::vector<DegradationClass> plan;
  for (char32_t c : utf8::decode(text)) {
    const double u = rng.uniform();
    if (is_whitespace(c)) {
      plan.push_back(DegradationClass::Clear);
    } else if (u < config.partial_rate) {
      plan.push_back(DegradationClass::PartialOcclusion);
    } else if (u < config.partial_rate + config.full_rate) {
      plan.push_back(DegradationClass::FullOcclusion);
    } else {
      plan.push_back(DegradationClass::Clear);
    }
  }
  return plan;
}

/// Clear glyphs go to the clear list, PartialOcclusion glyphs to the not-clear
/// list, and FullOcclusion glyphs become one space in the final string.
/// Whitespace is never listed and passes through to the final string.
inline StructuredAnswer expected_answer(const std::vector<CharAnnotation>& chars) {
  StructuredAnswer a;
  for (const auto& c : chars) {
    if (is_whitespace(c.glyph)) {
      utf8::append(a.final_ocr, c.glyph);
      continue;
    }
    switch (c.cls) {
      case DegradationClass::Clear:
        a.clear_chars.push_back(c.glyph);
        utf8::append(a.final_ocr, c.glyph);
        break;
      case DegradationClass::PartialOcclusion:
        a.not_clear_chars.push_back(c.glyph);
        utf8::append(a.final_ocr, c.glyph);
        break;
      case DegradationClass::FullOcclusion:
        a.final_ocr.push_back(' ');
        break;
    }
  }
  a.clear_count = a.clear_chars.size();
  a.not_clear_count = a.not_clear_chars.size();
  return a;
}

inline DegradedSample render_sample(std::string_view text, const std::vector<DegradationClass>& plan,
                                    std::string_view question, const GenerationConfig& config,
                                    std::uint64_t seed) {
  config.validate();
  const auto symbols = utf8::decode(text);
  if (symbols.size() != plan.size()) {
    throw std::invalid_argument("render_sample: plan length " + std::to_string(plan.size()) +
                                " does not match text length " + std::to_string(symbols.size()));
  }
  const int scale = config.font_scale;
  const int cell_w = detail::kFontWidth * scale;
  const int cell_h = detail::kFontHeight * scale;
  const long long width = 2LL * config.padding + static_cast<long long>(symbols.size()) * cell_w;
  if (width > config.max_width) {
    throw SizingError("text needs " + std::to_string(width) + " px but max width is " +
                      std::to_string(config.max_width));
  }

  DegradedSample s;
  s.question = std::string(question);
  s.gt_text = std::string(text);
  s.seed = seed;
  s.image = Image(static_cast<int>(std::max<long long>(width, 1)), 2 * config.padding + cell_h,
                  detail::kBackground);

  Rng rng(derive_seed({seed, detail::kRenderStream}));
  const double mix_total = config.mix.occlusion + config.mix.blur + config.mix.contrast;
  const int partial_min_rows = static_cast<int>(std::ceil(bands::kPartialLo * cell_h));
  const int partial_max_rows = static_cast<int>(std::floor(bands::kPartialHi * cell_h));

  for (std::size_t i = 0; i < symbols.size(); ++i) {
    CharAnnotation a;
    a.glyph = symbols[i];
    a.cls = plan[i];
    a.bbox = {config.padding + static_cast<int>(i) * cell_w, config.padding, cell_w, cell_h};
    if (is_whitespace(a.glyph) && a.cls != DegradationClass::Clear) {
      throw std::invalid_argument("render_sample: whitespace at position " + std::to_string(i) +
                                  " must be Clear");
    }
    detail::draw_glyph(s.image, a.bbox, a.glyph, scale);

    if (a.cls == DegradationClass::PartialOcclusion) {
      const double strength = rng.uniform(bands::kPartialLo, bands::kPartialHi);
      const double pick = rng.uniform() * mix_total;
      if (pick < config.mix.occlusion) {
        const int rows = std::clamp(static_cast<int>(std::lround(strength * cell_h)),
                                    partial_min_rows, partial_max_rows);
        const int top = static_cast<int>(rng.index(static_cast<std::uint64_t>(cell_h - rows + 1)));
        detail::occlusion_bar(s.image, a.bbox, top, rows);
        a.occluded_fraction = static_cast<double>(rows) / cell_h;
      } else if (pick < config.mix.occlusion + config.mix.blur) {
        // Kernel width scales with glyph height: odd, at least 3.
        const int kernel = std::max(3, 2 * static_cast<int>(strength * cell_h / 4) + 1);
        detail::box_blur(s.image, a.bbox, kernel);
        a.occluded_fraction = strength;
      } else {
        detail::contrast_fade(s.image, a.bbox, strength);
        a.occluded_fraction = strength;
      }
    } else if (a.cls == DegradationClass::FullOcclusion) {
      const double strength = rng.uniform(bands::kFullLo, 1.0);
      const int rows = std::min(cell_h, static_cast<int>(std::ceil(strength * cell_h)));
      const int top = static_cast<int>(rng.index(static_cast<std::uint64_t>(cell_h - rows + 1)));
      detail::occlusion_bar(s.image, a.bbox, top, rows);
      a.occluded_fraction = static_cast<double>(rows) / cell_h;
    }
    s.chars.push_back(a);
  }
  s.expected = expected_answer(s.chars);
  return s;
}

inline std::string sample_id(std::string_view subset, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%06zu", index);
  return std::string(subset) + buf;
}

/// Subset tag encoded in a sample id ("receipt-000004" -> "receipt").
inline std::string subset_of(std::string_view id) {
  const auto dash = id.rfind('-');
  return dash == std::string_view::npos ? std::string(id) : std::string(id.substr(0, dash));
}

inline std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index) {
  return derive_seed({master_seed, static_cast<std::uint64_t>(index)});
}

/// Regenerates sample `index` from the master seed alone.
inline DegradedSample make_sample(const GenerationConfig& config, std::size_t index) {
  const auto seed = sample_seed(config.master_seed, index);
  const auto source = source_for_index(config.source, index);
  const auto item = draw_text(source, seed);
  const auto plan = plan_degradation(item.text, config, seed);
  auto s = render_sample(item.text, plan, item.question, config, seed);
  s.id = sample_id(item.subset, index);
  return s;
}

// ---------------------------------------------------------------------------
// Manifest (JSON Lines)

inline nlohmann::ordered_json manifest_entry(const DegradedSample& s, std::string_view image_path) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["image_path"] = image_path;
  j["question"] = s.question;
  j["gt_text"] = s.gt_text;
  auto chars = nlohmann::ordered_json::array();
  for (const auto& c : s.chars) {
    nlohmann::ordered_json cj;
    cj["glyph"] = utf8::encode(c.glyph);
    cj["bbox"] = {c.bbox.x, c.bbox.y, c.bbox.w, c.bbox.h};
    cj["class"] = to_string(c.cls);
    cj["occluded_fraction"] = c.occluded_fraction;
    chars.push_back(std::move(cj));
  }
  j["chars"] = std::move(chars);
  j["expected"] = to_json(s.expected);
  j["seed"] = s.seed;
  return j;
}

struct ManifestRecord {
  DegradedSample sample;
  std::string image_path;
};

inline ManifestRecord parse_manifest_entry(const nlohmann::json& j) {
  ManifestRecord r;
  auto& s = r.sample;
  s.id = j.at("id").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  s.question = j.at("question").get<std::string>();
  s.gt_text = j.at("gt_text").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& cj : j.at("chars")) {
    CharAnnotation c;
    const auto glyph = utf8::decode(cj.at("glyph").get<std::string>());
    if (glyph.size() != 1) throw std::invalid_argument("glyph must be a single symbol in " + s.id);
    c.glyph = glyph[0];
    const auto& b = cj.at("bbox");
    c.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    const auto cls = parse_degradation_class(cj.at("class").get<std::string>());
    if (!cls) throw std::invalid_argument("unknown degradation class in " + s.id);
    c.cls = *cls;
    c.occluded_fraction = cj.at("occluded_fraction").get<double>();
    s.chars.push_back(c);
  }
  std::u32string glyphs;
  for (const auto& c : s.chars) glyphs.push_back(c.glyph);
  if (glyphs != utf8::decode(s.gt_text)) {
    throw std::invalid_argument("chars do not spell gt_text in " + s.id);
  }
  s.expected = structured_answer_from_json(j.at("expected"));
  return r;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_manifest_entry(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct DatasetManifest {
  std::filesystem::path path;
  std::vector<ManifestRecord> records;
};

inline constexpr std::string_view kManifestName = "manifest.jsonl";

/// Writes images/<id>.png per sample plus manifest.jsonl under `out_dir`.
/// Output bytes depend only on the config, never on `jobs`.
inline DatasetManifest generate_dataset(const GenerationConfig& config,
                                        const std::filesystem::path& out_dir, unsigned jobs = 1) {
  config.validate();
  namespace fs = std::filesystem;
  const auto image_dir = out_dir / "images";
  std::error_code ec;
  fs::create_directories(image_dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + image_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.path = out_dir / kManifestName;
  m.records.resize(config.sample_count);
  parallel_for(config.sample_count, jobs, [&](std::size_t i) {
    auto s = make_sample(config, i);
    const std::string rel = "images/" + s.id + ".png";
    write_png(out_dir / rel, s.image);
    m.records[i] = {std::move(s), rel};
  });

  std::ofstream out(m.path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + m.path.string());
  for (const auto& r : m.records) {
    out << manifest_entry(r.sample, r.image_path).dump(-1, ' ', false,
                                                      nlohmann::json::error_handler_t::replace)
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + m.path.string());
  return m;
}

}  // namespace hvqa
