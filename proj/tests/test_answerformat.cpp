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
#include <gtest/gtest.h>

#include <random>
#include <string>

#include "hvqa/answerformat.hpp"
#include "test_support.hpp"

namespace {

const char* kStitiObject = R"({
  "clear char-level OCR": "0 1 5 S t i t i",
  "not clear enough char-level OCR": "2",
  "clear number": 8,
  "not clear enough number": 1,
  "final OCR": "2015 S ti ti"
})";

hvqa::StructuredAnswer beautiful() {
  hvqa::StructuredAnswer a;
  a.clear_chars = U"Bauful";
  a.not_clear_chars = U"e";
  a.clear_count = 6;
  a.not_clear_count = 1;
  a.final_ocr = "Beau  ful";
  return a;
}

// Printable non-space symbols, including a few multi-byte and JSON-special ones.
const std::u32string kGlyphs = U"abcXYZ019!\"#\\/{}[]:,.éß日本😀";

hvqa::StructuredAnswer random_answer(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(0, 12), pick(0, int(kGlyphs.size()) - 1), coin(0, 4);
  hvqa::StructuredAnswer a;
  for (int i = len(rng); i > 0; --i) a.clear_chars.push_back(kGlyphs[pick(rng)]);
  for (int i = len(rng); i > 0; --i) a.not_clear_chars.push_back(kGlyphs[pick(rng)]);
  a.clear_count = std::uniform_int_distribution<std::uint64_t>(0, 1000)(rng);
  a.not_clear_count = std::uniform_int_distribution<std::uint64_t>(0, 1000)(rng);
  for (int i = len(rng); i > 0; --i) {
    if (coin(rng) == 0) {
      a.final_ocr += ' ';
    } else {
      hvqa::utf8::append(a.final_ocr, kGlyphs[pick(rng)]);
    }
  }
  return a;
}

}  // namespace

TEST(ParseAnswer, StitiExample) {
  const auto v = hvqa::parse_answer(kStitiObject);
  ASSERT_TRUE(v.parsed);
  EXPECT_EQ(v.score, 1);
  EXPECT_TRUE(v.issues.empty());
  EXPECT_EQ(v.parsed->clear_chars, U"015Stiti");
  EXPECT_EQ(v.parsed->not_clear_chars, U"2");
  EXPECT_EQ(v.parsed->clear_count, 8u);
  EXPECT_EQ(v.parsed->not_clear_count, 1u);
  EXPECT_EQ(v.parsed->final_ocr, "2015 S ti ti");
}

TEST(ParseAnswer, EmptyInput) {
  const auto v = hvqa::parse_answer("");
  EXPECT_EQ(v.score, 0);
  EXPECT_FALSE(v.parsed);
  ASSERT_EQ(v.issues.size(), 1u);
  EXPECT_EQ(v.issues[0], "no JSON object found");
}

TEST(ParseAnswer, PrefixInvariance) {
  const auto bare = hvqa::parse_answer(kStitiObject);
  std::mt19937_64 rng(17);
  const std::string words[] = {"Let", "me", "look", "at", "the", "image.", "The", "digit", "2", "is",
                               "faint;", "{not json}", "\"quoted", "braces } {", "\n", "ok"};
  std::uniform_int_distribution<int> len(0, 60), pick(0, 15);
  for (int t = 0; t < 200; ++t) {
    std::string prefix;
    for (int i = len(rng); i > 0; --i) prefix += words[pick(rng)] + " ";
    const auto v = hvqa::parse_answer(prefix + "\n" + kStitiObject);
    ASSERT_EQ(v.score, 1) << prefix;
    EXPECT_EQ(v.parsed, bare.parsed);
  }
}

TEST(ParseAnswer, LastObjectWins) {
  const std::string text = std::string(kStitiObject) + " then corrected: " +
                           hvqa::serialize_answer(beautiful());
  const auto v = hvqa::parse_answer(text);
  ASSERT_TRUE(v.parsed);
  EXPECT_EQ(*v.parsed, beautiful());
}

TEST(ParseAnswer, TrailingGarbageAfterObjectIgnored) {
  const auto v = hvqa::parse_answer(std::string(kStitiObject) + "\nDone. {");
  EXPECT_EQ(v.score, 1);
}

TEST(ParseAnswer, KeysCaseInsensitiveAndTrimmed) {
  const auto v = hvqa::parse_answer(R"({" Clear Char-Level OCR ":"a b","NOT CLEAR ENOUGH CHAR-LEVEL OCR":"",
    "clear NUMBER":2,"not clear enough number ":0,"Final OCR":"ab"})");
  ASSERT_EQ(v.score, 1);
  EXPECT_EQ(v.parsed->clear_chars, U"ab");
}

TEST(ParseAnswer, MultiSymbolTokensSplit) {
  const auto v = hvqa::parse_answer(R"({"clear char-level OCR":"ab  c日本","not clear enough char-level OCR":"x",
    "clear number":5,"not clear enough number":1,"final OCR":"abc日本x"})");
  ASSERT_EQ(v.score, 1);
  EXPECT_EQ(v.parsed->clear_chars, U"abc日本");
}

TEST(ParseAnswer, CountsAsDigitStrings) {
  const auto v = hvqa::parse_answer(R"({"clear char-level OCR":"a","not clear enough char-level OCR":"",
    "clear number":"1","not clear enough number":"0","final OCR":"a"})");
  ASSERT_EQ(v.score, 1);
  EXPECT_EQ(v.parsed->clear_count, 1u);
}

TEST(ParseAnswer, RejectsBadCounts) {
  for (const char* bad : {"-1", "1.5", "\"x\"", "\"-3\"", "null", "true", "[]", "\"\""}) {
    const std::string text = std::string(R"({"clear char-level OCR":"a","not clear enough char-level OCR":"",)") +
                             R"("clear number":)" + bad + R"(,"not clear enough number":0,"final OCR":"a"})";
    const auto v = hvqa::parse_answer(text);
    EXPECT_EQ(v.score, 0) << bad;
    EXPECT_FALSE(v.issues.empty());
  }
}

TEST(ParseAnswer, RejectsNonStringLists) {
  const auto v = hvqa::parse_answer(R"({"clear char-level OCR":["a"],"not clear enough char-level OCR":"",
    "clear number":1,"not clear enough number":0,"final OCR":"a"})");
  EXPECT_EQ(v.score, 0);
  ASSERT_FALSE(v.issues.empty());
  EXPECT_NE(v.issues[0].find("not a string"), std::string::npos);
}

TEST(ParseAnswer, RemovingAnyFieldFlipsScore) {
  const auto full = nlohmann::json::parse(kStitiObject);
  for (auto it = full.begin(); it != full.end(); ++it) {
    auto j = full;
    j.erase(it.key());
    const auto v = hvqa::parse_answer(j.dump());
    EXPECT_EQ(v.score, 0) << it.key();
    EXPECT_FALSE(v.parsed);
    ASSERT_FALSE(v.issues.empty());
    EXPECT_NE(v.issues[0].find("missing field"), std::string::npos);
  }
}

TEST(ParseAnswer, BracesInsideStrings) {
  hvqa::StructuredAnswer a;
  a.clear_chars = U"{}";
  a.clear_count = 2;
  a.final_ocr = "{ } \"}";
  const auto v = hvqa::parse_answer("reasoning {" + hvqa::serialize_answer(a));
  ASSERT_TRUE(v.parsed);
  EXPECT_EQ(*v.parsed, a);
}

TEST(ParseAnswer, NeverThrowsOnFuzz) {
  std::mt19937_64 rng(123);
  const std::string seeds[] = {kStitiObject, hvqa::serialize_answer(beautiful()), "{}", "{\"a\":"};
  std::uniform_int_distribution<int> byte(0, 255), len(0, 200), op(0, 3), which(0, 3);
  for (int t = 0; t < 10000; ++t) {
    std::string s;
    if (op(rng) == 0) {
      for (int i = len(rng); i > 0; --i) s.push_back(static_cast<char>(byte(rng)));
    } else {
      s = seeds[which(rng)];
      for (int i = len(rng) / 20; i > 0 && !s.empty(); --i)
        s[std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng)] = static_cast<char>(byte(rng));
    }
    hvqa::FormatVerdict v;
    ASSERT_NO_THROW(v = hvqa::parse_answer(s));
    EXPECT_EQ(v.score == 1, v.parsed.has_value());
  }
}

TEST(SerializeAnswer, EmptyAnswer) {
  const auto s = hvqa::serialize_answer({});
  EXPECT_EQ(s, R"({"clear char-level OCR":"","not clear enough char-level OCR":"","clear number":0,)"
               R"("not clear enough number":0,"final OCR":""})");
  const auto v = hvqa::parse_answer(s);
  ASSERT_TRUE(v.parsed);
  EXPECT_EQ(*v.parsed, hvqa::StructuredAnswer{});
}

TEST(SerializeAnswer, BeautifulRoundTrip) {
  const auto s = hvqa::serialize_answer(beautiful());
  EXPECT_NE(s.find(R"("clear char-level OCR":"B a u f u l")"), std::string::npos);
  EXPECT_NE(s.find(R"("final OCR":"Beau  ful")"), std::string::npos);
  EXPECT_EQ(*hvqa::parse_answer(s).parsed, beautiful());
}

TEST(SerializeAnswer, KeyOrder) {
  const auto s = hvqa::serialize_answer(beautiful());
  std::size_t last = 0;
  for (auto k : {hvqa::keys::kClearChars, hvqa::keys::kNotClearChars, hvqa::keys::kClearCount,
                 hvqa::keys::kNotClearCount, hvqa::keys::kFinal}) {
    const auto pos = s.find("\"" + std::string(k) + "\"");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_GE(pos, last);
    last = pos;
  }
}

TEST(SerializeAnswer, DoubleSpacesPreserved) {
  hvqa::StructuredAnswer a;
  a.final_ocr = "a  b   c ";
  EXPECT_EQ(hvqa::parse_answer(hvqa::serialize_answer(a)).parsed->final_ocr, "a  b   c ");
}

TEST(SerializeAnswer, RandomRoundTrip) {
  std::mt19937_64 rng(4242);
  for (int t = 0; t < 1000; ++t) {
    const auto a = random_answer(rng);
    const auto v = hvqa::parse_answer(hvqa::serialize_answer(a));
    ASSERT_EQ(v.score, 1);
    ASSERT_EQ(*v.parsed, a) << hvqa::serialize_answer(a);
  }
}

TEST(StructuredAnswerFromJson, ThrowsOnInvalid) {
  EXPECT_THROW(hvqa::structured_answer_from_json(nlohmann::json::object()), std::invalid_argument);
  EXPECT_EQ(hvqa::structured_answer_from_json(hvqa::to_json(beautiful())), beautiful());
}
