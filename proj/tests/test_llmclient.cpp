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

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hvqa/llmclient.hpp"
#include "test_support.hpp"

namespace {

using D = hvqa::DegradationClass;
using hvqa::testing::StubServer;

hvqa::DegradedSample beautiful_sample() {
  auto s = hvqa::render_sample("Beautiful",
                               {D::Clear, D::PartialOcclusion, D::Clear, D::Clear, D::FullOcclusion,
                                D::FullOcclusion, D::Clear, D::Clear, D::Clear},
                               "What is the text in the image?", hvqa::GenerationConfig{}, 1);
  s.id = "free-000000";
  return s;
}

std::vector<hvqa::ManifestRecord> manifest_of(std::size_t n) {
  hvqa::GenerationConfig cfg;
  cfg.master_seed = 9;
  std::vector<hvqa::ManifestRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = hvqa::make_sample(cfg, i);
    out.push_back({s, "images/" + s.id + ".png"});
  }
  return out;
}

hvqa::EndpointConfig fast_config(const std::string& url) {
  hvqa::EndpointConfig cfg;
  cfg.url = url;
  cfg.timeout_seconds = 5;
  cfg.backoff_seconds = 0.01;
  cfg.backoff_max_seconds = 0.05;
  return cfg;
}

}  // namespace

TEST(ColdStartPrompt, EmptyCaptionKeepsStructure) {
  const auto p = hvqa::build_coldstart_prompt("Q?", "", "1. a Clear 0.00");
  EXPECT_NE(p.find("Question: Q?"), std::string::npos);
  EXPECT_NE(p.find("Image Content: ."), std::string::npos);
  EXPECT_NE(p.find("Character info: 1. a Clear 0.00."), std::string::npos);
}

TEST(ColdStartPrompt, ContainsForbiddenPhrasesLine) {
  const auto p = hvqa::build_coldstart_prompt("What is written?", "A line of text", "1. a Clear 0.00");
  EXPECT_NE(p.find("Forbidden phrases:"), std::string::npos);
}

TEST(ColdStartPrompt, SlotOrder) {
  const auto p = hvqa::build_coldstart_prompt("QQQ-marker", "CCC-marker", "III-marker");
  const auto q = p.find("QQQ-marker"), c = p.find("CCC-marker"), i = p.find("III-marker");
  ASSERT_NE(q, std::string::npos);
  ASSERT_NE(c, std::string::npos);
  ASSERT_NE(i, std::string::npos);
  EXPECT_LT(q, c);
  EXPECT_LT(c, i);
}

TEST(ColdStartPrompt, TemplateTextPreserved) {
  const auto p = hvqa::build_coldstart_prompt("", "", "");
  std::string expect(hvqa::prompts::kColdStart);
  for (auto slot : {hvqa::prompts::kQuestionSlot, hvqa::prompts::kCaptionSlot, hvqa::prompts::kCharInfoSlot}) {
    const auto pos = expect.find(slot);
    ASSERT_NE(pos, std::string::npos);
    expect.erase(pos, slot.size());
  }
  EXPECT_EQ(p, expect);
}

TEST(ColdStartPrompt, SlotValuesAreNotRescanned) {
  const auto p = hvqa::build_coldstart_prompt("{caption}", "X", "Y");
  EXPECT_NE(p.find("Question: {caption}"), std::string::npos);
}

TEST(ZeroShotPrompt, HasOutputFormatKeys) {
  const std::string_view zs = hvqa::prompts::kZeroShot;
  for (auto k : {hvqa::keys::kClearChars, hvqa::keys::kNotClearChars, hvqa::keys::kClearCount,
                 hvqa::keys::kNotClearCount, hvqa::keys::kFinal})
    EXPECT_NE(zs.find(k), std::string_view::npos) << k;
}

TEST(CharacterInfo, AllClear) {
  const auto s = hvqa::render_sample("ab", {D::Clear, D::Clear}, "q", hvqa::GenerationConfig{}, 0);
  EXPECT_EQ(hvqa::describe_character_info(s), "1. a Clear 0.00\n2. b Clear 0.00\n");
}

TEST(CharacterInfo, BeautifulPartialLine) {
  const auto s = beautiful_sample();
  const auto info = hvqa::describe_character_info(s);
  char frac[16];
  std::snprintf(frac, sizeof frac, "%.2f", s.chars[1].occluded_fraction);
  EXPECT_NE(info.find(std::string("2. e PartialOcclusion ") + frac + "\n"), std::string::npos);
  EXPECT_NE(info.find("5. ? FullOcclusion"), std::string::npos);
  EXPECT_EQ(info.find(" t "), std::string::npos);
  EXPECT_EQ(info, hvqa::describe_character_info(beautiful_sample()));
}

TEST(CharacterInfo, WhitespaceLabelled) {
  const auto s = hvqa::render_sample("a b", std::vector<D>(3, D::Clear), "q", hvqa::GenerationConfig{}, 0);
  EXPECT_NE(hvqa::describe_character_info(s).find("2. <space> Clear 0.00"), std::string::npos);
}

TEST(RequestCompletion, EchoesContent) {
  StubServer stub;
  std::string seen_body;
  std::mutex mu;
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    seen_body = req.body;
    res.set_content(hvqa::testing::chat_response("fixed \"text\"\nline two"), "application/json");
  });
  stub.start();
  auto cfg = fast_config(stub.url());
  cfg.model = "test-model";
  const auto r = hvqa::request_completion(cfg, "hello prompt");
  EXPECT_EQ(r.text, "fixed \"text\"\nline two");
  EXPECT_EQ(r.retries, 0);
  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body["model"], "test-model");
  ASSERT_EQ(body["messages"].size(), 1u);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hello prompt");
}

TEST(RequestCompletion, RetriesOn429) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = 429;
      res.set_content("slow down", "text/plain");
      return;
    }
    res.set_content(hvqa::testing::chat_response("ok"), "application/json");
  });
  stub.start();
  const auto r = hvqa::request_completion(fast_config(stub.url()), "p");
  EXPECT_EQ(r.text, "ok");
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(calls.load(), 3);
}

TEST(RequestCompletion, GivesUpAfterMaxRetries) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
  });
  stub.start();
  auto cfg = fast_config(stub.url());
  cfg.max_retries = 2;
  try {
    hvqa::request_completion(cfg, "p");
    FAIL();
  } catch (const hvqa::TransportError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(calls.load(), 3);
}

TEST(RequestCompletion, ClientErrorNotRetried) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
  });
  stub.start();
  EXPECT_THROW(hvqa::request_completion(fast_config(stub.url()), "p"), hvqa::TransportError);
  EXPECT_EQ(calls.load(), 1);
}

TEST(RequestCompletion, InvalidJsonIsProtocolError) {
  StubServer stub;
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("{not json", "application/json");
  });
  stub.start();
  EXPECT_THROW(hvqa::request_completion(fast_config(stub.url()), "p"), hvqa::ProtocolError);
}

TEST(RequestCompletion, WrongShapeIsProtocolError) {
  StubServer stub;
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[]})", "application/json");
  });
  stub.start();
  EXPECT_THROW(hvqa::request_completion(fast_config(stub.url()), "p"), hvqa::ProtocolError);
}

TEST(RequestCompletion, ConnectionRefusedIsTransportError) {
  auto cfg = fast_config("http://127.0.0.1:1/v1/chat/completions");
  cfg.max_retries = 1;
  try {
    hvqa::request_completion(cfg, "p");
    FAIL();
  } catch (const hvqa::TransportError& e) {
    EXPECT_EQ(e.status(), 0);
    EXPECT_EQ(e.attempts(), 2);
  }
}

TEST(RequestCompletion, SendsBearerTokenFromEnvironment) {
  StubServer stub;
  std::string auth;
  std::mutex mu;
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    auth = req.get_header_value("Authorization");
    res.set_content(hvqa::testing::chat_response("ok"), "application/json");
  });
  stub.start();
  auto cfg = fast_config(stub.url());
  cfg.token_env = "HVQA_TEST_TOKEN_VAR";
  ::setenv("HVQA_TEST_TOKEN_VAR", "s3cret", 1);
  hvqa::request_completion(cfg, "p");
  ::unsetenv("HVQA_TEST_TOKEN_VAR");
  EXPECT_EQ(auth, "Bearer s3cret");
  hvqa::request_completion(cfg, "p");
  EXPECT_EQ(auth, "");
}

TEST(EndpointConfig, Validation) {
  hvqa::EndpointConfig cfg;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.url = "http://x";
  cfg.timeout_seconds = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.timeout_seconds = 1;
  cfg.max_retries = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Synthesize, AcceptsWrappedExpectedAnswer) {
  const auto manifest = manifest_of(6);
  StubServer stub;
  stub.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const auto prompt = nlohmann::json::parse(req.body)["messages"][0]["content"].get<std::string>();
    for (const auto& m : manifest) {
      if (prompt.find("Question: " + m.sample.question) == std::string::npos) continue;
      if (prompt.find(hvqa::describe_character_info(m.sample)) == std::string::npos) continue;
      res.set_content(hvqa::testing::chat_response("Looking closely, some glyphs are faint.\n" +
                                                   hvqa::serialize_answer(m.sample.expected)),
                      "application/json");
      return;
    }
    res.status = 500;
  });
  stub.start();
  hvqa::SynthesisOptions opt;
  opt.max_in_flight = 3;
  const auto out = hvqa::synthesize_cot_dataset(manifest, fast_config(stub.url()), opt);
  ASSERT_EQ(out.records.size(), manifest.size());
  EXPECT_TRUE(out.rejects.empty());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& r = out.records[i];
    EXPECT_EQ(r.id, manifest[i].sample.id);
    EXPECT_EQ(r.reasoning, "Looking closely, some glyphs are faint.");
    const auto v = hvqa::parse_answer(r.answer);
    EXPECT_EQ(v.score, 1);
    EXPECT_EQ(*v.parsed, manifest[i].sample.expected);
  }
}

TEST(Synthesize, RejectsHallucinatedFinal) {
  hvqa::ManifestRecord rec{beautiful_sample(), "images/free-000000.png"};
  const std::vector<hvqa::ManifestRecord> manifest{rec};
  auto pred = rec.sample.expected;
  pred.final_ocr = "Beautiful";
  const auto out = hvqa::synthesize_cot_dataset(
      manifest, [&](std::string_view) { return hvqa::CompletionResult{hvqa::serialize_answer(pred), 0}; });
  EXPECT_TRUE(out.records.empty());
  ASSERT_EQ(out.rejects.size(), 1u);
  EXPECT_EQ(out.rejects[0].id, "free-000000");
  EXPECT_NE(out.rejects[0].reason.find("below threshold"), std::string::npos);
}

TEST(Synthesize, RejectsUnparseableAndEndpointFailures) {
  const auto manifest = manifest_of(3);
  int call = 0;
  const auto out = hvqa::synthesize_cot_dataset(manifest, [&](std::string_view) -> hvqa::CompletionResult {
    switch (call++) {
      case 0: return {"no answer here", 0};
      case 1: throw hvqa::TransportError("HTTP 503", 503, 4);
      default: return {hvqa::serialize_answer(manifest[2].sample.expected), 0};
    }
  });
  ASSERT_EQ(out.records.size(), 1u);
  EXPECT_EQ(out.records[0].id, manifest[2].sample.id);
  ASSERT_EQ(out.rejects.size(), 2u);
  EXPECT_NE(out.rejects[0].reason.find("unparseable"), std::string::npos);
  EXPECT_NE(out.rejects[1].reason.find("endpoint failure"), std::string::npos);
}

TEST(Synthesize, EmptyManifest) {
  int calls = 0;
  const auto out = hvqa::synthesize_cot_dataset(std::vector<hvqa::ManifestRecord>{}, [&](std::string_view) {
    ++calls;
    return hvqa::CompletionResult{};
  });
  EXPECT_TRUE(out.records.empty());
  EXPECT_TRUE(out.rejects.empty());
  EXPECT_EQ(calls, 0);
}

TEST(Synthesize, OrderStableUnderConcurrency) {
  const auto manifest = manifest_of(12);
  hvqa::SynthesisOptions opt;
  opt.max_in_flight = 6;
  const auto out = hvqa::synthesize_cot_dataset(
      manifest,
      [&](std::string_view prompt) {
        for (std::size_t i = 0; i < manifest.size(); ++i) {
          if (prompt.find(hvqa::describe_character_info(manifest[i].sample)) != std::string_view::npos) {
            std::this_thread::sleep_for(std::chrono::milliseconds(2 * (manifest.size() - i)));
            return hvqa::CompletionResult{hvqa::serialize_answer(manifest[i].sample.expected), 0};
          }
        }
        return hvqa::CompletionResult{};
      },
      opt);
  ASSERT_EQ(out.records.size(), manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) EXPECT_EQ(out.records[i].id, manifest[i].sample.id);
}

TEST(Synthesize, WritesJsonLines) {
  hvqa::testing::TempDir dir("cs");
  hvqa::ColdStartRecord r{"id-1", "images/a.png", "Q", "cap", "info", "think", "{}"};
  const std::vector<hvqa::ColdStartRecord> recs{r, r};
  hvqa::write_coldstart_records(dir.path() / "out.jsonl", recs);
  const auto text = hvqa::testing::read_file(dir.path() / "out.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  const auto j = nlohmann::json::parse(text.substr(0, text.find('\n')));
  for (const char* k : {"id", "image_path", "question", "caption", "char_info", "reasoning", "answer"})
    EXPECT_TRUE(j.contains(k)) << k;
}
