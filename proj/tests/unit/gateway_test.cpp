#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "medrag/error.hpp"
#include "medrag/gateway.hpp"
#include "medrag/prompts.hpp"

namespace {

using namespace medrag;
using namespace medrag::llm;

ProviderConfig mock_config(int dim = 256) {
  ProviderConfig c;
  c.seed = 7;
  c.embed_dim = dim;
  return c;
}

PromptRequest sleep_request() {
  PromptRequest r;
  r.system_text = std::string(prompts::kScoreSystem);
  r.user_text = "Question: How well does the patient sleep?\nReport: wakes up at night";
  return r;
}

double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a.values[i] * b.values[i];
  return s;
}

TEST(Gateway, CanonicalPromptJoinsSectionsAndStripsTrailingSpace) {
  PromptRequest r;
  r.system_text = "sys  ";
  r.context_blocks = {"one", "two"};
  r.user_text = "user\t";
  EXPECT_EQ(canonical_prompt(r), "sys\n---\none\n---\ntwo\n---\nuser");
  EXPECT_EQ(prompt_text_digest("sys\n---\none\n---\ntwo\n---\nuser   "), request_digest(r));
}

TEST(Gateway, DigestIgnoresSamplingParameters) {
  auto a = sleep_request();
  auto b = a;
  b.max_tokens = 12;
  EXPECT_EQ(request_digest(a), request_digest(b));
  b.context_blocks.push_back("extra");
  EXPECT_NE(request_digest(a), request_digest(b));
}

TEST(Gateway, MockIsDeterministic) {
  Gateway g(mock_config());
  const auto a = g.complete(sleep_request());
  const auto b = g.complete(sleep_request());
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.request_digest, request_digest(sleep_request()));
}

TEST(Gateway, MockAnswersFromScript) {
  auto script = std::make_shared<ScriptTable>();
  script->add_prompt(sleep_request(), "Sleep: 0.6");
  Gateway g(mock_config(), std::make_shared<MockProvider>(mock_config(), script));
  EXPECT_EQ(g.complete(sleep_request()).text, "Sleep: 0.6");
}

TEST(Gateway, ScriptFileRoundTripsAndAcceptsPromptText) {
  const auto path = (std::filesystem::temp_directory_path() / "medrag_script_test.json").string();
  ScriptTable t;
  t.add_prompt(sleep_request(), "Sleep: 0.6");
  t.save(path);
  const auto loaded = ScriptTable::load(path);
  ASSERT_NE(loaded.find(request_digest(sleep_request())), nullptr);
  EXPECT_EQ(*loaded.find(request_digest(sleep_request())), "Sleep: 0.6");

  const auto from_text = ScriptTable::from_json(
      nlohmann::json::array({{{"prompt_text", canonical_prompt(sleep_request())}, {"response", "x: 1"}}}));
  EXPECT_NE(from_text.find(request_digest(sleep_request())), nullptr);
  EXPECT_THROW(ScriptTable::from_json(nlohmann::json::object()), Error);
  std::filesystem::remove(path);
}

TEST(Gateway, MockRequiresSeedAndRemoteRequiresFields) {
  ProviderConfig c;
  EXPECT_THROW(c.validate(), Error);
  ProviderConfig r;
  r.kind = ProviderKind::RemoteChat;
  EXPECT_THROW(r.validate(), Error);
}

TEST(Gateway, RemoteWithUnsetKeyIsConfigError) {
  ProviderConfig r;
  r.kind = ProviderKind::RemoteChat;
  r.base_url = "http://127.0.0.1:9";
  r.api_key_env = "MEDRAG_TEST_KEY_THAT_IS_NOT_SET";
  ::unsetenv(r.api_key_env.c_str());
  try {
    Gateway g(r);
    FAIL() << "expected ConfigError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
  }
}

TEST(Gateway, EmbeddingIsUnitNormAndCountInvariant) {
  Gateway g(mock_config());
  for (const char* t : {"abc", "fever and cough", "x y z x y z q"}) {
    const auto v = g.embed(t);
    EXPECT_EQ(v.dim(), 256u);
    EXPECT_NEAR(std::sqrt(dot(v, v)), 1.0, 1e-9);
  }
  EXPECT_EQ(g.embed("abc abc"), g.embed("abc"));
  EXPECT_THROW(g.embed("   "), Error);
}

TEST(Gateway, DisjointCollisionFreeTokensAreOrthogonal) {
  // Search for a token pair whose hashed buckets do not collide.
  const auto first = hashed_embedding("alpha", 256);
  for (int i = 0; i < 1000; ++i) {
    const auto word = "token" + std::to_string(i);
    const auto other = hashed_embedding(word, 256);
    bool overlap = false;
    for (std::size_t k = 0; k < 256; ++k) overlap = overlap || (first.values[k] != 0.0 && other.values[k] != 0.0);
    if (!overlap) {
      EXPECT_NEAR(dot(first, other), 0.0, 1e-9);
      return;
    }
  }
  FAIL() << "no collision-free pair found";
}

TEST(Gateway, BuiltinResponders) {
  Gateway g(mock_config());
  PromptRequest follow;
  follow.system_text = std::string(prompts::kFollowUpSystem);
  follow.user_text = "Conversation so far:\npatient: tummy ache";
  EXPECT_EQ(g.complete(follow).text, prompts::kMockFollowUp);

  PromptRequest ready;
  ready.system_text = std::string(prompts::kReadinessSystem);
  ready.user_text = "User turns: 1\nMinimum user turns: 2";
  EXPECT_EQ(g.complete(ready).text, "not ready");
  ready.user_text = "User turns: 2\nMinimum user turns: 2";
  EXPECT_EQ(g.complete(ready).text, "ready");

  PromptRequest advice;
  advice.system_text = std::string(prompts::kAdviceSystem);
  advice.user_text = "Predicted conditions: gastrointestinal dysfunction; diarrhea\n\nPatient record:\nloose stools";
  const auto text = g.complete(advice).text;
  EXPECT_EQ(text.rfind("Gastrointestinal dysfunction and Diarrhea.", 0), 0u) << text;
}

TEST(Gateway, BlankUserTextIsRejected) {
  Gateway g(mock_config());
  PromptRequest r;
  r.system_text = "s";
  EXPECT_THROW(g.complete(r), Error);
}

class CountingProvider final : public Provider {
 public:
  std::string id() const override { return "counting"; }
  CompletionText complete(const PromptRequest&) override {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --active;
    return {"ok: 1", id(), ""};
  }
  EmbeddingVector embed(std::string_view) override { return {}; }

  std::atomic<int> active{0};
  std::atomic<int> peak{0};
};

TEST(Gateway, CapsConcurrentRequests) {
  auto cfg = mock_config();
  cfg.max_in_flight = 2;
  auto provider = std::make_shared<CountingProvider>();
  Gateway g(cfg, provider);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { g.complete(sleep_request()); });
  threads.clear();
  EXPECT_LE(provider->peak.load(), 2);
  EXPECT_GE(provider->peak.load(), 1);
}

TEST(Gateway, SymptomListParsing) {
  const std::vector<std::string> ab = {"a", "b"};
  EXPECT_EQ(parse_symptom_list(" a , , b "), ab);
}

TEST(Gateway, GenerateSymptomsFromExemplar) {
  const std::vector<std::pair<std::string, std::string>> exemplars = {
      {"cold", "runny or stuffy nose, sore or tingling throat, cough, sneeze"}};
  PromptRequest r;
  r.system_text = std::string(prompts::kSymptomSystem);
  r.user_text = "disease: cold, symptoms: runny or stuffy nose, sore or tingling throat, cough, sneeze\n"
                "disease: cold, symptoms:";
  auto script = std::make_shared<ScriptTable>();
  script->add_prompt(r, exemplars[0].second);
  Gateway g(mock_config(), std::make_shared<MockProvider>(mock_config(), script));
  const std::vector<std::string> expected = {"runny or stuffy nose", "sore or tingling throat", "cough", "sneeze"};
  EXPECT_EQ(generate_symptoms("cold", exemplars, g), expected);

  script->add_prompt(r, "");
  try {
    generate_symptoms("cold", exemplars, g);
    FAIL() << "expected EmptyGeneration";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyGeneration);
  }
}

}  // namespace
