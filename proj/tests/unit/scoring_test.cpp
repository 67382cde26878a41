#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "case_study.hpp"
#include "medrag/error.hpp"
#include "medrag/feature_lab.hpp"
#include "medrag/scoring.hpp"

namespace {

using namespace medrag;
using namespace medrag::scoring;
namespace fs = std::filesystem;

QuestionBank small_bank() {
  return make_question_bank({{"q1", "sleep", "How well does the patient sleep?", "sleep"},
                             {"q2", "diet", "Is the diet regular?", "diet"}});
}

TEST(ParseScore, PlainLine) {
  const auto p = parse_score_line("Sleep: 0.6");
  EXPECT_EQ(p.feature_name, "sleep");
  EXPECT_DOUBLE_EQ(p.value, 0.6);
}

TEST(ParseScore, ClampsToUnitInterval) {
  EXPECT_DOUBLE_EQ(parse_score_line("Sleep: 1.7").value, 1.0);
  EXPECT_DOUBLE_EQ(parse_score_line("Sleep: -2").value, 0.0);
}

TEST(ParseScore, LastOccurrenceWins) {
  const auto p = parse_score_line("I think... the answer is Sleep: 0.3, no wait, Sleep: 0.4");
  EXPECT_EQ(p.feature_name, "sleep");
  EXPECT_DOUBLE_EQ(p.value, 0.4);
}

TEST(ParseScore, SpacedNamesBecomeUnderscored) {
  EXPECT_EQ(parse_score_line("Sleep Quality: 0.2").feature_name, "sleep_quality");
}

TEST(ParseScore, NoNumberThrows) {
  try {
    parse_score_line("The patient sleeps fine.");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoScoreFound);
  }
}

TEST(QuestionBank, ReferenceBankHas152UniqueQuestions) {
  const auto bank = load_question_bank(std::string(MEDRAG_SOURCE_DIR) + "/data/question_bank.json");
  EXPECT_EQ(bank.questions.size(), 152u);
  const auto names = bank.feature_names();
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), 152u);
  EXPECT_EQ(bank.bank_digest.size(), 64u);
}

TEST(QuestionBank, DuplicateAndEmptyAreRejected) {
  try {
    make_question_bank({{"q1", "sleep", "a?", "x"}, {"q2", "sleep", "b?", "x"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateFeatureName);
  }
  try {
    parse_question_bank(nlohmann::json::array());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parse);
  }
  try {
    make_question_bank({{"q1", "bad-name", "a?", "x"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadFeatureName);
  }
}

TEST(QuestionBank, SaveLoadKeepsDigest) {
  const auto bank = small_bank();
  const auto path = (fs::temp_directory_path() / "medrag_bank_test.json").string();
  save_question_bank(bank, path);
  EXPECT_EQ(load_question_bank(path).bank_digest, bank.bank_digest);
  fs::remove(path);
}

class ScoringTest : public ::testing::Test {
 protected:
  void SetUp() override {
    sg = fixture::make_scripted_gateway();
    index = rag::build_index({{"sleep.txt", "Night waking in children often follows late screen time."},
                              {"diet.txt", "Irregular meals upset digestion."}},
                             {}, *sg.gateway);
  }
  fixture::ScriptedGateway sg;
  rag::VectorIndex index;
  QuestionBank bank = small_bank();
};

TEST_F(ScoringTest, ScriptedAnswerIsTheScore) {
  const std::string report = "Wakes up three times a night.";
  fixture::script_scores(sg, index, bank, {}, report, {{"sleep", 0.6}});
  EXPECT_DOUBLE_EQ(*score_question(bank.questions[0], report, &index, *sg.gateway), 0.6);
}

TEST_F(ScoringTest, ProseWithoutNumberIsMissing) {
  const std::string report = "Sleeps badly.";
  const auto ctx = question_context(bank.questions[0], report, &index, *sg.gateway, {});
  sg.script->add_prompt(build_score_request(bank.questions[0], report, ctx), "The child seems tired.");
  ScoreLog log;
  EXPECT_FALSE(score_question(bank.questions[0], report, &index, *sg.gateway, {}, &log).has_value());
  EXPECT_EQ(log.missing, 1);
}

TEST_F(ScoringTest, ContextChangesTheAnswer) {
  const std::string report = "Restless at night.";
  const auto& q = bank.questions[0];
  const auto ctx = question_context(q, report, &index, *sg.gateway, {});
  ASSERT_FALSE(ctx.empty());
  sg.script->add_prompt(build_score_request(q, report, ctx), "sleep: 0.9");
  sg.script->add_prompt(build_score_request(q, report, {}), "sleep: 0.2");
  ScoreOptions no_retrieval;
  no_retrieval.k = 0;
  EXPECT_DOUBLE_EQ(*score_question(q, report, &index, *sg.gateway), 0.9);
  EXPECT_DOUBLE_EQ(*score_question(q, report, &index, *sg.gateway, no_retrieval), 0.2);
}

TEST_F(ScoringTest, ScoringRequestsUseZeroTemperature) {
  const auto req = build_score_request(bank.questions[0], "r", {"a", "b"});
  EXPECT_EQ(req.temperature, 0.0);
  EXPECT_EQ(req.context_blocks.size(), 2u);
}

TEST_F(ScoringTest, FeatureVectorIsStableAndAppliesEngineeredFeatures) {
  const std::string report = "Poor sleep, skips breakfast.";
  fixture::script_scores(sg, index, bank, {}, report, {{"sleep", 0.6}, {"diet", 0.2}});
  lab::FeatureSetRevision rev;
  rev.accepted.emplace_back("sleep_diet_min", lab::parse_expr("min(sleep, diet)"));
  const auto a = build_feature_vector("r1", report, bank, &index, *sg.gateway, &rev);
  const auto b = build_feature_vector("r1", report, bank, &index, *sg.gateway, &rev);
  EXPECT_EQ(a, b);
  EXPECT_DOUBLE_EQ(*a.values.at("sleep_diet_min"), 0.2);
  EXPECT_EQ(a.values.size(), 3u);

  ScoreOptions parallel;
  parallel.workers = 2;
  EXPECT_EQ(build_feature_vector("r1", report, bank, &index, *sg.gateway, &rev, parallel), a);
}

TEST(Matrix, JsonlRoundTripKeepsMissing) {
  FeatureVector fv{"r1", {{"a", 0.25}, {"b", std::nullopt}}};
  const auto path = (fs::temp_directory_path() / "medrag_matrix_test.jsonl").string();
  save_matrix_jsonl({fv}, path);
  const auto rows = load_matrix_jsonl(path);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], fv);
  save_matrix_csv({fv}, {"a", "b"}, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header, "report_id,a,b");
  EXPECT_EQ(line.substr(0, 3), "r1,");
  EXPECT_EQ(line.back(), ',');
  fs::remove(path);
}

}  // namespace
