#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "medrag/error.hpp"
#include "medrag/synthetic.hpp"

namespace {

using namespace medrag;
using namespace medrag::synthetic;
namespace fs = std::filesystem;

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_examples = 120;
  s.n_classes = 4;
  s.bank_size = 12;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Synthetic, BadSpecs) {
  auto s = small_spec();
  s.n_classes = 1;
  EXPECT_THROW(s.validate(), Error);
  s = small_spec();
  s.n_examples = 7;
  EXPECT_THROW(s.validate(), Error);
  s = small_spec();
  s.retrieval_dependence = 1.5;
  try {
    generate_synthetic(s);
    ADD_FAILURE() << "accepted retrieval_dependence 1.5";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadSpec);
  }
  s = small_spec();
  s.interaction = true;
  s.bank_size = 6;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_EQ(SyntheticSpec::from_json(small_spec().to_json()).to_json(), small_spec().to_json());
}

TEST(Synthetic, WorldShape) {
  const auto w = generate_synthetic(small_spec());
  EXPECT_EQ(w.examples.size(), 120u);
  EXPECT_EQ(w.label_names.size(), 4u);
  EXPECT_TRUE(std::is_sorted(w.label_names.begin(), w.label_names.end()));
  EXPECT_EQ(w.bank.questions.size(), 12u);
  EXPECT_FALSE(w.corpus.empty());
  EXPECT_GT(w.script.size(), 0u);
  for (const auto& e : w.examples) {
    int positives = 0;
    for (const auto& [l, v] : e.labels) positives += v;
    EXPECT_GE(positives, 1) << e.epr.report_id;
  }
}

TEST(Synthetic, SameSeedSameBytes) {
  const auto base = fs::temp_directory_path() / "medrag_synth_test";
  fs::remove_all(base);
  generate_synthetic(small_spec()).save((base / "a").string());
  generate_synthetic(small_spec()).save((base / "b").string());
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(base / "a")) {
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(base / "b" / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(files, 6u);
  auto other = small_spec();
  other.seed = 8;
  generate_synthetic(other).save((base / "c").string());
  EXPECT_NE(slurp(base / "a" / "examples.jsonl"), slurp(base / "c" / "examples.jsonl"));
  fs::remove_all(base);
}

TEST(Synthetic, WithoutRetrievalDependenceAblationBarelyMoves) {
  auto spec = small_spec();
  spec.retrieval_dependence = 0.0;
  const auto w = generate_synthetic(spec);
  auto gw = make_world_gateway(w);
  const auto variants = pipeline::run_ablation(w.corpus, w.bank, w.examples, *gw, w.config);
  EXPECT_NEAR(variants.at("no_retrieval").accuracy, variants.at("full").accuracy, 0.05);
}

}  // namespace
