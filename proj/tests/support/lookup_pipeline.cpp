#include "lookup_pipeline.hpp"

#include <fmt/format.h>

namespace fixture {

using namespace medrag;

LookupPipeline make_lookup_pipeline(ScriptedGateway& sg, const rag::VectorIndex& index, std::size_t n_labels,
                                    metrics::DecisionMode mode) {
  LookupPipeline lp;
  lp.sg = &sg;
  std::vector<scoring::Question> questions;
  for (std::size_t l = 0; l < n_labels; ++l) {
    lp.labels.push_back(fmt::format("c{}", l));
    questions.push_back({fmt::format("q{}", l), fmt::format("f{}", l), fmt::format("Is marker {} present?", l),
                         "general"});
  }
  lp.tp.index = index;
  lp.tp.bank = scoring::make_question_bank(std::move(questions));
  lp.tp.mode = mode;
  lp.tp.threshold = 0.5;

  auto& m = lp.tp.model;
  m.feature_names = lp.tp.bank.feature_names();
  m.label_names = lp.labels;
  m.manifest = {lp.tp.bank.bank_digest, lp.tp.revision.digest(), index.build_digest(), "lookup"};
  for (std::size_t l = 0; l < n_labels; ++l) {
    gbdt::Tree tree;
    gbdt::TreeNode root;
    root.is_leaf = false;
    root.feature = static_cast<int>(l);
    root.threshold = 0.5;
    root.left = 1;
    root.right = 2;
    gbdt::TreeNode low;
    low.weight = -20.0;
    gbdt::TreeNode high;
    high.weight = 20.0;
    tree.nodes = {root, low, high};
    m.ensembles.push_back({lp.labels[l], {tree}});
  }
  lp.tp.check_manifest();
  return lp;
}

pipeline::LabeledExample LookupPipeline::example(const std::string& id, const std::vector<int>& gold,
                                                 const std::vector<int>& high) {
  pipeline::LabeledExample e;
  e.epr = pipeline::ingest_report(id, "Record " + id + ".", labels);
  std::map<std::string, double> answers;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    e.labels[labels[l]] = gold[l];
    answers[fmt::format("f{}", l)] = high[l] ? 0.9 : 0.1;
  }
  script_scores(*sg, tp.index, tp.bank, tp.score, pipeline::report_text(e.epr), answers);
  return e;
}

}  // namespace fixture
