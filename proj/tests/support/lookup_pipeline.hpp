#pragma once

#include <string>
#include <vector>

#include "case_study.hpp"
#include "medrag/metrics.hpp"
#include "medrag/pipeline.hpp"

namespace fixture {

/// Pipeline with labels c0..c{n-1} and one question per label; the model for
/// label l is a single split on feature f{l} at 0.5, so a row's prediction is
/// fixed by which features it is scripted high on.
struct LookupPipeline {
  ScriptedGateway* sg = nullptr;
  medrag::pipeline::TrainedPipeline tp;
  std::vector<std::string> labels;

  /// Scripts the example's answers: 0.9 for labels in high, 0.1 otherwise.
  medrag::pipeline::LabeledExample example(const std::string& id, const std::vector<int>& gold,
                                           const std::vector<int>& high);
};

LookupPipeline make_lookup_pipeline(ScriptedGateway& sg, const medrag::rag::VectorIndex& index,
                                    std::size_t n_labels, medrag::metrics::DecisionMode mode);

}  // namespace fixture
