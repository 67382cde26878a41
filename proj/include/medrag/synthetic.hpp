#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/feature_lab.hpp"
#include "medrag/gateway.hpp"
#include "medrag/knowledge_index.hpp"
#include "medrag/pipeline.hpp"
#include "medrag/scoring.hpp"

namespace medrag::synthetic {

/// The ten pediatric conditions used as default class names.
inline const std::vector<std::string> kPediatricDiseases = {
    "bronchitis", "fever",    "diarrhoea", "upper respiratory infection", "dyspepsia",
    "cold",       "cough",    "jaundice",  "constipation",                "bronchopneumonia"};

struct SyntheticSpec {
  int n_examples = 400;
  int n_classes = 10;
  int bank_size = 40;
  /// Fraction of questions whose answer is scripted only for prompts that
  /// carry retrieved context.
  double retrieval_dependence = 0.5;
  /// Plants a pair of classes separated only by the sign of fa - fb.
  bool interaction = false;
  std::uint64_t seed = 7;

  /// Throws BadSpec.
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticWorld {
  SyntheticSpec spec;
  std::vector<std::string> label_names;
  rag::Corpus corpus;
  scoring::QuestionBank bank;
  std::vector<pipeline::LabeledExample> examples;
  llm::ScriptTable script;
  std::vector<lab::CandidateFeature> proposals;
  /// Paths relative to the output directory.
  pipeline::PipelineConfig config;

  /// corpus.jsonl, bank.json, examples.jsonl, script.json, config.json, spec.json.
  void save(const std::string& dir) const;
};

/// Scripted answers are keyed on the prompts the pipeline will build under
/// base's chunk, embedding and scoring settings.
SyntheticWorld generate_synthetic(const SyntheticSpec& spec,
                                  const pipeline::PipelineConfig& base = {});

/// Gateway that answers from the world's script table.
std::unique_ptr<llm::Gateway> make_world_gateway(const SyntheticWorld& world);

}  // namespace medrag::synthetic
