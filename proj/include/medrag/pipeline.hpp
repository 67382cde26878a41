#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/feature_lab.hpp"
#include "medrag/gateway.hpp"
#include "medrag/gbdt.hpp"
#include "medrag/knowledge_index.hpp"
#include "medrag/metrics.hpp"
#include "medrag/scoring.hpp"

namespace medrag::pipeline {

enum class Sex { Female, Male };
enum class EprSource { Dialogue, Report, Session };

struct Demographics {
  std::optional<int> age;
  std::optional<Sex> sex;
  friend bool operator==(const Demographics&, const Demographics&) = default;
};

struct EPR {
  std::string report_id;
  Demographics demographics;
  std::string narrative;
  EprSource source = EprSource::Report;

  friend bool operator==(const EPR&, const EPR&) = default;
};

nlohmann::json to_json(const EPR& epr);
EPR epr_from_json(const nlohmann::json& j);

/// Text handed to the scorer: the narrative plus known demographics.
std::string report_text(const EPR& epr);

struct Utterance {
  /// "patient"/"user" or "doctor"/"assistant".
  std::string speaker;
  std::string text;
};

bool is_patient_speaker(std::string_view speaker);

/// Replaces case-insensitive occurrences of every label with "[REDACTED]".
std::string scrub_labels(std::string_view text, const std::vector<std::string>& label_names);

/// First "(female, 29 years old)"-style parenthetical.
Demographics parse_demographics(std::string_view text);

/// Patient lines become the narrative; doctor questions are kept as
/// "Doctor asked: ..." markers. Throws EmptyDialogue.
EPR ingest_dialog(const std::string& report_id, const std::vector<Utterance>& utterances,
                  const std::vector<std::string>& label_names, EprSource source = EprSource::Dialogue);

/// A submitted free-text report, scrubbed the same way. Throws EmptyText.
EPR ingest_report(const std::string& report_id, const std::string& narrative,
                  const std::vector<std::string>& label_names);

struct LabeledExample {
  EPR epr;
  std::map<std::string, int> labels;
};

/// Sorted union of label keys.
std::vector<std::string> label_set(const std::vector<LabeledExample>& examples);
gbdt::LabelMatrix label_matrix(const std::vector<LabeledExample>& examples,
                               const std::vector<std::string>& label_names);

/// JSONL rows {report_id, utterances:[{speaker,text}] | narrative, labels}.
std::vector<LabeledExample> load_examples_jsonl(const std::string& path,
                                                const std::vector<std::string>& label_names = {});
void save_examples_jsonl(const std::vector<LabeledExample>& examples, const std::string& path);

struct DiagnosisResult {
  std::string report_id;
  std::map<std::string, double> probabilities;
  /// Ordered by probability descending, then label name.
  std::vector<std::string> predicted;
  std::optional<std::string> advice;

  nlohmann::json to_json() const;
  static DiagnosisResult from_json(const nlohmann::json& j);
  friend bool operator==(const DiagnosisResult&, const DiagnosisResult&) = default;
};

struct CaafeSettings {
  bool enabled = true;
  /// "provider" or "scripted".
  std::string source = "provider";
  std::vector<lab::CandidateFeature> proposals;
  std::size_t proposal_k = 3;
  lab::CaafeConfig loop;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string corpus_path;
  std::string bank_path;
  std::string examples_path;
  std::string artifacts_dir = "artifacts";
  llm::ProviderConfig provider;
  rag::ChunkPolicy chunk;
  scoring::ScoreOptions score;
  gbdt::TrainConfig train;
  CaafeSettings caafe;
  metrics::DecisionMode mode = metrics::DecisionMode::CaseStudyTop1;
  double threshold = 0.5;
  double test_fraction = 0.25;
  std::string report_label = "medrag";
  bool advice = true;
  std::size_t advice_k = 3;

  PipelineConfig();

  /// Pushes the top-level seed into every component that draws randomness.
  void apply_seed(std::uint64_t s);

  nlohmann::json to_json() const;
  /// Relative paths are resolved against base_dir.
  static PipelineConfig from_json(const nlohmann::json& j, const std::string& base_dir = {});
  static PipelineConfig load(const std::string& path);
};

/// Applies "a.b.c=value" to a config document; value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

std::string mode_name(metrics::DecisionMode mode);
metrics::DecisionMode parse_mode(const std::string& name);

struct TrainedPipeline {
  rag::VectorIndex index;
  scoring::QuestionBank bank;
  lab::FeatureSetRevision revision;
  gbdt::BoostModel model;
  scoring::ScoreOptions score;
  metrics::DecisionMode mode = metrics::DecisionMode::CaseStudyTop1;
  double threshold = 0.5;

  const std::vector<std::string>& label_names() const { return model.label_names; }

  /// Throws DigestMismatch when bank, revision, index and model disagree.
  void check_manifest() const;

  /// index.json, bank.json, revision.json, model.json, pipeline.json.
  void save(const std::string& dir) const;
  static TrainedPipeline load(const std::string& dir, int expected_dim = 0);
};

struct TrainReport {
  scoring::ScoreLog score_log;
  std::vector<scoring::FeatureVector> base_matrix;
  gbdt::TrainLog train_log;
};

/// Labels become rows of y in label_names order.
std::vector<scoring::FeatureVector> score_examples(const std::vector<LabeledExample>& examples,
                                                   const scoring::QuestionBank& bank,
                                                   const rag::VectorIndex& index, llm::Gateway& gateway,
                                                   const scoring::ScoreOptions& options,
                                                   const lab::FeatureSetRevision* revision = nullptr,
                                                   scoring::ScoreLog* log = nullptr);

TrainedPipeline run_training(const rag::Corpus& corpus, const scoring::QuestionBank& bank,
                             const std::vector<LabeledExample>& examples,
                             const std::vector<std::string>& label_names, llm::Gateway& gateway,
                             const PipelineConfig& config, TrainReport* report = nullptr);

/// Same as run_training, reusing an index that was already built.
TrainedPipeline train_with_index(rag::VectorIndex index, const scoring::QuestionBank& bank,
                                 const std::vector<LabeledExample>& examples,
                                 const std::vector<std::string>& label_names, llm::Gateway& gateway,
                                 const PipelineConfig& config, TrainReport* report = nullptr);

/// Applies the decision rule to per-label probabilities.
std::vector<std::string> decide(const std::map<std::string, double>& probabilities,
                                const std::vector<std::string>& label_names, metrics::DecisionMode mode,
                                double threshold);

DiagnosisResult predict_report(const TrainedPipeline& tp, const EPR& epr, llm::Gateway& gateway);
DiagnosisResult predict_report(const TrainedPipeline& tp, const EPR& epr, llm::Gateway& gateway,
                               metrics::DecisionMode mode, double threshold);

/// One provider call naming the predicted labels with retrieved context.
/// Throws NoPrediction when nothing was predicted.
std::string generate_advice(const DiagnosisResult& result, const EPR& epr, const rag::VectorIndex& index,
                            llm::Gateway& gateway, std::size_t k = 3);

/// generate_advice, degrading to absent advice with a warning on failure.
void attach_advice(DiagnosisResult& result, const EPR& epr, const rag::VectorIndex& index,
                   llm::Gateway& gateway, std::size_t k = 3);

struct Evaluation {
  metrics::Metrics metrics;
  metrics::ConfusionCounts counts;
  std::vector<DiagnosisResult> results;

  nlohmann::json to_json() const;
};

/// Throws EmptyTestset.
Evaluation evaluate(const TrainedPipeline& tp, const std::vector<LabeledExample>& testset,
                    llm::Gateway& gateway);

/// Stratified by first positive label; the test side gets round(n * fraction)
/// rows, at least one when n >= 2.
std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_examples(
    const std::vector<LabeledExample>& examples, double test_fraction, std::uint64_t seed);

struct ExperimentResult {
  TrainedPipeline pipeline;
  Evaluation evaluation;
  TrainReport report;
};

/// Split, train on the train side, evaluate on the test side.
ExperimentResult run_experiment(const rag::Corpus& corpus, const scoring::QuestionBank& bank,
                                const std::vector<LabeledExample>& examples, llm::Gateway& gateway,
                                const PipelineConfig& config);

inline const std::vector<std::string> kAblationVariants = {"full", "no_retrieval", "no_caafe"};

/// Variant configs: no_retrieval sets k = 0, no_caafe disables the feature loop.
PipelineConfig variant_config(const PipelineConfig& base, const std::string& variant);

std::map<std::string, metrics::Metrics> run_ablation(const rag::Corpus& corpus,
                                                     const scoring::QuestionBank& bank,
                                                     const std::vector<LabeledExample>& examples,
                                                     llm::Gateway& gateway, const PipelineConfig& config);

/// "<label>  <acc>  <f1>" with three decimals.
std::string render_row(const std::string& label, const metrics::Metrics& m);
std::string render_metrics_table(const std::string& label, const metrics::Metrics& m);
std::string render_ablation_table(const std::string& label,
                                  const std::map<std::string, metrics::Metrics>& variants);

}  // namespace medrag::pipeline
