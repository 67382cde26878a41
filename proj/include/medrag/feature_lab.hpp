#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/expr.hpp"
#include "medrag/gateway.hpp"
#include "medrag/gbdt.hpp"
#include "medrag/knowledge_index.hpp"
#include "medrag/metrics.hpp"
#include "medrag/scoring.hpp"

namespace medrag::lab {

enum class Decision { Accept, Reject };

struct CandidateFeature {
  std::string name;
  std::string expression;
  std::string rationale;
};

struct LedgerEntry {
  CandidateFeature candidate;
  /// Absent when the candidate was invalid and never evaluated.
  std::optional<double> cv_delta;
  Decision decision = Decision::Reject;
  std::string note;
};

struct MergeRecord {
  std::string merged_name;
  std::vector<std::string> sources;
};

struct FeatureSetRevision {
  std::vector<std::pair<std::string, FeatureExpr>> accepted;
  std::vector<MergeRecord> merged;
  std::vector<std::string> deleted;
  std::vector<LedgerEntry> ledger;
  double initial_cv_macro_f1 = 0.0;
  double final_cv_macro_f1 = 0.0;

  bool empty() const { return accepted.empty() && merged.empty() && deleted.empty(); }

  /// Active columns after the revision, in model order: base columns, then
  /// accepted features; each merge takes its first source's slot and drops
  /// the second; deleted columns are removed.
  std::vector<std::string> columns(const std::vector<std::string>& base) const;

  std::string digest() const;
  nlohmann::json to_json() const;
  static FeatureSetRevision from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static FeatureSetRevision load(const std::string& path);
};

/// Adds accepted and merged features to fv and removes merge sources and
/// deleted features.
void apply_revision(const FeatureSetRevision& revision, scoring::FeatureVector& fv);

/// Tabular view of a scored matrix.
struct Dataset {
  std::vector<std::string> columns;
  gbdt::Matrix x;
  gbdt::LabelMatrix y;
  std::vector<std::string> label_names;

  /// Missing keys become MISSING cells.
  static Dataset from_vectors(const std::vector<scoring::FeatureVector>& rows,
                              const std::vector<std::string>& columns, gbdt::LabelMatrix y,
                              std::vector<std::string> label_names);

  std::size_t column_index(const std::string& name) const;
  bool has_column(const std::string& name) const;
  Dataset with_column(const std::string& name, std::span<const double> values) const;
  Dataset without_columns(const std::vector<std::string>& names) const;
};

std::vector<double> eval_column(const FeatureExpr& expr, const Dataset& data);

struct CvConfig {
  int folds = 5;
  std::uint64_t seed = 0;
  metrics::DecisionMode mode = metrics::DecisionMode::CaseStudyTop1;
  double threshold = 0.5;
};

/// Stratum of a row: its first positive label, or "none".
std::vector<int> stratified_folds(const gbdt::LabelMatrix& y, int folds, std::uint64_t seed);

/// Mean per-fold macro-F1.
double cv_macro_f1(const Dataset& data, const gbdt::TrainConfig& train, const CvConfig& cv,
                   const std::vector<int>& fold_of);
double cv_macro_f1(const Dataset& data, const gbdt::TrainConfig& train, const CvConfig& cv);

/// Same folds and training seed on both arms: with minus without.
double evaluate_candidate(const CandidateFeature& candidate, const Dataset& data,
                          const gbdt::TrainConfig& train, const CvConfig& cv);

/// Pearson correlation over rows where both values are present; absent when
/// fewer than two such rows or either side is constant.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

struct ProposalContext {
  const Dataset& data;
  const std::vector<LedgerEntry>& ledger;
  /// Per-column descriptions (question text or expression), may be empty.
  const std::map<std::string, std::string>& descriptions;
  std::string dataset_description;
};

class CandidateSource {
 public:
  virtual ~CandidateSource() = default;
  /// std::nullopt ends the loop.
  virtual std::optional<CandidateFeature> propose(const ProposalContext& context) = 0;
};

/// Semi-automated mode: a fixed list of proposals, consumed in order.
class ScriptedProposals final : public CandidateSource {
 public:
  explicit ScriptedProposals(std::vector<CandidateFeature> proposals)
      : proposals_(std::move(proposals)) {}
  std::optional<CandidateFeature> propose(const ProposalContext& context) override;

 private:
  std::vector<CandidateFeature> proposals_;
  std::size_t next_ = 0;
};

llm::PromptRequest build_proposal_request(const ProposalContext& context,
                                          const std::vector<std::string>& knowledge);

/// Reads "name:", "expression:" and "rationale:" lines.
std::optional<CandidateFeature> parse_proposal(std::string_view completion);

/// Fully automated mode: asks the provider, optionally with retrieved context.
class ProviderProposals final : public CandidateSource {
 public:
  ProviderProposals(llm::Gateway& gateway, const rag::VectorIndex* index = nullptr,
                    std::size_t k = 3)
      : gateway_(gateway), index_(index), k_(k) {}
  std::optional<CandidateFeature> propose(const ProposalContext& context) override;

 private:
  llm::Gateway& gateway_;
  const rag::VectorIndex* index_;
  std::size_t k_;
};

struct CaafeConfig {
  int max_iters = 10;
  double epsilon_accept = 0.005;
  double corr_merge = 0.95;
  bool merge = true;
  bool prune = true;
  CvConfig cv;
};

FeatureSetRevision caafe_loop(const Dataset& base, CandidateSource& source,
                              const gbdt::TrainConfig& train, const CaafeConfig& config,
                              const std::map<std::string, std::string>& descriptions = {},
                              const std::string& dataset_description = {});

}  // namespace medrag::lab
