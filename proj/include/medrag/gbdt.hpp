#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/scoring.hpp"

namespace medrag::gbdt {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// Splits must clear this gain; keeps rounding noise from splitting
/// homogeneous nodes when gamma is 0.
inline constexpr double kMinSplitGain = 1e-12;

/// Two gains closer than this (relative) are a tie, resolved by scan order.
inline bool gain_beats(double candidate, double incumbent) {
  return candidate > incumbent + 1e-12 * std::max(1.0, std::fabs(incumbent));
}

struct TrainConfig {
  int n_rounds = 100;
  double learning_rate = 0.3;
  double lambda_l2 = 1.0;
  double gamma_min_gain = 0.0;
  int max_depth = 4;
  double min_child_weight = 1.0;
  double base_margin = 0.0;
  std::uint64_t seed = 0;
  // Reserved; only the defaults are accepted.
  double subsample = 1.0;
  double colsample = 1.0;
  int early_stopping_rounds = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Row-major dense matrix; NaN marks MISSING.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, kMissing) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  /// Drops or reorders columns.
  Matrix select_columns(const std::vector<std::size_t>& columns) const;
  Matrix select_rows(const std::vector<std::size_t>& rows) const;
  /// Appends one column.
  Matrix with_column(std::span<const double> values) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// rows x labels, entries 0/1.
using LabelMatrix = std::vector<std::vector<int>>;

double sigmoid(double margin);
double log_loss(double margin, int y);

struct GradHess {
  double g = 0.0;
  double h = 0.0;
};

GradHess grad_hess_logistic(double margin, int y);

struct SplitDecision {
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  double gain = 0.0;
};

/// Midpoint of two distinct consecutive values a < b, nudged so a < t <= b.
double split_threshold(double a, double b);

/// Exact greedy search over every feature, threshold midpoint and default
/// direction. Ties keep the first candidate in (feature, threshold,
/// default_left=true) order.
std::optional<SplitDecision> best_split(const Matrix& x, std::span<const std::size_t> rows,
                                        std::span<const double> g, std::span<const double> h,
                                        const TrainConfig& config);

struct TreeNode {
  bool is_leaf = true;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  double gain = 0.0;
  double cover = 0.0;
  double weight = 0.0;
  int left = -1;
  int right = -1;
};

struct Tree {
  /// Preorder; nodes[0] is the root.
  std::vector<TreeNode> nodes;

  /// value < threshold goes left, >= goes right, MISSING follows default_left.
  int leaf_index(std::span<const double> row) const;
  double leaf_value(std::span<const double> row) const { return nodes[leaf_index(row)].weight; }
};

struct Manifest {
  std::string bank_digest;
  std::string revision_digest;
  std::string index_digest;
  std::string build;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct Ensemble {
  std::string label;
  std::vector<Tree> trees;
};

class BoostModel {
 public:
  static constexpr int kSchemaVersion = 1;

  TrainConfig config;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
  std::vector<Ensemble> ensembles;
  Manifest manifest;

  double margin(std::size_t label, std::span<const double> row) const;
  /// One probability per label, in label_names order; each in (0, 1).
  std::vector<double> predict_proba(std::span<const double> row) const;
  /// Throws UnknownFeatureSpace when fv lacks a model feature.
  std::map<std::string, double> predict_proba(const scoring::FeatureVector& fv) const;
  /// Dense row in feature_names order from a feature vector.
  std::vector<double> to_row(const scoring::FeatureVector& fv) const;

  nlohmann::json to_json() const;
  /// Exact bytes written by save().
  std::string serialize() const;
  static BoostModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  /// Throws Io, Parse, VersionMismatch or DigestMismatch.
  static BoostModel load(const std::string& path);
  std::string digest() const;
};

struct TrainLog {
  /// loss[label][round]: mean training log loss after each round.
  std::vector<std::vector<double>> loss;
  std::vector<std::string> degenerate_labels;
};

/// One-vs-rest: an independent binary logistic ensemble per label column.
BoostModel train(const Matrix& x, const LabelMatrix& labels,
                 const std::vector<std::string>& feature_names,
                 const std::vector<std::string>& label_names, const TrainConfig& config,
                 TrainLog* log = nullptr);

/// Grows one tree against (g, h) over all rows of x.
Tree grow_tree(const Matrix& x, std::span<const double> g, std::span<const double> h,
               const TrainConfig& config);

/// Total realized split gain per feature across all labels; unused -> 0.
std::map<std::string, double> feature_importance(const BoostModel& model);

}  // namespace medrag::gbdt
