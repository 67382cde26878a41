#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace medrag::metrics {

enum class DecisionMode { CaseStudyTop1, MultiLabel };

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::map<std::string, ClassStats> per_class;

  nlohmann::json to_json() const;
};

/// tp/fp/fn per class.
struct ConfusionCounts {
  std::vector<int> tp;
  std::vector<int> fp;
  std::vector<int> fn;
  int exact = 0;
  int total = 0;
};

/// Index of the largest probability; ties go to the lexicographically
/// smallest label name.
std::size_t argmax_label(const std::vector<double>& probs, const std::vector<std::string>& labels);

/// Labels with p >= threshold, in label order.
std::vector<std::size_t> threshold_labels(const std::vector<double>& probs, double threshold);

/// Single-label: gold and predicted class indices.
ConfusionCounts count_top1(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& predicted,
                           std::size_t n_classes);

/// Multi-label: 0/1 rows. exact counts subset-accuracy hits.
ConfusionCounts count_multilabel(const std::vector<std::vector<int>>& gold,
                                 const std::vector<std::vector<int>>& predicted);

/// Macro-F1 averages classes with any gold or predicted support.
Metrics from_counts(const ConfusionCounts& counts, const std::vector<std::string>& labels);

}  // namespace medrag::metrics
