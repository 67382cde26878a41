#include "medrag/metrics.hpp"

#include "medrag/error.hpp"

namespace medrag::metrics {

nlohmann::json Metrics::to_json() const {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [label, s] : per_class) {
    classes[label] = {{"precision", s.precision},
                      {"recall", s.recall},
                      {"f1", s.f1},
                      {"support", s.support}};
  }
  return {{"accuracy", accuracy}, {"macro_f1", macro_f1}, {"per_class", std::move(classes)}};
}

std::size_t argmax_label(const std::vector<double>& probs, const std::vector<std::string>& labels) {
  if (probs.empty() || probs.size() != labels.size()) {
    fail(ErrorCode::ShapeMismatch, "argmax over mismatched probabilities");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best] || (probs[i] == probs[best] && labels[i] < labels[best])) best = i;
  }
  return best;
}

std::vector<std::size_t> threshold_labels(const std::vector<double>& probs, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] >= threshold) out.push_back(i);
  }
  return out;
}

ConfusionCounts count_top1(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& predicted,
                           std::size_t n_classes) {
  if (gold.size() != predicted.size()) fail(ErrorCode::ShapeMismatch, "gold/predicted length differ");
  ConfusionCounts c;
  c.tp.assign(n_classes, 0);
  c.fp.assign(n_classes, 0);
  c.fn.assign(n_classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= n_classes || predicted[i] >= n_classes) {
      fail(ErrorCode::ShapeMismatch, "class index out of range");
    }
    if (gold[i] == predicted[i]) {
      ++c.tp[gold[i]];
      ++c.exact;
    } else {
      ++c.fn[gold[i]];
      ++c.fp[predicted[i]];
    }
  }
  c.total = static_cast<int>(gold.size());
  return c;
}

ConfusionCounts count_multilabel(const std::vector<std::vector<int>>& gold,
                                 const std::vector<std::vector<int>>& predicted) {
  if (gold.size() != predicted.size()) fail(ErrorCode::ShapeMismatch, "gold/predicted length differ");
  ConfusionCounts c;
  const std::size_t n_labels = gold.empty() ? 0 : gold[0].size();
  c.tp.assign(n_labels, 0);
  c.fp.assign(n_labels, 0);
  c.fn.assign(n_labels, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != n_labels || predicted[i].size() != n_labels) {
      fail(ErrorCode::ShapeMismatch, "ragged label rows");
    }
    bool same = true;
    for (std::size_t l = 0; l < n_labels; ++l) {
      const bool g = gold[i][l] != 0;
      const bool p = predicted[i][l] != 0;
      if (g && p) ++c.tp[l];
      if (!g && p) ++c.fp[l];
      if (g && !p) ++c.fn[l];
      same = same && g == p;
    }
    c.exact += same ? 1 : 0;
  }
  c.total = static_cast<int>(gold.size());
  return c;
}

Metrics from_counts(const ConfusionCounts& counts, const std::vector<std::string>& labels) {
  if (counts.tp.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "label count differs");
  Metrics m;
  m.accuracy = counts.total == 0 ? 0.0 : static_cast<double>(counts.exact) / counts.total;
  double f1_sum = 0.0;
  int counted = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ClassStats s;
    const int tp = counts.tp[i];
    const int fp = counts.fp[i];
    const int fn = counts.fn[i];
    s.support = tp + fn;
    s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    m.per_class.emplace(labels[i], s);
    if (tp + fp + fn > 0) {
      f1_sum += s.f1;
      ++counted;
    }
  }
  m.macro_f1 = counted == 0 ? 0.0 : f1_sum / counted;
  return m;
}

}  // namespace medrag::metrics
