#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "medrag/gbdt.hpp"
#include "medrag/knowledge_index.hpp"

// Slow, direct reimplementations used to cross-check the library.
namespace oracle {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  double gain = 0.0;
};

struct Node {
  bool leaf = true;
  Split split;
  double weight = 0.0;
  int left = -1;
  int right = -1;
};

using Tree = std::vector<Node>;

struct Params {
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
  int max_depth = 2;
  int rounds = 1;
  double eta = 0.3;
  double base_margin = 0.0;
};

/// Enumerates every (feature, threshold, default) triple and sums each
/// partition from scratch.
std::optional<Split> brute_split(const medrag::gbdt::Matrix& x, const std::vector<std::size_t>& rows,
                                 const std::vector<double>& g, const std::vector<double>& h,
                                 const Params& p);

/// Preorder tree built by recursive partitioning with brute_split.
Tree brute_tree(const medrag::gbdt::Matrix& x, const std::vector<double>& g,
                const std::vector<double>& h, const Params& p);

/// Boosting replay for one binary label; one tree per round.
std::vector<Tree> brute_boost(const medrag::gbdt::Matrix& x, const std::vector<int>& y,
                              const Params& p);

/// Plain p - y and p(1 - p).
std::pair<double, double> logistic_grad_hess(double margin, int y);

/// Central differences of the log loss: first and second derivative.
std::pair<double, double> finite_diff_grad_hess(double margin, int y, double step);

/// (chunk_id, score) top-k by full sort of every cosine.
std::vector<std::pair<std::uint64_t, double>> exhaustive_topk(
    const std::vector<medrag::rag::KnowledgeChunk>& chunks, const std::vector<double>& query,
    std::size_t k);

struct NaiveMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> f1;
};

/// Confusion counts by explicit loops over class labels.
NaiveMetrics naive_top1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                        const std::vector<std::string>& classes);

NaiveMetrics naive_multilabel(const std::vector<std::vector<int>>& gold,
                              const std::vector<std::vector<int>>& predicted);

}  // namespace oracle
