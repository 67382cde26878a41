#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "medrag/gbdt.hpp"

// Hand-rolled random inputs for the property tests. Uses its own engine so
// the generated cases do not depend on the library's Rng.
namespace gen {

class Source {
 public:
  explicit Source(std::uint64_t seed) : engine_(seed) {}

  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool coin(double p = 0.5) { return unit() < p; }
  double gaussian() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

 private:
  std::mt19937_64 engine_;
};

/// Cells drawn either continuously or from a coarse grid (to force value
/// ties); some cells MISSING.
inline medrag::gbdt::Matrix matrix(Source& s, std::size_t rows, std::size_t cols, double missing_rate,
                                   bool coarse) {
  medrag::gbdt::Matrix x(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (s.coin(missing_rate)) continue;
      x.at(r, c) = coarse ? s.integer(0, 4) * 0.25 : s.unit();
    }
  }
  return x;
}

/// Binary column with at least one of each class (rows >= 2).
inline std::vector<int> binary_labels(Source& s, std::size_t rows) {
  std::vector<int> y(rows);
  for (auto& v : y) v = s.coin() ? 1 : 0;
  y[0] = 1;
  y[1] = 0;
  return y;
}

/// Label correlated with a feature, so trees actually split.
inline std::vector<int> signal_labels(Source& s, const medrag::gbdt::Matrix& x, std::size_t feature) {
  std::vector<int> y(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double v = x.at(r, feature);
    const double p = std::isnan(v) ? 0.5 : (v > 0.5 ? 0.85 : 0.15);
    y[r] = s.coin(p) ? 1 : 0;
  }
  if (x.rows() >= 2) {
    y[0] = 1;
    y[1] = 0;
  }
  return y;
}

inline std::vector<double> unit_vector(Source& s, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = s.gaussian();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

inline std::vector<std::string> names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace gen
