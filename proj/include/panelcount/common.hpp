#pragma once

// Shared error taxonomy and small numeric utilities: compensated (Kahan)
// accumulation and fixed-shape pairwise reduction. Both exist so that every
// large sum in the library is (a) accurate to a few ulps independent of the
// number of terms and (b) bit-reproducible across runs and thread counts.

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace panelcount {

// Parameter vectors are always ordered (zeta, a1, b1, a2, b2).
inline constexpr int n_params = 5;
using Vec5 = std::array<double, n_params>;

/// Malformed input files (bad header, short row, non-numeric field).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid CLI/config combinations and out-of-domain option values.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truncated support would exceed the enumeration budget.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point violates the linear constraints, or a subproblem has no
/// feasible point.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ill-conditioned or rank-deficient matrix where an inverse is required.
class SingularError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-convergent or numerically invalid iteration (unbounded subproblem,
/// simplex stall, NaN objective).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Kahan compensated accumulator. Error stays O(eps) regardless of the
/// number of addends, which keeps forward/reverse enumeration of the
/// support in agreement to ~1e-15 relative.
class KahanSum {
 public:
  void add(double x) {
    const double y = x - comp_;
    const double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Compensated accumulator for a fixed-length vector of sums.
template <std::size_t N>
class KahanSumArray {
 public:
  void add(const std::array<double, N>& x) {
    for (std::size_t i = 0; i < N; ++i) {
      const double y = x[i] - comp_[i];
      const double t = sum_[i] + y;
      comp_[i] = (t - sum_[i]) - y;
      sum_[i] = t;
    }
  }
  void add_scaled(const std::array<double, N>& x, double w) {
    for (std::size_t i = 0; i < N; ++i) {
      const double y = x[i] * w - comp_[i];
      const double t = sum_[i] + y;
      comp_[i] = (t - sum_[i]) - y;
      sum_[i] = t;
    }
  }
  void add_at(std::size_t i, double x) {
    const double y = x - comp_[i];
    const double t = sum_[i] + y;
    comp_[i] = (t - sum_[i]) - y;
    sum_[i] = t;
  }
  const std::array<double, N>& value() const { return sum_; }

 private:
  std::array<double, N> sum_{};
  std::array<double, N> comp_{};
};

/// Pairwise (binary-tree) reduction of a precomputed term vector. The
/// reduction shape depends only on the length, never on thread count, so
/// results are bit-identical however the terms were produced.
inline double pairwise_sum(const std::vector<double>& terms) {
  // Bottom-up halving; iterative to avoid recursion overhead.
  if (terms.empty()) return 0.0;
  std::vector<double> level = terms;
  while (level.size() > 1) {
    std::size_t half = level.size() / 2;
    for (std::size_t i = 0; i < half; ++i)
      level[i] = level[2 * i] + level[2 * i + 1];
    if (level.size() % 2 == 1) level[half] = level.back(), ++half;
    level.resize(half);
  }
  return level[0];
}

/// Pairwise reduction of 5-vectors (same tree shape as pairwise_sum).
inline Vec5 pairwise_sum(const std::vector<Vec5>& terms) {
  if (terms.empty()) return Vec5{};
  std::vector<Vec5> level = terms;
  while (level.size() > 1) {
    std::size_t half = level.size() / 2;
    for (std::size_t i = 0; i < half; ++i)
      for (int c = 0; c < n_params; ++c)
        level[i][c] = level[2 * i][c] + level[2 * i + 1][c];
    if (level.size() % 2 == 1) level[half] = level.back(), ++half;
    level.resize(half);
  }
  return level[0];
}

/// Pairwise reduction after sorting the terms ascending. The canonical
/// order makes the result bit-identical under any permutation of the
/// inputs (e.g. dataset row order) as well as across thread counts.
inline double sorted_pairwise_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  return pairwise_sum(terms);
}

/// Componentwise sorted pairwise reduction of 5-vectors: each component
/// is reduced as its own canonical-order scalar sum.
inline Vec5 sorted_pairwise_sum(const std::vector<Vec5>& terms) {
  Vec5 out{};
  std::vector<double> comp(terms.size());
  for (int c = 0; c < n_params; ++c) {
    for (std::size_t i = 0; i < terms.size(); ++i) comp[i] = terms[i][c];
    std::sort(comp.begin(), comp.end());
    out[c] = pairwise_sum(comp);
  }
  return out;
}

inline double linf_norm(const Vec5& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x < 0 ? -x : x);
  return m;
}

}  // namespace panelcount
