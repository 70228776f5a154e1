#pragma once

// Value types shared by every module: the parameter vector, the common
// observation schedule, and the panel dataset.
//
// Data layout convention (used for count vectors, file rows, and support
// enumeration alike): cells are ordered interval-major, event-minor,
//   (n_{11}, n_{21}, n_{12}, n_{22}, ..., n_{1k}, n_{2k}),
// i.e. cell index c corresponds to interval l = c/2 + 1 and event type
// j = c%2 + 1.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace panelcount {

/// Model parameters theta = (zeta, a1, b1, a2, b2), all strictly positive.
/// zeta is the frailty rate; (a_j, b_j) are the Weibull-type baseline rate
/// coefficients Lambda_j(t) = a_j t^{b_j} for event types j = 1, 2.
struct ModelParams {
  double zeta = 1.0;
  double a1 = 1.0;
  double b1 = 1.0;
  double a2 = 1.0;
  double b2 = 1.0;

  void validate() const {
    if (!(zeta > 0.0) || !(a1 > 0.0) || !(b1 > 0.0) || !(a2 > 0.0) ||
        !(b2 > 0.0) || !std::isfinite(zeta + a1 + b1 + a2 + b2))
      throw std::invalid_argument(
          "ModelParams: all of (zeta, a1, b1, a2, b2) must be positive "
          "finite reals");
  }

  Vec5 as_array() const { return {zeta, a1, b1, a2, b2}; }

  static ModelParams from_array(const Vec5& v) {
    ModelParams p{v[0], v[1], v[2], v[3], v[4]};
    return p;
  }
};

/// Common observation times tau_0 < tau_1 < ... < tau_k (all positive).
/// Counts are recorded per interval (tau_{l-1}, tau_l], l = 1..k.
struct ObservationSchedule {
  std::vector<double> taus;

  int k() const { return static_cast<int>(taus.size()) - 1; }
  int n_cells() const { return 2 * k(); }

  void validate() const {
    if (taus.size() < 2)
      throw std::invalid_argument(
          "ObservationSchedule: need at least two observation times");
    if (!(taus.front() > 0.0))
      throw std::invalid_argument(
          "ObservationSchedule: observation times must be positive");
    for (std::size_t i = 1; i < taus.size(); ++i)
      if (!(taus[i] > taus[i - 1]) || !std::isfinite(taus[i]))
        throw std::invalid_argument(
            "ObservationSchedule: observation times must be strictly "
            "increasing finite reals");
  }
};

/// Interval counts for one subject, layout as documented above (length 2k).
using CountVector = std::vector<int>;

/// A panel of m subjects observed on one shared schedule.
struct PanelDataset {
  ObservationSchedule schedule;
  std::vector<CountVector> rows;

  int m() const { return static_cast<int>(rows.size()); }

  void validate() const {
    schedule.validate();
    if (rows.empty())
      throw std::invalid_argument("PanelDataset: need at least one subject");
    const std::size_t want = static_cast<std::size_t>(schedule.n_cells());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != want)
        throw std::invalid_argument(
            "PanelDataset: row " + std::to_string(i + 1) + " has " +
            std::to_string(rows[i].size()) + " cells, expected " +
            std::to_string(want));
      for (int v : rows[i])
        if (v < 0)
          throw std::invalid_argument("PanelDataset: negative count in row " +
                                      std::to_string(i + 1));
    }
  }
};

}  // namespace panelcount
