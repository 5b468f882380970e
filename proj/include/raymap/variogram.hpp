#pragma once

#include <vector>

#include "raymap/geo.hpp"

namespace raymap {

// Exponential variogram: gamma(h) = nugget + (sill - nugget) * (1 - exp(-3h/range)),
// with gamma(0) = 0 by definition (the nugget is the h -> 0+ limit).
struct VariogramModel {
  double nugget = 0.0;
  double sill = 1.0;
  double range = 1.0;
  bool degenerate = false;

  double operator()(double h) const;
};

struct EmpiricalVariogram {
  std::vector<double> lag;    // bin centers, empty bins omitted
  std::vector<double> gamma;  // mean of 0.5 * (y_i - y_j)^2 per bin
  std::vector<double> count;  // pair count per bin
  double max_lag = 0.0;
};

EmpiricalVariogram empirical_variogram(const std::vector<Point>& points,
                                       const std::vector<double>& values, int n_bins,
                                       double max_lag);

// Weighted least squares over (nugget, partial sill, range) with pair-count
// weights and non-negativity constraints.  The model is linear in nugget and
// partial sill once range is fixed, so the fit scans a range grid, solves
// the constrained 2x2 problem per candidate, and refines around the winner.
// An all-zero empirical table yields a flagged degenerate model.
VariogramModel fit_variogram(const EmpiricalVariogram& ev);

}  // namespace raymap
