#pragma once

#include <string>
#include <vector>

#include "raymap/dataset.hpp"
#include "raymap/geo.hpp"
#include "raymap/spatial_index.hpp"
#include "raymap/variogram.hpp"

namespace raymap {

enum class DriftMode { None, Linear };  // ordinary vs universal (1, x, y drift)

struct KrigingResult {
  double value = 0.0;
  double variance = 0.0;
  bool idw_fallback = false;
};

// Local neighborhood kriging interpolator over a fixed observation set.
// Neighborhoods are the k nearest observations, assembled in a canonical
// (distance, x, y) order so predictions do not depend on input ordering.
class PriorEstimator {
 public:
  PriorEstimator(std::vector<Point> positions, std::vector<double> values,
                 VariogramModel model, DriftMode drift = DriftMode::None, int k = 32);

  KrigingResult predict(const Point& q) const;
  double idw(const Point& q, double power = 2.0) const;

  // Last-resort weights diagnostic: kriging weights for q in the canonical
  // neighbor order, empty when the solve fell back to inverse distance.
  std::vector<double> weights(const Point& q) const;

  const VariogramModel& model() const { return model_; }
  DriftMode drift() const { return drift_; }
  int k() const { return k_; }

 private:
  struct Neighborhood {
    std::vector<Point> pos;
    std::vector<double> val;
    bool exact_hit = false;
    double exact_value = 0.0;
  };
  Neighborhood gather(const Point& q) const;
  bool solve(const Neighborhood& nb, const Point& q, std::vector<double>& w,
             double& lagrange_term) const;

  std::vector<Point> positions_;
  std::vector<double> values_;
  VariogramModel model_;
  DriftMode drift_;
  int k_;
  SpatialIndex index_;
};

// Smoothness descriptors of a prior surface around q: central-difference
// gradient magnitude with step h and the population standard deviation of
// the 3x3 stencil {q + (i*h, j*h)}.
struct PriorVariation {
  double grad_mag = 0.0;
  double local_std = 0.0;
};
PriorVariation prior_variation(const PriorEstimator& est, const Point& q, double h = 2.0);

struct PriorRow {
  int site = 0;
  long target_id = 0;
  double x = 0.0;
  double y = 0.0;
  double prior_dbm = 0.0;
  double krig_var = 0.0;
  double grad_mag = 0.0;
  double local_std = 0.0;
};

struct PriorTable {
  std::vector<PriorRow> rows;

  const PriorRow* find(int site, long target_id) const;
  void save(const std::string& path) const;
  static PriorTable load(const std::string& path);
};

// Fit a per-site variogram on that site's observations and run kriging with
// variation descriptors over every train and eval row of the dataset.
// target_id is the row-major bin id within the scenario grid.
PriorTable build_prior_table(const Scenario& sc, const Dataset& ds,
                             DriftMode drift = DriftMode::None, int k = 32);

// Builds an estimator for one site from the dataset's observation rows.
PriorEstimator make_site_estimator(const Scenario& sc, const Dataset& ds, int site,
                                   DriftMode drift = DriftMode::None, int k = 32);

}  // namespace raymap
