#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raymap/geo.hpp"
#include "raymap/rng.hpp"
#include "raymap/scenario.hpp"

namespace raymap {

enum class Role { Obs, Train, Eval, Grid };

const char* role_name(Role r);
Role role_from_name(const std::string& s, const std::string& file, int line_no);

struct Sample {
  int site = 0;
  Role role = Role::Grid;
  double x = 0.0;
  double y = 0.0;
  double rss_dbm = 0.0;
  char los = 'N';
  int bin_row = 0;
  int bin_col = 0;
};

struct Dataset {
  std::vector<Sample> samples;

  std::vector<const Sample*> select(int site, Role role) const;
  std::vector<int> sites() const;  // ascending, unique

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

// floor(x + 0.5): budgets round half up.
int round_half_up(double x);

// Spatially stratified draw of m distinct indices from `points`: a
// ceil(sqrt(m))^2 grid of strata over the points' bounding box, one uniform
// pick per non-empty stratum, then random top-up or trim to exactly m.
// Returned indices are sorted ascending.
std::vector<int> stratified_sample_indices(const std::vector<Point>& points, int m,
                                           Rng& rng);

// Odd site ids are seen during training, even ids are held out.
void split_sites(const std::vector<int>& sites, std::vector<int>& seen,
                 std::vector<int>& held_out);

// Shuffle `ids` and mark the first round_half_up(train_fraction * size) as
// train queries, the remainder as eval.  Both outputs sorted ascending.
void allocate_queries(const std::vector<int>& ids, double train_fraction, Rng& rng,
                      std::vector<int>& train, std::vector<int>& eval);

// Full synthetic pipeline: per site a truth grid row for every bin, a
// stratified observation subset, and a train/eval split of the remaining
// bins (held-out sites get eval only).
Dataset generate_dataset(const Scenario& sc);

}  // namespace raymap
