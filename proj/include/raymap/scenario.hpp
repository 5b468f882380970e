#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raymap/geo.hpp"

namespace raymap {

struct Transmitter {
  int site = 0;
  double x = 0.0;
  double y = 0.0;
  double power_dbm = 0.0;
};

// Axis-aligned rectangular obstruction.
struct Blocker {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;
};

struct FieldSample {
  double rss_dbm = 0.0;
  char los = 'N';  // 'L' when the transmitter-receiver segment is clear
};

// True iff the closed segment a-b touches the rectangle (Liang-Barsky clip).
bool segment_intersects_rect(const Point& a, const Point& b, const Blocker& r);

// Synthetic propagation world: log-distance path loss, per-wall penetration
// loss, and spatially correlated log-normal shadowing on a per-site lattice.
// Everything derived from it is a pure function of (scenario, seed), so two
// runs produce identical bytes.
struct Scenario {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;
  double bin_size_m = 2.0;
  std::vector<Transmitter> transmitters;
  std::vector<Blocker> blockers;
  double shadow_std_db = 6.0;
  double shadow_corr_m = 20.0;
  double pathloss_exp = 3.0;
  double wall_loss_db = 20.0;
  std::uint64_t seed = 0;
  double obs_fraction = 0.05;
  double train_fraction = 0.15;

  static Scenario from_json_text(const std::string& text, const std::string& origin);
  static Scenario from_json_file(const std::string& path);

  int rows() const;
  int cols() const;
  Point bin_center(int row, int col) const;
  void bin_of(double x, double y, int& row, int& col) const;

  const Transmitter& transmitter(int site) const;

  int wall_crossings(const Point& a, const Point& b) const;
  double shadow_at(int site, double x, double y) const;
  FieldSample sample_field(int site, const Point& p) const;

  void validate() const;
};

// Combine co-channel fields: power sum in linear units, back to dBm.
double aggregate_fields(const std::vector<double>& rss_dbm);

// Collapse UE measurements falling in one bin: linear-power mean for RSS,
// majority vote for the LoS flag with ties resolved to 'N'.
FieldSample bin_measurements(const std::vector<double>& rss_dbm,
                             const std::vector<char>& los);

}  // namespace raymap
