#pragma once

namespace raymap {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct PairGeometry {
  double distance = 0.0;
  double bearing = 0.0;  // radians in [-pi, pi)
};

// Normalize an angle to the half-open interval [-pi, pi).
double wrap_bearing(double angle);

// Geometry of the displacement u - v: Euclidean distance and the bearing
// atan2(uy - vy, ux - vx) wrapped to [-pi, pi).  Coincident points map to
// distance 0 with bearing 0 by convention.
PairGeometry pair_geometry(const Point& u, const Point& v);

}  // namespace raymap
