#include "raymap/geo.hpp"

#include <cmath>

#include "raymap/errors.hpp"

namespace raymap {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
}

double wrap_bearing(double angle) {
  if (!std::isfinite(angle)) throw ValidationError("wrap_bearing: non-finite angle");
  // remainder() returns a value in [-pi, pi]; fold the closed upper end
  // onto -pi so the interval is half-open.
  double w = std::remainder(angle, 2.0 * kPi);
  if (w >= kPi) w = -kPi;
  if (w == 0.0) w = 0.0;  // normalize -0.0
  return w;
}

PairGeometry pair_geometry(const Point& u, const Point& v) {
  if (!std::isfinite(u.x) || !std::isfinite(u.y) || !std::isfinite(v.x) ||
      !std::isfinite(v.y))
    throw ValidationError("pair_geometry: non-finite point");
  const double dx = u.x - v.x;
  const double dy = u.y - v.y;
  PairGeometry g;
  g.distance = std::sqrt(dx * dx + dy * dy);
  if (dx == 0.0 && dy == 0.0) {
    g.bearing = 0.0;
    return g;
  }
  g.bearing = wrap_bearing(std::atan2(dy, dx));
  return g;
}

}  // namespace raymap
