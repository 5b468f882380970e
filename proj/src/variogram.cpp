#include "raymap/variogram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "raymap/errors.hpp"

namespace raymap {

double VariogramModel::operator()(double h) const {
  if (h <= 0.0) return 0.0;
  return nugget + (sill - nugget) * (1.0 - std::exp(-3.0 * h / range));
}

EmpiricalVariogram empirical_variogram(const std::vector<Point>& points,
                                       const std::vector<double>& values, int n_bins,
                                       double max_lag) {
  if (points.size() != values.size())
    throw ValidationError("empirical_variogram: points/values size mismatch");
  if (points.size() < 2)
    throw ValidationError("empirical_variogram: need at least 2 observations");
  if (n_bins <= 0 || !(max_lag > 0.0))
    throw ValidationError("empirical_variogram: need n_bins > 0 and max_lag > 0");

  std::vector<double> sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> cnt(static_cast<std::size_t>(n_bins), 0.0);
  const double width = max_lag / static_cast<double>(n_bins);
  const std::size_t n = points.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = points[i].x - points[j].x;
      const double dy = points[i].y - points[j].y;
      const double h = std::sqrt(dx * dx + dy * dy);
      if (h >= max_lag) continue;
      const int b = std::min(n_bins - 1, static_cast<int>(h / width));
      const double d = values[i] - values[j];
      sum[static_cast<std::size_t>(b)] += 0.5 * d * d;
      cnt[static_cast<std::size_t>(b)] += 1.0;
    }
  }

  EmpiricalVariogram ev;
  ev.max_lag = max_lag;
  for (int b = 0; b < n_bins; ++b) {
    if (cnt[static_cast<std::size_t>(b)] == 0.0) continue;
    ev.lag.push_back((static_cast<double>(b) + 0.5) * width);
    ev.gamma.push_back(sum[static_cast<std::size_t>(b)] / cnt[static_cast<std::size_t>(b)]);
    ev.count.push_back(cnt[static_cast<std::size_t>(b)]);
  }
  return ev;
}

namespace {

struct LinFit {
  double nugget = 0.0;
  double psill = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

// Weighted LSQ for gamma ~ nugget + psill * b(h) at fixed range, where
// b(h) = 1 - exp(-3h/range).  Clamped to the non-negative quadrant by
// comparing the feasible candidates.
LinFit solve_at_range(const EmpiricalVariogram& ev, double range) {
  double sw = 0.0, swb = 0.0, swbb = 0.0, swg = 0.0, swbg = 0.0, swgg = 0.0;
  for (std::size_t i = 0; i < ev.lag.size(); ++i) {
    const double w = ev.count[i];
    const double b = 1.0 - std::exp(-3.0 * ev.lag[i] / range);
    const double g = ev.gamma[i];
    sw += w;
    swb += w * b;
    swbb += w * b * b;
    swg += w * g;
    swbg += w * b * g;
    swgg += w * g * g;
  }
  auto sse_of = [&](double n0, double ps) {
    return swgg - 2.0 * (n0 * swg + ps * swbg) + n0 * n0 * sw + 2.0 * n0 * ps * swb +
           ps * ps * swbb;
  };

  std::vector<LinFit> cands;
  const double det = sw * swbb - swb * swb;
  if (std::abs(det) > 1e-12 * std::max(1.0, sw * swbb)) {
    LinFit f;
    f.nugget = (swg * swbb - swbg * swb) / det;
    f.psill = (sw * swbg - swb * swg) / det;
    if (f.nugget >= 0.0 && f.psill >= 0.0) {
      f.sse = sse_of(f.nugget, f.psill);
      cands.push_back(f);
    }
  }
  if (swbb > 0.0) {
    LinFit f;
    f.psill = std::max(0.0, swbg / swbb);
    f.sse = sse_of(0.0, f.psill);
    cands.push_back(f);
  }
  if (sw > 0.0) {
    LinFit f;
    f.nugget = std::max(0.0, swg / sw);
    f.sse = sse_of(f.nugget, 0.0);
    cands.push_back(f);
  }
  LinFit best;
  for (const auto& c : cands)
    if (c.sse < best.sse) best = c;
  return best;
}

}  // namespace

VariogramModel fit_variogram(const EmpiricalVariogram& ev) {
  VariogramModel m;
  bool all_zero = true;
  for (double g : ev.gamma)
    if (g != 0.0) all_zero = false;
  if (ev.lag.empty() || all_zero) {
    m.nugget = 0.0;
    m.sill = 1e-6;
    m.range = ev.max_lag > 0.0 ? ev.max_lag : 1.0;
    m.degenerate = true;
    return m;
  }
  if (ev.lag.size() < 3)
    throw ValidationError("fit_variogram: need at least 3 nonempty lag bins");

  const double lo = std::max(1e-6, ev.max_lag / 50.0);
  const double hi = 2.0 * ev.max_lag;
  double best_sse = std::numeric_limits<double>::infinity();
  double best_range = hi;
  LinFit best_fit;
  const int steps = 80;
  for (int pass = 0; pass < 3; ++pass) {
    const double widen = pass == 1 ? 1.6 : 1.05;
    const double a = pass == 0 ? lo : std::max(lo, best_range / widen);
    const double b = pass == 0 ? hi : std::min(hi, best_range * widen);
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(steps);
      const double r = a * std::pow(b / a, t);
      const LinFit f = solve_at_range(ev, r);
      if (f.sse < best_sse) {
        best_sse = f.sse;
        best_range = r;
        best_fit = f;
      }
    }
  }

  m.nugget = best_fit.nugget;
  m.sill = best_fit.nugget + std::max(best_fit.psill, 1e-6);
  m.range = best_range;
  m.degenerate = false;
  return m;
}

}  // namespace raymap
