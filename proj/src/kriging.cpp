#include "raymap/kriging.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "raymap/csv.hpp"
#include "raymap/errors.hpp"

namespace raymap {

namespace {
constexpr double kJitter = 1e-8;
}

PriorEstimator::PriorEstimator(std::vector<Point> positions, std::vector<double> values,
                               VariogramModel model, DriftMode drift, int k)
    : positions_(std::move(positions)),
      values_(std::move(values)),
      model_(model),
      drift_(drift),
      k_(k),
      index_(positions_) {
  if (positions_.empty()) throw ValidationError("PriorEstimator: no observations");
  if (positions_.size() != values_.size())
    throw ValidationError("PriorEstimator: positions/values size mismatch");
  if (k_ <= 0) throw ValidationError("PriorEstimator: k must be positive");
}

PriorEstimator::Neighborhood PriorEstimator::gather(const Point& q) const {
  const auto nn = index_.knn(q, k_);
  struct Row {
    double dist2;
    Point p;
    double v;
  };
  std::vector<Row> rows;
  rows.reserve(nn.size());
  for (const auto& nb : nn)
    rows.push_back({nb.dist2, index_.point(nb.id), values_[static_cast<std::size_t>(nb.id)]});
  // Canonical order: ties on distance resolved by coordinates, then value,
  // so permuting the observation input leaves the assembled system intact.
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
    if (a.p.x != b.p.x) return a.p.x < b.p.x;
    if (a.p.y != b.p.y) return a.p.y < b.p.y;
    return a.v < b.v;
  });

  Neighborhood out;
  for (const auto& r : rows) {
    if (r.dist2 <= 0.0 && !out.exact_hit) {
      out.exact_hit = true;
      out.exact_value = r.v;
    }
    out.pos.push_back(r.p);
    out.val.push_back(r.v);
  }
  return out;
}

bool PriorEstimator::solve(const Neighborhood& nb, const Point& q, std::vector<double>& w,
                           double& lagrange_term) const {
  const int n = static_cast<int>(nb.pos.size());
  const int n_drift = drift_ == DriftMode::Linear ? 3 : 1;
  if (n < n_drift) return false;
  const int m = n + n_drift;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double g = model_(pair_geometry(nb.pos[static_cast<std::size_t>(i)],
                                            nb.pos[static_cast<std::size_t>(j)])
                                  .distance);
      A(i, j) = g;
      A(j, i) = g;
    }
    A(i, i) = kJitter;
    b(i) = model_(pair_geometry(nb.pos[static_cast<std::size_t>(i)], q).distance);
  }
  // Drift basis centered at the query: rhs reduces to (1, 0, 0).
  for (int i = 0; i < n; ++i) {
    A(i, n) = 1.0;
    A(n, i) = 1.0;
    if (n_drift == 3) {
      A(i, n + 1) = nb.pos[static_cast<std::size_t>(i)].x - q.x;
      A(n + 1, i) = A(i, n + 1);
      A(i, n + 2) = nb.pos[static_cast<std::size_t>(i)].y - q.y;
      A(n + 2, i) = A(i, n + 2);
    }
  }
  b(n) = 1.0;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) return false;
  const Eigen::VectorXd x = lu.solve(b);
  if (!x.allFinite()) return false;

  w.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = x(i);
  lagrange_term = x(n);  // remaining drift multipliers hit zero components of f0
  return true;
}

KrigingResult PriorEstimator::predict(const Point& q) const {
  const Neighborhood nb = gather(q);
  KrigingResult out;
  // Exact interpolation holds only without a nugget; with one, the solve
  // itself produces the (intentionally) smoothed value.
  if (nb.exact_hit && model_.nugget == 0.0) {
    out.value = nb.exact_value;
    out.variance = 0.0;
    return out;
  }
  std::vector<double> w;
  double lagrange = 0.0;
  if (!solve(nb, q, w, lagrange)) {
    out.value = idw(q);
    out.variance = model_.sill;
    out.idw_fallback = true;
    return out;
  }
  double value = 0.0;
  double variance = lagrange;
  for (std::size_t i = 0; i < w.size(); ++i) {
    value += w[i] * nb.val[i];
    variance += w[i] * model_(pair_geometry(nb.pos[i], q).distance);
  }
  out.value = value;
  out.variance = variance;
  return out;
}

double PriorEstimator::idw(const Point& q, double power) const {
  const auto nb = gather(q);
  if (nb.exact_hit) return nb.exact_value;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < nb.pos.size(); ++i) {
    const double d = pair_geometry(nb.pos[i], q).distance;
    const double w = 1.0 / std::pow(d, power);
    num += w * nb.val[i];
    den += w;
  }
  return num / den;
}

std::vector<double> PriorEstimator::weights(const Point& q) const {
  const Neighborhood nb = gather(q);
  std::vector<double> w;
  double lagrange = 0.0;
  if (nb.exact_hit || !solve(nb, q, w, lagrange)) w.clear();
  return w;
}

PriorVariation prior_variation(const PriorEstimator& est, const Point& q, double h) {
  double stencil[3][3];
  for (int j = -1; j <= 1; ++j)
    for (int i = -1; i <= 1; ++i)
      stencil[j + 1][i + 1] =
          est.predict(Point{q.x + static_cast<double>(i) * h,
                            q.y + static_cast<double>(j) * h})
              .value;
  const double gx = (stencil[1][2] - stencil[1][0]) / (2.0 * h);
  const double gy = (stencil[2][1] - stencil[0][1]) / (2.0 * h);
  double mean = 0.0;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) mean += stencil[j][i];
  mean /= 9.0;
  double var = 0.0;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      const double d = stencil[j][i] - mean;
      var += d * d;
    }
  var /= 9.0;
  PriorVariation out;
  out.grad_mag = std::sqrt(gx * gx + gy * gy);
  out.local_std = std::sqrt(var);
  return out;
}

PriorEstimator make_site_estimator(const Scenario& sc, const Dataset& ds, int site,
                                   DriftMode drift, int k) {
  const auto obs = ds.select(site, Role::Obs);
  if (obs.empty())
    throw ValidationError("no observations for site " + std::to_string(site));
  std::vector<Point> pos;
  std::vector<double> val;
  for (const Sample* s : obs) {
    pos.push_back(Point{s->x, s->y});
    val.push_back(s->rss_dbm);
  }
  const double dx = sc.xmax - sc.xmin;
  const double dy = sc.ymax - sc.ymin;
  const double max_lag = 0.5 * std::sqrt(dx * dx + dy * dy);
  const EmpiricalVariogram ev = empirical_variogram(pos, val, 15, max_lag);
  const VariogramModel model = fit_variogram(ev);
  return PriorEstimator(std::move(pos), std::move(val), model, drift, k);
}

PriorTable build_prior_table(const Scenario& sc, const Dataset& ds, DriftMode drift,
                             int k) {
  PriorTable table;
  const int cols = sc.cols();
  for (int site : ds.sites()) {
    const PriorEstimator est = make_site_estimator(sc, ds, site, drift, k);
    for (Role role : {Role::Train, Role::Eval}) {
      for (const Sample* s : ds.select(site, role)) {
        const Point q{s->x, s->y};
        const KrigingResult kr = est.predict(q);
        const PriorVariation pv = prior_variation(est, q);
        PriorRow row;
        row.site = site;
        row.target_id = static_cast<long>(s->bin_row) * cols + s->bin_col;
        row.x = s->x;
        row.y = s->y;
        row.prior_dbm = kr.value;
        row.krig_var = kr.variance;
        row.grad_mag = pv.grad_mag;
        row.local_std = pv.local_std;
        table.rows.push_back(row);
      }
    }
  }
  return table;
}

const PriorRow* PriorTable::find(int site, long target_id) const {
  for (const auto& r : rows)
    if (r.site == site && r.target_id == target_id) return &r;
  return nullptr;
}

void PriorTable::save(const std::string& path) const {
  std::ofstream f = open_out(path);
  f << "site,target_id,x,y,prior_dbm,krig_var,grad_mag,local_std\n";
  for (const auto& r : rows) {
    f << r.site << ',' << r.target_id << ',' << fmt_f64(r.x) << ',' << fmt_f64(r.y) << ','
      << fmt_f64(r.prior_dbm) << ',' << fmt_f64(r.krig_var) << ',' << fmt_f64(r.grad_mag)
      << ',' << fmt_f64(r.local_std) << '\n';
  }
  if (!f) throw IoError("failed writing '" + path + "'");
}

PriorTable PriorTable::load(const std::string& path) {
  std::ifstream f = open_in(path);
  PriorTable table;
  std::string line;
  int line_no = 0;
  if (!std::getline(f, line)) throw ValidationError(path + ":1: empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "site,target_id,x,y,prior_dbm,krig_var,grad_mag,local_std")
    throw ValidationError(path + ":1: unexpected header '" + line + "'");
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 8)
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": expected 8 columns, got " + std::to_string(cols.size()));
    PriorRow r;
    r.site = static_cast<int>(parse_i64(cols[0], path, line_no));
    r.target_id = parse_i64(cols[1], path, line_no);
    r.x = parse_f64(cols[2], path, line_no);
    r.y = parse_f64(cols[3], path, line_no);
    r.prior_dbm = parse_f64(cols[4], path, line_no);
    r.krig_var = parse_f64(cols[5], path, line_no);
    r.grad_mag = parse_f64(cols[6], path, line_no);
    r.local_std = parse_f64(cols[7], path, line_no);
    table.rows.push_back(r);
  }
  return table;
}

}  // namespace raymap
