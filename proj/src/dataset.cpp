#include "raymap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "raymap/csv.hpp"
#include "raymap/errors.hpp"

namespace raymap {

const char* role_name(Role r) {
  switch (r) {
    case Role::Obs: return "obs";
    case Role::Train: return "train";
    case Role::Eval: return "eval";
    case Role::Grid: return "grid";
  }
  return "grid";
}

Role role_from_name(const std::string& s, const std::string& file, int line_no) {
  if (s == "obs") return Role::Obs;
  if (s == "train") return Role::Train;
  if (s == "eval") return Role::Eval;
  if (s == "grid") return Role::Grid;
  throw ValidationError(file + ":" + std::to_string(line_no) + ": unknown role '" + s + "'");
}

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

std::vector<int> stratified_sample_indices(const std::vector<Point>& points, int m,
                                           Rng& rng) {
  const int n = static_cast<int>(points.size());
  std::vector<int> chosen;
  if (m <= 0 || n == 0) return chosen;
  if (m >= n) {
    chosen.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) chosen[static_cast<std::size_t>(i)] = i;
    return chosen;
  }

  const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
  double xmin = points[0].x, xmax = points[0].x;
  double ymin = points[0].y, ymax = points[0].y;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double ex = xmax - xmin;
  const double ey = ymax - ymin;
  auto stratum_of = [&](const Point& p) {
    const double fx = ex > 0.0 ? (p.x - xmin) / ex : 0.0;
    const double fy = ey > 0.0 ? (p.y - ymin) / ey : 0.0;
    const int cx = std::min(g - 1, static_cast<int>(fx * static_cast<double>(g)));
    const int cy = std::min(g - 1, static_cast<int>(fy * static_cast<double>(g)));
    return cy * g + cx;
  };
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(g) * static_cast<std::size_t>(g));
  for (int i = 0; i < n; ++i)
    buckets[static_cast<std::size_t>(stratum_of(points[static_cast<std::size_t>(i)]))]
        .push_back(i);

  for (const auto& b : buckets) {
    if (b.empty()) continue;
    chosen.push_back(b[static_cast<std::size_t>(rng.next_below(b.size()))]);
  }

  if (static_cast<int>(chosen.size()) > m) {
    rng.shuffle(chosen);
    chosen.resize(static_cast<std::size_t>(m));
  } else if (static_cast<int>(chosen.size()) < m) {
    std::set<int> have(chosen.begin(), chosen.end());
    std::vector<int> rest;
    for (int i = 0; i < n; ++i)
      if (!have.count(i)) rest.push_back(i);
    rng.shuffle(rest);
    const std::size_t need = static_cast<std::size_t>(m) - chosen.size();
    chosen.insert(chosen.end(), rest.begin(), rest.begin() + static_cast<long>(need));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

void split_sites(const std::vector<int>& sites, std::vector<int>& seen,
                 std::vector<int>& held_out) {
  seen.clear();
  held_out.clear();
  for (int s : sites) {
    if (s % 2 != 0)
      seen.push_back(s);
    else
      held_out.push_back(s);
  }
  if (seen.empty())
    std::fprintf(stderr, "warning: no seen sites (all site ids are even)\n");
}

void allocate_queries(const std::vector<int>& ids, double train_fraction, Rng& rng,
                      std::vector<int>& train, std::vector<int>& eval) {
  if (ids.empty()) throw ValidationError("allocate_queries: nothing left to allocate");
  std::vector<int> order = ids;
  rng.shuffle(order);
  const int budget =
      std::min<int>(static_cast<int>(order.size()),
                    round_half_up(train_fraction * static_cast<double>(order.size())));
  train.assign(order.begin(), order.begin() + budget);
  eval.assign(order.begin() + budget, order.end());
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
}

Dataset generate_dataset(const Scenario& sc) {
  Rng base(sc.seed);
  Dataset ds;

  std::vector<int> sites;
  for (const auto& t : sc.transmitters) sites.push_back(t.site);
  std::sort(sites.begin(), sites.end());
  std::vector<int> seen, held_out;
  split_sites(sites, seen, held_out);
  std::set<int> seen_set(seen.begin(), seen.end());

  const int rows = sc.rows();
  const int cols = sc.cols();
  const int n_bins = rows * cols;

  for (int site : sites) {
    std::vector<Point> centers(static_cast<std::size_t>(n_bins));
    std::vector<FieldSample> truth(static_cast<std::size_t>(n_bins));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const int id = r * cols + c;
        centers[static_cast<std::size_t>(id)] = sc.bin_center(r, c);
        truth[static_cast<std::size_t>(id)] =
            sc.sample_field(site, centers[static_cast<std::size_t>(id)]);
      }
    }
    auto make_sample = [&](int id, Role role) {
      Sample s;
      s.site = site;
      s.role = role;
      s.x = centers[static_cast<std::size_t>(id)].x;
      s.y = centers[static_cast<std::size_t>(id)].y;
      s.rss_dbm = truth[static_cast<std::size_t>(id)].rss_dbm;
      s.los = truth[static_cast<std::size_t>(id)].los;
      s.bin_row = id / cols;
      s.bin_col = id % cols;
      return s;
    };

    for (int id = 0; id < n_bins; ++id) ds.samples.push_back(make_sample(id, Role::Grid));

    const int m_obs = round_half_up(sc.obs_fraction * static_cast<double>(n_bins));
    if (m_obs <= 0)
      throw ValidationError("observation budget rounds to zero for site " +
                            std::to_string(site));
    Rng rng_obs = base.fork("obs/" + std::to_string(site));
    const std::vector<int> obs_ids = stratified_sample_indices(centers, m_obs, rng_obs);
    std::set<int> obs_set(obs_ids.begin(), obs_ids.end());
    for (int id : obs_ids) {
      Sample s = make_sample(id, Role::Obs);
      const FieldSample binned = bin_measurements({s.rss_dbm}, {s.los});
      s.rss_dbm = binned.rss_dbm;
      s.los = binned.los;
      ds.samples.push_back(s);
    }

    std::vector<int> remaining;
    for (int id = 0; id < n_bins; ++id)
      if (!obs_set.count(id)) remaining.push_back(id);

    std::vector<int> train, eval;
    if (seen_set.count(site)) {
      Rng rng_q = base.fork("queries/" + std::to_string(site));
      allocate_queries(remaining, sc.train_fraction, rng_q, train, eval);
    } else {
      eval = remaining;
    }
    for (int id : train) ds.samples.push_back(make_sample(id, Role::Train));
    for (int id : eval) ds.samples.push_back(make_sample(id, Role::Eval));
  }
  return ds;
}

std::vector<const Sample*> Dataset::select(int site, Role role) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.site == site && s.role == role) out.push_back(&s);
  return out;
}

std::vector<int> Dataset::sites() const {
  std::set<int> s;
  for (const auto& x : samples) s.insert(x.site);
  return std::vector<int>(s.begin(), s.end());
}

void Dataset::save(const std::string& path) const {
  std::ofstream f = open_out(path);
  f << "site,role,x,y,rss_dbm,los,bin_row,bin_col\n";
  for (const auto& s : samples) {
    f << s.site << ',' << role_name(s.role) << ',' << fmt_f64(s.x) << ',' << fmt_f64(s.y)
      << ',' << fmt_f64(s.rss_dbm) << ',' << s.los << ',' << s.bin_row << ',' << s.bin_col
      << '\n';
  }
  if (!f) throw IoError("failed writing '" + path + "'");
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream f = open_in(path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  if (!std::getline(f, line)) throw ValidationError(path + ":1: empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "site,role,x,y,rss_dbm,los,bin_row,bin_col")
    throw ValidationError(path + ":1: unexpected header '" + line + "'");
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 8)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected 8 columns, got " +
                            std::to_string(cols.size()));
    Sample s;
    s.site = static_cast<int>(parse_i64(cols[0], path, line_no));
    s.role = role_from_name(cols[1], path, line_no);
    s.x = parse_f64(cols[2], path, line_no);
    s.y = parse_f64(cols[3], path, line_no);
    s.rss_dbm = parse_f64(cols[4], path, line_no);
    if (cols[5] != "L" && cols[5] != "N")
      throw ValidationError(path + ":" + std::to_string(line_no) + ": los must be L or N, got '" +
                            cols[5] + "'");
    s.los = cols[5][0];
    s.bin_row = static_cast<int>(parse_i64(cols[6], path, line_no));
    s.bin_col = static_cast<int>(parse_i64(cols[7], path, line_no));
    ds.samples.push_back(s);
  }
  return ds;
}

}  // namespace raymap
