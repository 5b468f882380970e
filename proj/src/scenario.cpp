#include "raymap/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "raymap/csv.hpp"
#include "raymap/errors.hpp"
#include "raymap/rng.hpp"

namespace raymap {

namespace {

using nlohmann::json;

// Clip segment a + t*(b-a), t in [0,1], against one slab edge.
bool clip_edge(double p, double q, double& t0, double& t1) {
  if (p == 0.0) return q >= 0.0;
  const double r = q / p;
  if (p < 0.0) {
    if (r > t1) return false;
    if (r > t0) t0 = r;
  } else {
    if (r < t0) return false;
    if (r < t1) t1 = r;
  }
  return true;
}

// Hash a lattice node identity to a 64-bit key, byte order fixed by hand so
// the value does not depend on host endianness.
std::uint64_t lattice_key(std::uint64_t seed, int site, long long i, long long j) {
  unsigned char buf[28];
  auto put64 = [&](std::size_t at, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) buf[at + static_cast<std::size_t>(b)] =
        static_cast<unsigned char>((v >> (8 * b)) & 0xffu);
  };
  put64(0, seed);
  const std::uint32_t s32 = static_cast<std::uint32_t>(site);
  for (int b = 0; b < 4; ++b)
    buf[8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>((s32 >> (8 * b)) & 0xffu);
  put64(12, static_cast<std::uint64_t>(i));
  put64(20, static_cast<std::uint64_t>(j));
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(buf), sizeof(buf)));
}

double standard_normal_from_key(std::uint64_t key) {
  std::uint64_t st = key;
  double u1 = static_cast<double>(splitmix64(st) >> 11) * 0x1.0p-53;
  while (u1 <= 0.0) u1 = static_cast<double>(splitmix64(st) >> 11) * 0x1.0p-53;
  const double u2 = static_cast<double>(splitmix64(st) >> 11) * 0x1.0p-53;
  const double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

double require_number(const json& j, const char* key, const std::string& origin) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw ValidationError(origin + ": missing or non-numeric key '" + key + "'");
  return j.at(key).get<double>();
}

}  // namespace

bool segment_intersects_rect(const Point& a, const Point& b, const Blocker& r) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  double t0 = 0.0, t1 = 1.0;
  if (!clip_edge(-dx, a.x - r.xmin, t0, t1)) return false;
  if (!clip_edge(dx, r.xmax - a.x, t0, t1)) return false;
  if (!clip_edge(-dy, a.y - r.ymin, t0, t1)) return false;
  if (!clip_edge(dy, r.ymax - a.y, t0, t1)) return false;
  return t0 <= t1;
}

Scenario Scenario::from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError(origin + ": top level must be an object");

  static const std::set<std::string> known = {
      "bounding_box", "bin_size_m",    "transmitters", "blockers",
      "shadow_std_db", "shadow_corr_m", "pathloss_exp", "wall_loss_db",
      "seed",          "obs_fraction",  "train_fraction"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()))
      throw ValidationError(origin + ": unknown key '" + it.key() + "'");
  }

  Scenario s;
  if (!j.contains("bounding_box") || !j.at("bounding_box").is_array() ||
      j.at("bounding_box").size() != 4)
    throw ValidationError(origin + ": 'bounding_box' must be [xmin, ymin, xmax, ymax]");
  s.xmin = j["bounding_box"][0].get<double>();
  s.ymin = j["bounding_box"][1].get<double>();
  s.xmax = j["bounding_box"][2].get<double>();
  s.ymax = j["bounding_box"][3].get<double>();
  s.bin_size_m = require_number(j, "bin_size_m", origin);

  if (!j.contains("transmitters") || !j.at("transmitters").is_array())
    throw ValidationError(origin + ": 'transmitters' must be an array");
  for (const auto& t : j["transmitters"]) {
    Transmitter tx;
    if (!t.contains("site") || !t.at("site").is_number_integer())
      throw ValidationError(origin + ": transmitter needs integer 'site'");
    tx.site = t["site"].get<int>();
    tx.x = require_number(t, "x", origin);
    tx.y = require_number(t, "y", origin);
    tx.power_dbm = require_number(t, "power_dbm", origin);
    s.transmitters.push_back(tx);
  }

  if (j.contains("blockers")) {
    if (!j.at("blockers").is_array())
      throw ValidationError(origin + ": 'blockers' must be an array");
    for (const auto& b : j["blockers"]) {
      Blocker bl;
      bl.xmin = require_number(b, "xmin", origin);
      bl.ymin = require_number(b, "ymin", origin);
      bl.xmax = require_number(b, "xmax", origin);
      bl.ymax = require_number(b, "ymax", origin);
      s.blockers.push_back(bl);
    }
  }

  if (j.contains("shadow_std_db")) s.shadow_std_db = require_number(j, "shadow_std_db", origin);
  if (j.contains("shadow_corr_m")) s.shadow_corr_m = require_number(j, "shadow_corr_m", origin);
  if (j.contains("pathloss_exp")) s.pathloss_exp = require_number(j, "pathloss_exp", origin);
  if (j.contains("wall_loss_db")) s.wall_loss_db = require_number(j, "wall_loss_db", origin);
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_integer())
      throw ValidationError(origin + ": 'seed' must be an integer");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("obs_fraction")) s.obs_fraction = require_number(j, "obs_fraction", origin);
  if (j.contains("train_fraction")) s.train_fraction = require_number(j, "train_fraction", origin);

  s.validate();
  return s;
}

Scenario Scenario::from_json_file(const std::string& path) {
  return from_json_text(read_file(path), path);
}

void Scenario::validate() const {
  if (!(xmax > xmin) || !(ymax > ymin))
    throw ValidationError("bounding_box must have positive extent");
  if (!(bin_size_m > 0.0)) throw ValidationError("bin_size_m must be positive");
  if (xmax - xmin < bin_size_m || ymax - ymin < bin_size_m)
    throw ValidationError("bounding_box smaller than one bin");
  if (transmitters.empty()) throw ValidationError("at least one transmitter required");
  std::set<int> sites;
  for (const auto& t : transmitters) {
    if (!sites.insert(t.site).second)
      throw ValidationError("duplicate transmitter site id " + std::to_string(t.site));
  }
  for (const auto& b : blockers) {
    if (!(b.xmax > b.xmin) || !(b.ymax > b.ymin))
      throw ValidationError("blocker must have positive extent");
  }
  if (shadow_std_db < 0.0) throw ValidationError("shadow_std_db must be non-negative");
  if (!(shadow_corr_m > 0.0)) throw ValidationError("shadow_corr_m must be positive");
  if (!(pathloss_exp > 0.0)) throw ValidationError("pathloss_exp must be positive");
  if (wall_loss_db < 0.0) throw ValidationError("wall_loss_db must be non-negative");
  if (!(obs_fraction > 0.0 && obs_fraction < 1.0))
    throw ValidationError("obs_fraction must lie in (0, 1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie in (0, 1)");
}

int Scenario::rows() const {
  return std::max(1, static_cast<int>(std::floor((ymax - ymin) / bin_size_m + 1e-9)));
}

int Scenario::cols() const {
  return std::max(1, static_cast<int>(std::floor((xmax - xmin) / bin_size_m + 1e-9)));
}

Point Scenario::bin_center(int row, int col) const {
  return Point{xmin + (static_cast<double>(col) + 0.5) * bin_size_m,
               ymin + (static_cast<double>(row) + 0.5) * bin_size_m};
}

void Scenario::bin_of(double x, double y, int& row, int& col) const {
  col = static_cast<int>(std::floor((x - xmin) / bin_size_m));
  row = static_cast<int>(std::floor((y - ymin) / bin_size_m));
  col = std::clamp(col, 0, cols() - 1);
  row = std::clamp(row, 0, rows() - 1);
}

const Transmitter& Scenario::transmitter(int site) const {
  for (const auto& t : transmitters)
    if (t.site == site) return t;
  throw NotFoundError("unknown site id " + std::to_string(site));
}

int Scenario::wall_crossings(const Point& a, const Point& b) const {
  int n = 0;
  for (const auto& bl : blockers)
    if (segment_intersects_rect(a, b, bl)) ++n;
  return n;
}

double Scenario::shadow_at(int site, double x, double y) const {
  if (shadow_std_db == 0.0) return 0.0;
  const double gx = x / shadow_corr_m;
  const double gy = y / shadow_corr_m;
  const long long i0 = static_cast<long long>(std::floor(gx));
  const long long j0 = static_cast<long long>(std::floor(gy));
  const double fx = gx - static_cast<double>(i0);
  const double fy = gy - static_cast<double>(j0);
  auto node = [&](long long i, long long j) {
    return standard_normal_from_key(lattice_key(seed, site, i, j));
  };
  const double v00 = node(i0, j0);
  const double v10 = node(i0 + 1, j0);
  const double v01 = node(i0, j0 + 1);
  const double v11 = node(i0 + 1, j0 + 1);
  const double v = (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 +
                   (1.0 - fx) * fy * v01 + fx * fy * v11;
  return shadow_std_db * v;
}

FieldSample Scenario::sample_field(int site, const Point& p) const {
  const Transmitter& tx = transmitter(site);
  const Point txp{tx.x, tx.y};
  const double d = std::max(pair_geometry(p, txp).distance, 1.0);
  const int crossings = wall_crossings(txp, p);
  FieldSample out;
  out.rss_dbm = tx.power_dbm - 10.0 * pathloss_exp * std::log10(d) -
                wall_loss_db * static_cast<double>(crossings) + shadow_at(site, p.x, p.y);
  out.los = crossings == 0 ? 'L' : 'N';
  return out;
}

double aggregate_fields(const std::vector<double>& rss_dbm) {
  if (rss_dbm.empty()) throw ValidationError("aggregate_fields: empty input");
  double acc = 0.0;
  for (double v : rss_dbm) acc += std::pow(10.0, v / 10.0);
  return 10.0 * std::log10(acc);
}

FieldSample bin_measurements(const std::vector<double>& rss_dbm,
                             const std::vector<char>& los) {
  if (rss_dbm.empty() || rss_dbm.size() != los.size())
    throw ValidationError("bin_measurements: inputs empty or mismatched");
  double acc = 0.0;
  int n_los = 0;
  for (std::size_t i = 0; i < rss_dbm.size(); ++i) {
    acc += std::pow(10.0, rss_dbm[i] / 10.0);
    if (los[i] == 'L') ++n_los;
  }
  FieldSample out;
  out.rss_dbm = 10.0 * std::log10(acc / static_cast<double>(rss_dbm.size()));
  const int n_nlos = static_cast<int>(rss_dbm.size()) - n_los;
  out.los = n_los > n_nlos ? 'L' : 'N';
  return out;
}

}  // namespace raymap
