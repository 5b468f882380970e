#include "raymap/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "raymap/csv.hpp"
#include "raymap/errors.hpp"
#include "raymap/version.hpp"

namespace raymap {

namespace {

using Json = nlohmann::ordered_json;

std::string hash_hex(const std::string& text) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

// Reproducibility record written beside each artifact.  No timestamps:
// reruns of the same inputs must produce the same bytes here too.
void write_provenance(const std::string& artifact, const std::string& command,
                      const std::string& config_path, Json extra) {
  Json j;
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = config_path;
  j["config_hash"] = hash_hex(read_file(config_path));
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream f = open_out(artifact + ".provenance.json");
  f << j.dump(2) << '\n';
}

void require_file(const std::string& path, const std::string& what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StateError(what + " required but not found at '" + path + "'");
}

TrainedModel load_model_for(const std::string& path, Regime regime) {
  TrainedModel m = load_model(path);
  const bool needs_residual = regime != Regime::Direct;
  if (needs_residual && m.regime != "residual")
    throw StateError("checkpoint '" + path + "' was trained for the " + m.regime +
                     " regime; this regime needs a residual checkpoint");
  if (!needs_residual && m.regime != "direct")
    throw StateError("checkpoint '" + path + "' was trained for the " + m.regime +
                     " regime; this regime needs a direct checkpoint");
  return m;
}

}  // namespace

void cmd_gen(const std::string& config_path, const std::string& out_path,
             const std::uint64_t* seed_override) {
  Scenario sc = Scenario::from_json_file(config_path);
  if (seed_override) sc.seed = *seed_override;
  const Dataset ds = generate_dataset(sc);
  ds.save(out_path);

  std::vector<int> seen, held;
  split_sites(ds.sites(), seen, held);
  Json counts;
  for (int site : ds.sites()) {
    Json c;
    c["grid"] = ds.select(site, Role::Grid).size();
    c["obs"] = ds.select(site, Role::Obs).size();
    c["train"] = ds.select(site, Role::Train).size();
    c["eval"] = ds.select(site, Role::Eval).size();
    counts[std::to_string(site)] = c;
  }
  Json extra;
  extra["seed"] = sc.seed;
  extra["seen_sites"] = seen;
  extra["held_out_sites"] = held;
  extra["counts"] = counts;
  write_provenance(out_path, "gen", config_path, extra);
}

void cmd_prior(const std::string& config_path, const std::string& dataset_path,
               const std::string& out_path, DriftMode drift) {
  const Scenario sc = Scenario::from_json_file(config_path);
  const Dataset ds = Dataset::load(dataset_path);
  const PriorTable table = build_prior_table(sc, ds, drift);
  table.save(out_path);

  Json extra;
  extra["dataset"] = dataset_path;
  extra["drift"] = drift == DriftMode::Linear ? "linear" : "none";
  extra["rows"] = table.rows.size();
  write_provenance(out_path, "prior", config_path, extra);
}

void cmd_train(const std::string& config_path, const std::string& dataset_path,
               const std::string& prior_path, const std::string& regime,
               const std::string& out_path, const TrainConfig& tc) {
  const Scenario sc = Scenario::from_json_file(config_path);
  const Dataset ds = Dataset::load(dataset_path);

  TrainStats stats;
  TrainedModel model;
  if (regime == "direct") {
    model = train_direct(sc, ds, ModelConfig{}, tc, &stats);
  } else if (regime == "residual") {
    if (prior_path.empty())
      throw ValidationError("residual training requires a prior table (--prior)");
    const PriorTable priors = PriorTable::load(prior_path);
    model = train_residual(sc, ds, priors, ModelConfig{}, tc, &stats);
  } else {
    throw ValidationError("train expects regime 'direct' or 'residual', got '" +
                          regime + "'");
  }
  save_model(model, out_path);

  std::ofstream trace = open_out(out_path + ".trace.csv");
  trace << "epoch,train_loss\n";
  for (std::size_t i = 0; i < stats.loss_trace.size(); ++i)
    trace << (i + 1) << ',' << fmt_f64(stats.loss_trace[i]) << '\n';
  trace.close();

  Json extra;
  extra["dataset"] = dataset_path;
  extra["regime"] = regime;
  extra["seed"] = tc.seed;
  extra["epochs"] = tc.epochs;
  extra["batch"] = tc.batch;
  extra["neighbor_checks"] = stats.neighbor_checks;
  extra["neighbor_violations"] = stats.neighbor_violations;
  if (!stats.loss_trace.empty()) extra["final_loss"] = stats.loss_trace.back();
  write_provenance(out_path, "train", config_path, extra);
}

void cmd_gate(const std::string& config_path, const std::string& dataset_path,
              const std::string& prior_path, const std::string& checkpoint_path,
              const std::string& out_path, const GateConfig& gc) {
  require_file(checkpoint_path, "residual checkpoint");
  const TrainedModel model = load_model_for(checkpoint_path, Regime::Residual);
  const Scenario sc = Scenario::from_json_file(config_path);
  const Dataset ds = Dataset::load(dataset_path);
  const PriorTable priors = PriorTable::load(prior_path);

  GateTable table = build_gate_table(model, sc, ds, priors, gc);
  const GateModel gm = fit_gate(model, table, gc);
  save_gate(gm, out_path);
  table.save(out_path + ".table.csv");

  Json extra;
  extra["dataset"] = dataset_path;
  extra["checkpoint"] = checkpoint_path;
  extra["seed"] = gc.seed;
  extra["rows"] = table.rows.size();
  extra["recomposition_loss"] = gc.recomposition_loss;
  write_provenance(out_path, "gate", config_path, extra);
}

void cmd_eval(const std::string& config_path, const std::string& dataset_path,
              const std::string& prior_path, const std::string& checkpoint_path,
              const std::string& gate_path, const std::string& regime,
              const std::string& out_path) {
  const Regime r = regime_from_name(regime);
  const Scenario sc = Scenario::from_json_file(config_path);
  const Dataset ds = Dataset::load(dataset_path);
  const TrainedModel model = load_model_for(checkpoint_path, r);

  PriorTable priors;
  const PriorTable* priors_ptr = nullptr;
  if (r != Regime::Direct) {
    if (prior_path.empty())
      throw ValidationError("regime '" + regime + "' requires a prior table (--prior)");
    priors = PriorTable::load(prior_path);
    priors_ptr = &priors;
  }

  GateModel gate;
  const GateModel* gate_ptr = nullptr;
  if (r == Regime::Gated) {
    if (gate_path.empty()) throw StateError("gated regime requires a gate checkpoint (--gate)");
    require_file(gate_path, "gate checkpoint");
    gate = load_gate(gate_path);
    gate_ptr = &gate;
  }

  std::vector<MetricsRow> rows;
  for (Role split : {Role::Train, Role::Eval}) {
    bool any = false;
    for (int site : ds.sites())
      if (!ds.select(site, split).empty()) any = true;
    if (!any) continue;
    const auto part = evaluate(r, model, gate_ptr, sc, ds, split, priors_ptr);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  save_metrics(rows, out_path);

  Json extra;
  extra["dataset"] = dataset_path;
  extra["checkpoint"] = checkpoint_path;
  extra["regime"] = regime;
  write_provenance(out_path, "eval", config_path, extra);
}

void cmd_map(const std::string& config_path, const std::string& dataset_path,
             const std::string& checkpoint_path, const std::string& gate_path,
             const std::string& regime, int site, const std::string& out_prefix) {
  const Regime r = regime_from_name(regime);
  const Scenario sc = Scenario::from_json_file(config_path);
  const Dataset ds = Dataset::load(dataset_path);
  const TrainedModel model = load_model_for(checkpoint_path, r);
  (void)sc.transmitter(site);  // unknown site fails here, before any heavy work

  GateModel gate;
  const GateModel* gate_ptr = nullptr;
  if (r == Regime::Gated) {
    if (gate_path.empty()) throw StateError("gated regime requires a gate checkpoint (--gate)");
    require_file(gate_path, "gate checkpoint");
    gate = load_gate(gate_path);
    gate_ptr = &gate;
  }

  std::vector<const Sample*> grid = ds.select(site, Role::Grid);
  if (grid.empty()) throw NotFoundError("site " + std::to_string(site) + " has no grid rows");
  std::sort(grid.begin(), grid.end(), [](const Sample* a, const Sample* b) {
    if (a->bin_row != b->bin_row) return a->bin_row < b->bin_row;
    return a->bin_col < b->bin_col;
  });

  std::set<long> obs_bins;
  for (const Sample* s : ds.select(site, Role::Obs)) obs_bins.insert(target_id_of(sc, *s));

  std::vector<const Sample*> queries;
  for (const Sample* s : grid)
    if (!obs_bins.count(target_id_of(sc, *s))) queries.push_back(s);

  PriorTable adhoc;
  const PriorTable* priors_ptr = nullptr;
  if (r != Regime::Direct) {
    const PriorEstimator est = make_site_estimator(sc, ds, site, DriftMode::None);
    for (const Sample* s : queries) {
      const Point q{s->x, s->y};
      const KrigingResult kr = est.predict(q);
      const PriorVariation pv = prior_variation(est, q);
      adhoc.rows.push_back({site, target_id_of(sc, *s), s->x, s->y, kr.value, kr.variance,
                            pv.grad_mag, pv.local_std});
    }
    priors_ptr = &adhoc;
  }

  const ReferenceScaffold scaffold =
      scaffold_from_dataset(ds, site, 0, fnv1a64("scaffold") ^ static_cast<std::uint64_t>(site));
  const std::vector<double> preds =
      predict_site(r, model, gate_ptr, sc, queries, scaffold, priors_ptr);

  std::map<long, double> pred_by_bin;
  for (std::size_t i = 0; i < queries.size(); ++i)
    pred_by_bin[target_id_of(sc, *queries[i])] = preds[i];

  double lo = 0.0, hi = 0.0;
  bool first = true;
  std::ofstream csv = open_out(out_prefix + ".csv");
  csv << "row,col,x,y,truth,pred,error\n";
  std::vector<double> cell(static_cast<std::size_t>(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Sample* s = grid[i];
    const long tid = target_id_of(sc, *s);
    const double pred = obs_bins.count(tid) ? s->rss_dbm : pred_by_bin.at(tid);
    cell[i] = pred;
    if (first) {
      lo = hi = pred;
      first = false;
    } else {
      lo = std::min(lo, pred);
      hi = std::max(hi, pred);
    }
    csv << s->bin_row << ',' << s->bin_col << ',' << fmt_f64(s->x) << ',' << fmt_f64(s->y)
        << ',' << fmt_f64(s->rss_dbm) << ',' << fmt_f64(pred) << ','
        << fmt_f64(pred - s->rss_dbm) << '\n';
  }
  csv.close();

  std::ofstream pgm = open_out(out_prefix + ".pgm");
  pgm << "P5\n" << sc.cols() << ' ' << sc.rows() << "\n255\n";
  const double span = hi - lo;
  for (double v : cell) {
    int g = span > 0.0 ? static_cast<int>(std::lround((v - lo) / span * 255.0)) : 0;
    g = std::clamp(g, 0, 255);
    pgm.put(static_cast<char>(static_cast<unsigned char>(g)));
  }
  pgm.close();

  Json side;
  side["site"] = site;
  side["regime"] = regime;
  side["rows"] = sc.rows();
  side["cols"] = sc.cols();
  side["min_dbm"] = lo;
  side["max_dbm"] = hi;
  std::ofstream sj = open_out(out_prefix + ".json");
  sj << side.dump(2) << '\n';
  sj.close();

  Json extra;
  extra["dataset"] = dataset_path;
  extra["checkpoint"] = checkpoint_path;
  extra["regime"] = regime;
  extra["site"] = site;
  write_provenance(out_prefix, "map", config_path, extra);
}

}  // namespace raymap
