#include "raymap/regimes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "raymap/checkpoint.hpp"
#include "raymap/csv.hpp"
#include "raymap/errors.hpp"

namespace raymap {

namespace {

// Full-precision text form for checkpoint metadata; %.6f would truncate.
std::string f64_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t name_seed(std::uint64_t base, const std::string& name) {
  return base ^ (0x9e3779b97f4a7c15ULL + fnv1a64(name));
}

std::uint64_t scaffold_seed(int site) {
  return fnv1a64("scaffold") ^ static_cast<std::uint64_t>(site);
}

std::uint64_t hash_params(const ParamStore& ps) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, arr] : ps) {
    h ^= fnv1a64(name);
    h *= 0x100000001b3ULL;
    for (double v : arr.data) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace

Standardizer fit_standardizer(const Dataset& ds) {
  std::vector<int> seen, held;
  split_sites(ds.sites(), seen, held);
  double sum = 0.0;
  long n = 0;
  for (int site : seen)
    for (const Sample* s : ds.select(site, Role::Obs)) {
      sum += s->rss_dbm;
      ++n;
    }
  if (n == 0) throw ValidationError("fit_standardizer: no seen-site observations");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (int site : seen)
    for (const Sample* s : ds.select(site, Role::Obs)) {
      const double d = s->rss_dbm - mean;
      ss += d * d;
    }
  Standardizer st;
  st.mean = mean;
  st.std = std::sqrt(ss / static_cast<double>(n));
  if (st.std <= 1e-12) st.std = 1.0;  // constant field: identity scale
  return st;
}

double dataset_r0(const Dataset& ds) {
  if (ds.samples.empty()) throw ValidationError("dataset_r0: empty dataset");
  double xmin = ds.samples[0].x, xmax = xmin, ymin = ds.samples[0].y, ymax = ymin;
  for (const Sample& s : ds.samples) {
    xmin = std::min(xmin, s.x);
    xmax = std::max(xmax, s.x);
    ymin = std::min(ymin, s.y);
    ymax = std::max(ymax, s.y);
  }
  const double dx = xmax - xmin, dy = ymax - ymin;
  const double half_diag = 0.5 * std::sqrt(dx * dx + dy * dy);
  return half_diag > 0.0 ? half_diag : 1.0;
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Direct: return "direct";
    case Regime::Residual: return "residual";
    case Regime::Gated: return "gated";
  }
  return "?";
}

Regime regime_from_name(const std::string& s) {
  if (s == "direct") return Regime::Direct;
  if (s == "residual") return Regime::Residual;
  if (s == "gated") return Regime::Gated;
  throw ValidationError("unknown regime '" + s + "'");
}

void save_model(const TrainedModel& m, const std::string& path) {
  Checkpoint ck;
  ck.params = m.params;
  ck.meta["regime"] = m.regime;
  ck.meta["rss_mean"] = f64_exact(m.std.mean);
  ck.meta["rss_std"] = f64_exact(m.std.std);
  ck.meta["r0"] = f64_exact(m.cfg.enc.r0);
  ck.meta["leaky_slope"] = f64_exact(m.cfg.enc.leaky_slope);
  ck.meta["bins"] = std::to_string(m.cfg.enc.bins);
  ck.meta["comp_width"] = std::to_string(m.cfg.enc.comp_width);
  ck.meta["latent"] = std::to_string(m.cfg.enc.latent);
  ck.meta["branch_width"] = std::to_string(m.cfg.enc.branch_width);
  ck.meta["ref_hidden"] = std::to_string(m.cfg.enc.ref_hidden);
  ck.meta["edge_hidden"] = std::to_string(m.cfg.enc.edge_hidden);
  ck.meta["edge_width"] = std::to_string(m.cfg.enc.edge_width);
  ck.meta["k_ref"] = std::to_string(m.cfg.k_ref);
  ck.meta["k_global"] = std::to_string(m.cfg.k_global);
  ck.save(path);
}

TrainedModel load_model(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  TrainedModel m;
  m.params = ck.params;
  m.regime = ck.meta_str("regime");
  m.std.mean = ck.meta_f64("rss_mean");
  m.std.std = ck.meta_f64("rss_std");
  m.cfg.enc.r0 = ck.meta_f64("r0");
  m.cfg.enc.leaky_slope = ck.meta_f64("leaky_slope");
  m.cfg.enc.bins = static_cast<int>(ck.meta_f64("bins"));
  m.cfg.enc.comp_width = static_cast<int>(ck.meta_f64("comp_width"));
  m.cfg.enc.latent = static_cast<int>(ck.meta_f64("latent"));
  m.cfg.enc.branch_width = static_cast<int>(ck.meta_f64("branch_width"));
  m.cfg.enc.ref_hidden = static_cast<int>(ck.meta_f64("ref_hidden"));
  m.cfg.enc.edge_hidden = static_cast<int>(ck.meta_f64("edge_hidden"));
  m.cfg.enc.edge_width = static_cast<int>(ck.meta_f64("edge_width"));
  m.cfg.k_ref = static_cast<int>(ck.meta_f64("k_ref"));
  m.cfg.k_global = static_cast<int>(ck.meta_f64("k_global"));
  return m;
}

long target_id_of(const Scenario& sc, const Sample& s) {
  return static_cast<long>(s.bin_row) * sc.cols() + s.bin_col;
}

namespace {

struct TrainPair {
  int site = 0;
  const Sample* s = nullptr;
  long tid = 0;
  double target_std = 0.0;  // standardized label (direct) or residual
  double prior_std = 0.0;   // standardized prior, residual regime only
};

struct SiteContext {
  Point tx;
  ReferenceScaffold scaffold;
};

std::map<int, SiteContext> site_contexts(const Scenario& sc, const Dataset& ds,
                                         const std::vector<int>& sites) {
  std::map<int, SiteContext> out;
  for (int site : sites) {
    const Transmitter& t = sc.transmitter(site);
    SiteContext ctx;
    ctx.tx = {t.x, t.y};
    ctx.scaffold = scaffold_from_dataset(ds, site, 0, scaffold_seed(site));
    out.emplace(site, std::move(ctx));
  }
  return out;
}

// K_g nearest same-site members of the batch, excluding the target itself,
// ordered by (squared distance, target id).
std::vector<int> batch_neighbors(const std::vector<TrainPair>& pairs,
                                 const std::vector<int>& batch, int self_pos,
                                 int k_global) {
  const TrainPair& me = pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(self_pos)])];
  std::vector<std::pair<double, int>> cand;  // (dist2, position in batch)
  for (int j = 0; j < static_cast<int>(batch.size()); ++j) {
    if (j == self_pos) continue;
    const TrainPair& other = pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(j)])];
    if (other.site != me.site) continue;
    const double dx = other.s->x - me.s->x, dy = other.s->y - me.s->y;
    cand.emplace_back(dx * dx + dy * dy, j);
  }
  std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    const long ta = pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(a.second)])].tid;
    const long tb = pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(b.second)])].tid;
    return ta < tb;
  });
  if (static_cast<int>(cand.size()) > k_global) cand.resize(static_cast<std::size_t>(k_global));
  std::vector<int> out;
  out.reserve(cand.size());
  for (const auto& c : cand) out.push_back(c.second);
  return out;
}

TrainedModel train_model(const Scenario& sc, const Dataset& ds, const PriorTable* priors,
                         ModelConfig cfg, const TrainConfig& tc, TrainStats* stats,
                         bool residual) {
  if (tc.epochs < 1 || tc.batch < 1 || tc.lr <= 0.0)
    throw ValidationError("train: epochs, batch, and lr must be positive");

  std::vector<int> seen, held;
  split_sites(ds.sites(), seen, held);

  TrainedModel model;
  model.regime = residual ? "residual" : "direct";
  model.std = fit_standardizer(ds);
  model.cfg = cfg;
  model.cfg.enc.r0 = dataset_r0(ds);

  std::vector<TrainPair> pairs;
  for (int site : seen)
    for (const Sample* s : ds.select(site, Role::Train)) {
      TrainPair tp;
      tp.site = site;
      tp.s = s;
      tp.tid = target_id_of(sc, *s);
      if (residual) {
        const PriorRow* pr = priors->find(site, tp.tid);
        if (!pr)
          throw ValidationError("train_residual: no prior row for site " +
                                std::to_string(site) + " target " +
                                std::to_string(tp.tid));
        tp.prior_std = model.std.standardize(pr->prior_dbm);
        tp.target_std = model.std.standardize(s->rss_dbm) - tp.prior_std;
      } else {
        tp.target_std = model.std.standardize(s->rss_dbm);
      }
      pairs.push_back(tp);
    }
  if (pairs.empty()) throw ValidationError("train: no train queries in dataset");

  const auto ctx = site_contexts(sc, ds, seen);
  model.params = init_model_params(model.cfg, tc.seed);
  Adam opt(AdamConfig{tc.lr, 0.9, 0.999, 1e-8});
  Rng order = Rng(tc.seed).fork("order");

  std::vector<int> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    order.shuffle(idx);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < idx.size(); begin += static_cast<std::size_t>(tc.batch)) {
      const std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(tc.batch));
      const std::vector<int> batch(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                   idx.begin() + static_cast<std::ptrdiff_t>(end));

      Tape tape;
      BoundParams bp = bind_params(tape, model.params, true);

      std::vector<Tape::Id> z_local(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TrainPair& tp = pairs[static_cast<std::size_t>(batch[i])];
        const SiteContext& sctx = ctx.at(tp.site);
        z_local[i] = local_stage(tape, bp, model.cfg, {{tp.s->x, tp.s->y}, tp.s->los},
                                 sctx.tx, sctx.scaffold, model.std.mean, model.std.std);
      }

      Tape::Id preds = -1;
      Array targets(1, static_cast<int>(batch.size()));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TrainPair& tp = pairs[static_cast<std::size_t>(batch[i])];
        const std::vector<int> nb = batch_neighbors(pairs, batch, static_cast<int>(i),
                                                    model.cfg.k_global);
        std::vector<GlobalNeighbor> neighbors;
        neighbors.reserve(nb.size());
        for (int j : nb) {
          const TrainPair& other = pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(j)])];
          if (stats) {
            ++stats->neighbor_checks;
            const bool in_batch = j >= 0 && j < static_cast<int>(batch.size());
            if (!in_batch || other.site != tp.site) ++stats->neighbor_violations;
          }
          if (other.site != tp.site)
            throw StateError("train: global neighbor crossed a site boundary");
          neighbors.push_back({z_local[static_cast<std::size_t>(j)],
                               pair_geometry({tp.s->x, tp.s->y}, {other.s->x, other.s->y})});
        }
        const Tape::Id z_g = global_stage(tape, bp, model.cfg, z_local[i], neighbors);
        const Tape::Id s = tape.hconcat(z_local[i], z_g);
        const Tape::Id pred = residual
                                  ? head_residual(tape, bp, model.cfg, s, tp.prior_std)
                                  : head_direct(tape, bp, model.cfg, s);
        preds = (preds < 0) ? pred : tape.hconcat(preds, pred);
        targets.at(0, static_cast<int>(i)) = tp.target_std;
      }

      const Tape::Id loss =
          tape.mean(tape.huber(preds, tape.constant(targets), tc.huber_delta));
      epoch_loss += tape.value(loss).at(0, 0) * static_cast<double>(batch.size());
      tape.backward(loss);
      opt.step(model.params, tape.param_grads());
    }
    if (stats) stats->loss_trace.push_back(epoch_loss / static_cast<double>(pairs.size()));
  }
  return model;
}

}  // namespace

TrainedModel train_direct(const Scenario& sc, const Dataset& ds, ModelConfig cfg,
                          const TrainConfig& tc, TrainStats* stats) {
  return train_model(sc, ds, nullptr, cfg, tc, stats, false);
}

TrainedModel train_residual(const Scenario& sc, const Dataset& ds,
                            const PriorTable& priors, ModelConfig cfg,
                            const TrainConfig& tc, TrainStats* stats) {
  return train_model(sc, ds, &priors, cfg, tc, stats, true);
}

double oracle_gamma(double e, double ehat, double eps_e) {
  if (!std::isfinite(e) || !std::isfinite(ehat))
    throw ValidationError("oracle_gamma: non-finite input");
  if (std::abs(ehat) <= eps_e) return 0.0;
  return std::clamp(e / ehat, 0.0, 1.0);
}

Array gate_features(double prior_std, double ehat_std, double grad_mag,
                    double local_std) {
  return Array::row_vec(
      {prior_std, ehat_std, std::abs(ehat_std), grad_mag / 1.0, local_std / 1.0});
}

void GateTable::save(const std::string& path) const {
  std::ofstream f = open_out(path);
  f << "site,target_id,prior,ehat,abs_ehat,grad_mag,local_std,label,gamma_star,gamma_fit\n";
  for (const GateRow& r : rows)
    f << r.site << ',' << r.target_id << ',' << fmt_f64(r.prior) << ',' << fmt_f64(r.ehat)
      << ',' << fmt_f64(r.abs_ehat) << ',' << fmt_f64(r.grad_mag) << ','
      << fmt_f64(r.local_std) << ',' << fmt_f64(r.label) << ',' << fmt_f64(r.gamma_star)
      << ',' << fmt_f64(r.gamma_fit) << '\n';
}

GateTable GateTable::load(const std::string& path) {
  std::ifstream f = open_in(path);
  GateTable t;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "site,target_id,prior,ehat,abs_ehat,grad_mag,local_std,label,gamma_star,gamma_fit")
        throw ValidationError(path + ":1: unexpected gate table header");
      continue;
    }
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 10)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected 10 columns");
    GateRow r;
    r.site = static_cast<int>(parse_i64(cols[0], path, line_no));
    r.target_id = parse_i64(cols[1], path, line_no);
    r.prior = parse_f64(cols[2], path, line_no);
    r.ehat = parse_f64(cols[3], path, line_no);
    r.abs_ehat = parse_f64(cols[4], path, line_no);
    r.grad_mag = parse_f64(cols[5], path, line_no);
    r.local_std = parse_f64(cols[6], path, line_no);
    r.label = parse_f64(cols[7], path, line_no);
    r.gamma_star = parse_f64(cols[8], path, line_no);
    r.gamma_fit = parse_f64(cols[9], path, line_no);
    t.rows.push_back(r);
  }
  return t;
}

LocalCache cache_local_embeddings(const ModelConfig& cfg, const ParamStore& params,
                                  const std::vector<std::pair<int, QueryPoint>>& targets,
                                  Point tx_pos, const ReferenceScaffold& scaffold,
                                  const Standardizer& std_) {
  LocalCache cache;
  for (const auto& [id, q] : targets) {
    Tape tape;
    BoundParams bp = bind_params(tape, params, false);
    const Tape::Id z = local_stage(tape, bp, cfg, q, tx_pos, scaffold, std_.mean, std_.std);
    cache.z[id] = tape.value(z);
    ++cache.evals;
    cache.ops += static_cast<long>(tape.num_ops());
  }
  return cache;
}

namespace {

// Shared inference core: one site's pairs, neighborhoods drawn from the
// evaluated set itself, center and neighbor embeddings from the cache.
struct SitePrediction {
  double value = 0.0;      // final estimate, dBm
  double prior_dbm = 0.0;  // residual/gated only
  double ehat_std = 0.0;
  double grad_mag = 0.0;
  double local_std = 0.0;
};

std::vector<SitePrediction> run_site(Regime regime, const TrainedModel& model,
                                     const GateModel* gate, const Scenario& sc,
                                     const std::vector<const Sample*>& pairs,
                                     const ReferenceScaffold& scaffold,
                                     const PriorTable* priors) {
  if (regime == Regime::Gated && gate == nullptr)
    throw StateError("gated regime requires a fitted gate");
  if (regime != Regime::Direct && priors == nullptr)
    throw ValidationError("regime requires a prior table");
  if (pairs.empty()) return {};
  const int site = pairs[0]->site;
  const Transmitter& t = sc.transmitter(site);
  const Point tx{t.x, t.y};

  std::vector<std::pair<int, QueryPoint>> targets;
  std::vector<Point> positions;
  targets.reserve(pairs.size());
  positions.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    targets.emplace_back(static_cast<int>(i), QueryPoint{{pairs[i]->x, pairs[i]->y},
                                                         pairs[i]->los});
    positions.push_back({pairs[i]->x, pairs[i]->y});
  }
  const LocalCache cache =
      cache_local_embeddings(model.cfg, model.params, targets, tx, scaffold, model.std);
  const SpatialIndex index(positions);

  std::vector<SitePrediction> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Tape tape;
    BoundParams bp = bind_params(tape, model.params, false);
    const Tape::Id z_c = tape.constant(cache.z.at(static_cast<int>(i)));

    std::vector<GlobalNeighbor> neighbors;
    for (const Neighbor& nb : index.knn(positions[i], model.cfg.k_global,
                                        static_cast<int>(i)))
      neighbors.push_back({tape.constant(cache.z.at(nb.id)),
                           pair_geometry(positions[i], index.point(nb.id))});

    const Tape::Id z_g = global_stage(tape, bp, model.cfg, z_c, neighbors);
    const Tape::Id s = tape.hconcat(z_c, z_g);

    SitePrediction sp;
    if (regime == Regime::Direct) {
      const Tape::Id y = head_direct(tape, bp, model.cfg, s);
      sp.value = model.std.destandardize(tape.value(y).at(0, 0));
      out.push_back(sp);
      continue;
    }

    const long tid = target_id_of(sc, *pairs[i]);
    const PriorRow* pr = priors->find(site, tid);
    if (!pr)
      throw ValidationError("predict: no prior row for site " + std::to_string(site) +
                            " target " + std::to_string(tid));
    const double prior_std = model.std.standardize(pr->prior_dbm);
    const Tape::Id e = head_residual(tape, bp, model.cfg, s, prior_std);
    sp.prior_dbm = pr->prior_dbm;
    sp.ehat_std = tape.value(e).at(0, 0);
    sp.grad_mag = pr->grad_mag;
    sp.local_std = pr->local_std;

    if (regime == Regime::Residual) {
      sp.value = pr->prior_dbm + sp.ehat_std * model.std.std;
    } else {
      const double g = gate_value(
          *gate, gate_features(prior_std, sp.ehat_std, pr->grad_mag, pr->local_std));
      sp.value = pr->prior_dbm + g * sp.ehat_std * model.std.std;
    }
    out.push_back(sp);
  }
  return out;
}

}  // namespace

std::vector<double> predict_site(Regime regime, const TrainedModel& model,
                                 const GateModel* gate, const Scenario& sc,
                                 const std::vector<const Sample*>& pairs,
                                 const ReferenceScaffold& scaffold,
                                 const PriorTable* priors) {
  std::vector<double> out;
  for (const SitePrediction& sp : run_site(regime, model, gate, sc, pairs, scaffold, priors))
    out.push_back(sp.value);
  return out;
}

GateTable build_gate_table(const TrainedModel& model, const Scenario& sc,
                           const Dataset& ds, const PriorTable& priors,
                           const GateConfig& gc) {
  std::vector<int> seen, held;
  split_sites(ds.sites(), seen, held);
  GateTable table;
  for (int site : seen) {
    const auto pairs = ds.select(site, Role::Train);
    if (pairs.empty()) continue;
    const ReferenceScaffold scaffold =
        scaffold_from_dataset(ds, site, 0, scaffold_seed(site));
    const auto preds =
        run_site(Regime::Residual, model, nullptr, sc, pairs, scaffold, &priors);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      GateRow r;
      r.site = site;
      r.target_id = target_id_of(sc, *pairs[i]);
      r.prior = model.std.standardize(preds[i].prior_dbm);
      r.ehat = preds[i].ehat_std;
      r.abs_ehat = std::abs(preds[i].ehat_std);
      r.grad_mag = preds[i].grad_mag;
      r.local_std = preds[i].local_std;
      r.label = model.std.standardize(pairs[i]->rss_dbm);
      r.gamma_star = oracle_gamma(r.label - r.prior, r.ehat, gc.eps_e);
      r.gamma_fit = 0.0;
      table.rows.push_back(r);
    }
  }
  if (table.rows.empty())
    throw ValidationError("build_gate_table: no supervised train pairs");
  return table;
}

namespace {

ParamStore init_gate_params(std::uint64_t seed) {
  ParamStore ps;
  ps["gate.h.w"] = init_params(5, 32, 5, name_seed(seed, "gate.h.w"));
  ps["gate.h.b"] = Array(1, 32);
  ps["gate.out.w"] = init_params(32, 1, 32, name_seed(seed, "gate.out.w"));
  ps["gate.out.b"] = Array(1, 1);
  return ps;
}

Tape::Id gate_forward(Tape& tape, const BoundParams& bp, Tape::Id u) {
  const Tape::Id h = tape.tanh_(
      tape.add(tape.matmul(u, bp.at("gate.h.w")), bp.at("gate.h.b")));
  return tape.sigmoid_(
      tape.add(tape.matmul(h, bp.at("gate.out.w")), bp.at("gate.out.b")));
}

}  // namespace

GateModel fit_gate(const TrainedModel& frozen, GateTable& table, const GateConfig& gc) {
  if (table.rows.empty()) throw ValidationError("fit_gate: empty gate table");
  const std::uint64_t frozen_before = hash_params(frozen.params);

  GateModel gm;
  gm.cfg = gc;
  gm.params = init_gate_params(gc.seed);
  Adam opt(AdamConfig{gc.lr, 0.9, 0.999, 1e-8});
  Rng order = Rng(gc.seed).fork("order");

  std::vector<int> idx(table.rows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= gc.epochs; ++epoch) {
    order.shuffle(idx);
    for (std::size_t begin = 0; begin < idx.size(); begin += static_cast<std::size_t>(gc.batch)) {
      const std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(gc.batch));
      Tape tape;
      BoundParams bp = bind_params(tape, gm.params, true);

      Tape::Id loss = -1;
      double weight_sum = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const GateRow& r = table.rows[static_cast<std::size_t>(idx[k])];
        const Tape::Id u = tape.constant(
            gate_features(r.prior, r.ehat, r.grad_mag, r.local_std));
        const Tape::Id g = gate_forward(tape, bp, u);
        Tape::Id term = -1;
        if (gc.recomposition_loss) {
          // (prior + g*ehat - label)^2, all in standardized units.
          const Tape::Id err = tape.add_const(tape.scale(g, r.ehat), r.prior - r.label);
          term = tape.mul(err, err);
          weight_sum += 1.0;
        } else {
          const double w = r.ehat * r.ehat;
          term = tape.scale(
              tape.huber(g, tape.constant(Array::row_vec({r.gamma_star})), gc.huber_delta),
              w);
          weight_sum += w;
        }
        loss = (loss < 0) ? term : tape.add(loss, term);
      }
      if (weight_sum <= 0.0) continue;  // all-tiny residual batch carries no signal
      loss = tape.scale(loss, 1.0 / weight_sum);
      tape.backward(loss);
      opt.step(gm.params, tape.param_grads());
    }
  }

  for (GateRow& r : table.rows)
    r.gamma_fit = gate_value(gm, gate_features(r.prior, r.ehat, r.grad_mag, r.local_std));

  if (hash_params(frozen.params) != frozen_before)
    throw StateError("fit_gate: encoder or readout parameters changed during the fit");
  return gm;
}

double gate_value(const GateModel& g, const Array& features) {
  Array h = matmul(features, g.params.at("gate.h.w"));
  const Array& b1 = g.params.at("gate.h.b");
  for (int c = 0; c < h.cols; ++c) h.at(0, c) = std::tanh(h.at(0, c) + b1.at(0, c));
  const Array o = matmul(h, g.params.at("gate.out.w"));
  const double z = o.at(0, 0) + g.params.at("gate.out.b").at(0, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

void save_gate(const GateModel& g, const std::string& path) {
  Checkpoint ck;
  ck.params = g.params;
  ck.meta["regime"] = "gate";
  ck.meta["eps_e"] = f64_exact(g.cfg.eps_e);
  ck.meta["huber_delta"] = f64_exact(g.cfg.huber_delta);
  ck.meta["step_m"] = f64_exact(g.cfg.step_m);
  ck.meta["recomposition_loss"] = g.cfg.recomposition_loss ? "1" : "0";
  ck.save(path);
}

GateModel load_gate(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.meta_str("regime") != "gate")
    throw ValidationError(path + ": not a gate checkpoint");
  GateModel g;
  g.params = ck.params;
  g.cfg.eps_e = ck.meta_f64("eps_e");
  g.cfg.huber_delta = ck.meta_f64("huber_delta");
  g.cfg.step_m = ck.meta_f64("step_m");
  g.cfg.recomposition_loss = ck.meta_str("recomposition_loss") == "1";
  return g;
}

std::vector<MetricsRow> evaluate(Regime regime, const TrainedModel& model,
                                 const GateModel* gate, const Scenario& sc,
                                 const Dataset& ds, Role split,
                                 const PriorTable* priors) {
  std::vector<MetricsRow> out;
  double pooled_se = 0.0, pooled_ae = 0.0;
  long pooled_n = 0;
  for (int site : ds.sites()) {
    const auto pairs = ds.select(site, split);
    if (pairs.empty()) continue;
    const ReferenceScaffold scaffold =
        scaffold_from_dataset(ds, site, 0, scaffold_seed(site));
    const std::vector<double> preds =
        predict_site(regime, model, gate, sc, pairs, scaffold, priors);
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double err = preds[i] - pairs[i]->rss_dbm;
      se += err * err;
      ae += std::abs(err);
    }
    MetricsRow row;
    row.site = std::to_string(site);
    row.split = role_name(split);
    row.regime = regime_name(regime);
    row.n = static_cast<long>(pairs.size());
    row.rmse_db = std::sqrt(se / static_cast<double>(pairs.size()));
    row.mae_db = ae / static_cast<double>(pairs.size());
    out.push_back(row);
    pooled_se += se;
    pooled_ae += ae;
    pooled_n += static_cast<long>(pairs.size());
  }
  if (pooled_n == 0) throw ValidationError("evaluate: no pairs in the requested split");
  MetricsRow all;
  all.site = "all";
  all.split = role_name(split);
  all.regime = regime_name(regime);
  all.n = pooled_n;
  all.rmse_db = std::sqrt(pooled_se / static_cast<double>(pooled_n));
  all.mae_db = pooled_ae / static_cast<double>(pooled_n);
  out.push_back(all);
  return out;
}

void save_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream f = open_out(path);
  f << "site,split,regime,rmse_db,mae_db,n\n";
  for (const MetricsRow& r : rows)
    f << r.site << ',' << r.split << ',' << r.regime << ',' << fmt_f64(r.rmse_db) << ','
      << fmt_f64(r.mae_db) << ',' << r.n << '\n';
}

}  // namespace raymap
