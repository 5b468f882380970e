#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "raymap/csv.hpp"
#include "raymap/errors.hpp"
#include "raymap/regimes.hpp"
#include "raymap/rng.hpp"

using namespace raymap;

namespace {

Scenario tiny_scenario() {
  Scenario sc;
  sc.xmin = 0.0;
  sc.ymin = 0.0;
  sc.xmax = 40.0;
  sc.ymax = 40.0;
  sc.bin_size_m = 2.0;
  sc.transmitters = {{1, 8.0, 8.0, 24.0}, {2, 32.0, 30.0, 22.0}, {3, 20.0, 34.0, 26.0}};
  sc.shadow_std_db = 4.0;
  sc.pathloss_exp = 3.0;
  sc.wall_loss_db = 10.0;
  sc.seed = 311;
  return sc;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.enc.bins = 8;
  mc.enc.comp_width = 4;
  mc.enc.latent = 8;
  mc.enc.branch_width = 4;
  mc.enc.ref_hidden = 8;
  mc.enc.edge_hidden = 6;
  mc.enc.edge_width = 5;
  mc.enc.r0 = 30.0;
  mc.k_ref = 4;
  mc.k_global = 2;
  return mc;
}

TrainConfig fast_train() {
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 64;
  tc.seed = 5;
  return tc;
}

// Gate whose output is the constant sigmoid(bias), features ignored.
GateModel constant_gate(double gamma) {
  GateModel g;
  g.params["gate.h.w"] = Array(5, 32);
  g.params["gate.h.b"] = Array(1, 32);
  g.params["gate.out.w"] = Array(32, 1);
  Array b(1, 1);
  b.at(0, 0) = std::log(gamma / (1.0 - gamma));
  g.params["gate.out.b"] = b;
  return g;
}

// Prior table whose prior equals the sample's label plus a per-row offset
// cycling through `offsets`, with flat variation descriptors.
PriorTable offset_priors(const Scenario& sc, const Dataset& ds,
                         const std::vector<double>& offsets) {
  PriorTable pt;
  std::size_t k = 0;
  for (const Sample& s : ds.samples) {
    if (s.role != Role::Train && s.role != Role::Eval) continue;
    PriorRow r;
    r.site = s.site;
    r.target_id = target_id_of(sc, s);
    r.x = s.x;
    r.y = s.y;
    r.prior_dbm = s.rss_dbm + offsets[k % offsets.size()];
    r.krig_var = 1.0;
    r.grad_mag = 0.0;
    r.local_std = 0.0;
    pt.rows.push_back(r);
    ++k;
  }
  return pt;
}

}  // namespace

TEST_CASE("oracle attenuation closed form") {
  CHECK(oracle_gamma(2.0, 4.0, 1e-3) == 0.5);
  CHECK(oracle_gamma(-1.0, 2.0, 1e-3) == 0.0);
  CHECK(oracle_gamma(5.0, 2.0, 1e-3) == 1.0);
  CHECK(oracle_gamma(3.0, 1e-4, 1e-3) == 0.0);   // |ehat| under the threshold
  CHECK(oracle_gamma(3.0, -1e-4, 1e-3) == 0.0);
  CHECK(oracle_gamma(-2.0, -4.0, 1e-3) == 0.5);  // sign-aligned negatives
  CHECK_THROWS_AS(oracle_gamma(std::nan(""), 1.0, 1e-3), ValidationError);

  // never worse than keeping or dropping the full correction
  Rng rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    const double e = rng.uniform(-3.0, 3.0);
    const double ehat = rng.uniform(-3.0, 3.0);
    const double g = oracle_gamma(e, ehat, 1e-3);
    CHECK(g >= 0.0);
    CHECK(g <= 1.0);
    const double err_g = std::abs(e - g * ehat);
    CHECK(err_g <= std::abs(e) + 1e-12);
    CHECK(err_g <= std::abs(e - ehat) + 1e-12);
    if (std::abs(ehat) > 1e-3 && e / ehat >= 0.0 && e / ehat <= 1.0)
      CHECK(err_g <= 1e-9);  // recomposition identity inside the clip window
  }
}

TEST_CASE("gate feature assembly") {
  const Array f = gate_features(-0.7, 1.3, 2.5, 4.0);
  REQUIRE(f.rows == 1);
  REQUIRE(f.cols == 5);
  CHECK(f.at(0, 0) == -0.7);
  CHECK(f.at(0, 1) == 1.3);
  CHECK(f.at(0, 2) == 1.3);
  CHECK(f.at(0, 3) == 2.5);
  CHECK(f.at(0, 4) == 4.0);
  CHECK(gate_features(0.0, -1.3, 0.0, 0.0).at(0, 2) == 1.3);
}

TEST_CASE("standardizer moments come from seen-site observations only") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const Standardizer st = fit_standardizer(ds);

  double sum = 0.0;
  long n = 0;
  for (const Sample& s : ds.samples)
    if (s.role == Role::Obs && s.site % 2 != 0) {
      sum += s.rss_dbm;
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (const Sample& s : ds.samples)
    if (s.role == Role::Obs && s.site % 2 != 0) var += (s.rss_dbm - mean) * (s.rss_dbm - mean);
  var /= static_cast<double>(n);

  CHECK(st.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(st.std == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK(st.destandardize(st.standardize(-77.25)) == doctest::Approx(-77.25).epsilon(1e-12));

  Dataset flat;
  Sample s;
  s.site = 1;
  s.role = Role::Obs;
  s.rss_dbm = -60.0;
  flat.samples = {s, s, s};
  CHECK(fit_standardizer(flat).std == 1.0);  // degenerate spread floors to 1
}

TEST_CASE("coordinate scale is half the dataset bounding-box diagonal") {
  Dataset ds;
  for (double v : {0.0, 30.0}) {
    Sample s;
    s.site = 1;
    s.role = Role::Obs;
    s.x = v;
    s.y = v * 2.0;
    ds.samples.push_back(s);
  }
  CHECK(dataset_r0(ds) == doctest::Approx(0.5 * std::hypot(30.0, 60.0)).epsilon(1e-12));

  Dataset one;
  one.samples = {ds.samples[0]};
  CHECK(dataset_r0(one) == 1.0);  // degenerate box
}

TEST_CASE("regime names round trip") {
  CHECK(regime_name(Regime::Direct) == std::string("direct"));
  CHECK(regime_name(Regime::Residual) == std::string("residual"));
  CHECK(regime_name(Regime::Gated) == std::string("gated"));
  CHECK(regime_from_name("gated") == Regime::Gated);
  CHECK_THROWS_AS(regime_from_name("bogus"), ValidationError);
}

TEST_CASE("training is reproducible and enforces the in-batch neighbor rule") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const TrainConfig tc = fast_train();

  TrainStats stats1, stats2;
  const TrainedModel m1 = train_direct(sc, ds, tiny_model(), tc, &stats1);
  const TrainedModel m2 = train_direct(sc, ds, tiny_model(), tc, &stats2);

  CHECK(stats1.loss_trace.size() == static_cast<std::size_t>(tc.epochs));
  for (double l : stats1.loss_trace) {
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
  }
  CHECK(stats1.neighbor_checks > 0);        // the rule is being asserted
  CHECK(stats1.neighbor_violations == 0);   // and never tripped
  CHECK(stats1.neighbor_checks == stats2.neighbor_checks);

  REQUIRE(m1.params.size() == m2.params.size());
  for (const auto& [name, arr] : m1.params) {
    const Array& other = m2.params.at(name);
    REQUIRE(arr.same_shape(other));
    for (std::size_t i = 0; i < arr.size(); ++i) CHECK(arr.data[i] == other.data[i]);
  }
  for (std::size_t e = 0; e < stats1.loss_trace.size(); ++e)
    CHECK(stats1.loss_trace[e] == stats2.loss_trace[e]);
  CHECK(m1.regime == "direct");
}

TEST_CASE("residual training wants a prior row for every train pair") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  PriorTable pt = offset_priors(sc, ds, {0.5, -1.0, 2.0});

  const TrainedModel m = train_residual(sc, ds, pt, tiny_model(), fast_train());
  CHECK(m.regime == "residual");

  PriorTable gutted;
  for (const PriorRow& r : pt.rows)
    if (r.site != 1 || gutted.rows.size() >= pt.rows.size() / 2) gutted.rows.push_back(r);
  bool threw = false;
  try {
    train_residual(sc, ds, gutted, tiny_model(), fast_train());
  } catch (const ValidationError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("no prior row") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("model checkpoints round trip through disk") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const TrainedModel m = train_direct(sc, ds, tiny_model(), fast_train());

  const std::string path = "tmp_regimes_model.json";
  save_model(m, path);
  const TrainedModel back = load_model(path);
  std::remove(path.c_str());

  CHECK(back.regime == m.regime);
  CHECK(back.std.mean == m.std.mean);
  CHECK(back.std.std == m.std.std);
  CHECK(back.cfg.enc.r0 == m.cfg.enc.r0);
  CHECK(back.cfg.enc.latent == m.cfg.enc.latent);
  CHECK(back.cfg.k_ref == m.cfg.k_ref);
  REQUIRE(back.params.size() == m.params.size());
  for (const auto& [name, arr] : m.params) {
    const Array& other = back.params.at(name);
    REQUIRE(arr.same_shape(other));
    for (std::size_t i = 0; i < arr.size(); ++i) CHECK(arr.data[i] == other.data[i]);
  }
}

TEST_CASE("local embedding cache: one evaluation per target, bitwise reuse") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const ModelConfig mc = tiny_model();
  const ParamStore params = init_model_params(mc, 17);
  Standardizer st = fit_standardizer(ds);

  const ReferenceScaffold scaffold = scaffold_from_dataset(ds, 1, 0, 2);
  std::vector<std::pair<int, QueryPoint>> targets;
  const auto eval_rows = ds.select(1, Role::Eval);
  for (std::size_t i = 0; i < 12 && i < eval_rows.size(); ++i)
    targets.push_back({static_cast<int>(i), {{eval_rows[i]->x, eval_rows[i]->y},
                                             eval_rows[i]->los}});

  const Point tx{sc.transmitter(1).x, sc.transmitter(1).y};
  const LocalCache cache = cache_local_embeddings(mc, params, targets, tx, scaffold, st);
  CHECK(cache.evals == static_cast<int>(targets.size()));
  CHECK(cache.z.size() == targets.size());
  CHECK(cache.ops > 0);

  for (const auto& [id, q] : targets) {
    Tape t;
    const BoundParams bp = bind_params(t, params, false);
    const Array direct =
        t.value(local_stage(t, bp, mc, q, tx, scaffold, st.mean, st.std));
    const Array& cached = cache.z.at(id);
    REQUIRE(cached.same_shape(direct));
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(cached.data[i] == direct.data[i]);
  }
}

TEST_CASE("a zeroed residual head reproduces the prior exactly") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const PriorTable pt = offset_priors(sc, ds, {0.0, 3.0, -3.0, 4.0});

  TrainedModel m;
  m.regime = "residual";
  m.cfg = tiny_model();
  m.params = init_model_params(m.cfg, 23);
  for (auto& [name, arr] : m.params)
    if (name.rfind("head.residual.", 0) == 0) arr = Array(arr.rows, arr.cols);
  m.std = fit_standardizer(ds);

  const auto pairs = ds.select(1, Role::Eval);
  const ReferenceScaffold scaffold = scaffold_from_dataset(ds, 1, 0, 2);
  const std::vector<double> pred =
      predict_site(Regime::Residual, m, nullptr, sc, pairs, scaffold, &pt);
  REQUIRE(pred.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PriorRow* row = pt.find(1, target_id_of(sc, *pairs[i]));
    REQUIRE(row != nullptr);
    CHECK(pred[i] == row->prior_dbm);
  }
}

TEST_CASE("metrics arithmetic through a prior-reproducing model") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);

  TrainedModel m;
  m.regime = "residual";
  m.cfg = tiny_model();
  m.params = init_model_params(m.cfg, 23);
  for (auto& [name, arr] : m.params)
    if (name.rfind("head.residual.", 0) == 0) arr = Array(arr.rows, arr.cols);
  m.std = fit_standardizer(ds);

  SUBCASE("zero offsets give zero error") {
    const PriorTable pt = offset_priors(sc, ds, {0.0});
    const auto rows = evaluate(Regime::Residual, m, nullptr, sc, ds, Role::Eval, &pt);
    REQUIRE(!rows.empty());
    for (const MetricsRow& r : rows) {
      CHECK(r.rmse_db == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(r.mae_db == doctest::Approx(0.0).epsilon(1e-12));
    }
  }
  SUBCASE("symmetric +-3 offsets") {
    const PriorTable pt = offset_priors(sc, ds, {3.0, -3.0});
    const auto rows = evaluate(Regime::Residual, m, nullptr, sc, ds, Role::Eval, &pt);
    for (const MetricsRow& r : rows) {
      CHECK(r.rmse_db == doctest::Approx(3.0).epsilon(1e-9));
      CHECK(r.mae_db == doctest::Approx(3.0).epsilon(1e-9));
    }
  }
  SUBCASE("offsets 0 and 4 in alternation") {
    const std::vector<double> offsets = {0.0, 4.0};
    const PriorTable pt = offset_priors(sc, ds, offsets);
    const auto rows = evaluate(Regime::Residual, m, nullptr, sc, ds, Role::Eval, &pt);

    // independent replay of the cyclic offset assignment
    std::map<std::string, std::pair<double, long>> se;  // site -> (sum sq err, n)
    std::map<std::string, double> ae;
    std::size_t k = 0;
    for (const Sample& s : ds.samples) {
      if (s.role != Role::Train && s.role != Role::Eval) continue;
      const double off = offsets[k % offsets.size()];
      ++k;
      if (s.role != Role::Eval) continue;
      for (const std::string key : {std::to_string(s.site), std::string("all")}) {
        se[key].first += off * off;
        se[key].second += 1;
        ae[key] += std::abs(off);
      }
    }
    REQUIRE(!rows.empty());
    for (const MetricsRow& r : rows) {
      REQUIRE(se.count(r.site) == 1);
      const auto& [sq, n] = se.at(r.site);
      CHECK(r.n == n);
      CHECK(r.rmse_db == doctest::Approx(std::sqrt(sq / static_cast<double>(n))).epsilon(1e-9));
      CHECK(r.mae_db == doctest::Approx(ae.at(r.site) / static_cast<double>(n)).epsilon(1e-9));
    }
    CHECK(rows.back().site == "all");
  }
}

TEST_CASE("gated predictions recompose prior and residual through the gate") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const PriorTable pt = offset_priors(sc, ds, {1.5, -2.0, 0.5});

  TrainedModel m;
  m.regime = "residual";
  m.cfg = tiny_model();
  m.params = init_model_params(m.cfg, 29);
  m.std = fit_standardizer(ds);

  const GateModel quarter = constant_gate(0.25);
  CHECK(gate_value(quarter, gate_features(0.3, -1.0, 2.0, 1.0)) ==
        doctest::Approx(0.25).epsilon(1e-12));

  const auto pairs = ds.select(1, Role::Eval);
  const ReferenceScaffold scaffold = scaffold_from_dataset(ds, 1, 0, 2);
  const auto res = predict_site(Regime::Residual, m, nullptr, sc, pairs, scaffold, &pt);
  const auto gated = predict_site(Regime::Gated, m, &quarter, sc, pairs, scaffold, &pt);
  REQUIRE(res.size() == gated.size());
  for (std::size_t i = 0; i < res.size(); ++i) {
    const PriorRow* row = pt.find(1, target_id_of(sc, *pairs[i]));
    REQUIRE(row != nullptr);
    CHECK(gated[i] ==
          doctest::Approx(row->prior_dbm + 0.25 * (res[i] - row->prior_dbm)).epsilon(1e-12));
  }

  // -70 dBm prior, 4 dB correction, quarter gate -> -69
  CHECK(-70.0 + 0.25 * 4.0 == -69.0);

  CHECK_THROWS_AS(predict_site(Regime::Gated, m, nullptr, sc, pairs, scaffold, &pt),
                  StateError);
  CHECK_THROWS_AS(predict_site(Regime::Residual, m, nullptr, sc, pairs, scaffold, nullptr),
                  ValidationError);
}

TEST_CASE("gate table round trip and header validation") {
  GateTable t;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    GateRow r;
    r.site = 1 + static_cast<int>(rng.next_below(3));
    r.target_id = i;
    r.prior = rng.uniform(-2.0, 2.0);
    r.ehat = rng.uniform(-2.0, 2.0);
    r.abs_ehat = std::abs(r.ehat);
    r.grad_mag = rng.uniform(0.0, 4.0);
    r.local_std = rng.uniform(0.0, 4.0);
    r.label = rng.uniform(-2.0, 2.0);
    r.gamma_star = oracle_gamma(r.label - r.prior, r.ehat, 1e-3);
    r.gamma_fit = 0.0;
    t.rows.push_back(r);
  }
  const std::string p1 = "tmp_gate_rt1.csv", p2 = "tmp_gate_rt2.csv";
  t.save(p1);
  GateTable::load(p1).save(p2);
  CHECK(read_file(p1) == read_file(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  const std::string bad = "tmp_gate_bad.csv";
  {
    std::ofstream f(bad);
    f << "site,wrong,header\n";
  }
  CHECK_THROWS_AS(GateTable::load(bad), ValidationError);
  std::remove(bad.c_str());
}

TEST_CASE("gate fit separates always-keep from always-drop populations") {
  // Synthetic fit split: class A wants gamma = 1 (label = prior + ehat),
  // class B wants gamma = 0 (label = prior).  Feature-wise the classes
  // differ in |ehat| and both variation descriptors.
  auto build_table = [] {
    GateTable t;
    Rng rng(41);
    for (int i = 0; i < 400; ++i) {
      GateRow r;
      r.site = 1;
      r.target_id = i;
      r.prior = rng.uniform(-1.5, 1.5);
      const bool keep = i % 2 == 0;
      r.ehat = (keep ? 1.5 : 0.8) * (rng.next_below(2) == 0 ? 1.0 : -1.0) +
               rng.uniform(-0.05, 0.05);
      r.abs_ehat = std::abs(r.ehat);
      r.grad_mag = keep ? rng.uniform(0.1, 0.5) : rng.uniform(3.5, 4.5);
      r.local_std = keep ? rng.uniform(0.2, 0.6) : rng.uniform(2.5, 3.5);
      r.label = keep ? r.prior + r.ehat : r.prior;
      r.gamma_star = oracle_gamma(r.label - r.prior, r.ehat, 1e-3);
      t.rows.push_back(r);
    }
    return t;
  };

  TrainedModel frozen;
  frozen.regime = "residual";
  frozen.cfg = tiny_model();
  frozen.params = init_model_params(frozen.cfg, 57);
  frozen.std = Standardizer{};

  GateConfig gc;
  gc.epochs = 300;
  gc.batch = 128;

  GateTable table = build_table();
  const GateModel gate = fit_gate(frozen, table, gc);
  int saturated = 0;
  for (const GateRow& r : table.rows) {
    CHECK(r.gamma_fit >= 0.0);
    CHECK(r.gamma_fit <= 1.0);
    const double g = gate_value(gate, gate_features(r.prior, r.ehat, r.grad_mag, r.local_std));
    CHECK(g == doctest::Approx(r.gamma_fit).epsilon(1e-12));
    // every row lands on the right side; most should saturate
    const bool keep = r.target_id % 2 == 0;
    if (keep) {
      CHECK(r.gamma_star == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(g > 0.5);
      if (g >= 0.9) ++saturated;
    } else {
      CHECK(r.gamma_star == 0.0);
      CHECK(g < 0.5);
      if (g <= 0.1) ++saturated;
    }
  }
  CHECK(saturated >= 380);

  // recomposition objective finds the same split
  GateConfig gc2 = gc;
  gc2.recomposition_loss = true;
  gc2.epochs = 120;
  GateTable table2 = build_table();
  const GateModel gate2 = fit_gate(frozen, table2, gc2);
  int right_side = 0;
  for (const GateRow& r : table2.rows) {
    const double g =
        gate_value(gate2, gate_features(r.prior, r.ehat, r.grad_mag, r.local_std));
    const bool keep = r.target_id % 2 == 0;
    if (keep && g > 0.5) ++right_side;
    if (!keep && g < 0.5) ++right_side;
  }
  CHECK(right_side >= 390);

  const std::string path = "tmp_gate_model.json";
  save_gate(gate, path);
  const GateModel back = load_gate(path);
  std::remove(path.c_str());
  CHECK(back.cfg.eps_e == gate.cfg.eps_e);
  CHECK(back.cfg.recomposition_loss == gate.cfg.recomposition_loss);
  const Array probe = gate_features(0.4, 1.0, 1.0, 1.0);
  CHECK(gate_value(back, probe) == gate_value(gate, probe));
}

TEST_CASE("gate table construction runs the residual model over the fit split") {
  const Scenario sc = tiny_scenario();
  const Dataset ds = generate_dataset(sc);
  const PriorTable pt = offset_priors(sc, ds, {1.0, -1.5, 0.25, 2.0});
  const TrainedModel m = train_residual(sc, ds, pt, tiny_model(), fast_train());

  GateConfig gc;
  const GateTable table = build_gate_table(m, sc, ds, pt, gc);
  std::size_t want = 0;
  for (int site : ds.sites())
    if (site % 2 != 0) want += ds.select(site, Role::Train).size();
  CHECK(table.rows.size() == want);

  for (const GateRow& r : table.rows) {
    CHECK(r.site % 2 != 0);
    CHECK(r.abs_ehat == std::abs(r.ehat));
    CHECK(r.gamma_star == oracle_gamma(r.label - r.prior, r.ehat, gc.eps_e));
  }
}

TEST_CASE("target ids are row-major bin ids") {
  const Scenario sc = tiny_scenario();  // 20x20 bins
  Sample s;
  s.bin_row = 3;
  s.bin_col = 7;
  CHECK(target_id_of(sc, s) == 3 * 20 + 7);
  s.bin_row = 0;
  s.bin_col = 0;
  CHECK(target_id_of(sc, s) == 0);
}
