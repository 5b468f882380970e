#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "raymap/csv.hpp"
#include "raymap/dataset.hpp"
#include "raymap/kriging.hpp"
#include "raymap/regimes.hpp"
#include "raymap/scenario.hpp"

using namespace raymap;

namespace {

const std::string kCli = RAYMAP_CLI_PATH;
const std::string kConfig = std::string(RAYMAP_SOURCE_DIR) + "/configs/small_scenario.json";
const std::string kDir = "tmp_cli_art";

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > " + kDir + "/last_stdout.txt 2> " +
                          kDir + "/last_stderr.txt";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string art(const std::string& name) { return kDir + "/" + name; }

nlohmann::json load_json(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  nlohmann::json j;
  f >> j;
  return j;
}

}  // namespace

TEST_CASE("argument and file errors map to the documented exit codes") {
  std::filesystem::remove_all(kDir);
  std::filesystem::create_directories(kDir);

  CHECK(run("") == 2);                      // a subcommand is required
  CHECK(run("gen --bogus-flag x") == 2);    // unknown flag
  CHECK(run("gen --out " + art("x.csv") + " --config does_not_exist.json") == 3);
  CHECK(run("train --config " + kConfig + " --dataset missing.csv --regime residual --out " +
            art("m.ckpt")) == 3);  // unreadable input file is an IO failure
}

TEST_CASE("gen: counts, provenance, and byte determinism") {
  REQUIRE(run("gen --config " + kConfig + " --out " + art("ds.csv")) == 0);

  const Dataset ds = Dataset::load(art("ds.csv"));
  const Scenario sc = Scenario::from_json_file(kConfig);
  const int bins = sc.rows() * sc.cols();
  for (int site : ds.sites()) {
    CHECK(ds.select(site, Role::Grid).size() == static_cast<std::size_t>(bins));
    const long n_obs = round_half_up(0.05 * bins);
    CHECK(ds.select(site, Role::Obs).size() == static_cast<std::size_t>(n_obs));
    const long remaining = bins - n_obs;
    if (site % 2 != 0) {
      CHECK(ds.select(site, Role::Train).size() ==
            static_cast<std::size_t>(round_half_up(0.15 * static_cast<double>(remaining))));
    } else {
      CHECK(ds.select(site, Role::Train).empty());
    }
  }

  const nlohmann::json prov = load_json(art("ds.csv.provenance.json"));
  CHECK(prov.at("command") == "gen");
  CHECK(prov.at("seen_sites") == nlohmann::json::array({1}));
  CHECK(prov.at("held_out_sites") == nlohmann::json::array({2}));
  CHECK(prov.contains("config_hash"));
  CHECK(prov.at("counts").at("1").at("grid") == bins);

  REQUIRE(run("gen --config " + kConfig + " --out " + art("ds2.csv")) == 0);
  CHECK(read_file(art("ds.csv")) == read_file(art("ds2.csv")));
  CHECK(read_file(art("ds.csv.provenance.json")) == read_file(art("ds2.csv.provenance.json")));

  REQUIRE(run("gen --config " + kConfig + " --seed 123 --out " + art("ds3.csv")) == 0);
  CHECK(read_file(art("ds.csv")) != read_file(art("ds3.csv")));
  CHECK(load_json(art("ds3.csv.provenance.json")).at("seed") == 123);
}

TEST_CASE("prior: row count, determinism, spot values") {
  REQUIRE(run("prior --config " + kConfig + " --dataset " + art("ds.csv") + " --out " +
              art("prior.csv")) == 0);

  const Dataset ds = Dataset::load(art("ds.csv"));
  const Scenario sc = Scenario::from_json_file(kConfig);
  const PriorTable pt = PriorTable::load(art("prior.csv"));
  std::size_t want = 0;
  for (int site : ds.sites())
    want += ds.select(site, Role::Train).size() + ds.select(site, Role::Eval).size();
  CHECK(pt.rows.size() == want);

  REQUIRE(run("prior --config " + kConfig + " --dataset " + art("ds.csv") + " --out " +
              art("prior2.csv")) == 0);
  CHECK(read_file(art("prior.csv")) == read_file(art("prior2.csv")));

  const PriorEstimator est = make_site_estimator(sc, ds, 1);
  int checked = 0;
  for (const PriorRow& row : pt.rows) {
    if (row.site != 1 || checked >= 3) continue;
    // CSV carries %.6f, so compare at that resolution
    CHECK(row.prior_dbm == doctest::Approx(est.predict({row.x, row.y}).value).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked == 3);
}

TEST_CASE("train: artifacts, trace length, determinism, regime errors") {
  const std::string flags = " --epochs 3 --batch 64 --seed 9";
  REQUIRE(run("train --config " + kConfig + " --dataset " + art("ds.csv") +
              " --regime direct --out " + art("direct.ckpt") + flags) == 0);
  CHECK(std::filesystem::exists(art("direct.ckpt")));

  const std::string trace = read_file(art("direct.ckpt.trace.csv"));
  CHECK(trace.rfind("epoch,train_loss\n", 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 4);  // header + 3 epochs

  REQUIRE(run("train --config " + kConfig + " --dataset " + art("ds.csv") +
              " --regime direct --out " + art("direct2.ckpt") + flags) == 0);
  CHECK(read_file(art("direct.ckpt")) == read_file(art("direct2.ckpt")));

  // residual training requires the prior table
  CHECK(run("train --config " + kConfig + " --dataset " + art("ds.csv") +
            " --regime residual --out " + art("res.ckpt") + flags) == 2);
  REQUIRE(run("train --config " + kConfig + " --dataset " + art("ds.csv") +
              " --prior " + art("prior.csv") + " --regime residual --out " + art("res.ckpt") +
              flags) == 0);

  const nlohmann::json prov = load_json(art("res.ckpt.provenance.json"));
  CHECK(prov.at("regime") == "residual");
  CHECK(prov.at("neighbor_violations") == 0);
  CHECK(prov.at("neighbor_checks").get<long>() > 0);
}

TEST_CASE("gate: state errors, oracle column, determinism") {
  CHECK(run("gate --config " + kConfig + " --dataset " + art("ds.csv") + " --prior " +
            art("prior.csv") + " --checkpoint " + art("nope.ckpt") + " --out " +
            art("gate.json")) == 4);

  const std::string args = "gate --config " + kConfig + " --dataset " + art("ds.csv") +
                           " --prior " + art("prior.csv") + " --checkpoint " + art("res.ckpt");
  REQUIRE(run(args + " --out " + art("gate.json")) == 0);

  const GateTable table = GateTable::load(art("gate.json.table.csv"));
  const Dataset ds = Dataset::load(art("ds.csv"));
  CHECK(table.rows.size() == ds.select(1, Role::Train).size());
  for (const GateRow& r : table.rows) {
    // the CSV columns are rounded to 1e-6, so recomputing the oracle from them
    // lands near, not on, the stored value
    CHECK(r.gamma_star ==
          doctest::Approx(oracle_gamma(r.label - r.prior, r.ehat, 1e-3)).epsilon(1e-3));
    CHECK(r.gamma_fit >= 0.0);
    CHECK(r.gamma_fit <= 1.0);
  }

  REQUIRE(run(args + " --out " + art("gate2.json")) == 0);
  CHECK(read_file(art("gate.json")) == read_file(art("gate2.json")));
  CHECK(read_file(art("gate.json.table.csv")) == read_file(art("gate2.json.table.csv")));
}

TEST_CASE("eval: per-site and per-split rows, pooled Jensen, gate requirement") {
  CHECK(run("eval --config " + kConfig + " --dataset " + art("ds.csv") + " --prior " +
            art("prior.csv") + " --checkpoint " + art("res.ckpt") +
            " --regime gated --out " + art("should_fail.csv")) == 4);

  REQUIRE(run("eval --config " + kConfig + " --dataset " + art("ds.csv") + " --prior " +
              art("prior.csv") + " --checkpoint " + art("res.ckpt") + " --gate " +
              art("gate.json") + " --regime gated --out " + art("metrics.csv")) == 0);

  std::ifstream f(art("metrics.csv"));
  std::string line;
  std::getline(f, line);
  CHECK(line == "site,split,regime,rmse_db,mae_db,n");
  std::set<std::pair<std::string, std::string>> seen;
  while (std::getline(f, line)) {
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cols.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    REQUIRE(cols.size() == 6);
    seen.insert({cols[0], cols[1]});
    CHECK(std::stod(cols[3]) >= std::stod(cols[4]));  // rmse >= mae
    CHECK(cols[2] == "gated");
  }
  // site 1 trains and evals, site 2 only evals, pooled rows for both splits
  CHECK(seen.count({"1", "train"}) == 1);
  CHECK(seen.count({"1", "eval"}) == 1);
  CHECK(seen.count({"2", "eval"}) == 1);
  CHECK(seen.count({"2", "train"}) == 0);
  CHECK(seen.count({"all", "train"}) == 1);
  CHECK(seen.count({"all", "eval"}) == 1);
}

TEST_CASE("map: grid export, observed bins keep truth, PGM geometry") {
  CHECK(run("map --config " + kConfig + " --dataset " + art("ds.csv") + " --checkpoint " +
            art("direct.ckpt") + " --regime direct --site 77 --out " + art("bad")) == 2);

  REQUIRE(run("map --config " + kConfig + " --dataset " + art("ds.csv") + " --checkpoint " +
              art("direct.ckpt") + " --regime direct --site 1 --out " + art("map1")) == 0);

  const Scenario sc = Scenario::from_json_file(kConfig);
  const Dataset ds = Dataset::load(art("ds.csv"));
  std::set<std::pair<int, int>> obs_bins;
  for (const Sample* s : ds.select(1, Role::Obs)) obs_bins.insert({s->bin_row, s->bin_col});

  std::ifstream f(art("map1.csv"));
  std::string line;
  std::getline(f, line);
  CHECK(line == "row,col,x,y,truth,pred,error");
  long rows = 0;
  long obs_hits = 0;
  while (std::getline(f, line)) {
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cols.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    REQUIRE(cols.size() == 7);
    const double truth = std::stod(cols[4]), pred = std::stod(cols[5]),
                 err = std::stod(cols[6]);
    CHECK(err == doctest::Approx(pred - truth).epsilon(2e-6));
    if (obs_bins.count({std::stoi(cols[0]), std::stoi(cols[1])})) {
      CHECK(cols[4] == cols[5]);  // observed bins are filled with ground truth
      ++obs_hits;
    }
    ++rows;
  }
  CHECK(rows == sc.rows() * sc.cols());
  CHECK(obs_hits == static_cast<long>(obs_bins.size()));

  const std::string pgm = read_file(art("map1.pgm"));
  const std::string header =
      "P5\n" + std::to_string(sc.cols()) + " " + std::to_string(sc.rows()) + "\n255\n";
  REQUIRE(pgm.rfind(header, 0) == 0);
  CHECK(pgm.size() == header.size() + static_cast<std::size_t>(sc.rows() * sc.cols()));

  const nlohmann::json side = load_json(art("map1.json"));
  CHECK(side.at("rows") == sc.rows());
  CHECK(side.at("cols") == sc.cols());
  CHECK(side.at("site") == 1);
  CHECK(side.at("min_dbm").get<double>() < side.at("max_dbm").get<double>());
}
