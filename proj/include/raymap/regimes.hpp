#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "raymap/dataset.hpp"
#include "raymap/hgat.hpp"
#include "raymap/kriging.hpp"

namespace raymap {

// Affine map between dBm labels and the unit scale the model trains in.
// Moments come from seen-site observations only, so held-out labels never
// leak into the preprocessing.
struct Standardizer {
  double mean = 0.0;
  double std = 1.0;

  double standardize(double y) const { return (y - mean) / std; }
  double destandardize(double s) const { return mean + s * std; }
};

Standardizer fit_standardizer(const Dataset& ds);

// Coordinate normalization scale: half the diagonal of the dataset's
// bounding box, so normalized positions live in O(1).
double dataset_r0(const Dataset& ds);

enum class Regime { Direct, Residual, Gated };
const char* regime_name(Regime r);
Regime regime_from_name(const std::string& s);

struct TrainConfig {
  int epochs = 20;
  int batch = 128;
  double lr = 1e-3;
  double huber_delta = 1.0;
  std::uint64_t seed = 1;
};

struct TrainStats {
  std::vector<double> loss_trace;  // mean train loss per epoch
  long neighbor_checks = 0;        // global-neighbor memberships verified
  long neighbor_violations = 0;    // neighbors outside their own mini-batch
};

// Encoder plus readout weights with everything needed to run them again:
// the architecture config (including the coordinate scale) and the label
// standardizer.
struct TrainedModel {
  std::string regime;  // "direct" or "residual"
  ModelConfig cfg;
  ParamStore params;
  Standardizer std;
};

void save_model(const TrainedModel& m, const std::string& path);
TrainedModel load_model(const std::string& path);

// Mini-batch training of the stand-alone regime.  Every global neighborhood
// is drawn from the current batch's same-site targets; the loop verifies
// that rule on every edge and aborts on a violation.  Bit-reproducible for
// a fixed seed.
TrainedModel train_direct(const Scenario& sc, const Dataset& ds, ModelConfig cfg,
                          const TrainConfig& tc, TrainStats* stats = nullptr);

// Same loop with the residual readout supervised against y - prior, both in
// standardized units.  Missing prior rows are an error naming the pair.
TrainedModel train_residual(const Scenario& sc, const Dataset& ds,
                            const PriorTable& priors, ModelConfig cfg,
                            const TrainConfig& tc, TrainStats* stats = nullptr);

struct GateConfig {
  double eps_e = 1e-3;        // residual magnitudes at or below this gate to 0
  double huber_delta = 0.25;  // fit loss threshold (targets live in [0,1])
  double step_m = 2.0;        // prior variation stencil spacing
  bool recomposition_loss = false;  // fit on recomposition MSE instead
  int epochs = 200;
  int batch = 128;
  double lr = 1e-2;
  std::uint64_t seed = 7;
};

// Closed-form per-sample attenuation minimizing (prior + g*ehat - y)^2 over
// g in [0,1]: clip(e/ehat) with tiny residuals suppressed to 0.
double oracle_gamma(double e, double ehat, double eps_e);

// Gate input assembly: (prior, ehat, |ehat|, grad_mag, local_std), the first
// three standardized, the descriptors scaled by 1 dB/m and 1 dB.
Array gate_features(double prior_std, double ehat_std, double grad_mag,
                    double local_std);

struct GateRow {
  int site = 0;
  long target_id = 0;
  double prior = 0.0;     // standardized
  double ehat = 0.0;      // standardized
  double abs_ehat = 0.0;
  double grad_mag = 0.0;
  double local_std = 0.0;
  double label = 0.0;  // standardized y
  double gamma_star = 0.0;
  double gamma_fit = 0.0;
};

struct GateTable {
  std::vector<GateRow> rows;

  void save(const std::string& path) const;
  static GateTable load(const std::string& path);
};

// Residual-model predictions and oracle attenuations over every supervised
// train pair (the gate's fit split).
GateTable build_gate_table(const TrainedModel& model, const Scenario& sc,
                           const Dataset& ds, const PriorTable& priors,
                           const GateConfig& gc);

struct GateModel {
  ParamStore params;
  GateConfig cfg;
};

void save_gate(const GateModel& g, const std::string& path);
GateModel load_gate(const std::string& path);

// Post-hoc calibration: a sigmoid-headed MLP regressed onto the oracle
// attenuations with weight ehat^2 (or onto recomposition MSE when
// configured).  The residual model is read-only here; the fit aborts if its
// parameters change.  Fills the table's gamma_fit column.
GateModel fit_gate(const TrainedModel& frozen, GateTable& table, const GateConfig& gc);

// Fitted gate output for one feature row, always in [0,1].
double gate_value(const GateModel& g, const Array& features);

// Local embeddings for a set of (target id, query) pairs, one local-stage
// evaluation each.  `evals` counts them; `ops` accumulates recorded
// primitive operations.
struct LocalCache {
  std::map<int, Array> z;
  int evals = 0;
  long ops = 0;
};

LocalCache cache_local_embeddings(const ModelConfig& cfg, const ParamStore& params,
                                  const std::vector<std::pair<int, QueryPoint>>& targets,
                                  Point tx_pos, const ReferenceScaffold& scaffold,
                                  const Standardizer& std);

// Batched inference over one site's pairs.  Global neighborhoods are the
// k_global nearest pairs within this evaluated set; their local embeddings
// come from one shared cache.  Residual and gated regimes require a prior
// row per pair; the gated regime additionally requires a fitted gate.
std::vector<double> predict_site(Regime regime, const TrainedModel& model,
                                 const GateModel* gate, const Scenario& sc,
                                 const std::vector<const Sample*>& pairs,
                                 const ReferenceScaffold& scaffold,
                                 const PriorTable* priors);

struct MetricsRow {
  std::string site;  // site id or "all" for the pooled row
  std::string split;
  std::string regime;
  double rmse_db = 0.0;
  double mae_db = 0.0;
  long n = 0;
};

// RMSE and MAE of a regime over every site with rows in `split`, one row
// per site plus a pooled row.
std::vector<MetricsRow> evaluate(Regime regime, const TrainedModel& model,
                                 const GateModel* gate, const Scenario& sc,
                                 const Dataset& ds, Role split,
                                 const PriorTable* priors);

void save_metrics(const std::vector<MetricsRow>& rows, const std::string& path);

// Row-major bin id of a sample within the scenario grid: the key that joins
// dataset rows to prior table rows.
long target_id_of(const Scenario& sc, const Sample& s);

}  // namespace raymap
