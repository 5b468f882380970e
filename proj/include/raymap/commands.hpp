#pragma once

#include <cstdint>
#include <string>

#include "raymap/regimes.hpp"

namespace raymap {

// Subcommand bodies shared by the CLI binary and the test suites.  Every
// command is a pure function of its inputs: artifacts plus a provenance
// JSON (config hash, seed, version) land byte-identically on reruns.

// Full data pipeline: truth grids, stratified observations, query split.
// `seed_override`, when non-null, replaces the scenario file's seed.
void cmd_gen(const std::string& config_path, const std::string& out_path,
             const std::uint64_t* seed_override);

// Per-site variogram fit and kriging over every query pair.
void cmd_prior(const std::string& config_path, const std::string& dataset_path,
               const std::string& out_path, DriftMode drift);

// Mini-batch training of one regime; writes the checkpoint and
// `<out>.trace.csv` with one mean-loss row per epoch.
void cmd_train(const std::string& config_path, const std::string& dataset_path,
               const std::string& prior_path, const std::string& regime,
               const std::string& out_path, const TrainConfig& tc);

// Post-hoc gate fit against a frozen residual checkpoint; writes the gate
// checkpoint and `<out>.table.csv`.
void cmd_gate(const std::string& config_path, const std::string& dataset_path,
              const std::string& prior_path, const std::string& checkpoint_path,
              const std::string& out_path, const GateConfig& gc);

// RMSE/MAE per (site, split) plus pooled rows for one regime.
void cmd_eval(const std::string& config_path, const std::string& dataset_path,
              const std::string& prior_path, const std::string& checkpoint_path,
              const std::string& gate_path, const std::string& regime,
              const std::string& out_path);

// Dense heatmap of one site: `<out>.csv` over every grid bin (observed bins
// carry their truth), `<out>.pgm` 8-bit grayscale, `<out>.json` with the
// dBm range of the linear gray scaling.
void cmd_map(const std::string& config_path, const std::string& dataset_path,
             const std::string& checkpoint_path, const std::string& gate_path,
             const std::string& regime, int site, const std::string& out_prefix);

}  // namespace raymap
