#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "raymap/commands.hpp"
#include "raymap/errors.hpp"
#include "raymap/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Transmitter-resolved point-wise radio map estimation"};
  app.set_version_flag("--version", raymap::kVersion);
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset from a scenario");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "scenario JSON")->required();
  gen->add_option("--out", gen_out, "dataset CSV to write")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "override the scenario seed");

  auto* prior = app.add_subcommand("prior", "Kriging prior over every query pair");
  std::string pr_config, pr_dataset, pr_out, pr_drift = "none";
  prior->add_option("--config", pr_config, "scenario JSON")->required();
  prior->add_option("--dataset", pr_dataset, "dataset CSV")->required();
  prior->add_option("--out", pr_out, "prior table CSV to write")->required();
  prior->add_option("--drift", pr_drift, "kriging drift: none (ordinary) or linear")
      ->check(CLI::IsMember({"none", "linear"}));

  auto* train = app.add_subcommand("train", "Train the direct or residual regime");
  std::string tr_config, tr_dataset, tr_prior, tr_regime, tr_out;
  raymap::TrainConfig tc;
  train->add_option("--config", tr_config, "scenario JSON")->required();
  train->add_option("--dataset", tr_dataset, "dataset CSV")->required();
  train->add_option("--regime", tr_regime, "direct or residual")->required();
  train->add_option("--prior", tr_prior, "prior table CSV (residual regime)");
  train->add_option("--out", tr_out, "checkpoint path to write")->required();
  train->add_option("--seed", tc.seed, "training seed");
  train->add_option("--epochs", tc.epochs, "training epochs");
  train->add_option("--batch", tc.batch, "mini-batch size");
  train->add_option("--lr", tc.lr, "Adam learning rate");
  train->add_option("--delta", tc.huber_delta, "Huber threshold");

  auto* gate = app.add_subcommand("gate", "Fit the post-hoc gate on a residual checkpoint");
  std::string ga_config, ga_dataset, ga_prior, ga_ckpt, ga_out;
  raymap::GateConfig gc;
  gate->add_option("--config", ga_config, "scenario JSON")->required();
  gate->add_option("--dataset", ga_dataset, "dataset CSV")->required();
  gate->add_option("--prior", ga_prior, "prior table CSV")->required();
  gate->add_option("--checkpoint", ga_ckpt, "residual checkpoint")->required();
  gate->add_option("--out", ga_out, "gate checkpoint path to write")->required();
  gate->add_option("--seed", gc.seed, "fit seed");
  gate->add_option("--epochs", gc.epochs, "fit epochs");
  gate->add_option("--batch", gc.batch, "fit batch size");
  gate->add_option("--lr", gc.lr, "Adam learning rate");
  gate->add_option("--delta", gc.huber_delta, "Huber threshold of the fit loss");
  gate->add_option("--eps-e", gc.eps_e, "residual magnitude that gates to zero");
  gate->add_flag("--recomposition-loss", gc.recomposition_loss,
                 "fit on recomposition MSE instead of oracle targets");

  auto* eval = app.add_subcommand("eval", "RMSE/MAE per site and split for one regime");
  std::string ev_config, ev_dataset, ev_prior, ev_ckpt, ev_gate, ev_regime, ev_out;
  eval->add_option("--config", ev_config, "scenario JSON")->required();
  eval->add_option("--dataset", ev_dataset, "dataset CSV")->required();
  eval->add_option("--regime", ev_regime, "direct, residual, or gated")->required();
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  eval->add_option("--prior", ev_prior, "prior table CSV (residual and gated)");
  eval->add_option("--gate", ev_gate, "gate checkpoint (gated)");
  eval->add_option("--out", ev_out, "metrics CSV to write")->required();

  auto* map = app.add_subcommand("map", "Dense heatmap export for one site");
  std::string mp_config, mp_dataset, mp_ckpt, mp_gate, mp_regime, mp_out;
  int mp_site = 0;
  map->add_option("--config", mp_config, "scenario JSON")->required();
  map->add_option("--dataset", mp_dataset, "dataset CSV")->required();
  map->add_option("--regime", mp_regime, "direct, residual, or gated")->required();
  map->add_option("--checkpoint", mp_ckpt, "model checkpoint")->required();
  map->add_option("--gate", mp_gate, "gate checkpoint (gated)");
  map->add_option("--site", mp_site, "transmitter site id")->required();
  map->add_option("--out", mp_out, "output path prefix")->required();

  try {
    app.parse(argc, argv);
    if (*gen)
      raymap::cmd_gen(gen_config, gen_out, gen_seed_opt->count() ? &gen_seed : nullptr);
    if (*prior)
      raymap::cmd_prior(pr_config, pr_dataset, pr_out,
                        pr_drift == "linear" ? raymap::DriftMode::Linear
                                             : raymap::DriftMode::None);
    if (*train) raymap::cmd_train(tr_config, tr_dataset, tr_prior, tr_regime, tr_out, tc);
    if (*gate) raymap::cmd_gate(ga_config, ga_dataset, ga_prior, ga_ckpt, ga_out, gc);
    if (*eval)
      raymap::cmd_eval(ev_config, ev_dataset, ev_prior, ev_ckpt, ev_gate, ev_regime, ev_out);
    if (*map)
      raymap::cmd_map(mp_config, mp_dataset, mp_ckpt, mp_gate, mp_regime, mp_site, mp_out);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const raymap::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const raymap::NotFoundError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const raymap::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const raymap::StateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}
