// batchsel: adaptive mini-batch selection experiment runner.
//
//   batchsel run      --dataset synth --strategy random,recency-bias ...
//   batchsel ablation --dataset synth-hard ...
//   batchsel grid     --dataset synth ...
//
// Options may come from a flat key=value config file (--config); command
// line flags win over config values.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "batchsel/experiment.hpp"

namespace {

struct CliOptions {
  std::string dataset = "synth";
  std::vector<std::string> strategies = {"random", "online-batch",
                                         "active-bias", "recency-bias"};
  int epochs = 20;
  std::size_t batch_size = 32;
  int warmup = 10;
  std::size_t window = 10;
  double pressure = 100.0;
  std::string pressure_mode = "decay";
  double lr = 0.1;
  std::string lr_mode = "schedule";
  std::string optimizer = "momentum";
  std::string model = "softmax-regression";
  std::size_t hidden = 64;
  double epsilon = 0.01;
  std::uint64_t seed = 1;
  int repeat = 3;
  int jobs = 1;
  std::string out = "out";
  bool dump_tables = false;
  std::string data_dir;
};

void add_options(CLI::App& app, CliOptions& opt) {
  app.add_option("--dataset", opt.dataset,
                 "Dataset spec: synth | synth-hard | "
                 "synth:k=..,d=..,npc=..,spread=..,seed=.. | "
                 "mnist | mnist:n=..,tn=..,seed=..");
  app.add_option("--strategy", opt.strategies,
                 "Strategies for `run`: random, online-batch, active-bias, "
                 "recency-bias")
      ->delimiter(',');
  app.add_option("--epochs", opt.epochs, "Total training epochs");
  app.add_option("--batch-size", opt.batch_size, "Mini-batch size b");
  app.add_option("--warmup", opt.warmup, "Warm-up epochs gamma (>= window)");
  app.add_option("--window", opt.window, "Label history window q");
  app.add_option("--pressure", opt.pressure, "Initial selection pressure s_e0");
  app.add_option("--pressure-mode", opt.pressure_mode,
                 "constant | decay (exponential decay to 1)");
  app.add_option("--lr", opt.lr, "Base learning rate");
  app.add_option("--lr-mode", opt.lr_mode, "schedule | constant");
  app.add_option("--optimizer", opt.optimizer, "sgd | momentum");
  app.add_option("--model", opt.model, "softmax-regression | mlp-1hidden");
  app.add_option("--hidden", opt.hidden, "Hidden units (mlp only)");
  app.add_option("--epsilon", opt.epsilon, "Active Bias smoothing constant");
  app.add_option("--seed", opt.seed, "Base seed; repeats offset it");
  app.add_option("--repeat", opt.repeat, "Independent runs per configuration");
  app.add_option("--jobs", opt.jobs, "Concurrent runs");
  app.add_option("--out", opt.out, "Output directory");
  app.add_flag("--dump-tables", opt.dump_tables,
               "Dump per-epoch sampling tables to CSV");
  app.add_option("--data-dir", opt.data_dir, "Dataset root (IDX files)")
      ->envname("BATCHSEL_DATA_DIR");
}

batchsel::ExperimentConfig to_experiment_config(const CliOptions& opt) {
  batchsel::ExperimentConfig config;
  config.dataset = opt.dataset;
  config.strategies.clear();
  for (const auto& name : opt.strategies) {
    config.strategies.push_back(batchsel::parse_strategy(name));
  }
  config.train.batch_size = opt.batch_size;
  config.train.epochs = opt.epochs;
  config.train.warmup_epochs = opt.warmup;
  config.train.window = opt.window;
  config.train.s_e0 = opt.pressure;
  if (opt.pressure_mode == "constant") {
    config.train.pressure_mode = batchsel::PressureMode::kConstant;
  } else if (opt.pressure_mode == "decay") {
    config.train.pressure_mode = batchsel::PressureMode::kDecay;
  } else {
    throw std::invalid_argument("--pressure-mode must be constant or decay");
  }
  config.train.base_lr = opt.lr;
  if (opt.lr_mode == "schedule") {
    config.train.lr_mode = batchsel::LrMode::kStepSchedule;
  } else if (opt.lr_mode == "constant") {
    config.train.lr_mode = batchsel::LrMode::kConstant;
  } else {
    throw std::invalid_argument("--lr-mode must be schedule or constant");
  }
  if (opt.optimizer == "sgd") {
    config.train.optimizer = batchsel::OptimizerKind::kSgd;
  } else if (opt.optimizer == "momentum") {
    config.train.optimizer = batchsel::OptimizerKind::kMomentum;
  } else {
    throw std::invalid_argument("--optimizer must be sgd or momentum");
  }
  config.train.model = batchsel::parse_model_kind(opt.model);
  config.train.hidden_dim = opt.hidden;
  config.train.active_bias_epsilon = opt.epsilon;
  config.train.seeds =
      batchsel::TrainSeeds{opt.seed, opt.seed + 1000, opt.seed + 2000};
  config.repeat = opt.repeat;
  config.jobs = opt.jobs;
  config.out_dir = opt.out;
  config.dump_tables = opt.dump_tables;
  config.data_dir = opt.data_dir;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive mini-batch selection experiments"};
  app.set_config("--config", "", "Flat key=value config file; flags win");
  app.require_subcommand(1);

  CliOptions opt;
  add_options(app, opt);

  CLI::App* run = app.add_subcommand(
      "run", "Compare selection strategies on one dataset");
  CLI::App* ablation = app.add_subcommand(
      "ablation", "Four selection-pressure strategies under recency-bias");
  CLI::App* grid = app.add_subcommand(
      "grid", "s_e0 x q hyperparameter grid under recency-bias");
  for (CLI::App* cmd : {run, ablation, grid}) cmd->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = to_experiment_config(opt);
    if (run->parsed()) return batchsel::cmd_run(config);
    if (ablation->parsed()) return batchsel::cmd_ablation(config);
    if (grid->parsed()) return batchsel::cmd_grid(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
