#pragma once

// Experiment runner behind the CLI: strategy comparison runs, the
// selection-pressure ablation, and the hyperparameter grid, each emitting
// plot-ready CSVs. Reruns with identical configs produce byte-identical
// files; measured wall-clock goes to stdout only.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "batchsel/data.hpp"
#include "batchsel/trainer.hpp"

namespace batchsel {

struct DatasetSpec {
  enum class Kind { kSynth, kMnist };
  Kind kind = Kind::kSynth;
  // synth parameters
  std::size_t classes = 4;
  std::size_t dim = 8;
  std::size_t per_class = 250;
  double spread = 0.25;
  std::uint64_t seed = 77;
  // mnist subset sizes (0 = full split)
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
};

inline DatasetSpec parse_dataset_spec(const std::string& text) {
  DatasetSpec spec;
  std::string head = text;
  std::string args;
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    head = text.substr(0, colon);
    args = text.substr(colon + 1);
  }
  if (head == "synth" || head == "synth-easy") {
    spec.kind = DatasetSpec::Kind::kSynth;
  } else if (head == "synth-hard") {
    spec.kind = DatasetSpec::Kind::kSynth;
    spec.classes = 10;
    spec.dim = 16;
    spec.per_class = 300;
    spec.spread = 1.8;
    spec.seed = 99;
  } else if (head == "mnist") {
    spec.kind = DatasetSpec::Kind::kMnist;
    spec.seed = 11;
  } else {
    throw std::invalid_argument("unknown dataset spec: " + text);
  }
  std::stringstream ss(args);
  std::string kv;
  while (std::getline(ss, kv, ',')) {
    if (kv.empty()) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("dataset spec: expected key=value in " + kv);
    }
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    if (key == "k") spec.classes = std::stoul(value);
    else if (key == "d") spec.dim = std::stoul(value);
    else if (key == "npc") spec.per_class = std::stoul(value);
    else if (key == "spread") spec.spread = std::stod(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "n") spec.train_subset = std::stoul(value);
    else if (key == "tn") spec.test_subset = std::stoul(value);
    else throw std::invalid_argument("dataset spec: unknown key " + key);
  }
  return spec;
}

namespace detail {

inline std::filesystem::path find_idx_file(const std::filesystem::path& dir,
                                           const std::string& base) {
  for (const char* suffix : {"", ".gz"}) {
    const auto candidate = dir / (base + suffix);
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw std::runtime_error("mnist: cannot find " + base + "[.gz] under " +
                           dir.string());
}

}  // namespace detail

inline TrainTest load_dataset(const DatasetSpec& spec,
                              const std::string& data_dir) {
  if (spec.kind == DatasetSpec::Kind::kSynth) {
    return synth_blobs(spec.per_class, spec.classes, spec.dim, spec.spread,
                       spec.seed);
  }
  const std::filesystem::path dir =
      data_dir.empty() ? std::filesystem::path(".")
                       : std::filesystem::path(data_dir);
  TrainTest data;
  data.train = load_idx(detail::find_idx_file(dir, "train-images-idx3-ubyte"),
                        detail::find_idx_file(dir, "train-labels-idx1-ubyte"));
  data.test = load_idx(detail::find_idx_file(dir, "t10k-images-idx3-ubyte"),
                       detail::find_idx_file(dir, "t10k-labels-idx1-ubyte"));
  data.train.split = Split::kTrain;
  data.test.split = Split::kTest;
  if (spec.train_subset > 0) {
    data.train = subset(data.train, spec.train_subset, spec.seed);
  }
  if (spec.test_subset > 0) {
    data.test = subset(data.test, spec.test_subset, spec.seed + 1);
  }
  return data;
}

struct ExperimentConfig {
  std::string dataset = "synth";
  std::vector<Strategy> strategies = {Strategy::kRandom, Strategy::kOnlineBatch,
                                      Strategy::kActiveBias,
                                      Strategy::kRecencyBias};
  TrainConfig train;
  int repeat = 3;
  int jobs = 1;
  std::string out_dir = "out";
  bool dump_tables = false;
  std::string data_dir;  // BATCHSEL_DATA_DIR

  void validate() const {
    if (repeat < 1) throw std::invalid_argument("ExperimentConfig: repeat < 1");
    if (jobs < 1) throw std::invalid_argument("ExperimentConfig: jobs < 1");
    if (out_dir.empty()) throw std::invalid_argument("ExperimentConfig: out");
  }
};

struct RunResult {
  std::string label;
  int repeat_index = 0;
  std::vector<MetricsRecord> metrics;
  double best_test_error = 0.0;
  double final_train_loss = 0.0;
  double wall_clock_sec = 0.0;
};

namespace detail {

inline TrainSeeds seeds_for_repeat(const TrainSeeds& base, int r) {
  return TrainSeeds{base.init + static_cast<std::uint64_t>(r),
                    base.shuffle + static_cast<std::uint64_t>(r),
                    base.draw + static_cast<std::uint64_t>(r)};
}

inline bool metrics_invariants_ok(const std::vector<MetricsRecord>& metrics) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : metrics) {
    if (!std::isfinite(m.train_loss) || !std::isfinite(m.test_error)) {
      return false;
    }
    best = std::min(best, m.test_error);
    if (std::abs(best - m.best_test_error) > 1e-12) return false;
  }
  return true;
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& values) {
  MeanStderr out;
  const auto n = static_cast<double>(values.size());
  for (const double v : values) out.mean += v;
  out.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

// One training run plus its per-run files. `label` names the files; it is
// the strategy name for cmd_run, a strategy id for the ablation, a cell id
// for the grid.
inline RunResult execute_run(const TrainConfig& cfg, const std::string& label,
                             int repeat_index, const TrainTest& data,
                             const std::filesystem::path& out_dir,
                             bool dump_tables) {
  Trainer trainer(cfg, data.train, data.test);

  std::ofstream tables_csv;
  if (dump_tables) {
    tables_csv.open(out_dir / ("tables_" + label + "_r" +
                               std::to_string(repeat_index) + ".csv"));
    tables_csv << "epoch," << kTableDumpCsvHeader << "\n";
    trainer.hooks().on_table = [&](int epoch, const SamplingTable& table,
                                   const RecencyTable* detail_ptr) {
      std::ostringstream rows;
      write_table_dump(rows, table, detail_ptr);
      std::istringstream in(rows.str());
      std::string row;
      while (std::getline(in, row)) {
        tables_csv << epoch << ',' << row << "\n";
      }
    };
  }

  RunResult result;
  result.label = label;
  result.repeat_index = repeat_index;
  result.metrics = trainer.run();
  result.best_test_error = result.metrics.back().best_test_error;
  result.final_train_loss = result.metrics.back().train_loss;
  result.wall_clock_sec = result.metrics.back().wall_clock_sec;

  {
    std::ofstream metrics_csv(out_dir / ("metrics_" + label + "_r" +
                                         std::to_string(repeat_index) +
                                         ".csv"));
    write_metrics_csv(metrics_csv, result.metrics);
  }
  {
    std::ofstream hist_csv(out_dir / ("hist_" + label + "_r" +
                                      std::to_string(repeat_index) + ".csv"));
    hist_csv << kHistogramCsvHeader << "\n";
    Strategy strategy = cfg.strategy;
    for (const double stage : {0.3, 0.7}) {
      write_histogram_rows(hist_csv, stage, strategy,
                           loss_distribution_probe(result.metrics, stage));
    }
  }
  return result;
}

// Run all descriptors, up to `jobs` at a time. Results keep descriptor
// order, so downstream CSVs are deterministic regardless of scheduling.
template <typename Descriptor, typename Fn>
std::vector<RunResult> run_pool(const std::vector<Descriptor>& descriptors,
                                int jobs, Fn&& fn) {
  std::vector<RunResult> results(descriptors.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors;
  std::mutex errors_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= descriptors.size()) return;
      try {
        results[idx] = fn(descriptors[idx]);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(errors_mutex);
        errors.emplace_back(e.what());
      }
    }
  };
  const int thread_count =
      std::min<int>(jobs, static_cast<int>(descriptors.size()));
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (!errors.empty()) {
    throw std::runtime_error("run failed: " + errors.front());
  }
  return results;
}

}  // namespace detail

// Strategy comparison: repeat runs per strategy, per-run metrics/histogram
// CSVs, and a mean +/- standard error summary of best test errors.
inline int cmd_run(const ExperimentConfig& config) {
  try {
    config.validate();
    const TrainTest data =
        load_dataset(parse_dataset_spec(config.dataset), config.data_dir);
    std::filesystem::create_directories(config.out_dir);

    struct Descriptor {
      Strategy strategy;
      int repeat;
    };
    std::vector<Descriptor> descriptors;
    for (const Strategy s : config.strategies) {
      for (int r = 0; r < config.repeat; ++r) descriptors.push_back({s, r});
    }

    const auto results = detail::run_pool(
        descriptors, config.jobs, [&](const Descriptor& d) {
          TrainConfig cfg = config.train;
          cfg.strategy = d.strategy;
          cfg.seeds = detail::seeds_for_repeat(config.train.seeds, d.repeat);
          return detail::execute_run(cfg, std::string(strategy_name(d.strategy)),
                                     d.repeat, data, config.out_dir,
                                     config.dump_tables);
        });

    bool ok = true;
    for (const auto& r : results) {
      if (!detail::metrics_invariants_ok(r.metrics)) {
        std::cerr << "invariant sweep failed for " << r.label << " r"
                  << r.repeat_index << "\n";
        ok = false;
      }
      std::printf("[run] %s r%d best_test_error=%.4f%% wall=%.2fs\n",
                  r.label.c_str(), r.repeat_index, r.best_test_error,
                  r.wall_clock_sec);
    }

    std::ofstream summary(std::filesystem::path(config.out_dir) /
                          "summary.csv");
    summary << "strategy,runs,best_test_error_mean,best_test_error_stderr\n";
    std::size_t offset = 0;
    char line[160];
    for (const Strategy s : config.strategies) {
      std::vector<double> best;
      for (int r = 0; r < config.repeat; ++r) {
        best.push_back(results[offset + static_cast<std::size_t>(r)]
                           .best_test_error);
      }
      offset += static_cast<std::size_t>(config.repeat);
      const auto stats = detail::mean_stderr(best);
      std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f\n",
                    std::string(strategy_name(s)).c_str(), config.repeat,
                    stats.mean, stats.stderr_);
      summary << line;
    }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cmd_run: " << e.what() << "\n";
    return 2;
  }
}

struct AblationStrategy {
  int id;
  double s_e0;
  PressureMode mode;
};

inline const std::vector<AblationStrategy>& ablation_strategies() {
  static const std::vector<AblationStrategy> strategies = {
      {1, 10.0, PressureMode::kConstant},
      {2, 100.0, PressureMode::kConstant},
      {3, 10.0, PressureMode::kDecay},
      {4, 100.0, PressureMode::kDecay},
  };
  return strategies;
}

// Four pressure-decay strategies under recency-bias: constant 10, constant
// 100, 10 -> 1, 100 -> 1. Emits converged train loss and best test error per
// strategy.
inline int cmd_ablation(const ExperimentConfig& config) {
  try {
    config.validate();
    const TrainTest data =
        load_dataset(parse_dataset_spec(config.dataset), config.data_dir);
    std::filesystem::create_directories(config.out_dir);

    struct Descriptor {
      AblationStrategy strategy;
      int repeat;
    };
    std::vector<Descriptor> descriptors;
    for (const auto& s : ablation_strategies()) {
      for (int r = 0; r < config.repeat; ++r) descriptors.push_back({s, r});
    }

    const auto results = detail::run_pool(
        descriptors, config.jobs, [&](const Descriptor& d) {
          TrainConfig cfg = config.train;
          cfg.strategy = Strategy::kRecencyBias;
          cfg.s_e0 = d.strategy.s_e0;
          cfg.pressure_mode = d.strategy.mode;
          cfg.seeds = detail::seeds_for_repeat(config.train.seeds, d.repeat);
          return detail::execute_run(
              cfg, "strategy" + std::to_string(d.strategy.id), d.repeat, data,
              config.out_dir, config.dump_tables);
        });

    bool ok = true;
    for (const auto& r : results) {
      ok = ok && detail::metrics_invariants_ok(r.metrics);
      std::printf("[ablation] %s r%d train_loss=%.6f best_test_error=%.4f%% "
                  "wall=%.2fs\n",
                  r.label.c_str(), r.repeat_index, r.final_train_loss,
                  r.best_test_error, r.wall_clock_sec);
    }

    std::ofstream table(std::filesystem::path(config.out_dir) /
                        "ablation.csv");
    table << "dataset,strategy,s_e0,pressure_mode,converged_train_loss_mean,"
             "converged_train_loss_stderr,best_test_error_mean,"
             "best_test_error_stderr\n";
    char line[256];
    std::size_t offset = 0;
    for (const auto& s : ablation_strategies()) {
      std::vector<double> train_loss;
      std::vector<double> best;
      for (int r = 0; r < config.repeat; ++r) {
        const auto& result = results[offset + static_cast<std::size_t>(r)];
        train_loss.push_back(result.final_train_loss);
        best.push_back(result.best_test_error);
      }
      offset += static_cast<std::size_t>(config.repeat);
      const auto loss_stats = detail::mean_stderr(train_loss);
      const auto best_stats = detail::mean_stderr(best);
      // Dataset specs may contain commas; quote the field.
      std::snprintf(line, sizeof(line), "\"%s\",%d,%g,%s,%.6f,%.6f,%.6f,%.6f\n",
                    config.dataset.c_str(), s.id, s.s_e0,
                    s.mode == PressureMode::kConstant ? "constant" : "decay",
                    loss_stats.mean, loss_stats.stderr_, best_stats.mean,
                    best_stats.stderr_);
      table << line;
    }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cmd_ablation: " << e.what() << "\n";
    return 2;
  }
}

inline const std::vector<double>& grid_pressures() {
  static const std::vector<double> values = {1.0, 10.0, 100.0, 1000.0};
  return values;
}

inline const std::vector<std::size_t>& grid_windows() {
  static const std::vector<std::size_t> values = {5, 10, 15};
  return values;
}

// 12-cell hyperparameter grid for recency-bias: s_e0 in {1,10,100,1000},
// q in {5,10,15}. The warm-up stretches to cover the largest window.
inline int cmd_grid(const ExperimentConfig& config) {
  try {
    config.validate();
    const TrainTest data =
        load_dataset(parse_dataset_spec(config.dataset), config.data_dir);
    std::filesystem::create_directories(config.out_dir);

    struct Descriptor {
      double s_e0;
      std::size_t window;
      int repeat;
    };
    std::vector<Descriptor> descriptors;
    for (const double s : grid_pressures()) {
      for (const std::size_t q : grid_windows()) {
        for (int r = 0; r < config.repeat; ++r) descriptors.push_back({s, q, r});
      }
    }

    const auto results = detail::run_pool(
        descriptors, config.jobs, [&](const Descriptor& d) {
          TrainConfig cfg = config.train;
          cfg.strategy = Strategy::kRecencyBias;
          cfg.s_e0 = d.s_e0;
          cfg.window = d.window;
          cfg.warmup_epochs =
              std::max(cfg.warmup_epochs, static_cast<int>(d.window));
          cfg.seeds = detail::seeds_for_repeat(config.train.seeds, d.repeat);
          char label[64];
          std::snprintf(label, sizeof(label), "grid_se%g_q%zu", d.s_e0,
                        d.window);
          return detail::execute_run(cfg, label, d.repeat, data,
                                     config.out_dir, config.dump_tables);
        });

    bool ok = true;
    for (const auto& r : results) {
      ok = ok && detail::metrics_invariants_ok(r.metrics);
    }

    std::ofstream table(std::filesystem::path(config.out_dir) / "grid.csv");
    table << "s_e0,q,best_test_error_mean,best_test_error_stderr\n";
    char line[128];
    std::size_t offset = 0;
    for (const double s : grid_pressures()) {
      for (const std::size_t q : grid_windows()) {
        std::vector<double> best;
        for (int r = 0; r < config.repeat; ++r) {
          best.push_back(results[offset + static_cast<std::size_t>(r)]
                             .best_test_error);
        }
        offset += static_cast<std::size_t>(config.repeat);
        const auto stats = detail::mean_stderr(best);
        std::snprintf(line, sizeof(line), "%g,%zu,%.6f,%.6f\n", s, q,
                      stats.mean, stats.stderr_);
        table << line;
      }
    }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cmd_grid: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace batchsel
