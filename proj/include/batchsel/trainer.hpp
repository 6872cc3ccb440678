#pragma once

// End-to-end training orchestration: warm-up epochs with shuffle-partition
// batches, then per-epoch sampling-table refresh and adaptive draws, with
// label-history / baseline-state updates taken from each mini-batch's
// forward pass.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "batchsel/data.hpp"
#include "batchsel/history.hpp"
#include "batchsel/model.hpp"
#include "batchsel/random.hpp"
#include "batchsel/selection.hpp"

namespace batchsel {

// Fixed-bin histogram of the losses of selected samples; the top bin absorbs
// overflow.
struct LossHistogram {
  static constexpr std::size_t kBins = 50;
  static constexpr double kLo = 0.0;
  static constexpr double kHi = 5.0;

  std::array<std::int64_t, kBins> counts{};

  static double bin_width() { return (kHi - kLo) / static_cast<double>(kBins); }
  static double bin_lo(std::size_t i) {
    return kLo + static_cast<double>(i) * bin_width();
  }
  static double bin_hi(std::size_t i) { return bin_lo(i) + bin_width(); }

  void add(double loss) {
    if (loss < kLo) loss = kLo;
    auto bin = static_cast<std::size_t>((loss - kLo) / bin_width());
    if (bin >= kBins) bin = kBins - 1;
    ++counts[bin];
  }

  std::int64_t total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
  }
};

enum class OptimizerKind { kSgd, kMomentum };
enum class LrMode { kStepSchedule, kConstant };
enum class PressureMode { kConstant, kDecay };

struct TrainSeeds {
  std::uint64_t init = 1;
  std::uint64_t shuffle = 2;
  std::uint64_t draw = 3;
};

struct TrainConfig {
  Strategy strategy = Strategy::kRandom;
  std::size_t batch_size = 32;
  int epochs = 20;
  int warmup_epochs = 10;  // gamma; must be >= window
  std::size_t window = 10;  // q
  double s_e0 = 100.0;
  PressureMode pressure_mode = PressureMode::kDecay;
  double base_lr = 0.1;
  LrMode lr_mode = LrMode::kStepSchedule;
  OptimizerKind optimizer = OptimizerKind::kMomentum;
  double momentum_mu = 0.9;
  double active_bias_epsilon = 0.01;
  double quant_delta = 0.0;  // 0 means 1/N
  ModelKind model = ModelKind::kSoftmaxRegression;
  std::size_t hidden_dim = 64;
  TrainSeeds seeds;

  void validate(std::size_t num_train) const {
    if (warmup_epochs < static_cast<int>(window)) {
      throw std::invalid_argument(
          "TrainConfig: warm-up must span at least the window size (gamma >= "
          "q)");
    }
    if (batch_size == 0 || batch_size > num_train) {
      throw std::invalid_argument("TrainConfig: batch size outside [1, N]");
    }
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs < 1");
    if (warmup_epochs < 0) throw std::invalid_argument("TrainConfig: warmup");
    if (window == 0) throw std::invalid_argument("TrainConfig: window");
    if (!(s_e0 >= 1.0)) throw std::invalid_argument("TrainConfig: s_e0 < 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: lr");
    if (!(active_bias_epsilon > 0.0)) {
      throw std::invalid_argument("TrainConfig: epsilon");
    }
  }
};

struct MetricsRecord {
  int epoch = 0;
  std::int64_t iteration = 0;   // cumulative mini-batch updates
  double train_loss = 0.0;      // mean loss over samples selected this epoch
  double test_error = 0.0;      // percent
  double wall_clock_sec = 0.0;  // measured, monotonic, from first train step
  double work_units = 0.0;      // deterministic logical clock (see README)
  double best_test_error = 0.0;
  LossHistogram selected_hist;
};

struct TrainHooks {
  // Called after each adaptive-epoch table rebuild; detail is non-null for
  // recency-bias runs.
  std::function<void(int epoch, const SamplingTable&, const RecencyTable*)>
      on_table;
  std::ostream* event_log = nullptr;  // epoch,batch,sample_index,loss,predicted_label
};

// Holds references to the (immutable) datasets; the caller keeps them alive
// for the trainer's lifetime.
class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& train, const Dataset& test)
      : cfg_(config),
        train_(train),
        test_(test),
        bank_(train.size(), train.num_classes, config.window),
        online_(train.size()),
        active_(train.size(), config.active_bias_epsilon) {
    cfg_.validate(train_.size());
    train_.validate();
    test_.validate();
    if (test_.dim != train_.dim) {
      throw std::invalid_argument("Trainer: train/test dim mismatch");
    }
    if (test_.num_classes > train_.num_classes) {
      throw std::invalid_argument("Trainer: test labels outside train classes");
    }
    spec_.kind = cfg_.model;
    spec_.input_dim = train_.dim;
    spec_.hidden_dim = cfg_.hidden_dim;
    spec_.num_classes = train_.num_classes;
    spec_.init_seed = cfg_.seeds.init;
    params_ = init_parameters(spec_);
  }

  TrainHooks& hooks() { return hooks_; }
  const ModelSpec& model_spec() const { return spec_; }
  const ParameterSet& parameters() const { return params_; }
  const HistoryBank& bank() const { return bank_; }
  const OnlineBatchState& online_state() const { return online_; }
  const ActiveBiasState& active_state() const { return active_; }
  const std::vector<MetricsRecord>& metrics() const { return metrics_; }

  std::vector<MetricsRecord> run() {
    const std::size_t n = train_.size();
    const std::size_t batches_per_epoch = n / cfg_.batch_size;
    if (batches_per_epoch == 0) {
      throw std::invalid_argument("Trainer: batch size exceeds dataset");
    }
    const std::int64_t total_iterations =
        static_cast<std::int64_t>(batches_per_epoch) * cfg_.epochs;

    std::mt19937_64 shuffle_rng(cfg_.seeds.shuffle);
    std::mt19937_64 draw_rng(cfg_.seeds.draw);
    std::vector<std::size_t> permutation(n);
    std::iota(permutation.begin(), permutation.end(), 0);

    const PressureSchedule schedule{
        cfg_.s_e0, cfg_.warmup_epochs + 1, cfg_.epochs,
        cfg_.pressure_mode == PressureMode::kDecay
            ? PressureSchedule::Mode::kExponentialDecay
            : PressureSchedule::Mode::kConstant};

    std::int64_t iteration = 0;
    double best = std::numeric_limits<double>::infinity();
    double work = 0.0;  // sample passes: 3 per trained sample, 1 per test eval
    metrics_.clear();
    metrics_.reserve(static_cast<std::size_t>(cfg_.epochs));
    std::optional<std::chrono::steady_clock::time_point> start;

    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::optional<SamplingTable> table;
      if (epoch > cfg_.warmup_epochs) {
        const double s_e = pressure_at(schedule, epoch);
        table = build_table(epoch, s_e);
      } else {
        shuffle_in_place(permutation, shuffle_rng);
      }

      double loss_sum = 0.0;
      std::int64_t loss_count = 0;
      LossHistogram hist;
      std::vector<std::size_t> batch(cfg_.batch_size);

      for (std::size_t j = 0; j < batches_per_epoch; ++j) {
        if (table) {
          batch = draw_batch(*table, cfg_.batch_size, draw_rng);
        } else {
          std::copy_n(permutation.begin() +
                          static_cast<std::ptrdiff_t>(j * cfg_.batch_size),
                      cfg_.batch_size, batch.begin());
        }
        if (!start) start = std::chrono::steady_clock::now();

        const auto fb = forward_backward(spec_, params_, train_, batch);
        const double lr =
            cfg_.lr_mode == LrMode::kStepSchedule
                ? lr_schedule(cfg_.base_lr, iteration, total_iterations)
                : cfg_.base_lr;
        if (cfg_.optimizer == OptimizerKind::kSgd) {
          sgd_step(params_, fb.gradient, lr);
        } else {
          momentum_step(params_, fb.gradient, lr, cfg_.momentum_mu);
        }

        for (std::size_t l = 0; l < batch.size(); ++l) {
          const std::size_t i = batch[l];
          bank_.record(i, fb.forward.predicted[l]);
          online_.record_loss(i, fb.forward.loss[l]);
          active_.record_true_prob(i, fb.forward.true_prob[l]);
          hist.add(fb.forward.loss[l]);
          loss_sum += fb.forward.loss[l];
          ++loss_count;
          if (hooks_.event_log) {
            char line[128];
            std::snprintf(line, sizeof(line), "%d,%zu,%zu,%.10g,%d\n", epoch,
                          j, i, fb.forward.loss[l], fb.forward.predicted[l]);
            (*hooks_.event_log) << line;
          }
        }
        ++iteration;
        work += 3.0 * static_cast<double>(cfg_.batch_size);
      }

      const double test_error = evaluate_test_error();
      work += static_cast<double>(test_.size());
      best = std::min(best, test_error);

      MetricsRecord rec;
      rec.epoch = epoch;
      rec.iteration = iteration;
      rec.train_loss = loss_sum / static_cast<double>(loss_count);
      rec.test_error = test_error;
      rec.wall_clock_sec =
          start ? std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - *start)
                      .count()
                : 0.0;
      rec.work_units = work / 1e6;
      rec.best_test_error = best;
      rec.selected_hist = hist;
      metrics_.push_back(rec);
    }
    return metrics_;
  }

  // Classification error in percent over the full test split.
  double evaluate_test_error() const {
    std::vector<std::size_t> all(test_.size());
    std::iota(all.begin(), all.end(), 0);
    std::int64_t wrong = 0;
    Workspace ws;
    for (const std::size_t i : all) {
      detail::forward_sample(spec_, params_.theta.data(), test_.row(i), ws);
      const auto summary =
          detail::summarize_logits(ws.logits.data(), spec_.num_classes);
      if (summary.argmax != test_.labels[i]) ++wrong;
    }
    return 100.0 * static_cast<double>(wrong) /
           static_cast<double>(test_.size());
  }

 private:
  SamplingTable build_table(int epoch, double s_e) {
    const double delta = cfg_.quant_delta > 0.0
                             ? cfg_.quant_delta
                             : 1.0 / static_cast<double>(train_.size());
    switch (cfg_.strategy) {
      case Strategy::kRandom: {
        SamplingTable t = uniform_table(train_.size(), epoch);
        if (hooks_.on_table) hooks_.on_table(epoch, t, nullptr);
        return t;
      }
      case Strategy::kOnlineBatch: {
        SamplingTable t = online_batch_table(online_, s_e, epoch);
        if (hooks_.on_table) hooks_.on_table(epoch, t, nullptr);
        return t;
      }
      case Strategy::kActiveBias: {
        SamplingTable t = active_bias_table(active_, epoch);
        if (hooks_.on_table) hooks_.on_table(epoch, t, nullptr);
        return t;
      }
      case Strategy::kRecencyBias: {
        RecencyTable rt = build_recency_table(bank_, s_e, delta, epoch);
        if (hooks_.on_table) hooks_.on_table(epoch, rt.table, &rt);
        return std::move(rt.table);
      }
    }
    throw std::logic_error("Trainer: unknown strategy");
  }

  TrainConfig cfg_;
  const Dataset& train_;
  const Dataset& test_;
  ModelSpec spec_;
  ParameterSet params_;
  HistoryBank bank_;
  OnlineBatchState online_;
  ActiveBiasState active_;
  TrainHooks hooks_;
  std::vector<MetricsRecord> metrics_;
};

// Histogram of selected-sample losses at a fraction of the total epochs
// (the probes of interest are 30% and 70%).
inline const LossHistogram& loss_distribution_probe(
    const std::vector<MetricsRecord>& metrics, double stage_fraction) {
  if (metrics.empty()) {
    throw std::invalid_argument("loss_distribution_probe: no metrics");
  }
  const auto epochs = static_cast<double>(metrics.size());
  auto idx = static_cast<std::ptrdiff_t>(std::llround(stage_fraction * epochs));
  idx = std::clamp<std::ptrdiff_t>(idx, 1,
                                   static_cast<std::ptrdiff_t>(metrics.size()));
  return metrics[static_cast<std::size_t>(idx - 1)].selected_hist;
}

struct WeightedEstimateReport {
  std::size_t batches_enumerated = 0;
  double max_weight_sum_error = 0.0;       // max |sum w - 1| over batches
  double plain_estimate_deviation = 0.0;   // inf-norm vs full gradient
  double weighted_estimate_deviation = 0.0;
};

// Exhaustive enumeration of all N^b ordered batches: checks the per-batch
// weight normalization and measures how far the expected plain-average and
// weighted batch gradients sit from the full-dataset gradient.
inline WeightedEstimateReport weighted_estimate_check(
    const ModelSpec& spec, const ParameterSet& params,
    const SamplingTable& table, const Dataset& ds, std::size_t b) {
  const std::size_t n = ds.size();
  if (n > 8 || b > 3 || b == 0 || table.size() != n) {
    throw std::invalid_argument(
        "weighted_estimate_check: enumeration scale is N <= 8, 1 <= b <= 3");
  }

  std::vector<std::vector<double>> per_sample(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t one[1] = {i};
    per_sample[i] = backward(spec, params, ds, one);
  }
  const std::size_t dim = per_sample[0].size();
  std::vector<double> full(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) full[j] += per_sample[i][j];
  }
  for (double& v : full) v /= static_cast<double>(n);

  std::vector<double> expected_plain(dim, 0.0);
  std::vector<double> expected_weighted(dim, 0.0);
  WeightedEstimateReport report;

  std::vector<std::size_t> tuple(b, 0);
  while (true) {
    double tuple_prob = 1.0;
    double weight_denom = 0.0;
    for (const std::size_t i : tuple) {
      tuple_prob *= table.probability(i);
      weight_denom += table.probability(i);
    }
    double weight_sum = 0.0;
    for (const std::size_t i : tuple) {
      weight_sum += table.probability(i) / weight_denom;
    }
    report.max_weight_sum_error =
        std::max(report.max_weight_sum_error, std::abs(weight_sum - 1.0));

    const double inv_b = 1.0 / static_cast<double>(b);
    for (const std::size_t i : tuple) {
      const double w = table.probability(i) / weight_denom;
      for (std::size_t j = 0; j < dim; ++j) {
        expected_plain[j] += tuple_prob * inv_b * per_sample[i][j];
        expected_weighted[j] += tuple_prob * w * per_sample[i][j];
      }
    }
    ++report.batches_enumerated;

    std::size_t pos = 0;
    while (pos < b && ++tuple[pos] == n) {
      tuple[pos] = 0;
      ++pos;
    }
    if (pos == b) break;
  }

  for (std::size_t j = 0; j < dim; ++j) {
    report.plain_estimate_deviation = std::max(
        report.plain_estimate_deviation, std::abs(expected_plain[j] - full[j]));
    report.weighted_estimate_deviation =
        std::max(report.weighted_estimate_deviation,
                 std::abs(expected_weighted[j] - full[j]));
  }
  return report;
}

// --- CSV emission. Formats are frozen; outputs must be byte-stable. ---

inline constexpr const char* kMetricsCsvHeader =
    "epoch,iteration,train_loss,test_error,elapsed_sec,best_test_error";
inline constexpr const char* kHistogramCsvHeader =
    "stage,strategy,bin_lo,bin_hi,count";
inline constexpr const char* kTableDumpCsvHeader =
    "sample_index,uncertainty,quant_index,probability";

// elapsed_sec is the deterministic logical clock (work_units), not measured
// wall time, so reruns are byte-identical; wall time is reported separately.
inline void write_metrics_csv(std::ostream& os,
                              const std::vector<MetricsRecord>& metrics) {
  os << kMetricsCsvHeader << "\n";
  char line[192];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof(line), "%d,%lld,%.10g,%.6f,%.6f,%.6f\n",
                  m.epoch, static_cast<long long>(m.iteration), m.train_loss,
                  m.test_error, m.work_units, m.best_test_error);
    os << line;
  }
}

inline void write_histogram_rows(std::ostream& os, double stage,
                                 Strategy strategy, const LossHistogram& hist) {
  char line[128];
  for (std::size_t i = 0; i < LossHistogram::kBins; ++i) {
    std::snprintf(line, sizeof(line), "%.2f,%s,%.2f,%.2f,%lld\n", stage,
                  std::string(strategy_name(strategy)).c_str(),
                  LossHistogram::bin_lo(i), LossHistogram::bin_hi(i),
                  static_cast<long long>(hist.counts[i]));
    os << line;
  }
}

inline void write_table_dump(std::ostream& os, const SamplingTable& table,
                             const RecencyTable* detail) {
  char line[128];
  for (std::size_t i = 0; i < table.size(); ++i) {
    const double u = detail ? detail->uncertainty[i] : 0.0;
    const long long q =
        detail ? static_cast<long long>(detail->quant_index[i]) : -1;
    std::snprintf(line, sizeof(line), "%zu,%.10g,%lld,%.10g\n", i, u, q,
                  table.probability(i));
    os << line;
  }
}

}  // namespace batchsel
