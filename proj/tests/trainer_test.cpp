#include "batchsel/trainer.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "batchsel/verify.hpp"

using namespace batchsel;

namespace {

TrainConfig quick_config(Strategy strategy) {
  TrainConfig cfg;
  cfg.strategy = strategy;
  cfg.batch_size = 32;
  cfg.epochs = 12;
  cfg.warmup_epochs = 4;
  cfg.window = 4;
  cfg.s_e0 = 100.0;
  cfg.pressure_mode = PressureMode::kDecay;
  cfg.base_lr = 0.3;
  cfg.lr_mode = LrMode::kConstant;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.model = ModelKind::kSoftmaxRegression;
  return cfg;
}

struct DeterministicView {
  std::vector<double> train_loss;
  std::vector<double> test_error;
  std::vector<std::int64_t> iteration;
  std::vector<double> work;
};

DeterministicView view_of(const std::vector<MetricsRecord>& metrics) {
  DeterministicView v;
  for (const auto& m : metrics) {
    v.train_loss.push_back(m.train_loss);
    v.test_error.push_back(m.test_error);
    v.iteration.push_back(m.iteration);
    v.work.push_back(m.work_units);
  }
  return v;
}

struct EventRow {
  int epoch;
  int batch;
  std::size_t sample;
  double loss;
  int predicted;
};

std::vector<EventRow> parse_events(const std::string& text) {
  std::vector<EventRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    EventRow row{};
    std::sscanf(line.c_str(), "%d,%d,%zu,%lf,%d", &row.epoch, &row.batch,
                &row.sample, &row.loss, &row.predicted);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST(TrainConfig, WarmupMustCoverWindow) {
  const auto data = synth_blobs(40, 2, 4, 0.3, 1);
  auto cfg = quick_config(Strategy::kRandom);
  cfg.warmup_epochs = 3;
  cfg.window = 4;
  EXPECT_THROW(Trainer(cfg, data.train, data.test), std::invalid_argument);
}

TEST(TrainConfig, BatchMustFitDataset) {
  const auto data = synth_blobs(10, 2, 4, 0.3, 1);  // 16 train samples
  auto cfg = quick_config(Strategy::kRandom);
  cfg.batch_size = 64;
  EXPECT_THROW(Trainer(cfg, data.train, data.test), std::invalid_argument);
}

TEST(Trainer, RandomStrategyIsDeterministic) {
  const auto data = synth_blobs(120, 4, 8, 0.4, 5);
  const auto cfg = quick_config(Strategy::kRandom);
  Trainer a(cfg, data.train, data.test);
  Trainer b(cfg, data.train, data.test);
  const auto ma = view_of(a.run());
  const auto mb = view_of(b.run());
  EXPECT_EQ(ma.train_loss, mb.train_loss);
  EXPECT_EQ(ma.test_error, mb.test_error);
  EXPECT_EQ(ma.iteration, mb.iteration);
  EXPECT_EQ(ma.work, mb.work);
  EXPECT_EQ(a.parameters().theta, b.parameters().theta);
}

TEST(Trainer, WarmupDropsLeftoverSamplesEachEpoch) {
  // N = 80, b = 32: two batches of 32, sixteen samples dropped this epoch.
  const auto data = synth_blobs(25, 4, 6, 0.4, 9);
  ASSERT_EQ(data.train.size(), 80u);
  auto cfg = quick_config(Strategy::kRandom);
  cfg.epochs = 1;
  cfg.warmup_epochs = 1;
  cfg.window = 1;
  cfg.batch_size = 32;

  std::ostringstream events;
  Trainer trainer(cfg, data.train, data.test);
  trainer.hooks().event_log = &events;
  trainer.run();

  const auto rows = parse_events(events.str());
  EXPECT_EQ(rows.size(), 64u);  // floor(80/32) = 2 batches of 32
  std::size_t with_history = 0;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto len = trainer.bank().history(i).size();
    EXPECT_LE(len, 1u);
    with_history += len;
  }
  EXPECT_EQ(with_history, 64u);
}

TEST(Trainer, WarmupCoversEverySampleWhenDivisible) {
  const auto data = synth_blobs(40, 4, 6, 0.4, 11);  // 128 train samples
  auto cfg = quick_config(Strategy::kRecencyBias);
  cfg.epochs = 10;
  cfg.warmup_epochs = 10;
  cfg.window = 10;
  cfg.batch_size = 32;
  Trainer trainer(cfg, data.train, data.test);
  trainer.run();
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    EXPECT_EQ(trainer.bank().history(i).size(), 10u);
  }
}

TEST(Trainer, EpochAccountingIsFloorNOverB) {
  const auto data = synth_blobs(30, 4, 6, 0.5, 13);  // 96 train samples
  auto cfg = quick_config(Strategy::kRecencyBias);
  cfg.batch_size = 20;  // floor(96/20) = 4 batches per epoch
  cfg.epochs = 8;
  cfg.warmup_epochs = 3;
  cfg.window = 3;

  std::ostringstream events;
  Trainer trainer(cfg, data.train, data.test);
  trainer.hooks().event_log = &events;
  const auto metrics = trainer.run();

  std::map<int, std::map<int, int>> per_epoch_batches;
  for (const auto& row : parse_events(events.str())) {
    ++per_epoch_batches[row.epoch][row.batch];
  }
  ASSERT_EQ(per_epoch_batches.size(), 8u);
  for (const auto& [epoch, batches] : per_epoch_batches) {
    EXPECT_EQ(batches.size(), 4u) << "epoch " << epoch;
    for (const auto& [batch, count] : batches) {
      EXPECT_EQ(count, 20) << "epoch " << epoch << " batch " << batch;
    }
  }
  EXPECT_EQ(metrics.back().iteration, 8 * 4);
}

// Two different shuffle seeds permute the warm-up batches, but in both runs
// no sample appears more than once per epoch.
TEST(Trainer, ShuffleSeedChangesCompositionNotCoverage) {
  const auto data = synth_blobs(32, 2, 4, 0.4, 15);  // 50 per class... 51?
  auto cfg = quick_config(Strategy::kRandom);
  cfg.epochs = 1;
  cfg.warmup_epochs = 1;
  cfg.window = 1;
  cfg.batch_size = 16;

  auto run_events = [&](std::uint64_t shuffle_seed) {
    auto c = cfg;
    c.seeds.shuffle = shuffle_seed;
    std::ostringstream events;
    Trainer t(c, data.train, data.test);
    t.hooks().event_log = &events;
    t.run();
    return parse_events(events.str());
  };
  const auto a = run_events(2);
  const auto b = run_events(777);
  ASSERT_EQ(a.size(), b.size());
  std::vector<std::size_t> order_a, order_b;
  std::map<std::size_t, int> count_a, count_b;
  for (const auto& r : a) { order_a.push_back(r.sample); ++count_a[r.sample]; }
  for (const auto& r : b) { order_b.push_back(r.sample); ++count_b[r.sample]; }
  EXPECT_NE(order_a, order_b);
  for (const auto& [sample, count] : count_a) EXPECT_EQ(count, 1);
  for (const auto& [sample, count] : count_b) EXPECT_EQ(count, 1);
}

// With s_e0 = 1 the recency table is exactly uniform, and because the draw
// stream is shared the whole trajectory coincides with the random strategy.
TEST(Trainer, UnitPressureRecencyEqualsRandom) {
  const auto data = synth_blobs(100, 4, 8, 0.5, 17);
  auto recency_cfg = quick_config(Strategy::kRecencyBias);
  recency_cfg.s_e0 = 1.0;
  recency_cfg.pressure_mode = PressureMode::kConstant;

  double max_uniform_gap = 0.0;
  Trainer recency(recency_cfg, data.train, data.test);
  recency.hooks().on_table = [&](int, const SamplingTable& table,
                                 const RecencyTable*) {
    const double uniform = 1.0 / static_cast<double>(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      max_uniform_gap = std::max(max_uniform_gap,
                                 std::abs(table.probability(i) - uniform));
    }
  };
  const auto mr = view_of(recency.run());
  EXPECT_LE(max_uniform_gap, verify::tol::kUniformTable);

  Trainer random(quick_config(Strategy::kRandom), data.train, data.test);
  const auto mq = view_of(random.run());
  EXPECT_EQ(mr.train_loss, mq.train_loss);
  EXPECT_EQ(mr.test_error, mq.test_error);
}

TEST(Trainer, BestTestErrorIsMonotone) {
  const auto data = synth_blobs(60, 4, 6, 1.0, 19);
  for (const Strategy s : {Strategy::kRandom, Strategy::kOnlineBatch,
                           Strategy::kActiveBias, Strategy::kRecencyBias}) {
    Trainer trainer(quick_config(s), data.train, data.test);
    const auto metrics = trainer.run();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : metrics) {
      best = std::min(best, m.test_error);
      EXPECT_DOUBLE_EQ(m.best_test_error, best);
    }
  }
}

// Every adaptive-epoch recency table satisfies the normalization and
// positivity invariants end to end.
TEST(Trainer, RecencyTablesStayValidThroughRun) {
  const auto data = synth_blobs(80, 4, 6, 0.8, 23);
  auto cfg = quick_config(Strategy::kRecencyBias);
  cfg.epochs = 16;
  Trainer trainer(cfg, data.train, data.test);
  int tables_seen = 0;
  trainer.hooks().on_table = [&](int, const SamplingTable& table,
                                 const RecencyTable* detail) {
    ++tables_seen;
    ASSERT_NE(detail, nullptr);
    double sum = 0.0;
    for (std::size_t i = 0; i < table.size(); ++i) {
      EXPECT_GT(table.probability(i), 0.0);
      sum += table.probability(i);
    }
    EXPECT_NEAR(sum, 1.0, verify::tol::kTableSum);
  };
  trainer.run();
  EXPECT_EQ(tables_seen, 16 - 4);
}

// A sample's history holds exactly the labels predicted when it sat in a
// forward pass, verified by replaying the event log.
TEST(Trainer, HistoryFreshnessMatchesEventLog) {
  const auto data = synth_blobs(50, 4, 6, 0.8, 29);
  auto cfg = quick_config(Strategy::kRecencyBias);
  cfg.epochs = 14;
  cfg.warmup_epochs = 4;
  cfg.window = 3;

  std::ostringstream events;
  Trainer trainer(cfg, data.train, data.test);
  trainer.hooks().event_log = &events;
  trainer.run();

  std::map<std::size_t, std::vector<std::int32_t>> replay;
  for (const auto& row : parse_events(events.str())) {
    replay[row.sample].push_back(row.predicted);
  }
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto& seen = replay[i];
    const std::size_t expect = std::min<std::size_t>(cfg.window, seen.size());
    const std::vector<std::int32_t> tail(seen.end() - expect, seen.end());
    EXPECT_EQ(trainer.bank().history(i).entries(), tail) << "sample " << i;
  }
}

// Constant pressure keeps the max/min probability ratio of the table pinned
// across epochs for a fixed uncertainty profile; decay drives it to 1 at
// e_end.
TEST(Trainer, PressureModeControlsTableRatio) {
  HistoryBank bank(60, 4, 6);
  std::mt19937_64 rng(31);
  for (std::size_t i = 0; i < 60; ++i) {
    for (int t = 0; t < 6; ++t) {
      const bool uncertain = i % 3 == 0;
      bank.record(i, uncertain ? static_cast<std::int32_t>(bounded(rng, 4))
                               : 1);
    }
  }
  const double delta = 1.0 / 60.0;
  const int e0 = 11, e_end = 40;

  const PressureSchedule constant{100.0, e0, e_end,
                                  PressureSchedule::Mode::kConstant};
  const PressureSchedule decay{100.0, e0, e_end,
                               PressureSchedule::Mode::kExponentialDecay};
  std::vector<double> constant_ratio, decay_ratio;
  for (int e = e0; e <= e_end; ++e) {
    const auto tc =
        recency_bias_table(bank, pressure_at(constant, e), delta, e);
    const auto td = recency_bias_table(bank, pressure_at(decay, e), delta, e);
    constant_ratio.push_back(tc.max_probability() / tc.min_probability());
    decay_ratio.push_back(td.max_probability() / td.min_probability());
  }
  for (const double r : constant_ratio) {
    EXPECT_NEAR(r, constant_ratio.front(), 1e-9 * constant_ratio.front());
  }
  for (std::size_t i = 1; i < decay_ratio.size(); ++i) {
    EXPECT_LE(decay_ratio[i], decay_ratio[i - 1] * (1.0 + 1e-12));
  }
  EXPECT_NEAR(decay_ratio.back(), 1.0, verify::tol::kDecayRatioEnd);
}

TEST(WeightedEstimateCheck, UniformTableMatchesFullGradient) {
  const auto data = synth_blobs(5, 2, 4, 0.6, 37);  // 8 train samples
  Dataset six = data.train;
  six.inputs.resize(6 * six.dim);
  six.labels.resize(6);

  ModelSpec spec{ModelKind::kSoftmaxRegression, six.dim, 0, six.num_classes, 3};
  const auto params = init_parameters(spec);
  const auto table = uniform_table(6);
  const auto report = weighted_estimate_check(spec, params, table, six, 2);
  EXPECT_EQ(report.batches_enumerated, 36u);
  EXPECT_LE(report.max_weight_sum_error, verify::tol::kWeightSum);
  EXPECT_LE(report.plain_estimate_deviation, verify::tol::kUniformExpectation);
  EXPECT_LE(report.weighted_estimate_deviation,
            verify::tol::kUniformExpectation);
}

TEST(WeightedEstimateCheck, WeightsNormalizeForSkewedTables) {
  const auto data = synth_blobs(5, 2, 4, 0.6, 41);
  Dataset six = data.train;
  six.inputs.resize(6 * six.dim);
  six.labels.resize(6);

  ModelSpec spec{ModelKind::kSoftmaxRegression, six.dim, 0, six.num_classes, 5};
  const auto params = init_parameters(spec);
  const auto table =
      SamplingTable::from_weights({1.0, 2.0, 4.0, 8.0, 16.0, 32.0});
  const auto report = weighted_estimate_check(spec, params, table, six, 3);
  EXPECT_EQ(report.batches_enumerated, 216u);
  EXPECT_LE(report.max_weight_sum_error, verify::tol::kWeightSum);
  // Non-uniform tables bias both estimators; the deviations are reported,
  // not asserted to vanish.
  EXPECT_TRUE(std::isfinite(report.plain_estimate_deviation));
  EXPECT_TRUE(std::isfinite(report.weighted_estimate_deviation));
}

TEST(WeightedEstimateCheck, ConcentratedTableRecoversSingleGradient) {
  const auto data = synth_blobs(5, 2, 4, 0.6, 43);
  Dataset six = data.train;
  six.inputs.resize(6 * six.dim);
  six.labels.resize(6);

  ModelSpec spec{ModelKind::kSoftmaxRegression, six.dim, 0, six.num_classes, 7};
  const auto params = init_parameters(spec);
  const double eps = 1e-9;
  std::vector<double> probs(6, eps);
  probs[2] = 1.0 - 5 * eps;
  const auto table = SamplingTable::from_probabilities(probs);

  const auto report = weighted_estimate_check(spec, params, table, six, 2);
  const std::vector<std::size_t> one = {2};
  const auto target = backward(spec, params, six, one);
  std::vector<std::size_t> all(6);
  std::iota(all.begin(), all.end(), 0);
  const auto full = backward(spec, params, six, all);
  // E[plain batch gradient] must sit near sample 2's own gradient, far from
  // the full-dataset mean unless they coincide.
  EXPECT_LE(report.max_weight_sum_error, verify::tol::kWeightSum);
  const double gap_to_target = verify::max_abs_error(target, full);
  if (gap_to_target > 1e-6) {
    EXPECT_GT(report.plain_estimate_deviation, gap_to_target / 2.0);
  }
}

TEST(WeightedEstimateCheck, RejectsLargeInstances) {
  const auto data = synth_blobs(20, 2, 4, 0.6, 47);
  ModelSpec spec{ModelKind::kSoftmaxRegression, data.train.dim, 0,
                 data.train.num_classes, 3};
  const auto params = init_parameters(spec);
  const auto table = uniform_table(data.train.size());
  EXPECT_THROW(
      weighted_estimate_check(spec, params, table, data.train, 2),
      std::invalid_argument);
}

// Uniform draws reproduce the population loss histogram within binomial
// noise (4 standard deviations per bin).
TEST(LossHistogramProbe, UniformSelectionMatchesPopulation) {
  const auto data = synth_blobs(100, 4, 8, 1.2, 53);
  ModelSpec spec{ModelKind::kSoftmaxRegression, data.train.dim, 0,
                 data.train.num_classes, 11};
  const auto params = init_parameters(spec);
  std::vector<std::size_t> all(data.train.size());
  std::iota(all.begin(), all.end(), 0);
  const auto losses = forward(spec, params, data.train, all).loss;

  LossHistogram population;
  for (const double l : losses) population.add(l);

  const auto table = uniform_table(data.train.size());
  std::mt19937_64 rng(59);
  LossHistogram selected;
  constexpr int kDraws = 200000;
  for (int i = 0; i < kDraws; ++i) selected.add(losses[table.draw(rng)]);

  const double n = static_cast<double>(data.train.size());
  for (std::size_t bin = 0; bin < LossHistogram::kBins; ++bin) {
    const double p = static_cast<double>(population.counts[bin]) / n;
    const double expected = p * kDraws;
    const double sd = std::sqrt(kDraws * p * (1.0 - p));
    EXPECT_NEAR(static_cast<double>(selected.counts[bin]), expected,
                4.0 * sd + 1e-9)
        << "bin " << bin;
  }
}

TEST(LossHistogramProbe, PicksTheStageEpoch) {
  std::vector<MetricsRecord> metrics(10);
  for (int e = 0; e < 10; ++e) {
    metrics[static_cast<std::size_t>(e)].epoch = e + 1;
    metrics[static_cast<std::size_t>(e)].selected_hist.add(0.1 * (e + 1));
  }
  EXPECT_EQ(&loss_distribution_probe(metrics, 0.3),
            &metrics[2].selected_hist);
  EXPECT_EQ(&loss_distribution_probe(metrics, 0.7),
            &metrics[6].selected_hist);
  EXPECT_EQ(&loss_distribution_probe(metrics, 0.0),
            &metrics[0].selected_hist);
  EXPECT_EQ(&loss_distribution_probe(metrics, 1.0),
            &metrics[9].selected_hist);
}

TEST(MetricsCsv, ByteStableFormatting) {
  std::vector<MetricsRecord> metrics(1);
  metrics[0].epoch = 3;
  metrics[0].iteration = 42;
  metrics[0].train_loss = 0.125;
  metrics[0].test_error = 12.5;
  metrics[0].work_units = 0.75;
  metrics[0].best_test_error = 10.0;
  std::ostringstream a, b;
  write_metrics_csv(a, metrics);
  write_metrics_csv(b, metrics);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str(),
            "epoch,iteration,train_loss,test_error,elapsed_sec,"
            "best_test_error\n"
            "3,42,0.125,12.500000,0.750000,10.000000\n");
}

TEST(LossHistogram, BinningAndOverflow) {
  LossHistogram h;
  h.add(0.0);
  h.add(0.05);
  h.add(4.999);
  h.add(100.0);  // overflow lands in the top bin
  EXPECT_EQ(h.counts[0], 2);
  EXPECT_EQ(h.counts[LossHistogram::kBins - 1], 2);
  EXPECT_EQ(h.total(), 4);
  EXPECT_DOUBLE_EQ(LossHistogram::bin_lo(0), 0.0);
  EXPECT_DOUBLE_EQ(LossHistogram::bin_hi(LossHistogram::kBins - 1), 5.0);
}
