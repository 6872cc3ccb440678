#pragma once

// Per-epoch sampling distributions for the four batch selection strategies
// and the draw structures used to sample mini-batch indices from them.
//
// Weight construction for the exponential families runs in log space with a
// max-subtraction step before normalization, so strict positivity survives
// large selection pressures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "batchsel/history.hpp"
#include "batchsel/random.hpp"

namespace batchsel {

enum class Strategy { kRandom, kOnlineBatch, kActiveBias, kRecencyBias };

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "random";
    case Strategy::kOnlineBatch: return "online-batch";
    case Strategy::kActiveBias: return "active-bias";
    case Strategy::kRecencyBias: return "recency-bias";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "random") return Strategy::kRandom;
  if (name == "online-batch") return Strategy::kOnlineBatch;
  if (name == "active-bias") return Strategy::kActiveBias;
  if (name == "recency-bias") return Strategy::kRecencyBias;
  throw std::invalid_argument("unknown strategy: " + std::string(name));
}

// Immutable categorical distribution over sample indices plus its prefix
// sums. Construction validates strict positivity and normalization; a built
// table may be shared freely across threads.
class SamplingTable {
 public:
  static constexpr double kSumTolerance = 1e-9;

  static SamplingTable from_probabilities(std::vector<double> probs,
                                          int epoch = 0) {
    return SamplingTable(std::move(probs), epoch, /*normalize=*/false);
  }

  static SamplingTable from_weights(std::vector<double> weights,
                                    int epoch = 0) {
    return SamplingTable(std::move(weights), epoch, /*normalize=*/true);
  }

  std::size_t size() const { return probs_.size(); }
  double probability(std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probabilities() const { return probs_; }
  const std::vector<double>& cumulative() const { return cumulative_; }
  int epoch_built() const { return epoch_built_; }

  double min_probability() const {
    return *std::min_element(probs_.begin(), probs_.end());
  }
  double max_probability() const {
    return *std::max_element(probs_.begin(), probs_.end());
  }

  // Draw mapping shared with AliasSampler: one uniform variate u in [0, 1)
  // per draw. Returns the first index whose cumulative mass exceeds u;
  // O(log N).
  std::size_t draw(double u) const {
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) return probs_.size() - 1;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

  std::size_t draw(std::mt19937_64& rng) const { return draw(uniform53(rng)); }

 private:
  SamplingTable(std::vector<double> values, int epoch, bool normalize)
      : probs_(std::move(values)), epoch_built_(epoch) {
    if (probs_.empty()) {
      throw std::invalid_argument("SamplingTable: empty distribution");
    }
    double sum = 0.0;
    for (const double v : probs_) {
      if (!std::isfinite(v) || v <= 0.0) {
        throw std::invalid_argument(
            "SamplingTable: probabilities must be finite and strictly "
            "positive");
      }
      sum += v;
    }
    if (normalize) {
      for (double& v : probs_) v /= sum;
      sum = std::accumulate(probs_.begin(), probs_.end(), 0.0);
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw std::invalid_argument("SamplingTable: probabilities sum to " +
                                  std::to_string(sum) + ", expected 1");
    }
    cumulative_.resize(probs_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      acc += probs_[i];
      cumulative_[i] = acc;
    }
  }

  std::vector<double> probs_;
  std::vector<double> cumulative_;
  int epoch_built_ = 0;
};

// b independent draws with replacement.
inline std::vector<std::size_t> draw_batch(const SamplingTable& table,
                                           std::size_t b,
                                           std::mt19937_64& rng) {
  if (b == 0) {
    throw std::invalid_argument("draw_batch: batch size must be positive");
  }
  std::vector<std::size_t> batch(b);
  for (std::size_t i = 0; i < b; ++i) batch[i] = table.draw(rng);
  return batch;
}

// Walker alias structure; O(1) per draw. Consumes the same single uniform
// variate per draw as SamplingTable::draw: the integer part of u*N picks the
// column, the fractional part is the accept/alias coin.
class AliasSampler {
 public:
  explicit AliasSampler(const std::vector<double>& probs) {
    const std::size_t n = probs.size();
    if (n == 0) throw std::invalid_argument("AliasSampler: empty distribution");
    accept_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(probs[i]) || probs[i] <= 0.0) {
        throw std::invalid_argument("AliasSampler: invalid probability");
      }
      scaled[i] = probs[i] * static_cast<double>(n);
    }
    std::vector<std::size_t> small, large;
    small.reserve(n);
    large.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      const std::size_t l = large.back();
      small.pop_back();
      large.pop_back();
      accept_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] -= 1.0 - scaled[s];
      (scaled[l] < 1.0 ? small : large).push_back(l);
    }
    for (const std::size_t i : large) accept_[i] = 1.0;
    for (const std::size_t i : small) accept_[i] = 1.0;  // rounding leftovers
  }

  std::size_t size() const { return accept_.size(); }

  std::size_t draw(double u) const {
    const double scaled = u * static_cast<double>(accept_.size());
    std::size_t column = static_cast<std::size_t>(scaled);
    if (column >= accept_.size()) column = accept_.size() - 1;
    const double coin = scaled - static_cast<double>(column);
    return coin < accept_[column] ? column : alias_[column];
  }

  std::size_t draw(std::mt19937_64& rng) const { return draw(uniform53(rng)); }

 private:
  std::vector<double> accept_;
  std::vector<std::size_t> alias_;
};

// Quantization index ceil((1 - u) / delta); higher uncertainty maps to a
// smaller index. With delta = 1/N the index lies in [0, N].
inline std::int64_t quantize(double u, double delta) {
  if (!(delta > 0.0)) {
    throw std::invalid_argument("quantize: delta must be positive");
  }
  if (!(u >= 0.0 && u <= 1.0)) {
    throw std::invalid_argument("quantize: u must lie in [0, 1]");
  }
  return static_cast<std::int64_t>(std::ceil((1.0 - u) / delta));
}

// Selection pressure schedule over the adaptive epochs [first_epoch,
// last_epoch]. Decay mode moves geometrically from s_e0 down to 1.
struct PressureSchedule {
  enum class Mode { kConstant, kExponentialDecay };

  double s_e0 = 100.0;
  int first_epoch = 1;   // e_0
  int last_epoch = 1;    // e_end
  Mode mode = Mode::kExponentialDecay;
};

// Epochs outside [e_0, e_end] clamp to the nearer endpoint so warm-up code
// may query the schedule early. A degenerate span (e_end <= e_0) yields s_e0.
inline double pressure_at(const PressureSchedule& sched, int epoch) {
  if (!(sched.s_e0 >= 1.0)) {
    throw std::invalid_argument("pressure_at: s_e0 must be >= 1");
  }
  if (sched.mode == PressureSchedule::Mode::kConstant) return sched.s_e0;
  if (sched.last_epoch <= sched.first_epoch) return sched.s_e0;
  const int e = std::clamp(epoch, sched.first_epoch, sched.last_epoch);
  const double span = static_cast<double>(sched.last_epoch - sched.first_epoch);
  const double steps = static_cast<double>(e - sched.first_epoch);
  return sched.s_e0 * std::exp(std::log(1.0 / sched.s_e0) * steps / span);
}

// Shared kernel for the exponential-index families: probability of sample i
// is proportional to base^(-index_i) with base = exp(log(s_e) / n).
inline SamplingTable exponential_index_table(
    const std::vector<std::int64_t>& indices, double s_e, std::size_t n,
    int epoch = 0) {
  if (!(s_e >= 1.0)) {
    throw std::invalid_argument("exponential_index_table: s_e must be >= 1");
  }
  if (n == 0 || indices.empty()) {
    throw std::invalid_argument("exponential_index_table: empty input");
  }
  const double log_base = std::log(s_e) / static_cast<double>(n);
  std::vector<double> log_w(indices.size());
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    log_w[i] = -static_cast<double>(indices[i]) * log_base;
    max_log = std::max(max_log, log_w[i]);
  }
  std::vector<double> weights(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    weights[i] = std::exp(log_w[i] - max_log);
  }
  return SamplingTable::from_weights(std::move(weights), epoch);
}

struct RecencyTable {
  SamplingTable table;
  std::vector<double> uncertainty;
  std::vector<std::int64_t> quant_index;
};

// Recency Bias distribution: quantized predictive uncertainty fed through
// the exponential decay. Single O(N) pass over the bank.
inline RecencyTable build_recency_table(const HistoryBank& bank, double s_e,
                                        double delta, int epoch = 0) {
  const std::size_t n = bank.size();
  std::vector<double> uncertainty(n);
  std::vector<std::int64_t> quant(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (bank.history(i).empty()) {
      throw std::runtime_error(
          "build_recency_table: sample " + std::to_string(i) +
          " has an empty label history; run the warm-up period first");
    }
    uncertainty[i] = predictive_uncertainty(bank.history(i),
                                            bank.num_classes());
    quant[i] = quantize(uncertainty[i], delta);
  }
  SamplingTable table = exponential_index_table(quant, s_e, n, epoch);
  return RecencyTable{std::move(table), std::move(uncertainty),
                      std::move(quant)};
}

inline SamplingTable recency_bias_table(const HistoryBank& bank, double s_e,
                                        double delta, int epoch = 0) {
  return build_recency_table(bank, s_e, delta, epoch).table;
}

// Analytic worst-case floor for a Recency Bias table: the numerator with the
// quantization index clamped to its maximum ceil(1/delta) over the loosest
// denominator bound N.
inline double positivity_lower_bound(const SamplingTable& table, double s_e,
                                     double delta) {
  if (!(s_e >= 1.0)) {
    throw std::invalid_argument("positivity_lower_bound: s_e must be >= 1");
  }
  if (!(delta > 0.0)) {
    throw std::invalid_argument("positivity_lower_bound: delta must be > 0");
  }
  const double n = static_cast<double>(table.size());
  const double q_max = std::ceil(1.0 / delta);
  return std::exp(-q_max * std::log(s_e) / n) / n;
}

// Most recent per-sample training loss, for the rank-based baseline.
class OnlineBatchState {
 public:
  explicit OnlineBatchState(std::size_t num_samples)
      : last_loss_(num_samples, std::numeric_limits<double>::quiet_NaN()) {
    if (num_samples == 0) {
      throw std::invalid_argument("OnlineBatchState: need at least one sample");
    }
  }

  std::size_t size() const { return last_loss_.size(); }
  const std::vector<double>& last_loss() const { return last_loss_; }

  void record_loss(std::size_t i, double loss) {
    if (i >= last_loss_.size()) {
      throw std::out_of_range("OnlineBatchState: sample index out of range");
    }
    if (!std::isfinite(loss)) {
      throw std::invalid_argument("OnlineBatchState: loss must be finite");
    }
    last_loss_[i] = loss;
  }

  bool complete() const {
    for (const double v : last_loss_) {
      if (std::isnan(v)) return false;
    }
    return true;
  }

 private:
  std::vector<double> last_loss_;
};

// Rank-of-loss distribution: rank 1 is the largest loss, ties broken by
// ascending sample index; probability of rank r is proportional to
// base^(-r).
inline SamplingTable online_batch_table(const OnlineBatchState& state,
                                        double s_e, int epoch = 0) {
  if (!state.complete()) {
    throw std::runtime_error(
        "online_batch_table: some samples have no recorded loss");
  }
  const std::size_t n = state.size();
  const auto& loss = state.last_loss();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (loss[a] != loss[b]) return loss[a] > loss[b];
    return a < b;
  });
  std::vector<std::int64_t> rank(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    rank[order[pos]] = static_cast<std::int64_t>(pos + 1);
  }
  return exponential_index_table(rank, s_e, n, epoch);
}

// Growing history of true-label softmax probabilities, for the variance
// baseline.
class ActiveBiasState {
 public:
  ActiveBiasState(std::size_t num_samples, double epsilon)
      : history_(num_samples), epsilon_(epsilon) {
    if (num_samples == 0) {
      throw std::invalid_argument("ActiveBiasState: need at least one sample");
    }
    if (!(epsilon > 0.0)) {
      throw std::invalid_argument(
          "ActiveBiasState: epsilon must be positive to keep the "
          "distribution strictly positive");
    }
  }

  std::size_t size() const { return history_.size(); }
  double epsilon() const { return epsilon_; }
  const std::vector<std::vector<double>>& history() const { return history_; }

  void record_true_prob(std::size_t i, double p) {
    if (i >= history_.size()) {
      throw std::out_of_range("ActiveBiasState: sample index out of range");
    }
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument(
          "ActiveBiasState: probability must lie in (0, 1)");
    }
    history_[i].push_back(p);
  }

  // sqrt(var + var^2 / (n - 1)) over the full history, population variance;
  // fewer than two observations score 0 and lean entirely on epsilon.
  static double std_hat(const std::vector<double>& h) {
    const std::size_t n = h.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (const double v : h) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const double v : h) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    return std::sqrt(var + var * var / static_cast<double>(n - 1));
  }

 private:
  std::vector<std::vector<double>> history_;
  double epsilon_;
};

inline SamplingTable active_bias_table(const ActiveBiasState& state,
                                       int epoch = 0) {
  std::vector<double> weights(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    weights[i] = ActiveBiasState::std_hat(state.history()[i]) +
                 state.epsilon();
  }
  return SamplingTable::from_weights(std::move(weights), epoch);
}

inline SamplingTable uniform_table(std::size_t n, int epoch = 0) {
  if (n == 0) throw std::invalid_argument("uniform_table: empty");
  return SamplingTable::from_probabilities(
      std::vector<double>(n, 1.0 / static_cast<double>(n)), epoch);
}

}  // namespace batchsel
