#pragma once

// Independent brute-force oracles used by the test suites. Nothing in this
// header may include other batchsel headers: the point is that every
// computation here is a from-scratch reimplementation against which the
// production path is checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace batchsel::verify {

// Tolerances used across the oracle and acceptance suites, in one place.
namespace tol {
inline constexpr double kFormulaAbs = 1e-12;        // oracle fuzz comparisons
inline constexpr double kTableSum = 1e-9;           // table normalization
inline constexpr double kWeightSum = 1e-12;         // per-batch weight sums
inline constexpr double kUniformExpectation = 1e-10;  // enumeration vs full grad
inline constexpr double kGradientRel = 1e-5;        // analytic vs central FD
inline constexpr double kChiSquareAlpha = 1e-3;     // sampler goodness of fit
inline constexpr double kUniformTable = 1e-12;      // s_e = 1 degeneracy
inline constexpr double kScheduleEndpoint = 1e-9;   // pressure endpoints
inline constexpr double kDecayRatioEnd = 1e-6;      // max/min ratio at e_end
}  // namespace tol

struct OracleReport {
  std::string name;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline OracleReport make_report(std::string name, double max_abs_error,
                                double max_rel_error, double tolerance) {
  OracleReport report;
  report.name = std::move(name);
  report.max_abs_error = max_abs_error;
  report.max_rel_error = max_rel_error;
  report.tolerance = tolerance;
  report.pass =
      max_abs_error <= tolerance && max_rel_error <= tolerance;
  return report;
}

inline std::vector<double> naive_label_probability(
    const std::vector<int>& entries, std::size_t k) {
  if (entries.empty()) {
    throw std::runtime_error("naive_label_probability: empty history");
  }
  std::vector<double> p(k, 0.0);
  for (const int e : entries) {
    if (e < 0 || static_cast<std::size_t>(e) >= k) {
      throw std::invalid_argument("naive_label_probability: bad label");
    }
    p[static_cast<std::size_t>(e)] += 1.0;
  }
  for (double& v : p) v /= static_cast<double>(entries.size());
  return p;
}

// Textbook normalized entropy with integer counting, long double carry.
inline double naive_uncertainty(const std::vector<int>& entries,
                                std::size_t k) {
  if (k < 2) throw std::invalid_argument("naive_uncertainty: k < 2");
  if (entries.empty()) {
    throw std::runtime_error("naive_uncertainty: empty history");
  }
  std::vector<long long> counts(k, 0);
  for (const int e : entries) ++counts[static_cast<std::size_t>(e)];
  const long double n = static_cast<long double>(entries.size());
  long double entropy = 0.0L;
  for (const long long c : counts) {
    if (c == 0) continue;
    const long double p = static_cast<long double>(c) / n;
    entropy -= p * std::log(p);
  }
  long double u = entropy / std::log(static_cast<long double>(k));
  if (u < 0.0L) u = 0.0L;
  if (u > 1.0L) u = 1.0L;
  return static_cast<double>(u);
}

inline long long naive_quantize(double u, double delta) {
  return static_cast<long long>(std::ceil((1.0 - u) / delta));
}

// Double-precision uncertainty for the composed table oracle: the quantizer
// is discontinuous exactly at rational uncertainties (e.g. 1/3 with N a
// multiple of 3), so the value fed to it must carry the same double
// rounding as the production path. The uncertainty itself is checked
// against the long-double naive_uncertainty above.
inline double naive_uncertainty_f64(const std::vector<int>& entries,
                                    std::size_t k) {
  std::vector<long long> counts(k, 0);
  for (const int e : entries) ++counts[static_cast<std::size_t>(e)];
  const double n = static_cast<double>(entries.size());
  double entropy = 0.0;
  for (const long long c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  const double u = entropy / std::log(static_cast<double>(k));
  return u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
}

inline double naive_pressure(double s_e0, int epoch, int e0, int e_end,
                             bool decay) {
  if (!decay) return s_e0;
  if (e_end <= e0) return s_e0;
  const int e = std::clamp(epoch, e0, e_end);
  const long double ratio = std::exp(std::log(1.0L / (long double)s_e0) /
                                     (long double)(e_end - e0));
  long double s = (long double)s_e0;
  for (int i = e0; i < e; ++i) s *= ratio;
  return static_cast<double>(s);
}

// Direct power-form evaluation of the exponential-index probability, no log
// trick, long double accumulation.
inline std::vector<double> naive_exponential_index_probs(
    const std::vector<long long>& indices, double s_e, std::size_t n) {
  const long double base =
      std::exp(std::log((long double)s_e) / (long double)n);
  std::vector<long double> w(indices.size());
  long double sum = 0.0L;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    w[i] = 1.0L / std::pow(base, (long double)indices[i]);
    sum += w[i];
  }
  std::vector<double> p(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    p[i] = static_cast<double>(w[i] / sum);
  }
  return p;
}

inline std::vector<double> naive_recency_probs(
    const std::vector<std::vector<int>>& histories, std::size_t k, double s_e,
    double delta) {
  std::vector<long long> q(histories.size());
  for (std::size_t i = 0; i < histories.size(); ++i) {
    q[i] = naive_quantize(naive_uncertainty_f64(histories[i], k), delta);
  }
  return naive_exponential_index_probs(q, s_e, histories.size());
}

inline std::vector<double> naive_online_probs(const std::vector<double>& losses,
                                              double s_e) {
  const std::size_t n = losses.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (losses[a] != losses[b]) return losses[a] > losses[b];
    return a < b;
  });
  std::vector<long long> rank(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    rank[order[pos]] = static_cast<long long>(pos + 1);
  }
  return naive_exponential_index_probs(rank, s_e, n);
}

inline double naive_std_hat(const std::vector<double>& h) {
  const std::size_t n = h.size();
  if (n < 2) return 0.0;
  long double mean = 0.0L;
  for (const double v : h) mean += v;
  mean /= (long double)n;
  long double var = 0.0L;
  for (const double v : h) var += ((long double)v - mean) * ((long double)v - mean);
  var /= (long double)n;
  return static_cast<double>(
      std::sqrt(var + var * var / (long double)(n - 1)));
}

inline std::vector<double> naive_active_probs(
    const std::vector<std::vector<double>>& histories, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("naive_active_probs: eps <= 0");
  std::vector<long double> w(histories.size());
  long double sum = 0.0L;
  for (std::size_t i = 0; i < histories.size(); ++i) {
    w[i] = (long double)naive_std_hat(histories[i]) + (long double)eps;
    sum += w[i];
  }
  std::vector<double> p(histories.size());
  for (std::size_t i = 0; i < histories.size(); ++i) {
    p[i] = static_cast<double>(w[i] / sum);
  }
  return p;
}

struct ChiSquareResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t degrees_of_freedom = 0;
};

// Pearson goodness-of-fit; p-value from the regularized upper incomplete
// gamma function Q(df/2, statistic/2).
inline ChiSquareResult chi_square_gof(
    const std::vector<std::int64_t>& observed,
    const std::vector<double>& expected_probs) {
  if (observed.size() != expected_probs.size() || observed.size() < 2) {
    throw std::invalid_argument("chi_square_gof: size mismatch");
  }
  std::int64_t total = 0;
  for (const std::int64_t o : observed) {
    if (o < 0) throw std::invalid_argument("chi_square_gof: negative count");
    total += o;
  }
  if (total < 1000) {
    throw std::invalid_argument("chi_square_gof: need at least 1000 draws");
  }
  double statistic = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (!(expected_probs[i] > 0.0)) {
      throw std::invalid_argument(
          "chi_square_gof: expected probabilities must be positive");
    }
    const double expected = expected_probs[i] * static_cast<double>(total);
    const double diff = static_cast<double>(observed[i]) - expected;
    statistic += diff * diff / expected;
  }
  ChiSquareResult result;
  result.statistic = statistic;
  result.degrees_of_freedom = observed.size() - 1;
  result.p_value = boost::math::gamma_q(
      static_cast<double>(result.degrees_of_freedom) / 2.0, statistic / 2.0);
  return result;
}

// Central finite differences, coordinate by coordinate.
inline std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> params, double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite_difference_grad: step must be > 0");
  }
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double hi = f(params);
    params[i] = saved - step;
    const double lo = f(params);
    params[i] = saved;
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

// Scale-aware comparison used by the gradient checks: the max coordinate gap
// relative to the larger gradient's magnitude (floored so near-zero
// gradients compare absolutely).
inline double max_relative_error(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("max_relative_error: size mismatch");
  }
  double scale = 1e-3;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double max_abs_error(const std::vector<double>& a,
                            const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("max_abs_error: size mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace batchsel::verify
