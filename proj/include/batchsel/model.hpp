#pragma once

// Minimal differentiable classifiers with hand-derived gradients: softmax
// regression and a one-hidden-layer ReLU MLP. Parameters live in one flat
// vector so the optimizers and the finite-difference oracle stay generic.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "batchsel/data.hpp"
#include "batchsel/random.hpp"

namespace batchsel {

enum class ModelKind { kSoftmaxRegression, kMlp1Hidden };

inline std::string_view model_kind_name(ModelKind kind) {
  return kind == ModelKind::kSoftmaxRegression ? "softmax-regression"
                                               : "mlp-1hidden";
}

inline ModelKind parse_model_kind(std::string_view name) {
  if (name == "softmax-regression" || name == "softmax") {
    return ModelKind::kSoftmaxRegression;
  }
  if (name == "mlp-1hidden" || name == "mlp") return ModelKind::kMlp1Hidden;
  throw std::invalid_argument("unknown model kind: " + std::string(name));
}

struct ModelSpec {
  ModelKind kind = ModelKind::kSoftmaxRegression;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;  // MLP only
  std::size_t num_classes = 0;
  std::uint64_t init_seed = 1;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("ModelSpec: input_dim");
    if (num_classes < 2) throw std::invalid_argument("ModelSpec: num_classes");
    if (kind == ModelKind::kMlp1Hidden && hidden_dim == 0) {
      throw std::invalid_argument("ModelSpec: hidden_dim");
    }
  }

  // Flat layout: softmax [W(k x d), b(k)]; MLP [W1(h x d), b1(h),
  // W2(k x h), b2(k)]. All matrices row-major.
  std::size_t parameter_count() const {
    if (kind == ModelKind::kSoftmaxRegression) {
      return num_classes * input_dim + num_classes;
    }
    return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim +
           num_classes;
  }
};

struct ParameterSet {
  std::vector<double> theta;
  std::vector<double> momentum;
};

// Glorot-uniform weights, zero biases; draw order is fixed so trajectories
// are bit-reproducible under a seed.
inline ParameterSet init_parameters(const ModelSpec& spec) {
  spec.validate();
  ParameterSet p;
  p.theta.assign(spec.parameter_count(), 0.0);
  p.momentum.assign(spec.parameter_count(), 0.0);
  std::mt19937_64 rng(spec.init_seed);
  auto fill_uniform = [&](std::size_t offset, std::size_t count, double a) {
    for (std::size_t i = 0; i < count; ++i) {
      p.theta[offset + i] = a * (2.0 * uniform53(rng) - 1.0);
    }
  };
  if (spec.kind == ModelKind::kSoftmaxRegression) {
    const double a = std::sqrt(6.0 / static_cast<double>(spec.input_dim +
                                                         spec.num_classes));
    fill_uniform(0, spec.num_classes * spec.input_dim, a);
  } else {
    const double a1 = std::sqrt(6.0 / static_cast<double>(spec.input_dim +
                                                          spec.hidden_dim));
    const double a2 = std::sqrt(6.0 / static_cast<double>(spec.hidden_dim +
                                                          spec.num_classes));
    fill_uniform(0, spec.hidden_dim * spec.input_dim, a1);
    fill_uniform(spec.hidden_dim * spec.input_dim + spec.hidden_dim,
                 spec.num_classes * spec.hidden_dim, a2);
  }
  return p;
}

struct ForwardResult {
  std::vector<double> loss;               // per sample, >= 0
  std::vector<std::int32_t> predicted;    // argmax, ties to lowest class
  std::vector<double> true_prob;          // softmax of the true class, (0, 1)
};

namespace detail {

inline void check_batch(const ModelSpec& spec, const Dataset& ds,
                        std::span<const std::size_t> batch) {
  if (ds.dim != spec.input_dim) {
    throw std::invalid_argument("model: dataset dim does not match spec");
  }
  for (const std::size_t i : batch) {
    if (i >= ds.size()) {
      throw std::out_of_range("model: batch index out of range");
    }
    const std::int32_t y = ds.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes) {
      throw std::invalid_argument("model: label out of range");
    }
    const double* x = ds.row(i);
    for (std::size_t j = 0; j < ds.dim; ++j) {
      if (!std::isfinite(x[j])) {
        throw std::invalid_argument("model: non-finite input feature");
      }
    }
  }
}

// Softmax cross-entropy pieces from raw logits; log-sum-exp stabilized.
struct LogitSummary {
  double lse = 0.0;
  std::int32_t argmax = 0;
};

inline LogitSummary summarize_logits(const double* z, std::size_t k) {
  LogitSummary s;
  double zmax = z[0];
  for (std::size_t j = 1; j < k; ++j) {
    if (z[j] > zmax) {
      zmax = z[j];
      s.argmax = static_cast<std::int32_t>(j);
    }
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < k; ++j) acc += std::exp(z[j] - zmax);
  s.lse = zmax + std::log(acc);
  return s;
}

inline double clamp_prob(double p) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return p < lo ? lo : (p > hi ? hi : p);
}

}  // namespace detail

// Scratch buffers reused across calls; one Workspace per thread of control.
struct Workspace {
  std::vector<double> hidden;       // h
  std::vector<double> hidden_grad;  // h
  std::vector<double> logits;       // k
  std::vector<double> probs;        // k
};

namespace detail {

inline void forward_sample(const ModelSpec& spec, const double* theta,
                           const double* x, Workspace& ws) {
  const std::size_t d = spec.input_dim;
  const std::size_t k = spec.num_classes;
  ws.logits.assign(k, 0.0);
  if (spec.kind == ModelKind::kSoftmaxRegression) {
    const double* w = theta;
    const double* b = theta + k * d;
    for (std::size_t j = 0; j < k; ++j) {
      double acc = b[j];
      const double* row = w + j * d;
      for (std::size_t m = 0; m < d; ++m) acc += row[m] * x[m];
      ws.logits[j] = acc;
    }
    return;
  }
  const std::size_t h = spec.hidden_dim;
  const double* w1 = theta;
  const double* b1 = theta + h * d;
  const double* w2 = b1 + h;
  const double* b2 = w2 + k * h;
  ws.hidden.assign(h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    double acc = b1[j];
    const double* row = w1 + j * d;
    for (std::size_t m = 0; m < d; ++m) acc += row[m] * x[m];
    ws.hidden[j] = acc > 0.0 ? acc : 0.0;
  }
  for (std::size_t j = 0; j < k; ++j) {
    double acc = b2[j];
    const double* row = w2 + j * h;
    for (std::size_t m = 0; m < h; ++m) acc += row[m] * ws.hidden[m];
    ws.logits[j] = acc;
  }
}

}  // namespace detail

// Per-sample cross-entropy losses, argmax predictions, and true-class
// softmax probabilities for a batch of dataset rows.
inline ForwardResult forward(const ModelSpec& spec, const ParameterSet& params,
                             const Dataset& ds,
                             std::span<const std::size_t> batch) {
  spec.validate();
  detail::check_batch(spec, ds, batch);
  ForwardResult out;
  out.loss.resize(batch.size());
  out.predicted.resize(batch.size());
  out.true_prob.resize(batch.size());
  Workspace ws;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t i = batch[s];
    detail::forward_sample(spec, params.theta.data(), ds.row(i), ws);
    const auto summary =
        detail::summarize_logits(ws.logits.data(), spec.num_classes);
    const std::int32_t y = ds.labels[i];
    const double loss = summary.lse - ws.logits[static_cast<std::size_t>(y)];
    out.loss[s] = loss < 0.0 ? 0.0 : loss;
    out.predicted[s] = summary.argmax;
    out.true_prob[s] = detail::clamp_prob(
        std::exp(ws.logits[static_cast<std::size_t>(y)] - summary.lse));
  }
  return out;
}

struct ForwardBackward {
  ForwardResult forward;
  std::vector<double> gradient;  // of the mean batch loss
};

// Fused pass; the gradient is of the mean loss over the batch, so duplicated
// samples contribute proportionally.
inline ForwardBackward forward_backward(const ModelSpec& spec,
                                        const ParameterSet& params,
                                        const Dataset& ds,
                                        std::span<const std::size_t> batch) {
  spec.validate();
  if (batch.empty()) {
    throw std::invalid_argument("forward_backward: empty batch");
  }
  detail::check_batch(spec, ds, batch);

  const std::size_t d = spec.input_dim;
  const std::size_t k = spec.num_classes;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ForwardBackward out;
  out.forward.loss.resize(batch.size());
  out.forward.predicted.resize(batch.size());
  out.forward.true_prob.resize(batch.size());
  out.gradient.assign(spec.parameter_count(), 0.0);
  Workspace ws;

  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t i = batch[s];
    const double* x = ds.row(i);
    detail::forward_sample(spec, params.theta.data(), x, ws);
    const auto summary =
        detail::summarize_logits(ws.logits.data(), spec.num_classes);
    const std::int32_t y = ds.labels[i];
    const double loss = summary.lse - ws.logits[static_cast<std::size_t>(y)];
    out.forward.loss[s] = loss < 0.0 ? 0.0 : loss;
    out.forward.predicted[s] = summary.argmax;
    out.forward.true_prob[s] = detail::clamp_prob(
        std::exp(ws.logits[static_cast<std::size_t>(y)] - summary.lse));

    ws.probs.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      ws.probs[j] = std::exp(ws.logits[j] - summary.lse);
    }
    ws.probs[static_cast<std::size_t>(y)] -= 1.0;  // dL/dz, unscaled

    if (spec.kind == ModelKind::kSoftmaxRegression) {
      double* gw = out.gradient.data();
      double* gb = out.gradient.data() + k * d;
      for (std::size_t j = 0; j < k; ++j) {
        const double dz = ws.probs[j] * inv_b;
        double* grow = gw + j * d;
        for (std::size_t m = 0; m < d; ++m) grow[m] += dz * x[m];
        gb[j] += dz;
      }
    } else {
      const std::size_t h = spec.hidden_dim;
      const double* w2 = params.theta.data() + h * d + h;
      double* gw1 = out.gradient.data();
      double* gb1 = out.gradient.data() + h * d;
      double* gw2 = gb1 + h;
      double* gb2 = gw2 + k * h;
      ws.hidden_grad.assign(h, 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        const double dz = ws.probs[j] * inv_b;
        const double* w2row = w2 + j * h;
        double* g2row = gw2 + j * h;
        for (std::size_t m = 0; m < h; ++m) {
          g2row[m] += dz * ws.hidden[m];
          ws.hidden_grad[m] += dz * w2row[m];
        }
        gb2[j] += dz;
      }
      for (std::size_t m = 0; m < h; ++m) {
        if (ws.hidden[m] <= 0.0) continue;  // ReLU gate
        const double dh = ws.hidden_grad[m];
        double* g1row = gw1 + m * d;
        for (std::size_t j = 0; j < d; ++j) g1row[j] += dh * x[j];
        gb1[m] += dh;
      }
    }
  }
  return out;
}

inline std::vector<double> backward(const ModelSpec& spec,
                                    const ParameterSet& params,
                                    const Dataset& ds,
                                    std::span<const std::size_t> batch) {
  return forward_backward(spec, params, ds, batch).gradient;
}

inline double mean_loss(const ModelSpec& spec, const ParameterSet& params,
                        const Dataset& ds, std::span<const std::size_t> batch) {
  const auto fwd = forward(spec, params, ds, batch);
  double acc = 0.0;
  for (const double l : fwd.loss) acc += l;
  return acc / static_cast<double>(fwd.loss.size());
}

namespace detail {
inline void check_gradient(const std::vector<double>& grad,
                           std::size_t expected) {
  if (grad.size() != expected) {
    throw std::invalid_argument("optimizer: gradient shape mismatch");
  }
  for (const double g : grad) {
    if (!std::isfinite(g)) {
      throw std::invalid_argument("optimizer: non-finite gradient");
    }
  }
}
}  // namespace detail

inline void sgd_step(ParameterSet& params, const std::vector<double>& grad,
                     double lr) {
  detail::check_gradient(grad, params.theta.size());
  for (std::size_t i = 0; i < params.theta.size(); ++i) {
    params.theta[i] -= lr * grad[i];
  }
}

// Heavy ball: v <- mu v + g, theta <- theta - lr v.
inline void momentum_step(ParameterSet& params, const std::vector<double>& grad,
                          double lr, double mu = 0.9) {
  detail::check_gradient(grad, params.theta.size());
  for (std::size_t i = 0; i < params.theta.size(); ++i) {
    params.momentum[i] = mu * params.momentum[i] + grad[i];
    params.theta[i] -= lr * params.momentum[i];
  }
}

// Step schedule: base rate, then /10 at 50% and /100 at 75% of the total
// iteration budget.
inline double lr_schedule(double base_lr, std::int64_t iteration,
                          std::int64_t total_iterations) {
  if (iteration < 0 || iteration >= total_iterations) {
    throw std::invalid_argument("lr_schedule: iteration outside [0, total)");
  }
  if (iteration * 4 >= total_iterations * 3) return base_lr / 100.0;
  if (iteration * 2 >= total_iterations) return base_lr / 10.0;
  return base_lr;
}

// Checkpoint: raw little-endian float64 vector plus a JSON sidecar with the
// shapes.
inline void save_parameters(const ModelSpec& spec, const ParameterSet& params,
                            const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_parameters: cannot open " + path.string());
  }
  out.write(reinterpret_cast<const char*>(params.theta.data()),
            static_cast<std::streamsize>(params.theta.size() * 8));
  if (!out) throw std::runtime_error("save_parameters: write failed");

  nlohmann::json sidecar;
  sidecar["kind"] = std::string(model_kind_name(spec.kind));
  sidecar["dtype"] = "float64-le";
  sidecar["input_dim"] = spec.input_dim;
  sidecar["hidden_dim"] = spec.hidden_dim;
  sidecar["num_classes"] = spec.num_classes;
  sidecar["count"] = params.theta.size();
  if (spec.kind == ModelKind::kSoftmaxRegression) {
    sidecar["shapes"] = {{"W", {spec.num_classes, spec.input_dim}},
                         {"b", {spec.num_classes}}};
  } else {
    sidecar["shapes"] = {{"W1", {spec.hidden_dim, spec.input_dim}},
                         {"b1", {spec.hidden_dim}},
                         {"W2", {spec.num_classes, spec.hidden_dim}},
                         {"b2", {spec.num_classes}}};
  }
  std::ofstream meta(path.string() + ".json");
  meta << sidecar.dump(2) << "\n";
  if (!meta) throw std::runtime_error("save_parameters: sidecar write failed");
}

inline ParameterSet load_parameters(const ModelSpec& spec,
                                    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_parameters: cannot open " + path.string());
  }
  ParameterSet params;
  params.theta.resize(spec.parameter_count());
  params.momentum.assign(spec.parameter_count(), 0.0);
  in.read(reinterpret_cast<char*>(params.theta.data()),
          static_cast<std::streamsize>(params.theta.size() * 8));
  if (!in || in.gcount() !=
                 static_cast<std::streamsize>(params.theta.size() * 8)) {
    throw std::runtime_error("load_parameters: truncated checkpoint");
  }
  return params;
}

}  // namespace batchsel
