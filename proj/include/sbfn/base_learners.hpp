#pragma once

// Small feedforward predictors used as ensemble members. Hidden layers use a
// pointwise activation (ReLU by default), the output layer is linear. For
// classification the outputs are logits; softmax is applied by the loss.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbfn/errors.hpp"
#include "sbfn/random.hpp"

namespace sbfn {

enum class Activation { relu, tanh };
enum class LossKind { squared, cross_entropy };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct MlpParams {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::relu;
  int output_dim = 1;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("MlpParams: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.weight.rows())
        throw ShapeError("MlpParams: bias/weight mismatch in layer " + std::to_string(i));
      if (i + 1 < layers.size() && layers[i + 1].weight.cols() != l.weight.rows())
        throw ShapeError("MlpParams: layer " + std::to_string(i) + " output does not feed layer " +
                         std::to_string(i + 1));
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw NumericError("MlpParams: non-finite entry in layer " + std::to_string(i));
    }
    if (layers.back().weight.rows() != output_dim)
      throw ShapeError("MlpParams: last layer width differs from output_dim");
  }
};

struct PredictorConfig {
  std::vector<int> hidden_sizes{20};
  double init_scale = 0.1;     // chi
  double l1_coeff = 0.0;       // lambda_1 for this predictor
  double learning_rate = 0.03; // eta_theta for this predictor
  std::uint64_t seed = 0;
  Activation activation = Activation::relu;

  void validate() const {
    if (hidden_sizes.empty()) throw ConfigError("PredictorConfig: hidden_sizes must be nonempty");
    for (int h : hidden_sizes)
      if (h < 1) throw ConfigError("PredictorConfig: hidden sizes must be positive");
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale))
      throw ConfigError("PredictorConfig: init_scale must be finite and >= 0");
    if (!(l1_coeff >= 0.0)) throw ConfigError("PredictorConfig: l1_coeff must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("PredictorConfig: learning_rate must be > 0");
  }
};

// Weights ~ Normal(0, (chi / sqrt(fan_in))^2), biases zero.
inline MlpParams init_mlp(const PredictorConfig& config, int in_dim, int out_dim) {
  config.validate();
  if (in_dim < 1 || out_dim < 1) throw ConfigError("init_mlp: dimensions must be >= 1");
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  MlpParams p;
  p.activation = config.activation;
  p.output_dim = out_dim;
  std::vector<int> widths{in_dim};
  widths.insert(widths.end(), config.hidden_sizes.begin(), config.hidden_sizes.end());
  widths.push_back(out_dim);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int fan_in = widths[i];
    const double sd = config.init_scale / std::sqrt(static_cast<double>(fan_in));
    DenseLayer l{Eigen::MatrixXd(widths[i + 1], fan_in), Eigen::VectorXd::Zero(widths[i + 1])};
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = sd * normal(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace detail {

inline double activate(Activation a, double v) {
  return a == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
}

// Derivative expressed through the activation output.
inline double activate_grad(Activation a, double pre, double post) {
  return a == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

inline void check_input(const MlpParams& params, const Eigen::VectorXd& x) {
  if (params.layers.empty()) throw ShapeError("forward: network has no layers");
  if (x.size() != params.input_dim())
    throw ShapeError("forward: input has dimension " + std::to_string(x.size()) + ", network expects " +
                     std::to_string(params.input_dim()));
}

}  // namespace detail

inline Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& x) {
  detail::check_input(params, x);
  Eigen::VectorXd h = x;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    Eigen::VectorXd z = l.weight * h + l.bias;
    if (i + 1 < params.layers.size())
      for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = detail::activate(params.activation, z[k]);
    h = std::move(z);
  }
  return h;
}

// Row-wise forward over an N x d matrix; returns N x output_dim.
inline Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& x) {
  if (params.layers.empty()) throw ShapeError("forward: network has no layers");
  if (x.cols() != params.input_dim()) throw ShapeError("forward_batch: input width mismatch");
  Eigen::MatrixXd h = x.transpose();
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    Eigen::MatrixXd z = (l.weight * h).colwise() + l.bias;
    if (i + 1 < params.layers.size()) z = z.unaryExpr([&](double v) { return detail::activate(params.activation, v); });
    h = std::move(z);
  }
  return h.transpose();
}

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Squared loss is (z - y)^2 on a scalar output; cross-entropy is -log softmax(z)[y]
// with y holding the class index.
inline double member_loss(const Eigen::VectorXd& output, double target, LossKind kind) {
  if (kind == LossKind::squared) {
    const double r = output[0] - target;
    return r * r;
  }
  const auto cls = static_cast<Eigen::Index>(target);
  return log_sum_exp(output) - output[cls];
}

namespace detail {

inline void check_loss_shape(const MlpParams& params, double target, LossKind kind) {
  if (kind == LossKind::squared && params.output_dim != 1)
    throw ShapeError("squared loss requires a scalar-output network");
  if (kind == LossKind::cross_entropy) {
    if (params.output_dim < 2) throw ShapeError("cross-entropy requires at least two logits");
    if (!(target >= 0.0) || target >= params.output_dim || target != std::floor(target))
      throw ShapeError("cross-entropy target is not a valid class index");
  }
}

// d loss / d output
inline Eigen::VectorXd output_grad(const Eigen::VectorXd& out, double target, LossKind kind) {
  if (kind == LossKind::squared) return Eigen::VectorXd::Constant(1, 2.0 * (out[0] - target));
  Eigen::VectorXd p = (out.array() - log_sum_exp(out)).exp();
  p[static_cast<Eigen::Index>(target)] -= 1.0;
  return p;
}

}  // namespace detail

// Gradient of member_loss with respect to every parameter, laid out like MlpParams.
inline MlpParams loss_gradient(const MlpParams& params, const Eigen::VectorXd& x, double target,
                               LossKind kind) {
  detail::check_input(params, x);
  detail::check_loss_shape(params, target, kind);
  const std::size_t n_layers = params.layers.size();
  std::vector<Eigen::VectorXd> inputs(n_layers), pre(n_layers);
  Eigen::VectorXd h = x;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = params.layers[i];
    inputs[i] = h;
    pre[i] = l.weight * h + l.bias;
    h = pre[i];
    if (i + 1 < n_layers)
      for (Eigen::Index k = 0; k < h.size(); ++k) h[k] = detail::activate(params.activation, h[k]);
  }

  MlpParams grad = params;
  Eigen::VectorXd g = detail::output_grad(h, target, kind);
  for (std::size_t i = n_layers; i-- > 0;) {
    grad.layers[i].weight.noalias() = g * inputs[i].transpose();
    grad.layers[i].bias = g;
    if (i == 0) break;
    Eigen::VectorXd back = params.layers[i].weight.transpose() * g;
    const Eigen::VectorXd& post = inputs[i];
    for (Eigen::Index k = 0; k < back.size(); ++k)
      back[k] *= detail::activate_grad(params.activation, pre[i - 1][k], post[k]);
    g = std::move(back);
  }
  for (std::size_t i = 0; i < n_layers; ++i)
    if (!grad.layers[i].weight.allFinite() || !grad.layers[i].bias.allFinite())
      throw NumericError("loss_gradient: non-finite gradient in layer " + std::to_string(i));
  return grad;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// theta <- theta - eta * (grad + l1 * sign(theta)), sign(0) = 0.
inline void apply_step(MlpParams& params, const MlpParams& grad, double eta, double l1) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    const auto& g = grad.layers[i];
    l.weight -= eta * (g.weight + l1 * l.weight.unaryExpr(&sign));
    l.bias -= eta * (g.bias + l1 * l.bias.unaryExpr(&sign));
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw NumericError("parameter update produced non-finite values in layer " + std::to_string(i));
  }
}

}  // namespace detail

// One epsilon-modulated step on a single sample:
//   theta <- theta - eta * (delta * grad L + l1 * sign(theta)).
inline void delta_weighted_update_inplace(MlpParams& params, const Eigen::VectorXd& x, double target,
                                          double delta, LossKind kind, const PredictorConfig& config) {
  if (!std::isfinite(delta)) throw NumericError("delta_weighted_update: non-finite delta");
  MlpParams grad = loss_gradient(params, x, target, kind);
  for (auto& l : grad.layers) {
    l.weight *= delta;
    l.bias *= delta;
  }
  detail::apply_step(params, grad, config.learning_rate, config.l1_coeff);
}

inline MlpParams delta_weighted_update(MlpParams params, const Eigen::VectorXd& x, double target,
                                       double delta, LossKind kind, const PredictorConfig& config) {
  delta_weighted_update_inplace(params, x, target, delta, kind, config);
  return params;
}

// Mini-batch form: gradient of (1/b) sum_i delta_i * L_i, then one step with the L1 term.
inline void delta_weighted_batch_update(MlpParams& params, const Eigen::MatrixXd& x,
                                        std::span<const double> targets, std::span<const double> deltas,
                                        LossKind kind, const PredictorConfig& config) {
  const auto b = static_cast<std::size_t>(x.rows());
  if (b == 0 || targets.size() != b || deltas.size() != b)
    throw ShapeError("delta_weighted_batch_update: batch sizes disagree");
  MlpParams total = params;
  for (auto& l : total.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (!std::isfinite(deltas[i])) throw NumericError("delta_weighted_batch_update: non-finite delta");
    if (deltas[i] == 0.0) continue;
    const MlpParams g = loss_gradient(params, x.row(static_cast<Eigen::Index>(i)).transpose(), targets[i], kind);
    const double w = deltas[i] / static_cast<double>(b);
    for (std::size_t k = 0; k < total.layers.size(); ++k) {
      total.layers[k].weight += w * g.layers[k].weight;
      total.layers[k].bias += w * g.layers[k].bias;
    }
  }
  detail::apply_step(params, total, config.learning_rate, config.l1_coeff);
}

}  // namespace sbfn
