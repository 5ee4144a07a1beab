#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "sbfn/errors.hpp"
#include "sbfn/random.hpp"
#include "sbfn/structured_dataset.hpp"

namespace sbfn {

inline double arithmetic_combine(std::span<const double> predictions) {
  if (predictions.empty()) throw ShapeError("arithmetic_combine: no predictions");
  return std::accumulate(predictions.begin(), predictions.end(), 0.0) / static_cast<double>(predictions.size());
}

// softmax(mean_j logits_j / T)
inline Eigen::VectorXd logit_average(const std::vector<Eigen::VectorXd>& logits_per_model, double temperature = 1.0) {
  if (logits_per_model.empty()) throw ShapeError("logit_average: no models");
  if (!(temperature > 0.0)) throw ConfigError("logit_average: temperature must be positive");
  const auto c = logits_per_model.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(c);
  for (const auto& l : logits_per_model) {
    if (l.size() != c) throw ShapeError("logit_average: inconsistent class count");
    mean += l;
  }
  mean /= static_cast<double>(logits_per_model.size());
  return softmax(mean / temperature);
}

// Linear gate over the concatenated probability blocks, softmax over models.
struct MoeGate {
  Eigen::MatrixXd weights;  // M x (M C)
  Eigen::VectorXd bias;     // M
  double learning_rate = 0.1;

  int num_models() const { return static_cast<int>(weights.rows()); }

  static MoeGate zeros(int num_models, int num_classes, double learning_rate = 0.1) {
    return {Eigen::MatrixXd::Zero(num_models, num_models * num_classes), Eigen::VectorXd::Zero(num_models),
            learning_rate};
  }

  Eigen::VectorXd gate(const Eigen::VectorXd& blocks) const {
    if (blocks.size() != weights.cols()) throw ShapeError("MoeGate: input width mismatch");
    return softmax(weights * blocks + bias);
  }
};

namespace detail {

inline void check_blocks(const std::vector<Eigen::VectorXd>& probs) {
  if (probs.empty()) throw ShapeError("moe_combine: no models");
  const auto c = probs.front().size();
  for (const auto& p : probs) {
    if (p.size() != c) throw ShapeError("moe_combine: inconsistent class count");
    if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > kSimplexTolerance)
      throw NumericError("moe_combine: input block is not a probability vector");
  }
}

inline Eigen::VectorXd concat(const std::vector<Eigen::VectorXd>& blocks) {
  const auto c = blocks.front().size();
  Eigen::VectorXd out(c * static_cast<Eigen::Index>(blocks.size()));
  for (std::size_t j = 0; j < blocks.size(); ++j) out.segment(static_cast<Eigen::Index>(j) * c, c) = blocks[j];
  return out;
}

// sum_j g_j p_j for a row of concatenated blocks
inline Eigen::VectorXd mix(const Eigen::VectorXd& blocks, const Eigen::VectorXd& g, Eigen::Index c) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(c);
  for (Eigen::Index j = 0; j < g.size(); ++j) out += g[j] * blocks.segment(j * c, c);
  return out;
}

}  // namespace detail

inline Eigen::VectorXd moe_combine(const std::vector<Eigen::VectorXd>& probs_per_model, const MoeGate& gate) {
  detail::check_blocks(probs_per_model);
  if (static_cast<int>(probs_per_model.size()) != gate.num_models()) throw ShapeError("moe_combine: model count differs from gate");
  const Eigen::VectorXd blocks = detail::concat(probs_per_model);
  return detail::mix(blocks, gate.gate(blocks), probs_per_model.front().size());
}

// Row-wise MoE output for a simplex structured matrix.
inline Eigen::MatrixXd moe_combine_rows(const StructuredMatrix& rows, const MoeGate& gate) {
  const Eigen::Index c = rows.geometry().num_classes;
  Eigen::MatrixXd out(rows.num_rows(), c);
  for (Eigen::Index i = 0; i < rows.num_rows(); ++i) {
    const Eigen::VectorXd u = rows.values().row(i).transpose();
    out.row(i) = detail::mix(u, gate.gate(u), c).transpose();
  }
  return out;
}

struct MoeGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

inline constexpr double kMoeProbFloor = 1e-12;

// Mean of -log(sum_j g_j p_j[y]) over the rows.
inline double moe_loss(const MoeGate& gate, const Eigen::MatrixXd& rows, std::span<const int> labels, int num_classes) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd u = rows.row(i).transpose();
    const Eigen::VectorXd q = detail::mix(u, gate.gate(u), num_classes);
    loss -= std::log(std::max(q[labels[static_cast<std::size_t>(i)]], kMoeProbFloor));
  }
  return loss / static_cast<double>(rows.rows());
}

inline MoeGradient moe_gradient(const MoeGate& gate, const Eigen::MatrixXd& rows, std::span<const int> labels,
                                int num_classes) {
  if (rows.cols() != gate.weights.cols() || static_cast<std::size_t>(rows.rows()) != labels.size())
    throw ShapeError("moe_gradient: inconsistent shapes");
  MoeGradient grad{Eigen::MatrixXd::Zero(gate.weights.rows(), gate.weights.cols()),
                   Eigen::VectorXd::Zero(gate.bias.size())};
  const auto m = gate.num_models();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd u = rows.row(i).transpose();
    const Eigen::VectorXd g = gate.gate(u);
    const int y = labels[static_cast<std::size_t>(i)];
    Eigen::VectorXd py(m);
    for (int j = 0; j < m; ++j) py[j] = u[j * num_classes + y];
    const double q = std::max(g.dot(py), kMoeProbFloor);
    // d(-log q)/d gate_logit_j = -g_j (p_j[y] - q) / q
    const Eigen::VectorXd dz = -(g.array() * (py.array() - q)) / q;
    grad.weights += dz * u.transpose();
    grad.bias += dz;
  }
  const double n = static_cast<double>(rows.rows());
  grad.weights /= n;
  grad.bias /= n;
  return grad;
}

// Full-batch gradient descent on the gate's cross-entropy.
inline MoeGate train_moe_gate(MoeGate gate, const StructuredMatrix& rows, std::span<const int> labels, int epochs,
                              double learning_rate) {
  if (!rows.geometry().is_simplex()) throw ConfigError("train_moe_gate: simplex rows required");
  if (epochs < 0) throw ConfigError("train_moe_gate: epochs must be >= 0");
  gate.learning_rate = learning_rate;
  for (int e = 0; e < epochs; ++e) {
    const MoeGradient g = moe_gradient(gate, rows.values(), labels, rows.geometry().num_classes);
    gate.weights -= learning_rate * g.weights;
    gate.bias -= learning_rate * g.bias;
    if (!gate.weights.allFinite() || !gate.bias.allFinite()) throw NumericError("train_moe_gate: non-finite gate");
  }
  return gate;
}

}  // namespace sbfn
