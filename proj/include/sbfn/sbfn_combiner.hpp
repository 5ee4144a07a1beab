#pragma once

// Radial-basis combiner over structured rows.
//
//   features  H_k = phi(||u - C_k|| / gamma_k),  phi(r) = exp(-r^2 / 2)
//   regression       y_hat = H . alpha                     (alpha: K)
//   classification   p_hat = softmax((H . alpha) / T)      (alpha: K x C)
//
// Two kinds of layers exist. Multivariate layers (kmeans, fixed) hold K
// centres in the full d_D-dimensional row space. Online layers (G1, G2, G3)
// hold one univariate unit per base predictor (K = M); unit j only looks at
// coordinate j of the row and its centre/scale track that predictor's output
// history.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sbfn/errors.hpp"
#include "sbfn/random.hpp"
#include "sbfn/structured_dataset.hpp"

namespace sbfn {

enum class Variant { g1, g2, g3, kmeans, fixed };
enum class RowNormalization { none, sum, layer_norm };

inline constexpr double kDefaultScaleFloor = 1e-6;
inline constexpr double kSumFloor = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

inline bool is_online(Variant v) { return v == Variant::g1 || v == Variant::g2 || v == Variant::g3; }

// Running statistics of one predictor's outputs.
struct UnitMoments {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t count = 0;
  std::deque<double> recent;  // last `window` observations (G2/G3)
};

struct RbfLayer {
  Eigen::MatrixXd centers;  // K x d_D, or K x 1 for online variants
  Eigen::VectorXd scales;   // K
  Variant variant = Variant::fixed;
  int window = 10;
  std::vector<UnitMoments> moments;
  double scale_floor = kDefaultScaleFloor;
  RowNormalization normalization = RowNormalization::none;

  int num_units() const { return static_cast<int>(centers.rows()); }
  bool univariate() const { return is_online(variant); }
  // Expected structured-row width.
  Eigen::Index input_dim() const { return univariate() ? centers.rows() : centers.cols(); }

  // Online layer with one unit per predictor; centres start at 0, scales at the floor.
  static RbfLayer online(Variant variant, int num_models, int window = 10,
                         double scale_floor = kDefaultScaleFloor) {
    if (!is_online(variant)) throw ConfigError("RbfLayer::online requires a G1/G2/G3 variant");
    if (num_models < 1) throw ConfigError("RbfLayer::online: need at least one model");
    if (window < 1) throw ConfigError("RbfLayer::online: window must be >= 1");
    RbfLayer l;
    l.variant = variant;
    l.window = window;
    l.scale_floor = scale_floor;
    l.centers = Eigen::MatrixXd::Zero(num_models, 1);
    l.scales = Eigen::VectorXd::Constant(num_models, scale_floor);
    l.moments.resize(static_cast<std::size_t>(num_models));
    return l;
  }

  static RbfLayer from_centers(Eigen::MatrixXd centers, Eigen::VectorXd scales, Variant variant = Variant::fixed,
                               double scale_floor = kDefaultScaleFloor) {
    RbfLayer l;
    l.variant = variant;
    l.scale_floor = scale_floor;
    l.centers = std::move(centers);
    l.scales = scales.cwiseMax(scale_floor);
    l.validate();
    return l;
  }

  void validate() const {
    if (centers.rows() < 1) throw ConfigError("RbfLayer: need at least one unit");
    if (scales.size() != centers.rows()) throw ShapeError("RbfLayer: one scale per centre required");
    if (!(scale_floor > 0.0)) throw ConfigError("RbfLayer: scale floor must be positive");
    if (univariate() && centers.cols() != 1) throw ShapeError("RbfLayer: online units are univariate");
    if ((scales.array() < scale_floor).any()) throw NumericError("RbfLayer: scale below floor");
    if (!centers.allFinite() || !scales.allFinite()) throw NumericError("RbfLayer: non-finite parameter");
  }
};

struct CombinerWeights {
  Eigen::MatrixXd alpha;  // K x 1 (regression) or K x C (classification)
  double temperature = 1.0;

  static CombinerWeights zeros(int num_units, int outputs, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    return {Eigen::MatrixXd::Zero(num_units, outputs), temperature};
  }
};

// exp(-||u - center||^2 / (2 scale^2)); scales below the floor are clamped.
inline double gaussian_unit(const Eigen::VectorXd& u, const Eigen::VectorXd& center, double scale,
                            double scale_floor = kDefaultScaleFloor) {
  if (u.size() != center.size()) throw ShapeError("gaussian_unit: dimension mismatch");
  const double s = std::max(scale, scale_floor);
  return std::exp(-(u - center).squaredNorm() / (2.0 * s * s));
}

namespace detail {

inline void normalize_features(Eigen::VectorXd& h, RowNormalization mode) {
  switch (mode) {
    case RowNormalization::none:
      return;
    case RowNormalization::sum:
      h /= std::max(h.sum(), kSumFloor);
      return;
    case RowNormalization::layer_norm: {
      const double mean = h.mean();
      const double var = (h.array() - mean).square().mean();
      h = (h.array() - mean) / std::sqrt(var + kLayerNormEps);
      return;
    }
  }
}

// Unnormalized activation of every unit.
inline Eigen::VectorXd raw_features(const Eigen::VectorXd& u, const RbfLayer& layer) {
  if (u.size() != layer.input_dim())
    throw ShapeError("feature_map: row has width " + std::to_string(u.size()) + ", layer expects " +
                     std::to_string(layer.input_dim()));
  const int k_units = layer.num_units();
  Eigen::VectorXd h(k_units);
  for (int k = 0; k < k_units; ++k) {
    const double s = std::max(layer.scales[k], layer.scale_floor);
    double d2;
    if (layer.univariate()) {
      const double r = u[k] - layer.centers(k, 0);
      d2 = r * r;
    } else {
      d2 = (u - layer.centers.row(k).transpose()).squaredNorm();
    }
    // G3 uses the radial profile ||u - C||^2 / gamma instead of a Gaussian.
    h[k] = layer.variant == Variant::g3 ? d2 / s : std::exp(-d2 / (2.0 * s * s));
  }
  return h;
}

}  // namespace detail

inline Eigen::VectorXd feature_map(const Eigen::VectorXd& row, const RbfLayer& layer) {
  Eigen::VectorXd h = detail::raw_features(row, layer);
  detail::normalize_features(h, layer.normalization);
  return h;
}

inline Eigen::VectorXd feature_map(const StructuredVector& row, const RbfLayer& layer) {
  return feature_map(row.values(), layer);
}

// N x K design matrix.
inline Eigen::MatrixXd feature_matrix(const Eigen::MatrixXd& rows, const RbfLayer& layer) {
  Eigen::MatrixXd phi(rows.rows(), layer.num_units());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) phi.row(i) = feature_map(Eigen::VectorXd(rows.row(i).transpose()), layer).transpose();
  return phi;
}

inline Eigen::MatrixXd feature_matrix(const StructuredMatrix& rows, const RbfLayer& layer) {
  return feature_matrix(rows.values(), layer);
}

// Feeds one structured row (the current predictions of all M predictors) into
// the running moments of an online layer and refreshes centres and scales.
//   G1: cumulative mean / sample std
//   G2: mean / sample std over the last `window` outputs
//   G3: windowed mean; scale = max_{p != j} |z_j - z_p| / sqrt(M)
inline void update_moments_inplace(RbfLayer& layer, std::span<const double> predictions) {
  if (!layer.univariate()) throw ConfigError("update_moments: layer is not a G1/G2/G3 layer");
  const auto m = static_cast<std::size_t>(layer.num_units());
  if (predictions.size() != m) throw ShapeError("update_moments: expected one prediction per unit");
  if (layer.moments.size() != m) layer.moments.resize(m);
  const std::size_t window = static_cast<std::size_t>(layer.window);

  for (std::size_t j = 0; j < m; ++j) {
    const double z = predictions[j];
    if (!std::isfinite(z)) throw NumericError("update_moments: non-finite prediction from model " + std::to_string(j));
    auto& mo = layer.moments[j];
    ++mo.count;
    const double d = z - mo.mean;
    mo.mean += d / static_cast<double>(mo.count);
    mo.m2 += d * (z - mo.mean);
    mo.recent.push_back(z);
    if (mo.recent.size() > window) mo.recent.pop_front();

    const auto k = static_cast<Eigen::Index>(j);
    double scale = layer.scale_floor;
    if (layer.variant == Variant::g1) {
      layer.centers(k, 0) = mo.mean;
      if (mo.count >= 2) scale = std::sqrt(mo.m2 / static_cast<double>(mo.count - 1));
    } else {
      const double n = static_cast<double>(mo.recent.size());
      const double mean = std::accumulate(mo.recent.begin(), mo.recent.end(), 0.0) / n;
      layer.centers(k, 0) = mean;
      if (layer.variant == Variant::g2) {
        if (mo.recent.size() >= 2) {
          double ss = 0.0;
          for (double v : mo.recent) ss += (v - mean) * (v - mean);
          scale = std::sqrt(ss / (n - 1.0));
        }
      } else {
        double spread = 0.0;
        for (std::size_t p = 0; p < m; ++p)
          if (p != j) spread = std::max(spread, std::abs(z - predictions[p]));
        scale = spread / std::sqrt(static_cast<double>(m));
      }
    }
    layer.scales[k] = std::max(scale, layer.scale_floor);
  }
}

inline RbfLayer update_moments(RbfLayer layer, std::span<const double> predictions) {
  update_moments_inplace(layer, predictions);
  return layer;
}

struct KMeansResult {
  Eigen::MatrixXd centers;  // K x d
  Eigen::VectorXd scales;   // K
  std::vector<int> assignments;
  double inertia = 0.0;     // within-cluster sum of squares
  int iterations = 0;
};

namespace detail {

inline int nearest_center(const Eigen::MatrixXd& centers, const Eigen::VectorXd& x, double* dist2 = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centers.rows(); ++k) {
    const double d = (centers.row(k).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

// Mean member distance per cluster; empty or zero-spread clusters fall back to
// the global mean distance, and everything is floored.
inline Eigen::VectorXd cluster_scales(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& centers,
                                      const std::vector<int>& assign, double floor) {
  const auto k_units = centers.rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(k_units);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(k_units);
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const int a = assign[static_cast<std::size_t>(i)];
    const double d = (rows.row(i) - centers.row(a)).norm();
    sum[a] += d;
    count[a] += 1;
    total += d;
  }
  const double global = rows.rows() > 0 ? total / static_cast<double>(rows.rows()) : 0.0;
  Eigen::VectorXd scales(k_units);
  for (Eigen::Index k = 0; k < k_units; ++k) {
    const double s = count[k] > 0 ? sum[k] / count[k] : 0.0;
    scales[k] = std::max(s > 0.0 ? s : global, floor);
  }
  return scales;
}

}  // namespace detail

// Lloyd's algorithm with greedy farthest-point seeding. The first centre is a
// row picked by `seed`; each following centre is the row farthest from its
// nearest chosen centre. Stops when no centre moves more than 1e-8 or after
// 300 iterations.
inline KMeansResult kmeans_centers(const Eigen::MatrixXd& rows, int num_clusters, std::uint64_t seed,
                                   double scale_floor = kDefaultScaleFloor) {
  const auto n = rows.rows();
  if (num_clusters < 1) throw ConfigError("kmeans: K must be >= 1");
  if (n < num_clusters)
    throw ConfigError("kmeans: " + std::to_string(n) + " rows cannot support K=" + std::to_string(num_clusters));
  constexpr int kMaxIterations = 300;
  constexpr double kShiftTolerance = 1e-8;

  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::MatrixXd centers(num_clusters, rows.cols());
  centers.row(0) = rows.row(pick(rng));
  Eigen::VectorXd nearest = (rows.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int k = 1; k < num_clusters; ++k) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    centers.row(k) = rows.row(far);
    nearest = nearest.cwiseMin((rows.rowwise() - centers.row(k)).rowwise().squaredNorm());
  }

  KMeansResult res;
  res.assignments.assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < kMaxIterations; ++it) {
    res.iterations = it + 1;
    for (Eigen::Index i = 0; i < n; ++i)
      res.assignments[static_cast<std::size_t>(i)] = detail::nearest_center(centers, rows.row(i).transpose());

    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(num_clusters, rows.cols());
    std::vector<int> count(static_cast<std::size_t>(num_clusters), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = res.assignments[static_cast<std::size_t>(i)];
      next.row(a) += rows.row(i);
      ++count[static_cast<std::size_t>(a)];
    }
    for (int k = 0; k < num_clusters; ++k) {
      if (count[static_cast<std::size_t>(k)] > 0) {
        next.row(k) /= count[static_cast<std::size_t>(k)];
        continue;
      }
      // Empty cluster: move to the row farthest from its former centre.
      Eigen::Index far = 0;
      (rows.rowwise() - centers.row(k)).rowwise().squaredNorm().maxCoeff(&far);
      next.row(k) = rows.row(far);
    }
    const double shift = (next - centers).rowwise().norm().maxCoeff();
    centers = std::move(next);
    if (shift < kShiftTolerance) break;
  }

  res.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double d2 = 0.0;
    res.assignments[static_cast<std::size_t>(i)] = detail::nearest_center(centers, rows.row(i).transpose(), &d2);
    res.inertia += d2;
  }
  res.scales = detail::cluster_scales(rows, centers, res.assignments, scale_floor);
  res.centers = std::move(centers);
  return res;
}

inline KMeansResult kmeans_centers(const StructuredMatrix& rows, int num_clusters, std::uint64_t seed) {
  return kmeans_centers(rows.values(), num_clusters, seed);
}

// Recomputes every scale as the mean distance of the rows currently nearest to
// that centre. Used once per epoch when the centres are trained by gradient.
inline void refresh_scales(RbfLayer& layer, const Eigen::MatrixXd& rows) {
  if (layer.univariate()) throw ConfigError("refresh_scales: only for multivariate layers");
  if (rows.cols() != layer.centers.cols()) throw ShapeError("refresh_scales: row width mismatch");
  std::vector<int> assign(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    assign[static_cast<std::size_t>(i)] = detail::nearest_center(layer.centers, rows.row(i).transpose());
  layer.scales = detail::cluster_scales(rows, layer.centers, assign, layer.scale_floor);
}

// Solves (Phi^T Phi + lambda2 I) alpha = Phi^T y by Cholesky factorization.
inline Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets, double lambda2) {
  if (features.rows() != targets.size()) throw ShapeError("ridge_solve: features and targets disagree on N");
  if (!(lambda2 >= 0.0) || !std::isfinite(lambda2)) throw ConfigError("ridge_solve: lambda2 must be finite and >= 0");
  const auto k = features.cols();
  Eigen::MatrixXd gram = features.transpose() * features;
  gram.diagonal().array() += lambda2;
  const Eigen::VectorXd rhs = features.transpose() * targets;

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  // A tiny pivot relative to the diagonal means the Gram matrix is numerically singular.
  const double diag_max = gram.diagonal().cwiseAbs().maxCoeff();
  const bool ok = llt.info() == Eigen::Success &&
                  (k == 0 || llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 1e-10 * std::sqrt(std::max(diag_max, 1e-300)));
  if (!ok)
    throw SolverError(lambda2 == 0.0 ? "ridge_solve: normal equations are singular; use lambda2 > 0"
                                     : "ridge_solve: regularized normal equations could not be factorized");
  Eigen::VectorXd alpha = llt.solve(rhs);
  const double tol = 1e-8 * std::max(rhs.norm(), std::numeric_limits<double>::min());
  for (int refine = 0; refine < 3 && (gram * alpha - rhs).norm() > tol; ++refine)
    alpha += llt.solve(rhs - gram * alpha);
  if (!alpha.allFinite()) throw SolverError("ridge_solve: non-finite solution");
  if ((gram * alpha - rhs).norm() > tol && rhs.norm() > 0.0)
    throw SolverError("ridge_solve: residual above tolerance; system is ill-conditioned, increase lambda2");
  return alpha;
}

// alpha <- alpha - eta * [(1/b) Phi^T (Phi alpha - y) + lambda2 alpha]
inline Eigen::VectorXd sgd_step_regression(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& features,
                                           const Eigen::VectorXd& targets, double eta, double lambda2) {
  if (features.cols() != alpha.size() || features.rows() != targets.size() || features.rows() == 0)
    throw ShapeError("sgd_step_regression: inconsistent shapes");
  const double b = static_cast<double>(features.rows());
  const Eigen::VectorXd grad = features.transpose() * (features * alpha - targets) / b + lambda2 * alpha;
  Eigen::VectorXd next = alpha - eta * grad;
  if (!next.allFinite()) throw NumericError("sgd_step_regression: non-finite update");
  return next;
}

inline Eigen::MatrixXd one_hot(std::span<const int> labels, int num_classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ShapeError("one_hot: label out of range");
    t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return t;
}

// Mean cross-entropy of softmax((Phi alpha) / T) against one-hot targets.
inline double classification_loss(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& features,
                                   const Eigen::MatrixXd& onehot, double temperature) {
  const Eigen::MatrixXd logits = features * alpha / temperature;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::VectorXd z = logits.row(i).transpose();
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    loss += lse - onehot.row(i).dot(logits.row(i));
  }
  return loss / static_cast<double>(logits.rows());
}

// d loss / d logits-before-temperature, i.e. (P_hat - T_onehot) / (b T).
inline Eigen::MatrixXd classification_logit_grad(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& features,
                                                 const Eigen::MatrixXd& onehot, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (features.cols() != alpha.rows() || onehot.rows() != features.rows() || onehot.cols() != alpha.cols() ||
      features.rows() == 0)
    throw ShapeError("classification step: inconsistent shapes");
  const Eigen::MatrixXd p = softmax_rows(features * alpha / temperature);
  return (p - onehot) / (static_cast<double>(features.rows()) * temperature);
}

inline Eigen::MatrixXd classification_gradient(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& features,
                                               const Eigen::MatrixXd& onehot, double temperature) {
  return features.transpose() * classification_logit_grad(alpha, features, onehot, temperature);
}

// alpha <- alpha - eta * (1/b) Phi^T (P_hat - T_onehot) / T
inline Eigen::MatrixXd sgd_step_classification(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& features,
                                               const Eigen::MatrixXd& onehot, double eta, double temperature) {
  Eigen::MatrixXd next = alpha - eta * classification_gradient(alpha, features, onehot, temperature);
  if (!next.allFinite()) throw NumericError("sgd_step_classification: non-finite update");
  return next;
}

inline double predict_regression(const StructuredVector& row, const RbfLayer& layer, const CombinerWeights& weights) {
  if (row.geometry().is_simplex()) throw ShapeError("predict_regression: row is not Euclidean");
  if (weights.alpha.cols() != 1 || weights.alpha.rows() != layer.num_units())
    throw ShapeError("predict_regression: alpha must be K x 1");
  return feature_map(row, layer).dot(weights.alpha.col(0));
}

inline Eigen::VectorXd predict_classification(const StructuredVector& row, const RbfLayer& layer,
                                              const CombinerWeights& weights) {
  if (!row.geometry().is_simplex()) throw ShapeError("predict_classification: row is not on the simplex");
  if (weights.alpha.rows() != layer.num_units() || weights.alpha.cols() != row.geometry().num_classes)
    throw ShapeError("predict_classification: alpha must be K x C");
  const Eigen::VectorXd logits = weights.alpha.transpose() * feature_map(row, layer);
  return softmax(logits / weights.temperature);
}

// Batched predictions over raw row matrices.
inline Eigen::VectorXd predict_regression_rows(const Eigen::MatrixXd& rows, const RbfLayer& layer,
                                               const CombinerWeights& weights) {
  return feature_matrix(rows, layer) * weights.alpha.col(0);
}

inline Eigen::MatrixXd predict_classification_rows(const Eigen::MatrixXd& rows, const RbfLayer& layer,
                                                   const CombinerWeights& weights) {
  return softmax_rows(feature_matrix(rows, layer) * weights.alpha / weights.temperature);
}

// Gradient of a loss with respect to the centres of a multivariate Gaussian
// layer, given d loss / d (normalized) features for each row of the batch.
inline Eigen::MatrixXd center_gradient(const RbfLayer& layer, const Eigen::MatrixXd& rows,
                                       const Eigen::MatrixXd& feature_grad) {
  if (layer.univariate() || layer.variant == Variant::g3)
    throw ConfigError("center_gradient: only multivariate Gaussian layers have trainable centres");
  if (rows.cols() != layer.centers.cols() || feature_grad.rows() != rows.rows() ||
      feature_grad.cols() != layer.num_units())
    throw ShapeError("center_gradient: inconsistent shapes");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(layer.centers.rows(), layer.centers.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd u = rows.row(i).transpose();
    const Eigen::VectorXd raw = detail::raw_features(u, layer);
    const Eigen::VectorXd g = feature_grad.row(i).transpose();
    Eigen::VectorXd g_raw;
    switch (layer.normalization) {
      case RowNormalization::none:
        g_raw = g;
        break;
      case RowNormalization::sum: {
        const double s = raw.sum();
        if (s > kSumFloor) {
          const Eigen::VectorXd h = raw / s;
          g_raw = (g.array() - g.dot(h)) / s;
        } else {
          g_raw = g / kSumFloor;
        }
        break;
      }
      case RowNormalization::layer_norm: {
        const double mean = raw.mean();
        const double sd = std::sqrt((raw.array() - mean).square().mean() + kLayerNormEps);
        const Eigen::VectorXd y = (raw.array() - mean) / sd;
        g_raw = (g.array() - g.mean() - y.array() * g.dot(y) / static_cast<double>(g.size())) / sd;
        break;
      }
    }
    for (Eigen::Index k = 0; k < layer.centers.rows(); ++k) {
      const double s = std::max(layer.scales[k], layer.scale_floor);
      grad.row(k) += g_raw[k] * raw[k] / (s * s) * (u.transpose() - layer.centers.row(k));
    }
  }
  return grad;
}

// C <- C - eta * dL/dC
inline RbfLayer gradient_step_centers(RbfLayer layer, const Eigen::MatrixXd& rows, const Eigen::MatrixXd& feature_grad,
                                      double eta) {
  const Eigen::MatrixXd grad = center_gradient(layer, rows, feature_grad);
  layer.centers -= eta * grad;
  if (!layer.centers.allFinite()) throw NumericError("gradient_step_centers: non-finite centres");
  return layer;
}

// One combiner step of the classification loop on a batch of structured rows:
// updates alpha and, optionally, the centres. Returns the batch loss before the step.
inline double combiner_classification_step(RbfLayer& layer, CombinerWeights& weights, const Eigen::MatrixXd& rows,
                                           const Eigen::MatrixXd& onehot, double eta, bool train_centers) {
  const Eigen::MatrixXd features = feature_matrix(rows, layer);
  const double loss = classification_loss(weights.alpha, features, onehot, weights.temperature);
  const Eigen::MatrixXd dlogits = classification_logit_grad(weights.alpha, features, onehot, weights.temperature);
  const Eigen::MatrixXd grad_alpha = features.transpose() * dlogits;
  if (train_centers) {
    const Eigen::MatrixXd feature_grad = dlogits * weights.alpha.transpose();
    layer = gradient_step_centers(std::move(layer), rows, feature_grad, eta);
  }
  weights.alpha -= eta * grad_alpha;
  if (!weights.alpha.allFinite()) throw NumericError("combiner step: non-finite alpha");
  return loss;
}

}  // namespace sbfn
