#pragma once

// Training loops that tie the modules together: the per-sample regression
// loop with online radial units, the closed-form plug-in fit, the mini-batch
// classification loop with the reference combiners, and the basis-placement
// study on the sine surface.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sbfn/base_learners.hpp"
#include "sbfn/baselines.hpp"
#include "sbfn/datasets_io.hpp"
#include "sbfn/diagnostics.hpp"
#include "sbfn/diversity.hpp"
#include "sbfn/errors.hpp"
#include "sbfn/random.hpp"
#include "sbfn/sbfn_combiner.hpp"
#include "sbfn/structured_dataset.hpp"

namespace sbfn {

enum class TrainMode { closed_form, iterative };

// Seed stream tags.
namespace stream {
inline constexpr std::uint64_t fold = 1, model = 2, order = 3, combiner = 4, split = 5, data = 6;
}

inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  return std::sqrt((pred - target).array().square().mean());
}

inline double accuracy(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  double hits = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    hits += static_cast<int>(arg) == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  }
  return probs.rows() ? hits / static_cast<double>(probs.rows()) : 0.0;
}

// Hidden-layer widths for predictor j. Heterogeneous ensembles cycle through
// the architecture list; homogeneous ones always use the first entry.
inline const std::vector<int>& architecture_for(const std::vector<std::vector<int>>& archs, bool heterogeneous,
                                                int model) {
  if (archs.empty()) throw ConfigError("no base-learner architecture configured");
  return heterogeneous ? archs[static_cast<std::size_t>(model) % archs.size()] : archs.front();
}

// ---------------------------------------------------------------- regression

struct RegressionConfig {
  int num_models = 5;
  std::vector<std::vector<int>> architectures{{20, 20}};
  bool heterogeneous = false;
  double init_scale = 1.0;
  double l1 = 0.0;
  double eta_theta = 0.03;
  double epsilon = 0.0;
  double lambda2 = 3.0;
  double eta_alpha = 0.03;
  Variant variant = Variant::kmeans;
  int window = 10;
  int num_units = 0;  // 0 selects K = M
  std::optional<RowNormalization> normalization;  // unset: sum for kmeans centres, none for G variants
  TrainMode mode = TrainMode::closed_form;
  int epochs = 30;
  int combiner_max_iters = 200000;  // iterative mode with frozen centres
  double combiner_tol = 1e-13;
  int folds = 10;

  int units() const { return num_units > 0 ? num_units : num_models; }
  RowNormalization row_normalization() const {
    return normalization.value_or(is_online(variant) ? RowNormalization::none : RowNormalization::sum);
  }

  void validate() const {
    if (num_models < 1) throw ConfigError("num_models must be >= 1");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
    if (!(lambda2 >= 0.0)) throw ConfigError("lambda2 must be >= 0");
    if (!(eta_theta > 0.0) || !(eta_alpha >= 0.0)) throw ConfigError("learning rates must be positive");
    if (epochs < 0 || combiner_max_iters < 0) throw ConfigError("epoch and iteration counts must be >= 0");
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (is_online(variant) && num_units > 0 && num_units != num_models)
      throw ConfigError("online variants use one unit per predictor (K = M)");
    if (variant == Variant::fixed) throw ConfigError("regression needs centres from a G variant or kmeans");
    if (architectures.empty()) throw ConfigError("no base-learner architecture configured");
  }
};

struct RegressionModel {
  std::vector<MlpParams> members;
  RbfLayer layer;
  CombinerWeights weights;
};

struct RegressionFoldResult {
  double rmse_sbfn = 0.0;
  double rmse_arithmetic = 0.0;
  Eigen::MatrixXd member_test;  // N_test x M
  Eigen::VectorXd test_targets;
  DecompositionReport decomposition;
};

inline Eigen::MatrixXd member_predictions(const std::vector<MlpParams>& members, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z(x.rows(), static_cast<Eigen::Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j) z.col(static_cast<Eigen::Index>(j)) = forward_batch(members[j], x).col(0);
  return z;
}

inline std::vector<MlpParams> init_members(int m, const std::vector<std::vector<int>>& archs, bool heterogeneous,
                                           double init_scale, int in_dim, int out_dim, std::uint64_t seed,
                                           std::vector<PredictorConfig>* configs_out, double l1, double eta) {
  std::vector<MlpParams> members;
  for (int j = 0; j < m; ++j) {
    PredictorConfig pc;
    pc.hidden_sizes = architecture_for(archs, heterogeneous, j);
    pc.init_scale = init_scale;
    pc.l1_coeff = l1;
    pc.learning_rate = eta;
    pc.seed = derive_seed(seed, {stream::model, static_cast<std::uint64_t>(j)});
    members.push_back(init_mlp(pc, in_dim, out_dim));
    if (configs_out) configs_out->push_back(pc);
  }
  return members;
}

// Full-batch gradient descent on (1/2N)||Phi a - y||^2 + (lambda2/2N)||a||^2,
// the same objective the closed form minimizes. Step = min(eta, 1/L).
inline Eigen::VectorXd fit_alpha_descent(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda2,
                                         double eta, int max_iters, double tol) {
  const double n = static_cast<double>(phi.rows());
  const Eigen::MatrixXd gram = phi.transpose() * phi / n;
  const Eigen::VectorXd rhs = phi.transpose() * y / n;
  const double ridge = lambda2 / n;
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().maxCoeff() + ridge;
  const double step = eta > 0.0 ? std::min(eta, 1.0 / lipschitz) : 1.0 / lipschitz;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(phi.cols());
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd g = gram * alpha - rhs + ridge * alpha;
    alpha -= step * g;
    if (step * g.norm() <= tol * std::max(1.0, alpha.norm())) break;
  }
  if (!alpha.allFinite()) throw NumericError("regression: combiner diverged");
  return alpha;
}

// Per-sample epsilon-diversity training of the regression ensemble. In
// iterative mode with an online variant the combiner is trained in the same
// pass: moments are updated with each new prediction, features are evaluated
// at the refreshed centres and alpha takes one ridge-penalized step.
//
// The L1 term is applied as lambda1 / N per step and the ridge term as
// lambda2 / N, so that a full pass minimizes the same objective as the
// closed-form solve.
inline RegressionModel train_regression(const Dataset& train, const RegressionConfig& config, std::uint64_t seed) {
  config.validate();
  const int m = config.num_models;
  const auto n = train.size();
  if (n < 2) throw ConfigError("regression: need at least two training rows");
  std::vector<PredictorConfig> pcs;
  RegressionModel model;
  model.members = init_members(m, config.architectures, config.heterogeneous, config.init_scale,
                               static_cast<int>(train.features.cols()), 1, seed, &pcs,
                               config.l1 / static_cast<double>(n), config.eta_theta);

  const bool online = is_online(config.variant);
  const bool joint = online && config.mode == TrainMode::iterative;
  if (online) {
    model.layer = RbfLayer::online(config.variant, m, config.window);
    model.layer.normalization = config.row_normalization();
  }
  model.weights = CombinerWeights::zeros(config.units(), 1);
  const double ridge_step = config.lambda2 / static_cast<double>(n);

  DiversityConfig dc{config.epsilon};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng order_rng(derive_seed(seed, {stream::order}));
  std::vector<double> z(static_cast<std::size_t>(m)), losses(static_cast<std::size_t>(m));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (const Eigen::Index i : order) {
      const Eigen::VectorXd x = train.features.row(i).transpose();
      const double y = train.targets[i];
      for (int j = 0; j < m; ++j) {
        z[static_cast<std::size_t>(j)] = forward(model.members[static_cast<std::size_t>(j)], x)[0];
        const double r = z[static_cast<std::size_t>(j)] - y;
        losses[static_cast<std::size_t>(j)] = r * r;
      }
      const auto delta = wta_weights(losses, dc);
      for (int j = 0; j < m; ++j)
        delta_weighted_update_inplace(model.members[static_cast<std::size_t>(j)], x, y,
                                      delta.delta[static_cast<std::size_t>(j)], LossKind::squared,
                                      pcs[static_cast<std::size_t>(j)]);
      if (online) update_moments_inplace(model.layer, z);
      if (joint) {
        const Eigen::VectorXd phi = feature_map(Eigen::Map<const Eigen::VectorXd>(z.data(), m), model.layer);
        const double err = phi.dot(model.weights.alpha.col(0)) - y;
        model.weights.alpha.col(0) -= config.eta_alpha * (err * phi + ridge_step * model.weights.alpha.col(0));
        if (!model.weights.alpha.allFinite()) throw NumericError("regression: combiner diverged");
      }
    }
  }
  if (joint) return model;

  const Eigen::MatrixXd d = member_predictions(model.members, train.features);
  if (!d.allFinite()) throw NumericError("regression: base predictions are not finite");
  if (!online) {
    const auto km = kmeans_centers(d, config.units(), derive_seed(seed, {stream::combiner}));
    model.layer = RbfLayer::from_centers(km.centers, km.scales, Variant::kmeans);
    model.layer.normalization = config.row_normalization();
  }
  const Eigen::MatrixXd phi = feature_matrix(d, model.layer);
  if (config.mode == TrainMode::closed_form) {
    model.weights.alpha.col(0) = ridge_solve(phi, train.targets, config.lambda2);
    return model;
  }
  model.weights.alpha.col(0) =
      fit_alpha_descent(phi, train.targets, config.lambda2, config.eta_alpha, config.combiner_max_iters, config.combiner_tol);
  return model;
}

inline Eigen::VectorXd predict_regression(const RegressionModel& model, const Eigen::MatrixXd& x) {
  return predict_regression_rows(member_predictions(model.members, x), model.layer, model.weights);
}

inline RegressionFoldResult evaluate_regression(const RegressionModel& model, const Dataset& test) {
  RegressionFoldResult r;
  r.member_test = member_predictions(model.members, test.features);
  r.test_targets = test.targets;
  const Eigen::VectorXd sbfn = predict_regression_rows(r.member_test, model.layer, model.weights);
  r.rmse_sbfn = rmse(sbfn, test.targets);
  r.rmse_arithmetic = rmse(r.member_test.rowwise().mean(), test.targets);
  r.decomposition = squared_loss_decomposition(r.member_test, test.targets);
  return r;
}

// Standardizes on the training split, trains, evaluates.
inline RegressionFoldResult run_regression_fold(const Dataset& data, const FoldPlan& plan, int fold,
                                                const RegressionConfig& config, std::uint64_t seed) {
  const auto tr = plan.train_indices(fold);
  const auto te = plan.test_indices(fold);
  Dataset train = data.subset(tr), test = data.subset(te);
  standardize_split(train, test);
  const auto model = train_regression(train, config, seed);
  return evaluate_regression(model, test);
}

// ------------------------------------------------------------ classification

struct ClassificationConfig {
  int num_models = 5;
  int num_units = 0;  // 0 selects K = 2 M
  std::vector<std::vector<int>> architectures{{8}, {32}, {32, 16}};
  bool heterogeneous = true;
  double init_scale = 1.0;
  double l1 = 0.0;
  double eta_theta = 0.05;
  double epsilon = 0.5;
  double temperature = 3.0;
  double eta_alpha = 0.1;
  int batch_size = 32;
  int epochs = 30;
  int splits = 5;
  double test_fraction = 0.3;
  RowNormalization normalization = RowNormalization::sum;
  bool train_centers = true;
  int moe_epochs = 200;
  double moe_learning_rate = 0.5;

  int units() const { return num_units > 0 ? num_units : 2 * num_models; }

  void validate() const {
    if (num_models < 1) throw ConfigError("num_models must be >= 1");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(eta_theta > 0.0) || !(eta_alpha >= 0.0)) throw ConfigError("learning rates must be positive");
    if (batch_size < 1 || epochs < 0 || splits < 1) throw ConfigError("batch size, epochs, splits must be positive");
    if (architectures.empty()) throw ConfigError("no base-learner architecture configured");
  }
};

struct ClassificationModel {
  std::vector<MlpParams> members;
  RbfLayer layer;
  CombinerWeights weights;
  MoeGate gate;
  int num_classes = 2;
};

struct ClassificationSplitResult {
  double acc_sbfn = 0.0;
  double acc_logit_average = 0.0;
  double acc_moe = 0.0;
  double acc_base_average = 0.0;
  LabelMatrix member_labels;       // N_test x M
  Eigen::MatrixXd member_probs;    // N_test x (M C)
  std::vector<int> test_labels;
  DisagreementReport disagreement;
};

inline std::vector<Eigen::MatrixXd> member_logits(const std::vector<MlpParams>& members, const Eigen::MatrixXd& x) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(members.size());
  for (const auto& p : members) out.push_back(forward_batch(p, x));
  return out;
}

// Mini-batch training: per-sample epsilon weights from the members'
// cross-entropies, delta-weighted member steps, then one combiner step on the
// batch's probability rows (alpha and, optionally, the centres). Centres are
// seeded by KMeans on the initial structured rows; scales are refreshed from
// the current nearest-centre assignment at the start of every epoch.
inline ClassificationModel train_classification(const Dataset& train, const ClassificationConfig& config,
                                                std::uint64_t seed) {
  config.validate();
  const int m = config.num_models;
  const int c = train.num_classes;
  if (c < 2) throw ConfigError("classification: dataset needs at least two classes");
  const auto n = train.size();
  std::vector<PredictorConfig> pcs;
  ClassificationModel model;
  model.num_classes = c;
  model.members = init_members(m, config.architectures, config.heterogeneous, config.init_scale,
                               static_cast<int>(train.features.cols()), c, seed, &pcs, config.l1, config.eta_theta);
  const std::vector<int> labels = train.labels();

  auto structured = [&](const Eigen::MatrixXd& x) { return StructuredMatrix::from_logits(member_logits(model.members, x)); };
  {
    const auto d0 = structured(train.features);
    const int k = std::min<int>(config.units(), static_cast<int>(n));
    const auto km = kmeans_centers(d0.values(), k, derive_seed(seed, {stream::combiner}));
    model.layer = RbfLayer::from_centers(km.centers, km.scales, Variant::kmeans);
    model.layer.normalization = config.normalization;
  }
  model.weights = CombinerWeights::zeros(model.layer.num_units(), c, config.temperature);

  DiversityConfig dc{config.epsilon};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng order_rng(derive_seed(seed, {stream::order}));
  const auto b_max = static_cast<Eigen::Index>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0) refresh_scales(model.layer, structured(train.features).values());
    std::shuffle(order.begin(), order.end(), order_rng);
    for (Eigen::Index start = 0; start < n; start += b_max) {
      const Eigen::Index b = std::min(b_max, n - start);
      Eigen::MatrixXd xb(b, train.features.cols());
      std::vector<double> yb(static_cast<std::size_t>(b));
      std::vector<int> lb(static_cast<std::size_t>(b));
      for (Eigen::Index r = 0; r < b; ++r) {
        const auto i = order[static_cast<std::size_t>(start + r)];
        xb.row(r) = train.features.row(i);
        lb[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(i)];
        yb[static_cast<std::size_t>(r)] = lb[static_cast<std::size_t>(r)];
      }
      const auto logits = member_logits(model.members, xb);
      // losses[r][j], then per-sample deltas
      std::vector<std::vector<double>> deltas(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(b)));
      std::vector<double> losses(static_cast<std::size_t>(m));
      for (Eigen::Index r = 0; r < b; ++r) {
        for (int j = 0; j < m; ++j)
          losses[static_cast<std::size_t>(j)] =
              member_loss(logits[static_cast<std::size_t>(j)].row(r).transpose(), yb[static_cast<std::size_t>(r)],
                          LossKind::cross_entropy);
        const auto w = wta_weights(losses, dc);
        for (int j = 0; j < m; ++j) deltas[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = w.delta[static_cast<std::size_t>(j)];
      }
      for (int j = 0; j < m; ++j)
        delta_weighted_batch_update(model.members[static_cast<std::size_t>(j)], xb, yb, deltas[static_cast<std::size_t>(j)],
                                    LossKind::cross_entropy, pcs[static_cast<std::size_t>(j)]);
      const auto rows = StructuredMatrix::from_logits(logits);
      combiner_classification_step(model.layer, model.weights, rows.values(), one_hot(lb, c), config.eta_alpha,
                                   config.train_centers);
    }
  }

  const auto d = structured(train.features);
  model.gate = train_moe_gate(MoeGate::zeros(m, c), d, labels, config.moe_epochs, config.moe_learning_rate);
  return model;
}

inline ClassificationSplitResult evaluate_classification(const ClassificationModel& model, const Dataset& test) {
  ClassificationSplitResult r;
  const int m = static_cast<int>(model.members.size());
  const int c = model.num_classes;
  r.test_labels = test.labels();
  const auto logits = member_logits(model.members, test.features);
  const auto rows = StructuredMatrix::from_logits(logits);
  r.member_probs = rows.values();

  r.acc_sbfn = accuracy(predict_classification_rows(rows.values(), model.layer, model.weights), r.test_labels);

  Eigen::MatrixXd mean_logits = Eigen::MatrixXd::Zero(test.size(), c);
  for (const auto& l : logits) mean_logits += l;
  r.acc_logit_average = accuracy(softmax_rows(mean_logits / m), r.test_labels);
  r.acc_moe = accuracy(moe_combine_rows(rows, model.gate), r.test_labels);

  r.member_labels.resize(test.size(), m);
  double base_sum = 0.0;
  for (int j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      Eigen::Index arg = 0;
      logits[static_cast<std::size_t>(j)].row(i).maxCoeff(&arg);
      r.member_labels(i, j) = static_cast<int>(arg);
    }
    base_sum += accuracy(logits[static_cast<std::size_t>(j)], r.test_labels);
  }
  r.acc_base_average = base_sum / m;
  if (m >= 2) r.disagreement = disagreement_report(r.member_labels, r.test_labels);
  return r;
}

inline ClassificationSplitResult run_classification_split(const Dataset& data, int split,
                                                          const ClassificationConfig& config, std::uint64_t seed) {
  const auto [tr, te] = holdout_split(static_cast<int>(data.size()), config.test_fraction,
                                      derive_seed(seed, {stream::split, static_cast<std::uint64_t>(split)}));
  Dataset train = data.subset(tr), test = data.subset(te);
  standardize_split(train, test);
  const auto model = train_classification(train, config, derive_seed(seed, {stream::fold, static_cast<std::uint64_t>(split)}));
  return evaluate_classification(model, test);
}

// ------------------------------------------------------- basis placement study

enum class BasisStrategy { gbf, kmeans };

inline const char* to_string(BasisStrategy s) { return s == BasisStrategy::gbf ? "gbf" : "rbf_kmeans"; }

// Most nearly square factorization a x b = count, a <= b.
inline std::pair<int, int> grid_shape(int count) {
  int a = static_cast<int>(std::floor(std::sqrt(static_cast<double>(count))));
  while (a > 1 && count % a != 0) --a;
  return {a, count / a};
}

// Data-independent Gaussian basis: centres at the cell midpoints of an evenly
// spaced a x b grid over the observed bounding box of the two inputs, shared
// scale = the larger of the two per-axis spacings.
inline RbfLayer grid_layer(const Eigen::MatrixXd& x, int count) {
  if (x.cols() != 2) throw ConfigError("grid_layer: two input dimensions expected");
  const auto [a, b] = grid_shape(count);
  const Eigen::RowVectorXd lo = x.colwise().minCoeff(), hi = x.colwise().maxCoeff();
  const int per_axis[2] = {a, b};
  double spacing[2];
  for (int d = 0; d < 2; ++d) spacing[d] = (hi[d] - lo[d]) / per_axis[d];
  Eigen::MatrixXd centers(count, 2);
  int k = 0;
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j, ++k) {
      centers(k, 0) = lo[0] + (i + 0.5) * spacing[0];
      centers(k, 1) = lo[1] + (j + 0.5) * spacing[1];
    }
  const double scale = std::max(spacing[0], spacing[1]);
  return RbfLayer::from_centers(centers, Eigen::VectorXd::Constant(count, scale), Variant::fixed);
}

struct BasisRun {
  BasisStrategy strategy = BasisStrategy::gbf;
  int num_basis = 0;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  Eigen::MatrixXd centers;
};

// Fits y ~ Phi(x) alpha by ridge on one synthetic draw.
inline BasisRun run_basis_study(BasisStrategy strategy, int num_basis, std::uint64_t seed, double lambda2 = 1e-2,
                                int n_train = 300, int n_test = 1000, double noise_std = 0.1) {
  const auto [train, test] = synth_sine(n_train, n_test, noise_std, derive_seed(seed, {stream::data}));
  RbfLayer layer;
  if (strategy == BasisStrategy::gbf) {
    layer = grid_layer(train.features, num_basis);
  } else {
    const auto km = kmeans_centers(train.features, num_basis, derive_seed(seed, {stream::combiner}));
    layer = RbfLayer::from_centers(km.centers, km.scales, Variant::kmeans);
  }
  const Eigen::VectorXd alpha = ridge_solve(feature_matrix(train.features, layer), train.targets, lambda2);
  BasisRun run{strategy, num_basis, seed, rmse(feature_matrix(test.features, layer) * alpha, test.targets), layer.centers};
  return run;
}

}  // namespace sbfn
