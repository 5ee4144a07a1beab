#pragma once

// Ensemble diagnostics: the squared-loss ambiguity decomposition around the
// mean centroid and the majority-vote disagreement statistics.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sbfn/errors.hpp"

namespace sbfn {

struct DecompositionReport {
  double avg_member_error = 0.0;
  double ambiguity = 0.0;
  double ensemble_error = 0.0;
};

// member_predictions is N x M.
inline DecompositionReport squared_loss_decomposition(const Eigen::MatrixXd& member_predictions,
                                                      const Eigen::VectorXd& targets) {
  const auto n = member_predictions.rows();
  const auto m = member_predictions.cols();
  if (m < 1) throw ConfigError("decomposition: need at least one member");
  if (targets.size() != n) throw ShapeError("decomposition: targets do not match rows");
  if (n == 0) return {};
  const Eigen::VectorXd centroid = member_predictions.rowwise().mean();
  DecompositionReport r;
  r.avg_member_error = (member_predictions.colwise() - targets).array().square().mean();
  r.ambiguity = (member_predictions.colwise() - centroid).array().square().mean();
  r.ensemble_error = (centroid - targets).array().square().mean();
  return r;
}

using LabelMatrix = Eigen::MatrixXi;  // N x M class indices

inline double gibbs_risk(const LabelMatrix& member_labels, std::span<const int> targets) {
  if (static_cast<std::size_t>(member_labels.rows()) != targets.size()) throw ShapeError("gibbs_risk: row mismatch");
  if (member_labels.size() == 0) return 0.0;
  double wrong = 0.0;
  for (Eigen::Index i = 0; i < member_labels.rows(); ++i)
    for (Eigen::Index j = 0; j < member_labels.cols(); ++j)
      wrong += member_labels(i, j) != targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  return wrong / static_cast<double>(member_labels.size());
}

// Fraction of ordered member pairs (j != l) that disagree, averaged over rows.
inline double expected_disagreement(const LabelMatrix& member_labels) {
  const auto m = member_labels.cols();
  if (m < 2) throw ConfigError("expected_disagreement: need at least two members");
  if (member_labels.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < member_labels.rows(); ++i) {
    int disagree = 0;
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index l = 0; l < m; ++l)
        if (j != l && member_labels(i, j) != member_labels(i, l)) ++disagree;
    total += static_cast<double>(disagree) / static_cast<double>(m * (m - 1));
  }
  return total / static_cast<double>(member_labels.rows());
}

// Plurality label of one row; ties go to the lowest class index.
inline int plurality_vote(const LabelMatrix& member_labels, Eigen::Index row) {
  std::map<int, int> votes;
  for (Eigen::Index j = 0; j < member_labels.cols(); ++j) ++votes[member_labels(row, j)];
  int best = 0, best_count = -1;
  for (const auto& [label, count] : votes)
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  return best;
}

inline double majority_vote_error(const LabelMatrix& member_labels, std::span<const int> targets) {
  if (static_cast<std::size_t>(member_labels.rows()) != targets.size()) throw ShapeError("majority_vote_error: row mismatch");
  if (member_labels.rows() == 0) return 0.0;
  double wrong = 0.0;
  for (Eigen::Index i = 0; i < member_labels.rows(); ++i)
    wrong += plurality_vote(member_labels, i) != targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  return wrong / static_cast<double>(member_labels.rows());
}

// Second-order majority-vote bound 1 - (1 - 2 R_G)^2 / (1 - 2 d), defined only
// when both the Gibbs risk and the disagreement are below 1/2.
inline std::optional<double> c_bound(double gibbs, double disagreement) {
  if (!(gibbs < 0.5) || !(disagreement < 0.5)) return std::nullopt;
  const double margin = 1.0 - 2.0 * gibbs;
  return 1.0 - margin * margin / (1.0 - 2.0 * disagreement);
}

struct DisagreementReport {
  double gibbs_risk = 0.0;
  double expected_disagreement = 0.0;
  double majority_vote_error = 0.0;
  std::optional<double> c_bound;
};

inline DisagreementReport disagreement_report(const LabelMatrix& member_labels, std::span<const int> targets) {
  DisagreementReport r;
  r.gibbs_risk = gibbs_risk(member_labels, targets);
  r.expected_disagreement = expected_disagreement(member_labels);
  r.majority_vote_error = majority_vote_error(member_labels, targets);
  r.c_bound = c_bound(r.gibbs_risk, r.expected_disagreement);
  return r;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  double half_width_90 = 0.0;
  double half_width_95 = 0.0;
  std::size_t n = 0;
};

// Normal-approximation intervals: z * std / sqrt(n), z = 1.645 and 1.96.
inline Summary summarize(std::span<const double> values) {
  if (values.size() < 2) throw ConfigError("summarize: need at least two runs");
  Summary s;
  s.n = values.size();
  // Welford
  double mean = 0.0, m2 = 0.0;
  std::size_t k = 0;
  for (double v : values) {
    ++k;
    const double d = v - mean;
    mean += d / static_cast<double>(k);
    m2 += d * (v - mean);
  }
  s.mean = mean;
  s.std = std::sqrt(m2 / static_cast<double>(s.n - 1));
  const double se = s.std / std::sqrt(static_cast<double>(s.n));
  s.half_width_90 = 1.645 * se;
  s.half_width_95 = 1.96 * se;
  return s;
}

}  // namespace sbfn
