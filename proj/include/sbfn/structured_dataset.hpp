#pragma once

// The structured dataset: one row per instance holding the concatenated
// outputs of the M base predictors. Under the Euclidean geometry a row is the
// raw scalar predictions; under the simplex geometry it is M probability
// blocks of length C. Simplex rows can only be built from logits (through
// softmax) or from validated probability vectors, never from raw logits.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbfn/errors.hpp"

namespace sbfn {

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw ShapeError("softmax: empty vector");
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

// Row-wise softmax of an N x C matrix.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) p.row(i) = softmax(logits.row(i).transpose()).transpose();
  return p;
}

struct GeometryKind {
  enum class Tag { euclidean, simplex };
  Tag tag = Tag::euclidean;
  int num_classes = 1;

  static GeometryKind euclidean() { return {Tag::euclidean, 1}; }
  static GeometryKind simplex(int classes) {
    if (classes < 2) throw ConfigError("simplex geometry requires at least two classes");
    return {Tag::simplex, classes};
  }

  bool is_simplex() const { return tag == Tag::simplex; }
  // Width of one model's block in a structured row.
  int block_width() const { return is_simplex() ? num_classes : 1; }
  bool operator==(const GeometryKind&) const = default;
};

inline constexpr double kSimplexTolerance = 1e-9;

class StructuredVector {
 public:
  const Eigen::VectorXd& values() const { return values_; }
  const GeometryKind& geometry() const { return geometry_; }
  Eigen::Index size() const { return values_.size(); }
  int num_models() const { return static_cast<int>(values_.size() / geometry_.block_width()); }

  // Identity concatenation of scalar predictions.
  static StructuredVector euclidean(std::span<const double> predictions) {
    if (predictions.empty()) throw ShapeError("build_row_euclidean: no predictions");
    StructuredVector v;
    v.geometry_ = GeometryKind::euclidean();
    v.values_.resize(static_cast<Eigen::Index>(predictions.size()));
    for (std::size_t j = 0; j < predictions.size(); ++j) {
      if (!std::isfinite(predictions[j]))
        throw NumericError("build_row_euclidean: prediction of model " + std::to_string(j) + " is not finite");
      v.values_[static_cast<Eigen::Index>(j)] = predictions[j];
    }
    return v;
  }

  // Concatenation of softmax(logits_j) in model order.
  static StructuredVector simplex_from_logits(const std::vector<Eigen::VectorXd>& logits_per_model) {
    if (logits_per_model.empty()) throw ShapeError("build_row_simplex: no models");
    const auto c = logits_per_model.front().size();
    StructuredVector v;
    v.geometry_ = GeometryKind::simplex(static_cast<int>(c));
    v.values_.resize(c * static_cast<Eigen::Index>(logits_per_model.size()));
    for (std::size_t j = 0; j < logits_per_model.size(); ++j) {
      if (logits_per_model[j].size() != c)
        throw ShapeError("build_row_simplex: model " + std::to_string(j) + " has " +
                         std::to_string(logits_per_model[j].size()) + " logits, expected " + std::to_string(c));
      v.values_.segment(static_cast<Eigen::Index>(j) * c, c) = softmax(logits_per_model[j]);
    }
    return v;
  }

  // Accepts already-normalized blocks; each must be a probability vector.
  static StructuredVector simplex_from_probabilities(const Eigen::VectorXd& blocks, int num_classes) {
    const auto geometry = GeometryKind::simplex(num_classes);
    if (blocks.size() == 0 || blocks.size() % num_classes != 0)
      throw ShapeError("simplex row length is not a multiple of the class count");
    for (Eigen::Index j = 0; j < blocks.size() / num_classes; ++j) {
      const auto block = blocks.segment(j * num_classes, num_classes);
      if ((block.array() < 0.0).any() || std::abs(block.sum() - 1.0) > kSimplexTolerance || !block.allFinite())
        throw NumericError("simplex row block " + std::to_string(j) + " is not a probability vector");
    }
    StructuredVector v;
    v.geometry_ = geometry;
    v.values_ = blocks;
    return v;
  }

 private:
  StructuredVector() = default;
  Eigen::VectorXd values_;
  GeometryKind geometry_;
};

inline StructuredVector build_row_euclidean(std::span<const double> predictions) {
  return StructuredVector::euclidean(predictions);
}

inline StructuredVector build_row_simplex(const std::vector<Eigen::VectorXd>& logits_per_model) {
  return StructuredVector::simplex_from_logits(logits_per_model);
}

// N x d_D matrix of structured rows sharing one geometry.
class StructuredMatrix {
 public:
  explicit StructuredMatrix(GeometryKind geometry) : geometry_(geometry) {}

  // Plug-in construction from an N x M matrix of scalar member predictions.
  static StructuredMatrix from_predictions(const Eigen::MatrixXd& predictions) {
    StructuredMatrix d(GeometryKind::euclidean());
    if (!predictions.allFinite()) throw NumericError("structured matrix: non-finite prediction");
    d.rows_ = predictions;
    return d;
  }

  // Plug-in construction from M logit matrices, each N x C.
  static StructuredMatrix from_logits(const std::vector<Eigen::MatrixXd>& logits_per_model) {
    if (logits_per_model.empty()) throw ShapeError("structured matrix: no models");
    const auto n = logits_per_model.front().rows();
    const auto c = logits_per_model.front().cols();
    StructuredMatrix d(GeometryKind::simplex(static_cast<int>(c)));
    d.rows_.resize(n, c * static_cast<Eigen::Index>(logits_per_model.size()));
    for (std::size_t j = 0; j < logits_per_model.size(); ++j) {
      const auto& l = logits_per_model[j];
      if (l.rows() != n || l.cols() != c) throw ShapeError("structured matrix: inconsistent logit shapes");
      d.rows_.middleCols(static_cast<Eigen::Index>(j) * c, c) = softmax_rows(l);
    }
    return d;
  }

  void push_back(const StructuredVector& row) {
    if (!(row.geometry() == geometry_)) throw ShapeError("structured matrix: row geometry differs");
    if (rows_.rows() > 0 && row.size() != rows_.cols()) throw ShapeError("structured matrix: row width differs");
    rows_.conservativeResize(rows_.rows() + 1, row.size());
    rows_.row(rows_.rows() - 1) = row.values().transpose();
  }

  StructuredVector row(Eigen::Index i) const {
    if (geometry_.is_simplex())
      return StructuredVector::simplex_from_probabilities(rows_.row(i).transpose(), geometry_.num_classes);
    const Eigen::VectorXd r = rows_.row(i).transpose();
    return StructuredVector::euclidean(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
  }

  const Eigen::MatrixXd& values() const { return rows_; }
  const GeometryKind& geometry() const { return geometry_; }
  Eigen::Index num_rows() const { return rows_.rows(); }
  Eigen::Index width() const { return rows_.cols(); }
  int num_models() const { return static_cast<int>(rows_.cols() / geometry_.block_width()); }

  // Columns are named m<j> (Euclidean) or m<j>_c<k> (simplex), zero-based.
  std::vector<std::string> column_names() const {
    std::vector<std::string> names;
    for (int j = 0; j < num_models(); ++j) {
      if (!geometry_.is_simplex()) {
        names.push_back("m" + std::to_string(j));
        continue;
      }
      for (int k = 0; k < geometry_.num_classes; ++k)
        names.push_back("m" + std::to_string(j) + "_c" + std::to_string(k));
    }
    return names;
  }

  void write_csv(std::ostream& out) const {
    const auto names = column_names();
    for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
    out << '\n';
    out.precision(17);
    for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
      for (Eigen::Index c = 0; c < rows_.cols(); ++c) out << (c ? "," : "") << rows_(i, c);
      out << '\n';
    }
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_csv(out);
  }

 private:
  GeometryKind geometry_;
  Eigen::MatrixXd rows_;
};

}  // namespace sbfn
