#pragma once

// JSON for trained combiners and experiment configs, and the run-record
// format shared by the command-line harness.

#include <Eigen/Dense>

#include <charconv>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbfn/diagnostics.hpp"
#include "sbfn/errors.hpp"
#include "sbfn/experiments.hpp"
#include "sbfn/sbfn_combiner.hpp"
#include "sbfn/structured_dataset.hpp"

namespace sbfn {

using json = nlohmann::json;

// ------------------------------------------------------------ enum names

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::g1: return "g1";
    case Variant::g2: return "g2";
    case Variant::g3: return "g3";
    case Variant::kmeans: return "kmeans";
    case Variant::fixed: return "fixed";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::g1, Variant::g2, Variant::g3, Variant::kmeans, Variant::fixed})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected g1, g2, g3, kmeans)");
}

inline std::string to_string(RowNormalization n) {
  switch (n) {
    case RowNormalization::none: return "none";
    case RowNormalization::sum: return "sum";
    case RowNormalization::layer_norm: return "layer_norm";
  }
  return "?";
}

inline RowNormalization parse_normalization(const std::string& s) {
  for (RowNormalization n : {RowNormalization::none, RowNormalization::sum, RowNormalization::layer_norm})
    if (to_string(n) == s) return n;
  throw ConfigError("unknown normalization '" + s + "' (expected none, sum, layer_norm)");
}

inline std::string to_string(TrainMode m) { return m == TrainMode::closed_form ? "closed-form" : "iterative"; }

inline TrainMode parse_mode(const std::string& s) {
  if (s == "closed-form") return TrainMode::closed_form;
  if (s == "iterative") return TrainMode::iterative;
  throw ConfigError("unknown mode '" + s + "' (expected closed-form, iterative)");
}

// ------------------------------------------------------------ matrices

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.front().size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw FormatError(what + ": ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw FormatError(what + ": non-numeric entry");
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError(what + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

// ------------------------------------------------------------ combiner

struct SavedCombiner {
  RbfLayer layer;
  CombinerWeights weights;
  GeometryKind geometry;
};

// Online moments are not stored; a restored online layer predicts with the
// saved centres and scales.
inline json combiner_to_json(const RbfLayer& layer, const CombinerWeights& weights, const GeometryKind& geometry) {
  return json{{"variant", to_string(layer.variant)},
              {"centers", matrix_to_json(layer.centers)},
              {"scales", vector_to_json(layer.scales)},
              {"scale_floor", layer.scale_floor},
              {"window", layer.window},
              {"normalization", to_string(layer.normalization)},
              {"alpha", matrix_to_json(weights.alpha)},
              {"temperature", weights.temperature},
              {"geometry", {{"kind", geometry.is_simplex() ? "simplex" : "euclidean"},
                            {"num_classes", geometry.num_classes}}}};
}

inline SavedCombiner combiner_from_json(const json& j) {
  try {
    SavedCombiner s;
    const auto& g = j.at("geometry");
    const std::string kind = g.at("kind").get<std::string>();
    if (kind == "simplex")
      s.geometry = GeometryKind::simplex(g.at("num_classes").get<int>());
    else if (kind == "euclidean")
      s.geometry = GeometryKind::euclidean();
    else
      throw FormatError("combiner: unknown geometry '" + kind + "'");
    s.layer.variant = parse_variant(j.at("variant").get<std::string>());
    s.layer.centers = matrix_from_json(j.at("centers"), "centers");
    s.layer.scales = vector_from_json(j.at("scales"), "scales");
    s.layer.scale_floor = j.at("scale_floor").get<double>();
    s.layer.window = j.at("window").get<int>();
    s.layer.normalization = parse_normalization(j.at("normalization").get<std::string>());
    if (s.layer.univariate()) s.layer.moments.resize(static_cast<std::size_t>(s.layer.num_units()));
    s.layer.validate();
    s.weights.alpha = matrix_from_json(j.at("alpha"), "alpha");
    s.weights.temperature = j.at("temperature").get<double>();
    if (s.weights.alpha.rows() != s.layer.num_units()) throw FormatError("combiner: alpha rows differ from unit count");
    if (!(s.weights.temperature > 0.0)) throw FormatError("combiner: temperature must be positive");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("combiner: ") + e.what());
  }
}

// ------------------------------------------------------------ configs

namespace detail {

// Reads `key` into `out` when present; type mismatches are configuration errors.
template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

}  // namespace detail

inline json to_json(const RegressionConfig& c) {
  json j{{"num_models", c.num_models},     {"architectures", c.architectures},
         {"heterogeneous", c.heterogeneous}, {"init_scale", c.init_scale},
         {"l1", c.l1},                     {"eta_theta", c.eta_theta},
         {"epsilon", c.epsilon},           {"lambda2", c.lambda2},
         {"eta_alpha", c.eta_alpha},       {"variant", to_string(c.variant)},
         {"window", c.window},             {"num_units", c.units()},
         {"normalization", to_string(c.row_normalization())},
         {"mode", to_string(c.mode)},      {"epochs", c.epochs},
         {"combiner_max_iters", c.combiner_max_iters},
         {"combiner_tol", c.combiner_tol}, {"folds", c.folds}};
  return j;
}

inline RegressionConfig regression_config_from_json(const json& j, RegressionConfig c = {}) {
  detail::reject_unknown(j,
                         {"num_models", "architectures", "heterogeneous", "init_scale", "l1", "eta_theta", "epsilon",
                          "lambda2", "eta_alpha", "variant", "window", "num_units", "normalization", "mode", "epochs",
                          "combiner_max_iters", "combiner_tol", "folds"},
                         "model");
  detail::read_field(j, "num_models", c.num_models);
  detail::read_field(j, "architectures", c.architectures);
  detail::read_field(j, "heterogeneous", c.heterogeneous);
  detail::read_field(j, "init_scale", c.init_scale);
  detail::read_field(j, "l1", c.l1);
  detail::read_field(j, "eta_theta", c.eta_theta);
  detail::read_field(j, "epsilon", c.epsilon);
  detail::read_field(j, "lambda2", c.lambda2);
  detail::read_field(j, "eta_alpha", c.eta_alpha);
  detail::read_field(j, "window", c.window);
  detail::read_field(j, "num_units", c.num_units);
  detail::read_field(j, "epochs", c.epochs);
  detail::read_field(j, "combiner_max_iters", c.combiner_max_iters);
  detail::read_field(j, "combiner_tol", c.combiner_tol);
  detail::read_field(j, "folds", c.folds);
  std::string s;
  if (j.contains("variant")) {
    detail::read_field(j, "variant", s);
    c.variant = parse_variant(s);
  }
  if (j.contains("normalization")) {
    detail::read_field(j, "normalization", s);
    c.normalization = parse_normalization(s);
  }
  if (j.contains("mode")) {
    detail::read_field(j, "mode", s);
    c.mode = parse_mode(s);
  }
  return c;
}

inline json to_json(const ClassificationConfig& c) {
  return json{{"num_models", c.num_models},
              {"num_units", c.units()},
              {"architectures", c.architectures},
              {"heterogeneous", c.heterogeneous},
              {"init_scale", c.init_scale},
              {"l1", c.l1},
              {"eta_theta", c.eta_theta},
              {"epsilon", c.epsilon},
              {"temperature", c.temperature},
              {"eta_alpha", c.eta_alpha},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"splits", c.splits},
              {"test_fraction", c.test_fraction},
              {"normalization", to_string(c.normalization)},
              {"train_centers", c.train_centers},
              {"moe_epochs", c.moe_epochs},
              {"moe_learning_rate", c.moe_learning_rate}};
}

inline ClassificationConfig classification_config_from_json(const json& j, ClassificationConfig c = {}) {
  detail::reject_unknown(j,
                         {"num_models", "num_units", "architectures", "heterogeneous", "init_scale", "l1", "eta_theta",
                          "epsilon", "temperature", "eta_alpha", "batch_size", "epochs", "splits", "test_fraction",
                          "normalization", "train_centers", "moe_epochs", "moe_learning_rate"},
                         "model");
  detail::read_field(j, "num_models", c.num_models);
  detail::read_field(j, "num_units", c.num_units);
  detail::read_field(j, "architectures", c.architectures);
  detail::read_field(j, "heterogeneous", c.heterogeneous);
  detail::read_field(j, "init_scale", c.init_scale);
  detail::read_field(j, "l1", c.l1);
  detail::read_field(j, "eta_theta", c.eta_theta);
  detail::read_field(j, "epsilon", c.epsilon);
  detail::read_field(j, "temperature", c.temperature);
  detail::read_field(j, "eta_alpha", c.eta_alpha);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "epochs", c.epochs);
  detail::read_field(j, "splits", c.splits);
  detail::read_field(j, "test_fraction", c.test_fraction);
  detail::read_field(j, "train_centers", c.train_centers);
  detail::read_field(j, "moe_epochs", c.moe_epochs);
  detail::read_field(j, "moe_learning_rate", c.moe_learning_rate);
  if (j.contains("normalization")) {
    std::string s;
    detail::read_field(j, "normalization", s);
    c.normalization = parse_normalization(s);
  }
  return c;
}

// ------------------------------------------------------------ run records

struct MetricSeries {
  std::string name;
  std::vector<double> per_fold;
  Summary summary;
};

struct RunRecord {
  std::string experiment;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  json config;  // snapshot of everything needed to rerun
  std::vector<MetricSeries> metrics;
  double wall_seconds = 0.0;
  std::string status = "ok";
};

// Summary that tolerates a single value (zero spread, zero-width interval).
inline Summary summarize_runs(std::span<const double> values) {
  if (values.size() >= 2) return summarize(values);
  Summary s;
  s.n = values.size();
  s.mean = values.empty() ? std::nan("") : values.front();
  return s;
}

inline MetricSeries make_series(std::string name, std::vector<double> values) {
  MetricSeries m{std::move(name), std::move(values), {}};
  m.summary = summarize_runs(m.per_fold);
  return m;
}

inline json to_json(const RunRecord& r, bool include_timing = true) {
  json metrics = json::object();
  for (const auto& m : r.metrics)
    metrics[m.name] = {{"per_fold", m.per_fold},
                       {"mean", m.summary.mean},
                       {"std", m.summary.std},
                       {"half_width_90", m.summary.half_width_90},
                       {"half_width_95", m.summary.half_width_95},
                       {"n", m.summary.n}};
  json j{{"experiment", r.experiment}, {"index", r.index}, {"seed", r.seed},
         {"config", r.config},         {"metrics", metrics}, {"status", r.status}};
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

namespace detail {

inline std::string csv_cell(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  std::string s = v.dump();
  // keep the CSV rectangular: nested arrays use ';' instead of ','
  for (char& ch : s)
    if (ch == ',') ch = ';';
  return s;
}

// Shortest decimal form that reads back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// One row per record: identifiers, flattened config, then per metric the
// mean / std / interval half-widths and the ';'-joined per-fold values.
inline void write_records_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  std::vector<std::string> config_keys, metric_names;
  for (const auto& r : records) {
    for (const auto& [k, v] : r.config.items())
      if (std::find(config_keys.begin(), config_keys.end(), k) == config_keys.end()) config_keys.push_back(k);
    for (const auto& m : r.metrics)
      if (std::find(metric_names.begin(), metric_names.end(), m.name) == metric_names.end())
        metric_names.push_back(m.name);
  }
  out << "index,experiment,seed,status,wall_seconds";
  for (const auto& k : config_keys) out << ',' << k;
  for (const auto& m : metric_names) out << ',' << m << "_mean," << m << "_std," << m << "_hw90," << m << "_hw95," << m << "_folds";
  out << '\n';
  for (const auto& r : records) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << r.index << ',' << r.experiment << ',' << r.seed << ',' << status << ',' << detail::fmt(r.wall_seconds);
    for (const auto& k : config_keys) out << ',' << (r.config.contains(k) ? detail::csv_cell(r.config.at(k)) : "");
    for (const auto& name : metric_names) {
      const auto it = std::find_if(r.metrics.begin(), r.metrics.end(), [&](const MetricSeries& m) { return m.name == name; });
      if (it == r.metrics.end()) {
        out << ",,,,,";
        continue;
      }
      out << ',' << detail::fmt(it->summary.mean) << ',' << detail::fmt(it->summary.std) << ','
          << detail::fmt(it->summary.half_width_90) << ',' << detail::fmt(it->summary.half_width_95) << ',';
      for (std::size_t i = 0; i < it->per_fold.size(); ++i) out << (i ? ";" : "") << detail::fmt(it->per_fold[i]);
    }
    out << '\n';
  }
}

}  // namespace sbfn
