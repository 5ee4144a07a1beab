#pragma once

// Experiment drivers behind the command-line tool: config documents, fold and
// split loops, record collection and the results directory layout.
//
// Each driver returns an ExperimentResult held in memory; write_results()
// puts it on disk as results/<experiment>/<timestamp>/{records.csv,
// records.json, diagnostics.csv, ...}.

#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "sbfn/datasets_io.hpp"
#include "sbfn/diagnostics.hpp"
#include "sbfn/experiments.hpp"
#include "sbfn/serialization.hpp"

namespace sbfn {

struct RunOptions {
  std::uint64_t seed = 0;
  std::string out_root = "results";
  std::optional<TrainMode> mode;
  std::optional<Variant> variant;
  int jobs = 1;
  std::ostream* log = nullptr;  // progress messages; null for silent
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(std::ostream& out) const {
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << r[c];
      out << '\n';
    }
  }

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("table has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

struct ExperimentResult {
  std::string experiment;
  json resolved_config;
  std::vector<RunRecord> records;
  CsvTable diagnostics;
  std::vector<std::pair<std::string, std::string>> extra_files;  // name, contents
};

// ------------------------------------------------------------ helpers

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::uint64_t repeat_seed(std::uint64_t master, int repeat) {
  return derive_seed(master, {static_cast<std::uint64_t>(repeat)});
}

inline std::string num(double v) { return std::isfinite(v) ? detail::fmt(v) : ""; }

// ------------------------------------------------------------ data sources

inline Dataset regression_data(const json& setup, std::uint64_t seed) {
  const json s = setup.is_null() ? json::object() : setup;
  detail::reject_unknown(s, {"source", "n", "noise_std", "distractors", "path", "target_column", "delimiter",
                             "missing_markers", "ignore_columns", "limit"},
                         "data");
  std::string source = "synth";
  detail::read_field(s, "source", source);
  Dataset d;
  if (source == "synth") {
    int n = 300, distractors = 0;
    double noise = 0.1;
    detail::read_field(s, "n", n);
    detail::read_field(s, "noise_std", noise);
    detail::read_field(s, "distractors", distractors);
    if (distractors < 0) throw ConfigError("data.distractors must be >= 0");
    d = synth_sine(n, 1, noise, derive_seed(seed, {stream::data})).first;
    if (distractors > 0) d = add_distractors(std::move(d), distractors, derive_seed(seed, {stream::data, 1}));
  } else if (source == "csv") {
    CsvOptions o;
    std::string path, delim = ",";
    detail::read_field(s, "path", path);
    detail::read_field(s, "target_column", o.target_column);
    detail::read_field(s, "delimiter", delim);
    detail::read_field(s, "missing_markers", o.missing_markers);
    detail::read_field(s, "ignore_columns", o.ignore_columns);
    if (path.empty() || o.target_column.empty()) throw ConfigError("csv data needs 'path' and 'target_column'");
    if (delim.size() != 1) throw ConfigError("data.delimiter must be a single character");
    o.delimiter = delim[0];
    d = load_csv(path, o);
  } else {
    throw ConfigError("unknown regression data source '" + source + "' (expected synth, csv)");
  }
  int limit = 0;
  detail::read_field(s, "limit", limit);
  if (limit > 0 && limit < d.size()) {
    std::vector<Eigen::Index> head(static_cast<std::size_t>(limit));
    std::iota(head.begin(), head.end(), Eigen::Index{0});
    d = d.subset(head);
  }
  if (d.size() < 2) throw FormatError("regression data has fewer than two usable rows");
  return d;
}

inline Dataset classification_data(const json& setup, std::uint64_t seed) {
  const json s = setup.is_null() ? json::object() : setup;
  detail::reject_unknown(s, {"source", "n", "classes", "dim", "spread", "images", "labels", "downsample", "limit"},
                         "data");
  std::string source = "blobs";
  detail::read_field(s, "source", source);
  Dataset d;
  if (source == "blobs") {
    int n = 3000, classes = 3, dim = 2;
    double spread = 1.5;
    detail::read_field(s, "n", n);
    detail::read_field(s, "classes", classes);
    detail::read_field(s, "dim", dim);
    detail::read_field(s, "spread", spread);
    d = gaussian_blobs(n, classes, dim, spread, derive_seed(seed, {stream::data}));
  } else if (source == "idx") {
    std::string images, labels;
    int factor = 2;
    detail::read_field(s, "images", images);
    detail::read_field(s, "labels", labels);
    detail::read_field(s, "downsample", factor);
    if (images.empty() || labels.empty()) throw ConfigError("idx data needs 'images' and 'labels'");
    d = load_idx(images, labels, factor);
  } else {
    throw ConfigError("unknown classification data source '" + source + "' (expected blobs, idx)");
  }
  int limit = 0;
  detail::read_field(s, "limit", limit);
  if (limit > 0 && limit < d.size()) {
    std::vector<Eigen::Index> head(static_cast<std::size_t>(limit));
    std::iota(head.begin(), head.end(), Eigen::Index{0});
    const int classes = d.num_classes;
    d = d.subset(head);
    d.num_classes = classes;
  }
  return d;
}

// ------------------------------------------------------------ diagnostics

// Squared-loss decomposition of probability vectors against one-hot targets,
// one (row, class) pair per observation.
inline DecompositionReport probability_decomposition(const Eigen::MatrixXd& member_probs, std::span<const int> labels,
                                                     int num_classes) {
  const auto n = member_probs.rows();
  const auto m = member_probs.cols() / num_classes;
  Eigen::MatrixXd z(n * num_classes, m);
  Eigen::VectorXd y(n * num_classes);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < num_classes; ++c) {
      const auto r = i * num_classes + c;
      for (Eigen::Index j = 0; j < m; ++j) z(r, j) = member_probs(i, j * num_classes + c);
      y[r] = labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
    }
  return squared_loss_decomposition(z, y);
}

struct ClassificationDiagnostic {
  int repeat = 0;
  double epsilon = 0.0;
  int split = 0;
  DisagreementReport disagreement;
  DecompositionReport decomposition;
};

inline const std::vector<std::string>& classification_diagnostics_header() {
  static const std::vector<std::string> h{"level",         "epsilon",           "repeat",        "split",
                                          "gibbs_risk",    "expected_disagreement", "majority_vote_error",
                                          "c_bound",       "avg_member_error",  "ambiguity",     "ensemble_error"};
  return h;
}

// Per-split rows followed by one aggregate row per epsilon (means over
// repeats and splits; the bound is recomputed from the mean risks).
inline CsvTable classification_diagnostics(const std::vector<ClassificationDiagnostic>& items) {
  CsvTable t;
  t.header = classification_diagnostics_header();
  auto bound = [](const std::optional<double>& b) { return b ? num(*b) : std::string(); };
  for (const auto& d : items)
    t.rows.push_back({"split", num(d.epsilon), std::to_string(d.repeat), std::to_string(d.split),
                      num(d.disagreement.gibbs_risk), num(d.disagreement.expected_disagreement),
                      num(d.disagreement.majority_vote_error), bound(d.disagreement.c_bound),
                      num(d.decomposition.avg_member_error), num(d.decomposition.ambiguity),
                      num(d.decomposition.ensemble_error)});
  std::vector<double> eps;
  for (const auto& d : items)
    if (std::find(eps.begin(), eps.end(), d.epsilon) == eps.end()) eps.push_back(d.epsilon);
  for (double e : eps) {
    double g = 0, dis = 0, mv = 0, avg = 0, amb = 0, ens = 0;
    int n = 0;
    for (const auto& d : items) {
      if (d.epsilon != e) continue;
      g += d.disagreement.gibbs_risk;
      dis += d.disagreement.expected_disagreement;
      mv += d.disagreement.majority_vote_error;
      avg += d.decomposition.avg_member_error;
      amb += d.decomposition.ambiguity;
      ens += d.decomposition.ensemble_error;
      ++n;
    }
    g /= n, dis /= n, mv /= n, avg /= n, amb /= n, ens /= n;
    t.rows.push_back({"epsilon", num(e), "", "", num(g), num(dis), num(mv), bound(c_bound(g, dis)), num(avg), num(amb),
                      num(ens)});
  }
  return t;
}

inline void append_classification_members(CsvTable& table, int repeat, double epsilon, int split,
                                          const ClassificationSplitResult& r, int num_classes) {
  const auto m = r.member_labels.cols();
  if (table.header.empty()) {
    table.header = {"repeat", "epsilon", "split", "row", "target"};
    for (Eigen::Index j = 0; j < m; ++j) table.header.push_back("label_m" + std::to_string(j));
    for (Eigen::Index j = 0; j < m; ++j)
      for (int c = 0; c < num_classes; ++c) table.header.push_back("m" + std::to_string(j) + "_c" + std::to_string(c));
  }
  for (Eigen::Index i = 0; i < r.member_labels.rows(); ++i) {
    std::vector<std::string> row{std::to_string(repeat), num(epsilon), std::to_string(split), std::to_string(i),
                                 std::to_string(r.test_labels[static_cast<std::size_t>(i)])};
    for (Eigen::Index j = 0; j < m; ++j) row.push_back(std::to_string(r.member_labels(i, j)));
    for (Eigen::Index c = 0; c < r.member_probs.cols(); ++c) row.push_back(num(r.member_probs(i, c)));
    table.rows.push_back(std::move(row));
  }
}

// ------------------------------------------------------------ regress

struct RegressionSetup {
  RegressionConfig model;
  json data;
  int repeats = 1;
};

inline RegressionSetup regression_setup(const json& doc, const RunOptions& options) {
  const json d = doc.is_null() ? json::object() : doc;
  detail::reject_unknown(d, {"data", "model", "repeats"}, "regress config");
  RegressionSetup s;
  s.data = d.value("data", json::object());
  s.model = regression_config_from_json(d.value("model", json::object()));
  detail::read_field(d, "repeats", s.repeats);
  if (options.mode) s.model.mode = *options.mode;
  if (options.variant) s.model.variant = *options.variant;
  if (s.repeats < 1) throw ConfigError("repeats must be >= 1");
  s.model.validate();
  return s;
}

inline ExperimentResult run_regress(const json& doc, const RunOptions& options) {
  const auto setup = regression_setup(doc, options);
  ExperimentResult out;
  out.experiment = "regress";
  out.resolved_config = {{"data", setup.data}, {"model", to_json(setup.model)}, {"repeats", setup.repeats},
                         {"seed", options.seed}};

  std::vector<Dataset> data;
  std::vector<FoldPlan> plans;
  for (int r = 0; r < setup.repeats; ++r) {
    const auto s = repeat_seed(options.seed, r);
    data.push_back(regression_data(setup.data, s));
    if (setup.model.folds > data.back().size()) throw ConfigError("more folds than rows");
    plans.push_back(kfold(static_cast<int>(data.back().size()), setup.model.folds, derive_seed(s, {stream::fold})));
  }
  const auto folds = static_cast<std::size_t>(setup.model.folds);
  std::vector<RegressionFoldResult> results(folds * static_cast<std::size_t>(setup.repeats));
  std::vector<double> times(results.size());
  parallel_for(results.size(), options.jobs, [&](std::size_t t) {
    const int r = static_cast<int>(t / folds), f = static_cast<int>(t % folds);
    const auto start = std::chrono::steady_clock::now();
    results[t] = run_regression_fold(data[static_cast<std::size_t>(r)], plans[static_cast<std::size_t>(r)], f, setup.model,
                                     derive_seed(repeat_seed(options.seed, r), {stream::model, static_cast<std::uint64_t>(f)}));
    times[t] = seconds_since(start);
  });

  out.diagnostics.header = {"repeat", "fold", "rmse_sbfn", "rmse_arithmetic", "avg_member_error", "ambiguity",
                            "ensemble_error"};
  CsvTable members;
  members.header = {"repeat", "fold", "row", "target"};
  for (int j = 0; j < setup.model.num_models; ++j) members.header.push_back("m" + std::to_string(j));
  for (int r = 0; r < setup.repeats; ++r) {
    RunRecord rec;
    rec.experiment = "regress";
    rec.index = static_cast<std::size_t>(r);
    rec.seed = repeat_seed(options.seed, r);
    rec.config = to_json(setup.model);
    rec.config["data"] = setup.data;
    std::vector<double> s, a;
    for (std::size_t f = 0; f < folds; ++f) {
      const auto& fr = results[static_cast<std::size_t>(r) * folds + f];
      s.push_back(fr.rmse_sbfn);
      a.push_back(fr.rmse_arithmetic);
      rec.wall_seconds += times[static_cast<std::size_t>(r) * folds + f];
      out.diagnostics.rows.push_back({std::to_string(r), std::to_string(f), num(fr.rmse_sbfn), num(fr.rmse_arithmetic),
                                      num(fr.decomposition.avg_member_error), num(fr.decomposition.ambiguity),
                                      num(fr.decomposition.ensemble_error)});
      for (Eigen::Index i = 0; i < fr.member_test.rows(); ++i) {
        std::vector<std::string> row{std::to_string(r), std::to_string(f), std::to_string(i), num(fr.test_targets[i])};
        for (Eigen::Index j = 0; j < fr.member_test.cols(); ++j) row.push_back(num(fr.member_test(i, j)));
        members.rows.push_back(std::move(row));
      }
    }
    rec.metrics = {make_series("rmse_sbfn", s), make_series("rmse_arithmetic", a)};
    out.records.push_back(std::move(rec));
  }
  std::ostringstream m;
  members.write(m);
  out.extra_files.emplace_back("members.csv", m.str());
  return out;
}

// ------------------------------------------------------------ classify

struct ClassificationSetup {
  ClassificationConfig model;
  json data;
  std::vector<double> epsilons;
  int repeats = 1;
};

inline ClassificationSetup classification_setup(const json& doc) {
  const json d = doc.is_null() ? json::object() : doc;
  detail::reject_unknown(d, {"data", "model", "epsilons", "repeats"}, "classify config");
  ClassificationSetup s;
  s.data = d.value("data", json::object());
  s.model = classification_config_from_json(d.value("model", json::object()));
  detail::read_field(d, "repeats", s.repeats);
  s.epsilons = {s.model.epsilon};
  detail::read_field(d, "epsilons", s.epsilons);
  if (s.epsilons.empty()) throw ConfigError("epsilons must not be empty");
  if (s.repeats < 1) throw ConfigError("repeats must be >= 1");
  for (double e : s.epsilons) {
    ClassificationConfig c = s.model;
    c.epsilon = e;
    c.validate();
  }
  return s;
}

inline ExperimentResult run_classify(const json& doc, const RunOptions& options) {
  const auto setup = classification_setup(doc);
  if (options.variant && *options.variant != Variant::kmeans)
    throw ConfigError("classification uses KMeans-seeded centres; --variant must be kmeans");
  ExperimentResult out;
  out.experiment = "classify";
  out.resolved_config = {{"data", setup.data},
                         {"model", to_json(setup.model)},
                         {"epsilons", setup.epsilons},
                         {"repeats", setup.repeats},
                         {"seed", options.seed}};
  std::vector<Dataset> data;
  for (int r = 0; r < setup.repeats; ++r) {
    data.push_back(classification_data(setup.data, repeat_seed(options.seed, r)));
    if (data.back().num_classes < 2) throw FormatError("classification data needs at least two classes");
  }
  const auto n_eps = setup.epsilons.size();
  const auto splits = static_cast<std::size_t>(setup.model.splits);
  std::vector<ClassificationSplitResult> results(static_cast<std::size_t>(setup.repeats) * n_eps * splits);
  std::vector<double> times(results.size());
  parallel_for(results.size(), options.jobs, [&](std::size_t t) {
    const auto r = t / (n_eps * splits), e = (t / splits) % n_eps, s = t % splits;
    ClassificationConfig c = setup.model;
    c.epsilon = setup.epsilons[e];
    const auto start = std::chrono::steady_clock::now();
    results[t] = run_classification_split(data[r], static_cast<int>(s), c, repeat_seed(options.seed, static_cast<int>(r)));
    times[t] = seconds_since(start);
  });

  std::vector<ClassificationDiagnostic> diags;
  CsvTable members;
  for (std::size_t r = 0; r < static_cast<std::size_t>(setup.repeats); ++r)
    for (std::size_t e = 0; e < n_eps; ++e) {
      RunRecord rec;
      rec.experiment = "classify";
      rec.index = r * n_eps + e;
      rec.seed = repeat_seed(options.seed, static_cast<int>(r));
      ClassificationConfig c = setup.model;
      c.epsilon = setup.epsilons[e];
      rec.config = to_json(c);
      rec.config["data"] = setup.data;
      std::vector<double> sb, la, moe, base;
      for (std::size_t s = 0; s < splits; ++s) {
        const auto& res = results[(r * n_eps + e) * splits + s];
        sb.push_back(res.acc_sbfn);
        la.push_back(res.acc_logit_average);
        moe.push_back(res.acc_moe);
        base.push_back(res.acc_base_average);
        rec.wall_seconds += times[(r * n_eps + e) * splits + s];
        const int classes = data[r].num_classes;
        if (res.member_labels.cols() >= 2)
          diags.push_back({static_cast<int>(r), setup.epsilons[e], static_cast<int>(s), res.disagreement,
                           probability_decomposition(res.member_probs, res.test_labels, classes)});
        append_classification_members(members, static_cast<int>(r), setup.epsilons[e], static_cast<int>(s), res, classes);
      }
      rec.metrics = {make_series("acc_sbfn", sb), make_series("acc_logit_average", la), make_series("acc_moe", moe),
                     make_series("acc_base_average", base)};
      out.records.push_back(std::move(rec));
    }
  out.diagnostics = classification_diagnostics(diags);
  std::ostringstream m;
  members.write(m);
  out.extra_files.emplace_back("members.csv", m.str());
  return out;
}

// ------------------------------------------------------------ sweep

struct SweepGrid {
  std::vector<int> num_models{2, 5, 10, 20, 35};
  std::vector<double> epsilon{0.0, 0.1, 0.35, 0.5};
  std::vector<int> hidden_width{20};
  std::vector<double> eta{0.03};
  std::vector<double> init_scale{1.0};
  std::vector<double> l1{0.0};
  std::vector<double> lambda2{0.0, 3.0, 5.0, 7.0};

  std::size_t size() const {
    return num_models.size() * epsilon.size() * hidden_width.size() * eta.size() * init_scale.size() * l1.size() *
           lambda2.size();
  }

  // Cartesian product, last axis fastest.
  std::vector<RegressionConfig> expand(const RegressionConfig& base) const {
    std::vector<RegressionConfig> out;
    for (int m : num_models)
      for (double e : epsilon)
        for (int k : hidden_width)
          for (double h : eta)
            for (double x : init_scale)
              for (double a : l1)
                for (double b : lambda2) {
                  RegressionConfig c = base;
                  c.num_models = m;
                  c.epsilon = e;
                  c.architectures = {{k, k}};
                  c.eta_theta = h;
                  c.eta_alpha = h;
                  c.init_scale = x;
                  c.l1 = a;
                  c.lambda2 = b;
                  out.push_back(c);
                }
    return out;
  }
};

inline json to_json(const SweepGrid& g) {
  return {{"num_models", g.num_models}, {"epsilon", g.epsilon}, {"hidden_width", g.hidden_width}, {"eta", g.eta},
          {"init_scale", g.init_scale}, {"l1", g.l1},           {"lambda2", g.lambda2}};
}

inline SweepGrid sweep_grid_from_json(const json& j, const RegressionConfig& base) {
  SweepGrid g;
  if (j.is_null()) return g;
  detail::reject_unknown(j, {"num_models", "epsilon", "hidden_width", "eta", "init_scale", "l1", "lambda2"}, "grid");
  // Axes not listed take the base model's value.
  g.num_models = {base.num_models};
  g.epsilon = {base.epsilon};
  g.hidden_width = {base.architectures.front().front()};
  g.eta = {base.eta_theta};
  g.init_scale = {base.init_scale};
  g.l1 = {base.l1};
  g.lambda2 = {base.lambda2};
  detail::read_field(j, "num_models", g.num_models);
  detail::read_field(j, "epsilon", g.epsilon);
  detail::read_field(j, "hidden_width", g.hidden_width);
  detail::read_field(j, "eta", g.eta);
  detail::read_field(j, "init_scale", g.init_scale);
  detail::read_field(j, "l1", g.l1);
  detail::read_field(j, "lambda2", g.lambda2);
  if (g.size() == 0) throw ConfigError("grid: every axis needs at least one value");
  return g;
}

struct SweepPlan {
  std::vector<RegressionConfig> configs;
  json data;
  int repeats = 1;
  int folds = 10;
  SweepGrid grid;

  std::size_t total_runs() const {
    return configs.size() * static_cast<std::size_t>(repeats) * static_cast<std::size_t>(folds);
  }
};

inline SweepPlan sweep_plan(const json& doc, const RunOptions& options) {
  const json d = doc.is_null() ? json::object() : doc;
  detail::reject_unknown(d, {"data", "base", "grid", "repeats", "folds"}, "sweep config");
  SweepPlan p;
  p.data = d.value("data", json::object());
  RegressionConfig base = regression_config_from_json(d.value("base", json::object()));
  if (options.mode) base.mode = *options.mode;
  if (options.variant) base.variant = *options.variant;
  detail::read_field(d, "repeats", p.repeats);
  detail::read_field(d, "folds", p.folds);
  if (p.repeats < 1) throw ConfigError("repeats must be >= 1");
  base.folds = p.folds;
  p.grid = sweep_grid_from_json(d.contains("grid") ? d.at("grid") : json(), base);
  p.configs = p.grid.expand(base);
  for (const auto& c : p.configs) c.validate();
  return p;
}

inline ExperimentResult run_sweep(const json& doc, const RunOptions& options) {
  const auto plan = sweep_plan(doc, options);
  ExperimentResult out;
  out.experiment = "sweep";
  out.resolved_config = {{"data", plan.data},   {"grid", to_json(plan.grid)}, {"base", to_json(plan.configs.front())},
                         {"repeats", plan.repeats}, {"folds", plan.folds},   {"seed", options.seed},
                         {"total_runs", plan.total_runs()}};
  if (options.log)
    *options.log << "sweep: " << plan.configs.size() << " configurations x " << plan.repeats << " repeats x "
                 << plan.folds << " folds = " << plan.total_runs() << " runs\n";

  std::vector<Dataset> data;
  std::vector<FoldPlan> folds;
  for (int r = 0; r < plan.repeats; ++r) {
    const auto s = repeat_seed(options.seed, r);
    data.push_back(regression_data(plan.data, s));
    if (plan.folds > data.back().size()) throw ConfigError("more folds than rows");
    folds.push_back(kfold(static_cast<int>(data.back().size()), plan.folds, derive_seed(s, {stream::fold})));
  }
  const auto repeats = static_cast<std::size_t>(plan.repeats);
  out.records.resize(plan.configs.size() * repeats);
  out.diagnostics.header = {"index", "repeat", "fold", "rmse_sbfn", "rmse_arithmetic", "avg_member_error", "ambiguity",
                            "ensemble_error"};
  std::vector<std::vector<std::vector<std::string>>> diag_rows(out.records.size());
  std::atomic<std::size_t> done{0};
  parallel_for(out.records.size(), options.jobs, [&](std::size_t t) {
    const auto ci = t / repeats, r = t % repeats;
    RunRecord& rec = out.records[t];
    rec.experiment = "sweep";
    rec.index = t;
    rec.seed = repeat_seed(options.seed, static_cast<int>(r));
    rec.config = to_json(plan.configs[ci]);
    rec.config["config_index"] = ci;
    rec.config["data"] = plan.data;
    const auto start = std::chrono::steady_clock::now();
    try {
      std::vector<double> s, a;
      for (int f = 0; f < plan.folds; ++f) {
        const auto fr = run_regression_fold(data[r], folds[r], f, plan.configs[ci],
                                            derive_seed(rec.seed, {stream::model, static_cast<std::uint64_t>(f)}));
        s.push_back(fr.rmse_sbfn);
        a.push_back(fr.rmse_arithmetic);
        diag_rows[t].push_back({std::to_string(t), std::to_string(r), std::to_string(f), num(fr.rmse_sbfn),
                                num(fr.rmse_arithmetic), num(fr.decomposition.avg_member_error),
                                num(fr.decomposition.ambiguity), num(fr.decomposition.ensemble_error)});
      }
      rec.metrics = {make_series("rmse_sbfn", s), make_series("rmse_arithmetic", a)};
    } catch (const Error& e) {
      rec.status = std::string("failed: ") + e.what();
      rec.metrics = {make_series("rmse_sbfn", {}), make_series("rmse_arithmetic", {})};
    }
    rec.wall_seconds = seconds_since(start);
    const auto k = ++done;
    if (options.log && options.jobs <= 1) *options.log << "  [" << k << "/" << out.records.size() << "] " << rec.status << "\n";
  });
  for (auto& rows : diag_rows)
    for (auto& row : rows) out.diagnostics.rows.push_back(std::move(row));
  return out;
}

// ------------------------------------------------------------ synth

struct BasisStudySetup {
  std::vector<int> basis_counts{2, 5, 10, 20, 50};
  int runs = 5;
  double lambda2 = 1e-2;
  int n_train = 300;
  int n_test = 1000;
  double noise_std = 0.1;
};

inline BasisStudySetup basis_study_setup(const json& doc) {
  const json d = doc.is_null() ? json::object() : doc;
  detail::reject_unknown(d, {"basis_counts", "runs", "lambda2", "n_train", "n_test", "noise_std"}, "synth config");
  BasisStudySetup s;
  detail::read_field(d, "basis_counts", s.basis_counts);
  detail::read_field(d, "runs", s.runs);
  detail::read_field(d, "lambda2", s.lambda2);
  detail::read_field(d, "n_train", s.n_train);
  detail::read_field(d, "n_test", s.n_test);
  detail::read_field(d, "noise_std", s.noise_std);
  if (s.basis_counts.empty() || s.runs < 1) throw ConfigError("synth: need basis counts and at least one run");
  for (int m : s.basis_counts)
    if (m < 1 || m > s.n_train) throw ConfigError("synth: basis count out of range");
  if (!(s.lambda2 > 0.0)) throw ConfigError("synth: lambda2 must be positive");
  return s;
}

inline ExperimentResult run_synth(const json& doc, const RunOptions& options) {
  const auto setup = basis_study_setup(doc);
  ExperimentResult out;
  out.experiment = "synth";
  out.resolved_config = {{"basis_counts", setup.basis_counts}, {"runs", setup.runs},     {"lambda2", setup.lambda2},
                         {"n_train", setup.n_train},           {"n_test", setup.n_test}, {"noise_std", setup.noise_std},
                         {"seed", options.seed}};
  const BasisStrategy strategies[] = {BasisStrategy::gbf, BasisStrategy::kmeans};
  const std::size_t cells = 2 * setup.basis_counts.size();
  const auto runs = static_cast<std::size_t>(setup.runs);
  std::vector<BasisRun> results(cells * runs);
  std::vector<double> times(results.size());
  parallel_for(results.size(), options.jobs, [&](std::size_t t) {
    const auto cell = t / runs, run = t % runs;
    const auto start = std::chrono::steady_clock::now();
    results[t] = run_basis_study(strategies[cell / setup.basis_counts.size()], setup.basis_counts[cell % setup.basis_counts.size()],
                                 repeat_seed(options.seed, static_cast<int>(run)), setup.lambda2, setup.n_train,
                                 setup.n_test, setup.noise_std);
    times[t] = seconds_since(start);
  });
  out.diagnostics.header = {"strategy", "num_basis", "run", "seed", "rmse"};
  CsvTable centers;
  centers.header = {"strategy", "num_basis", "run", "unit", "x1", "x2"};
  for (std::size_t cell = 0; cell < cells; ++cell) {
    RunRecord rec;
    rec.experiment = "synth";
    rec.index = cell;
    rec.seed = options.seed;
    const auto strategy = strategies[cell / setup.basis_counts.size()];
    const int m = setup.basis_counts[cell % setup.basis_counts.size()];
    rec.config = {{"strategy", to_string(strategy)}, {"num_basis", m}, {"lambda2", setup.lambda2},
                  {"n_train", setup.n_train}, {"n_test", setup.n_test}, {"noise_std", setup.noise_std}};
    std::vector<double> rmses;
    for (std::size_t run = 0; run < runs; ++run) {
      const auto& br = results[cell * runs + run];
      rmses.push_back(br.rmse);
      rec.wall_seconds += times[cell * runs + run];
      out.diagnostics.rows.push_back({to_string(strategy), std::to_string(m), std::to_string(run),
                                      std::to_string(br.seed), num(br.rmse)});
      for (Eigen::Index k = 0; k < br.centers.rows(); ++k)
        centers.rows.push_back({to_string(strategy), std::to_string(m), std::to_string(run), std::to_string(k),
                                num(br.centers(k, 0)), num(br.centers(k, 1))});
    }
    rec.metrics = {make_series("rmse", rmses)};
    out.records.push_back(std::move(rec));
  }
  std::ostringstream c;
  centers.write(c);
  out.extra_files.emplace_back("centers.csv", c.str());
  return out;
}

// ------------------------------------------------------------ diagnose

inline CsvTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  t.header = detail::split(line, ',');
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = detail::split(line, ',');
    if (cells.size() != t.header.size()) throw FormatError(path + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double cell_number(const std::string& s, const std::string& where) {
  const auto v = detail::parse_double(s);
  if (!v) throw FormatError(where + ": non-numeric cell '" + s + "'");
  return *v;
}

// Recomputes the diagnostics from a run's stored member outputs.
inline ExperimentResult run_diagnose(const std::string& run_dir) {
  namespace fs = std::filesystem;
  const fs::path members_path = fs::path(run_dir) / "members.csv";
  if (!fs::exists(members_path)) throw IoError("no stored member outputs at " + members_path.string());
  const CsvTable t = read_table(members_path.string());
  ExperimentResult out;
  out.experiment = "diagnose";
  out.resolved_config = {{"input", run_dir}};
  const bool classification = std::find(t.header.begin(), t.header.end(), "epsilon") != t.header.end();
  const auto where = members_path.string();

  if (!classification) {
    // regression: one decomposition per (repeat, fold)
    const auto rc = t.column("repeat"), fc = t.column("fold"), yc = t.column("target");
    const std::size_t first = yc + 1, m = t.header.size() - first;
    if (m < 1) throw FormatError(where + ": no member columns");
    out.diagnostics.header = {"repeat", "fold", "avg_member_error", "ambiguity", "ensemble_error"};
    std::size_t i = 0;
    while (i < t.rows.size()) {
      std::size_t j = i;
      while (j < t.rows.size() && t.rows[j][rc] == t.rows[i][rc] && t.rows[j][fc] == t.rows[i][fc]) ++j;
      Eigen::MatrixXd z(static_cast<Eigen::Index>(j - i), static_cast<Eigen::Index>(m));
      Eigen::VectorXd y(static_cast<Eigen::Index>(j - i));
      for (std::size_t r = i; r < j; ++r) {
        y[static_cast<Eigen::Index>(r - i)] = cell_number(t.rows[r][yc], where);
        for (std::size_t c = 0; c < m; ++c)
          z(static_cast<Eigen::Index>(r - i), static_cast<Eigen::Index>(c)) = cell_number(t.rows[r][first + c], where);
      }
      const auto d = squared_loss_decomposition(z, y);
      out.diagnostics.rows.push_back({t.rows[i][rc], t.rows[i][fc], num(d.avg_member_error), num(d.ambiguity),
                                      num(d.ensemble_error)});
      i = j;
    }
    return out;
  }

  const auto rc = t.column("repeat"), ec = t.column("epsilon"), sc = t.column("split"), yc = t.column("target");
  std::vector<std::size_t> label_cols, prob_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].rfind("label_m", 0) == 0) label_cols.push_back(c);
    if (t.header[c].size() > 1 && t.header[c][0] == 'm' && t.header[c].find("_c") != std::string::npos)
      prob_cols.push_back(c);
  }
  const auto m = label_cols.size();
  if (m < 2) throw FormatError(where + ": need at least two member label columns");
  if (prob_cols.size() % m != 0) throw FormatError(where + ": probability columns do not split into members");
  const int classes = static_cast<int>(prob_cols.size() / m);
  std::vector<ClassificationDiagnostic> items;
  std::size_t i = 0;
  while (i < t.rows.size()) {
    std::size_t j = i;
    while (j < t.rows.size() && t.rows[j][rc] == t.rows[i][rc] && t.rows[j][ec] == t.rows[i][ec] &&
           t.rows[j][sc] == t.rows[i][sc])
      ++j;
    const auto n = static_cast<Eigen::Index>(j - i);
    LabelMatrix labels(n, static_cast<Eigen::Index>(m));
    Eigen::MatrixXd probs(n, static_cast<Eigen::Index>(prob_cols.size()));
    std::vector<int> targets(static_cast<std::size_t>(n));
    for (std::size_t r = i; r < j; ++r) {
      const auto row = static_cast<Eigen::Index>(r - i);
      targets[static_cast<std::size_t>(row)] = static_cast<int>(cell_number(t.rows[r][yc], where));
      for (std::size_t c = 0; c < m; ++c)
        labels(row, static_cast<Eigen::Index>(c)) = static_cast<int>(cell_number(t.rows[r][label_cols[c]], where));
      for (std::size_t c = 0; c < prob_cols.size(); ++c)
        probs(row, static_cast<Eigen::Index>(c)) = cell_number(t.rows[r][prob_cols[c]], where);
    }
    items.push_back({static_cast<int>(cell_number(t.rows[i][rc], where)), cell_number(t.rows[i][ec], where),
                     static_cast<int>(cell_number(t.rows[i][sc], where)), disagreement_report(labels, targets),
                     probability_decomposition(probs, targets, classes)});
    i = j;
  }
  out.diagnostics = classification_diagnostics(items);
  return out;
}

// ------------------------------------------------------------ export-structured

inline ExperimentResult run_export_structured(const json& doc, const RunOptions& options) {
  const json d = doc.is_null() ? json::object() : doc;
  std::string task = "regress";
  detail::read_field(d, "task", task);
  json rest = d;
  rest.erase("task");
  ExperimentResult out;
  out.experiment = "export-structured";
  std::ostringstream csv;
  json combiner;
  RunRecord rec;
  rec.experiment = out.experiment;
  rec.seed = options.seed;
  const auto start = std::chrono::steady_clock::now();
  if (task == "regress") {
    const auto setup = regression_setup(rest, options);
    Dataset data = standardize(regression_data(setup.data, repeat_seed(options.seed, 0)));
    const auto model = train_regression(data, setup.model, derive_seed(repeat_seed(options.seed, 0), {stream::model}));
    const auto rows = StructuredMatrix::from_predictions(member_predictions(model.members, data.features));
    const auto names = rows.column_names();
    for (const auto& n : names) csv << n << ',';
    csv << "target\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < rows.num_rows(); ++i) {
      for (Eigen::Index c = 0; c < rows.width(); ++c) csv << rows.values()(i, c) << ',';
      csv << data.targets[i] << '\n';
    }
    combiner = combiner_to_json(model.layer, model.weights, GeometryKind::euclidean());
    rec.config = to_json(setup.model);
    rec.config["data"] = setup.data;
    rec.metrics = {make_series("train_rmse_sbfn", {rmse(predict_regression(model, data.features), data.targets)})};
    out.resolved_config = {{"task", task}, {"data", setup.data}, {"model", to_json(setup.model)}, {"seed", options.seed}};
  } else if (task == "classify") {
    const auto setup = classification_setup(rest);
    Dataset data = standardize(classification_data(setup.data, repeat_seed(options.seed, 0)));
    const auto model = train_classification(data, setup.model, derive_seed(repeat_seed(options.seed, 0), {stream::model}));
    const auto rows = StructuredMatrix::from_logits(member_logits(model.members, data.features));
    for (const auto& n : rows.column_names()) csv << n << ',';
    csv << "target\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < rows.num_rows(); ++i) {
      for (Eigen::Index c = 0; c < rows.width(); ++c) csv << rows.values()(i, c) << ',';
      csv << static_cast<int>(data.targets[i]) << '\n';
    }
    combiner = combiner_to_json(model.layer, model.weights, GeometryKind::simplex(model.num_classes));
    rec.config = to_json(setup.model);
    rec.config["data"] = setup.data;
    rec.metrics = {make_series(
        "train_acc_sbfn", {accuracy(predict_classification_rows(rows.values(), model.layer, model.weights), data.labels())})};
    out.resolved_config = {{"task", task}, {"data", setup.data}, {"model", to_json(setup.model)}, {"seed", options.seed}};
  } else {
    throw ConfigError("export-structured: unknown task '" + task + "' (expected regress, classify)");
  }
  rec.wall_seconds = seconds_since(start);
  out.records.push_back(std::move(rec));
  out.diagnostics.header = {"rows", "width"};
  out.extra_files.emplace_back("structured.csv", csv.str());
  out.extra_files.emplace_back("combiner.json", combiner.dump(2) + "\n");
  return out;
}

// ------------------------------------------------------------ output

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

inline std::filesystem::path write_results(const ExperimentResult& result, const std::string& out_root) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(out_root) / result.experiment;
  const std::string stamp = utc_timestamp();
  fs::path dir = base / stamp;
  for (int k = 1; fs::exists(dir); ++k) dir = base / (stamp + "-" + std::to_string(k));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto put = [&](const std::string& name, const std::string& contents) {
    std::ofstream f(dir / name);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    f << contents;
  };
  std::ostringstream records_csv, diagnostics_csv;
  write_records_csv(records_csv, result.records);
  result.diagnostics.write(diagnostics_csv);
  json records = json::array();
  for (const auto& r : result.records) records.push_back(to_json(r));
  put("records.csv", records_csv.str());
  put("records.json", records.dump(2) + "\n");
  put("diagnostics.csv", diagnostics_csv.str());
  put("config.json", result.resolved_config.dump(2) + "\n");
  for (const auto& [name, contents] : result.extra_files) put(name, contents);
  return dir;
}

// Records with the timing field removed; equal across reruns of the same
// config and seed.
inline json comparable_records(const std::vector<RunRecord>& records) {
  json out = json::array();
  for (const auto& r : records) out.push_back(to_json(r, false));
  return out;
}

}  // namespace sbfn
