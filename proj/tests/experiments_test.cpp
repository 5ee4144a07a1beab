#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "sbfn/runner.hpp"

namespace {

using sbfn::json;

sbfn::RegressionConfig small_regression() {
  sbfn::RegressionConfig c;
  c.num_models = 3;
  c.architectures = {{8}};
  c.epochs = 10;
  c.folds = 3;
  return c;
}

sbfn::Dataset small_sine(int n, std::uint64_t seed) { return sbfn::synth_sine(n, 1, 0.1, seed).first; }

sbfn::ClassificationConfig small_classification() {
  sbfn::ClassificationConfig c;
  c.num_models = 3;
  c.architectures = {{8}, {12}};
  c.epochs = 4;
  c.splits = 1;
  c.moe_epochs = 20;
  return c;
}

TEST(Regression, SingleModelRuns) {
  auto c = small_regression();
  c.num_models = 1;
  const auto d = small_sine(90, 1);
  const auto plan = sbfn::kfold(90, 3, 2);
  const auto r = sbfn::run_regression_fold(d, plan, 0, c, 3);
  EXPECT_TRUE(std::isfinite(r.rmse_sbfn));
  EXPECT_EQ(r.member_test.cols(), 1);
}

TEST(Regression, InvalidConfigRejectedBeforeTraining) {
  auto c = small_regression();
  c.epsilon = 1.0;
  const auto d = small_sine(30, 1);
  EXPECT_THROW(sbfn::train_regression(d, c, 1), sbfn::ConfigError);
  c = small_regression();
  c.folds = 1;
  EXPECT_THROW(c.validate(), sbfn::ConfigError);
  c = small_regression();
  c.variant = sbfn::Variant::g1;
  c.num_units = 7;
  EXPECT_THROW(c.validate(), sbfn::ConfigError);
}

TEST(Regression, ClosedFormAndIterativeAgree) {
  auto c = small_regression();
  const auto d = small_sine(120, 4);
  const auto plan = sbfn::kfold(120, 3, 5);
  const auto closed = sbfn::run_regression_fold(d, plan, 1, c, 6);
  c.mode = sbfn::TrainMode::iterative;
  const auto iterative = sbfn::run_regression_fold(d, plan, 1, c, 6);
  EXPECT_NEAR(iterative.rmse_sbfn, closed.rmse_sbfn, 0.01 * closed.rmse_sbfn);
  EXPECT_DOUBLE_EQ(iterative.rmse_arithmetic, closed.rmse_arithmetic);
}

TEST(Regression, DescentReachesRidgeSolution) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd phi(40, 4);
  Eigen::VectorXd y(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    for (Eigen::Index k = 0; k < 4; ++k) phi(i, k) = n(rng);
    y[i] = n(rng);
  }
  const Eigen::VectorXd ridge = sbfn::ridge_solve(phi, y, 2.0);
  const Eigen::VectorXd gd = sbfn::fit_alpha_descent(phi, y, 2.0, 1.0, 200000, 1e-14);
  EXPECT_LT((gd - ridge).norm(), 1e-8);
}

TEST(Classification, RunsAtBothEpsilonExtremes) {
  const auto d = sbfn::gaussian_blobs(240, 3, 2, 1.0, 7);
  for (double e : {0.0, 0.5}) {
    auto c = small_classification();
    c.epsilon = e;
    const auto r = sbfn::run_classification_split(d, 0, c, 8);
    for (double a : {r.acc_sbfn, r.acc_logit_average, r.acc_moe, r.acc_base_average}) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
    EXPECT_EQ(r.member_labels.cols(), 3);
    EXPECT_EQ(r.member_probs.cols(), 9);
    EXPECT_EQ(static_cast<Eigen::Index>(r.test_labels.size()), r.member_labels.rows());
  }
}

TEST(BasisStudy, GridShapeIsNearlySquare) {
  EXPECT_EQ(sbfn::grid_shape(2), std::make_pair(1, 2));
  EXPECT_EQ(sbfn::grid_shape(10), std::make_pair(2, 5));
  EXPECT_EQ(sbfn::grid_shape(20), std::make_pair(4, 5));
  EXPECT_EQ(sbfn::grid_shape(50), std::make_pair(5, 10));
  EXPECT_EQ(sbfn::grid_shape(7), std::make_pair(1, 7));
}

TEST(BasisStudy, CentresInsideBoundingBox) {
  const auto r = sbfn::run_basis_study(sbfn::BasisStrategy::gbf, 10, 3);
  ASSERT_EQ(r.centers.rows(), 10);
  EXPECT_TRUE((r.centers.array().abs() <= 3.0).all());
  const auto k = sbfn::run_basis_study(sbfn::BasisStrategy::kmeans, 10, 3);
  EXPECT_EQ(k.centers.rows(), 10);
}

TEST(Serialization, RegressionConfigRoundTrip) {
  auto c = small_regression();
  c.epsilon = 0.35;
  c.variant = sbfn::Variant::g2;
  c.mode = sbfn::TrainMode::iterative;
  const auto back = sbfn::regression_config_from_json(sbfn::to_json(c));
  EXPECT_EQ(sbfn::to_json(back), sbfn::to_json(c));
}

TEST(Serialization, ConfigRejectsUnknownAndMistypedKeys) {
  EXPECT_THROW(sbfn::regression_config_from_json(json{{"epsilonn", 0.1}}), sbfn::ConfigError);
  EXPECT_THROW(sbfn::regression_config_from_json(json{{"epsilon", "high"}}), sbfn::ConfigError);
  EXPECT_THROW(sbfn::regression_config_from_json(json{{"variant", "g4"}}), sbfn::ConfigError);
}

TEST(Serialization, CombinerRoundTripPredictsIdentically) {
  const auto d = sbfn::gaussian_blobs(150, 3, 2, 1.0, 2);
  auto c = small_classification();
  const auto model = sbfn::train_classification(d, c, 4);
  const auto rows = sbfn::StructuredMatrix::from_logits(sbfn::member_logits(model.members, d.features));
  const json j = sbfn::combiner_to_json(model.layer, model.weights, sbfn::GeometryKind::simplex(3));
  const auto saved = sbfn::combiner_from_json(json::parse(j.dump()));
  const Eigen::MatrixXd a = sbfn::predict_classification_rows(rows.values(), model.layer, model.weights);
  const Eigen::MatrixXd b = sbfn::predict_classification_rows(rows.values(), saved.layer, saved.weights);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(saved.geometry.is_simplex());
}

TEST(Serialization, MalformedCombinerIsFormatError) {
  EXPECT_THROW(sbfn::combiner_from_json(json{{"variant", "kmeans"}}), sbfn::FormatError);
}

TEST(Records, CsvHasSummaryColumnsAndJoinedFolds) {
  sbfn::RunRecord r;
  r.experiment = "x";
  r.config = {{"epsilon", 0.5}};
  r.metrics = {sbfn::make_series("rmse", {1.0, 3.0})};
  std::ostringstream out;
  sbfn::write_records_csv(out, {r});
  const std::string s = out.str();
  EXPECT_NE(s.find("rmse_mean,rmse_std,rmse_hw90,rmse_hw95,rmse_folds"), std::string::npos);
  EXPECT_NE(s.find(",2,"), std::string::npos);
  EXPECT_NE(s.find("1;3"), std::string::npos);
}

TEST(Runner, DefaultSweepGridHas80Configs) {
  const auto plan = sbfn::sweep_plan(json::object(), {});
  EXPECT_EQ(plan.configs.size(), 80u);
  EXPECT_EQ(plan.total_runs(), 800u);
  for (const auto& c : plan.configs) {
    EXPECT_EQ(c.architectures.front().front(), 20);
    EXPECT_DOUBLE_EQ(c.eta_theta, 0.03);
    EXPECT_DOUBLE_EQ(c.init_scale, 1.0);
  }
}

TEST(Runner, SweepRejectsBadAxisBeforeRunning) {
  const json doc = {{"grid", {{"epsilon", {0.0, 1.5}}}}};
  EXPECT_THROW(sbfn::sweep_plan(doc, {}), sbfn::ConfigError);
  EXPECT_THROW(sbfn::sweep_plan(json{{"grid", {{"epsilon", json::array()}}}}, {}), sbfn::ConfigError);
}

TEST(Runner, SweepRecordsEveryConfigAndFailure) {
  // 8 training rows per fold cannot seed 20 KMeans centres; 2 is fine.
  const json doc = {{"data", {{"n", 12}}},
                    {"base", {{"architectures", {{4}}}, {"epochs", 1}}},
                    {"grid", {{"num_models", {20, 2}}}},
                    {"folds", 3}};
  const auto res = sbfn::run_sweep(doc, {});
  ASSERT_EQ(res.records.size(), 2u);
  EXPECT_EQ(res.records[1].status, "ok");
  EXPECT_EQ(res.records[0].status.rfind("failed", 0), 0u) << res.records[0].status;
}

TEST(Runner, ParallelMatchesSerial) {
  const json doc = {{"data", {{"n", 60}}}, {"model", {{"architectures", {{6}}}, {"epochs", 3}, {"folds", 3}}}};
  sbfn::RunOptions serial, parallel;
  serial.seed = parallel.seed = 11;
  parallel.jobs = 3;
  EXPECT_EQ(sbfn::comparable_records(sbfn::run_regress(doc, serial).records),
            sbfn::comparable_records(sbfn::run_regress(doc, parallel).records));
}

TEST(Runner, DiagnoseReproducesClassifyDiagnostics) {
  const json doc = {{"data", {{"n", 150}}},
                    {"model", {{"num_models", 3}, {"epochs", 2}, {"splits", 2}, {"moe_epochs", 5}}},
                    {"epsilons", {0.0, 0.5}}};
  const auto root = std::filesystem::temp_directory_path() / ("sbfn_runner_" + std::to_string(::getpid()));
  const auto res = sbfn::run_classify(doc, {});
  const auto dir = sbfn::write_results(res, root.string());
  const auto again = sbfn::run_diagnose(dir.string());
  ASSERT_EQ(again.diagnostics.rows.size(), res.diagnostics.rows.size());
  for (std::size_t i = 0; i < res.diagnostics.rows.size(); ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(again.diagnostics.rows[i][c], res.diagnostics.rows[i][c]);
  std::filesystem::remove_all(root);
}

TEST(Runner, ResultDirectoriesDoNotCollide) {
  const auto root = std::filesystem::temp_directory_path() / ("sbfn_dirs_" + std::to_string(::getpid()));
  sbfn::ExperimentResult r;
  r.experiment = "x";
  const auto a = sbfn::write_results(r, root.string());
  const auto b = sbfn::write_results(r, root.string());
  EXPECT_NE(a, b);
  for (const char* f : {"records.csv", "records.json", "diagnostics.csv"}) EXPECT_TRUE(std::filesystem::exists(b / f));
  std::filesystem::remove_all(root);
}

TEST(Runner, UnknownDataSourceIsConfigError) {
  EXPECT_THROW(sbfn::regression_data(json{{"source", "parquet"}}, 1), sbfn::ConfigError);
  EXPECT_THROW(sbfn::classification_data(json{{"source", "blobs"}, {"colour", 1}}, 1), sbfn::ConfigError);
}

}  // namespace
