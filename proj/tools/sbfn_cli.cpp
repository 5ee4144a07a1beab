// sbfn: command-line driver for the ensemble experiments.
//
// Exit codes: 0 ok, 2 config, 3 data/format, 4 numeric, 1 anything else.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sbfn/runner.hpp"

namespace {

struct Args {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "results";
  std::string mode;
  std::string variant;
  int jobs = 1;
  std::string input;
};

void add_common(CLI::App* sub, Args& a, bool model_flags) {
  sub->add_option("--config", a.config, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "master seed")->capture_default_str();
  sub->add_option("--out", a.out, "results root directory")->capture_default_str();
  sub->add_option("--jobs", a.jobs, "parallel workers")->check(CLI::PositiveNumber)->capture_default_str();
  if (model_flags) {
    sub->add_option("--mode", a.mode, "combiner fitting")->check(CLI::IsMember({"closed-form", "iterative"}));
    sub->add_option("--variant", a.variant, "centre variant")->check(CLI::IsMember({"g1", "g2", "g3", "kmeans"}));
  }
}

sbfn::RunOptions options(const Args& a) {
  sbfn::RunOptions o;
  o.seed = a.seed;
  o.out_root = a.out;
  o.jobs = a.jobs;
  o.log = &std::cerr;
  if (!a.mode.empty()) o.mode = sbfn::parse_mode(a.mode);
  if (!a.variant.empty()) o.variant = sbfn::parse_variant(a.variant);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s-BFN ensemble experiments"};
  app.require_subcommand(1);
  Args args;
  auto* regress = app.add_subcommand("regress", "k-fold regression with an s-BFN combiner");
  auto* classify = app.add_subcommand("classify", "repeated-split classification over epsilon values");
  auto* sweep = app.add_subcommand("sweep", "hyperparameter grid over the regression setup");
  auto* synth = app.add_subcommand("synth", "GBF vs KMeans basis study on the 2-D sine surface");
  auto* diagnose = app.add_subcommand("diagnose", "recompute diagnostics from a run directory");
  auto* exporter = app.add_subcommand("export-structured", "write the structured dataset and fitted combiner");
  for (auto* s : {regress, classify, sweep, exporter}) add_common(s, args, true);
  add_common(synth, args, false);
  add_common(diagnose, args, false);
  diagnose->add_option("--input", args.input, "run directory holding members.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const auto opts = options(args);
    const sbfn::json doc = args.config.empty() ? sbfn::json::object() : sbfn::load_config_file(args.config);
    sbfn::ExperimentResult result;
    if (regress->parsed()) result = sbfn::run_regress(doc, opts);
    else if (classify->parsed()) result = sbfn::run_classify(doc, opts);
    else if (sweep->parsed()) result = sbfn::run_sweep(doc, opts);
    else if (synth->parsed()) result = sbfn::run_synth(doc, opts);
    else if (diagnose->parsed()) result = sbfn::run_diagnose(args.input);
    else result = sbfn::run_export_structured(doc, opts);
    std::cerr << "config: " << result.resolved_config.dump() << "\n";
    std::cout << sbfn::write_results(result, opts.out_root).string() << "\n";
    return 0;
  } catch (const sbfn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const sbfn::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
