#pragma once

// Argument handling for the experiment CLI, kept in a header so the tests can
// drive it in-process.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include "structdrop/experiment.hpp"

namespace structdrop::cli {

struct Flags {
  std::string experiment;
  std::size_t a = 0, b = 0, d = 0, n = 0, r = 0;
  double theta = 0.0;
  double eta = 0.0;
  std::size_t iters = 0;
  std::uint64_t seed = 0;
  std::size_t mc_samples = 0;
  std::string out;
  bool check = false;
  std::string theta_convention;
  std::string config;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

inline ExperimentKind experiment_from(const std::string& s) {
  if (auto k = parse_experiment_kind(s)) return *k;
  throw UsageError("unknown experiment '" + s + "'");
}

inline ThetaConvention convention_from(const std::string& s) {
  if (auto c = parse_theta_convention(s)) return *c;
  throw UsageError("unknown theta convention '" + s + "'");
}

/// Applies a flat JSON object of flag names (without dashes) to the spec.
/// Underscores may stand in for dashes.
inline void apply_config(const nlohmann::json& j, ExperimentSpec& spec) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [raw_key, value] : j.items()) {
    std::string key = raw_key;
    for (char& c : key)
      if (c == '_') c = '-';
    try {
      if (key == "experiment") spec.experiment = experiment_from(value.get<std::string>());
      else if (key == "a") spec.a = value.get<std::size_t>();
      else if (key == "b") spec.b = value.get<std::size_t>();
      else if (key == "d") spec.d = value.get<std::size_t>();
      else if (key == "n") spec.n = value.get<std::size_t>();
      else if (key == "r") spec.r = value.get<std::size_t>();
      else if (key == "theta") spec.theta = value.get<double>();
      else if (key == "eta") spec.eta = value.get<double>();
      else if (key == "iters") spec.iters = value.get<std::size_t>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "mc-samples") spec.mc_samples = value.get<std::size_t>();
      else if (key == "out") spec.output_path = value.get<std::string>();
      else if (key == "check") spec.check = value.get<bool>();
      else if (key == "theta-convention") spec.convention = convention_from(value.get<std::string>());
      else throw UsageError("unknown config key '" + raw_key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config key '" + raw_key + "': " + e.what());
    }
  }
}

/// Full command-line entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured dropout experiments on synthetic linear networks"};
  Flags f;
  app.add_option("--experiment", f.experiment,
                 "det_equivalence | global_min_convergence | dropconnect_equivalence | dropblock_correction");
  app.add_option("--a", f.a, "output dimension");
  app.add_option("--b", f.b, "input dimension");
  app.add_option("--d", f.d, "hidden width");
  app.add_option("--n", f.n, "number of samples");
  app.add_option("--r", f.r, "block size");
  app.add_option("--theta", f.theta, "retain probability");
  app.add_option("--eta", f.eta, "learning rate (0 selects it from the data)");
  app.add_option("--iters", f.iters, "training iterations (0 selects the experiment default)");
  app.add_option("--seed", f.seed, "random seed");
  app.add_option("--mc-samples", f.mc_samples, "Monte-Carlo samples per record");
  app.add_option("--out", f.out, "CSV trace path");
  app.add_flag("--check", f.check, "exit with status 2 when the experiment tolerance fails");
  app.add_option("--theta-convention", f.theta_convention, "raw | width-scaled");
  app.add_option("--config", f.config, "JSON file with the same keys; flags take precedence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::success : exit_code::usage;
  }

  ExperimentSpec spec;
  try {
    if (!f.config.empty()) {
      std::ifstream in(f.config, std::ios::binary);
      if (!in) {
        err << "error: cannot open config " << f.config << '\n';
        return exit_code::io_failure;
      }
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("config " + f.config + " is not valid JSON: " + e.what());
      }
      apply_config(j, spec);
    }
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--experiment")) spec.experiment = experiment_from(f.experiment);
    if (given("--a")) spec.a = f.a;
    if (given("--b")) spec.b = f.b;
    if (given("--d")) spec.d = f.d;
    if (given("--n")) spec.n = f.n;
    if (given("--r")) spec.r = f.r;
    if (given("--theta")) spec.theta = f.theta;
    if (given("--eta")) spec.eta = f.eta;
    if (given("--iters")) spec.iters = f.iters;
    if (given("--seed")) spec.seed = f.seed;
    if (given("--mc-samples")) spec.mc_samples = f.mc_samples;
    if (given("--out")) spec.output_path = f.out;
    if (given("--check")) spec.check = f.check;
    if (given("--theta-convention")) spec.convention = convention_from(f.theta_convention);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }
  return run_experiment(spec, out, err);
}

}  // namespace structdrop::cli
