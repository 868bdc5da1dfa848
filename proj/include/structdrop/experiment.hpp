#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "structdrop/dropout_schemes.hpp"
#include "structdrop/errors.hpp"
#include "structdrop/factor_pair.hpp"
#include "structdrop/matrix.hpp"
#include "structdrop/rng.hpp"
#include "structdrop/spectral.hpp"
#include "structdrop/svd.hpp"
#include "structdrop/trainer.hpp"

namespace structdrop {

enum class ExperimentKind { det_equivalence, global_min_convergence, dropconnect_equivalence, dropblock_correction };

/// How --theta is read. `raw` trains at theta and derives the reference
/// theta_bar from the width; `width_scaled` takes theta as theta_bar and trains
/// at the retain probability for width d.
enum class ThetaConvention { raw, width_scaled };

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::det_equivalence: return "det_equivalence";
    case ExperimentKind::global_min_convergence: return "global_min_convergence";
    case ExperimentKind::dropconnect_equivalence: return "dropconnect_equivalence";
    case ExperimentKind::dropblock_correction: return "dropblock_correction";
  }
  return "unknown";
}

inline std::optional<ExperimentKind> parse_experiment_kind(std::string_view s) {
  for (auto k : {ExperimentKind::det_equivalence, ExperimentKind::global_min_convergence,
                 ExperimentKind::dropconnect_equivalence, ExperimentKind::dropblock_correction}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

inline std::string_view to_string(ThetaConvention c) {
  return c == ThetaConvention::raw ? "raw" : "width-scaled";
}

inline std::optional<ThetaConvention> parse_theta_convention(std::string_view s) {
  if (s == "raw") return ThetaConvention::raw;
  if (s == "width-scaled" || s == "width_scaled") return ThetaConvention::width_scaled;
  return std::nullopt;
}

struct ExperimentSpec {
  ExperimentKind experiment = ExperimentKind::global_min_convergence;
  std::size_t a = 8;
  std::size_t b = 10;
  std::size_t d = 6;
  std::size_t n = 40;
  std::size_t r = 2;
  double theta = 0.5;
  /// 0 selects 0.5 / ||X||_2^2, divided by N for single-sample training.
  double eta = 0.0;
  /// 0 selects a per-experiment default.
  std::size_t iters = 0;
  std::uint64_t seed = 0;
  std::size_t mc_samples = 10000;
  std::string output_path = "trace.csv";
  bool check = false;
  ThetaConvention convention = ThetaConvention::raw;
};

struct SyntheticDataset {
  Matrix x;
  Matrix y;
  Matrix u_true;
  Matrix v_true;
  Matrix u_init;
  Matrix v_init;
};

inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kTruthStream = 2;
inline constexpr std::uint64_t kInitUStream = 3;
inline constexpr std::uint64_t kInitVStream = 4;
inline constexpr std::uint64_t kMonteCarloStream = 7;

inline constexpr double kRankGuard = 1e-8;

namespace detail {

inline SyntheticDataset draw_dataset(std::size_t a, std::size_t b, std::size_t d, std::size_t n,
                                     std::uint64_t seed) {
  SeededRng data(seed, kDataStream);
  SeededRng truth(seed, kTruthStream);
  SeededRng init_u(seed, kInitUStream);
  SeededRng init_v(seed, kInitVStream);
  SyntheticDataset ds;
  ds.x = gaussian_matrix(data, b, n);
  ds.u_true = gaussian_matrix(truth, a, d);
  ds.v_true = gaussian_matrix(truth, b, d);
  ds.u_init = gaussian_matrix(init_u, a, d);
  ds.v_init = gaussian_matrix(init_v, b, d);
  ds.y = matmul(ds.u_true, matmul(transpose(ds.v_true), ds.x));
  return ds;
}

}  // namespace detail

/// Smallest of the b singular values of X (b x N). With fewer samples than
/// input rows at least b - N of them are zero.
inline double smallest_input_singular_value(const Matrix& x) {
  if (x.rows() > x.cols()) return 0.0;
  return singular_values(x).back();
}

/// Gaussian X (b x N), planted factors U_true (a x d), V_true (b x d), Gaussian
/// initial factors and Y = U_true V_true^T X. X must have rank b so that V is
/// identified by V^T X; if its smallest singular value is not above 1e-8 the
/// draw is repeated once with seed + 1.
inline SyntheticDataset synthesize_dataset(std::size_t a, std::size_t b, std::size_t d, std::size_t n,
                                           std::uint64_t seed) {
  if (a == 0 || b == 0 || d == 0 || n == 0) throw InvalidArgumentError("dataset dimensions must be positive");
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    SyntheticDataset ds = detail::draw_dataset(a, b, d, n, seed + attempt);
    if (smallest_input_singular_value(ds.x) > kRankGuard) return ds;
  }
  throw RankDeficiencyError("input matrix is rank deficient for seeds " + std::to_string(seed) + " and " +
                            std::to_string(seed + 1));
}

/// Decimal rendering with 12 significant digits and no exponent.
inline std::string format_decimal(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  const int exponent = static_cast<int>(std::floor(std::log10(std::abs(v))));
  const int decimals = std::max(0, 11 - exponent);
  const int len = std::snprintf(nullptr, 0, "%.*f", decimals, v);
  std::string out(static_cast<std::size_t>(len), '\0');
  std::snprintf(out.data(), out.size() + 1, "%.*f", decimals, v);
  return out;
}

struct CsvRow {
  std::size_t iter = 0;
  double stochastic_obj = 0.0;
  double deterministic_obj = 0.0;
  double global_min_ref = 0.0;
  double balance_max_ratio = 1.0;
};

inline constexpr std::string_view kCsvHeader = "iter,stochastic_obj,deterministic_obj,global_min_ref,balance_max_ratio";

inline double max_ratio(const std::vector<double>& norms) {
  const auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
  if (*hi == 0.0) return 1.0;
  if (*lo == 0.0) return std::numeric_limits<double>::infinity();
  return *hi / *lo;
}

inline std::vector<CsvRow> trace_rows(const TrainingTrace& trace, double global_min_ref) {
  std::vector<CsvRow> rows;
  rows.reserve(trace.records.size());
  for (const auto& rec : trace.records) {
    rows.push_back({rec.iteration, rec.stochastic_objective, rec.deterministic_objective, global_min_ref,
                    max_ratio(rec.block_norms)});
  }
  return rows;
}

inline void write_csv(std::ostream& os, const std::vector<CsvRow>& rows) {
  os << kCsvHeader << '\n';
  for (const auto& row : rows) {
    os << row.iter << ',' << format_decimal(row.stochastic_obj) << ',' << format_decimal(row.deterministic_obj) << ','
       << format_decimal(row.global_min_ref) << ',' << format_decimal(row.balance_max_ratio) << '\n';
  }
}

/// Writes the rows to `path`. Binary mode keeps LF line endings everywhere.
inline void emit_csv(const std::vector<CsvRow>& rows, const std::string& path) {
  if (path.empty()) throw InvalidArgumentError("output path is empty");
  if (rows.empty()) throw InvalidArgumentError("trace has no records");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + ": " + std::strerror(errno));
  write_csv(out, rows);
  out.flush();
  if (!out) throw IoError("cannot write " + path + ": " + std::strerror(errno));
}

inline void emit_csv(const TrainingTrace& trace, double global_min_ref, const std::string& path) {
  emit_csv(trace_rows(trace, global_min_ref), path);
}

struct ExperimentOutcome {
  std::vector<CsvRow> rows;
  double final_deterministic = 0.0;
  double global_min = 0.0;
  double relative_gap = 0.0;
  double balance_max_ratio = 1.0;
  double learning_rate = 0.0;
  /// Final deterministic objective of the companion run, where there is one.
  std::optional<double> comparison_final;
  bool check_passed = true;
  std::string check_detail;
};

namespace detail {

// The Monte-Carlo estimate at every record dominates det_equivalence, so it
// gets a shorter default run.
inline std::size_t default_iterations(ExperimentKind k) {
  return k == ExperimentKind::det_equivalence ? 2000 : 200000;
}

inline std::size_t smallest_odd_at_least(std::size_t r) { return r % 2 == 1 ? r : r + 1; }

// Trains with the divergence-halving rule: on divergence the learning rate is
// halved, at most ten times.
inline TrainingTrace train_with_halving(const SyntheticDataset& ds, TrainingConfig cfg, const RecordHook& hook = {}) {
  for (int halvings = 0;; ++halvings) {
    try {
      return train(ds.x, ds.y, ds.u_init, ds.v_init, cfg, hook);
    } catch (const DivergenceError&) {
      if (halvings == 10) throw;
      cfg.learning_rate *= 0.5;
    }
  }
}

inline double relative_difference(double value, double reference) {
  return reference == 0.0 ? std::abs(value) : (value - reference) / std::abs(reference);
}

}  // namespace detail

/// Runs one experiment end to end and returns its trace rows and summary
/// numbers. Throws on invalid specs, rank-deficient data and divergence.
inline ExperimentOutcome execute_experiment(const ExperimentSpec& spec) {
  if (spec.a == 0 || spec.b == 0 || spec.d == 0 || spec.n == 0 || spec.r == 0) {
    throw InvalidArgumentError("all dimensions must be at least 1");
  }
  if (!(spec.theta > 0.0 && spec.theta < 1.0)) throw InvalidArgumentError("theta must lie in (0, 1)");
  if (spec.eta < 0.0 || !std::isfinite(spec.eta)) throw InvalidArgumentError("eta must be nonnegative");

  const bool single_unit = spec.experiment == ExperimentKind::dropconnect_equivalence;
  const std::size_t r = single_unit ? 1 : spec.r;
  if (spec.d % r != 0) {
    throw BlockPartitionError("block size " + std::to_string(r) + " does not divide width " + std::to_string(spec.d));
  }

  double theta_train = spec.theta;
  double theta_bar = spec.theta;
  if (spec.convention == ThetaConvention::raw) {
    theta_bar = theta_bar_for_retain(spec.theta, r, spec.d);
  } else {
    theta_train = retain_for_width(spec.theta, r, spec.d);
  }

  const SyntheticDataset ds = synthesize_dataset(spec.a, spec.b, spec.d, spec.n, spec.seed);
  const double global_min = global_minimizer(ds.y, r, theta_bar).minimizer.objective;

  const bool full_batch = spec.experiment == ExperimentKind::global_min_convergence;
  const double xnorm = spectral_norm(ds.x);
  double eta = spec.eta;
  if (eta == 0.0) {
    eta = 0.5 / (xnorm * xnorm);
    if (!full_batch) eta /= static_cast<double>(spec.n);
  }

  TrainingConfig cfg;
  cfg.learning_rate = eta;
  cfg.iterations = spec.iters == 0 ? detail::default_iterations(spec.experiment) : spec.iters;
  cfg.seed = spec.seed;
  cfg.mode = full_batch ? TrainingMode::full_batch_deterministic : TrainingMode::stochastic_sgd;
  cfg.batch = BatchMode::single_sample;
  cfg.log_stride = std::max<std::size_t>(10, cfg.iterations / 200);

  ExperimentOutcome out;
  TrainingTrace trace;
  double worst_mc_deviation = 0.0;
  switch (spec.experiment) {
    case ExperimentKind::det_equivalence: {
      // The stochastic column carries a Monte-Carlo mean over mc_samples
      // masks instead of a single draw, compared against the closed form at
      // every record. A retry after divergence restarts the estimator stream.
      if (spec.mc_samples < 2) throw InvalidArgumentError("mc-samples must be at least 2");
      cfg.scheme = DropoutScheme::dropblock(theta_train, r);
      std::optional<SeededRng> mc_rng;
      auto hook = [&](const Matrix& u, const Matrix& v, TrainingRecord& rec) {
        if (rec.iteration == 0) {
          mc_rng.emplace(spec.seed, kMonteCarloStream);
          worst_mc_deviation = 0.0;
        }
        rec.stochastic_objective = expected_objective_mc(u, v, ds.x, ds.y, cfg.scheme, spec.mc_samples, *mc_rng).mean;
        worst_mc_deviation = std::max(
            worst_mc_deviation, std::abs(detail::relative_difference(rec.stochastic_objective, rec.deterministic_objective)));
      };
      trace = detail::train_with_halving(ds, cfg, hook);
      break;
    }
    case ExperimentKind::global_min_convergence:
      cfg.scheme = DropoutScheme::dropblock(theta_train, r);
      trace = detail::train_with_halving(ds, cfg);
      break;
    case ExperimentKind::dropconnect_equivalence: {
      cfg.scheme = DropoutScheme::dropconnect(theta_train);
      trace = detail::train_with_halving(ds, cfg);
      TrainingConfig dropout = cfg;
      dropout.scheme = DropoutScheme::bernoulli(theta_train);
      dropout.learning_rate = trace.learning_rate;
      out.comparison_final = detail::train_with_halving(ds, dropout).records.back().deterministic_objective;
      break;
    }
    case ExperimentKind::dropblock_correction: {
      const std::size_t window = detail::smallest_odd_at_least(r);
      if (window > spec.d) throw InvalidArgumentError("block window exceeds the width");
      cfg.scheme = DropoutScheme::dropblock_original(theta_correction(theta_train, window), window);
      trace = detail::train_with_halving(ds, cfg);
      TrainingConfig partitioned = cfg;
      partitioned.scheme = DropoutScheme::dropblock(theta_train, r);
      partitioned.learning_rate = trace.learning_rate;
      out.comparison_final = detail::train_with_halving(ds, partitioned).records.back().deterministic_objective;
      break;
    }
  }

  out.rows = trace_rows(trace, global_min);
  out.global_min = global_min;
  out.learning_rate = trace.learning_rate;
  out.final_deterministic = trace.records.back().deterministic_objective;
  out.relative_gap = detail::relative_difference(out.final_deterministic, global_min);
  out.balance_max_ratio = out.rows.back().balance_max_ratio;

  if (spec.experiment == ExperimentKind::det_equivalence) {
    out.check_passed = worst_mc_deviation <= 1e-2;
    out.check_detail = "largest Monte-Carlo deviation " + format_decimal(worst_mc_deviation) + " (limit 0.01)";
  } else if (spec.experiment == ExperimentKind::global_min_convergence) {
    out.check_passed = out.relative_gap <= 1e-2;
    out.check_detail = "relative gap " + format_decimal(out.relative_gap) + " (limit 0.01)";
  } else if (out.comparison_final) {
    const double rel = std::abs(detail::relative_difference(out.final_deterministic, *out.comparison_final));
    out.check_passed = rel <= 5e-2;
    out.check_detail = "relative difference to companion run " + format_decimal(rel) + " (limit 0.05)";
  }
  return out;
}

namespace exit_code {
inline constexpr int success = 0;
inline constexpr int io_failure = 1;
inline constexpr int check_failed = 2;
inline constexpr int usage = 2;
inline constexpr int divergence = 3;
}  // namespace exit_code

/// One-line key=value summary of an outcome.
inline std::string summary_line(const ExperimentSpec& spec, const ExperimentOutcome& out) {
  std::string line = "experiment=" + std::string(to_string(spec.experiment));
  line += " final_deterministic=" + format_decimal(out.final_deterministic);
  line += " global_min=" + format_decimal(out.global_min);
  line += " relative_gap=" + format_decimal(out.relative_gap);
  line += " balance_max_ratio=" + format_decimal(out.balance_max_ratio);
  line += " learning_rate=" + format_decimal(out.learning_rate);
  if (out.comparison_final) line += " companion_final=" + format_decimal(*out.comparison_final);
  return line;
}

/// Runs the experiment, writes the CSV trace and prints the summary to `out`.
/// Returns 0 on success, 2 for invalid specs or (with spec.check) a failed
/// tolerance, 3 on divergence and 1 on I/O failure.
inline int run_experiment(const ExperimentSpec& spec, std::ostream& out, std::ostream& err) {
  if (spec.output_path.empty()) {
    err << "error: --out must name a file\n";
    return exit_code::usage;
  }
  ExperimentOutcome outcome;
  try {
    outcome = execute_experiment(spec);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::divergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::io_failure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }
  try {
    emit_csv(outcome.rows, spec.output_path);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::io_failure;
  }
  out << summary_line(spec, outcome) << '\n';
  if (spec.check && !outcome.check_passed) {
    err << "check failed: " << outcome.check_detail << '\n';
    return exit_code::check_failed;
  }
  return exit_code::success;
}

}  // namespace structdrop
