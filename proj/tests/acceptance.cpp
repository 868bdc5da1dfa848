// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
// Usage: acceptance --cli <path to structdrop_cli>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "structdrop/structdrop.hpp"

using namespace structdrop;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::size_t pick(SeededRng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1));
}

double rel_err(double value, double ref) { return std::abs(value - ref) / std::max(std::abs(ref), 1e-300); }

// Criterion 1: block-dropout expectation by enumeration vs the closed form.
Verdict deterministic_equivalence() {
  SeededRng rng(1001);
  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {{2, 1}, {4, 2}, {6, 2}, {6, 3}, {8, 2},
                                                                    {8, 4}, {9, 3}, {10, 1}, {12, 1}, {12, 4}};
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto [d, r] = shapes[static_cast<std::size_t>(t) % shapes.size()];
    const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 4), n = pick(rng, 1, 4);
    const double theta = 0.1 + 0.85 * rng.uniform();
    const Matrix u = gaussian_matrix(rng, a, d), v = gaussian_matrix(rng, b, d);
    const Matrix x = gaussian_matrix(rng, b, n), y = gaussian_matrix(rng, a, n);
    const double closed = fit_loss(u, v, x, y) + regularizer_dropblock(FactorPair(u, v, r), x, theta);
    const double ref = oracle::enumerate_unit_masks(u, v, x, y, d / r, theta, theta, oracle::block_builder(r));
    worst = std::max(worst, std::abs(closed - ref));
  }
  return {worst <= 1e-9, "100 instances, d <= 12, largest absolute difference " + num(worst) + " (limit 1e-9)"};
}

// Criterion 2: characteristic-matrix form for the three unit-mask schemes.
Verdict generalized_equivalence() {
  SeededRng rng(1002);
  double worst[3] = {0.0, 0.0, 0.0};
  for (int t = 0; t < 60; ++t) {
    const int kind = t % 3;
    const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 4), n = pick(rng, 1, 4);
    const double theta = 0.1 + 0.85 * rng.uniform();
    std::size_t d = pick(rng, 3, 10);
    std::size_t count = d;
    double mu = theta;
    oracle::MaskBuilder build;
    DropoutScheme scheme = DropoutScheme::bernoulli(theta);
    if (kind == 0) {
      build = oracle::identity_builder();
    } else if (kind == 1) {
      const std::size_t r = pick(rng, 1, 3);
      d = r * std::max<std::size_t>(1, d / r);
      count = d / r;
      scheme = DropoutScheme::dropblock(theta, r);
      build = oracle::block_builder(r);
    } else {
      const std::size_t w = pick(rng, 0, 1) ? 3 : 5;
      d = std::max(d, w);
      count = d;
      scheme = DropoutScheme::dropblock_original(theta, w);
      mu = 1.0 - std::pow(1.0 - theta, static_cast<double>(w));
      build = oracle::window_builder(w);
    }
    const Matrix u = gaussian_matrix(rng, a, d), v = gaussian_matrix(rng, b, d);
    const Matrix x = gaussian_matrix(rng, b, n), y = gaussian_matrix(rng, a, n);
    const CharacteristicMatrix cm = characteristic_matrix(scheme, d);
    const double closed = fit_loss(u, v, x, y) + regularizer_generalized(cm, u, matmul(transpose(x), v));
    const double ref = oracle::enumerate_unit_masks(u, v, x, y, count, theta, mu, build);
    worst[kind] = std::max(worst[kind], std::abs(closed - ref));
  }
  const double w = std::max({worst[0], worst[1], worst[2]});
  return {w <= 1e-9, "largest absolute difference bernoulli " + num(worst[0]) + ", partitioned " + num(worst[1]) +
                         ", original " + num(worst[2]) + " (limit 1e-9)"};
}

// Criterion 3: DropConnect enumeration vs the Dropout deterministic form.
Verdict dropconnect_equivalence() {
  SeededRng rng(1003);
  double worst_dropout = 0.0, worst_exact = 0.0, worst_orthogonal = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t b = pick(rng, 1, 4), d = pick(rng, 1, 16 / b);
    const std::size_t a = pick(rng, 1, 3), n = pick(rng, 1, 4);
    const double theta = 0.1 + 0.85 * rng.uniform();
    const Matrix u = gaussian_matrix(rng, a, d), v = gaussian_matrix(rng, b, d);
    const Matrix x = gaussian_matrix(rng, b, n), y = gaussian_matrix(rng, a, n);
    const double fit = fit_loss(u, v, x, y);
    const double ref = oracle::enumerate_dropconnect(u, v, x, y, theta);
    worst_dropout = std::max(worst_dropout, std::abs(fit + regularizer_dropconnect(u, v, x, theta) - ref));
    worst_exact = std::max(worst_exact, std::abs(fit + regularizer_dropconnect_exact(u, v, x, theta) - ref));

    // Same factors with mutually orthogonal input rows.
    const Matrix xo = Matrix::generate(b, n, [&](std::size_t i, std::size_t j) {
      return i == j % b ? x(i, j) : 0.0;
    });
    const double ref_o = oracle::enumerate_dropconnect(u, v, xo, y, theta);
    worst_orthogonal =
        std::max(worst_orthogonal, std::abs(fit_loss(u, v, xo, y) + regularizer_dropconnect(u, v, xo, theta) - ref_o));
  }
  return {worst_dropout <= 1e-9,
          "50 instances, b*d <= 16, largest absolute difference " + num(worst_dropout) +
              " (limit 1e-9); with orthogonal input rows " + num(worst_orthogonal) +
              "; against the per-weight penalty sum_j V_ji^2 ||x_j||^2 " + num(worst_exact)};
}

// Criterion 4: closed-form envelope vs its numerical double conjugate.
Verdict envelope_closed_form() {
  SeededRng rng(1004);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t p = pick(rng, 1, 5), r = pick(rng, 1, 4);
    std::vector<double> s(p);
    for (double& v : s) v = 4.0 * rng.uniform();
    std::sort(s.rbegin(), s.rend());
    const double closed = k_support_sq(s, r, 1.0).value;
    const double ref = oracle::envelope_double_conjugate(s, r);
    worst = std::max(worst, rel_err(closed, ref));
  }
  double worst_end = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t p = pick(rng, 1, 5);
    std::vector<double> s(p);
    for (double& v : s) v = 4.0 * rng.uniform();
    std::sort(s.rbegin(), s.rend());
    double l1 = 0.0;
    for (double v : s) l1 += v;
    worst_end = std::max(worst_end, rel_err(k_support_sq(s, 1, 1.0).value, l1 * l1));
    const double c = 0.1 + 3.0 * rng.uniform();
    const std::vector<double> flat(p, c);
    worst_end = std::max(worst_end, rel_err(k_support_sq(flat, p, 1.0).value, static_cast<double>(p) * c * c));
  }
  return {worst < 1e-3 && worst_end <= 1e-10, "200 spectra, largest relative error " + num(worst) +
                                                  " (limit 1e-3); endpoints " + num(worst_end) + " (limit 1e-10)"};
}

// Criterion 5: closed-form global minimizer vs a projected-gradient oracle.
Verdict closed_form_minimizer() {
  SeededRng rng(1005);
  const double thetas[3] = {0.2, 0.5, 0.8};
  double worst_rel = 0.0, worst_excess = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < 100; ++t) {
    const std::size_t rows = pick(rng, 1, 6), cols = pick(rng, 1, 6), r = pick(rng, 1, 3);
    const double theta_bar = thetas[t % 3];
    const double beta = (1.0 - theta_bar) / theta_bar;
    const Matrix y = gaussian_matrix(rng, rows, cols);
    const double closed = global_minimizer(y, r, theta_bar).minimizer.objective;
    const double ref = oracle::envelope_minimum_pg(singular_values(y), r, beta, 20, 10000, 5000 + t);
    worst_rel = std::max(worst_rel, rel_err(closed, ref));
    worst_excess = std::max(worst_excess, closed - ref);
  }
  return {worst_excess <= 1e-6 && worst_rel <= 1e-5,
          "100 targets, largest excess over oracle " + num(worst_excess) + " (limit 1e-6), largest relative difference " +
              num(worst_rel) + " (limit 1e-5)"};
}

// Criteria 6 and 7 share one training run.
struct ConvergenceRun {
  ExperimentOutcome outcome;
  double seconds;
};

ConvergenceRun convergence_run() {
  const auto start = std::chrono::steady_clock::now();
  ExperimentSpec spec;  // a=8, b=10, d=6, r=2, N=40, theta=0.5, 2e5 full-batch iterations
  ExperimentOutcome out = execute_experiment(spec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(out), secs};
}

Verdict global_min_gap(const ConvergenceRun& run) {
  const double gap = run.outcome.relative_gap;
  return {gap <= 1e-2 && run.seconds < 120.0, "relative gap " + num(gap) + " (limit 1e-2) after " +
                                                  std::to_string(run.outcome.rows.back().iter) + " iterations in " +
                                                  num(run.seconds) + " s"};
}

Verdict balanced_optimum(const ConvergenceRun& run) {
  const double ratio = run.outcome.balance_max_ratio;
  return {ratio <= 1.01, "block norm max ratio " + num(ratio) + " (limit 1.01)"};
}

// Criterion 8: duplicate_halving.
Verdict duplicate_halving_check() {
  SeededRng rng(1008);
  double worst_prod = 0.0, worst_half = 0.0, worst_five = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t r = pick(rng, 1, 3);
    const std::size_t d = r * pick(rng, 1, 3);
    const Matrix x = gaussian_matrix(rng, 5, 7);
    const FactorPair fp(gaussian_matrix(rng, 4, d), gaussian_matrix(rng, 5, d), r);
    const Matrix base = product(fp, x);
    const double reg = regularizer_dropblock(fp, x, 0.5);
    const FactorPair once = duplicate_halving(fp);
    worst_prod = std::max(worst_prod, frobenius_norm(subtract(product(once, x), base)) / frobenius_norm(base));
    worst_half = std::max(worst_half, rel_err(regularizer_dropblock(once, x, 0.5), reg / 2.0));
    FactorPair many = fp;
    for (int k = 0; k < 5; ++k) many = duplicate_halving(many);
    worst_five = std::max(worst_five, rel_err(regularizer_dropblock(many, x, 0.5), reg / 32.0));
  }
  return {worst_prod <= 1e-12 && worst_half <= 1e-10 && worst_five <= 1e-8,
          "product " + num(worst_prod) + " (limit 1e-12), halving " + num(worst_half) + " (limit 1e-10), five steps " +
              num(worst_five) + " (limit 1e-8)"};
}

// Criterion 9: rebalance with doubling block counts.
Verdict rebalance_check() {
  SeededRng rng(1009);
  double worst_prod = 0.0, worst_ratio = 0.0;
  int decreased = 0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    const std::size_t r = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 2, 4);
    const Matrix x = gaussian_matrix(rng, 5, 8);
    const Matrix y = gaussian_matrix(rng, 4, 8);
    std::vector<double> f(r * k);
    for (std::size_t blk = 0; blk < k; ++blk) {
      const double s = std::exp(2.0 * (rng.uniform() - 0.5) * 2.0);
      for (std::size_t j = 0; j < r; ++j) f[blk * r + j] = s;
    }
    const FactorPair fp(scale_columns(gaussian_matrix(rng, 4, r * k), f), gaussian_matrix(rng, 5, r * k), r);
    if (balance_report(fp, x).is_balanced) continue;
    const double theta_bar = 0.2 + 0.6 * rng.uniform();
    const FactorPair rb = rebalance_doubling(fp, x);
    const double before = objective_f(fp, x, y, theta_bar);
    const double after = objective_f(rb, x, y, theta_bar);
    if (after < before) ++decreased;
    worst_ratio = std::max(worst_ratio, after / before);
    const Matrix base = product(fp, x);
    worst_prod = std::max(worst_prod, max_abs(subtract(product(rb, x), base)) / max_abs(base));
  }
  return {decreased == trials && worst_prod <= 1e-10,
          std::to_string(decreased) + "/" + std::to_string(trials) + " strictly decreased (worst ratio " +
              num(worst_ratio) + "), product " + num(worst_prod) + " (limit 1e-10)"};
}

// Criterion 10: X = I, width min(a, N), dropout objective vs the nuclear-norm problem.
Verdict linear_core() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SeededRng rng(seed, 10);
    const double theta = 0.3 + 0.1 * static_cast<double>(seed);
    SyntheticDataset ds;
    ds.x = Matrix::identity(5);
    ds.y = gaussian_matrix(rng, 5, 5);
    ds.u_init = scale(gaussian_matrix(rng, 5, 5), 0.5);
    ds.v_init = scale(gaussian_matrix(rng, 5, 5), 0.5);
    TrainingConfig cfg;
    cfg.mode = TrainingMode::full_batch_deterministic;
    cfg.scheme = DropoutScheme::bernoulli(retain_for_width(theta, 1, 5));
    cfg.learning_rate = 0.05 / spectral_norm(ds.y);
    cfg.iterations = 100000;
    cfg.log_stride = 1000;
    const TrainingTrace trace = detail::train_with_halving(ds, cfg);
    const double target = global_minimizer(ds.y, 1, theta).minimizer.objective;
    worst = std::max(worst, rel_err(trace.records.back().deterministic_objective, target));
  }
  return {worst <= 1e-2, "5 instances, largest relative gap " + num(worst) + " (limit 1e-2)"};
}

// Criterion 11: per-neuron drop rate of corrected original DropBlock.
Verdict theta_correction_rate() {
  const std::size_t d = 16;
  const std::size_t samples = 1000000;
  double worst = 0.0;
  for (double theta : {0.2, 0.5, 0.8}) {
    for (std::size_t w : {3u, 5u}) {
      const auto scheme = DropoutScheme::dropblock_original(theta_correction(theta, w), w);
      SeededRng rng(static_cast<std::uint64_t>(theta * 10) * 10 + w, 11);
      std::vector<std::size_t> dropped(d, 0);
      for (std::size_t s = 0; s < samples; ++s) {
        const MaskSample m = sample_mask(scheme, d, rng);
        for (std::size_t k = 0; k < d; ++k) dropped[k] += m[k] ? 0 : 1;
      }
      for (std::size_t k = 0; k < d; ++k)
        worst = std::max(worst, std::abs(static_cast<double>(dropped[k]) / samples - (1.0 - theta)));
    }
  }
  return {worst <= 0.005, "6 settings, 1e6 masks each, largest per-neuron deviation " + num(worst) + " (limit 0.005)"};
}

// Criterion 12: sgd_step vs central finite differences.
Verdict gradient_fidelity() {
  SeededRng rng(1012);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t a = pick(rng, 1, 4), b = pick(rng, 1, 4), r = pick(rng, 1, 2);
    const std::size_t d = r * pick(rng, 1, 3);
    const double theta = 0.2 + 0.7 * rng.uniform();
    DropoutScheme scheme = DropoutScheme::bernoulli(theta);
    switch (t % 4) {
      case 1: scheme = DropoutScheme::dropblock(theta, r); break;
      case 2: scheme = DropoutScheme::dropconnect(theta); break;
      case 3:
        if (d >= 3) scheme = DropoutScheme::dropblock_original(theta, 3);
        break;
      default: break;
    }
    const Matrix u = gaussian_matrix(rng, a, d), v = gaussian_matrix(rng, b, d);
    const Matrix xt = gaussian_matrix(rng, b, 1), yt = gaussian_matrix(rng, a, 1);
    const MaskSample mask = sample_mask(scheme, d, rng, b);
    const double rescale = mask_rescale(scheme, d);
    const double eta = 1e-3;
    const auto [u1, v1] = sgd_step(u, v, xt, yt, mask, eta, rescale);
    const Matrix gu = oracle::finite_difference(u, [&](const Matrix& m) { return masked_loss(m, v, xt, yt, mask, rescale); }, 1e-5);
    const Matrix gv = oracle::finite_difference(v, [&](const Matrix& m) { return masked_loss(u, m, xt, yt, mask, rescale); }, 1e-5);
    // The step is eta/2 times the gradient of the masked loss.
    const Matrix su = scale(subtract(u, u1), 2.0 / eta), sv = scale(subtract(v, v1), 2.0 / eta);
    const double norm = std::sqrt(frobenius_sq(gu) + frobenius_sq(gv));
    const double err = std::sqrt(frobenius_sq(subtract(su, gu)) + frobenius_sq(subtract(sv, gv)));
    worst = std::max(worst, norm > 0.0 ? err / norm : err);
  }
  return {worst <= 1e-6, "50 (instance, mask) pairs, largest relative error " + num(worst) + " (limit 1e-6)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Criterion 13: two CLI runs with the same spec produce the same bytes.
Verdict cli_reproducibility(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI path given (--cli)"};
  const fs::path dir = fs::temp_directory_path() / "structdrop_acceptance";
  fs::create_directories(dir);
  const std::vector<std::string> specs = {
      "--experiment global_min_convergence --iters 5000 --seed 7",
      "--experiment det_equivalence --iters 200 --mc-samples 200 --seed 7",
      "--experiment dropblock_correction --iters 2000 --seed 7",
  };
  std::size_t identical = 0;
  std::string failure;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::string first;
    bool ok = true;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir / ("run" + std::to_string(i) + "_" + std::to_string(rep) + ".csv");
      const std::string cmd = "\"" + cli + "\" " + specs[i] + " --out \"" + out.string() + "\" > /dev/null";
      if (std::system(cmd.c_str()) != 0) {
        ok = false;
        failure = "command failed: " + specs[i];
        break;
      }
      const std::string text = slurp(out);
      if (rep == 0) first = text;
      else ok = !text.empty() && text == first;
    }
    if (ok) ++identical;
  }
  fs::remove_all(dir);
  return {identical == specs.size(), std::to_string(identical) + "/" + std::to_string(specs.size()) +
                                         " specs byte-identical across two runs" +
                                         (failure.empty() ? "" : "; " + failure)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--cli") cli = argv[i + 1];

  int failures = 0;
  auto report = [&](int id, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", id, v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, deterministic_equivalence);
  report(2, generalized_equivalence);
  report(3, dropconnect_equivalence);
  report(4, envelope_closed_form);
  report(5, closed_form_minimizer);
  std::optional<ConvergenceRun> run;
  report(6, [&] {
    run = convergence_run();
    return global_min_gap(*run);
  });
  report(7, [&] { return run ? balanced_optimum(*run) : Verdict{false, "criterion 6 run did not complete"}; });
  report(8, duplicate_halving_check);
  report(9, rebalance_check);
  report(10, linear_core);
  report(11, theta_correction_rate);
  report(12, gradient_fidelity);
  report(13, [&] { return cli_reproducibility(cli); });

  std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
