#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "caltrend/estimators.hpp"
#include "caltrend/numeric.hpp"
#include "caltrend/parallel.hpp"
#include "caltrend/rng.hpp"

namespace caltrend {

/// Row/column variance decomposition of the standardization matrix.
/// sigma2[m] is the variance along row m (fixed population, varying
/// treatment time), gamma2[m] along column m (fixed treatment time, varying
/// population), both around the diagonal entry. theta_m = sigma2/(sigma2 +
/// gamma2) and theta is their plain mean.
struct ThetaSummary {
  Eigen::VectorXd sigma2;
  Eigen::VectorXd gamma2;
  Eigen::VectorXd theta_m;
  double theta = kNaN;
  std::vector<std::uint8_t> correction_applied;  // per m
  double d = 0.005;
  double switch_margin = 0.1;
  bool no_variation = false;
  Warnings warnings;
};

struct DecomposeOptions {
  double d = 0.005;           // thresholding cutoff on deviations
  double switch_margin = 0.1; // adopt thresholded theta_m only beyond this gap
  bool correction = true;
};

namespace detail {

/// Variance of deviations around the diagonal along one line of S (a row or
/// a column), skipping non-finite cells; denominator is usable-count - 1.
/// thresholded applies t(x, d) = 1(|x| > d)|x| to each deviation.
inline double line_variance(const Eigen::MatrixXd& S, int fixed, bool row, double threshold, int* usable_out) {
  const int M = static_cast<int>(S.rows());
  const double center = S(fixed, fixed);
  if (!std::isfinite(center)) {
    if (usable_out) *usable_out = 0;
    return kNaN;
  }
  double sum = 0.0;
  int usable = 0;
  for (int i = 0; i < M; ++i) {
    const double cell = row ? S(fixed, i) : S(i, fixed);
    if (!std::isfinite(cell)) continue;
    ++usable;
    double dev = center - cell;
    if (threshold > 0.0 && std::abs(dev) <= threshold) dev = 0.0;
    sum += dev * dev;
  }
  if (usable_out) *usable_out = usable;
  if (usable < 2) return kNaN;
  return sum / static_cast<double>(usable - 1);
}

}  // namespace detail

/// theta decomposition of an M x M standardization matrix whose diagonal
/// holds the trial-specific effects. The thresholded variant replaces
/// theta_m only when zeroing sub-threshold deviations moves the ratio by
/// more than switch_margin, which can happen only when essentially all the
/// variation is noise-scale.
inline ThetaSummary decompose_matrix(const Eigen::MatrixXd& S, const DecomposeOptions& options = {}) {
  const int M = static_cast<int>(S.rows());
  if (M < 2 || S.cols() != M) throw Error("variance_decomposition", "decompose", "S must be M x M with M >= 2");

  ThetaSummary out;
  out.d = options.d;
  out.switch_margin = options.switch_margin;
  out.sigma2.setConstant(M, kNaN);
  out.gamma2.setConstant(M, kNaN);
  out.theta_m.setConstant(M, kNaN);
  out.correction_applied.assign(static_cast<std::size_t>(M), 0);

  double total = 0.0;
  int counted = 0;
  bool any_variation = false;
  for (int m = 0; m < M; ++m) {
    int usable_row = 0, usable_col = 0;
    const double sigma2 = detail::line_variance(S, m, true, 0.0, &usable_row);
    const double gamma2 = detail::line_variance(S, m, false, 0.0, &usable_col);
    out.sigma2[m] = sigma2;
    out.gamma2[m] = gamma2;
    if (usable_row < 2 || usable_col < 2) {
      out.warnings.push_back("trial " + std::to_string(m + 1) +
                             ": fewer than 2 usable cells in a row/column; theta_m is NA");
      continue;
    }
    const double denom = sigma2 + gamma2;
    if (!(denom > 0.0)) continue;  // no variation at this trial
    any_variation = true;
    double theta_m = sigma2 / denom;
    if (options.correction) {
      const double sigma2t = detail::line_variance(S, m, true, options.d, nullptr);
      const double gamma2t = detail::line_variance(S, m, false, options.d, nullptr);
      const double denomt = sigma2t + gamma2t;
      const double theta_t = denomt > 0.0 ? sigma2t / denomt : 0.0;
      if (std::abs(theta_m - theta_t) > options.switch_margin) {
        theta_m = theta_t;
        out.correction_applied[static_cast<std::size_t>(m)] = 1;
      }
    }
    out.theta_m[m] = theta_m;
    total += theta_m;
    ++counted;
  }
  if (counted > 0) {
    out.theta = total / static_cast<double>(counted);
  } else {
    out.no_variation = !any_variation;
    if (out.no_variation) out.warnings.push_back("no variation in cross-trial effects; theta is NA");
  }
  return out;
}

inline ThetaSummary decompose(const StandardizationMatrix& sm, const DecomposeOptions& options = {}) {
  return decompose_matrix(sm.S, options);
}

struct BootstrapOptions {
  int B = 2000;
  DecomposeOptions decompose;
  int threads = 0;
  int batch = 128;  // replicates per GEMM block
};

/// Asymptotic parametric bootstrap of theta. Replicates are drawn with the
/// law S_b = S_hat + (1/n) Phi' z_b, where Phi is the centered n x M^2
/// influence-contribution factor and z_b is standard normal, so
/// Var[S_b - S_hat] equals the empirical influence covariance over n without
/// ever forming the M^2 x M^2 matrix. Streams over column chunks, so
/// disk-backed factors work unchanged; z values are counter-generated and
/// never stored.
inline std::vector<double> bootstrap_theta(const StandardizationMatrix& sm, int B, std::uint64_t seed,
                                           const BootstrapOptions& options = {}) {
  if (B < 1) throw Error("variance_decomposition", "bootstrap", "B must be positive");
  const int M = sm.M;
  const std::int64_t n = sm.n;
  const std::int64_t cols = static_cast<std::int64_t>(M) * M;
  if (sm.if_factor.rows() != n || sm.if_factor.cols() != cols)
    throw Error("variance_decomposition", "bootstrap", "standardization matrix has no influence factor");

  std::vector<double> reps(static_cast<std::size_t>(B), kNaN);
  const int batch = std::max(1, options.batch);
  const std::uint64_t z_seed = mix_seed(seed, streams::kBootstrap);

  // perturbations(b, c): accumulated (1/n) Phi_c . z_b
  Eigen::MatrixXd perturbations = Eigen::MatrixXd::Zero(B, cols);
  const std::int64_t col_chunk = sm.if_factor.on_disk() ? std::max<std::int64_t>(M, 1) : cols;
  for (std::int64_t c0 = 0; c0 < cols; c0 += col_chunk) {
    const std::int64_t nc = std::min(col_chunk, cols - c0);
    Eigen::MatrixXd block = sm.if_factor.load_columns(c0, nc);
    // Center columns; column means are exactly the S entries.
    for (std::int64_t c = 0; c < nc; ++c) {
      const double mean_c = block.col(c).mean();
      if (std::isfinite(mean_c)) block.col(c).array() -= mean_c;
    }
    parallel_for(
        (B + batch - 1) / batch,
        [&](std::int64_t blk) {
          const int b0 = static_cast<int>(blk) * batch;
          const int nb = std::min(batch, B - b0);
          Eigen::MatrixXd z(n, nb);
          for (int b = 0; b < nb; ++b)
            for (std::int64_t i = 0; i < n; ++i)
              z(i, b) = counter_normal(z_seed, static_cast<std::uint64_t>(b0 + b), static_cast<std::uint64_t>(i));
          perturbations.block(b0, c0, nb, nc).noalias() += (z.transpose() * block) / static_cast<double>(n);
        },
        options.threads);
  }

  parallel_for(
      B,
      [&](std::int64_t b) {
        Eigen::MatrixXd Sb(M, M);
        for (int j = 0; j < M; ++j)
          for (int m = 0; m < M; ++m)
            Sb(j, m) = sm.S(j, m) + perturbations(b, static_cast<std::int64_t>(j) * M + m);
        reps[static_cast<std::size_t>(b)] = decompose_matrix(Sb, options.decompose).theta;
      },
      options.threads);
  return reps;
}

/// delta-margin boundary test on bootstrap replicates of theta.
struct BootstrapTest {
  int B = 0;
  double delta = 0.05;
  double ci_lo = kNaN;
  double ci_hi = kNaN;
  bool reject = false;  // CI strictly inside (delta, 1 - delta)
  double theta_hat = kNaN;
  int dropped_na = 0;
  std::uint64_t seed = 0;
};

/// Percentile confidence interval (2.5/97.5, linear-interpolation quantiles)
/// with rejection iff the interval sits strictly inside (delta, 1 - delta).
inline BootstrapTest test_boundary(const std::vector<double>& theta_reps, double delta) {
  if (!(delta > 0.0 && delta < 0.5))
    throw Error("variance_decomposition", "test_boundary", "delta must be in (0, 0.5)");
  std::vector<double> clean;
  clean.reserve(theta_reps.size());
  for (double v : theta_reps)
    if (std::isfinite(v)) clean.push_back(v);
  if (clean.empty()) throw Error("variance_decomposition", "test_boundary", "no usable replicates");
  BootstrapTest test;
  test.B = static_cast<int>(theta_reps.size());
  test.dropped_na = static_cast<int>(theta_reps.size() - clean.size());
  test.delta = delta;
  test.ci_lo = quantile(clean, 0.025);
  test.ci_hi = quantile(clean, 0.975);
  test.reject = test.ci_lo > delta && test.ci_hi < 1.0 - delta;
  return test;
}

}  // namespace caltrend
