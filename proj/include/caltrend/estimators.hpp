#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caltrend/nuisance.hpp"
#include "caltrend/numeric.hpp"
#include "caltrend/panel.hpp"
#include "caltrend/parallel.hpp"

namespace caltrend {

/// Trial-specific effect estimates with their per-subject uncentered
/// influence contributions. Column m of if_contributions averages exactly to
/// chi[m]; ineligible subjects contribute zero to that column.
struct EffectCurve {
  Eigen::VectorXd chi;
  Eigen::MatrixXd if_contributions;  // n x M
  Eigen::VectorXd eligible_fraction;
  Eigen::VectorXd se;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> eligible;  // n x M mask
  std::vector<std::uint8_t> degenerate;  // trial has no eligible subjects
  std::vector<std::uint8_t> one_arm;     // trial has an empty treatment arm
  Warnings warnings;
  int n = 0;

  int n_trials() const { return static_cast<int>(chi.size()); }
};

/// Doubly robust AIPW estimate of each trial-specific effect from
/// cross-fitted nuisances. The eligible fraction divides both the g-formula
/// and residual terms, so the estimator is exactly the mean of the stored
/// contributions.
inline EffectCurve estimate_chi(const TrialPanel& panel, const NuisanceFit& fit) {
  const int n = panel.n_subjects();
  const int M = panel.n_trials();
  EffectCurve curve;
  curve.n = n;
  curve.if_contributions = Eigen::MatrixXd::Zero(n, M);
  curve.eligible = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, M);
  curve.eligible_fraction.resize(M);
  curve.degenerate.assign(static_cast<std::size_t>(M), 0);
  curve.one_arm.assign(static_cast<std::size_t>(M), 0);
  for (int m = 0; m < M; ++m) curve.eligible_fraction[m] = fit.eligible_frac[static_cast<std::size_t>(m)];

  std::vector<std::int64_t> treated(static_cast<std::size_t>(M), 0);
  std::vector<std::int64_t> control(static_cast<std::size_t>(M), 0);
  const PooledDataset& pooled = fit.pooled;
  for (std::int64_t r = 0; r < pooled.size(); ++r) {
    const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
    const int m = row.trial1 - 1;
    const double ef = curve.eligible_fraction[m];
    const int a = panel.treatment_at(row.rec);
    const double y = panel.outcome_at(row.rec);
    const double mu1 = fit.mu1_own[static_cast<std::size_t>(r)];
    const double mu0 = fit.mu0_own[static_cast<std::size_t>(r)];
    const double p = fit.pi[static_cast<std::size_t>(r)];
    const double ipw = a == 1 ? 1.0 / p : -1.0 / (1.0 - p);
    const double resid = y - (a == 1 ? mu1 : mu0);
    curve.if_contributions(row.subject, m) = (mu1 - mu0 + ipw * resid) / ef;
    curve.eligible(row.subject, m) = 1;
    ++(a == 1 ? treated : control)[static_cast<std::size_t>(m)];
  }

  curve.chi = curve.if_contributions.colwise().mean();
  curve.se.resize(M);
  for (int m = 0; m < M; ++m) {
    const std::int64_t nelig = treated[static_cast<std::size_t>(m)] + control[static_cast<std::size_t>(m)];
    if (nelig == 0) {
      curve.chi[m] = kNaN;
      curve.se[m] = kNaN;
      curve.degenerate[static_cast<std::size_t>(m)] = 1;
      curve.warnings.push_back("trial " + std::to_string(m + 1) + ": no eligible subjects; estimate is NA");
      continue;
    }
    if (treated[static_cast<std::size_t>(m)] == 0 || control[static_cast<std::size_t>(m)] == 0) {
      curve.one_arm[static_cast<std::size_t>(m)] = 1;
      curve.warnings.push_back("trial " + std::to_string(m + 1) +
                               ": one treatment arm empty; residual term limited to the observed arm");
    }
    const double var =
        (curve.if_contributions.col(m).array() - curve.chi[m]).square().sum() / static_cast<double>(n - 1);
    curve.se[m] = std::sqrt(var / static_cast<double>(n));
  }
  return curve;
}

/// Per-trial sampling variance of the effect estimate: empirical variance of
/// the centered influence column divided by n.
inline Eigen::VectorXd plugin_variance(const EffectCurve& curve) {
  const int M = curve.n_trials();
  Eigen::VectorXd out(M);
  for (int m = 0; m < M; ++m) {
    if (curve.degenerate[static_cast<std::size_t>(m)]) {
      out[m] = kNaN;
      continue;
    }
    out[m] = (curve.if_contributions.col(m).array() - curve.chi[m]).square().sum() /
             static_cast<double>(curve.n - 1) / static_cast<double>(curve.n);
  }
  return out;
}

/// n x M^2 influence-contribution factor for the standardization matrix,
/// column (j, m) at index j*M + m. Lives in memory when it fits the budget,
/// otherwise in a column-chunked scratch file that is read back in column
/// blocks (the bootstrap streams over it either way).
class IfFactor {
 public:
  IfFactor() = default;
  IfFactor(IfFactor&&) = default;
  IfFactor& operator=(IfFactor&&) = default;
  IfFactor(const IfFactor&) = delete;
  IfFactor& operator=(const IfFactor&) = delete;

  static IfFactor create(std::int64_t rows, std::int64_t cols, std::int64_t budget_bytes,
                         const std::filesystem::path& scratch_dir) {
    IfFactor f;
    f.rows_ = rows;
    f.cols_ = cols;
    if (rows * cols * static_cast<std::int64_t>(sizeof(double)) <= budget_bytes) {
      f.mem_ = Eigen::MatrixXd::Zero(rows, cols);
      return f;
    }
    std::filesystem::create_directories(scratch_dir);
    f.path_ = scratch_dir / ("caltrend_iffactor_" + std::to_string(std::uintptr_t(&f)) + "_" +
                             std::to_string(rows) + "x" + std::to_string(cols) + ".bin");
    f.file_.reset(std::fopen(f.path_.string().c_str(), "wb+"));
    if (!f.file_) throw Error("point_estimators", "if_factor", "cannot create scratch file " + f.path_.string());
    return f;
  }

  ~IfFactor() {
    if (file_) {
      file_.reset();
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

  bool on_disk() const { return static_cast<bool>(file_); }
  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }

  /// Append a block of consecutive columns starting at first_col. Disk mode
  /// requires in-order appends; memory mode accepts any order.
  void write_columns(std::int64_t first_col, const Eigen::MatrixXd& block) {
    if (!on_disk()) {
      mem_.middleCols(first_col, block.cols()) = block;
      return;
    }
    if (first_col != next_col_)
      throw Error("point_estimators", "if_factor", "disk-backed columns must be written in order");
    const std::size_t count = static_cast<std::size_t>(block.size());
    if (std::fwrite(block.data(), sizeof(double), count, file_.get()) != count)
      throw Error("point_estimators", "if_factor", "scratch write failed");
    next_col_ += block.cols();
  }

  Eigen::MatrixXd load_columns(std::int64_t first_col, std::int64_t count) const {
    if (!on_disk()) return mem_.middleCols(first_col, count);
    Eigen::MatrixXd block(rows_, count);
    std::fseek(file_.get(), static_cast<long>(first_col * rows_ * static_cast<std::int64_t>(sizeof(double))),
               SEEK_SET);
    const std::size_t want = static_cast<std::size_t>(block.size());
    if (std::fread(block.data(), sizeof(double), want, file_.get()) != want)
      throw Error("point_estimators", "if_factor", "scratch read failed");
    return block;
  }

 private:
  struct FileCloser {
    void operator()(std::FILE* f) const {
      if (f) std::fclose(f);
    }
  };

  std::int64_t rows_ = 0, cols_ = 0;
  Eigen::MatrixXd mem_;
  std::filesystem::path path_;
  std::unique_ptr<std::FILE, FileCloser> file_;
  std::int64_t next_col_ = 0;
};

/// All M^2 cross-trial effects plus their influence factor. Diagonal cells
/// follow the same computation path as the trial-specific curve.
struct StandardizationMatrix {
  Eigen::MatrixXd S;  // entry (j, m)
  IfFactor if_factor;
  std::vector<std::uint8_t> degenerate;  // per cell, row-major (j, m)
  int n = 0;
  int M = 0;
  Warnings warnings;

  bool cell_degenerate(int j1, int m1) const {
    return degenerate[static_cast<std::size_t>((j1 - 1) * M + (m1 - 1))] != 0;
  }
};

struct CrossTrialOptions {
  std::int64_t if_budget_bytes = std::int64_t(1) << 30;
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path();
  int threads = 0;
};

/// Cross-trial effect estimator: the g-formula summand standardized to trial
/// j's eligible population plus the density-ratio-transported residual
/// summand from trial m's. A subject eligible for both trials contributes to
/// both summands of the (j, m) cell.
inline StandardizationMatrix estimate_cross_trial(const TrialPanel& panel, const NuisanceFit& fit,
                                                  const CrossTrialOptions& options = {}) {
  if (!fit.cross_trial)
    throw Error("point_estimators", "cross_trial", "fit was produced without cross-trial predictions");
  const int n = panel.n_subjects();
  const int M = panel.n_trials();
  const PooledDataset& pooled = fit.pooled;

  StandardizationMatrix out;
  out.n = n;
  out.M = M;
  out.S.setConstant(M, M, kNaN);
  out.degenerate.assign(static_cast<std::size_t>(M) * static_cast<std::size_t>(M), 0);
  out.if_factor = IfFactor::create(n, static_cast<std::int64_t>(M) * M, options.if_budget_bytes,
                                   options.scratch_dir);

  // Residual term, shared across target trials j.
  std::vector<double> ipw_resid(static_cast<std::size_t>(pooled.size()));
  for (std::int64_t r = 0; r < pooled.size(); ++r) {
    const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
    const int a = panel.treatment_at(row.rec);
    const double p = fit.pi[static_cast<std::size_t>(r)];
    const double mu_own = a == 1 ? fit.mu1_own[static_cast<std::size_t>(r)] : fit.mu0_own[static_cast<std::size_t>(r)];
    const double ipw = a == 1 ? 1.0 / p : -1.0 / (1.0 - p);
    ipw_resid[static_cast<std::size_t>(r)] = ipw * (panel.outcome_at(row.rec) - mu_own);
  }

  std::vector<std::vector<std::int64_t>> rows_at_trial(static_cast<std::size_t>(M));
  for (std::int64_t r = 0; r < pooled.size(); ++r)
    rows_at_trial[static_cast<std::size_t>(pooled.rows[static_cast<std::size_t>(r)].trial1 - 1)].push_back(r);

  // One column slab per standardization trial j: columns (j, 1..M).
  auto build_slab = [&](int j0, Eigen::MatrixXd& slab) {
    slab.setZero(n, M);
    const double efj = fit.eligible_frac[static_cast<std::size_t>(j0)];
    if (efj > 0.0) {
      for (std::int64_t r : rows_at_trial[static_cast<std::size_t>(j0)]) {
        const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
        for (int m = 0; m < M; ++m)
          slab(row.subject, m) += (fit.mu1_cf(r, m) - fit.mu0_cf(r, m)) / efj;
      }
    }
    for (std::int64_t r = 0; r < pooled.size(); ++r) {
      const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
      const int m = row.trial1 - 1;
      const double efm = fit.eligible_frac[static_cast<std::size_t>(m)];
      slab(row.subject, m) +=
          density_ratio(fit, j0 + 1, m + 1, r) * ipw_resid[static_cast<std::size_t>(r)] / efm;
    }
  };

  if (out.if_factor.on_disk()) {
    Eigen::MatrixXd slab;
    for (int j = 0; j < M; ++j) {
      build_slab(j, slab);
      out.if_factor.write_columns(static_cast<std::int64_t>(j) * M, slab);
      out.S.row(j) = slab.colwise().mean();
    }
  } else {
    parallel_for(
        M,
        [&](std::int64_t j) {
          Eigen::MatrixXd slab;
          build_slab(static_cast<int>(j), slab);
          out.if_factor.write_columns(j * M, slab);
          out.S.row(j) = slab.colwise().mean();
        },
        options.threads);
  }

  for (int j = 0; j < M; ++j) {
    for (int m = 0; m < M; ++m) {
      const bool bad = fit.eligible_frac[static_cast<std::size_t>(j)] <= 0.0 ||
                       fit.eligible_frac[static_cast<std::size_t>(m)] <= 0.0;
      if (bad) {
        out.S(j, m) = kNaN;
        out.degenerate[static_cast<std::size_t>(j * M + m)] = 1;
      }
    }
    if (fit.eligible_frac[static_cast<std::size_t>(j)] <= 0.0)
      out.warnings.push_back("trial " + std::to_string(j + 1) + ": degenerate (no eligible subjects)");
  }
  return out;
}

/// Standard errors for each cross-trial cell, streamed from the influence
/// factor (centered column SD / sqrt(n)).
inline Eigen::MatrixXd cross_trial_se(const StandardizationMatrix& sm) {
  const int M = sm.M;
  Eigen::MatrixXd se(M, M);
  for (int j = 0; j < M; ++j) {
    const Eigen::MatrixXd slab = sm.if_factor.load_columns(static_cast<std::int64_t>(j) * M, M);
    for (int m = 0; m < M; ++m) {
      if (sm.cell_degenerate(j + 1, m + 1)) {
        se(j, m) = kNaN;
        continue;
      }
      const double var =
          (slab.col(m).array() - sm.S(j, m)).square().sum() / static_cast<double>(sm.n - 1);
      se(j, m) = std::sqrt(var / static_cast<double>(sm.n));
    }
  }
  return se;
}

}  // namespace caltrend
