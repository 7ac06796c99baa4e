#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "caltrend/estimators.hpp"
#include "caltrend/rng.hpp"
#include "test_util.hpp"

using namespace caltrend;

namespace {

CovariateSchema two_binary_schema() {
  return CovariateSchema({{"z1", CovariateKind::binary, {}}, {"z2", CovariateKind::binary, {}}});
}

struct DiscreteDgp {
  // Cell-indexed true nuisances: cell = z1 + 2*z2, per trial.
  double pi(int m1, int cell) const { return 0.3 + 0.1 * ((cell + m1) % 4); }
  double mu(int m1, int cell, int arm) const {
    return 0.2 * cell - 0.1 * m1 + arm * (0.5 + 0.15 * cell + 0.05 * m1);
  }
};

TrialPanel discrete_panel(int n, int M, std::uint64_t seed, const DiscreteDgp& dgp) {
  TrialPanel panel(two_binary_schema(), M);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    panel.add_subject("s" + std::to_string(i));
    for (int m = 1; m <= M; ++m) {
      const double z1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
      const double z2 = rng.bernoulli(0.4) ? 1.0 : 0.0;
      const int cell = static_cast<int>(z1) + 2 * static_cast<int>(z2);
      const int a = rng.bernoulli(dgp.pi(m, cell)) ? 1 : 0;
      const double y = dgp.mu(m, cell, a) + 0.3 * rng.normal();
      panel.set_record(i, m, {z1, z2}, a, y);
    }
  }
  return panel;
}

NuisanceOverrides cell_overrides(const DiscreteDgp& dgp) {
  NuisanceOverrides overrides;
  overrides.mu = [dgp](const TrialPanel& panel, int subject, int record_trial, int target_trial, int arm) {
    const double* raw = panel.covariates_at(panel.record(subject, record_trial));
    const int cell = static_cast<int>(raw[0]) + 2 * static_cast<int>(raw[1]);
    return dgp.mu(target_trial, cell, arm);
  };
  overrides.pi = [dgp](const TrialPanel& panel, int subject, int trial) {
    const double* raw = panel.covariates_at(panel.record(subject, trial));
    const int cell = static_cast<int>(raw[0]) + 2 * static_cast<int>(raw[1]);
    return dgp.pi(trial, cell);
  };
  return overrides;
}

LearnerSet fast_specs() {
  LearnerSet specs;
  specs.outcome.family = LearnerSpec::Family::linear;
  specs.propensity.family = LearnerSpec::Family::logistic;
  specs.membership.family = LearnerSpec::Family::logistic;
  return specs;
}

// Brute-force AIPW oracle: plain loops over the raw panel recomputing each
// trial effect from the same cell-indexed nuisances, no shared code with
// the estimator.
std::vector<double> aipw_oracle(const TrialPanel& panel, const DiscreteDgp& dgp) {
  const int n = panel.n_subjects();
  std::vector<double> chi(static_cast<std::size_t>(panel.n_trials()), 0.0);
  for (int m = 1; m <= panel.n_trials(); ++m) {
    long eligible = 0;
    for (int i = 0; i < n; ++i)
      if (panel.eligible(i, m)) ++eligible;
    const double ef = static_cast<double>(eligible) / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!panel.eligible(i, m)) continue;
      const auto rec = panel.record(i, m);
      const double* raw = panel.covariates_at(rec);
      const int cell = static_cast<int>(raw[0]) + 2 * static_cast<int>(raw[1]);
      const double mu1 = dgp.mu(m, cell, 1);
      const double mu0 = dgp.mu(m, cell, 0);
      const double p = dgp.pi(m, cell);
      const int a = panel.treatment_at(rec);
      const double y = panel.outcome_at(rec);
      const double ipw_term = a == 1 ? (y - mu1) / p : -(y - mu0) / (1.0 - p);
      total += (mu1 - mu0 + ipw_term) / ef;
    }
    chi[static_cast<std::size_t>(m - 1)] = total / n;
  }
  return chi;
}

TEST(EstimateChi, MatchesHandEnumeratedAipw) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(500, 3, 2024, dgp);
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides = cell_overrides(dgp);
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 9, options);

  // Truncation must be a no-op here, otherwise the comparison is invalid.
  for (std::int64_t r = 0; r < fit.pooled.size(); ++r) {
    const PooledRow& row = fit.pooled.rows[static_cast<std::size_t>(r)];
    const double* raw = panel.covariates_at(row.rec);
    const int cell = static_cast<int>(raw[0]) + 2 * static_cast<int>(raw[1]);
    ASSERT_DOUBLE_EQ(fit.pi[static_cast<std::size_t>(r)], dgp.pi(row.trial1, cell));
  }

  const auto curve = estimate_chi(panel, fit);
  const auto oracle = aipw_oracle(panel, dgp);
  for (int m = 0; m < 3; ++m) EXPECT_NEAR(curve.chi[m], oracle[static_cast<std::size_t>(m)], 1e-12);
}

TEST(EstimateChi, ZeroResidualIdentity) {
  // mu(a, L) = a, pi = 0.5, Y = A exactly: residuals vanish and chi = 1.
  TrialPanel panel(two_binary_schema(), 2);
  Rng rng(7);
  for (int i = 0; i < 40; ++i) {
    panel.add_subject("s" + std::to_string(i));
    for (int m = 1; m <= 2; ++m) {
      const int a = rng.bernoulli(0.5) ? 1 : 0;
      panel.set_record(i, m, {rng.bernoulli(0.5) ? 1.0 : 0.0, 0.0}, a, static_cast<double>(a));
    }
  }
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides.mu = [](const TrialPanel&, int, int, int, int arm) { return static_cast<double>(arm); };
  options.overrides.pi = [](const TrialPanel&, int, int) { return 0.5; };
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 8, options);
  const auto curve = estimate_chi(panel, fit);
  EXPECT_DOUBLE_EQ(curve.chi[0], 1.0);
  EXPECT_DOUBLE_EQ(curve.chi[1], 1.0);
}

TEST(EstimateChi, CenteredContributionsHaveZeroMean) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(400, 3, 11, dgp);
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 10, {false, {}, 0});
  const auto curve = estimate_chi(panel, fit);
  for (int m = 0; m < 3; ++m) {
    const double centered_mean = (curve.if_contributions.col(m).array() - curve.chi[m]).mean();
    EXPECT_NEAR(centered_mean, 0.0, 1e-12);
  }
}

TEST(EstimateChi, DegenerateAndOneArmTrials) {
  TrialPanel panel(two_binary_schema(), 3);
  Rng rng(12);
  for (int i = 0; i < 30; ++i) {
    panel.add_subject("s" + std::to_string(i));
    panel.set_record(i, 1, {1.0, 0.0}, rng.bernoulli(0.5) ? 1 : 0, rng.normal());
    // trial 2: nobody eligible; trial 3: everyone treated.
    panel.set_record(i, 3, {0.0, 1.0}, 1, rng.normal());
  }
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides.mu = [](const TrialPanel&, int, int, int, int arm) { return 0.1 * arm; };
  options.overrides.pi = [](const TrialPanel&, int, int) { return 0.5; };
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 11, options);
  const auto curve = estimate_chi(panel, fit);
  EXPECT_TRUE(std::isnan(curve.chi[1]));
  EXPECT_EQ(curve.degenerate[1], 1);
  EXPECT_TRUE(std::isfinite(curve.chi[2]));
  EXPECT_EQ(curve.one_arm[2], 1);
  EXPECT_FALSE(curve.warnings.empty());
}

TEST(EstimateChi, PermutationInvariance) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(120, 2, 13, dgp);
  // Same records, subjects added in reversed order with fresh labels.
  TrialPanel reversed(two_binary_schema(), 2);
  for (int i = panel.n_subjects() - 1; i >= 0; --i) {
    const int si = reversed.add_subject("relabeled" + std::to_string(i));
    for (int m = 1; m <= 2; ++m) {
      if (!panel.eligible(i, m)) continue;
      const auto rec = panel.record(i, m);
      reversed.set_record(si, m, {panel.covariates_at(rec)[0], panel.covariates_at(rec)[1]},
                          panel.treatment_at(rec), panel.outcome_at(rec));
    }
  }
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides = cell_overrides(dgp);
  const auto curve_a = estimate_chi(panel, predict_crossfit(panel, fast_specs(), {}, 14, options));
  const auto curve_b = estimate_chi(reversed, predict_crossfit(reversed, fast_specs(), {}, 14, options));
  for (int m = 0; m < 2; ++m) EXPECT_NEAR(curve_a.chi[m], curve_b.chi[m], 1e-12);
}

TEST(PluginVariance, ConstantColumnGivesZero) {
  const DiscreteDgp dgp;
  auto panel = discrete_panel(50, 2, 15, dgp);
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides.mu = [](const TrialPanel&, int, int, int, int arm) { return 2.0 * arm; };
  options.overrides.pi = [](const TrialPanel&, int, int) { return 0.5; };
  // Outcome exactly mu(A): residuals zero, all contributions equal 2.
  TrialPanel exact(two_binary_schema(), 2);
  for (int i = 0; i < 50; ++i) {
    exact.add_subject("s" + std::to_string(i));
    for (int m = 1; m <= 2; ++m) {
      const auto rec = panel.record(i, m);
      exact.set_record(i, m, {panel.covariates_at(rec)[0], panel.covariates_at(rec)[1]},
                       panel.treatment_at(rec), 2.0 * panel.treatment_at(rec));
    }
  }
  const auto fit = predict_crossfit(exact, fast_specs(), {}, 16, options);
  const auto curve = estimate_chi(exact, fit);
  const auto variance = plugin_variance(curve);
  EXPECT_DOUBLE_EQ(variance[0], 0.0);
  EXPECT_DOUBLE_EQ(variance[1], 0.0);
}

// Monte Carlo scaling oracle: doubling n roughly halves the variance.
TEST(PluginVariance, ScalesInverselyWithN) {
  const DiscreteDgp dgp;
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides = cell_overrides(dgp);
  double mean_small = 0.0, mean_large = 0.0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    const auto panel_small = discrete_panel(300, 1, 1000 + rep, dgp);
    const auto panel_large = discrete_panel(600, 1, 5000 + rep, dgp);
    mean_small += plugin_variance(estimate_chi(
        panel_small, predict_crossfit(panel_small, fast_specs(), {}, 1, options)))[0];
    mean_large += plugin_variance(estimate_chi(
        panel_large, predict_crossfit(panel_large, fast_specs(), {}, 1, options)))[0];
  }
  const double ratio = mean_small / mean_large;
  EXPECT_GT(ratio, 1.7);
  EXPECT_LT(ratio, 2.3);
}

// Nonparametric-bootstrap oracle on a fixed instance: resampling subjects
// and re-averaging the influence contributions reproduces the plug-in
// variance within 15%.
TEST(PluginVariance, MatchesSubjectBootstrap) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(2000, 4, 77, dgp);
  CrossfitOptions options;
  options.cross_trial = false;
  options.overrides = cell_overrides(dgp);
  const auto curve = estimate_chi(panel, predict_crossfit(panel, fast_specs(), {}, 2, options));
  const auto variance = plugin_variance(curve);

  const int B = 500;
  const int n = curve.n;
  Rng rng(555);
  for (int m = 0; m < 4; ++m) {
    std::vector<double> boot_means;
    boot_means.reserve(B);
    for (int b = 0; b < B; ++b) {
      double total = 0.0;
      for (int i = 0; i < n; ++i)
        total += curve.if_contributions(static_cast<int>(rng.uniform_int(n)), m);
      boot_means.push_back(total / n);
    }
    const double boot_var = sample_variance(boot_means);
    EXPECT_NEAR(boot_var, variance[m], 0.15 * variance[m]);
  }
}

TEST(CrossTrial, DiagonalMatchesEffectCurve) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(500, 3, 21, dgp);
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 3);
  const auto curve = estimate_chi(panel, fit);
  const auto sm = estimate_cross_trial(panel, fit);
  for (int m = 0; m < 3; ++m) EXPECT_NEAR(sm.S(m, m), curve.chi[m], 1e-10);
}

TEST(CrossTrial, IfFactorColumnMeansReproduceEntries) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(300, 3, 22, dgp);
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 4);
  const auto sm = estimate_cross_trial(panel, fit);
  for (int j = 0; j < 3; ++j) {
    const Eigen::MatrixXd slab = sm.if_factor.load_columns(3 * j, 3);
    for (int m = 0; m < 3; ++m) EXPECT_DOUBLE_EQ(slab.col(m).mean(), sm.S(j, m));
  }
  // Centered columns of the factor have mean zero (estimating-equation
  // contract for the cross-trial cells).
  for (int j = 0; j < 3; ++j) {
    const Eigen::MatrixXd slab = sm.if_factor.load_columns(3 * j, 3);
    for (int m = 0; m < 3; ++m)
      EXPECT_NEAR((slab.col(m).array() - sm.S(j, m)).mean(), 0.0, 1e-12);
  }
}

TEST(CrossTrial, DiskBackedFactorMatchesInMemory) {
  const DiscreteDgp dgp;
  const auto panel = discrete_panel(200, 3, 23, dgp);
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 5);
  const auto sm_mem = estimate_cross_trial(panel, fit);
  testutil::TempDir dir("iffactor");
  CrossTrialOptions options;
  options.if_budget_bytes = 0;  // forces the scratch-file path
  options.scratch_dir = dir.path();
  const auto sm_disk = estimate_cross_trial(panel, fit, options);
  ASSERT_TRUE(sm_disk.if_factor.on_disk());
  ASSERT_FALSE(sm_mem.if_factor.on_disk());
  for (int j = 0; j < 3; ++j)
    for (int m = 0; m < 3; ++m) EXPECT_DOUBLE_EQ(sm_disk.S(j, m), sm_mem.S(j, m));
  const Eigen::MatrixXd all_mem = sm_mem.if_factor.load_columns(0, 9);
  const Eigen::MatrixXd all_disk = sm_disk.if_factor.load_columns(0, 9);
  EXPECT_EQ((all_mem - all_disk).cwiseAbs().maxCoeff(), 0.0);
}

// Exchangeable trials with a constant effect: every cross-trial cell
// estimates the same number, so the spread of entries stays within Monte
// Carlo error.
TEST(CrossTrial, ExchangeableTrialSymmetry) {
  TrialPanel panel(two_binary_schema(), 3);
  Rng rng(24);
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    panel.add_subject("s" + std::to_string(i));
    for (int m = 1; m <= 3; ++m) {
      const double z1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
      const double z2 = rng.bernoulli(0.5) ? 1.0 : 0.0;
      const int a = rng.bernoulli(0.4 + 0.2 * z1) ? 1 : 0;
      panel.set_record(i, m, {z1, z2}, a, 0.3 * z1 - 0.2 * z2 + 0.8 * a + 0.4 * rng.normal());
    }
  }
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 6);
  const auto sm = estimate_cross_trial(panel, fit);
  const auto se = cross_trial_se(sm);
  std::vector<double> entries, ses;
  for (int j = 0; j < 3; ++j)
    for (int m = 0; m < 3; ++m) {
      entries.push_back(sm.S(j, m));
      ses.push_back(se(j, m));
    }
  const double spread = std::sqrt(sample_variance(entries));
  const double med_se = quantile(ses, 0.5);
  EXPECT_LT(spread, 2.0 * med_se);
}

// Transport coherence: the density ratio averages to one over the source
// population.
TEST(CrossTrial, TransportCoherence) {
  TrialPanel panel(two_binary_schema(), 2);
  Rng rng(25);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    panel.add_subject("s" + std::to_string(i));
    for (int m = 1; m <= 2; ++m) {
      const double rate = m == 1 ? 0.6 : 0.35;
      const double z1 = rng.bernoulli(rate) ? 1.0 : 0.0;
      const double z2 = rng.bernoulli(0.5) ? 1.0 : 0.0;
      const int a = rng.bernoulli(0.5) ? 1 : 0;
      panel.set_record(i, m, {z1, z2}, a, rng.normal());
    }
  }
  const auto fit = predict_crossfit(panel, fast_specs(), {}, 7);
  double total = 0.0;
  long count = 0;
  for (std::int64_t r = 0; r < fit.pooled.size(); ++r) {
    if (fit.pooled.rows[static_cast<std::size_t>(r)].trial1 != 2) continue;
    total += density_ratio(fit, 1, 2, r);
    ++count;
  }
  EXPECT_NEAR(total / count, 1.0, 0.05);
}

}  // namespace
