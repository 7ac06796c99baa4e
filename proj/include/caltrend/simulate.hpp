#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caltrend/numeric.hpp"
#include "caltrend/panel.hpp"
#include "caltrend/rng.hpp"
#include "caltrend/spline.hpp"
#include "caltrend/theta.hpp"

namespace caltrend {

enum class ShiftRule { none, linear, flexible };
enum class OutcomeModel { constant, linear, spline, effect_mod, linear_effect_mod, spline_effect_mod };

inline std::string to_string(ShiftRule rule) {
  switch (rule) {
    case ShiftRule::none: return "none";
    case ShiftRule::linear: return "linear";
    case ShiftRule::flexible: return "flexible";
  }
  return "?";
}

inline std::string to_string(OutcomeModel model) {
  switch (model) {
    case OutcomeModel::constant: return "constant";
    case OutcomeModel::linear: return "linear";
    case OutcomeModel::spline: return "spline";
    case OutcomeModel::effect_mod: return "effect_mod";
    case OutcomeModel::linear_effect_mod: return "linear_effect_mod";
    case OutcomeModel::spline_effect_mod: return "spline_effect_mod";
  }
  return "?";
}

inline ShiftRule shift_rule_from_string(const std::string& s) {
  if (s == "none") return ShiftRule::none;
  if (s == "linear") return ShiftRule::linear;
  if (s == "flexible") return ShiftRule::flexible;
  throw Error("simulation_engine", "spec", "unknown shift rule '" + s + "'");
}

inline OutcomeModel outcome_model_from_string(const std::string& s) {
  if (s == "constant") return OutcomeModel::constant;
  if (s == "linear") return OutcomeModel::linear;
  if (s == "spline") return OutcomeModel::spline;
  if (s == "effect_mod") return OutcomeModel::effect_mod;
  if (s == "linear_effect_mod") return OutcomeModel::linear_effect_mod;
  if (s == "spline_effect_mod") return OutcomeModel::spline_effect_mod;
  throw Error("simulation_engine", "spec", "unknown outcome model '" + s + "'");
}

/// Schema of the synthetic cohort. Encoded order matches the coefficient
/// table layout: bmi, gender, race[other], site[NC], site[SC], age, t2dm,
/// insulin, hypertension, hypertension_rx, dyslipidemia, antilipemic_rx,
/// smoking[former], smoking[never].
inline CovariateSchema simulation_schema() {
  return CovariateSchema({
      {"baseline_bmi", CovariateKind::numeric, {}},
      {"gender", CovariateKind::binary, {}},
      {"race", CovariateKind::categorical, {"white", "other"}},
      {"site", CovariateKind::categorical, {"WA", "NC", "SC"}},
      {"baseline_age", CovariateKind::numeric, {}},
      {"t2dm", CovariateKind::binary, {}},
      {"insulin", CovariateKind::binary, {}},
      {"hypertension", CovariateKind::binary, {}},
      {"hypertension_rx", CovariateKind::binary, {}},
      {"dyslipidemia", CovariateKind::binary, {}},
      {"antilipemic_rx", CovariateKind::binary, {}},
      {"smoking_status", CovariateKind::categorical, {"current", "former", "never"}},
  });
}

namespace sim_idx {
inline constexpr int bmi = 0;
inline constexpr int gender = 1;
inline constexpr int race = 2;
inline constexpr int site = 3;
inline constexpr int age = 4;
inline constexpr int t2dm = 5;
inline constexpr int insulin = 6;
inline constexpr int hypertension = 7;
inline constexpr int hypertension_rx = 8;
inline constexpr int dyslipidemia = 9;
inline constexpr int antilipemic_rx = 10;
inline constexpr int smoking = 11;
inline constexpr int n_raw = 12;
}  // namespace sim_idx

/// Coefficient table for the synthetic data-generating process. Defaults
/// reproduce the reference configuration; everything is overridable.
struct ScenarioCoefs {
  Eigen::VectorXd pi;       // intercept + encoded covariates (logit scale)
  Eigen::VectorXd mu_main;  // intercept + encoded covariates
  double treat_main = -0.21;
  double treat_trend = 1e-3;                       // A x m
  Eigen::Vector3d treat_spline{1e-2, 6e-2, 1e-2};  // A x spline(m)
  double em_age = 2e-3;                            // A x covariate interactions
  double em_t2dm = 1e-1;
  double em_bmi = -2.5e-2;

  static ScenarioCoefs defaults(OutcomeModel model) {
    ScenarioCoefs c;
    c.pi.resize(15);
    c.pi << -2.49, 6.7e-2, -1.01, 0.41, -0.39, 0.35, -4.9e-2, -3.4e-2, -2e-2, 0.70, -0.34, 0.42, -0.21, 2.16,
        1.66;
    c.mu_main.resize(15);
    c.mu_main << 9.8e-2, -1.9e-3, 4.7e-3, -3.1e-3, -2.4e-3, -7.9e-3, -6.1e-4, -1.2e-2, 1.3e-2, 1.3e-3, -8e-5,
        -8.8e-4, 3.6e-4, -2.6e-3, 4.6e-4;
    const bool has_em = model == OutcomeModel::effect_mod || model == OutcomeModel::linear_effect_mod ||
                        model == OutcomeModel::spline_effect_mod;
    c.treat_main = has_em ? 0.67 : -0.21;
    return c;
  }
};

struct ScenarioSpec {
  ShiftRule shift = ShiftRule::none;
  OutcomeModel outcome = OutcomeModel::constant;
  int M = 36;
  std::int64_t n = 1000;
  double sigma_y = 0.05;
  ScenarioCoefs coefs = ScenarioCoefs::defaults(OutcomeModel::constant);
  std::uint64_t seed = 1;

  static ScenarioSpec make(ShiftRule shift, OutcomeModel outcome, int M, std::int64_t n, std::uint64_t seed) {
    ScenarioSpec spec;
    spec.shift = shift;
    spec.outcome = outcome;
    spec.M = M;
    spec.n = n;
    spec.seed = seed;
    spec.coefs = ScenarioCoefs::defaults(outcome);
    return spec;
  }

  std::string label() const { return "shift-" + caltrend::to_string(shift) + "_outcome-" + caltrend::to_string(outcome); }

  bool has_trend() const { return outcome == OutcomeModel::linear || outcome == OutcomeModel::linear_effect_mod; }
  bool has_spline() const { return outcome == OutcomeModel::spline || outcome == OutcomeModel::spline_effect_mod; }
  bool has_effect_mod() const {
    return outcome == OutcomeModel::effect_mod || outcome == OutcomeModel::linear_effect_mod ||
           outcome == OutcomeModel::spline_effect_mod;
  }
};

namespace detail {

/// Trial-m diabetes prevalence target under a shift rule (m >= 2; trial 1
/// keeps the sampled baseline value).
inline double diabetes_prevalence(const ScenarioSpec& spec, const Eigen::MatrixXd& spline_design, int m1) {
  switch (spec.shift) {
    case ShiftRule::none: return kNaN;
    case ShiftRule::linear: return 0.2 + 0.4 * static_cast<double>(m1 - 1) / 35.0;
    case ShiftRule::flexible:
      return 0.2 + spline_design.row(m1 - 1).dot(Eigen::Vector3d(0.02, 0.6, -0.08));
  }
  return kNaN;
}

inline double bmi_shift_mean(const ScenarioSpec& spec, const Eigen::MatrixXd& spline_design, int m1) {
  switch (spec.shift) {
    case ShiftRule::none: return 0.0;
    case ShiftRule::linear: return static_cast<double>(m1 - 1) / 12.0;
    case ShiftRule::flexible: return spline_design.row(m1 - 1).dot(Eigen::Vector3d(1.0, -3.0, 1.0));
  }
  return 0.0;
}

}  // namespace detail

inline void validate(const ScenarioSpec& spec) {
  if (spec.M < 2) throw Error("simulation_engine", "spec", "M must be >= 2");
  if (spec.n < 1) throw Error("simulation_engine", "spec", "n must be positive");
  if (!(spec.sigma_y >= 0.0)) throw Error("simulation_engine", "spec", "sigma_y must be nonnegative");
  if (spec.shift != ShiftRule::none) {
    const Eigen::MatrixXd design = trial_spline_design(spec.M, 2);
    for (int m = 2; m <= spec.M; ++m) {
      const double p = detail::diabetes_prevalence(spec, design, m);
      if (!(p >= 0.0 && p <= 1.0))
        throw Error("simulation_engine", "spec",
                    "diabetes prevalence path leaves [0,1] at trial " + std::to_string(m));
    }
  }
}

/// Baseline covariate pool: either synthetic (below) or user-supplied rows
/// in the simulation schema.
struct CovariatePool {
  CovariateSchema schema;
  std::vector<double> raw;  // row-major, schema.size() per row
  std::int64_t size = 0;

  const double* row(std::int64_t i) const {
    return raw.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(schema.size());
  }
};

/// Synthetic stand-in for an empirical baseline pool: correlated BMI /
/// age / diabetes (diabetes risk increases with both), remaining binaries
/// and categoricals at fixed marginals. BMI respects the >= 35 eligibility
/// floor by construction.
inline CovariatePool synth_pool(std::int64_t size, std::uint64_t seed) {
  if (size < 1000) throw Error("simulation_engine", "synth_pool", "pool size must be >= 1000");
  CovariatePool pool;
  pool.schema = simulation_schema();
  pool.size = size;
  pool.raw.resize(static_cast<std::size_t>(size) * sim_idx::n_raw);
  for (std::int64_t i = 0; i < size; ++i) {
    Rng rng(mix_seed(seed, streams::kPool, static_cast<std::uint64_t>(i)));
    double* row = pool.raw.data() + static_cast<std::size_t>(i) * sim_idx::n_raw;
    double bmi;
    do {
      bmi = rng.normal(44.0, 5.0);
    } while (bmi < 35.0 || bmi > 70.0);
    const double age = 19.0 + 60.0 * rng.uniform();
    // logit(0.20) base, rising with BMI and age.
    const double p_diab = expit(-1.3863 + 0.35 * (bmi - 44.0) / 5.0 + 0.25 * (age - 49.0) / 17.3);
    row[sim_idx::bmi] = bmi;
    row[sim_idx::gender] = rng.bernoulli(0.20) ? 1.0 : 0.0;
    row[sim_idx::race] = rng.bernoulli(0.35) ? 1.0 : 0.0;
    const double u_site = rng.uniform();
    row[sim_idx::site] = u_site < 0.25 ? 0.0 : (u_site < 0.65 ? 1.0 : 2.0);
    row[sim_idx::age] = age;
    row[sim_idx::t2dm] = rng.bernoulli(p_diab) ? 1.0 : 0.0;
    row[sim_idx::insulin] = rng.bernoulli(0.10) ? 1.0 : 0.0;
    row[sim_idx::hypertension] = rng.bernoulli(0.40) ? 1.0 : 0.0;
    row[sim_idx::hypertension_rx] = rng.bernoulli(0.30) ? 1.0 : 0.0;
    row[sim_idx::dyslipidemia] = rng.bernoulli(0.30) ? 1.0 : 0.0;
    row[sim_idx::antilipemic_rx] = rng.bernoulli(0.20) ? 1.0 : 0.0;
    const double u_smoke = rng.uniform();
    row[sim_idx::smoking] = u_smoke < 0.15 ? 0.0 : (u_smoke < 0.40 ? 1.0 : 2.0);
  }
  return pool;
}

/// Plasmode-style pool from real data: baseline covariate vectors of the
/// subjects eligible at the given trial of an ingested panel.
inline CovariatePool pool_from_panel(const TrialPanel& panel, int trial1 = 1) {
  CovariatePool pool;
  pool.schema = panel.schema();
  for (int i = 0; i < panel.n_subjects(); ++i) {
    if (!panel.eligible(i, trial1)) continue;
    const double* raw = panel.covariates_at(panel.record(i, trial1));
    pool.raw.insert(pool.raw.end(), raw, raw + panel.schema().size());
    ++pool.size;
  }
  if (pool.size < 1) throw Error("simulation_engine", "pool", "no eligible baseline rows in panel");
  return pool;
}

/// True propensity at a raw covariate vector (treatment model is constant
/// in m).
inline double true_propensity(const ScenarioSpec& spec, const CovariateSchema& schema, const double* raw) {
  Eigen::VectorXd enc(schema.encoded_width());
  schema.encode(raw, enc.data());
  double eta = spec.coefs.pi[0];
  for (int i = 0; i < enc.size(); ++i) eta += spec.coefs.pi[i + 1] * enc[i];
  return expit(eta);
}

/// True outcome regression mu(a, L_m, m); spline_design must be the M x 3
/// trial design of the spec.
inline double true_outcome_mean(const ScenarioSpec& spec, const CovariateSchema& schema, const double* raw,
                                int m1, int arm, const Eigen::MatrixXd& spline_design) {
  Eigen::VectorXd enc(schema.encoded_width());
  schema.encode(raw, enc.data());
  double mean = spec.coefs.mu_main[0];
  for (int i = 0; i < enc.size(); ++i) mean += spec.coefs.mu_main[i + 1] * enc[i];
  if (arm == 1) {
    mean += spec.coefs.treat_main;
    if (spec.has_trend()) mean += spec.coefs.treat_trend * static_cast<double>(m1);
    if (spec.has_spline()) mean += spline_design.row(m1 - 1).dot(spec.coefs.treat_spline);
    if (spec.has_effect_mod())
      mean += spec.coefs.em_age * raw[sim_idx::age] + spec.coefs.em_t2dm * raw[sim_idx::t2dm] +
              spec.coefs.em_bmi * raw[sim_idx::bmi];
  }
  return mean;
}

/// Generate a panel under the scenario. Every subject is eligible at every
/// trial (treatment does not deplete eligibility). When force_arm is given,
/// the treatment draw is still consumed but the forced arm is recorded, so
/// covariate paths and outcome noise are identical across arms under a
/// common seed.
inline TrialPanel generate(const ScenarioSpec& spec, const CovariatePool& pool,
                           std::optional<int> force_arm = std::nullopt) {
  validate(spec);
  const CovariateSchema& schema = pool.schema;
  const Eigen::MatrixXd spline_design = trial_spline_design(spec.M, 2);
  TrialPanel panel(schema, spec.M);

  std::vector<double> raw(static_cast<std::size_t>(schema.size()));
  for (std::int64_t i = 0; i < spec.n; ++i) {
    const int subject = panel.add_subject("s" + std::to_string(i + 1));
    Rng rng(mix_seed(spec.seed, streams::kGenerate, static_cast<std::uint64_t>(i)));
    const double* base = pool.row(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(pool.size))));
    for (int m = 1; m <= spec.M; ++m) {
      raw.assign(base, base + schema.size());
      if (spec.shift != ShiftRule::none) {
        raw[sim_idx::age] = base[sim_idx::age] + static_cast<double>(m - 1) / 12.0;
        if (m >= 2) {
          raw[sim_idx::bmi] = base[sim_idx::bmi] + rng.normal(detail::bmi_shift_mean(spec, spline_design, m), 1.0);
          raw[sim_idx::t2dm] = rng.bernoulli(detail::diabetes_prevalence(spec, spline_design, m)) ? 1.0 : 0.0;
        }
      }
      const double p = true_propensity(spec, schema, raw.data());
      int a = rng.bernoulli(p) ? 1 : 0;
      if (force_arm) a = *force_arm;
      const double mean = true_outcome_mean(spec, schema, raw.data(), m, a, spline_design);
      const double y = rng.normal(mean, spec.sigma_y);
      panel.set_record(subject, m, raw, a, y);
    }
  }
  return panel;
}

/// Exact expectations of the shifted covariates entering the effect
/// interactions, with pool means as the trial-1 baseline.
struct TruthMoments {
  Eigen::VectorXd mean_age, mean_bmi, mean_t2dm;  // per trial
};

inline TruthMoments truth_moments(const ScenarioSpec& spec, const CovariatePool& pool) {
  double bmi0 = 0.0, age0 = 0.0, t2dm0 = 0.0;
  for (std::int64_t i = 0; i < pool.size; ++i) {
    const double* row = pool.row(i);
    bmi0 += row[sim_idx::bmi];
    age0 += row[sim_idx::age];
    t2dm0 += row[sim_idx::t2dm];
  }
  bmi0 /= static_cast<double>(pool.size);
  age0 /= static_cast<double>(pool.size);
  t2dm0 /= static_cast<double>(pool.size);

  const Eigen::MatrixXd spline_design = trial_spline_design(spec.M, 2);
  TruthMoments moments;
  moments.mean_age.resize(spec.M);
  moments.mean_bmi.resize(spec.M);
  moments.mean_t2dm.resize(spec.M);
  for (int m = 1; m <= spec.M; ++m) {
    if (spec.shift == ShiftRule::none) {
      moments.mean_age[m - 1] = age0;
      moments.mean_bmi[m - 1] = bmi0;
      moments.mean_t2dm[m - 1] = t2dm0;
      continue;
    }
    moments.mean_age[m - 1] = age0 + static_cast<double>(m - 1) / 12.0;
    moments.mean_bmi[m - 1] = m == 1 ? bmi0 : bmi0 + detail::bmi_shift_mean(spec, spline_design, m);
    moments.mean_t2dm[m - 1] = m == 1 ? t2dm0 : detail::diabetes_prevalence(spec, spline_design, m);
  }
  return moments;
}

/// Analytic cross-trial truth: time terms at treatment time m, effect
/// modification at population j's covariate expectations.
inline Eigen::MatrixXd truth_cross(const ScenarioSpec& spec, const CovariatePool& pool) {
  validate(spec);
  const TruthMoments moments = truth_moments(spec, pool);
  const Eigen::MatrixXd spline_design = trial_spline_design(spec.M, 2);
  Eigen::MatrixXd truth(spec.M, spec.M);
  for (int j = 1; j <= spec.M; ++j) {
    double em = 0.0;
    if (spec.has_effect_mod())
      em = spec.coefs.em_age * moments.mean_age[j - 1] + spec.coefs.em_t2dm * moments.mean_t2dm[j - 1] +
           spec.coefs.em_bmi * moments.mean_bmi[j - 1];
    for (int m = 1; m <= spec.M; ++m) {
      double value = spec.coefs.treat_main + em;
      if (spec.has_trend()) value += spec.coefs.treat_trend * static_cast<double>(m);
      if (spec.has_spline()) value += spline_design.row(m - 1).dot(spec.coefs.treat_spline);
      truth(j - 1, m - 1) = value;
    }
  }
  return truth;
}

inline Eigen::VectorXd truth_chi(const ScenarioSpec& spec, const CovariatePool& pool) {
  return truth_cross(spec, pool).diagonal();
}

/// Population theta_m from the exact truth matrix (no finite-sample
/// thresholding). NaN when a trial has no variation in either direction.
inline Eigen::VectorXd truth_theta_m(const ScenarioSpec& spec, const CovariatePool& pool) {
  DecomposeOptions options;
  options.correction = false;
  return decompose_matrix(truth_cross(spec, pool), options).theta_m;
}

}  // namespace caltrend
