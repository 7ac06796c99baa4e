#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "caltrend/forest.hpp"
#include "caltrend/learners.hpp"
#include "caltrend/numeric.hpp"
#include "caltrend/panel.hpp"
#include "caltrend/parallel.hpp"

namespace caltrend {

/// Weight-truncation rules: quantile caps on inverse-probability weights
/// (within arm) and on membership ratios (across all trial pairs), plus a
/// hard probability floor that quantile truncation alone cannot guarantee
/// when tree leaves are pure.
struct TruncationPolicy {
  double ps_quantile = 0.99;
  double ratio_quantile = 0.99;
  double hard_floor = 0.01;

  void validate() const {
    if (!(ps_quantile > 0.5 && ps_quantile < 1.0))
      throw Error("nuisance_learners", "policy", "ps_quantile must be in (0.5, 1)");
    if (!(ratio_quantile > 0.5 && ratio_quantile < 1.0))
      throw Error("nuisance_learners", "policy", "ratio_quantile must be in (0.5, 1)");
    if (!(hard_floor > 0.0 && hard_floor < 0.5))
      throw Error("nuisance_learners", "policy", "hard_floor must be in (0, 0.5)");
  }
};

struct LearnerSet {
  LearnerSpec outcome;
  LearnerSpec propensity;
  LearnerSpec membership;
};

/// Prediction hooks that bypass model fitting for one (or both) of the
/// outcome/propensity nuisances. Used by the double-robustness checks to
/// inject an oracle on one side and a deliberately misspecified model on the
/// other. `mu` sees the record's own trial and the counterfactual target.
struct NuisanceOverrides {
  std::function<double(const TrialPanel&, int subject, int record_trial1, int target_trial1, int arm)> mu;
  std::function<double(const TrialPanel&, int subject, int trial1)> pi;
};

namespace detail {

enum class ModelKind : std::uint8_t { none = 0, linear = 1, logistic = 2, forest = 3, constant = 4, ovr = 5 };

struct TaggedModel {
  ModelKind kind = ModelKind::none;
  std::unique_ptr<Predictor> model;

  double predict(const double* x, int p) const { return model->predict(x, p); }
};

inline TaggedModel fit_tagged_regression(const LearnerSpec& spec, const RowMatrixXd& x,
                                         const Eigen::Ref<const Eigen::VectorXd>& y, std::uint64_t seed,
                                         int threads) {
  spec.validate();
  switch (spec.family) {
    case LearnerSpec::Family::linear:
      return {ModelKind::linear, std::make_unique<LinearModel>(LinearModel::fit(x, y, spec.get("ridge", 0.0)))};
    case LearnerSpec::Family::logistic:
      return {ModelKind::logistic,
              std::make_unique<LogisticModel>(LogisticModel::fit(x, y, spec.get("ridge", 0.0)))};
    case LearnerSpec::Family::tree_ensemble:
    case LearnerSpec::Family::multinomial_tree_ensemble:
      return {ModelKind::forest, std::make_unique<ForestModel>(ForestModel::fit(
                                     x, y, ForestModel::Params::from_spec(spec, false), seed, threads))};
  }
  throw Error("nuisance_learners", "fit", "unsupported learner family");
}

inline TaggedModel fit_tagged_binary(const LearnerSpec& spec, const RowMatrixXd& x,
                                     const Eigen::Ref<const Eigen::VectorXd>& y, std::uint64_t seed,
                                     int threads) {
  spec.validate();
  switch (spec.family) {
    case LearnerSpec::Family::logistic:
    case LearnerSpec::Family::linear:
      return {ModelKind::logistic,
              std::make_unique<LogisticModel>(LogisticModel::fit(x, y, spec.get("ridge", 0.0)))};
    case LearnerSpec::Family::tree_ensemble:
    case LearnerSpec::Family::multinomial_tree_ensemble:
      return {ModelKind::forest, std::make_unique<ForestModel>(ForestModel::fit(
                                     x, y, ForestModel::Params::from_spec(spec, true), seed, threads))};
  }
  throw Error("nuisance_learners", "fit", "unsupported learner family");
}

}  // namespace detail

/// One training split's pooled nuisance bundle: stratified outcome models,
/// propensity, and (optionally) the trial-membership classifier.
struct NuisanceModels {
  detail::TaggedModel mu1, mu0, pi;
  std::unique_ptr<OneVsRestModel> membership;

  static constexpr char kMagic[6] = "CTNM1";

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("nuisance_learners", "persist", "cannot write '" + path + "'");
    out.write(kMagic, 5);
    auto write_tagged = [&out](const detail::TaggedModel& m) {
      const auto kind = static_cast<std::uint8_t>(m.kind);
      out.write(reinterpret_cast<const char*>(&kind), 1);
      if (m.kind == detail::ModelKind::none) return;
      std::vector<double> payload;
      m.model->serialize(payload);
      const std::uint64_t count = payload.size();
      out.write(reinterpret_cast<const char*>(&count), sizeof(count));
      out.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(double)));
    };
    write_tagged(mu1);
    write_tagged(mu0);
    write_tagged(pi);
    const std::uint8_t has_membership = membership ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&has_membership), 1);
    if (membership) {
      std::vector<double> payload;
      membership->serialize(payload);
      const std::uint64_t count = payload.size();
      out.write(reinterpret_cast<const char*>(&count), sizeof(count));
      out.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(double)));
    }
  }

  static NuisanceModels load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("nuisance_learners", "persist", "cannot open '" + path + "'");
    char magic[5];
    in.read(magic, 5);
    if (!in || std::string(magic, 5) != std::string(kMagic, 5))
      throw Error("nuisance_learners", "persist", "'" + path + "' is not a CTNM1 model blob");
    auto read_payload = [&in, &path]() {
      std::uint64_t count = 0;
      in.read(reinterpret_cast<char*>(&count), sizeof(count));
      std::vector<double> payload(count);
      in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(double)));
      if (!in) throw Error("nuisance_learners", "persist", "truncated model blob '" + path + "'");
      return payload;
    };
    auto read_tagged = [&]() {
      std::uint8_t kind = 0;
      in.read(reinterpret_cast<char*>(&kind), 1);
      detail::TaggedModel m;
      m.kind = static_cast<detail::ModelKind>(kind);
      if (m.kind == detail::ModelKind::none) return m;
      const auto payload = read_payload();
      const double* it = payload.data();
      switch (m.kind) {
        case detail::ModelKind::linear: m.model = std::make_unique<LinearModel>(LinearModel::deserialize(it)); break;
        case detail::ModelKind::logistic:
          m.model = std::make_unique<LogisticModel>(LogisticModel::deserialize(it));
          break;
        case detail::ModelKind::forest: m.model = std::make_unique<ForestModel>(ForestModel::deserialize(it)); break;
        case detail::ModelKind::constant:
          m.model = std::make_unique<ConstantModel>(ConstantModel::deserialize(it));
          break;
        default: throw Error("nuisance_learners", "persist", "unknown model kind in blob");
      }
      return m;
    };
    NuisanceModels models;
    models.mu1 = read_tagged();
    models.mu0 = read_tagged();
    models.pi = read_tagged();
    std::uint8_t has_membership = 0;
    in.read(reinterpret_cast<char*>(&has_membership), 1);
    if (has_membership) {
      const auto payload = read_payload();
      const double* it = payload.data();
      models.membership = std::make_unique<OneVsRestModel>(OneVsRestModel::deserialize(it));
    }
    return models;
  }
};

namespace detail {

/// Encoded design row for the pooled models: one-hot covariates plus the
/// trial index as the trailing feature.
inline void encode_row(const TrialPanel& panel, std::int64_t rec, int trial1, double* out) {
  panel.schema().encode(panel.covariates_at(rec), out);
  out[panel.schema().encoded_width()] = static_cast<double>(trial1);
}

}  // namespace detail

/// Fit the pooled models (stratified outcome regressions, propensity,
/// optionally trial membership) on the rows of `pooled` whose subject is in
/// `train_subjects`. The trial index enters the outcome and propensity
/// models as a covariate; the membership classifier has it as the target.
inline NuisanceModels fit_pooled_nuisances(const PooledDataset& pooled, const LearnerSet& specs,
                                           const std::vector<int>& train_subjects, std::uint64_t seed,
                                           bool fit_membership = true, Warnings* warnings = nullptr,
                                           int threads = 0, bool fit_outcome = true, bool fit_propensity = true) {
  const TrialPanel& panel = *pooled.panel;
  std::vector<std::uint8_t> in_train(static_cast<std::size_t>(panel.n_subjects()), 0);
  for (int s : train_subjects) in_train[static_cast<std::size_t>(s)] = 1;

  std::vector<std::int64_t> train_rows;
  for (std::int64_t r = 0; r < pooled.size(); ++r)
    if (in_train[static_cast<std::size_t>(pooled.rows[static_cast<std::size_t>(r)].subject)]) train_rows.push_back(r);
  if (train_rows.empty()) throw Error("nuisance_learners", "fit", "no training rows");

  const int width = panel.schema().encoded_width() + 1;
  const int M = panel.n_trials();

  // Per-(trial, arm) coverage; empty arms within a trial are tolerated
  // (the pooled fit still predicts there) but reported.
  std::vector<std::int64_t> arm_count(2, 0);
  std::vector<int> arm_trial_count(static_cast<std::size_t>(2 * M), 0);
  for (std::int64_t r : train_rows) {
    const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
    const int a = panel.treatment_at(row.rec);
    ++arm_count[static_cast<std::size_t>(a)];
    ++arm_trial_count[static_cast<std::size_t>(a * M + row.trial1 - 1)];
  }
  if (fit_outcome || fit_propensity) {
    for (int a = 0; a < 2; ++a) {
      if (arm_count[static_cast<std::size_t>(a)] > 0) continue;
      std::string covered;
      for (int m = 1; m <= M; ++m)
        if (arm_trial_count[static_cast<std::size_t>((1 - a) * M + m - 1)] > 0)
          covered += (covered.empty() ? "" : ",") + std::to_string(m);
      throw Error("nuisance_learners", "fit",
                  "arm " + std::to_string(a) + " has no training rows (other arm covers trials " + covered +
                      ")");
    }
    if (warnings) {
      for (int a = 0; a < 2; ++a)
        for (int m = 1; m <= M; ++m)
          if (arm_trial_count[static_cast<std::size_t>(a * M + m - 1)] == 0)
            warnings->push_back("trial " + std::to_string(m) + ": arm " + std::to_string(a) +
                                " empty in a training split; pooled fit used");
    }
  }

  NuisanceModels models;
  if (fit_outcome || fit_propensity) {
    RowMatrixXd x(static_cast<Eigen::Index>(train_rows.size()), width);
    Eigen::VectorXd y_out(static_cast<Eigen::Index>(train_rows.size()));
    Eigen::VectorXd y_trt(static_cast<Eigen::Index>(train_rows.size()));
    std::vector<std::uint8_t> arm(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      const PooledRow& row = pooled.rows[static_cast<std::size_t>(train_rows[i])];
      detail::encode_row(panel, row.rec, row.trial1, x.row(static_cast<Eigen::Index>(i)).data());
      y_out[static_cast<Eigen::Index>(i)] = panel.outcome_at(row.rec);
      y_trt[static_cast<Eigen::Index>(i)] = panel.treatment_at(row.rec);
      arm[i] = static_cast<std::uint8_t>(panel.treatment_at(row.rec));
    }
    if (fit_outcome) {
      for (int a = 0; a < 2; ++a) {
        std::vector<Eigen::Index> sel;
        for (std::size_t i = 0; i < arm.size(); ++i)
          if (arm[i] == a) sel.push_back(static_cast<Eigen::Index>(i));
        RowMatrixXd xa(static_cast<Eigen::Index>(sel.size()), width);
        Eigen::VectorXd ya(static_cast<Eigen::Index>(sel.size()));
        for (std::size_t i = 0; i < sel.size(); ++i) {
          xa.row(static_cast<Eigen::Index>(i)) = x.row(sel[i]);
          ya[static_cast<Eigen::Index>(i)] = y_out[sel[i]];
        }
        auto fitted = detail::fit_tagged_regression(specs.outcome, xa, ya,
                                                    mix_seed(seed, streams::kLearner, 10 + a), threads);
        (a == 1 ? models.mu1 : models.mu0) = std::move(fitted);
      }
    }
    if (fit_propensity)
      models.pi = detail::fit_tagged_binary(specs.propensity, x, y_trt, mix_seed(seed, streams::kLearner, 12),
                                            threads);
  }
  if (fit_membership) {
    const int ew = panel.schema().encoded_width();
    RowMatrixXd xm(static_cast<Eigen::Index>(train_rows.size()), ew);
    std::vector<int> labels(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      const PooledRow& row = pooled.rows[static_cast<std::size_t>(train_rows[i])];
      panel.schema().encode(panel.covariates_at(row.rec), xm.row(static_cast<Eigen::Index>(i)).data());
      labels[i] = row.trial1 - 1;
    }
    models.membership = std::make_unique<OneVsRestModel>(
        OneVsRestModel::fit(specs.membership, xm, labels, M, mix_seed(seed, streams::kLearner, 13), threads));
  }
  return models;
}

/// Cross-fitted predictions for every eligible subject-trial, aligned with
/// the pooled dataset it carries. All predictions for a row come from models
/// trained on the opposite subject split (see trained_on_fold).
struct NuisanceFit {
  PooledDataset pooled;
  std::vector<double> pi;       // truncated propensity at the row's own trial
  std::vector<double> mu1_own;  // mu_hat(1, L) at the row's own trial
  std::vector<double> mu0_own;
  RowMatrixXd mu1_cf;      // rows x M counterfactual outcome predictions
  RowMatrixXd mu0_cf;      // (cross-trial mode only)
  RowMatrixXd membership;  // rows x M membership probabilities (simplex)
  std::vector<std::uint8_t> trained_on_fold;
  std::vector<std::uint8_t> fold_of_subject;
  std::vector<double> eligible_frac;  // per trial, eligible count / n
  double ratio_cap = std::numeric_limits<double>::infinity();
  TruncationPolicy policy;
  bool cross_trial = false;
  Warnings warnings;

  double mu_cf(int arm, std::int64_t row, int target_trial1) const {
    const auto& m = arm == 1 ? mu1_cf : mu0_cf;
    return m(row, target_trial1 - 1);
  }
};

struct CrossfitOptions {
  bool cross_trial = true;
  NuisanceOverrides overrides;
  int threads = 0;
};

/// Two-fold cross-fitting: models trained on one subject split predict the
/// other, roles swapped, with counterfactual outcome predictions produced by
/// overwriting the trial-index feature. Truncation is applied afterwards:
/// arm-wise quantile caps on IP weights, a global quantile cap on membership
/// ratios, and the hard probability floor.
inline NuisanceFit predict_crossfit(const TrialPanel& panel, const LearnerSet& specs,
                                    const TruncationPolicy& policy, std::uint64_t seed,
                                    const CrossfitOptions& options = {}) {
  policy.validate();
  NuisanceFit fit;
  fit.policy = policy;
  fit.cross_trial = options.cross_trial;
  fit.pooled = build_pooled(panel);
  const PooledDataset& pooled = fit.pooled;
  const std::int64_t rows = pooled.size();
  const int M = panel.n_trials();

  fit.eligible_frac.resize(static_cast<std::size_t>(M));
  for (int m = 1; m <= M; ++m) fit.eligible_frac[static_cast<std::size_t>(m - 1)] = pooled.eligible_fraction(m);

  const auto folds = split_subjects(panel, seed);
  fit.fold_of_subject = fold_membership(folds, panel.n_subjects());

  const bool need_mu_models = !options.overrides.mu;
  const bool need_pi_models = !options.overrides.pi;
  NuisanceModels bundles[2];
  for (int f = 0; f < 2; ++f) {
    if (!need_mu_models && !need_pi_models && !options.cross_trial) break;
    bundles[f] = fit_pooled_nuisances(pooled, specs, folds[static_cast<std::size_t>(f)],
                                      mix_seed(seed, streams::kLearner, static_cast<std::uint64_t>(f)),
                                      options.cross_trial, &fit.warnings, options.threads, need_mu_models,
                                      need_pi_models);
  }

  fit.pi.assign(static_cast<std::size_t>(rows), 0.0);
  fit.mu1_own.assign(static_cast<std::size_t>(rows), 0.0);
  fit.mu0_own.assign(static_cast<std::size_t>(rows), 0.0);
  fit.trained_on_fold.assign(static_cast<std::size_t>(rows), 0);
  if (options.cross_trial) {
    fit.mu1_cf.resize(rows, M);
    fit.mu0_cf.resize(rows, M);
    fit.membership.resize(rows, M);
  }

  const int ew = panel.schema().encoded_width();
  parallel_for(
      rows,
      [&](std::int64_t r) {
        const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
        const int own_fold = fit.fold_of_subject[static_cast<std::size_t>(row.subject)];
        const int train_fold = 1 - own_fold;
        const NuisanceModels& bundle = bundles[train_fold];
        fit.trained_on_fold[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(train_fold);

        std::vector<double> feat(static_cast<std::size_t>(ew + 1));
        detail::encode_row(panel, row.rec, row.trial1, feat.data());

        if (options.overrides.pi)
          fit.pi[static_cast<std::size_t>(r)] = options.overrides.pi(panel, row.subject, row.trial1);
        else
          fit.pi[static_cast<std::size_t>(r)] = bundle.pi.predict(feat.data(), ew + 1);

        if (options.overrides.mu) {
          fit.mu1_own[static_cast<std::size_t>(r)] =
              options.overrides.mu(panel, row.subject, row.trial1, row.trial1, 1);
          fit.mu0_own[static_cast<std::size_t>(r)] =
              options.overrides.mu(panel, row.subject, row.trial1, row.trial1, 0);
          if (options.cross_trial) {
            for (int m = 1; m <= M; ++m) {
              fit.mu1_cf(r, m - 1) = options.overrides.mu(panel, row.subject, row.trial1, m, 1);
              fit.mu0_cf(r, m - 1) = options.overrides.mu(panel, row.subject, row.trial1, m, 0);
            }
          }
        } else if (options.cross_trial) {
          for (int m = 1; m <= M; ++m) {
            feat[static_cast<std::size_t>(ew)] = static_cast<double>(m);
            fit.mu1_cf(r, m - 1) = bundle.mu1.predict(feat.data(), ew + 1);
            fit.mu0_cf(r, m - 1) = bundle.mu0.predict(feat.data(), ew + 1);
          }
          feat[static_cast<std::size_t>(ew)] = static_cast<double>(row.trial1);
          fit.mu1_own[static_cast<std::size_t>(r)] = fit.mu1_cf(r, row.trial1 - 1);
          fit.mu0_own[static_cast<std::size_t>(r)] = fit.mu0_cf(r, row.trial1 - 1);
        } else {
          fit.mu1_own[static_cast<std::size_t>(r)] = bundle.mu1.predict(feat.data(), ew + 1);
          fit.mu0_own[static_cast<std::size_t>(r)] = bundle.mu0.predict(feat.data(), ew + 1);
        }

        if (options.cross_trial)
          bundle.membership->predict(feat.data(), ew, fit.membership.row(r).data());
      },
      options.threads);

  // Inverse-probability weight truncation at the quantile within each arm,
  // then the hard floor.
  {
    std::vector<double> w1, w0;
    for (std::int64_t r = 0; r < rows; ++r) {
      const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
      const double p = fit.pi[static_cast<std::size_t>(r)];
      if (panel.treatment_at(row.rec) == 1)
        w1.push_back(1.0 / std::max(p, 1e-300));
      else
        w0.push_back(1.0 / std::max(1.0 - p, 1e-300));
    }
    const double cap1 = w1.empty() ? std::numeric_limits<double>::infinity() : quantile(w1, policy.ps_quantile);
    const double cap0 = w0.empty() ? std::numeric_limits<double>::infinity() : quantile(w0, policy.ps_quantile);
    for (std::int64_t r = 0; r < rows; ++r) {
      const PooledRow& row = pooled.rows[static_cast<std::size_t>(r)];
      double p = fit.pi[static_cast<std::size_t>(r)];
      if (panel.treatment_at(row.rec) == 1)
        p = std::max(p, 1.0 / cap1);
      else
        p = std::min(p, 1.0 - 1.0 / cap0);
      fit.pi[static_cast<std::size_t>(r)] = std::clamp(p, policy.hard_floor, 1.0 - policy.hard_floor);
    }
  }

  // Membership-ratio truncation across all (j, m) pairs.
  if (options.cross_trial && M > 1) {
    std::vector<double> ratios;
    ratios.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(M - 1));
    for (std::int64_t r = 0; r < rows; ++r) {
      const int m = pooled.rows[static_cast<std::size_t>(r)].trial1;
      const double pm = std::max(fit.membership(r, m - 1), policy.hard_floor);
      const double efm = fit.eligible_frac[static_cast<std::size_t>(m - 1)];
      for (int j = 1; j <= M; ++j) {
        if (j == m) continue;
        const double pj = std::max(fit.membership(r, j - 1), policy.hard_floor);
        const double efj = fit.eligible_frac[static_cast<std::size_t>(j - 1)];
        if (efj <= 0.0) continue;
        ratios.push_back(efm * pj / (efj * pm));
      }
    }
    if (!ratios.empty()) fit.ratio_cap = quantile(std::move(ratios), policy.ratio_quantile);
  }

  return fit;
}

/// Estimated density ratio transporting the trial-m eligible covariate
/// distribution onto trial j's, by Bayes' rule on the membership classifier.
/// Identity pairs short-circuit to exactly one.
inline double density_ratio(const NuisanceFit& fit, int j1, int m1, std::int64_t row) {
  const int M = static_cast<int>(fit.eligible_frac.size());
  if (j1 < 1 || j1 > M || m1 < 1 || m1 > M)
    throw Error("nuisance_learners", "density_ratio", "trial index out of range");
  if (j1 == m1) return 1.0;
  if (!fit.cross_trial)
    throw Error("nuisance_learners", "density_ratio", "fit was produced without cross-trial predictions");
  const double floor = fit.policy.hard_floor;
  const double pj = std::max(fit.membership(row, j1 - 1), floor);
  const double pm = std::max(fit.membership(row, m1 - 1), floor);
  const double efj = fit.eligible_frac[static_cast<std::size_t>(j1 - 1)];
  const double efm = fit.eligible_frac[static_cast<std::size_t>(m1 - 1)];
  if (efj <= 0.0) return 0.0;  // degenerate target trial: no mass to transport to
  const double ratio = efm * pj / (efj * pm);
  return std::min(ratio, fit.ratio_cap);
}

}  // namespace caltrend
