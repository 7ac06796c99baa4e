#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "caltrend/msm.hpp"
#include "caltrend/nuisance.hpp"

namespace caltrend {

/// Influence-function estimator of the pseudorisk of a fitted trend curve:
/// the empirical mean over subjects of sum_m w(m){psi(m)^2 - 2 psi(m) chidot_m},
/// with the uncentered contributions whose column means are the effect
/// estimates. Lower is better; candidate-independent terms are dropped.
inline double pseudorisk(const Eigen::Ref<const Eigen::MatrixXd>& if_contributions,
                         const Eigen::Ref<const Eigen::VectorXd>& psi_values, const TrialWeights& weights) {
  const Eigen::Index M = psi_values.size();
  if (if_contributions.cols() != M || weights.w.size() != M)
    throw Error("model_selection", "pseudorisk", "dimension mismatch between contributions, psi and weights");
  for (Eigen::Index m = 0; m < M; ++m)
    if (!std::isfinite(psi_values[m]))
      throw Error("model_selection", "pseudorisk", "psi values must be finite");
  const Eigen::VectorXd chi_bar = if_contributions.colwise().mean();
  double loss = 0.0;
  for (Eigen::Index m = 0; m < M; ++m)
    loss += weights.w[m] * (psi_values[m] * psi_values[m] - 2.0 * psi_values[m] * chi_bar[m]);
  return loss;
}

struct CandidateReport {
  std::string label;
  int complexity = 0;
  double pseudorisk_value = kNaN;
  double sd_distance = kNaN;  // (L_k - L_min) / epsilon
  bool failed = false;
  bool is_minimizer = false;
  bool is_selected = false;
};

/// Outcome of the double cross-fit selection: averaged pseudorisks, the
/// pooled-SD unit epsilon, and the simplest candidate within c*epsilon of
/// the minimizer. select_at() re-applies the rule for another c without
/// re-estimating.
struct SelectionResult {
  std::vector<CandidateReport> candidates;
  int minimizer_index = -1;
  int selected_index = -1;
  double epsilon = kNaN;
  double c = 0.25;
  Warnings warnings;

  int select_at(double c_value) const {
    if (c_value < 0.0) throw Error("model_selection", "select", "c must be nonnegative");
    if (minimizer_index < 0) return -1;
    const double lmin = candidates[static_cast<std::size_t>(minimizer_index)].pseudorisk_value;
    // Scan in complexity order (ties by declaration order); the minimizer
    // itself always qualifies, so this terminates at or before it.
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(candidates.size()); ++i)
      if (!candidates[static_cast<std::size_t>(i)].failed) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return candidates[static_cast<std::size_t>(a)].complexity < candidates[static_cast<std::size_t>(b)].complexity;
    });
    const double slack = std::isfinite(epsilon) ? c_value * epsilon : 0.0;
    for (int i : order)
      if (std::abs(candidates[static_cast<std::size_t>(i)].pseudorisk_value - lmin) <= slack) return i;
    return minimizer_index;
  }
};

struct SelectionOptions {
  TruncationPolicy policy;
  double alpha = 0.05;
  int threads = 0;
  NuisanceOverrides overrides;
};

/// Double sample-splitting evaluation of candidate trend models. Subjects
/// are split in half; each half runs the full estimation pipeline (its own
/// internal cross-fit) to produce fitted candidate curves, which are scored
/// with influence contributions re-estimated on the opposite half. The two
/// directions are averaged, and the simplicity rule picks the lowest-
/// complexity candidate within c*epsilon of the pseudorisk minimizer.
inline SelectionResult crossfit_selection(const TrialPanel& panel, const std::vector<MsmBasis>& candidates,
                                          const LearnerSet& specs, const TrialWeights& weights, double c,
                                          std::uint64_t seed, const SelectionOptions& options = {}) {
  if (candidates.size() < 2)
    throw Error("model_selection", "crossfit_selection", "need at least two candidate bases");
  if (panel.n_subjects() < 4)
    throw Error("model_selection", "crossfit_selection", "need at least 4 subjects for double splitting");
  if (c < 0.0) throw Error("model_selection", "crossfit_selection", "c must be nonnegative");
  {
    bool distinct = false;
    for (std::size_t i = 1; i < candidates.size(); ++i)
      if (candidates[i].complexity_rank() != candidates[0].complexity_rank()) distinct = true;
    if (!distinct)
      throw Error("model_selection", "crossfit_selection", "candidates must have distinct complexity ranks");
  }

  const std::size_t K = candidates.size();
  SelectionResult result;
  result.c = c;
  result.candidates.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    result.candidates[k].label = candidates[k].label();
    result.candidates[k].complexity = candidates[k].complexity_rank();
  }

  const auto halves = split_subjects(panel, mix_seed(seed, streams::kSelection));

  // Per direction: candidate curves fitted on one half, pseudorisk evaluated
  // with contributions from the other.
  std::vector<std::vector<std::optional<MsmFit>>> fits(2, std::vector<std::optional<MsmFit>>(K));
  Eigen::MatrixXd loss = Eigen::MatrixXd::Constant(2, static_cast<Eigen::Index>(K), kNaN);
  std::array<Eigen::VectorXd, 2> half_eligible_frac;

  for (int d = 0; d < 2; ++d) {
    const TrialPanel projection_half = subset_panel(panel, halves[static_cast<std::size_t>(d)]);
    const TrialPanel evaluation_half = subset_panel(panel, halves[static_cast<std::size_t>(1 - d)]);

    CrossfitOptions cf;
    cf.cross_trial = false;
    cf.threads = options.threads;
    cf.overrides = options.overrides;

    const NuisanceFit fit_proj = predict_crossfit(
        projection_half, specs, options.policy,
        mix_seed(seed, streams::kSelection, static_cast<std::uint64_t>(d), 0), cf);
    const EffectCurve curve_proj = estimate_chi(projection_half, fit_proj);
    half_eligible_frac[static_cast<std::size_t>(d)] = curve_proj.eligible_fraction;

    const NuisanceFit fit_eval = predict_crossfit(
        evaluation_half, specs, options.policy,
        mix_seed(seed, streams::kSelection, static_cast<std::uint64_t>(d), 1), cf);
    const EffectCurve curve_eval = estimate_chi(evaluation_half, fit_eval);

    for (std::size_t k = 0; k < K; ++k) {
      try {
        MsmFit fit = fit_projection(curve_proj, candidates[k], weights, options.alpha);
        loss(d, static_cast<Eigen::Index>(k)) =
            pseudorisk(curve_eval.if_contributions, fit.fitted, weights);
        fits[static_cast<std::size_t>(d)][k] = std::move(fit);
      } catch (const Error& err) {
        result.warnings.push_back("candidate '" + candidates[k].label() + "' failed on split " +
                                  std::to_string(d + 1) + ": " + err.what());
      }
    }
  }

  int best = -1;
  for (std::size_t k = 0; k < K; ++k) {
    CandidateReport& report = result.candidates[k];
    if (!fits[0][k] || !fits[1][k]) {
      report.failed = true;
      continue;
    }
    report.pseudorisk_value = 0.5 * (loss(0, static_cast<Eigen::Index>(k)) + loss(1, static_cast<Eigen::Index>(k)));
    if (best < 0 || report.pseudorisk_value <
                        result.candidates[static_cast<std::size_t>(best)].pseudorisk_value)
      best = static_cast<int>(k);
  }
  if (best < 0) throw Error("model_selection", "crossfit_selection", "every candidate failed to fit");
  result.minimizer_index = best;
  result.candidates[static_cast<std::size_t>(best)].is_minimizer = true;

  // Pooled SD of the minimizer's fitted curve, h-weighted across both halves.
  double num = 0.0, den = 0.0;
  for (int d = 0; d < 2; ++d) {
    const MsmFit& fit = *fits[static_cast<std::size_t>(d)][static_cast<std::size_t>(best)];
    const Eigen::VectorXd& ef = half_eligible_frac[static_cast<std::size_t>(d)];
    for (int m = 0; m < static_cast<int>(ef.size()); ++m) {
      const double hm = weights.w[m] * ef[m];
      if (!(hm > 0.0) || !std::isfinite(fit.fitted_var[m])) continue;
      num += hm * fit.fitted_var[m];
      den += hm;
    }
  }
  result.epsilon = den > 0.0 ? std::sqrt(num / den) : kNaN;

  const double lmin = result.candidates[static_cast<std::size_t>(best)].pseudorisk_value;
  for (std::size_t k = 0; k < K; ++k) {
    CandidateReport& report = result.candidates[k];
    if (report.failed) continue;
    report.sd_distance = result.epsilon > 0.0 ? (report.pseudorisk_value - lmin) / result.epsilon : kNaN;
  }

  result.selected_index = result.select_at(c);
  result.candidates[static_cast<std::size_t>(result.selected_index)].is_selected = true;
  return result;
}

/// The default candidate ladder: constant, linear, cubic, and natural
/// splines with 2 and 3 internal knots at even quantile positions of 1..M.
inline std::vector<MsmBasis> default_candidates(int M) {
  std::vector<MsmBasis> out;
  out.push_back(MsmBasis::constant(M));
  out.push_back(MsmBasis::linear(M));
  out.push_back(MsmBasis::polynomial(M, 3));
  if (M >= 6) out.push_back(MsmBasis::natural_spline(M, default_internal_knots(M, 2)));
  if (M >= 8) out.push_back(MsmBasis::natural_spline(M, default_internal_knots(M, 3)));
  return out;
}

}  // namespace caltrend
