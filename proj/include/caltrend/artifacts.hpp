#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caltrend/csv_io.hpp"
#include "caltrend/estimators.hpp"
#include "caltrend/msm.hpp"
#include "caltrend/selection.hpp"
#include "caltrend/theta.hpp"

namespace caltrend {

namespace artifacts {

/// Non-finite numerics become JSON null / CSV "NA"; nothing NaN-shaped is
/// ever serialized silently.
inline nlohmann::json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline std::string cell(double v) {
  if (!std::isfinite(v)) return "NA";
  return detail::format_double(v);
}

inline nlohmann::json vec(const Eigen::VectorXd& v, double scale = 1.0) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num(scale * v[i]));
  return out;
}

inline nlohmann::json mat(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num(m(r, c)));
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cli", "artifacts", "cannot write '" + path + "'");
  out << content;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

}  // namespace artifacts

inline void write_effect_curve_csv(const EffectCurve& curve, const std::string& path, double scale = 1.0) {
  std::string out = "m,estimate,se,eligible_fraction,degenerate\n";
  for (int m = 0; m < curve.n_trials(); ++m) {
    out += std::to_string(m + 1) + "," + artifacts::cell(scale * curve.chi[m]) + "," +
           artifacts::cell(scale * curve.se[m]) + "," + artifacts::cell(curve.eligible_fraction[m]) + "," +
           std::to_string(static_cast<int>(curve.degenerate[static_cast<std::size_t>(m)])) + "\n";
  }
  artifacts::write_text(path, out);
}

inline nlohmann::json effect_curve_json(const EffectCurve& curve, double scale = 1.0) {
  return nlohmann::json{{"n", curve.n},
                        {"estimate", artifacts::vec(curve.chi, scale)},
                        {"se", artifacts::vec(curve.se, scale)},
                        {"eligible_fraction", artifacts::vec(curve.eligible_fraction)},
                        {"degenerate", curve.degenerate},
                        {"warnings", curve.warnings}};
}

/// Long-format (j, m, estimate, se) export of the standardization matrix.
inline void write_standardization_csv(const StandardizationMatrix& sm, const std::string& path,
                                      double scale = 1.0) {
  const Eigen::MatrixXd se = cross_trial_se(sm);
  std::string out = "j,m,estimate,se\n";
  for (int j = 0; j < sm.M; ++j)
    for (int m = 0; m < sm.M; ++m)
      out += std::to_string(j + 1) + "," + std::to_string(m + 1) + "," +
             artifacts::cell(scale * sm.S(j, m)) + "," + artifacts::cell(scale * se(j, m)) + "\n";
  artifacts::write_text(path, out);
}

inline nlohmann::json standardization_json(const StandardizationMatrix& sm, double scale = 1.0) {
  return nlohmann::json{{"n", sm.n},
                        {"M", sm.M},
                        {"S", artifacts::mat((scale * sm.S.array()).matrix())},
                        {"warnings", sm.warnings}};
}

inline nlohmann::json msm_fit_json(const MsmFit& fit, double scale = 1.0) {
  return nlohmann::json{{"basis", fit.basis_label},
                        {"beta", artifacts::vec(fit.beta)},
                        {"V_hat", artifacts::mat(fit.V_hat)},
                        {"C_hat", artifacts::mat(fit.C_hat)},
                        {"cov_beta", artifacts::mat(fit.cov_beta)},
                        {"fitted", artifacts::vec(fit.fitted, scale)},
                        {"lo", artifacts::vec(fit.lo, scale)},
                        {"hi", artifacts::vec(fit.hi, scale)},
                        {"alpha", fit.alpha},
                        {"n_valid_trials", fit.n_valid_trials},
                        {"residual_norm", artifacts::num(fit.convergence.residual_norm)}};
}

/// Per-fit plot CSV: m, chi_hat, se, psi_hat, lo, hi.
inline void write_msm_curve_csv(const EffectCurve& curve, const MsmFit& fit, const std::string& path,
                                double scale = 1.0) {
  std::string out = "m,chi_hat,se,psi_hat,lo,hi\n";
  for (int m = 0; m < curve.n_trials(); ++m)
    out += std::to_string(m + 1) + "," + artifacts::cell(scale * curve.chi[m]) + "," +
           artifacts::cell(scale * curve.se[m]) + "," + artifacts::cell(scale * fit.fitted[m]) + "," +
           artifacts::cell(scale * fit.lo[m]) + "," + artifacts::cell(scale * fit.hi[m]) + "\n";
  artifacts::write_text(path, out);
}

/// Combined plot CSV across candidates (one block of rows per candidate).
inline void write_curves_csv(const EffectCurve& curve, const std::vector<MsmFit>& fits,
                             const std::string& path, double scale = 1.0) {
  std::string out = "m,chi_hat,se,candidate,psi_hat,lo,hi\n";
  for (const auto& fit : fits)
    for (int m = 0; m < curve.n_trials(); ++m)
      out += std::to_string(m + 1) + "," + artifacts::cell(scale * curve.chi[m]) + "," +
             artifacts::cell(scale * curve.se[m]) + "," + fit.basis_label + "," +
             artifacts::cell(scale * fit.fitted[m]) + "," + artifacts::cell(scale * fit.lo[m]) + "," +
             artifacts::cell(scale * fit.hi[m]) + "\n";
  artifacts::write_text(path, out);
}

inline nlohmann::json selection_json(const SelectionResult& result) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : result.candidates)
    candidates.push_back(nlohmann::json{{"label", c.label},
                                        {"complexity", c.complexity},
                                        {"pseudorisk", artifacts::num(c.pseudorisk_value)},
                                        {"sd_distance", artifacts::num(c.sd_distance)},
                                        {"failed", c.failed},
                                        {"minimizer", c.is_minimizer},
                                        {"selected", c.is_selected}});
  return nlohmann::json{{"c", result.c},
                        {"epsilon", artifacts::num(result.epsilon)},
                        {"minimizer",
                         result.minimizer_index >= 0
                             ? nlohmann::json(result.candidates[static_cast<std::size_t>(result.minimizer_index)].label)
                             : nlohmann::json(nullptr)},
                        {"selected",
                         result.selected_index >= 0
                             ? nlohmann::json(result.candidates[static_cast<std::size_t>(result.selected_index)].label)
                             : nlohmann::json(nullptr)},
                        {"candidates", std::move(candidates)},
                        {"warnings", result.warnings}};
}

/// Loss-table CSV: candidate, pseudorisk, SD-distance, selection flags.
inline void write_selection_csv(const SelectionResult& result, const std::string& path) {
  std::string out = "candidate,complexity,pseudorisk,sd_distance,minimizer,selected\n";
  for (const auto& c : result.candidates)
    out += c.label + "," + std::to_string(c.complexity) + "," + artifacts::cell(c.pseudorisk_value) + "," +
           artifacts::cell(c.sd_distance) + "," + std::to_string(static_cast<int>(c.is_minimizer)) + "," +
           std::to_string(static_cast<int>(c.is_selected)) + "\n";
  artifacts::write_text(path, out);
}

inline nlohmann::json theta_json(const ThetaSummary& summary, const BootstrapTest& test) {
  return nlohmann::json{{"theta", artifacts::num(summary.theta)},
                        {"theta_m", artifacts::vec(summary.theta_m)},
                        {"sigma2", artifacts::vec(summary.sigma2)},
                        {"gamma2", artifacts::vec(summary.gamma2)},
                        {"correction_applied", summary.correction_applied},
                        {"d", summary.d},
                        {"switch_margin", summary.switch_margin},
                        {"no_variation", summary.no_variation},
                        {"warnings", summary.warnings},
                        {"bootstrap", nlohmann::json{{"B", test.B},
                                                     {"delta", test.delta},
                                                     {"ci", {artifacts::num(test.ci_lo), artifacts::num(test.ci_hi)}},
                                                     {"reject", test.reject},
                                                     {"dropped_na", test.dropped_na},
                                                     {"seed", test.seed}}}};
}

inline void write_theta_replicates_csv(const std::vector<double>& reps, const std::string& path) {
  std::string out = "b,theta\n";
  for (std::size_t b = 0; b < reps.size(); ++b)
    out += std::to_string(b + 1) + "," + artifacts::cell(reps[b]) + "\n";
  artifacts::write_text(path, out);
}

}  // namespace caltrend
