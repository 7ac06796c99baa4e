#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caltrend/artifacts.hpp"
#include "caltrend/config.hpp"
#include "caltrend/csv_io.hpp"
#include "caltrend/estimators.hpp"
#include "caltrend/msm.hpp"
#include "caltrend/nuisance.hpp"
#include "caltrend/selection.hpp"
#include "caltrend/simulate.hpp"
#include "caltrend/theta.hpp"

namespace caltrend {

/// Structured progress events on standard error:
///   [caltrend] stage=<name> <detail> elapsed_ms=<t>
class Progress {
 public:
  explicit Progress(bool quiet) : quiet_(quiet), start_(std::chrono::steady_clock::now()) {}

  void stage(const std::string& name, const std::string& detail = "") const {
    if (quiet_) return;
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_);
    std::cerr << "[caltrend] stage=" << name;
    if (!detail.empty()) std::cerr << ' ' << detail;
    std::cerr << " elapsed_ms=" << elapsed.count() << '\n';
  }

 private:
  bool quiet_;
  std::chrono::steady_clock::time_point start_;
};

/// Reporting decision from the (selected MSM) x (boundary-test outcome)
/// grid. `straddle` covers a CI touching both margins, which the grid has no
/// cell for; the `no_variation` branch covers a degenerate theta.
struct Recommendation {
  std::string selected_msm;
  bool constant_selected = false;
  std::string test_outcome;  // reject | fail_low | fail_high | straddle | no_variation
  double theta_ci_lo = kNaN;
  double theta_ci_hi = kNaN;
  double delta = 0.05;
  std::string action;
  std::string notes;
};

inline Recommendation recommend(const SelectionResult& selection, const BootstrapTest& test) {
  if (selection.selected_index < 0)
    throw Error("cli", "recommend", "selection result carries no selected candidate");
  Recommendation rec;
  const auto& selected = selection.candidates[static_cast<std::size_t>(selection.selected_index)];
  rec.selected_msm = selected.label;
  rec.constant_selected = selected.label == "constant";
  rec.theta_ci_lo = test.ci_lo;
  rec.theta_ci_hi = test.ci_hi;
  rec.delta = test.delta;

  const bool has_ci = std::isfinite(test.ci_lo) && std::isfinite(test.ci_hi);
  const bool touches_low = has_ci && test.ci_lo <= test.delta;
  const bool touches_high = has_ci && test.ci_hi >= 1.0 - test.delta;
  if (!has_ci)
    rec.test_outcome = "no_variation";
  else if (test.reject)
    rec.test_outcome = "reject";
  else if (touches_low && touches_high)
    rec.test_outcome = "straddle";
  else if (touches_low)
    rec.test_outcome = "fail_low";
  else
    rec.test_outcome = "fail_high";

  if (rec.constant_selected) {
    rec.action = "Report common effect";
    if (rec.test_outcome == "fail_low" || rec.test_outcome == "no_variation")
      rec.notes = "No detectable variation across treatment initiation time.";
    else
      rec.notes = "Variation across initiation time is not clinically meaningful at this sample size.";
    return rec;
  }
  if (rec.test_outcome == "fail_low") {
    rec.action =
        "Acknowledge changes across time driven by changes in underlying populations; consider "
        "standardization to a fixed population and reporting a common effect in that population";
    rec.notes = "Covariate shift in effect modifiers explains the observed variation.";
  } else if (rec.test_outcome == "fail_high") {
    rec.action = "Report calendar time-varying effect";
    rec.notes = "Possible changes in underlying treatment efficacy.";
  } else if (rec.test_outcome == "reject") {
    rec.action =
        "Report calendar time-varying effect; consider standardization to a fixed population to further "
        "study changes in treatment efficacy";
    rec.notes = "Covariate shift in effect modifiers and possible changes in treatment efficacy.";
  } else {
    rec.action = "Inconclusive: the interval spans both boundary margins";
    rec.notes =
        "The reporting grid has no cell for an interval touching both margins; increase the bootstrap "
        "size or sample size.";
  }
  return rec;
}

inline nlohmann::json recommendation_json(const Recommendation& rec) {
  return nlohmann::json{{"selected_msm", rec.selected_msm},
                        {"constant_selected", rec.constant_selected},
                        {"test_outcome", rec.test_outcome},
                        {"theta_ci", {artifacts::num(rec.theta_ci_lo), artifacts::num(rec.theta_ci_hi)}},
                        {"delta", rec.delta},
                        {"action", rec.action},
                        {"notes", rec.notes}};
}

/// In-memory results of one full analysis pass.
struct AnalysisResult {
  EffectCurve curve;
  StandardizationMatrix standardization;
  std::vector<MsmFit> fits;           // one per surviving candidate
  std::vector<std::string> fit_labels;
  SelectionResult selection;
  ThetaSummary theta;
  std::vector<double> theta_reps;
  BootstrapTest test;
  Recommendation recommendation;
  Warnings warnings;
};

namespace detail {

inline TrialWeights resolve_weights(const RunConfig& config, int M) {
  if (config.trial_weights.empty()) return TrialWeights::ones(M);
  if (static_cast<int>(config.trial_weights.size()) != M)
    throw Error("cli", "config", "weights length " + std::to_string(config.trial_weights.size()) +
                                     " does not match trial count " + std::to_string(M));
  TrialWeights weights = TrialWeights::ones(M);
  for (int m = 0; m < M; ++m) weights.w[m] = config.trial_weights[static_cast<std::size_t>(m)];
  return weights;
}

inline std::vector<MsmBasis> resolve_candidates(const RunConfig& config, int M) {
  std::vector<MsmBasis> out;
  for (const auto& cc : config.candidates) out.push_back(cc.build(M));
  return out;
}

}  // namespace detail

/// The full pipeline on a panel: cross-fitted nuisances, trial effects,
/// cross-trial standardization, candidate projections, double cross-fit
/// selection, theta decomposition with bootstrap test, and the reporting
/// recommendation.
inline AnalysisResult analyze_panel(const TrialPanel& panel, const RunConfig& config, std::uint64_t seed,
                                    const Progress& progress) {
  AnalysisResult result;
  const int M = panel.n_trials();
  const TrialWeights weights = detail::resolve_weights(config, M);
  const auto candidates = detail::resolve_candidates(config, M);

  progress.stage("crossfit", "n=" + std::to_string(panel.n_subjects()) + " M=" + std::to_string(M));
  CrossfitOptions cf;
  cf.cross_trial = true;
  cf.threads = config.threads;
  const NuisanceFit fit = predict_crossfit(panel, config.learners, config.truncation, seed, cf);
  for (const auto& w : fit.warnings) result.warnings.push_back(w);

  progress.stage("estimate", "trials 1.." + std::to_string(M));
  result.curve = estimate_chi(panel, fit);
  CrossTrialOptions ct;
  ct.if_budget_bytes = config.if_budget_mb * (std::int64_t(1) << 20);
  ct.scratch_dir = std::filesystem::temp_directory_path();
  ct.threads = config.threads;
  progress.stage("standardize", "cells " + std::to_string(M) + "x" + std::to_string(M));
  result.standardization = estimate_cross_trial(panel, fit, ct);

  progress.stage("project", std::to_string(candidates.size()) + " candidate bases");
  for (const auto& basis : candidates) {
    try {
      result.fits.push_back(fit_projection(result.curve, basis, weights, config.alpha));
      result.fit_labels.push_back(basis.label());
    } catch (const Error& err) {
      result.warnings.push_back("projection '" + basis.label() + "' failed: " + err.what());
    }
  }
  if (result.fits.empty()) throw Error("msm_projection", "fit", "no candidate basis could be fitted");

  progress.stage("select", "double cross-fit, c=" + artifacts::cell(config.c));
  SelectionOptions sel;
  sel.policy = config.truncation;
  sel.alpha = config.alpha;
  sel.threads = config.threads;
  result.selection = crossfit_selection(panel, candidates, config.learners, weights, config.c,
                                        mix_seed(seed, streams::kSelection), sel);

  progress.stage("decompose", "theta with correction=" + std::string(config.theta_correction ? "on" : "off"));
  DecomposeOptions dec;
  dec.d = config.theta_d;
  dec.switch_margin = config.theta_switch_margin;
  dec.correction = config.theta_correction;
  result.theta = decompose(result.standardization, dec);

  progress.stage("bootstrap", "B=" + std::to_string(config.bootstrap_B));
  BootstrapOptions boot;
  boot.B = config.bootstrap_B;
  boot.decompose = dec;
  boot.threads = config.threads;
  if (config.bootstrap_B < 100)
    result.warnings.push_back("bootstrap B < 100: percentile interval may be unstable");
  result.theta_reps = bootstrap_theta(result.standardization, config.bootstrap_B, seed, boot);
  result.test = test_boundary(result.theta_reps, config.delta);
  result.test.theta_hat = result.theta.theta;
  result.test.seed = seed;

  result.recommendation = recommend(result.selection, result.test);
  return result;
}

/// Resolve the configured input into a panel.
inline TrialPanel load_input(const RunConfig& config, Warnings* warnings) {
  const bool has_csv = !config.input_csv.empty();
  const bool has_scenario = config.scenario.has_value();
  if (has_csv == has_scenario)
    throw Error("cli", "input", "configure exactly one of input.csv or input.scenario");
  if (has_csv) {
    const CovariateSchema schema = config.schema_covariates.empty()
                                       ? simulation_schema()
                                       : CovariateSchema(config.schema_covariates);
    auto result = ingest_csv(config.input_csv, schema);
    if (warnings)
      for (const auto& w : result.warnings) warnings->push_back(w);
    return std::move(result.panel);
  }
  const ScenarioConfig& sc = *config.scenario;
  CovariatePool pool;
  if (!sc.pool_csv.empty()) {
    const CovariateSchema schema = config.schema_covariates.empty()
                                       ? simulation_schema()
                                       : CovariateSchema(config.schema_covariates);
    pool = pool_from_panel(ingest_csv(sc.pool_csv, schema).panel);
  } else {
    pool = synth_pool(sc.pool_size, config.seed);
  }
  return generate(sc.build(config.seed), pool);
}

inline std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buffer;
}

/// Run the estimate pipeline and write every artifact under output.dir.
/// Everything except the manifest (which carries a wall-clock timestamp) is
/// a pure function of (config, seed).
inline std::filesystem::path run_estimate(const RunConfig& config, bool quiet = false) {
  const Progress progress(quiet);
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);

  Warnings input_warnings;
  progress.stage("input", config.input_csv.empty() ? "scenario" : config.input_csv);
  const TrialPanel panel = load_input(config, &input_warnings);
  AnalysisResult result = analyze_panel(panel, config, config.seed, progress);

  const double scale = config.percent_display ? 100.0 : 1.0;
  progress.stage("write", dir.string());
  write_effect_curve_csv(result.curve, (dir / "effect_curve.csv").string(), scale);
  write_standardization_csv(result.standardization, (dir / "standardization.csv").string(), scale);

  nlohmann::json fits = nlohmann::json::array();
  for (const auto& fit : result.fits) fits.push_back(msm_fit_json(fit, scale));
  artifacts::write_json((dir / "msm_fits.json").string(), fits);
  write_curves_csv(result.curve, result.fits, (dir / "curves.csv").string(), scale);

  artifacts::write_json((dir / "selection.json").string(), selection_json(result.selection));
  write_selection_csv(result.selection, (dir / "selection.csv").string());
  artifacts::write_json((dir / "theta.json").string(), theta_json(result.theta, result.test));
  if (config.write_theta_replicates)
    write_theta_replicates_csv(result.theta_reps, (dir / "theta_replicates.csv").string());
  artifacts::write_json((dir / "recommendation.json").string(), recommendation_json(result.recommendation));

  Warnings all = input_warnings;
  all.insert(all.end(), result.warnings.begin(), result.warnings.end());
  nlohmann::json manifest{{"generated_at", timestamp_utc()},
                          {"seed", config.seed},
                          {"config", config_to_json(config)},
                          {"artifacts",
                           {"effect_curve.csv", "standardization.csv", "msm_fits.json", "curves.csv",
                            "selection.json", "selection.csv", "theta.json", "recommendation.json"}},
                          {"warnings", all}};
  artifacts::write_json((dir / "manifest.json").string(), manifest);
  progress.stage("done");
  return dir;
}

/// Simulation campaign: per (scenario, n, replicate) run the full pipeline
/// on a generated panel, write a per-replicate summary, and aggregate
/// selection frequencies (per c), mean theta_m curves, and rejection rates.
inline std::filesystem::path run_simulate(const RunConfig& config, bool quiet = false) {
  if (config.grid_scenarios.empty() || config.grid_n.empty() || config.grid_replicates < 1)
    throw Error("cli", "simulate", "grid.scenarios, grid.n and grid.replicates are required");
  const Progress progress(quiet);
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);
  const std::vector<double> c_grid = config.grid_c.empty() ? std::vector<double>{config.c} : config.grid_c;

  // aggregates
  struct SelKey {
    std::string scenario;
    std::int64_t n;
    double c;
    std::string candidate;
    bool operator<(const SelKey& o) const {
      return std::tie(scenario, n, c, candidate) < std::tie(o.scenario, o.n, o.c, o.candidate);
    }
  };
  std::map<SelKey, int> selection_counts;
  struct CurveKey {
    std::string scenario;
    std::int64_t n;
    bool operator<(const CurveKey& o) const { return std::tie(scenario, n) < std::tie(o.scenario, o.n); }
  };
  std::map<CurveKey, std::pair<Eigen::VectorXd, int>> theta_sums;
  std::map<CurveKey, std::pair<int, int>> rejections;  // (reject count, replicates)
  nlohmann::json replicate_log = nlohmann::json::array();

  for (std::size_t s = 0; s < config.grid_scenarios.size(); ++s) {
    const ScenarioConfig& sc = config.grid_scenarios[s];
    for (std::size_t ni = 0; ni < config.grid_n.size(); ++ni) {
      const std::int64_t n = config.grid_n[ni];
      for (int rep = 0; rep < config.grid_replicates; ++rep) {
        if (config.grid_replicate_filter >= 0 && rep != config.grid_replicate_filter) continue;
        const std::uint64_t rep_seed =
            mix_seed(config.seed, streams::kReplicate, static_cast<std::uint64_t>(s),
                     static_cast<std::uint64_t>(ni), static_cast<std::uint64_t>(rep));
        ScenarioConfig sized = sc;
        sized.n = n;
        const std::string label = sized.build(rep_seed).label();
        const std::filesystem::path rep_dir = dir / label / ("n" + std::to_string(n));
        std::filesystem::create_directories(rep_dir);
        progress.stage("replicate", label + " n=" + std::to_string(n) + " rep=" + std::to_string(rep));
        nlohmann::json entry{{"scenario", label}, {"n", n}, {"replicate", rep}, {"seed", rep_seed}};
        try {
          RunConfig rep_config = config;
          rep_config.seed = rep_seed;
          CovariatePool pool;
          if (!sized.pool_csv.empty())
            pool = pool_from_panel(ingest_csv(sized.pool_csv, simulation_schema()).panel);
          else
            pool = synth_pool(sized.pool_size, rep_seed);
          const TrialPanel panel = generate(sized.build(rep_seed), pool);
          const Progress silent(true);
          const AnalysisResult result = analyze_panel(panel, rep_config, rep_seed, silent);

          for (double c : c_grid) {
            const int sel = result.selection.select_at(c);
            const std::string chosen = result.selection.candidates[static_cast<std::size_t>(sel)].label;
            ++selection_counts[SelKey{label, n, c, chosen}];
          }
          auto& [theta_sum, theta_count] = theta_sums[CurveKey{label, n}];
          if (theta_sum.size() == 0) theta_sum = Eigen::VectorXd::Zero(sized.M);
          for (int m = 0; m < sized.M; ++m)
            if (std::isfinite(result.theta.theta_m[m])) theta_sum[m] += result.theta.theta_m[m];
          ++theta_count;
          auto& [reject_count, total] = rejections[CurveKey{label, n}];
          reject_count += result.test.reject ? 1 : 0;
          ++total;

          nlohmann::json rep_json{{"seed", rep_seed},
                                  {"selection", selection_json(result.selection)},
                                  {"theta", theta_json(result.theta, result.test)},
                                  {"recommendation", recommendation_json(result.recommendation)}};
          artifacts::write_json((rep_dir / ("rep" + std::to_string(rep) + ".json")).string(), rep_json);
          entry["status"] = "ok";
        } catch (const std::exception& err) {
          entry["status"] = std::string("failed: ") + err.what();
        }
        replicate_log.push_back(std::move(entry));
      }
    }
  }

  std::string sel_csv = "scenario,n,c,candidate,count,frequency\n";
  for (const auto& [key, count] : selection_counts) {
    const auto total_it = rejections.find(CurveKey{key.scenario, key.n});
    const int total = total_it == rejections.end() ? 0 : total_it->second.second;
    sel_csv += key.scenario + "," + std::to_string(key.n) + "," + artifacts::cell(key.c) + "," +
               key.candidate + "," + std::to_string(count) + "," +
               artifacts::cell(total > 0 ? static_cast<double>(count) / total : kNaN) + "\n";
  }
  artifacts::write_text((dir / "selection_frequencies.csv").string(), sel_csv);

  std::string theta_csv = "scenario,n,m,mean_theta_m,replicates\n";
  for (const auto& [key, value] : theta_sums) {
    const auto& [sum, count] = value;
    for (int m = 0; m < sum.size(); ++m)
      theta_csv += key.scenario + "," + std::to_string(key.n) + "," + std::to_string(m + 1) + "," +
                   artifacts::cell(count > 0 ? sum[m] / count : kNaN) + "," + std::to_string(count) + "\n";
  }
  artifacts::write_text((dir / "theta_curves.csv").string(), theta_csv);

  std::string rej_csv = "scenario,n,delta,rejections,replicates,rate\n";
  for (const auto& [key, value] : rejections) {
    const auto& [reject_count, total] = value;
    rej_csv += key.scenario + "," + std::to_string(key.n) + "," + artifacts::cell(config.delta) + "," +
               std::to_string(reject_count) + "," + std::to_string(total) + "," +
               artifacts::cell(total > 0 ? static_cast<double>(reject_count) / total : kNaN) + "\n";
  }
  artifacts::write_text((dir / "rejection_rates.csv").string(), rej_csv);

  artifacts::write_json((dir / "manifest.json").string(),
                        nlohmann::json{{"generated_at", timestamp_utc()},
                                       {"seed", config.seed},
                                       {"config", config_to_json(config)},
                                       {"replicates", replicate_log}});
  progress.stage("done");
  return dir;
}

}  // namespace caltrend
