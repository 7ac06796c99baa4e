#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caltrend/msm.hpp"
#include "caltrend/nuisance.hpp"
#include "caltrend/simulate.hpp"

namespace caltrend {

using json = nlohmann::json;

/// One candidate trend model as configured: kind plus its shape parameters.
struct CandidateConfig {
  std::string kind;           // constant | linear | cubic | poly | spline | saturated
  int degree = 3;             // poly only
  std::vector<double> knots;  // spline only; empty means tercile defaults
  int n_knots = 0;            // spline shorthand when knots empty

  MsmBasis build(int M) const {
    if (kind == "constant") return MsmBasis::constant(M);
    if (kind == "linear") return MsmBasis::linear(M);
    if (kind == "cubic") return MsmBasis::polynomial(M, 3);
    if (kind == "poly") return MsmBasis::polynomial(M, degree);
    if (kind == "saturated") return MsmBasis::saturated(M);
    if (kind == "spline") {
      if (!knots.empty()) return MsmBasis::natural_spline(M, knots);
      return MsmBasis::natural_spline(M, default_internal_knots(M, n_knots > 0 ? n_knots : 2));
    }
    throw Error("cli", "config", "unknown candidate kind '" + kind + "'");
  }
};

struct ScenarioConfig {
  std::string shift_rule = "none";
  std::string outcome_model = "constant";
  int M = 36;
  std::int64_t n = 1000;
  double sigma_y = 0.05;
  std::int64_t pool_size = 10000;
  std::string pool_csv;  // optional plasmode pool (panel CSV, baseline trial rows)

  ScenarioSpec build(std::uint64_t seed) const {
    auto spec = ScenarioSpec::make(shift_rule_from_string(shift_rule),
                                   outcome_model_from_string(outcome_model), M, n, seed);
    spec.sigma_y = sigma_y;
    return spec;
  }
};

/// Full run configuration. Parsed from either JSON or the line-oriented
/// `dotted.key = value` format (the two are interconvertible); unknown keys
/// are rejected by name.
struct RunConfig {
  // input: exactly one of csv / scenario
  std::string input_csv;
  std::optional<ScenarioConfig> scenario;
  std::vector<Covariate> schema_covariates;  // empty: simulation schema

  LearnerSet learners;
  TruncationPolicy truncation;
  std::vector<CandidateConfig> candidates;
  std::vector<double> trial_weights;  // empty: all ones

  double c = 0.25;
  double alpha = 0.05;
  double delta = 0.05;
  int bootstrap_B = 2000;
  double theta_d = 0.005;
  double theta_switch_margin = 0.1;
  bool theta_correction = true;
  bool write_theta_replicates = false;

  std::uint64_t seed = 1;
  std::string output_dir = "caltrend_out";
  bool percent_display = false;
  int threads = 0;
  std::int64_t if_budget_mb = 1024;

  // simulate grid
  std::vector<ScenarioConfig> grid_scenarios;
  std::vector<std::int64_t> grid_n;
  int grid_replicates = 0;
  std::vector<double> grid_c;
  int grid_replicate_filter = -1;  // >= 0: run only that replicate index

  RunConfig() {
    learners.outcome.family = LearnerSpec::Family::linear;
    learners.propensity.family = LearnerSpec::Family::logistic;
    learners.membership.family = LearnerSpec::Family::logistic;
    candidates = {{"constant", 3, {}, 0}, {"linear", 3, {}, 0}, {"cubic", 3, {}, 0},
                  {"spline", 3, {}, 2}, {"spline", 3, {}, 3}};
  }
};

namespace detail {

inline const std::set<std::string>& allowed_keys() {
  static const std::set<std::string> keys = {
      "input.csv",
      "input.scenario.shift_rule",
      "input.scenario.outcome_model",
      "input.scenario.M",
      "input.scenario.n",
      "input.scenario.sigma_y",
      "input.scenario.pool_size",
      "input.scenario.pool_csv",
      "schema.covariates",
      "learners.outcome.family",
      "learners.outcome.hyper",
      "learners.propensity.family",
      "learners.propensity.hyper",
      "learners.membership.family",
      "learners.membership.hyper",
      "truncation.ps_quantile",
      "truncation.ratio_quantile",
      "truncation.hard_floor",
      "candidates",
      "weights",
      "selection.c",
      "alpha",
      "theta.delta",
      "theta.bootstrap",
      "theta.d",
      "theta.switch_margin",
      "theta.correction",
      "theta.write_replicates",
      "seed",
      "output.dir",
      "output.percent",
      "threads",
      "if_budget_mb",
      "grid.scenarios",
      "grid.n",
      "grid.replicates",
      "grid.c",
      "grid.replicate_filter",
  };
  return keys;
}

inline void collect_leaf_keys(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  if (!node.is_object()) {
    out.push_back(prefix);
    return;
  }
  // Hyperparameter maps and array-valued leaves are terminal nodes.
  if (allowed_keys().count(prefix)) {
    out.push_back(prefix);
    return;
  }
  for (const auto& [key, value] : node.items())
    collect_leaf_keys(value, prefix.empty() ? key : prefix + "." + key, out);
}

inline void reject_unknown_keys(const json& root) {
  std::vector<std::string> leaves;
  collect_leaf_keys(root, "", leaves);
  for (const auto& key : leaves)
    if (!allowed_keys().count(key)) throw Error("cli", "config", "unknown configuration key '" + key + "'");
}

inline json get_path(const json& root, const std::string& dotted) {
  const json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return json();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return *node;
}

inline void set_path(json& root, const std::string& dotted, json value) {
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline LearnerSpec learner_from_json(const json& family, const json& hyper) {
  LearnerSpec spec;
  if (!family.is_null()) spec.family = LearnerSpec::family_from_string(family.get<std::string>());
  if (!hyper.is_null()) {
    if (!hyper.is_object()) throw Error("cli", "config", "learner hyper must be an object");
    for (const auto& [key, value] : hyper.items()) spec.hyper[key] = value.get<double>();
  }
  spec.validate();
  return spec;
}

inline CovariateKind kind_from_string(const std::string& s) {
  if (s == "numeric") return CovariateKind::numeric;
  if (s == "binary") return CovariateKind::binary;
  if (s == "categorical") return CovariateKind::categorical;
  throw Error("cli", "config", "unknown covariate kind '" + s + "'");
}

inline std::string kind_to_string(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::numeric: return "numeric";
    case CovariateKind::binary: return "binary";
    case CovariateKind::categorical: return "categorical";
  }
  return "?";
}

inline ScenarioConfig scenario_from_json(const json& node) {
  ScenarioConfig sc;
  if (node.contains("shift_rule")) sc.shift_rule = node["shift_rule"].get<std::string>();
  if (node.contains("outcome_model")) sc.outcome_model = node["outcome_model"].get<std::string>();
  if (node.contains("M")) sc.M = node["M"].get<int>();
  if (node.contains("n")) sc.n = node["n"].get<std::int64_t>();
  if (node.contains("sigma_y")) sc.sigma_y = node["sigma_y"].get<double>();
  if (node.contains("pool_size")) sc.pool_size = node["pool_size"].get<std::int64_t>();
  if (node.contains("pool_csv")) sc.pool_csv = node["pool_csv"].get<std::string>();
  for (const auto& [key, value] : node.items()) {
    (void)value;
    static const std::set<std::string> ok = {"shift_rule", "outcome_model", "M",       "n",
                                             "sigma_y",    "pool_size",     "pool_csv"};
    if (!ok.count(key)) throw Error("cli", "config", "unknown scenario key '" + key + "'");
  }
  return sc;
}

inline json scenario_to_json(const ScenarioConfig& sc) {
  return json{{"shift_rule", sc.shift_rule}, {"outcome_model", sc.outcome_model}, {"M", sc.M},
              {"n", sc.n},                   {"sigma_y", sc.sigma_y},             {"pool_size", sc.pool_size},
              {"pool_csv", sc.pool_csv}};
}

}  // namespace detail

inline RunConfig config_from_json(const json& root) {
  detail::reject_unknown_keys(root);
  RunConfig config;
  auto get = [&root](const std::string& key) { return detail::get_path(root, key); };

  if (const auto v = get("input.csv"); !v.is_null()) config.input_csv = v.get<std::string>();
  if (!get("input.scenario.shift_rule").is_null() || !get("input.scenario.outcome_model").is_null() ||
      !get("input.scenario.n").is_null())
    config.scenario = detail::scenario_from_json(detail::get_path(root, "input.scenario"));

  if (const auto v = get("schema.covariates"); !v.is_null()) {
    for (const auto& item : v) {
      Covariate cov;
      cov.name = item.at("name").get<std::string>();
      cov.kind = detail::kind_from_string(item.at("kind").get<std::string>());
      if (item.contains("levels"))
        for (const auto& level : item["levels"]) cov.levels.push_back(level.get<std::string>());
      config.schema_covariates.push_back(std::move(cov));
    }
  }

  config.learners.outcome = detail::learner_from_json(get("learners.outcome.family"), get("learners.outcome.hyper"));
  if (get("learners.outcome.family").is_null()) config.learners.outcome.family = LearnerSpec::Family::linear;
  config.learners.propensity =
      detail::learner_from_json(get("learners.propensity.family"), get("learners.propensity.hyper"));
  if (get("learners.propensity.family").is_null())
    config.learners.propensity.family = LearnerSpec::Family::logistic;
  config.learners.membership =
      detail::learner_from_json(get("learners.membership.family"), get("learners.membership.hyper"));
  if (get("learners.membership.family").is_null())
    config.learners.membership.family = LearnerSpec::Family::logistic;

  if (const auto v = get("truncation.ps_quantile"); !v.is_null()) config.truncation.ps_quantile = v.get<double>();
  if (const auto v = get("truncation.ratio_quantile"); !v.is_null())
    config.truncation.ratio_quantile = v.get<double>();
  if (const auto v = get("truncation.hard_floor"); !v.is_null()) config.truncation.hard_floor = v.get<double>();
  config.truncation.validate();

  if (const auto v = get("candidates"); !v.is_null()) {
    config.candidates.clear();
    for (const auto& item : v) {
      CandidateConfig cc;
      cc.kind = item.at("kind").get<std::string>();
      if (item.contains("degree")) cc.degree = item["degree"].get<int>();
      if (item.contains("knots"))
        for (const auto& knot : item["knots"]) cc.knots.push_back(knot.get<double>());
      if (item.contains("n_knots")) cc.n_knots = item["n_knots"].get<int>();
      for (const auto& [key, value] : item.items()) {
        (void)value;
        static const std::set<std::string> ok = {"kind", "degree", "knots", "n_knots"};
        if (!ok.count(key)) throw Error("cli", "config", "unknown candidate key '" + key + "'");
      }
      config.candidates.push_back(std::move(cc));
    }
  }

  if (const auto v = get("weights"); !v.is_null())
    for (const auto& w : v) config.trial_weights.push_back(w.get<double>());

  if (const auto v = get("selection.c"); !v.is_null()) config.c = v.get<double>();
  if (const auto v = get("alpha"); !v.is_null()) config.alpha = v.get<double>();
  if (const auto v = get("theta.delta"); !v.is_null()) config.delta = v.get<double>();
  if (const auto v = get("theta.bootstrap"); !v.is_null()) config.bootstrap_B = v.get<int>();
  if (const auto v = get("theta.d"); !v.is_null()) config.theta_d = v.get<double>();
  if (const auto v = get("theta.switch_margin"); !v.is_null()) config.theta_switch_margin = v.get<double>();
  if (const auto v = get("theta.correction"); !v.is_null()) config.theta_correction = v.get<bool>();
  if (const auto v = get("theta.write_replicates"); !v.is_null())
    config.write_theta_replicates = v.get<bool>();
  if (const auto v = get("seed"); !v.is_null()) config.seed = v.get<std::uint64_t>();
  if (const auto v = get("output.dir"); !v.is_null()) config.output_dir = v.get<std::string>();
  if (const auto v = get("output.percent"); !v.is_null()) config.percent_display = v.get<bool>();
  if (const auto v = get("threads"); !v.is_null()) config.threads = v.get<int>();
  if (const auto v = get("if_budget_mb"); !v.is_null()) config.if_budget_mb = v.get<std::int64_t>();

  if (const auto v = get("grid.scenarios"); !v.is_null())
    for (const auto& item : v) config.grid_scenarios.push_back(detail::scenario_from_json(item));
  if (const auto v = get("grid.n"); !v.is_null())
    for (const auto& item : v) config.grid_n.push_back(item.get<std::int64_t>());
  if (const auto v = get("grid.replicates"); !v.is_null()) config.grid_replicates = v.get<int>();
  if (const auto v = get("grid.c"); !v.is_null())
    for (const auto& item : v) config.grid_c.push_back(item.get<double>());
  if (const auto v = get("grid.replicate_filter"); !v.is_null())
    config.grid_replicate_filter = v.get<int>();

  if (!(config.c >= 0.0)) throw Error("cli", "config", "selection.c must be nonnegative");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw Error("cli", "config", "alpha must be in (0,1)");
  if (!(config.delta > 0.0 && config.delta < 0.5)) throw Error("cli", "config", "theta.delta must be in (0,0.5)");
  if (config.bootstrap_B < 1) throw Error("cli", "config", "theta.bootstrap must be positive");
  return config;
}

inline json config_to_json(const RunConfig& config) {
  json root;
  auto set = [&root](const std::string& key, json value) { detail::set_path(root, key, std::move(value)); };
  if (!config.input_csv.empty()) set("input.csv", config.input_csv);
  if (config.scenario) detail::set_path(root, "input.scenario", detail::scenario_to_json(*config.scenario));
  if (!config.schema_covariates.empty()) {
    json covs = json::array();
    for (const auto& cov : config.schema_covariates) {
      json item{{"name", cov.name}, {"kind", detail::kind_to_string(cov.kind)}};
      if (!cov.levels.empty()) item["levels"] = cov.levels;
      covs.push_back(std::move(item));
    }
    set("schema.covariates", std::move(covs));
  }
  auto learner = [&set](const std::string& prefix, const LearnerSpec& spec) {
    set(prefix + ".family", LearnerSpec::family_to_string(spec.family));
    if (!spec.hyper.empty()) {
      json hyper = json::object();
      for (const auto& [key, value] : spec.hyper) hyper[key] = value;
      set(prefix + ".hyper", std::move(hyper));
    }
  };
  learner("learners.outcome", config.learners.outcome);
  learner("learners.propensity", config.learners.propensity);
  learner("learners.membership", config.learners.membership);
  set("truncation.ps_quantile", config.truncation.ps_quantile);
  set("truncation.ratio_quantile", config.truncation.ratio_quantile);
  set("truncation.hard_floor", config.truncation.hard_floor);
  json cands = json::array();
  for (const auto& cc : config.candidates) {
    json item{{"kind", cc.kind}};
    if (cc.kind == "poly") item["degree"] = cc.degree;
    if (cc.kind == "spline") {
      if (!cc.knots.empty())
        item["knots"] = cc.knots;
      else
        item["n_knots"] = cc.n_knots;
    }
    cands.push_back(std::move(item));
  }
  set("candidates", std::move(cands));
  if (!config.trial_weights.empty()) set("weights", config.trial_weights);
  set("selection.c", config.c);
  set("alpha", config.alpha);
  set("theta.delta", config.delta);
  set("theta.bootstrap", config.bootstrap_B);
  set("theta.d", config.theta_d);
  set("theta.switch_margin", config.theta_switch_margin);
  set("theta.correction", config.theta_correction);
  set("theta.write_replicates", config.write_theta_replicates);
  set("seed", config.seed);
  set("output.dir", config.output_dir);
  set("output.percent", config.percent_display);
  set("threads", config.threads);
  set("if_budget_mb", config.if_budget_mb);
  if (!config.grid_scenarios.empty()) {
    json scenarios = json::array();
    for (const auto& sc : config.grid_scenarios) scenarios.push_back(detail::scenario_to_json(sc));
    set("grid.scenarios", std::move(scenarios));
    set("grid.n", config.grid_n);
    set("grid.replicates", config.grid_replicates);
    if (!config.grid_c.empty()) set("grid.c", config.grid_c);
    if (config.grid_replicate_filter >= 0) set("grid.replicate_filter", config.grid_replicate_filter);
  }
  return root;
}

/// Parse the line-oriented form: `dotted.key = <json value>` per line,
/// `#` comments, blank lines ignored. A leading `{` switches to plain JSON.
inline json parse_config_text(const std::string& text) {
  std::size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return json::parse(text);
  json root = json::object();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::size_t eq = line.find('=');
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty())
        throw Error("cli", "config", "line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error("cli", "config", "line " + std::to_string(line_no) + ": empty key");
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare strings allowed
    }
    detail::set_path(root, key, std::move(parsed));
  }
  return root;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cli", "config", "cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return config_from_json(parse_config_text(buffer.str()));
}

/// Serialize to the line format: one sorted `key = value` per line; values
/// are JSON fragments, so the file parses back to the identical tree.
inline std::string config_to_text(const RunConfig& config) {
  const json root = config_to_json(config);
  std::vector<std::string> leaves;
  detail::collect_leaf_keys(root, "", leaves);
  std::sort(leaves.begin(), leaves.end());
  std::string out;
  for (const auto& key : leaves) {
    out += key;
    out += " = ";
    out += detail::get_path(root, key).dump();
    out += "\n";
  }
  return out;
}

inline std::string config_template() {
  return
      "# caltrend run configuration (dotted keys, JSON values; '#' comments)\n"
      "# Exactly one input: a trial CSV or a synthetic scenario.\n"
      "# input.csv = \"panel.csv\"\n"
      "input.scenario.shift_rule = \"linear\"      # none | linear | flexible\n"
      "input.scenario.outcome_model = \"constant\" # constant | linear | spline | effect_mod |\n"
      "                                          # linear_effect_mod | spline_effect_mod\n"
      "input.scenario.M = 36\n"
      "input.scenario.n = 5000\n"
      "input.scenario.sigma_y = 0.05\n"
      "input.scenario.pool_size = 10000\n"
      "# schema.covariates = [{\"name\":\"age\",\"kind\":\"numeric\"},\n"
      "#                      {\"name\":\"site\",\"kind\":\"categorical\",\"levels\":[\"A\",\"B\"]}]\n"
      "learners.outcome.family = \"linear\"        # linear | tree_ensemble\n"
      "learners.propensity.family = \"logistic\"   # logistic | tree_ensemble\n"
      "learners.membership.family = \"logistic\"   # logistic | multinomial_tree_ensemble\n"
      "# learners.outcome.hyper = {\"num_trees\": 500, \"max_depth\": 10}\n"
      "truncation.ps_quantile = 0.99\n"
      "truncation.ratio_quantile = 0.99\n"
      "truncation.hard_floor = 0.01\n"
      "candidates = [{\"kind\":\"constant\"},{\"kind\":\"linear\"},{\"kind\":\"cubic\"},"
      "{\"kind\":\"spline\",\"n_knots\":2},{\"kind\":\"spline\",\"n_knots\":3}]\n"
      "selection.c = 0.25\n"
      "alpha = 0.05\n"
      "theta.delta = 0.05\n"
      "theta.bootstrap = 2000\n"
      "theta.d = 0.005\n"
      "theta.switch_margin = 0.1\n"
      "theta.correction = true\n"
      "seed = 1\n"
      "output.dir = \"caltrend_out\"\n"
      "output.percent = false\n"
      "threads = 0\n"
      "if_budget_mb = 1024\n"
      "# Simulation campaigns (caltrend simulate):\n"
      "# grid.scenarios = [{\"shift_rule\":\"none\",\"outcome_model\":\"constant\",\"M\":12}]\n"
      "# grid.n = [1000, 5000]\n"
      "# grid.replicates = 100\n"
      "# grid.c = [0, 0.25, 0.5, 0.75, 1]\n";
}

}  // namespace caltrend
