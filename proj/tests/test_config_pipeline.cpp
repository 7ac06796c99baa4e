#include <gtest/gtest.h>

#include <filesystem>

#include "caltrend/caltrend.hpp"
#include "test_util.hpp"

using namespace caltrend;

namespace {

RunConfig tiny_scenario_config(const std::string& outdir) {
  RunConfig config;
  ScenarioConfig sc;
  sc.shift_rule = "linear";
  sc.outcome_model = "linear_effect_mod";
  sc.M = 6;
  sc.n = 400;
  sc.pool_size = 1500;
  config.scenario = sc;
  config.bootstrap_B = 150;
  config.seed = 42;
  config.output_dir = outdir;
  return config;
}

TEST(Config, DefaultsMatchContract) {
  const RunConfig config = config_from_json(json::object());
  EXPECT_DOUBLE_EQ(config.c, 0.25);
  EXPECT_DOUBLE_EQ(config.alpha, 0.05);
  EXPECT_DOUBLE_EQ(config.delta, 0.05);
  EXPECT_EQ(config.bootstrap_B, 2000);
  EXPECT_DOUBLE_EQ(config.theta_d, 0.005);
  EXPECT_DOUBLE_EQ(config.theta_switch_margin, 0.1);
  EXPECT_TRUE(config.theta_correction);
  ASSERT_EQ(config.candidates.size(), 5u);
  EXPECT_EQ(config.candidates[0].kind, "constant");
  EXPECT_EQ(config.candidates[4].kind, "spline");
}

TEST(Config, UnknownKeyIsNamed) {
  EXPECT_THROW(
      {
        try {
          config_from_json(parse_config_text("selection.z = 0.5\n"));
        } catch (const Error& e) {
          EXPECT_NE(std::string(e.what()).find("selection.z"), std::string::npos);
          throw;
        }
      },
      Error);
  EXPECT_THROW(config_from_json(parse_config_text("candidates = [{\"kind\":\"linear\",\"oops\":1}]\n")),
               Error);
}

TEST(Config, LineFormatRoundTrip) {
  RunConfig config = tiny_scenario_config("x");
  config.c = 0.5;
  config.trial_weights = {1.0, 2.0, 1.0, 1.0, 1.0, 0.5};
  config.learners.outcome.family = LearnerSpec::Family::tree_ensemble;
  config.learners.outcome.hyper["num_trees"] = 50;
  const std::string text = config_to_text(config);
  const RunConfig back = config_from_json(parse_config_text(text));
  EXPECT_EQ(config_to_json(back), config_to_json(config));
}

TEST(Config, JsonFileEquivalence) {
  testutil::TempDir dir("cfg");
  const RunConfig config = tiny_scenario_config("x");
  testutil::spit(dir.file("a.json"), config_to_json(config).dump());
  testutil::spit(dir.file("a.conf"), config_to_text(config));
  const RunConfig from_json_file = parse_config_file(dir.file("a.json"));
  const RunConfig from_text_file = parse_config_file(dir.file("a.conf"));
  EXPECT_EQ(config_to_json(from_json_file), config_to_json(from_text_file));
}

TEST(Config, TemplateParses) {
  const RunConfig config = config_from_json(parse_config_text(config_template()));
  ASSERT_TRUE(config.scenario.has_value());
  EXPECT_EQ(config.scenario->shift_rule, "linear");
  EXPECT_DOUBLE_EQ(config.c, 0.25);
}

TEST(Artifacts, NaTokens) {
  EXPECT_EQ(artifacts::cell(kNaN), "NA");
  EXPECT_EQ(artifacts::cell(1.0 / 0.0), "NA");
  EXPECT_TRUE(artifacts::num(kNaN).is_null());
  EXPECT_EQ(artifacts::cell(0.5), "0.5");
}

BootstrapTest make_test(double lo, double hi, double delta) {
  BootstrapTest test;
  test.B = 1000;
  test.delta = delta;
  test.ci_lo = lo;
  test.ci_hi = hi;
  test.reject = lo > delta && hi < 1.0 - delta;
  return test;
}

SelectionResult make_selection(const std::string& label) {
  SelectionResult sel;
  CandidateReport constant{"constant", 1, 0.0, 0.0, false, label == "constant", label == "constant"};
  CandidateReport linear{"linear", 2, 0.0, 0.0, false, label == "linear", label == "linear"};
  sel.candidates = {constant, linear};
  sel.minimizer_index = label == "constant" ? 0 : 1;
  sel.selected_index = sel.minimizer_index;
  return sel;
}

TEST(Recommend, DecisionGrid) {
  // Constant row of the grid: common effect regardless of the test.
  for (auto [lo, hi] : {std::pair{0.01, 0.2}, std::pair{0.9, 0.99}, std::pair{0.2, 0.8}}) {
    const auto rec = recommend(make_selection("constant"), make_test(lo, hi, 0.05));
    EXPECT_EQ(rec.action, "Report common effect");
    EXPECT_TRUE(rec.constant_selected);
  }
  // Non-constant, fail at the lower margin: population-shift acknowledgment.
  {
    const auto rec = recommend(make_selection("linear"), make_test(0.01, 0.2, 0.05));
    EXPECT_EQ(rec.test_outcome, "fail_low");
    EXPECT_NE(rec.action.find("Acknowledge changes across time driven by changes in underlying populations"),
              std::string::npos);
    EXPECT_NE(rec.action.find("standardization to a fixed population"), std::string::npos);
  }
  // Non-constant, fail at the upper margin: time-varying effect.
  {
    const auto rec = recommend(make_selection("linear"), make_test(0.9, 0.99, 0.05));
    EXPECT_EQ(rec.test_outcome, "fail_high");
    EXPECT_EQ(rec.action, "Report calendar time-varying effect");
  }
  // Non-constant, reject: time-varying effect plus standardization hint.
  {
    const auto rec = recommend(make_selection("linear"), make_test(0.2, 0.8, 0.05));
    EXPECT_EQ(rec.test_outcome, "reject");
    EXPECT_NE(rec.action.find("Report calendar time-varying effect"), std::string::npos);
    EXPECT_NE(rec.action.find("standardization"), std::string::npos);
  }
  // Interval touching both margins: documented extension.
  {
    const auto rec = recommend(make_selection("linear"), make_test(0.01, 0.99, 0.05));
    EXPECT_EQ(rec.test_outcome, "straddle");
    EXPECT_NE(rec.action.find("Inconclusive"), std::string::npos);
  }
}

TEST(Pipeline, EstimateEmitsAllArtifacts) {
  testutil::TempDir dir("estimate");
  const RunConfig config = tiny_scenario_config(dir.file("out"));
  const auto out = run_estimate(config, true);
  for (const char* name : {"effect_curve.csv", "standardization.csv", "msm_fits.json", "curves.csv",
                           "selection.json", "selection.csv", "theta.json", "recommendation.json",
                           "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(out / name)) << name;
  }
  // No silent NaN serialization anywhere.
  for (const char* name : {"effect_curve.csv", "standardization.csv", "curves.csv", "selection.csv"}) {
    const std::string content = testutil::slurp((out / name).string());
    EXPECT_EQ(content.find("nan"), std::string::npos) << name;
    EXPECT_EQ(content.find("inf"), std::string::npos) << name;
  }
}

TEST(Pipeline, RerunsAreByteIdenticalModuloManifest) {
  testutil::TempDir dir("determinism");
  RunConfig config = tiny_scenario_config(dir.file("a"));
  run_estimate(config, true);
  config.output_dir = dir.file("b");
  run_estimate(config, true);
  for (const char* name : {"effect_curve.csv", "standardization.csv", "msm_fits.json", "curves.csv",
                           "selection.json", "selection.csv", "theta.json", "recommendation.json"}) {
    EXPECT_EQ(testutil::slurp(dir.file("a") + "/" + name), testutil::slurp(dir.file("b") + "/" + name))
        << name;
  }
  config.output_dir = dir.file("c");
  config.seed = 43;
  run_estimate(config, true);
  EXPECT_NE(testutil::slurp(dir.file("a") + "/effect_curve.csv"),
            testutil::slurp(dir.file("c") + "/effect_curve.csv"));
}

TEST(Pipeline, PercentDisplayScalesCurves) {
  testutil::TempDir dir("percent");
  RunConfig config = tiny_scenario_config(dir.file("plain"));
  run_estimate(config, true);
  config.output_dir = dir.file("pct");
  config.percent_display = true;
  run_estimate(config, true);
  const std::string plain = testutil::slurp(dir.file("plain") + "/effect_curve.csv");
  const std::string pct = testutil::slurp(dir.file("pct") + "/effect_curve.csv");
  // Same layout, different scale.
  const auto second_field = [](const std::string& csv) {
    const auto line_start = csv.find('\n') + 1;
    const auto a = csv.find(',', line_start) + 1;
    const auto b = csv.find(',', a);
    return std::stod(csv.substr(a, b - a));
  };
  EXPECT_NEAR(second_field(pct), 100.0 * second_field(plain), 1e-9);
}

TEST(Pipeline, InputValidation) {
  RunConfig config;  // neither csv nor scenario
  EXPECT_THROW(run_estimate(config, true), Error);
  config.input_csv = "x.csv";
  config.scenario = ScenarioConfig{};
  EXPECT_THROW(run_estimate(config, true), Error);
}

TEST(Pipeline, SimulateGridAggregatesAndReplicateDeterminism) {
  testutil::TempDir dir("grid");
  RunConfig config;
  ScenarioConfig sc;
  sc.shift_rule = "none";
  sc.outcome_model = "constant";
  sc.M = 5;
  sc.pool_size = 1200;
  config.grid_scenarios = {sc};
  config.grid_n = {200};
  config.grid_replicates = 3;
  config.grid_c = {0.0, 0.25};
  config.bootstrap_B = 120;
  config.seed = 9;
  config.output_dir = dir.file("sim");
  run_simulate(config, true);

  const std::string freq = testutil::slurp(dir.file("sim") + "/selection_frequencies.csv");
  EXPECT_NE(freq.find("scenario,n,c,candidate,count,frequency"), std::string::npos);
  EXPECT_NE(freq.find("shift-none_outcome-constant,200,0.25,"), std::string::npos);
  const std::string theta_curves = testutil::slurp(dir.file("sim") + "/theta_curves.csv");
  EXPECT_NE(theta_curves.find("shift-none_outcome-constant,200,5,"), std::string::npos);
  const std::string rates = testutil::slurp(dir.file("sim") + "/rejection_rates.csv");
  EXPECT_NE(rates.find(",3,"), std::string::npos);  // 3 replicates aggregated

  const std::string rep1 =
      testutil::slurp(dir.file("sim") + "/shift-none_outcome-constant/n200/rep1.json");
  ASSERT_FALSE(rep1.empty());

  // Rerunning only replicate 1 reproduces its file byte for byte.
  config.output_dir = dir.file("again");
  config.grid_replicate_filter = 1;
  run_simulate(config, true);
  const std::string rep1_again =
      testutil::slurp(dir.file("again") + "/shift-none_outcome-constant/n200/rep1.json");
  EXPECT_EQ(rep1, rep1_again);
}

TEST(Pipeline, CsvInputPath) {
  testutil::TempDir dir("csvinput");
  const auto pool = synth_pool(1000, 3);
  const auto spec = ScenarioSpec::make(ShiftRule::none, OutcomeModel::constant, 4, 150, 5);
  export_csv(generate(spec, pool), dir.file("panel.csv"));

  RunConfig config;
  config.input_csv = dir.file("panel.csv");
  config.bootstrap_B = 120;
  config.output_dir = dir.file("out");
  config.candidates = {{"constant", 3, {}, 0}, {"linear", 3, {}, 0}};
  // At 150 subjects a treatment arm can miss a categorical reference cell
  // entirely, which the plain linear family rejects as singular.
  config.learners.outcome.hyper["ridge"] = 1e-8;
  const auto out = run_estimate(config, true);
  EXPECT_TRUE(std::filesystem::exists(out / "recommendation.json"));
}

}  // namespace
