#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "caltrend/caltrend.hpp"

namespace {

using caltrend::RunConfig;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output;
  std::optional<double> c;
  std::optional<double> delta;
  std::optional<int> bootstrap;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config_path, "run configuration file (line format or JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
  cmd->add_option("--threads", flags.threads, "worker budget (overrides config and CALTREND_THREADS)");
  cmd->add_option("--output", flags.output, "output directory (overrides config)");
  cmd->add_option("--c", flags.c, "model-selection simplicity constant (overrides config)");
  cmd->add_option("--delta", flags.delta, "boundary-test margin (overrides config)");
  cmd->add_option("--bootstrap", flags.bootstrap, "bootstrap replicate count (overrides config)");
  cmd->add_flag("--quiet", flags.quiet, "suppress progress events");
}

RunConfig resolve(const CommonFlags& flags) {
  RunConfig config = caltrend::parse_config_file(flags.config_path);
  if (flags.seed) config.seed = *flags.seed;
  if (flags.threads) config.threads = *flags.threads;
  if (flags.output) config.output_dir = *flags.output;
  if (flags.c) config.c = *flags.c;
  if (flags.delta) config.delta = *flags.delta;
  if (flags.bootstrap) config.bootstrap_B = *flags.bootstrap;
  return config;
}

// Rebuild the inputs of the reporting decision from previously written
// artifacts (selection.json + theta.json).
caltrend::Recommendation recommend_from_artifacts(const std::string& input_dir) {
  namespace fs = std::filesystem;
  auto load = [](const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw caltrend::Error("cli", "recommend", "cannot open '" + path.string() + "'");
    return nlohmann::json::parse(in);
  };
  const nlohmann::json selection = load(fs::path(input_dir) / "selection.json");
  const nlohmann::json theta = load(fs::path(input_dir) / "theta.json");

  caltrend::SelectionResult sel;
  sel.c = selection.at("c").get<double>();
  sel.epsilon = selection.at("epsilon").is_null() ? caltrend::kNaN : selection["epsilon"].get<double>();
  int index = 0;
  for (const auto& item : selection.at("candidates")) {
    caltrend::CandidateReport report;
    report.label = item.at("label").get<std::string>();
    report.complexity = item.at("complexity").get<int>();
    report.pseudorisk_value =
        item.at("pseudorisk").is_null() ? caltrend::kNaN : item["pseudorisk"].get<double>();
    report.failed = item.at("failed").get<bool>();
    report.is_minimizer = item.at("minimizer").get<bool>();
    report.is_selected = item.at("selected").get<bool>();
    if (report.is_minimizer) sel.minimizer_index = index;
    if (report.is_selected) sel.selected_index = index;
    sel.candidates.push_back(std::move(report));
    ++index;
  }

  caltrend::BootstrapTest test;
  const nlohmann::json& boot = theta.at("bootstrap");
  test.B = boot.at("B").get<int>();
  test.delta = boot.at("delta").get<double>();
  test.ci_lo = boot.at("ci")[0].is_null() ? caltrend::kNaN : boot["ci"][0].get<double>();
  test.ci_hi = boot.at("ci")[1].is_null() ? caltrend::kNaN : boot["ci"][1].get<double>();
  test.reject = boot.at("reject").get<bool>();
  return caltrend::recommend(sel, test);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caltrend: calendar-time treatment effect trends for sequential target-trial emulations"};
  app.require_subcommand(1);

  CommonFlags estimate_flags, simulate_flags;
  auto* estimate = app.add_subcommand("estimate", "run the full estimation pipeline on one input");
  add_common(estimate, estimate_flags, true);
  auto* simulate = app.add_subcommand("simulate", "run a simulation campaign over a scenario grid");
  add_common(simulate, simulate_flags, true);

  std::string recommend_input, recommend_output;
  auto* recommend_cmd =
      app.add_subcommand("recommend", "derive the reporting recommendation from written artifacts");
  recommend_cmd->add_option("--input", recommend_input, "directory holding selection.json and theta.json")
      ->required();
  recommend_cmd->add_option("--output", recommend_output, "optional path for recommendation.json");

  std::string template_output;
  auto* template_cmd = app.add_subcommand("export-config-template", "print an annotated configuration file");
  template_cmd->add_option("--output", template_output, "write to a file instead of standard output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*estimate) {
      caltrend::run_estimate(resolve(estimate_flags), estimate_flags.quiet);
    } else if (*simulate) {
      caltrend::run_simulate(resolve(simulate_flags), simulate_flags.quiet);
    } else if (*recommend_cmd) {
      const auto rec = recommend_from_artifacts(recommend_input);
      const auto j = caltrend::recommendation_json(rec);
      if (!recommend_output.empty())
        caltrend::artifacts::write_json(recommend_output, j);
      else
        std::cout << j.dump(2) << '\n';
    } else if (*template_cmd) {
      if (!template_output.empty())
        caltrend::artifacts::write_text(template_output, caltrend::config_template());
      else
        std::cout << caltrend::config_template();
    }
  } catch (const caltrend::Error& err) {
    std::cerr << "error: " << err.what() << "\n(module " << err.module() << ", stage " << err.stage()
              << ")\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
