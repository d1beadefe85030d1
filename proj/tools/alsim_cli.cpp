// Command-line front end: seeded experiment runs, config validation,
// synthetic pool generation, and learning-curve fits over metrics files.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "alsim/alsim.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  const auto root = alsim::load_config_file(config_path);
  const alsim::RunOutcome outcome = alsim::run_experiment(root);
  for (const auto& message : outcome.messages) {
    (outcome.exit_code == 0 ? std::cout : std::cerr) << message << '\n';
  }
  return outcome.exit_code;
}

int cmd_validate(const std::string& config_path) {
  const auto root = alsim::load_config_file(config_path);
  const auto problems = alsim::validate_config(root);
  if (problems.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  for (const auto& problem : problems) {
    std::cerr << problem.key << ": " << problem.reason << '\n';
  }
  return 1;
}

int cmd_synth(const std::string& config_path, const std::string& output_path) {
  const auto root = alsim::load_config_file(config_path);
  // Accept a bare synth config, {"synth": {...}}, or a full experiment
  // config with pool.synth.
  const nlohmann::json* node = &root;
  if (root.contains("pool") && root["pool"].contains("synth")) {
    node = &root["pool"]["synth"];
  } else if (root.contains("synth")) {
    node = &root["synth"];
  }
  std::vector<alsim::ConfigProblem> problems;
  const alsim::SynthConfig config =
      alsim::detail::parse_synth_config(*node, "synth", problems);
  if (!problems.empty()) {
    for (const auto& problem : problems) {
      std::cerr << problem.key << ": " << problem.reason << '\n';
    }
    return 1;
  }
  const alsim::Pool pool = alsim::generate_pool(config);
  alsim::save_pool(pool, output_path);
  std::cout << "wrote " << pool.frames.size() << " frames to " << output_path << '\n';
  return 0;
}

int cmd_fit(const std::string& metrics_path, const std::string& metric,
            const std::string& output_path) {
  const auto records = alsim::load_metrics(metrics_path);
  const auto rows = alsim::detail::fit_metric_groups(records, metric);
  if (rows.empty()) {
    std::cerr << "no fittable series for metric '" << metric << "' (need >= 4 points)\n";
    return 1;
  }
  alsim::detail::write_fit_rows(rows, output_path);
  std::cout << "wrote " << rows.size() << " fits to " << output_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-learning simulation harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_path;
  std::string metric = "accuracy";

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "JSON config file")->required();

  auto* validate = app.add_subcommand("validate", "Check a config file and report problems");
  validate->add_option("config", config_path, "JSON config file")->required();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic pool CSV");
  synth->add_option("config", config_path, "JSON config (bare synth object or full config)")
      ->required();
  synth->add_option("-o,--output", output_path, "Output pool CSV")->required();

  auto* fit = app.add_subcommand("fit", "Fit power-law curves to a metrics CSV");
  fit->add_option("metrics", config_path, "metrics.csv produced by run")->required();
  fit->add_option("--metric", metric, "Metric column to fit (default accuracy)");
  fit->add_option("-o,--output", output_path, "Output fits CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (validate->parsed()) return cmd_validate(config_path);
    if (synth->parsed()) return cmd_synth(config_path, output_path);
    if (fit->parsed()) return cmd_fit(config_path, metric, output_path);
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << '\n';
    return 1;
  }
  return 0;
}
