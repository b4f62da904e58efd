#include "audiocil/audiocil.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

int report(aucil_status status) {
  if (status != AUCIL_OK) std::cerr << "error: " << aucil_last_error() << '\n';
  return static_cast<int>(status);
}

int print_registry(aucil_status (*list)(char**)) {
  char* text = nullptr;
  if (const auto st = list(&text); st != AUCIL_OK) return report(st);
  const auto entries = nlohmann::json::parse(text);
  aucil_string_free(text);
  for (const auto& e : entries) {
    std::string line = e.at("key").get<std::string>();
    line.resize(std::max<std::size_t>(line.size() + 2, 14), ' ');
    line += e.at("description").get<std::string>();
    std::cout << line << '\n';
  }
  return 0;
}

int run(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& output, bool plot) {
  aucil_config* config = nullptr;
  if (const auto st = aucil_config_load(config_path.c_str(), &config); st != AUCIL_OK) return report(st);
  aucil_status st = AUCIL_OK;
  if (seed) st = aucil_config_set_seed(config, *seed);
  if (st == AUCIL_OK && !output.empty()) st = aucil_config_set_output_dir(config, output.c_str());
  if (st == AUCIL_OK && plot) st = aucil_config_set_plot(config, 1);
  aucil_results* results = nullptr;
  if (st == AUCIL_OK) st = aucil_run_experiment(config, &results);
  if (st != AUCIL_OK) {
    aucil_config_free(config);
    return report(st);
  }

  size_t stages = 0;
  aucil_results_num_stages(results, &stages);
  for (size_t i = 0; i < stages; ++i) {
    double acc = 0.0;
    aucil_results_stage_accuracy(results, i, &acc);
    std::printf("stage %zu  A = %.4f\n", i, acc);
  }
  double avg = 0.0;
  aucil_results_average_accuracy(results, &avg);
  std::printf("average accuracy = %.4f\n", avg);

  char* cfg_json = nullptr;
  aucil_config_to_json(config, &cfg_json);
  const auto cfg = nlohmann::json::parse(cfg_json);
  aucil_string_free(cfg_json);
  const auto dir = cfg.at("output_dir").get<std::string>();
  if (dir.empty()) {
    char* text = nullptr;
    aucil_results_to_json(results, &text);
    std::cout << text << '\n';
    aucil_string_free(text);
  } else {
    std::cout << "results written to " << dir << "/results.json\n";
  }
  aucil_results_free(results);
  aucil_config_free(config);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audiocil - class-incremental audio classification toolkit"};
  app.set_version_flag("--version", std::string(aucil_version()));
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "run one experiment from a JSON config");
  std::string config_path, output;
  std::optional<std::uint64_t> seed;
  bool plot = false;
  run_cmd->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seed, "override the config seed");
  run_cmd->add_option("--output", output, "override the output directory");
  run_cmd->add_flag("--plot", plot, "also write curve.svg to the output directory");

  auto* models_cmd = app.add_subcommand("list-models", "list the learner registry");
  auto* datasets_cmd = app.add_subcommand("list-datasets", "list the dataset registry");

  auto* plot_cmd = app.add_subcommand("plot", "plot accuracy curves from results files");
  std::vector<std::string> inputs;
  std::string figure;
  plot_cmd->add_option("--inputs", inputs, "results JSON files")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", figure, "output SVG path")->required();

  CLI11_PARSE(app, argc, argv);

  if (*run_cmd) return run(config_path, seed, output, plot);
  if (*models_cmd) return print_registry(aucil_list_models);
  if (*datasets_cmd) return print_registry(aucil_list_datasets);
  if (*plot_cmd) {
    std::vector<const char*> paths;
    for (const auto& p : inputs) paths.push_back(p.c_str());
    const auto st = aucil_plot(paths.data(), paths.size(), figure.c_str());
    if (st == AUCIL_OK) std::cout << "wrote " << figure << '\n';
    return report(st);
  }
  return 0;
}
