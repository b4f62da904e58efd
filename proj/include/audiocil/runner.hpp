#pragma once

#include "audiocil/audio_data.hpp"
#include "audiocil/eval.hpp"
#include "audiocil/learners.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace audiocil {

inline constexpr int kResultsSchemaVersion = 1;

struct SyntheticConfig {
  std::size_t classes = 10;
  std::size_t train_per_class = 30;
  std::size_t test_per_class = 10;
};

/// Experiment description. JSON keys are the snake_case field names; unknown
/// keys are rejected.
struct ExperimentConfig {
  std::string dataset;
  std::string manifest_path;
  std::string model_name;
  std::size_t memory_size = 2000;
  std::size_t init_cls = 0;
  std::size_t increment = 0;
  std::string convnet_type = "tiny-cnn";
  std::uint64_t seed = 1993;
  bool isfew_shot = false;
  std::size_t kshot = 5;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t feature_dim = 64;
  FeatureConfig feature;
  Hyperparameters hyperparameters;
  SyntheticConfig synthetic;
  std::string output_dir;
  bool plot = false;

  void validate() const;
  nlohmann::json to_json() const;
  LearnerConfig learner_config() const;
};

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

struct StageFailure {
  std::size_t stage = 0;
  ErrorCode code = ErrorCode::kState;
  std::string message;
};

struct ResultsBundle {
  ExperimentConfig config;
  std::vector<Label> class_order;
  std::vector<std::size_t> classes_seen;
  AccuracyMatrix matrix;
  std::vector<double> stage_seconds;
  std::vector<std::size_t> buffer_occupancy;
  std::vector<std::string> warnings;
  std::optional<StageFailure> failure;

  bool complete() const { return !failure; }
  nlohmann::json to_json() const;
};

/// Runs every task of the schedule, evaluating after each. When
/// config.output_dir is set, results.json (and curve.svg if config.plot) are
/// written there. A failing stage flushes the partial bundle, then rethrows
/// with the stage index prefixed.
ResultsBundle run_experiment(const ExperimentConfig& config);

void write_results(const ResultsBundle& bundle, const std::filesystem::path& path);

struct CurveSeries {
  std::string label;
  std::vector<std::size_t> classes_seen;
  std::vector<double> accuracy;
};

CurveSeries curve_of(const ResultsBundle& bundle);
CurveSeries curve_from_json(const nlohmann::json& bundle);

/// Incremental-accuracy curves (x = classes seen, y = A_i) as an SVG file.
/// All series must share the same x values.
void emit_plot(const std::vector<CurveSeries>& series, const std::filesystem::path& out);
std::string render_svg(const std::vector<CurveSeries>& series);

}  // namespace audiocil
