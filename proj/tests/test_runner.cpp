#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "audiocil/runner.hpp"
#include "support.hpp"

#include <regex>

using namespace audiocil;
using nlohmann::json;

namespace {

json minimal() { return {{"dataset", "synthetic"}, {"model_name", "finetune"}, {"init_cls", 4}, {"increment", 2}}; }

json fast(const std::string& model = "replay") {
  json doc = minimal();
  doc["model_name"] = model;
  doc["memory_size"] = 10;
  doc["epochs"] = 1;
  doc["batch_size"] = 8;
  doc["feature_dim"] = 8;
  doc["feature"] = {{"n_mels", 32}, {"clip_seconds", 0.5}};
  doc["synthetic"] = {{"classes", 10}, {"train_per_class", 4}, {"test_per_class", 2}};
  return doc;
}

std::pair<ErrorCode, std::string> error_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const Error& e) {
    return {e.code(), e.what()};
  }
  return {ErrorCode{}, ""};
}

json without_timing(json j) {
  j.erase("stage_seconds");
  return j;
}

json schema() { return testing::read_json(AUDIOCIL_SCHEMA_PATH); }

}  // namespace

TEST_CASE("minimal config takes documented defaults") {
  const auto c = parse_config(minimal());
  CHECK(c.seed == 1993);
  CHECK(c.memory_size == 2000);
  CHECK(c.convnet_type == "tiny-cnn");
  CHECK_FALSE(c.isfew_shot);
  CHECK(c.kshot == 5);
  CHECK(c.hyperparameters.kd_temperature == 2.0);
  CHECK(c.hyperparameters.lambda_ewc == 5000.0);
  CHECK(c.hyperparameters.acil_expansion_dim == 1024);
  CHECK(c.feature.n_mels == 64);
}

TEST_CASE("unknown keys are rejected with a suggestion") {
  json doc = minimal();
  doc["memory-size"] = 10;
  auto [code, msg] = error_of(doc);
  CHECK(code == ErrorCode::kConfig);
  CHECK(msg.find("memory-size") != std::string::npos);
  CHECK(msg.find("memory_size") != std::string::npos);

  doc = minimal();
  doc["hyperparameters"] = {{"kd_temprature", 3.0}};
  std::tie(code, msg) = error_of(doc);
  CHECK(code == ErrorCode::kConfig);
  CHECK(msg.find("kd_temperature") != std::string::npos);
}

TEST_CASE("type and constraint errors name the offending key") {
  const std::vector<std::pair<json, std::string>> cases = {
      {{{"init_cls", "four"}}, "init_cls"},
      {{{"init_cls", 0}}, "init_cls"},
      {{{"increment", 0}}, "increment"},
      {{{"seed", -3}}, "seed"},
      {{{"learning_rate", "fast"}}, "learning_rate"},
      {{{"isfew_shot", 1}}, "isfew_shot"},
      {{{"epochs", 2.5}}, "epochs"},
      {{{"hyperparameters", {{"gamma_acil", -1.0}}}}, "gamma_acil"},
      {{{"feature", {{"n_mels", "many"}}}}, "n_mels"},
      {{{"dataset", "ls-100"}}, "manifest_path"},
      {{{"model_name", "replay"}, {"memory_size", 0}}, "memory_size"},
      {{{"model_name", "resnet"}}, "model_name"},
  };
  for (const auto& [patch, key] : cases) {
    json doc = minimal();
    doc.merge_patch(patch);
    auto [code, msg] = error_of(doc);
    INFO(patch.dump());
    CHECK(code == ErrorCode::kConfig);
    CHECK(msg.find(key) != std::string::npos);
  }
  for (const auto& key : {"dataset", "model_name", "init_cls", "increment"}) {
    json doc = minimal();
    doc.erase(key);
    auto [code, msg] = error_of(doc);
    CHECK(code == ErrorCode::kConfig);
    CHECK(msg.find(key) != std::string::npos);
  }
  CHECK(error_of(json::array()).first == ErrorCode::kConfig);
  CHECK_THROWS_AS(parse_config(std::string("{not json")), Error);
}

TEST_CASE("accepted configs round-trip losslessly") {
  json doc = fast();
  doc["hyperparameters"] = {{"kd_temperature", 3.5}, {"der_clone_branch", true}};
  doc["seed"] = 77;
  const auto c = parse_config(doc);
  const json once = c.to_json();
  const auto back = parse_config(once);
  CHECK(back.to_json() == once);
  CHECK(back.hyperparameters.kd_temperature == 3.5);
  CHECK(back.seed == 77);
  CHECK(parse_config(once.dump()).to_json() == once);
}

TEST_CASE("config files load from disk") {
  const auto dir = testing::temp_dir("runner-config");
  {
    std::ofstream f(dir / "c.json");
    f << fast().dump();
  }
  CHECK(parse_config_file(dir / "c.json").model_name == "replay");
  CHECK_THROWS_AS(parse_config_file(dir / "missing.json"), Error);
}

TEST_CASE("run: ten classes, init 4, increment 2 gives four stages and ten matrix entries") {
  const auto dir = testing::temp_dir("runner-run");
  json doc = fast();
  doc["output_dir"] = dir.string();
  doc["plot"] = true;
  const auto bundle = run_experiment(parse_config(doc));
  CHECK(bundle.complete());
  CHECK(bundle.matrix.stages() == 4);
  std::size_t entries = 0;
  for (const auto& row : bundle.matrix.rows()) entries += row.size();
  CHECK(entries == 10);
  CHECK(bundle.classes_seen == std::vector<std::size_t>{4, 6, 8, 10});
  CHECK(bundle.matrix.per_stage().size() == 4);
  for (auto occ : bundle.buffer_occupancy) CHECK(occ <= 10);

  const json written = testing::read_json(dir / "results.json");
  CHECK(written["schema_version"] == kResultsSchemaVersion);
  CHECK(written["status"] == "complete");
  CHECK(testing::schema_errors(schema(), written).empty());
  CHECK(std::filesystem::exists(dir / "curve.svg"));
}

TEST_CASE("run is deterministic modulo timing") {
  const auto a = run_experiment(parse_config(fast("icarl"))).to_json();
  const auto b = run_experiment(parse_config(fast("icarl"))).to_json();
  CHECK(without_timing(a) == without_timing(b));
  json other = fast("icarl");
  other["seed"] = 5;
  const auto c = run_experiment(parse_config(other)).to_json();
  CHECK(c["class_order"] != a["class_order"]);
}

TEST_CASE("a failing stage flushes partial results, then rethrows with the stage index") {
  const auto dir = testing::temp_dir("runner-abort");
  json doc = fast("finetune");
  doc["isfew_shot"] = true;
  doc["kshot"] = 10;  // more shots than the 4 training clips per class
  doc["output_dir"] = dir.string();
  doc["plot"] = true;
  try {
    run_experiment(parse_config(doc));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientData);
    CHECK(std::string(e.what()).rfind("stage 1:", 0) == 0);
  }
  const json partial = testing::read_json(dir / "results.json");
  CHECK(partial["status"] == "aborted");
  CHECK(partial["error"]["stage"] == 1);
  CHECK(partial["curve"].size() == 1);
  CHECK(testing::schema_errors(schema(), partial).empty());
  CHECK_FALSE(std::filesystem::exists(dir / "curve.svg"));
}

TEST_CASE("schema rejects malformed bundles") {
  const json good = run_experiment(parse_config(fast("finetune"))).to_json();
  CHECK(testing::schema_errors(schema(), good).empty());
  json extra = good;
  extra["surprise"] = 1;
  CHECK_FALSE(testing::schema_errors(schema(), extra).empty());
  json bad = good;
  bad["curve"][0] = 1.5;
  CHECK_FALSE(testing::schema_errors(schema(), bad).empty());
  json missing = good;
  missing.erase("accuracy_matrix");
  CHECK_FALSE(testing::schema_errors(schema(), missing).empty());
}

TEST_CASE("plots: x values, one labelled curve per bundle, shape mismatch") {
  const CurveSeries a{"finetune", {4, 6, 8, 10}, {1.0, 0.5, 0.3, 0.2}};
  const CurveSeries b{"replay", {4, 6, 8, 10}, {1.0, 0.8, 0.7, 0.6}};
  const CurveSeries c{"icarl", {4, 6, 8, 10}, {1.0, 0.9, 0.8, 0.7}};
  const std::string one = render_svg({a});
  const std::string svg = render_svg({a, b, c});
  auto count = [](const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
  };
  CHECK(count(one, "class=\"curve\"") == 1);
  CHECK(count(svg, "class=\"curve\"") == 3);
  for (const auto& label : {"finetune", "replay", "icarl"}) CHECK(svg.find(label) != std::string::npos);
  // Every polyline has four points.
  const std::regex poly("class=\"curve\"[^>]*points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it) {
    const std::string pts = (*it)[1];
    CHECK(count(pts, ",") == 4);
  }
  for (const auto& x : {">4<", ">6<", ">8<", ">10<"}) CHECK(svg.find(x) != std::string::npos);

  const CurveSeries d{"der", {5, 10}, {1.0, 0.5}};
  try {
    render_svg({a, d});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
  CHECK_THROWS_AS(render_svg({}), Error);

  const auto bundle = run_experiment(parse_config(fast("finetune")));
  const auto from_json = curve_from_json(bundle.to_json());
  CHECK(from_json.classes_seen == std::vector<std::size_t>{4, 6, 8, 10});
  CHECK(from_json.label == "finetune");
  const auto dir = testing::temp_dir("runner-plot");
  emit_plot({from_json, curve_of(bundle)}, dir / "fig.svg");
  CHECK(std::filesystem::file_size(dir / "fig.svg") > 0);
}
