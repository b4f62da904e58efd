#include "audiocil/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace audiocil {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& message) {
  fail(ErrorCode::kConfig, "config key '" + key + "': " + message);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string normalize_key(std::string key) {
  for (char& c : key) {
    if (c == '-' || c == ' ') c = '_';
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return key;
}

std::string suggest(const std::string& key, const std::vector<std::string>& allowed) {
  const std::string norm = normalize_key(key);
  std::string best;
  std::size_t best_d = 3;
  for (const auto& a : allowed) {
    if (a == norm) return a;
    const std::size_t d = edit_distance(norm, a);
    if (d < best_d) {
      best_d = d;
      best = a;
    }
  }
  return best;
}

// Field visitors: one list drives parsing, key checking and serialization.
template <class F>
void root_fields(ExperimentConfig& c, F&& f) {
  f("dataset", c.dataset);
  f("manifest_path", c.manifest_path);
  f("model_name", c.model_name);
  f("memory_size", c.memory_size);
  f("init_cls", c.init_cls);
  f("increment", c.increment);
  f("convnet_type", c.convnet_type);
  f("seed", c.seed);
  f("isfew_shot", c.isfew_shot);
  f("kshot", c.kshot);
  f("epochs", c.epochs);
  f("learning_rate", c.learning_rate);
  f("batch_size", c.batch_size);
  f("feature_dim", c.feature_dim);
  f("output_dir", c.output_dir);
  f("plot", c.plot);
}

template <class F>
void feature_fields(FeatureConfig& c, F&& f) {
  f("sample_rate", c.sample_rate);
  f("n_fft", c.n_fft);
  f("hop", c.hop);
  f("n_mels", c.n_mels);
  f("floor_epsilon", c.floor_epsilon);
  f("clip_seconds", c.clip_seconds);
}

template <class F>
void hp_fields(Hyperparameters& h, F&& f) {
  f("kd_temperature", h.kd_temperature);
  f("kd_weight", h.kd_weight);
  f("lambda_ewc", h.lambda_ewc);
  f("gamma_acil", h.gamma_acil);
  f("acil_expansion_dim", h.acil_expansion_dim);
  f("pod_weight", h.pod_weight);
  f("gem_margin", h.gem_margin);
  f("der_clone_branch", h.der_clone_branch);
  f("bic_val_fraction", h.bic_val_fraction);
  f("bic_steps", h.bic_steps);
  f("bic_lr", h.bic_lr);
  f("metasc_steps", h.metasc_steps);
  f("metasc_lr", h.metasc_lr);
  f("metasc_scale", h.metasc_scale);
  f("metasc_log_var", h.metasc_log_var);
}

template <class F>
void synthetic_fields(SyntheticConfig& s, F&& f) {
  f("classes", s.classes);
  f("train_per_class", s.train_per_class);
  f("test_per_class", s.test_per_class);
}

const std::vector<std::string> kSections = {"feature", "hyperparameters", "synthetic"};

struct NameCollector {
  std::vector<std::string>& names;
  template <class T>
  void operator()(const char* key, T&) {
    names.push_back(key);
  }
};

struct Reader {
  const json& obj;
  std::string prefix;

  const json* find(const char* key) const {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }
  void operator()(const char* key, std::string& out) const {
    if (const json* v = find(key)) {
      if (!v->is_string()) config_error(prefix + key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void operator()(const char* key, bool& out) const {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) config_error(prefix + key, "expected a boolean");
      out = v->get<bool>();
    }
  }
  void operator()(const char* key, std::uint64_t& out) const {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        config_error(prefix + key, "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void operator()(const char* key, double& out) const {
    if (const json* v = find(key)) {
      if (!v->is_number()) config_error(prefix + key, "expected a number");
      out = v->get<double>();
    }
  }
};

struct Writer {
  json& out;
  template <class T>
  void operator()(const char* key, const T& value) {
    out[key] = value;
  }
};

void check_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& prefix) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) != allowed.end()) continue;
    std::string msg = "unknown config key '" + prefix + key + "'";
    const std::string s = suggest(key, allowed);
    if (!s.empty()) msg += "; did you mean '" + prefix + s + "'?";
    fail(ErrorCode::kConfig, msg);
  }
}

template <class T, class Visit>
void read_section(const json& doc, const char* name, T& target, Visit visit) {
  auto it = doc.find(name);
  if (it == doc.end()) return;
  if (!it->is_object()) config_error(name, "expected an object");
  std::vector<std::string> names;
  visit(target, NameCollector{names});
  const std::string prefix = std::string(name) + ".";
  check_keys(*it, names, prefix);
  visit(target, Reader{*it, prefix});
}

template <class T, class Visit>
json write_section(const T& source, Visit visit) {
  json out = json::object();
  T copy = source;
  visit(copy, Writer{out});
  return out;
}

std::string registry_list(const std::vector<std::string>& keys) {
  std::string s;
  for (const auto& k : keys) s += (s.empty() ? "" : ", ") + k;
  return "{" + s + "}";
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) fail(ErrorCode::kConfig, "config document must be a JSON object");
  ExperimentConfig c;
  std::vector<std::string> names;
  root_fields(c, NameCollector{names});
  names.insert(names.end(), kSections.begin(), kSections.end());
  check_keys(doc, names, "");
  for (const char* key : {"dataset", "model_name", "init_cls", "increment"}) {
    if (!doc.contains(key)) fail(ErrorCode::kConfig, std::string("missing required config key '") + key + "'");
  }
  root_fields(c, Reader{doc, ""});
  read_section(doc, "feature", c.feature, [](FeatureConfig& t, auto&& f) { feature_fields(t, f); });
  read_section(doc, "hyperparameters", c.hyperparameters, [](Hyperparameters& t, auto&& f) { hp_fields(t, f); });
  read_section(doc, "synthetic", c.synthetic, [](SyntheticConfig& t, auto&& f) { synthetic_fields(t, f); });
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void ExperimentConfig::validate() const {
  std::vector<std::string> datasets;
  for (const auto& d : dataset_registry()) datasets.push_back(d.key);
  if (std::find(datasets.begin(), datasets.end(), dataset) == datasets.end()) {
    config_error("dataset", "unknown dataset '" + dataset + "'; available: " + registry_list(datasets));
  }
  std::vector<std::string> models;
  for (const auto& l : learner_registry()) models.push_back(l.key);
  if (std::find(models.begin(), models.end(), model_name) == models.end()) {
    config_error("model_name", "unknown model '" + model_name + "'; available: " + registry_list(models));
  }
  for (const auto& l : learner_registry()) {
    if (l.key == model_name && l.uses_buffer && memory_size == 0) {
      config_error("memory_size", "must be positive for " + model_name + " (it keeps a replay buffer)");
    }
  }
  std::vector<std::string> backbones;
  for (const auto& b : backbone_registry()) backbones.push_back(b.key);
  if (std::find(backbones.begin(), backbones.end(), convnet_type) == backbones.end()) {
    config_error("convnet_type", "unknown backbone '" + convnet_type + "'; available: " + registry_list(backbones));
  }
  if (dataset != "synthetic" && manifest_path.empty()) config_error("manifest_path", "required for dataset " + dataset);
  if (init_cls == 0) config_error("init_cls", "must be positive");
  if (increment == 0) config_error("increment", "must be positive");
  if (epochs == 0) config_error("epochs", "must be positive");
  if (batch_size == 0) config_error("batch_size", "must be positive");
  if (!(learning_rate > 0)) config_error("learning_rate", "must be positive");
  if (feature_dim == 0) config_error("feature_dim", "must be positive");
  if (isfew_shot && kshot == 0) config_error("kshot", "must be positive in few-shot mode");
  if (synthetic.classes < 2) config_error("synthetic.classes", "must be at least 2");
  if (synthetic.train_per_class == 0) config_error("synthetic.train_per_class", "must be positive");
  if (synthetic.test_per_class == 0) config_error("synthetic.test_per_class", "must be positive");
  try {
    feature.validate();
  } catch (const Error& e) {
    config_error("feature", e.what());
  }
  try {
    hyperparameters.validate();
  } catch (const Error& e) {
    config_error("hyperparameters", e.what());
  }
}

json ExperimentConfig::to_json() const {
  json out = write_section(*this, [](ExperimentConfig& t, auto&& f) { root_fields(t, f); });
  out["feature"] = write_section(feature, [](FeatureConfig& t, auto&& f) { feature_fields(t, f); });
  out["hyperparameters"] = write_section(hyperparameters, [](Hyperparameters& t, auto&& f) { hp_fields(t, f); });
  out["synthetic"] = write_section(synthetic, [](SyntheticConfig& t, auto&& f) { synthetic_fields(t, f); });
  return out;
}

LearnerConfig ExperimentConfig::learner_config() const {
  LearnerConfig lc;
  lc.algorithm = model_name;
  lc.model.convnet_type = convnet_type;
  lc.model.feature_dim = feature_dim;
  lc.model.seed = seed;
  lc.training.epochs = epochs;
  lc.training.learning_rate = learning_rate;
  lc.training.batch_size = batch_size;
  lc.hp = hyperparameters;
  lc.memory_size = memory_size;
  lc.seed = seed;
  lc.few_shot = {isfew_shot, increment, kshot};
  return lc;
}

json ResultsBundle::to_json() const {
  json out;
  out["schema_version"] = kResultsSchemaVersion;
  out["toolkit_version"] = kVersion;
  out["status"] = failure ? "aborted" : "complete";
  if (failure) {
    out["error"] = {{"stage", failure->stage}, {"code", static_cast<int>(failure->code)}, {"message", failure->message}};
  } else {
    out["error"] = nullptr;
  }
  out["config"] = config.to_json();
  out["class_order"] = class_order;
  out["classes_seen"] = classes_seen;
  out["accuracy_matrix"] = matrix.rows();
  out["curve"] = matrix.per_stage();
  out["average_accuracy"] = matrix.stages() ? json(matrix.average()) : json(nullptr);
  out["stage_seconds"] = stage_seconds;
  out["buffer_occupancy"] = buffer_occupancy;
  out["warnings"] = warnings;
  return out;
}

void write_results(const ResultsBundle& bundle, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write results to " + path.string());
  out << bundle.to_json().dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

namespace {

void flush(const ResultsBundle& bundle) {
  const auto& cfg = bundle.config;
  if (cfg.output_dir.empty()) return;
  const std::filesystem::path dir(cfg.output_dir);
  write_results(bundle, dir / "results.json");
  if (cfg.plot && bundle.complete()) emit_plot({curve_of(bundle)}, dir / "curve.svg");
}

}  // namespace

ResultsBundle run_experiment(const ExperimentConfig& config) {
  config.validate();
  ResultsBundle bundle;
  bundle.config = config;

  const bool synthetic = config.dataset == "synthetic";
  const Dataset train =
      synthetic ? generate_synthetic(config.synthetic.classes, config.synthetic.train_per_class, config.seed, Split::kTrain)
                : load_dataset(config.dataset, config.manifest_path, Split::kTrain);
  const Dataset test =
      synthetic ? generate_synthetic(config.synthetic.classes, config.synthetic.test_per_class, config.seed, Split::kTest)
                : load_dataset(config.dataset, config.manifest_path, Split::kTest);

  ScenarioSpec spec;
  spec.num_classes = train.class_set().size();
  spec.init_cls = config.init_cls;
  spec.increment = config.increment;
  spec.seed = config.seed;
  spec.few_shot = config.isfew_shot;
  spec.n_way = config.increment;
  spec.k_shot = config.kshot;
  const TaskSchedule schedule = build_schedule(spec, train.class_set());
  bundle.class_order = schedule.class_order();

  const auto cache = FeatureStore::cache_from_env();
  FeatureStore train_features(train, config.feature, cache);
  FeatureStore test_features(test, config.feature, cache);
  auto learner = make_learner(config.learner_config());

  for (std::size_t i = 0; i < schedule.num_tasks(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    try {
      TaskData data = task_data(schedule, i, train);
      if (config.isfew_shot && i > 0) {
        data = sample_few_shot(data, config.increment, config.kshot,
                               derive_seed(config.seed, "session/" + std::to_string(i)));
      }
      bundle.warnings.insert(bundle.warnings.end(), data.warnings.begin(), data.warnings.end());
      learner->run_task(schedule, i, data, train_features);
      const StageEvaluation ev = evaluate_stage(*learner, schedule, i, test, test_features);
      for (const auto& w : ev.warnings) bundle.warnings.push_back("stage " + std::to_string(i) + ": " + w);
      bundle.matrix.add_stage(ev.per_task, ev.accuracy);
      bundle.classes_seen.push_back(schedule.classes_seen(i));
      bundle.buffer_occupancy.push_back(learner->buffer() ? learner->buffer()->total() : 0);
      bundle.stage_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    } catch (const Error& e) {
      bundle.failure = StageFailure{i, e.code(), e.what()};
      flush(bundle);
      fail(e.code(), "stage " + std::to_string(i) + ": " + e.what());
    }
  }
  flush(bundle);
  return bundle;
}

CurveSeries curve_of(const ResultsBundle& bundle) {
  return {bundle.config.model_name, bundle.classes_seen, bundle.matrix.per_stage()};
}

CurveSeries curve_from_json(const json& bundle) {
  try {
    CurveSeries s;
    s.label = bundle.at("config").at("model_name").get<std::string>();
    s.classes_seen = bundle.at("classes_seen").get<std::vector<std::size_t>>();
    s.accuracy = bundle.at("curve").get<std::vector<double>>();
    if (s.classes_seen.size() != s.accuracy.size()) fail(ErrorCode::kCorruptData, "curve and classes_seen differ in length");
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptData, std::string("not a results bundle: ") + e.what());
  }
}

std::string render_svg(const std::vector<CurveSeries>& series) {
  if (series.empty()) fail(ErrorCode::kInvalidArgument, "nothing to plot");
  const auto& xs = series.front().classes_seen;
  if (xs.empty()) fail(ErrorCode::kInvalidArgument, "curve '" + series.front().label + "' has no points");
  for (const auto& s : series) {
    if (s.classes_seen != xs) {
      fail(ErrorCode::kDimensionMismatch, "curve '" + s.label + "' has a different schedule shape than '" +
                                              series.front().label + "'");
    }
  }
  const double width = 640, height = 420, left = 70, right = 160, top = 30, bottom = 60;
  const double pw = width - left - right, ph = height - top - bottom;
  const double x_min = static_cast<double>(xs.front());
  const double x_max = static_cast<double>(xs.back());
  auto px = [&](double x) { return x_max > x_min ? left + (x - x_min) / (x_max - x_min) * pw : left + pw / 2; };
  auto py = [&](double y) { return top + (1.0 - y) * ph; };
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::string out;
  char buf[512];
  auto emit = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  emit("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", width,
       height, width, height);
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left, top + ph, left + pw, top + ph);
  emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left, top, left, top + ph);
  for (int k = 0; k <= 5; ++k) {
    const double y = k / 5.0;
    emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n", left, py(y), left + pw, py(y));
    emit("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%.1f</text>\n", left - 6, py(y) + 4, y);
  }
  for (std::size_t x : xs) {
    emit("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%zu</text>\n", px(static_cast<double>(x)), top + ph + 18, x);
  }
  emit("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">Number of classes</text>\n", left + pw / 2, height - 15);
  emit("<text transform=\"translate(18 %.2f) rotate(-90)\" text-anchor=\"middle\">Top-1 accuracy</text>\n",
       top + ph / 2);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % 10];
    std::string points;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", k ? " " : "", px(static_cast<double>(xs[k])),
                    py(series[s].accuracy[k]));
      points += buf;
    }
    out += "<polyline class=\"curve\" fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(color) +
           "\" points=\"" + points + "\"/>\n";
    for (std::size_t k = 0; k < xs.size(); ++k) {
      emit("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", px(static_cast<double>(xs[k])),
           py(series[s].accuracy[k]), color);
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" stroke-width=\"2\"/>\n", left + pw + 15,
         ly, left + pw + 35, ly, color);
    std::string label;
    for (char c : series[s].label) {
      if (c == '<') label += "&lt;";
      else if (c == '>') label += "&gt;";
      else if (c == '&') label += "&amp;";
      else label += c;
    }
    emit("<text class=\"legend\" x=\"%.2f\" y=\"%.2f\">", left + pw + 40, ly + 4);
    out += label + "</text>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

void emit_plot(const std::vector<CurveSeries>& series, const std::filesystem::path& out) {
  const std::string svg = render_svg(series);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) fail(ErrorCode::kIo, "cannot write plot to " + out.string());
  f << svg;
}

}  // namespace audiocil
