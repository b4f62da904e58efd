#include "audiocil/audiocil.h"

#include "audiocil/runner.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

struct aucil_config {
  audiocil::ExperimentConfig value;
};

struct aucil_results {
  audiocil::ResultsBundle value;
};

namespace {

thread_local std::string g_last_error;

aucil_status set_error(aucil_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <class F>
aucil_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return AUCIL_OK;
  } catch (const audiocil::Error& e) {
    return set_error(static_cast<aucil_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(AUCIL_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(AUCIL_E_INTERNAL, e.what());
  } catch (...) {
    return set_error(AUCIL_E_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (!p) audiocil::fail(audiocil::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* aucil_version(void) { return audiocil::kVersion; }
const char* aucil_last_error(void) { return g_last_error.c_str(); }
void aucil_string_free(char* s) { std::free(s); }

aucil_status aucil_config_parse(const char* json_text, aucil_config** out) {
  return guarded([&] {
    require(json_text, "json_text");
    require(out, "out");
    *out = nullptr;
    *out = new aucil_config{audiocil::parse_config(std::string(json_text))};
  });
}

aucil_status aucil_config_load(const char* path, aucil_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new aucil_config{audiocil::parse_config_file(path)};
  });
}

void aucil_config_free(aucil_config* config) { delete config; }

aucil_status aucil_config_set_seed(aucil_config* config, uint64_t seed) {
  return guarded([&] {
    require(config, "config");
    config->value.seed = seed;
  });
}

aucil_status aucil_config_set_output_dir(aucil_config* config, const char* dir) {
  return guarded([&] {
    require(config, "config");
    require(dir, "dir");
    config->value.output_dir = dir;
  });
}

aucil_status aucil_config_set_plot(aucil_config* config, int enabled) {
  return guarded([&] {
    require(config, "config");
    config->value.plot = enabled != 0;
  });
}

aucil_status aucil_config_to_json(const aucil_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = copy_string(config->value.to_json().dump(2));
  });
}

aucil_status aucil_run_experiment(const aucil_config* config, aucil_results** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = nullptr;
    *out = new aucil_results{audiocil::run_experiment(config->value)};
  });
}

void aucil_results_free(aucil_results* results) { delete results; }

aucil_status aucil_results_to_json(const aucil_results* results, char** out) {
  return guarded([&] {
    require(results, "results");
    require(out, "out");
    *out = copy_string(results->value.to_json().dump(2));
  });
}

aucil_status aucil_results_write(const aucil_results* results, const char* path) {
  return guarded([&] {
    require(results, "results");
    require(path, "path");
    audiocil::write_results(results->value, path);
  });
}

aucil_status aucil_results_num_stages(const aucil_results* results, size_t* out) {
  return guarded([&] {
    require(results, "results");
    require(out, "out");
    *out = results->value.matrix.stages();
  });
}

aucil_status aucil_results_stage_accuracy(const aucil_results* results, size_t stage, double* out) {
  return guarded([&] {
    require(results, "results");
    require(out, "out");
    const auto& curve = results->value.matrix.per_stage();
    if (stage >= curve.size()) {
      audiocil::fail(audiocil::ErrorCode::kOutOfRange, "stage " + std::to_string(stage) + " out of range");
    }
    *out = curve[stage];
  });
}

aucil_status aucil_results_average_accuracy(const aucil_results* results, double* out) {
  return guarded([&] {
    require(results, "results");
    require(out, "out");
    *out = results->value.matrix.average();
  });
}

aucil_status aucil_plot(const char* const* result_paths, size_t n_paths, const char* out_path) {
  return guarded([&] {
    require(result_paths, "result_paths");
    require(out_path, "out_path");
    std::vector<audiocil::CurveSeries> series;
    for (size_t i = 0; i < n_paths; ++i) {
      require(result_paths[i], "result path");
      std::ifstream in(result_paths[i]);
      if (!in) audiocil::fail(audiocil::ErrorCode::kIo, std::string("cannot open ") + result_paths[i]);
      nlohmann::json doc;
      try {
        in >> doc;
      } catch (const nlohmann::json::exception& e) {
        audiocil::fail(audiocil::ErrorCode::kCorruptData, std::string(result_paths[i]) + ": " + e.what());
      }
      series.push_back(audiocil::curve_from_json(doc));
    }
    audiocil::emit_plot(series, out_path);
  });
}

aucil_status aucil_list_models(char** out_json) {
  return guarded([&] {
    require(out_json, "out_json");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : audiocil::learner_registry()) {
      arr.push_back({{"key", l.key},
                     {"description", l.description},
                     {"implemented", l.implemented},
                     {"uses_buffer", l.uses_buffer}});
    }
    *out_json = copy_string(arr.dump(2));
  });
}

aucil_status aucil_list_datasets(char** out_json) {
  return guarded([&] {
    require(out_json, "out_json");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : audiocil::dataset_registry()) {
      nlohmann::json entry = {{"key", d.key}, {"description", d.description}};
      entry["expected_classes"] = d.expected_classes ? nlohmann::json(*d.expected_classes) : nlohmann::json(nullptr);
      arr.push_back(entry);
    }
    *out_json = copy_string(arr.dump(2));
  });
}

}  // extern "C"
