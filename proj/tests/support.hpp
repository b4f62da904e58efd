#pragma once
// Shared fixtures and independent reference implementations for the tests.

#include "audiocil/audio_data.hpp"
#include "audiocil/learners.hpp"
#include "audiocil/scenario.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace testing {

using audiocil::RowMatrix;
using audiocil::Vector;

inline audiocil::FeatureConfig small_features() {
  audiocil::FeatureConfig cfg;
  cfg.n_mels = 32;
  cfg.clip_seconds = 0.5;
  return cfg;
}

/// Synthetic train/test splits with their feature stores.
struct SyntheticFixture {
  audiocil::Dataset train;
  audiocil::Dataset test;
  audiocil::FeatureStore train_features;
  audiocil::FeatureStore test_features;

  SyntheticFixture(std::size_t classes, std::size_t train_per_class, std::size_t test_per_class,
                   std::uint64_t seed = 7)
      : train(audiocil::generate_synthetic(classes, train_per_class, seed, audiocil::Split::kTrain, 16000.0, 0.5)),
        test(audiocil::generate_synthetic(classes, test_per_class, seed, audiocil::Split::kTest, 16000.0, 0.5)),
        train_features(train, small_features()),
        test_features(test, small_features()) {}
  SyntheticFixture(const SyntheticFixture&) = delete;
};

inline audiocil::LearnerConfig small_learner(const std::string& algorithm, std::uint64_t seed = 11) {
  audiocil::LearnerConfig cfg;
  cfg.algorithm = algorithm;
  cfg.model.feature_dim = 16;
  cfg.model.seed = seed;
  cfg.training.epochs = 2;
  cfg.training.batch_size = 16;
  cfg.training.learning_rate = 1e-2;
  cfg.memory_size = 12;
  cfg.seed = seed;
  cfg.hp.acil_expansion_dim = 64;
  cfg.hp.bic_steps = 50;
  cfg.hp.metasc_steps = 5;
  return cfg;
}

inline Vector random_vector(audiocil::Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

inline RowMatrix random_matrix(audiocil::Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Central differences of a scalar function of a flat parameter vector.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max |a - b| relative to max(|b|_inf, floor).
inline double relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-6) {
  const double denom = std::max(numeric.cwiseAbs().maxCoeff(), floor);
  return (analytic - numeric).cwiseAbs().maxCoeff() / denom;
}

inline Vector flatten(const RowMatrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline RowMatrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMatrix>(v.data(), rows, cols);
}

/// Herding reference: exhaustive search over ordered selections, keeping the
/// one whose vector of prefix distances is lexicographically smallest (ties
/// by index sequence). This is the step-wise optimal prefix sequence.
inline std::vector<std::size_t> herding_bruteforce(const RowMatrix& x, std::size_t m) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mu[k] += x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
  for (double& v : mu) v /= static_cast<double>(n);

  std::vector<std::size_t> best;
  std::vector<double> best_key;
  std::vector<std::size_t> current;
  std::vector<bool> used(n, false);
  std::function<void()> rec = [&]() {
    if (current.size() == m) {
      std::vector<double> key;
      for (std::size_t p = 1; p <= m; ++p) {
        double dist = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          double s = 0.0;
          for (std::size_t q = 0; q < p; ++q) s += x(static_cast<Eigen::Index>(current[q]), static_cast<Eigen::Index>(k));
          const double diff = mu[k] - s / static_cast<double>(p);
          dist += diff * diff;
        }
        key.push_back(dist);
      }
      if (best.empty() || key < best_key) {
        best = current;
        best_key = key;
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      used[i] = true;
      current.push_back(i);
      rec();
      current.pop_back();
      used[i] = false;
    }
  };
  rec();
  return best;
}

/// Dense QP reference for min 1/2 ||z - g||^2 s.t. <z, g_k> >= 0: enumerate
/// active sets, solve the equality-constrained problem on each, keep the KKT
/// point.
inline Vector gem_reference(const Vector& g, const std::vector<Vector>& mem) {
  const std::size_t k = mem.size();
  Vector best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (std::size_t{1} << i)) active.push_back(i);
    }
    Vector z = g;
    if (!active.empty()) {
      Eigen::MatrixXd ga(static_cast<Eigen::Index>(active.size()), g.size());
      for (std::size_t r = 0; r < active.size(); ++r) ga.row(static_cast<Eigen::Index>(r)) = mem[active[r]].transpose();
      const Eigen::MatrixXd gram = ga * ga.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
      if (lu.rank() < gram.rows()) continue;
      const Vector mu = lu.solve(-(ga * g));
      if ((mu.array() < -1e-12).any()) continue;
      z = g + ga.transpose() * mu;
    }
    bool feasible = true;
    for (const auto& gk : mem) {
      if (z.dot(gk) < -1e-9 * std::max(1.0, z.norm() * gk.norm())) feasible = false;
    }
    if (!feasible) continue;
    const double obj = 0.5 * (z - g).squaredNorm();
    if (obj < best_obj) {
      best_obj = obj;
      best = z;
    }
  }
  return best;
}

/// Validator for the JSON Schema keywords used by the published results
/// schema: type (string or list), required, properties, additionalProperties
/// (boolean), items, enum, minItems, minimum, maximum, exclusiveMinimum,
/// exclusiveMaximum. Returns one message per violation.
inline void schema_check(const nlohmann::json& schema, const nlohmann::json& doc, const std::string& path,
                         std::vector<std::string>& errors) {
  auto type_ok = [&](const std::string& t) {
    if (t == "object") return doc.is_object();
    if (t == "array") return doc.is_array();
    if (t == "string") return doc.is_string();
    if (t == "integer") return doc.is_number_integer();
    if (t == "number") return doc.is_number();
    if (t == "boolean") return doc.is_boolean();
    if (t == "null") return doc.is_null();
    return false;
  };
  if (auto it = schema.find("type"); it != schema.end()) {
    bool ok = false;
    if (it->is_string()) ok = type_ok(it->get<std::string>());
    for (const auto& t : it->is_array() ? *it : nlohmann::json::array()) ok = ok || type_ok(t.get<std::string>());
    if (!ok) {
      errors.push_back(path + ": wrong type");
      return;
    }
  }
  if (auto it = schema.find("enum"); it != schema.end()) {
    if (std::find(it->begin(), it->end(), doc) == it->end()) errors.push_back(path + ": not in enum");
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (schema.contains("minimum") && v < schema["minimum"].get<double>()) errors.push_back(path + ": below minimum");
    if (schema.contains("maximum") && v > schema["maximum"].get<double>()) errors.push_back(path + ": above maximum");
    if (schema.contains("exclusiveMinimum") && v <= schema["exclusiveMinimum"].get<double>()) {
      errors.push_back(path + ": not above exclusiveMinimum");
    }
    if (schema.contains("exclusiveMaximum") && v >= schema["exclusiveMaximum"].get<double>()) {
      errors.push_back(path + ": not below exclusiveMaximum");
    }
  }
  if (doc.is_object()) {
    for (const auto& key : schema.value("required", nlohmann::json::array())) {
      if (!doc.contains(key.get<std::string>())) errors.push_back(path + ": missing " + key.get<std::string>());
    }
    const auto props = schema.value("properties", nlohmann::json::object());
    for (const auto& [key, value] : doc.items()) {
      if (props.contains(key)) {
        schema_check(props[key], value, path + "." + key, errors);
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
        errors.push_back(path + ": unexpected key " + key);
      }
    }
  }
  if (doc.is_array()) {
    if (schema.contains("minItems") && doc.size() < schema["minItems"].get<std::size_t>()) {
      errors.push_back(path + ": too few items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < doc.size(); ++i) {
        schema_check(schema["items"], doc[i], path + "[" + std::to_string(i) + "]", errors);
      }
    }
  }
}

inline std::vector<std::string> schema_errors(const nlohmann::json& schema, const nlohmann::json& doc) {
  std::vector<std::string> errors;
  schema_check(schema, doc, "$", errors);
  return errors;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("audiocil-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
