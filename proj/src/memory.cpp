#include "audiocil/memory.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace audiocil {

std::vector<std::size_t> herding_select(const RowMatrix& features, std::size_t m) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (m > n) {
    fail(ErrorCode::kInsufficientData,
         "herding asked for " + std::to_string(m) + " exemplars from " + std::to_string(n) + " candidates");
  }
  std::vector<std::size_t> picked;
  if (m == 0) return picked;
  const Eigen::RowVectorXd target = features.colwise().mean();
  Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(features.cols());
  std::vector<bool> used(n, false);
  for (std::size_t k = 1; k <= m; ++k) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double d = (target - (running + features.row(static_cast<Eigen::Index>(i))) / static_cast<double>(k)).norm();
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    used[best] = true;
    running += features.row(static_cast<Eigen::Index>(best));
    picked.push_back(best);
  }
  return picked;
}

std::vector<std::size_t> class_quotas(std::size_t memory_size, std::size_t n_classes) {
  if (n_classes == 0) return {};
  const std::size_t q = memory_size / n_classes;
  if (q == 0) {
    fail(ErrorCode::kBudget, "memory_size " + std::to_string(memory_size) + " is too small for " +
                                 std::to_string(n_classes) + " classes (zero exemplars per class)");
  }
  const std::size_t r = memory_size % n_classes;
  std::vector<std::size_t> out(n_classes, q);
  for (std::size_t i = 0; i < r; ++i) ++out[i];
  return out;
}

const std::vector<std::string>* ReplayBuffer::exemplars(const Label& label) const {
  for (const auto& e : classes_) {
    if (e.label == label) return &e.exemplars;
  }
  return nullptr;
}

std::size_t ReplayBuffer::total() const {
  std::size_t n = 0;
  for (const auto& e : classes_) n += e.exemplars.size();
  return n;
}

std::vector<SampleRef> ReplayBuffer::samples() const {
  std::vector<SampleRef> out;
  for (const auto& e : classes_) {
    for (const auto& id : e.exemplars) out.push_back({id, e.label});
  }
  return out;
}

RowMatrix normalize_rows(const RowMatrix& m) {
  const Eigen::VectorXd norms = m.rowwise().norm().cwiseMax(1e-12);
  return norms.asDiagonal().inverse() * m;
}

void ReplayBuffer::rebuild(const Embedder& embed, const std::vector<Label>& seen_classes,
                           const std::map<Label, std::vector<std::string>>& source) {
  const std::set<Label> seen(seen_classes.begin(), seen_classes.end());
  for (const auto& e : classes_) {
    if (seen.count(e.label) == 0) {
      fail(ErrorCode::kState, "buffer holds class '" + e.label + "' that is not among the seen classes");
    }
  }
  const auto quota = class_quotas(memory_size_, seen_classes.size());
  std::vector<Entry> next;
  next.reserve(seen_classes.size());
  for (std::size_t c = 0; c < seen_classes.size(); ++c) {
    const Label& label = seen_classes[c];
    if (const auto* stored = exemplars(label)) {
      Entry e{label, *stored};
      if (e.exemplars.size() > quota[c]) e.exemplars.resize(quota[c]);
      next.push_back(std::move(e));
      continue;
    }
    auto found = source.find(label);
    if (found == source.end() || found->second.empty()) {
      fail(ErrorCode::kInsufficientData, "no training clips available to select exemplars for class '" + label + "'");
    }
    const auto& ids = found->second;
    const RowMatrix features = normalize_rows(embed(ids));
    const auto picks = herding_select(features, std::min(quota[c], ids.size()));
    Entry e{label, {}};
    for (auto i : picks) e.exemplars.push_back(ids[i]);
    next.push_back(std::move(e));
  }
  classes_ = std::move(next);
  check_invariants();
}

void ReplayBuffer::check_invariants() const {
  if (total() > memory_size_) fail(ErrorCode::kBudget, "replay buffer exceeds its budget");
  for (const auto& e : classes_) {
    const std::set<std::string> unique(e.exemplars.begin(), e.exemplars.end());
    if (unique.size() != e.exemplars.size()) {
      fail(ErrorCode::kState, "duplicate exemplar ids for class '" + e.label + "'");
    }
  }
}

nlohmann::json ReplayBuffer::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& e : classes_) classes.push_back({{"label", e.label}, {"exemplars", e.exemplars}});
  return {{"memory_size", memory_size_}, {"classes", classes}};
}

ReplayBuffer ReplayBuffer::from_json(const nlohmann::json& doc) {
  try {
    ReplayBuffer buffer(doc.at("memory_size").get<std::size_t>());
    for (const auto& c : doc.at("classes")) {
      buffer.classes_.push_back({c.at("label").get<Label>(), c.at("exemplars").get<std::vector<std::string>>()});
    }
    buffer.check_invariants();
    return buffer;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptData, std::string("malformed replay buffer document: ") + e.what());
  }
}

std::vector<std::pair<Label, Vector>> class_means(const ReplayBuffer& buffer, const Embedder& embed) {
  std::vector<std::pair<Label, Vector>> out;
  for (const auto& e : buffer.classes()) {
    if (e.exemplars.empty()) fail(ErrorCode::kInsufficientData, "class '" + e.label + "' has no exemplars");
    const RowMatrix f = normalize_rows(embed(e.exemplars));
    Vector mean = f.colwise().mean().transpose();
    const double norm = mean.norm();
    if (!(norm > 1e-12)) {
      fail(ErrorCode::kDegenerate, "class '" + e.label + "' has a zero-norm exemplar mean");
    }
    out.emplace_back(e.label, mean / norm);
  }
  return out;
}

Label nme_classify(const Vector& embedding, const std::vector<std::pair<Label, Vector>>& means) {
  if (means.empty()) fail(ErrorCode::kInvalidArgument, "no class means to classify against");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < means.size(); ++c) {
    if (means[c].second.size() != embedding.size()) {
      fail(ErrorCode::kDimensionMismatch, "embedding and class mean dimensions differ");
    }
    const double d = (means[c].second - embedding).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return means[best].first;
}

RowMatrix nme_scores(const RowMatrix& embeddings, const RowMatrix& means) {
  if (embeddings.cols() != means.cols()) fail(ErrorCode::kDimensionMismatch, "embedding and class mean dimensions differ");
  RowMatrix scores(embeddings.rows(), means.rows());
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    for (Eigen::Index c = 0; c < means.rows(); ++c) scores(i, c) = -(means.row(c) - embeddings.row(i)).squaredNorm();
  }
  return scores;
}

}  // namespace audiocil
