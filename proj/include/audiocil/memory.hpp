#pragma once

#include "audiocil/common.hpp"
#include "audiocil/scenario.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace audiocil {

/// Greedy herding over the rows of `features`: each step appends the unused
/// row that brings the running mean of the selection closest (Euclidean) to
/// the mean of all rows. Ties go to the lowest row index.
std::vector<std::size_t> herding_select(const RowMatrix& features, std::size_t m);

// Maps clip ids to one embedding row each.
using Embedder = std::function<RowMatrix(const std::vector<std::string>& clip_ids)>;

// Per-class quota for a fixed total budget; the remainder goes one each to
// the first classes in the given order.
std::vector<std::size_t> class_quotas(std::size_t memory_size, std::size_t n_classes);

class ReplayBuffer {
 public:
  struct Entry {
    Label label;
    std::vector<std::string> exemplars;  // herding order
  };

  explicit ReplayBuffer(std::size_t memory_size = 0) : memory_size_(memory_size) {}

  std::size_t memory_size() const { return memory_size_; }
  const std::vector<Entry>& classes() const { return classes_; }
  const std::vector<std::string>* exemplars(const Label& label) const;
  std::size_t total() const;
  bool empty() const { return total() == 0; }
  std::vector<SampleRef> samples() const;

  nlohmann::json to_json() const;
  static ReplayBuffer from_json(const nlohmann::json& doc);

  /// Re-plans quotas over `seen_classes` (class order). Stored classes keep
  /// the herding-order prefix that fits their quota; classes without an entry
  /// are selected by herding over the unit-normalized embeddings of their
  /// `source` clips.
  void rebuild(const Embedder& embed, const std::vector<Label>& seen_classes,
               const std::map<Label, std::vector<std::string>>& source);

 private:
  void check_invariants() const;

  std::size_t memory_size_;
  std::vector<Entry> classes_;
};

RowMatrix normalize_rows(const RowMatrix& m);

/// Unit-norm mean of the unit-normalized exemplar embeddings, per class, in
/// buffer order.
std::vector<std::pair<Label, Vector>> class_means(const ReplayBuffer& buffer, const Embedder& embed);

/// Nearest class mean; ties resolve to the earliest class in `means`.
Label nme_classify(const Vector& embedding, const std::vector<std::pair<Label, Vector>>& means);

// Negative squared distances to each mean, one column per class.
RowMatrix nme_scores(const RowMatrix& embeddings, const RowMatrix& means);

}  // namespace audiocil
