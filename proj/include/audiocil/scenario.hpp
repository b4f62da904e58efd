#pragma once

#include "audiocil/audio_data.hpp"
#include "audiocil/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace audiocil {

struct ScenarioSpec {
  std::size_t num_classes = 0;
  std::size_t init_cls = 0;
  std::size_t increment = 0;
  std::uint64_t seed = 1993;
  bool few_shot = false;
  std::size_t n_way = 0;
  std::size_t k_shot = 0;

  void validate() const;
};

/// Incremental protocol over disjoint label spaces. Class index k (the
/// position of a label in class_order) is the logit position used by every
/// model, so task i owns indices [offset(i), offset(i) + |Y_i|).
class TaskSchedule {
 public:
  TaskSchedule(std::vector<Label> class_order, std::size_t init_cls, std::size_t increment);

  std::size_t num_tasks() const { return task_label_spaces_.size(); }
  const std::vector<Label>& class_order() const { return class_order_; }
  const std::vector<std::vector<Label>>& task_label_spaces() const { return task_label_spaces_; }
  const std::vector<std::vector<Label>>& cumulative_label_spaces() const { return cumulative_label_spaces_; }

  std::size_t task_offset(std::size_t task) const;
  std::size_t task_size(std::size_t task) const;
  // |cumulative label space| after task i.
  std::size_t classes_seen(std::size_t task) const;
  std::size_t class_index(const Label& label) const;
  bool contains(const Label& label) const { return index_.count(label) != 0; }
  std::size_t task_of(const Label& label) const;

 private:
  void check_task(std::size_t task) const;

  std::vector<Label> class_order_;
  std::size_t init_cls_;
  std::size_t increment_;
  std::vector<std::vector<Label>> task_label_spaces_;
  std::vector<std::vector<Label>> cumulative_label_spaces_;
  std::map<Label, std::size_t> index_;
};

struct SampleRef {
  std::string clip_id;
  Label label;

  bool operator==(const SampleRef&) const = default;
};

struct TaskData {
  std::size_t task_index = 0;
  std::vector<SampleRef> samples;
  std::vector<std::string> warnings;

  std::size_t size() const { return samples.size(); }
  // Distinct labels in order of first appearance.
  std::vector<Label> labels() const;
};

TaskSchedule build_schedule(const ScenarioSpec& spec, const std::vector<Label>& class_labels);

// Samples of `dataset` whose label is in Y_i, in dataset order.
TaskData task_data(const TaskSchedule& schedule, std::size_t task, const Dataset& dataset);

// Samples of `dataset` whose label is in the cumulative space after task i.
TaskData cumulative_test_data(const TaskSchedule& schedule, std::size_t task, const Dataset& dataset);

/// Keeps n_way classes with k_shot samples each, chosen by seed. The result
/// preserves the input order of the retained samples.
TaskData sample_few_shot(const TaskData& task, std::size_t n_way, std::size_t k_shot, std::uint64_t seed);

}  // namespace audiocil
