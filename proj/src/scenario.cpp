#include "audiocil/scenario.hpp"

#include <algorithm>
#include <set>

namespace audiocil {

void ScenarioSpec::validate() const {
  if (num_classes == 0) fail(ErrorCode::kInvalidArgument, "num_classes must be positive");
  if (init_cls == 0) fail(ErrorCode::kInvalidArgument, "init_cls must be positive");
  if (increment == 0) fail(ErrorCode::kInvalidArgument, "increment must be positive");
  if (init_cls > num_classes) {
    fail(ErrorCode::kInitClsTooLarge, "init_cls (" + std::to_string(init_cls) + ") exceeds num_classes (" +
                                          std::to_string(num_classes) + ")");
  }
  if ((num_classes - init_cls) % increment != 0) {
    fail(ErrorCode::kDivisibility, "num_classes - init_cls (" + std::to_string(num_classes - init_cls) +
                                       ") is not a multiple of increment (" + std::to_string(increment) + ")");
  }
  if (few_shot) {
    if (n_way != increment) fail(ErrorCode::kInvalidArgument, "few-shot n_way must equal increment");
    if (k_shot == 0) fail(ErrorCode::kInvalidArgument, "few-shot k_shot must be at least 1");
  }
}

TaskSchedule::TaskSchedule(std::vector<Label> class_order, std::size_t init_cls, std::size_t increment)
    : class_order_(std::move(class_order)), init_cls_(init_cls), increment_(increment) {
  for (std::size_t k = 0; k < class_order_.size(); ++k) {
    if (!index_.emplace(class_order_[k], k).second) {
      fail(ErrorCode::kDuplicateLabel, "duplicate class label '" + class_order_[k] + "'");
    }
  }
  std::size_t pos = 0;
  std::vector<Label> cumulative;
  while (pos < class_order_.size()) {
    const std::size_t width = task_label_spaces_.empty() ? init_cls_ : increment_;
    std::vector<Label> space(class_order_.begin() + static_cast<std::ptrdiff_t>(pos),
                             class_order_.begin() + static_cast<std::ptrdiff_t>(pos + width));
    cumulative.insert(cumulative.end(), space.begin(), space.end());
    task_label_spaces_.push_back(std::move(space));
    cumulative_label_spaces_.push_back(cumulative);
    pos += width;
  }
}

void TaskSchedule::check_task(std::size_t task) const {
  if (task >= num_tasks()) {
    fail(ErrorCode::kOutOfRange,
         "task index " + std::to_string(task) + " out of range (T = " + std::to_string(num_tasks()) + ")");
  }
}

std::size_t TaskSchedule::task_offset(std::size_t task) const {
  check_task(task);
  return task == 0 ? 0 : init_cls_ + (task - 1) * increment_;
}

std::size_t TaskSchedule::task_size(std::size_t task) const {
  check_task(task);
  return task == 0 ? init_cls_ : increment_;
}

std::size_t TaskSchedule::classes_seen(std::size_t task) const { return task_offset(task) + task_size(task); }

std::size_t TaskSchedule::class_index(const Label& label) const {
  auto found = index_.find(label);
  if (found == index_.end()) fail(ErrorCode::kOutOfRange, "label '" + label + "' is not in the schedule");
  return found->second;
}

std::size_t TaskSchedule::task_of(const Label& label) const {
  const std::size_t k = class_index(label);
  return k < init_cls_ ? 0 : 1 + (k - init_cls_) / increment_;
}

std::vector<Label> TaskData::labels() const {
  std::vector<Label> out;
  std::set<Label> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.label).second) out.push_back(s.label);
  }
  return out;
}

TaskSchedule build_schedule(const ScenarioSpec& spec, const std::vector<Label>& class_labels) {
  spec.validate();
  if (class_labels.size() != spec.num_classes) {
    fail(ErrorCode::kInvalidArgument, "expected " + std::to_string(spec.num_classes) + " class labels, got " +
                                          std::to_string(class_labels.size()));
  }
  std::set<Label> unique(class_labels.begin(), class_labels.end());
  if (unique.size() != class_labels.size()) fail(ErrorCode::kDuplicateLabel, "class labels are not unique");

  std::vector<Label> order = class_labels;
  Rng rng(spec.seed);
  rng.shuffle(order);
  return TaskSchedule(std::move(order), spec.init_cls, spec.increment);
}

namespace {
TaskData filter(const std::vector<Label>& space, std::size_t task, const Dataset& dataset) {
  const std::set<Label> wanted(space.begin(), space.end());
  TaskData out;
  out.task_index = task;
  std::set<Label> present;
  for (const auto& item : dataset.items()) {
    if (wanted.count(item.label) != 0) {
      out.samples.push_back({item.id, item.label});
      present.insert(item.label);
    }
  }
  for (const auto& label : space) {
    if (present.count(label) == 0) {
      out.warnings.push_back("class '" + label + "' has no samples in the " + to_string(dataset.split()) + " split");
    }
  }
  return out;
}
}  // namespace

TaskData task_data(const TaskSchedule& schedule, std::size_t task, const Dataset& dataset) {
  schedule.task_offset(task);
  return filter(schedule.task_label_spaces()[task], task, dataset);
}

TaskData cumulative_test_data(const TaskSchedule& schedule, std::size_t task, const Dataset& dataset) {
  schedule.task_offset(task);
  return filter(schedule.cumulative_label_spaces()[task], task, dataset);
}

TaskData sample_few_shot(const TaskData& task, std::size_t n_way, std::size_t k_shot, std::uint64_t seed) {
  if (n_way == 0 || k_shot == 0) fail(ErrorCode::kInvalidArgument, "n_way and k_shot must be positive");
  const std::vector<Label> labels = task.labels();
  if (labels.size() < n_way) {
    fail(ErrorCode::kInsufficientData, "few-shot session needs " + std::to_string(n_way) + " classes, task has " +
                                           std::to_string(labels.size()));
  }
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < task.samples.size(); ++i) by_class[task.samples[i].label].push_back(i);

  Rng rng(derive_seed(seed, "few-shot/" + std::to_string(task.task_index)));
  std::vector<Label> chosen = labels;
  if (chosen.size() > n_way) {
    rng.shuffle(chosen);
    chosen.resize(n_way);
  }
  std::vector<std::size_t> keep;
  for (const auto& label : labels) {
    if (std::find(chosen.begin(), chosen.end(), label) == chosen.end()) continue;
    auto& idx = by_class[label];
    if (idx.size() < k_shot) {
      fail(ErrorCode::kInsufficientData, "class '" + label + "' has " + std::to_string(idx.size()) +
                                             " samples, fewer than k_shot = " + std::to_string(k_shot));
    }
    rng.shuffle(idx);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_shot));
  }
  std::sort(keep.begin(), keep.end());
  TaskData out;
  out.task_index = task.task_index;
  for (std::size_t i : keep) out.samples.push_back(task.samples[i]);
  return out;
}

}  // namespace audiocil
