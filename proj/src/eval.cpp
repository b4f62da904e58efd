#include "audiocil/eval.hpp"

#include "audiocil/learners.hpp"

#include <numeric>

namespace audiocil {

void AccuracyMatrix::add_stage(std::vector<double> row, double stage_accuracy) {
  if (row.size() != rows_.size() + 1) {
    fail(ErrorCode::kDimensionMismatch, "stage " + std::to_string(rows_.size()) + " needs " +
                                            std::to_string(rows_.size() + 1) + " entries, got " +
                                            std::to_string(row.size()));
  }
  for (double v : row) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::kOutOfRange, "accuracy outside [0, 1]");
  }
  if (!(stage_accuracy >= 0.0 && stage_accuracy <= 1.0)) fail(ErrorCode::kOutOfRange, "accuracy outside [0, 1]");
  rows_.push_back(std::move(row));
  per_stage_.push_back(stage_accuracy);
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  if (i >= rows_.size() || j > i) {
    fail(ErrorCode::kOutOfRange, "A[" + std::to_string(i) + "][" + std::to_string(j) + "] is undefined");
  }
  return rows_[i][j];
}

double AccuracyMatrix::average() const { return average_accuracy(per_stage_); }

double average_accuracy(const std::vector<double>& per_stage) {
  if (per_stage.empty()) fail(ErrorCode::kInvalidArgument, "average accuracy of an empty list");
  return std::accumulate(per_stage.begin(), per_stage.end(), 0.0) / static_cast<double>(per_stage.size());
}

std::vector<std::size_t> predict_top1(const RowMatrix& scores, std::size_t n_seen) {
  if (n_seen == 0 || static_cast<std::size_t>(scores.cols()) < n_seen) {
    fail(ErrorCode::kDimensionMismatch, "scores have " + std::to_string(scores.cols()) + " columns, need " +
                                            std::to_string(n_seen));
  }
  std::vector<std::size_t> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_seen; ++c) {
      if (scores(r, static_cast<Eigen::Index>(c)) > scores(r, static_cast<Eigen::Index>(best))) best = c;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

double top1_accuracy(const RowMatrix& scores, const std::vector<std::size_t>& labels, std::size_t n_seen) {
  if (labels.empty()) fail(ErrorCode::kInsufficientData, "accuracy of an empty test set");
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) {
    fail(ErrorCode::kDimensionMismatch, "score rows and label count differ");
  }
  const auto pred = predict_top1(scores, n_seen);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

StageEvaluation evaluate_stage(const Scorer& scorer, const TaskSchedule& schedule, std::size_t stage,
                               const Dataset& test) {
  const TaskData cumulative = cumulative_test_data(schedule, stage, test);
  if (cumulative.samples.empty()) {
    fail(ErrorCode::kInsufficientData, "stage " + std::to_string(stage) + ": cumulative test set is empty");
  }
  const std::size_t n_seen = schedule.classes_seen(stage);
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  for (const auto& s : cumulative.samples) {
    ids.push_back(s.clip_id);
    labels.push_back(schedule.class_index(s.label));
  }
  const auto pred = predict_top1(scorer(ids), n_seen);

  StageEvaluation ev;
  ev.warnings = cumulative.warnings;
  std::vector<std::size_t> hits(stage + 1, 0);
  ev.counts.assign(stage + 1, 0);
  std::size_t total_hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t t = schedule.task_of(cumulative.samples[i].label);
    ++ev.counts[t];
    if (pred[i] == labels[i]) {
      ++hits[t];
      ++total_hits;
    }
  }
  ev.accuracy = static_cast<double>(total_hits) / static_cast<double>(labels.size());
  for (std::size_t j = 0; j <= stage; ++j) {
    ev.per_task.push_back(ev.counts[j] ? static_cast<double>(hits[j]) / static_cast<double>(ev.counts[j]) : 0.0);
    if (!ev.counts[j]) ev.warnings.push_back("task " + std::to_string(j) + " has no test samples");
  }
  return ev;
}

StageEvaluation evaluate_stage(Learner& learner, const TaskSchedule& schedule, std::size_t stage, const Dataset& test,
                               FeatureStore& features) {
  if (learner.tasks_completed() != stage + 1) {
    fail(ErrorCode::kState, "learner has completed " + std::to_string(learner.tasks_completed()) +
                                " tasks; cannot evaluate stage " + std::to_string(stage));
  }
  return evaluate_stage([&](const std::vector<std::string>& ids) { return learner.scores(ids, features); }, schedule,
                        stage, test);
}

}  // namespace audiocil
