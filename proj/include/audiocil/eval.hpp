#pragma once

#include "audiocil/scenario.hpp"

#include <functional>
#include <vector>

namespace audiocil {

class Learner;
class FeatureStore;

/// Lower-triangular accuracy table: row i holds A[i][0..i] and the
/// cumulative stage accuracy A_i.
class AccuracyMatrix {
 public:
  void add_stage(std::vector<double> row, double stage_accuracy);

  std::size_t stages() const { return rows_.size(); }
  double at(std::size_t i, std::size_t j) const;
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  const std::vector<double>& per_stage() const { return per_stage_; }
  double average() const;

 private:
  std::vector<std::vector<double>> rows_;
  std::vector<double> per_stage_;
};

struct StageEvaluation {
  double accuracy = 0.0;             // A_i over the cumulative test set
  std::vector<double> per_task;      // A[i][j], j <= i
  std::vector<std::size_t> counts;   // test samples per task j
  std::vector<std::string> warnings;
};

// Clip ids -> scores with at least n_seen columns (extra columns are masked).
using Scorer = std::function<RowMatrix(const std::vector<std::string>& clip_ids)>;

/// argmax over the first n_seen columns; ties go to the lowest index.
std::vector<std::size_t> predict_top1(const RowMatrix& scores, std::size_t n_seen);
double top1_accuracy(const RowMatrix& scores, const std::vector<std::size_t>& labels, std::size_t n_seen);

StageEvaluation evaluate_stage(const Scorer& scorer, const TaskSchedule& schedule, std::size_t stage,
                               const Dataset& test);
StageEvaluation evaluate_stage(Learner& learner, const TaskSchedule& schedule, std::size_t stage, const Dataset& test,
                               FeatureStore& features);

/// Arithmetic mean of the stage accuracies.
double average_accuracy(const std::vector<double>& per_stage);

}  // namespace audiocil
