#pragma once

#include "audiocil/analytic.hpp"
#include "audiocil/audio_data.hpp"
#include "audiocil/calibration.hpp"
#include "audiocil/memory.hpp"
#include "audiocil/models.hpp"
#include "audiocil/scenario.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace audiocil {

struct TrainingConfig {
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
};

struct Hyperparameters {
  double kd_temperature = 2.0;
  double kd_weight = 1.0;
  double lambda_ewc = 5000.0;
  double gamma_acil = 1.0;
  std::size_t acil_expansion_dim = 1024;
  double pod_weight = 1.0;
  double gem_margin = 0.0;
  bool der_clone_branch = false;
  double bic_val_fraction = 0.1;
  std::size_t bic_steps = 1000;
  double bic_lr = 0.01;
  std::size_t metasc_steps = 50;
  double metasc_lr = 0.01;
  double metasc_scale = 16.0;
  double metasc_log_var = -4.0;

  void validate() const;
};

struct FewShotSettings {
  bool enabled = false;
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
};

struct LearnerConfig {
  std::string algorithm = "finetune";
  ModelConfig model;
  TrainingConfig training;
  Hyperparameters hp;
  std::size_t memory_size = 0;
  std::uint64_t seed = 1993;
  FewShotSettings few_shot;
};

enum class EvalMode { kHead, kNme, kAnalytic, kCosine };

struct LearnerInfo {
  std::string key;
  std::string description;
  bool implemented = true;
  bool uses_buffer = false;
};

const std::vector<LearnerInfo>& learner_registry();

/// Appends buffer samples to a current-task batch. The number of draws keeps
/// the pool-to-task ratio of plain concatenation: round(|batch| * |pool| /
/// task_size), at least one. Task 0 and an empty pool pass the batch through.
std::vector<SampleRef> replay_batch_mix(const std::vector<SampleRef>& task_batch, const std::vector<SampleRef>& pool,
                                        std::size_t task_index, std::size_t task_size, Rng& rng);
std::vector<SampleRef> replay_batch_mix(const std::vector<SampleRef>& task_batch, const ReplayBuffer& buffer,
                                        std::size_t task_index, std::size_t task_size, Rng& rng);

// Mean of squared per-sample gradients.
Vector empirical_fisher(std::size_t n_samples, const std::function<Vector(std::size_t)>& per_sample_grad);

/// Empirical Fisher diagonal of the log-likelihood of the true label, per
/// trainable parameter (keyed by name).
std::map<std::string, Vector> fisher_diagonal(IncrementalModel& model, const std::vector<SampleRef>& data,
                                              FeatureStore& features, const TaskSchedule& schedule);

struct FewShotFitOptions {
  std::size_t steps = 50;
  double learning_rate = 0.01;
  double log_var = -4.0;
};

/// Imprints one mean row per new class from its K-shot embeddings (classes
/// in ascending label order, labels >= classifier.n_classes()), then refines
/// only those rows with sampled-weight cross-entropy.
void fewshot_fit(StochasticClassifier& classifier, const RowMatrix& shot_embeddings,
                 const std::vector<std::size_t>& labels, const FewShotFitOptions& options, std::uint64_t seed);

/// Per-task state shared by the training hooks.
struct TaskContext {
  const TaskSchedule& schedule;
  std::size_t task;
  std::vector<SampleRef> train;
  FeatureStore& features;
  std::size_t n_old;
  std::size_t n_seen;
  Rng rng;
  std::size_t step = 0;
};

/// Incremental-learning strategy with a prepare -> train -> finalize
/// lifecycle per task.
class Learner {
 public:
  explicit Learner(const LearnerConfig& cfg);
  virtual ~Learner() = default;
  Learner(const Learner&) = delete;
  Learner& operator=(const Learner&) = delete;

  const std::string& algorithm() const { return cfg_.algorithm; }
  const LearnerConfig& config() const { return cfg_; }
  virtual EvalMode eval_mode() const { return EvalMode::kHead; }

  /// Trains on task `task` (which must follow the last completed task).
  void run_task(const TaskSchedule& schedule, std::size_t task, const TaskData& data, FeatureStore& features);

  // Scores over the classes seen so far, one row per clip (argmax = prediction).
  RowMatrix scores(const std::vector<std::string>& ids, FeatureStore& features);
  // Backbone embeddings, in chunks of the batch size.
  RowMatrix embed(const std::vector<std::string>& ids, FeatureStore& features);

  std::size_t tasks_completed() const { return tasks_completed_; }
  std::size_t classes_seen() const { return classes_seen_; }
  const ReplayBuffer* buffer() const { return buffer_ ? &*buffer_ : nullptr; }
  IncrementalModel& model() { return model_; }

 protected:
  virtual void prepare_task(TaskContext& ctx);
  virtual void train(TaskContext& ctx);
  virtual double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch);
  virtual void finalize_task(TaskContext& ctx);
  virtual RowMatrix raw_scores(const nn::Tensor& inputs);

  // Default epoch loop helpers.
  std::vector<SampleRef> mix(TaskContext& ctx, const std::vector<SampleRef>& batch);
  nn::Tensor inputs(const std::vector<SampleRef>& batch, FeatureStore& features) const;
  std::vector<std::size_t> targets(const std::vector<SampleRef>& batch, const TaskSchedule& schedule) const;
  void check_finite(double loss, const TaskContext& ctx) const;
  void rebuild_buffer(TaskContext& ctx, const std::vector<SampleRef>& task_samples);
  Embedder embedder(FeatureStore& features);
  void snapshot();

  LearnerConfig cfg_;
  IncrementalModel model_;
  nn::Adam optimizer_;
  std::optional<ReplayBuffer> buffer_;
  std::vector<SampleRef> replay_pool_;
  bool mix_replay_ = false;
  std::optional<IncrementalModel> old_model_;
  std::size_t tasks_completed_ = 0;
  std::size_t classes_seen_ = 0;
};

/// Registry lookup. Unknown keys list the registry; coil, pan and amfo are
/// declared but not implemented.
std::unique_ptr<Learner> make_learner(const LearnerConfig& cfg);

}  // namespace audiocil
