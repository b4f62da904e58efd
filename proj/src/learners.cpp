#include "audiocil/learners.hpp"

#include "audiocil/gem.hpp"
#include "audiocil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace audiocil {

void Hyperparameters::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) fail(ErrorCode::kConfig, std::string(name) + " must be positive");
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0)) fail(ErrorCode::kConfig, std::string(name) + " must be non-negative");
  };
  positive(kd_temperature, "kd_temperature");
  non_negative(kd_weight, "kd_weight");
  non_negative(lambda_ewc, "lambda_ewc");
  positive(gamma_acil, "gamma_acil");
  positive(static_cast<double>(acil_expansion_dim), "acil_expansion_dim");
  non_negative(pod_weight, "pod_weight");
  non_negative(gem_margin, "gem_margin");
  if (!(bic_val_fraction > 0 && bic_val_fraction < 1)) fail(ErrorCode::kConfig, "bic_val_fraction must be in (0, 1)");
  positive(bic_lr, "bic_lr");
  positive(metasc_lr, "metasc_lr");
  positive(metasc_scale, "metasc_scale");
}

const std::vector<LearnerInfo>& learner_registry() {
  static const std::vector<LearnerInfo> registry = {
      {"finetune", "plain cross-entropy on each new task", true, false},
      {"replay", "cross-entropy on new data mixed with replay-buffer exemplars", true, true},
      {"ewc", "Fisher-weighted quadratic anchor to the previous task's parameters", true, false},
      {"lwf", "distillation of the previous model's old-class outputs", true, false},
      {"icarl", "exemplar replay + distillation, nearest-class-mean evaluation", true, true},
      {"gem", "gradient projection against per-task memory gradients", true, true},
      {"bic", "iCaRL-style training + affine bias correction of new-class logits", true, true},
      {"wa", "iCaRL-style training + post-hoc classifier weight alignment", true, true},
      {"podnet", "exemplar replay + pooled intermediate-output distillation", true, true},
      {"der", "one new frozen-history backbone branch per task + auxiliary head", true, true},
      {"acil", "frozen backbone + recursive least-squares analytic classifier", true, false},
      {"metasc", "frozen base backbone + stochastic cosine classifier for few-shot sessions", true, false},
      {"coil", "optimal-transport bidirectional transfer (not implemented)", false, false},
      {"pan", "prototype adaptation network (not implemented)", false, false},
      {"amfo", "task-general/task-specific feature fusion (not implemented)", false, false},
  };
  return registry;
}

std::vector<SampleRef> replay_batch_mix(const std::vector<SampleRef>& task_batch, const std::vector<SampleRef>& pool,
                                        std::size_t task_index, std::size_t task_size, Rng& rng) {
  if (task_index == 0 || pool.empty() || task_batch.empty()) return task_batch;
  const double ratio = static_cast<double>(pool.size()) / static_cast<double>(std::max<std::size_t>(task_size, 1));
  const auto draws = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(task_batch.size()))));
  std::vector<SampleRef> out = task_batch;
  out.reserve(task_batch.size() + draws);
  for (std::size_t i = 0; i < draws; ++i) out.push_back(pool[rng.index(pool.size())]);
  return out;
}

std::vector<SampleRef> replay_batch_mix(const std::vector<SampleRef>& task_batch, const ReplayBuffer& buffer,
                                        std::size_t task_index, std::size_t task_size, Rng& rng) {
  return replay_batch_mix(task_batch, buffer.samples(), task_index, task_size, rng);
}

Vector empirical_fisher(std::size_t n_samples, const std::function<Vector(std::size_t)>& per_sample_grad) {
  if (n_samples == 0) fail(ErrorCode::kInsufficientData, "Fisher estimate needs at least one sample");
  Vector acc;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Vector g = per_sample_grad(i);
    if (i == 0) acc = Vector::Zero(g.size());
    if (g.size() != acc.size()) fail(ErrorCode::kDimensionMismatch, "per-sample gradients differ in size");
    acc += g.array().square().matrix();
  }
  return acc / static_cast<double>(n_samples);
}

std::map<std::string, Vector> fisher_diagonal(IncrementalModel& model, const std::vector<SampleRef>& data,
                                              FeatureStore& features, const TaskSchedule& schedule) {
  if (data.empty()) fail(ErrorCode::kInsufficientData, "Fisher estimate needs at least one sample");
  const auto params = model.trainable_parameters();
  std::map<std::string, Vector> fisher;
  for (const nn::Param* p : params) fisher[p->name] = Vector::Zero(static_cast<Eigen::Index>(p->value.numel()));
  for (const auto& s : data) {
    model.zero_grad();
    const auto out = model.forward(stack_features({&features.get(s.clip_id)}));
    const LossResult ce = finetune_loss(out.logits, {schedule.class_index(s.label)});
    model.backward(ce.grad);
    for (const nn::Param* p : params) {
      const Eigen::Map<const Vector> g(p->grad.data.data(), static_cast<Eigen::Index>(p->grad.numel()));
      fisher[p->name] += g.array().square().matrix();
    }
  }
  model.zero_grad();
  for (auto& [name, f] : fisher) f /= static_cast<double>(data.size());
  return fisher;
}

void fewshot_fit(StochasticClassifier& classifier, const RowMatrix& shot_embeddings,
                 const std::vector<std::size_t>& labels, const FewShotFitOptions& options, std::uint64_t seed) {
  if (static_cast<std::size_t>(shot_embeddings.rows()) != labels.size() || labels.empty()) {
    fail(ErrorCode::kDimensionMismatch, "few-shot session needs one label per embedding");
  }
  const std::size_t n_old = classifier.n_classes();
  const std::set<std::size_t> distinct(labels.begin(), labels.end());
  if (*distinct.begin() < n_old || *distinct.rbegin() != n_old + distinct.size() - 1) {
    fail(ErrorCode::kInvalidArgument, "few-shot labels must be the contiguous block of new classes after " +
                                          std::to_string(n_old));
  }
  const RowMatrix unit = normalize_rows(shot_embeddings);
  RowMatrix means = RowMatrix::Zero(static_cast<Eigen::Index>(distinct.size()), shot_embeddings.cols());
  std::vector<double> counts(distinct.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    means.row(static_cast<Eigen::Index>(labels[i] - n_old)) += unit.row(static_cast<Eigen::Index>(i));
    counts[labels[i] - n_old] += 1.0;
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    auto row = means.row(static_cast<Eigen::Index>(c));
    row /= counts[c];
    row /= std::max(row.norm(), 1e-12);
  }
  classifier.add_classes(means, options.log_var);

  nn::Adam adam(options.learning_rate);
  Rng rng(derive_seed(seed, "few-shot-fit"));
  const std::vector<nn::Param*> params = {&classifier.mean(), &classifier.log_var()};
  for (std::size_t step = 0; step < options.steps; ++step) {
    nn::zero_grad(params);
    const RowMatrix logits = classifier.forward_sample(shot_embeddings, rng);
    const LossResult ce = finetune_loss(logits, labels);
    classifier.backward(ce.grad, n_old);
    adam.step(params);
  }
}

// ---------------------------------------------------------------- Learner

Learner::Learner(const LearnerConfig& cfg) : cfg_(cfg), model_(cfg.model), optimizer_(cfg.training.learning_rate) {
  cfg_.hp.validate();
  if (cfg_.training.batch_size == 0) fail(ErrorCode::kConfig, "batch_size must be positive");
  if (!(cfg_.training.learning_rate > 0)) fail(ErrorCode::kConfig, "learning_rate must be positive");
}

void Learner::run_task(const TaskSchedule& schedule, std::size_t task, const TaskData& data, FeatureStore& features) {
  if (task != tasks_completed_) {
    fail(ErrorCode::kState, "task " + std::to_string(task) + " is out of order; expected task " +
                                std::to_string(tasks_completed_));
  }
  if (data.task_index != task) fail(ErrorCode::kState, "task data belongs to a different task index");
  if (data.samples.empty()) fail(ErrorCode::kInsufficientData, "task " + std::to_string(task) + " has no training data");
  for (const auto& s : data.samples) {
    if (schedule.task_of(s.label) != task) {
      fail(ErrorCode::kInvalidArgument, "training label '" + s.label + "' is not in task " + std::to_string(task));
    }
  }
  TaskContext ctx{schedule,
                  task,
                  data.samples,
                  features,
                  classes_seen_,
                  schedule.classes_seen(task),
                  Rng(derive_seed(cfg_.seed, "task/" + std::to_string(task))),
                  0};
  optimizer_.reset();
  prepare_task(ctx);
  classes_seen_ = ctx.n_seen;
  train(ctx);
  finalize_task(ctx);
  ++tasks_completed_;
}

void Learner::prepare_task(TaskContext& ctx) {
  model_.expand_head(ctx.schedule.task_size(ctx.task));
  replay_pool_ = buffer_ ? buffer_->samples() : std::vector<SampleRef>{};
}

void Learner::train(TaskContext& ctx) {
  const std::size_t n = ctx.train.size();
  const std::size_t bs = cfg_.training.batch_size;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg_.training.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    ctx.rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += bs) {
      std::vector<SampleRef> batch;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) batch.push_back(ctx.train[order[i]]);
      const double loss = train_step(ctx, mix(ctx, batch));
      check_finite(loss, ctx);
      ++ctx.step;
    }
  }
}

double Learner::train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) {
  const nn::Tensor x = inputs(batch, ctx.features);
  const auto y = targets(batch, ctx.schedule);
  model_.zero_grad();
  const auto out = model_.forward(x);
  const LossResult ce = finetune_loss(out.logits, y);
  check_finite(ce.value, ctx);
  model_.backward(ce.grad);
  optimizer_.step(model_.trainable_parameters());
  return ce.value;
}

void Learner::finalize_task(TaskContext& ctx) {
  if (buffer_) rebuild_buffer(ctx, ctx.train);
}

RowMatrix Learner::raw_scores(const nn::Tensor& x) { return model_.forward(x).logits; }

std::vector<SampleRef> Learner::mix(TaskContext& ctx, const std::vector<SampleRef>& batch) {
  if (!mix_replay_) return batch;
  return replay_batch_mix(batch, replay_pool_, ctx.task, ctx.train.size(), ctx.rng);
}

nn::Tensor Learner::inputs(const std::vector<SampleRef>& batch, FeatureStore& features) const {
  std::vector<const FeatureTensor*> f;
  f.reserve(batch.size());
  for (const auto& s : batch) f.push_back(&features.get(s.clip_id));
  return stack_features(f);
}

std::vector<std::size_t> Learner::targets(const std::vector<SampleRef>& batch, const TaskSchedule& schedule) const {
  std::vector<std::size_t> y;
  y.reserve(batch.size());
  for (const auto& s : batch) y.push_back(schedule.class_index(s.label));
  return y;
}

void Learner::check_finite(double loss, const TaskContext& ctx) const {
  if (!std::isfinite(loss)) {
    fail(ErrorCode::kNumerical, cfg_.algorithm + ": non-finite loss at task " + std::to_string(ctx.task) + " step " +
                                    std::to_string(ctx.step));
  }
}

RowMatrix Learner::embed(const std::vector<std::string>& ids, FeatureStore& features) {
  RowMatrix out;
  const std::size_t bs = cfg_.training.batch_size;
  for (std::size_t start = 0; start < ids.size(); start += bs) {
    std::vector<const FeatureTensor*> f;
    for (std::size_t i = start; i < std::min(ids.size(), start + bs); ++i) f.push_back(&features.get(ids[i]));
    const RowMatrix e = model_.embed(stack_features(f));
    if (out.size() == 0) out.resize(static_cast<Eigen::Index>(ids.size()), e.cols());
    out.middleRows(static_cast<Eigen::Index>(start), e.rows()) = e;
  }
  return out;
}

RowMatrix Learner::scores(const std::vector<std::string>& ids, FeatureStore& features) {
  if (tasks_completed_ == 0) fail(ErrorCode::kState, "learner has not been trained on any task");
  RowMatrix out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(classes_seen_));
  const std::size_t bs = cfg_.training.batch_size;
  for (std::size_t start = 0; start < ids.size(); start += bs) {
    std::vector<const FeatureTensor*> f;
    for (std::size_t i = start; i < std::min(ids.size(), start + bs); ++i) f.push_back(&features.get(ids[i]));
    const RowMatrix s = raw_scores(stack_features(f));
    if (static_cast<std::size_t>(s.cols()) < classes_seen_) {
      fail(ErrorCode::kState, "scores cover fewer columns than classes seen");
    }
    out.middleRows(static_cast<Eigen::Index>(start), s.rows()) = s.leftCols(static_cast<Eigen::Index>(classes_seen_));
  }
  return out;
}

Embedder Learner::embedder(FeatureStore& features) {
  return [this, &features](const std::vector<std::string>& ids) { return embed(ids, features); };
}

void Learner::rebuild_buffer(TaskContext& ctx, const std::vector<SampleRef>& task_samples) {
  std::map<Label, std::vector<std::string>> source;
  for (const auto& s : task_samples) source[s.label].push_back(s.clip_id);
  buffer_->rebuild(embedder(ctx.features), ctx.schedule.cumulative_label_spaces()[ctx.task], source);
}

void Learner::snapshot() { old_model_ = model_; }

namespace {

void require_buffer(const LearnerConfig& cfg) {
  if (cfg.memory_size == 0) {
    fail(ErrorCode::kConfig, cfg.algorithm + " requires a replay buffer (memory_size > 0)");
  }
}

// Cross-entropy over the new-class block only; gradient padded to full width.
LossResult new_class_ce(const RowMatrix& logits, const std::vector<std::size_t>& y, std::size_t n_old) {
  std::vector<std::size_t> shifted(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) shifted[i] = y[i] - n_old;
  const auto width = logits.cols() - static_cast<Eigen::Index>(n_old);
  LossResult part = finetune_loss(logits.rightCols(width), shifted);
  LossResult r;
  r.value = part.value;
  r.grad = RowMatrix::Zero(logits.rows(), logits.cols());
  r.grad.rightCols(width) = part.grad;
  return r;
}

// ---------------------------------------------------------------- finetune / replay

class FinetuneLearner final : public Learner {
 public:
  using Learner::Learner;
};

class ReplayLearner final : public Learner {
 public:
  explicit ReplayLearner(const LearnerConfig& cfg) : Learner(cfg) {
    require_buffer(cfg);
    buffer_.emplace(cfg.memory_size);
    mix_replay_ = true;
  }
};

// ---------------------------------------------------------------- EWC

class EwcLearner final : public Learner {
 public:
  using Learner::Learner;

 protected:
  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    model_.zero_grad();
    const auto out = model_.forward(x);
    const LossResult ce = ctx.task == 0 ? finetune_loss(out.logits, y) : new_class_ce(out.logits, y, ctx.n_old);
    model_.backward(ce.grad);
    double penalty = 0.0;
    for (nn::Param* p : model_.trainable_parameters()) {
      auto found = anchors_.find(p->name);
      if (found == anchors_.end()) continue;
      const auto& [theta_star, fisher] = found->second;
      const auto len = theta_star.size();
      const Eigen::Map<const Vector> theta(p->value.data.data(), len);
      const PenaltyResult pr = ewc_penalty(theta, theta_star, fisher, cfg_.hp.lambda_ewc);
      Eigen::Map<Vector>(p->grad.data.data(), len) += pr.grad;
      penalty += pr.value;
    }
    check_finite(ce.value + penalty, ctx);
    optimizer_.step(model_.trainable_parameters());
    return ce.value + penalty;
  }

  void finalize_task(TaskContext& ctx) override {
    const auto fisher = fisher_diagonal(model_, ctx.train, ctx.features, ctx.schedule);
    const double t = static_cast<double>(ctx.task);
    for (nn::Param* p : model_.trainable_parameters()) {
      const Vector& f_new = fisher.at(p->name);
      Vector merged = f_new;
      if (auto found = anchors_.find(p->name); found != anchors_.end()) {
        const Vector& f_old = found->second.second;
        merged.head(f_old.size()) = (t * f_old + f_new.head(f_old.size())) / (t + 1.0);
        merged.tail(f_new.size() - f_old.size()) /= (t + 1.0);
      }
      const Eigen::Map<const Vector> theta(p->value.data.data(), static_cast<Eigen::Index>(p->value.numel()));
      anchors_[p->name] = {theta, merged};
    }
  }

 private:
  // name -> (theta*, Fisher diagonal)
  std::map<std::string, std::pair<Vector, Vector>> anchors_;
};

// ---------------------------------------------------------------- LwF

class LwfLearner final : public Learner {
 public:
  using Learner::Learner;

 protected:
  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    model_.zero_grad();
    const auto out = model_.forward(x);
    LossResult loss;
    if (ctx.task == 0) {
      loss = finetune_loss(out.logits, y);
    } else {
      loss = new_class_ce(out.logits, y, ctx.n_old);
      const RowMatrix old_logits = old_model_->forward(x).logits;
      const auto k = static_cast<Eigen::Index>(ctx.n_old);
      const LossResult kd = distill_loss(old_logits, out.logits.leftCols(k), cfg_.hp.kd_temperature);
      loss.value += cfg_.hp.kd_weight * kd.value;
      loss.grad.leftCols(k) += cfg_.hp.kd_weight * kd.grad;
    }
    check_finite(loss.value, ctx);
    model_.backward(loss.grad);
    optimizer_.step(model_.trainable_parameters());
    return loss.value;
  }

  void finalize_task(TaskContext&) override { snapshot(); }
};

// ---------------------------------------------------------------- iCaRL family

// Exemplar replay with cross-entropy over all seen classes plus distillation
// from the previous model's old-class logits.
class DistillReplayLearner : public Learner {
 public:
  explicit DistillReplayLearner(const LearnerConfig& cfg) : Learner(cfg) {
    require_buffer(cfg);
    buffer_.emplace(cfg.memory_size);
    mix_replay_ = true;
  }

 protected:
  virtual RowMatrix teacher_logits(const nn::Tensor& x) { return old_model_->forward(x).logits; }

  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    model_.zero_grad();
    const auto out = model_.forward(x);
    const RowMatrix old_logits = ctx.task == 0 ? RowMatrix(out.logits.rows(), 0) : teacher_logits(x);
    const LossResult loss = icarl_loss(out.logits, y, old_logits, cfg_.hp.kd_temperature, cfg_.hp.kd_weight);
    check_finite(loss.value, ctx);
    model_.backward(loss.grad);
    optimizer_.step(model_.trainable_parameters());
    return loss.value;
  }
};

class IcarlLearner final : public DistillReplayLearner {
 public:
  using DistillReplayLearner::DistillReplayLearner;
  EvalMode eval_mode() const override { return EvalMode::kNme; }

 protected:
  void finalize_task(TaskContext& ctx) override {
    rebuild_buffer(ctx, ctx.train);
    snapshot();
    const auto means = class_means(*buffer_, embedder(ctx.features));
    means_.resize(static_cast<Eigen::Index>(means.size()), means.front().second.size());
    for (std::size_t c = 0; c < means.size(); ++c) {
      if (ctx.schedule.class_index(means[c].first) != c) fail(ErrorCode::kState, "class means out of class order");
      means_.row(static_cast<Eigen::Index>(c)) = means[c].second.transpose();
    }
  }

  RowMatrix raw_scores(const nn::Tensor& x) override { return nme_scores(normalize_rows(model_.embed(x)), means_); }

 private:
  RowMatrix means_;
};

class WaLearner final : public DistillReplayLearner {
 public:
  using DistillReplayLearner::DistillReplayLearner;

 protected:
  void finalize_task(TaskContext& ctx) override {
    if (ctx.task > 0) wa_align(model_.head(), ctx.n_old, ctx.n_seen - ctx.n_old);
    rebuild_buffer(ctx, ctx.train);
    snapshot();
  }
};

class BicLearner final : public DistillReplayLearner {
 public:
  using DistillReplayLearner::DistillReplayLearner;

 protected:
  void prepare_task(TaskContext& ctx) override {
    DistillReplayLearner::prepare_task(ctx);
    full_train_ = ctx.train;
    val_.clear();
    if (ctx.task == 0) return;

    std::map<Label, std::vector<SampleRef>> old_groups, new_groups;
    for (const auto& s : replay_pool_) old_groups[s.label].push_back(s);
    for (const auto& s : ctx.train) new_groups[s.label].push_back(s);
    std::size_t min_count = SIZE_MAX;
    for (const auto& [l, v] : old_groups) min_count = std::min(min_count, v.size());
    for (const auto& [l, v] : new_groups) min_count = std::min(min_count, v.size());
    const auto per_class = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg_.hp.bic_val_fraction * static_cast<double>(min_count))));

    std::set<std::string> held;
    for (const auto& [label, v] : old_groups) {
      // Herding order puts the least representative exemplars last.
      for (std::size_t i = v.size() - std::min(per_class, v.size()); i < v.size(); ++i) held.insert(v[i].clip_id);
    }
    for (auto& [label, v] : new_groups) {
      ctx.rng.shuffle(v);
      for (std::size_t i = 0; i < std::min(per_class, v.size()); ++i) held.insert(v[i].clip_id);
    }
    auto split = [&](std::vector<SampleRef>& from) {
      std::vector<SampleRef> keep;
      for (const auto& s : from) (held.count(s.clip_id) ? val_ : keep).push_back(s);
      from = std::move(keep);
    };
    split(replay_pool_);
    split(ctx.train);
  }

  RowMatrix teacher_logits(const nn::Tensor& x) override {
    RowMatrix z = old_model_->forward(x).logits;
    for (const auto& layer : bias_layers_) layer.apply(z);
    return z;
  }

  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    model_.zero_grad();
    const auto out = model_.forward(x);
    RowMatrix logits = out.logits;
    for (const auto& layer : bias_layers_) layer.apply(logits);
    const RowMatrix old_logits = ctx.task == 0 ? RowMatrix(logits.rows(), 0) : teacher_logits(x);
    LossResult loss = icarl_loss(logits, y, old_logits, cfg_.hp.kd_temperature, cfg_.hp.kd_weight);
    check_finite(loss.value, ctx);
    for (const auto& layer : bias_layers_) {
      loss.grad.middleCols(static_cast<Eigen::Index>(layer.begin), static_cast<Eigen::Index>(layer.end - layer.begin)) *=
          layer.alpha;
    }
    model_.backward(loss.grad);
    optimizer_.step(model_.trainable_parameters());
    return loss.value;
  }

  void finalize_task(TaskContext& ctx) override {
    if (ctx.task > 0) {
      RowMatrix logits = model_.forward(inputs(val_, ctx.features)).logits;
      for (const auto& layer : bias_layers_) layer.apply(logits);
      BiasLayer fresh;
      fresh.begin = ctx.n_old;
      fresh.end = ctx.n_seen;
      bias_layers_.push_back(
          bic_calibrate(fresh, logits, targets(val_, ctx.schedule), {cfg_.hp.bic_steps, cfg_.hp.bic_lr}));
    }
    rebuild_buffer(ctx, full_train_);
    snapshot();
  }

  RowMatrix raw_scores(const nn::Tensor& x) override {
    RowMatrix z = model_.forward(x).logits;
    for (const auto& layer : bias_layers_) layer.apply(z);
    return z;
  }

 private:
  std::vector<BiasLayer> bias_layers_;
  std::vector<SampleRef> full_train_;
  std::vector<SampleRef> val_;
};

// ---------------------------------------------------------------- GEM

class GemLearner final : public Learner {
 public:
  explicit GemLearner(const LearnerConfig& cfg) : Learner(cfg) {
    require_buffer(cfg);
    buffer_.emplace(cfg.memory_size);
  }

 protected:
  Vector flat_grad(const std::vector<nn::Param*>& params) const {
    std::size_t n = 0;
    for (const auto* p : params) n += p->grad.numel();
    Vector g(static_cast<Eigen::Index>(n));
    std::size_t off = 0;
    for (const auto* p : params) {
      std::copy(p->grad.data.begin(), p->grad.data.end(), g.data() + off);
      off += p->grad.numel();
    }
    return g;
  }

  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const auto params = model_.trainable_parameters();
    std::vector<Vector> memory_grads;
    if (ctx.task > 0) {
      std::vector<std::vector<SampleRef>> per_task(ctx.task);
      for (const auto& s : replay_pool_) per_task[ctx.schedule.task_of(s.label)].push_back(s);
      for (const auto& refs : per_task) {
        if (refs.empty()) continue;
        model_.zero_grad();
        const auto out = model_.forward(inputs(refs, ctx.features));
        model_.backward(finetune_loss(out.logits, targets(refs, ctx.schedule)).grad);
        memory_grads.push_back(flat_grad(params));
      }
    }
    const nn::Tensor x = inputs(batch, ctx.features);
    model_.zero_grad();
    const auto out = model_.forward(x);
    const LossResult ce = finetune_loss(out.logits, targets(batch, ctx.schedule));
    check_finite(ce.value, ctx);
    model_.backward(ce.grad);
    if (!memory_grads.empty()) {
      const Vector g = gem_project(flat_grad(params), memory_grads, cfg_.hp.gem_margin);
      std::size_t off = 0;
      for (auto* p : params) {
        std::copy_n(g.data() + off, p->grad.numel(), p->grad.data.begin());
        off += p->grad.numel();
      }
    }
    optimizer_.step(params);
    return ce.value;
  }
};

// ---------------------------------------------------------------- PODNet

class PodnetLearner final : public Learner {
 public:
  explicit PodnetLearner(const LearnerConfig& cfg) : Learner(cfg) {
    require_buffer(cfg);
    buffer_.emplace(cfg.memory_size);
    mix_replay_ = true;
  }

 protected:
  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    model_.zero_grad();
    const auto out = model_.forward(x);
    LossResult ce = finetune_loss(out.logits, y);
    double total = ce.value;
    if (ctx.task == 0) {
      check_finite(total, ctx);
      model_.backward(ce.grad);
    } else {
      const std::vector<nn::Tensor> current = model_.block_outputs();
      old_model_->forward(x);
      PodResult pod = pod_loss(old_model_->block_outputs(), current);
      for (auto& g : pod.grad) {
        for (double& v : g.data) v *= cfg_.hp.pod_weight;
      }
      total += cfg_.hp.pod_weight * pod.value;
      check_finite(total, ctx);
      model_.backward(ce.grad, nullptr, nullptr, &pod.grad);
    }
    optimizer_.step(model_.trainable_parameters());
    return total;
  }

  void finalize_task(TaskContext& ctx) override {
    rebuild_buffer(ctx, ctx.train);
    snapshot();
  }
};

// ---------------------------------------------------------------- DER

class DerLearner final : public Learner {
 public:
  explicit DerLearner(const LearnerConfig& cfg) : Learner(cfg) {
    require_buffer(cfg);
    buffer_.emplace(cfg.memory_size);
    mix_replay_ = true;
  }

 protected:
  void prepare_task(TaskContext& ctx) override {
    if (ctx.task == 0) {
      model_.expand_head(ctx.schedule.task_size(0));
    } else {
      model_.der_expand(ctx.schedule.task_size(ctx.task), cfg_.hp.der_clone_branch);
    }
    replay_pool_ = buffer_->samples();
  }

  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    model_.zero_grad();
    const auto out = model_.forward(x);
    const LossResult ce = finetune_loss(out.logits, y);
    double total = ce.value;
    if (out.aux_logits) {
      std::vector<std::size_t> aux_y(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) aux_y[i] = y[i] < ctx.n_old ? 0 : y[i] - ctx.n_old + 1;
      const LossResult aux = finetune_loss(*out.aux_logits, aux_y);
      total += aux.value;
      check_finite(total, ctx);
      model_.backward(ce.grad, &aux.grad);
    } else {
      check_finite(total, ctx);
      model_.backward(ce.grad);
    }
    optimizer_.step(model_.trainable_parameters());
    return total;
  }

  void finalize_task(TaskContext& ctx) override {
    model_.drop_aux_head();
    rebuild_buffer(ctx, ctx.train);
  }
};

// ---------------------------------------------------------------- ACIL

class AcilLearner final : public Learner {
 public:
  using Learner::Learner;
  EvalMode eval_mode() const override { return EvalMode::kAnalytic; }

 protected:
  void prepare_task(TaskContext& ctx) override {
    if (ctx.task == 0) Learner::prepare_task(ctx);
  }

  void train(TaskContext& ctx) override {
    if (ctx.task == 0) {
      Learner::train(ctx);
      return;
    }
    absorb(ctx);
  }

  void finalize_task(TaskContext& ctx) override {
    if (ctx.task != 0) return;
    model_.freeze_backbone();
    state_ = ACILState::create(model_.feature_dim(), cfg_.hp.acil_expansion_dim, cfg_.hp.gamma_acil, cfg_.seed);
    absorb(ctx);
  }

  RowMatrix raw_scores(const nn::Tensor& x) override { return state_->scores(model_.embed(x)); }

 private:
  void absorb(TaskContext& ctx) {
    std::vector<std::string> ids;
    for (const auto& s : ctx.train) ids.push_back(s.clip_id);
    acil_update(*state_, embed(ids, ctx.features), targets(ctx.train, ctx.schedule));
  }

  std::optional<ACILState> state_;
};

// ---------------------------------------------------------------- META-SC

class MetaScLearner final : public Learner {
 public:
  explicit MetaScLearner(const LearnerConfig& cfg)
      : Learner(cfg), classifier_(model_.feature_dim(), cfg.hp.metasc_scale) {}
  EvalMode eval_mode() const override { return EvalMode::kCosine; }

 protected:
  void prepare_task(TaskContext& ctx) override {
    if (ctx.task == 0) {
      Rng rng(derive_seed(cfg_.seed, "metasc/base-init"));
      RowMatrix means(static_cast<Eigen::Index>(ctx.schedule.task_size(0)),
                      static_cast<Eigen::Index>(model_.feature_dim()));
      for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = rng.normal();
      classifier_.add_classes(normalize_rows(means), cfg_.hp.metasc_log_var);
      return;
    }
    if (!cfg_.few_shot.enabled) return;
    std::map<Label, std::size_t> counts;
    for (const auto& s : ctx.train) ++counts[s.label];
    bool ok = counts.size() == cfg_.few_shot.n_way;
    for (const auto& [label, n] : counts) ok = ok && n == cfg_.few_shot.k_shot;
    if (!ok) {
      fail(ErrorCode::kInsufficientData, "session " + std::to_string(ctx.task) + " violates the " +
                                             std::to_string(cfg_.few_shot.n_way) + "-way " +
                                             std::to_string(cfg_.few_shot.k_shot) + "-shot contract");
    }
  }

  void train(TaskContext& ctx) override {
    if (ctx.task == 0) {
      Learner::train(ctx);
      return;
    }
    std::vector<std::string> ids;
    for (const auto& s : ctx.train) ids.push_back(s.clip_id);
    FewShotFitOptions opts{cfg_.hp.metasc_steps, cfg_.hp.metasc_lr, cfg_.hp.metasc_log_var};
    fewshot_fit(classifier_, embed(ids, ctx.features), targets(ctx.train, ctx.schedule), opts,
                derive_seed(cfg_.seed, "metasc/session/" + std::to_string(ctx.task)));
  }

  double train_step(TaskContext& ctx, const std::vector<SampleRef>& batch) override {
    const nn::Tensor x = inputs(batch, ctx.features);
    const auto y = targets(batch, ctx.schedule);
    Backbone& backbone = model_.branches().front();
    std::vector<nn::Param*> params = backbone.parameters("branch0");
    params.push_back(&classifier_.mean());
    params.push_back(&classifier_.log_var());
    nn::zero_grad(params);
    const RowMatrix emb = backbone.forward(x);
    const LossResult ce = finetune_loss(classifier_.forward_sample(emb, ctx.rng), y);
    check_finite(ce.value, ctx);
    backbone.backward(classifier_.backward(ce.grad, 0));
    optimizer_.step(params);
    return ce.value;
  }

  void finalize_task(TaskContext& ctx) override {
    if (ctx.task != 0) return;
    model_.freeze_backbone();
    // Base rows become base-class prototypes so that they compete with
    // imprinted session rows on the same footing.
    std::vector<std::string> ids;
    for (const auto& s : ctx.train) ids.push_back(s.clip_id);
    const RowMatrix unit = normalize_rows(embed(ids, ctx.features));
    const auto y = targets(ctx.train, ctx.schedule);
    RowMatrix protos = RowMatrix::Zero(static_cast<Eigen::Index>(classifier_.n_classes()), unit.cols());
    for (std::size_t i = 0; i < y.size(); ++i) protos.row(static_cast<Eigen::Index>(y[i])) += unit.row(static_cast<Eigen::Index>(i));
    protos = normalize_rows(protos);
    std::copy(protos.data(), protos.data() + protos.size(), classifier_.mean().value.data.begin());
  }

  RowMatrix raw_scores(const nn::Tensor& x) override {
    return classifier_.logits(model_.embed(x), StochasticClassifier::Mode::kMean);
  }

 private:
  StochasticClassifier classifier_;
};

}  // namespace

std::unique_ptr<Learner> make_learner(const LearnerConfig& cfg) {
  const std::string& key = cfg.algorithm;
  if (key == "finetune") return std::make_unique<FinetuneLearner>(cfg);
  if (key == "replay") return std::make_unique<ReplayLearner>(cfg);
  if (key == "ewc") return std::make_unique<EwcLearner>(cfg);
  if (key == "lwf") return std::make_unique<LwfLearner>(cfg);
  if (key == "icarl") return std::make_unique<IcarlLearner>(cfg);
  if (key == "gem") return std::make_unique<GemLearner>(cfg);
  if (key == "bic") return std::make_unique<BicLearner>(cfg);
  if (key == "wa") return std::make_unique<WaLearner>(cfg);
  if (key == "podnet") return std::make_unique<PodnetLearner>(cfg);
  if (key == "der") return std::make_unique<DerLearner>(cfg);
  if (key == "acil") return std::make_unique<AcilLearner>(cfg);
  if (key == "metasc") return std::make_unique<MetaScLearner>(cfg);
  std::string implemented, declared;
  for (const auto& info : learner_registry()) {
    auto& list = info.implemented ? implemented : declared;
    list += (list.empty() ? "" : ", ") + info.key;
  }
  for (const auto& info : learner_registry()) {
    if (info.key == key) {
      fail(ErrorCode::kUnknownRegistryKey, "model '" + key + "' is declared but not implemented; available: {" +
                                               implemented + "}");
    }
  }
  fail(ErrorCode::kUnknownRegistryKey, "unknown model '" + key + "'; available: {" + implemented +
                                           "}; declared but unimplemented: {" + declared + "}");
}

}  // namespace audiocil
