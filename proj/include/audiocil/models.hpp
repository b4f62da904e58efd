#pragma once

#include "audiocil/audio_data.hpp"
#include "audiocil/nn.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace audiocil {

struct BackboneInfo {
  std::string key;
  std::string description;
};

const std::vector<BackboneInfo>& backbone_registry();

/// Convolutional feature extractor: a stack of blocks followed by global
/// average pooling. The per-block outputs of the latest forward pass stay
/// available for pooled-output distillation.
class Backbone {
 public:
  using Block = std::vector<std::unique_ptr<nn::Layer>>;

  Backbone(std::string type, std::size_t feature_dim, std::vector<Block> blocks);
  Backbone(const Backbone& other);
  Backbone& operator=(const Backbone& other);
  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;

  // (N, 1, n_mels, n_frames) -> (N, feature_dim)
  RowMatrix forward(const nn::Tensor& input);
  // Gradients for the embedding and, optionally, for each block output.
  void backward(const RowMatrix& grad_embedding, const std::vector<nn::Tensor>* block_grads = nullptr);

  const std::vector<nn::Tensor>& block_outputs() const { return block_outputs_; }
  std::vector<nn::Param*> parameters(const std::string& prefix);

  const std::string& type() const { return type_; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

 private:
  std::string type_;
  std::size_t feature_dim_;
  std::vector<Block> blocks_;
  nn::GlobalAvgPool pool_;
  std::vector<nn::Tensor> block_outputs_;
  bool frozen_ = false;
};

Backbone build_backbone(const std::string& convnet_type, std::size_t feature_dim, Rng& rng);

// Stacks log-mel tensors into an (N, 1, n_mels, n_frames) batch, standardizing
// each clip to zero mean and unit variance.
nn::Tensor stack_features(const std::vector<const FeatureTensor*>& features);

struct ModelConfig {
  std::string convnet_type = "tiny-cnn";
  std::size_t feature_dim = 64;
  std::uint64_t seed = 1993;
};

/// Backbone branch(es) plus an expandable linear head. A plain model has one
/// branch; DER-style expansion appends branches and freezes the older ones.
class IncrementalModel {
 public:
  struct Output {
    RowMatrix features;
    RowMatrix logits;
    std::optional<RowMatrix> aux_logits;
  };

  explicit IncrementalModel(const ModelConfig& cfg);

  Output forward(const nn::Tensor& input);
  // Embedding only (concatenation over branches).
  RowMatrix embed(const nn::Tensor& input);
  void backward(const RowMatrix& grad_logits, const RowMatrix* grad_aux = nullptr,
                const RowMatrix* grad_features = nullptr, const std::vector<nn::Tensor>* block_grads = nullptr);

  /// Appends n_new output rows; existing rows are copied bit-exact.
  void expand_head(std::size_t n_new);
  /// Freezes every existing branch, appends a fresh (or cloned) branch,
  /// widens the head over the concatenated features and creates an
  /// (n_new + 1)-way auxiliary head on the new branch.
  void der_expand(std::size_t n_new, bool clone_last = false);
  void drop_aux_head() { aux_head_.reset(); }
  void freeze_backbone();

  std::vector<nn::Param*> parameters();
  std::vector<nn::Param*> trainable_parameters();
  void zero_grad();

  std::size_t n_classes_seen() const { return head_.out_features(); }
  std::size_t feature_dim() const { return head_.in_features(); }
  std::vector<std::size_t> branch_dims() const;
  const ModelConfig& config() const { return cfg_; }

  std::vector<Backbone>& branches() { return branches_; }
  const std::vector<Backbone>& branches() const { return branches_; }
  nn::Linear& head() { return head_; }
  const nn::Linear& head() const { return head_; }
  bool has_aux_head() const { return aux_head_.has_value(); }
  const std::vector<nn::Tensor>& block_outputs() const { return branches_.back().block_outputs(); }

  // Used by checkpoint restore: grows structure without touching values.
  void restructure(std::size_t n_branches, std::size_t n_classes, std::optional<std::size_t> aux_outputs);

 private:
  ModelConfig cfg_;
  Rng rng_;
  std::vector<Backbone> branches_;
  nn::Linear head_;
  std::optional<nn::Linear> aux_head_;
};

/// logits' = alpha * logits + beta on columns [begin, end) only.
struct BiasLayer {
  double alpha = 1.0;
  double beta = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;

  void apply(RowMatrix& logits) const;
};

/// Cosine classifier with Gaussian weights N(mean, exp(log_var)).
class StochasticClassifier {
 public:
  static constexpr double kLogVarFloor = -40.0;
  enum class Mode { kSample, kMean };

  StochasticClassifier(std::size_t feature_dim, double scale);

  std::size_t n_classes() const { return n_classes_; }
  std::size_t feature_dim() const { return dim_; }
  double scale() const { return scale_; }

  // Appends classes whose mean rows are given; log-variance set to a constant.
  void add_classes(const RowMatrix& means, double log_var);

  RowMatrix logits(const RowMatrix& embeddings, Mode mode, Rng* rng = nullptr) const;
  // Sampled forward pass retained for backward.
  RowMatrix forward_sample(const RowMatrix& embeddings, Rng& rng);
  // Accumulates gradients into rows >= first_row; returns d(loss)/d(embeddings).
  RowMatrix backward(const RowMatrix& grad_logits, std::size_t first_row = 0);

  nn::Param& mean() { return mean_; }
  nn::Param& log_var() { return log_var_; }
  const nn::Param& mean() const { return mean_; }
  const nn::Param& log_var() const { return log_var_; }

 private:
  std::size_t dim_;
  std::size_t n_classes_ = 0;
  double scale_;
  nn::Param mean_;     // classes x dim
  nn::Param log_var_;  // classes x dim
  RowMatrix cache_emb_, cache_w_, cache_eps_;
};

RowMatrix stochastic_logits(const StochasticClassifier& classifier, const RowMatrix& embeddings,
                            StochasticClassifier::Mode mode, std::uint64_t seed);

// Checkpoint: binary archive of named parameter arrays plus a JSON sidecar
// at <path>.json with {n_classes_seen, branch_dims, config_hash, ...}.
void save_checkpoint(IncrementalModel& model, const std::filesystem::path& path, const std::string& config_hash);
IncrementalModel load_checkpoint(const std::filesystem::path& path);
std::map<std::string, nn::Tensor> read_parameter_archive(const std::filesystem::path& path);

}  // namespace audiocil
