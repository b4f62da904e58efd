#include "audiocil/models.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace audiocil {

namespace fs = std::filesystem;
using nn::Tensor;

const std::vector<BackboneInfo>& backbone_registry() {
  static const std::vector<BackboneInfo> registry = {
      {"tiny-cnn", "four conv-relu-maxpool blocks (8, 16, 32, feature_dim channels) + global average pooling"},
      {"resnet-small", "conv stem + three residual blocks with max pooling + global average pooling"},
  };
  return registry;
}

// ---------------------------------------------------------------- Backbone

Backbone::Backbone(std::string type, std::size_t feature_dim, std::vector<Block> blocks)
    : type_(std::move(type)), feature_dim_(feature_dim), blocks_(std::move(blocks)) {}

Backbone::Backbone(const Backbone& other)
    : type_(other.type_),
      feature_dim_(other.feature_dim_),
      pool_(other.pool_),
      block_outputs_(other.block_outputs_),
      frozen_(other.frozen_) {
  for (const auto& block : other.blocks_) {
    Block copy;
    for (const auto& layer : block) copy.push_back(layer->clone());
    blocks_.push_back(std::move(copy));
  }
}

Backbone& Backbone::operator=(const Backbone& other) {
  if (this != &other) *this = Backbone(other);
  return *this;
}

RowMatrix Backbone::forward(const Tensor& input) {
  block_outputs_.clear();
  Tensor x = input;
  for (auto& block : blocks_) {
    for (auto& layer : block) x = layer->forward(x);
    block_outputs_.push_back(x);
  }
  const Tensor pooled = pool_.forward(x);
  if (pooled.shape[1] != feature_dim_) {
    fail(ErrorCode::kDimensionMismatch, "backbone produced " + std::to_string(pooled.shape[1]) +
                                            " features, expected " + std::to_string(feature_dim_));
  }
  return pooled.to_matrix();
}

void Backbone::backward(const RowMatrix& grad_embedding, const std::vector<Tensor>* block_grads) {
  Tensor g = pool_.backward(Tensor::from_matrix(grad_embedding), true);
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    if (block_grads != nullptr && b < block_grads->size() && !(*block_grads)[b].data.empty()) {
      const Tensor& extra = (*block_grads)[b];
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += extra.data[i];
    }
    auto& block = blocks_[b];
    for (std::size_t l = block.size(); l-- > 0;) {
      const bool need_input = !(b == 0 && l == 0);
      g = block[l]->backward(g, need_input);
    }
  }
}

std::vector<nn::Param*> Backbone::parameters(const std::string& prefix) {
  std::vector<nn::Param*> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t l = 0; l < blocks_[b].size(); ++l) {
      blocks_[b][l]->collect(prefix + ".block" + std::to_string(b) + ".layer" + std::to_string(l), out);
    }
  }
  return out;
}

Backbone build_backbone(const std::string& convnet_type, std::size_t feature_dim, Rng& rng) {
  if (feature_dim == 0) fail(ErrorCode::kInvalidArgument, "feature_dim must be positive");
  std::vector<Backbone::Block> blocks;
  auto conv_block = [&](std::size_t in, std::size_t out) {
    Backbone::Block block;
    block.push_back(std::make_unique<nn::Conv2d>(in, out, 3, rng));
    block.push_back(std::make_unique<nn::ReLU>());
    block.push_back(std::make_unique<nn::MaxPool2>());
    return block;
  };
  if (convnet_type == "tiny-cnn") {
    blocks.push_back(conv_block(1, 8));
    blocks.push_back(conv_block(8, 16));
    blocks.push_back(conv_block(16, 32));
    blocks.push_back(conv_block(32, feature_dim));
  } else if (convnet_type == "resnet-small") {
    blocks.push_back(conv_block(1, 8));
    const std::size_t widths[] = {8, 16, 32, feature_dim};
    for (int i = 0; i < 3; ++i) {
      Backbone::Block block;
      block.push_back(std::make_unique<nn::ResidualBlock>(widths[i], widths[i + 1], rng));
      block.push_back(std::make_unique<nn::MaxPool2>());
      blocks.push_back(std::move(block));
    }
  } else {
    std::string known;
    for (const auto& info : backbone_registry()) known += (known.empty() ? "" : ", ") + info.key;
    fail(ErrorCode::kUnknownRegistryKey, "unknown convnet_type '" + convnet_type + "'; registered backbones: {" + known + "}");
  }
  return Backbone(convnet_type, feature_dim, std::move(blocks));
}

Tensor stack_features(const std::vector<const FeatureTensor*>& features) {
  if (features.empty()) fail(ErrorCode::kInvalidArgument, "cannot stack an empty feature list");
  const std::size_t m = features[0]->n_mels, f = features[0]->n_frames;
  Tensor out({features.size(), 1, m, f});
  for (std::size_t i = 0; i < features.size(); ++i) {
    const FeatureTensor& ft = *features[i];
    if (ft.n_mels != m || ft.n_frames != f) fail(ErrorCode::kDimensionMismatch, "feature tensors differ in shape");
    const Eigen::Map<const Eigen::ArrayXd> v(ft.values.data(), static_cast<Eigen::Index>(ft.values.size()));
    const double mean = v.mean();
    const double sd = std::sqrt((v - mean).square().mean());
    Eigen::Map<Eigen::ArrayXd> dst(out.data.data() + i * m * f, static_cast<Eigen::Index>(m * f));
    dst = (v - mean) / std::max(sd, 1e-6);
  }
  return out;
}

// ---------------------------------------------------------------- IncrementalModel

IncrementalModel::IncrementalModel(const ModelConfig& cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, "model")) {
  branches_.push_back(build_backbone(cfg_.convnet_type, cfg_.feature_dim, rng_));
  head_ = nn::Linear(cfg_.feature_dim, 0, rng_, "head");
}

std::vector<std::size_t> IncrementalModel::branch_dims() const {
  std::vector<std::size_t> dims;
  for (const auto& b : branches_) dims.push_back(b.feature_dim());
  return dims;
}

RowMatrix IncrementalModel::embed(const Tensor& input) {
  if (branches_.size() == 1) return branches_[0].forward(input);
  RowMatrix features(static_cast<Eigen::Index>(input.shape[0]), static_cast<Eigen::Index>(feature_dim()));
  Eigen::Index col = 0;
  for (auto& branch : branches_) {
    const RowMatrix f = branch.forward(input);
    features.middleCols(col, f.cols()) = f;
    col += f.cols();
  }
  return features;
}

IncrementalModel::Output IncrementalModel::forward(const Tensor& input) {
  Output out;
  out.features = embed(input);
  out.logits = head_.forward(out.features);
  if (aux_head_) {
    const auto last = static_cast<Eigen::Index>(branches_.back().feature_dim());
    out.aux_logits = aux_head_->forward(out.features.rightCols(last));
  }
  return out;
}

void IncrementalModel::backward(const RowMatrix& grad_logits, const RowMatrix* grad_aux, const RowMatrix* grad_features,
                                const std::vector<Tensor>* block_grads) {
  RowMatrix g = head_.backward(grad_logits);
  if (grad_features != nullptr) g += *grad_features;
  if (grad_aux != nullptr) {
    if (!aux_head_) fail(ErrorCode::kState, "auxiliary gradient given but model has no auxiliary head");
    const auto last = static_cast<Eigen::Index>(branches_.back().feature_dim());
    g.rightCols(last) += aux_head_->backward(*grad_aux);
  }
  Eigen::Index col = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    auto& branch = branches_[b];
    const auto width = static_cast<Eigen::Index>(branch.feature_dim());
    if (!branch.frozen()) {
      const bool last = b + 1 == branches_.size();
      branch.backward(g.middleCols(col, width), last ? block_grads : nullptr);
    }
    col += width;
  }
}

void IncrementalModel::expand_head(std::size_t n_new) {
  if (n_new == 0) fail(ErrorCode::kInvalidArgument, "expand_head called with zero new classes");
  const std::size_t n_old = head_.out_features();
  const std::size_t in = head_.in_features();
  nn::Linear grown(in, n_old + n_new, rng_, "head");
  grown.weight().value.matrix(n_old + n_new).topRows(static_cast<Eigen::Index>(n_old)) =
      head_.weight().value.matrix(n_old);
  std::copy_n(head_.bias().value.data.begin(), n_old, grown.bias().value.data.begin());
  head_ = std::move(grown);
}

void IncrementalModel::der_expand(std::size_t n_new, bool clone_last) {
  if (n_new == 0) fail(ErrorCode::kInvalidArgument, "der_expand called with zero new classes");
  for (auto& b : branches_) b.set_frozen(true);
  Backbone fresh = clone_last ? Backbone(branches_.back()) : build_backbone(cfg_.convnet_type, cfg_.feature_dim, rng_);
  fresh.set_frozen(false);
  branches_.push_back(std::move(fresh));

  const std::size_t n_old = head_.out_features();
  const std::size_t old_in = head_.in_features();
  const std::size_t new_in = old_in + branches_.back().feature_dim();
  nn::Linear grown(new_in, n_old + n_new, rng_, "head");
  grown.weight().value.matrix(n_old + n_new).topLeftCorner(static_cast<Eigen::Index>(n_old),
                                                           static_cast<Eigen::Index>(old_in)) =
      head_.weight().value.matrix(n_old);
  std::copy_n(head_.bias().value.data.begin(), n_old, grown.bias().value.data.begin());
  head_ = std::move(grown);
  aux_head_ = nn::Linear(branches_.back().feature_dim(), n_new + 1, rng_, "aux_head");
}

void IncrementalModel::freeze_backbone() {
  for (auto& b : branches_) b.set_frozen(true);
}

std::vector<nn::Param*> IncrementalModel::parameters() {
  std::vector<nn::Param*> out;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    auto ps = branches_[b].parameters("branch" + std::to_string(b));
    out.insert(out.end(), ps.begin(), ps.end());
  }
  head_.collect(out);
  if (aux_head_) aux_head_->collect(out);
  return out;
}

std::vector<nn::Param*> IncrementalModel::trainable_parameters() {
  std::vector<nn::Param*> out;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    if (branches_[b].frozen()) continue;
    auto ps = branches_[b].parameters("branch" + std::to_string(b));
    out.insert(out.end(), ps.begin(), ps.end());
  }
  head_.collect(out);
  if (aux_head_) aux_head_->collect(out);
  return out;
}

void IncrementalModel::zero_grad() { nn::zero_grad(parameters()); }

void IncrementalModel::restructure(std::size_t n_branches, std::size_t n_classes,
                                   std::optional<std::size_t> aux_outputs) {
  while (branches_.size() < n_branches) {
    for (auto& b : branches_) b.set_frozen(true);
    branches_.push_back(build_backbone(cfg_.convnet_type, cfg_.feature_dim, rng_));
  }
  std::size_t in = 0;
  for (const auto& b : branches_) in += b.feature_dim();
  head_ = nn::Linear(in, n_classes, rng_, "head");
  if (aux_outputs) {
    aux_head_ = nn::Linear(branches_.back().feature_dim(), *aux_outputs, rng_, "aux_head");
  } else {
    aux_head_.reset();
  }
}

// ---------------------------------------------------------------- BiasLayer

void BiasLayer::apply(RowMatrix& logits) const {
  if (end > static_cast<std::size_t>(logits.cols()) || begin > end) {
    fail(ErrorCode::kDimensionMismatch, "bias layer range exceeds logit width");
  }
  auto block = logits.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  block = (alpha * block.array() + beta).matrix();
}

// ---------------------------------------------------------------- StochasticClassifier

StochasticClassifier::StochasticClassifier(std::size_t feature_dim, double scale) : dim_(feature_dim), scale_(scale) {
  if (!(scale > 0)) fail(ErrorCode::kInvalidArgument, "stochastic classifier scale must be positive");
  mean_.name = "stochastic.mean";
  log_var_.name = "stochastic.log_var";
  mean_.value = Tensor({0, dim_});
  mean_.grad = Tensor({0, dim_});
  log_var_.value = Tensor({0, dim_});
  log_var_.grad = Tensor({0, dim_});
}

void StochasticClassifier::add_classes(const RowMatrix& means, double log_var) {
  if (static_cast<std::size_t>(means.cols()) != dim_) {
    fail(ErrorCode::kDimensionMismatch, "class means have dimension " + std::to_string(means.cols()) + ", expected " +
                                            std::to_string(dim_));
  }
  const std::size_t total = n_classes_ + static_cast<std::size_t>(means.rows());
  auto grow = [&](nn::Param& p, const RowMatrix& rows) {
    Tensor value({total, dim_});
    value.matrix(total).topRows(static_cast<Eigen::Index>(n_classes_)) = p.value.matrix(n_classes_);
    value.matrix(total).bottomRows(rows.rows()) = rows;
    p.value = std::move(value);
    p.grad = Tensor({total, dim_});
  };
  grow(mean_, means);
  grow(log_var_, RowMatrix::Constant(means.rows(), static_cast<Eigen::Index>(dim_), log_var));
  n_classes_ = total;
}

namespace {
RowMatrix row_normalized(const RowMatrix& m, Eigen::VectorXd& norms) {
  norms = m.rowwise().norm().cwiseMax(1e-12);
  return norms.asDiagonal().inverse() * m;
}
}  // namespace

RowMatrix StochasticClassifier::logits(const RowMatrix& embeddings, Mode mode, Rng* rng) const {
  if (static_cast<std::size_t>(embeddings.cols()) != dim_) {
    fail(ErrorCode::kDimensionMismatch, "embedding dimension " + std::to_string(embeddings.cols()) +
                                            " does not match classifier dimension " + std::to_string(dim_));
  }
  RowMatrix w = mean_.value.matrix(n_classes_);
  if (mode == Mode::kSample) {
    if (rng == nullptr) fail(ErrorCode::kInvalidArgument, "sample mode requires a random generator");
    const auto lv = log_var_.value.matrix(n_classes_);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        w(i, j) += std::exp(0.5 * std::max(lv(i, j), kLogVarFloor)) * rng->normal();
      }
    }
  }
  Eigen::VectorXd en, wn;
  return scale_ * row_normalized(embeddings, en) * row_normalized(w, wn).transpose();
}

RowMatrix StochasticClassifier::forward_sample(const RowMatrix& embeddings, Rng& rng) {
  if (static_cast<std::size_t>(embeddings.cols()) != dim_) {
    fail(ErrorCode::kDimensionMismatch, "embedding dimension mismatch in stochastic classifier");
  }
  cache_emb_ = embeddings;
  cache_eps_.resize(static_cast<Eigen::Index>(n_classes_), static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < cache_eps_.rows(); ++i) {
    for (Eigen::Index j = 0; j < cache_eps_.cols(); ++j) cache_eps_(i, j) = rng.normal();
  }
  const auto lv = log_var_.value.matrix(n_classes_);
  const RowMatrix sd = (0.5 * lv.array().max(kLogVarFloor)).exp().matrix();
  cache_w_ = mean_.value.matrix(n_classes_) + sd.cwiseProduct(cache_eps_);
  Eigen::VectorXd en, wn;
  return scale_ * row_normalized(cache_emb_, en) * row_normalized(cache_w_, wn).transpose();
}

RowMatrix StochasticClassifier::backward(const RowMatrix& grad_logits, std::size_t first_row) {
  Eigen::VectorXd en, wn;
  const RowMatrix e_hat = row_normalized(cache_emb_, en);
  const RowMatrix w_hat = row_normalized(cache_w_, wn);
  const RowMatrix cos = e_hat * w_hat.transpose();
  const RowMatrix g = scale_ * grad_logits;  // d loss / d cos
  // d cos_ij / d w_j = (e_hat_i - cos_ij w_hat_j) / |w_j|
  RowMatrix dw = g.transpose() * e_hat;
  dw -= (g.cwiseProduct(cos)).colwise().sum().transpose().asDiagonal() * w_hat;
  dw = wn.asDiagonal().inverse() * dw;
  RowMatrix de = g * w_hat;
  de -= (g.cwiseProduct(cos)).rowwise().sum().asDiagonal() * e_hat;
  de = en.asDiagonal().inverse() * de;

  const auto lv = log_var_.value.matrix(n_classes_);
  auto gm = mean_.grad.matrix(n_classes_);
  auto gl = log_var_.grad.matrix(n_classes_);
  for (std::size_t r = first_row; r < n_classes_; ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    for (Eigen::Index j = 0; j < dw.cols(); ++j) {
      gm(i, j) += dw(i, j);
      if (lv(i, j) > kLogVarFloor) gl(i, j) += dw(i, j) * cache_eps_(i, j) * 0.5 * std::exp(0.5 * lv(i, j));
    }
  }
  return de;
}

RowMatrix stochastic_logits(const StochasticClassifier& classifier, const RowMatrix& embeddings,
                            StochasticClassifier::Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  return classifier.logits(embeddings, mode, &rng);
}

// ---------------------------------------------------------------- checkpoints

namespace {
constexpr char kArchiveMagic[8] = {'A', 'C', 'I', 'L', 'C', 'K', 'P', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorCode::kCorruptData, "truncated parameter archive");
  return v;
}
}  // namespace

void save_checkpoint(IncrementalModel& model, const fs::path& path, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint " + path.string());
  const auto params = model.parameters();
  out.write(kArchiveMagic, sizeof kArchiveMagic);
  write_u64(out, params.size());
  for (const nn::Param* p : params) {
    write_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u64(out, p->value.shape.size());
    for (auto d : p->value.shape) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
  }
  nlohmann::json sidecar = {
      {"n_classes_seen", model.n_classes_seen()},
      {"branch_dims", model.branch_dims()},
      {"config_hash", config_hash},
      {"convnet_type", model.config().convnet_type},
      {"feature_dim", model.config().feature_dim},
      {"seed", model.config().seed},
      {"aux_outputs", model.has_aux_head() ? nlohmann::json(0) : nlohmann::json(nullptr)},
  };
  for (const nn::Param* p : params) {
    if (p->name == "aux_head.bias") sidecar["aux_outputs"] = p->value.numel();
  }
  std::ofstream side(fs::path(path.string() + ".json"));
  side << sidecar.dump(2) << "\n";
}

std::map<std::string, Tensor> read_parameter_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  char magic[sizeof kArchiveMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kArchiveMagic)) {
    fail(ErrorCode::kCorruptData, "not a parameter archive: " + path.string());
  }
  std::map<std::string, Tensor> out;
  const std::uint64_t count = read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    std::vector<std::size_t> shape(read_u64(in));
    for (auto& d : shape) d = read_u64(in);
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
      fail(ErrorCode::kCorruptData, "truncated parameter archive " + path.string());
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

IncrementalModel load_checkpoint(const fs::path& path) {
  std::ifstream side(fs::path(path.string() + ".json"));
  if (!side) fail(ErrorCode::kIo, "missing checkpoint sidecar " + path.string() + ".json");
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptData, std::string("bad checkpoint sidecar: ") + e.what());
  }
  ModelConfig cfg;
  cfg.convnet_type = meta.at("convnet_type").get<std::string>();
  cfg.feature_dim = meta.at("feature_dim").get<std::size_t>();
  cfg.seed = meta.at("seed").get<std::uint64_t>();
  IncrementalModel model(cfg);
  std::optional<std::size_t> aux;
  if (!meta.at("aux_outputs").is_null()) aux = meta.at("aux_outputs").get<std::size_t>();
  model.restructure(meta.at("branch_dims").size(), meta.at("n_classes_seen").get<std::size_t>(), aux);
  const auto archive = read_parameter_archive(path);
  for (nn::Param* p : model.parameters()) {
    auto found = archive.find(p->name);
    if (found == archive.end() || found->second.shape != p->value.shape) {
      fail(ErrorCode::kCorruptData, "checkpoint parameter '" + p->name + "' missing or mis-shaped");
    }
    p->value = found->second;
  }
  return model;
}

}  // namespace audiocil
