#include "audiocil/losses.hpp"

#include <cmath>

namespace audiocil {

RowMatrix log_softmax_rows(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

RowMatrix softmax_rows(const RowMatrix& logits) { return log_softmax_rows(logits).array().exp().matrix(); }

LossResult finetune_loss(const RowMatrix& logits, const std::vector<std::size_t>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    fail(ErrorCode::kDimensionMismatch, "logit rows and label count differ");
  }
  if (labels.empty()) fail(ErrorCode::kInvalidArgument, "empty batch");
  const RowMatrix logp = log_softmax_rows(logits);
  const double n = static_cast<double>(labels.size());
  LossResult r;
  r.grad = logp.array().exp().matrix() / n;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= static_cast<std::size_t>(logits.cols())) {
      fail(ErrorCode::kOutOfRange, "label index " + std::to_string(labels[i]) + " >= logit dimension " +
                                       std::to_string(logits.cols()));
    }
    const auto row = static_cast<Eigen::Index>(i);
    const auto col = static_cast<Eigen::Index>(labels[i]);
    r.value -= logp(row, col) / n;
    r.grad(row, col) -= 1.0 / n;
  }
  return r;
}

LossResult distill_loss(const RowMatrix& old_logits, const RowMatrix& new_logits, double temperature) {
  if (!(temperature > 0)) fail(ErrorCode::kInvalidArgument, "distillation temperature must be positive");
  if (old_logits.cols() == 0) fail(ErrorCode::kInvalidArgument, "distillation needs at least one old class");
  if (old_logits.rows() != new_logits.rows() || old_logits.cols() != new_logits.cols()) {
    fail(ErrorCode::kDimensionMismatch, "old and new logits differ in shape");
  }
  const double n = static_cast<double>(old_logits.rows());
  const RowMatrix logp = log_softmax_rows(old_logits / temperature);
  const RowMatrix logq = log_softmax_rows(new_logits / temperature);
  const RowMatrix p = logp.array().exp().matrix();
  LossResult r;
  r.value = temperature * temperature * (p.array() * (logp - logq).array()).sum() / n;
  r.grad = temperature * (logq.array().exp().matrix() - p) / n;
  return r;
}

LossResult icarl_loss(const RowMatrix& logits, const std::vector<std::size_t>& labels, const RowMatrix& old_logits,
                      double temperature, double kd_weight) {
  LossResult r = finetune_loss(logits, labels);
  if (old_logits.cols() == 0 || kd_weight == 0.0) return r;
  if (old_logits.cols() > logits.cols()) fail(ErrorCode::kDimensionMismatch, "more old classes than logits");
  const LossResult kd = distill_loss(old_logits, logits.leftCols(old_logits.cols()), temperature);
  r.value += kd_weight * kd.value;
  r.grad.leftCols(old_logits.cols()) += kd_weight * kd.grad;
  return r;
}

PenaltyResult ewc_penalty(const Vector& theta, const Vector& theta_star, const Vector& fisher, double lambda) {
  if (theta.size() != theta_star.size() || theta.size() != fisher.size()) {
    fail(ErrorCode::kDimensionMismatch, "EWC parameter, anchor and Fisher sizes differ");
  }
  const Vector diff = theta - theta_star;
  PenaltyResult r;
  r.value = 0.5 * lambda * (fisher.array() * diff.array().square()).sum();
  r.grad = lambda * (fisher.array() * diff.array()).matrix();
  return r;
}

namespace {
constexpr double kPodEps = 1e-8;

// Pools one sample's (C, H, W) map: along H -> (C, W), along W -> (C, H).
void pool_sample(const double* map, std::size_t c, std::size_t h, std::size_t w, Vector& along_h, Vector& along_w) {
  along_h = Vector::Zero(static_cast<Eigen::Index>(c * w));
  along_w = Vector::Zero(static_cast<Eigen::Index>(c * h));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = map[(ch * h + y) * w + x];
        along_h[static_cast<Eigen::Index>(ch * w + x)] += v;
        along_w[static_cast<Eigen::Index>(ch * h + y)] += v;
      }
    }
  }
}

// Squared distance between normalized vectors and its gradient w.r.t. `b`.
double normalized_distance(const Vector& a, const Vector& b, Vector& grad_b) {
  const double ra = std::sqrt(a.squaredNorm() + kPodEps * kPodEps);
  const double rb = std::sqrt(b.squaredNorm() + kPodEps * kPodEps);
  const Vector diff = a / ra - b / rb;
  const Vector v = -2.0 * diff;
  grad_b = (v - b * (b.dot(v) / (rb * rb))) / rb;
  return diff.squaredNorm();
}
}  // namespace

PodResult pod_loss(const std::vector<nn::Tensor>& old_maps, const std::vector<nn::Tensor>& new_maps) {
  if (old_maps.size() != new_maps.size()) fail(ErrorCode::kDimensionMismatch, "POD layer counts differ");
  PodResult r;
  for (std::size_t l = 0; l < new_maps.size(); ++l) {
    const nn::Tensor& o = old_maps[l];
    const nn::Tensor& m = new_maps[l];
    if (o.shape != m.shape || m.shape.size() != 4) {
      fail(ErrorCode::kDimensionMismatch, "POD feature map shape mismatch at layer " + std::to_string(l));
    }
    const std::size_t n = m.shape[0], c = m.shape[1], h = m.shape[2], w = m.shape[3];
    nn::Tensor g(m.shape);
    for (std::size_t s = 0; s < n; ++s) {
      Vector oh, ow, nh, nw, gh, gw;
      pool_sample(o.data.data() + s * c * h * w, c, h, w, oh, ow);
      pool_sample(m.data.data() + s * c * h * w, c, h, w, nh, nw);
      r.value += (normalized_distance(oh, nh, gh) + normalized_distance(ow, nw, gw)) / static_cast<double>(n);
      double* dst = g.data.data() + s * c * h * w;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            dst[(ch * h + y) * w + x] =
                (gh[static_cast<Eigen::Index>(ch * w + x)] + gw[static_cast<Eigen::Index>(ch * h + y)]) /
                static_cast<double>(n);
          }
        }
      }
    }
    r.grad.push_back(std::move(g));
  }
  return r;
}

}  // namespace audiocil
