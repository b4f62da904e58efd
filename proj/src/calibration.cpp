#include "audiocil/calibration.hpp"

#include "audiocil/losses.hpp"

#include <cmath>

namespace audiocil {

double wa_align(nn::Linear& head, std::size_t n_old, std::size_t n_new) {
  if (n_old == 0 || n_new == 0) fail(ErrorCode::kInvalidArgument, "weight alignment needs old and new classes");
  const std::size_t rows = head.out_features();
  if (n_old + n_new > rows) fail(ErrorCode::kDimensionMismatch, "weight alignment range exceeds head size");
  auto w = head.weight().value.matrix(rows);
  const Eigen::VectorXd norms = w.rowwise().norm();
  const double old_mean = norms.head(static_cast<Eigen::Index>(n_old)).mean();
  const auto new_norms = norms.segment(static_cast<Eigen::Index>(n_old), static_cast<Eigen::Index>(n_new));
  if ((new_norms.array() <= 0.0).any()) fail(ErrorCode::kDegenerate, "zero-norm classifier row in the new group");
  const double gamma = old_mean / new_norms.mean();
  w.middleRows(static_cast<Eigen::Index>(n_old), static_cast<Eigen::Index>(n_new)) *= gamma;
  return gamma;
}

double bias_corrected_loss(const BiasLayer& layer, const RowMatrix& logits, const std::vector<std::size_t>& labels) {
  RowMatrix z = logits;
  layer.apply(z);
  return finetune_loss(z, labels).value;
}

BiasLayer bic_calibrate(BiasLayer layer, const RowMatrix& val_logits, const std::vector<std::size_t>& val_labels,
                        const BiasFitOptions& options) {
  if (val_labels.empty()) fail(ErrorCode::kInsufficientData, "bias calibration needs a non-empty validation set");
  bool has_old = false, has_new = false;
  for (auto y : val_labels) {
    if (y < layer.begin) has_old = true;
    if (y >= layer.begin && y < layer.end) has_new = true;
  }
  if (!has_old || !has_new) {
    fail(ErrorCode::kInsufficientData, "bias calibration validation set must contain old and new classes");
  }
  const auto begin = static_cast<Eigen::Index>(layer.begin);
  const auto width = static_cast<Eigen::Index>(layer.end - layer.begin);
  // Adam on (alpha, beta); full-batch, so the trajectory is deterministic.
  double m[2] = {0, 0}, v[2] = {0, 0};
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t t = 1; t <= options.steps; ++t) {
    RowMatrix z = val_logits;
    layer.apply(z);
    const LossResult ce = finetune_loss(z, val_labels);
    const auto g_new = ce.grad.middleCols(begin, width);
    const double grad[2] = {
        (g_new.array() * val_logits.middleCols(begin, width).array()).sum(),
        g_new.sum(),
    };
    double* params[2] = {&layer.alpha, &layer.beta};
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      const double mh = m[i] / (1 - std::pow(b1, static_cast<double>(t)));
      const double vh = v[i] / (1 - std::pow(b2, static_cast<double>(t)));
      *params[i] -= options.learning_rate * mh / (std::sqrt(vh) + eps);
    }
  }
  return layer;
}

}  // namespace audiocil
