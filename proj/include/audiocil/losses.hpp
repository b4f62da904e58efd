#pragma once

#include "audiocil/common.hpp"
#include "audiocil/nn.hpp"

#include <vector>

namespace audiocil {

// Scalar loss and its gradient with respect to the differentiable input.
struct LossResult {
  double value = 0.0;
  RowMatrix grad;
};

// Mean cross-entropy over the batch; labels are logit column indices.
LossResult finetune_loss(const RowMatrix& logits, const std::vector<std::size_t>& labels);

/// T^2 * KL(softmax(old / T) || softmax(new / T)), averaged over the batch.
/// Gradient is with respect to `new_logits`.
LossResult distill_loss(const RowMatrix& old_logits, const RowMatrix& new_logits, double temperature);

/// Cross-entropy over every column of `logits` plus kd_weight times the
/// distillation term on the first old_logits.cols() columns. With no old
/// columns this is exactly finetune_loss.
LossResult icarl_loss(const RowMatrix& logits, const std::vector<std::size_t>& labels, const RowMatrix& old_logits,
                      double temperature, double kd_weight);

struct PenaltyResult {
  double value = 0.0;
  Vector grad;
};

// (lambda / 2) * sum_k F_k (theta_k - theta*_k)^2
PenaltyResult ewc_penalty(const Vector& theta, const Vector& theta_star, const Vector& fisher, double lambda);

struct PodResult {
  double value = 0.0;
  std::vector<nn::Tensor> grad;  // one per layer, same shape as the maps
};

/// Pooled-output distillation over (N, C, H, W) maps: for each layer the
/// squared distance between L2-normalized height-pooled and width-pooled
/// maps, summed over layers and averaged over the batch.
PodResult pod_loss(const std::vector<nn::Tensor>& old_maps, const std::vector<nn::Tensor>& new_maps);

RowMatrix softmax_rows(const RowMatrix& logits);
RowMatrix log_softmax_rows(const RowMatrix& logits);

}  // namespace audiocil
