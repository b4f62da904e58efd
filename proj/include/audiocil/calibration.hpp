#pragma once

#include "audiocil/models.hpp"

#include <vector>

namespace audiocil {

/// Scales the classifier rows [n_old, n_old + n_new) by
/// mean(||w_old||) / mean(||w_new||). Biases and old rows are untouched.
/// Returns the applied factor.
double wa_align(nn::Linear& head, std::size_t n_old, std::size_t n_new);

struct BiasFitOptions {
  std::size_t steps = 1000;
  double learning_rate = 0.01;
};

/// Fits alpha and beta of `layer` (its column range marks the newest class
/// group) by minimizing cross-entropy of the corrected logits on a held-out
/// validation set that contains both old- and new-group labels. The input
/// logits come from the frozen model.
BiasLayer bic_calibrate(BiasLayer layer, const RowMatrix& val_logits, const std::vector<std::size_t>& val_labels,
                        const BiasFitOptions& options = {});

// Mean cross-entropy of the bias-corrected logits.
double bias_corrected_loss(const BiasLayer& layer, const RowMatrix& logits, const std::vector<std::size_t>& labels);

}  // namespace audiocil
