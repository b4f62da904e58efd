#pragma once

#include "audiocil/common.hpp"

#include <vector>

namespace audiocil {

/// Analytic classifier over randomly expanded frozen embeddings:
/// phi = relu(embedding * projection), scores = phi * weights.
/// `inverse_autocorrelation` tracks (Phi^T Phi + gamma I)^-1 over every
/// sample absorbed so far, so that `weights` always equals the joint ridge
/// solution.
struct ACILState {
  RowMatrix projection;               // feature_dim x expansion_dim
  RowMatrix inverse_autocorrelation;  // expansion_dim x expansion_dim
  RowMatrix weights;                  // expansion_dim x classes seen
  double gamma = 1.0;

  static ACILState create(std::size_t feature_dim, std::size_t expansion_dim, double gamma, std::uint64_t seed);

  std::size_t expansion_dim() const { return static_cast<std::size_t>(projection.cols()); }
  std::size_t n_classes() const { return static_cast<std::size_t>(weights.cols()); }

  RowMatrix expand(const RowMatrix& embeddings) const;
  RowMatrix scores(const RowMatrix& embeddings) const;
};

/// Recursive ridge update (Woodbury identity). Labels are class indices;
/// columns for classes not yet present are appended as zeros first.
void acil_update(ACILState& state, const RowMatrix& embeddings, const std::vector<std::size_t>& labels,
                 std::size_t chunk_rows = 128);

// Batch ridge solution (Phi^T Phi + gamma I)^-1 Phi^T Y.
RowMatrix ridge_solve(const RowMatrix& phi, const RowMatrix& targets, double gamma);

RowMatrix one_hot(const std::vector<std::size_t>& labels, std::size_t n_classes);

}  // namespace audiocil
