#include "audiocil/analytic.hpp"

#include <algorithm>
#include <cmath>

namespace audiocil {

ACILState ACILState::create(std::size_t feature_dim, std::size_t expansion_dim, double gamma, std::uint64_t seed) {
  if (feature_dim == 0 || expansion_dim == 0) fail(ErrorCode::kInvalidArgument, "ACIL dimensions must be positive");
  if (!(gamma > 0)) fail(ErrorCode::kInvalidArgument, "ACIL gamma must be positive");
  ACILState s;
  s.gamma = gamma;
  Rng rng(derive_seed(seed, "acil/projection"));
  const double sd = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  s.projection.resize(static_cast<Eigen::Index>(feature_dim), static_cast<Eigen::Index>(expansion_dim));
  for (Eigen::Index i = 0; i < s.projection.size(); ++i) s.projection.data()[i] = sd * rng.normal();
  s.inverse_autocorrelation =
      RowMatrix::Identity(static_cast<Eigen::Index>(expansion_dim), static_cast<Eigen::Index>(expansion_dim)) / gamma;
  s.weights = RowMatrix::Zero(static_cast<Eigen::Index>(expansion_dim), 0);
  return s;
}

RowMatrix ACILState::expand(const RowMatrix& embeddings) const {
  if (embeddings.cols() != projection.rows()) {
    fail(ErrorCode::kDimensionMismatch, "ACIL expects " + std::to_string(projection.rows()) + "-dim embeddings, got " +
                                            std::to_string(embeddings.cols()));
  }
  return (embeddings * projection).cwiseMax(0.0);
}

RowMatrix ACILState::scores(const RowMatrix& embeddings) const { return expand(embeddings) * weights; }

RowMatrix one_hot(const std::vector<std::size_t>& labels, std::size_t n_classes) {
  RowMatrix y = RowMatrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) fail(ErrorCode::kOutOfRange, "label index out of range for one-hot encoding");
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
  }
  return y;
}

void acil_update(ACILState& state, const RowMatrix& embeddings, const std::vector<std::size_t>& labels,
                 std::size_t chunk_rows) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    fail(ErrorCode::kDimensionMismatch, "ACIL update: embedding rows and label count differ");
  }
  if (labels.empty()) return;
  const std::size_t needed = *std::max_element(labels.begin(), labels.end()) + 1;
  if (needed > state.n_classes()) {
    RowMatrix grown = RowMatrix::Zero(state.weights.rows(), static_cast<Eigen::Index>(needed));
    grown.leftCols(state.weights.cols()) = state.weights;
    state.weights = std::move(grown);
  }
  const RowMatrix phi_all = state.expand(embeddings);
  const RowMatrix y_all = one_hot(labels, state.n_classes());
  RowMatrix& r = state.inverse_autocorrelation;
  chunk_rows = std::max<std::size_t>(chunk_rows, 1);
  for (std::size_t start = 0; start < labels.size(); start += chunk_rows) {
    const auto rows = static_cast<Eigen::Index>(std::min(chunk_rows, labels.size() - start));
    const auto phi = phi_all.middleRows(static_cast<Eigen::Index>(start), rows);
    const auto y = y_all.middleRows(static_cast<Eigen::Index>(start), rows);
    const RowMatrix r_phi_t = r * phi.transpose();  // e x n
    RowMatrix k = phi * r_phi_t;
    k.diagonal().array() += 1.0;
    const RowMatrix gain = k.ldlt().solve(r_phi_t.transpose());  // n x e
    r.noalias() -= r_phi_t * gain;
    r = 0.5 * (r + r.transpose()).eval();
    state.weights.noalias() += r * phi.transpose() * (y - phi * state.weights);
  }
  Eigen::LLT<RowMatrix> chol(r);
  if (chol.info() != Eigen::Success) {
    fail(ErrorCode::kNumerical, "ACIL inverse autocorrelation matrix lost positive definiteness");
  }
}

RowMatrix ridge_solve(const RowMatrix& phi, const RowMatrix& targets, double gamma) {
  RowMatrix gram = phi.transpose() * phi;
  gram.diagonal().array() += gamma;
  return gram.ldlt().solve(phi.transpose() * targets);
}

}  // namespace audiocil
