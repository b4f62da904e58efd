#pragma once

#include "audiocil/common.hpp"

#include <vector>

namespace audiocil {

/// Non-negative least squares, min ||A x - b|| s.t. x >= 0 (Lawson-Hanson
/// active set). Throws kNotConverged with the KKT residual if the iteration
/// cap is hit.
Vector nnls(const RowMatrix& a, const Vector& b, std::size_t max_iterations = 0);

/// Projects the update gradient so that it has a non-negative inner product
/// with every memory gradient. Inputs that already satisfy every constraint
/// are returned unchanged. Otherwise the projection is recovered from the
/// dual problem min_{l >= margin} 1/2 ||g + G^T l||^2.
Vector gem_project(const Vector& g, const std::vector<Vector>& memory_grads, double margin = 0.0);

}  // namespace audiocil
