#include "audiocil/gem.hpp"

#include <cmath>
#include <limits>

namespace audiocil {

namespace {
// Least squares restricted to the passive columns; other entries are zero.
Vector passive_solve(const RowMatrix& a, const Vector& b, const std::vector<bool>& passive) {
  std::vector<Eigen::Index> cols;
  for (std::size_t j = 0; j < passive.size(); ++j) {
    if (passive[j]) cols.push_back(static_cast<Eigen::Index>(j));
  }
  Vector out = Vector::Zero(a.cols());
  if (cols.empty()) return out;
  Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = a.col(cols[k]);
  const Vector z = sub.colPivHouseholderQr().solve(b);
  for (std::size_t k = 0; k < cols.size(); ++k) out[cols[k]] = z[static_cast<Eigen::Index>(k)];
  return out;
}
}  // namespace

Vector nnls(const RowMatrix& a, const Vector& b, std::size_t max_iterations) {
  if (a.rows() != b.size()) fail(ErrorCode::kDimensionMismatch, "nnls: A rows and b length differ");
  const auto n = static_cast<std::size_t>(a.cols());
  if (max_iterations == 0) max_iterations = 30 * (n + 1);
  const double tol = 1e-12 * (a.norm() * b.norm() + std::numeric_limits<double>::min());
  Vector x = Vector::Zero(a.cols());
  std::vector<bool> passive(n, false);
  Vector w = a.transpose() * (b - a * x);
  std::size_t iter = 0;
  while (true) {
    std::size_t pick = n;
    double best = tol;
    for (std::size_t j = 0; j < n; ++j) {
      if (!passive[j] && w[static_cast<Eigen::Index>(j)] > best) {
        best = w[static_cast<Eigen::Index>(j)];
        pick = j;
      }
    }
    if (pick == n) break;
    passive[pick] = true;
    Vector s = passive_solve(a, b, passive);
    while (true) {
      if (++iter > max_iterations) {
        const Vector grad = a.transpose() * (b - a * x);
        fail(ErrorCode::kNotConverged,
             "nnls did not converge; KKT residual " + std::to_string(grad.cwiseMax(0.0).maxCoeff()));
      }
      bool all_positive = true;
      for (std::size_t j = 0; j < n; ++j) {
        if (passive[j] && s[static_cast<Eigen::Index>(j)] <= 0.0) all_positive = false;
      }
      if (all_positive) break;
      double alpha = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        if (passive[j] && s[i] <= 0.0) alpha = std::min(alpha, x[i] / (x[i] - s[i]));
      }
      x += alpha * (s - x);
      for (std::size_t j = 0; j < n; ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        if (passive[j] && std::abs(x[i]) <= tol) {
          passive[j] = false;
          x[i] = 0.0;
        }
      }
      s = passive_solve(a, b, passive);
    }
    x = s;
    w = a.transpose() * (b - a * x);
  }
  return x;
}

Vector gem_project(const Vector& g, const std::vector<Vector>& memory_grads, double margin) {
  if (margin < 0.0) fail(ErrorCode::kInvalidArgument, "GEM margin must be non-negative");
  bool feasible = true;
  for (const auto& gk : memory_grads) {
    if (gk.size() != g.size()) {
      fail(ErrorCode::kDimensionMismatch, "memory gradient has dimension " + std::to_string(gk.size()) + ", expected " +
                                              std::to_string(g.size()));
    }
    if (g.dot(gk) < 0.0) feasible = false;
  }
  if (feasible) return g;

  const auto k = static_cast<Eigen::Index>(memory_grads.size());
  RowMatrix a(g.size(), k);  // columns are the memory gradients
  for (Eigen::Index j = 0; j < k; ++j) a.col(j) = memory_grads[static_cast<std::size_t>(j)];
  // l = margin + mu, mu >= 0:  min ||a mu - (-g - a * margin)||
  const Vector shift = Vector::Constant(k, margin);
  const Vector mu = nnls(a, -g - a * shift);
  const Vector projected = g + a * (mu + shift);

  for (Eigen::Index j = 0; j < k; ++j) {
    const Vector& gk = memory_grads[static_cast<std::size_t>(j)];
    const double slack = 1e-6 * g.norm() * gk.norm();
    if (projected.dot(gk) < -slack) {
      fail(ErrorCode::kNotConverged, "GEM projection violates constraint " + std::to_string(j) + " by " +
                                         std::to_string(-projected.dot(gk)));
    }
  }
  return projected;
}

}  // namespace audiocil
