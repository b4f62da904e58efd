#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "audiocil/analytic.hpp"
#include "support.hpp"

using namespace audiocil;

namespace {

// Explicit-inverse ridge oracle.
RowMatrix ridge_oracle(const RowMatrix& phi, const RowMatrix& y, double gamma) {
  Eigen::MatrixXd gram = Eigen::MatrixXd(phi.transpose()) * Eigen::MatrixXd(phi);
  gram += gamma * Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
  return gram.inverse() * Eigen::MatrixXd(phi.transpose()) * Eigen::MatrixXd(y);
}

double rel_frobenius(const RowMatrix& a, const RowMatrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

std::vector<std::size_t> labels_in(Rng& rng, std::size_t n, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = lo + rng.index(hi - lo);
  return y;
}

}  // namespace

TEST_CASE("ACIL state creation: seeded projection, R = I / gamma") {
  const auto a = ACILState::create(6, 20, 2.0, 5);
  const auto b = ACILState::create(6, 20, 2.0, 5);
  CHECK(a.projection == b.projection);
  CHECK(a.inverse_autocorrelation.isApprox(RowMatrix::Identity(20, 20) / 2.0));
  CHECK(a.n_classes() == 0);
  CHECK_THROWS_AS(ACILState::create(6, 20, 0.0, 5), Error);
  CHECK_THROWS_AS(ACILState::create(0, 20, 1.0, 5), Error);
}

TEST_CASE("ACIL: a single recursive task equals the batch ridge solution") {
  Rng rng(1);
  auto s = ACILState::create(5, 40, 1.0, 2);
  const RowMatrix x = testing::random_matrix(rng, 60, 5);
  const auto y = labels_in(rng, 60, 0, 3);
  acil_update(s, x, y, 16);
  const RowMatrix expected = ridge_oracle(s.expand(x), one_hot(y, 3), 1.0);
  CHECK(rel_frobenius(s.weights, expected) < 1e-4);
  CHECK(rel_frobenius(ridge_solve(s.expand(x), one_hot(y, 3), 1.0), expected) < 1e-8);
}

TEST_CASE("ACIL: three recursive tasks equal the pooled solution") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto s = ACILState::create(8, 64, 1.0, seed);
    RowMatrix all_x(0, 8);
    std::vector<std::size_t> all_y;
    for (std::size_t task = 0; task < 3; ++task) {
      const RowMatrix x = testing::random_matrix(rng, 40, 8);
      const auto y = labels_in(rng, 40, 2 * task, 2 * task + 2);
      acil_update(s, x, y, 7);
      RowMatrix grown(all_x.rows() + x.rows(), 8);
      grown << all_x, x;
      all_x = grown;
      all_y.insert(all_y.end(), y.begin(), y.end());
    }
    CHECK(s.n_classes() == 6);
    const RowMatrix expected = ridge_oracle(s.expand(all_x), one_hot(all_y, 6), 1.0);
    CHECK(rel_frobenius(s.weights, expected) < 1e-4);
    // R stays symmetric positive definite.
    CHECK((s.inverse_autocorrelation - s.inverse_autocorrelation.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.inverse_autocorrelation);
    CHECK(eig.eigenvalues().minCoeff() > 0);
  }
}

TEST_CASE("ACIL: huge gamma shrinks the weights toward zero") {
  Rng rng(3);
  auto small = ACILState::create(4, 16, 1.0, 3);
  auto large = ACILState::create(4, 16, 1e6, 3);
  const RowMatrix x = testing::random_matrix(rng, 30, 4);
  const auto y = labels_in(rng, 30, 0, 2);
  acil_update(small, x, y);
  acil_update(large, x, y);
  CHECK(large.weights.norm() < 1e-3 * small.weights.norm());
  const double bound = (large.expand(x).transpose() * one_hot(y, 2)).norm() / 1e6;
  CHECK(large.weights.norm() <= bound * 1.0001);
}

TEST_CASE("ACIL: errors") {
  auto s = ACILState::create(4, 8, 1.0, 1);
  CHECK_THROWS_AS(acil_update(s, RowMatrix::Zero(2, 3), {0, 1}), Error);
  CHECK_THROWS_AS(acil_update(s, RowMatrix::Zero(2, 4), {0}), Error);
  CHECK_THROWS_AS(one_hot({0, 3}, 3), Error);
}
