#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "audiocil/gem.hpp"
#include "support.hpp"

using namespace audiocil;

namespace {

// Exhaustive NNLS reference: unconstrained least squares on every support,
// keep the best non-negative one.
Vector nnls_reference(const RowMatrix& a, const Vector& b) {
  const auto n = a.cols();
  Vector best = Vector::Zero(n);
  double best_obj = b.squaredNorm();
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask & (std::size_t{1} << j)) cols.push_back(j);
    }
    Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = a.col(cols[c]);
    const Vector xs = sub.colPivHouseholderQr().solve(b);
    if ((xs.array() < 0).any()) continue;
    Vector x = Vector::Zero(n);
    for (std::size_t c = 0; c < cols.size(); ++c) x[cols[c]] = xs[static_cast<Eigen::Index>(c)];
    const double obj = (a * x - b).squaredNorm();
    if (obj < best_obj - 1e-15) {
      best_obj = obj;
      best = x;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("NNLS matches exhaustive support enumeration") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = static_cast<Eigen::Index>(2 + rng.index(8));
    const auto n = static_cast<Eigen::Index>(1 + rng.index(5));
    const RowMatrix a = testing::random_matrix(rng, m, n);
    const Vector b = testing::random_vector(rng, m);
    const Vector x = nnls(a, b);
    CHECK((x.array() >= 0).all());
    const Vector ref = nnls_reference(a, b);
    CHECK((a * x - b).squaredNorm() <= (a * ref - b).squaredNorm() + 1e-9);
  }
  CHECK_THROWS_AS(nnls(RowMatrix::Zero(3, 2), Vector::Zero(4)), Error);
}

TEST_CASE("GEM: feasible gradients come back bit-identical") {
  Rng rng(2);
  Vector g(3);
  g << 1.0, 2.0, 3.0;
  Vector a(3), b(3);
  a << 1.0, 0.0, 0.0;
  b << 0.0, -1.0, 1.0;
  const Vector out = gem_project(g, {a, b});
  CHECK(out == g);
  CHECK(gem_project(g, {}) == g);
  CHECK(gem_project(Vector::Zero(3), {a, b}) == Vector::Zero(3));
}

TEST_CASE("GEM: single constraint closed form") {
  Vector g(2), gk(2), expected(2);
  g << -1.0, 1.0;
  gk << 1.0, 0.0;
  expected << 0.0, 1.0;
  const Vector out = gem_project(g, {gk});
  CHECK((out - expected).norm() < 1e-12);
  const Vector closed = g - (g.dot(gk) / gk.squaredNorm()) * gk;
  CHECK((out - closed).norm() < 1e-12);
  CHECK((out - testing::gem_reference(g, {gk})).norm() < 1e-12);
}

TEST_CASE("GEM: random instances satisfy constraints and match the dense QP") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto dim = static_cast<Eigen::Index>(1 + rng.index(50));
    const std::size_t k = 1 + rng.index(5);
    const Vector g = testing::random_vector(rng, dim);
    std::vector<Vector> mem;
    for (std::size_t i = 0; i < k; ++i) mem.push_back(testing::random_vector(rng, dim));
    const Vector out = gem_project(g, mem);
    for (const auto& gk : mem) CHECK(out.dot(gk) >= -1e-6 * g.norm() * gk.norm());
    bool feasible = true;
    for (const auto& gk : mem) feasible = feasible && g.dot(gk) >= 0;
    if (feasible) {
      CHECK(out == g);
    } else {
      const Vector ref = testing::gem_reference(g, mem);
      REQUIRE(ref.size() == g.size());
      CHECK((out - ref).cwiseAbs().maxCoeff() < 1e-5);
    }
  }
}

TEST_CASE("GEM: a positive margin still yields feasible directions") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector g = testing::random_vector(rng, 10);
    std::vector<Vector> mem = {testing::random_vector(rng, 10), testing::random_vector(rng, 10)};
    const Vector out = gem_project(g, mem, 0.5);
    for (const auto& gk : mem) CHECK(out.dot(gk) >= -1e-6 * g.norm() * gk.norm());
  }
}

TEST_CASE("GEM: errors") {
  Vector g = Vector::Ones(3);
  CHECK_THROWS_AS(gem_project(g, {Vector::Ones(2)}), Error);
  CHECK_THROWS_AS(gem_project(g, {Vector::Ones(3)}, -1.0), Error);
}
