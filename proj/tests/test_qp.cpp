#include <doctest.h>

#include <cmath>

#include "bayeseg/errors.hpp"
#include "bayeseg/qp.hpp"
#include "bayeseg/rng.hpp"

using namespace bayeseg;

TEST_CASE("feasible target is returned unchanged") {
  Eigen::VectorXd m(3);
  m << 0.5, -1.0, 2.0;
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd a(1, 3);
  a << 1.0, 0.0, 0.0;
  Eigen::VectorXd b(1);
  b << 1.0;
  const Eigen::VectorXd mu = solve_constrained_means(m, s, a, b);
  CHECK((mu - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("1D projection onto mu >= 1") {
  Eigen::VectorXd m(1);
  m << 0.0;
  Eigen::MatrixXd s(1, 1);
  s << 2.0;
  Eigen::MatrixXd a(1, 1);
  a << -1.0;  // -mu <= -1
  Eigen::VectorXd b(1);
  b << -1.0;
  const Eigen::VectorXd mu = solve_constrained_means(m, s, a, b);
  CHECK(mu[0] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("2D coupled row: hand-solved KKT point") {
  Eigen::VectorXd m(2);
  m << 0.0, 0.0;
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd a(1, 2);
  a << 1.0, -1.0;  // mu1 - mu2 <= -0.5
  Eigen::VectorXd b(1);
  b << -0.5;
  const Eigen::VectorXd mu = solve_constrained_means(m, s, a, b);
  CHECK(mu[0] == doctest::Approx(-0.25).epsilon(1e-9));
  CHECK(mu[1] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(kkt_residual(mu, m, s, a, b) < 1e-8);
}

TEST_CASE("random feasible systems satisfy the KKT conditions") {
  Rng rng(42, RngPurpose::Generic, 0, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 2 + static_cast<int>(rng.below(6));
    const int rows = 1 + static_cast<int>(rng.below(5));
    // block-diagonal SPD metric (1x1 blocks with random scale)
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dim, dim);
    for (int k = 0; k < dim; ++k) s(k, k) = 0.2 + 2.0 * rng.uniform();
    Eigen::VectorXd m(dim), x0(dim);
    for (int k = 0; k < dim; ++k) {
      m[k] = 2.0 * rng.normal();
      x0[k] = rng.normal();
    }
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, dim);
    Eigen::VectorXd b(rows);
    for (int r = 0; r < rows; ++r) {
      for (int k = 0; k < dim; ++k) a(r, k) = rng.normal();
      // feasible by construction: slack at x0, tight occasionally
      const double slack = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
      b[r] = a.row(r).dot(x0) + slack;
    }
    const Eigen::VectorXd mu = solve_constrained_means(m, s, a, b);
    CHECK(kkt_residual(mu, m, s, a, b) < 1e-6);
  }
}

TEST_CASE("infeasible systems are reported") {
  Eigen::VectorXd m(1);
  m << 0.0;
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(1, 1);
  Eigen::MatrixXd a(2, 1);
  a << 1.0, -1.0;  // mu <= -1 and mu >= 1
  Eigen::VectorXd b(2);
  b << -1.0, -1.0;
  CHECK_THROWS_AS(solve_constrained_means(m, s, a, b), InfeasibleConstraints);
}

TEST_CASE("duplicate rows do not break the active set") {
  Eigen::VectorXd m(2);
  m << 2.0, 0.0;
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 0.0, 1.0, 0.0;
  Eigen::VectorXd b(2);
  b << 1.0, 1.0;
  const Eigen::VectorXd mu = solve_constrained_means(m, s, a, b);
  CHECK(mu[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(mu[1] == doctest::Approx(0.0).epsilon(1e-10));
}
