#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "epimsm/optimize.hpp"
#include "epimsm/random.hpp"

using namespace epimsm;

TEST_CASE("unconstrained quadratic minimum", "[optimize]") {
  // f(x) = ||Ax - b||^2
  const int n = 8;
  Rng rng(1);
  Eigen::MatrixXd A(n, n);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    b(i) = rng.normal(0.0, 1.0);
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal(0.0, 1.0) + (i == j ? 3.0 : 0.0);
  }
  const auto f = [&](const Eigen::VectorXd& x) { return (A * x - b).squaredNorm(); };
  const auto g = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return 2.0 * A.transpose() * (A * x - b);
  };
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(n, -1e30);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(n, 1e30);
  const auto r = minimize_box(f, g, Eigen::VectorXd::Zero(n), lo, hi);
  const Eigen::VectorXd exact = A.colPivHouseholderQr().solve(b);
  CHECK(r.converged);
  CHECK((r.x - exact).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("active bounds are respected and identified", "[optimize]") {
  // minimize (x0-2)^2 + (x1+3)^2 over [0,1] x [0,1]
  const auto f = [](const Eigen::VectorXd& x) {
    return (x(0) - 2.0) * (x(0) - 2.0) + (x(1) + 3.0) * (x(1) + 3.0);
  };
  const auto g = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd out(2);
    out << 2.0 * (x(0) - 2.0), 2.0 * (x(1) + 3.0);
    return out;
  };
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(2), hi = Eigen::VectorXd::Ones(2);
  const auto r = minimize_box(f, g, Eigen::VectorXd::Constant(2, 0.5), lo, hi);
  CHECK(r.converged);
  CHECK(r.x(0) == Catch::Approx(1.0).margin(1e-9));
  CHECK(r.x(1) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("numeric-gradient fallback reaches the same minimum", "[optimize]") {
  const auto f = [](const Eigen::VectorXd& x) {
    return std::pow(x(0) - 1.5, 2) + 4.0 * std::pow(x(1) - 0.25, 2);
  };
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(2), hi = Eigen::VectorXd::Ones(2) * 2.0;
  const auto r = minimize_box(f, nullptr, Eigen::VectorXd::Zero(2), lo, hi);
  CHECK(r.x(0) == Catch::Approx(1.5).margin(1e-4));
  CHECK(r.x(1) == Catch::Approx(0.25).margin(1e-4));
}

TEST_CASE("projected gradient norm certifies first-order conditions", "[optimize]") {
  // nonnegativity-constrained least squares with an interior/boundary mix
  const int n = 12;
  Rng rng(5);
  Eigen::MatrixXd A(20, n);
  Eigen::VectorXd b(20);
  for (int i = 0; i < 20; ++i) {
    b(i) = rng.normal(0.0, 1.0);
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal(0.0, 1.0);
  }
  const auto f = [&](const Eigen::VectorXd& x) { return (A * x - b).squaredNorm(); };
  const auto g = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return 2.0 * A.transpose() * (A * x - b);
  };
  const Eigen::VectorXd lo = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(n, 1e30);
  const auto r = minimize_box(f, g, Eigen::VectorXd::Ones(n), lo, hi);
  REQUIRE(r.converged);
  // KKT: gradient nonnegative where x = 0, ~zero where x > 0
  const Eigen::VectorXd grad = g(r.x);
  for (int j = 0; j < n; ++j) {
    if (r.x(j) > 1e-10) {
      CHECK(std::abs(grad(j)) < 1e-4);
    } else {
      CHECK(grad(j) > -1e-6);
    }
  }
}
