#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "impress/geometry.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace impress;

namespace {

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::ParamError;
}

}  // namespace

TEST_CASE("mobius addition on a line") {
  const Curvature c(1.0);
  const BallPoint<double> x(vec({0.3}), c);
  const BallPoint<double> y(vec({0.4}), c);
  // Along a line, x (+) y = tanh(artanh x + artanh y).
  const double expected = std::tanh(std::atanh(0.3) + std::atanh(0.4));
  CHECK(mobius_add(x, y).coords()(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(mobius_add(x, y).coords()(0) == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(mobius_add(BallPoint<double>::origin(1, c), y).coords()(0) == doctest::Approx(0.4));
}

TEST_CASE("exp and log at the origin") {
  const Curvature c(1.0);
  const Vector<double> u = expmap0(vec({0.6, 0.8}), c);
  CHECK(u(0) == doctest::Approx(0.6 * std::tanh(1.0)).epsilon(1e-12));
  CHECK(u(1) == doctest::Approx(0.8 * std::tanh(1.0)).epsilon(1e-12));
  CHECK(logmap0(vec({0.5, 0.0}), c)(0) == doctest::Approx(std::atanh(0.5)).epsilon(1e-12));
  CHECK(logmap0(vec({0.5, 0.0}), c)(0) == doctest::Approx(0.54931).epsilon(1e-5));
  CHECK(expmap0(vec({0.0, 0.0}), c).norm() == 0.0);
  CHECK(logmap0(expmap0(vec({0.2, -0.1}), c), c).isApprox(vec({0.2, -0.1}), 1e-12));
  CHECK(kind_of([&] { logmap0(vec({1.0, 0.0}), c); }) == ErrorKind::BoundaryPoint);
}

TEST_CASE("exp and log at a general base invert each other") {
  const Curvature c(0.7);
  const BallPoint<double> base(vec({0.2, -0.3, 0.1}), c);
  const TangentVector<double> v{vec({0.4, 0.1, -0.2})};
  const auto back = log_map(exp_map(v, base), base);
  CHECK((back.coords - v.coords).norm() <= 1e-9);
  CHECK(exp_map(TangentVector<double>{vec({0, 0, 0})}, base).coords() == base.coords());
}

TEST_CASE("hyperbolic distance") {
  const Curvature c(1.0);
  const auto o = BallPoint<double>::origin(2, c);
  const BallPoint<double> p(vec({0.5, 0.0}), c);
  CHECK(hyperbolic_distance(o, p) == doctest::Approx(2.0 * std::atanh(0.5)).epsilon(1e-12));
  CHECK(hyperbolic_distance(o, p) == doctest::Approx(1.09861).epsilon(1e-5));
  CHECK(hyperbolic_distance(p, p) == doctest::Approx(0.0));
  const BallPoint<double> q(vec({-0.1, 0.6}), c);
  CHECK(hyperbolic_distance(p, q) == doctest::Approx(hyperbolic_distance(q, p)).epsilon(1e-12));
}

TEST_CASE("ball guard") {
  const Curvature c(4.0);
  CHECK(c.radius() == doctest::Approx(0.5));
  CHECK(kind_of([&] { BallPoint<double>(vec({0.5, 0.0}), c); }) == ErrorKind::BoundaryPoint);
  const auto at_radius = clamp_to_ball(vec({0.5, 0.0}), c);
  CHECK(at_radius.norm() == doctest::Approx(c.max_norm()).epsilon(1e-15));
  const auto far = clamp_to_ball(vec({0.0, 1.0}), c);
  CHECK(far.norm() == doctest::Approx(c.max_norm()).epsilon(1e-15));
  CHECK(far(0) == 0.0);
  const auto inside = vec({0.1, 0.2});
  CHECK(clamp_to_ball(inside, c) == inside);
  // A huge tangent vector lands on the guard sphere, not on the boundary.
  CHECK(expmap0(vec({100.0, 0.0}), c).norm() <= c.max_norm());
}

TEST_CASE("invalid curvature and mismatches") {
  CHECK(kind_of([] { Curvature(0.0); }) == ErrorKind::ParamError);
  CHECK(kind_of([] { Curvature(-1.0); }) == ErrorKind::ParamError);
  const BallPoint<double> a(vec({0.1}), Curvature(1.0));
  const BallPoint<double> b(vec({0.1}), Curvature(2.0));
  const BallPoint<double> d(vec({0.1, 0.1}), Curvature(1.0));
  CHECK(kind_of([&] { mobius_add(a, b); }) == ErrorKind::GeometryMismatch);
  CHECK(kind_of([&] { hyperbolic_distance(a, d); }) == ErrorKind::GeometryMismatch);
}

TEST_CASE("small curvature approaches euclidean behaviour") {
  const Curvature c(1e-8);
  const BallPoint<double> x(vec({0.3, -0.2}), c);
  const BallPoint<double> y(vec({0.1, 0.5}), c);
  CHECK(mobius_add(x, y).coords().isApprox(x.coords() + y.coords(), 1e-6));
  CHECK(hyperbolic_distance(x, y) == doctest::Approx(2.0 * (x.coords() - y.coords()).norm()).epsilon(1e-6));
}

TEST_CASE("row maps agree with the vector maps and differentiate") {
  const Curvature c(1.5);
  const Tensor<double> x = Tensor<double>::create({5, 3}, Normal{0.0, 0.5, 3}, true);
  const auto lifted = expmap0_rows(x, c).value();
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Vector<double> row = x.value().row(i).transpose();
    CHECK((lifted.row(i).transpose() - expmap0(row, c)).norm() <= 1e-12);
  }
  const Tensor<double> inside = Tensor<double>::create({4, 3}, Uniform{-0.3, 0.3, 4}, true);
  CHECK(oracle::gradcheck([&] { return sum(square(expmap0_rows(x, c))); }, {x}, {}).worst <= 1e-6);
  CHECK(oracle::gradcheck([&] { return sum(square(logmap0_rows(inside, c))); }, {inside}, {}).worst <= 1e-6);
}

TEST_CASE("geometry property suite") {
  const auto result = suites::geometry(200, 5);
  INFO(result.detail);
  CHECK(result.passed);
}
