#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "impress/tensor.hpp"
#include "oracles.hpp"

using namespace impress;

namespace {

using T = Tensor<double>;

Matrix<double> mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

T random_param(Shape shape, std::uint64_t seed, double low = -1.0, double high = 1.0) {
  return T::create(shape, Uniform{low, high, seed}, true);
}

template <typename Build>
double check(Build build, std::vector<T> params) {
  return oracle::gradcheck(build, params, {}).worst;
}

}  // namespace

TEST_CASE("tensor_create fills and validates shapes") {
  const auto z = T::create({2, 2}, Zeros{});
  CHECK(z.value() == Matrix<double>::Zero(2, 2));
  const auto c = T::create({3}, Constant{1.5});
  CHECK(c.shape() == Shape{3});
  CHECK(c.numel() == 3);
  CHECK(c.value() == Matrix<double>::Constant(1, 3, 1.5));
  const auto a = T::create({4}, Normal{0.0, 1.0, 7});
  const auto b = T::create({4}, Normal{0.0, 1.0, 7});
  CHECK(std::memcmp(a.value().data(), b.value().data(), 4 * sizeof(double)) == 0);
  CHECK_THROWS_AS(T::create({2, 0}, Zeros{}), Error);
  try {
    T::create({0}, Zeros{});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidShape);
  }
}

TEST_CASE("uniform initializer stays in range and is seeded") {
  const auto u = T::create({50, 4}, Uniform{-0.5, 2.0, 3});
  CHECK(u.value().minCoeff() >= -0.5);
  CHECK(u.value().maxCoeff() < 2.0);
  const auto g1 = glorot<float>(10, 20, 5);
  const auto g2 = glorot<float>(10, 20, 5);
  CHECK(g1.value() == g2.value());
  CHECK(g1.requires_grad());
  CHECK(std::abs(g1.value().maxCoeff()) <= std::sqrt(6.0 / 30.0));
}

TEST_CASE("matmul examples") {
  const T m = T::from_matrix(mat({{1, 2}, {3, 4}}));
  CHECK(matmul(T::from_matrix(Matrix<double>::Identity(2, 2)), m).value() == m.value());
  CHECK(matmul(m, T::from_matrix(mat({{1}, {1}}))).value() == mat({{3}, {7}}));
  try {
    matmul(T::create({2, 3}, Zeros{}), T::create({4, 2}, Zeros{}));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("elementwise maps") {
  const T x = T::from_matrix(Shape{3}, mat({{-1, 0, 2}}));
  CHECK(relu(x).value() == mat({{0, 0, 2}}));
  CHECK(sigmoid(T::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
  // tanh(1/2) = (e - 1) / (e + 1)
  const long double e = std::exp(1.0L);
  CHECK(tanh(T::scalar(0.5)).item() == doctest::Approx(static_cast<double>((e - 1) / (e + 1))).epsilon(1e-15));
  CHECK(tanh(T::scalar(0.5)).item() == doctest::Approx(0.46211715726).epsilon(1e-10));
  CHECK(neg(x).value() == mat({{1, 0, -2}}));
  CHECK(scale(x, 2.0).value() == mat({{-2, 0, 4}}));
  CHECK(exp(T::scalar(0.0)).item() == 1.0);
}

TEST_CASE("broadcasting follows trailing alignment") {
  const T a = T::from_matrix(mat({{1, 2, 3}, {4, 5, 6}}));
  const T row = T::from_matrix(Shape{3}, mat({{10, 20, 30}}));
  CHECK(add(a, row).value() == mat({{11, 22, 33}, {14, 25, 36}}));
  const T col = T::from_matrix(mat({{1}, {2}}));
  CHECK(mul(a, col).value() == mat({{1, 2, 3}, {8, 10, 12}}));
  CHECK(add(a, T::scalar(1.0)).value() == mat({{2, 3, 4}, {5, 6, 7}}));
  CHECK_THROWS_AS(add(a, T::from_matrix(Shape{2}, mat({{1, 2}}))), Error);
}

TEST_CASE("softmax rows") {
  CHECK(softmax_rows(T::from_matrix(mat({{0, 0}}))).value().isApprox(mat({{0.5, 0.5}})));
  const auto big = softmax_rows(T::from_matrix(mat({{1000, 1000}}))).value();
  CHECK(big.allFinite());
  CHECK(big(0, 0) == doctest::Approx(0.5));
  const auto l2 = softmax_rows(T::from_matrix(mat({{std::log(2.0), 0}}))).value();
  CHECK(l2(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(l2(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const T r = T::create({6, 5}, Normal{0.0, 3.0, 11});
  const auto s = softmax_rows(r).value();
  CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
  CHECK(s.minCoeff() >= 0.0);
  const auto shifted = softmax_rows(T::from_matrix((r.value().array() + 7.25).matrix())).value();
  CHECK((s - shifted).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("backward examples") {
  T x = T::from_matrix(Shape{3}, mat({{1, -2, 5}}), true);
  backward(sum(x));
  CHECK(x.grad() == mat({{1, 1, 1}}));
  T y = T::from_matrix(Shape{1}, mat({{2}}), true);
  backward(sum(mul(y, y)));
  CHECK(y.grad()(0, 0) == doctest::Approx(4.0));
  backward(sum(mul(y, y)));
  CHECK(y.grad()(0, 0) == doctest::Approx(8.0));
  y.zero_grad();
  CHECK_FALSE(y.has_grad());
  try {
    backward(mul(x, x));
    FAIL("expected InvalidShape");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidShape);
  }
}

TEST_CASE("no-grad guard stops recording") {
  T x = T::from_matrix(mat({{1, 2}}), true);
  {
    NoGradGuard guard;
    const T y = square(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(square(x).requires_grad());
}

TEST_CASE("non-finite results are rejected") {
  try {
    log(T::scalar(0.0));
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
  }
  CHECK_THROWS_AS(exp(T::scalar(1000.0)), Error);
}

TEST_CASE("every op matches finite differences") {
  const T a = random_param({4, 3}, 1);
  const T b = random_param({3, 5}, 2);
  const T v = random_param({3}, 3);
  const T pos = random_param({4, 3}, 4, 0.5, 2.0);
  const T col = random_param({4, 1}, 5);
  // Keep ReLU and clamp inputs away from their kinks.
  Matrix<double> away = Matrix<double>::Random(4, 3);
  away = (away.array().sign() * (away.array().abs() + 0.2)).matrix();
  const T k = T::from_matrix(away, true);

  CHECK(check([&] { return sum(square(matmul(a, b))); }, {a, b}) <= 1e-6);
  CHECK(check([&] { return sum(relu(k)); }, {k}) <= 1e-6);
  CHECK(check([&] { return sum(mul(sigmoid(a), tanh(pos))); }, {a, pos}) <= 1e-6);
  CHECK(check([&] { return mean(add(exp(a), log(pos))); }, {a, pos}) <= 1e-6);
  CHECK(check([&] { return sum(mul(add(a, v), sub(col, a))); }, {a, v, col}) <= 1e-6);
  CHECK(check([&] { return sum(square(add_scalar(scale(neg(a), 1.7), 0.3))); }, {a}) <= 1e-6);
  CHECK(check([&] { return sum(square(clamp(k, -0.15, 0.15))); }, {k}) <= 1e-6);
  CHECK(check([&] { return sum(square(transpose(a))); }, {a}) <= 1e-6);
  CHECK(check([&] { return sum(mul(softmax_rows(a), pos)); }, {a, pos}) <= 1e-6);
  CHECK(check([&] { return sum(square(gather_rows(a, {2, 0, 2}))); }, {a}) <= 1e-6);
  const Matrix<double> target = (Matrix<double>::Random(4, 3).array() > 0).cast<double>();
  CHECK(check([&] { return bce_with_logits(a, target, 2.5); }, {a}) <= 1e-6);
}

TEST_CASE("bce_with_logits matches the weighted cross-entropy formula") {
  const Matrix<double> logits = mat({{0.3, -1.2}, {2.0, 0.0}});
  const Matrix<double> target = mat({{1, 0}, {0, 1}});
  const double w = 3.0;
  double expected = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits.data()[i]));
    const double y = target.data()[i];
    expected -= w * y * std::log(p) + (1 - y) * std::log(1 - p);
  }
  CHECK(bce_with_logits(T::from_matrix(logits), target, w).item() == doctest::Approx(expected / 4.0).epsilon(1e-12));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    T p = T::from_matrix(mat({{0.5, -1.0}}), true);
    std::vector<T> params{p};
    AdamState<double> state(params);
    backward(scale(sum(p), 0.0));
    adam_step(params, state);
    CHECK(p.value() == mat({{0.5, -1.0}}));
    CHECK(state.step_count() == 1);
  }
  SUBCASE("first step moves by about the learning rate") {
    T p = T::scalar(2.0, true);
    std::vector<T> params{p};
    AdamState<double> state(params, AdamOptions{0.001});
    backward(p);  // gradient 1
    adam_step(params, state);
    // m_hat = 1, v_hat = 1: update = lr * 1 / (1 + eps)
    CHECK(p.item() == doctest::Approx(2.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK_FALSE(p.has_grad());
  }
  SUBCASE("missing gradient is an error") {
    T p = T::scalar(1.0, true);
    std::vector<T> params{p};
    AdamState<double> state(params);
    try {
      adam_step(params, state);
      FAIL("expected MissingGradient");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingGradient);
    }
  }
  SUBCASE("seeded runs are bit-identical") {
    const auto run = [] {
      T w = glorot<double>(3, 2, 9);
      std::vector<T> params{w};
      AdamState<double> state(params);
      const T x = T::create({5, 3}, Normal{0.0, 1.0, 4});
      for (int i = 0; i < 10; ++i) {
        backward(sum(square(matmul(x, w))));
        adam_step(params, state);
      }
      CHECK(state.step_count() == 10);
      return w.value();
    };
    const auto a = run();
    const auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0);
  }
}
