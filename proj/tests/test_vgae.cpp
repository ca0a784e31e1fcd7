#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "impress/vgae.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace impress;

namespace {

GraphDataset small_tree(std::uint64_t seed) {
  TreeOptions opts;
  opts.branching = 2;
  opts.depth = 4;
  opts.feature_dim = 6;
  opts.noise = 0.2;
  opts.seed = seed;
  return generate_tree_dataset(opts);
}

VgaeConfig small_config(double curvature) {
  VgaeConfig cfg;
  cfg.curvature = curvature;
  cfg.hidden = 16;
  cfg.latent = 4;
  cfg.epochs = 60;
  cfg.lr = 0.01;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("decoder is the sigmoid of inner products") {
  Matrix<double> z(2, 2);
  z << 2, 0, 0, 1;
  const auto probs = decode_edges(Tensor<double>::from_matrix(z)).value();
  CHECK(probs(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-12));
  CHECK(probs(0, 0) == doctest::Approx(0.98201).epsilon(1e-5));
  CHECK(probs(0, 1) == doctest::Approx(0.5));
  CHECK(probs(1, 1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("kl term vanishes at the prior") {
  const LatentDistribution<double> prior{Tensor<double>::create({5, 3}, Zeros{}), Tensor<double>::create({5, 3}, Zeros{})};
  CHECK(kl_divergence(prior).item() == doctest::Approx(0.0));
  Matrix<double> mu = Matrix<double>::Zero(2, 1);
  mu(0, 0) = 2.0;
  const LatentDistribution<double> shifted{Tensor<double>::from_matrix(mu), Tensor<double>::create({2, 1}, Zeros{})};
  // 1/2 * mu^2 summed, divided by n = 2.
  CHECK(kl_divergence(shifted).item() == doctest::Approx(1.0));
}

TEST_CASE("probability and logit forms of the loss agree") {
  const Tensor<double> z = Tensor<double>::create({6, 3}, Normal{0.0, 0.4, 2});
  Matrix<double> target = Matrix<double>::Identity(6, 6);
  target(0, 1) = target(1, 0) = target(2, 3) = target(3, 2) = 1.0;
  const LatentDistribution<double> dist{Tensor<double>::create({6, 3}, Normal{0.0, 1.0, 3}),
                                        Tensor<double>::create({6, 3}, Uniform{-0.5, 0.5, 4})};
  CHECK(positive_weight(target) == doctest::Approx(26.0 / 10.0));
  const double a = elbo_loss(decode_edges(z), target, dist).item();
  const double b = elbo_loss_logits(decode_logits(z), target, dist).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("feature lift pads and lands inside the ball") {
  Matrix<double> x(2, 2);
  x << 3, 4, 0, 0;
  const Curvature c(1.0);
  const auto lifted = lift_features<double>(x, c);
  CHECK(lifted.cols() == 3);
  CHECK(lifted(0, 0) == 0.0);
  CHECK(lifted.row(0).norm() == doctest::Approx(std::tanh(5.0)));
  CHECK(lifted.row(1).norm() == 0.0);
  const auto flat = lift_features<double>(x, std::nullopt);
  CHECK(flat(0, 1) == 3.0);
}

TEST_CASE("model shapes and parameter order") {
  const auto model = init_vgae<float>(6, small_config(1.0));
  CHECK(model.dims.input == 7);
  CHECK(model.gcn_weights.size() == 2);
  CHECK(model.gcn_weights[0].shape() == Shape{7, 16});
  CHECK(model.theta_mu.shape() == Shape{16, 4});
  CHECK(model.parameters().size() == 5);
  CHECK(model.ball().has_value());
  CHECK_FALSE(init_vgae<float>(6, small_config(0.0)).ball().has_value());
}

TEST_CASE("training lowers the loss in both geometries") {
  const auto ds = small_tree(1);
  for (double c : {1.0, 0.0}) {
    CAPTURE(c);
    const auto result = train_vgae<double>(ds, small_config(c));
    REQUIRE(result.losses.size() == 60);
    CHECK(result.losses.back() < result.losses.front());
    const auto z = embed_all(result.model, ds);
    CHECK(z.rows() == 31);
    CHECK(z.cols() == 4);
    CHECK(z.allFinite());
    const auto some = embed_nodes(result.model, ds, {3, 0});
    CHECK(some.row(0) == z.row(3));
    CHECK_THROWS_AS(embed_nodes(result.model, ds, {99}), Error);
  }
}

TEST_CASE("seeded training is bit-identical") {
  const auto ds = small_tree(2);
  const auto a = embed_all(train_vgae<float>(ds, small_config(1.0)).model, ds);
  const auto b = embed_all(train_vgae<float>(ds, small_config(1.0)).model, ds);
  CHECK(std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0);
}

TEST_CASE("invalid configuration") {
  auto cfg = small_config(1.0);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_vgae<float>(small_tree(1), cfg), Error);
}

TEST_CASE("loss gradients match finite differences") {
  const auto result = suites::gradients(12, 3);
  INFO(result.detail);
  CHECK(result.passed);
}
