#pragma once

// Hyperbolic variational graph autoencoder. Node features are lifted onto the
// Poincare ball, pulled back to the tangent space at the origin for GCN
// propagation, pushed out again, and finally mapped to a Gaussian latent that
// an inner-product decoder turns into edge probabilities.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "impress/geometry.hpp"
#include "impress/graph.hpp"
#include "impress/tensor.hpp"

namespace impress {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct VgaeConfig {
  /// |c|; zero selects the Euclidean ablation (all ball maps become identity).
  double curvature = 1.0;
  int hidden = 256;
  int latent = 64;
  int layers = 2;
  int epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct VgaeDims {
  int input = 0;  // feature dim + 1
  int hidden = 0;
  int latent = 0;
};

template <typename Scalar>
struct VgaeModel {
  double curvature = 1.0;
  VgaeDims dims;
  std::vector<Tensor<Scalar>> gcn_weights;
  Tensor<Scalar> theta_prime;
  Tensor<Scalar> theta_mu;
  Tensor<Scalar> theta_sigma;

  bool euclidean() const { return curvature == 0.0; }
  std::optional<Curvature> ball() const {
    if (euclidean()) return std::nullopt;
    return Curvature(curvature);
  }

  std::vector<Tensor<Scalar>> parameters() const {
    std::vector<Tensor<Scalar>> out = gcn_weights;
    out.push_back(theta_prime);
    out.push_back(theta_mu);
    out.push_back(theta_sigma);
    return out;
  }
};

template <typename Scalar>
struct LatentDistribution {
  Tensor<Scalar> mu;
  Tensor<Scalar> log_var;  // clamped to [kLogVarMin, kLogVarMax]
};

template <typename Scalar>
struct EncoderOutput {
  Tensor<Scalar> tangent;     // X^{T,tangent}
  Tensor<Scalar> hyperbolic;  // exp_o of the tangent output
};

template <typename Scalar>
struct VgaeTrainResult {
  VgaeModel<Scalar> model;
  std::vector<double> losses;
};

template <typename Scalar>
VgaeModel<Scalar> init_vgae(int feature_dim, const VgaeConfig& config) {
  if (config.layers < 1 || config.hidden < 1 || config.latent < 1 || feature_dim < 1) {
    fail(ErrorKind::ParamError, "VGAE needs layers, hidden, latent and feature dim >= 1");
  }
  if (config.curvature < 0.0 || !std::isfinite(config.curvature)) {
    fail(ErrorKind::ParamError, "curvature magnitude must be >= 0");
  }
  VgaeModel<Scalar> model;
  model.curvature = config.curvature;
  model.dims = {feature_dim + 1, config.hidden, config.latent};
  const auto in = static_cast<std::size_t>(model.dims.input);
  const auto hidden = static_cast<std::size_t>(config.hidden);
  const auto latent = static_cast<std::size_t>(config.latent);
  std::uint64_t stream = 0;
  for (int t = 0; t < config.layers; ++t) {
    model.gcn_weights.push_back(glorot<Scalar>(t == 0 ? in : hidden, hidden, derive_seed(config.seed, stream++)));
  }
  model.theta_prime = glorot<Scalar>(hidden, hidden, derive_seed(config.seed, stream++));
  model.theta_mu = glorot<Scalar>(hidden, latent, derive_seed(config.seed, stream++));
  model.theta_sigma = glorot<Scalar>(hidden, latent, derive_seed(config.seed, stream++));
  return model;
}

/// Prepends a zero coordinate to every feature row and maps it onto the ball
/// with exp_o. With no curvature the padded rows are returned unchanged.
template <typename Scalar>
Matrix<Scalar> lift_features(const Matrix<double>& features, const std::optional<Curvature>& curvature) {
  if (!features.allFinite()) fail(ErrorKind::NonFinite, "non-finite node feature");
  Matrix<Scalar> out(features.rows(), features.cols() + 1);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Vector<Scalar> padded(features.cols() + 1);
    padded(0) = Scalar(0);
    padded.tail(features.cols()) = features.row(i).transpose().cast<Scalar>();
    out.row(i) = curvature ? expmap0(padded, *curvature).transpose() : padded.transpose();
  }
  return out;
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> to_tangent(const Tensor<Scalar>& x, const std::optional<Curvature>& c) {
  return c ? logmap0_rows(x, *c) : x;
}

template <typename Scalar>
Tensor<Scalar> to_ball(const Tensor<Scalar>& x, const std::optional<Curvature>& c) {
  return c ? expmap0_rows(x, *c) : x;
}

}  // namespace detail

/// log_o, then T layers of ReLU(A_hat X W), then exp_o.
template <typename Scalar>
EncoderOutput<Scalar> encode(const VgaeModel<Scalar>& model, const Tensor<Scalar>& adjacency,
                             const Tensor<Scalar>& lifted) {
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() != lifted.rows()) {
    fail(ErrorKind::ShapeMismatch, "adjacency and features disagree on node count");
  }
  if (lifted.cols() != model.dims.input) fail(ErrorKind::ShapeMismatch, "feature width differs from model input");
  const auto ball = model.ball();
  Tensor<Scalar> h = detail::to_tangent(lifted, ball);
  for (const auto& w : model.gcn_weights) h = relu(matmul(adjacency, matmul(h, w)));
  return {h, detail::to_ball(h, ball)};
}

/// Z' = ReLU(A_hat log_o(X^H) Theta'), Z_mu = A_hat Z' Theta_mu, Z_sigma = A_hat Z' Theta_sigma,
/// with Z_sigma read as the log-variance.
template <typename Scalar>
LatentDistribution<Scalar> latent_params(const VgaeModel<Scalar>& model, const Tensor<Scalar>& adjacency,
                                         const Tensor<Scalar>& hyperbolic) {
  const Tensor<Scalar> shared = relu(matmul(adjacency, matmul(detail::to_tangent(hyperbolic, model.ball()), model.theta_prime)));
  const Tensor<Scalar> propagated = matmul(adjacency, shared);
  return {matmul(propagated, model.theta_mu), clamp(matmul(propagated, model.theta_sigma), kLogVarMin, kLogVarMax)};
}

/// z = mu + exp(log_var / 2) * eps for a caller-supplied eps.
template <typename Scalar>
Tensor<Scalar> sample_latent(const LatentDistribution<Scalar>& dist, const Matrix<Scalar>& eps) {
  if (eps.rows() != dist.mu.rows() || eps.cols() != dist.mu.cols()) fail(ErrorKind::ShapeMismatch, "eps shape");
  return add(dist.mu, mul(exp(scale(dist.log_var, 0.5)), Tensor<Scalar>::from_matrix(eps)));
}

template <typename Scalar>
Tensor<Scalar> sample_latent(const LatentDistribution<Scalar>& dist, std::uint64_t seed) {
  const auto noise = Tensor<Scalar>::create(dist.mu.shape(), Normal{0.0, 1.0, seed});
  return sample_latent(dist, noise.value());
}

template <typename Scalar>
Tensor<Scalar> decode_logits(const Tensor<Scalar>& z) {
  return matmul(z, transpose(z));
}

/// sigmoid(Z Z^T).
template <typename Scalar>
Tensor<Scalar> decode_edges(const Tensor<Scalar>& z) {
  return sigmoid(decode_logits(z));
}

/// (1/n) * 1/2 * sum(exp(log_var) + mu^2 - 1 - log_var).
template <typename Scalar>
Tensor<Scalar> kl_divergence(const LatentDistribution<Scalar>& dist) {
  const Tensor<Scalar> terms = add_scalar(sub(add(exp(dist.log_var), square(dist.mu)), dist.log_var), -1.0);
  return scale(sum(terms), 0.5 / static_cast<double>(dist.mu.rows()));
}

/// Positive-class weight #non-edges / #edges of the reconstruction target.
template <typename Scalar>
double positive_weight(const Matrix<Scalar>& target) {
  const double positives = static_cast<double>(target.sum());
  const double total = static_cast<double>(target.size());
  if (positives <= 0.0) return 1.0;
  return (total - positives) / positives;
}

/// Negated ELBO from logits: weighted BCE against the target plus the KL term.
template <typename Scalar>
Tensor<Scalar> elbo_loss_logits(const Tensor<Scalar>& logits, const Matrix<Scalar>& target,
                                const LatentDistribution<Scalar>& dist) {
  return add(bce_with_logits(logits, target, positive_weight(target)), kl_divergence(dist));
}

/// Negated ELBO from probabilities. Probabilities are clipped to
/// [1e-7, 1 - 1e-7] before the logarithms.
template <typename Scalar>
Tensor<Scalar> elbo_loss(const Tensor<Scalar>& probs, const Matrix<Scalar>& target,
                         const LatentDistribution<Scalar>& dist) {
  if (probs.rows() != target.rows() || probs.cols() != target.cols()) fail(ErrorKind::ShapeMismatch, "target shape");
  const double w = positive_weight(target);
  const Tensor<Scalar> p = clamp(probs, 1e-7, 1.0 - 1e-7);
  const Tensor<Scalar> y = Tensor<Scalar>::from_matrix(target);
  const Tensor<Scalar> not_y = Tensor<Scalar>::from_matrix((Matrix<Scalar>::Ones(target.rows(), target.cols()) - target).eval());
  const Tensor<Scalar> log_p = log(p);
  const Tensor<Scalar> log_not_p = log(add_scalar(neg(p), 1.0));
  const Tensor<Scalar> bce = neg(add(scale(mul(y, log_p), w), mul(not_y, log_not_p)));
  return add(mean(bce), kl_divergence(dist));
}

/// Everything the training loop needs that does not change across epochs.
template <typename Scalar>
struct VgaeInputs {
  Tensor<Scalar> adjacency;
  Tensor<Scalar> lifted;
  Matrix<Scalar> target;
};

template <typename Scalar>
VgaeInputs<Scalar> prepare_inputs(const GraphDataset& dataset, double curvature) {
  std::optional<Curvature> c;
  if (curvature > 0.0) c = Curvature(curvature);
  return {Tensor<Scalar>::from_matrix(normalize_adjacency<Scalar>(dataset)),
          Tensor<Scalar>::from_matrix(lift_features<Scalar>(dataset.features, c)),
          adjacency_with_self_loops<Scalar>(dataset)};
}

template <typename Scalar>
void check_ball_invariant(const Tensor<Scalar>& hyperbolic, const Curvature& c) {
  const double limit = c.max_norm() * (1.0 + 1e-6);
  for (Eigen::Index i = 0; i < hyperbolic.rows(); ++i) {
    if (static_cast<double>(hyperbolic.value().row(i).norm()) > limit) {
      fail(ErrorKind::BoundaryPoint, "hyperbolic embedding left the ball at row " + std::to_string(i));
    }
  }
}

/// One full-graph forward pass returning the loss.
template <typename Scalar>
Tensor<Scalar> vgae_loss(const VgaeModel<Scalar>& model, const VgaeInputs<Scalar>& inputs, std::uint64_t noise_seed) {
  const auto enc = encode(model, inputs.adjacency, inputs.lifted);
  if (const auto c = model.ball()) check_ball_invariant(enc.hyperbolic, *c);
  const auto dist = latent_params(model, inputs.adjacency, enc.hyperbolic);
  const auto z = sample_latent(dist, noise_seed);
  return elbo_loss_logits(decode_logits(z), inputs.target, dist);
}

/// Unsupervised full-graph training with Adam.
template <typename Scalar>
VgaeTrainResult<Scalar> train_vgae(const GraphDataset& dataset, const VgaeConfig& config) {
  if (config.epochs < 1) fail(ErrorKind::ParamError, "epochs must be >= 1");
  VgaeTrainResult<Scalar> result{init_vgae<Scalar>(static_cast<int>(dataset.feature_dim()), config), {}};
  const auto inputs = prepare_inputs<Scalar>(dataset, config.curvature);
  auto params = result.model.parameters();
  AdamState<Scalar> adam(params, AdamOptions{config.lr});
  const std::uint64_t noise_stream = derive_seed(config.seed, 0x6e6f697365ULL);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Tensor<Scalar> loss;
    try {
      loss = vgae_loss(result.model, inputs, derive_seed(noise_stream, static_cast<std::uint64_t>(epoch)));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NonFinite) throw;
      fail(ErrorKind::TrainingDiverged, "VGAE diverged at epoch " + std::to_string(epoch));
    }
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) fail(ErrorKind::TrainingDiverged, "VGAE loss is not finite at epoch " + std::to_string(epoch));
    result.losses.push_back(value);
    backward(loss);
    adam_step(params, adam);
  }
  return result;
}

/// Z_mu for every node; inference does not sample.
template <typename Scalar>
Matrix<Scalar> embed_all(const VgaeModel<Scalar>& model, const GraphDataset& dataset) {
  NoGradGuard no_grad;
  const auto inputs = prepare_inputs<Scalar>(dataset, model.curvature);
  const auto enc = encode(model, inputs.adjacency, inputs.lifted);
  return latent_params(model, inputs.adjacency, enc.hyperbolic).mu.value();
}

template <typename Scalar>
Matrix<Scalar> embed_nodes(const VgaeModel<Scalar>& model, const GraphDataset& dataset,
                           const std::vector<std::size_t>& node_ids) {
  for (std::size_t id : node_ids) {
    if (id >= dataset.n_nodes()) fail(ErrorKind::RangeError, "node " + std::to_string(id) + " is not in the graph");
  }
  const Matrix<Scalar> all = embed_all(model, dataset);
  Matrix<Scalar> out(static_cast<Eigen::Index>(node_ids.size()), all.cols());
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(node_ids[i]));
  }
  return out;
}

}  // namespace impress
