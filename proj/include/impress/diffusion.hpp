#pragma once

// Prototype-conditioned denoising diffusion over latent node embeddings.
// The denoiser predicts the clean sample; ancestral sampling turns that
// prediction into the Gaussian posterior mean of the previous step.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "impress/tensor.hpp"

namespace impress {

/// beta_k for k = 1..K (index 0 unused), alpha_bar_0 = 1.
struct NoiseSchedule {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_variance;
};

/// Linear beta schedule; alpha_bar is accumulated in long double.
inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) fail(ErrorKind::ScheduleError, "need at least one diffusion step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    fail(ErrorKind::ScheduleError, "need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto n = static_cast<std::size_t>(steps) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.posterior_variance.assign(n, 0.0);
  long double running = 1.0L;
  for (int k = 1; k <= steps; ++k) {
    const double t = steps == 1 ? 0.0 : static_cast<double>(k - 1) / static_cast<double>(steps - 1);
    const auto uk = static_cast<std::size_t>(k);
    s.beta[uk] = beta_start + (beta_end - beta_start) * t;
    s.alpha[uk] = 1.0 - s.beta[uk];
    running *= static_cast<long double>(s.alpha[uk]);
    s.alpha_bar[uk] = static_cast<double>(running);
    s.posterior_variance[uk] = s.beta[uk] * (1.0 - s.alpha_bar[uk - 1]) / (1.0 - s.alpha_bar[uk]);
  }
  return s;
}

enum class PrototypeSource { Pseudo, Labeled };

template <typename Scalar>
struct PrototypeSet {
  Matrix<Scalar> prototypes;  // p x latent
  PrototypeSource source = PrototypeSource::Labeled;
  std::vector<int> ids;

  Eigen::Index size() const { return prototypes.rows(); }

  /// The single-prototype set for row i.
  PrototypeSet row(Eigen::Index i) const {
    return {prototypes.row(i), source, {ids.empty() ? static_cast<int>(i) : ids[static_cast<std::size_t>(i)]}};
  }
};

template <typename Scalar>
struct DenoiserBlock {
  Tensor<Scalar> w_in;   // latent x width
  Tensor<Scalar> b_in;   // [width]
  Tensor<Scalar> w_q;    // width x width
  Tensor<Scalar> w_k;    // latent x width
  Tensor<Scalar> w_v;    // latent x width
  Tensor<Scalar> w_out;  // width x latent
  Tensor<Scalar> b_out;  // [latent]
};

inline constexpr int kDenoiserBlocks = 3;

template <typename Scalar>
struct DiffusionModel {
  NoiseSchedule schedule;
  int latent_dim = 0;
  int width = 0;
  /// Embeddings are divided by this before diffusion and multiplied back
  /// after sampling.
  double data_scale = 1.0;
  bool trained = false;
  std::vector<DenoiserBlock<Scalar>> blocks;

  std::vector<Tensor<Scalar>> parameters() const {
    std::vector<Tensor<Scalar>> out;
    for (const auto& b : blocks) {
      for (const auto* t : {&b.w_in, &b.b_in, &b.w_q, &b.w_k, &b.w_v, &b.w_out, &b.b_out}) out.push_back(*t);
    }
    return out;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      for (const char* n : {"w_in", "b_in", "w_q", "w_k", "w_v", "w_out", "b_out"}) {
        out.push_back("block" + std::to_string(i) + "." + n);
      }
    }
    return out;
  }
};

template <typename Scalar>
DiffusionModel<Scalar> init_diffusion(int latent_dim, int width, const NoiseSchedule& schedule, std::uint64_t seed) {
  if (latent_dim < 1 || width < 1) fail(ErrorKind::ParamError, "denoiser dimensions must be >= 1");
  DiffusionModel<Scalar> m;
  m.schedule = schedule;
  m.latent_dim = latent_dim;
  m.width = width;
  const auto l = static_cast<std::size_t>(latent_dim);
  const auto w = static_cast<std::size_t>(width);
  std::uint64_t stream = 0;
  for (int b = 0; b < kDenoiserBlocks; ++b) {
    DenoiserBlock<Scalar> block;
    block.w_in = glorot<Scalar>(l, w, derive_seed(seed, stream++));
    block.b_in = Tensor<Scalar>::zeros({w}, true);
    block.w_q = glorot<Scalar>(w, w, derive_seed(seed, stream++));
    block.w_k = glorot<Scalar>(l, w, derive_seed(seed, stream++));
    block.w_v = glorot<Scalar>(l, w, derive_seed(seed, stream++));
    block.w_out = glorot<Scalar>(w, l, derive_seed(seed, stream++));
    block.b_out = Tensor<Scalar>::zeros({l}, true);
    m.blocks.push_back(std::move(block));
  }
  return m;
}

/// Sinusoidal embedding: [sin(k w_0), cos(k w_0), sin(k w_1), ...] with
/// w_i = 10000^(-2i/dim).
template <typename Scalar>
Matrix<Scalar> time_embedding(const std::vector<int>& steps, int dim) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(steps.size()), dim);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    for (int j = 0; j < dim; ++j) {
      const int pair = j / 2;
      const double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(dim));
      const double arg = static_cast<double>(steps[r]) * freq;
      out(static_cast<Eigen::Index>(r), j) = static_cast<Scalar>(j % 2 == 0 ? std::sin(arg) : std::cos(arg));
    }
  }
  return out;
}

template <typename Scalar>
struct AttentionOutput {
  Tensor<Scalar> output;   // m x width
  Tensor<Scalar> weights;  // m x p
};

/// Q = H W_Q, K = P W_K, V = P W_V, S = softmax(Q K^T / sqrt(d)) V.
template <typename Scalar>
AttentionOutput<Scalar> cross_attention(const DenoiserBlock<Scalar>& block, const Tensor<Scalar>& queries,
                                        const Tensor<Scalar>& prototypes) {
  const Tensor<Scalar> keys = matmul(prototypes, block.w_k);
  const Tensor<Scalar> values = matmul(prototypes, block.w_v);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  const Tensor<Scalar> scores = scale(matmul(matmul(queries, block.w_q), transpose(keys)), inv_sqrt_d);
  const Tensor<Scalar> weights = softmax_rows(scores);
  return {matmul(weights, values), weights};
}

/// Predicts the clean sample from Z_k. Each block computes
///   a = ReLU((h + temb(k)) W_in + b_in)
///   s = CrossAttention(a, P)
///   h = h + (a + s) W_out + b_out
template <typename Scalar>
Tensor<Scalar> denoise_forward(const DiffusionModel<Scalar>& model, const Tensor<Scalar>& zk, const std::vector<int>& steps,
                               const PrototypeSet<Scalar>& cond) {
  if (zk.cols() != model.latent_dim || cond.prototypes.cols() != model.latent_dim) {
    fail(ErrorKind::ShapeMismatch, "latent dimension differs from the denoiser");
  }
  if (cond.size() < 1) fail(ErrorKind::ShapeMismatch, "conditioning needs at least one prototype");
  if (steps.size() != static_cast<std::size_t>(zk.rows())) fail(ErrorKind::ShapeMismatch, "one step index per row");
  const Tensor<Scalar> temb = Tensor<Scalar>::from_matrix(time_embedding<Scalar>(steps, model.latent_dim));
  const Tensor<Scalar> protos = Tensor<Scalar>::from_matrix(cond.prototypes);
  Tensor<Scalar> h = zk;
  for (const auto& block : model.blocks) {
    const Tensor<Scalar> a = relu(add(matmul(add(h, temb), block.w_in), block.b_in));
    const Tensor<Scalar> s = cross_attention(block, a, protos).output;
    h = add(h, add(matmul(add(a, s), block.w_out), block.b_out));
  }
  return h;
}

template <typename Scalar>
Tensor<Scalar> denoise_forward(const DiffusionModel<Scalar>& model, const Tensor<Scalar>& zk, int step,
                               const PrototypeSet<Scalar>& cond) {
  return denoise_forward(model, zk, std::vector<int>(static_cast<std::size_t>(zk.rows()), step), cond);
}

template <typename Scalar>
struct Diffused {
  Matrix<Scalar> zk;
  Matrix<Scalar> noise;
};

/// Z_k = sqrt(alpha_bar_k) Z_0 + sqrt(1 - alpha_bar_k) eps with caller noise.
template <typename Scalar>
Matrix<Scalar> diffuse_with(const Matrix<Scalar>& z0, int step, const NoiseSchedule& schedule,
                            const Matrix<Scalar>& noise) {
  if (step < 1 || step > schedule.steps) {
    fail(ErrorKind::StepError, "step " + std::to_string(step) + " outside [1, " + std::to_string(schedule.steps) + "]");
  }
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(step)];
  return (static_cast<Scalar>(std::sqrt(ab)) * z0 + static_cast<Scalar>(std::sqrt(1.0 - ab)) * noise).eval();
}

template <typename Scalar>
Diffused<Scalar> forward_diffuse(const Matrix<Scalar>& z0, int step, const NoiseSchedule& schedule, std::uint64_t seed) {
  if (step < 1 || step > schedule.steps) {
    fail(ErrorKind::StepError, "step " + std::to_string(step) + " outside [1, " + std::to_string(schedule.steps) + "]");
  }
  Rng rng(seed);
  Matrix<Scalar> noise(z0.rows(), z0.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<Scalar>(rng.normal());
  return {diffuse_with(z0, step, schedule, noise), noise};
}

/// Denoiser signature used by the loss: (Z_k rows, their steps, conditioning).
template <typename Scalar>
using Denoiser = std::function<Tensor<Scalar>(const Tensor<Scalar>&, const std::vector<int>&, const PrototypeSet<Scalar>&)>;

/// Mean over rows of |Z_0 - f(Z_k, k, P)|^2 with k uniform in [1, K] per row.
/// Row i is conditioned on the single prototype `assignment[i]`; rows sharing
/// a prototype are denoised together.
template <typename Scalar>
Tensor<Scalar> diffusion_loss_with(const Denoiser<Scalar>& denoiser, const Matrix<Scalar>& z0,
                                   const std::vector<int>& assignment, const PrototypeSet<Scalar>& prototypes,
                                   const NoiseSchedule& schedule, std::uint64_t seed) {
  if (z0.rows() < 1) fail(ErrorKind::ShapeMismatch, "empty diffusion batch");
  if (assignment.size() != static_cast<std::size_t>(z0.rows())) fail(ErrorKind::ShapeMismatch, "one prototype per row");
  Rng rng(seed);
  std::vector<int> steps(assignment.size());
  for (auto& k : steps) k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
  Matrix<Scalar> noise(z0.rows(), z0.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<Scalar>(rng.normal());

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] < 0 || assignment[i] >= prototypes.size()) {
      fail(ErrorKind::RangeError, "prototype index " + std::to_string(assignment[i]) + " out of range");
    }
    groups[assignment[i]].push_back(i);
  }
  Tensor<Scalar> total;
  for (const auto& [proto, rows] : groups) {
    Matrix<Scalar> zk(static_cast<Eigen::Index>(rows.size()), z0.cols());
    Matrix<Scalar> target(static_cast<Eigen::Index>(rows.size()), z0.cols());
    std::vector<int> group_steps;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = static_cast<Eigen::Index>(rows[r]);
      const double ab = schedule.alpha_bar[static_cast<std::size_t>(steps[rows[r]])];
      zk.row(static_cast<Eigen::Index>(r)) = static_cast<Scalar>(std::sqrt(ab)) * z0.row(src) +
                                             static_cast<Scalar>(std::sqrt(1.0 - ab)) * noise.row(src);
      target.row(static_cast<Eigen::Index>(r)) = z0.row(src);
      group_steps.push_back(steps[rows[r]]);
    }
    const Tensor<Scalar> pred = denoiser(Tensor<Scalar>::from_matrix(zk), group_steps, prototypes.row(proto));
    const Tensor<Scalar> err = sum(square(sub(pred, Tensor<Scalar>::from_matrix(target))));
    total = total.defined() ? add(total, err) : err;
  }
  return scale(total, 1.0 / static_cast<double>(z0.rows()));
}

template <typename Scalar>
Tensor<Scalar> diffusion_loss(const DiffusionModel<Scalar>& model, const Matrix<Scalar>& z0,
                              const std::vector<int>& assignment, const PrototypeSet<Scalar>& prototypes,
                              std::uint64_t seed) {
  const Denoiser<Scalar> net = [&model](const Tensor<Scalar>& zk, const std::vector<int>& ks,
                                        const PrototypeSet<Scalar>& p) { return denoise_forward(model, zk, ks, p); };
  return diffusion_loss_with(net, z0, assignment, prototypes, model.schedule, seed);
}

struct DiffusionConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int epochs = 100;
  int batch = 64;
  double lr = 1e-3;
  int width = 128;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct DiffusionTrainResult {
  DiffusionModel<Scalar> model;
  std::vector<double> losses;  // mean minibatch loss per epoch
};

/// Root mean square of all coordinates, floored away from zero.
template <typename Scalar>
double rms_scale(const Matrix<Scalar>& z) {
  const double ms = static_cast<double>(z.squaredNorm()) / static_cast<double>(std::max<Eigen::Index>(z.size(), 1));
  return ms > 1e-24 ? std::sqrt(ms) : 1.0;
}

/// Minibatch Adam on the denoising loss. Rows whose cluster label is negative
/// (clustering noise) are left out.
template <typename Scalar>
DiffusionTrainResult<Scalar> train_diffusion(const Matrix<Scalar>& embeddings, const std::vector<int>& cluster_labels,
                                             const PrototypeSet<Scalar>& prototypes, const DiffusionConfig& config) {
  if (config.epochs < 1 || config.batch < 1) fail(ErrorKind::ParamError, "epochs and batch must be >= 1");
  if (prototypes.size() < 1) fail(ErrorKind::ParamError, "diffusion training needs at least one prototype");
  if (cluster_labels.size() != static_cast<std::size_t>(embeddings.rows())) {
    fail(ErrorKind::ShapeMismatch, "one cluster label per embedding");
  }
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < cluster_labels.size(); ++i) {
    if (cluster_labels[i] >= 0) {
      if (cluster_labels[i] >= prototypes.size()) fail(ErrorKind::RangeError, "cluster label without a prototype");
      usable.push_back(i);
    }
  }
  if (usable.empty()) fail(ErrorKind::ParamError, "every embedding is labelled as noise");

  Matrix<Scalar> data(static_cast<Eigen::Index>(usable.size()), embeddings.cols());
  for (std::size_t r = 0; r < usable.size(); ++r) {
    data.row(static_cast<Eigen::Index>(r)) = embeddings.row(static_cast<Eigen::Index>(usable[r]));
  }
  const double data_scale = rms_scale(data);
  data /= static_cast<Scalar>(data_scale);
  PrototypeSet<Scalar> cond = prototypes;
  cond.prototypes /= static_cast<Scalar>(data_scale);

  DiffusionTrainResult<Scalar> result;
  result.model = init_diffusion<Scalar>(static_cast<int>(embeddings.cols()), config.width,
                                        build_schedule(config.steps, config.beta_start, config.beta_end),
                                        derive_seed(config.seed, 1));
  result.model.data_scale = data_scale;
  auto params = result.model.parameters();
  AdamState<Scalar> adam(params, AdamOptions{config.lr});
  Rng order_rng(derive_seed(config.seed, 2));
  const std::uint64_t loss_stream = derive_seed(config.seed, 3);
  std::vector<std::size_t> order(usable.size());
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      Matrix<Scalar> z0(static_cast<Eigen::Index>(end - start), data.cols());
      std::vector<int> assignment;
      for (std::size_t r = start; r < end; ++r) {
        z0.row(static_cast<Eigen::Index>(r - start)) = data.row(static_cast<Eigen::Index>(order[r]));
        assignment.push_back(cluster_labels[usable[order[r]]]);
      }
      Tensor<Scalar> loss;
      try {
        loss = diffusion_loss(result.model, z0, assignment, cond, derive_seed(loss_stream, step++));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFinite) throw;
        fail(ErrorKind::TrainingDiverged, "diffusion diverged in epoch " + std::to_string(epoch));
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) fail(ErrorKind::TrainingDiverged, "diffusion loss not finite in epoch " + std::to_string(epoch));
      epoch_loss += value;
      ++batches;
      backward(loss);
      adam_step(params, adam);
    }
    result.losses.push_back(epoch_loss / static_cast<double>(batches));
  }
  result.model.trained = true;
  return result;
}

/// One reverse step from x0-prediction:
///   mean = sqrt(ab_{k-1}) beta_k / (1 - ab_k) * x0 + sqrt(alpha_k) (1 - ab_{k-1}) / (1 - ab_k) * z_k
template <typename Scalar>
Matrix<Scalar> posterior_mean(const NoiseSchedule& s, int step, const Matrix<Scalar>& x0, const Matrix<Scalar>& zk) {
  const auto k = static_cast<std::size_t>(step);
  const double denom = 1.0 - s.alpha_bar[k];
  const double cx = std::sqrt(s.alpha_bar[k - 1]) * s.beta[k] / denom;
  const double cz = std::sqrt(s.alpha[k]) * (1.0 - s.alpha_bar[k - 1]) / denom;
  return (static_cast<Scalar>(cx) * x0 + static_cast<Scalar>(cz) * zk).eval();
}

/// Ancestral sampling of `count` embeddings conditioned on `cond`.
template <typename Scalar>
Matrix<Scalar> generate_samples(const DiffusionModel<Scalar>& model, const PrototypeSet<Scalar>& cond, int count,
                                std::uint64_t seed) {
  if (!model.trained) fail(ErrorKind::ModelNotTrained, "diffusion model has not been trained");
  if (count < 1) fail(ErrorKind::ParamError, "sample count must be >= 1");
  NoGradGuard no_grad;
  PrototypeSet<Scalar> scaled = cond;
  scaled.prototypes /= static_cast<Scalar>(model.data_scale);
  Rng rng(seed);
  Matrix<Scalar> z(count, model.latent_dim);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<Scalar>(rng.normal());
  for (int k = model.schedule.steps; k >= 1; --k) {
    const Matrix<Scalar> x0 = denoise_forward(model, Tensor<Scalar>::from_matrix(z), k, scaled).value();
    z = posterior_mean(model.schedule, k, x0, z);
    if (k > 1) {
      const Scalar sigma = static_cast<Scalar>(std::sqrt(model.schedule.posterior_variance[static_cast<std::size_t>(k)]));
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] += sigma * static_cast<Scalar>(rng.normal());
    }
  }
  return (z * static_cast<Scalar>(model.data_scale)).eval();
}

}  // namespace impress
