#pragma once

// Model persistence. A checkpoint is a text manifest followed by a
// little-endian float32 payload:
//
//   IMPRESS-CHECKPOINT
//   version 1
//   kind <kind>
//   config <key> <value...>
//   tensor <name> <rank> <dims...> <byte offset>
//   payload <byte count>
//   end
//   <payload bytes>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "impress/diffusion.hpp"
#include "impress/vgae.hpp"

namespace impress {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  Matrix<float> values;  // storage layout of the tensor (row vectors for rank 1)
};

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<CheckpointTensor> tensors;

  std::optional<std::string> find(const std::string& key) const;
  /// Throws FormatError when the key is absent.
  const std::string& require(const std::string& key) const;
  void set(const std::string& key, std::string value);
  const CheckpointTensor& tensor(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Round-trippable text for a double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);

namespace detail {

template <typename Scalar>
CheckpointTensor pack_tensor(const std::string& name, const Tensor<Scalar>& t) {
  return {name, t.shape(), t.value().template cast<float>()};
}

template <typename Scalar>
Tensor<Scalar> unpack_tensor(const Checkpoint& ck, const std::string& name, const Shape& expected) {
  const auto& t = ck.tensor(name);
  if (t.shape != expected) {
    fail(ErrorKind::FormatError, "tensor " + name + " has shape " + shape_string(t.shape) + ", expected " +
                                     shape_string(expected));
  }
  return Tensor<Scalar>::from_matrix(t.shape, t.values.template cast<Scalar>(), true);
}

}  // namespace detail

template <typename Scalar>
Checkpoint vgae_checkpoint(const VgaeModel<Scalar>& model) {
  Checkpoint ck;
  ck.kind = "vgae";
  ck.set("curvature", format_double(model.curvature));
  ck.set("input", std::to_string(model.dims.input));
  ck.set("hidden", std::to_string(model.dims.hidden));
  ck.set("latent", std::to_string(model.dims.latent));
  ck.set("layers", std::to_string(model.gcn_weights.size()));
  for (std::size_t i = 0; i < model.gcn_weights.size(); ++i) {
    ck.tensors.push_back(detail::pack_tensor("gcn" + std::to_string(i), model.gcn_weights[i]));
  }
  ck.tensors.push_back(detail::pack_tensor("theta_prime", model.theta_prime));
  ck.tensors.push_back(detail::pack_tensor("theta_mu", model.theta_mu));
  ck.tensors.push_back(detail::pack_tensor("theta_sigma", model.theta_sigma));
  return ck;
}

template <typename Scalar>
VgaeModel<Scalar> vgae_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "vgae") fail(ErrorKind::FormatError, "checkpoint holds a " + ck.kind + " model, expected vgae");
  VgaeModel<Scalar> m;
  m.curvature = parse_double(ck.require("curvature"), "curvature");
  m.dims.input = static_cast<int>(parse_int(ck.require("input"), "input"));
  m.dims.hidden = static_cast<int>(parse_int(ck.require("hidden"), "hidden"));
  m.dims.latent = static_cast<int>(parse_int(ck.require("latent"), "latent"));
  const auto layers = parse_int(ck.require("layers"), "layers");
  if (m.curvature < 0.0 || m.dims.input < 1 || m.dims.hidden < 1 || m.dims.latent < 1 || layers < 1) {
    fail(ErrorKind::FormatError, "invalid vgae dimensions");
  }
  const auto in = static_cast<std::size_t>(m.dims.input);
  const auto hid = static_cast<std::size_t>(m.dims.hidden);
  const auto lat = static_cast<std::size_t>(m.dims.latent);
  for (long long i = 0; i < layers; ++i) {
    m.gcn_weights.push_back(detail::unpack_tensor<Scalar>(ck, "gcn" + std::to_string(i), {i == 0 ? in : hid, hid}));
  }
  m.theta_prime = detail::unpack_tensor<Scalar>(ck, "theta_prime", {hid, hid});
  m.theta_mu = detail::unpack_tensor<Scalar>(ck, "theta_mu", {hid, lat});
  m.theta_sigma = detail::unpack_tensor<Scalar>(ck, "theta_sigma", {hid, lat});
  return m;
}

template <typename Scalar>
Checkpoint diffusion_checkpoint(const DiffusionModel<Scalar>& model) {
  Checkpoint ck;
  ck.kind = "diffusion";
  ck.set("steps", std::to_string(model.schedule.steps));
  ck.set("beta_start", format_double(model.schedule.beta_start));
  ck.set("beta_end", format_double(model.schedule.beta_end));
  ck.set("latent", std::to_string(model.latent_dim));
  ck.set("width", std::to_string(model.width));
  ck.set("blocks", std::to_string(model.blocks.size()));
  ck.set("data_scale", format_double(model.data_scale));
  ck.set("trained", model.trained ? "1" : "0");
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ck.tensors.push_back(detail::pack_tensor(names[i], params[i]));
  return ck;
}

template <typename Scalar>
DiffusionModel<Scalar> diffusion_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "diffusion") fail(ErrorKind::FormatError, "checkpoint holds a " + ck.kind + " model, expected diffusion");
  DiffusionModel<Scalar> m;
  m.schedule = build_schedule(static_cast<int>(parse_int(ck.require("steps"), "steps")),
                              parse_double(ck.require("beta_start"), "beta_start"),
                              parse_double(ck.require("beta_end"), "beta_end"));
  m.latent_dim = static_cast<int>(parse_int(ck.require("latent"), "latent"));
  m.width = static_cast<int>(parse_int(ck.require("width"), "width"));
  m.data_scale = parse_double(ck.require("data_scale"), "data_scale");
  m.trained = ck.require("trained") == "1";
  const auto blocks = parse_int(ck.require("blocks"), "blocks");
  if (m.latent_dim < 1 || m.width < 1 || blocks < 1 || !(m.data_scale > 0.0)) {
    fail(ErrorKind::FormatError, "invalid diffusion dimensions");
  }
  const auto l = static_cast<std::size_t>(m.latent_dim);
  const auto w = static_cast<std::size_t>(m.width);
  for (long long b = 0; b < blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    DenoiserBlock<Scalar> block;
    block.w_in = detail::unpack_tensor<Scalar>(ck, p + "w_in", {l, w});
    block.b_in = detail::unpack_tensor<Scalar>(ck, p + "b_in", {w});
    block.w_q = detail::unpack_tensor<Scalar>(ck, p + "w_q", {w, w});
    block.w_k = detail::unpack_tensor<Scalar>(ck, p + "w_k", {l, w});
    block.w_v = detail::unpack_tensor<Scalar>(ck, p + "w_v", {l, w});
    block.w_out = detail::unpack_tensor<Scalar>(ck, p + "w_out", {w, l});
    block.b_out = detail::unpack_tensor<Scalar>(ck, p + "b_out", {l});
    m.blocks.push_back(std::move(block));
  }
  return m;
}

}  // namespace impress
