#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace impress::cli {

enum class Precision { F32, F64 };

/// Every knob of the pipeline. Each subcommand reads the fields it needs;
/// validate() checks them all before any work starts.
struct RunConfig {
  // Paths.
  std::string dataset;
  std::string vgae_path;
  std::string diffusion_path;
  std::string out;
  std::string report;

  // VGAE.
  double curvature = 1.0;
  int hidden = 256;
  int latent = 64;
  int layers = 2;
  int vgae_epochs = 200;
  double vgae_lr = 1e-3;

  // Diffusion.
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int diffusion_epochs = 100;
  int batch = 64;
  double diffusion_lr = 1e-3;
  int width = 128;
  std::string nodes = "train";

  // Clustering.
  std::optional<double> eps;
  int min_pts = 5;

  // Episodes.
  int way = 2;
  int shot = 5;
  int query = 10;
  int generated = 50;
  int episodes = 50;
  int classifier_epochs = 500;
  double classifier_lr = 0.1;
  double classifier_l2 = 1e-3;
  bool timing = false;

  // Metrics.
  std::string split = "test";
  int k_clusters = 0;  // 0: number of classes in the split

  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  int threads = 1;
};

/// Throws ParamError naming the first invalid field.
void validate(const RunConfig& config);

/// Runs one subcommand. Returns 0 on success, 1 on a runtime error (after
/// printing "error: <Kind>: <message>" to err) and 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace impress::cli
