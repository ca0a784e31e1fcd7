#pragma once

// Few-shot evaluation: density clustering for pseudo-labels, prototypes,
// support augmentation, a linear classifier, episodic benchmarking and
// clustering-quality metrics.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "impress/diffusion.hpp"
#include "impress/geometry.hpp"
#include "impress/graph.hpp"
#include "impress/vgae.hpp"

namespace impress {

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // kNoise for noise points
  double eps = 0.0;
  int min_pts = 1;
  int num_clusters = 0;
};

/// DBSCAN with Euclidean distance. A point is core when at least `min_pts`
/// points (itself included) lie within distance <= eps. Clusters are grown
/// breadth-first from the lowest-index unvisited core point; a border point
/// joins the first cluster that reaches it.
ClusterAssignment dbscan(const Matrix<double>& z, double eps, int min_pts);

/// Distance from every row to its `k`-th nearest row, counting the row itself
/// as the first, sorted ascending.
std::vector<double> k_distances(const Matrix<double>& z, int k);

/// eps at the knee of the sorted k-distance curve (largest second difference).
double knee_eps(const Matrix<double>& z, int min_pts);

inline constexpr int kDefaultMinPts = 5;

/// DBSCAN pseudo-labels; eps defaults to the k-distance knee.
template <typename Scalar>
ClusterAssignment cluster_pseudo_labels(const Matrix<Scalar>& z, std::optional<double> eps = std::nullopt,
                                        int min_pts = kDefaultMinPts) {
  const Matrix<double> zd = z.template cast<double>();
  return dbscan(zd, eps ? *eps : knee_eps(zd, min_pts), min_pts);
}

/// Mean row per label, ascending by label, noise excluded.
template <typename Scalar>
PrototypeSet<Scalar> compute_prototypes(const Matrix<Scalar>& z, const std::vector<int>& labels,
                                        PrototypeSource source = PrototypeSource::Pseudo) {
  if (labels.size() != static_cast<std::size_t>(z.rows())) fail(ErrorKind::ShapeMismatch, "one label per row");
  std::vector<int> ids;
  for (int l : labels) {
    if (l != kNoise) ids.push_back(l);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) fail(ErrorKind::EmptyClass, "no labelled rows to average");
  Matrix<double> sums = Matrix<double>::Zero(static_cast<Eigen::Index>(ids.size()), z.cols());
  std::vector<double> counts(ids.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kNoise) continue;
    const auto g = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin());
    sums.row(static_cast<Eigen::Index>(g)) += z.row(static_cast<Eigen::Index>(i)).template cast<double>();
    counts[g] += 1.0;
  }
  for (std::size_t g = 0; g < ids.size(); ++g) sums.row(static_cast<Eigen::Index>(g)) /= counts[g];
  return {sums.template cast<Scalar>(), source, ids};
}

/// Prototypes for classes 0..num_classes-1; every class must be present.
template <typename Scalar>
PrototypeSet<Scalar> class_prototypes(const Matrix<Scalar>& z, const std::vector<int>& labels, int num_classes) {
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) fail(ErrorKind::LabelError, "class index " + std::to_string(l) + " out of range");
    seen[static_cast<std::size_t>(l)] = true;
  }
  for (int c = 0; c < num_classes; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) fail(ErrorKind::EmptyClass, "class " + std::to_string(c) + " has no rows");
  }
  return compute_prototypes(z, labels, PrototypeSource::Labeled);
}

template <typename Scalar>
struct LabeledSet {
  Matrix<Scalar> x;
  std::vector<int> y;
  int num_classes = 0;
};

/// Support rows first, verbatim, then generated[c] tagged with class c.
template <typename Scalar>
LabeledSet<Scalar> augment_support(const Matrix<Scalar>& support, const std::vector<int>& labels,
                                   const std::vector<Matrix<Scalar>>& generated) {
  if (labels.size() != static_cast<std::size_t>(support.rows())) fail(ErrorKind::ShapeMismatch, "one label per support row");
  const int num_classes = static_cast<int>(generated.size());
  Eigen::Index extra = 0;
  for (int l : labels) {
    if (l < 0 || l >= num_classes) fail(ErrorKind::LabelError, "support label " + std::to_string(l) + " has no generated block");
  }
  for (const auto& g : generated) {
    if (g.rows() > 0 && g.cols() != support.cols()) fail(ErrorKind::ShapeMismatch, "generated block width differs");
    extra += g.rows();
  }
  LabeledSet<Scalar> out;
  out.num_classes = num_classes;
  out.x.resize(support.rows() + extra, support.cols());
  out.x.topRows(support.rows()) = support;
  out.y = labels;
  Eigen::Index row = support.rows();
  for (int c = 0; c < num_classes; ++c) {
    const auto& g = generated[static_cast<std::size_t>(c)];
    out.x.middleRows(row, g.rows()) = g;
    row += g.rows();
    out.y.insert(out.y.end(), static_cast<std::size_t>(g.rows()), c);
  }
  return out;
}

struct ClassifierConfig {
  int epochs = 500;
  double lr = 0.1;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression on standardized inputs.
struct LinearClassifier {
  Matrix<double> weights;  // dim x classes, in standardized coordinates
  Vector<double> bias;     // classes
  Vector<double> mean;     // per-feature standardization
  Vector<double> scale;
  std::vector<int> classes;

  Matrix<double> logits(const Matrix<double>& x) const;
  std::vector<int> predict(const Matrix<double>& x) const;
};

/// Full-batch gradient descent on mean cross-entropy. The L2 term is applied
/// as an implicit (proximal) shrink so the update stays stable for any l2.
LinearClassifier train_classifier(const Matrix<double>& x, const std::vector<int>& y, int num_classes,
                                  const ClassifierConfig& config);

template <typename Scalar>
LinearClassifier train_classifier(const LabeledSet<Scalar>& set, const ClassifierConfig& config) {
  return train_classifier(set.x.template cast<double>(), set.y, set.num_classes, config);
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

struct BoundDiagnostics {
  double sigma2 = 0.0;  // mean squared distance of points to their prototype
  double delta = 0.0;   // least distance between two prototypes
  double ratio = 0.0;   // sigma2 / delta^2
};

/// Hyperbolic distance between ball points; a missing curvature means the
/// flat limit 2|x - y|.
double ball_distance(const Vector<double>& x, const Vector<double>& y, const std::optional<Curvature>& c);

/// Points and prototypes given as ball coordinates.
BoundDiagnostics bound_diagnostics(const Matrix<double>& points, const std::vector<int>& labels,
                                   const Matrix<double>& prototypes, const std::optional<Curvature>& c);

/// Latent points and latent prototypes, lifted to the ball with exp at the
/// origin before measuring.
BoundDiagnostics latent_bound_diagnostics(const Matrix<double>& latent, const std::vector<int>& labels,
                                          const Matrix<double>& latent_prototypes, const std::optional<Curvature>& c);

/// Average-linkage agglomerative clustering into k clusters. Labels are
/// numbered by the smallest row index in each cluster.
std::vector<int> agglomerative_average(const Matrix<double>& z, int k);

/// Mean silhouette; singleton clusters score 0.
double silhouette(const Matrix<double>& z, const std::vector<int>& labels);

struct DaviesBouldin {
  double value = 0.0;
  bool degenerate = false;  // two centroids coincide; value reported as 0
};

DaviesBouldin davies_bouldin(const Matrix<double>& z, const std::vector<int>& labels);

struct HierarchyMetrics {
  double sc = 0.0;
  double db = 0.0;
  bool degenerate = false;
  std::vector<int> labels;
};

HierarchyMetrics hierarchy_metrics(const Matrix<double>& z, int k_clusters);

struct EpisodeResult {
  double accuracy = 0.0;
  BoundDiagnostics diagnostics;
  bool has_diagnostics = false;
};

struct EpisodeOptions {
  int generated = 50;
  ClassifierConfig classifier;
};

/// Runs one task on precomputed node embeddings. With options.generated == 0
/// the diffusion model is never read and may be null.
template <typename Scalar>
EpisodeResult evaluate_episode(const Matrix<Scalar>& embeddings, const DiffusionModel<Scalar>* diffusion,
                               const std::optional<Curvature>& curvature, const EpisodeTask& task,
                               const EpisodeOptions& options, std::uint64_t seed) {
  if (options.generated < 0) fail(ErrorKind::ParamError, "generated count must be >= 0");
  if (options.generated > 0 && diffusion == nullptr) fail(ErrorKind::ParamError, "augmentation needs a diffusion model");
  const auto gather = [&](const std::vector<std::pair<std::size_t, int>>& rows, std::vector<int>& labels) {
    Matrix<Scalar> out(static_cast<Eigen::Index>(rows.size()), embeddings.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].first >= static_cast<std::size_t>(embeddings.rows())) fail(ErrorKind::RangeError, "task node outside the graph");
      out.row(static_cast<Eigen::Index>(i)) = embeddings.row(static_cast<Eigen::Index>(rows[i].first));
      labels.push_back(rows[i].second);
    }
    return out;
  };
  std::vector<int> support_labels;
  std::vector<int> query_labels;
  const Matrix<Scalar> support = gather(task.support, support_labels);
  const Matrix<Scalar> query = gather(task.query, query_labels);
  const PrototypeSet<Scalar> protos = class_prototypes(support, support_labels, task.way);

  std::vector<Matrix<Scalar>> generated(static_cast<std::size_t>(task.way));
  for (int c = 0; c < task.way; ++c) {
    auto& block = generated[static_cast<std::size_t>(c)];
    if (options.generated > 0) {
      block = generate_samples(*diffusion, protos.row(c), options.generated,
                               derive_seed(seed, static_cast<std::uint64_t>(c) + 1));
    } else {
      block.resize(0, embeddings.cols());
    }
  }
  ClassifierConfig cc = options.classifier;
  cc.seed = derive_seed(seed, 0);
  const LinearClassifier clf = train_classifier(augment_support(support, support_labels, generated), cc);

  EpisodeResult result;
  result.accuracy = accuracy(clf.predict(query.template cast<double>()), query_labels);
  if (task.way >= 2) {
    try {
      result.diagnostics = latent_bound_diagnostics(support.template cast<double>(), support_labels,
                                                    protos.prototypes.template cast<double>(), curvature);
      result.has_diagnostics = true;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DiagnosticUnavailable) throw;
    }
  }
  return result;
}

/// Convenience form that embeds the graph with the VGAE first.
template <typename Scalar>
EpisodeResult evaluate_episode(const VgaeModel<Scalar>& vgae, const DiffusionModel<Scalar>* diffusion,
                               const GraphDataset& dataset, const EpisodeTask& task, const EpisodeOptions& options,
                               std::uint64_t seed) {
  return evaluate_episode(embed_all(vgae, dataset), diffusion, vgae.ball(), task, options, seed);
}

struct BenchmarkOptions {
  int way = 2;
  int shot = 5;
  int query = 10;
  int episodes = 50;
  std::uint64_t master_seed = 0;
  EpisodeOptions episode;
  int threads = 1;
};

struct EpisodeReport {
  nlohmann::ordered_json config;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over episodes
  BoundDiagnostics diagnostics;  // averaged over episodes
  std::optional<double> wall_seconds;

  std::string to_json() const;
  static EpisodeReport from_json(const std::string& text);
};

/// Mean and population standard deviation.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

/// Worker count from IMPRESS_THREADS (default 1, at least 1).
int threads_from_env();

/// Runs `count` independent jobs on up to `threads` workers. Results land in
/// job order, so output does not depend on the worker count.
void parallel_for(int count, int threads, const std::function<void(int)>& job);

/// Episode i uses seed_i = derive_seed(master_seed, i): the task is sampled
/// with derive_seed(seed_i, 0) and evaluated with derive_seed(seed_i, 1).
template <typename Scalar>
EpisodeReport run_benchmark(const Matrix<Scalar>& embeddings, const DiffusionModel<Scalar>* diffusion,
                            const std::optional<Curvature>& curvature, const GraphDataset& dataset,
                            const BenchmarkOptions& options) {
  if (options.episodes < 1) fail(ErrorKind::ParamError, "episodes must be >= 1");
  std::vector<EpisodeResult> results(static_cast<std::size_t>(options.episodes));
  std::vector<EpisodeTask> tasks;
  for (int i = 0; i < options.episodes; ++i) {
    const std::uint64_t seed_i = derive_seed(options.master_seed, static_cast<std::uint64_t>(i));
    tasks.push_back(sample_episode(dataset, SplitKind::Test, options.way, options.shot, options.query, derive_seed(seed_i, 0)));
  }
  parallel_for(options.episodes, options.threads, [&](int i) {
    const std::uint64_t seed_i = derive_seed(options.master_seed, static_cast<std::uint64_t>(i));
    const auto ui = static_cast<std::size_t>(i);
    results[ui] = evaluate_episode(embeddings, diffusion, curvature, tasks[ui], options.episode, derive_seed(seed_i, 1));
  });
  EpisodeReport report;
  double s2 = 0.0, d = 0.0, r = 0.0;
  int with_diag = 0;
  for (const auto& res : results) {
    report.accuracies.push_back(res.accuracy);
    if (res.has_diagnostics) {
      s2 += res.diagnostics.sigma2;
      d += res.diagnostics.delta;
      r += res.diagnostics.ratio;
      ++with_diag;
    }
  }
  std::tie(report.mean, report.std) = mean_and_std(report.accuracies);
  if (with_diag > 0) report.diagnostics = {s2 / with_diag, d / with_diag, r / with_diag};
  return report;
}

}  // namespace impress
