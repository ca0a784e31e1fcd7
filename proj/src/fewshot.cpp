#include "impress/fewshot.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace impress {

namespace {

Matrix<double> pairwise_distances(const Matrix<double>& z) {
  const Eigen::Index n = z.rows();
  Matrix<double> d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (z.row(i) - z.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

std::vector<int> distinct_labels(const std::vector<int>& labels) {
  std::vector<int> ids = labels;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

/// Maps arbitrary labels to dense 0..k-1 in ascending label order.
std::vector<int> dense_labels(const std::vector<int>& labels, int& k) {
  const auto ids = distinct_labels(labels);
  k = static_cast<int>(ids.size());
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = static_cast<int>(std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin());
  }
  return out;
}

}  // namespace

ClusterAssignment dbscan(const Matrix<double>& z, double eps, int min_pts) {
  if (!(eps > 0.0) || !std::isfinite(eps)) fail(ErrorKind::ParamError, "eps must be positive");
  if (min_pts < 1) fail(ErrorKind::ParamError, "min_pts must be >= 1");
  if (z.rows() < min_pts) fail(ErrorKind::ParamError, "fewer points than min_pts");
  const auto n = static_cast<std::size_t>(z.rows());
  const Matrix<double> d = pairwise_distances(z);
  std::vector<std::vector<std::size_t>> neighbors(n);
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= eps) neighbors[i].push_back(j);
    }
    core[i] = neighbors[i].size() >= static_cast<std::size_t>(min_pts);
  }
  ClusterAssignment out;
  out.eps = eps;
  out.min_pts = min_pts;
  out.labels.assign(n, kNoise);
  std::vector<bool> assigned(n, false);
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || assigned[seed]) continue;
    const int id = out.num_clusters++;
    std::deque<std::size_t> frontier{seed};
    assigned[seed] = true;
    out.labels[seed] = id;
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      for (std::size_t q : neighbors[p]) {
        if (assigned[q]) continue;
        assigned[q] = true;
        out.labels[q] = id;
        if (core[q]) frontier.push_back(q);
      }
    }
  }
  return out;
}

std::vector<double> k_distances(const Matrix<double>& z, int k) {
  if (k < 1 || k > z.rows()) fail(ErrorKind::ParamError, "k must lie in [1, n]");
  const Matrix<double> d = pairwise_distances(z);
  std::vector<double> out;
  std::vector<double> row(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.rows(); ++j) row[static_cast<std::size_t>(j)] = d(i, j);
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    out.push_back(row[static_cast<std::size_t>(k - 1)]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double knee_eps(const Matrix<double>& z, int min_pts) {
  const auto kd = k_distances(z, min_pts);
  double eps = kd.back();
  if (kd.size() >= 3) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < kd.size(); ++i) {
      const double second = kd[i + 1] - 2.0 * kd[i] + kd[i - 1];
      if (second > best) {
        best = second;
        eps = kd[i];
      }
    }
  }
  if (eps > 0.0) return eps;
  for (double v : kd) {
    if (v > 0.0) return v;
  }
  return 1.0;  // every point coincides; any positive radius gives one cluster
}

Matrix<double> LinearClassifier::logits(const Matrix<double>& x) const {
  if (x.cols() != weights.rows()) fail(ErrorKind::ShapeMismatch, "classifier input width");
  const Matrix<double> std_x = (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  return (std_x * weights).rowwise() + bias.transpose();
}

std::vector<int> LinearClassifier::predict(const Matrix<double>& x) const {
  const Matrix<double> l = logits(x);
  std::vector<int> out(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    Eigen::Index best = 0;
    l.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

LinearClassifier train_classifier(const Matrix<double>& x, const std::vector<int>& y, int num_classes,
                                  const ClassifierConfig& config) {
  if (config.epochs < 0 || !(config.lr > 0.0) || config.l2 < 0.0) fail(ErrorKind::ParamError, "classifier settings");
  if (y.size() != static_cast<std::size_t>(x.rows())) fail(ErrorKind::ShapeMismatch, "one label per row");
  if (num_classes < 1) fail(ErrorKind::ParamError, "need at least one class");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int l : y) {
    if (l < 0 || l >= num_classes) fail(ErrorKind::LabelError, "label " + std::to_string(l) + " out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) fail(ErrorKind::EmptyClass, "class " + std::to_string(c) + " has no samples");
  }
  if (!x.allFinite()) fail(ErrorKind::NonFinite, "non-finite classifier input");

  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  LinearClassifier clf;
  clf.classes.resize(static_cast<std::size_t>(num_classes));
  std::iota(clf.classes.begin(), clf.classes.end(), 0);
  clf.mean = x.colwise().mean().transpose();
  const Matrix<double> centered = x.rowwise() - clf.mean.transpose();
  clf.scale = (centered.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (!(clf.scale(j) > 1e-12)) clf.scale(j) = 1.0;
  }
  const Matrix<double> xs = centered.array().rowwise() / clf.scale.transpose().array();

  Matrix<double> onehot = Matrix<double>::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;

  Rng rng(config.seed);
  clf.weights.resize(dim, num_classes);
  for (Eigen::Index i = 0; i < clf.weights.size(); ++i) clf.weights.data()[i] = rng.normal(0.0, 0.01);
  clf.bias = Vector<double>::Zero(num_classes);
  const double shrink = 1.0 / (1.0 + config.lr * config.l2);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Matrix<double> p = (xs * clf.weights).rowwise() + clf.bias.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - m).exp().matrix();
      p.row(i) /= p.row(i).sum();
    }
    const Matrix<double> g = (p - onehot) / static_cast<double>(n);
    clf.weights = (clf.weights - config.lr * (xs.transpose() * g)) * shrink;
    clf.bias -= config.lr * g.colwise().sum().transpose();
  }
  return clf;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) fail(ErrorKind::ShapeMismatch, "prediction and label counts differ");
  if (truth.empty()) fail(ErrorKind::ParamError, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ball_distance(const Vector<double>& x, const Vector<double>& y, const std::optional<Curvature>& c) {
  if (!c) return 2.0 * (x - y).norm();
  return hyperbolic_distance(BallPoint<double>(x, *c), BallPoint<double>(y, *c));
}

BoundDiagnostics bound_diagnostics(const Matrix<double>& points, const std::vector<int>& labels,
                                   const Matrix<double>& prototypes, const std::optional<Curvature>& c) {
  if (prototypes.rows() < 2) fail(ErrorKind::DiagnosticUnavailable, "bound diagnostics need two classes");
  if (labels.size() != static_cast<std::size_t>(points.rows())) fail(ErrorKind::ShapeMismatch, "one label per point");
  if (points.rows() == 0) fail(ErrorKind::DiagnosticUnavailable, "no points");
  BoundDiagnostics out;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l < 0 || l >= prototypes.rows()) fail(ErrorKind::LabelError, "point label without a prototype");
    const double dist = ball_distance(points.row(i).transpose(), prototypes.row(l).transpose(), c);
    out.sigma2 += dist * dist;
  }
  out.sigma2 /= static_cast<double>(points.rows());
  out.delta = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < prototypes.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < prototypes.rows(); ++b) {
      out.delta = std::min(out.delta, ball_distance(prototypes.row(a).transpose(), prototypes.row(b).transpose(), c));
    }
  }
  if (out.delta > 0.0) {
    out.ratio = out.sigma2 / (out.delta * out.delta);
  } else if (out.sigma2 > 0.0) {
    fail(ErrorKind::DiagnosticUnavailable, "two prototypes coincide");
  }
  return out;
}

BoundDiagnostics latent_bound_diagnostics(const Matrix<double>& latent, const std::vector<int>& labels,
                                          const Matrix<double>& latent_prototypes, const std::optional<Curvature>& c) {
  if (!c) return bound_diagnostics(latent, labels, latent_prototypes, c);
  const auto lift = [&c](const Matrix<double>& m) {
    Matrix<double> out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = expmap0<double>(m.row(i).transpose(), *c).transpose();
    return out;
  };
  return bound_diagnostics(lift(latent), labels, lift(latent_prototypes), c);
}

std::vector<int> agglomerative_average(const Matrix<double>& z, int k) {
  const auto n = static_cast<std::size_t>(z.rows());
  if (k < 1 || static_cast<std::size_t>(k) > n) fail(ErrorKind::ParamError, "cluster count must lie in [1, n]");
  Matrix<double> d = pairwise_distances(z);
  std::vector<double> size(n, 1.0);
  std::vector<bool> active(n, true);
  struct Merge {
    double height;
    std::size_t a;
    std::size_t b;
  };
  std::vector<Merge> merges;
  std::vector<std::size_t> chain;
  std::size_t remaining = n;
  // Nearest-neighbour chain; exact for average linkage because it is reducible.
  while (remaining > 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        if (active[i]) {
          chain.push_back(i);
          break;
        }
      }
    }
    const std::size_t a = chain.back();
    const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    if (prev != n) {
      best = prev;
      best_d = d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(prev));
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (!active[j] || j == a) continue;
      const double v = d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
      if (v < best_d) {
        best_d = v;
        best = j;
      }
    }
    if (best != prev) {
      chain.push_back(best);
      continue;
    }
    chain.pop_back();
    chain.pop_back();
    const std::size_t keep = std::min(a, best);
    const std::size_t drop = std::max(a, best);
    merges.push_back({best_d, keep, drop});
    const double na = size[keep];
    const double nb = size[drop];
    for (std::size_t j = 0; j < n; ++j) {
      if (!active[j] || j == keep || j == drop) continue;
      const auto ej = static_cast<Eigen::Index>(j);
      const double v = (na * d(static_cast<Eigen::Index>(keep), ej) + nb * d(static_cast<Eigen::Index>(drop), ej)) / (na + nb);
      d(static_cast<Eigen::Index>(keep), ej) = v;
      d(ej, static_cast<Eigen::Index>(keep)) = v;
    }
    size[keep] = na + nb;
    active[drop] = false;
    --remaining;
  }
  std::stable_sort(merges.begin(), merges.end(), [](const Merge& x, const Merge& y) { return x.height < y.height; });

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&parent](std::size_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  for (std::size_t m = 0; m + static_cast<std::size_t>(k) < n; ++m) {
    const std::size_t ra = find(merges[m].a);
    const std::size_t rb = find(merges[m].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> labels(n, -1);
  std::vector<int> root_label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    labels[i] = root_label[r];
  }
  return labels;
}

double silhouette(const Matrix<double>& z, const std::vector<int>& labels) {
  if (labels.size() != static_cast<std::size_t>(z.rows())) fail(ErrorKind::ShapeMismatch, "one label per row");
  int k = 0;
  const auto dense = dense_labels(labels, k);
  if (k < 2) fail(ErrorKind::ParamError, "silhouette needs at least two clusters");
  const auto n = static_cast<std::size_t>(z.rows());
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (int l : dense) count[static_cast<std::size_t>(l)] += 1.0;
  const Matrix<double> d = pairwise_distances(z);
  double total = 0.0;
  std::vector<double> sums(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(dense[i]);
    if (count[own] <= 1.0) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) sums[static_cast<std::size_t>(dense[j])] += d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double a = sums[own] / (count[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (c != own) b = std::min(b, sums[c] / count[c]);
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

DaviesBouldin davies_bouldin(const Matrix<double>& z, const std::vector<int>& labels) {
  if (labels.size() != static_cast<std::size_t>(z.rows())) fail(ErrorKind::ShapeMismatch, "one label per row");
  int k = 0;
  const auto dense = dense_labels(labels, k);
  if (k < 2) fail(ErrorKind::ParamError, "Davies-Bouldin needs at least two clusters");
  Matrix<double> centroids = Matrix<double>::Zero(k, z.cols());
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    centroids.row(dense[i]) += z.row(static_cast<Eigen::Index>(i));
    count[static_cast<std::size_t>(dense[i])] += 1.0;
  }
  for (int c = 0; c < k; ++c) centroids.row(c) /= count[static_cast<std::size_t>(c)];
  std::vector<double> spread(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    spread[static_cast<std::size_t>(dense[i])] += (z.row(static_cast<Eigen::Index>(i)) - centroids.row(dense[i])).norm();
  }
  for (int c = 0; c < k; ++c) spread[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
  DaviesBouldin out;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    double worst = 0.0;
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      const double sep = (centroids.row(i) - centroids.row(j)).norm();
      if (sep == 0.0) {
        out.degenerate = true;
        return out;
      }
      worst = std::max(worst, (spread[static_cast<std::size_t>(i)] + spread[static_cast<std::size_t>(j)]) / sep);
    }
    total += worst;
  }
  out.value = total / static_cast<double>(k);
  return out;
}

HierarchyMetrics hierarchy_metrics(const Matrix<double>& z, int k_clusters) {
  if (k_clusters < 2 || z.rows() <= k_clusters) fail(ErrorKind::ParamError, "need n > k >= 2");
  HierarchyMetrics out;
  out.labels = agglomerative_average(z, k_clusters);
  out.sc = silhouette(z, out.labels);
  const auto db = davies_bouldin(z, out.labels);
  out.db = db.value;
  out.degenerate = db.degenerate;
  return out;
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  if (values.empty()) fail(ErrorKind::ParamError, "mean of an empty list");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

int threads_from_env() {
  const char* raw = std::getenv("IMPRESS_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) fail(ErrorKind::ParamError, std::string("IMPRESS_THREADS must be a positive integer, got ") + raw);
  return static_cast<int>(v);
}

void parallel_for(int count, int threads, const std::function<void(int)>& job) {
  const int workers = std::max(1, std::min(threads, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_index = count;
  std::exception_ptr failure;
  const auto run = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        // Report the failure a sequential run would have hit first.
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string EpisodeReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["episodes"] = accuracies.size();
  j["accuracies"] = accuracies;
  j["mean"] = mean;
  j["std"] = std;
  j["std_over"] = "episodes";
  j["diagnostics"] = {{"sigma2", diagnostics.sigma2}, {"delta", diagnostics.delta}, {"ratio", diagnostics.ratio}};
  if (wall_seconds) j["wall_seconds"] = *wall_seconds;
  return j.dump(2) + "\n";
}

EpisodeReport EpisodeReport::from_json(const std::string& text) {
  EpisodeReport r;
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    r.config = j.at("config");
    r.accuracies = j.at("accuracies").get<std::vector<double>>();
    r.mean = j.at("mean").get<double>();
    r.std = j.at("std").get<double>();
    const auto& d = j.at("diagnostics");
    r.diagnostics = {d.at("sigma2").get<double>(), d.at("delta").get<double>(), d.at("ratio").get<double>()};
    if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace impress
