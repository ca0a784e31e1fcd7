#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "impress/tensor.hpp"

namespace impress {

struct ClassSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

enum class SplitKind { Train, Val, Test };

struct Edge {
  std::int64_t src;
  std::int64_t dst;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// An undirected graph with node features, one class label per node and a
/// partition of the class ids into train/val/test.
struct GraphDataset {
  std::string name;
  Matrix<double> features;  // n x d
  std::vector<Edge> edges;  // undirected, src < dst, no duplicates
  std::vector<int> labels;  // length n
  ClassSplit split;
  std::size_t dropped_edges = 0;  // self-loops and duplicates removed at load

  std::size_t n_nodes() const { return labels.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
  const std::vector<int>& classes(SplitKind kind) const;
  std::vector<int> nodes_of_class(int cls) const;
};

/// Checks the structural invariants and throws the matching error.
void validate(const GraphDataset& dataset);

/// Builds an edge list from raw pairs: drops self-loops and duplicate
/// undirected pairs, counting them. Throws RangeError for ids outside [0, n).
std::vector<Edge> canonical_edges(const std::vector<std::pair<std::int64_t, std::int64_t>>& raw, std::size_t n,
                                  std::size_t& dropped);

// Four-file native format.
Matrix<double> read_features(std::istream& in);
std::vector<std::pair<std::int64_t, std::int64_t>> read_edge_pairs(std::istream& in);
std::vector<int> read_labels(std::istream& in, std::size_t n);
ClassSplit read_split(std::istream& in);

GraphDataset load_dataset(const std::filesystem::path& features_path, const std::filesystem::path& edges_path,
                          const std::filesystem::path& labels_path, const std::filesystem::path& split_path);

void write_features(std::ostream& out, const Matrix<double>& features);
void write_edges(std::ostream& out, const std::vector<Edge>& edges);
void write_labels(std::ostream& out, const std::vector<int>& labels);
void write_split(std::ostream& out, const ClassSplit& split);

/// Single-file bundle: the four native sections under `[features]`,
/// `[edges]`, `[labels]` and `[split]` headers.
void save_bundle(const GraphDataset& dataset, const std::filesystem::path& path);
void write_bundle(std::ostream& out, const GraphDataset& dataset);
GraphDataset load_bundle(const std::filesystem::path& path);
GraphDataset read_bundle(std::istream& in);

/// Planetoid raw files: `<name>.content` rows "paper_id feat... label" and
/// `<name>.cites` rows "cited citing". Paper ids are remapped in first-seen
/// order, labels alphabetically. Citations naming unknown papers are dropped
/// and counted in dropped_edges.
GraphDataset load_planetoid(const std::filesystem::path& content_path, const std::filesystem::path& cites_path,
                            const ClassSplit& split, std::string name);

/// Splits class ids 0..C-1 into consecutive train/val/test blocks of the
/// given sizes, in ascending order, or after a seeded shuffle.
ClassSplit split_by_counts(int num_classes, int train, int val, int test, const std::uint64_t* shuffle_seed = nullptr);

/// Largest graph the dense adjacency path accepts.
inline constexpr std::size_t kMaxDenseNodes = 25000;

/// D^{-1/2} (A + I) D^{-1/2}.
template <typename Scalar>
Matrix<Scalar> normalize_adjacency(const GraphDataset& dataset);

/// Dense 0/1 adjacency plus identity, the reconstruction target.
template <typename Scalar>
Matrix<Scalar> adjacency_with_self_loops(const GraphDataset& dataset);

struct TreeOptions {
  int branching = 2;
  int depth = 2;
  int feature_dim = 8;
  double noise = 0.1;
  std::uint64_t seed = 0;
  /// Subtrees rooted at this depth are the classes.
  int class_depth = 1;
};

inline constexpr std::size_t kMaxTreeNodes = 50000;

/// Balanced tree in heap order (children of i are b*i+1 .. b*i+b). Each
/// subtree rooted at `class_depth` is one class; nodes above that depth take
/// the class of their leftmost descendant subtree. Anchors accumulate a
/// Gaussian increment per tree level down to the class roots; every node's
/// feature is its class anchor plus Gaussian noise with standard deviation
/// noise * depth / tree_depth. Classes are dealt round-robin into
/// train/val/test.
GraphDataset generate_tree_dataset(const TreeOptions& options);

struct EpisodeTask {
  int way = 0;
  int shot = 0;
  int query_per_class = 0;
  std::vector<std::pair<std::size_t, int>> support;  // (node id, class index)
  std::vector<std::pair<std::size_t, int>> query;
  std::vector<int> class_ids;  // class_ids[class index] = dataset label
};

/// Uniform class sampling without replacement, then uniform node sampling
/// without replacement inside each class.
EpisodeTask sample_episode(const GraphDataset& dataset, SplitKind split, int way, int shot, int query_per_class,
                           std::uint64_t seed);

}  // namespace impress
