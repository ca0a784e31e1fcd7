#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "impress/graph.hpp"
#include "oracles.hpp"

using namespace impress;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::ParamError;
}

GraphDataset two_nodes() {
  GraphDataset ds;
  ds.features = Matrix<double>::Identity(2, 2);
  ds.edges = {{0, 1}};
  ds.labels = {0, 1};
  ds.split = {{0}, {}, {1}};
  return ds;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "impress_test_graph";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("normalized adjacency of a single edge") {
  const auto a = normalize_adjacency<double>(two_nodes());
  CHECK(a.isApprox(Matrix<double>::Constant(2, 2, 0.5)));
  const auto target = adjacency_with_self_loops<double>(two_nodes());
  CHECK(target == Matrix<double>::Ones(2, 2));
}

TEST_CASE("normalized adjacency matches the dense formula") {
  const auto ds = oracle::random_graph(12, 4, 0.3, 8);
  Matrix<double> a = Matrix<double>::Identity(12, 12);
  for (const auto& e : ds.edges) a(e.src, e.dst) = a(e.dst, e.src) = 1.0;
  const Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
  const Matrix<double> expected = inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
  CHECK((normalize_adjacency<double>(ds) - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("edge canonicalisation drops self-loops and duplicates") {
  std::size_t dropped = 0;
  const auto edges = canonical_edges({{0, 1}, {1, 0}, {2, 2}, {2, 1}}, 3, dropped);
  CHECK(dropped == 2);
  REQUIRE(edges.size() == 2);
  CHECK(edges[0] == Edge{0, 1});
  CHECK(edges[1] == Edge{1, 2});
  CHECK(kind_of([] {
          std::size_t d = 0;
          canonical_edges({{0, 3}}, 3, d);
        }) == ErrorKind::RangeError);
}

TEST_CASE("native readers") {
  std::istringstream feats("# comment\n2 3\n1 2 3\n4 5 6\n");
  const auto f = read_features(feats);
  CHECK(f.rows() == 2);
  CHECK(f(1, 2) == 6.0);
  std::istringstream bad("2 3\n1 2 3\n");
  CHECK(kind_of([&] { read_features(bad); }) == ErrorKind::ParseError);
  std::istringstream labels("0 1\n1 0\n");
  CHECK(read_labels(labels, 2) == std::vector<int>{1, 0});
  std::istringstream missing("0 1\n");
  CHECK(kind_of([&] { read_labels(missing, 2); }) == ErrorKind::ParseError);
  std::istringstream split("# classes\ntrain: 0, 1, 2\nval: 3, 4\ntest: 5, 6\n");
  const auto s = read_split(split);
  CHECK(s.train == std::vector<int>{0, 1, 2});
  CHECK(s.test == std::vector<int>{5, 6});
  std::istringstream overlap("train: 0\nval: 0\ntest: 1\n");
  CHECK(kind_of([&] { read_split(overlap); }) == ErrorKind::SplitError);
}

TEST_CASE("validation catches broken invariants") {
  auto ds = two_nodes();
  CHECK_NOTHROW(validate(ds));
  ds.labels.push_back(0);
  CHECK(kind_of([&] { validate(ds); }) == ErrorKind::ShapeMismatch);
  ds = two_nodes();
  ds.split.test.clear();
  CHECK(kind_of([&] { validate(ds); }) == ErrorKind::SplitError);
  ds = two_nodes();
  ds.edges = {{0, 5}};
  CHECK(kind_of([&] { validate(ds); }) == ErrorKind::RangeError);
}

TEST_CASE("bundle round trip") {
  const auto ds = oracle::random_graph(9, 3, 0.4, 2);
  std::stringstream buf;
  write_bundle(buf, ds);
  const auto back = read_bundle(buf);
  CHECK(back.features == ds.features);
  CHECK(back.edges == ds.edges);
  CHECK(back.labels == ds.labels);
  CHECK(back.split.train == ds.split.train);
  CHECK(back.split.val == ds.split.val);
  CHECK(back.split.test == ds.split.test);
  std::istringstream nohdr("[features]\n1 1\n0\n");
  CHECK(kind_of([&] { read_bundle(nohdr); }) == ErrorKind::FormatError);
  CHECK(kind_of([] { load_bundle("/nonexistent/impress.bundle"); }) == ErrorKind::IoError);
}

TEST_CASE("planetoid loader") {
  const auto content = scratch("toy.content");
  const auto cites = scratch("toy.cites");
  {
    std::ofstream c(content);
    c << "p10 1 0 Theory\np20 0 1 Neural\np30 1 1 Theory\n";
    std::ofstream e(cites);
    e << "p10 p20\np20 p30\np30 p99\np20 p10\n";
  }
  const auto ds = load_planetoid(content, cites, {{0}, {}, {1}}, "toy");
  CHECK(ds.n_nodes() == 3);
  CHECK(ds.feature_dim() == 2);
  // Labels are numbered alphabetically.
  CHECK(ds.labels == std::vector<int>{1, 0, 1});
  CHECK(ds.edges.size() == 2);
  CHECK(ds.dropped_edges == 2);
}

TEST_CASE("split_by_counts") {
  const auto s = split_by_counts(7, 3, 2, 2);
  CHECK(s.train == std::vector<int>{0, 1, 2});
  CHECK(s.val == std::vector<int>{3, 4});
  CHECK(s.test == std::vector<int>{5, 6});
  const std::uint64_t seed = 4;
  const auto shuffled = split_by_counts(7, 3, 2, 2, &seed);
  std::set<int> all(shuffled.train.begin(), shuffled.train.end());
  all.insert(shuffled.val.begin(), shuffled.val.end());
  all.insert(shuffled.test.begin(), shuffled.test.end());
  CHECK(all.size() == 7);
  CHECK(kind_of([] { split_by_counts(7, 3, 2, 1); }) == ErrorKind::SplitError);
}

TEST_CASE("tree generator") {
  TreeOptions opts;
  opts.branching = 2;
  opts.depth = 2;
  opts.feature_dim = 8;
  opts.noise = 0.1;
  opts.seed = 3;
  const auto ds = generate_tree_dataset(opts);
  CHECK(ds.n_nodes() == 7);
  CHECK(ds.edges.size() == 6);
  CHECK_NOTHROW(validate(ds));
  for (std::size_t i = 1; i < 7; ++i) {
    const auto parent = static_cast<std::int64_t>((i - 1) / 2);
    CHECK(std::find(ds.edges.begin(), ds.edges.end(), Edge{parent, static_cast<std::int64_t>(i)}) != ds.edges.end());
  }
  // Heap order: subtree of node 1 is {1, 3, 4}, of node 2 is {2, 5, 6}.
  CHECK(ds.labels[3] == ds.labels[1]);
  CHECK(ds.labels[6] == ds.labels[2]);
  CHECK(ds.labels[1] != ds.labels[2]);
  const auto again = generate_tree_dataset(opts);
  CHECK(again.features == ds.features);

  opts.depth = 1;
  CHECK(kind_of([&] { generate_tree_dataset(opts); }) == ErrorKind::ParamError);
  opts.depth = 2;
  opts.class_depth = 3;
  CHECK(kind_of([&] { generate_tree_dataset(opts); }) == ErrorKind::ParamError);
}

TEST_CASE("deeper class roots give more classes") {
  TreeOptions opts;
  opts.branching = 3;
  opts.depth = 5;
  opts.feature_dim = 8;
  opts.class_depth = 2;
  const auto ds = generate_tree_dataset(opts);
  CHECK(ds.n_nodes() == 364);
  CHECK(std::set<int>(ds.labels.begin(), ds.labels.end()).size() == 9);
  CHECK(ds.split.test.size() >= 2);
}

TEST_CASE("episode sampling") {
  TreeOptions opts;
  opts.branching = 3;
  opts.depth = 4;
  opts.class_depth = 2;
  const auto ds = generate_tree_dataset(opts);
  const auto task = sample_episode(ds, SplitKind::Train, 2, 3, 4, 11);
  CHECK(task.support.size() == 6);
  CHECK(task.query.size() == 8);
  std::set<std::size_t> used;
  for (const auto& [node, ci] : task.support) {
    CHECK(ds.labels[node] == task.class_ids[static_cast<std::size_t>(ci)]);
    used.insert(node);
  }
  for (const auto& [node, ci] : task.query) {
    CHECK(ds.labels[node] == task.class_ids[static_cast<std::size_t>(ci)]);
    used.insert(node);
  }
  CHECK(used.size() == 14);
  const auto same = sample_episode(ds, SplitKind::Train, 2, 3, 4, 11);
  CHECK(same.support == task.support);
  CHECK(same.query == task.query);
  CHECK(kind_of([&] { sample_episode(ds, SplitKind::Train, 50, 1, 1, 1); }) == ErrorKind::EpisodeInfeasible);
  CHECK(kind_of([&] { sample_episode(ds, SplitKind::Train, 2, 1000, 1, 1); }) == ErrorKind::EpisodeInfeasible);
  CHECK(kind_of([&] { sample_episode(ds, SplitKind::Train, 1, 1, 1, 1); }) == ErrorKind::ParamError);
}
