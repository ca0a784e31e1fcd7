#include "impress/graph.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace impress {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Strips '#' comments and surrounding whitespace.
std::string content_of(const std::string& line) {
  const auto hash = line.find('#');
  return trim(hash == std::string::npos ? line : line.substr(0, hash));
}

std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + what);
}

std::int64_t parse_int(const std::string& tok, std::size_t line_no) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) parse_fail(line_no, "expected an integer, got '" + tok + "'");
  return v;
}

double parse_double(const std::string& tok, std::size_t line_no) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || errno == ERANGE || !std::isfinite(v)) {
    parse_fail(line_no, "expected a finite number, got '" + tok + "'");
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  return in;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_disjoint(const ClassSplit& split) {
  std::set<int> seen;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (int c : *part) {
      if (!seen.insert(c).second) fail(ErrorKind::SplitError, "class " + std::to_string(c) + " appears in two splits");
    }
  }
}

}  // namespace

const std::vector<int>& GraphDataset::classes(SplitKind kind) const {
  switch (kind) {
    case SplitKind::Train: return split.train;
    case SplitKind::Val: return split.val;
    case SplitKind::Test: return split.test;
  }
  return split.test;
}

std::vector<int> GraphDataset::nodes_of_class(int cls) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cls) out.push_back(static_cast<int>(i));
  }
  return out;
}

void validate(const GraphDataset& dataset) {
  const std::size_t n = dataset.n_nodes();
  if (static_cast<std::size_t>(dataset.features.rows()) != n) {
    fail(ErrorKind::ShapeMismatch, "feature rows (" + std::to_string(dataset.features.rows()) + ") != node count (" +
                                       std::to_string(n) + ")");
  }
  if (!dataset.features.allFinite()) fail(ErrorKind::NonFinite, "non-finite node feature");
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (const Edge& e : dataset.edges) {
    if (e.src < 0 || e.dst < 0 || e.src >= static_cast<std::int64_t>(n) || e.dst >= static_cast<std::int64_t>(n)) {
      fail(ErrorKind::RangeError, "edge endpoint out of range");
    }
    if (e.src == e.dst) fail(ErrorKind::ParseError, "self-loop stored in edge list");
    if (!seen.insert({std::min(e.src, e.dst), std::max(e.src, e.dst)}).second) {
      fail(ErrorKind::ParseError, "duplicate undirected edge stored");
    }
  }
  check_disjoint(dataset.split);
  std::set<int> assigned;
  for (const auto* part : {&dataset.split.train, &dataset.split.val, &dataset.split.test}) {
    assigned.insert(part->begin(), part->end());
  }
  for (int label : dataset.labels) {
    if (!assigned.count(label)) fail(ErrorKind::SplitError, "class " + std::to_string(label) + " is in no split");
  }
}

std::vector<Edge> canonical_edges(const std::vector<std::pair<std::int64_t, std::int64_t>>& raw, std::size_t n,
                                  std::size_t& dropped) {
  std::vector<Edge> edges;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  dropped = 0;
  for (const auto& [a, b] : raw) {
    if (a < 0 || b < 0 || a >= static_cast<std::int64_t>(n) || b >= static_cast<std::int64_t>(n)) {
      fail(ErrorKind::RangeError, "edge (" + std::to_string(a) + "," + std::to_string(b) + ") outside [0," +
                                      std::to_string(n) + ")");
    }
    if (a == b) {
      ++dropped;
      continue;
    }
    const std::pair<std::int64_t, std::int64_t> key{std::min(a, b), std::max(a, b)};
    if (!seen.insert(key).second) {
      ++dropped;
      continue;
    }
    edges.push_back({key.first, key.second});
  }
  return edges;
}

Matrix<double> read_features(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  bool have_header = false;
  Matrix<double> features;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = content_of(line);
    if (body.empty()) continue;
    const auto toks = tokens(body);
    if (!have_header) {
      if (toks.size() != 2) parse_fail(line_no, "feature header must be 'n d'");
      const auto nn = parse_int(toks[0], line_no);
      const auto dd = parse_int(toks[1], line_no);
      if (nn < 1 || dd < 1) parse_fail(line_no, "feature header needs n >= 1 and d >= 1");
      n = static_cast<std::size_t>(nn);
      d = static_cast<std::size_t>(dd);
      features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
      have_header = true;
      continue;
    }
    if (row >= n) parse_fail(line_no, "more feature rows than declared");
    if (toks.size() != d) parse_fail(line_no, "expected " + std::to_string(d) + " values");
    for (std::size_t j = 0; j < d; ++j) {
      features(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = parse_double(toks[j], line_no);
    }
    ++row;
  }
  if (!have_header) fail(ErrorKind::ParseError, "empty feature file");
  if (row != n) fail(ErrorKind::ParseError, "expected " + std::to_string(n) + " feature rows, got " + std::to_string(row));
  return features;
}

std::vector<std::pair<std::int64_t, std::int64_t>> read_edge_pairs(std::istream& in) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = content_of(line);
    if (body.empty()) continue;
    const auto toks = tokens(body);
    if (toks.size() != 2) parse_fail(line_no, "edge line must be 'src dst'");
    out.emplace_back(parse_int(toks[0], line_no), parse_int(toks[1], line_no));
  }
  return out;
}

std::vector<int> read_labels(std::istream& in, std::size_t n) {
  std::vector<int> labels(n, -1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = content_of(line);
    if (body.empty()) continue;
    const auto toks = tokens(body);
    if (toks.size() != 2) parse_fail(line_no, "label line must be 'node_id class_id'");
    const auto node = parse_int(toks[0], line_no);
    const auto cls = parse_int(toks[1], line_no);
    if (node < 0 || node >= static_cast<std::int64_t>(n)) {
      fail(ErrorKind::RangeError, "label line " + std::to_string(line_no) + ": node " + std::to_string(node));
    }
    if (cls < 0) parse_fail(line_no, "class ids must be non-negative");
    if (labels[static_cast<std::size_t>(node)] != -1) parse_fail(line_no, "node labelled twice");
    labels[static_cast<std::size_t>(node)] = static_cast<int>(cls);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) fail(ErrorKind::ParseError, "node " + std::to_string(i) + " has no label");
  }
  return labels;
}

ClassSplit read_split(std::istream& in) {
  ClassSplit split;
  bool seen[3] = {false, false, false};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = content_of(line);
    if (body.empty()) continue;
    const auto colon = body.find(':');
    if (colon == std::string::npos) parse_fail(line_no, "split line must be '<train|val|test>: ids'");
    const std::string key = trim(body.substr(0, colon));
    std::vector<int>* target = nullptr;
    int slot = 0;
    if (key == "train") {
      target = &split.train;
      slot = 0;
    } else if (key == "val") {
      target = &split.val;
      slot = 1;
    } else if (key == "test") {
      target = &split.test;
      slot = 2;
    } else {
      parse_fail(line_no, "unknown split '" + key + "'");
    }
    if (seen[slot]) parse_fail(line_no, "split '" + key + "' given twice");
    seen[slot] = true;
    std::string rest = body.substr(colon + 1);
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto v = parse_int(item, line_no);
      if (v < 0) parse_fail(line_no, "class ids must be non-negative");
      target->push_back(static_cast<int>(v));
    }
  }
  if (!(seen[0] && seen[1] && seen[2])) fail(ErrorKind::ParseError, "split file needs train, val and test lines");
  check_disjoint(split);
  return split;
}

GraphDataset load_dataset(const std::filesystem::path& features_path, const std::filesystem::path& edges_path,
                          const std::filesystem::path& labels_path, const std::filesystem::path& split_path) {
  GraphDataset ds;
  ds.name = features_path.stem().string();
  {
    auto in = open_input(features_path);
    ds.features = read_features(in);
  }
  const std::size_t n = static_cast<std::size_t>(ds.features.rows());
  {
    auto in = open_input(edges_path);
    ds.edges = canonical_edges(read_edge_pairs(in), n, ds.dropped_edges);
  }
  {
    auto in = open_input(labels_path);
    ds.labels = read_labels(in, n);
  }
  {
    auto in = open_input(split_path);
    ds.split = read_split(in);
  }
  validate(ds);
  return ds;
}

void write_features(std::ostream& out, const Matrix<double>& features) {
  out << features.rows() << ' ' << features.cols() << '\n';
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(features(i, j));
    }
    out << '\n';
  }
}

void write_edges(std::ostream& out, const std::vector<Edge>& edges) {
  for (const Edge& e : edges) out << e.src << ' ' << e.dst << '\n';
}

void write_labels(std::ostream& out, const std::vector<int>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ' ' << labels[i] << '\n';
}

void write_split(std::ostream& out, const ClassSplit& split) {
  const auto line = [&out](const char* key, const std::vector<int>& ids) {
    out << key << ':';
    for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? "," : " ") << ids[i];
    out << '\n';
  };
  line("train", split.train);
  line("val", split.val);
  line("test", split.test);
}

void write_bundle(std::ostream& out, const GraphDataset& dataset) {
  out << "# impress-dataset 1\n";
  out << "# name " << dataset.name << '\n';
  out << "[features]\n";
  write_features(out, dataset.features);
  out << "[edges]\n";
  write_edges(out, dataset.edges);
  out << "[labels]\n";
  write_labels(out, dataset.labels);
  out << "[split]\n";
  write_split(out, dataset.split);
}

void save_bundle(const GraphDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  write_bundle(out, dataset);
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

GraphDataset read_bundle(std::istream& in) {
  std::map<std::string, std::string> sections;
  std::string name = "dataset";
  std::string current;
  std::string line;
  bool versioned = false;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.rfind("# impress-dataset", 0) == 0) {
      if (trim(t.substr(17)) != "1") fail(ErrorKind::VersionError, "unsupported dataset bundle version");
      versioned = true;
      continue;
    }
    if (t.rfind("# name ", 0) == 0) {
      name = trim(t.substr(7));
      continue;
    }
    if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
      current = t.substr(1, t.size() - 2);
      if (sections.count(current)) fail(ErrorKind::ParseError, "duplicate section [" + current + "]");
      sections[current];
      continue;
    }
    if (current.empty()) {
      if (content_of(t).empty()) continue;
      fail(ErrorKind::ParseError, "content before the first section");
    }
    sections[current] += line;
    sections[current] += '\n';
  }
  if (!versioned) fail(ErrorKind::FormatError, "missing '# impress-dataset' header");
  for (const char* key : {"features", "edges", "labels", "split"}) {
    if (!sections.count(key)) fail(ErrorKind::FormatError, std::string("missing section [") + key + "]");
  }
  GraphDataset ds;
  ds.name = name;
  {
    std::istringstream s(sections["features"]);
    ds.features = read_features(s);
  }
  const std::size_t n = static_cast<std::size_t>(ds.features.rows());
  {
    std::istringstream s(sections["edges"]);
    ds.edges = canonical_edges(read_edge_pairs(s), n, ds.dropped_edges);
  }
  {
    std::istringstream s(sections["labels"]);
    ds.labels = read_labels(s, n);
  }
  {
    std::istringstream s(sections["split"]);
    ds.split = read_split(s);
  }
  validate(ds);
  return ds;
}

GraphDataset load_bundle(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_bundle(in);
}

GraphDataset load_planetoid(const std::filesystem::path& content_path, const std::filesystem::path& cites_path,
                            const ClassSplit& split, std::string name) {
  std::unordered_map<std::string, std::int64_t> ids;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  {
    auto in = open_input(content_path);
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto toks = tokens(line);
      if (toks.empty()) continue;
      if (toks.size() < 3) parse_fail(line_no, "content row needs an id, features and a label");
      if (width == 0) width = toks.size();
      if (toks.size() != width) parse_fail(line_no, "inconsistent feature count");
      if (!ids.emplace(toks.front(), static_cast<std::int64_t>(rows.size())).second) {
        parse_fail(line_no, "duplicate paper id '" + toks.front() + "'");
      }
      std::vector<double> feats;
      feats.reserve(width - 2);
      for (std::size_t j = 1; j + 1 < toks.size(); ++j) feats.push_back(parse_double(toks[j], line_no));
      rows.push_back(std::move(feats));
      raw_labels.push_back(toks.back());
    }
  }
  if (rows.empty()) fail(ErrorKind::ParseError, "empty content file");
  GraphDataset ds;
  ds.name = std::move(name);
  const std::size_t n = rows.size();
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  std::set<std::string> label_names(raw_labels.begin(), raw_labels.end());
  std::map<std::string, int> label_ids;
  for (const auto& l : label_names) label_ids.emplace(l, static_cast<int>(label_ids.size()));
  ds.labels.reserve(n);
  for (const auto& l : raw_labels) ds.labels.push_back(label_ids.at(l));

  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  std::size_t unknown = 0;
  {
    auto in = open_input(cites_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto toks = tokens(line);
      if (toks.empty()) continue;
      if (toks.size() != 2) parse_fail(line_no, "cites row must be 'cited citing'");
      const auto a = ids.find(toks[0]);
      const auto b = ids.find(toks[1]);
      if (a == ids.end() || b == ids.end()) {
        ++unknown;
        continue;
      }
      pairs.emplace_back(a->second, b->second);
    }
  }
  ds.edges = canonical_edges(pairs, n, ds.dropped_edges);
  ds.dropped_edges += unknown;
  ds.split = split;
  validate(ds);
  return ds;
}

ClassSplit split_by_counts(int num_classes, int train, int val, int test, const std::uint64_t* shuffle_seed) {
  if (train < 0 || val < 0 || test < 0 || train + val + test != num_classes) {
    fail(ErrorKind::SplitError, "split counts must be non-negative and sum to the class count (" +
                                    std::to_string(num_classes) + ")");
  }
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order);
  }
  ClassSplit split;
  split.train.assign(order.begin(), order.begin() + train);
  split.val.assign(order.begin() + train, order.begin() + train + val);
  split.test.assign(order.begin() + train + val, order.end());
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

template <typename Scalar>
Matrix<Scalar> adjacency_with_self_loops(const GraphDataset& dataset) {
  const std::size_t n = dataset.n_nodes();
  if (n > kMaxDenseNodes) {
    fail(ErrorKind::SizeError, std::to_string(n) + " nodes exceeds the dense limit of " + std::to_string(kMaxDenseNodes));
  }
  Matrix<Scalar> a = Matrix<Scalar>::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const Edge& e : dataset.edges) {
    a(e.src, e.dst) = Scalar(1);
    a(e.dst, e.src) = Scalar(1);
  }
  return a;
}

template <typename Scalar>
Matrix<Scalar> normalize_adjacency(const GraphDataset& dataset) {
  Matrix<double> a = adjacency_with_self_loops<double>(dataset);
  const Vector<double> inv_sqrt_degree = a.rowwise().sum().array().rsqrt().matrix();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) != 0.0) a(i, j) *= inv_sqrt_degree(i) * inv_sqrt_degree(j);
    }
  }
  return a.cast<Scalar>();
}

template Matrix<float> adjacency_with_self_loops<float>(const GraphDataset&);
template Matrix<double> adjacency_with_self_loops<double>(const GraphDataset&);
template Matrix<float> normalize_adjacency<float>(const GraphDataset&);
template Matrix<double> normalize_adjacency<double>(const GraphDataset&);

GraphDataset generate_tree_dataset(const TreeOptions& options) {
  const int b = options.branching;
  const int h = options.depth;
  if (b < 2 || h < 2 || options.feature_dim < 4) {
    fail(ErrorKind::ParamError, "tree generator needs branching >= 2, depth >= 2, feature_dim >= 4");
  }
  if (options.class_depth < 1 || options.class_depth > h) fail(ErrorKind::ParamError, "class_depth must be in [1, depth]");
  if (!(options.noise >= 0.0)) fail(ErrorKind::ParamError, "noise must be non-negative");
  // (b^{h+1} - 1) / (b - 1), computed with an overflow-safe running sum.
  std::size_t n = 0;
  std::size_t level = 1;
  std::vector<std::size_t> level_start;
  for (int depth = 0; depth <= h; ++depth) {
    level_start.push_back(n);
    n += level;
    if (n > kMaxTreeNodes) {
      fail(ErrorKind::SizeError, "tree with branching " + std::to_string(b) + " and depth " + std::to_string(h) +
                                     " exceeds " + std::to_string(kMaxTreeNodes) + " nodes");
    }
    level *= static_cast<std::size_t>(b);
  }
  const std::size_t ub = static_cast<std::size_t>(b);
  std::vector<int> depth_of(n, 0);
  std::vector<std::size_t> parent(n, 0);
  for (std::size_t i = 1; i < n; ++i) {
    parent[i] = (i - 1) / ub;
    depth_of[i] = depth_of[parent[i]] + 1;
  }

  GraphDataset ds;
  ds.name = "tree_b" + std::to_string(b) + "_h" + std::to_string(h);
  for (std::size_t i = 1; i < n; ++i) {
    ds.edges.push_back({static_cast<std::int64_t>(parent[i]), static_cast<std::int64_t>(i)});
  }

  const int cd = options.class_depth;
  ds.labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t node = i;
    if (depth_of[i] < cd) {
      while (depth_of[node] < cd) node = node * ub + 1;
    } else {
      while (depth_of[node] > cd) node = parent[node];
    }
    ds.labels[i] = static_cast<int>(node - level_start[static_cast<std::size_t>(cd)]);
  }

  const auto d = static_cast<Eigen::Index>(options.feature_dim);
  Rng rng(options.seed);
  // Anchors for every node down to the class depth, in heap order.
  const std::size_t ucd = static_cast<std::size_t>(cd);
  const std::size_t anchored = cd < h ? level_start[ucd + 1] : n;
  Matrix<double> anchors = Matrix<double>::Zero(static_cast<Eigen::Index>(anchored), d);
  constexpr double kAnchorStep = 0.5;
  for (std::size_t i = 1; i < anchored; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      anchors(static_cast<Eigen::Index>(i), j) = anchors(static_cast<Eigen::Index>(parent[i]), j) + kAnchorStep * rng.normal();
    }
  }
  ds.features.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t class_root = level_start[ucd] + static_cast<std::size_t>(ds.labels[i]);
    const double sd = options.noise * static_cast<double>(depth_of[i]) / static_cast<double>(h);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double noise = rng.normal();
      ds.features(static_cast<Eigen::Index>(i), j) = anchors(static_cast<Eigen::Index>(class_root), j) + sd * noise;
    }
  }

  int num_classes = 1;
  for (int k = 0; k < cd; ++k) num_classes *= b;
  for (int c = 0; c < num_classes; ++c) {
    switch (c % 3) {
      case 0: ds.split.train.push_back(c); break;
      case 1: ds.split.val.push_back(c); break;
      default: ds.split.test.push_back(c); break;
    }
  }
  validate(ds);
  return ds;
}

EpisodeTask sample_episode(const GraphDataset& dataset, SplitKind split, int way, int shot, int query_per_class,
                           std::uint64_t seed) {
  if (way < 2 || shot < 1 || query_per_class < 1) {
    fail(ErrorKind::ParamError, "episodes need way >= 2, shot >= 1, query >= 1");
  }
  std::vector<int> pool = dataset.classes(split);
  std::sort(pool.begin(), pool.end());
  if (pool.size() < static_cast<std::size_t>(way)) {
    fail(ErrorKind::EpisodeInfeasible, std::to_string(way) + "-way task but the split has " +
                                           std::to_string(pool.size()) + " classes");
  }
  Rng rng(seed);
  // Partial Fisher-Yates: the first `way` slots are the sample.
  for (std::size_t i = 0; i < static_cast<std::size_t>(way); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  EpisodeTask task;
  task.way = way;
  task.shot = shot;
  task.query_per_class = query_per_class;
  task.class_ids.assign(pool.begin(), pool.begin() + way);
  for (int ci = 0; ci < way; ++ci) {
    std::vector<int> members = dataset.nodes_of_class(task.class_ids[static_cast<std::size_t>(ci)]);
    const std::size_t need = static_cast<std::size_t>(shot + query_per_class);
    if (members.size() < need) {
      fail(ErrorKind::EpisodeInfeasible, "class " + std::to_string(task.class_ids[static_cast<std::size_t>(ci)]) +
                                             " has " + std::to_string(members.size()) + " nodes, need " +
                                             std::to_string(need));
    }
    for (std::size_t i = 0; i < need; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(members.size() - i));
      std::swap(members[i], members[j]);
    }
    for (std::size_t i = 0; i < need; ++i) {
      auto& target = i < static_cast<std::size_t>(shot) ? task.support : task.query;
      target.emplace_back(static_cast<std::size_t>(members[i]), ci);
    }
  }
  return task;
}

}  // namespace impress
