#include "impress/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "impress/checkpoint.hpp"
#include "impress/fewshot.hpp"
#include "impress/graph.hpp"
#include "suites.hpp"

namespace impress::cli {

namespace {

using Json = nlohmann::ordered_json;

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::ParamError, what);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorKind::IoError, "write failed for " + path);
}

std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Json checkpoint_config(const Checkpoint& ck) {
  Json j = Json::object();
  for (const auto& [k, v] : ck.config) j[k] = v;
  return j;
}

std::vector<int> split_classes(const GraphDataset& ds, const std::string& split) {
  if (split == "train") return ds.split.train;
  if (split == "val") return ds.split.val;
  if (split == "test") return ds.split.test;
  std::vector<int> all = ds.split.train;
  all.insert(all.end(), ds.split.val.begin(), ds.split.val.end());
  all.insert(all.end(), ds.split.test.begin(), ds.split.test.end());
  return all;
}

std::vector<std::size_t> nodes_in(const GraphDataset& ds, const std::vector<int>& classes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
    if (std::find(classes.begin(), classes.end(), ds.labels[i]) != classes.end()) out.push_back(i);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> select_rows(const Matrix<Scalar>& m, const std::vector<std::size_t>& rows) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

struct Context {
  RunConfig config;
  std::string command;
  std::ostream& out;
};

template <typename Scalar>
void train_vgae_command(const Context& ctx) {
  const auto& c = ctx.config;
  const GraphDataset ds = load_bundle(c.dataset);
  VgaeConfig vc;
  vc.curvature = c.curvature;
  vc.hidden = c.hidden;
  vc.latent = c.latent;
  vc.layers = c.layers;
  vc.epochs = c.vgae_epochs;
  vc.lr = c.vgae_lr;
  vc.seed = c.seed;
  const auto result = train_vgae<Scalar>(ds, vc);
  Checkpoint ck = vgae_checkpoint(result.model);
  ck.set("command", ctx.command);
  ck.set("dataset", ds.name);
  ck.set("epochs", std::to_string(c.vgae_epochs));
  ck.set("lr", format_double(c.vgae_lr));
  ck.set("seed", std::to_string(c.seed));
  ck.set("precision", precision_name(c.precision));
  ck.set("final_loss", format_double(result.losses.back()));
  save_checkpoint(ck, c.out);
  ctx.out << "trained vgae on " << ds.n_nodes() << " nodes: loss " << result.losses.front() << " -> "
          << result.losses.back() << ", wrote " << c.out << "\n";
}

template <typename Scalar>
void train_diffusion_command(const Context& ctx) {
  const auto& c = ctx.config;
  const GraphDataset ds = load_bundle(c.dataset);
  const auto vgae = vgae_from_checkpoint<Scalar>(load_checkpoint(c.vgae_path));
  const Matrix<Scalar> all = embed_all(vgae, ds);
  const auto rows = nodes_in(ds, split_classes(ds, c.nodes));
  require(!rows.empty(), "no nodes in the '" + c.nodes + "' classes");
  const Matrix<Scalar> z = select_rows(all, rows);
  const ClusterAssignment clusters = cluster_pseudo_labels(z, c.eps, c.min_pts);
  if (clusters.num_clusters == 0) {
    fail(ErrorKind::ParamError, "DBSCAN found no cluster (eps " + format_double(clusters.eps) +
                                    "); lower --min-pts or pass a larger --eps");
  }
  const auto protos = compute_prototypes(z, clusters.labels, PrototypeSource::Pseudo);
  DiffusionConfig dc;
  dc.steps = c.steps;
  dc.beta_start = c.beta_start;
  dc.beta_end = c.beta_end;
  dc.epochs = c.diffusion_epochs;
  dc.batch = c.batch;
  dc.lr = c.diffusion_lr;
  dc.width = c.width;
  dc.seed = c.seed;
  const auto result = train_diffusion(z, clusters.labels, protos, dc);
  Checkpoint ck = diffusion_checkpoint(result.model);
  ck.set("command", ctx.command);
  ck.set("dataset", ds.name);
  ck.set("nodes", c.nodes);
  ck.set("eps", format_double(clusters.eps));
  ck.set("min_pts", std::to_string(c.min_pts));
  ck.set("clusters", std::to_string(clusters.num_clusters));
  ck.set("epochs", std::to_string(c.diffusion_epochs));
  ck.set("batch", std::to_string(c.batch));
  ck.set("lr", format_double(c.diffusion_lr));
  ck.set("seed", std::to_string(c.seed));
  ck.set("precision", precision_name(c.precision));
  ck.set("final_loss", format_double(result.losses.back()));
  save_checkpoint(ck, c.out);
  std::size_t noise = 0;
  for (int l : clusters.labels) noise += l == kNoise ? 1 : 0;
  ctx.out << "DBSCAN eps " << clusters.eps << ": " << clusters.num_clusters << " clusters, " << noise
          << " noise points; diffusion loss " << result.losses.front() << " -> " << result.losses.back() << ", wrote "
          << c.out << "\n";
}

template <typename Scalar>
void eval_command(const Context& ctx) {
  const auto& c = ctx.config;
  const auto started = std::chrono::steady_clock::now();
  const GraphDataset ds = load_bundle(c.dataset);
  const Checkpoint vck = load_checkpoint(c.vgae_path);
  const auto vgae = vgae_from_checkpoint<Scalar>(vck);
  std::optional<DiffusionModel<Scalar>> dm;
  Json diffusion_echo = nullptr;
  if (c.generated > 0) {
    require(!c.diffusion_path.empty(), "--d-gen > 0 needs --diffusion");
    const Checkpoint dck = load_checkpoint(c.diffusion_path);
    dm = diffusion_from_checkpoint<Scalar>(dck);
    diffusion_echo = checkpoint_config(dck);
  }
  BenchmarkOptions bo;
  bo.way = c.way;
  bo.shot = c.shot;
  bo.query = c.query;
  bo.episodes = c.episodes;
  bo.master_seed = c.seed;
  bo.threads = c.threads;
  bo.episode.generated = c.generated;
  bo.episode.classifier = {c.classifier_epochs, c.classifier_lr, c.classifier_l2, 0};
  EpisodeReport report = run_benchmark(embed_all(vgae, ds), dm ? &*dm : nullptr, vgae.ball(), ds, bo);
  report.config = Json{{"command", ctx.command},
                       {"dataset", c.dataset},
                       {"vgae", c.vgae_path},
                       {"diffusion", c.generated > 0 ? Json(c.diffusion_path) : Json(nullptr)},
                       {"precision", precision_name(c.precision)},
                       {"n_way", c.way},
                       {"m_shot", c.shot},
                       {"q_query", c.query},
                       {"d_gen", c.generated},
                       {"episodes", c.episodes},
                       {"seed", c.seed},
                       {"episode_seed", "derive_seed(seed, i)"},
                       {"classifier", {{"epochs", c.classifier_epochs}, {"lr", c.classifier_lr}, {"l2", c.classifier_l2}}},
                       {"vgae_config", checkpoint_config(vck)},
                       {"diffusion_config", diffusion_echo}};
  if (c.timing) report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_text(c.report, report.to_json());
  ctx.out << std::fixed << std::setprecision(4) << c.way << "-way " << c.shot << "-shot, D=" << c.generated << ", "
          << c.episodes << " episodes: accuracy " << report.mean << " +- " << report.std << " (wrote " << c.report << ")\n";
}

template <typename Scalar>
void metrics_command(const Context& ctx) {
  const auto& c = ctx.config;
  const GraphDataset ds = load_bundle(c.dataset);
  const Checkpoint vck = load_checkpoint(c.vgae_path);
  const auto vgae = vgae_from_checkpoint<Scalar>(vck);
  const auto classes = split_classes(ds, c.split);
  const auto rows = nodes_in(ds, classes);
  const int k = c.k_clusters > 0 ? c.k_clusters : static_cast<int>(classes.size());
  const Matrix<double> z = select_rows(embed_all(vgae, ds), rows).template cast<double>();
  const HierarchyMetrics hm = hierarchy_metrics(z, k);

  std::vector<int> labels;
  for (auto r : rows) {
    labels.push_back(static_cast<int>(std::find(classes.begin(), classes.end(), ds.labels[r]) - classes.begin()));
  }
  Json diag = nullptr;
  if (classes.size() >= 2) {
    const auto protos = class_prototypes(z, labels, static_cast<int>(classes.size()));
    const auto d = latent_bound_diagnostics(z, labels, protos.prototypes, vgae.ball());
    diag = {{"sigma2", d.sigma2}, {"delta", d.delta}, {"ratio", d.ratio}};
  }
  Json j = {{"config",
             {{"command", ctx.command},
              {"dataset", c.dataset},
              {"vgae", c.vgae_path},
              {"split", c.split},
              {"k_clusters", k},
              {"precision", precision_name(c.precision)},
              {"vgae_config", checkpoint_config(vck)}}},
            {"nodes", rows.size()},
            {"sc", hm.sc},
            {"db", hm.db},
            {"db_degenerate", hm.degenerate},
            {"diagnostics", diag}};
  if (!c.report.empty()) write_text(c.report, j.dump(2) + "\n");
  ctx.out << std::fixed << std::setprecision(4) << "SC " << hm.sc << " DB " << hm.db
          << (hm.degenerate ? " (degenerate)" : "") << " over " << rows.size() << " nodes, k=" << k << "\n";
}

template <typename Fn32, typename Fn64>
void by_precision(Precision p, Fn32 f32, Fn64 f64) {
  if (p == Precision::F32) {
    f32();
  } else {
    f64();
  }
}

std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::ParamError, "--split-counts expects three integers like 3,2,2");
    }
  }
  if (out.size() != 3) fail(ErrorKind::ParamError, "--split-counts expects three integers like 3,2,2");
  return out;
}

int selftest(std::ostream& out, std::uint64_t seed) {
  bool ok = true;
  const auto report = [&](const char* name, const suites::Result& r) {
    out << (r.passed ? "PASS " : "FAIL ") << name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  };
  report("geometry", suites::geometry(1000, seed));
  report("gradients", suites::gradients(20, seed));
  report("diffusion-process", suites::diffusion_process(10000, seed));
  report("oracle-equivalence", suites::oracle_equivalence(100, 200, seed));
  return ok ? 0 : 1;
}

}  // namespace

void validate(const RunConfig& c) {
  require(std::isfinite(c.curvature) && c.curvature >= 0.0, "--curvature must be >= 0 (0 selects the Euclidean ablation)");
  require(c.hidden >= 1 && c.latent >= 1 && c.layers >= 1, "--hidden, --latent and --layers must be >= 1");
  require(c.vgae_epochs >= 1 && c.diffusion_epochs >= 1, "epoch counts must be >= 1");
  require(c.vgae_lr > 0.0 && c.diffusion_lr > 0.0 && c.classifier_lr > 0.0, "learning rates must be positive");
  require(c.steps >= 1, "--steps must be >= 1");
  require(c.beta_start > 0.0 && c.beta_start <= c.beta_end && c.beta_end < 1.0, "need 0 < --beta-start <= --beta-end < 1");
  require(c.batch >= 1 && c.width >= 1, "--batch and --width must be >= 1");
  require(c.nodes == "train" || c.nodes == "all", "--nodes must be train or all");
  require(!c.eps || (std::isfinite(*c.eps) && *c.eps > 0.0), "--eps must be positive");
  require(c.min_pts >= 1, "--min-pts must be >= 1");
  require(c.way >= 1 && c.shot >= 1 && c.query >= 1, "--n-way, --m-shot and --q-query must be >= 1");
  require(c.generated >= 0, "--d-gen must be >= 0");
  require(c.episodes >= 1, "--episodes must be >= 1");
  require(c.classifier_epochs >= 0 && c.classifier_l2 >= 0.0, "classifier epochs and l2 must be >= 0");
  require(c.split == "train" || c.split == "val" || c.split == "test" || c.split == "all",
          "--split must be train, val, test or all");
  require(c.k_clusters >= 0, "--k must be >= 0");
  require(c.threads >= 1, "thread cap must be >= 1");
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyperbolic VGAE + prototype-conditioned diffusion for few-shot node classification", "impress"};
  app.require_subcommand(1);
  RunConfig c;
  std::string precision = "f32";
  const std::map<std::string, Precision> precisions{{"f32", Precision::F32}, {"f64", Precision::F64}};

  const auto add_precision = [&](CLI::App* sub) {
    sub->add_option("--precision", precision, "Floating point precision")->check(CLI::IsMember({"f32", "f64"}));
  };
  const auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", c.seed, "Random seed"); };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert raw graph files into a dataset bundle");
  std::string content, cites, features, edges, labels_path, split_path, split_counts, name;
  std::optional<std::uint64_t> split_seed;
  ingest->add_option("--content", content, "Planetoid .content file");
  ingest->add_option("--cites", cites, "Planetoid .cites file");
  ingest->add_option("--features", features, "Native feature matrix file");
  ingest->add_option("--edges", edges, "Native edge list file");
  ingest->add_option("--labels", labels_path, "Native label file");
  ingest->add_option("--split", split_path, "Class split file");
  ingest->add_option("--split-counts", split_counts, "Train,val,test class counts, e.g. 3,2,2");
  ingest->add_option("--split-seed", split_seed, "Shuffle classes before --split-counts");
  ingest->add_option("--name", name, "Dataset name");
  ingest->add_option("--out", c.out, "Output bundle")->required();

  // synth-tree
  auto* synth = app.add_subcommand("synth-tree", "Generate a balanced-tree dataset");
  TreeOptions tree;
  synth->add_option("--branching", tree.branching, "Children per node");
  synth->add_option("--depth", tree.depth, "Tree depth");
  synth->add_option("--feature-dim", tree.feature_dim, "Feature dimension");
  synth->add_option("--noise", tree.noise, "Feature noise scale");
  synth->add_option("--class-depth", tree.class_depth, "Depth whose subtrees are the classes");
  synth->add_option("--seed", tree.seed, "Random seed");
  synth->add_option("--out", c.out, "Output bundle")->required();

  // train-vgae
  auto* tv = app.add_subcommand("train-vgae", "Train the hyperbolic VGAE");
  tv->add_option("--dataset", c.dataset, "Dataset bundle")->required();
  tv->add_option("--out", c.out, "Output checkpoint")->required();
  tv->add_option("--curvature", c.curvature, "Curvature magnitude |c|; 0 = Euclidean ablation");
  tv->add_option("--hidden", c.hidden, "Hidden width");
  tv->add_option("--latent", c.latent, "Latent width");
  tv->add_option("--layers", c.layers, "GCN layers");
  tv->add_option("--epochs", c.vgae_epochs, "Training epochs");
  tv->add_option("--lr", c.vgae_lr, "Adam learning rate");
  add_seed(tv);
  add_precision(tv);

  // train-diffusion
  auto* td = app.add_subcommand("train-diffusion", "Cluster embeddings and train the diffusion model");
  td->add_option("--dataset", c.dataset, "Dataset bundle")->required();
  td->add_option("--vgae", c.vgae_path, "VGAE checkpoint")->required();
  td->add_option("--out", c.out, "Output checkpoint")->required();
  td->add_option("--steps", c.steps, "Diffusion steps K");
  td->add_option("--beta-start", c.beta_start, "First beta");
  td->add_option("--beta-end", c.beta_end, "Last beta");
  td->add_option("--epochs", c.diffusion_epochs, "Training epochs");
  td->add_option("--batch", c.batch, "Minibatch size");
  td->add_option("--lr", c.diffusion_lr, "Adam learning rate");
  td->add_option("--width", c.width, "Denoiser width");
  td->add_option("--nodes", c.nodes, "Embeddings to train on: train (train-class nodes) or all");
  td->add_option("--eps", c.eps, "DBSCAN radius (default: k-distance knee)");
  td->add_option("--min-pts", c.min_pts, "DBSCAN minimum neighbourhood size");
  add_seed(td);
  add_precision(td);

  // eval
  auto* ev = app.add_subcommand("eval", "Episodic few-shot evaluation on the test classes");
  ev->add_option("--dataset", c.dataset, "Dataset bundle")->required();
  ev->add_option("--vgae", c.vgae_path, "VGAE checkpoint")->required();
  ev->add_option("--diffusion", c.diffusion_path, "Diffusion checkpoint (needed when --d-gen > 0)");
  ev->add_option("--n-way", c.way, "Classes per episode");
  ev->add_option("--m-shot", c.shot, "Support nodes per class");
  ev->add_option("--q-query", c.query, "Query nodes per class");
  ev->add_option("--d-gen", c.generated, "Generated embeddings per class; 0 disables augmentation");
  ev->add_option("--episodes", c.episodes, "Number of episodes");
  ev->add_option("--classifier-epochs", c.classifier_epochs, "Classifier epochs");
  ev->add_option("--classifier-lr", c.classifier_lr, "Classifier learning rate");
  ev->add_option("--classifier-l2", c.classifier_l2, "Classifier L2 penalty");
  ev->add_option("--report", c.report, "Output report")->required();
  ev->add_flag("--timing", c.timing, "Record wall-clock time in the report");
  add_seed(ev);
  add_precision(ev);

  // metrics
  auto* me = app.add_subcommand("metrics", "Hierarchical clustering quality and bound diagnostics");
  me->add_option("--dataset", c.dataset, "Dataset bundle")->required();
  me->add_option("--vgae", c.vgae_path, "VGAE checkpoint")->required();
  me->add_option("--split", c.split, "Classes to measure: train, val, test or all");
  me->add_option("--k", c.k_clusters, "Cluster count (default: classes in the split)");
  me->add_option("--report", c.report, "Optional output report");
  add_precision(me);

  // selftest
  auto* st = app.add_subcommand("selftest", "Run the geometry, gradient, diffusion and oracle property suites");
  add_seed(st);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help() << "error: UsageError: " << e.what() << "\n";
    return 2;
  }

  std::string command = "impress";
  for (const auto& a : args) command += " " + a;
  try {
    c.precision = precisions.at(precision);
    c.threads = threads_from_env();
    validate(c);
    const Context ctx{c, command, out};
    if (ingest->parsed()) {
      ClassSplit split;
      if (!split_path.empty()) {
        require(split_counts.empty(), "give either --split or --split-counts");
        std::ifstream in(split_path);
        if (!in) fail(ErrorKind::IoError, "cannot open " + split_path);
        split = read_split(in);
      }
      GraphDataset ds;
      const bool planetoid = !content.empty() || !cites.empty();
      if (planetoid) {
        require(!content.empty() && !cites.empty(), "--content and --cites go together");
        ds = load_planetoid(content, cites, split, name.empty() ? std::filesystem::path(content).stem().string() : name);
      } else {
        require(!features.empty() && !edges.empty() && !labels_path.empty() && !split_path.empty(),
                "native input needs --features, --edges, --labels and --split");
        ds = load_dataset(features, edges, labels_path, split_path);
        if (!name.empty()) ds.name = name;
      }
      if (!split_counts.empty()) {
        const auto counts = parse_counts(split_counts);
        int num_classes = 0;
        for (int l : ds.labels) num_classes = std::max(num_classes, l + 1);
        ds.split = split_by_counts(num_classes, counts[0], counts[1], counts[2], split_seed ? &*split_seed : nullptr);
      }
      validate(ds);
      save_bundle(ds, c.out);
      out << "ingested " << ds.name << ": " << ds.n_nodes() << " nodes, " << ds.edges.size() << " edges, "
          << ds.feature_dim() << " features, dropped " << ds.dropped_edges << " edges; wrote " << c.out << "\n";
    } else if (synth->parsed()) {
      const GraphDataset ds = generate_tree_dataset(tree);
      save_bundle(ds, c.out);
      out << "generated tree: " << ds.n_nodes() << " nodes, " << ds.edges.size() << " edges; wrote " << c.out << "\n";
    } else if (tv->parsed()) {
      by_precision(c.precision, [&] { train_vgae_command<float>(ctx); }, [&] { train_vgae_command<double>(ctx); });
    } else if (td->parsed()) {
      by_precision(c.precision, [&] { train_diffusion_command<float>(ctx); }, [&] { train_diffusion_command<double>(ctx); });
    } else if (ev->parsed()) {
      by_precision(c.precision, [&] { eval_command<float>(ctx); }, [&] { eval_command<double>(ctx); });
    } else if (me->parsed()) {
      by_precision(c.precision, [&] { metrics_command<float>(ctx); }, [&] { metrics_command<double>(ctx); });
    } else if (st->parsed()) {
      return selftest(out, c.seed);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: RuntimeError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace impress::cli
