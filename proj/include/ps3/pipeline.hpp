#pragma once

// End-to-end stages over an on-disk dataset:
//
//   <root>/images/<name>.png|.ppm   input images
//   <root>/labels/<name>.png        gold label maps (palette colors)
//   <root>/graphs/<name>.graph      given scene graphs
//   <root>/palette.txt              class colors
//   <root>/split.txt                lines "train <name>" / "test <name>"
//   <root>/groups.txt               optional lines "<class> objects|stuff"

#include <filesystem>
#include <fstream>
#include <set>

#include "ps3/baselines.hpp"
#include "ps3/config.hpp"
#include "ps3/evaluation.hpp"
#include "ps3/features.hpp"
#include "ps3/imaging.hpp"
#include "ps3/inference.hpp"
#include "ps3/learning.hpp"
#include "ps3/model_io.hpp"
#include "ps3/superpixels.hpp"
#include "ps3/synth.hpp"

namespace ps3 {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Graph specs

/// `nodes: <class>[,<class>...]` then `edge: <i> <j>` lines.
inline SceneGraph parse_graph_spec(std::istream& in, const std::vector<std::string>& class_names,
                                   const std::string& origin = "graph") {
  SceneGraph g;
  bool have_nodes = false;
  std::string line;
  int lineno = 0;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (t.rfind("nodes:", 0) == 0) {
      require(!have_nodes, where + ": duplicate nodes line", ErrorKind::Format);
      have_nodes = true;
      std::istringstream ls(t.substr(6));
      std::string item;
      while (std::getline(ls, item, ',')) {
        item = trim(item);
        auto it = std::find(class_names.begin(), class_names.end(), item);
        require(it != class_names.end(), where + ": unknown class '" + item + "'", ErrorKind::Format);
        g.nodes.push_back(static_cast<ClassId>(it - class_names.begin()));
      }
    } else if (t.rfind("edge:", 0) == 0) {
      require(have_nodes, where + ": edge before nodes line", ErrorKind::Format);
      std::istringstream ls(t.substr(5));
      long i, j;
      require(static_cast<bool>(ls >> i >> j) && (ls >> std::ws).eof(), where + ": malformed edge",
              ErrorKind::Format);
      const long n = static_cast<long>(g.nodes.size());
      require(i >= 0 && j >= 0 && i < n && j < n && i != j, where + ": edge references a missing node",
              ErrorKind::Format);
      g.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
    } else {
      fail(ErrorKind::Format, where + ": expected 'nodes:' or 'edge:'");
    }
  }
  require(have_nodes && !g.nodes.empty(), origin + ": no nodes", ErrorKind::Format);
  g.canonicalize();
  return g;
}

inline SceneGraph load_graph_spec(const fs::path& path, const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open graph spec " + path.string());
  return parse_graph_spec(in, class_names, path.string());
}

inline std::string format_graph_spec(const SceneGraph& g, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "nodes: ";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) os << (i ? "," : "") << class_names.at(g.nodes[i]);
  os << '\n';
  for (auto [i, j] : g.edges) os << "edge: " << i << ' ' << j << '\n';
  return os.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot create " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  fs::path root;
  Palette palette;
  std::vector<std::string> train, test;
  std::vector<std::string> groups;  // per class; empty when groups.txt is absent

  std::vector<std::string> class_names() const {
    std::vector<std::string> n;
    for (const auto& e : palette.classes()) n.push_back(e.name);
    return n;
  }
  const std::vector<std::string>& split(const std::string& which) const {
    if (which == "train") return train;
    if (which == "test") return test;
    fail(ErrorKind::BadArgs, "unknown split '" + which + "' (expected train or test)");
  }
  fs::path image_path(const std::string& name) const {
    for (const char* ext : {".png", ".ppm"}) {
      fs::path p = root / "images" / (name + ext);
      if (fs::exists(p)) return p;
    }
    fail(ErrorKind::Io, "no image for " + name + " under " + (root / "images").string());
  }
  fs::path label_path(const std::string& name) const { return root / "labels" / (name + ".png"); }
  fs::path graph_path(const std::string& name) const { return root / "graphs" / (name + ".graph"); }

  Image image(const std::string& name) const { return load_image(image_path(name)); }
  LabelMap gold(const std::string& name, std::optional<Dims> dims = std::nullopt) const {
    return load_label_map(label_path(name), palette, dims);
  }
  SceneGraph graph(const std::string& name) const { return load_graph_spec(graph_path(name), class_names()); }

  static Dataset open(const fs::path& root, const fs::path& palette_path) {
    if (!fs::is_directory(root)) fail(ErrorKind::Io, "dataset directory not found: " + root.string());
    Dataset d;
    d.root = root;
    d.palette = Palette::load(palette_path);
    std::ifstream in(root / "split.txt");
    if (!in) fail(ErrorKind::Io, "missing split file " + (root / "split.txt").string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string which, name;
      if (!(ls >> which)) continue;
      require(static_cast<bool>(ls >> name) && (which == "train" || which == "test"),
              "split.txt:" + std::to_string(lineno) + ": expected 'train <name>' or 'test <name>'", ErrorKind::Format);
      (which == "train" ? d.train : d.test).push_back(name);
    }
    if (std::ifstream gin(root / "groups.txt"); gin) {
      d.groups.assign(d.palette.size(), "");
      while (std::getline(gin, line)) {
        std::istringstream ls(line);
        std::string cls, group;
        if (!(ls >> cls)) continue;
        require(static_cast<bool>(ls >> group) && (group == "objects" || group == "stuff"),
                "groups.txt: expected '<class> objects|stuff'", ErrorKind::Format);
        d.groups[d.palette.find(cls)] = group;
      }
    }
    return d;
  }
};

// ---------------------------------------------------------------------------
// Features

inline const FilterBank& default_filter_bank() {
  static const FilterBank bank = build_filter_bank();
  return bank;
}

struct ImageFeatures {
  LabImage lab;
  ResponseStack responses;
};

inline ImageFeatures image_features(const Image& image) {
  ImageFeatures f;
  f.lab = rgb_to_lab(image);
  f.responses = filter_responses(f.lab, default_filter_bank());
  return f;
}

inline KMeansOptions kmeans_options(const RunConfig& cfg) {
  KMeansOptions o;
  o.seed = cfg.seed;
  o.max_samples = static_cast<std::size_t>(cfg.texton_samples);
  o.max_iterations = cfg.kmeans_iterations;
  return o;
}

/// Textons from the training split.
inline KMeansResult train_codebook(const Dataset& ds, const RunConfig& cfg) {
  require(!ds.train.empty(), "train_codebook: training split is empty", ErrorKind::Io);
  std::vector<ResponseStack> stacks(ds.train.size());
  parallel_for(ds.train.size(), cfg.threads,
               [&](std::size_t i) { stacks[i] = image_features(ds.image(ds.train[i])).responses; });
  std::vector<const ResponseStack*> ptrs;
  for (const auto& s : stacks) ptrs.push_back(&s);
  return train_textons(ptrs, kmeans_options(cfg));
}

inline LearningOptions learning_options(const RunConfig& cfg) {
  LearningOptions o;
  o.layout = HistogramLayout{cfg.lab_bins, kNumTextons};
  o.narrowband_radius = cfg.narrowband_radius;
  o.min_part_size = cfg.min_part_size;
  return o;
}

/// Sets overridden weights, then rescales the vector to sum to one.
inline Weights apply_weight_overrides(Weights w, const std::map<int, double>& overrides) {
  if (overrides.empty()) return w;
  for (auto [k, v] : overrides) w.alpha.at(static_cast<std::size_t>(k)) = v;
  double s = 0.0;
  for (double a : w.alpha) s += a;
  require(s > 0.0, "weight overrides leave every weight at zero");
  for (auto& a : w.alpha) a /= s;
  return w;
}

inline ClassModels train_models(const Dataset& ds, const TextonCodebook& codebook, const RunConfig& cfg) {
  require(!ds.train.empty(), "train_models: training split is empty", ErrorKind::Io);
  const LearningOptions opt = learning_options(cfg);
  require(codebook.k == opt.layout.texton_bins, "train_models: codebook size does not match histogram layout",
          ErrorKind::Format);
  std::vector<GroundTruthImage> gt(ds.train.size());
  parallel_for(ds.train.size(), cfg.threads, [&](std::size_t i) {
    const Image img = ds.image(ds.train[i]);
    AnnotatedImage a;
    a.name = ds.train[i];
    a.gold = ds.gold(a.name, img.dims());
    ImageFeatures f = image_features(img);
    a.textons = assign_textons(f.responses, codebook);
    a.lab = std::move(f.lab);
    gt[i] = extract_ground_truth(a, opt);
  });
  ClassModels m = learn_models(gt, ds.class_names(), codebook, opt);
  m.weights = apply_weight_overrides(m.weights, cfg.alpha_override);
  return m;
}

// ---------------------------------------------------------------------------
// Per-image prediction

/// Elements and their features for one test image.
inline Scene prepare_scene(const Image& image, const ClassModels& models, const RunConfig& cfg) {
  ImageFeatures f = image_features(image);
  const TextonMap textons = assign_textons(f.responses, models.codebook);
  return make_scene(segment_fh(image, cfg.fh_k, cfg.fh_min_size), f.lab, textons, models.layout,
                    models.narrowband_radius);
}

inline AnnealOptions anneal_options(const RunConfig& cfg, std::size_t num_elements, std::uint64_t seed) {
  AnnealOptions o;
  o.n_iter = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.iter_multiplier * num_elements)));
  o.gamma1 = cfg.gamma1;
  o.gamma2 = cfg.gamma2;
  o.rho_samples = cfg.rho_samples;
  o.seed = seed;
  o.chains = cfg.chains;
  o.threads = 1;
  return o;
}

/// Distinct node classes of a graph, ascending.
inline std::vector<ClassId> graph_classes(const SceneGraph& g) {
  std::set<ClassId> s(g.nodes.begin(), g.nodes.end());
  return {s.begin(), s.end()};
}

inline PottsParams potts_params(const RunConfig& cfg) {
  return PottsParams{cfg.beta, cfg.max_sweeps, cfg.baseline_location};
}

enum class Method { Ps3, Mrf, Mle };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Ps3:
      return "ps3";
    case Method::Mrf:
      return "mrf";
    default:
      return "mle";
  }
}

/// Seed used for image `index` of a split.
inline std::uint64_t image_seed(std::uint64_t seed, std::size_t index) { return mix_seed(seed, index); }

struct ExperimentResult {
  std::vector<std::pair<std::string, ConfusionMatrix>> matrices;  // ps3, mrf, mle
};

/// Runs all three methods on a split with the given graphs and accumulates
/// confusion matrices.
inline ExperimentResult run_experiment(const Dataset& ds, const ClassModels& models, const RunConfig& cfg,
                                       const std::string& split = "test") {
  const auto& names = ds.split(split);
  require(!names.empty(), "run_experiment: split '" + split + "' is empty", ErrorKind::Io);
  const std::size_t Z = ds.palette.size();
  std::vector<std::array<ConfusionMatrix, 3>> per(names.size());
  parallel_for(names.size(), cfg.threads, [&](std::size_t i) {
    const Image img = ds.image(names[i]);
    const LabelMap gold = ds.gold(names[i], img.dims());
    const SceneGraph graph = ds.graph(names[i]);
    const Scene scene = prepare_scene(img, models, cfg);
    const AnnealResult ar =
        anneal(scene, graph, models, models.weights, anneal_options(cfg, scene.size(), image_seed(cfg.seed, i)));
    const auto allowed = graph_classes(graph);
    const LabelMap preds[3] = {configuration_to_labelmap(ar.best, scene.partition),
                               mrf_potts_label(scene, allowed, models, potts_params(cfg)),
                               mle_label(scene, allowed, models, cfg.baseline_location)};
    for (int m = 0; m < 3; ++m) {
      per[i][m] = ConfusionMatrix(Z);
      accumulate(gold, preds[m], per[i][m]);
    }
  });
  ExperimentResult r;
  for (int m = 0; m < 3; ++m) {
    ConfusionMatrix total(Z);
    for (const auto& p : per) total += p[m];
    r.matrices.emplace_back(method_name(static_cast<Method>(m)), total);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Single-image outputs

/// Pixel-space centroid of every part of a configuration.
inline std::vector<Vec2> part_centroids(const Configuration& config, const ElementPartition& partition) {
  std::vector<double> sx(config.parts(), 0.0), sy(config.parts(), 0.0), n(config.parts(), 0.0);
  const int W = partition.dims.width;
  for (std::size_t p = 0; p < partition.element_of.size(); ++p) {
    const int i = config.part_of[partition.element_of[p]];
    sx[i] += static_cast<double>(p % W);
    sy[i] += static_cast<double>(p / W);
    n[i] += 1.0;
  }
  std::vector<Vec2> out(config.parts());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {sx[i] / n[i], sy[i] / n[i]};
  return out;
}

/// Pixel-space centroid of every part of a labeling.
inline std::vector<Vec2> part_centroids(const LabeledParts& parts, Dims dims) {
  std::vector<Vec2> out;
  for (const auto& px : parts.pixels) {
    double sx = 0.0, sy = 0.0;
    for (std::uint32_t p : px) {
      sx += static_cast<double>(p % static_cast<std::uint32_t>(dims.width));
      sy += static_cast<double>(p / static_cast<std::uint32_t>(dims.width));
    }
    out.push_back({sx / static_cast<double>(px.size()), sy / static_cast<double>(px.size())});
  }
  return out;
}

struct InferenceOutput {
  LabelMap labels;
  AnnealResult result;
  std::vector<Vec2> centroids;  // of the best configuration's parts
};

inline InferenceOutput infer_image(const Image& image, const SceneGraph& graph, const ClassModels& models,
                                   const RunConfig& cfg, std::uint64_t seed) {
  graph.validate();
  for (ClassId z : graph.nodes) models.at(z);
  const Scene scene = prepare_scene(image, models, cfg);
  AnnealOptions opt = anneal_options(cfg, scene.size(), seed);
  opt.threads = cfg.threads;
  InferenceOutput out;
  out.result = anneal(scene, graph, models, models.weights, opt);
  out.labels = configuration_to_labelmap(out.result.best, scene.partition);
  out.centroids = part_centroids(out.result.best, scene.partition);
  return out;
}

inline LabelMap baseline_image(const Image& image, const std::vector<ClassId>& classes, const ClassModels& models,
                               const RunConfig& cfg, Method which) {
  require(which != Method::Ps3, "baseline_image: expected mle or mrf");
  for (ClassId z : classes) models.at(z);
  const Scene scene = prepare_scene(image, models, cfg);
  return which == Method::Mrf ? mrf_potts_label(scene, classes, models, potts_params(cfg))
                              : mle_label(scene, classes, models, cfg.baseline_location);
}

/// Pairs every `<name>.png` in `pred_dir` with the gold map of the same
/// name and tallies the confusion matrix. Predictions with no gold map, and
/// gold maps of the split with no prediction, are errors.
inline ConfusionMatrix evaluate_predictions(const Dataset& ds, const fs::path& pred_dir, const std::string& split) {
  if (!fs::is_directory(pred_dir)) fail(ErrorKind::Io, "prediction directory not found: " + pred_dir.string());
  std::set<std::string> preds;
  for (const auto& entry : fs::directory_iterator(pred_dir))
    if (entry.is_regular_file() && detail::lower_ext(entry.path()) == ".png") preds.insert(entry.path().stem().string());
  if (preds.empty()) fail(ErrorKind::Io, "no predictions (*.png) in " + pred_dir.string());
  const auto& names = ds.split(split);
  const std::set<std::string> expected(names.begin(), names.end());
  for (const auto& p : preds)
    if (!expected.contains(p)) fail(ErrorKind::Io, "prediction " + p + " has no gold map in split '" + split + "'");
  for (const auto& n : names)
    if (!preds.contains(n)) fail(ErrorKind::Io, "no prediction for " + n);
  ConfusionMatrix cm(ds.palette.size());
  for (const auto& n : names) {
    const LabelMap gold = ds.gold(n);
    accumulate(gold, load_label_map(pred_dir / (n + ".png"), ds.palette, gold.dims()), cm);
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Synthetic datasets

/// Writes a synthetic dataset: the first `n_train` images go to the train
/// split, the rest to test. Image i uses mix_seed(seed, i).
inline void write_synth_dataset(const fs::path& root, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                                const SynthOptions& opt = {}, unsigned threads = 1) {
  std::error_code ec;
  for (const char* sub : {"images", "labels", "graphs"}) {
    fs::create_directories(root / sub, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + (root / sub).string() + ": " + ec.message());
  }
  const Palette palette = synth_palette();
  palette.save(root / "palette.txt");
  std::vector<std::string> names(n_train + n_test);
  std::ostringstream split, groups;
  for (std::size_t i = 0; i < names.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%04zu", i);
    names[i] = buf;
    split << (i < n_train ? "train " : "test ") << names[i] << '\n';
  }
  for (const auto& c : synth_classes()) groups << c.name << ' ' << c.group << '\n';
  write_text_file(root / "split.txt", split.str());
  write_text_file(root / "groups.txt", groups.str());
  std::vector<std::string> class_names;
  for (const auto& c : synth_classes()) class_names.push_back(c.name);
  parallel_for(names.size(), threads, [&](std::size_t i) {
    const SynthImage s = synth_image(mix_seed(seed, i), opt);
    save_image(s.image, root / "images" / (names[i] + ".png"));
    save_label_map(s.gold, palette, root / "labels" / (names[i] + ".png"));
    write_text_file(root / "graphs" / (names[i] + ".graph"), format_graph_spec(s.graph, class_names));
  });
}

}  // namespace ps3
