// ps3: texton training, model learning, part-model inference, element
// baselines, evaluation, synthetic datasets and overlays.
//
// Settings come from a `key = value` file (--config, or $PS3_CONFIG), then
// from `--key value` flags. Errors print one line `error:<kind>: <message>`
// and exit with 2 (args), 3 (io) or 4 (format).

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "ps3/ps3.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code(ps3::ErrorKind k) {
  switch (k) {
    case ps3::ErrorKind::BadArgs:
      return 2;
    case ps3::ErrorKind::Io:
      return 3;
    default:
      return 4;
  }
}

const char* kind_name(ps3::ErrorKind k) {
  switch (k) {
    case ps3::ErrorKind::BadArgs:
      return "args";
    case ps3::ErrorKind::Io:
      return "io";
    default:
      return "format";
  }
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) ps3::fail(ps3::ErrorKind::Io, "cannot create " + p.string() + ": " + ec.message());
}

void write_bytes_to(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) make_dirs(path.parent_path());
  ps3::write_text_file(path, text);
}

ps3::Dataset open_dataset(const ps3::RunConfig& cfg) {
  ps3::require(!cfg.dataset.empty(), "--dataset is required");
  return ps3::Dataset::open(cfg.dataset, cfg.palette_path());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------

void cmd_textons(const ps3::RunConfig& cfg) {
  const ps3::Dataset ds = open_dataset(cfg);
  const ps3::KMeansResult km = ps3::train_codebook(ds, cfg);
  const fs::path out = cfg.codebook_path();
  if (out.has_parent_path()) make_dirs(out.parent_path());
  ps3::save_codebook(km.codebook, out);
  std::cout << "iteration,objective\n";
  char buf[64];
  for (std::size_t i = 0; i < km.objective_trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, km.objective_trace[i]);
    std::cout << buf;
  }
  std::cout << "wrote " << out.string() << '\n';
}

void cmd_train(const ps3::RunConfig& cfg) {
  const ps3::Dataset ds = open_dataset(cfg);
  const ps3::TextonCodebook codebook = ps3::load_codebook(cfg.codebook_path());
  const ps3::ClassModels models = ps3::train_models(ds, codebook, cfg);
  const fs::path out = cfg.model_path();
  if (out.has_parent_path()) make_dirs(out.parent_path());
  ps3::save_models(models, out);
  for (std::size_t z = 0; z < models.num_classes(); ++z) {
    const auto& m = models.classes[z];
    std::cout << "class " << models.class_names[z] << " parts " << m.part_samples << '\n';
    if (!m.present)
      std::cerr << "warning: class " << models.class_names[z] << " never observed in training; excluded from the model\n";
  }
  char buf[256];
  const auto& a = models.weights.alpha;
  std::snprintf(buf, sizeof buf, "alpha appearance=%.17g shape=%.17g location=%.17g distance=%.17g angle=%.17g\n", a[0],
                a[1], a[2], a[3], a[4]);
  std::cout << buf << "wrote " << out.string() << '\n';
}

struct InferArgs {
  std::string image, graph;
};

void infer_one(const ps3::Image& img, const ps3::SceneGraph& graph, const ps3::ClassModels& models,
               const ps3::Palette& palette, const ps3::RunConfig& cfg, const std::string& name, std::uint64_t seed) {
  const ps3::InferenceOutput r = ps3::infer_image(img, graph, models, cfg, seed);
  const fs::path dir = fs::path(cfg.output) / "ps3";
  make_dirs(dir / "trace");
  make_dirs(dir / "overlay");
  ps3::save_label_map(r.labels, palette, dir / (name + ".png"));
  std::ostringstream trace;
  ps3::write_trace_csv(trace, r.result.trace);
  ps3::write_text_file(dir / "trace" / (name + ".csv"), trace.str());
  ps3::save_image(ps3::render_overlay(img, r.labels, graph, r.centroids, palette), dir / "overlay" / (name + ".png"));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s energy %.17g initial %.17g rho %.17g accepted %zu\n", name.c_str(),
                r.result.best_energy, r.result.initial_energy, r.result.rho, r.result.accepted);
  std::cout << buf;
}

void cmd_infer(const ps3::RunConfig& cfg, const InferArgs& a) {
  const ps3::ClassModels models = ps3::load_models(cfg.model_path());
  const ps3::Palette palette = ps3::Palette::load(cfg.palette_path());
  if (!a.image.empty()) {
    ps3::require(!a.graph.empty(), "infer: --graph is required with --image");
    std::vector<std::string> names;
    for (const auto& e : palette.classes()) names.push_back(e.name);
    infer_one(ps3::load_image(a.image), ps3::load_graph_spec(a.graph, names), models, palette, cfg,
              fs::path(a.image).stem().string(), cfg.seed);
    return;
  }
  const ps3::Dataset ds = open_dataset(cfg);
  const auto& names = ds.split(cfg.split);
  ps3::require(!names.empty(), "infer: split '" + cfg.split + "' is empty", ps3::ErrorKind::Io);
  for (std::size_t i = 0; i < names.size(); ++i)
    infer_one(ds.image(names[i]), ds.graph(names[i]), models, ds.palette, cfg, names[i], ps3::image_seed(cfg.seed, i));
}

struct BaselineArgs {
  std::string which, image, graph, classes;
};

void cmd_baseline(const ps3::RunConfig& cfg, const BaselineArgs& a) {
  ps3::require(a.which == "mle" || a.which == "mrf", "baseline: --which must be mle or mrf");
  const ps3::Method m = a.which == "mrf" ? ps3::Method::Mrf : ps3::Method::Mle;
  const ps3::ClassModels models = ps3::load_models(cfg.model_path());
  const ps3::Palette palette = ps3::Palette::load(cfg.palette_path());
  const fs::path dir = fs::path(cfg.output) / a.which;
  make_dirs(dir);
  if (!a.image.empty()) {
    std::vector<std::string> names;
    for (const auto& e : palette.classes()) names.push_back(e.name);
    std::vector<ps3::ClassId> classes;
    if (!a.classes.empty()) {
      for (const auto& c : split_list(a.classes)) classes.push_back(palette.find(c));
    } else {
      ps3::require(!a.graph.empty(), "baseline: --classes or --graph is required with --image");
      classes = ps3::graph_classes(ps3::load_graph_spec(a.graph, names));
    }
    const std::string name = fs::path(a.image).stem().string();
    ps3::save_label_map(ps3::baseline_image(ps3::load_image(a.image), classes, models, cfg, m), palette,
                        dir / (name + ".png"));
    std::cout << "wrote " << (dir / (name + ".png")).string() << '\n';
    return;
  }
  const ps3::Dataset ds = open_dataset(cfg);
  const auto& names = ds.split(cfg.split);
  ps3::require(!names.empty(), "baseline: split '" + cfg.split + "' is empty", ps3::ErrorKind::Io);
  std::vector<ps3::LabelMap> preds(names.size());
  ps3::parallel_for(names.size(), cfg.threads, [&](std::size_t i) {
    preds[i] = ps3::baseline_image(ds.image(names[i]), ps3::graph_classes(ds.graph(names[i])), models, cfg, m);
  });
  for (std::size_t i = 0; i < names.size(); ++i) ps3::save_label_map(preds[i], ds.palette, dir / (names[i] + ".png"));
  std::cout << "wrote " << names.size() << " label maps to " << dir.string() << '\n';
}

struct EvalArgs {
  std::string method, pred_dir;
};

void cmd_eval(const ps3::RunConfig& cfg, const EvalArgs& a) {
  ps3::require(!a.method.empty(), "eval: --method is required");
  const ps3::Dataset ds = open_dataset(cfg);
  const fs::path pred_dir = a.pred_dir.empty() ? fs::path(cfg.output) / a.method : fs::path(a.pred_dir);
  const ps3::ConfusionMatrix cm = ps3::evaluate_predictions(ds, pred_dir, cfg.split);
  const auto names = ds.class_names();
  std::ostringstream csv, table;
  ps3::write_accuracy_csv(csv, cm, names, cfg.strict_average);
  ps3::write_accuracy_table(table, names, {{a.method, cm}}, cfg.strict_average);
  if (!ds.groups.empty())
    for (const auto& [g, v] : ps3::grouped_accuracy(cm, ds.groups)) table << g << ' ' << ps3::format_percent(v) << '\n';
  write_bytes_to(fs::path(cfg.output) / (a.method + "_accuracy.csv"), csv.str());
  write_bytes_to(fs::path(cfg.output) / (a.method + "_accuracy.txt"), table.str());
  std::cout << table.str();
}

struct SynthArgs {
  std::size_t n_train = 60, n_test = 20;
  int width = 120, height = 100;
};

void cmd_synth(const ps3::RunConfig& cfg, const SynthArgs& a) {
  ps3::require(!cfg.dataset.empty(), "synth: --dataset (output root) is required");
  ps3::require(a.n_train + a.n_test > 0, "synth: need at least one image");
  ps3::SynthOptions opt;
  opt.width = a.width;
  opt.height = a.height;
  ps3::write_synth_dataset(cfg.dataset, a.n_train, a.n_test, cfg.seed, opt, cfg.threads);
  std::cout << "wrote " << a.n_train << " train and " << a.n_test << " test images to " << cfg.dataset << '\n';
}

struct RenderArgs {
  std::string image, labels, out;
};

void cmd_render(const ps3::RunConfig& cfg, const RenderArgs& a) {
  ps3::require(!a.image.empty() && !a.labels.empty() && !a.out.empty(), "render: --image, --labels and --out are required");
  const ps3::Palette palette = ps3::Palette::load(cfg.palette_path());
  const ps3::Image img = ps3::load_image(a.image);
  const ps3::LabelMap labels = ps3::load_label_map(a.labels, palette, img.dims());
  const ps3::LabeledParts parts = ps3::graph_from_labeling(labels, cfg.min_part_size);
  const fs::path out(a.out);
  if (out.has_parent_path()) make_dirs(out.parent_path());
  ps3::save_image(ps3::render_overlay(img, parts.labels, parts.graph, ps3::part_centroids(parts, img.dims()), palette),
                  out);
  std::cout << "wrote " << out.string() << '\n';
}

std::string dashed(std::string s) {
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-based scene labeling with pixel-support parts"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key = value settings file (default: $PS3_CONFIG)");
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const std::string& key : ps3::RunConfig::keys()) {
    std::string names = "--" + dashed(key);
    if (key.find('_') != std::string::npos) names += ",--" + key;
    auto store = [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); };
    // A repeated flag keeps its last value.
    auto* opt = app.add_option_function<std::string>(names, store, "setting " + key)
                    ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    if (key == "baseline_location" || key == "strict_average") opt->expected(0, 1)->default_str("true");
  }

  auto* textons = app.add_subcommand("textons", "train the texton codebook on the training split");
  auto* train = app.add_subcommand("train", "learn class and pair models");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "part-model inference on one image or a split");
  infer->add_option("--image", infer_args.image, "input image");
  infer->add_option("--graph", infer_args.graph, "graph spec for --image");

  BaselineArgs baseline_args;
  auto* baseline = app.add_subcommand("baseline", "element-level MLE or Potts MRF labeling");
  baseline->add_option("--which", baseline_args.which, "mle or mrf")->required();
  baseline->add_option("--image", baseline_args.image, "input image");
  baseline->add_option("--graph", baseline_args.graph, "graph spec giving the allowed classes");
  baseline->add_option("--classes", baseline_args.classes, "comma-separated allowed classes");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "accuracy tables for a prediction directory");
  eval->add_option("--method", eval_args.method, "method name used in output files")->required();
  eval->add_option("--pred-dir", eval_args.pred_dir, "directory of <name>.png predictions (default: <output>/<method>)");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "write a seeded synthetic dataset to --dataset");
  synth->add_option("--n-train", synth_args.n_train, "training images")->capture_default_str();
  synth->add_option("--n-test", synth_args.n_test, "test images")->capture_default_str();
  synth->add_option("--width", synth_args.width, "image width")->capture_default_str();
  synth->add_option("--height", synth_args.height, "image height")->capture_default_str();

  RenderArgs render_args;
  auto* render = app.add_subcommand("render", "overlay a label map and its part graph on an image");
  render->add_option("--image", render_args.image, "input image")->required();
  render->add_option("--labels", render_args.labels, "label map (palette colors)")->required();
  render->add_option("--out", render_args.out, "output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error:args: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    ps3::RunConfig cfg;
    if (config_path.empty())
      if (const char* env = std::getenv("PS3_CONFIG"); env && *env) config_path = env;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.validate();

    if (textons->parsed()) cmd_textons(cfg);
    else if (train->parsed()) cmd_train(cfg);
    else if (infer->parsed()) cmd_infer(cfg, infer_args);
    else if (baseline->parsed()) cmd_baseline(cfg, baseline_args);
    else if (eval->parsed()) cmd_eval(cfg, eval_args);
    else if (synth->parsed()) cmd_synth(cfg, synth_args);
    else if (render->parsed()) cmd_render(cfg, render_args);
  } catch (const ps3::Error& e) {
    std::cerr << "error:" << kind_name(e.kind()) << ": " << one_line(e.what()) << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error:format: " << one_line(e.what()) << '\n';
    return 4;
  }
  return 0;
}
