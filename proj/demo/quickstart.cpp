// Generates a small synthetic dataset, trains textons and class models, and
// compares the part model against the two element-level baselines.

#include <chrono>
#include <iostream>

#include "ps3/ps3.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ps3_quickstart";
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 1;
  try {
    auto t0 = std::chrono::steady_clock::now();
    auto lap = [&](const char* what) {
      auto t1 = std::chrono::steady_clock::now();
      std::cout << what << ": " << std::chrono::duration<double>(t1 - t0).count() << " s\n";
      t0 = t1;
    };
    ps3::write_synth_dataset(root, 60, 20, seed);
    lap("synth");
    ps3::RunConfig cfg;
    cfg.dataset = root.string();
    cfg.seed = seed;
    cfg.texton_samples = 20000;
    const ps3::Dataset ds = ps3::Dataset::open(root, cfg.palette_path());
    const auto km = ps3::train_codebook(ds, cfg);
    lap("textons");
    const ps3::ClassModels models = ps3::train_models(ds, km.codebook, cfg);
    lap("train");
    std::cout << "weights:";
    for (double a : models.weights.alpha) std::cout << ' ' << a;
    std::cout << '\n';
    const auto res = ps3::run_experiment(ds, models, cfg);
    lap("experiment");
    ps3::write_accuracy_table(std::cout, ds.class_names(), res.matrices);
    for (const auto& [name, cm] : res.matrices) {
      std::cout << name << ':';
      for (const auto& [g, v] : ps3::grouped_accuracy(cm, ds.groups)) std::cout << ' ' << g << '=' << ps3::format_percent(v);
      std::cout << '\n';
    }
  } catch (const ps3::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
