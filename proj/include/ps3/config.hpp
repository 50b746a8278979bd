#pragma once

// Flat `key = value` run configuration. Files are read first, then command
// line overrides; every key is also a flag (`--key value` or `--key=value`).

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ps3/common.hpp"

namespace ps3 {

struct RunConfig {
  std::string dataset;         // dataset root
  std::string palette;         // default: <dataset>/palette.txt
  std::string split = "test";  // which split `infer` / `baseline` / `eval` iterate
  std::string output = "out";
  std::string model;           // default: <output>/model.ps3m
  std::string codebook;        // default: <output>/textons.ps3m
  double fh_k = 150.0;
  int fh_min_size = 50;
  int lab_bins = 32;
  int narrowband_radius = 10;
  int min_part_size = 50;
  int texton_samples = 100000;
  int kmeans_iterations = 100;
  double iter_multiplier = 200.0;  // n_iter = multiplier x elements
  int chains = 1;
  double gamma1 = 0.9;
  double gamma2 = 0.1;
  int rho_samples = 200;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  double beta = 1.0;
  int max_sweeps = 100;
  bool baseline_location = true;
  bool strict_average = false;
  std::map<int, double> alpha_override;  // index into the weight vector

  std::string palette_path() const { return palette.empty() ? (std::filesystem::path(dataset) / "palette.txt").string() : palette; }
  std::string model_path() const { return model.empty() ? (std::filesystem::path(output) / "model.ps3m").string() : model; }
  std::string codebook_path() const {
    return codebook.empty() ? (std::filesystem::path(output) / "textons.ps3m").string() : codebook;
  }

  /// Every settable key, in file order.
  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "dataset", "palette", "split", "output", "model", "codebook", "fh_k", "fh_min_size", "lab_bins",
        "narrowband_radius", "min_part_size", "texton_samples", "kmeans_iterations", "iter_multiplier", "chains",
        "gamma1", "gamma2", "rho_samples", "seed", "threads", "beta", "max_sweeps", "baseline_location",
        "strict_average", "alpha_appearance", "alpha_shape", "alpha_location", "alpha_distance", "alpha_angle"};
    return k;
  }

  /// Applies one setting; unknown keys and malformed values are BadArgs.
  void set(const std::string& key, const std::string& value) {
    auto num = [&](auto& dst) {
      using T = std::remove_reference_t<decltype(dst)>;
      std::istringstream is(value);
      T v{};
      is >> v;
      require(!is.fail() && (is >> std::ws).eof(), "config: bad value for " + key + ": '" + value + "'");
      dst = v;
    };
    auto flag = [&](bool& dst) {
      if (value == "1" || value == "true" || value == "yes" || value == "on") {
        dst = true;
      } else if (value == "0" || value == "false" || value == "no" || value == "off") {
        dst = false;
      } else {
        fail(ErrorKind::BadArgs, "config: bad boolean for " + key + ": '" + value + "'");
      }
    };
    static const char* alpha_keys[] = {"alpha_appearance", "alpha_shape", "alpha_location", "alpha_distance",
                                       "alpha_angle"};
    for (int k = 0; k < 5; ++k)
      if (key == alpha_keys[k]) {
        double v;
        num(v);
        require(v >= 0.0, "config: " + key + " must be nonnegative");
        alpha_override[k] = v;
        return;
      }
    if (key == "dataset") dataset = value;
    else if (key == "palette") palette = value;
    else if (key == "split") split = value;
    else if (key == "output") output = value;
    else if (key == "model") model = value;
    else if (key == "codebook") codebook = value;
    else if (key == "fh_k") num(fh_k);
    else if (key == "fh_min_size") num(fh_min_size);
    else if (key == "lab_bins") num(lab_bins);
    else if (key == "narrowband_radius") num(narrowband_radius);
    else if (key == "min_part_size") num(min_part_size);
    else if (key == "texton_samples") num(texton_samples);
    else if (key == "kmeans_iterations") num(kmeans_iterations);
    else if (key == "iter_multiplier") num(iter_multiplier);
    else if (key == "chains") num(chains);
    else if (key == "gamma1") num(gamma1);
    else if (key == "gamma2") num(gamma2);
    else if (key == "rho_samples") num(rho_samples);
    else if (key == "seed") num(seed);
    else if (key == "threads") num(threads);
    else if (key == "beta") num(beta);
    else if (key == "max_sweeps") num(max_sweeps);
    else if (key == "baseline_location") flag(baseline_location);
    else if (key == "strict_average") flag(strict_average);
    else fail(ErrorKind::BadArgs, "config: unknown key '" + key + "'");
  }

  void validate() const {
    require(fh_k > 0.0, "config: fh_k must be positive");
    require(fh_min_size >= 1, "config: fh_min_size must be >= 1");
    require(lab_bins >= 1 && lab_bins <= 256, "config: lab_bins must be in [1, 256]");
    require(narrowband_radius >= 1, "config: narrowband_radius must be >= 1");
    require(min_part_size >= 1, "config: min_part_size must be >= 1");
    require(texton_samples >= 64, "config: texton_samples must be >= 64");
    require(kmeans_iterations >= 1, "config: kmeans_iterations must be >= 1");
    require(iter_multiplier > 0.0, "config: iter_multiplier must be positive");
    require(chains >= 1, "config: chains must be >= 1");
    require(gamma1 > 0.0 && gamma1 < 1.0 && gamma2 > 0.0 && gamma2 < gamma1, "config: need 0 < gamma2 < gamma1 < 1");
    require(rho_samples >= 1, "config: rho_samples must be >= 1");
    require(threads >= 1, "config: threads must be >= 1");
    require(beta >= 0.0, "config: beta must be nonnegative");
    require(max_sweeps >= 1, "config: max_sweeps must be >= 1");
  }

  void parse_text(std::istream& in, const std::string& origin) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, origin + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open config " + path);
    parse_text(in, path);
  }
};

}  // namespace ps3
