#pragma once

// Element-level baselines sharing the part models' appearance and location
// terms: independent per-element classification and a Potts MRF solved by
// iterated conditional modes.

#include "ps3/model.hpp"

namespace ps3 {

struct PottsParams {
  double beta = 1.0;
  int max_sweeps = 100;
  bool use_location = true;
};

/// u(e, z): appearance mismatch plus alpha_L-weighted location distance.
inline double baseline_unary(const Scene& scene, ElementId e, const ClassModel& m, double alpha_location) {
  const double d = hist_similarity(m.fg, scene.features.histograms[e]);
  double u = -std::log(std::max(d, kSimilarityFloor) / 4.0);
  if (alpha_location != 0.0)
    u += alpha_location * mahalanobis(normalized_position(scene.partition.elements[e].centroid(), scene.dims()), m.location);
  return u;
}

/// Element-major table of unaries over the allowed classes.
struct UnaryTable {
  std::vector<ClassId> classes;
  std::vector<double> values;  // values[e * classes.size() + k]

  double at(std::size_t e, std::size_t k) const { return values[e * classes.size() + k]; }
};

inline UnaryTable baseline_unaries(const Scene& scene, std::vector<ClassId> allowed, const ClassModels& models,
                                   bool use_location = true) {
  require(!allowed.empty(), "baseline: no allowed classes");
  std::sort(allowed.begin(), allowed.end());
  allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
  const double alpha_l = use_location ? models.weights.location() : 0.0;
  UnaryTable t{allowed, std::vector<double>(scene.size() * allowed.size())};
  for (std::size_t k = 0; k < allowed.size(); ++k) {
    const ClassModel& m = models.at(allowed[k]);
    for (std::size_t e = 0; e < scene.size(); ++e)
      t.values[e * allowed.size() + k] = baseline_unary(scene, static_cast<ElementId>(e), m, alpha_l);
  }
  return t;
}

inline LabelMap element_labels_to_map(const ElementPartition& partition, const std::vector<ClassId>& labels) {
  LabelMap out(partition.dims.width, partition.dims.height);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = labels[partition.element_of[p]];
  return out;
}

/// Per-element argmin of the unary, ties toward the lowest class index.
inline std::vector<ClassId> mle_element_labels(const UnaryTable& t, std::size_t num_elements) {
  std::vector<ClassId> out(num_elements);
  const std::size_t K = t.classes.size();
  for (std::size_t e = 0; e < num_elements; ++e) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (t.at(e, k) < t.at(e, best)) best = k;
    out[e] = t.classes[best];
  }
  return out;
}

inline LabelMap mle_label(const Scene& scene, const std::vector<ClassId>& allowed, const ClassModels& models,
                          bool use_location = true) {
  const UnaryTable t = baseline_unaries(scene, allowed, models, use_location);
  return element_labels_to_map(scene.partition, mle_element_labels(t, scene.size()));
}

/// Sum of unaries plus beta per adjacent element pair with differing labels.
inline double potts_energy(const UnaryTable& t, const ElementPartition& partition, const std::vector<ClassId>& labels,
                           double beta) {
  double energy = 0.0;
  for (std::size_t e = 0; e < labels.size(); ++e) {
    const auto k = static_cast<std::size_t>(
        std::lower_bound(t.classes.begin(), t.classes.end(), labels[e]) - t.classes.begin());
    energy += t.at(e, k);
    for (ElementId f : partition.adjacency[e])
      if (static_cast<std::size_t>(f) > e && labels[f] != labels[e]) energy += beta;
  }
  return energy;
}

struct IcmResult {
  std::vector<ClassId> labels;
  int sweeps = 0;
  std::vector<double> energy_trace;  // after initialization and after each sweep
};

/// ICM from the MLE labeling, elements visited in index order; a label
/// changes only on strict improvement.
inline IcmResult icm_potts(const UnaryTable& t, const ElementPartition& partition, const PottsParams& params) {
  require(params.beta >= 0.0, "mrf: beta must be nonnegative");
  const std::size_t E = partition.size(), K = t.classes.size();
  IcmResult r;
  r.labels = mle_element_labels(t, E);
  std::vector<std::size_t> idx(E);
  for (std::size_t e = 0; e < E; ++e)
    idx[e] = static_cast<std::size_t>(std::lower_bound(t.classes.begin(), t.classes.end(), r.labels[e]) - t.classes.begin());
  r.energy_trace.push_back(potts_energy(t, partition, r.labels, params.beta));
  std::vector<double> local(K);
  for (int sweep = 0; sweep < params.max_sweeps; ++sweep) {
    bool changed = false;
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t k = 0; k < K; ++k) local[k] = t.at(e, k);
      for (ElementId f : partition.adjacency[e])
        for (std::size_t k = 0; k < K; ++k)
          if (k != idx[f]) local[k] += params.beta;
      std::size_t best = idx[e];
      for (std::size_t k = 0; k < K; ++k)
        if (local[k] < local[best]) best = k;
      if (best != idx[e]) {
        idx[e] = best;
        r.labels[e] = t.classes[best];
        changed = true;
      }
    }
    r.sweeps = sweep + 1;
    r.energy_trace.push_back(potts_energy(t, partition, r.labels, params.beta));
    if (!changed) break;
  }
  return r;
}

inline LabelMap mrf_potts_label(const Scene& scene, const std::vector<ClassId>& allowed, const ClassModels& models,
                                const PottsParams& params = {}) {
  const UnaryTable t = baseline_unaries(scene, allowed, models, params.use_location);
  return element_labels_to_map(scene.partition, icm_potts(t, scene.partition, params).labels);
}

}  // namespace ps3
