#pragma once

// Scene-part model: learned parameters, the five potentials, part
// statistics over element sets, and total / incremental energy.

#include <array>
#include <map>
#include <optional>
#include <span>

#include "ps3/common.hpp"
#include "ps3/features.hpp"
#include "ps3/superpixels.hpp"

namespace ps3 {

inline constexpr double kSimilarityFloor = 1e-6;  // denominators of the appearance ratio
inline constexpr double kLogFloor = 1e-12;        // inside the shape log
inline constexpr double kKappaMax = 500.0;
inline constexpr int kShapeHalf = 100;
inline constexpr int kShapeSide = 2 * kShapeHalf + 1;
inline constexpr std::size_t kShapeCells = static_cast<std::size_t>(kShapeSide) * kShapeSide;

/// Coefficients of the five potentials: appearance, shape, location,
/// distance, angle. A valid set is a convex combination.
struct Weights {
  std::array<double, 5> alpha = {0.2, 0.2, 0.2, 0.2, 0.2};

  double appearance() const { return alpha[0]; }
  double shape() const { return alpha[1]; }
  double location() const { return alpha[2]; }
  double distance() const { return alpha[3]; }
  double angle() const { return alpha[4]; }

  bool is_convex(double tol = 1e-9) const {
    double s = 0.0;
    for (double a : alpha) {
      if (!(a >= 0.0)) return false;
      s += a;
    }
    return std::abs(s - 1.0) <= tol;
  }
  friend bool operator==(const Weights&, const Weights&) = default;
};

/// Probability-of-coverage map on the 201x201 normalized part frame.
class ShapeMap {
 public:
  ShapeMap() : cells_(kShapeCells, 0.0), complement_(static_cast<double>(kShapeCells)) {}
  explicit ShapeMap(std::vector<double> cells) : cells_(std::move(cells)) {
    require(cells_.size() == kShapeCells, "shape map must have 201x201 cells", ErrorKind::Format);
    complement_ = 0.0;
    for (double c : cells_) complement_ += (1.0 - c) * (1.0 - c);
  }

  double at(int u, int v) const { return cells_[static_cast<std::size_t>(v) * kShapeSide + u]; }
  const std::vector<double>& cells() const { return cells_; }
  /// Sum over all cells of (1 - S)^2.
  double complement_energy() const { return complement_; }

  friend bool operator==(const ShapeMap& a, const ShapeMap& b) { return a.cells_ == b.cells_; }

 private:
  std::vector<double> cells_;
  double complement_;
};

/// Gaussian on normalized centroids (x / width, y / height).
struct LocationModel {
  Vec2 mean;
  std::array<double, 4> cov = {1e-2, 0.0, 0.0, 1e-2};  // row-major 2x2

  friend bool operator==(const LocationModel&, const LocationModel&) = default;
};

/// Gaussian on centroid distance normalized by the image diagonal.
struct DistanceModel {
  double mean = 0.0;
  double var = 1e-2;
  friend bool operator==(const DistanceModel&, const DistanceModel&) = default;
};

/// von Mises on the relative angle.
struct AngleModel {
  double mean_dir = 0.0;
  double kappa = 0.0;
  friend bool operator==(const AngleModel&, const AngleModel&) = default;
};

struct PairModel {
  DistanceModel distance;
  AngleModel angle;
  std::uint64_t samples = 0;
  friend bool operator==(const PairModel&, const PairModel&) = default;
};

struct ClassModel {
  bool present = false;
  std::uint64_t part_samples = 0;
  QuadHistogram fg;  // h_z
  QuadHistogram bg;  // h_dz, narrowband of class-z parts
  ShapeMap shape;
  LocationModel location;
  friend bool operator==(const ClassModel&, const ClassModel&) = default;
};

using ClassPair = std::pair<ClassId, ClassId>;

/// Every learned parameter plus the texton codebook and weights.
struct ClassModels {
  std::vector<std::string> class_names;
  HistogramLayout layout;
  int narrowband_radius = 10;
  std::vector<ClassModel> classes;
  std::map<ClassPair, PairModel> pairs;  // ordered (z_i, z_j)
  DistanceModel pooled_distance;
  TextonCodebook codebook;
  Weights weights;

  std::size_t num_classes() const { return classes.size(); }
  const ClassModel& at(ClassId z) const {
    require(z < classes.size() && classes[z].present, "no model for class " + std::to_string(z), ErrorKind::Format);
    return classes[z];
  }
  const PairModel* pair(ClassId zi, ClassId zj) const {
    auto it = pairs.find({zi, zj});
    return it == pairs.end() ? nullptr : &it->second;
  }
  friend bool operator==(const ClassModels&, const ClassModels&) = default;
};

// ---------------------------------------------------------------------------
// Potentials

/// Ratio of cross-fit to self-fit, with the denominators floored. Arguments
/// are the four intersection similarities D(h_z, h_band), D(h_dz, h_fg),
/// D(h_z, h_fg) and D(h_dz, h_band).
inline double appearance_ratio(double z_vs_band, double bgz_vs_fg, double z_vs_fg, double bgz_vs_band) {
  return 0.25 * (z_vs_band * bgz_vs_fg) /
         (std::max(z_vs_fg, kSimilarityFloor) * std::max(bgz_vs_band, kSimilarityFloor));
}

/// Appearance term of a part given its foreground and narrowband counts. An
/// empty band makes both band similarities equal to the floor.
inline double appearance_potential(const HistogramCounts& part_fg, const HistogramCounts& part_band,
                                   const ClassModel& model) {
  const double z_fg = hist_similarity(model.fg, part_fg);
  const double bgz_fg = hist_similarity(model.bg, part_fg);
  double z_band = kSimilarityFloor, bgz_band = kSimilarityFloor;
  if (part_band.mass > 0.0) {
    z_band = hist_similarity(model.fg, part_band);
    bgz_band = hist_similarity(model.bg, part_band);
  }
  return appearance_ratio(z_band, bgz_fg, z_fg, bgz_band);
}

inline double appearance_potential(const QuadHistogram& part_fg, const std::optional<QuadHistogram>& part_band,
                                   const ClassModel& model) {
  const double z_fg = hist_similarity(model.fg, part_fg);
  const double bgz_fg = hist_similarity(model.bg, part_fg);
  double z_band = kSimilarityFloor, bgz_band = kSimilarityFloor;
  if (part_band) {
    z_band = hist_similarity(model.fg, *part_band);
    bgz_band = hist_similarity(model.bg, *part_band);
  }
  return appearance_ratio(z_band, bgz_fg, z_fg, bgz_band);
}

/// Shape term from the two Frobenius norms ||B.S|| and ||(1-B).(1-S)||.
inline double shape_from_norms(double fg_norm, double bg_norm) {
  return -std::log((fg_norm + bg_norm) / static_cast<double>(kShapeCells) + kLogFloor);
}

/// Nearest image pixel for a shape cell of a part frame centered at `mu`.
inline int shape_cell_to_pixel(int cell, double mu, int extent) {
  return static_cast<int>(std::floor(mu + (cell - kShapeHalf) * static_cast<double>(extent) / 100.0 + 0.5));
}

/// Shape term of a part: its membership map is resampled (nearest neighbor)
/// into the 201x201 frame centered at the part centroid and spanning one
/// image extent on each side. Cells outside the image count as B = 0.
/// `covered(x, y)` reports part membership; only cells falling in `bbox` can
/// be covered, so only those are visited.
template <class Covered>
double shape_potential(const ShapeMap& shape, Vec2 mu, const BBox& bbox, Dims dims,
                       Covered&& covered) {
  double fg_sq = 0.0, covered_comp_sq = 0.0;
  if (!bbox.empty()) {
    auto cell_range = [&](int lo, int hi, double m, int extent) {
      const double scale = 100.0 / extent;
      int c0 = static_cast<int>(std::floor((lo - 0.5 - m) * scale)) + kShapeHalf - 1;
      int c1 = static_cast<int>(std::ceil((hi + 0.5 - m) * scale)) + kShapeHalf + 1;
      return std::pair{std::max(c0, 0), std::min(c1, kShapeSide - 1)};
    };
    const auto [u0, u1] = cell_range(bbox.x0, bbox.x1, mu.x, dims.width);
    const auto [v0, v1] = cell_range(bbox.y0, bbox.y1, mu.y, dims.height);
    std::vector<int> px(static_cast<std::size_t>(std::max(0, u1 - u0 + 1)));
    for (int u = u0; u <= u1; ++u) px[u - u0] = shape_cell_to_pixel(u, mu.x, dims.width);
    for (int v = v0; v <= v1; ++v) {
      const int y = shape_cell_to_pixel(v, mu.y, dims.height);
      if (y < bbox.y0 || y > bbox.y1) continue;
      const double* row = shape.cells().data() + static_cast<std::size_t>(v) * kShapeSide;
      for (int u = u0; u <= u1; ++u) {
        const int x = px[u - u0];
        if (x < bbox.x0 || x > bbox.x1 || !covered(x, y)) continue;
        const double s = row[u];
        fg_sq += s * s;
        covered_comp_sq += (1.0 - s) * (1.0 - s);
      }
    }
  }
  return shape_from_norms(std::sqrt(fg_sq), std::sqrt(std::max(0.0, shape.complement_energy() - covered_comp_sq)));
}

inline double mahalanobis(Vec2 p, const LocationModel& m) {
  const double a = m.cov[0], b = m.cov[1], c = m.cov[2], d = m.cov[3];
  const double det = a * d - b * c;
  const double dx = p.x - m.mean.x, dy = p.y - m.mean.y;
  // inverse = [d -b; -c a] / det
  return (dx * (d * dx - b * dy) + dy * (-c * dx + a * dy)) / det;
}

inline Vec2 normalized_position(Vec2 mu, Dims dims) { return {mu.x / dims.width, mu.y / dims.height}; }

/// Location term; `mu` is a pixel-space centroid.
inline double location_potential(Vec2 mu, const ClassModel& model, Dims dims) {
  return mahalanobis(normalized_position(mu, dims), model.location);
}

inline double normalized_distance(Vec2 mu_i, Vec2 mu_j, Dims dims) { return (mu_i - mu_j).norm() / dims.diagonal(); }

inline double relative_angle(Vec2 mu_i, Vec2 mu_j) { return std::atan2(mu_i.y - mu_j.y, mu_i.x - mu_j.x); }

inline double distance_potential(double v, const DistanceModel& m) { return (v - m.mean) * (v - m.mean) / m.var; }

/// log I0(x) from the power series sum (x/2)^{2k} / (k!)^2, switching to the
/// asymptotic expansion beyond the range where the series is cheap.
inline double log_bessel_i0(double x) {
  x = std::abs(x);
  if (x <= 700.0) {
    const double q = 0.25 * x * x;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 2000; ++k) {
      term *= q / (static_cast<double>(k) * k);
      sum += term;
      if (term < sum * 1e-17) break;
    }
    return std::log(sum);
  }
  const double inv = 1.0 / (8.0 * x);
  return x - 0.5 * std::log(2.0 * M_PI * x) + std::log1p(inv + 4.5 * inv * inv + 37.5 * inv * inv * inv);
}

inline double von_mises_log_density(double r, const AngleModel& m) {
  return m.kappa * std::cos(r - m.mean_dir) - std::log(2.0 * M_PI) - log_bessel_i0(m.kappa);
}

inline double angle_potential(double r, const AngleModel& m) { return -von_mises_log_density(r, m); }

/// Pair model for an ordered class pair, falling back to the pooled distance
/// Gaussian and a uniform angle for pairs never seen adjacent in training.
inline PairModel pair_model_or_fallback(const ClassModels& models, ClassId zi, ClassId zj) {
  if (const PairModel* p = models.pair(zi, zj)) return *p;
  return PairModel{models.pooled_distance, AngleModel{0.0, 0.0}, 0};
}

struct UnaryTerms {
  double appearance = 0.0, shape = 0.0, location = 0.0;
  double weighted(const Weights& w) const {
    return w.appearance() * appearance + w.shape() * shape + w.location() * location;
  }
  friend bool operator==(const UnaryTerms&, const UnaryTerms&) = default;
};

struct BinaryTerms {
  double distance = 0.0, angle = 0.0;
  double weighted(const Weights& w) const { return w.distance() * distance + w.angle() * angle; }
  friend bool operator==(const BinaryTerms&, const BinaryTerms&) = default;
};

inline double unary(const UnaryTerms& t, const Weights& w) { return t.weighted(w); }

inline BinaryTerms binary_terms(Vec2 mu_i, Vec2 mu_j, ClassId zi, ClassId zj, const ClassModels& models, Dims dims) {
  const PairModel pm = pair_model_or_fallback(models, zi, zj);
  return {distance_potential(normalized_distance(mu_i, mu_j, dims), pm.distance),
          angle_potential(relative_angle(mu_i, mu_j), pm.angle)};
}

// ---------------------------------------------------------------------------
// Scene graph, configuration and part statistics

/// Class-typed nodes and undirected adjacency edges (stored with i < j).
struct SceneGraph {
  std::vector<ClassId> nodes;
  std::vector<std::pair<int, int>> edges;

  std::size_t size() const { return nodes.size(); }

  void validate() const {
    require(!nodes.empty(), "scene graph has no nodes");
    for (auto [i, j] : edges) {
      require(i >= 0 && j >= 0 && i < static_cast<int>(nodes.size()) && j < static_cast<int>(nodes.size()),
              "scene graph edge references a missing node");
      require(i != j, "scene graph has a self edge");
    }
  }

  /// Normalizes edges to (min, max), sorted and unique.
  void canonicalize() {
    for (auto& [i, j] : edges)
      if (i > j) std::swap(i, j);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }
  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

/// The immutable inference context of one image: elements, their
/// histograms and radius neighborhoods.
struct Scene {
  ElementPartition partition;
  ElementFeatures features;
  std::vector<std::vector<ElementId>> neighborhoods;
  int radius = 10;

  Dims dims() const { return partition.dims; }
  std::size_t size() const { return partition.size(); }
};

inline Scene make_scene(ElementPartition partition, const LabImage& lab, const TextonMap& textons,
                        HistogramLayout layout, int radius) {
  Scene s;
  s.features = element_features(partition, lab, textons, layout);
  s.neighborhoods = element_neighborhoods(partition, radius);
  s.partition = std::move(partition);
  s.radius = radius;
  return s;
}

/// Assignment of every element to one part of a scene graph.
struct Configuration {
  SceneGraph graph;
  std::vector<int> part_of;  // per element

  std::size_t parts() const { return graph.size(); }

  std::vector<std::size_t> part_sizes() const {
    std::vector<std::size_t> sz(graph.size(), 0);
    for (int p : part_of) ++sz.at(static_cast<std::size_t>(p));
    return sz;
  }

  /// Partition of the element set with no empty part.
  bool valid(std::size_t num_elements) const {
    if (part_of.size() != num_elements || graph.nodes.empty()) return false;
    std::vector<std::size_t> sz(graph.size(), 0);
    for (int p : part_of) {
      if (p < 0 || p >= static_cast<int>(graph.size())) return false;
      ++sz[p];
    }
    return std::all_of(sz.begin(), sz.end(), [](std::size_t s) { return s > 0; });
  }
  friend bool operator==(const Configuration&, const Configuration&) = default;
};

/// Derived statistics of one part. Histograms are raw counts (whole
/// numbers), so incremental updates agree exactly with recomputation.
struct PartStats {
  HistogramCounts fg;
  HistogramCounts band;
  double mass = 0.0;
  double sum_x = 0.0, sum_y = 0.0;
  BBox bbox;

  Vec2 centroid() const { return {sum_x / mass, sum_y / mass}; }
  friend bool operator==(const PartStats&, const PartStats&) = default;
};

/// Recomputes a part's statistics from its element set; the narrowband is
/// element-granular: elements outside the part within the radius of it.
inline PartStats compute_part_stats(const Scene& scene, std::span<const int> part_of, int part) {
  PartStats st;
  st.fg = HistogramCounts(scene.features.counts.front().layout);
  st.band = st.fg;
  std::vector<std::uint8_t> in_band(scene.size(), 0);
  for (std::size_t e = 0; e < scene.size(); ++e) {
    if (part_of[e] != part) continue;
    const Element& el = scene.partition.elements[e];
    st.fg += scene.features.counts[e];
    st.mass += static_cast<double>(el.size());
    st.sum_x += el.sum_x;
    st.sum_y += el.sum_y;
    st.bbox.add(el.bbox);
    for (ElementId f : scene.neighborhoods[e])
      if (part_of[f] != part) in_band[f] = 1;
  }
  for (std::size_t f = 0; f < scene.size(); ++f)
    if (in_band[f]) st.band += scene.features.counts[f];
  return st;
}

inline UnaryTerms unary_terms(const Scene& scene, std::span<const int> part_of, int part, const PartStats& st,
                              const ClassModel& model) {
  const Dims dims = scene.dims();
  const auto& element_of = scene.partition.element_of;
  const Vec2 mu = st.centroid();
  UnaryTerms t;
  t.appearance = appearance_potential(st.fg, st.band, model);
  t.shape = shape_potential(model.shape, mu, st.bbox, dims, [&](int x, int y) {
    return part_of[element_of[static_cast<std::size_t>(y) * dims.width + x]] == part;
  });
  t.location = location_potential(mu, model, dims);
  return t;
}

struct EnergyBreakdown {
  std::vector<UnaryTerms> unary;
  std::vector<BinaryTerms> binary;  // aligned with graph.edges
  double total = 0.0;
};

/// Gibbs energy of a configuration: weighted unary terms over parts plus
/// weighted binary terms over graph edges.
inline EnergyBreakdown total_energy(const Scene& scene, const Configuration& config, const ClassModels& models,
                                    const Weights& weights) {
  require(config.valid(scene.size()), "total_energy: invalid configuration");
  EnergyBreakdown out;
  std::vector<Vec2> mu(config.parts());
  for (std::size_t i = 0; i < config.parts(); ++i) {
    const PartStats st = compute_part_stats(scene, config.part_of, static_cast<int>(i));
    mu[i] = st.centroid();
    out.unary.push_back(unary_terms(scene, config.part_of, static_cast<int>(i), st, models.at(config.graph.nodes[i])));
    out.total += out.unary.back().weighted(weights);
  }
  for (auto [i, j] : config.graph.edges) {
    out.binary.push_back(binary_terms(mu[i], mu[j], config.graph.nodes[i], config.graph.nodes[j], models, scene.dims()));
    out.total += out.binary.back().weighted(weights);
  }
  return out;
}

/// Single-element move between parts.
struct ElementMove {
  ElementId element = -1;
  int from = -1;
  int to = -1;
};

/// H(L') - H(L) for moving one element, recomputing only the unary terms of
/// the two touched parts and the binary terms of their incident edges.
inline double delta_energy(const Scene& scene, const Configuration& config, const ElementMove& move,
                           const ClassModels& models, const Weights& weights) {
  require(move.from != move.to, "delta_energy: source equals destination");
  require(config.part_of.at(move.element) == move.from, "delta_energy: element not in source part");
  const auto sizes = config.part_sizes();
  require(sizes.at(move.from) > 1, "delta_energy: move would empty the source part");

  std::vector<int> after = config.part_of;
  after[move.element] = move.to;
  const int touched[2] = {move.from, move.to};
  double delta = 0.0;
  std::map<int, Vec2> mu_before, mu_after;
  for (int p : touched) {
    const ClassModel& m = models.at(config.graph.nodes[p]);
    const PartStats before = compute_part_stats(scene, config.part_of, p);
    const PartStats now = compute_part_stats(scene, after, p);
    mu_before[p] = before.centroid();
    mu_after[p] = now.centroid();
    delta += unary_terms(scene, after, p, now, m).weighted(weights) -
             unary_terms(scene, config.part_of, p, before, m).weighted(weights);
  }
  auto centroid_of = [&](int p, const std::span<const int> assign, std::map<int, Vec2>& cache) {
    if (auto it = cache.find(p); it != cache.end()) return it->second;
    const Vec2 c = compute_part_stats(scene, assign, p).centroid();
    cache[p] = c;
    return c;
  };
  for (auto [i, j] : config.graph.edges) {
    if (i != move.from && i != move.to && j != move.from && j != move.to) continue;
    const ClassId zi = config.graph.nodes[i], zj = config.graph.nodes[j];
    const BinaryTerms b1 = binary_terms(centroid_of(i, after, mu_after), centroid_of(j, after, mu_after), zi, zj,
                                        models, scene.dims());
    const BinaryTerms b0 = binary_terms(centroid_of(i, config.part_of, mu_before),
                                        centroid_of(j, config.part_of, mu_before), zi, zj, models, scene.dims());
    delta += b1.weighted(weights) - b0.weighted(weights);
  }
  return delta;
}

}  // namespace ps3
