#pragma once

// Parameter estimation from labeled training images: ground-truth part
// graphs, class appearance, shape and location models, pairwise distance /
// angle models, and the potential weights.

#include <map>
#include <set>

#include "ps3/common.hpp"
#include "ps3/features.hpp"
#include "ps3/imaging.hpp"
#include "ps3/model.hpp"
#include "ps3/superpixels.hpp"

namespace ps3 {

/// Parts of a label map: one node per 8-connected same-class component
/// (after small-component merging), edges between 4-adjacent parts.
struct LabeledParts {
  SceneGraph graph;
  std::vector<int> part_of_pixel;                  // -1 for void
  std::vector<std::vector<std::uint32_t>> pixels;  // per part, ascending
  LabelMap labels;                                 // parts rendered back with their classes
};

/// Builds the part graph of a labeling. Components smaller than
/// `min_part_size` are merged into their largest 4-adjacent neighbor
/// (smallest components first) and take its class; a small component with no
/// labeled neighbor is kept.
inline LabeledParts graph_from_labeling(const LabelMap& labels, int min_part_size = 50) {
  const int W = labels.width(), H = labels.height();
  const std::size_t N = labels.size();
  std::vector<int> comp(N, -1);
  std::vector<ClassId> comp_class;
  std::vector<std::size_t> comp_size;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < N; ++s) {
    if (labels[s] == kVoid || comp[s] >= 0) continue;
    const int id = static_cast<int>(comp_class.size());
    comp_class.push_back(labels[s]);
    comp_size.push_back(0);
    comp[s] = id;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++comp_size[id];
      const int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = x + dx, qy = y + dy;
          if ((dx == 0 && dy == 0) || qx < 0 || qx >= W || qy < 0 || qy >= H) continue;
          const std::size_t q = static_cast<std::size_t>(qy) * W + qx;
          if (comp[q] < 0 && labels[q] == labels[s]) {
            comp[q] = id;
            stack.push_back(q);
          }
        }
      }
    }
  }
  require(!comp_class.empty(), "graph_from_labeling: label map is entirely void", ErrorKind::Format);

  const std::size_t C = comp_class.size();
  std::vector<std::set<int>> adj(C);
  auto link4 = [&](auto&& visit) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        if (x + 1 < W) visit(p, p + 1);
        if (y + 1 < H) visit(p, p + W);
      }
  };
  link4([&](std::size_t p, std::size_t q) {
    if (comp[p] >= 0 && comp[q] >= 0 && comp[p] != comp[q]) {
      adj[comp[p]].insert(comp[q]);
      adj[comp[q]].insert(comp[p]);
    }
  });

  std::vector<int> parent(C);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return comp_size[a] < comp_size[b]; });
  std::vector<std::set<int>> members(C);
  for (std::size_t c = 0; c < C; ++c) members[c] = {static_cast<int>(c)};
  for (int c : order) {
    const int root = find(c);
    if (comp_size[root] >= static_cast<std::size_t>(min_part_size)) continue;
    std::set<int> nbrs;
    for (int m : members[root])
      for (int n : adj[m])
        if (find(n) != root) nbrs.insert(find(n));
    if (nbrs.empty()) continue;
    int target = *nbrs.begin();
    for (int n : nbrs)
      if (comp_size[n] > comp_size[target]) target = n;
    parent[root] = target;
    comp_size[target] += comp_size[root];
    members[target].insert(members[root].begin(), members[root].end());
  }

  LabeledParts out;
  out.part_of_pixel.assign(N, -1);
  out.labels = LabelMap(W, H);
  std::map<int, int> part_index;  // root -> part id, first-pixel order
  for (std::size_t p = 0; p < N; ++p) {
    if (comp[p] < 0) continue;
    const int root = find(comp[p]);
    auto [it, inserted] = part_index.try_emplace(root, static_cast<int>(out.graph.nodes.size()));
    if (inserted) {
      out.graph.nodes.push_back(comp_class[root]);
      out.pixels.emplace_back();
    }
    out.part_of_pixel[p] = it->second;
    out.pixels[it->second].push_back(static_cast<std::uint32_t>(p));
    out.labels[p] = comp_class[root];
  }
  link4([&](std::size_t p, std::size_t q) {
    const int a = out.part_of_pixel[p], b = out.part_of_pixel[q];
    if (a >= 0 && b >= 0 && a != b) out.graph.edges.emplace_back(a, b);
  });
  out.graph.canonicalize();
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth part samples

/// Features of one labeled training image.
struct AnnotatedImage {
  std::string name;
  LabelMap gold;
  LabImage lab;
  TextonMap textons;
};

struct PartSample {
  ClassId cls = 0;
  HistogramCounts fg;
  HistogramCounts band;  // pixel narrowband, void excluded
  Vec2 centroid;
  BBox bbox;
};

struct GroundTruthImage {
  std::string name;
  Dims dims;
  LabeledParts parts;
  std::vector<PartSample> samples;  // aligned with parts.graph.nodes
};

struct LearningOptions {
  HistogramLayout layout;
  int narrowband_radius = 10;
  int min_part_size = 50;
};

inline GroundTruthImage extract_ground_truth(const AnnotatedImage& img, const LearningOptions& opt) {
  GroundTruthImage gt;
  gt.name = img.name;
  gt.dims = img.gold.dims();
  gt.parts = graph_from_labeling(img.gold, opt.min_part_size);
  for (std::size_t i = 0; i < gt.parts.graph.size(); ++i) {
    const auto& px = gt.parts.pixels[i];
    PartSample s;
    s.cls = gt.parts.graph.nodes[i];
    s.fg = count_pixels(px, img.lab, img.textons, opt.layout);
    s.band = HistogramCounts(opt.layout);
    for (auto p : narrowband(px, opt.narrowband_radius, gt.dims))
      if (img.gold[p] != kVoid) add_pixel(s.band, img.lab, img.textons, p);
    s.centroid = centroid(px, gt.dims);
    for (auto p : px) s.bbox.add(static_cast<int>(p % gt.dims.width), static_cast<int>(p / gt.dims.width));
    gt.samples.push_back(std::move(s));
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Unary parameters

inline bool class_observed(std::span<const GroundTruthImage> data, ClassId z) {
  for (const auto& img : data)
    for (const auto& s : img.samples)
      if (s.cls == z) return true;
  return false;
}

/// Pooled foreground and narrowband histograms of all class-z parts.
inline std::pair<QuadHistogram, QuadHistogram> learn_appearance(std::span<const GroundTruthImage> data, ClassId z,
                                                                HistogramLayout layout) {
  HistogramCounts fg(layout), bg(layout);
  for (const auto& img : data)
    for (const auto& s : img.samples)
      if (s.cls == z) {
        fg += s.fg;
        bg += s.band;
      }
  require(fg.mass > 0.0, "learn_appearance: class " + std::to_string(z) + " absent from training data");
  QuadHistogram bg_hist;
  if (bg.mass > 0.0) {
    bg_hist = normalize(bg);
  } else {
    // Every class-z part covered its whole image: no background observed.
    bg_hist = QuadHistogram{layout, std::vector<double>(layout.size())};
    for (int p = 0; p < 4; ++p)
      for (int b = 0; b < layout.channel_size(p); ++b)
        bg_hist.bins[layout.channel_offset(p) + b] = 1.0 / layout.channel_size(p);
  }
  return {normalize(fg), bg_hist};
}

/// Quantized normalized-frame cell of a part pixel: round((x - mu) / w * 100)
/// + 100, clipped to [0, 200].
inline int shape_cell(double coord, double mu, int extent) {
  // Scale before dividing so exact half offsets stay exact.
  const int c = static_cast<int>(std::floor((coord - mu) * 100.0 / extent + 0.5)) + kShapeHalf;
  return std::clamp(c, 0, kShapeSide - 1);
}

/// Fraction of class-z training parts covering each normalized-frame cell.
inline ShapeMap learn_shape(std::span<const GroundTruthImage> data, ClassId z) {
  std::vector<std::uint64_t> hits(kShapeCells, 0);
  std::vector<std::uint8_t> covered(kShapeCells);
  std::uint64_t parts = 0;
  for (const auto& img : data) {
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
      if (img.samples[i].cls != z) continue;
      ++parts;
      std::fill(covered.begin(), covered.end(), 0);
      const Vec2 mu = img.samples[i].centroid;
      for (auto p : img.parts.pixels[i]) {
        const int u = shape_cell(static_cast<double>(p % img.dims.width), mu.x, img.dims.width);
        const int v = shape_cell(static_cast<double>(p / img.dims.width), mu.y, img.dims.height);
        covered[static_cast<std::size_t>(v) * kShapeSide + u] = 1;
      }
      for (std::size_t c = 0; c < kShapeCells; ++c) hits[c] += covered[c];
    }
  }
  require(parts > 0, "learn_shape: class " + std::to_string(z) + " absent from training data");
  std::vector<double> cells(kShapeCells);
  for (std::size_t c = 0; c < kShapeCells; ++c) cells[c] = static_cast<double>(hits[c]) / static_cast<double>(parts);
  return ShapeMap(std::move(cells));
}

/// Gaussian over a set of 2-vectors: mean and (1/N) covariance plus 1e-4 I;
/// a single sample gets 1e-2 I.
inline LocationModel fit_location(std::span<const Vec2> pts) {
  require(!pts.empty(), "fit_location: no samples");
  LocationModel m;
  double sx = 0.0, sy = 0.0;
  for (Vec2 p : pts) {
    sx += p.x;
    sy += p.y;
  }
  const double n = static_cast<double>(pts.size());
  m.mean = {sx / n, sy / n};
  if (pts.size() == 1) {
    m.cov = {1e-2, 0.0, 0.0, 1e-2};
    return m;
  }
  double cxx = 0.0, cxy = 0.0, cyy = 0.0;
  for (Vec2 p : pts) {
    const double dx = p.x - m.mean.x, dy = p.y - m.mean.y;
    cxx += dx * dx;
    cxy += dx * dy;
    cyy += dy * dy;
  }
  m.cov = {cxx / n + 1e-4, cxy / n, cxy / n, cyy / n + 1e-4};
  return m;
}

inline LocationModel learn_location(std::span<const GroundTruthImage> data, ClassId z) {
  std::vector<Vec2> pts;
  for (const auto& img : data)
    for (const auto& s : img.samples)
      if (s.cls == z) pts.push_back(normalized_position(s.centroid, img.dims));
  require(!pts.empty(), "learn_location: class " + std::to_string(z) + " absent from training data");
  return fit_location(pts);
}

// ---------------------------------------------------------------------------
// Pairwise parameters

/// Sample mean / (1/N) variance, variance floored at 1e-6; a single sample
/// gets variance 1e-2.
inline DistanceModel fit_distance(std::span<const double> v) {
  require(!v.empty(), "fit_distance: no samples");
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  DistanceModel m{s / n, 1e-2};
  if (v.size() == 1) return m;
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.var = std::max(ss / n, 1e-6);
  return m;
}

/// Circular mean direction and the standard approximation of the
/// concentration, kappa = R(2 - R^2) / (1 - R^2), capped at kKappaMax.
inline AngleModel fit_von_mises(std::span<const double> angles) {
  require(!angles.empty(), "fit_von_mises: no samples");
  double sc = 0.0, ss = 0.0;
  for (double r : angles) {
    sc += std::cos(r);
    ss += std::sin(r);
  }
  const double rbar = std::hypot(sc, ss) / static_cast<double>(angles.size());
  double kappa = kKappaMax;
  if (rbar < 1.0) {
    kappa = rbar * (2.0 - rbar * rbar) / (1.0 - rbar * rbar);
    if (!(kappa <= kKappaMax)) kappa = kKappaMax;
  }
  return AngleModel{std::atan2(ss, sc), std::max(0.0, kappa)};
}

struct PairSamples {
  std::vector<double> distances;
  std::vector<double> angles;
};

/// Samples for one ordered class pair: every adjacent ground-truth part pair
/// whose classes are (zi, zj), taking the angle of the zi part relative to
/// the zj part.
inline PairSamples collect_pair_samples(std::span<const GroundTruthImage> data, ClassId zi, ClassId zj) {
  PairSamples ps;
  for (const auto& img : data) {
    for (auto [a, b] : img.parts.graph.edges) {
      for (int flip = 0; flip < 2; ++flip) {
        const int i = flip ? b : a, j = flip ? a : b;
        if (img.samples[i].cls != zi || img.samples[j].cls != zj) continue;
        const Vec2 mi = img.samples[i].centroid, mj = img.samples[j].centroid;
        ps.distances.push_back(normalized_distance(mi, mj, img.dims));
        ps.angles.push_back(relative_angle(mi, mj));
      }
    }
  }
  return ps;
}

inline PairModel learn_pairwise(std::span<const GroundTruthImage> data, ClassId zi, ClassId zj) {
  const PairSamples ps = collect_pair_samples(data, zi, zj);
  require(!ps.distances.empty(), "learn_pairwise: class pair never adjacent");
  return PairModel{fit_distance(ps.distances), fit_von_mises(ps.angles), ps.distances.size()};
}

// ---------------------------------------------------------------------------
// Weights

/// Raw (unweighted) potentials of every ground-truth part and edge.
struct RawPotentials {
  std::vector<UnaryTerms> unary;
  std::vector<BinaryTerms> binary;
};

inline RawPotentials ground_truth_potentials(std::span<const GroundTruthImage> data, const ClassModels& models) {
  RawPotentials raw;
  for (const auto& img : data) {
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
      const PartSample& s = img.samples[i];
      const ClassModel& m = models.at(s.cls);
      UnaryTerms t;
      t.appearance = appearance_potential(s.fg, s.band, m);
      const int part = static_cast<int>(i);
      t.shape = shape_potential(m.shape, s.centroid, s.bbox, img.dims, [&](int x, int y) {
        return img.parts.part_of_pixel[static_cast<std::size_t>(y) * img.dims.width + x] == part;
      });
      t.location = location_potential(s.centroid, m, img.dims);
      raw.unary.push_back(t);
    }
    for (auto [i, j] : img.parts.graph.edges)
      raw.binary.push_back(binary_terms(img.samples[i].centroid, img.samples[j].centroid, img.samples[i].cls,
                                        img.samples[j].cls, models, img.dims));
  }
  return raw;
}

/// Mean absolute value of each of the five potentials, floored at 1e-6.
inline std::array<double, 5> potential_scales(const RawPotentials& raw) {
  std::array<double, 5> sum{};
  for (const auto& u : raw.unary) {
    sum[0] += std::abs(u.appearance);
    sum[1] += std::abs(u.shape);
    sum[2] += std::abs(u.location);
  }
  for (const auto& b : raw.binary) {
    sum[3] += std::abs(b.distance);
    sum[4] += std::abs(b.angle);
  }
  std::array<double, 5> mean{};
  for (int k = 0; k < 5; ++k) {
    const double n = static_cast<double>(k < 3 ? raw.unary.size() : raw.binary.size());
    mean[k] = std::max(n > 0 ? sum[k] / n : 0.0, 1e-6);
  }
  return mean;
}

/// alpha_k proportional to 1 / mean|potential_k|, rescaled to sum to one.
inline Weights weights_from_scales(const std::array<double, 5>& mean) {
  Weights w;
  double total = 0.0;
  for (int k = 0; k < 5; ++k) {
    w.alpha[k] = 1.0 / mean[k];
    total += w.alpha[k];
  }
  for (auto& a : w.alpha) a /= total;
  return w;
}

inline Weights normalize_weights(std::span<const GroundTruthImage> data, const ClassModels& models) {
  return weights_from_scales(potential_scales(ground_truth_potentials(data, models)));
}

/// Estimates every parameter. Classes never observed are marked absent.
inline ClassModels learn_models(std::span<const GroundTruthImage> data, std::vector<std::string> class_names,
                                const TextonCodebook& codebook, const LearningOptions& opt) {
  ClassModels models;
  models.class_names = std::move(class_names);
  models.layout = opt.layout;
  models.narrowband_radius = opt.narrowband_radius;
  models.codebook = codebook;
  const std::size_t Z = models.class_names.size();
  models.classes.resize(Z);
  for (ClassId z = 0; z < Z; ++z) {
    ClassModel& cm = models.classes[z];
    cm.fg = QuadHistogram{opt.layout, std::vector<double>(opt.layout.size(), 0.0)};
    cm.bg = cm.fg;
    if (!class_observed(data, z)) continue;
    cm.present = true;
    for (const auto& img : data)
      for (const auto& s : img.samples) cm.part_samples += (s.cls == z);
    std::tie(cm.fg, cm.bg) = learn_appearance(data, z, opt.layout);
    cm.shape = learn_shape(data, z);
    cm.location = learn_location(data, z);
  }
  std::vector<double> all_distances;
  for (const auto& img : data)
    for (auto [i, j] : img.parts.graph.edges)
      all_distances.push_back(normalized_distance(img.samples[i].centroid, img.samples[j].centroid, img.dims));
  if (!all_distances.empty()) models.pooled_distance = fit_distance(all_distances);
  for (ClassId zi = 0; zi < Z; ++zi)
    for (ClassId zj = 0; zj < Z; ++zj) {
      const PairSamples ps = collect_pair_samples(data, zi, zj);
      if (ps.distances.empty()) continue;
      models.pairs[{zi, zj}] = PairModel{fit_distance(ps.distances), fit_von_mises(ps.angles), ps.distances.size()};
    }
  models.weights = normalize_weights(data, models);
  return models;
}

}  // namespace ps3
