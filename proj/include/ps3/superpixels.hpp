#pragma once

// Basic elements: Felzenszwalb-Huttenlocher graph segmentation, element
// adjacency, centroids, pixel and element narrowbands.

#include <map>
#include <numeric>
#include <span>

#include "ps3/common.hpp"
#include "ps3/features.hpp"
#include "ps3/imaging.hpp"

namespace ps3 {

using ElementId = int;

struct Element {
  std::vector<std::uint32_t> pixels;  // linear indices, ascending
  double sum_x = 0.0;
  double sum_y = 0.0;
  BBox bbox;

  std::size_t size() const { return pixels.size(); }
  Vec2 centroid() const { return {sum_x / static_cast<double>(pixels.size()), sum_y / static_cast<double>(pixels.size())}; }
};

/// Superpixel decomposition of the lattice. Elements are pairwise disjoint,
/// cover every pixel and are 4-connected; adjacency is symmetric.
struct ElementPartition {
  Dims dims;
  std::vector<ElementId> element_of;       // per pixel
  std::vector<Element> elements;
  std::vector<std::vector<ElementId>> adjacency;  // sorted, 4-connectivity

  std::size_t size() const { return elements.size(); }
};

/// Mean pixel coordinate of a nonempty set of linear pixel indices.
template <class PixelRange>
Vec2 centroid(const PixelRange& pixels, Dims dims) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (auto p : pixels) {
    sx += static_cast<double>(static_cast<std::size_t>(p) % dims.width);
    sy += static_cast<double>(static_cast<std::size_t>(p) / dims.width);
    ++n;
  }
  require(n > 0, "centroid of an empty pixel set");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  std::size_t join(std::size_t a, std::size_t b, double w) {
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    internal_[a] = w;
    return a;
  }
  std::size_t size(std::size_t x) const { return size_[x]; }
  double internal(std::size_t x) const { return internal_[x]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
  std::vector<double> internal_;
};

/// Builds elements and 4-adjacency from a per-pixel label array whose labels
/// are already compact in [0, n).
inline ElementPartition assemble_partition(Dims dims, std::vector<ElementId> labels, std::size_t n) {
  ElementPartition part;
  part.dims = dims;
  part.elements.resize(n);
  part.adjacency.resize(n);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    Element& e = part.elements[labels[p]];
    const int x = static_cast<int>(p % dims.width), y = static_cast<int>(p / dims.width);
    e.pixels.push_back(static_cast<std::uint32_t>(p));
    e.sum_x += x;
    e.sum_y += y;
    e.bbox.add(x, y);
  }
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      const ElementId a = labels[static_cast<std::size_t>(y) * dims.width + x];
      if (x + 1 < dims.width) {
        const ElementId b = labels[static_cast<std::size_t>(y) * dims.width + x + 1];
        if (a != b) {
          part.adjacency[a].push_back(b);
          part.adjacency[b].push_back(a);
        }
      }
      if (y + 1 < dims.height) {
        const ElementId b = labels[static_cast<std::size_t>(y + 1) * dims.width + x];
        if (a != b) {
          part.adjacency[a].push_back(b);
          part.adjacency[b].push_back(a);
        }
      }
    }
  }
  for (auto& adj : part.adjacency) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  part.element_of = std::move(labels);
  return part;
}

/// Relabels arbitrary roots to compact ids in order of first appearance.
inline std::size_t compact_labels(std::vector<ElementId>& labels) {
  std::map<ElementId, ElementId> remap;
  for (auto& l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<ElementId>(remap.size()));
    l = it->second;
  }
  return remap.size();
}

}  // namespace detail

/// Graph-based segmentation on the 8-connected pixel grid with Euclidean RGB
/// edge weights, followed by the min-size merge pass. Components that are
/// only diagonally connected are then split into 4-connected pieces, and
/// undersized pieces produced by the split are absorbed into the 4-adjacent
/// element they share the longest border with.
inline ElementPartition segment_fh(const Image& image, double k_param, int min_size) {
  require(!image.empty(), "segment_fh: empty image");
  require(k_param >= 0.0 && min_size >= 1, "segment_fh: invalid parameters");
  const int W = image.width(), H = image.height();
  const std::size_t N = image.dims().area();

  struct Edge {
    float w;
    std::uint32_t a, b;
  };
  std::vector<Edge> edges;
  edges.reserve(N * 4);
  auto weight = [&](std::size_t p, std::size_t q) {
    const Rgb u = image.pixels()[p], v = image.pixels()[q];
    const float dr = float(u.r) - float(v.r), dg = float(u.g) - float(v.g), db = float(u.b) - float(v.b);
    return std::sqrt(dr * dr + dg * dg + db * db);
  };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      auto add = [&](int qx, int qy) {
        if (qx < 0 || qx >= W || qy < 0 || qy >= H) return;
        const std::size_t q = static_cast<std::size_t>(qy) * W + qx;
        edges.push_back({weight(p, q), static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(q)});
      };
      add(x + 1, y);
      add(x, y + 1);
      add(x + 1, y + 1);
      add(x + 1, y - 1);
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.w < r.w; });

  detail::DisjointSets sets(N);
  for (const Edge& e : edges) {
    std::size_t a = sets.find(e.a), b = sets.find(e.b);
    if (a == b) continue;
    const double ta = sets.internal(a) + k_param / static_cast<double>(sets.size(a));
    const double tb = sets.internal(b) + k_param / static_cast<double>(sets.size(b));
    if (e.w <= std::min(ta, tb)) sets.join(a, b, e.w);
  }
  for (const Edge& e : edges) {
    std::size_t a = sets.find(e.a), b = sets.find(e.b);
    if (a != b && (sets.size(a) < static_cast<std::size_t>(min_size) || sets.size(b) < static_cast<std::size_t>(min_size)))
      sets.join(a, b, std::max<double>({sets.internal(a), sets.internal(b), e.w}));
  }

  std::vector<ElementId> fh(N);
  for (std::size_t p = 0; p < N; ++p) fh[p] = static_cast<ElementId>(sets.find(p));

  // Split into 4-connected pieces.
  std::vector<ElementId> piece(N, -1);
  std::vector<std::size_t> piece_size;
  std::vector<ElementId> piece_parent;  // fh component of each piece
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < N; ++s) {
    if (piece[s] >= 0) continue;
    const ElementId id = static_cast<ElementId>(piece_size.size());
    piece_size.push_back(0);
    piece_parent.push_back(fh[s]);
    piece[s] = id;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++piece_size[id];
      const int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int i = 0; i < 4; ++i) {
        if (nx[i] < 0 || nx[i] >= W || ny[i] < 0 || ny[i] >= H) continue;
        const std::size_t q = static_cast<std::size_t>(ny[i]) * W + nx[i];
        if (piece[q] < 0 && fh[q] == fh[s]) {
          piece[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  std::map<ElementId, int> pieces_per_component;
  for (auto c : piece_parent) ++pieces_per_component[c];

  const std::size_t P = piece_size.size();
  detail::DisjointSets merged(P);
  for (std::size_t id = 0; id < P; ++id) {
    if (pieces_per_component[piece_parent[id]] < 2 || piece_size[id] >= static_cast<std::size_t>(min_size)) continue;
    const std::size_t root = merged.find(id);
    if (merged.size(root) >= static_cast<std::size_t>(min_size)) continue;
    std::map<std::size_t, std::size_t> border;
    for (std::size_t p = 0; p < N; ++p) {
      if (merged.find(piece[p]) != root) continue;
      const int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int i = 0; i < 4; ++i) {
        if (nx[i] < 0 || nx[i] >= W || ny[i] < 0 || ny[i] >= H) continue;
        const std::size_t other = merged.find(piece[static_cast<std::size_t>(ny[i]) * W + nx[i]]);
        if (other != root) ++border[other];
      }
    }
    if (border.empty()) continue;
    auto best = std::max_element(border.begin(), border.end(),
                                 [](const auto& l, const auto& r) { return l.second < r.second; });
    merged.join(root, best->first, 0.0);
  }

  std::vector<ElementId> labels(N);
  for (std::size_t p = 0; p < N; ++p) labels[p] = static_cast<ElementId>(merged.find(piece[p]));
  const std::size_t n = detail::compact_labels(labels);
  return detail::assemble_partition(image.dims(), std::move(labels), n);
}

/// Builds a partition directly from a per-pixel element id map (ids are
/// compacted in first-appearance order). Each id must form a 4-connected
/// region for the partition invariants to hold.
inline ElementPartition partition_from_ids(Dims dims, std::vector<ElementId> ids) {
  require(ids.size() == dims.area(), "partition_from_ids: size mismatch");
  const std::size_t n = detail::compact_labels(ids);
  return detail::assemble_partition(dims, std::move(ids), n);
}

/// Pixels outside `mask` within Chebyshev distance `radius` of a mask pixel.
/// `mask` is a per-pixel membership array.
inline std::vector<std::uint8_t> dilate_chebyshev(const std::vector<std::uint8_t>& mask, Dims dims, int radius) {
  const int W = dims.width, H = dims.height;
  std::vector<std::uint8_t> horiz(mask.size(), 0), out(mask.size(), 0);
  for (int y = 0; y < H; ++y) {
    int last = -1000000;  // last x with mask set, scanning left to right
    for (int x = 0; x < W; ++x) {
      if (mask[static_cast<std::size_t>(y) * W + x]) last = x;
      if (x - last <= radius) horiz[static_cast<std::size_t>(y) * W + x] = 1;
    }
    last = 1000000;
    for (int x = W - 1; x >= 0; --x) {
      if (mask[static_cast<std::size_t>(y) * W + x]) last = x;
      if (last - x <= radius) horiz[static_cast<std::size_t>(y) * W + x] = 1;
    }
  }
  for (int x = 0; x < W; ++x) {
    int last = -1000000;
    for (int y = 0; y < H; ++y) {
      if (horiz[static_cast<std::size_t>(y) * W + x]) last = y;
      if (y - last <= radius) out[static_cast<std::size_t>(y) * W + x] = 1;
    }
    last = 1000000;
    for (int y = H - 1; y >= 0; --y) {
      if (horiz[static_cast<std::size_t>(y) * W + x]) last = y;
      if (last - y <= radius) out[static_cast<std::size_t>(y) * W + x] = 1;
    }
  }
  return out;
}

/// Pixel narrowband of a nonempty part: every pixel not in the part within
/// Chebyshev distance `radius` of some part pixel, ascending linear indices.
template <class PixelRange>
std::vector<std::uint32_t> narrowband(const PixelRange& part_pixels, int radius, Dims dims) {
  std::vector<std::uint8_t> mask(dims.area(), 0);
  std::size_t n = 0;
  for (auto p : part_pixels) {
    mask[static_cast<std::size_t>(p)] = 1;
    ++n;
  }
  require(n > 0, "narrowband: empty part");
  const auto dil = dilate_chebyshev(mask, dims, radius);
  std::vector<std::uint32_t> band;
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (dil[p] && !mask[p]) band.push_back(static_cast<std::uint32_t>(p));
  return band;
}

/// For every element e, the sorted list of other elements with at least one
/// pixel within Chebyshev distance `radius` of a pixel of e. The relation is
/// symmetric. A part's element-granular narrowband is the union of these
/// lists over its elements, minus the part itself.
inline std::vector<std::vector<ElementId>> element_neighborhoods(const ElementPartition& part, int radius) {
  const int W = part.dims.width, H = part.dims.height;
  const std::size_t n = part.size();
  std::vector<std::vector<ElementId>> out(n);
  std::vector<std::size_t> stamp(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t e = 0; e < n; ++e) {
    const Element& el = part.elements[e];
    const int x0 = std::max(0, el.bbox.x0 - radius), x1 = std::min(W - 1, el.bbox.x1 + radius);
    const int y0 = std::max(0, el.bbox.y0 - radius), y1 = std::min(H - 1, el.bbox.y1 + radius);
    // Local dilation restricted to the element's padded bounding box.
    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    std::vector<std::uint8_t> local(static_cast<std::size_t>(bw) * bh, 0);
    for (auto p : el.pixels) {
      const int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      local[static_cast<std::size_t>(y - y0) * bw + (x - x0)] = 1;
    }
    const auto dil = dilate_chebyshev(local, Dims{bw, bh}, radius);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!dil[static_cast<std::size_t>(y - y0) * bw + (x - x0)]) continue;
        const ElementId f = part.element_of[static_cast<std::size_t>(y) * W + x];
        if (static_cast<std::size_t>(f) == e || stamp[f] == e) continue;
        stamp[f] = e;
        out[e].push_back(f);
      }
    }
    std::sort(out[e].begin(), out[e].end());
  }
  return out;
}

/// Per-element histogram counts and their normalized forms.
struct ElementFeatures {
  std::vector<HistogramCounts> counts;
  std::vector<QuadHistogram> histograms;
};

inline ElementFeatures element_features(const ElementPartition& part, const LabImage& lab, const TextonMap& textons,
                                        HistogramLayout layout) {
  ElementFeatures f;
  f.counts.reserve(part.size());
  f.histograms.reserve(part.size());
  for (const Element& e : part.elements) {
    f.counts.push_back(count_pixels(e.pixels, lab, textons, layout));
    f.histograms.push_back(normalize(f.counts.back()));
  }
  return f;
}

}  // namespace ps3
