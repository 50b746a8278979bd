#pragma once

// Texton machinery: the 61-kernel Leung-Malik + Schmid filter bank, dense
// filter responses on the luminance channel, k-means codebook learning and
// assignment, and the four-channel Lab+texton histograms used by every
// appearance term.

#include <array>
#include <numeric>
#include <random>
#include <span>

#include "ps3/common.hpp"
#include "ps3/imaging.hpp"

namespace ps3 {

inline constexpr int kFilterRadius = 9;
inline constexpr int kFilterSide = 2 * kFilterRadius + 1;
inline constexpr int kNumFilters = 61;
inline constexpr int kNumTextons = 64;

enum class KernelKind { FirstDerivative, SecondDerivative, LoG, Gaussian, Schmid };

struct Kernel {
  KernelKind kind;
  double sigma = 0.0;
  int orientation = -1;  // 0..5 for oriented kernels (step of 30 degrees)
  std::array<double, kFilterSide * kFilterSide> taps{};

  double at(int dx, int dy) const { return taps[(dy + kFilterRadius) * kFilterSide + (dx + kFilterRadius)]; }
};

struct FilterBank {
  std::vector<Kernel> kernels;
};

namespace detail {

inline double gauss1d(double sigma, double x, int order) {
  const double var = sigma * sigma;
  const double g = std::exp(-x * x / (2.0 * var)) / (std::sqrt(2.0 * M_PI) * sigma);
  switch (order) {
    case 0: return g;
    case 1: return -g * x / var;
    default: return g * (x * x - var) / (var * var);
  }
}

inline void normalize_kernel(Kernel& k, bool zero_mean) {
  if (zero_mean) {
    const double mean = std::accumulate(k.taps.begin(), k.taps.end(), 0.0) / k.taps.size();
    for (auto& t : k.taps) t -= mean;
  }
  double l1 = 0.0;
  for (double t : k.taps) l1 += std::abs(t);
  for (auto& t : k.taps) t /= l1;
}

template <class F>
Kernel sample_kernel(KernelKind kind, double sigma, int orientation, F&& f) {
  Kernel k{kind, sigma, orientation, {}};
  for (int dy = -kFilterRadius; dy <= kFilterRadius; ++dy)
    for (int dx = -kFilterRadius; dx <= kFilterRadius; ++dx)
      k.taps[(dy + kFilterRadius) * kFilterSide + (dx + kFilterRadius)] = f(double(dx), double(dy));
  return k;
}

}  // namespace detail

/// The fixed 61-kernel bank: 36 elongated (3:1) first/second Gaussian
/// derivatives at 6 orientations and scales {1, sqrt2, 2}, 8 LoG at
/// {1, sqrt2, 2, 2sqrt2} x {1, 3}, 4 Gaussians at {1, sqrt2, 2, 2sqrt2}, and
/// the 13 isotropic Schmid kernels. All 19x19, L1-normalized; all but the
/// Gaussians are zero-mean.
inline FilterBank build_filter_bank() {
  FilterBank bank;
  const std::array<double, 4> scales = {1.0, std::sqrt(2.0), 2.0, 2.0 * std::sqrt(2.0)};

  for (int s = 0; s < 3; ++s) {
    for (int order = 1; order <= 2; ++order) {
      for (int o = 0; o < 6; ++o) {
        const double theta = M_PI * o / 6.0;
        const double c = std::cos(theta), sn = std::sin(theta);
        const double sigma = scales[s];
        auto k = detail::sample_kernel(order == 1 ? KernelKind::FirstDerivative : KernelKind::SecondDerivative, sigma,
                                       o, [&](double x, double y) {
                                         const double u = c * x - sn * y;
                                         const double v = sn * x + c * y;
                                         return detail::gauss1d(3.0 * sigma, u, 0) * detail::gauss1d(sigma, v, order);
                                       });
        detail::normalize_kernel(k, true);
        bank.kernels.push_back(k);
      }
    }
  }
  for (double mult : {1.0, 3.0}) {
    for (double base : scales) {
      const double sigma = base * mult;
      auto k = detail::sample_kernel(KernelKind::LoG, sigma, -1, [&](double x, double y) {
        const double r2 = x * x + y * y, var = sigma * sigma;
        return (r2 - 2.0 * var) / (var * var) * std::exp(-r2 / (2.0 * var));
      });
      detail::normalize_kernel(k, true);
      bank.kernels.push_back(k);
    }
  }
  for (double sigma : scales) {
    auto k = detail::sample_kernel(KernelKind::Gaussian, sigma, -1, [&](double x, double y) {
      return std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
    });
    detail::normalize_kernel(k, false);
    bank.kernels.push_back(k);
  }
  const std::array<std::pair<double, double>, 13> schmid = {{{2, 1}, {4, 1}, {4, 2}, {6, 1}, {6, 2}, {6, 3}, {8, 1},
                                                             {8, 2}, {8, 3}, {10, 1}, {10, 2}, {10, 3}, {10, 4}}};
  for (auto [sigma, tau] : schmid) {
    auto k = detail::sample_kernel(KernelKind::Schmid, sigma, -1, [&](double x, double y) {
      const double r = std::hypot(x, y);
      return std::cos(M_PI * tau * r / sigma) * std::exp(-r * r / (2.0 * sigma * sigma));
    });
    detail::normalize_kernel(k, true);
    bank.kernels.push_back(k);
  }
  return bank;
}

/// Dense per-pixel response vectors, pixel-major: values[p * channels + k].
struct ResponseStack {
  Dims dims;
  int channels = 0;
  std::vector<double> values;

  std::span<const double> at(std::size_t pixel) const {
    return {values.data() + pixel * channels, static_cast<std::size_t>(channels)};
  }
  std::size_t pixels() const { return dims.area(); }
};

/// Index into [0,n) under whole-sample mirroring (reflect-101), valid for any
/// offset.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Convolution of the L channel with every kernel (reflect-101 borders):
/// r(x) = sum_t k(t) L(x - t).
inline ResponseStack filter_responses(const LabImage& lab, const FilterBank& bank) {
  const int W = lab.dims.width, H = lab.dims.height;
  require(W > 0 && H > 0, "filter_responses: empty image");
  const int R = kFilterRadius;
  const int PW = W + 2 * R, PH = H + 2 * R;
  std::vector<double> padded(static_cast<std::size_t>(PW) * PH);
  for (int y = 0; y < PH; ++y)
    for (int x = 0; x < PW; ++x)
      padded[static_cast<std::size_t>(y) * PW + x] = lab.L[static_cast<std::size_t>(reflect_index(y - R, H)) * W +
                                                            reflect_index(x - R, W)];

  const int K = static_cast<int>(bank.kernels.size());
  ResponseStack out{lab.dims, K, std::vector<double>(lab.dims.area() * K)};
  std::vector<double> plane(static_cast<std::size_t>(W) * H);
  for (int k = 0; k < K; ++k) {
    const Kernel& ker = bank.kernels[k];
    std::fill(plane.begin(), plane.end(), 0.0);
    for (int y = 0; y < H; ++y) {
      double* dst = plane.data() + static_cast<std::size_t>(y) * W;
      for (int dy = -R; dy <= R; ++dy) {
        // L(x - t) lives at padded (x + R - dx, y + R - dy).
        const double* row = padded.data() + static_cast<std::size_t>(y + R - dy) * PW + R;
        for (int dx = -R; dx <= R; ++dx) {
          const double w = ker.at(dx, dy);
          const double* src = row - dx;
          for (int x = 0; x < W; ++x) dst[x] += w * src[x];
        }
      }
    }
    for (std::size_t p = 0; p < plane.size(); ++p) out.values[p * K + k] = plane[p];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Texton codebook

struct TextonCodebook {
  int k = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> centers;  // k * dim, row-major

  std::span<const double> center(int i) const {
    return {centers.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  friend bool operator==(const TextonCodebook&, const TextonCodebook&) = default;
};

struct KMeansOptions {
  int k = kNumTextons;
  std::uint64_t seed = 1;
  std::size_t max_samples = 100000;
  int max_iterations = 100;
  double tolerance = 1e-6;
};

struct KMeansResult {
  TextonCodebook codebook;
  std::vector<double> objective_trace;  // after each assignment step
  int iterations = 0;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// k-means with k-means++ seeding over a flat sample matrix (n x dim).
/// Empty clusters are re-seeded at the point farthest from its center,
/// which keeps the objective non-increasing.
inline KMeansResult kmeans(const std::vector<double>& data, int dim, const KMeansOptions& opt) {
  require(dim > 0 && data.size() % dim == 0, "kmeans: malformed sample matrix");
  const std::size_t n = data.size() / dim;
  const int k = opt.k;
  require(k >= 1, "kmeans: k must be positive");
  {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto row = [&](std::size_t i) { return data.data() + i * dim; };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::lexicographical_compare(row(a), row(a) + dim, row(b), row(b) + dim);
    });
    std::size_t distinct = n ? 1 : 0;
    for (std::size_t i = 1; i < n && distinct < static_cast<std::size_t>(k); ++i)
      if (!std::equal(row(order[i]), row(order[i]) + dim, row(order[i - 1]))) ++distinct;
    if (distinct < static_cast<std::size_t>(k))
      fail(ErrorKind::BadArgs, "kmeans: fewer distinct samples (" + std::to_string(distinct) + ") than k=" +
                                   std::to_string(k));
  }

  std::mt19937_64 rng(opt.seed);
  std::vector<double> centers(static_cast<std::size_t>(k) * dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto point = [&](std::size_t i) { return data.data() + i * dim; };

  std::size_t first = uniform_index(rng, n);
  std::copy_n(point(first), dim, centers.begin());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(point(i), centers.data() + (c - 1) * dim, dim));
      total += d2[i];
    }
    double target = uniform01(rng) * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      target -= d2[i];
      if (target < 0.0) break;
    }
    std::copy_n(point(pick), dim, centers.begin() + static_cast<std::ptrdiff_t>(c) * dim);
  }

  KMeansResult res;
  std::vector<int> assign(n, 0);
  std::vector<double> best(n);
  std::vector<double> sums(centers.size());
  std::vector<std::size_t> counts(k);
  for (int it = 0; it < opt.max_iterations; ++it) {
    double objective = 0.0;
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      int bi = 0;
      double bd = detail::sq_dist(point(i), centers.data(), dim);
      for (int c = 1; c < k; ++c) {
        const double d = detail::sq_dist(point(i), centers.data() + static_cast<std::size_t>(c) * dim, dim);
        if (d < bd) {
          bd = d;
          bi = c;
        }
      }
      assign[i] = bi;
      best[i] = bd;
      ++counts[bi];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[assign[i]] > 1 && (far == n || best[i] > best[far])) far = i;
      if (far == n) break;
      --counts[assign[far]];
      assign[far] = c;
      best[far] = 0.0;
      counts[c] = 1;
      std::copy_n(point(far), dim, centers.begin() + static_cast<std::ptrdiff_t>(c) * dim);
    }
    for (std::size_t i = 0; i < n; ++i) objective += best[i];
    res.objective_trace.push_back(objective);

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* s = sums.data() + static_cast<std::size_t>(assign[i]) * dim;
      const double* p = point(i);
      for (int j = 0; j < dim; ++j) s[j] += p[j];
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      double* ctr = centers.data() + static_cast<std::size_t>(c) * dim;
      const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
      double m = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double v = s[j] / static_cast<double>(counts[c]);
        m += (v - ctr[j]) * (v - ctr[j]);
        ctr[j] = v;
      }
      moved = std::max(moved, std::sqrt(m));
    }
    res.iterations = it + 1;
    if (moved < opt.tolerance) break;
  }
  res.codebook = TextonCodebook{k, dim, opt.seed, std::move(centers)};
  return res;
}

/// Pools (optionally subsampled) response vectors from all stacks and runs
/// k-means. At most `max_samples` pixels are drawn uniformly without
/// replacement.
inline KMeansResult train_textons(std::span<const ResponseStack* const> stacks, const KMeansOptions& opt) {
  require(!stacks.empty(), "train_textons: no response stacks");
  const int dim = stacks.front()->channels;
  std::size_t total = 0;
  for (const auto* s : stacks) {
    require(s->channels == dim, "train_textons: dimensionality mismatch between stacks");
    total += s->pixels();
  }
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (stack, pixel)
  where.reserve(total);
  for (std::size_t s = 0; s < stacks.size(); ++s)
    for (std::size_t p = 0; p < stacks[s]->pixels(); ++p) where.emplace_back(s, p);
  if (total > opt.max_samples) {
    std::mt19937_64 rng(opt.seed ^ 0x9E3779B97F4A7C15ULL);
    for (std::size_t i = 0; i < opt.max_samples; ++i) {
      const std::size_t j = i + uniform_index(rng, total - i);
      std::swap(where[i], where[j]);
    }
    where.resize(opt.max_samples);
    std::sort(where.begin(), where.end());
  }
  std::vector<double> data;
  data.reserve(where.size() * dim);
  for (auto [s, p] : where) {
    auto v = stacks[s]->at(p);
    data.insert(data.end(), v.begin(), v.end());
  }
  return kmeans(data, dim, opt);
}

/// Per-pixel texton index in [0, k).
struct TextonMap {
  Dims dims;
  std::vector<std::uint8_t> index;
};

/// Nearest center in Euclidean distance, ties toward the lowest index.
inline int nearest_center(std::span<const double> v, const TextonCodebook& cb) {
  require(static_cast<int>(v.size()) == cb.dim, "assign_textons: dimensionality mismatch");
  int bi = 0;
  double bd = detail::sq_dist(v.data(), cb.centers.data(), cb.dim);
  for (int c = 1; c < cb.k; ++c) {
    const double d = detail::sq_dist(v.data(), cb.centers.data() + static_cast<std::size_t>(c) * cb.dim, cb.dim);
    if (d < bd) {
      bd = d;
      bi = c;
    }
  }
  return bi;
}

inline TextonMap assign_textons(const ResponseStack& stack, const TextonCodebook& cb) {
  require(stack.channels == cb.dim, "assign_textons: dimensionality mismatch");
  require(cb.k >= 1 && cb.k <= 256, "assign_textons: codebook size out of range");
  TextonMap map{stack.dims, std::vector<std::uint8_t>(stack.pixels())};
  for (std::size_t p = 0; p < stack.pixels(); ++p) map.index[p] = static_cast<std::uint8_t>(nearest_center(stack.at(p), cb));
  return map;
}

// ---------------------------------------------------------------------------
// Lab + texton histograms

/// Bin layout of a four-channel histogram: L, a, b with `lab_bins` bins each,
/// then `texton_bins` texton bins.
struct HistogramLayout {
  int lab_bins = 32;
  int texton_bins = kNumTextons;

  int size() const { return 3 * lab_bins + texton_bins; }
  int channel_offset(int p) const { return p < 3 ? p * lab_bins : 3 * lab_bins; }
  int channel_size(int p) const { return p < 3 ? lab_bins : texton_bins; }
  friend bool operator==(HistogramLayout, HistogramLayout) = default;

  int l_bin(double L) const { return std::clamp(static_cast<int>(std::floor(L / 100.0 * lab_bins)), 0, lab_bins - 1); }
  /// a and b are binned over [-128, 128].
  int ab_bin(double v) const {
    return std::clamp(static_cast<int>(std::floor((v + 128.0) / 256.0 * lab_bins)), 0, lab_bins - 1);
  }
};

/// Raw per-bin pixel counts for a pixel set; `mass` is the pixel count (each
/// pixel contributes exactly one count to every channel). Counts are whole
/// numbers stored as doubles, so merges and removals are exact.
struct HistogramCounts {
  HistogramLayout layout;
  std::vector<double> counts;
  double mass = 0.0;

  HistogramCounts() = default;
  explicit HistogramCounts(HistogramLayout l) : layout(l), counts(l.size(), 0.0) {}

  HistogramCounts& operator+=(const HistogramCounts& o) {
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    mass += o.mass;
    return *this;
  }
  HistogramCounts& operator-=(const HistogramCounts& o) {
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] -= o.counts[i];
    mass -= o.mass;
    return *this;
  }
  friend bool operator==(const HistogramCounts&, const HistogramCounts&) = default;
};

/// Four normalized channel histograms concatenated in layout order.
struct QuadHistogram {
  HistogramLayout layout;
  std::vector<double> bins;

  std::span<const double> channel(int p) const {
    return {bins.data() + layout.channel_offset(p), static_cast<std::size_t>(layout.channel_size(p))};
  }
  friend bool operator==(const QuadHistogram&, const QuadHistogram&) = default;
};

inline void add_pixel(HistogramCounts& h, const LabImage& lab, const TextonMap& textons, std::size_t p) {
  const auto& l = h.layout;
  h.counts[l.l_bin(lab.L[p])] += 1.0;
  h.counts[l.lab_bins + l.ab_bin(lab.a[p])] += 1.0;
  h.counts[2 * l.lab_bins + l.ab_bin(lab.b[p])] += 1.0;
  require(textons.index[p] < l.texton_bins, "texton index exceeds histogram layout");
  h.counts[3 * l.lab_bins + textons.index[p]] += 1.0;
  h.mass += 1.0;
}

template <class PixelRange>
HistogramCounts count_pixels(const PixelRange& pixels, const LabImage& lab, const TextonMap& textons,
                             HistogramLayout layout) {
  HistogramCounts h(layout);
  for (auto p : pixels) add_pixel(h, lab, textons, static_cast<std::size_t>(p));
  return h;
}

inline QuadHistogram normalize(const HistogramCounts& h) {
  require(h.mass > 0.0, "cannot normalize an empty histogram");
  QuadHistogram q{h.layout, std::vector<double>(h.counts.size())};
  const double inv = 1.0 / h.mass;
  for (std::size_t i = 0; i < h.counts.size(); ++i) q.bins[i] = h.counts[i] * inv;
  return q;
}

/// Normalized histogram of a nonempty pixel set (linear pixel indices).
template <class PixelRange>
QuadHistogram quad_histogram(const PixelRange& pixels, const LabImage& lab, const TextonMap& textons,
                             HistogramLayout layout = {}) {
  const HistogramCounts h = count_pixels(pixels, lab, textons, layout);
  require(h.mass > 0.0, "quad_histogram: empty pixel set");
  return normalize(h);
}

/// Histogram intersection summed over the four channels, in [0, 4].
inline double hist_similarity(const QuadHistogram& h1, const QuadHistogram& h2) {
  require(h1.layout == h2.layout && h1.bins.size() == h2.bins.size(), "hist_similarity: bin layout mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h1.bins.size(); ++i) s += std::min(h1.bins[i], h2.bins[i]);
  return s;
}

/// Same as hist_similarity(model, normalize(counts)) without materializing
/// the normalized histogram; 0 for empty counts.
inline double hist_similarity(const QuadHistogram& model, const HistogramCounts& counts) {
  require(model.layout == counts.layout, "hist_similarity: bin layout mismatch");
  if (counts.mass <= 0.0) return 0.0;
  const double inv = 1.0 / counts.mass;
  double s = 0.0;
  for (std::size_t i = 0; i < model.bins.size(); ++i) s += std::min(model.bins[i], counts.counts[i] * inv);
  return s;
}

}  // namespace ps3
