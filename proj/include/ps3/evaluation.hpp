#pragma once

// Pixel confusion matrices, accuracy summaries, objects / stuff grouping,
// result tables, and graph overlays.

#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "ps3/imaging.hpp"
#include "ps3/model.hpp"

namespace ps3 {

/// counts[i * n + j]: pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t size() const { return n_; }
  std::uint64_t operator()(std::size_t i, std::size_t j) const { return counts_[i * n_ + j]; }
  std::uint64_t& operator()(std::size_t i, std::size_t j) { return counts_[i * n_ + j]; }

  std::uint64_t row_total(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < n_; ++j) s += (*this)(i, j);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < n_; ++i) s += (*this)(i, i);
    return s;
  }
  bool present(std::size_t i) const { return row_total(i) > 0; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require(o.n_ == n_, "confusion matrices differ in size");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += o.counts_[k];
    return *this;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Adds every non-void gold pixel of the pair to `cm`.
inline ConfusionMatrix& accumulate(const LabelMap& gold, const LabelMap& pred, ConfusionMatrix& cm) {
  require(gold.dims() == pred.dims(), "accumulate: gold and prediction differ in size");
  for (std::size_t p = 0; p < gold.size(); ++p) {
    const ClassId g = gold[p];
    if (g == kVoid) continue;
    const ClassId q = pred[p];
    require(q != kVoid, "accumulate: prediction is void on a labeled pixel", ErrorKind::Format);
    require(g < cm.size() && q < cm.size(), "accumulate: class index exceeds matrix size", ErrorKind::Format);
    ++cm(g, q);
  }
  return cm;
}

inline double global_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  require(total > 0, "global_accuracy: empty confusion matrix");
  return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

/// Recall of class i in percent; requires the class to be present.
inline double class_recall(const ConfusionMatrix& cm, std::size_t i) {
  const std::uint64_t row = cm.row_total(i);
  require(row > 0, "class_recall: class absent from gold");
  return 100.0 * static_cast<double>(cm(i, i)) / static_cast<double>(row);
}

/// Mean per-class recall over classes present in the gold labels; `strict`
/// divides by the full class count instead (absent classes score 0).
inline double average_accuracy(const ConfusionMatrix& cm, bool strict = false) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    if (!cm.present(i)) continue;
    sum += class_recall(cm, i);
    ++present;
  }
  require(present > 0, "average_accuracy: no class present");
  return sum / static_cast<double>(strict ? cm.size() : present);
}

/// Mean per-class recall within each group; `groups[i]` names class i's group.
inline std::map<std::string, double> grouped_accuracy(const ConfusionMatrix& cm, const std::vector<std::string>& groups) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    if (!cm.present(i)) continue;
    require(i < groups.size() && !groups[i].empty(), "grouped_accuracy: class " + std::to_string(i) + " has no group");
    auto& [s, n] = acc[groups[i]];
    s += class_recall(cm, i);
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [g, sn] : acc) out[g] = sn.first / static_cast<double>(sn.second);
  return out;
}

inline std::string format_percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

/// `class,recall_percent` rows for present classes, then `global,` and
/// `average,` summary rows.
inline void write_accuracy_csv(std::ostream& os, const ConfusionMatrix& cm, const std::vector<std::string>& names,
                               bool strict = false) {
  os << "class,recall_percent\n";
  for (std::size_t i = 0; i < cm.size(); ++i)
    if (cm.present(i)) os << names.at(i) << ',' << format_percent(class_recall(cm, i)) << '\n';
  os << "global," << format_percent(global_accuracy(cm)) << '\n';
  os << "average," << format_percent(average_accuracy(cm, strict)) << '\n';
}

/// Aligned plain-text table, one column per method.
inline void write_accuracy_table(std::ostream& os, const std::vector<std::string>& names,
                                 const std::vector<std::pair<std::string, ConfusionMatrix>>& methods,
                                 bool strict = false) {
  std::size_t w = 8;
  for (const auto& n : names) w = std::max(w, n.size() + 2);
  os << std::left << std::setw(static_cast<int>(w)) << "class";
  for (const auto& [m, cm] : methods) os << std::right << std::setw(10) << m;
  os << '\n';
  auto present_anywhere = [&](std::size_t i) {
    return std::any_of(methods.begin(), methods.end(), [&](const auto& mc) { return mc.second.present(i); });
  };
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!present_anywhere(i)) continue;
    os << std::left << std::setw(static_cast<int>(w)) << names[i];
    for (const auto& [m, cm] : methods)
      os << std::right << std::setw(10) << (cm.present(i) ? format_percent(class_recall(cm, i)) : "-");
    os << '\n';
  }
  os << std::left << std::setw(static_cast<int>(w)) << "global";
  for (const auto& [m, cm] : methods) os << std::right << std::setw(10) << format_percent(global_accuracy(cm));
  os << '\n' << std::left << std::setw(static_cast<int>(w)) << "average";
  for (const auto& [m, cm] : methods) os << std::right << std::setw(10) << format_percent(average_accuracy(cm, strict));
  os << '\n';
}

// ---------------------------------------------------------------------------
// Overlay rendering

struct OverlayStyle {
  double alpha = 0.5;  // weight of the class color
  Rgb node_color{255, 255, 255};
  Rgb edge_color{0, 0, 0};
  int node_radius = 2;
};

inline void draw_line(Image& img, Vec2 a, Vec2 b, Rgb color) {
  int x0 = static_cast<int>(std::floor(a.x + 0.5)), y0 = static_cast<int>(std::floor(a.y + 0.5));
  const int x1 = static_cast<int>(std::floor(b.x + 0.5)), y1 = static_cast<int>(std::floor(b.y + 0.5));
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && y0 >= 0 && x0 < img.width() && y0 < img.height()) img.at(x0, y0) = color;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

/// Class colors blended over the image, graph edges as line segments between
/// part centroids, and square node markers at the centroids.
inline Image render_overlay(const Image& image, const LabelMap& pred, const SceneGraph& graph,
                            const std::vector<Vec2>& centroids, const Palette& palette, const OverlayStyle& style = {}) {
  require(image.dims() == pred.dims(), "render_overlay: image and labels differ in size");
  require(centroids.size() == graph.size(), "render_overlay: one centroid per node required");
  Image out = image;
  const double a = style.alpha;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const Rgb src = image.at(x, y);
      const Rgb c = palette.color_of(pred.at(x, y));
      auto mix = [a](std::uint8_t s, std::uint8_t t) {
        return static_cast<std::uint8_t>(std::clamp(std::floor((1.0 - a) * s + a * t + 0.5), 0.0, 255.0));
      };
      out.at(x, y) = Rgb{mix(src.r, c.r), mix(src.g, c.g), mix(src.b, c.b)};
    }
  for (auto [i, j] : graph.edges) draw_line(out, centroids[i], centroids[j], style.edge_color);
  for (const Vec2 c : centroids) {
    const int cx = static_cast<int>(std::floor(c.x + 0.5)), cy = static_cast<int>(std::floor(c.y + 0.5));
    for (int dy = -style.node_radius; dy <= style.node_radius; ++dy)
      for (int dx = -style.node_radius; dx <= style.node_radius; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (x >= 0 && y >= 0 && x < out.width() && y < out.height()) out.at(x, y) = style.node_color;
      }
  }
  return out;
}

}  // namespace ps3
