#pragma once

// Image and label-map containers, sRGB -> CIE Lab conversion, PPM/PNG I/O
// and the plain-text class palette.

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "ps3/common.hpp"

namespace ps3 {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(Rgb, Rgb) = default;
  friend auto operator<=>(Rgb, Rgb) = default;
};

/// 8-bit sRGB raster, row-major, interleaved.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {}) : dims_{width, height}, pixels_(dims_.area(), fill) {
    require(width >= 1 && height >= 1, "image dimensions must be positive");
  }

  int width() const { return dims_.width; }
  int height() const { return dims_.height; }
  Dims dims() const { return dims_; }
  bool empty() const { return pixels_.empty(); }

  Rgb& at(int x, int y) { return pixels_[index(x, y)]; }
  const Rgb& at(int x, int y) const { return pixels_[index(x, y)]; }
  const std::vector<Rgb>& pixels() const { return pixels_; }
  std::vector<Rgb>& pixels() { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * dims_.width + x; }

  Dims dims_;
  std::vector<Rgb> pixels_;
};

/// CIE L*a*b* planes (D65).
struct LabImage {
  Dims dims;
  std::vector<double> L, a, b;

  std::size_t size() const { return L.size(); }
};

/// Per-pixel class index, or kVoid for unlabeled pixels.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int width, int height, ClassId fill = kVoid) : dims_{width, height}, labels_(dims_.area(), fill) {
    require(width >= 1 && height >= 1, "label map dimensions must be positive");
  }

  int width() const { return dims_.width; }
  int height() const { return dims_.height; }
  Dims dims() const { return dims_; }

  ClassId& at(int x, int y) { return labels_[static_cast<std::size_t>(y) * dims_.width + x]; }
  ClassId at(int x, int y) const { return labels_[static_cast<std::size_t>(y) * dims_.width + x]; }
  ClassId& operator[](std::size_t i) { return labels_[i]; }
  ClassId operator[](std::size_t i) const { return labels_[i]; }
  const std::vector<ClassId>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  Dims dims_;
  std::vector<ClassId> labels_;
};

// ---------------------------------------------------------------------------
// Color conversion

namespace detail {

inline const std::array<double, 256>& srgb_linear_lut() {
  static const std::array<double, 256> lut = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double c = i / 255.0;
      t[i] = c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return lut;
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace detail

/// sRGB (two-piece gamma) -> XYZ (D65) -> L*a*b*.
inline std::array<double, 3> srgb_to_lab(Rgb px) {
  const auto& lut = detail::srgb_linear_lut();
  const double r = lut[px.r], g = lut[px.g], b = lut[px.b];
  const double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  // White point is the image of sRGB white, so neutral input maps to a = b = 0
  // and L stays within [0, 100].
  constexpr double Xn = 0.4124564 + 0.3575761 + 0.1804375;
  constexpr double Yn = 0.2126729 + 0.7151522 + 0.0721750;
  constexpr double Zn = 0.0193339 + 0.1191920 + 0.9503041;
  const double fx = detail::lab_f(X / Xn), fy = detail::lab_f(Y / Yn), fz = detail::lab_f(Z / Zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline LabImage rgb_to_lab(const Image& image) {
  LabImage lab;
  lab.dims = image.dims();
  const std::size_t n = image.dims().area();
  lab.L.resize(n);
  lab.a.resize(n);
  lab.b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = srgb_to_lab(image.pixels()[i]);
    lab.L[i] = v[0];
    lab.a[i] = v[1];
    lab.b[i] = v[2];
  }
  return lab;
}

// ---------------------------------------------------------------------------
// File I/O

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

inline Image decode_ppm(const std::vector<unsigned char>& bytes, const std::string& name) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > (1L << 30)) fail(ErrorKind::Format, name + ": PPM header value out of range");
    }
    if (!any) fail(ErrorKind::Format, name + ": malformed PPM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail(ErrorKind::Format, name + ": not a P6 PPM");
  pos = 2;
  const long w = read_int(), h = read_int(), maxval = read_int();
  if (w <= 0 || h <= 0) fail(ErrorKind::Format, name + ": zero-size image");
  if (maxval != 255) fail(ErrorKind::Format, name + ": only 8-bit PPM supported");
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) fail(ErrorKind::Format, name + ": truncated PPM data");
  Image img(static_cast<int>(w), static_cast<int>(h));
  std::memcpy(img.pixels().data(), bytes.data() + pos, need);
  return img;
}

inline Image decode_png(const std::filesystem::path& path) {
  png_image pimg;
  std::memset(&pimg, 0, sizeof pimg);
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pimg, path.string().c_str()))
    fail(ErrorKind::Format, path.string() + ": " + pimg.message);
  if (pimg.width == 0 || pimg.height == 0) {
    png_image_free(&pimg);
    fail(ErrorKind::Format, path.string() + ": zero-size image");
  }
  pimg.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(pimg.width), static_cast<int>(pimg.height));
  if (!png_image_finish_read(&pimg, nullptr, img.pixels().data(), 0, nullptr))
    fail(ErrorKind::Format, path.string() + ": " + pimg.message);
  return img;
}

inline void encode_png(const std::filesystem::path& path, const void* data, int w, int h, png_uint_32 format) {
  png_image pimg;
  std::memset(&pimg, 0, sizeof pimg);
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(w);
  pimg.height = static_cast<png_uint_32>(h);
  pimg.format = format;
  if (!png_image_write_to_file(&pimg, path.string().c_str(), 0, data, 0, nullptr))
    fail(ErrorKind::Io, path.string() + ": " + pimg.message);
}

}  // namespace detail

/// Loads a P6 PPM or a PNG (any bit depth / palette, converted to 8-bit RGB).
inline Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  const std::string ext = detail::lower_ext(path);
  if (ext == ".ppm") return detail::decode_ppm(detail::read_bytes(path), path.string());
  if (ext == ".png") return detail::decode_png(path);
  fail(ErrorKind::Format, path.string() + ": unsupported image format");
}

inline void save_image(const Image& image, const std::filesystem::path& path) {
  const std::string ext = detail::lower_ext(path);
  if (ext == ".ppm") {
    std::string header = "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    std::vector<unsigned char> buf(header.begin(), header.end());
    const auto* raw = reinterpret_cast<const unsigned char*>(image.pixels().data());
    buf.insert(buf.end(), raw, raw + image.pixels().size() * 3);
    detail::write_bytes(path, buf.data(), buf.size());
  } else if (ext == ".png") {
    detail::encode_png(path, image.pixels().data(), image.width(), image.height(), PNG_FORMAT_RGB);
  } else {
    fail(ErrorKind::Format, path.string() + ": unsupported image format");
  }
}

/// Writes a 16-bit grayscale PNG (used for element-id debug dumps).
inline void save_gray16_png(const std::vector<std::uint16_t>& values, Dims dims, const std::filesystem::path& path) {
  require(values.size() == dims.area(), "gray16 buffer size mismatch");
  detail::encode_png(path, values.data(), dims.width, dims.height, PNG_FORMAT_LINEAR_Y);
}

// ---------------------------------------------------------------------------
// Palette

/// Class table: one entry per class plus a reserved void color.
/// File format, one entry per line:
///   <index> <name> <r> <g> <b>
///   void <r> <g> <b>
class Palette {
 public:
  struct Entry {
    std::string name;
    Rgb color;
  };

  Palette() = default;
  Palette(std::vector<Entry> classes, Rgb void_color) : classes_(std::move(classes)), void_color_(void_color) {
    index_.clear();
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      require(!index_.contains(classes_[i].color), "duplicate palette color for class " + classes_[i].name,
              ErrorKind::Format);
      require(!(classes_[i].color == void_color_), "class color collides with void color", ErrorKind::Format);
      index_[classes_[i].color] = static_cast<ClassId>(i);
    }
  }

  std::size_t size() const { return classes_.size(); }
  const Entry& operator[](std::size_t i) const { return classes_[i]; }
  const std::vector<Entry>& classes() const { return classes_; }
  Rgb void_color() const { return void_color_; }

  Rgb color_of(ClassId c) const { return c == kVoid ? void_color_ : classes_.at(c).color; }

  /// Class for a color, kVoid for the void color; throws for unknown colors.
  ClassId lookup(Rgb c) const {
    if (c == void_color_) return kVoid;
    auto it = index_.find(c);
    if (it == index_.end())
      fail(ErrorKind::Format, "color (" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
                                  std::to_string(c.b) + ") not in palette");
    return it->second;
  }

  ClassId find(const std::string& name) const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
      if (classes_[i].name == name) return static_cast<ClassId>(i);
    fail(ErrorKind::Format, "unknown class name '" + name + "'");
  }

  static Palette parse(std::istream& in) {
    std::map<long, Entry> by_index;
    std::optional<Rgb> void_color;
    std::string line;
    int lineno = 0;
    auto channel = [&](long v) {
      require(v >= 0 && v <= 255, "palette line " + std::to_string(lineno) + ": channel out of range",
              ErrorKind::Format);
      return static_cast<std::uint8_t>(v);
    };
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string first;
      if (!(ls >> first)) continue;
      if (first == "void") {
        long r, g, b;
        require(static_cast<bool>(ls >> r >> g >> b), "palette line " + std::to_string(lineno) + ": bad void entry",
                ErrorKind::Format);
        void_color = Rgb{channel(r), channel(g), channel(b)};
        continue;
      }
      long idx, r, g, b;
      std::string name;
      try {
        idx = std::stol(first);
      } catch (...) {
        fail(ErrorKind::Format, "palette line " + std::to_string(lineno) + ": expected class index");
      }
      require(static_cast<bool>(ls >> name >> r >> g >> b), "palette line " + std::to_string(lineno) + ": malformed",
              ErrorKind::Format);
      require(!by_index.contains(idx), "palette: duplicate index " + std::to_string(idx), ErrorKind::Format);
      by_index[idx] = Entry{name, Rgb{channel(r), channel(g), channel(b)}};
    }
    require(void_color.has_value(), "palette: missing void entry", ErrorKind::Format);
    std::vector<Entry> classes;
    long expect = 0;
    for (auto& [idx, e] : by_index) {
      require(idx == expect++, "palette: class indices must be 0..n-1", ErrorKind::Format);
      classes.push_back(e);
    }
    require(!classes.empty() && classes.size() < kVoid, "palette: bad class count", ErrorKind::Format);
    return Palette(std::move(classes), *void_color);
  }

  static Palette load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open palette " + path.string());
    return parse(in);
  }

  std::string serialize() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < classes_.size(); ++i)
      os << i << ' ' << classes_[i].name << ' ' << int(classes_[i].color.r) << ' ' << int(classes_[i].color.g) << ' '
         << int(classes_[i].color.b) << '\n';
    os << "void " << int(void_color_.r) << ' ' << int(void_color_.g) << ' ' << int(void_color_.b) << '\n';
    return os.str();
  }

  void save(const std::filesystem::path& path) const {
    const std::string s = serialize();
    detail::write_bytes(path, s.data(), s.size());
  }

 private:
  std::vector<Entry> classes_;
  Rgb void_color_;
  std::map<Rgb, ClassId> index_;
};

inline LabelMap labels_from_colors(const Image& colors, const Palette& palette) {
  LabelMap out(colors.width(), colors.height());
  for (std::size_t i = 0; i < colors.pixels().size(); ++i) out[i] = palette.lookup(colors.pixels()[i]);
  return out;
}

inline Image colors_from_labels(const LabelMap& labels, const Palette& palette) {
  Image out(labels.width(), labels.height());
  for (std::size_t i = 0; i < labels.size(); ++i) out.pixels()[i] = palette.color_of(labels[i]);
  return out;
}

/// Decodes a palette-color (RGB or indexed) label PNG. When `expected` is
/// given the dimensions must match the paired image.
inline LabelMap load_label_map(const std::filesystem::path& path, const Palette& palette,
                               std::optional<Dims> expected = std::nullopt) {
  const Image colors = load_image(path);
  if (expected && !(colors.dims() == *expected))
    fail(ErrorKind::Format, path.string() + ": label map dimensions do not match the image");
  return labels_from_colors(colors, palette);
}

inline void save_label_map(const LabelMap& labels, const Palette& palette, const std::filesystem::path& path) {
  save_image(colors_from_labels(labels, palette), path);
}

}  // namespace ps3
