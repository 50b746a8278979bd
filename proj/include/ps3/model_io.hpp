#pragma once

// Binary model container. Byte layout is documented in docs/model_format.md.

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "ps3/model.hpp"

namespace ps3 {

inline constexpr char kModelMagic[4] = {'P', 'S', '3', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  void need(std::size_t k) const {
    if (n_ - pos_ < k) fail(ErrorKind::Format, "model file truncated");
  }
  const std::uint8_t* take(std::size_t k) {
    need(k);
    const std::uint8_t* r = p_ + pos_;
    pos_ += k;
    return r;
  }
  template <class T>
  T le() {
    const std::uint8_t* b = take(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
  }
  std::uint8_t u8() { return le<std::uint8_t>(); }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    const auto* b = take(n);
    return std::string(reinterpret_cast<const char*>(b), n);
  }
  bool done() const { return pos_ == n_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    c = crc32(c, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

using Section = std::pair<std::string, std::vector<std::uint8_t>>;

inline std::vector<std::uint8_t> write_container(std::uint32_t num_classes, std::uint32_t lab_bins,
                                                 std::uint32_t texton_bins, const std::vector<Section>& sections) {
  ByteWriter w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u32(num_classes);
  w.u32(lab_bins);
  w.u32(texton_bins);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) {
    w.bytes(tag.data(), 4);
    w.u64(payload.size());
    w.bytes(payload.data(), payload.size());
  }
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

struct Container {
  std::uint32_t num_classes = 0, lab_bins = 0, texton_bins = 0;
  std::map<std::string, std::vector<std::uint8_t>> sections;

  ByteReader section(const std::string& tag) const {
    auto it = sections.find(tag);
    if (it == sections.end()) fail(ErrorKind::Format, "model file missing section " + tag);
    return ByteReader(it->second.data(), it->second.size());
  }
};

inline Container read_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 5 * 4 + 4) fail(ErrorKind::Format, "model file truncated");
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) fail(ErrorKind::Format, "not a model file (bad magic)");
  ByteReader head(bytes.data() + 4, 4);
  const std::uint32_t version = head.u32();
  if (version != kModelVersion)
    fail(ErrorKind::Format, "model file version " + std::to_string(version) + " unsupported (expected " +
                                std::to_string(kModelVersion) + ")");
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.data() + body, 4);
  const std::uint32_t stored = tail.u32();
  if (crc32_of(bytes.first(body)) != stored) {
    // A short file usually fails here too; distinguish it by walking the structure.
    ByteReader r(bytes.data() + 8, bytes.size() - 8);
    try {
      r.take(12);
      const std::uint32_t n = r.u32();
      for (std::uint32_t s = 0; s < n; ++s) {
        r.take(4);
        r.take(r.u64());
      }
      if (r.remaining() < 4) fail(ErrorKind::Format, "model file truncated");
    } catch (const Error&) {
      fail(ErrorKind::Format, "model file truncated");
    }
    fail(ErrorKind::Format, "model file checksum mismatch");
  }
  Container c;
  ByteReader r(bytes.data() + 8, body - 8);
  c.num_classes = r.u32();
  c.lab_bins = r.u32();
  c.texton_bins = r.u32();
  const std::uint32_t n = r.u32();
  for (std::uint32_t s = 0; s < n; ++s) {
    const auto* tag = r.take(4);
    const std::uint64_t len = r.u64();
    const auto* payload = r.take(len);
    c.sections[std::string(reinterpret_cast<const char*>(tag), 4)] = std::vector<std::uint8_t>(payload, payload + len);
  }
  if (!r.done()) fail(ErrorKind::Format, "model file has trailing bytes");
  return c;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read failed: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

inline std::vector<std::uint8_t> codebook_payload(const TextonCodebook& cb) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(cb.k));
  w.u32(static_cast<std::uint32_t>(cb.dim));
  w.u64(cb.seed);
  w.f64s(cb.centers);
  return std::move(w.buffer());
}

inline TextonCodebook parse_codebook(ByteReader r) {
  TextonCodebook cb;
  cb.k = static_cast<int>(r.u32());
  cb.dim = static_cast<int>(r.u32());
  cb.seed = r.u64();
  cb.centers = r.f64s(static_cast<std::size_t>(cb.k) * cb.dim);
  if (!r.done()) fail(ErrorKind::Format, "malformed TEXT section");
  return cb;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_models(const ClassModels& m) {
  using detail::ByteWriter;
  const std::size_t B = static_cast<std::size_t>(m.layout.size());
  std::vector<detail::Section> sections;
  {
    ByteWriter w;
    w.i32(m.narrowband_radius);
    sections.emplace_back("CONF", std::move(w.buffer()));
  }
  {
    ByteWriter w;
    for (const auto& n : m.class_names) w.str(n);
    sections.emplace_back("NAME", std::move(w.buffer()));
  }
  {
    ByteWriter w;
    for (const auto& c : m.classes) {
      require(c.fg.bins.size() == B && c.bg.bins.size() == B, "serialize_models: histogram size mismatch");
      w.u8(c.present ? 1 : 0);
      w.u64(c.part_samples);
      w.f64s(c.fg.bins);
      w.f64s(c.bg.bins);
      w.f64s(c.shape.cells());
      w.f64(c.location.mean.x);
      w.f64(c.location.mean.y);
      w.f64s(c.location.cov);
    }
    sections.emplace_back("CLSM", std::move(w.buffer()));
  }
  {
    ByteWriter w;
    w.u64(m.pairs.size());
    for (const auto& [key, p] : m.pairs) {
      w.u16(key.first);
      w.u16(key.second);
      w.f64(p.distance.mean);
      w.f64(p.distance.var);
      w.f64(p.angle.mean_dir);
      w.f64(p.angle.kappa);
      w.u64(p.samples);
    }
    sections.emplace_back("PAIR", std::move(w.buffer()));
  }
  {
    ByteWriter w;
    w.f64(m.pooled_distance.mean);
    w.f64(m.pooled_distance.var);
    sections.emplace_back("POOL", std::move(w.buffer()));
  }
  sections.emplace_back("TEXT", detail::codebook_payload(m.codebook));
  {
    ByteWriter w;
    w.f64s(m.weights.alpha);
    sections.emplace_back("WGHT", std::move(w.buffer()));
  }
  return detail::write_container(static_cast<std::uint32_t>(m.classes.size()),
                                 static_cast<std::uint32_t>(m.layout.lab_bins),
                                 static_cast<std::uint32_t>(m.layout.texton_bins), sections);
}

inline ClassModels deserialize_models(std::span<const std::uint8_t> bytes) {
  const detail::Container c = detail::read_container(bytes);
  ClassModels m;
  m.layout = HistogramLayout{static_cast<int>(c.lab_bins), static_cast<int>(c.texton_bins)};
  const std::size_t B = static_cast<std::size_t>(m.layout.size());
  {
    auto r = c.section("CONF");
    m.narrowband_radius = r.i32();
  }
  {
    auto r = c.section("NAME");
    for (std::uint32_t z = 0; z < c.num_classes; ++z) m.class_names.push_back(r.str());
    if (!r.done()) fail(ErrorKind::Format, "malformed NAME section");
  }
  {
    auto r = c.section("CLSM");
    for (std::uint32_t z = 0; z < c.num_classes; ++z) {
      ClassModel cm;
      cm.present = r.u8() != 0;
      cm.part_samples = r.u64();
      cm.fg = QuadHistogram{m.layout, r.f64s(B)};
      cm.bg = QuadHistogram{m.layout, r.f64s(B)};
      cm.shape = ShapeMap(r.f64s(kShapeCells));
      cm.location.mean.x = r.f64();
      cm.location.mean.y = r.f64();
      for (auto& v : cm.location.cov) v = r.f64();
      m.classes.push_back(std::move(cm));
    }
    if (!r.done()) fail(ErrorKind::Format, "malformed CLSM section");
  }
  {
    auto r = c.section("PAIR");
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      const ClassId zi = r.u16(), zj = r.u16();
      PairModel p;
      p.distance.mean = r.f64();
      p.distance.var = r.f64();
      p.angle.mean_dir = r.f64();
      p.angle.kappa = r.f64();
      p.samples = r.u64();
      m.pairs[{zi, zj}] = p;
    }
    if (!r.done()) fail(ErrorKind::Format, "malformed PAIR section");
  }
  {
    auto r = c.section("POOL");
    m.pooled_distance.mean = r.f64();
    m.pooled_distance.var = r.f64();
  }
  m.codebook = detail::parse_codebook(c.section("TEXT"));
  {
    auto r = c.section("WGHT");
    for (auto& a : m.weights.alpha) a = r.f64();
  }
  return m;
}

inline void save_models(const ClassModels& m, const std::string& path) {
  detail::write_file_bytes(path, serialize_models(m));
}

inline ClassModels load_models(const std::string& path) { return deserialize_models(detail::read_file_bytes(path)); }

/// A codebook alone is stored in the same container with a TEXT section only.
inline std::vector<std::uint8_t> serialize_codebook(const TextonCodebook& cb) {
  return detail::write_container(0, 0, static_cast<std::uint32_t>(cb.k), {{"TEXT", detail::codebook_payload(cb)}});
}

inline TextonCodebook deserialize_codebook(std::span<const std::uint8_t> bytes) {
  return detail::parse_codebook(detail::read_container(bytes).section("TEXT"));
}

inline void save_codebook(const TextonCodebook& cb, const std::string& path) {
  detail::write_file_bytes(path, serialize_codebook(cb));
}

inline TextonCodebook load_codebook(const std::string& path) {
  return deserialize_codebook(detail::read_file_bytes(path));
}

}  // namespace ps3
