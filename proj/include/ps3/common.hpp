#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ps3 {

/// Broad failure categories; the CLI maps them onto exit codes.
enum class ErrorKind { BadArgs, Io, Format };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what, ErrorKind kind = ErrorKind::BadArgs) {
  if (!cond) fail(kind, what);
}

using ClassId = std::uint16_t;
inline constexpr ClassId kVoid = 0xFFFF;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
  double norm() const { return std::hypot(x, y); }
};

struct Dims {
  int width = 0;
  int height = 0;

  std::size_t area() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double diagonal() const { return std::hypot(static_cast<double>(width), static_cast<double>(height)); }
  friend bool operator==(Dims a, Dims b) = default;
};

/// Inclusive integer rectangle; empty when x1 < x0.
struct BBox {
  int x0 = std::numeric_limits<int>::max();
  int y0 = std::numeric_limits<int>::max();
  int x1 = std::numeric_limits<int>::min();
  int y1 = std::numeric_limits<int>::min();

  friend bool operator==(const BBox&, const BBox&) = default;

  bool empty() const { return x1 < x0 || y1 < y0; }
  void add(int x, int y) {
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
  void add(const BBox& o) {
    if (o.empty()) return;
    add(o.x0, o.y0);
    add(o.x1, o.y1);
  }
};

/// Uniform double in [0,1) from the top 53 bits of a 64-bit engine. Used
/// instead of std::uniform_real_distribution so streams are identical across
/// standard libraries.
template <class Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
template <class Engine>
std::size_t uniform_index(Engine& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

template <class Engine>
double standard_normal(Engine& rng) {
  // Box-Muller; the second variate is discarded to keep the stream simple.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Median of a nonempty sample; the mean of the two middle values for even
/// sizes.
inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  return 0.5 * (*std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)) + hi);
}

/// Runs fn(i) for i in [0,n) on up to `threads` workers. Work is split into
/// fixed contiguous blocks so results never depend on the thread count.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  pool.reserve(threads);
  const std::size_t block = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * block;
    const std::size_t hi = std::min(n, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn, &err = errors[t]] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ps3
