// Small shared pieces: 2-vectors, symmetric 2x2 matrices, error types,
// a deterministic RNG, and a worker-pool parallel loop.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace distdiff {

inline constexpr const char* kGeneratorVersion = "distdiff-0.1.0";

// ---------------------------------------------------------------------------
// Errors. One base type so callers can catch everything from this library;
// the code distinguishes failure classes for exit-code mapping.
// ---------------------------------------------------------------------------

enum class ErrorCode {
  CorruptModel,
  DegenerateMetric,
  Instability,
  InvalidRequest,
  SourceOutsideRegion,
  IncompatibleDataset,
  InsufficientData,
  ChecksumMismatch,
  VersionMismatch,
  DegenerateChart,
  NotProjectivelyRelated,
  RecoveryFailed,
  NoArrival,
  IncompleteRecord,
  CflViolation,
  SeparationViolated,
  ConstructionBroken,
  Inconclusive,
  RequiresInstrumented,
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

// ---------------------------------------------------------------------------
// Vec2 / Mat2
// ---------------------------------------------------------------------------

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// Symmetric 2x2 matrix, stored as (a11, a12, a22).
struct Mat2 {
  double a11 = 1.0;
  double a12 = 0.0;
  double a22 = 1.0;

  static Mat2 identity() { return {1.0, 0.0, 1.0}; }

  double det() const { return a11 * a22 - a12 * a12; }
  double trace() const { return a11 + a22; }

  Vec2 mul(const Vec2& v) const {
    return {a11 * v.x + a12 * v.y, a12 * v.x + a22 * v.y};
  }
  /// Quadratic form v^T A v.
  double quad(const Vec2& v) const {
    return a11 * v.x * v.x + 2.0 * a12 * v.x * v.y + a22 * v.y * v.y;
  }
  Mat2 inverse() const {
    double d = det();
    if (!(std::abs(d) > 0.0))
      fail(ErrorCode::DegenerateMetric, "Mat2: singular matrix");
    return {a22 / d, -a12 / d, a11 / d};
  }
  bool spd(double tol = 0.0) const {
    return a11 > tol && det() > tol;
  }
  Mat2 operator+(const Mat2& o) const {
    return {a11 + o.a11, a12 + o.a12, a22 + o.a22};
  }
  Mat2 operator-(const Mat2& o) const {
    return {a11 - o.a11, a12 - o.a12, a22 - o.a22};
  }
  Mat2 operator*(double s) const { return {a11 * s, a12 * s, a22 * s}; }

  double frobenius() const {
    return std::sqrt(a11 * a11 + 2.0 * a12 * a12 + a22 * a22);
  }
  /// Eigenvalues, ascending.
  std::array<double, 2> eigenvalues() const {
    double m = 0.5 * trace();
    double r = std::sqrt(std::max(0.0, m * m - det()));
    return {m - r, m + r};
  }
};

inline double norm_in(const Mat2& g, const Vec2& v) {
  return std::sqrt(std::max(0.0, g.quad(v)));
}

/// Normalize v to unit length in metric g.
inline Vec2 normalized_in(const Mat2& g, const Vec2& v) {
  double n = norm_in(g, v);
  if (!(n > 0.0)) fail(ErrorCode::InvalidRequest, "cannot normalize zero vector");
  return v / n;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with hand-rolled distributions so that
// outputs are stable across standard libraries; seeds fully determine runs.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return n ? next_u64() % n : 0;  // modulo bias irrelevant at our scales
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// parallel_for: static partition over a worker pool. Bodies must be pure
// with respect to shared state except for their own output slots.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t workers = jobs > 0 ? std::size_t(jobs) : std::size_t(hw ? hw : 1);
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

// FNV-1a, used for model/content hashes in provenance headers.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// CRC-32 (IEEE), used as the dataset file trailer checksum.
inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

}  // namespace distdiff
