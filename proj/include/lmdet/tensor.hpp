#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lmdet/error.hpp"

namespace lmdet {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and assume a LE host");

// Dense row-major NCHW tensor of doubles. Operations never mutate their
// inputs; writers allocate fresh outputs, so read-only sharing across
// threads is safe.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int n, int c, int h, int w) { resize(n, c, h, w); }

  void resize(int n, int c, int h, int w) {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      fail(ErrorClass::shape, "negative tensor dimension");
    n_ = n; c_ = c; h_ = h; w_ = w;
    data_.assign(static_cast<size_t>(n) * c * h * w, 0.0);
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  size_t index(int n, int c, int y, int x) const {
    return ((static_cast<size_t>(n) * c_ + c) * h_ + y) * w_ + x;
  }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  // Pointer to the start of one (n, c) plane.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  bool same_shape(const Tensor4& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," +
           std::to_string(h_) + "," + std::to_string(w_) + ")";
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

inline void ensure_finite(const Tensor4& t, const std::string& what) {
  if (!t.all_finite())
    fail(ErrorClass::numeric, "non-finite values in " + what + " " + t.shape_str());
}

// ---------------------------------------------------------------------------
// Seeded deterministic RNG: xoshiro256++ with splitmix64 seeding. Same seed
// gives the same sequence on every platform (64-bit integer arithmetic only).
// Normal deviates come from Box-Muller on the uniform stream.
// ---------------------------------------------------------------------------
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    seed_ = seed;
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
    have_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller (pairwise, spare cached in the state).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Derive an independent stream for a named purpose; deterministic in
  // (seed, label).
  SeededRng derive(uint64_t label) const {
    uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull * (label + 1));
    return SeededRng(splitmix64(x));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[uniform_index(i)]);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t seed_ = 0;
  uint64_t s_[4] = {};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

// Channel concatenation; a's channels precede b's.
inline Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    fail(ErrorClass::shape,
         "concat_channels: mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor4 out(a.n(), a.c() + b.c(), a.h(), a.w());
  const size_t plane = static_cast<size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    std::memcpy(out.plane(n, 0), a.plane(n, 0), a.c() * plane * sizeof(double));
    std::memcpy(out.plane(n, a.c()), b.plane(n, 0), b.c() * plane * sizeof(double));
  }
  return out;
}

// Inverse of concat_channels: splits grad into the two input slots.
inline void split_channels(const Tensor4& g, int c_a, Tensor4& ga, Tensor4& gb) {
  if (c_a < 0 || c_a > g.c()) fail(ErrorClass::shape, "split_channels: bad split point");
  ga.resize(g.n(), c_a, g.h(), g.w());
  gb.resize(g.n(), g.c() - c_a, g.h(), g.w());
  const size_t plane = static_cast<size_t>(g.h()) * g.w();
  for (int n = 0; n < g.n(); ++n) {
    std::memcpy(ga.plane(n, 0), g.plane(n, 0), static_cast<size_t>(c_a) * plane * sizeof(double));
    std::memcpy(gb.plane(n, 0), g.plane(n, c_a),
                static_cast<size_t>(g.c() - c_a) * plane * sizeof(double));
  }
}

// out[n,c,y,x] = t[n,c,y,(w-1)-x]
inline Tensor4 flip_horizontal(const Tensor4& t) {
  Tensor4 out(t.n(), t.c(), t.h(), t.w());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < t.h(); ++y) {
        const double* src = t.plane(n, c) + static_cast<size_t>(y) * t.w();
        double* dst = out.plane(n, c) + static_cast<size_t>(y) * t.w();
        for (int x = 0; x < t.w(); ++x) dst[x] = src[t.w() - 1 - x];
      }
  return out;
}

// i.i.d. normal(0, scale^2) init; deterministic given the rng state.
inline Tensor4 randn_init(int n, int c, int h, int w, SeededRng& rng, double scale) {
  if (!(scale > 0.0)) fail(ErrorClass::numeric, "randn_init: scale must be positive");
  Tensor4 out(n, c, h, w);
  double* d = out.data();
  for (size_t i = 0; i < out.size(); ++i) d[i] = scale * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Debug dump format "T4v1": magic, four int32 LE dims, raw f64 LE values.
// ---------------------------------------------------------------------------

inline void dump_tensor(const Tensor4& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
  f.write("T4v1", 4);
  const int32_t dims[4] = {t.n(), t.c(), t.h(), t.w()};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!f) fail(ErrorClass::io, "short write: " + path);
}

inline Tensor4 load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::io, "cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "T4v1", 4) != 0)
    fail(ErrorClass::format, "bad tensor magic in " + path);
  int32_t dims[4];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!f || dims[0] < 0 || dims[1] < 0 || dims[2] < 0 || dims[3] < 0)
    fail(ErrorClass::format, "bad tensor dims in " + path);
  Tensor4 t(dims[0], dims[1], dims[2], dims[3]);
  f.read(reinterpret_cast<char*>(t.data()),
         static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!f) fail(ErrorClass::format, "truncated tensor payload in " + path);
  return t;
}

}  // namespace lmdet
