#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lmdet/error.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

// Coordinate convention used everywhere: pixel centers sit at integer
// coordinates, origin at the top-left pixel center, and every frame change
// uses the endpoint-aligned (size-1) scaling so the last column/row of one
// frame maps exactly onto the last column/row of the other. Image flips and
// heatmap flips commute under this convention.

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Per-point decode flags.
enum : uint8_t {
  kDecodeOk = 0,
  kDecodeTie = 1,       // argmax not unique; tie rule applied
  kDecodeFallback = 2,  // dark fell back to the shifted decoder
  kEncodeOutOfFrame = 4,
};

struct LandmarkSet {
  std::vector<Point2> points;
  std::vector<uint8_t> visible;
  std::vector<uint8_t> flags;  // decode/encode diagnostics, kDecode*/kEncode*

  LandmarkSet() = default;
  explicit LandmarkSet(size_t n) : points(n), visible(n, 1), flags(n, 0) {}
  size_t size() const { return points.size(); }
};

struct GaussianSpec {
  double sigma = 6.0;  // input-frame pixels
  double amplitude = 1.0;
  double truncate_sigmas = 3.0;
};

// Per-keypoint heatmaps. stride_* is the real ratio (input_extent-1) /
// (heatmap_extent-1): heatmap column u sits at input x = u * stride_x, and
// stride_x*(w-1) lands on the last input column.
struct HeatmapStack {
  Tensor4 maps;  // (batch, N, h, w)
  double stride_x = 1.0;
  double stride_y = 1.0;
};

// Row-major 2x3 affine map [x'; y'] = A [x; y] + t.
struct AffineMap {
  // m = {a, b, tx, c, d, ty}
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Point2 apply(Point2 p) const {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }

  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  AffineMap inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-14) fail(ErrorClass::numeric, "AffineMap: singular map");
    AffineMap r;
    r.m[0] = m[4] / d;
    r.m[1] = -m[1] / d;
    r.m[3] = -m[3] / d;
    r.m[4] = m[0] / d;
    r.m[2] = -(r.m[0] * m[2] + r.m[1] * m[5]);
    r.m[5] = -(r.m[3] * m[2] + r.m[4] * m[5]);
    return r;
  }
};

// Composition: (a ∘ b)(p) = a(b(p)).
inline AffineMap compose(const AffineMap& a, const AffineMap& b) {
  AffineMap r;
  r.m[0] = a.m[0] * b.m[0] + a.m[1] * b.m[3];
  r.m[1] = a.m[0] * b.m[1] + a.m[1] * b.m[4];
  r.m[2] = a.m[0] * b.m[2] + a.m[1] * b.m[5] + a.m[2];
  r.m[3] = a.m[3] * b.m[0] + a.m[4] * b.m[3];
  r.m[4] = a.m[3] * b.m[1] + a.m[4] * b.m[4];
  r.m[5] = a.m[3] * b.m[2] + a.m[4] * b.m[5] + a.m[5];
  return r;
}

// Endpoint-aligned resize: scale (dst-1)/(src-1) per axis, so the last pixel
// center maps to the last pixel center.
inline AffineMap make_resize_map(int src_w, int src_h, int dst_w, int dst_h) {
  if (src_w <= 0 || src_h <= 0 || dst_w <= 0 || dst_h <= 0)
    fail(ErrorClass::shape, "make_resize_map: non-positive size");
  AffineMap r;
  r.m[0] = src_w > 1 ? static_cast<double>(dst_w - 1) / (src_w - 1) : 1.0;
  r.m[4] = src_h > 1 ? static_cast<double>(dst_h - 1) / (src_h - 1) : 1.0;
  return r;
}

inline AffineMap make_flip_map(int w) {
  AffineMap r;
  r.m[0] = -1.0;
  r.m[2] = static_cast<double>(w - 1);
  return r;
}

inline AffineMap make_translation(double tx, double ty) {
  AffineMap r;
  r.m[2] = tx;
  r.m[5] = ty;
  return r;
}

// Rotation (radians) and isotropic scale about a fixed center point.
inline AffineMap make_rot_scale_about(Point2 center, double radians, double scale) {
  const double c = std::cos(radians) * scale;
  const double s = std::sin(radians) * scale;
  AffineMap r;
  r.m[0] = c;
  r.m[1] = -s;
  r.m[3] = s;
  r.m[4] = c;
  r.m[2] = center.x - (c * center.x - s * center.y);
  r.m[5] = center.y - (s * center.x + c * center.y);
  return r;
}

inline LandmarkSet affine_apply(const AffineMap& map, const LandmarkSet& in) {
  if (std::abs(map.det()) < 1e-14) fail(ErrorClass::numeric, "affine_apply: singular map");
  LandmarkSet out = in;
  for (auto& p : out.points) p = map.apply(p);
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian encoding at continuous (unquantized) sub-pixel centers.
// ---------------------------------------------------------------------------

// Landmarks are given in the input frame; each map gets
// exp(-((x-ux)^2 + (y-uy)^2) / (2 sigma_hm^2)) with the center mapped to the
// heatmap frame by division by the stride and sigma scaled the same way.
// Invisible or out-of-frame landmarks produce all-zero maps (the latter also
// sets kEncodeOutOfFrame in the returned flags).
inline HeatmapStack encode_gaussian(const LandmarkSet& lms, const GaussianSpec& spec,
                                    int h, int w, double stride_x, double stride_y = -1.0,
                                    std::vector<uint8_t>* warn_flags = nullptr) {
  if (!(spec.sigma > 0.0)) fail(ErrorClass::numeric, "encode_gaussian: sigma must be positive");
  if (h <= 0 || w <= 0) fail(ErrorClass::shape, "encode_gaussian: empty map");
  if (stride_y <= 0.0) stride_y = stride_x;
  if (stride_x <= 0.0) fail(ErrorClass::shape, "encode_gaussian: non-positive stride");

  const int n = static_cast<int>(lms.size());
  HeatmapStack out;
  out.maps.resize(1, n, h, w);
  out.stride_x = stride_x;
  out.stride_y = stride_y;
  if (warn_flags) warn_flags->assign(n, 0);

  const double sx = spec.sigma / stride_x;
  const double sy = spec.sigma / stride_y;
  const double r = spec.truncate_sigmas;

  for (int j = 0; j < n; ++j) {
    if (!lms.visible[j]) continue;
    const double ux = lms.points[j].x / stride_x;
    const double uy = lms.points[j].y / stride_y;
    if (ux < 0.0 || ux > w - 1 || uy < 0.0 || uy > h - 1) {
      if (warn_flags) (*warn_flags)[j] |= kEncodeOutOfFrame;
      continue;
    }
    const int x_lo = std::max(0, static_cast<int>(std::ceil(ux - r * sx)));
    const int x_hi = std::min(w - 1, static_cast<int>(std::floor(ux + r * sx)));
    const int y_lo = std::max(0, static_cast<int>(std::ceil(uy - r * sy)));
    const int y_hi = std::min(h - 1, static_cast<int>(std::floor(uy + r * sy)));
    double* map = out.maps.plane(0, j);
    for (int y = y_lo; y <= y_hi; ++y) {
      const double dy = (y - uy) / sy;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = (x - ux) / sx;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r * r) continue;  // radial truncation
        map[static_cast<size_t>(y) * w + x] = spec.amplitude * std::exp(-0.5 * d2);
      }
    }
  }
  return out;
}

// Quantized-encoding baseline: the center is rounded to the nearest grid
// point before rendering. Exists to quantify the bias the unbiased encoder
// removes.
inline HeatmapStack encode_gaussian_quantized(const LandmarkSet& lms, const GaussianSpec& spec,
                                              int h, int w, double stride_x,
                                              double stride_y = -1.0) {
  if (stride_y <= 0.0) stride_y = stride_x;
  LandmarkSet snapped = lms;
  for (auto& p : snapped.points) {
    p.x = std::round(p.x / stride_x) * stride_x;
    p.y = std::round(p.y / stride_y) * stride_y;
  }
  return encode_gaussian(snapped, spec, h, w, stride_x, stride_y);
}

// ---------------------------------------------------------------------------
// Decoders. All three return landmarks in the input frame.
// ---------------------------------------------------------------------------

namespace detail {

struct Peak {
  int x = 0, y = 0;
  double value = 0.0;
  bool tie = false;
  bool all_zero = false;
};

// Grid argmax; ties resolved to the smallest (y, x).
inline Peak find_peak(const double* map, int h, int w) {
  Peak p;
  p.value = map[0];
  double lo = map[0];
  bool tie = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = map[static_cast<size_t>(y) * w + x];
      if (v > p.value) {
        p.value = v;
        p.x = x;
        p.y = y;
        tie = false;
      } else if (v == p.value && (y != p.y || x != p.x)) {
        tie = true;
      }
      if (v < lo) lo = v;
    }
  p.tie = tie;
  p.all_zero = (p.value == 0.0 && lo == 0.0);
  return p;
}

// 0.25-pixel shift toward the larger 4-neighbor, one axis at a time.
inline Point2 quarter_shift(const double* map, int h, int w, const Peak& p) {
  double sx = 0.0, sy = 0.0;
  const auto at = [&](int y, int x) { return map[static_cast<size_t>(y) * w + x]; };
  const double left = p.x > 0 ? at(p.y, p.x - 1) : -HUGE_VAL;
  const double right = p.x < w - 1 ? at(p.y, p.x + 1) : -HUGE_VAL;
  if (right > left) sx = 0.25;
  else if (left > right) sx = -0.25;
  const double up = p.y > 0 ? at(p.y - 1, p.x) : -HUGE_VAL;
  const double down = p.y < h - 1 ? at(p.y + 1, p.x) : -HUGE_VAL;
  if (down > up) sy = 0.25;
  else if (up > down) sy = -0.25;
  return {p.x + sx, p.y + sy};
}

// Separable Gaussian blur with a truncated, normalized kernel; used by the
// dark decoder's modulation step.
inline std::vector<double> blur_map(const double* map, int h, int w, double sigma,
                                    double truncate_sigmas) {
  const int radius = std::max(1, static_cast<int>(std::ceil(truncate_sigmas * sigma)));
  std::vector<double> k(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += k[i + radius];
  }
  for (double& v : k) v /= ksum;

  std::vector<double> tmp(static_cast<size_t>(h) * w, 0.0);
  std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += k[i + radius] * map[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += k[i + radius] * tmp[static_cast<size_t>(yy) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace detail

inline LandmarkSet decode_argmax(const HeatmapStack& hm) {
  const int n = hm.maps.c(), h = hm.maps.h(), w = hm.maps.w();
  if (hm.maps.n() != 1) fail(ErrorClass::shape, "decode: expected batch of 1");
  LandmarkSet out(n);
  for (int j = 0; j < n; ++j) {
    const auto p = detail::find_peak(hm.maps.plane(0, j), h, w);
    if (p.all_zero) {
      out.visible[j] = 0;
      continue;
    }
    if (p.tie) out.flags[j] |= kDecodeTie;
    out.points[j] = {p.x * hm.stride_x, p.y * hm.stride_y};
  }
  return out;
}

inline LandmarkSet decode_shifted(const HeatmapStack& hm) {
  const int n = hm.maps.c(), h = hm.maps.h(), w = hm.maps.w();
  if (hm.maps.n() != 1) fail(ErrorClass::shape, "decode: expected batch of 1");
  LandmarkSet out(n);
  for (int j = 0; j < n; ++j) {
    const double* map = hm.maps.plane(0, j);
    const auto p = detail::find_peak(map, h, w);
    if (p.all_zero) {
      out.visible[j] = 0;
      continue;
    }
    if (p.tie) out.flags[j] |= kDecodeTie;
    const Point2 q = detail::quarter_shift(map, h, w, p);
    out.points[j] = {q.x * hm.stride_x, q.y * hm.stride_y};
  }
  return out;
}

// Distribution-aware decode: second-order Taylor expansion of the
// log-heatmap around the argmax. Optional modulation smooths the map with a
// Gaussian of the encoder's sigma (scaled to the heatmap frame) and restores
// the peak value before taking logs. Boundary peaks and singular Hessians
// fall back to the quarter-shift decoder for that keypoint.
inline LandmarkSet decode_dark(const HeatmapStack& hm, const GaussianSpec& spec,
                               bool modulate = false) {
  const int n = hm.maps.c(), h = hm.maps.h(), w = hm.maps.w();
  if (hm.maps.n() != 1) fail(ErrorClass::shape, "decode: expected batch of 1");
  const double sigma_hm = spec.sigma / hm.stride_x;
  LandmarkSet out(n);
  std::vector<double> work;
  for (int j = 0; j < n; ++j) {
    const double* map = hm.maps.plane(0, j);
    const auto p = detail::find_peak(map, h, w);
    if (p.all_zero) {
      out.visible[j] = 0;
      continue;
    }
    if (p.tie) out.flags[j] |= kDecodeTie;

    const auto fallback = [&] {
      const Point2 q = detail::quarter_shift(map, h, w, p);
      out.points[j] = {q.x * hm.stride_x, q.y * hm.stride_y};
      out.flags[j] |= kDecodeFallback;
    };

    if (p.x <= 0 || p.x >= w - 1 || p.y <= 0 || p.y >= h - 1) {
      fallback();
      continue;
    }

    const double* vals = map;
    if (modulate) {
      work = detail::blur_map(map, h, w, sigma_hm, spec.truncate_sigmas);
      double mx = work[0];
      for (double v : work) mx = std::max(mx, v);
      if (mx > 0.0) {
        const double rescale = p.value / mx;
        for (double& v : work) v *= rescale;
      }
      vals = work.data();
    }

    const auto lg = [&](int y, int x) {
      return std::log(std::max(vals[static_cast<size_t>(y) * w + x], 1e-10));
    };
    const double l0 = lg(p.y, p.x);
    const double dx = 0.5 * (lg(p.y, p.x + 1) - lg(p.y, p.x - 1));
    const double dy = 0.5 * (lg(p.y + 1, p.x) - lg(p.y - 1, p.x));
    const double dxx = lg(p.y, p.x + 1) - 2.0 * l0 + lg(p.y, p.x - 1);
    const double dyy = lg(p.y + 1, p.x) - 2.0 * l0 + lg(p.y - 1, p.x);
    const double dxy = 0.25 * (lg(p.y + 1, p.x + 1) - lg(p.y + 1, p.x - 1) -
                               lg(p.y - 1, p.x + 1) + lg(p.y - 1, p.x - 1));
    const double det = dxx * dyy - dxy * dxy;
    if (std::abs(det) < 1e-12 || !std::isfinite(det)) {
      fallback();
      continue;
    }
    // delta = -H^{-1} grad, clamped to one pixel per axis
    double ox = -(dyy * dx - dxy * dy) / det;
    double oy = -(dxx * dy - dxy * dx) / det;
    ox = std::clamp(ox, -1.0, 1.0);
    oy = std::clamp(oy, -1.0, 1.0);
    out.points[j] = {(p.x + ox) * hm.stride_x, (p.y + oy) * hm.stride_y};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flip-test aggregation: un-flip the mirrored prediction, permute keypoint
// channels (identity by default), and average with the direct prediction.
// ---------------------------------------------------------------------------
inline HeatmapStack flip_average(const HeatmapStack& direct, const HeatmapStack& from_flipped,
                                 const std::vector<int>* swap = nullptr) {
  if (!direct.maps.same_shape(from_flipped.maps))
    fail(ErrorClass::shape, "flip_average: shape mismatch");
  const int n = direct.maps.c();
  std::vector<int> perm(n);
  if (swap) {
    if (static_cast<int>(swap->size()) != n)
      fail(ErrorClass::shape, "flip_average: permutation size mismatch");
    std::vector<uint8_t> seen(n, 0);
    for (int v : *swap) {
      if (v < 0 || v >= n || seen[v])
        fail(ErrorClass::shape, "flip_average: permutation is not a bijection");
      seen[v] = 1;
    }
    perm = *swap;
  } else {
    for (int i = 0; i < n; ++i) perm[i] = i;
  }

  const Tensor4 unflipped = flip_horizontal(from_flipped.maps);
  HeatmapStack out;
  out.maps.resize(direct.maps.n(), n, direct.maps.h(), direct.maps.w());
  out.stride_x = direct.stride_x;
  out.stride_y = direct.stride_y;
  const size_t plane = static_cast<size_t>(direct.maps.h()) * direct.maps.w();
  for (int b = 0; b < direct.maps.n(); ++b)
    for (int j = 0; j < n; ++j) {
      const double* a = direct.maps.plane(b, j);
      const double* f = unflipped.plane(b, perm[j]);
      double* o = out.maps.plane(b, j);
      for (size_t i = 0; i < plane; ++i) o[i] = 0.5 * (a[i] + f[i]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Quantization-bias measurement: mean distance from a uniform sub-pixel
// position to the nearest grid point with the given spacing. Closed form for
// spacing 1 is (1/6)(sqrt(2) + asinh(1)) ≈ 0.38260.
// ---------------------------------------------------------------------------
inline double quantization_bias(double stride, size_t n_samples, SeededRng& rng,
                                std::vector<double>* histogram = nullptr, int bins = 0) {
  if (!(stride > 0.0)) fail(ErrorClass::numeric, "quantization_bias: non-positive stride");
  if (n_samples == 0) fail(ErrorClass::data, "quantization_bias: zero samples");
  if (histogram && bins > 0) histogram->assign(bins, 0.0);
  const double r_max = stride * std::sqrt(0.5);
  double sum = 0.0;
  for (size_t i = 0; i < n_samples; ++i) {
    const double u = rng.uniform01() - 0.5;
    const double v = rng.uniform01() - 0.5;
    const double r = stride * std::sqrt(u * u + v * v);
    sum += r;
    if (histogram && bins > 0) {
      int b = static_cast<int>(r / r_max * bins);
      if (b >= bins) b = bins - 1;
      (*histogram)[b] += 1.0;
    }
  }
  return sum / static_cast<double>(n_samples);
}

inline double quantization_bias_closed_form() {
  return (std::sqrt(2.0) + std::asinh(1.0)) / 6.0;
}

// ---------------------------------------------------------------------------
// Image warping under the same coordinate convention. `map` sends source
// coordinates to destination coordinates; sampling inverts it per pixel and
// reads bilinearly, zero outside the source frame.
// ---------------------------------------------------------------------------
inline Tensor4 warp_image(const Tensor4& src, const AffineMap& map, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) fail(ErrorClass::shape, "warp_image: empty output");
  const AffineMap inv = map.inverse();
  Tensor4 out(src.n(), src.c(), out_h, out_w);
  for (int n = 0; n < src.n(); ++n)
    for (int c = 0; c < src.c(); ++c) {
      const double* sp = src.plane(n, c);
      double* op = out.plane(n, c);
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
          const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
          double v = 0.0;
          if (s.x >= -1.0 && s.x <= src.w() && s.y >= -1.0 && s.y <= src.h()) {
            const int x0 = static_cast<int>(std::floor(s.x));
            const int y0 = static_cast<int>(std::floor(s.y));
            const double fx = s.x - x0, fy = s.y - y0;
            const auto sample = [&](int yy, int xx) -> double {
              if (xx < 0 || xx >= src.w() || yy < 0 || yy >= src.h()) return 0.0;
              return sp[static_cast<size_t>(yy) * src.w() + xx];
            };
            v = sample(y0, x0) * (1 - fy) * (1 - fx) + sample(y0, x0 + 1) * (1 - fy) * fx +
                sample(y0 + 1, x0) * fy * (1 - fx) + sample(y0 + 1, x0 + 1) * fy * fx;
          }
          op[static_cast<size_t>(y) * out_w + x] = v;
        }
    }
  return out;
}

}  // namespace lmdet
