#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "lmdet/dataset.hpp"
#include "lmdet/error.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

// Synthetic data: grayscale images with one visually distinct concentric
// ring/blob pattern per landmark index, rendered at continuous sub-pixel
// centers. Radial profiles keep the intensity centroid on the annotated
// center and make every pattern rotation- and flip-invariant, so the
// training augmentations never change a pattern's identity.

struct RingComponent {
  double radius;
  double width;
};

// Patterns for landmark indices 0..7; combinations of a central blob and
// rings at distinct radii keep them distinguishable under mild scale jitter.
inline std::vector<RingComponent> pattern_components(int k) {
  switch (k % 8) {
    case 0: return {{0.0, 2.4}};
    case 1: return {{6.0, 1.4}};
    case 2: return {{3.5, 1.2}, {9.0, 1.2}};
    case 3: return {{0.0, 1.4}, {9.0, 1.2}};
    case 4: return {{6.0, 1.2}, {12.0, 1.2}};
    case 5: return {{0.0, 2.0}, {12.0, 1.2}};
    case 6: return {{4.5, 1.1}, {8.0, 1.1}, {12.0, 1.1}};
    default: return {{0.0, 1.2}, {5.0, 1.1}, {10.0, 1.1}};
  }
}

inline double pattern_extent(int k, double scale = 1.0) {
  double r = 0.0;
  for (const auto& c : pattern_components(k)) r = std::max(r, c.radius + 3.0 * c.width);
  return r * scale;
}

// Adds pattern k at continuous center (cx, cy); intensities in [0, amplitude].
inline void render_pattern(Tensor4& img, int k, double cx, double cy, double amplitude,
                           double scale = 1.0) {
  const double ext = pattern_extent(k, scale);
  auto comps = pattern_components(k);
  for (auto& c : comps) {
    c.radius *= scale;
    c.width *= scale;
  }
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - ext)));
  const int x_hi = std::min(img.w() - 1, static_cast<int>(std::ceil(cx + ext)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - ext)));
  const int y_hi = std::min(img.h() - 1, static_cast<int>(std::ceil(cy + ext)));
  double* p = img.plane(0, 0);
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) {
      const double r = std::hypot(x - cx, y - cy);
      double v = 0.0;
      for (const auto& c : comps) {
        const double d = (r - c.radius) / c.width;
        v = std::max(v, std::exp(-0.5 * d * d));
      }
      p[static_cast<size_t>(y) * img.w() + x] += amplitude * v;
    }
}

struct GenConfig {
  int n_images = 200;
  int n_landmarks = 4;
  int size = 128;
  uint64_t seed = 1;
  double pixel_spacing_mm = 0.1;
  double margin = 16.0;
  double noise_level = 0.12;
  double amplitude = 0.78;
  double pattern_scale = 1.0;  // shrinks patterns for small images
  int max_place_attempts = 1000;
};

struct SynthSample {
  Tensor4 image;
  LandmarkSet landmarks;
};

// One image worth of patterns at non-overlapping random sub-pixel centers.
inline SynthSample render_synth_sample(const GenConfig& cfg, SeededRng& rng) {
  const double lo = cfg.margin;
  const double hi = cfg.size - 1 - cfg.margin;
  if (hi <= lo) fail(ErrorClass::config, "gen-data: image too small for the margin");

  // Centers must stay far enough apart that patterns never overlap. A bad
  // early placement can make the rest unplaceable, so the whole
  // configuration restarts rather than just the current point.
  std::vector<Point2> centers;
  bool all_placed = false;
  for (int restart = 0; restart < cfg.max_place_attempts && !all_placed; ++restart) {
    centers.clear();
    all_placed = true;
    for (int k = 0; k < cfg.n_landmarks && all_placed; ++k) {
      const double ext_k = pattern_extent(k, cfg.pattern_scale);
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        const Point2 cand{rng.uniform(lo, hi), rng.uniform(lo, hi)};
        placed = true;
        for (int j = 0; j < static_cast<int>(centers.size()); ++j) {
          const double min_d = ext_k + pattern_extent(j, cfg.pattern_scale) + 2.0;
          if (std::hypot(cand.x - centers[j].x, cand.y - centers[j].y) < min_d) {
            placed = false;
            break;
          }
        }
        if (placed) centers.push_back(cand);
      }
      all_placed = placed;
    }
  }
  if (!all_placed)
    fail(ErrorClass::data, "gen-data: could not place " + std::to_string(cfg.n_landmarks) +
                               " patterns in a " + std::to_string(cfg.size) +
                               "px image without overlap; reduce landmarks or enlarge image");

  SynthSample out;
  out.image.resize(1, 1, cfg.size, cfg.size);
  double* p = out.image.plane(0, 0);
  for (size_t i = 0; i < out.image.size(); ++i) p[i] = cfg.noise_level * rng.uniform01();
  for (int k = 0; k < cfg.n_landmarks; ++k)
    render_pattern(out.image, k, centers[k].x, centers[k].y, cfg.amplitude,
                   cfg.pattern_scale);

  out.landmarks = LandmarkSet(cfg.n_landmarks);
  for (int k = 0; k < cfg.n_landmarks; ++k) out.landmarks.points[k] = centers[k];
  return out;
}

// Writes images/ plus one annotations.json; byte-identical for a fixed seed.
inline Dataset generate_dataset(const std::string& out_dir, const GenConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) fail(ErrorClass::io, "cannot create " + out_dir + ": " + ec.message());

  SeededRng rng(cfg.seed);
  Dataset ds;
  ds.base_dir = out_dir;
  ds.num_landmarks = cfg.n_landmarks;
  for (int i = 0; i < cfg.n_images; ++i) {
    SynthSample s = render_synth_sample(cfg, rng);
    char name[64];
    std::snprintf(name, sizeof(name), "images/img_%04d.pgm", i);
    write_pgm(s.image, (fs::path(out_dir) / name).string());
    SampleRecord rec;
    rec.image_path = name;
    rec.width = cfg.size;
    rec.height = cfg.size;
    rec.pixel_spacing_mm = cfg.pixel_spacing_mm;
    rec.landmarks = std::move(s.landmarks);
    ds.samples.push_back(std::move(rec));
  }
  save_dataset(ds, (fs::path(out_dir) / "annotations.json").string());
  return ds;
}

}  // namespace lmdet
