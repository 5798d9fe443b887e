#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "lmdet/codec.hpp"
#include "lmdet/error.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

enum class LossMode { mse, l2norm };

struct LossConfig {
  LossMode mode = LossMode::mse;
  // 0 disables online hard keypoint mining; otherwise only the topk largest
  // per-keypoint losses receive gradient.
  int ohkm_topk = 0;
};

struct LossResult {
  double value = 0.0;
  std::map<int, Tensor4> grads;          // d loss / d pred, per scale
  std::vector<double> per_keypoint;      // batch-averaged per-keypoint losses
};

// Mean of the topk largest entries; gradient-side selection happens in
// loss_multiscale, this is the scalar reduction itself.
inline double loss_ohkm(const std::vector<double>& per_keypoint, int topk) {
  const int n = static_cast<int>(per_keypoint.size());
  if (topk < 1 || topk > n)
    fail(ErrorClass::config, "ohkm topk " + std::to_string(topk) + " outside [1, " +
                                 std::to_string(n) + "]");
  std::vector<double> sorted = per_keypoint;
  std::partial_sort(sorted.begin(), sorted.begin() + topk, sorted.end(),
                    std::greater<double>());
  double s = 0.0;
  for (int i = 0; i < topk; ++i) s += sorted[i];
  return s / topk;
}

// Multi-scale heatmap loss. Per sample and keypoint,
//   l_bj = 1/2 * sum_scales term_i(b, j)
// with term = per-map MSE (mode mse) or the Frobenius norm of the difference
// (mode l2norm); the batch loss averages sum_j w_bj * l_bj over samples,
// where w_bj is 1/N, or 1/topk on the OHKM-selected set.
inline LossResult loss_multiscale(const std::map<int, HeatmapStack>& pred,
                                  const std::map<int, HeatmapStack>& gt,
                                  const LossConfig& cfg) {
  if (pred.empty()) fail(ErrorClass::shape, "loss: empty scale set");
  if (pred.size() != gt.size()) fail(ErrorClass::shape, "loss: scale sets differ");
  for (const auto& [scale, p] : pred) {
    auto it = gt.find(scale);
    if (it == gt.end()) fail(ErrorClass::shape, "loss: missing gt scale " + std::to_string(scale));
    if (!p.maps.same_shape(it->second.maps))
      fail(ErrorClass::shape, "loss: shape mismatch at scale " + std::to_string(scale) + ": " +
                                  p.maps.shape_str() + " vs " + it->second.maps.shape_str());
  }

  const int batch = pred.begin()->second.maps.n();
  const int n_kp = pred.begin()->second.maps.c();
  if (cfg.ohkm_topk < 0 || cfg.ohkm_topk > n_kp)
    fail(ErrorClass::config, "ohkm topk outside [0, N]");

  // Pass 1: per-(sample, keypoint) losses and cached norms for l2 grads.
  std::vector<double> l(static_cast<size_t>(batch) * n_kp, 0.0);
  std::map<int, std::vector<double>> norms;  // l2norm mode only
  for (const auto& [scale, p] : pred) {
    const Tensor4& hp = p.maps;
    const Tensor4& hg = gt.at(scale).maps;
    if (hp.c() != n_kp || hp.n() != batch)
      fail(ErrorClass::shape, "loss: inconsistent stack layout across scales");
    const size_t plane = static_cast<size_t>(hp.h()) * hp.w();
    auto& nrm = norms[scale];
    nrm.assign(l.size(), 0.0);
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < n_kp; ++j) {
        const double* a = hp.plane(b, j);
        const double* g = hg.plane(b, j);
        double ss = 0.0;
        for (size_t i = 0; i < plane; ++i) {
          const double d = a[i] - g[i];
          ss += d * d;
        }
        const size_t bj = static_cast<size_t>(b) * n_kp + j;
        if (cfg.mode == LossMode::mse) {
          l[bj] += 0.5 * ss / static_cast<double>(plane);
        } else {
          const double nv = std::sqrt(ss);
          nrm[bj] = nv;
          l[bj] += 0.5 * nv;
        }
      }
  }

  // Keypoint weights: plain mean or OHKM selection per sample.
  std::vector<double> weight(l.size(), 0.0);
  const bool ohkm = cfg.ohkm_topk >= 1 && cfg.ohkm_topk < n_kp;
  for (int b = 0; b < batch; ++b) {
    if (!ohkm) {
      for (int j = 0; j < n_kp; ++j)
        weight[static_cast<size_t>(b) * n_kp + j] = 1.0 / n_kp;
      continue;
    }
    std::vector<int> order(n_kp);
    for (int j = 0; j < n_kp; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
      return l[static_cast<size_t>(b) * n_kp + a] > l[static_cast<size_t>(b) * n_kp + c];
    });
    for (int k = 0; k < cfg.ohkm_topk; ++k)
      weight[static_cast<size_t>(b) * n_kp + order[k]] = 1.0 / cfg.ohkm_topk;
  }

  LossResult res;
  for (size_t i = 0; i < l.size(); ++i) res.value += weight[i] * l[i];
  res.value /= batch;

  res.per_keypoint.assign(n_kp, 0.0);
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < n_kp; ++j)
      res.per_keypoint[j] += l[static_cast<size_t>(b) * n_kp + j] / batch;

  // Pass 2: gradients.
  for (const auto& [scale, p] : pred) {
    const Tensor4& hp = p.maps;
    const Tensor4& hg = gt.at(scale).maps;
    const size_t plane = static_cast<size_t>(hp.h()) * hp.w();
    Tensor4 grad(hp.n(), hp.c(), hp.h(), hp.w());
    const auto& nrm = norms[scale];
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < n_kp; ++j) {
        const size_t bj = static_cast<size_t>(b) * n_kp + j;
        const double wgt = weight[bj] / batch;
        if (wgt == 0.0) continue;
        const double* a = hp.plane(b, j);
        const double* g = hg.plane(b, j);
        double* o = grad.plane(b, j);
        if (cfg.mode == LossMode::mse) {
          const double k = wgt / static_cast<double>(plane);
          for (size_t i = 0; i < plane; ++i) o[i] = k * (a[i] - g[i]);
        } else {
          if (nrm[bj] < 1e-12) continue;  // zero gradient at the cusp
          const double k = 0.5 * wgt / nrm[bj];
          for (size_t i = 0; i < plane; ++i) o[i] = k * (a[i] - g[i]);
        }
      }
    res.grads[scale] = std::move(grad);
  }
  return res;
}

}  // namespace lmdet
