#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lmdet/codec.hpp"
#include "lmdet/error.hpp"
#include "lmdet/layers.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

struct BackboneConfig {
  int in_channels = 1;
  int stem_channels = 16;
  // Channel widths for the feature pyramid F2..F_{len+1}; F_i has spatial
  // size (H / 2^i, W / 2^i). Input dims must divide by 2^(len+1).
  std::vector<int> stage_channels = {16, 32, 64, 128};
};

struct HeadConfig {
  int num_keypoints = 4;
  std::vector<int> supervised_scales = {2, 3};
  // Pixel-shuffle upscale per supervised scale, aligned with
  // supervised_scales. Empty means s_i = 2^i (full-resolution heatmaps).
  std::vector<int> upscale;
  int lkc_kernel = 9;
};

struct ModelConfig {
  int input_h = 128;
  int input_w = 128;
  BackboneConfig backbone;
  int neck_channels = 32;
  HeadConfig head;

  int top_scale() const { return 1 + static_cast<int>(backbone.stage_channels.size()); }

  int upscale_for(int scale) const {
    for (size_t k = 0; k < head.supervised_scales.size(); ++k)
      if (head.supervised_scales[k] == scale)
        return head.upscale.empty() ? (1 << scale) : head.upscale[k];
    fail(ErrorClass::config, "scale " + std::to_string(scale) + " is not supervised");
  }

  void validate() const {
    if (backbone.in_channels <= 0 || backbone.stem_channels <= 0)
      fail(ErrorClass::config, "backbone channels must be positive");
    if (backbone.stage_channels.empty())
      fail(ErrorClass::config, "backbone needs at least one stage");
    for (int c : backbone.stage_channels)
      if (c <= 0) fail(ErrorClass::config, "stage channels must be positive");
    const int divisor = 1 << top_scale();
    if (input_h <= 0 || input_w <= 0 || input_h % divisor != 0 || input_w % divisor != 0)
      fail(ErrorClass::config, "input " + std::to_string(input_h) + "x" +
                                   std::to_string(input_w) + " must divide by " +
                                   std::to_string(divisor));
    if (neck_channels <= 0) fail(ErrorClass::config, "neck channels must be positive");
    if (head.num_keypoints <= 0) fail(ErrorClass::config, "num_keypoints must be positive");
    if (head.lkc_kernel <= 0 || head.lkc_kernel % 2 == 0)
      fail(ErrorClass::config, "lkc_kernel must be odd and positive");
    if (head.supervised_scales.empty())
      fail(ErrorClass::config, "at least one supervised scale required");
    if (!head.upscale.empty() && head.upscale.size() != head.supervised_scales.size())
      fail(ErrorClass::config, "upscale list must align with supervised_scales");
    for (size_t k = 0; k < head.supervised_scales.size(); ++k) {
      const int i = head.supervised_scales[k];
      if (i < 2 || i > top_scale())
        fail(ErrorClass::config, "supervised scale " + std::to_string(i) +
                                     " outside [2, " + std::to_string(top_scale()) + "]");
      const int s = head.upscale.empty() ? (1 << i) : head.upscale[k];
      if (s < 1) fail(ErrorClass::config, "upscale must be >= 1");
      const int out_w = (input_w >> i) * s;
      const int out_h = (input_h >> i) * s;
      if (out_w < 2 || out_h < 2)
        fail(ErrorClass::config, "heatmap for scale " + std::to_string(i) + " degenerates");
    }
  }
};

// Canonical architecture signature; its FNV-1a hash guards parameter files
// against config mismatches.
inline std::string model_config_signature(const ModelConfig& c) {
  std::string s = "in=" + std::to_string(c.backbone.in_channels) +
                  ";stem=" + std::to_string(c.backbone.stem_channels) + ";stages=";
  for (size_t i = 0; i < c.backbone.stage_channels.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.backbone.stage_channels[i]);
  s += ";neck=" + std::to_string(c.neck_channels) +
       ";n=" + std::to_string(c.head.num_keypoints) + ";scales=";
  for (size_t i = 0; i < c.head.supervised_scales.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.head.supervised_scales[i]) + ":" +
         std::to_string(c.upscale_for(c.head.supervised_scales[i]));
  s += ";lkc=" + std::to_string(c.head.lkc_kernel) + ";h=" + std::to_string(c.input_h) +
       ";w=" + std::to_string(c.input_w);
  return s;
}

inline uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

// 3x3 conv + BN + activation, the unit both the backbone stages and the
// neck's lateral branch are made of.
template <typename Act>
struct ConvBnAct {
  Conv2d conv;
  BatchNorm2d bn;
  Act act;

  ConvBnAct() = default;
  ConvBnAct(int in_c, int out_c, int stride)
      : conv(in_c, out_c, 3, 3, stride, 1), bn(out_c) {}

  Tensor4 forward(const Tensor4& x) { return act.forward(bn.forward(conv.forward(x))); }
  Tensor4 backward(const Tensor4& g) { return conv.backward(bn.backward(act.backward(g))); }
  void set_train(bool t) { bn.set_train(t); }
  void zero_grad() { conv.zero_grad(); bn.zero_grad(); }
  void init(SeededRng& rng) { conv.init(rng); }
  void collect_params(const std::string& p, std::vector<ParamRef>& out) {
    conv.collect_params(p + ".conv", out);
    bn.collect_params(p + ".bn", out);
  }
};

using ConvBnRelu = ConvBnAct<Relu>;
using ConvBnGelu = ConvBnAct<Gelu>;

// Depthwise conv -> BN -> pointwise conv -> GELU, the separable unit the
// fuse module applies twice.
struct SeparableUnit {
  Conv2d dw;
  BatchNorm2d bn;
  Conv2d pw;
  Gelu act;

  SeparableUnit() = default;
  explicit SeparableUnit(int channels)
      : dw(channels, channels, 3, 3, 1, 1, channels), bn(channels),
        pw(channels, channels, 1, 1, 1, 0) {}

  Tensor4 forward(const Tensor4& x) {
    return act.forward(pw.forward(bn.forward(dw.forward(x))));
  }
  Tensor4 backward(const Tensor4& g) {
    return dw.backward(bn.backward(pw.backward(act.backward(g))));
  }
  void set_train(bool t) { bn.set_train(t); }
  void zero_grad() { dw.zero_grad(); bn.zero_grad(); pw.zero_grad(); }
  void init(SeededRng& rng) { dw.init(rng); pw.init(rng); }
  void collect_params(const std::string& p, std::vector<ParamRef>& out) {
    dw.collect_params(p + ".dw", out);
    bn.collect_params(p + ".bn", out);
    pw.collect_params(p + ".pw", out);
  }
};

// Fuse(F_i, M_{i+1}): lateral conv block on F_i, 2x upsample on M_{i+1},
// concat, pointwise merge, two separable units, pointwise out.
struct FuseBlock {
  ConvBnGelu lateral;
  BilinearUp2 up;
  Conv2d pw_in;
  SeparableUnit unit0, unit1;
  Conv2d pw_out;
  int lat_channels = 0;

  FuseBlock() = default;
  FuseBlock(int f_channels, int m_channels, int width)
      : lateral(f_channels, width, 1),
        pw_in(width + m_channels, width, 1, 1, 1, 0),
        unit0(width), unit1(width),
        pw_out(width, width, 1, 1, 1, 0),
        lat_channels(width) {}

  Tensor4 forward(const Tensor4& f, const Tensor4& m_next) {
    if (m_next.h() * 2 != f.h() || m_next.w() * 2 != f.w())
      fail(ErrorClass::shape, "fuse: M_{i+1} " + m_next.shape_str() +
                                  " is not half of F_i " + f.shape_str());
    Tensor4 lat = lateral.forward(f);
    Tensor4 upped = up.forward(m_next);
    Tensor4 cat = concat_channels(lat, upped);
    Tensor4 x = pw_in.forward(cat);
    x = unit0.forward(x);
    x = unit1.forward(x);
    return pw_out.forward(x);
  }

  // Returns (grad_F, grad_M_next).
  std::pair<Tensor4, Tensor4> backward(const Tensor4& g) {
    Tensor4 gx = pw_out.backward(g);
    gx = unit1.backward(gx);
    gx = unit0.backward(gx);
    Tensor4 gcat = pw_in.backward(gx);
    Tensor4 glat, gup;
    split_channels(gcat, lat_channels, glat, gup);
    return {lateral.backward(glat), up.backward(gup)};
  }

  void set_train(bool t) { lateral.set_train(t); unit0.set_train(t); unit1.set_train(t); }
  void zero_grad() {
    lateral.zero_grad(); pw_in.zero_grad(); unit0.zero_grad(); unit1.zero_grad();
    pw_out.zero_grad();
  }
  void init(SeededRng& rng) {
    lateral.init(rng); pw_in.init(rng); unit0.init(rng); unit1.init(rng); pw_out.init(rng);
  }
  void collect_params(const std::string& p, std::vector<ParamRef>& out) {
    lateral.collect_params(p + ".lateral", out);
    pw_in.collect_params(p + ".pw_in", out);
    unit0.collect_params(p + ".unit0", out);
    unit1.collect_params(p + ".unit1", out);
    pw_out.collect_params(p + ".pw_out", out);
  }
};

// Keypoint encoder + per-keypoint large-kernel conv + pixel shuffle. The
// grouped conv gives each keypoint its own 1 -> s^2 projection.
struct SrHead {
  Conv2d encoder;
  Relu act;
  Conv2d lkc;
  PixelShuffle ps;
  int upscale = 1;

  SrHead() = default;
  SrHead(int in_channels, int num_keypoints, int s, int kernel)
      : encoder(in_channels, num_keypoints, 1, 1, 1, 0),
        lkc(num_keypoints, num_keypoints * s * s, kernel, kernel, 1, (kernel - 1) / 2,
            num_keypoints),
        ps(s), upscale(s) {}

  Tensor4 forward(const Tensor4& m) {
    Tensor4 k = act.forward(encoder.forward(m));
    return ps.forward(lkc.forward(k));
  }
  Tensor4 backward(const Tensor4& g) {
    return encoder.backward(act.backward(lkc.backward(ps.backward(g))));
  }
  void zero_grad() { encoder.zero_grad(); lkc.zero_grad(); }
  // The final projection starts near zero so the untrained model emits
  // near-empty heatmaps. Kaiming noise here puts O(1) garbage on the output,
  // and the cheapest way for the loss to remove it is to push the encoder
  // ReLU negative everywhere, which kills every gradient for good.
  void init(SeededRng& rng) { encoder.init(rng); lkc.init_normal(rng, 1e-3); }
  void collect_params(const std::string& p, std::vector<ParamRef>& out) {
    encoder.collect_params(p + ".encoder", out);
    lkc.collect_params(p + ".lkc", out);
  }
};

// ---------------------------------------------------------------------------
// The full network. Owns mutable gradient state: one forward/backward pair
// at a time per instance; distinct instances are independent.
// ---------------------------------------------------------------------------
class SrModel {
 public:
  explicit SrModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto& bb = cfg_.backbone;
    stem0_ = ConvBnRelu(bb.in_channels, bb.stem_channels, 2);
    stem1_ = ConvBnRelu(bb.stem_channels, bb.stage_channels[0], 2);
    for (size_t k = 1; k < bb.stage_channels.size(); ++k)
      stages_.emplace_back(bb.stage_channels[k - 1], bb.stage_channels[k], 2);

    const int top = cfg_.top_scale();
    min_needed_scale_ = top;
    for (int i : cfg_.head.supervised_scales)
      min_needed_scale_ = std::min(min_needed_scale_, i);
    // fuse blocks for scales [2, top-1]; fuse_[i-2] builds M_i
    for (int i = 2; i < top; ++i) {
      const int m_next_c = (i + 1 < top) ? cfg_.neck_channels : bb.stage_channels.back();
      fuse_.emplace_back(bb.stage_channels[i - 2], m_next_c, cfg_.neck_channels);
    }
    for (int i : cfg_.head.supervised_scales) {
      const int in_c = (i < top) ? cfg_.neck_channels : bb.stage_channels.back();
      heads_[i] = std::make_unique<SrHead>(in_c, cfg_.head.num_keypoints, cfg_.upscale_for(i),
                                           cfg_.head.lkc_kernel);
    }

    stem0_.collect_params("backbone.stem0", params_);
    stem1_.collect_params("backbone.stem1", params_);
    for (size_t k = 0; k < stages_.size(); ++k)
      stages_[k].collect_params("backbone.stage" + std::to_string(k + 3), params_);
    for (int i = 2; i < top; ++i)
      fuse_[i - 2].collect_params("neck.fuse" + std::to_string(i), params_);
    for (int i : cfg_.head.supervised_scales)
      heads_.at(i)->collect_params("head.s" + std::to_string(i), params_);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<ParamRef>& params() { return params_; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.len;
    return n;
  }

  void init(SeededRng& rng) {
    stem0_.init(rng);
    stem1_.init(rng);
    for (auto& s : stages_) s.init(rng);
    for (auto& f : fuse_) f.init(rng);
    for (int i : cfg_.head.supervised_scales) heads_.at(i)->init(rng);
  }

  void set_train(bool t) {
    stem0_.set_train(t);
    stem1_.set_train(t);
    for (auto& s : stages_) s.set_train(t);
    for (auto& f : fuse_) f.set_train(t);
  }

  void zero_grad() {
    stem0_.zero_grad();
    stem1_.zero_grad();
    for (auto& s : stages_) s.zero_grad();
    for (auto& f : fuse_) f.zero_grad();
    for (int i : cfg_.head.supervised_scales) heads_.at(i)->zero_grad();
  }

  // Multi-scale feature extraction F2..F_top.
  std::vector<Tensor4> backbone_forward(const Tensor4& input) {
    if (input.c() != cfg_.backbone.in_channels)
      fail(ErrorClass::shape, "model: input channels " + std::to_string(input.c()) +
                                  " != " + std::to_string(cfg_.backbone.in_channels));
    const int divisor = 1 << cfg_.top_scale();
    if (input.h() % divisor != 0 || input.w() % divisor != 0)
      fail(ErrorClass::shape,
           "model: input " + input.shape_str() + " not divisible by " + std::to_string(divisor));
    std::vector<Tensor4> feats;
    Tensor4 x = stem1_.forward(stem0_.forward(input));
    feats.push_back(std::move(x));
    for (auto& s : stages_) feats.push_back(s.forward(feats.back()));
    return feats;
  }

  // Full forward: heatmap stacks for every supervised scale, keyed by scale.
  std::map<int, HeatmapStack> forward(const Tensor4& input) {
    feats_ = backbone_forward(input);
    const int top = cfg_.top_scale();
    // m_[i-2] is M_i; M_top is F_top itself (recursion base).
    m_.assign(top - 1, Tensor4());
    m_[top - 2] = feats_.back();
    for (int i = top - 1; i >= min_needed_scale_ && i >= 2; --i)
      m_[i - 2] = fuse_[i - 2].forward(feats_[i - 2], m_[i - 1]);

    std::map<int, HeatmapStack> out;
    for (int i : cfg_.head.supervised_scales) {
      HeatmapStack hs;
      hs.maps = heads_.at(i)->forward(m_[i - 2]);
      ensure_finite(hs.maps, "heatmaps at scale " + std::to_string(i));
      hs.stride_x = static_cast<double>(input.w() - 1) / (hs.maps.w() - 1);
      hs.stride_y = static_cast<double>(input.h() - 1) / (hs.maps.h() - 1);
      out[i] = std::move(hs);
    }
    has_forward_ = true;
    return out;
  }

  // Accumulates parameter gradients from per-scale heatmap gradients.
  void backward(const std::map<int, Tensor4>& grad_per_scale) {
    if (!has_forward_) fail(ErrorClass::shape, "model: backward before forward");
    const int top = cfg_.top_scale();
    std::vector<Tensor4> grad_m(top - 1);
    for (const auto& [scale, g] : grad_per_scale) {
      if (!heads_.count(scale))
        fail(ErrorClass::shape, "model: gradient for unsupervised scale " + std::to_string(scale));
      Tensor4 gm = heads_.at(scale)->backward(g);
      accumulate(grad_m[scale - 2], gm);
    }
    std::vector<Tensor4> grad_f(feats_.size());
    for (int i = 2; i < top; ++i) {
      if (grad_m[i - 2].empty()) continue;
      auto [gf, gm_next] = fuse_[i - 2].backward(grad_m[i - 2]);
      accumulate(grad_f[i - 2], gf);
      accumulate(grad_m[i - 1], gm_next);
    }
    if (!grad_m[top - 2].empty()) accumulate(grad_f[top - 2], grad_m[top - 2]);

    // Backbone, deepest stage first.
    Tensor4 carry;
    for (int k = static_cast<int>(stages_.size()) - 1; k >= 0; --k) {
      if (carry.empty() && grad_f[k + 1].empty()) continue;
      Tensor4 g = grad_f[k + 1];
      if (g.empty()) g = Tensor4(carry.n(), carry.c(), carry.h(), carry.w());
      if (!carry.empty()) add_into(g, carry);
      carry = stages_[k].backward(g);
    }
    Tensor4 g2 = grad_f[0];
    if (!carry.empty()) {
      if (g2.empty()) g2 = Tensor4(carry.n(), carry.c(), carry.h(), carry.w());
      add_into(g2, carry);
    }
    if (!g2.empty()) stem0_.backward(stem1_.backward(g2));
    has_forward_ = false;
  }

  // -------------------------------------------------------------------------
  // Parameter serialization, format "SRKPv1": magic, config-signature hash,
  // record count, then (path, rank-4 shape, raw f64) records, little-endian.
  // -------------------------------------------------------------------------
  void save_params(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
    f.write("SRKPv1", 6);
    const uint64_t digest = fnv1a64(model_config_signature(cfg_));
    f.write(reinterpret_cast<const char*>(&digest), 8);
    const uint32_t count = static_cast<uint32_t>(params_.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& p : params_) {
      const uint32_t plen = static_cast<uint32_t>(p.path.size());
      f.write(reinterpret_cast<const char*>(&plen), 4);
      f.write(p.path.data(), plen);
      int32_t shape[4] = {p.shape[0], p.shape[1], p.shape[2], p.shape[3]};
      f.write(reinterpret_cast<const char*>(shape), sizeof(shape));
      f.write(reinterpret_cast<const char*>(p.value),
              static_cast<std::streamsize>(p.len * sizeof(double)));
    }
    if (!f) fail(ErrorClass::io, "short write: " + path);
  }

  // Loads and validates against this model's config; on any error the model
  // state is untouched.
  void load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorClass::io, "cannot open: " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, "SRKPv1", 6) != 0)
      fail(ErrorClass::format, "bad parameter file magic in " + path);
    uint64_t digest = 0;
    f.read(reinterpret_cast<char*>(&digest), 8);
    const uint64_t want = fnv1a64(model_config_signature(cfg_));
    const bool digest_ok = f && digest == want;
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    if (!f) fail(ErrorClass::format, "truncated parameter file " + path);

    struct Staged {
      std::string path;
      int32_t shape[4];
      std::vector<double> data;
    };
    std::vector<Staged> staged(count);
    for (auto& s : staged) {
      uint32_t plen = 0;
      f.read(reinterpret_cast<char*>(&plen), 4);
      if (!f || plen > 4096) fail(ErrorClass::format, "truncated parameter file " + path);
      s.path.resize(plen);
      f.read(s.path.data(), plen);
      f.read(reinterpret_cast<char*>(s.shape), sizeof(s.shape));
      size_t len = 1;
      for (int d : s.shape) {
        if (d <= 0 || !f) fail(ErrorClass::format, "bad shape record in " + path);
        len *= static_cast<size_t>(d);
      }
      s.data.resize(len);
      f.read(reinterpret_cast<char*>(s.data.data()),
             static_cast<std::streamsize>(len * sizeof(double)));
      if (!f) fail(ErrorClass::format, "truncated parameter payload in " + path +
                                           " at " + s.path);
    }
    // Record-level divergence gives the precise diagnosis (which parameter,
    // which shape); the digest catches config changes that leave every
    // shape intact. Nothing is written until all records validate.
    for (size_t i = 0; i < std::min<size_t>(params_.size(), staged.size()); ++i) {
      const auto& want_p = params_[i];
      const auto& got = staged[i];
      if (got.path != want_p.path)
        fail(ErrorClass::format, "parameter order mismatch in " + path + ": expected " +
                                     want_p.path + ", found " + got.path);
      for (int d = 0; d < 4; ++d)
        if (got.shape[d] != want_p.shape[d])
          fail(ErrorClass::shape, "shape mismatch for parameter " + want_p.path + " in " + path);
      if (got.data.size() != want_p.len)
        fail(ErrorClass::shape, "length mismatch for parameter " + want_p.path + " in " + path);
    }
    if (staged.size() != params_.size())
      fail(ErrorClass::format, "parameter record count mismatch in " + path + ": file has " +
                                   std::to_string(staged.size()) + ", model needs " +
                                   std::to_string(params_.size()));
    if (!digest_ok)
      fail(ErrorClass::config,
           "parameter file " + path + " was written under a different model config");
    for (size_t i = 0; i < params_.size(); ++i)
      std::memcpy(params_[i].value, staged[i].data.data(),
                  staged[i].data.size() * sizeof(double));
  }

  // Direct access for tests: the fuse block building M_i and the head for a
  // supervised scale.
  FuseBlock& fuse_block(int scale) { return fuse_.at(scale - 2); }
  SrHead& head(int scale) { return *heads_.at(scale); }

 private:
  static void accumulate(Tensor4& dst, const Tensor4& src) {
    if (dst.empty()) {
      dst = src;
      return;
    }
    add_into(dst, src);
  }
  static void add_into(Tensor4& dst, const Tensor4& src) {
    if (!dst.same_shape(src)) fail(ErrorClass::shape, "gradient accumulation shape mismatch");
    double* d = dst.data();
    const double* s = src.data();
    for (size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
  }

  ModelConfig cfg_;
  ConvBnRelu stem0_, stem1_;
  std::vector<ConvBnRelu> stages_;
  std::vector<FuseBlock> fuse_;
  std::map<int, std::unique_ptr<SrHead>> heads_;
  std::vector<ParamRef> params_;
  int min_needed_scale_ = 2;

  // tape
  std::vector<Tensor4> feats_;
  std::vector<Tensor4> m_;
  bool has_forward_ = false;
};

}  // namespace lmdet
