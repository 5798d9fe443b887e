#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lmdet/error.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

// One named parameter slot: flat value/grad storage plus a rank-4 shape used
// by the serializer. Non-trainable slots (BN running stats) are saved and
// loaded but skipped by the optimizer.
struct ParamRef {
  std::string path;
  double* value = nullptr;
  double* grad = nullptr;
  size_t len = 0;
  int shape[4] = {1, 1, 1, 1};
  bool trainable = true;
};

// Every layer keeps the forward activations its backward needs and refuses
// backward() unless a matching forward() happened first.
inline void require_forward(bool has_forward, const char* layer) {
  if (!has_forward)
    fail(ErrorClass::shape, std::string(layer) + ": backward called before forward");
}

inline void require_grad_shape(const Tensor4& grad, int n, int c, int h, int w,
                               const char* layer) {
  if (grad.n() != n || grad.c() != c || grad.h() != h || grad.w() != w)
    fail(ErrorClass::shape, std::string(layer) + ": grad shape " + grad.shape_str() +
                                " does not match forward output");
}

// ---------------------------------------------------------------------------
// Grouped 2-D convolution (cross-correlation). groups == in_c == out_c gives
// the depthwise case, kernel 1x1 with groups == 1 the pointwise case.
// ---------------------------------------------------------------------------
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int kh, int kw, int stride, int pad, int groups = 1)
      : in_c_(in_c), out_c_(out_c), kh_(kh), kw_(kw), stride_(stride), pad_(pad),
        groups_(groups) {
    if (in_c <= 0 || out_c <= 0 || kh <= 0 || kw <= 0 || stride <= 0 || pad < 0 || groups <= 0)
      fail(ErrorClass::shape, "Conv2d: bad hyperparameters");
    if (in_c % groups != 0 || out_c % groups != 0)
      fail(ErrorClass::shape, "Conv2d: channels not divisible by groups");
    weight_.resize(out_c, in_c / groups, kh, kw);
    grad_weight_.resize(out_c, in_c / groups, kh, kw);
    bias_.assign(out_c, 0.0);
    grad_bias_.assign(out_c, 0.0);
  }

  // Kaiming-style normal init, scale sqrt(2 / fan_in), biases zero.
  void init(SeededRng& rng) {
    const double fan_in = static_cast<double>(in_c_ / groups_) * kh_ * kw_;
    init_normal(rng, std::sqrt(2.0 / fan_in));
  }

  void init_normal(SeededRng& rng, double stddev) {
    double* w = weight_.data();
    for (size_t i = 0; i < weight_.size(); ++i) w[i] = stddev * rng.normal();
    std::fill(bias_.begin(), bias_.end(), 0.0);
  }

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

  Tensor4 forward(const Tensor4& x) {
    if (x.c() != in_c_)
      fail(ErrorClass::shape, "Conv2d: input has " + std::to_string(x.c()) +
                                  " channels, expected " + std::to_string(in_c_));
    const int oh = (x.h() + 2 * pad_ - kh_) / stride_ + 1;
    const int ow = (x.w() + 2 * pad_ - kw_) / stride_ + 1;
    if (x.h() + 2 * pad_ < kh_ || x.w() + 2 * pad_ < kw_ || oh <= 0 || ow <= 0)
      fail(ErrorClass::shape, "Conv2d: zero-size output for input " + x.shape_str());

    // Keep a padded copy; removes boundary branches here and in backward.
    hp_ = x.h() + 2 * pad_;
    wp_ = x.w() + 2 * pad_;
    xp_.resize(x.n(), in_c_, hp_, wp_);
    xp_.fill(0.0);
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < in_c_; ++c) {
        const double* src = x.plane(n, c);
        double* dst = xp_.plane(n, c) + static_cast<size_t>(pad_) * wp_ + pad_;
        for (int y = 0; y < x.h(); ++y)
          std::memcpy(dst + static_cast<size_t>(y) * wp_, src + static_cast<size_t>(y) * x.w(),
                      x.w() * sizeof(double));
      }

    in_h_ = x.h(); in_w_ = x.w(); out_h_ = oh; out_w_ = ow; batch_ = x.n();
    Tensor4 out(x.n(), out_c_, oh, ow);
    const int cpg_in = in_c_ / groups_;
    const int cpg_out = out_c_ / groups_;
    for (int n = 0; n < x.n(); ++n) {
      for (int g = 0; g < groups_; ++g) {
        for (int ocg = 0; ocg < cpg_out; ++ocg) {
          const int oc = g * cpg_out + ocg;
          double* op = out.plane(n, oc);
          for (size_t i = 0, lim = static_cast<size_t>(oh) * ow; i < lim; ++i)
            op[i] = bias_[oc];
          for (int icg = 0; icg < cpg_in; ++icg) {
            const int ic = g * cpg_in + icg;
            const double* xpp = xp_.plane(n, ic);
            const double* wk = weight_.plane(oc, icg);
            for (int ky = 0; ky < kh_; ++ky) {
              for (int kx = 0; kx < kw_; ++kx) {
                const double wv = wk[ky * kw_ + kx];
                if (wv == 0.0) continue;
                for (int oy = 0; oy < oh; ++oy) {
                  const double* xrow = xpp + static_cast<size_t>(oy * stride_ + ky) * wp_ + kx;
                  double* orow = op + static_cast<size_t>(oy) * ow;
                  if (stride_ == 1) {
                    for (int ox = 0; ox < ow; ++ox) orow[ox] += wv * xrow[ox];
                  } else {
                    for (int ox = 0; ox < ow; ++ox) orow[ox] += wv * xrow[ox * stride_];
                  }
                }
              }
            }
          }
        }
      }
    }
    has_forward_ = true;
    return out;
  }

  // Returns grad wrt input; accumulates grad_weight_/grad_bias_.
  Tensor4 backward(const Tensor4& grad_out) {
    require_forward(has_forward_, "Conv2d");
    require_grad_shape(grad_out, batch_, out_c_, out_h_, out_w_, "Conv2d");

    Tensor4 gxp(batch_, in_c_, hp_, wp_);
    const int cpg_in = in_c_ / groups_;
    const int cpg_out = out_c_ / groups_;
    for (int n = 0; n < batch_; ++n) {
      for (int g = 0; g < groups_; ++g) {
        for (int ocg = 0; ocg < cpg_out; ++ocg) {
          const int oc = g * cpg_out + ocg;
          const double* gop = grad_out.plane(n, oc);
          double gb = 0.0;
          for (size_t i = 0, lim = static_cast<size_t>(out_h_) * out_w_; i < lim; ++i)
            gb += gop[i];
          grad_bias_[oc] += gb;
          for (int icg = 0; icg < cpg_in; ++icg) {
            const int ic = g * cpg_in + icg;
            const double* xpp = xp_.plane(n, ic);
            double* gxpp = gxp.plane(n, ic);
            const double* wk = weight_.plane(oc, icg);
            double* gwk = grad_weight_.plane(oc, icg);
            for (int ky = 0; ky < kh_; ++ky) {
              for (int kx = 0; kx < kw_; ++kx) {
                const double wv = wk[ky * kw_ + kx];
                double gw = 0.0;
                for (int oy = 0; oy < out_h_; ++oy) {
                  const size_t row = static_cast<size_t>(oy * stride_ + ky) * wp_ + kx;
                  const double* xrow = xpp + row;
                  double* gxrow = gxpp + row;
                  const double* gorow = gop + static_cast<size_t>(oy) * out_w_;
                  if (stride_ == 1) {
                    for (int ox = 0; ox < out_w_; ++ox) {
                      gw += gorow[ox] * xrow[ox];
                      gxrow[ox] += wv * gorow[ox];
                    }
                  } else {
                    for (int ox = 0; ox < out_w_; ++ox) {
                      gw += gorow[ox] * xrow[ox * stride_];
                      gxrow[ox * stride_] += wv * gorow[ox];
                    }
                  }
                }
                gwk[ky * kw_ + kx] += gw;
              }
            }
          }
        }
      }
    }

    // Crop padding.
    Tensor4 gx(batch_, in_c_, in_h_, in_w_);
    for (int n = 0; n < batch_; ++n)
      for (int c = 0; c < in_c_; ++c) {
        const double* src = gxp.plane(n, c) + static_cast<size_t>(pad_) * wp_ + pad_;
        double* dst = gx.plane(n, c);
        for (int y = 0; y < in_h_; ++y)
          std::memcpy(dst + static_cast<size_t>(y) * in_w_, src + static_cast<size_t>(y) * wp_,
                      in_w_ * sizeof(double));
      }
    return gx;
  }

  void zero_grad() {
    grad_weight_.fill(0.0);
    std::fill(grad_bias_.begin(), grad_bias_.end(), 0.0);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    ParamRef w{prefix + ".weight", weight_.data(), grad_weight_.data(), weight_.size(),
               {weight_.n(), weight_.c(), weight_.h(), weight_.w()}, true};
    ParamRef b{prefix + ".bias", bias_.data(), grad_bias_.data(), bias_.size(),
               {1, out_c_, 1, 1}, true};
    out.push_back(w);
    out.push_back(b);
  }

  Tensor4& weight() { return weight_; }
  std::vector<double>& bias() { return bias_; }
  const Tensor4& grad_weight() const { return grad_weight_; }
  const std::vector<double>& grad_bias() const { return grad_bias_; }

 private:
  int in_c_ = 0, out_c_ = 0, kh_ = 0, kw_ = 0, stride_ = 1, pad_ = 0, groups_ = 1;
  Tensor4 weight_, grad_weight_;
  std::vector<double> bias_, grad_bias_;
  // tape
  Tensor4 xp_;
  int hp_ = 0, wp_ = 0, in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0, batch_ = 0;
  bool has_forward_ = false;
};

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.
// ---------------------------------------------------------------------------
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps) {
    if (channels <= 0) fail(ErrorClass::shape, "BatchNorm2d: bad channel count");
    if (!(momentum > 0.0 && momentum < 1.0))
      fail(ErrorClass::shape, "BatchNorm2d: momentum outside (0,1)");
    gamma_.assign(c_, 1.0);
    beta_.assign(c_, 0.0);
    grad_gamma_.assign(c_, 0.0);
    grad_beta_.assign(c_, 0.0);
    running_mean_.assign(c_, 0.0);
    running_var_.assign(c_, 1.0);
  }

  void set_train(bool train) { train_ = train; }
  bool is_train() const { return train_; }

  Tensor4 forward(const Tensor4& x) {
    if (x.c() != c_) fail(ErrorClass::shape, "BatchNorm2d: channel mismatch");
    const size_t plane = static_cast<size_t>(x.h()) * x.w();
    const double m = static_cast<double>(x.n()) * plane;
    if (m <= 0) fail(ErrorClass::shape, "BatchNorm2d: empty input");

    xhat_.resize(x.n(), c_, x.h(), x.w());
    inv_std_.assign(c_, 0.0);
    Tensor4 out(x.n(), c_, x.h(), x.w());

    if (train_) {
      mean_.assign(c_, 0.0);
      var_.assign(c_, 0.0);
      for (int c = 0; c < c_; ++c) {
        double s = 0.0;
        for (int n = 0; n < x.n(); ++n) {
          const double* p = x.plane(n, c);
          for (size_t i = 0; i < plane; ++i) s += p[i];
        }
        const double mu = s / m;
        double v = 0.0;
        for (int n = 0; n < x.n(); ++n) {
          const double* p = x.plane(n, c);
          for (size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mu;
            v += d * d;
          }
        }
        v /= m;
        mean_[c] = mu;
        var_[c] = v;
        inv_std_[c] = 1.0 / std::sqrt(v + eps_);
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mu;
        const double v_unbiased = m > 1.0 ? v * m / (m - 1.0) : v;
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * v_unbiased;
      }
      ever_trained_ = true;
    } else {
      if (!ever_trained_ && !warned_default_stats_) {
        log_info("BatchNorm2d: eval mode with default running stats (mean 0, var 1)");
        warned_default_stats_ = true;
      }
      mean_ = running_mean_;
      for (int c = 0; c < c_; ++c)
        inv_std_[c] = 1.0 / std::sqrt(running_var_[c] + eps_);
    }

    for (int c = 0; c < c_; ++c) {
      const double mu = train_ ? mean_[c] : running_mean_[c];
      const double is = inv_std_[c];
      const double g = gamma_[c], b = beta_[c];
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        double* xh = xhat_.plane(n, c);
        double* o = out.plane(n, c);
        for (size_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - mu) * is;
          o[i] = g * xh[i] + b;
        }
      }
    }
    batch_ = x.n(); in_h_ = x.h(); in_w_ = x.w();
    was_train_ = train_;
    has_forward_ = true;
    return out;
  }

  Tensor4 backward(const Tensor4& grad_out) {
    require_forward(has_forward_, "BatchNorm2d");
    require_grad_shape(grad_out, batch_, c_, in_h_, in_w_, "BatchNorm2d");
    const size_t plane = static_cast<size_t>(in_h_) * in_w_;
    const double m = static_cast<double>(batch_) * plane;
    Tensor4 gx(batch_, c_, in_h_, in_w_);
    for (int c = 0; c < c_; ++c) {
      double dg = 0.0, db = 0.0;
      for (int n = 0; n < batch_; ++n) {
        const double* go = grad_out.plane(n, c);
        const double* xh = xhat_.plane(n, c);
        for (size_t i = 0; i < plane; ++i) {
          dg += go[i] * xh[i];
          db += go[i];
        }
      }
      grad_gamma_[c] += dg;
      grad_beta_[c] += db;
      const double g_is = gamma_[c] * inv_std_[c];
      if (was_train_) {
        const double mean_dy = db / m;
        const double mean_dyxh = dg / m;
        for (int n = 0; n < batch_; ++n) {
          const double* go = grad_out.plane(n, c);
          const double* xh = xhat_.plane(n, c);
          double* gp = gx.plane(n, c);
          for (size_t i = 0; i < plane; ++i)
            gp[i] = g_is * (go[i] - mean_dy - xh[i] * mean_dyxh);
        }
      } else {
        for (int n = 0; n < batch_; ++n) {
          const double* go = grad_out.plane(n, c);
          double* gp = gx.plane(n, c);
          for (size_t i = 0; i < plane; ++i) gp[i] = g_is * go[i];
        }
      }
    }
    return gx;
  }

  void zero_grad() {
    std::fill(grad_gamma_.begin(), grad_gamma_.end(), 0.0);
    std::fill(grad_beta_.begin(), grad_beta_.end(), 0.0);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", gamma_.data(), grad_gamma_.data(),
                   gamma_.size(), {1, c_, 1, 1}, true});
    out.push_back({prefix + ".beta", beta_.data(), grad_beta_.data(),
                   beta_.size(), {1, c_, 1, 1}, true});
    out.push_back({prefix + ".running_mean", running_mean_.data(), nullptr,
                   running_mean_.size(), {1, c_, 1, 1}, false});
    out.push_back({prefix + ".running_var", running_var_.data(), nullptr,
                   running_var_.size(), {1, c_, 1, 1}, false});
  }

  std::vector<double>& gamma() { return gamma_; }
  std::vector<double>& beta() { return beta_; }
  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }

 private:
  int c_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  bool train_ = true, ever_trained_ = false, warned_default_stats_ = false;
  std::vector<double> gamma_, beta_, grad_gamma_, grad_beta_;
  std::vector<double> running_mean_, running_var_;
  // tape
  Tensor4 xhat_;
  std::vector<double> mean_, var_, inv_std_;
  int batch_ = 0, in_h_ = 0, in_w_ = 0;
  bool was_train_ = true, has_forward_ = false;
};

// ---------------------------------------------------------------------------
// Activations. GELU uses the tanh approximation; ReLU subgradient at 0 is 0.
// ---------------------------------------------------------------------------

inline double gelu_scalar(double x) {
  constexpr double a = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double b = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(a * (x + b * x * x * x)));
}

inline double gelu_grad_scalar(double x) {
  constexpr double a = 0.7978845608028654;
  constexpr double b = 0.044715;
  const double u = a * (x + b * x * x * x);
  const double t = std::tanh(u);
  const double du = a * (1.0 + 3.0 * b * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

class Gelu {
 public:
  Tensor4 forward(const Tensor4& x) {
    x_ = x;
    Tensor4 out(x.n(), x.c(), x.h(), x.w());
    const double* in = x.data();
    double* o = out.data();
    for (size_t i = 0; i < x.size(); ++i) o[i] = gelu_scalar(in[i]);
    has_forward_ = true;
    return out;
  }
  Tensor4 backward(const Tensor4& grad_out) {
    require_forward(has_forward_, "Gelu");
    require_grad_shape(grad_out, x_.n(), x_.c(), x_.h(), x_.w(), "Gelu");
    Tensor4 gx(x_.n(), x_.c(), x_.h(), x_.w());
    const double* in = x_.data();
    const double* go = grad_out.data();
    double* g = gx.data();
    for (size_t i = 0; i < x_.size(); ++i) g[i] = go[i] * gelu_grad_scalar(in[i]);
    return gx;
  }

 private:
  Tensor4 x_;
  bool has_forward_ = false;
};

class Relu {
 public:
  Tensor4 forward(const Tensor4& x) {
    x_ = x;
    Tensor4 out(x.n(), x.c(), x.h(), x.w());
    const double* in = x.data();
    double* o = out.data();
    for (size_t i = 0; i < x.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    has_forward_ = true;
    return out;
  }
  Tensor4 backward(const Tensor4& grad_out) {
    require_forward(has_forward_, "Relu");
    require_grad_shape(grad_out, x_.n(), x_.c(), x_.h(), x_.w(), "Relu");
    Tensor4 gx(x_.n(), x_.c(), x_.h(), x_.w());
    const double* in = x_.data();
    const double* go = grad_out.data();
    double* g = gx.data();
    for (size_t i = 0; i < x_.size(); ++i) g[i] = in[i] > 0.0 ? go[i] : 0.0;
    return gx;
  }

 private:
  Tensor4 x_;
  bool has_forward_ = false;
};

// ---------------------------------------------------------------------------
// Pixel shuffle: (n, c, h, w) -> (n, c/s^2, h*s, w*s), the parameter-free
// sub-pixel upsampling. out[n,c,y,x] = in[n, c*s^2 + (y%s)*s + (x%s), y/s, x/s].
// ---------------------------------------------------------------------------

inline Tensor4 pixel_shuffle(const Tensor4& x, int s) {
  if (s <= 0) fail(ErrorClass::shape, "pixel_shuffle: non-positive factor");
  if (x.c() % (s * s) != 0)
    fail(ErrorClass::shape, "pixel_shuffle: channels " + std::to_string(x.c()) +
                                " not divisible by s^2=" + std::to_string(s * s));
  const int oc = x.c() / (s * s);
  Tensor4 out(x.n(), oc, x.h() * s, x.w() * s);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < oc; ++c)
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          const double* src = x.plane(n, c * s * s + dy * s + dx);
          for (int y = 0; y < x.h(); ++y) {
            double* dst = out.plane(n, c) + static_cast<size_t>(y * s + dy) * out.w() + dx;
            const double* srow = src + static_cast<size_t>(y) * x.w();
            for (int xx = 0; xx < x.w(); ++xx) dst[static_cast<size_t>(xx) * s] = srow[xx];
          }
        }
  return out;
}

inline Tensor4 pixel_unshuffle(const Tensor4& x, int s) {
  if (s <= 0) fail(ErrorClass::shape, "pixel_unshuffle: non-positive factor");
  if (x.h() % s != 0 || x.w() % s != 0)
    fail(ErrorClass::shape, "pixel_unshuffle: spatial dims not divisible by s");
  const int ic = x.c() * s * s;
  Tensor4 out(x.n(), ic, x.h() / s, x.w() / s);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          double* dst = out.plane(n, c * s * s + dy * s + dx);
          for (int y = 0; y < out.h(); ++y) {
            const double* src = x.plane(n, c) + static_cast<size_t>(y * s + dy) * x.w() + dx;
            double* drow = dst + static_cast<size_t>(y) * out.w();
            for (int xx = 0; xx < out.w(); ++xx) drow[xx] = src[static_cast<size_t>(xx) * s];
          }
        }
  return out;
}

class PixelShuffle {
 public:
  PixelShuffle() = default;
  explicit PixelShuffle(int s) : s_(s) {}
  Tensor4 forward(const Tensor4& x) {
    Tensor4 out = pixel_shuffle(x, s_);
    n_ = x.n(); c_ = x.c(); h_ = x.h(); w_ = x.w();
    has_forward_ = true;
    return out;
  }
  Tensor4 backward(const Tensor4& grad_out) {
    require_forward(has_forward_, "PixelShuffle");
    require_grad_shape(grad_out, n_, c_ / (s_ * s_), h_ * s_, w_ * s_, "PixelShuffle");
    return pixel_unshuffle(grad_out, s_);
  }
  int factor() const { return s_; }

 private:
  int s_ = 1, n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  bool has_forward_ = false;
};

// ---------------------------------------------------------------------------
// 2x bilinear upsampling with the align-corners (size-1) mapping:
// src = dst * (src_len - 1) / (dst_len - 1). A 1-pixel axis replicates.
// ---------------------------------------------------------------------------
class BilinearUp2 {
 public:
  Tensor4 forward(const Tensor4& x) {
    n_ = x.n(); c_ = x.c(); h_ = x.h(); w_ = x.w();
    const int oh = 2 * h_, ow = 2 * w_;
    build_axis(h_, oh, y0_, fy_);
    build_axis(w_, ow, x0_, fx_);
    Tensor4 out(n_, c_, oh, ow);
    for (int n = 0; n < n_; ++n)
      for (int c = 0; c < c_; ++c) {
        const double* src = x.plane(n, c);
        double* dst = out.plane(n, c);
        for (int y = 0; y < oh; ++y) {
          const int ya = y0_[y], yb = std::min(ya + 1, h_ - 1);
          const double wy = fy_[y];
          const double* ra = src + static_cast<size_t>(ya) * w_;
          const double* rb = src + static_cast<size_t>(yb) * w_;
          double* o = dst + static_cast<size_t>(y) * ow;
          for (int xx = 0; xx < ow; ++xx) {
            const int xa = x0_[xx], xb = std::min(xa + 1, w_ - 1);
            const double wx = fx_[xx];
            const double top = ra[xa] * (1.0 - wx) + ra[xb] * wx;
            const double bot = rb[xa] * (1.0 - wx) + rb[xb] * wx;
            o[xx] = top * (1.0 - wy) + bot * wy;
          }
        }
      }
    has_forward_ = true;
    return out;
  }

  Tensor4 backward(const Tensor4& grad_out) {
    require_forward(has_forward_, "BilinearUp2");
    require_grad_shape(grad_out, n_, c_, 2 * h_, 2 * w_, "BilinearUp2");
    Tensor4 gx(n_, c_, h_, w_);
    for (int n = 0; n < n_; ++n)
      for (int c = 0; c < c_; ++c) {
        const double* go = grad_out.plane(n, c);
        double* g = gx.plane(n, c);
        for (int y = 0; y < 2 * h_; ++y) {
          const int ya = y0_[y], yb = std::min(ya + 1, h_ - 1);
          const double wy = fy_[y];
          const double* grow = go + static_cast<size_t>(y) * 2 * w_;
          for (int xx = 0; xx < 2 * w_; ++xx) {
            const int xa = x0_[xx], xb = std::min(xa + 1, w_ - 1);
            const double wx = fx_[xx];
            const double v = grow[xx];
            g[static_cast<size_t>(ya) * w_ + xa] += v * (1.0 - wy) * (1.0 - wx);
            g[static_cast<size_t>(ya) * w_ + xb] += v * (1.0 - wy) * wx;
            g[static_cast<size_t>(yb) * w_ + xa] += v * wy * (1.0 - wx);
            g[static_cast<size_t>(yb) * w_ + xb] += v * wy * wx;
          }
        }
      }
    return gx;
  }

 private:
  static void build_axis(int src_len, int dst_len, std::vector<int>& i0,
                         std::vector<double>& frac) {
    i0.assign(dst_len, 0);
    frac.assign(dst_len, 0.0);
    if (src_len < 2) return;  // replication
    const double scale = static_cast<double>(src_len - 1) / (dst_len - 1);
    for (int d = 0; d < dst_len; ++d) {
      const double s = d * scale;
      int i = static_cast<int>(std::floor(s));
      if (i > src_len - 2) i = src_len - 2;
      i0[d] = i;
      frac[d] = s - i;
    }
  }

  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<int> y0_, x0_;
  std::vector<double> fy_, fx_;
  bool has_forward_ = false;
};

}  // namespace lmdet
