#include "dtl/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtl/error.hpp"

namespace dtl {

using MatMap =
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace {

// Keras-style glorot uniform.
void glorot_uniform(ParamGroup& g, int fan_in, int fan_out, Rng& rng) {
  g.value.resize(static_cast<std::size_t>(g.count()));
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  for (auto& v : g.value) v = rng.next_uniform(-limit, limit);
}

void fill_const(ParamGroup& g, float value) {
  g.value.assign(static_cast<std::size_t>(g.count()), value);
}

int conv_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

// ---- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kh, int kw,
               int stride, int pad_h, int pad_w, bool bias)
    : Layer(std::move(name)),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kh_(kh),
      kw_(kw),
      stride_(stride),
      pad_h_(pad_h),
      pad_w_(pad_w),
      has_bias_(bias) {
  require(in_ch > 0 && out_ch > 0 && kh > 0 && kw > 0 && stride > 0,
          ErrorCode::argument, name_ + ": bad conv geometry");
  weight_.name = name_ + ".weight";
  weight_.shape = {out_ch, in_ch, kh, kw};
  bias_.name = name_ + ".bias";
  bias_.shape = {out_ch};
}

std::unique_ptr<Conv2d> Conv2d::same(std::string name, int in_ch, int out_ch,
                                     int k, bool bias) {
  return std::make_unique<Conv2d>(std::move(name), in_ch, out_ch, k, k, 1,
                                  k / 2, k / 2, bias);
}

Shape3 Conv2d::out_shape(Shape3 in) const {
  require(in.c == in_ch_, ErrorCode::argument,
          name_ + ": expected " + std::to_string(in_ch_) + " input channels");
  const int oh = conv_extent(in.h, kh_, stride_, pad_h_);
  const int ow = conv_extent(in.w, kw_, stride_, pad_w_);
  require(oh > 0 && ow > 0, ErrorCode::argument,
          name_ + ": input below receptive-field minimum");
  return {out_ch_, oh, ow};
}

void Conv2d::collect_params(std::vector<ParamGroup*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv2d::init_params(Rng& rng) {
  glorot_uniform(weight_, in_ch_ * kh_ * kw_, out_ch_ * kh_ * kw_, rng);
  if (has_bias_) fill_const(bias_, 0.0f);
}

void Conv2d::im2col(const float* img, float* col, int h, int w, int oh,
                    int ow) const {
  const int spatial = oh * ow;
  for (int c = 0; c < in_ch_; ++c) {
    for (int ky = 0; ky < kh_; ++ky) {
      for (int kx = 0; kx < kw_; ++kx) {
        float* row = col + ((c * kh_ + ky) * kw_ + kx) * spatial;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride_ - pad_h_ + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + y * ow, row + (y + 1) * ow, 0.0f);
            continue;
          }
          const float* src = img + (c * h + iy) * w;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * stride_ - pad_w_ + kx;
            row[y * ow + x] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const float* col, float* img, int h, int w, int oh,
                    int ow) const {
  const int spatial = oh * ow;
  for (int c = 0; c < in_ch_; ++c) {
    for (int ky = 0; ky < kh_; ++ky) {
      for (int kx = 0; kx < kw_; ++kx) {
        const float* row = col + ((c * kh_ + ky) * kw_ + kx) * spatial;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride_ - pad_h_ + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = img + (c * h + iy) * w;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * stride_ - pad_w_ + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[y * ow + x];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, Phase, Rng*, Recorder* rec) {
  require(weight_.materialized(), ErrorCode::state,
          name_ + ": weights not materialized");
  const Shape3 os = out_shape({x.c, x.h, x.w});
  Tensor y(x.n, os.c, os.h, os.w);
  const int k = in_ch_ * kh_ * kw_;
  const int spatial = os.h * os.w;
  std::vector<float> col(static_cast<std::size_t>(k) * spatial);
  ConstMatMap wmat(weight_.value.data(), out_ch_, k);
  for (int in = 0; in < x.n; ++in) {
    im2col(x.chan(in, 0), col.data(), x.h, x.w, os.h, os.w);
    ConstMatMap cmat(col.data(), k, spatial);
    MatMap ymat(y.chan(in, 0), out_ch_, spatial);
    ymat.noalias() = wmat * cmat;
    if (has_bias_) {
      for (int f = 0; f < out_ch_; ++f)
        ymat.row(f).array() += bias_.value[static_cast<std::size_t>(f)];
    }
  }
  cached_x_ = x;
  return pass(std::move(y), rec);
}

Tensor Conv2d::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  const Tensor& x = cached_x_;
  const int k = in_ch_ * kh_ * kw_;
  const int spatial = dy.h * dy.w;
  Tensor dx(x.n, x.c, x.h, x.w);
  std::vector<float> col(static_cast<std::size_t>(k) * spatial);
  std::vector<float> dcol(static_cast<std::size_t>(k) * spatial);
  ConstMatMap wmat(weight_.value.data(), out_ch_, k);

  const bool want_wgrad = weight_.trainable;
  if (want_wgrad) {
    weight_.ensure_grad();
    if (has_bias_) bias_.ensure_grad();
  }

  for (int in = 0; in < x.n; ++in) {
    ConstMatMap dymat(dy.chan(in, 0), out_ch_, spatial);
    if (want_wgrad) {
      im2col(x.chan(in, 0), col.data(), x.h, x.w, dy.h, dy.w);
      ConstMatMap cmat(col.data(), k, spatial);
      MatMap dwmat(weight_.grad.data(), out_ch_, k);
      dwmat.noalias() += dymat * cmat.transpose();
      if (has_bias_) {
        for (int f = 0; f < out_ch_; ++f)
          bias_.grad[static_cast<std::size_t>(f)] += dymat.row(f).sum();
      }
    }
    MatMap dcmat(dcol.data(), k, spatial);
    dcmat.noalias() = wmat.transpose() * dymat;
    col2im(dcol.data(), dx.chan(in, 0), x.h, x.w, dy.h, dy.w);
  }
  return dx;
}

// ---- BatchNorm2d --------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int channels, double momentum,
                         double eps)
    : Layer(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name_ + ".gamma";
  gamma_.shape = {channels};
  beta_.name = name_ + ".beta";
  beta_.shape = {channels};
  running_mean_.name = name_ + ".running_mean";
  running_mean_.shape = {channels};
  running_mean_.is_buffer = true;
  running_var_.name = name_ + ".running_var";
  running_var_.shape = {channels};
  running_var_.is_buffer = true;
}

void BatchNorm2d::collect_params(std::vector<ParamGroup*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

void BatchNorm2d::init_params(Rng&) {
  fill_const(gamma_, 1.0f);
  fill_const(beta_, 0.0f);
  fill_const(running_mean_, 0.0f);
  fill_const(running_var_, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, Phase phase, Rng*, Recorder* rec) {
  require(x.c == channels_, ErrorCode::argument, name_ + ": channel mismatch");
  // A frozen BN layer behaves like an inference layer even while the rest of
  // the network trains; this is what keeps frozen backbones byte-stable.
  used_batch_stats_ = (phase == Phase::train) && gamma_.trainable;
  Tensor y(x.n, x.c, x.h, x.w);
  const int spatial = x.spatial();
  const double m = static_cast<double>(x.n) * spatial;

  if (used_batch_stats_) {
    cached_x_ = x;
    batch_mean_.assign(channels_, 0.0f);
    batch_var_.assign(channels_, 0.0f);
    for (int c = 0; c < channels_; ++c) {
      double sum = 0.0;
      for (int in = 0; in < x.n; ++in) {
        const float* p = x.chan(in, c);
        for (int i = 0; i < spatial; ++i) sum += p[i];
      }
      const double mean = sum / m;
      double var = 0.0;
      for (int in = 0; in < x.n; ++in) {
        const float* p = x.chan(in, c);
        for (int i = 0; i < spatial; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= m;
      batch_mean_[c] = static_cast<float>(mean);
      batch_var_[c] = static_cast<float>(var);
      running_mean_.value[c] = static_cast<float>(
          momentum_ * running_mean_.value[c] + (1.0 - momentum_) * mean);
      running_var_.value[c] = static_cast<float>(
          momentum_ * running_var_.value[c] + (1.0 - momentum_) * var);
      const float inv = 1.0f / std::sqrt(batch_var_[c] + static_cast<float>(eps_));
      const float g = gamma_.value[c], b = beta_.value[c], mu = batch_mean_[c];
      for (int in = 0; in < x.n; ++in) {
        const float* p = x.chan(in, c);
        float* q = y.chan(in, c);
        for (int i = 0; i < spatial; ++i) q[i] = g * (p[i] - mu) * inv + b;
      }
    }
  } else {
    cached_x_ = Tensor();
    for (int c = 0; c < channels_; ++c) {
      const float inv = 1.0f / std::sqrt(running_var_.value[c] +
                                         static_cast<float>(eps_));
      const float g = gamma_.value[c], b = beta_.value[c];
      const float mu = running_mean_.value[c];
      for (int in = 0; in < x.n; ++in) {
        const float* p = x.chan(in, c);
        float* q = y.chan(in, c);
        for (int i = 0; i < spatial; ++i) q[i] = g * (p[i] - mu) * inv + b;
      }
    }
  }
  return pass(std::move(y), rec);
}

Tensor BatchNorm2d::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  const int spatial = dy.spatial();

  if (!used_batch_stats_) {
    // Inference-path backward: the normalization is an affine map.
    for (int c = 0; c < channels_; ++c) {
      const float scale = gamma_.value[c] /
                          std::sqrt(running_var_.value[c] +
                                    static_cast<float>(eps_));
      for (int in = 0; in < dy.n; ++in) {
        const float* p = dy.chan(in, c);
        float* q = dx.chan(in, c);
        for (int i = 0; i < spatial; ++i) q[i] = p[i] * scale;
      }
    }
    return dx;
  }

  gamma_.ensure_grad();
  beta_.ensure_grad();
  const Tensor& x = cached_x_;
  const double m = static_cast<double>(dy.n) * spatial;
  for (int c = 0; c < channels_; ++c) {
    const float mu = batch_mean_[c];
    const float inv = 1.0f / std::sqrt(batch_var_[c] + static_cast<float>(eps_));
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int in = 0; in < dy.n; ++in) {
      const float* pdy = dy.chan(in, c);
      const float* px = x.chan(in, c);
      for (int i = 0; i < spatial; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += pdy[i] * (px[i] - mu) * inv;
      }
    }
    gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
    beta_.grad[c] += static_cast<float>(sum_dy);
    const float g = gamma_.value[c];
    for (int in = 0; in < dy.n; ++in) {
      const float* pdy = dy.chan(in, c);
      const float* px = x.chan(in, c);
      float* pdx = dx.chan(in, c);
      for (int i = 0; i < spatial; ++i) {
        const float xhat = (px[i] - mu) * inv;
        pdx[i] = static_cast<float>(
            (g * inv) *
            (pdy[i] - sum_dy / m - xhat * sum_dy_xhat / m));
      }
    }
  }
  return dx;
}

// ---- ReLU -------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, Phase, Rng*, Recorder* rec) {
  Tensor y = x;
  mask_.resize(x.count());
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    mask_[i] = y.v[i] > 0.0f;
    if (!mask_[i]) y.v[i] = 0.0f;
  }
  return pass(std::move(y), rec);
}

Tensor ReLU::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i)
    if (!mask_[i]) dx.v[i] = 0.0f;
  return dx;
}

// ---- MaxPool2d ----------------------------------------------------------------

MaxPool2d::MaxPool2d(std::string name, int kernel, int stride, int pad)
    : Layer(std::move(name)), kernel_(kernel), stride_(stride), pad_(pad) {}

Shape3 MaxPool2d::out_shape(Shape3 in) const {
  const int oh = conv_extent(in.h, kernel_, stride_, pad_);
  const int ow = conv_extent(in.w, kernel_, stride_, pad_);
  require(oh > 0 && ow > 0, ErrorCode::argument,
          name_ + ": input below receptive-field minimum");
  return {in.c, oh, ow};
}

Tensor MaxPool2d::forward(const Tensor& x, Phase, Rng*, Recorder* rec) {
  const Shape3 os = out_shape({x.c, x.h, x.w});
  in_shape_ = {x.c, x.h, x.w};
  Tensor y(x.n, x.c, os.h, os.w);
  argmax_.assign(y.count(), -1);
  std::size_t oi = 0;
  for (int in = 0; in < x.n; ++in) {
    for (int c = 0; c < x.c; ++c) {
      const float* src = x.chan(in, c);
      float* dst = y.chan(in, c);
      for (int yo = 0; yo < os.h; ++yo) {
        for (int xo = 0; xo < os.w; ++xo, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = yo * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = xo * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              const float v = src[iy * x.w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * x.w + ix;
              }
            }
          }
          dst[yo * os.w + xo] = best;
          argmax_[oi] = best_idx;
        }
      }
    }
  }
  return pass(std::move(y), rec);
}

Tensor MaxPool2d::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor dx(dy.n, in_shape_.c, in_shape_.h, in_shape_.w);
  std::size_t oi = 0;
  for (int in = 0; in < dy.n; ++in) {
    for (int c = 0; c < dy.c; ++c) {
      const float* src = dy.chan(in, c);
      float* dst = dx.chan(in, c);
      const int spatial = dy.h * dy.w;
      for (int i = 0; i < spatial; ++i, ++oi) {
        if (argmax_[oi] >= 0) dst[argmax_[oi]] += src[i];
      }
    }
  }
  return dx;
}

// ---- AvgPool2d ----------------------------------------------------------------

AvgPool2d::AvgPool2d(std::string name, int kernel, int stride, int pad)
    : Layer(std::move(name)), kernel_(kernel), stride_(stride), pad_(pad) {}

Shape3 AvgPool2d::out_shape(Shape3 in) const {
  const int oh = conv_extent(in.h, kernel_, stride_, pad_);
  const int ow = conv_extent(in.w, kernel_, stride_, pad_);
  require(oh > 0 && ow > 0, ErrorCode::argument,
          name_ + ": input below receptive-field minimum");
  return {in.c, oh, ow};
}

Tensor AvgPool2d::forward(const Tensor& x, Phase, Rng*, Recorder* rec) {
  const Shape3 os = out_shape({x.c, x.h, x.w});
  in_shape_ = {x.c, x.h, x.w};
  Tensor y(x.n, x.c, os.h, os.w);
  const float scale = 1.0f / static_cast<float>(kernel_ * kernel_);
  for (int in = 0; in < x.n; ++in) {
    for (int c = 0; c < x.c; ++c) {
      const float* src = x.chan(in, c);
      float* dst = y.chan(in, c);
      for (int yo = 0; yo < os.h; ++yo) {
        for (int xo = 0; xo < os.w; ++xo) {
          float sum = 0.0f;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = yo * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = xo * stride_ - pad_ + kx;
              if (ix >= 0 && ix < x.w) sum += src[iy * x.w + ix];
            }
          }
          dst[yo * os.w + xo] = sum * scale;
        }
      }
    }
  }
  return pass(std::move(y), rec);
}

Tensor AvgPool2d::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor dx(dy.n, in_shape_.c, in_shape_.h, in_shape_.w);
  const float scale = 1.0f / static_cast<float>(kernel_ * kernel_);
  for (int in = 0; in < dy.n; ++in) {
    for (int c = 0; c < dy.c; ++c) {
      const float* src = dy.chan(in, c);
      float* dst = dx.chan(in, c);
      for (int yo = 0; yo < dy.h; ++yo) {
        for (int xo = 0; xo < dy.w; ++xo) {
          const float g = src[yo * dy.w + xo] * scale;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = yo * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_shape_.h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = xo * stride_ - pad_ + kx;
              if (ix >= 0 && ix < in_shape_.w) dst[iy * in_shape_.w + ix] += g;
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---- GlobalAvgPool -------------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, Phase, Rng*, Recorder* rec) {
  in_shape_ = {x.c, x.h, x.w};
  Tensor y(x.n, x.c, 1, 1);
  const int spatial = x.spatial();
  const float scale = 1.0f / static_cast<float>(spatial);
  for (int in = 0; in < x.n; ++in) {
    for (int c = 0; c < x.c; ++c) {
      const float* src = x.chan(in, c);
      float sum = 0.0f;
      for (int i = 0; i < spatial; ++i) sum += src[i];
      y.at(in, c, 0, 0) = sum * scale;
    }
  }
  return pass(std::move(y), rec);
}

Tensor GlobalAvgPool::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor dx(dy.n, in_shape_.c, in_shape_.h, in_shape_.w);
  const int spatial = in_shape_.h * in_shape_.w;
  const float scale = 1.0f / static_cast<float>(spatial);
  for (int in = 0; in < dy.n; ++in) {
    for (int c = 0; c < dy.c; ++c) {
      const float g = dy.at(in, c, 0, 0) * scale;
      float* dst = dx.chan(in, c);
      for (int i = 0; i < spatial; ++i) dst[i] = g;
    }
  }
  return dx;
}

// ---- Dense --------------------------------------------------------------------

Dense::Dense(std::string name, int in_features, int out_features)
    : Layer(std::move(name)),
      in_features_(in_features),
      out_features_(out_features) {
  weight_.name = name_ + ".weight";
  weight_.shape = {out_features, in_features};
  bias_.name = name_ + ".bias";
  bias_.shape = {out_features};
}

Shape3 Dense::out_shape(Shape3 in) const {
  require(in.c * in.h * in.w == in_features_, ErrorCode::argument,
          name_ + ": expected " + std::to_string(in_features_) + " features, got " +
              std::to_string(in.c * in.h * in.w));
  return {out_features_, 1, 1};
}

void Dense::collect_params(std::vector<ParamGroup*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Dense::init_params(Rng& rng) {
  glorot_uniform(weight_, in_features_, out_features_, rng);
  fill_const(bias_, 0.0f);
}

Tensor Dense::forward(const Tensor& x, Phase, Rng*, Recorder* rec) {
  require(weight_.materialized(), ErrorCode::state,
          name_ + ": weights not materialized");
  require(x.c * x.h * x.w == in_features_, ErrorCode::argument,
          name_ + ": feature mismatch");
  cached_x_ = x;
  Tensor y(x.n, out_features_, 1, 1);
  ConstMatMap xmat(x.v.data(), x.n, in_features_);
  ConstMatMap wmat(weight_.value.data(), out_features_, in_features_);
  MatMap ymat(y.v.data(), x.n, out_features_);
  ymat.noalias() = xmat * wmat.transpose();
  for (int in = 0; in < x.n; ++in)
    for (int o = 0; o < out_features_; ++o)
      ymat(in, o) += bias_.value[static_cast<std::size_t>(o)];
  return pass(std::move(y), rec);
}

Tensor Dense::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  const Tensor& x = cached_x_;
  ConstMatMap dymat(dy.v.data(), dy.n, out_features_);
  ConstMatMap xmat(x.v.data(), x.n, in_features_);
  ConstMatMap wmat(weight_.value.data(), out_features_, in_features_);
  if (weight_.trainable) {
    weight_.ensure_grad();
    bias_.ensure_grad();
    MatMap dwmat(weight_.grad.data(), out_features_, in_features_);
    dwmat.noalias() += dymat.transpose() * xmat;
    for (int o = 0; o < out_features_; ++o)
      bias_.grad[static_cast<std::size_t>(o)] += dymat.col(o).sum();
  }
  Tensor dx(x.n, x.c, x.h, x.w);
  MatMap dxmat(dx.v.data(), x.n, in_features_);
  dxmat.noalias() = dymat * wmat;
  return dx;
}

// ---- Dropout ------------------------------------------------------------------

Dropout::Dropout(std::string name, double rate)
    : Layer(std::move(name)), rate_(rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::argument,
          name_ + ": dropout rate must lie in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Phase phase, Rng* rng, Recorder* rec) {
  if (phase == Phase::eval || rate_ == 0.0 || rng == nullptr) {
    mask_.clear();
    return pass(x, rec);
  }
  Tensor y = x;
  mask_.resize(x.count());
  const float keep_inv = 1.0f / static_cast<float>(1.0 - rate_);
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    const bool keep = rng->next_double() >= rate_;
    mask_[i] = keep ? keep_inv : 0.0f;
    y.v[i] *= mask_[i];
  }
  return pass(std::move(y), rec);
}

Tensor Dropout::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  if (mask_.empty()) return dy;
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= mask_[i];
  return dx;
}

// ---- Sequential ------------------------------------------------------------------

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  children_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Phase phase, Rng* rng,
                           Recorder* rec) {
  Tensor cur = x;
  for (auto& child : children_) cur = child->forward(cur, phase, rng, rec);
  return pass(std::move(cur), rec);
}

Tensor Sequential::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor cur = dy;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it)
    cur = (*it)->backward(cur, grad_rec);
  return cur;
}

void Sequential::collect_params(std::vector<ParamGroup*>& out) {
  for (auto& child : children_) child->collect_params(out);
}

void Sequential::init_params(Rng& rng) {
  for (auto& child : children_) child->init_params(rng);
}

Shape3 Sequential::out_shape(Shape3 in) const {
  for (const auto& child : children_) in = child->out_shape(in);
  return in;
}

void Sequential::visit(const std::function<void(Layer&)>& fn) {
  fn(*this);
  for (auto& child : children_) child->visit(fn);
}

// ---- Branches ---------------------------------------------------------------------

Branches::Branches(std::string name, Combine combine)
    : Layer(std::move(name)), combine_(combine) {}

Sequential& Branches::add_branch() {
  branches_.push_back(std::make_unique<Sequential>(
      name_ + ".b" + std::to_string(branches_.size())));
  return *branches_.back();
}

Tensor Branches::forward(const Tensor& x, Phase phase, Rng* rng, Recorder* rec) {
  require(!branches_.empty(), ErrorCode::state, name_ + ": no branches");
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  for (auto& b : branches_)
    outs.push_back(b->empty() ? x : b->forward(x, phase, rng, rec));

  if (combine_ == Combine::sum) {
    Tensor y = outs.front();
    for (std::size_t i = 1; i < outs.size(); ++i) {
      require(outs[i].same_shape(y), ErrorCode::state,
              name_ + ": sum branches disagree on shape");
      for (std::size_t j = 0; j < y.v.size(); ++j) y.v[j] += outs[i].v[j];
    }
    return pass(std::move(y), rec);
  }

  branch_channels_.clear();
  int total_c = 0;
  for (const auto& o : outs) {
    branch_channels_.push_back(o.c);
    total_c += o.c;
  }
  Tensor y(x.n, total_c, outs.front().h, outs.front().w);
  for (int in = 0; in < x.n; ++in) {
    int c_off = 0;
    for (const auto& o : outs) {
      std::copy(o.chan(in, 0), o.chan(in, 0) + static_cast<std::size_t>(o.c) * o.spatial(),
                y.chan(in, c_off));
      c_off += o.c;
    }
  }
  return pass(std::move(y), rec);
}

Tensor Branches::backward(const Tensor& dy, Recorder* grad_rec) {
  capture_grad(dy, grad_rec);
  Tensor dx;
  auto accumulate = [&dx](const Tensor& t) {
    if (dx.empty()) {
      dx = t;
    } else {
      for (std::size_t j = 0; j < dx.v.size(); ++j) dx.v[j] += t.v[j];
    }
  };

  if (combine_ == Combine::sum) {
    for (auto it = branches_.rbegin(); it != branches_.rend(); ++it) {
      accumulate((*it)->empty() ? dy : (*it)->backward(dy, grad_rec));
    }
    return dx;
  }

  int c_off = static_cast<int>(dy.c);
  for (std::size_t bi = branches_.size(); bi-- > 0;) {
    const int bc = branch_channels_[bi];
    c_off -= bc;
    Tensor part(dy.n, bc, dy.h, dy.w);
    for (int in = 0; in < dy.n; ++in) {
      std::copy(dy.chan(in, c_off),
                dy.chan(in, c_off) + static_cast<std::size_t>(bc) * dy.spatial(),
                part.chan(in, 0));
    }
    accumulate(branches_[bi]->empty() ? part : branches_[bi]->backward(part, grad_rec));
  }
  return dx;
}

void Branches::collect_params(std::vector<ParamGroup*>& out) {
  for (auto& b : branches_) b->collect_params(out);
}

void Branches::init_params(Rng& rng) {
  for (auto& b : branches_) b->init_params(rng);
}

Shape3 Branches::out_shape(Shape3 in) const {
  require(!branches_.empty(), ErrorCode::state, name_ + ": no branches");
  Shape3 first{};
  int total_c = 0;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const Shape3 bs = branches_[i]->empty() ? in : branches_[i]->out_shape(in);
    if (i == 0) first = bs;
    total_c += bs.c;
  }
  if (combine_ == Combine::sum) return first;
  return {total_c, first.h, first.w};
}

void Branches::visit(const std::function<void(Layer&)>& fn) {
  fn(*this);
  for (auto& b : branches_) b->visit(fn);
}

}  // namespace dtl
