#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rccr/core.hpp"

// Minimal dense layers with explicit backward passes. Activations are HWC
// grids viewed as (cells x channels) row-major matrices.
namespace rccr::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_matrix(const RealGrid& g) {
  return ConstMap(g.data.data(), static_cast<Eigen::Index>(g.cells()), g.c);
}
inline MutMap as_matrix(RealGrid& g) {
  return MutMap(g.data.data(), static_cast<Eigen::Index>(g.cells()), g.c);
}

struct Param {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, int r, int c)
      : name(std::move(n)), rows(r), cols(c), value(static_cast<std::size_t>(r) * c, 0.0),
        grad(static_cast<std::size_t>(r) * c, 0.0) {}

  std::size_t size() const { return value.size(); }
  ConstMap matrix() const { return ConstMap(value.data(), rows, cols); }
  MutMap grad_matrix() { return MutMap(grad.data(), rows, cols); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

struct ConvCache {
  RowMat cols;
  int in_h = 0, in_w = 0;
};

// k x k convolution, "same" padding, integer stride. Output extent is
// ceil(in / stride).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int cin, int cout, int k, int stride)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(k / 2),
        weight_(name + ".weight", k * k * cin, cout), bias_(name + ".bias", 1, cout) {}

  void init(RngHandle& rng) {
    double stddev = std::sqrt(2.0 / (k_ * k_ * cin_));
    for (double& v : weight_.value) v = rng.normal(0.0, stddev);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int stride() const { return stride_; }
  int out_extent(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

  RealGrid forward(const RealGrid& x, ConvCache* cache) const {
    require_shape(x.c == cin_, "conv: input channel mismatch (" + std::to_string(x.c) + " vs " +
                                   std::to_string(cin_) + ")");
    const int oh = out_extent(x.h), ow = out_extent(x.w);
    RowMat cols = im2col(x, oh, ow);
    RealGrid y(oh, ow, cout_);
    auto ym = as_matrix(y);
    ym.noalias() = cols * weight_.matrix();
    ym.rowwise() += bias_.matrix().row(0);
    if (cache) {
      cache->cols = std::move(cols);
      cache->in_h = x.h;
      cache->in_w = x.w;
    }
    return y;
  }

  // Accumulates parameter gradients and returns d(loss)/d(input).
  RealGrid backward(const ConvCache& cache, const RealGrid& dy) {
    auto dym = as_matrix(dy);
    weight_.grad_matrix().noalias() += cache.cols.transpose() * dym;
    bias_.grad_matrix().row(0) += dym.colwise().sum();
    RowMat dcols = dym * weight_.matrix().transpose();
    return col2im(dcols, cache.in_h, cache.in_w, dy.h, dy.w);
  }

  ParamList params() { return {&weight_, &bias_}; }
  ConstParamList params() const { return {&weight_, &bias_}; }

 private:
  RowMat im2col(const RealGrid& x, int oh, int ow) const {
    RowMat cols(static_cast<Eigen::Index>(oh) * ow, k_ * k_ * cin_);
    if (k_ == 1 && stride_ == 1) {
      cols = as_matrix(x);
      return cols;
    }
    cols.setZero();
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double* row = cols.data() + (static_cast<Eigen::Index>(r) * ow + c) * cols.cols();
        for (int ky = 0; ky < k_; ++ky) {
          int iy = r * stride_ - pad_ + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = c * stride_ - pad_ + kx;
            if (ix < 0 || ix >= x.w) continue;
            std::copy_n(&x.at(iy, ix, 0), cin_, row + (ky * k_ + kx) * cin_);
          }
        }
      }
    return cols;
  }

  RealGrid col2im(const RowMat& dcols, int h, int w, int oh, int ow) const {
    RealGrid dx(h, w, cin_, 0.0);
    if (k_ == 1 && stride_ == 1) {
      as_matrix(dx) = dcols;
      return dx;
    }
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        const double* row = dcols.data() + (static_cast<Eigen::Index>(r) * ow + c) * dcols.cols();
        for (int ky = 0; ky < k_; ++ky) {
          int iy = r * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = c * stride_ - pad_ + kx;
            if (ix < 0 || ix >= w) continue;
            double* dst = &dx.at(iy, ix, 0);
            const double* src = row + (ky * k_ + kx) * cin_;
            for (int ch = 0; ch < cin_; ++ch) dst[ch] += src[ch];
          }
        }
      }
    return dx;
  }

  int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param weight_;
  Param bias_;
};

inline RealGrid relu(const RealGrid& x) {
  RealGrid y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

// `y` is the forward output.
inline RealGrid relu_backward(const RealGrid& y, const RealGrid& dy) {
  RealGrid dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(y.data[i] > 0.0)) dx.data[i] = 0.0;
  return dx;
}

// Bilinear resize with half-pixel centers (align_corners = false).
class BilinearResize {
 public:
  BilinearResize(int in_h, int in_w, int out_h, int out_w)
      : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w),
        ys_(axis(in_h, out_h)), xs_(axis(in_w, out_w)) {}

  RealGrid forward(const RealGrid& x) const {
    require_shape(x.h == in_h_ && x.w == in_w_, "resize: input extent mismatch");
    RealGrid y(out_h_, out_w_, x.c);
    for (int r = 0; r < out_h_; ++r) {
      const Tap& ty = ys_[r];
      for (int c = 0; c < out_w_; ++c) {
        const Tap& tx = xs_[c];
        double w00 = (1 - ty.frac) * (1 - tx.frac), w01 = (1 - ty.frac) * tx.frac;
        double w10 = ty.frac * (1 - tx.frac), w11 = ty.frac * tx.frac;
        const double* a = &x.at(ty.i0, tx.i0, 0);
        const double* b = &x.at(ty.i0, tx.i1, 0);
        const double* d = &x.at(ty.i1, tx.i0, 0);
        const double* e = &x.at(ty.i1, tx.i1, 0);
        double* out = &y.at(r, c, 0);
        for (int ch = 0; ch < x.c; ++ch) out[ch] = w00 * a[ch] + w01 * b[ch] + w10 * d[ch] + w11 * e[ch];
      }
    }
    return y;
  }

  RealGrid backward(const RealGrid& dy) const {
    RealGrid dx(in_h_, in_w_, dy.c, 0.0);
    for (int r = 0; r < out_h_; ++r) {
      const Tap& ty = ys_[r];
      for (int c = 0; c < out_w_; ++c) {
        const Tap& tx = xs_[c];
        double w00 = (1 - ty.frac) * (1 - tx.frac), w01 = (1 - ty.frac) * tx.frac;
        double w10 = ty.frac * (1 - tx.frac), w11 = ty.frac * tx.frac;
        const double* g = &dy.at(r, c, 0);
        double* a = &dx.at(ty.i0, tx.i0, 0);
        double* b = &dx.at(ty.i0, tx.i1, 0);
        double* d = &dx.at(ty.i1, tx.i0, 0);
        double* e = &dx.at(ty.i1, tx.i1, 0);
        for (int ch = 0; ch < dy.c; ++ch) {
          a[ch] += w00 * g[ch];
          b[ch] += w01 * g[ch];
          d[ch] += w10 * g[ch];
          e[ch] += w11 * g[ch];
        }
      }
    }
    return dx;
  }

 private:
  struct Tap {
    int i0, i1;
    double frac;
  };
  static std::vector<Tap> axis(int in, int out) {
    std::vector<Tap> taps(out);
    double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = std::max(0.0, (o + 0.5) * scale - 0.5);
      int i0 = std::min(static_cast<int>(src), in - 1);
      int i1 = std::min(i0 + 1, in - 1);
      taps[o] = {i0, i1, src - i0};
    }
    return taps;
  }

  int in_h_, in_w_, out_h_, out_w_;
  std::vector<Tap> ys_, xs_;
};

inline constexpr double kNormEpsilon = 1e-12;

// Per-cell L2 normalization; throws when a cell's norm is below kNormEpsilon.
inline RealGrid l2_normalize(const RealGrid& x, std::vector<double>* norms = nullptr) {
  RealGrid y = x;
  if (norms) norms->assign(x.cells(), 0.0);
  for (std::size_t i = 0; i < x.cells(); ++i) {
    double n2 = 0.0;
    for (int k = 0; k < x.c; ++k) n2 += x.cell(i)[k] * x.cell(i)[k];
    double n = std::sqrt(n2);
    if (!(n >= kNormEpsilon))
      throw Error("l2_normalize: cell " + std::to_string(i) + " has norm below epsilon guard");
    for (int k = 0; k < x.c; ++k) y.cell(i)[k] /= n;
    if (norms) (*norms)[i] = n;
  }
  return y;
}

inline RealGrid l2_normalize_backward(const RealGrid& y, const std::vector<double>& norms, const RealGrid& dy) {
  RealGrid dx(y.h, y.w, y.c);
  for (std::size_t i = 0; i < y.cells(); ++i) {
    double dot = 0.0;
    for (int k = 0; k < y.c; ++k) dot += y.cell(i)[k] * dy.cell(i)[k];
    for (int k = 0; k < y.c; ++k) dx.cell(i)[k] = (dy.cell(i)[k] - y.cell(i)[k] * dot) / norms[i];
  }
  return dx;
}

inline RealGrid softmax(const RealGrid& logits) {
  RealGrid p = logits;
  for (std::size_t i = 0; i < p.cells(); ++i) {
    double* v = p.cell(i);
    double m = *std::max_element(v, v + p.c);
    double s = 0.0;
    for (int k = 0; k < p.c; ++k) s += (v[k] = std::exp(v[k] - m));
    for (int k = 0; k < p.c; ++k) v[k] /= s;
  }
  return p;
}

// Argmax per cell, ties resolved toward the lowest class id.
inline LabelMap argmax(const RealGrid& probs) {
  LabelMap out(probs.h, probs.w);
  for (std::size_t i = 0; i < probs.cells(); ++i) {
    const double* v = probs.cell(i);
    out.data[i] = static_cast<Label>(std::max_element(v, v + probs.c) - v);
  }
  return out;
}

struct CrossEntropy {
  double loss = 0.0;
  RealGrid dlogits;  // gradient of `scale * loss` w.r.t. logits
  std::size_t counted = 0;
};

// Mean cross-entropy over non-IGNORE pixels; `scale` multiplies both loss
// and gradient. All-IGNORE labels give zero loss and zero gradient.
inline CrossEntropy cross_entropy(const RealGrid& probs, const LabelMap& labels, double scale = 1.0) {
  require_shape(probs.h == labels.h && probs.w == labels.w, "cross_entropy: shape mismatch");
  CrossEntropy out;
  out.dlogits = RealGrid(probs.h, probs.w, probs.c, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.data[i] != kIgnore) ++out.counted;
  if (out.counted == 0 || scale == 0.0) return out;
  const double inv = 1.0 / static_cast<double>(out.counted);
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Label y = labels.data[i];
    if (y == kIgnore) continue;
    require(y < probs.c, "cross_entropy: label out of range");
    const double* p = probs.cell(i);
    sum -= std::log(std::max(p[y], 1e-300));
    double* g = out.dlogits.cell(i);
    for (int k = 0; k < probs.c; ++k) g[k] = scale * inv * (p[k] - (k == y ? 1.0 : 0.0));
  }
  out.loss = scale * sum * inv;
  return out;
}

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 0.9;  // polynomial decay exponent
  long total_iterations = 1;
};

// SGD with momentum, decoupled into (grad + wd * w), and polynomial rate decay.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg = {}) : cfg_(cfg) {}

  double rate_at(long iteration) const {
    double frac = cfg_.total_iterations > 0
                      ? std::clamp(static_cast<double>(iteration) / cfg_.total_iterations, 0.0, 1.0)
                      : 0.0;
    return cfg_.lr * std::pow(1.0 - frac, cfg_.power);
  }

  void step(const ParamList& params, long iteration) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const Param* p : params) velocity_.emplace_back(p->size(), 0.0);
    }
    const double lr = rate_at(iteration);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      auto& v = velocity_[i];
      require(v.size() == p.size(), "sgd: parameter shape changed");
      for (std::size_t j = 0; j < p.size(); ++j) {
        double g = p.grad[j] + cfg_.weight_decay * p.value[j];
        v[j] = cfg_.momentum * v[j] + g;
        p.value[j] -= lr * v[j];
      }
    }
  }

  const SgdConfig& config() const { return cfg_; }
  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace rccr::nn
