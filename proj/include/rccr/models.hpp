#pragma once

#include <span>
#include <string>
#include <vector>

#include "rccr/core.hpp"
#include "rccr/nn.hpp"

namespace rccr {

struct ModelConfig {
  int num_classes = 5;
  std::vector<int> channels{16, 32, 32};  // encoder widths; the last is D
  std::vector<int> strides{2, 2, 1};
  int proj_hidden = 64;
  int proj_dim = 16;  // K

  int feature_dim() const { return channels.empty() ? 3 : channels.back(); }
  int total_stride() const {
    int s = 1;
    for (int v : strides) s *= v;
    return s;
  }
};

struct EncoderPass {
  FeatureGrid z;
  std::vector<nn::ConvCache> caches;
  std::vector<RealGrid> outputs;  // per-layer outputs (post-activation)
  int in_h = 0, in_w = 0;
};

struct ClassifierPass {
  RealGrid logits_low;
  ProbMap probs_low;  // softmax at feature resolution
  ProbMap probs;      // softmax at image resolution
  nn::ConvCache cache;
  int out_h = 0, out_w = 0;
};

// Convolutional encoder (3x3 blocks, ReLU between blocks, linear last block)
// followed by a 1x1 classifier whose logits are bilinearly resized to the
// input resolution.
class SegmentationModel {
 public:
  SegmentationModel() = default;
  explicit SegmentationModel(const ModelConfig& cfg) : cfg_(cfg) {
    require(cfg.channels.size() == cfg.strides.size() && !cfg.channels.empty(),
            "model: channels and strides must be non-empty and equal length");
    int prev = 3;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      encoder_.emplace_back("encoder." + std::to_string(i), prev, cfg.channels[i], 3, cfg.strides[i]);
      prev = cfg.channels[i];
    }
    classifier_ = nn::Conv2d("classifier", prev, cfg.num_classes, 1, 1);
  }

  void init(RngHandle& rng) {
    for (auto& c : encoder_) c.init(rng);
    classifier_.init(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int stride() const { return cfg_.total_stride(); }

  EncoderPass encode(const ImageTensor& image, bool record) const {
    ++call_counts().encoder;
    EncoderPass pass;
    pass.in_h = image.height();
    pass.in_w = image.width();
    if (record) pass.caches.resize(encoder_.size());
    RealGrid x = image.pixels;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      x = encoder_[i].forward(x, record ? &pass.caches[i] : nullptr);
      if (i + 1 < encoder_.size()) x = nn::relu(x);
      if (record) pass.outputs.push_back(x);
    }
    pass.z.values = std::move(x);
    return pass;
  }

  void backward_encode(const EncoderPass& pass, RealGrid dz) {
    require(pass.caches.size() == encoder_.size(), "model: backward on a pass without recorded state");
    for (std::size_t i = encoder_.size(); i-- > 0;) {
      if (i + 1 < encoder_.size()) dz = nn::relu_backward(pass.outputs[i], dz);
      dz = encoder_[i].backward(pass.caches[i], dz);
    }
  }

  ClassifierPass classify(const FeatureGrid& z, int out_h, int out_w, bool record) const {
    ++call_counts().classifier;
    ClassifierPass pass;
    pass.out_h = out_h;
    pass.out_w = out_w;
    pass.logits_low = classifier_.forward(z.values, record ? &pass.cache : nullptr);
    pass.probs_low.probs = nn::softmax(pass.logits_low);
    nn::BilinearResize up(z.values.h, z.values.w, out_h, out_w);
    pass.probs.probs = nn::softmax(up.forward(pass.logits_low));
    return pass;
  }

  // Takes d(loss)/d(full-resolution logits); returns d(loss)/dz.
  RealGrid backward_classify(const ClassifierPass& pass, const RealGrid& dlogits_full) {
    nn::BilinearResize up(pass.logits_low.h, pass.logits_low.w, pass.out_h, pass.out_w);
    return classifier_.backward(pass.cache, up.backward(dlogits_full));
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (auto& c : encoder_)
      for (auto* p : c.params()) out.push_back(p);
    for (auto* p : classifier_.params()) out.push_back(p);
    return out;
  }
  nn::ConstParamList params() const {
    nn::ConstParamList out;
    for (const auto& c : encoder_)
      for (const auto* p : c.params()) out.push_back(p);
    for (const auto* p : classifier_.params()) out.push_back(p);
    return out;
  }

 private:
  ModelConfig cfg_;
  std::vector<nn::Conv2d> encoder_;
  nn::Conv2d classifier_;
};

struct ProjectionPass {
  nn::ConvCache c1, c2;
  RealGrid hidden;  // post-ReLU
  RealGrid raw;     // pre-normalization output
  std::vector<double> norms;
  EmbeddingGrid e;
};

// Two 1x1 convolutions with an intermediate ReLU: D -> hidden -> K.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(int in_dim, int hidden, int out_dim)
      : conv1_("proj.conv1", in_dim, hidden, 1, 1), conv2_("proj.conv2", hidden, out_dim, 1, 1) {
    require(out_dim < in_dim, "projection head: output width K must be below input width D");
  }

  void init(RngHandle& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }

  int in_dim() const { return conv1_.in_channels(); }
  int out_dim() const { return conv2_.out_channels(); }

  ProjectionPass forward(const FeatureGrid& z, bool normalize, bool record) const {
    ++call_counts().projector;
    require_shape(z.dim() == in_dim(), "project: feature channels (" + std::to_string(z.dim()) +
                                           ") do not match head input width (" +
                                           std::to_string(in_dim()) + ")");
    ProjectionPass pass;
    pass.hidden = nn::relu(conv1_.forward(z.values, record ? &pass.c1 : nullptr));
    pass.raw = conv2_.forward(pass.hidden, record ? &pass.c2 : nullptr);
    if (normalize) {
      pass.e.values = nn::l2_normalize(pass.raw, &pass.norms);
      pass.e.normalized = true;
    } else {
      pass.e.values = pass.raw;
    }
    return pass;
  }

  // Takes d(loss)/d(e); returns d(loss)/dz.
  RealGrid backward(const ProjectionPass& pass, const RealGrid& de) {
    RealGrid draw = pass.e.normalized ? nn::l2_normalize_backward(pass.e.values, pass.norms, de) : de;
    RealGrid dh = nn::relu_backward(pass.hidden, conv2_.backward(pass.c2, draw));
    return conv1_.backward(pass.c1, dh);
  }

  nn::Conv2d& conv2() { return conv2_; }

  nn::ParamList params() { return {&conv1_.weight(), &conv1_.bias(), &conv2_.weight(), &conv2_.bias()}; }
  nn::ConstParamList params() const {
    return {&conv1_.weight(), &conv1_.bias(), &conv2_.weight(), &conv2_.bias()};
  }

 private:
  nn::Conv2d conv1_;
  nn::Conv2d conv2_;
};

inline EmbeddingGrid project(const ProjectionHead& head, const FeatureGrid& z, bool normalize) {
  return head.forward(z, normalize, false).e;
}

// ---------------------------------------------------------------------------
// Exponential moving average

struct EmaState {
  double decay = 0.999;
  long steps = 0;
};

inline void ema_update(EmaState& state, std::span<double> shadow, std::span<const double> current) {
  require_shape(shadow.size() == current.size(), "ema_update: shadow/current size mismatch");
  const double a = state.decay;
  const double b = 1.0 - state.decay;
  for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = a * shadow[i] + b * current[i];
  ++state.steps;
}

// Applies one update to every tracked tensor; counts as a single step.
inline void ema_update(EmaState& state, const nn::ParamList& shadow, const nn::ConstParamList& current) {
  require_shape(shadow.size() == current.size(), "ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i)
    require_shape(shadow[i]->rows == current[i]->rows && shadow[i]->cols == current[i]->cols,
                  "ema_update: shape mismatch for " + shadow[i]->name);
  const double a = state.decay;
  const double b = 1.0 - state.decay;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    auto& s = shadow[i]->value;
    const auto& c = current[i]->value;
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = a * s[j] + b * c[j];
  }
  ++state.steps;
}

inline void copy_params(const nn::ParamList& dst, const nn::ConstParamList& src) {
  require_shape(dst.size() == src.size(), "copy_params: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    require_shape(dst[i]->size() == src[i]->size(), "copy_params: shape mismatch");
    dst[i]->value = src[i]->value;
  }
}

struct TeacherOutput {
  ProbMap probs;      // image resolution
  ProbMap probs_low;  // feature resolution
  FeatureGrid z;
};

// Eval-mode pass; records nothing that a backward pass could consume.
inline TeacherOutput teacher_forward(const SegmentationModel& teacher, const ImageTensor& image) {
  EncoderPass enc = teacher.encode(image, false);
  ClassifierPass cls = teacher.classify(enc.z, image.height(), image.width(), false);
  return {std::move(cls.probs), std::move(cls.probs_low), std::move(enc.z)};
}

}  // namespace rccr
