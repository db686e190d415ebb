#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "rccr/core.hpp"

namespace rccr {

struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }
  int right() const { return left + width; }
  bool empty() const { return height <= 0 || width <= 0; }
  bool contains(int r, int c) const { return r >= top && r < bottom() && c >= left && c < right(); }
  long area() const { return empty() ? 0L : static_cast<long>(height) * width; }
  bool operator==(const Rect&) const = default;
};

// Largest feature-grid rectangle whose cells lie entirely inside `pixel`.
inline Rect feature_rect_inward(const Rect& pixel, int stride) {
  int top = ceil_div(pixel.top, stride);
  int left = ceil_div(pixel.left, stride);
  int bottom = pixel.bottom() / stride;
  int right = pixel.right() / stride;
  return {top, left, std::max(0, bottom - top), std::max(0, right - left)};
}

struct CutMixSpec {
  Rect pixel;
  Rect feature;
  int stride = 1;
};

struct CutMixParams {
  double area_min = 0.25;
  double area_max = 0.5;
  double aspect_min = 0.5;  // height / width
  double aspect_max = 2.0;
  bool align_to_stride = true;
  int max_attempts = 1000;
};

inline CutMixSpec make_cutmix_spec(const Rect& pixel, int stride) {
  return {pixel, feature_rect_inward(pixel, stride), stride};
}

inline CutMixSpec sample_cutmix_spec(RngHandle& rng, int H, int W, int stride, const CutMixParams& p) {
  require(stride >= 1, "cutmix: stride must be >= 1");
  require(H >= stride && W >= stride, "cutmix: H and W must be >= stride");
  require(p.area_min > 0.0 && p.area_max <= 1.0 && p.area_min <= p.area_max,
          "cutmix: area range must satisfy 0 < min <= max <= 1");
  require(p.aspect_min > 0.0 && p.aspect_min <= p.aspect_max, "cutmix: invalid aspect range");
  const double total = static_cast<double>(H) * W;
  for (int attempt = 0; attempt < p.max_attempts; ++attempt) {
    double ratio = p.area_min == p.area_max ? p.area_min : rng.uniform(p.area_min, p.area_max);
    double aspect = p.aspect_min == p.aspect_max ? p.aspect_min : rng.uniform(p.aspect_min, p.aspect_max);
    int rh = static_cast<int>(std::lround(std::sqrt(ratio * total * aspect)));
    int rw = static_cast<int>(std::lround(std::sqrt(ratio * total / aspect)));
    if (rh < 1 || rw < 1 || rh > H || rw > W) continue;
    double got = static_cast<double>(rh) * rw / total;
    if (got < p.area_min - 1e-12 || got > p.area_max + 1e-12) continue;
    int top, left;
    if (p.align_to_stride) {
      int ntop = (H - rh) / stride;
      int nleft = (W - rw) / stride;
      top = stride * rng.uniform_int(0, ntop);
      left = stride * rng.uniform_int(0, nleft);
    } else {
      top = rng.uniform_int(0, H - rh);
      left = rng.uniform_int(0, W - rw);
    }
    CutMixSpec spec = make_cutmix_spec({top, left, rh, rw}, stride);
    if (spec.feature.empty()) continue;
    return spec;
  }
  throw Error("cutmix: area range admits no valid rectangle");
}

struct ClassMixSpec {
  std::vector<Label> selected;  // sorted ascending

  bool contains(Label l) const { return std::binary_search(selected.begin(), selected.end(), l); }
};

inline std::vector<Label> present_classes(const LabelMap& lm) {
  std::set<Label> s;
  for (Label v : lm.data)
    if (v != kIgnore) s.insert(v);
  return {s.begin(), s.end()};
}

inline ClassMixSpec sample_classmix_spec(RngHandle& rng, const LabelMap& source_label) {
  auto present = present_classes(source_label);
  require(!present.empty(), "classmix: source label has no non-IGNORE class");
  std::shuffle(present.begin(), present.end(), rng.engine());
  present.resize((present.size() + 1) / 2);
  std::sort(present.begin(), present.end());
  return {present};
}

enum class MixKind { CutMix, ClassMix };

struct MixedSample {
  ImageTensor image;
  LabelMap label;
  LabelMap mask;  // 1 where the pixel comes from the pasted image
  MixKind provenance = MixKind::CutMix;
};

namespace detail {
inline void check_pair(const ImageTensor& a, const ImageTensor& b, const LabelMap& la, const LabelMap& lb) {
  require_shape(a.height() == b.height() && a.width() == b.width(), "mix: image shape mismatch");
  require_shape(la.h == a.height() && la.w == a.width() && lb.h == b.height() && lb.w == b.width(),
                "mix: label shape mismatch");
}

// mask == 1 takes `pasted`, otherwise `base`.
inline MixedSample compose(const ImageTensor& base, const LabelMap& base_label, const ImageTensor& pasted,
                           const LabelMap& pasted_label, LabelMap mask, MixKind kind) {
  MixedSample out{base, base_label, std::move(mask), kind};
  for (int r = 0; r < base.height(); ++r)
    for (int c = 0; c < base.width(); ++c) {
      if (!out.mask.at(r, c)) continue;
      for (int ch = 0; ch < 3; ++ch) out.image.at(r, c, ch) = pasted.at(r, c, ch);
      out.label.at(r, c) = pasted_label.at(r, c);
    }
  return out;
}
}  // namespace detail

// Pastes the target region onto the source; the pasted region carries the
// target pseudo-label, the rest keeps the source ground truth.
inline MixedSample apply_cutmix(const Sample& source, const Sample& target, const CutMixSpec& spec) {
  detail::check_pair(source.image, target.image, source.label, target.label);
  const Rect& r = spec.pixel;
  require_shape(r.top >= 0 && r.left >= 0 && r.bottom() <= source.image.height() &&
                    r.right() <= source.image.width(),
                "cutmix: rectangle outside image");
  LabelMap mask(source.image.height(), source.image.width(), 0);
  for (int y = r.top; y < r.bottom(); ++y)
    for (int x = r.left; x < r.right(); ++x) mask.at(y, x) = 1;
  return detail::compose(source.image, source.label, target.image, target.label, std::move(mask),
                         MixKind::CutMix);
}

// Pixels whose source label is selected keep source image and label; the
// remainder comes from the target image with its pseudo-label.
inline MixedSample apply_classmix(const Sample& source, const ImageTensor& target_image,
                                  const LabelMap& target_pseudo, const ClassMixSpec& spec) {
  detail::check_pair(source.image, target_image, source.label, target_pseudo);
  LabelMap mask(source.image.height(), source.image.width(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    Label l = source.label.data[i];
    mask.data[i] = (l != kIgnore && spec.contains(l)) ? 1 : 0;
  }
  return detail::compose(target_image, target_pseudo, source.image, source.label, std::move(mask),
                         MixKind::ClassMix);
}

// Label map at feature resolution: the most frequent non-IGNORE label of each
// stride x stride block (ties toward the lowest id; all-IGNORE blocks stay
// IGNORE).
inline LabelMap downsample_labels(const LabelMap& labels, int stride) {
  const int h = feature_extent(labels.h, stride), w = feature_extent(labels.w, stride);
  LabelMap out(h, w, kIgnore);
  std::vector<int> hist(256);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      std::fill(hist.begin(), hist.end(), 0);
      for (int y = r * stride; y < std::min(labels.h, (r + 1) * stride); ++y)
        for (int x = c * stride; x < std::min(labels.w, (c + 1) * stride); ++x) ++hist[labels.at(y, x)];
      int best = -1;
      for (int k = 0; k < 255; ++k)
        if (hist[k] > 0 && (best < 0 || hist[k] > hist[best])) best = k;
      if (best >= 0) out.at(r, c) = static_cast<Label>(best);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Photometric augmentation

// Hue rotation about the gray axis.
inline std::array<double, 3> rotate_hue(const std::array<double, 3>& rgb, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double k = (1.0 - c) / 3.0, r3 = std::sqrt(1.0 / 3.0) * s;
  const double m00 = c + k, m01 = k - r3, m02 = k + r3;
  return {m00 * rgb[0] + m01 * rgb[1] + m02 * rgb[2], m02 * rgb[0] + m00 * rgb[1] + m01 * rgb[2],
          m01 * rgb[0] + m02 * rgb[1] + m00 * rgb[2]};
}

struct PhotometricParams {
  double brightness = 0.0;  // factor drawn from [1 - b, 1 + b]
  double contrast = 0.0;
  double saturation = 0.0;
  double hue = 0.0;  // rotation drawn from [-hue, hue] degrees
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 0.0;
};

namespace detail {
inline double luma(const ImageTensor& img, int r, int c) {
  return 0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
}

inline void gaussian_blur(ImageTensor& img, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  const int H = img.height(), W = img.width();
  ImageTensor tmp(H, W);
  // Horizontal then vertical pass, replicate border.
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * img.at(r, std::clamp(c + i, 0, W - 1), ch);
        tmp.at(r, c, ch) = acc;
      }
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp.at(std::clamp(r + i, 0, H - 1), c, ch);
        img.at(r, c, ch) = acc;
      }
}
}  // namespace detail

inline ImageTensor photometric_augment(const ImageTensor& image, RngHandle& rng, const PhotometricParams& p) {
  ImageTensor out = image;
  const int H = out.height(), W = out.width();
  // Always draw all factors so the stream layout is independent of the ranges.
  double fb = 1.0 + p.brightness * rng.uniform(-1.0, 1.0);
  double fc = 1.0 + p.contrast * rng.uniform(-1.0, 1.0);
  double fs = 1.0 + p.saturation * rng.uniform(-1.0, 1.0);
  double rot = p.hue * rng.uniform(-1.0, 1.0);
  double u = rng.uniform();
  double sigma = p.blur_sigma_min;
  if (p.blur_sigma_max > p.blur_sigma_min) sigma += u * (p.blur_sigma_max - p.blur_sigma_min);

  if (fb != 1.0)
    for (double& v : out.pixels.data) v = std::clamp(v * fb, 0.0, 1.0);
  if (fc != 1.0) {
    double mean = 0.0;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) mean += detail::luma(out, r, c);
    mean /= static_cast<double>(H) * W;
    for (double& v : out.pixels.data) v = std::clamp((v - mean) * fc + mean, 0.0, 1.0);
  }
  if (fs != 1.0) {
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        double g = detail::luma(out, r, c);
        for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = std::clamp(g + (out.at(r, c, ch) - g) * fs, 0.0, 1.0);
      }
  }
  if (rot != 0.0) {
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        auto px = rotate_hue({out.at(r, c, 0), out.at(r, c, 1), out.at(r, c, 2)}, rot);
        for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = std::clamp(px[ch], 0.0, 1.0);
      }
  }
  if (sigma > 0.0) {
    detail::gaussian_blur(out, sigma);
    for (double& v : out.pixels.data) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace rccr
