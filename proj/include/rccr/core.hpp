#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rccr {

using Label = std::uint8_t;

// Reserved label id excluded from every loss and from evaluation.
inline constexpr Label kIgnore = 255;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dense row-major h x w x c grid. Cell (r, col) occupies
// data[(r * w + col) * c, ... + c).
template <typename T>
struct Grid {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h_, int w_, int c_, T fill = T{})
      : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::size_t cells() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return data.size(); }

  T& at(int r, int col, int ch) { return data[(static_cast<std::size_t>(r) * w + col) * c + ch]; }
  const T& at(int r, int col, int ch) const {
    return data[(static_cast<std::size_t>(r) * w + col) * c + ch];
  }
  T* cell(std::size_t idx) { return data.data() + idx * c; }
  const T* cell(std::size_t idx) const { return data.data() + idx * c; }

  bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }
  bool operator==(const Grid&) const = default;
};

using RealGrid = Grid<double>;

struct ImageTensor {
  RealGrid pixels;  // H x W x 3, values in [0, 1]

  ImageTensor() = default;
  ImageTensor(int h, int w, double fill = 0.0) : pixels(h, w, 3, fill) {}
  explicit ImageTensor(RealGrid g) : pixels(std::move(g)) {}

  int height() const { return pixels.h; }
  int width() const { return pixels.w; }
  double& at(int r, int c, int ch) { return pixels.at(r, c, ch); }
  double at(int r, int c, int ch) const { return pixels.at(r, c, ch); }
  bool operator==(const ImageTensor&) const = default;
};

struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<Label> data;

  LabelMap() = default;
  LabelMap(int h_, int w_, Label fill = 0)
      : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

  Label& at(int r, int c) { return data[static_cast<std::size_t>(r) * w + c]; }
  Label at(int r, int c) const { return data[static_cast<std::size_t>(r) * w + c]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const LabelMap&) const = default;
};

struct ProbMap {
  RealGrid probs;  // h x w x C softmax outputs
  int classes() const { return probs.c; }
};

struct FeatureGrid {
  RealGrid values;  // h x w x D
  int dim() const { return values.c; }
};

struct EmbeddingGrid {
  RealGrid values;  // h x w x K
  bool normalized = false;
  int dim() const { return values.c; }
};

struct Sample {
  ImageTensor image;
  LabelMap label;
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Feature-grid extent for a backbone with the given total stride.
inline int feature_extent(int pixels, int stride) { return ceil_div(pixels, stride); }

// Deterministic random stream keyed by (seed, stream).
class RngHandle {
 public:
  RngHandle(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x52434352u};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next() { return engine_(); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  int uniform_int(int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Derived child stream; does not advance this handle.
  RngHandle fork(std::uint64_t sub) const {
    return RngHandle(seed_ ^ (0x9E3779B97F4A7C15ull * (stream_ + 1)), sub);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Invariant validation

struct Violation {
  std::string tensor;
  std::string invariant;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Collects named tensors and checks each type's invariants. Never mutates.
class ShapeValidator {
 public:
  explicit ShapeValidator(int num_classes = 0, int stride = 0)
      : num_classes_(num_classes), stride_(stride) {}

  ShapeValidator& image(const std::string& name, const ImageTensor& img) {
    if (img.height() < 1 || img.width() < 1 || img.pixels.c != 3 ||
        img.pixels.size() != static_cast<std::size_t>(img.height()) * img.width() * 3) {
      fail(name, "ImageTensor shape H x W x 3 with H, W >= 1");
      return *this;
    }
    for (double v : img.pixels.data) {
      if (!std::isfinite(v)) {
        fail(name, "ImageTensor entries finite");
        return *this;
      }
      if (v < 0.0 || v > 1.0) {
        fail(name, "ImageTensor entries in [0, 1]");
        return *this;
      }
    }
    last_h_ = img.height();
    last_w_ = img.width();
    return *this;
  }

  ShapeValidator& labels(const std::string& name, const LabelMap& lm) {
    if (lm.h < 1 || lm.w < 1 || lm.data.size() != static_cast<std::size_t>(lm.h) * lm.w) {
      fail(name, "LabelMap shape H x W");
      return *this;
    }
    for (Label v : lm.data) {
      if (v != kIgnore && num_classes_ > 0 && v >= num_classes_) {
        fail(name, "LabelMap range: entries in [0, C-1] or IGNORE");
        break;
      }
    }
    return *this;
  }

  ShapeValidator& probs(const std::string& name, const ProbMap& pm, double tol = 1e-5) {
    const auto& g = pm.probs;
    if (g.c < 1 || g.size() != g.cells() * g.c) {
      fail(name, "ProbMap shape h x w x C");
      return *this;
    }
    if (num_classes_ > 0 && g.c != num_classes_) fail(name, "ProbMap channel count equals C");
    for (std::size_t i = 0; i < g.cells(); ++i) {
      double sum = 0.0;
      bool neg = false;
      for (int k = 0; k < g.c; ++k) {
        double p = g.cell(i)[k];
        neg |= !(p >= 0.0);
        sum += p;
      }
      if (neg) {
        fail(name, "ProbMap entries >= 0");
        return *this;
      }
      if (std::abs(sum - 1.0) > tol) {
        fail(name, "ProbMap normalization: each pixel sums to 1");
        return *this;
      }
    }
    return *this;
  }

  ShapeValidator& features(const std::string& name, const FeatureGrid& f) {
    for (double v : f.values.data) {
      if (!std::isfinite(v)) {
        fail(name, "FeatureGrid entries finite");
        break;
      }
    }
    if (stride_ > 0 && last_h_ > 0 &&
        (f.values.h != feature_extent(last_h_, stride_) ||
         f.values.w != feature_extent(last_w_, stride_))) {
      fail(name, "FeatureGrid extent h = ceil(H / stride), w = ceil(W / stride)");
    }
    return *this;
  }

  ShapeValidator& embeddings(const std::string& name, const EmbeddingGrid& e, int feature_dim = 0,
                             double tol = 1e-5) {
    if (feature_dim > 0 && e.dim() >= feature_dim) fail(name, "EmbeddingGrid K < D");
    for (double v : e.values.data) {
      if (!std::isfinite(v)) {
        fail(name, "EmbeddingGrid entries finite");
        return *this;
      }
    }
    if (e.normalized) {
      for (std::size_t i = 0; i < e.values.cells(); ++i) {
        double n2 = 0.0;
        for (int k = 0; k < e.dim(); ++k) n2 += e.values.cell(i)[k] * e.values.cell(i)[k];
        if (std::abs(std::sqrt(n2) - 1.0) > tol) {
          fail(name, "EmbeddingGrid normalization: unit L2 norm per cell");
          break;
        }
      }
    }
    return *this;
  }

  ValidationReport report() const { return report_; }

 private:
  void fail(const std::string& name, const std::string& what) {
    report_.violations.push_back({name, what});
  }

  int num_classes_;
  int stride_;
  int last_h_ = 0;
  int last_w_ = 0;
  ValidationReport report_;
};

// Per-thread invocation counters used to audit which modules a training
// step actually exercised.
struct CallCounts {
  long encoder = 0;
  long classifier = 0;
  long projector = 0;
  long classmix = 0;
  long cutmix = 0;
  long build_plan = 0;
  long ns_random = 0;
  long ns_category = 0;
  long positive_filter = 0;
  long rwc_loss = 0;
  long bank_push = 0;
  long bank_snapshot = 0;

  bool operator==(const CallCounts&) const = default;
};

inline CallCounts& call_counts() {
  thread_local CallCounts counts;
  return counts;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace rccr
