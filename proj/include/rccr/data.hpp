#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rccr/core.hpp"
#include "rccr/mixing.hpp"

namespace rccr {

// ---------------------------------------------------------------------------
// Netpbm I/O (binary PPM for images, binary PGM for label maps)

namespace detail {
inline std::string read_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

struct NetpbmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
};

inline NetpbmHeader read_header(std::istream& in, const std::string& path) {
  NetpbmHeader h;
  h.magic = read_token(in);
  try {
    h.width = std::stoi(read_token(in));
    h.height = std::stoi(read_token(in));
    h.maxval = std::stoi(read_token(in));
  } catch (const std::exception&) {
    throw Error("netpbm: malformed header in " + path);
  }
  if (h.width < 1 || h.height < 1 || h.maxval != 255)
    throw Error("netpbm: unsupported dimensions or maxval in " + path);
  return h;
}
}  // namespace detail

inline ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  auto h = detail::read_header(in, path.string());
  if (h.magic != "P6") throw Error("expected binary PPM (P6) in " + path.string());
  std::vector<unsigned char> buf(static_cast<std::size_t>(h.width) * h.height * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw Error("truncated image " + path.string());
  ImageTensor img(h.height, h.width);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels.data[i] = buf[i] / 255.0;
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const ImageTensor& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  for (double v : img.pixels.data) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

inline LabelMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open label map " + path.string());
  auto h = detail::read_header(in, path.string());
  if (h.magic != "P5") throw Error("expected binary PGM (P5) in " + path.string());
  LabelMap lm(h.height, h.width);
  in.read(reinterpret_cast<char*>(lm.data.data()), static_cast<std::streamsize>(lm.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(lm.data.size()))
    throw Error("truncated label map " + path.string());
  return lm;
}

inline void write_pgm(const std::filesystem::path& path, const LabelMap& lm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write label map " + path.string());
  out << "P5\n" << lm.w << " " << lm.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(lm.data.data()), static_cast<std::streamsize>(lm.data.size()));
}

// ---------------------------------------------------------------------------
// Dataset interfaces

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t index) const = 0;
};

class Evaluator;

// Only the evaluator can mint this key.
class EvaluationKey {
  EvaluationKey() = default;
  friend class Evaluator;
};

// Trainer-facing view of the target domain: images only. Labels are
// reachable solely with an EvaluationKey.
class TargetImages {
 public:
  explicit TargetImages(std::shared_ptr<const SampleSource> source) : source_(std::move(source)) {
    require(source_ != nullptr, "target dataset: null source");
  }
  std::size_t size() const { return source_->size(); }
  ImageTensor image(std::size_t index) const { return source_->get(index).image; }
  Sample labeled(std::size_t index, const EvaluationKey&) const { return source_->get(index); }

 private:
  std::shared_ptr<const SampleSource> source_;
};

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class Domain { Source, Target };

enum class ShapeKind { Disk, Square, Triangle, Cross };

inline ShapeKind shape_for_class(int cls) { return static_cast<ShapeKind>((cls - 1) % 4); }

struct SyntheticSceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 5;  // class 0 is background
  int min_objects = 2;
  int max_objects = 5;
  double radius_min = 6.0;
  double radius_max = 13.0;

  // Source palette: object hue = class_hue_base + (cls - 1) * class_hue_step
  // + U(-hue_jitter, hue_jitter), all in degrees.
  double class_hue_base = 0.0;
  double class_hue_step = 90.0;
  double hue_jitter = 20.0;
  double saturation_min = 0.55, saturation_max = 0.95;
  double value_min = 0.6, value_max = 0.95;
  double background_value = 0.45;
  double background_texture = 0.08;

  // Target-domain photometric shift.
  double target_hue_rotation = 60.0;
  double target_contrast = 0.85;
  double target_noise = 0.05;
  double illumination_top = 0.6;
  double illumination_bottom = 1.0;

  void validate() const {
    if (height < 1 || width < 1) throw ConfigError("data: canvas must be at least 1 x 1");
    if (num_classes < 2 || num_classes > 254) throw ConfigError("data: num_classes must be in [2, 254]");
    if (min_objects < 0 || max_objects < min_objects) throw ConfigError("data: invalid object count range");
    if (!(radius_min > 0.0) || radius_max < radius_min) throw ConfigError("data: invalid radius range");
  }
};

struct SceneObject {
  int cls = 0;
  double cx = 0.0, cy = 0.0, radius = 0.0;
  std::array<double, 3> rgb{};
};

// Membership of a point offset (dx, dy) from the object center.
inline bool shape_contains(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::Disk: return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::Triangle: return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
    case ShapeKind::Cross: {
      double t = r / 3.0;
      return (std::abs(dx) <= t && std::abs(dy) <= r) || (std::abs(dy) <= t && std::abs(dx) <= r);
    }
  }
  return false;
}

inline std::array<double, 3> hsv_to_rgb(double hue_deg, double s, double v) {
  double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 60.0;
  int i = static_cast<int>(h) % 6;
  double f = h - std::floor(h);
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Object layout; consumes the geometry/palette part of the stream.
inline std::vector<SceneObject> sample_layout(const SyntheticSceneSpec& spec, RngHandle& rng) {
  std::vector<SceneObject> objs;
  int count = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.cls = rng.uniform_int(1, spec.num_classes - 1);
    o.cx = rng.uniform(0.0, spec.width);
    o.cy = rng.uniform(0.0, spec.height);
    o.radius = rng.uniform(spec.radius_min, spec.radius_max);
    double hue = spec.class_hue_base + (o.cls - 1) * spec.class_hue_step + rng.uniform(-spec.hue_jitter, spec.hue_jitter);
    double sat = rng.uniform(spec.saturation_min, spec.saturation_max);
    double val = rng.uniform(spec.value_min, spec.value_max);
    o.rgb = hsv_to_rgb(hue, sat, val);
    objs.push_back(o);
  }
  return objs;
}

// Source and target scenes drawn with equal rng state share their layout and
// labels; the target additionally receives the photometric shift.
inline Sample generate_scene(const SyntheticSceneSpec& spec, RngHandle rng, Domain domain) {
  spec.validate();
  const int H = spec.height, W = spec.width;
  auto objs = sample_layout(spec, rng);
  double bg_hue = rng.uniform(0.0, 360.0);
  double phase_x = rng.uniform(0.0, 2 * std::numbers::pi), phase_y = rng.uniform(0.0, 2 * std::numbers::pi);
  double freq = rng.uniform(0.15, 0.45);
  auto bg = hsv_to_rgb(bg_hue, 0.2, spec.background_value);

  Sample s{ImageTensor(H, W), LabelMap(H, W, 0)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double tex = spec.background_texture * std::sin(freq * x + phase_x) * std::cos(freq * y + phase_y);
      for (int ch = 0; ch < 3; ++ch) s.image.at(y, x, ch) = bg[ch] + tex;
    }
  for (const auto& o : objs) {
    const ShapeKind kind = shape_for_class(o.cls);
    int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.radius - 1)));
    int y1 = std::min(H - 1, static_cast<int>(std::ceil(o.cy + o.radius + 1)));
    int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.radius - 1)));
    int x1 = std::min(W - 1, static_cast<int>(std::ceil(o.cx + o.radius + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!shape_contains(kind, x + 0.5 - o.cx, y + 0.5 - o.cy, o.radius)) continue;
        s.label.at(y, x) = static_cast<Label>(o.cls);
        for (int ch = 0; ch < 3; ++ch) s.image.at(y, x, ch) = o.rgb[ch];
      }
  }

  if (domain == Domain::Target) {
    for (int y = 0; y < H; ++y) {
      double light = H > 1 ? spec.illumination_top + (spec.illumination_bottom - spec.illumination_top) * y / (H - 1.0)
                           : spec.illumination_bottom;
      for (int x = 0; x < W; ++x) {
        auto px = rotate_hue({s.image.at(y, x, 0), s.image.at(y, x, 1), s.image.at(y, x, 2)}, spec.target_hue_rotation);
        for (int ch = 0; ch < 3; ++ch) {
          double v = (px[ch] - 0.5) * spec.target_contrast + 0.5;
          s.image.at(y, x, ch) = v * light + rng.normal(0.0, spec.target_noise);
        }
      }
    }
  }
  for (double& v : s.image.pixels.data) v = std::clamp(v, 0.0, 1.0);
  return s;
}

class SyntheticDataset : public SampleSource {
 public:
  SyntheticDataset(SyntheticSceneSpec spec, std::uint64_t seed, std::uint64_t stream, Domain domain,
                   std::size_t length)
      : spec_(std::move(spec)), seed_(seed), stream_(stream), domain_(domain), length_(length) {
    spec_.validate();
  }

  std::size_t size() const override { return length_; }
  Sample get(std::size_t index) const override {
    require(index < length_, "synthetic dataset: index out of range");
    return generate_scene(spec_, rng_for(index), domain_);
  }
  RngHandle rng_for(std::size_t index) const { return RngHandle(seed_, stream_).fork(index); }
  const SyntheticSceneSpec& spec() const { return spec_; }

 private:
  SyntheticSceneSpec spec_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  Domain domain_;
  std::size_t length_;
};

// ---------------------------------------------------------------------------
// Manifest adapter for on-disk datasets
//
// {
//   "num_classes": 19,
//   "pairs": [{"image": "img/0001.ppm", "label": "lbl/0001.pgm"}, ...],
//   "remap": {"7": 0, "8": 1, ...}          (or "remap_file": "remap.json")
// }
// Paths are relative to the manifest. Raw id 255 is IGNORE; with a remap
// table every other raw id must be listed (a target of 255 also means IGNORE).

class ManifestDataset : public SampleSource {
 public:
  struct Pair {
    std::filesystem::path image;
    std::filesystem::path label;
  };

  ManifestDataset(std::vector<Pair> pairs, int num_classes, std::optional<std::map<int, int>> remap)
      : pairs_(std::move(pairs)), num_classes_(num_classes), remap_(std::move(remap)) {}

  std::size_t size() const override { return pairs_.size(); }
  int num_classes() const { return num_classes_; }

  Sample get(std::size_t index) const override {
    require(index < pairs_.size(), "manifest dataset: index out of range");
    Sample s{read_ppm(pairs_[index].image), read_pgm(pairs_[index].label)};
    require_shape(s.image.height() == s.label.h && s.image.width() == s.label.w,
                  "manifest dataset: image/label size mismatch for " + pairs_[index].image.string());
    for (Label& v : s.label.data) {
      if (v == kIgnore) continue;
      int out = v;
      if (remap_) {
        auto it = remap_->find(v);
        if (it == remap_->end())
          throw Error("manifest dataset: unmapped label id " + std::to_string(v) + " in " +
                      pairs_[index].label.string());
        out = it->second;
      }
      if (out == kIgnore) {
        v = kIgnore;
        continue;
      }
      if (out < 0 || out >= num_classes_)
        throw Error("manifest dataset: label id " + std::to_string(out) + " outside [0, C-1] in " +
                    pairs_[index].label.string());
      v = static_cast<Label>(out);
    }
    return s;
  }

 private:
  std::vector<Pair> pairs_;
  int num_classes_;
  std::optional<std::map<int, int>> remap_;
};

namespace detail {
inline std::map<int, int> parse_remap(const nlohmann::json& j) {
  std::map<int, int> m;
  for (auto it = j.begin(); it != j.end(); ++it) m[std::stoi(it.key())] = it.value().get<int>();
  return m;
}
}  // namespace detail

inline std::shared_ptr<ManifestDataset> adapter_load(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto root = manifest_path.parent_path();
  if (!j.contains("num_classes")) throw Error("manifest: missing num_classes");
  int C = j.at("num_classes").get<int>();
  if (!j.contains("pairs") || !j["pairs"].is_array() || j["pairs"].empty())
    throw Error("manifest: no image/label pairs listed");
  std::vector<ManifestDataset::Pair> pairs;
  for (const auto& p : j["pairs"]) {
    ManifestDataset::Pair pair{root / p.at("image").get<std::string>(), root / p.at("label").get<std::string>()};
    for (const auto& f : {pair.image, pair.label})
      if (!std::filesystem::exists(f)) throw Error("manifest: missing file " + f.string());
    pairs.push_back(std::move(pair));
  }
  std::optional<std::map<int, int>> remap;
  if (j.contains("remap")) {
    remap = detail::parse_remap(j["remap"]);
  } else if (j.contains("remap_file")) {
    auto rp = root / j["remap_file"].get<std::string>();
    std::ifstream rin(rp);
    if (!rin) throw Error("manifest: missing remap file " + rp.string());
    nlohmann::json rj;
    rin >> rj;
    remap = detail::parse_remap(rj);
  }
  return std::make_shared<ManifestDataset>(std::move(pairs), C, std::move(remap));
}

}  // namespace rccr
