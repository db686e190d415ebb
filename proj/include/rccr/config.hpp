#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rccr/contrastive.hpp"
#include "rccr/core.hpp"
#include "rccr/data.hpp"
#include "rccr/mixing.hpp"
#include "rccr/models.hpp"
#include "rccr/nn.hpp"

namespace rccr {

struct AblationFlags {
  bool cons = true;  // ClassMix consistency branch (off: source-only)
  bool rwc = false;
  bool ns_random = false;
  bool ns_category = false;
  bool positive_sampling = false;
  bool memory_bank = false;
  bool use_projector = true;
  bool contrast_on_z = false;

  bool operator==(const AblationFlags&) const = default;
};

struct LossWeights {
  double ce = 1.0;
  double cons = 1.0;
  double cont = 1.0;
  double confidence_threshold = 0.968;
  bool cutmix_ce = false;
};

struct MixingConfig {
  CutMixParams cutmix;
  PhotometricParams photometric{0.2, 0.2, 0.2, 0.0, 0.0, 0.8};
  bool augment_cutmix = true;
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | manifest
  SyntheticSceneSpec scene;
  std::uint64_t seed = 1234;
  std::size_t train_size = 2000;
  std::size_t val_size = 100;
  std::string source_manifest;
  std::string target_manifest;
  std::string target_val_manifest;
};

struct TrainSchedule {
  int batch_size = 2;
  long iterations = 1500;
  long eval_every = 500;
  long checkpoint_every = 500;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  DataConfig data;
  ModelConfig model;
  ContrastiveConfig contrastive;
  bool normalize_embeddings = true;
  int bank_depth = 3;
  int bank_capacity = 256;
  double ema_decay = 0.999;
  LossWeights loss;
  AblationFlags ablation;
  nn::SgdConfig optim{0.01, 0.9, 5e-4, 0.9, 1};
  MixingConfig mixing;
  TrainSchedule train;
  std::string device = "cpu";

  int num_classes() const { return data.scene.num_classes; }
  int stride() const { return model.total_stride(); }

  // Contrastive settings with the ablation flags applied.
  ContrastiveConfig effective_contrastive() const {
    ContrastiveConfig c = contrastive;
    c.use_ns_random = ablation.ns_random;
    c.use_ns_category = ablation.ns_category;
    c.use_positive_sampling = ablation.positive_sampling;
    c.use_memory_bank = ablation.memory_bank;
    return c;
  }

  void validate() const {
    data.scene.validate();
    contrastive.validate();
    const auto& a = ablation;
    for (auto [name, w] : {std::pair{"loss.ce", loss.ce}, {"loss.cons", loss.cons}, {"loss.cont", loss.cont}})
      if (!(w >= 0.0)) throw ConfigError(std::string(name) + ": loss weights must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema.decay: must lie in [0, 1]");
    if (!a.rwc && (a.ns_random || a.ns_category || a.positive_sampling || a.memory_bank || a.contrast_on_z))
      throw ConfigError("ablation: NS_R, NS_C, PS, MB and contrast_on_z require RWC");
    if (a.contrast_on_z && a.use_projector)
      throw ConfigError("ablation.contrast_on_z: contrasting encoder features requires use_projector=false");
    if (a.rwc && !a.contrast_on_z && !a.use_projector)
      throw ConfigError("ablation.use_projector: RWC on embeddings needs the projector (or set contrast_on_z)");
    if (model.channels.empty() || model.channels.size() != model.strides.size())
      throw ConfigError("model: channels and strides must be non-empty and of equal length");
    for (int s : model.strides)
      if (s < 1) throw ConfigError("model.strides: entries must be >= 1");
    if (model.proj_dim >= model.feature_dim())
      throw ConfigError("model.proj_dim: K must be below the feature width D");
    if (data.scene.height < stride() || data.scene.width < stride())
      throw ConfigError("data: canvas smaller than the backbone stride");
    if (bank_depth < 0 || bank_capacity < 0) throw ConfigError("bank: depth and capacity must be >= 0");
    if (train.batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
    if (train.iterations < 0) throw ConfigError("train.iterations: must be >= 0");
    if (optim.lr <= 0.0) throw ConfigError("optim.lr: must be > 0");
    if (data.kind != "synthetic" && data.kind != "manifest") throw ConfigError("data.kind: synthetic or manifest");
    if (device != "cpu") throw ConfigError("device: only 'cpu' is available in this build");
    const auto& cm = mixing.cutmix;
    if (!(cm.area_min > 0.0 && cm.area_min <= cm.area_max && cm.area_max <= 1.0))
      throw ConfigError("mixing.cutmix_area: need 0 < min <= max <= 1");
  }
};

// ---------------------------------------------------------------------------
// JSON mapping. Every key is optional on input; unknown keys are rejected.

inline nlohmann::json to_json(const TrainConfig& c) {
  using nlohmann::json;
  const auto& s = c.data.scene;
  json j;
  j["data"] = {{"kind", c.data.kind},
               {"seed", c.data.seed},
               {"train_size", c.data.train_size},
               {"val_size", c.data.val_size},
               {"source_manifest", c.data.source_manifest},
               {"target_manifest", c.data.target_manifest},
               {"target_val_manifest", c.data.target_val_manifest},
               {"scene",
                {{"height", s.height},
                 {"width", s.width},
                 {"num_classes", s.num_classes},
                 {"min_objects", s.min_objects},
                 {"max_objects", s.max_objects},
                 {"radius_min", s.radius_min},
                 {"radius_max", s.radius_max},
                 {"class_hue_base", s.class_hue_base},
                 {"class_hue_step", s.class_hue_step},
                 {"hue_jitter", s.hue_jitter},
                 {"saturation_min", s.saturation_min},
                 {"saturation_max", s.saturation_max},
                 {"value_min", s.value_min},
                 {"value_max", s.value_max},
                 {"background_value", s.background_value},
                 {"background_texture", s.background_texture},
                 {"target_hue_rotation", s.target_hue_rotation},
                 {"target_contrast", s.target_contrast},
                 {"target_noise", s.target_noise},
                 {"illumination_top", s.illumination_top},
                 {"illumination_bottom", s.illumination_bottom}}}};
  j["model"] = {{"channels", c.model.channels},
                {"strides", c.model.strides},
                {"proj_hidden", c.model.proj_hidden},
                {"proj_dim", c.model.proj_dim}};
  j["contrastive"] = {{"temperature", c.contrastive.temperature},
                      {"positive_threshold", c.contrastive.positive_threshold},
                      {"normalize", c.normalize_embeddings},
                      {"same_category", c.contrastive.same_category == SameCategoryMode::Filter ? "filter"
                                                                                               : "positive"}};
  j["bank"] = {{"depth", c.bank_depth}, {"capacity", c.bank_capacity}};
  j["ema"] = {{"decay", c.ema_decay}};
  j["loss"] = {{"ce", c.loss.ce},
               {"cons", c.loss.cons},
               {"cont", c.loss.cont},
               {"confidence_threshold", c.loss.confidence_threshold},
               {"cutmix_ce", c.loss.cutmix_ce}};
  j["ablation"] = {{"CONS", c.ablation.cons},
                   {"RWC", c.ablation.rwc},
                   {"NS_R", c.ablation.ns_random},
                   {"NS_C", c.ablation.ns_category},
                   {"PS", c.ablation.positive_sampling},
                   {"MB", c.ablation.memory_bank},
                   {"use_projector", c.ablation.use_projector},
                   {"contrast_on_z", c.ablation.contrast_on_z}};
  j["optim"] = {{"lr", c.optim.lr},
                {"momentum", c.optim.momentum},
                {"weight_decay", c.optim.weight_decay},
                {"power", c.optim.power}};
  const auto& p = c.mixing.photometric;
  j["mixing"] = {{"cutmix_area", {c.mixing.cutmix.area_min, c.mixing.cutmix.area_max}},
                 {"cutmix_aspect", {c.mixing.cutmix.aspect_min, c.mixing.cutmix.aspect_max}},
                 {"align_to_stride", c.mixing.cutmix.align_to_stride},
                 {"brightness", p.brightness},
                 {"contrast", p.contrast},
                 {"saturation", p.saturation},
                 {"hue", p.hue},
                 {"blur_sigma", {p.blur_sigma_min, p.blur_sigma_max}},
                 {"augment_cutmix", c.mixing.augment_cutmix}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"iterations", c.train.iterations},
                {"eval_every", c.train.eval_every},
                {"checkpoint_every", c.train.checkpoint_every},
                {"seed", c.train.seed}};
  j["device"] = c.device;
  return j;
}

namespace detail {

// Overlays `patch` onto `base`, rejecting keys absent from `base`.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: expected an object at '" + path + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object())
      merge_strict(slot, it.value(), key);
    else
      slot = it.value();
  }
}

template <typename T>
T get_as(const nlohmann::json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + path + "." + key + "' has the wrong type");
  }
}

inline std::pair<double, double> get_range(const nlohmann::json& j, const char* key, const std::string& path) {
  auto v = get_as<std::vector<double>>(j, key, path);
  if (v.size() != 2) throw ConfigError("config key '" + path + "." + key + "' must be a [min, max] pair");
  return {v[0], v[1]};
}

}  // namespace detail

inline TrainConfig config_from_json(const nlohmann::json& patch) {
  using detail::get_as;
  nlohmann::json j = to_json(TrainConfig{});
  detail::merge_strict(j, patch, "");

  TrainConfig c;
  const auto& d = j["data"];
  c.data.kind = get_as<std::string>(d, "kind", "data");
  c.data.seed = get_as<std::uint64_t>(d, "seed", "data");
  c.data.train_size = get_as<std::size_t>(d, "train_size", "data");
  c.data.val_size = get_as<std::size_t>(d, "val_size", "data");
  c.data.source_manifest = get_as<std::string>(d, "source_manifest", "data");
  c.data.target_manifest = get_as<std::string>(d, "target_manifest", "data");
  c.data.target_val_manifest = get_as<std::string>(d, "target_val_manifest", "data");
  const auto& s = d["scene"];
  auto& sc = c.data.scene;
  const std::string sp = "data.scene";
  sc.height = get_as<int>(s, "height", sp);
  sc.width = get_as<int>(s, "width", sp);
  sc.num_classes = get_as<int>(s, "num_classes", sp);
  sc.min_objects = get_as<int>(s, "min_objects", sp);
  sc.max_objects = get_as<int>(s, "max_objects", sp);
  sc.radius_min = get_as<double>(s, "radius_min", sp);
  sc.radius_max = get_as<double>(s, "radius_max", sp);
  sc.class_hue_base = get_as<double>(s, "class_hue_base", sp);
  sc.class_hue_step = get_as<double>(s, "class_hue_step", sp);
  sc.hue_jitter = get_as<double>(s, "hue_jitter", sp);
  sc.saturation_min = get_as<double>(s, "saturation_min", sp);
  sc.saturation_max = get_as<double>(s, "saturation_max", sp);
  sc.value_min = get_as<double>(s, "value_min", sp);
  sc.value_max = get_as<double>(s, "value_max", sp);
  sc.background_value = get_as<double>(s, "background_value", sp);
  sc.background_texture = get_as<double>(s, "background_texture", sp);
  sc.target_hue_rotation = get_as<double>(s, "target_hue_rotation", sp);
  sc.target_contrast = get_as<double>(s, "target_contrast", sp);
  sc.target_noise = get_as<double>(s, "target_noise", sp);
  sc.illumination_top = get_as<double>(s, "illumination_top", sp);
  sc.illumination_bottom = get_as<double>(s, "illumination_bottom", sp);

  const auto& m = j["model"];
  c.model.channels = get_as<std::vector<int>>(m, "channels", "model");
  c.model.strides = get_as<std::vector<int>>(m, "strides", "model");
  c.model.proj_hidden = get_as<int>(m, "proj_hidden", "model");
  c.model.proj_dim = get_as<int>(m, "proj_dim", "model");
  c.model.num_classes = sc.num_classes;

  const auto& ct = j["contrastive"];
  c.contrastive.temperature = get_as<double>(ct, "temperature", "contrastive");
  c.contrastive.positive_threshold = get_as<double>(ct, "positive_threshold", "contrastive");
  c.normalize_embeddings = get_as<bool>(ct, "normalize", "contrastive");
  auto mode = get_as<std::string>(ct, "same_category", "contrastive");
  if (mode == "filter")
    c.contrastive.same_category = SameCategoryMode::Filter;
  else if (mode == "positive")
    c.contrastive.same_category = SameCategoryMode::AsPositive;
  else
    throw ConfigError("config key 'contrastive.same_category' must be 'filter' or 'positive'");

  c.bank_depth = get_as<int>(j["bank"], "depth", "bank");
  c.bank_capacity = get_as<int>(j["bank"], "capacity", "bank");
  c.ema_decay = get_as<double>(j["ema"], "decay", "ema");

  const auto& l = j["loss"];
  c.loss.ce = get_as<double>(l, "ce", "loss");
  c.loss.cons = get_as<double>(l, "cons", "loss");
  c.loss.cont = get_as<double>(l, "cont", "loss");
  c.loss.confidence_threshold = get_as<double>(l, "confidence_threshold", "loss");
  c.loss.cutmix_ce = get_as<bool>(l, "cutmix_ce", "loss");

  const auto& a = j["ablation"];
  c.ablation.cons = get_as<bool>(a, "CONS", "ablation");
  c.ablation.rwc = get_as<bool>(a, "RWC", "ablation");
  c.ablation.ns_random = get_as<bool>(a, "NS_R", "ablation");
  c.ablation.ns_category = get_as<bool>(a, "NS_C", "ablation");
  c.ablation.positive_sampling = get_as<bool>(a, "PS", "ablation");
  c.ablation.memory_bank = get_as<bool>(a, "MB", "ablation");
  c.ablation.use_projector = get_as<bool>(a, "use_projector", "ablation");
  c.ablation.contrast_on_z = get_as<bool>(a, "contrast_on_z", "ablation");

  const auto& o = j["optim"];
  c.optim.lr = get_as<double>(o, "lr", "optim");
  c.optim.momentum = get_as<double>(o, "momentum", "optim");
  c.optim.weight_decay = get_as<double>(o, "weight_decay", "optim");
  c.optim.power = get_as<double>(o, "power", "optim");

  const auto& mx = j["mixing"];
  std::tie(c.mixing.cutmix.area_min, c.mixing.cutmix.area_max) = detail::get_range(mx, "cutmix_area", "mixing");
  std::tie(c.mixing.cutmix.aspect_min, c.mixing.cutmix.aspect_max) =
      detail::get_range(mx, "cutmix_aspect", "mixing");
  c.mixing.cutmix.align_to_stride = get_as<bool>(mx, "align_to_stride", "mixing");
  c.mixing.photometric.brightness = get_as<double>(mx, "brightness", "mixing");
  c.mixing.photometric.contrast = get_as<double>(mx, "contrast", "mixing");
  c.mixing.photometric.saturation = get_as<double>(mx, "saturation", "mixing");
  c.mixing.photometric.hue = get_as<double>(mx, "hue", "mixing");
  std::tie(c.mixing.photometric.blur_sigma_min, c.mixing.photometric.blur_sigma_max) =
      detail::get_range(mx, "blur_sigma", "mixing");
  c.mixing.augment_cutmix = get_as<bool>(mx, "augment_cutmix", "mixing");

  const auto& t = j["train"];
  c.train.batch_size = get_as<int>(t, "batch_size", "train");
  c.train.iterations = get_as<long>(t, "iterations", "train");
  c.train.eval_every = get_as<long>(t, "eval_every", "train");
  c.train.checkpoint_every = get_as<long>(t, "checkpoint_every", "train");
  c.train.seed = get_as<std::uint64_t>(t, "seed", "train");
  c.optim.total_iterations = std::max(1L, c.train.iterations);

  c.device = get_as<std::string>(j, "device", "");
  c.validate();
  return c;
}

// Parses "a.b.c=VALUE"; VALUE is read as JSON when possible, else as a string.
inline void apply_override(nlohmann::json& patch, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  // Reject unknown paths early so the message names the override key.
  nlohmann::json probe = to_json(TrainConfig{});
  nlohmann::json* slot = &patch;
  nlohmann::json* known = &probe;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!known->is_object() || !known->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    known = &(*known)[part];
    if (!slot->is_object()) *slot = nlohmann::json::object();
    slot = &(*slot)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *slot = value;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

struct AblationRow {
  std::string id;
  AblationFlags flags;
};

// Cumulative component rows: baseline, I (RWC), II (+NS(R)), III (+NS(C)),
// IV (+PS), V (+MB).
inline std::vector<AblationRow> component_rows() {
  std::vector<AblationRow> rows;
  AblationFlags f;
  rows.push_back({"baseline", f});
  f.rwc = true;
  rows.push_back({"I", f});
  f.ns_random = true;
  rows.push_back({"II", f});
  f.ns_category = true;
  rows.push_back({"III", f});
  f.positive_sampling = true;
  rows.push_back({"IV", f});
  f.memory_bank = true;
  rows.push_back({"V", f});
  return rows;
}

// Named rows usable in sweep specs: the component rows plus source_only,
// no_projector and cont_z.
inline AblationRow named_row(const std::string& id) {
  for (auto& r : component_rows())
    if (r.id == id) return r;
  AblationFlags f;
  if (id == "source_only") {
    f.cons = false;
    return {id, f};
  }
  if (id == "no_projector") {
    f.use_projector = false;
    return {id, f};
  }
  if (id == "cont_z" || id == "cont_e") {
    f = component_rows().back().flags;
    if (id == "cont_z") {
      f.use_projector = false;
      f.contrast_on_z = true;
    }
    return {id, f};
  }
  throw ConfigError("unknown ablation row '" + id + "'");
}

}  // namespace rccr
