#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rccr/config.hpp"
#include "rccr/trainer.hpp"

namespace rccr {

inline constexpr const char* kCheckpointFormat = "rccr-ckpt";
inline constexpr const char* kCheckpointVersion = "1.0";

namespace detail {
inline nlohmann::json params_to_json(const nn::ConstParamList& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto* p : params) out[p->name] = {{"rows", p->rows}, {"cols", p->cols}, {"value", p->value}};
  return out;
}

inline void params_from_json(const nn::ParamList& params, const nlohmann::json& j, const std::string& what) {
  if (j.size() != params.size()) throw Error("checkpoint: " + what + " has the wrong tensor count");
  for (auto* p : params) {
    if (!j.contains(p->name)) throw Error("checkpoint: " + what + " lacks tensor '" + p->name + "'");
    const auto& t = j.at(p->name);
    if (t.at("rows").get<int>() != p->rows || t.at("cols").get<int>() != p->cols)
      throw Error("checkpoint: shape mismatch for " + what + "." + p->name);
    auto v = t.at("value").get<std::vector<double>>();
    if (v.size() != p->size()) throw Error("checkpoint: size mismatch for " + what + "." + p->name);
    p->value = std::move(v);
  }
}

inline nlohmann::json state_params(const TrainState& s) {
  return {{"student", params_to_json(s.student.params())},
          {"student_proj", params_to_json(s.student_proj.params())},
          {"teacher", params_to_json(s.teacher.params())},
          {"teacher_proj", params_to_json(s.teacher_proj.params())}};
}
}  // namespace detail

inline std::vector<std::uint8_t> checkpoint_bytes(const TrainState& s) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = to_json(s.cfg);
  j["step"] = s.step;
  j["params"] = detail::state_params(s);
  j["optimizer"] = {{"velocity", s.optimizer.velocity()}};
  j["ema"] = {{"decay", s.ema.decay}, {"steps", s.ema.steps}};
  nlohmann::json slabs = nlohmann::json::array();
  for (const auto& slab : s.bank.slabs()) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : slab.entries)
      entries.push_back({{"embedding", e.embedding}, {"category", e.category}, {"stamp", e.stamp}});
    slabs.push_back({{"stamp", slab.stamp}, {"entries", std::move(entries)}});
  }
  j["bank"] = {{"slabs", std::move(slabs)}, {"has_stamp", s.bank.has_stamp()}, {"last_stamp", s.bank.last_stamp()}};
  return nlohmann::json::to_cbor(j);
}

inline TrainState state_from_bytes(const std::vector<std::uint8_t>& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::from_cbor(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: unreadable archive (") + e.what() + ")");
  }
  try {
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw Error("checkpoint: not an rccr archive");
    if (j.value("version", "") != kCheckpointVersion)
      throw Error("checkpoint: unsupported version '" + j.value("version", "") + "'");
    TrainState s = init_state(config_from_json(j.at("config")));
    s.step = j.at("step").get<long>();
    const auto& p = j.at("params");
    detail::params_from_json(s.student.params(), p.at("student"), "student");
    detail::params_from_json(s.student_proj.params(), p.at("student_proj"), "student_proj");
    detail::params_from_json(s.teacher.params(), p.at("teacher"), "teacher");
    detail::params_from_json(s.teacher_proj.params(), p.at("teacher_proj"), "teacher_proj");
    auto velocity = j.at("optimizer").at("velocity").get<std::vector<std::vector<double>>>();
    if (!velocity.empty()) {
      auto params = s.student_params();
      if (velocity.size() != params.size()) throw Error("checkpoint: optimizer state has the wrong tensor count");
      for (std::size_t i = 0; i < params.size(); ++i)
        if (velocity[i].size() != params[i]->size()) throw Error("checkpoint: optimizer state shape mismatch");
    }
    s.optimizer.velocity() = std::move(velocity);
    s.ema.decay = j.at("ema").at("decay").get<double>();
    s.ema.steps = j.at("ema").at("steps").get<long>();
    std::deque<BankSlab> slabs;
    for (const auto& sj : j.at("bank").at("slabs")) {
      BankSlab slab{sj.at("stamp").get<long>(), {}};
      for (const auto& ej : sj.at("entries"))
        slab.entries.push_back(
            {ej.at("embedding").get<std::vector<double>>(), ej.at("category").get<Label>(), ej.at("stamp").get<long>()});
      slabs.push_back(std::move(slab));
    }
    s.bank.restore(std::move(slabs), j.at("bank").at("has_stamp").get<bool>(),
                   j.at("bank").at("last_stamp").get<long>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: corrupt archive (") + e.what() + ")");
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto bytes = checkpoint_bytes(s);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return state_from_bytes(bytes);
}

}  // namespace rccr
