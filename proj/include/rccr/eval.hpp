#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rccr/core.hpp"

namespace rccr {

// C x C counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0)
      : n_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const { return n_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * n_ + pred]; }
  std::int64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * n_ + pred]; }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require_shape(o.n_ == n_, "confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_;
  std::vector<std::int64_t> counts_;
};

inline void accumulate(ConfusionMatrix& cm, const LabelMap& prediction, const LabelMap& truth) {
  require_shape(prediction.h == truth.h && prediction.w == truth.w, "accumulate: shape mismatch");
  const int C = cm.num_classes();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    Label t = truth.data[i];
    if (t == kIgnore) continue;
    Label p = prediction.data[i];
    require(t < C, "accumulate: truth label out of range");
    require(p < C, "accumulate: prediction label out of range");
    ++cm.at(t, p);
  }
}

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt: undefined (no TP, FP or FN)
  double mean = 0.0;
  std::size_t counted = 0;
};

// IoU_c = TP / (TP + FP + FN); undefined classes are skipped in the mean.
// `subset`, when given, restricts which classes enter the mean.
inline IouReport miou(const ConfusionMatrix& cm, const std::optional<std::set<int>>& subset = std::nullopt) {
  const int C = cm.num_classes();
  IouReport r;
  r.per_class.resize(C);
  for (int c = 0; c < C; ++c) {
    std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int k = 0; k < C; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    std::int64_t denom = tp + fp + fn;
    if (denom > 0) r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  double sum = 0.0;
  for (int c = 0; c < C; ++c) {
    if (subset && !subset->contains(c)) continue;
    if (!r.per_class[c]) continue;
    sum += *r.per_class[c];
    ++r.counted;
  }
  if (r.counted == 0) throw Error("miou: empty effective class subset");
  r.mean = sum / static_cast<double>(r.counted);
  return r;
}

// Index sets for the 16-class SYNTHIA protocol: all 16 classes, and the
// 13-class subset that drops wall, fence and pole.
inline std::set<int> synthia16_classes() {
  std::set<int> s;
  for (int i = 0; i < 16; ++i) s.insert(i);
  return s;
}
inline std::set<int> synthia13_classes() {
  auto s = synthia16_classes();
  for (int excluded : {3, 4, 5}) s.erase(excluded);
  return s;
}
inline const std::vector<std::string>& synthia16_names() {
  static const std::vector<std::string> names{"road",  "sidewalk", "building", "wall",   "fence", "pole",
                                              "light", "sign",     "vegetation", "sky", "person", "rider",
                                              "car",   "bus",      "motocycle", "bike"};
  return names;
}

inline nlohmann::json report_to_json(const IouReport& r, const std::vector<std::string>& names = {}) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    nlohmann::json row{{"class", c}};
    if (c < names.size()) row["name"] = names[c];
    row["iou"] = r.per_class[c] ? nlohmann::json(*r.per_class[c]) : nlohmann::json(nullptr);
    rows.push_back(std::move(row));
  }
  return {{"per_class", rows}, {"miou", r.mean}, {"classes_counted", r.counted}};
}

}  // namespace rccr
