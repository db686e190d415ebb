#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rccr/core.hpp"
#include "rccr/membank.hpp"
#include "rccr/mixing.hpp"
#include "rccr/nn.hpp"

namespace rccr {

enum class EmbeddingSource { TeacherTarget, StudentCut, Bank };

inline const char* to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::TeacherTarget: return "teacher_target";
    case EmbeddingSource::StudentCut: return "student_cut";
    case EmbeddingSource::Bank: return "bank";
  }
  return "?";
}

struct RegionIndex {
  int row = 0;
  int col = 0;
  bool inside_overlap = false;
  bool operator==(const RegionIndex&) const = default;
};

struct EmbeddingRef {
  EmbeddingSource source = EmbeddingSource::StudentCut;
  int index = 0;  // grid cell (row * w + col) or bank slot
  Label category = kIgnore;
  bool operator==(const EmbeddingRef&) const = default;
};

struct AnchorPlan {
  RegionIndex region;
  int cell = 0;
  Label category = kIgnore;
  std::vector<EmbeddingRef> positives;
  std::vector<EmbeddingRef> negatives;
};

struct ContrastiveBatchPlan {
  int h = 0;
  int w = 0;
  std::vector<AnchorPlan> anchors;
  std::size_t overlap_cells = 0;    // anchors before any filtering
  std::size_t dropped_by_ps = 0;    // removed by the positive threshold
  std::size_t dropped_ignore = 0;   // IGNORE anchor category under NS(C)

  bool empty() const { return anchors.empty(); }
  std::size_t total_negatives() const {
    std::size_t n = 0;
    for (const auto& a : anchors) n += a.negatives.size();
    return n;
  }
};

// How NS(C) treats same-category negatives.
enum class SameCategoryMode { Filter, AsPositive };

struct ContrastiveConfig {
  double temperature = 0.1;
  double positive_threshold = 0.75;
  bool use_ns_random = false;
  bool use_ns_category = false;
  bool use_positive_sampling = false;
  bool use_memory_bank = false;
  SameCategoryMode same_category = SameCategoryMode::Filter;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("contrastive: temperature must be > 0");
    if (!(positive_threshold >= 0.0 && positive_threshold <= 1.0))
      throw ConfigError("contrastive: positive threshold must lie in [0, 1]");
  }
};

// Keeps floor(n / 2) elements chosen uniformly without replacement, in
// their original order.
template <typename T>
std::vector<T> ns_random(const std::vector<T>& negatives, RngHandle& rng) {
  ++call_counts().ns_random;
  std::vector<T> out;
  out.reserve(negatives.size() / 2);
  std::sample(negatives.begin(), negatives.end(), std::back_inserter(out), negatives.size() / 2,
              rng.engine());
  return out;
}

// Removes every negative whose category equals the anchor's.
template <typename T>
std::vector<T> ns_category(const std::vector<T>& negatives, Label anchor_category) {
  ++call_counts().ns_category;
  std::vector<T> out;
  out.reserve(negatives.size());
  for (const auto& n : negatives)
    if (n.category != anchor_category) out.push_back(n);
  return out;
}

// Keeps anchors whose teacher max-class probability on the target exceeds
// `threshold` (strictly).
inline std::vector<RegionIndex> positive_filter(const std::vector<RegionIndex>& anchors, const ProbMap& probs,
                                                double threshold) {
  ++call_counts().positive_filter;
  std::vector<RegionIndex> out;
  for (const auto& a : anchors) {
    require_shape(a.row >= 0 && a.row < probs.probs.h && a.col >= 0 && a.col < probs.probs.w,
                  "positive_filter: anchor outside probability grid");
    const double* p = &probs.probs.at(a.row, a.col, 0);
    if (*std::max_element(p, p + probs.classes()) > threshold) out.push_back(a);
  }
  return out;
}

struct PlanInputs {
  const CutMixSpec* spec = nullptr;
  const EmbeddingGrid* e_t = nullptr;    // teacher, target image
  const EmbeddingGrid* e_cut = nullptr;  // student, CutMix image
  const ProbMap* teacher_probs = nullptr;  // teacher on target, feature resolution
  const LabelMap* mixed_label = nullptr;   // CutMix label, feature resolution
  const MemoryBank* bank = nullptr;        // may be null
};

// Anchors are the overlap cells; each anchor's positive is the student
// CutMix embedding at the same cell. Base negatives are the teacher-target
// and student-CutMix embeddings at every other cell, then NS(R), NS(C) and
// the bank are applied in that order.
inline ContrastiveBatchPlan build_plan(const PlanInputs& in, const ContrastiveConfig& cfg, RngHandle& rng,
                                       std::vector<BankEntry>* bank_view = nullptr) {
  ++call_counts().build_plan;
  cfg.validate();
  require(in.spec && in.e_t && in.e_cut && in.teacher_probs && in.mixed_label, "build_plan: missing input");
  const RealGrid& et = in.e_t->values;
  const RealGrid& ec = in.e_cut->values;
  require_shape(et.same_shape(ec), "build_plan: e_t and e_cut must share h x w x K");
  require_shape(in.teacher_probs->probs.h == et.h && in.teacher_probs->probs.w == et.w,
                "build_plan: teacher probabilities not at feature resolution");
  require_shape(in.mixed_label->h == et.h && in.mixed_label->w == et.w,
                "build_plan: mixed label not at feature resolution");
  const Rect& fr = in.spec->feature;
  if (fr.empty()) throw Error("build_plan: empty feature rectangle");
  require_shape(fr.top >= 0 && fr.left >= 0 && fr.bottom() <= et.h && fr.right() <= et.w,
                "build_plan: feature rectangle outside grid");

  ContrastiveBatchPlan plan;
  plan.h = et.h;
  plan.w = et.w;
  const int cells = et.h * et.w;
  const LabelMap pseudo = nn::argmax(in.teacher_probs->probs);

  std::vector<RegionIndex> anchors;
  for (int r = fr.top; r < fr.bottom(); ++r)
    for (int c = fr.left; c < fr.right(); ++c) anchors.push_back({r, c, true});
  plan.overlap_cells = anchors.size();
  if (cfg.use_positive_sampling) {
    auto kept = positive_filter(anchors, *in.teacher_probs, cfg.positive_threshold);
    plan.dropped_by_ps = anchors.size() - kept.size();
    anchors = std::move(kept);
  }

  std::vector<BankEntry> bank_entries;
  if (cfg.use_memory_bank && in.bank) bank_entries = in.bank->snapshot_negatives(kIgnore, false);

  for (const auto& region : anchors) {
    AnchorPlan ap;
    ap.region = region;
    ap.cell = region.row * et.w + region.col;
    ap.category = in.mixed_label->data[ap.cell];
    if (cfg.use_ns_category && ap.category == kIgnore) {
      ++plan.dropped_ignore;
      continue;
    }
    ap.positives.push_back({EmbeddingSource::StudentCut, ap.cell, ap.category});

    std::vector<EmbeddingRef> neg;
    neg.reserve(2 * cells);
    for (int j = 0; j < cells; ++j)
      if (j != ap.cell) neg.push_back({EmbeddingSource::TeacherTarget, j, pseudo.data[j]});
    for (int j = 0; j < cells; ++j)
      if (j != ap.cell) neg.push_back({EmbeddingSource::StudentCut, j, in.mixed_label->data[j]});

    if (cfg.use_ns_random) neg = ns_random(neg, rng);
    if (cfg.use_ns_category) {
      if (cfg.same_category == SameCategoryMode::AsPositive) {
        for (const auto& n : neg)
          if (n.category == ap.category) ap.positives.push_back(n);
      }
      neg = ns_category(neg, ap.category);
    }
    if (cfg.use_memory_bank) {
      std::vector<EmbeddingRef> bank_refs;
      bank_refs.reserve(bank_entries.size());
      for (std::size_t s = 0; s < bank_entries.size(); ++s)
        bank_refs.push_back({EmbeddingSource::Bank, static_cast<int>(s), bank_entries[s].category});
      if (cfg.use_ns_category) bank_refs = ns_category(bank_refs, ap.category);
      neg.insert(neg.end(), bank_refs.begin(), bank_refs.end());
    }
    ap.negatives = std::move(neg);
    plan.anchors.push_back(std::move(ap));
  }
  if (bank_view) *bank_view = std::move(bank_entries);
  return plan;
}

// Stacks bank entries into an (n x 1 x K) grid addressable by slot.
inline RealGrid bank_matrix(std::span<const BankEntry> entries, int dim) {
  RealGrid g(static_cast<int>(entries.size()), 1, dim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require_shape(static_cast<int>(entries[i].embedding.size()) == dim, "bank: embedding width mismatch");
    std::copy(entries[i].embedding.begin(), entries[i].embedding.end(), g.cell(i));
  }
  return g;
}

// Loss value and the gradient with respect to the student CutMix embeddings.
// There is deliberately no gradient for the teacher or bank embeddings.
struct RwcResult {
  double loss = 0.0;
  RealGrid grad_cut;
  std::size_t anchors = 0;
};

// Contribution of one (anchor, positive) pair:
//   -log( exp(pos/tau) / (exp(pos/tau) + sum_k exp(neg_k/tau)) )
// Negative terms are summed in ascending order so the result does not depend
// on the order of `negatives`.
inline double rwc_pair_loss(double positive, std::span<const double> negatives, double tau) {
  require(tau > 0.0, "rwc_loss: temperature must be > 0");
  double lp = positive / tau;
  std::vector<double> ln(negatives.begin(), negatives.end());
  for (double& v : ln) v /= tau;
  std::sort(ln.begin(), ln.end());
  double m = ln.empty() ? lp : std::max(lp, ln.back());
  double denom = 0.0;
  for (double v : ln) denom += std::exp(v - m);
  denom += std::exp(lp - m);
  return -(lp - m - std::log(denom));
}

inline RwcResult rwc_loss(const ContrastiveBatchPlan& plan, const EmbeddingGrid& e_t, const EmbeddingGrid& e_cut,
                          const RealGrid& bank, double tau) {
  ++call_counts().rwc_loss;
  if (!(tau > 0.0)) throw Error("rwc_loss: precondition violated, temperature must be > 0");
  require_shape(e_t.values.same_shape(e_cut.values), "rwc_loss: e_t and e_cut must share h x w x K");
  require_shape(plan.h == e_t.values.h && plan.w == e_t.values.w, "rwc_loss: plan grid mismatch");
  const int K = e_t.dim();
  require_shape(bank.size() == 0 || bank.c == K, "rwc_loss: bank embedding width mismatch");

  RwcResult out;
  out.grad_cut = RealGrid(e_cut.values.h, e_cut.values.w, K, 0.0);
  out.anchors = plan.anchors.size();
  if (plan.anchors.empty()) return out;

  const bool clamp = e_t.normalized && e_cut.normalized;
  const auto A = static_cast<Eigen::Index>(plan.anchors.size());
  nn::RowMat anchor_mat(A, K);
  for (Eigen::Index a = 0; a < A; ++a)
    for (int k = 0; k < K; ++k) anchor_mat(a, k) = e_t.values.cell(plan.anchors[a].cell)[k];

  // Similarities of every anchor against every addressable embedding.
  nn::RowMat sim_t = anchor_mat * nn::as_matrix(e_t.values).transpose();
  nn::RowMat sim_c = anchor_mat * nn::as_matrix(e_cut.values).transpose();
  nn::RowMat sim_b;
  if (bank.size() > 0) sim_b = anchor_mat * nn::as_matrix(bank).transpose();

  auto similarity = [&](Eigen::Index a, const EmbeddingRef& ref) {
    double s = 0.0;
    switch (ref.source) {
      case EmbeddingSource::TeacherTarget: s = sim_t(a, ref.index); break;
      case EmbeddingSource::StudentCut: s = sim_c(a, ref.index); break;
      case EmbeddingSource::Bank:
        require(ref.index >= 0 && ref.index < sim_b.cols(), "rwc_loss: bank slot out of range");
        s = sim_b(a, ref.index);
        break;
    }
    return clamp ? std::clamp(s, -1.0, 1.0) : s;
  };
  auto passes_clamp = [&](Eigen::Index a, const EmbeddingRef& ref) {
    if (!clamp) return true;
    double s = ref.source == EmbeddingSource::StudentCut ? sim_c(a, ref.index) : 0.0;
    return s >= -1.0 && s <= 1.0;
  };

  const double inv_n = 1.0 / static_cast<double>(A);
  double total = 0.0;
  std::vector<double> neg_logits, sorted;
  for (Eigen::Index a = 0; a < A; ++a) {
    const AnchorPlan& ap = plan.anchors[a];
    require(!ap.positives.empty(), "rwc_loss: anchor without positives");
    const double* anchor_vec = e_t.values.cell(ap.cell);

    neg_logits.resize(ap.negatives.size());
    for (std::size_t k = 0; k < ap.negatives.size(); ++k) neg_logits[k] = similarity(a, ap.negatives[k]) / tau;
    sorted = neg_logits;
    std::sort(sorted.begin(), sorted.end());
    const double m_neg = sorted.empty() ? -std::numeric_limits<double>::infinity() : sorted.back();
    double neg_sum = 0.0;  // relative to m_neg
    for (double v : sorted) neg_sum += std::exp(v - m_neg);

    const double w = inv_n / static_cast<double>(ap.positives.size());
    double anchor_loss = 0.0;
    std::vector<double> neg_weight(ap.negatives.size(), 0.0);
    for (const auto& pos : ap.positives) {
      const double lp = similarity(a, pos) / tau;
      const double m = std::max(lp, m_neg);
      const double scaled_neg = sorted.empty() ? 0.0 : neg_sum * std::exp(m_neg - m);
      const double e_pos = std::exp(lp - m);
      const double denom = e_pos + scaled_neg;
      const double term = lp - m - std::log(denom);
      if (!std::isfinite(term))
        throw Error("rwc_loss: non-finite term at anchor (" + std::to_string(ap.region.row) + ", " +
                    std::to_string(ap.region.col) + ")");
      anchor_loss -= term;

      // d(-term)/d(lp) = softmax_pos - 1; d(-term)/d(l_k) = softmax_k.
      if (pos.source == EmbeddingSource::StudentCut && passes_clamp(a, pos)) {
        double g = w * (e_pos / denom - 1.0) / tau;
        double* dst = out.grad_cut.cell(pos.index);
        for (int k = 0; k < K; ++k) dst[k] += g * anchor_vec[k];
      }
      for (std::size_t k = 0; k < ap.negatives.size(); ++k)
        neg_weight[k] += std::exp(neg_logits[k] - m) / denom;
    }
    for (std::size_t k = 0; k < ap.negatives.size(); ++k) {
      const auto& ref = ap.negatives[k];
      if (ref.source != EmbeddingSource::StudentCut || !passes_clamp(a, ref)) continue;
      double g = w * neg_weight[k] / tau;
      double* dst = out.grad_cut.cell(ref.index);
      for (int d = 0; d < K; ++d) dst[d] += g * anchor_vec[d];
    }
    total += anchor_loss / static_cast<double>(ap.positives.size());
  }
  out.loss = total * inv_n;
  return out;
}

// Human-readable record of a plan for debugging.
inline nlohmann::json plan_to_json(const ContrastiveBatchPlan& plan, const EmbeddingGrid& e_t,
                                   const EmbeddingGrid& e_cut, const RealGrid& bank, bool include_anchors = true) {
  nlohmann::json j;
  j["grid"] = {plan.h, plan.w};
  j["overlap_cells"] = plan.overlap_cells;
  j["dropped_by_ps"] = plan.dropped_by_ps;
  j["dropped_ignore"] = plan.dropped_ignore;
  j["anchors"] = plan.anchors.size();
  const int K = e_t.dim();
  auto vec = [&](const EmbeddingRef& r) -> const double* {
    switch (r.source) {
      case EmbeddingSource::TeacherTarget: return e_t.values.cell(r.index);
      case EmbeddingSource::StudentCut: return e_cut.values.cell(r.index);
      case EmbeddingSource::Bank: return bank.cell(r.index);
    }
    return nullptr;
  };
  double pos_sum = 0.0, neg_sum = 0.0;
  std::size_t pos_n = 0, neg_n = 0;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& a : plan.anchors) {
    const double* av = e_t.values.cell(a.cell);
    auto dot = [&](const double* b) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += av[k] * b[k];
      return s;
    };
    double ps = 0.0;
    for (const auto& p : a.positives) ps += dot(vec(p));
    double ns = 0.0;
    for (const auto& n : a.negatives) ns += dot(vec(n));
    pos_sum += ps;
    neg_sum += ns;
    pos_n += a.positives.size();
    neg_n += a.negatives.size();
    if (include_anchors) {
      std::size_t from_bank = 0;
      for (const auto& n : a.negatives) from_bank += n.source == EmbeddingSource::Bank;
      list.push_back({{"row", a.region.row},
                      {"col", a.region.col},
                      {"category", static_cast<int>(a.category)},
                      {"positives", a.positives.size()},
                      {"negatives", a.negatives.size()},
                      {"bank_negatives", from_bank},
                      {"mean_positive_similarity", a.positives.empty() ? 0.0 : ps / a.positives.size()}});
    }
  }
  j["mean_positive_similarity"] = pos_n ? pos_sum / pos_n : 0.0;
  j["mean_negative_similarity"] = neg_n ? neg_sum / neg_n : 0.0;
  j["total_negatives"] = neg_n;
  if (include_anchors) j["anchor_list"] = std::move(list);
  return j;
}

}  // namespace rccr
