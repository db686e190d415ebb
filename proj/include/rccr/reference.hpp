#pragma once

#include <cmath>

#include "rccr/contrastive.hpp"

namespace rccr::reference {

// Straight triple loop over anchors, positives and negatives in long double,
// with no stabilization, no clamping and no shared code with rwc_loss beyond
// the plan types. Used as the equivalence oracle.
inline long double dot(const double* a, const double* b, int k) {
  long double s = 0.0L;
  for (int i = 0; i < k; ++i) s += static_cast<long double>(a[i]) * static_cast<long double>(b[i]);
  return s;
}

inline const double* lookup(const EmbeddingRef& ref, const EmbeddingGrid& e_t, const EmbeddingGrid& e_cut,
                            const RealGrid& bank) {
  switch (ref.source) {
    case EmbeddingSource::TeacherTarget: return e_t.values.cell(ref.index);
    case EmbeddingSource::StudentCut: return e_cut.values.cell(ref.index);
    case EmbeddingSource::Bank: return bank.cell(ref.index);
  }
  return nullptr;
}

inline double contrastive_loss(const ContrastiveBatchPlan& plan, const EmbeddingGrid& e_t,
                               const EmbeddingGrid& e_cut, const RealGrid& bank, double tau) {
  if (!(tau > 0.0)) throw Error("reference: temperature must be > 0");
  const int K = e_t.dim();
  const long double t = tau;
  long double total = 0.0L;
  for (const auto& a : plan.anchors) {
    const double* anchor = e_t.values.cell(a.cell);
    long double per_anchor = 0.0L;
    for (const auto& p : a.positives) {
      long double num = std::exp(dot(anchor, lookup(p, e_t, e_cut, bank), K) / t);
      long double neg = 0.0L;
      for (const auto& n : a.negatives) neg += std::exp(dot(anchor, lookup(n, e_t, e_cut, bank), K) / t);
      per_anchor += std::log(num / (num + neg));
    }
    total += per_anchor / static_cast<long double>(a.positives.size());
  }
  if (plan.anchors.empty()) return 0.0;
  return static_cast<double>(-total / static_cast<long double>(plan.anchors.size()));
}

}  // namespace rccr::reference
