#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rccr/contrastive.hpp"
#include "rccr/eval.hpp"
#include "rccr/membank.hpp"
#include "rccr/mixing.hpp"
#include "rccr/models.hpp"
#include "rccr/reference.hpp"

namespace rccr::selftest {

struct SuiteResult {
  std::string name;
  bool passed = true;
  long cases = 0;
  std::string message;
};

struct Options {
  double temperature = 0.1;
  int oracle_cases = 120;
  int mixing_cases = 1000;
  std::uint64_t seed = 2024;
};

// ---------------------------------------------------------------------------
// Random contrastive problems

struct RandomProblem {
  EmbeddingGrid e_t;
  EmbeddingGrid e_cut;
  RealGrid bank;
  ContrastiveBatchPlan plan;
};

inline RealGrid random_unit_grid(RngHandle& rng, int h, int w, int k) {
  RealGrid g(h, w, k);
  for (double& v : g.data) v = rng.normal();
  return nn::l2_normalize(g);
}

// Arbitrary plan over an h x w x k problem: random anchors, 1-3 positives and
// 0..2hw negatives drawn from all three sources.
inline RandomProblem random_problem(RngHandle& rng, int h, int w, int k, int bank_size) {
  RandomProblem p;
  p.e_t = {random_unit_grid(rng, h, w, k), true};
  p.e_cut = {random_unit_grid(rng, h, w, k), true};
  p.bank = bank_size > 0 ? random_unit_grid(rng, bank_size, 1, k) : RealGrid(0, 1, k);
  p.plan.h = h;
  p.plan.w = w;
  const int cells = h * w;
  auto random_ref = [&](bool allow_bank) {
    int pick = rng.uniform_int(0, allow_bank && bank_size > 0 ? 2 : 1);
    if (pick == 2) return EmbeddingRef{EmbeddingSource::Bank, rng.uniform_int(0, bank_size - 1), 0};
    auto src = pick == 0 ? EmbeddingSource::TeacherTarget : EmbeddingSource::StudentCut;
    return EmbeddingRef{src, rng.uniform_int(0, cells - 1), 0};
  };
  int anchors = rng.uniform_int(0, cells);
  for (int i = 0; i < anchors; ++i) {
    AnchorPlan ap;
    ap.cell = rng.uniform_int(0, cells - 1);
    ap.region = {ap.cell / w, ap.cell % w, true};
    ap.positives.push_back({EmbeddingSource::StudentCut, ap.cell, 0});
    int extra = rng.uniform_int(0, 2);
    for (int j = 0; j < extra; ++j) ap.positives.push_back(random_ref(false));
    int negs = rng.uniform_int(0, 2 * cells);
    for (int j = 0; j < negs; ++j) ap.negatives.push_back(random_ref(true));
    p.plan.anchors.push_back(std::move(ap));
  }
  return p;
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-12) {
  return std::abs(a - b) <= rel * std::max(std::abs(b), abs_floor) || std::abs(a - b) <= abs_floor;
}

// ---------------------------------------------------------------------------
// Suites

inline SuiteResult contrastive_suite(const Options& opt) {
  SuiteResult r{"contrastive", true, 0, ""};
  RngHandle rng(opt.seed, 11);
  try {
    for (int i = 0; i < opt.oracle_cases; ++i) {
      int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8), k = rng.uniform_int(2, 16);
      int bank = i % 2 == 0 ? 0 : rng.uniform_int(1, 24);
      RandomProblem p = random_problem(rng, h, w, k, bank);
      double got = rwc_loss(p.plan, p.e_t, p.e_cut, p.bank, opt.temperature).loss;
      double want = reference::contrastive_loss(p.plan, p.e_t, p.e_cut, p.bank, opt.temperature);
      ++r.cases;
      if (!close_rel(got, want, 1e-6)) {
        r.passed = false;
        r.message = "case " + std::to_string(i) + ": vectorized " + std::to_string(got) + " vs oracle " +
                    std::to_string(want);
        return r;
      }
    }
    // Two-term closed form.
    double v = rwc_pair_loss(1.0, std::vector<double>{0.0}, opt.temperature);
    double want = std::log1p(std::exp(-1.0 / opt.temperature));
    ++r.cases;
    if (!close_rel(v, want, 1e-9)) {
      r.passed = false;
      r.message = "closed-form two-term case mismatch";
    }
  } catch (const Error& e) {
    r.passed = false;
    r.message = e.what();
  }
  return r;
}

inline SuiteResult ema_suite(const Options& opt) {
  SuiteResult r{"ema", true, 0, ""};
  RngHandle rng(opt.seed, 12);
  for (double alpha : {0.0, 1.0, 0.5, 0.9, 0.99, 0.999}) {
    std::vector<double> shadow(17), current(17);
    for (auto& v : shadow) v = rng.normal();
    for (auto& v : current) v = rng.normal();
    std::vector<double> expected(17);
    for (int i = 0; i < 17; ++i) expected[i] = alpha * shadow[i] + (1.0 - alpha) * current[i];
    std::vector<double> before = shadow;
    EmaState st{alpha, 0};
    ema_update(st, shadow, current);
    ++r.cases;
    for (int i = 0; i < 17; ++i) {
      bool ok = alpha == 0.0 ? shadow[i] == current[i]
                : alpha == 1.0 ? shadow[i] == before[i]
                               : std::abs(shadow[i] - expected[i]) <= 1e-10;
      if (!ok || st.steps != 1) {
        r.passed = false;
        r.message = "alpha=" + std::to_string(alpha) + " deviates at index " + std::to_string(i);
        return r;
      }
    }
  }
  return r;
}

inline Sample random_sample(RngHandle& rng, int h, int w, int classes) {
  Sample s{ImageTensor(h, w), LabelMap(h, w)};
  for (double& v : s.image.pixels.data) v = rng.uniform();
  for (auto& l : s.label.data) l = rng.uniform() < 0.05 ? kIgnore : static_cast<Label>(rng.uniform_int(0, classes - 1));
  return s;
}

inline SuiteResult mixing_suite(const Options& opt) {
  SuiteResult r{"mixing", true, 0, ""};
  RngHandle rng(opt.seed, 13);
  auto fail = [&](const std::string& m) {
    r.passed = false;
    r.message = m;
  };
  try {
    for (int i = 0; i < opt.mixing_cases && r.passed; ++i) {
      int stride = 1 << rng.uniform_int(0, 3);
      int h = stride * rng.uniform_int(2, 8), w = stride * rng.uniform_int(2, 8);
      Sample src = random_sample(rng, h, w, 5), tgt = random_sample(rng, h, w, 5);
      CutMixParams cp;
      cp.area_min = 0.1;
      cp.area_max = 0.6;
      CutMixSpec spec = sample_cutmix_spec(rng, h, w, stride, cp);
      MixedSample cm = apply_cutmix(src, tgt, spec);
      ClassMixSpec cs = sample_classmix_spec(rng, src.label);
      MixedSample xm = apply_classmix(src, tgt.image, tgt.label, cs);
      ++r.cases;
      for (int y = 0; y < h && r.passed; ++y)
        for (int x = 0; x < w && r.passed; ++x) {
          bool in = spec.pixel.contains(y, x);
          const Sample& from = in ? tgt : src;
          if (cm.mask.at(y, x) != (in ? 1 : 0) || cm.label.at(y, x) != from.label.at(y, x)) fail("cutmix label");
          for (int c = 0; c < 3; ++c)
            if (cm.image.at(y, x, c) != from.image.at(y, x, c)) fail("cutmix pixel");
          Label sl = src.label.at(y, x);
          bool sel = sl != kIgnore && cs.contains(sl);
          const Sample& xf = sel ? src : tgt;
          if (xm.mask.at(y, x) != (sel ? 1 : 0) || xm.label.at(y, x) != xf.label.at(y, x)) fail("classmix label");
          for (int c = 0; c < 3; ++c)
            if (xm.image.at(y, x, c) != xf.image.at(y, x, c)) fail("classmix pixel");
        }
    }
    // Full and empty masks.
    Sample src = random_sample(rng, 16, 16, 3), tgt = random_sample(rng, 16, 16, 3);
    auto full = apply_cutmix(src, tgt, make_cutmix_spec({0, 0, 16, 16}, 4));
    auto none = apply_cutmix(src, tgt, make_cutmix_spec({0, 0, 0, 0}, 4));
    if (!(full.image == tgt.image && full.label == tgt.label)) fail("full-mask identity");
    if (!(none.image == src.image && none.label == src.label)) fail("empty-mask identity");
    r.cases += 2;
  } catch (const Error& e) {
    fail(e.what());
  }
  return r;
}

inline SuiteResult bank_suite(const Options& opt) {
  SuiteResult r{"bank", true, 0, ""};
  RngHandle rng(opt.seed, 14);
  MemoryBank bank(3, 8);
  for (long step = 0; step < 6; ++step) {
    std::vector<BankEntry> batch;
    for (int i = 0; i < 4; ++i) {
      RealGrid g = random_unit_grid(rng, 1, 1, 4);
      batch.push_back({g.data, static_cast<Label>(i), 0});
    }
    bank.push_batch(batch, step, rng);
    ++r.cases;
    long oldest = std::max(0L, step - 2);
    const auto& slabs = bank.slabs();
    bool ok = slabs.size() == static_cast<std::size_t>(std::min(step + 1, 3L)) && slabs.front().stamp == oldest &&
              slabs.back().stamp == step && bank.size() == 4 * slabs.size();
    for (const auto& e : bank.all_entries()) ok &= e.stamp >= oldest && e.stamp <= step;
    if (!ok) {
      r.passed = false;
      r.message = "FIFO window wrong after step " + std::to_string(step);
      return r;
    }
  }
  try {
    bank.push_batch({}, 3, rng);
    r.passed = false;
    r.message = "non-increasing stamp accepted";
  } catch (const Error&) {
    ++r.cases;
  }
  return r;
}

inline SuiteResult miou_suite(const Options&) {
  SuiteResult r{"miou", true, 0, ""};
  LabelMap truth(1, 4), pred(1, 4);
  truth.data = {0, 0, 1, 1};
  pred.data = {0, 1, 1, 1};
  ConfusionMatrix cm(2);
  accumulate(cm, pred, truth);
  auto rep = miou(cm);
  ++r.cases;
  bool ok = cm.at(0, 0) == 1 && cm.at(0, 1) == 1 && cm.at(1, 0) == 0 && cm.at(1, 1) == 2 &&
            rep.per_class[0] == 0.5 && rep.per_class[1] == 2.0 / 3.0 && std::abs(rep.mean - 7.0 / 12.0) < 1e-12;
  auto sub = miou(cm, std::set<int>{1});
  ++r.cases;
  ok &= sub.mean == 2.0 / 3.0;
  ConfusionMatrix perfect(3);
  LabelMap t(2, 2);
  t.data = {0, 1, 2, kIgnore};
  LabelMap p = t;
  p.data[3] = 0;
  accumulate(perfect, p, t);
  ++r.cases;
  ok &= miou(perfect).mean == 1.0;
  ok &= synthia13_classes().size() == 13 && synthia16_classes().size() == 16;
  if (!ok) {
    r.passed = false;
    r.message = "hand-computed mIoU mismatch";
  }
  return r;
}

inline std::vector<SuiteResult> run_all(const Options& opt = {}) {
  return {contrastive_suite(opt), ema_suite(opt), mixing_suite(opt), bank_suite(opt), miou_suite(opt)};
}

}  // namespace rccr::selftest
