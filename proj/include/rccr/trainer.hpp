#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rccr/config.hpp"
#include "rccr/contrastive.hpp"
#include "rccr/core.hpp"
#include "rccr/data.hpp"
#include "rccr/eval.hpp"
#include "rccr/membank.hpp"
#include "rccr/mixing.hpp"
#include "rccr/models.hpp"
#include "rccr/nn.hpp"

namespace rccr {

// Stream ids for everything derived from the training seed. Each purpose owns
// its stream, so toggling one branch never shifts another branch's draws.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kStep = 3;

inline constexpr std::uint64_t kClassMix = 0;
inline constexpr std::uint64_t kClassMixAugment = 1;
inline constexpr std::uint64_t kCutMix = 2;
inline constexpr std::uint64_t kCutMixAugment = 3;
inline constexpr std::uint64_t kPlan = 4;
inline constexpr std::uint64_t kBank = 5;
inline constexpr std::uint64_t kPerItem = 8;
}  // namespace streams

struct TrainState {
  TrainConfig cfg;
  SegmentationModel student;
  SegmentationModel teacher;
  ProjectionHead student_proj;
  ProjectionHead teacher_proj;
  nn::Sgd optimizer;
  EmaState ema;
  MemoryBank bank;
  long step = 0;  // completed optimizer steps

  nn::ParamList student_params() {
    auto p = student.params();
    for (auto* q : student_proj.params()) p.push_back(q);
    return p;
  }
  nn::ConstParamList student_params() const {
    auto p = student.params();
    for (const auto* q : student_proj.params()) p.push_back(q);
    return p;
  }
  nn::ParamList teacher_params() {
    auto p = teacher.params();
    for (auto* q : teacher_proj.params()) p.push_back(q);
    return p;
  }
  nn::ConstParamList teacher_params() const {
    auto p = teacher.params();
    for (const auto* q : teacher_proj.params()) p.push_back(q);
    return p;
  }
};

// Fresh state; the teacher starts as an exact copy of the student.
inline TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.cfg = cfg;
  s.cfg.model.num_classes = cfg.num_classes();
  s.cfg.optim.total_iterations = std::max(1L, cfg.train.iterations);
  RngHandle rng(cfg.train.seed, streams::kInit);
  s.student = SegmentationModel(s.cfg.model);
  s.student.init(rng);
  s.student_proj = ProjectionHead(s.cfg.model.feature_dim(), s.cfg.model.proj_hidden, s.cfg.model.proj_dim);
  s.student_proj.init(rng);
  s.teacher = s.student;
  s.teacher_proj = s.student_proj;
  s.optimizer = nn::Sgd(s.cfg.optim);
  s.ema = EmaState{cfg.ema_decay, 0};
  s.bank = MemoryBank(cfg.bank_depth, cfg.bank_capacity, cfg.normalize_embeddings);
  return s;
}

// ---------------------------------------------------------------------------
// Datasets

struct TrainData {
  std::shared_ptr<const SampleSource> source;
  TargetImages target_train;
  TargetImages target_val;
};

inline TrainData make_datasets(const TrainConfig& cfg) {
  if (cfg.data.kind == "manifest") {
    auto src = adapter_load(cfg.data.source_manifest);
    auto tgt = adapter_load(cfg.data.target_manifest);
    auto val = cfg.data.target_val_manifest.empty() ? tgt : adapter_load(cfg.data.target_val_manifest);
    return {src, TargetImages(tgt), TargetImages(val)};
  }
  const auto& sc = cfg.data.scene;
  auto src = std::make_shared<SyntheticDataset>(sc, cfg.data.seed, 1, Domain::Source, cfg.data.train_size);
  auto tgt = std::make_shared<SyntheticDataset>(sc, cfg.data.seed, 2, Domain::Target, cfg.data.train_size);
  auto val = std::make_shared<SyntheticDataset>(sc, cfg.data.seed, 3, Domain::Target, cfg.data.val_size);
  return {src, TargetImages(tgt), TargetImages(val)};
}

struct Batch {
  std::vector<Sample> source;
  std::vector<ImageTensor> target;
};

// Source and target indices for a step depend only on (seed, step).
inline Batch make_batch(const TrainData& data, const TrainConfig& cfg, long step) {
  require(data.source->size() > 0 && data.target_train.size() > 0, "training datasets must be non-empty");
  RngHandle rng = RngHandle(cfg.train.seed, streams::kData).fork(static_cast<std::uint64_t>(step));
  Batch b;
  for (int i = 0; i < cfg.train.batch_size; ++i) {
    auto si = static_cast<std::size_t>(rng.next() % data.source->size());
    auto ti = static_cast<std::size_t>(rng.next() % data.target_train.size());
    b.source.push_back(data.source->get(si));
    b.target.push_back(data.target_train.image(ti));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Losses

struct PseudoLabel {
  LabelMap labels;
  ProbMap probs;
};

inline PseudoLabel pseudo_label(const SegmentationModel& teacher, const ImageTensor& target) {
  TeacherOutput out = teacher_forward(teacher, target);
  return {nn::argmax(out.probs.probs), std::move(out.probs)};
}

// Fraction of target-origin pixels (mask == 0) whose teacher confidence
// exceeds `threshold`; 1 when the mix has no target-origin pixel.
inline double confidence_weight(const ProbMap& teacher_probs, const LabelMap& mask, double threshold) {
  std::size_t total = 0, confident = 0;
  const auto& g = teacher_probs.probs;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.data[i]) continue;
    ++total;
    const double* p = g.cell(i);
    if (*std::max_element(p, p + g.c) > threshold) ++confident;
  }
  return total == 0 ? 1.0 : static_cast<double>(confident) / static_cast<double>(total);
}

// Weighted cross-entropy of the ClassMix prediction against the ClassMix
// label; the returned gradient is that of the weighted loss.
inline nn::CrossEntropy consistency_loss(const ProbMap& p_class, const LabelMap& y_class, double weight) {
  return nn::cross_entropy(p_class.probs, y_class, weight);
}

// ---------------------------------------------------------------------------
// Training step

struct StepReport {
  long step = 0;
  double l_ce = 0.0;
  double l_cons = 0.0;
  double l_cont = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double confidence = 0.0;
  std::size_t overlap_cells = 0;
  std::size_t anchors = 0;
  std::size_t negatives = 0;
  std::size_t bank_size = 0;
  long ema_steps = 0;
  double elapsed_ms = 0.0;
  CallCounts calls;

  // Everything except wall-clock timing.
  bool same_outcome(const StepReport& o) const {
    return step == o.step && l_ce == o.l_ce && l_cons == o.l_cons && l_cont == o.l_cont && total == o.total &&
           lr == o.lr && confidence == o.confidence && overlap_cells == o.overlap_cells && anchors == o.anchors &&
           negatives == o.negatives && bank_size == o.bank_size && ema_steps == o.ema_steps && calls == o.calls;
  }
};

inline nlohmann::json to_json(const CallCounts& c) {
  return {{"encoder", c.encoder},       {"classifier", c.classifier},
          {"projector", c.projector},   {"classmix", c.classmix},
          {"cutmix", c.cutmix},         {"build_plan", c.build_plan},
          {"ns_random", c.ns_random},   {"ns_category", c.ns_category},
          {"positive_filter", c.positive_filter}, {"rwc_loss", c.rwc_loss},
          {"bank_push", c.bank_push},   {"bank_snapshot", c.bank_snapshot}};
}

inline nlohmann::json to_json(const StepReport& r) {
  return {{"type", "step"},      {"step", r.step},           {"l_ce", r.l_ce},
          {"l_cons", r.l_cons},  {"l_cont", r.l_cont},       {"total", r.total},
          {"lr", r.lr},          {"confidence", r.confidence}, {"overlap_cells", r.overlap_cells},
          {"anchors", r.anchors}, {"negatives", r.negatives}, {"bank_size", r.bank_size},
          {"ema_steps", r.ema_steps}, {"elapsed_ms", r.elapsed_ms}, {"calls", to_json(r.calls)}};
}

namespace detail {
inline CallCounts diff(const CallCounts& a, const CallCounts& b) {
  return {a.encoder - b.encoder,         a.classifier - b.classifier,   a.projector - b.projector,
          a.classmix - b.classmix,       a.cutmix - b.cutmix,           a.build_plan - b.build_plan,
          a.ns_random - b.ns_random,     a.ns_category - b.ns_category, a.positive_filter - b.positive_filter,
          a.rwc_loss - b.rwc_loss,       a.bank_push - b.bank_push,     a.bank_snapshot - b.bank_snapshot};
}

inline void scale(RealGrid& g, double s) {
  for (double& v : g.data) v *= s;
}

inline void add(RealGrid& dst, const RealGrid& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}
}  // namespace detail

inline StepReport train_step(TrainState& st, const Batch& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const CallCounts calls_before = call_counts();
  const TrainConfig& cfg = st.cfg;
  const AblationFlags& flags = cfg.ablation;
  const int B = static_cast<int>(batch.source.size());
  require(B > 0 && batch.target.size() == batch.source.size(), "train_step: malformed batch");
  const double inv_b = 1.0 / B;
  const int stride = st.student.stride();
  const ContrastiveConfig ccfg = cfg.effective_contrastive();
  const RngHandle step_rng = RngHandle(cfg.train.seed, streams::kStep).fork(static_cast<std::uint64_t>(st.step));

  for (auto* p : st.student_params()) p->zero_grad();

  StepReport rep;
  rep.step = st.step;
  std::vector<BankEntry> bank_candidates;

  for (int b = 0; b < B; ++b) {
    const Sample& src = batch.source[b];
    const ImageTensor& x_t = batch.target[b];
    ShapeValidator check(cfg.num_classes());
    check.image("source.image", src.image).labels("source.label", src.label).image("target.image", x_t);
    if (ValidationReport vr = check.report(); !vr.ok()) {
      const auto& v = vr.violations.front();
      throw ShapeError("train_step: " + v.tensor + " violates " + v.invariant);
    }
    const int H = src.image.height(), W = src.image.width();
    auto item_rng = [&](std::uint64_t purpose) {
      return step_rng.fork(streams::kPerItem * static_cast<std::uint64_t>(b) + purpose);
    };

    // (1) teacher pseudo-labels on the target image
    TeacherOutput teach = teacher_forward(st.teacher, x_t);
    const LabelMap pseudo = nn::argmax(teach.probs.probs);

    // (2) ClassMix consistency
    if (flags.cons) {
      ++call_counts().classmix;
      RngHandle rng = item_rng(streams::kClassMix);
      ClassMixSpec spec = sample_classmix_spec(rng, src.label);
      MixedSample mixed = apply_classmix(src, x_t, pseudo, spec);
      RngHandle aug = item_rng(streams::kClassMixAugment);
      ImageTensor img = photometric_augment(mixed.image, aug, cfg.mixing.photometric);
      EncoderPass enc = st.student.encode(img, true);
      ClassifierPass cls = st.student.classify(enc.z, H, W, true);
      double weight = confidence_weight(teach.probs, mixed.mask, cfg.loss.confidence_threshold);
      nn::CrossEntropy ce = consistency_loss(cls.probs, mixed.label, weight);
      rep.l_cons += ce.loss * inv_b;
      rep.confidence += weight * inv_b;
      detail::scale(ce.dlogits, cfg.loss.cons * inv_b);
      st.student.backward_encode(enc, st.student.backward_classify(cls, ce.dlogits));
    }

    // (3) supervised source cross-entropy
    {
      EncoderPass enc = st.student.encode(src.image, true);
      ClassifierPass cls = st.student.classify(enc.z, H, W, true);
      nn::CrossEntropy ce = nn::cross_entropy(cls.probs.probs, src.label);
      rep.l_ce += ce.loss * inv_b;
      detail::scale(ce.dlogits, cfg.loss.ce * inv_b);
      st.student.backward_encode(enc, st.student.backward_classify(cls, ce.dlogits));
    }

    // (4) CutMix branch: region-wise contrast and optional CutMix CE
    if (flags.rwc || cfg.loss.cutmix_ce) {
      ++call_counts().cutmix;
      RngHandle rng = item_rng(streams::kCutMix);
      CutMixSpec spec = sample_cutmix_spec(rng, H, W, stride, cfg.mixing.cutmix);
      MixedSample mixed = apply_cutmix(src, Sample{x_t, pseudo}, spec);
      ImageTensor img = mixed.image;
      if (cfg.mixing.augment_cutmix) {
        RngHandle aug = item_rng(streams::kCutMixAugment);
        img = photometric_augment(mixed.image, aug, cfg.mixing.photometric);
      }
      EncoderPass enc = st.student.encode(img, true);
      RealGrid dz(enc.z.values.h, enc.z.values.w, enc.z.values.c, 0.0);

      if (cfg.loss.cutmix_ce) {
        ClassifierPass cls = st.student.classify(enc.z, H, W, true);
        nn::CrossEntropy ce = nn::cross_entropy(cls.probs.probs, mixed.label);
        rep.l_ce += ce.loss * inv_b;
        detail::scale(ce.dlogits, cfg.loss.ce * inv_b);
        detail::add(dz, st.student.backward_classify(cls, ce.dlogits));
      }

      if (flags.rwc) {
        EmbeddingGrid e_cut, e_t;
        ProjectionPass proj_pass;
        std::vector<double> z_norms;
        if (flags.contrast_on_z) {
          if (cfg.normalize_embeddings) {
            e_cut.values = nn::l2_normalize(enc.z.values, &z_norms);
            e_t.values = nn::l2_normalize(teach.z.values);
          } else {
            e_cut.values = enc.z.values;
            e_t.values = teach.z.values;
          }
          e_cut.normalized = e_t.normalized = cfg.normalize_embeddings;
        } else {
          proj_pass = st.student_proj.forward(enc.z, cfg.normalize_embeddings, true);
          e_cut = proj_pass.e;
          e_t = project(st.teacher_proj, teach.z, cfg.normalize_embeddings);
        }
        LabelMap mixed_low = downsample_labels(mixed.label, stride);
        std::vector<BankEntry> bank_view;
        RngHandle plan_rng = item_rng(streams::kPlan);
        ContrastiveBatchPlan plan = build_plan({&spec, &e_t, &e_cut, &teach.probs_low, &mixed_low, &st.bank}, ccfg,
                                               plan_rng, &bank_view);
        RwcResult res = rwc_loss(plan, e_t, e_cut, bank_matrix(bank_view, e_t.dim()), ccfg.temperature);
        rep.l_cont += res.loss * inv_b;
        rep.overlap_cells += plan.overlap_cells;
        rep.anchors += plan.anchors.size();
        rep.negatives += plan.total_negatives();
        detail::scale(res.grad_cut, cfg.loss.cont * inv_b);
        if (flags.contrast_on_z) {
          detail::add(dz, cfg.normalize_embeddings ? nn::l2_normalize_backward(e_cut.values, z_norms, res.grad_cut)
                                                   : res.grad_cut);
        } else {
          detail::add(dz, st.student_proj.backward(proj_pass, res.grad_cut));
        }
        if (flags.memory_bank) {
          const LabelMap pseudo_low = nn::argmax(teach.probs_low.probs);
          for (const auto& a : plan.anchors) {
            const double* v = e_t.values.cell(a.cell);
            bank_candidates.push_back({std::vector<double>(v, v + e_t.dim()), pseudo_low.data[a.cell], st.step});
          }
        }
      }
      st.student.backward_encode(enc, dz);
    }
  }

  rep.total = cfg.loss.ce * rep.l_ce + cfg.loss.cons * rep.l_cons + cfg.loss.cont * rep.l_cont;
  if (!std::isfinite(rep.total))
    throw Error("train_step " + std::to_string(st.step) + ": non-finite loss (L_CE=" + std::to_string(rep.l_ce) +
                ", L_cons=" + std::to_string(rep.l_cons) + ", L_cont=" + std::to_string(rep.l_cont) + ")");

  // (5) optimizer, (6) EMA, (7) bank
  rep.lr = st.optimizer.rate_at(st.step);
  st.optimizer.step(st.student_params(), st.step);
  ema_update(st.ema, st.teacher_params(), std::as_const(st).student_params());
  if (flags.rwc && flags.memory_bank) {
    RngHandle rng = step_rng.fork(streams::kBank);
    st.bank.push_batch(std::move(bank_candidates), st.step, rng);
  }
  rep.bank_size = st.bank.size();
  rep.ema_steps = st.ema.steps;
  ++st.step;
  rep.calls = detail::diff(call_counts(), calls_before);
  rep.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Evaluation

class Evaluator {
 public:
  // Argmax predictions of `model` on up to `limit` images (0 = all).
  static ConfusionMatrix confusion(const SegmentationModel& model, const TargetImages& split, int num_classes,
                                   std::size_t limit = 0) {
    ConfusionMatrix cm(num_classes);
    const std::size_t n = limit == 0 ? split.size() : std::min(limit, split.size());
    EvaluationKey key;
    for (std::size_t i = 0; i < n; ++i) {
      Sample s = split.labeled(i, key);
      TeacherOutput out = teacher_forward(model, s.image);
      accumulate(cm, nn::argmax(out.probs.probs), s.label);
    }
    return cm;
  }

  static IouReport evaluate(const SegmentationModel& model, const TargetImages& split, int num_classes,
                            std::size_t limit = 0) {
    return miou(confusion(model, split, num_classes, limit));
  }
};

inline nlohmann::json eval_record(long step, const IouReport& r, const std::string& model_name = "teacher") {
  auto j = report_to_json(r);
  j["type"] = "eval";
  j["step"] = step;
  j["model"] = model_name;
  return j;
}

// ---------------------------------------------------------------------------
// Loop

struct LoopHooks {
  std::function<void(const StepReport&)> on_step;
  std::function<void(long, const IouReport&)> on_eval;
  std::function<void(const TrainState&)> on_checkpoint;
};

struct LoopResult {
  std::vector<StepReport> history;
  std::vector<std::pair<long, IouReport>> evals;
};

// Runs steps until cfg.train.iterations. Evaluation always uses the teacher.
// A fresh state (step 0) first emits an initial checkpoint and evaluation.
inline LoopResult train_loop(TrainState& st, const TrainData& data, const LoopHooks& hooks = {}) {
  const auto& cfg = st.cfg;
  LoopResult result;
  auto run_eval = [&](long step) {
    if (data.target_val.size() == 0) return;
    IouReport r = Evaluator::evaluate(st.teacher, data.target_val, cfg.num_classes());
    result.evals.emplace_back(step, r);
    if (hooks.on_eval) hooks.on_eval(step, r);
  };
  auto checkpoint = [&] {
    if (hooks.on_checkpoint) hooks.on_checkpoint(st);
  };
  if (st.step == 0) {
    checkpoint();
    run_eval(0);
  }
  long last_eval = st.step == 0 ? 0 : -1, last_ckpt = st.step == 0 ? 0 : -1;
  while (st.step < cfg.train.iterations) {
    Batch batch = make_batch(data, cfg, st.step);
    StepReport rep;
    try {
      rep = train_step(st, batch);
    } catch (const Error& e) {
      throw Error(std::string("run seed ") + std::to_string(cfg.train.seed) + ", step " + std::to_string(st.step) +
                  ": " + e.what());
    }
    result.history.push_back(rep);
    if (hooks.on_step) hooks.on_step(rep);
    if (cfg.train.eval_every > 0 && st.step % cfg.train.eval_every == 0) {
      run_eval(st.step);
      last_eval = st.step;
    }
    if (cfg.train.checkpoint_every > 0 && st.step % cfg.train.checkpoint_every == 0) {
      checkpoint();
      last_ckpt = st.step;
    }
  }
  if (last_eval != st.step) run_eval(st.step);
  if (last_ckpt != st.step) checkpoint();
  return result;
}

}  // namespace rccr
