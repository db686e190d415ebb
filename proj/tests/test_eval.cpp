#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "rccr/eval.hpp"
#include "rccr/selftest.hpp"

using namespace rccr;

namespace {

LabelMap labels(int h, int w, std::vector<Label> v) {
  LabelMap lm(h, w);
  lm.data = std::move(v);
  return lm;
}

// Independent IoU oracle working straight from label pairs.
std::vector<double> oracle_iou(const LabelMap& pred, const LabelMap& truth, int c) {
  std::vector<double> out(c, -1.0);
  for (int k = 0; k < c; ++k) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth.data[i] == kIgnore) continue;
      bool t = truth.data[i] == k, p = pred.data[i] == k;
      inter += t && p;
      uni += t || p;
    }
    if (uni > 0) out[k] = static_cast<double>(inter) / uni;
  }
  return out;
}

}  // namespace

TEST(Accumulate, HandCountedTwoByTwo) {
  ConfusionMatrix cm(2);
  accumulate(cm, labels(2, 2, {0, 1, 1, 1}), labels(2, 2, {0, 0, 1, 1}));
  EXPECT_EQ(cm.at(0, 0), 1);
  EXPECT_EQ(cm.at(0, 1), 1);
  EXPECT_EQ(cm.at(1, 0), 0);
  EXPECT_EQ(cm.at(1, 1), 2);
}

TEST(Accumulate, PerfectPredictionIsDiagonal) {
  ConfusionMatrix cm(3);
  auto y = labels(1, 6, {0, 1, 2, 2, 1, 0});
  accumulate(cm, y, y);
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p) EXPECT_EQ(cm.at(t, p), t == p ? 2 : 0);
}

TEST(Accumulate, IgnoreTruthLeavesMatrixUnchanged) {
  ConfusionMatrix cm(3);
  accumulate(cm, labels(2, 2, {0, 1, 2, 0}), LabelMap(2, 2, kIgnore));
  EXPECT_EQ(cm, ConfusionMatrix(3));
}

TEST(Accumulate, ShapeMismatchRaises) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(accumulate(cm, LabelMap(2, 2), LabelMap(2, 3)), ShapeError);
}

TEST(Miou, HandComputedValues) {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 1;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 2;
  auto r = miou(cm);
  EXPECT_EQ(*r.per_class[0], 0.5);
  EXPECT_EQ(*r.per_class[1], 2.0 / 3.0);
  EXPECT_NEAR(r.mean, 0.5833333333333333, 1e-15);
  EXPECT_EQ(miou(cm, std::set<int>{1}).mean, 2.0 / 3.0);
}

TEST(Miou, PerfectDiagonal) {
  ConfusionMatrix cm(4);
  for (int c = 0; c < 4; ++c) cm.at(c, c) = 5 + c;
  auto r = miou(cm);
  for (auto v : r.per_class) EXPECT_EQ(*v, 1.0);
  EXPECT_EQ(r.mean, 1.0);
}

TEST(Miou, UndefinedClassesAreExcluded) {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 3;
  cm.at(1, 0) = 1;
  auto r = miou(cm);
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_EQ(r.counted, 2u);
  EXPECT_EQ(r.mean, (0.75 + 0.0) / 2);
}

TEST(Miou, EmptyEffectiveSubsetRaises) {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 1;
  EXPECT_THROW(miou(cm, std::set<int>{}), Error);
  EXPECT_THROW(miou(cm, std::set<int>{2}), Error);
  EXPECT_THROW(miou(ConfusionMatrix(3)), Error);
}

TEST(Miou, SixteenAndThirteenClassConventions) {
  auto s16 = synthia16_classes(), s13 = synthia13_classes();
  EXPECT_EQ(s16.size(), 16u);
  EXPECT_EQ(s13.size(), 13u);
  for (int dropped : {3, 4, 5}) {
    EXPECT_EQ(synthia16_names()[dropped] == "wall" || synthia16_names()[dropped] == "fence" ||
                  synthia16_names()[dropped] == "pole",
              true);
    EXPECT_FALSE(s13.contains(dropped));
  }
  // Perfect except wall/fence/pole, which are always confused with road.
  ConfusionMatrix cm(16);
  for (int c = 0; c < 16; ++c) cm.at(c, c) = 10;
  for (int c : {3, 4, 5}) {
    cm.at(c, c) = 0;
    cm.at(c, 0) = 10;
  }
  double road = 10.0 / 40.0;
  EXPECT_NEAR(miou(cm, s16).mean, (road + 12.0) / 16.0, 1e-15);
  EXPECT_NEAR(miou(cm, s13).mean, (road + 12.0) / 13.0, 1e-15);
  auto j = report_to_json(miou(cm, s13), synthia16_names());
  EXPECT_EQ(j["per_class"][2]["name"], "building");
  EXPECT_EQ(j["classes_counted"], 13);
}

TEST(MiouProperty, MatchesLabelPairOracle) {
  RngHandle rng(1, 0);
  for (int trial = 0; trial < 200; ++trial) {
    int c = rng.uniform_int(2, 6), h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    auto truth = selftest::random_sample(rng, h, w, c).label;
    auto pred = selftest::random_sample(rng, h, w, c).label;
    for (auto& l : pred.data) if (l == kIgnore) l = 0;
    ConfusionMatrix cm(c);
    accumulate(cm, pred, truth);
    long valid = std::count_if(truth.data.begin(), truth.data.end(), [](Label l) { return l != kIgnore; });
    ASSERT_EQ(cm.total(), valid);
    auto expect = oracle_iou(pred, truth, c);
    if (valid == 0) continue;
    auto r = miou(cm);
    for (int k = 0; k < c; ++k) {
      if (expect[k] < 0) ASSERT_FALSE(r.per_class[k].has_value());
      else ASSERT_DOUBLE_EQ(*r.per_class[k], expect[k]);
    }
  }
}

TEST(MiouProperty, PermutationEquivariance) {
  RngHandle rng(2, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 5;
    auto truth = selftest::random_sample(rng, 6, 6, c).label;
    auto pred = selftest::random_sample(rng, 6, 6, c).label;
    for (auto& l : pred.data) if (l == kIgnore) l = 4;
    std::vector<Label> perm(c);
    std::iota(perm.begin(), perm.end(), Label{0});
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    auto relabel = [&](LabelMap m) {
      for (auto& l : m.data) if (l != kIgnore) l = perm[l];
      return m;
    };
    ConfusionMatrix a(c), b(c);
    accumulate(a, pred, truth);
    accumulate(b, relabel(pred), relabel(truth));
    auto ra = miou(a), rb = miou(b);
    for (int k = 0; k < c; ++k) ASSERT_EQ(ra.per_class[k], rb.per_class[perm[k]]);
  }
}

TEST(MiouProperty, AccumulationOrderDoesNotMatter) {
  RngHandle rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    auto t1 = selftest::random_sample(rng, 5, 5, 4).label, t2 = selftest::random_sample(rng, 5, 5, 4).label;
    auto p1 = selftest::random_sample(rng, 5, 5, 4).label, p2 = selftest::random_sample(rng, 5, 5, 4).label;
    for (auto* p : {&p1, &p2})
      for (auto& l : p->data) if (l == kIgnore) l = 1;
    ConfusionMatrix a(4), b(4), c1(4), c2(4);
    accumulate(a, p1, t1);
    accumulate(a, p2, t2);
    accumulate(b, p2, t2);
    accumulate(b, p1, t1);
    accumulate(c1, p1, t1);
    accumulate(c2, p2, t2);
    c1 += c2;
    ASSERT_EQ(a, b);
    ASSERT_EQ(a, c1);
  }
}
