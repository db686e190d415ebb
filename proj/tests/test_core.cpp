#include <gtest/gtest.h>

#include "rccr/core.hpp"
#include "rccr/nn.hpp"

using namespace rccr;

namespace {

bool has_violation(const ValidationReport& r, const std::string& needle) {
  for (const auto& v : r.violations)
    if (v.invariant.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(Grid, RowMajorCellLayout) {
  RealGrid g(2, 3, 4);
  g.at(1, 2, 3) = 7.0;
  EXPECT_EQ(g.data[(1 * 3 + 2) * 4 + 3], 7.0);
  EXPECT_EQ(g.cell(5)[3], 7.0);
  EXPECT_EQ(g.cells(), 6u);
}

TEST(FeatureExtent, CeilDivision) {
  EXPECT_EQ(feature_extent(64, 4), 16);
  EXPECT_EQ(feature_extent(65, 4), 17);
  EXPECT_EQ(feature_extent(512, 8), 64);
  EXPECT_EQ(feature_extent(3, 8), 1);
}

TEST(RngHandle, SameKeySameStream) {
  RngHandle a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  auto va = a.next();
  EXPECT_EQ(va, b.next());
  EXPECT_NE(va, c.next());
  EXPECT_NE(va, d.next());
}

TEST(RngHandle, ForkDoesNotAdvanceParent) {
  RngHandle a(1, 2), b(1, 2);
  auto child = a.fork(5);
  (void)child.next();
  EXPECT_EQ(a.next(), b.next());
  EXPECT_EQ(a.fork(5).next(), b.fork(5).next());
  EXPECT_NE(a.fork(5).next(), a.fork(6).next());
}

TEST(ShapeValidator, AcceptsWellFormedTensors) {
  ImageTensor img(8, 8, 0.5);
  LabelMap lm(8, 8, 1);
  lm.data[0] = kIgnore;
  ProbMap pm{RealGrid(2, 2, 3, 1.0 / 3.0)};
  FeatureGrid z{RealGrid(2, 2, 6, 0.1)};
  EmbeddingGrid e{nn::l2_normalize(RealGrid(2, 2, 4, 1.0)), true};
  ShapeValidator v(3, 4);
  v.image("x", img).labels("y", lm).probs("p", pm).features("z", z).embeddings("e", e, 6);
  EXPECT_TRUE(v.report().ok());
}

TEST(ShapeValidator, ReportsEachInvariant) {
  ImageTensor img(4, 4, 0.5);
  img.at(0, 0, 0) = 1.5;
  LabelMap lm(4, 4, 9);
  ProbMap pm{RealGrid(1, 1, 3, 0.5)};
  FeatureGrid z{RealGrid(3, 3, 2, 0.0)};
  EmbeddingGrid e{RealGrid(1, 1, 8, 1.0), true};
  ShapeValidator v(3, 2);
  v.image("x", ImageTensor(4, 4, 0.5)).image("bad", img).labels("y", lm).probs("p", pm).features("z", z)
      .embeddings("e", e, 4);
  auto r = v.report();
  EXPECT_TRUE(has_violation(r, "[0, 1]"));
  EXPECT_TRUE(has_violation(r, "LabelMap range"));
  EXPECT_TRUE(has_violation(r, "ProbMap normalization"));
  EXPECT_TRUE(has_violation(r, "FeatureGrid extent"));
  EXPECT_TRUE(has_violation(r, "K < D"));
  EXPECT_TRUE(has_violation(r, "EmbeddingGrid normalization"));
}

TEST(ShapeValidator, NeverMutatesInputs) {
  ImageTensor img(2, 2, 2.0);
  ImageTensor copy = img;
  ShapeValidator v;
  v.image("x", img);
  EXPECT_FALSE(v.report().ok());
  EXPECT_EQ(img, copy);
}

TEST(ShapeValidator, NonFiniteFlagged) {
  FeatureGrid z{RealGrid(1, 1, 2, 0.0)};
  z.values.data[1] = std::nan("");
  ShapeValidator v;
  v.features("z", z);
  EXPECT_TRUE(has_violation(v.report(), "finite"));
}

TEST(CallCounts, Accumulate) {
  auto before = call_counts();
  ++call_counts().encoder;
  EXPECT_EQ(call_counts().encoder, before.encoder + 1);
}

TEST(Softmax, ArgmaxTiesGoLow) {
  RealGrid p(1, 2, 3);
  p.data = {0.4, 0.4, 0.2, 0.1, 0.3, 0.6};
  auto lm = nn::argmax(p);
  EXPECT_EQ(lm.data[0], 0);
  EXPECT_EQ(lm.data[1], 2);
}

TEST(CrossEntropy, AllIgnoreIsZero) {
  RealGrid p(2, 2, 3, 1.0 / 3.0);
  LabelMap y(2, 2, kIgnore);
  auto ce = nn::cross_entropy(p, y);
  EXPECT_EQ(ce.loss, 0.0);
  EXPECT_EQ(ce.counted, 0u);
  for (double g : ce.dlogits.data) EXPECT_EQ(g, 0.0);
}
