#include <gtest/gtest.h>

#include <map>

#include "rccr/mixing.hpp"
#include "rccr/selftest.hpp"

using namespace rccr;

namespace {

Sample constant_sample(int h, int w, double v, Label l) { return {ImageTensor(h, w, v), LabelMap(h, w, l)}; }

}  // namespace

TEST(CutMixSpec, FixedAreaAndAspectGiveExactSquare) {
  RngHandle rng(1, 0);
  CutMixParams p;
  p.area_min = p.area_max = 0.25;
  p.aspect_min = p.aspect_max = 1.0;
  auto spec = sample_cutmix_spec(rng, 64, 64, 8, p);
  EXPECT_EQ(spec.pixel.height, 32);
  EXPECT_EQ(spec.pixel.width, 32);
  EXPECT_EQ(spec.feature.height, 4);
  EXPECT_EQ(spec.feature.width, 4);
}

TEST(CutMixSpec, ExactDivision) {
  auto spec = make_cutmix_spec({8, 8, 16, 16}, 8);
  EXPECT_EQ(spec.feature, (Rect{1, 1, 2, 2}));
}

TEST(CutMixSpec, InwardRounding) {
  auto spec = make_cutmix_spec({3, 5, 14, 12}, 4);  // rows 3..16, cols 5..16
  EXPECT_EQ(spec.feature, (Rect{1, 2, 3, 2}));
}

TEST(CutMixSpec, DrawsStayInBoundsAndInRange) {
  RngHandle rng(2, 0);
  CutMixParams p;
  p.area_min = 0.1;
  p.area_max = 0.5;
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_cutmix_spec(rng, 64, 64, 8, p);
    ASSERT_GE(s.pixel.top, 0);
    ASSERT_GE(s.pixel.left, 0);
    ASSERT_LE(s.pixel.bottom(), 64);
    ASSERT_LE(s.pixel.right(), 64);
    double ratio = s.pixel.area() / 4096.0;
    ASSERT_GE(ratio, 0.1 - 1e-12);
    ASSERT_LE(ratio, 0.5 + 1e-12);
    ASSERT_FALSE(s.feature.empty());
  }
}

TEST(CutMixSpec, FeatureRectMatchesHalfCoverageDownsampling) {
  RngHandle rng(3, 0);
  for (int i = 0; i < 300; ++i) {
    const int stride = 1 << rng.uniform_int(1, 3);
    const int fh = 64 / stride;
    int top = rng.uniform_int(0, fh - 1), left = rng.uniform_int(0, fh - 1);
    int h = rng.uniform_int(1, fh - top), w = rng.uniform_int(1, fh - left);
    auto s = make_cutmix_spec({top * stride, left * stride, h * stride, w * stride}, stride);
    for (int r = 0; r < fh; ++r)
      for (int c = 0; c < fh; ++c) {
        int covered = 0;
        for (int y = r * stride; y < (r + 1) * stride; ++y)
          for (int x = c * stride; x < (c + 1) * stride; ++x) covered += s.pixel.contains(y, x);
        bool half = 2 * covered >= stride * stride;
        ASSERT_EQ(half, s.feature.contains(r, c)) << "cell " << r << "," << c;
      }
  }
}

TEST(CutMixSpec, SampledFeatureCellsAreFullyCovered) {
  RngHandle rng(33, 0);
  for (int i = 0; i < 300; ++i) {
    auto s = sample_cutmix_spec(rng, 64, 48, 8, {});
    ASSERT_EQ(s.pixel.top % 8, 0);
    ASSERT_EQ(s.pixel.left % 8, 0);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 6; ++c) {
        bool full = s.pixel.contains(r * 8, c * 8) && s.pixel.contains(r * 8 + 7, c * 8 + 7);
        ASSERT_EQ(full, s.feature.contains(r, c));
      }
  }
}

TEST(CutMixSpec, RejectsImpossibleRanges) {
  RngHandle rng(4, 0);
  CutMixParams p;
  p.area_min = 0.0;
  EXPECT_THROW(sample_cutmix_spec(rng, 64, 64, 8, p), Error);
  p.area_min = 0.6;
  p.area_max = 0.5;
  EXPECT_THROW(sample_cutmix_spec(rng, 64, 64, 8, p), Error);
  // A 9x9 image cannot host a rectangle of 1% area that spans a full 8-cell.
  CutMixParams tiny;
  tiny.area_min = tiny.area_max = 0.01;
  EXPECT_THROW(sample_cutmix_spec(rng, 9, 9, 8, tiny), Error);
  EXPECT_THROW(sample_cutmix_spec(rng, 4, 4, 8, {}), Error);
}

TEST(CutMix, PixelCountAudit) {
  auto src = constant_sample(64, 64, 0.1, 1), tgt = constant_sample(64, 64, 0.9, 2);
  auto m = apply_cutmix(src, tgt, make_cutmix_spec({16, 8, 32, 32}, 8));
  int from_target = 0, from_source = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (m.image.at(y, x, 0) == 0.9 && m.label.at(y, x) == 2 && m.mask.at(y, x) == 1) ++from_target;
      if (m.image.at(y, x, 0) == 0.1 && m.label.at(y, x) == 1 && m.mask.at(y, x) == 0) ++from_source;
    }
  EXPECT_EQ(from_target, 1024);
  EXPECT_EQ(from_source, 3072);
  EXPECT_EQ(m.provenance, MixKind::CutMix);
}

TEST(CutMix, Identities) {
  RngHandle rng(5, 0);
  auto src = selftest::random_sample(rng, 16, 16, 4), tgt = selftest::random_sample(rng, 16, 16, 4);
  auto full = apply_cutmix(src, tgt, make_cutmix_spec({0, 0, 16, 16}, 4));
  EXPECT_EQ(full.image, tgt.image);
  EXPECT_EQ(full.label, tgt.label);
  for (auto v : full.mask.data) EXPECT_EQ(v, 1);
  auto none = apply_cutmix(src, tgt, make_cutmix_spec({0, 0, 0, 0}, 4));
  EXPECT_EQ(none.image, src.image);
  EXPECT_EQ(none.label, src.label);
}

TEST(CutMix, ShapeMismatchRaises) {
  auto a = constant_sample(8, 8, 0.0, 0), b = constant_sample(8, 9, 0.0, 0);
  EXPECT_THROW(apply_cutmix(a, b, make_cutmix_spec({0, 0, 4, 4}, 4)), ShapeError);
}

TEST(ClassMixSpec, HalfOfPresentClassesRoundedUp) {
  RngHandle rng(6, 0);
  LabelMap four(2, 2);
  four.data = {0, 1, 2, 3};
  EXPECT_EQ(sample_classmix_spec(rng, four).selected.size(), 2u);
  LabelMap one(2, 2, 5);
  one.data[0] = kIgnore;
  EXPECT_EQ(sample_classmix_spec(rng, one).selected, std::vector<Label>{5});
  LabelMap three(1, 3);
  three.data = {4, 7, 9};
  auto s = sample_classmix_spec(rng, three);
  EXPECT_EQ(s.selected.size(), 2u);
  for (auto l : s.selected) EXPECT_TRUE(l == 4 || l == 7 || l == 9);
}

TEST(ClassMixSpec, AllIgnoreRaises) {
  RngHandle rng(7, 0);
  EXPECT_THROW(sample_classmix_spec(rng, LabelMap(3, 3, kIgnore)), Error);
}

TEST(ClassMixSpec, SelectionFrequencyIsHalf) {
  RngHandle rng(8, 0);
  LabelMap four(2, 2);
  four.data = {0, 1, 2, 3};
  std::map<Label, int> hits;
  for (int i = 0; i < 1000; ++i)
    for (auto l : sample_classmix_spec(rng, four).selected) ++hits[l];
  for (Label l = 0; l < 4; ++l) EXPECT_NEAR(hits[l] / 1000.0, 0.5, 0.05);
}

TEST(ClassMix, CheckerboardComposition) {
  Sample src{ImageTensor(4, 4, 0.2), LabelMap(4, 4)};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) src.label.at(y, x) = static_cast<Label>((x + y) % 2);
  ImageTensor tgt(4, 4, 0.8);
  LabelMap pseudo(4, 4, 3);
  auto m = apply_classmix(src, tgt, pseudo, {{0}});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      bool black = (x + y) % 2 == 0;
      EXPECT_EQ(m.label.at(y, x), black ? 0 : 3);
      EXPECT_EQ(m.image.at(y, x, 1), black ? 0.2 : 0.8);
      EXPECT_EQ(m.mask.at(y, x), black ? 1 : 0);
    }
  EXPECT_EQ(m.provenance, MixKind::ClassMix);
}

TEST(ClassMix, Identities) {
  RngHandle rng(9, 0);
  auto src = selftest::random_sample(rng, 8, 8, 3);
  for (auto& l : src.label.data) if (l == kIgnore) l = 0;
  auto tgt = selftest::random_sample(rng, 8, 8, 3);
  auto all = apply_classmix(src, tgt.image, tgt.label, {present_classes(src.label)});
  EXPECT_EQ(all.image, src.image);
  EXPECT_EQ(all.label, src.label);
  auto none = apply_classmix(src, tgt.image, tgt.label, {{9}});
  EXPECT_EQ(none.image, tgt.image);
  EXPECT_EQ(none.label, tgt.label);
}

TEST(Photometric, NullParamsAreIdentity) {
  RngHandle rng(10, 0);
  auto s = selftest::random_sample(rng, 8, 8, 3);
  EXPECT_EQ(photometric_augment(s.image, rng, {}), s.image);
}

TEST(Photometric, BlurOfConstantIsConstant) {
  RngHandle rng(11, 0);
  ImageTensor img(9, 9, 0.37);
  PhotometricParams p;
  p.blur_sigma_min = p.blur_sigma_max = 5.0;
  auto out = photometric_augment(img, rng, p);
  for (double v : out.pixels.data) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Photometric, DeterministicAndInRange) {
  auto s = [] {
    RngHandle r(12, 0);
    return selftest::random_sample(r, 12, 12, 3);
  }();
  PhotometricParams p{0.4, 0.4, 0.4, 45.0, 0.0, 1.5};
  RngHandle a(13, 1), b(13, 1);
  auto x = photometric_augment(s.image, a, p);
  auto y = photometric_augment(s.image, b, p);
  EXPECT_EQ(x, y);
  for (double v : x.pixels.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Photometric, LeavesLabelAndMaskAlone) {
  RngHandle rng(14, 0);
  auto src = selftest::random_sample(rng, 16, 16, 3), tgt = selftest::random_sample(rng, 16, 16, 3);
  auto m = apply_cutmix(src, tgt, make_cutmix_spec({4, 4, 8, 8}, 4));
  auto label = m.label;
  auto mask = m.mask;
  m.image = photometric_augment(m.image, rng, {0.3, 0.3, 0.3, 30.0, 0.5, 1.0});
  EXPECT_EQ(m.label, label);
  EXPECT_EQ(m.mask, mask);
}

TEST(HueRotation, FullTurnIsIdentityAndGrayIsFixed) {
  std::array<double, 3> px{0.2, 0.5, 0.7};
  auto back = rotate_hue(px, 360.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(back[i], px[i], 1e-12);
  auto gray = rotate_hue({0.4, 0.4, 0.4}, 77.0);
  for (double v : gray) EXPECT_NEAR(v, 0.4, 1e-12);
}

TEST(DownsampleLabels, BlockModeWithLowTies) {
  LabelMap lm(4, 4, kIgnore);
  // Top-left block: 2,2,1,IGNORE -> 2. Top-right: 1,3,3,1 -> tie -> 1.
  lm.at(0, 0) = 2;
  lm.at(0, 1) = 2;
  lm.at(1, 0) = 1;
  lm.at(0, 2) = 1;
  lm.at(0, 3) = 3;
  lm.at(1, 2) = 3;
  lm.at(1, 3) = 1;
  auto out = downsample_labels(lm, 2);
  EXPECT_EQ(out.h, 2);
  EXPECT_EQ(out.at(0, 0), 2);
  EXPECT_EQ(out.at(0, 1), 1);
  EXPECT_EQ(out.at(1, 0), kIgnore);
}
