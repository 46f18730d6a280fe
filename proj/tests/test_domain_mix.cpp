#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dts/augment.hpp"
#include "dts/mixing.hpp"
#include "dts/synth.hpp"
#include "oracle.hpp"

using namespace dts;

TEST(ClassMix, SingleClassTakesEverything) {
  std::mt19937_64 rng(1);
  LabelMap l(4, 4, 3);
  const MixMask m = classmix_mask(l, rng);
  EXPECT_EQ(m.count(), 16u);
}

TEST(ClassMix, TwoClassesChosenEvenly) {
  LabelMap l(4, 4, 0);
  for (int x = 0; x < 4; ++x) l.at(0, x) = 1;
  std::mt19937_64 rng(2);
  int picks_one = 0;
  for (int i = 0; i < 10000; ++i) {
    const MixMask m = classmix_mask(l, rng);
    std::set<int> chosen;
    for (std::size_t p = 0; p < m.bits.size(); ++p)
      if (m.bits[p]) chosen.insert(l.ids[p]);
    ASSERT_EQ(chosen.size(), 1u);
    // support is exactly the chosen class
    for (std::size_t p = 0; p < m.bits.size(); ++p) ASSERT_EQ(m.bits[p] != 0, chosen.count(l.ids[p]) == 1);
    picks_one += *chosen.begin() == 1;
  }
  EXPECT_NEAR(picks_one / 10000.0, 0.5, 0.05);
}

TEST(ClassMix, CountIsSumOfChosenClassPixelsAndHalfTheClasses) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int classes = 1 + trial % 7;
    LabelMap l = oracle::random_labels(8, 8, classes, 1000 + trial);
    if (trial % 5 == 0) l.ids[0] = kIgnoreLabel;
    const MixMask m = classmix_mask(l, rng);
    std::map<int, std::size_t> per_class;
    for (auto v : l.ids) per_class[v]++;
    std::set<int> chosen;
    for (std::size_t p = 0; p < m.bits.size(); ++p)
      if (m.bits[p]) chosen.insert(l.ids[p]);
    EXPECT_EQ(chosen.count(kIgnoreLabel), 0u);
    std::size_t expected = 0;
    for (int c : chosen) expected += per_class[c];
    EXPECT_EQ(m.count(), expected);
    const std::size_t present = present_classes(l).size();
    EXPECT_EQ(chosen.size(), (present + 1) / 2);
  }
}

TEST(ClassMix, FullyIgnoredRejected) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(classmix_mask(LabelMap(3, 3, kIgnoreLabel), rng), ConfigError);
}

TEST(ClassMix, CoversHalfThePixelsOnGeneratedScenes) {
  std::mt19937_64 rng(5);
  double frac = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const LabelMap l = generate_layout(static_cast<std::uint64_t>(i), 64, 64, 5);
    frac += static_cast<double>(classmix_mask(l, rng).count()) / static_cast<double>(l.size());
  }
  EXPECT_NEAR(frac / n, 0.5, 0.1);
}

TEST(Mix, SaturatedMasks) {
  const Tensor a = oracle::random_tensor({3, 4, 4}, 1), b = oracle::random_tensor({3, 4, 4}, 2);
  EXPECT_TRUE(mix(a, b, MixMask(4, 4, 1)).same_values(a));
  EXPECT_TRUE(mix(a, b, MixMask(4, 4, 0)).same_values(b));
}

TEST(Mix, PerPixelSelection) {
  const Tensor a = oracle::random_tensor({3, 4, 4}, 3), b = oracle::random_tensor({3, 4, 4}, 4);
  MixMask m(4, 4);
  std::mt19937_64 rng(5);
  for (auto& bit : m.bits) bit = static_cast<std::uint8_t>(rng() & 1u);
  const Tensor out = mix(a, b, m);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(out.at(c, y, x), m.bits[static_cast<std::size_t>(y * 4 + x)] ? a.at(c, y, x) : b.at(c, y, x));
}

TEST(Mix, ShapeMismatchRejected) {
  EXPECT_THROW(mix(Tensor({3, 4, 4}), Tensor({3, 4, 5}), MixMask(4, 4)), DimensionError);
  EXPECT_THROW(mix(Tensor({3, 4, 4}), Tensor({3, 4, 4}), MixMask(4, 5)), DimensionError);
  EXPECT_THROW(mix_labels(LabelMap(4, 4), LabelMap(4, 4), Tensor({4, 4}), Tensor({4, 5}), MixMask(4, 4)),
               DimensionError);
}

TEST(MixLabels, ConstantWeightsAndAnnihilation) {
  LabelMap a(3, 3, 1), b(3, 3, 2);
  auto [l1, w1] = mix_labels(a, b, constant_weight(3, 3, 1.0f), constant_weight(3, 3, 1.0f), MixMask(3, 3, 1));
  for (float v : w1.data()) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(l1, a);
  auto [l2, w2] = mix_labels(a, b, constant_weight(3, 3, 1.0f), constant_weight(3, 3, 0.5f), MixMask(3, 3, 0));
  for (float v : w2.data()) EXPECT_EQ(v, 0.5f);
  EXPECT_EQ(l2, b);
}

TEST(MixLabels, WeightPartitionFollowsMask) {
  const LabelMap a = oracle::random_labels(5, 5, 4, 1), b = oracle::random_labels(5, 5, 4, 2);
  MixMask m(5, 5);
  std::mt19937_64 rng(3);
  for (auto& bit : m.bits) bit = static_cast<std::uint8_t>(rng() & 1u);
  auto [l, w] = mix_labels(a, b, constant_weight(5, 5, 1.0f), constant_weight(5, 5, 0.25f), m);
  for (std::size_t p = 0; p < m.bits.size(); ++p) {
    EXPECT_EQ(l.ids[p], m.bits[p] ? a.ids[p] : b.ids[p]);
    EXPECT_EQ(w[p], m.bits[p] ? 1.0f : 0.25f);
  }
}

TEST(PseudoLabel, TinyTauSaturatesGamma) {
  const PseudoLabel pl = pseudo_label(oracle::random_tensor({4, 3, 3}, 1), 1e-6f);
  EXPECT_EQ(pl.gamma, 1.0f);
}

TEST(PseudoLabel, UniformLogitsGiveZeroGamma) {
  const PseudoLabel pl = pseudo_label(Tensor({4, 3, 3}, 0.3f), 0.968f);
  EXPECT_EQ(pl.gamma, 0.0f);
  for (float c : pl.conf) EXPECT_FLOAT_EQ(c, 0.25f);
}

TEST(PseudoLabel, GammaMatchesEnumeration) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor logits = oracle::random_tensor({3, 2, 2}, seed, -2.0f, 2.0f);
    const PseudoLabel pl = pseudo_label(logits, 0.5f);
    int count = 0;
    for (int p = 0; p < 4; ++p) {
      double z = 0.0, best = -1.0;
      int arg = 0;
      for (int c = 0; c < 3; ++c) z += std::exp(static_cast<double>(logits[static_cast<std::size_t>(c * 4 + p)]));
      for (int c = 0; c < 3; ++c) {
        const double pr = std::exp(static_cast<double>(logits[static_cast<std::size_t>(c * 4 + p)])) / z;
        if (pr > best) best = pr, arg = c;
      }
      count += best >= 0.5;
      EXPECT_EQ(pl.labels.ids[static_cast<std::size_t>(p)], arg);
      EXPECT_NEAR(pl.conf[static_cast<std::size_t>(p)], best, 1e-6);
    }
    EXPECT_FLOAT_EQ(pl.gamma, count / 4.0f);
  }
}

TEST(PseudoLabel, GammaNonIncreasingInTau) {
  const Tensor logits = oracle::random_tensor({5, 8, 8}, 9, -4.0f, 4.0f);
  float prev = 1.0f;
  for (float tau = 0.05f; tau < 1.0f; tau += 0.05f) {
    const float g = pseudo_label(logits, tau).gamma;
    EXPECT_LE(g, prev);
    EXPECT_GE(g, 0.0f);
    prev = g;
  }
}

TEST(PseudoLabel, RejectsBadInputs) {
  EXPECT_THROW(pseudo_label(Tensor({2, 1, 1}), 0.0f), ConfigError);
  EXPECT_THROW(pseudo_label(Tensor({2, 1, 1}), 1.0f), ConfigError);
  EXPECT_THROW(pseudo_label(Tensor({2, 1, 1}, NAN), 0.5f), NumericError);
}

TEST(TtMaskSource, LargerGammaWinsTieGoesFirst) {
  PseudoLabel a, b;
  a.gamma = 0.9f;
  b.gamma = 0.3f;
  EXPECT_EQ(choose_tt_mask_source(a, b), 0);
  EXPECT_EQ(choose_tt_mask_source(b, a), 1);
  b.gamma = 0.9f;
  EXPECT_EQ(choose_tt_mask_source(a, b), 0);
  EXPECT_EQ(choose_tt_mask_source(b, a), 0);
}

TEST(Augment, IdentityParamsLeaveImageUnchanged) {
  AugmentParams id;
  id.scale_min = id.scale_max = 1.0f;
  id.jitter_min = id.jitter_max = 1.0f;
  id.blur_prob = 0.0f;
  const Tensor img = oracle::random_tensor({3, 16, 16}, 1, 0.0f, 1.0f);
  std::mt19937_64 rng(2);
  EXPECT_TRUE(augment(img, rng, id).same_values(img));
  LabelMap l = oracle::random_labels(16, 16, 4, 3);
  const LabelMap before = l;
  EXPECT_TRUE(geometric_augment(img, &l, rng, id).same_values(img));
  EXPECT_EQ(l, before);
}

TEST(Augment, OutputStaysInUnitRange) {
  std::mt19937_64 rng(4);
  AugmentParams wide;
  wide.jitter_min = 0.2f;
  wide.jitter_max = 3.0f;
  for (int i = 0; i < 50; ++i) {
    const Tensor out = augment(oracle::random_tensor({3, 16, 16}, 10 + i, 0.0f, 1.0f), rng, wide);
    for (float v : out.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Augment, SameSeedSameOutput) {
  const Tensor img = oracle::random_tensor({3, 16, 16}, 5, 0.0f, 1.0f);
  std::mt19937_64 r1(6), r2(6);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(augment(img, r1, {}).same_values(augment(img, r2, {})));
}

TEST(Augment, DrawsStayInDocumentedRanges) {
  std::mt19937_64 rng(7);
  const AugmentParams p;
  int blurred = 0;
  for (int i = 0; i < 4000; ++i) {
    const GeometricDraw g = draw_geometric(rng, p, 64, 64);
    ASSERT_GE(g.scale, 0.75f);
    ASSERT_LE(g.scale, 1.25f);
    const PhotometricDraw d = draw_photometric(rng, p);
    ASSERT_GE(d.contrast, 0.8f);
    ASSERT_LE(d.contrast, 1.2f);
    for (float b : d.brightness) {
      ASSERT_GE(b, 0.8f);
      ASSERT_LE(b, 1.2f);
    }
    ASSERT_GE(d.blur_sigma, 0.0f);
    ASSERT_LE(d.blur_sigma, 1.1f);
    blurred += d.blur_sigma > 0.0f;
  }
  EXPECT_NEAR(blurred / 4000.0, 0.5, 0.05);
}

TEST(Augment, GeometricKeepsLabelsAlignedWithNearestSampling) {
  LabelMap l = oracle::random_labels(16, 16, 4, 8);
  const LabelMap orig = l;
  const Tensor img({3, 16, 16});
  apply_geometric(img, &l, GeometricDraw{0.75f, 2, 1});
  // scaled to 12x12 and pasted at (2,1); the border is ignore
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const bool inside = y >= 2 && y < 14 && x >= 1 && x < 13;
      if (!inside) EXPECT_EQ(l.at(y, x), kIgnoreLabel);
      else EXPECT_LT(l.at(y, x), 4);
    }
  // every label value present after rescaling existed before
  std::set<int> before(orig.ids.begin(), orig.ids.end());
  for (auto v : l.ids)
    EXPECT_TRUE(v == kIgnoreLabel || before.count(v));
}

TEST(GaussianBlur, KernelRadiusAndNormalisation) {
  const std::vector<float> k = gaussian_kernel(1.0f);
  EXPECT_EQ(k.size(), 7u);
  double s = 0.0;
  for (float v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);
  const Tensor flat({3, 8, 8}, 0.4f);
  const Tensor out = gaussian_blur(flat, 1.1f);
  for (float v : out.data()) EXPECT_NEAR(v, 0.4f, 1e-6);
}
