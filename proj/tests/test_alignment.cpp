// Dense alignment maps and their multi-scale extension: brute-force oracle
// equivalence, bilinearity, the stride-table shape law, nearest-neighbor
// equivalence of constant-kernel upsamplers, per-pixel alignment loss, and
// the decoder concat round-trip.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "icpc/alignment.hpp"
#include "icpc/params.hpp"
#include "icpc/rng.hpp"
#include "oracles.hpp"

using icpc::ParamStore;
using icpc::Rng;
using icpc::Tensor;

namespace {

Tensor random_t(Rng& rng, std::vector<int> shape, double s = 1.0) {
  std::vector<icpc::Real> v(static_cast<size_t>(icpc::shape_size(shape)));
  for (auto& x : v) x = rng.normal() * s;
  return Tensor::leaf(std::move(shape), v);
}

TEST(Align, OrthonormalBasisExample) {
  Tensor feat = Tensor::leaf({1, 1, 2}, {1.0, 0.0});
  Tensor t = Tensor::leaf({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor a = icpc::align(feat, t, /*normalize=*/false);
  ASSERT_EQ(a.shape(), (std::vector<int>{1, 1, 2}));
  EXPECT_DOUBLE_EQ(a.val()[0], 1.0);
  EXPECT_DOUBLE_EQ(a.val()[1], 0.0);
}

TEST(Align, ZeroFeatureGivesZeroMap) {
  Tensor a = icpc::align(Tensor::zeros({2, 3, 4}), Tensor::full({5, 4}, 0.7), false);
  for (double v : a.val()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Align, MatchesTripleLoopOracleBothNormalizations) {
  Rng rng(1);
  for (bool normalize : {false, true}) {
    Tensor feat = random_t(rng, {2, 2, 3});
    Tensor t = random_t(rng, {4, 3});
    Tensor a = icpc::align(feat, t, normalize);
    oracle::Vec want = oracle::align(oracle::Vec(feat.val()), 4, oracle::Vec(t.val()), 4, 3,
                                     normalize);
    ASSERT_EQ(a.size(), static_cast<int>(want.size()));
    for (int i = 0; i < a.size(); ++i) EXPECT_NEAR(a.val()[i], want[i], 1e-6);
  }
}

TEST(Align, ManyRandomInstancesAgainstOracle) {
  Rng rng(2);
  for (int it = 0; it < 50; ++it) {
    int h = 1 + rng.uniform_int(8), w = 1 + rng.uniform_int(8);
    int c = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(16);
    bool norm = it % 2 == 1;
    std::vector<icpc::Real> fv(static_cast<size_t>(h * w * c)), tv(static_cast<size_t>(k) * c);
    for (auto& x : fv) x = rng.uniform(-2.0, 2.0);
    for (auto& x : tv) x = rng.uniform(-2.0, 2.0) + (norm ? 2.5 : 0.0);  // keep norms nonzero
    if (norm)
      for (auto& x : fv) x += 2.5;
    Tensor a = icpc::align(Tensor::leaf({h, w, c}, fv), Tensor::leaf({k, c}, tv), norm);
    oracle::Vec want = oracle::align(fv, h * w, tv, k, c, norm);
    for (int i = 0; i < a.size(); ++i) ASSERT_NEAR(a.val()[i], want[i], 1e-6);
  }
}

TEST(Align, BilinearWithNormalizationOff) {
  Rng rng(3);
  Tensor f = random_t(rng, {2, 2, 3});
  Tensor t1 = random_t(rng, {4, 3}), t2 = random_t(rng, {4, 3});
  Tensor lhs = icpc::align(icpc::scale(f, 2.5), t1, false);
  Tensor rhs = icpc::scale(icpc::align(f, t1, false), 2.5);
  for (int i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.val()[i], rhs.val()[i], 1e-6);
  Tensor sum = icpc::align(f, icpc::add(t1, t2), false);
  Tensor parts = icpc::add(icpc::align(f, t1, false), icpc::align(f, t2, false));
  for (int i = 0; i < sum.size(); ++i) EXPECT_NEAR(sum.val()[i], parts.val()[i], 1e-6);
}

TEST(Align, WidthMismatchRejected) {
  EXPECT_THROW(icpc::align(Tensor::zeros({2, 2, 3}), Tensor::zeros({4, 5}), false), icpc::error);
}

icpc::FeaturePyramid random_pyramid(Rng& rng, int img, int c) {
  icpc::FeaturePyramid pyr;
  pyr.s4 = random_t(rng, {img / 4, img / 4, c});
  pyr.s8 = random_t(rng, {img / 8, img / 8, c});
  pyr.s16 = random_t(rng, {img / 16, img / 16, c});
  pyr.s32 = random_t(rng, {img / 32, img / 32, c});
  return pyr;
}

TEST(MultiScale, ShapeLawFollowsStrideTable) {
  ParamStore ps;
  ps.set_group("align", true, 1.0);
  icpc::UpsampleParams up = icpc::UpsampleParams::create(ps, "align", 3, 4);
  Rng rng(4);
  for (int img : {32, 64, 96, 128, 256}) {
    icpc::FeaturePyramid pyr = random_pyramid(rng, img, 3);
    Tensor t = random_t(rng, {4, 3});
    icpc::AlignmentPyramid apyr = icpc::multi_scale_align(pyr, t, up, false);
    EXPECT_EQ(apyr.a32.shape(), (std::vector<int>{img / 32, img / 32, 4}));
    EXPECT_EQ(apyr.a16.shape(), (std::vector<int>{img / 16, img / 16, 4}));
    EXPECT_EQ(apyr.a8.shape(), (std::vector<int>{img / 8, img / 8, 4}));
    EXPECT_EQ(apyr.a4.shape(), (std::vector<int>{img / 4, img / 4, 4}));
  }
}

TEST(MultiScale, ConstantKernelsReproduceNearestNeighborOracle) {
  // With every transposed-conv kernel pinned to 1, each 2x stage is exact
  // nearest-neighbor replication, so the recursion collapses to sums of
  // nearest-upsampled maps.
  ParamStore ps;
  ps.set_group("align", true, 1.0);
  int c = 3, k = 4, img = 64;
  icpc::UpsampleParams up = icpc::UpsampleParams::create(ps, "align", c, k);  // init = 1.0
  Rng rng(5);
  icpc::FeaturePyramid pyr = random_pyramid(rng, img, c);
  Tensor t = random_t(rng, {k, c});
  icpc::AlignmentPyramid apyr = icpc::multi_scale_align(pyr, t, up, false);

  int h32 = img / 32;
  oracle::Vec a32(apyr.a32.val());
  // A_1/16 under constant kernels: align(nearest2x(F32), T)
  oracle::Vec f16 = oracle::upsample_nearest(oracle::Vec(pyr.s32.val()), h32, h32, c, 2);
  oracle::Vec a16 = oracle::align(f16, 4 * h32 * h32, oracle::Vec(t.val()), k, c, false);
  for (int i = 0; i < apyr.a16.size(); ++i) ASSERT_NEAR(apyr.a16.val()[i], a16[i], 1e-6);

  oracle::Vec up32_4 = oracle::upsample_nearest(a32, h32, h32, k, 4);
  oracle::Vec up16_2 = oracle::upsample_nearest(a16, 2 * h32, 2 * h32, k, 2);
  for (int i = 0; i < apyr.a8.size(); ++i)
    ASSERT_NEAR(apyr.a8.val()[i], up32_4[static_cast<size_t>(i)] + up16_2[static_cast<size_t>(i)], 1e-6);

  oracle::Vec a8(apyr.a8.val());
  oracle::Vec up32_8 = oracle::upsample_nearest(a32, h32, h32, k, 8);
  oracle::Vec up16_4 = oracle::upsample_nearest(a16, 2 * h32, 2 * h32, k, 4);
  oracle::Vec up8_2 = oracle::upsample_nearest(a8, 4 * h32, 4 * h32, k, 2);
  for (int i = 0; i < apyr.a4.size(); ++i)
    ASSERT_NEAR(apyr.a4.val()[i],
                up32_8[static_cast<size_t>(i)] + up16_4[static_cast<size_t>(i)] + up8_2[static_cast<size_t>(i)],
                1e-6);
}

TEST(MultiScale, ZeroTextGivesZeroPyramid) {
  ParamStore ps;
  ps.set_group("align", true, 1.0);
  icpc::UpsampleParams up = icpc::UpsampleParams::create(ps, "align", 3, 2);
  Rng rng(6);
  icpc::FeaturePyramid pyr = random_pyramid(rng, 32, 3);
  icpc::AlignmentPyramid apyr = icpc::multi_scale_align(pyr, Tensor::zeros({2, 3}), up, false);
  for (const Tensor* m : {&apyr.a32, &apyr.a16, &apyr.a8, &apyr.a4})
    for (double v : m->val()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(MultiScale, InconsistentPyramidRejected) {
  ParamStore ps;
  ps.set_group("align", true, 1.0);
  icpc::UpsampleParams up = icpc::UpsampleParams::create(ps, "align", 3, 2);
  Rng rng(7);
  icpc::FeaturePyramid pyr = random_pyramid(rng, 64, 3);
  pyr.s16 = random_t(rng, {3, 3, 3});  // wrong size: 2x of s32 misses it
  EXPECT_THROW(icpc::multi_scale_align(pyr, random_t(rng, {2, 3}), up, false), icpc::error);
}

TEST(AlignmentLoss, LargeMarginDrivesLossToZero) {
  int h = 2, w = 2, k = 3;
  std::vector<int> labels = {0, 1, 2, 1};
  std::vector<icpc::Real> av(static_cast<size_t>(h * w * k), 0.0);
  for (int p = 0; p < h * w; ++p) av[static_cast<size_t>(p) * k + labels[static_cast<size_t>(p)]] = 50.0;
  Tensor loss = icpc::alignment_loss(Tensor::leaf({h, w, k}, av), labels, 1.0, 255);
  EXPECT_LT(loss.item(), 1e-6);
  EXPECT_GE(loss.item(), 0.0);
}

TEST(AlignmentLoss, UniformScoresGiveLogK) {
  int k = 5;
  Tensor a = Tensor::full({3, 2, k}, 0.42);
  Tensor loss = icpc::alignment_loss(a, {0, 1, 2, 3, 4, 0}, 0.07, 255);
  EXPECT_NEAR(loss.item(), std::log(static_cast<double>(k)), 1e-9);
}

TEST(AlignmentLoss, MatchesHandEvaluatedCrossEntropy) {
  Rng rng(8);
  int h = 2, w = 2, k = 3;
  double temp = 0.3;
  Tensor a = random_t(rng, {h, w, k});
  std::vector<int> labels = {2, 0, 255, 1};
  Tensor loss = icpc::alignment_loss(a, labels, temp, 255);
  double want = 0.0;
  int valid = 0;
  for (int p = 0; p < h * w; ++p) {
    if (labels[static_cast<size_t>(p)] == 255) continue;
    oracle::Vec row(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) row[static_cast<size_t>(j)] = a.val()[static_cast<size_t>(p) * k + j] / temp;
    want += oracle::xent_row(row, labels[static_cast<size_t>(p)]);
    ++valid;
  }
  EXPECT_NEAR(loss.item(), want / valid, 1e-6);
}

TEST(AlignmentLoss, AllIgnoredRejected) {
  Tensor a = Tensor::zeros({1, 2, 3});
  EXPECT_THROW(icpc::alignment_loss(a, {255, 255}, 1.0, 255), icpc::error);
}

TEST(AlignmentLoss, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  int h = 2, w = 2, k = 3;
  std::vector<icpc::Real> av(static_cast<size_t>(h * w * k));
  for (auto& x : av) x = rng.normal();
  std::vector<int> labels = {0, 2, 1, 255};
  Tensor a = Tensor::leaf({h, w, k}, av, /*needs_grad=*/true);
  Tensor loss = icpc::alignment_loss(a, labels, 0.07, 255);
  icpc::backward(loss);
  double max_rel = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    auto f = [&](const oracle::Vec& x) {
      return icpc::alignment_loss(Tensor::leaf({h, w, k}, x), labels, 0.07, 255).item();
    };
    double fd = oracle::fd_grad(f, av, i);
    double ad = a.grad()[i];
    max_rel = std::max(max_rel, std::abs(ad - fd) / std::max(1e-6, std::abs(fd)));
  }
  EXPECT_LE(max_rel, 1e-3);
}

TEST(ResizeLabels, IdentityAndCenterSampling) {
  std::vector<int> labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  EXPECT_EQ(icpc::resize_labels_nearest(labels, 4, 4, 4, 4), labels);
  auto half = icpc::resize_labels_nearest(labels, 4, 4, 2, 2);
  EXPECT_EQ(half, (std::vector<int>{5, 7, 13, 15}));  // centers of each 2x2 block
  auto up = icpc::resize_labels_nearest({1, 2, 3, 4}, 2, 2, 4, 4);
  EXPECT_EQ(up, (std::vector<int>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(ConcatForDecoder, WidthAndRoundTrip) {
  Rng rng(10);
  int c = 32, k = 4, img = 64;
  icpc::FeaturePyramid pyr = random_pyramid(rng, img, c);
  icpc::AlignmentPyramid apyr;
  apyr.a32 = random_t(rng, {img / 32, img / 32, k});
  apyr.a16 = random_t(rng, {img / 16, img / 16, k});
  apyr.a8 = random_t(rng, {img / 8, img / 8, k});
  apyr.a4 = random_t(rng, {img / 4, img / 4, k});
  icpc::DecoratedPyramid d = icpc::concat_for_decoder(pyr, apyr);
  EXPECT_EQ(d.s4.dim(2), c + k);
  EXPECT_EQ(d.s8.dim(2), c + k);
  EXPECT_EQ(d.s16.dim(2), c + k);
  EXPECT_EQ(d.s32.dim(2), c + k);
  // channels [0,C) recover the original pyramid bit-exactly
  EXPECT_EQ(icpc::slice_last(d.s32, 0, c).val(), pyr.s32.val());
  EXPECT_EQ(icpc::slice_last(d.s4, 0, c).val(), pyr.s4.val());
  // with zero alignment maps the last K channels are zero
  icpc::AlignmentPyramid zero;
  zero.a32 = Tensor::zeros({img / 32, img / 32, k});
  zero.a16 = Tensor::zeros({img / 16, img / 16, k});
  zero.a8 = Tensor::zeros({img / 8, img / 8, k});
  zero.a4 = Tensor::zeros({img / 4, img / 4, k});
  icpc::DecoratedPyramid dz = icpc::concat_for_decoder(pyr, zero);
  Tensor tail = icpc::slice_last(dz.s8, c, c + k);
  for (double v : tail.val()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ConcatForDecoder, SpatialMismatchRejected) {
  Rng rng(11);
  icpc::FeaturePyramid pyr = random_pyramid(rng, 64, 8);
  icpc::AlignmentPyramid apyr;
  apyr.a32 = random_t(rng, {3, 3, 2});  // wrong size
  apyr.a16 = random_t(rng, {4, 4, 2});
  apyr.a8 = random_t(rng, {8, 8, 2});
  apyr.a4 = random_t(rng, {16, 16, 2});
  EXPECT_THROW(icpc::concat_for_decoder(pyr, apyr), icpc::error);
}

}  // namespace
