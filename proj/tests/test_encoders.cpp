// Image/text encoder and projector contracts: pyramid shapes, determinism,
// zero propagation, ragged errors, projector oracle, and gradient flow into
// prompt tokens through a frozen text encoder.

#include <gtest/gtest.h>

#include <vector>

#include "icpc/encoders.hpp"
#include "icpc/params.hpp"
#include "icpc/rng.hpp"
#include "oracles.hpp"

using icpc::ParamStore;
using icpc::Rng;
using icpc::Tensor;

namespace {

Tensor random_image(Rng& rng, int h, int w) {
  std::vector<icpc::Real> v(static_cast<size_t>(h) * w * 3);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::leaf({h, w, 3}, v);
}

TEST(ImageEncoder, PyramidShapesFollowStrideTable) {
  ParamStore ps;
  ps.set_group("image_encoder", true, 0.1);
  Rng rng(1);
  icpc::ImageEncoder enc(ps, "image_encoder", 32, 16, rng);
  Rng img_rng(2);
  auto [pyr, g] = enc.encode(random_image(img_rng, 64, 64));
  EXPECT_EQ(pyr.s4.shape(), (std::vector<int>{16, 16, 32}));
  EXPECT_EQ(pyr.s8.shape(), (std::vector<int>{8, 8, 32}));
  EXPECT_EQ(pyr.s16.shape(), (std::vector<int>{4, 4, 32}));
  EXPECT_EQ(pyr.s32.shape(), (std::vector<int>{2, 2, 32}));
  EXPECT_EQ(g.shape(), (std::vector<int>{16}));
}

TEST(ImageEncoder, NonMultipleOf32Rejected) {
  ParamStore ps;
  ps.set_group("image_encoder", true, 0.1);
  Rng rng(1);
  icpc::ImageEncoder enc(ps, "image_encoder", 8, 8, rng);
  Rng img_rng(2);
  EXPECT_THROW(enc.encode(random_image(img_rng, 48, 64)), icpc::error);
}

TEST(ImageEncoder, ZeroImageZeroBiasGivesZeroGlobal) {
  ParamStore ps;
  ps.set_group("image_encoder", true, 0.1);
  Rng rng(3);
  icpc::ImageEncoder enc(ps, "image_encoder", 8, 8, rng);  // biases init to zero
  auto [pyr, g] = enc.encode(Tensor::zeros({32, 32, 3}));
  for (icpc::Real v : g.val()) EXPECT_DOUBLE_EQ(v, 0.0);
  for (icpc::Real v : pyr.s32.val()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ImageEncoder, Deterministic) {
  ParamStore ps;
  ps.set_group("image_encoder", true, 0.1);
  Rng rng(4);
  icpc::ImageEncoder enc(ps, "image_encoder", 8, 8, rng);
  Rng ra(5), rb(5);
  auto [p1, g1] = enc.encode(random_image(ra, 32, 32));
  auto [p2, g2] = enc.encode(random_image(rb, 32, 32));
  EXPECT_EQ(g1.val(), g2.val());
  EXPECT_EQ(p1.s4.val(), p2.s4.val());
}

icpc::TextEncoder make_text_encoder(ParamStore& ps, int width, uint64_t seed,
                                    bool trainable = false) {
  ps.set_group("text_encoder", trainable, 1.0);
  Rng rng(seed);
  return icpc::TextEncoder(ps, "text_encoder", width, 1, 2, rng);
}

TEST(TextEncoder, OutputShapeOneRowPerClass) {
  ParamStore ps;
  auto enc = make_text_encoder(ps, 16, 6);
  Rng rng(7);
  std::vector<Tensor> prompts;
  for (int k = 0; k < 5; ++k) {
    std::vector<icpc::Real> v(10 * 16);
    for (auto& x : v) x = rng.normal();
    prompts.push_back(Tensor::leaf({10, 16}, v));
  }
  Tensor out = enc.encode(prompts);
  EXPECT_EQ(out.shape(), (std::vector<int>{5, 16}));

  Tensor one = enc.encode({prompts[0]});
  EXPECT_EQ(one.shape(), (std::vector<int>{1, 16}));
}

TEST(TextEncoder, FullScaleShape) {
  // 150 classes, 9 context tokens + 1 class token, full CLIP-like width.
  ParamStore ps;
  auto enc = make_text_encoder(ps, 512, 8);
  std::vector<Tensor> prompts;
  Rng rng(9);
  std::vector<icpc::Real> shared(10 * 512);
  for (auto& x : shared) x = rng.normal() * 0.1;
  for (int k = 0; k < 150; ++k) prompts.push_back(Tensor::leaf({10, 512}, shared));
  Tensor out = enc.encode(prompts);
  EXPECT_EQ(out.shape(), (std::vector<int>{150, 512}));
}

TEST(TextEncoder, PermutingClassesPermutesRows) {
  ParamStore ps;
  auto enc = make_text_encoder(ps, 12, 10);
  Rng rng(11);
  std::vector<Tensor> prompts;
  for (int k = 0; k < 4; ++k) {
    std::vector<icpc::Real> v(3 * 12);
    for (auto& x : v) x = rng.normal();
    prompts.push_back(Tensor::leaf({3, 12}, v));
  }
  Tensor fwd = enc.encode(prompts);
  Tensor rev = enc.encode({prompts[3], prompts[2], prompts[1], prompts[0]});
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 12; ++j)
      EXPECT_DOUBLE_EQ(fwd.val()[static_cast<size_t>(k) * 12 + j],
                       rev.val()[static_cast<size_t>(3 - k) * 12 + j]);
}

TEST(TextEncoder, RaggedLengthsRejected) {
  ParamStore ps;
  auto enc = make_text_encoder(ps, 8, 12);
  Tensor a = Tensor::zeros({3, 8}), b = Tensor::zeros({4, 8});
  EXPECT_THROW(enc.encode({a, b}), icpc::error);
}

TEST(TextEncoder, GradientsReachPromptTokensThroughFrozenWeights) {
  // The encoder weights live in a frozen group; the prompt tokens are inputs
  // and must still receive gradients (they are what prompt learning trains).
  ParamStore ps;
  auto enc = make_text_encoder(ps, 6, 13, /*trainable=*/false);
  Rng rng(14);
  std::vector<icpc::Real> v(2 * 6);
  for (auto& x : v) x = rng.normal() * 0.3;
  Tensor prompt = Tensor::leaf({2, 6}, v, /*needs_grad=*/true);
  Tensor out = enc.encode({prompt});
  Tensor loss = icpc::mean_all(icpc::mul(out, out));
  icpc::backward(loss);

  double max_rel_err = 0.0, max_abs = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    auto f = [&](const oracle::Vec& x) {
      Tensor p = Tensor::leaf({2, 6}, x);
      Tensor o = enc.encode({p});
      return icpc::mean_all(icpc::mul(o, o)).item();
    };
    double fd = oracle::fd_grad(f, v, i);
    double ad = prompt.grad()[i];
    max_abs = std::max(max_abs, std::abs(fd));
    max_rel_err = std::max(max_rel_err, std::abs(ad - fd) / std::max(1e-8, std::abs(fd)));
  }
  EXPECT_GT(max_abs, 0.0) << "prompt perturbation must change the output";
  EXPECT_LE(max_rel_err, 1e-3);
  for (const auto& e : ps.entries()) EXPECT_FALSE(e.t.needs_grad());
}

TEST(Projector, IdentityCompositionOnPositiveInput) {
  ParamStore ps;
  ps.set_group("prompt", true, 1.0);
  Rng rng(15);
  int d = 4;
  icpc::Projector proj(ps, "prompt", d, d, rng);
  // overwrite with identity weights / zero biases
  for (const auto& e : ps.entries()) {
    auto& v = e.t.node()->val;
    std::fill(v.begin(), v.end(), 0.0);
    if (e.name == "prompt.proj.w1" || e.name == "prompt.proj.w2")
      for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
  }
  Tensor g = Tensor::leaf({d}, {0.5, 1.0, 2.0, 0.25});  // positive, so ReLU is identity
  Tensor out = proj.project(g);
  for (int i = 0; i < d; ++i) EXPECT_DOUBLE_EQ(out.val()[i], g.val()[i]);
}

TEST(Projector, ZeroInputZeroBiasGivesZero) {
  ParamStore ps;
  ps.set_group("prompt", true, 1.0);
  Rng rng(16);
  icpc::Projector proj(ps, "prompt", 6, 9, rng);
  Tensor out = proj.project(Tensor::zeros({6}));
  for (icpc::Real v : out.val()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Projector, MatchesDenseOracle) {
  ParamStore ps;
  ps.set_group("prompt", true, 1.0);
  Rng rng(17);
  int d = 5, c = 7;
  icpc::Projector proj(ps, "prompt", d, c, rng);
  Rng grng(18);
  oracle::Vec g(static_cast<size_t>(d));
  for (auto& x : g) x = grng.normal();
  Tensor out = proj.project(Tensor::leaf({d}, g));

  const auto& w1 = ps.get("prompt.proj.w1").val();
  const auto& b1 = ps.get("prompt.proj.b1").val();
  const auto& w2 = ps.get("prompt.proj.w2").val();
  const auto& b2 = ps.get("prompt.proj.b2").val();
  oracle::Vec h(static_cast<size_t>(c));
  for (int j = 0; j < c; ++j) {
    double acc = b1[static_cast<size_t>(j)];
    for (int i = 0; i < d; ++i) acc += g[static_cast<size_t>(i)] * w1[static_cast<size_t>(i) * c + j];
    h[static_cast<size_t>(j)] = std::max(0.0, acc);
  }
  for (int j = 0; j < c; ++j) {
    double acc = b2[static_cast<size_t>(j)];
    for (int i = 0; i < c; ++i) acc += h[static_cast<size_t>(i)] * w2[static_cast<size_t>(i) * c + j];
    EXPECT_NEAR(out.val()[j], acc, 1e-6);
  }
}

TEST(Projector, WidthMismatchRejected) {
  ParamStore ps;
  ps.set_group("prompt", true, 1.0);
  Rng rng(19);
  icpc::Projector proj(ps, "prompt", 6, 9, rng);
  EXPECT_THROW(proj.project(Tensor::zeros({5})), icpc::error);
}

TEST(ParamStore, GroupHashDetectsAnyChange) {
  ParamStore ps;
  ps.set_group("text_encoder", false, 1.0);
  Rng rng(20);
  ps.add_normal("text_encoder", "w", {4, 4}, rng, 1.0);
  uint64_t h0 = ps.group_hash("text_encoder");
  EXPECT_EQ(h0, ps.group_hash("text_encoder"));
  ps.get("text_encoder.w").node()->val[7] += 1e-12;
  EXPECT_NE(h0, ps.group_hash("text_encoder"));
}

}  // namespace
