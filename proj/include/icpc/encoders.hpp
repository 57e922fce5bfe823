#pragma once

// Toy image/text encoders standing in for a CLIP backbone: a small strided
// conv stack producing a four-level feature pyramid plus a pooled global
// vector, a two-layer self-attention text encoder with final-token readout,
// and the two-layer projector that turns the global feature into the
// instance vector.

#include <string>
#include <utility>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/nn.hpp"
#include "icpc/params.hpp"
#include "icpc/rng.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

struct FeaturePyramid {
  Tensor s4, s8, s16, s32;  // [H/s, W/s, C] each
};

// Five stride-2 conv stages: image -> stride 2 (stem), then strides 4/8/16/32.
// All activations tanh so a zero-bias encoder maps zero input to zero output.
class ImageEncoder {
 public:
  ImageEncoder(ParamStore& ps, const std::string& group, int embed_dim, int global_dim,
               Rng& rng)
      : c_(embed_dim), d_(global_dim) {
    auto conv_init = [&](const std::string& name, int kh, int kw, int ci, int co) {
      Real std = 1.0 / std::sqrt(static_cast<Real>(kh * kw * ci));
      w_.push_back(ps.add_normal(group, name + ".w", {kh, kw, ci, co}, rng, std));
      b_.push_back(ps.add_full(group, name + ".b", {co}, 0.0));
    };
    conv_init("stem", 3, 3, 3, c_);
    conv_init("stage1", 3, 3, c_, c_);
    conv_init("stage2", 3, 3, c_, c_);
    conv_init("stage3", 3, 3, c_, c_);
    conv_init("stage4", 3, 3, c_, c_);
    wg_ = ps.add_normal(group, "pool.w", {c_, d_}, rng, 1.0 / std::sqrt(static_cast<Real>(c_)));
    bg_ = ps.add_full(group, "pool.b", {d_}, 0.0);
  }

  // image: [H, W, 3] with H, W divisible by 32. Returns (pyramid, global [D]).
  std::pair<FeaturePyramid, Tensor> encode(const Tensor& image) const {
    check(image.ndim() == 3 && image.dim(2) == 3, "encode_image: [H,W,3] image expected");
    check(image.dim(0) % 32 == 0 && image.dim(1) % 32 == 0,
          "encode_image: image size " + std::to_string(image.dim(0)) + "x" +
              std::to_string(image.dim(1)) + " not divisible by 32");
    Tensor t = tanh_t(conv2d(image, w_[0], b_[0], 2, 1));
    FeaturePyramid pyr;
    pyr.s4 = tanh_t(conv2d(t, w_[1], b_[1], 2, 1));
    pyr.s8 = tanh_t(conv2d(pyr.s4, w_[2], b_[2], 2, 1));
    pyr.s16 = tanh_t(conv2d(pyr.s8, w_[3], b_[3], 2, 1));
    pyr.s32 = tanh_t(conv2d(pyr.s16, w_[4], b_[4], 2, 1));
    Tensor pooled = reshape(mean_spatial(pyr.s32), {1, c_});
    Tensor global = reshape(linear(pooled, wg_, bg_), {d_});
    return {pyr, global};
  }

  int embed_dim() const { return c_; }
  int global_dim() const { return d_; }

 private:
  int c_, d_;
  std::vector<Tensor> w_, b_;
  Tensor wg_, bg_;
};

// Two pre-residual self-attention blocks followed by final-token readout.
// Prompt tokens are inputs to this function, so gradients reach them even
// when every weight registered here sits in a frozen group.
class TextEncoder {
 public:
  TextEncoder(ParamStore& ps, const std::string& group, int width, int heads, int layers,
              Rng& rng)
      : c_(width), layers_(layers) {
    check(layers >= 1, "text encoder: at least one layer required");
    Real std = 1.0 / std::sqrt(static_cast<Real>(width));
    for (int l = 0; l < layers; ++l) {
      std::string p = "layer" + std::to_string(l);
      AttentionParams a;
      a.wq = ps.add_normal(group, p + ".attn.wq", {c_, c_}, rng, std);
      a.bq = ps.add_full(group, p + ".attn.bq", {c_}, 0.0);
      a.wk = ps.add_normal(group, p + ".attn.wk", {c_, c_}, rng, std);
      a.bk = ps.add_full(group, p + ".attn.bk", {c_}, 0.0);
      a.wv = ps.add_normal(group, p + ".attn.wv", {c_, c_}, rng, std);
      a.bv = ps.add_full(group, p + ".attn.bv", {c_}, 0.0);
      a.wo = ps.add_normal(group, p + ".attn.wo", {c_, c_}, rng, std);
      a.bo = ps.add_full(group, p + ".attn.bo", {c_}, 0.0);
      a.heads = heads;
      attn_.push_back(a);
      mlp_w1_.push_back(ps.add_normal(group, p + ".mlp.w1", {c_, c_}, rng, std));
      mlp_b1_.push_back(ps.add_full(group, p + ".mlp.b1", {c_}, 0.0));
      mlp_w2_.push_back(ps.add_normal(group, p + ".mlp.w2", {c_, c_}, rng, std));
      mlp_b2_.push_back(ps.add_full(group, p + ".mlp.b2", {c_}, 0.0));
    }
  }

  // prompts: K sequences, each [L, C] with a shared L. Returns [K, C].
  Tensor encode(const std::vector<Tensor>& prompts) const {
    check(!prompts.empty(), "encode_text: empty prompt batch");
    int len = prompts[0].dim(0);
    for (const Tensor& p : prompts) {
      check(p.ndim() == 2 && p.dim(1) == c_,
            "encode_text: prompt width " + std::to_string(p.dim(1)) + " != " +
                std::to_string(c_));
      check(p.dim(0) == len, "encode_text: ragged prompt lengths (" + std::to_string(p.dim(0)) +
                                 " vs " + std::to_string(len) + ")");
    }
    std::vector<Tensor> rows;
    rows.reserve(prompts.size());
    for (const Tensor& p : prompts) {
      Tensor x = p;
      for (int l = 0; l < layers_; ++l) {
        x = add(x, attention(x, x, attn_[static_cast<size_t>(l)]));
        Tensor h = tanh_t(linear(x, mlp_w1_[static_cast<size_t>(l)], mlp_b1_[static_cast<size_t>(l)]));
        x = add(x, linear(h, mlp_w2_[static_cast<size_t>(l)], mlp_b2_[static_cast<size_t>(l)]));
      }
      rows.push_back(row(x, len - 1));
    }
    Tensor out = rows[0];
    for (size_t i = 1; i < rows.size(); ++i) out = concat_rows(out, rows[i]);
    return out;
  }

  int width() const { return c_; }

 private:
  int c_, layers_;
  std::vector<AttentionParams> attn_;
  std::vector<Tensor> mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

// Two affine maps with a ReLU between them: global feature [D] -> instance
// vector [C]. Hidden width equals the output width.
class Projector {
 public:
  Projector(ParamStore& ps, const std::string& group, int in_dim, int out_dim, Rng& rng)
      : d_(in_dim), c_(out_dim) {
    w1_ = ps.add_normal(group, "proj.w1", {d_, c_}, rng, 1.0 / std::sqrt(static_cast<Real>(d_)));
    b1_ = ps.add_full(group, "proj.b1", {c_}, 0.0);
    w2_ = ps.add_normal(group, "proj.w2", {c_, c_}, rng, 1.0 / std::sqrt(static_cast<Real>(c_)));
    b2_ = ps.add_full(group, "proj.b2", {c_}, 0.0);
  }

  Tensor project(const Tensor& g) const {
    check(g.ndim() == 1 && g.dim(0) == d_,
          "project_global: width " + std::to_string(g.ndim() == 1 ? g.dim(0) : -1) + " != " +
              std::to_string(d_));
    Tensor h = relu(linear(reshape(g, {1, d_}), w1_, b1_));
    return reshape(linear(h, w2_, b2_), {c_});
  }

 private:
  int d_, c_;
  Tensor w1_, b1_, w2_, b2_;
};

}  // namespace icpc
