#pragma once

// Composition root: wires the image/text encoders, instance-conditioned
// prompting, cross-attention refinement, (multi-scale) alignment, and the
// fusion decoder into one trainable model with named parameter groups.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "icpc/alignment.hpp"
#include "icpc/check.hpp"
#include "icpc/config.hpp"
#include "icpc/contrastive.hpp"
#include "icpc/data.hpp"
#include "icpc/decoder.hpp"
#include "icpc/encoders.hpp"
#include "icpc/params.hpp"
#include "icpc/prompting.hpp"
#include "icpc/rng.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

struct ModelConfig {
  int classes = 8;
  int context_len = 8;
  int embed_dim = 64;   // shared pixel/text width C
  int global_dim = 64;  // global feature width D
  int text_heads = 1;
  int text_layers = 2;
  int refine_heads = 1;
  int refine_blocks = 1;
  Real refine_lambda_init = 1e-4;
  bool refine_lambda_trainable = true;
  int decoder_width = 64;
  PromptMode prompt_mode = PromptMode::icpc;
  bool normalize_embeddings = true;
  bool multi_scale = true;
  Real temp_align = 0.07;
  bool align_loss_all_scales = false;
  Real image_encoder_lr_mult = 0.1;
  bool freeze_text_encoder = true;

  static ModelConfig from(const Config& cfg) {
    ModelConfig m;
    m.classes = static_cast<int>(cfg.integer("data.classes"));
    m.context_len = static_cast<int>(cfg.integer("model.context_len"));
    m.embed_dim = static_cast<int>(cfg.integer("model.embed_dim"));
    m.global_dim = static_cast<int>(cfg.integer("model.global_dim"));
    m.text_heads = static_cast<int>(cfg.integer("model.text_heads"));
    m.text_layers = static_cast<int>(cfg.integer("model.text_layers"));
    m.refine_heads = static_cast<int>(cfg.integer("model.refine_heads"));
    m.refine_blocks = static_cast<int>(cfg.integer("model.refine_blocks"));
    m.refine_lambda_init = cfg.real("model.refine_lambda_init");
    m.refine_lambda_trainable = cfg.boolean("model.refine_lambda_trainable");
    m.decoder_width = static_cast<int>(cfg.integer("model.decoder_width"));
    m.prompt_mode = parse_prompt_mode(cfg.str("prompt_mode"));
    m.normalize_embeddings = cfg.boolean("normalize_embeddings");
    m.multi_scale = cfg.boolean("multi_scale");
    m.temp_align = cfg.real("temp_align");
    m.align_loss_all_scales = cfg.boolean("align_loss_all_scales");
    m.image_encoder_lr_mult = cfg.real("train.image_encoder_lr_mult");
    m.freeze_text_encoder = cfg.boolean("train.freeze_text_encoder");
    return m;
  }
};

struct ModelOutput {
  FeaturePyramid pyr;
  Tensor global;          // [D]
  Tensor inst;            // [C]
  Tensor text;            // [K, C], after refinement
  AlignmentPyramid apyr;  // a32 always; a16/a8/a4 only populated in multi-scale mode
  Tensor logits;          // [H, W, K], full resolution
};

enum class PredictionSource { decoder, raw_alignment };

inline PredictionSource parse_prediction_source(const std::string& s) {
  if (s == "decoder") return PredictionSource::decoder;
  if (s == "raw-alignment") return PredictionSource::raw_alignment;
  throw config_error("unknown prediction source '" + s + "' (expected decoder|raw-alignment)");
}

class IcpcModel {
 public:
  IcpcModel(const ModelConfig& mc, uint64_t init_seed)
      : mc_(mc), rng_(Rng::mix(init_seed, 0x6d6f64656cull)) {
    params_.set_group("image_encoder", true, mc.image_encoder_lr_mult);
    params_.set_group("text_encoder", !mc.freeze_text_encoder, 1.0);
    params_.set_group("prompt", true, 1.0);
    params_.set_group("prompt_lambda", mc.refine_lambda_trainable, 1.0);
    params_.set_group("frozen_ctx", false, 1.0);
    params_.set_group("align", true, 1.0);
    params_.set_group("head", true, 1.0);

    enc_.emplace(params_, "image_encoder", mc.embed_dim, mc.global_dim, rng_);
    txt_.emplace(params_, "text_encoder", mc.embed_dim, mc.text_heads, mc.text_layers, rng_);
    proj_.emplace(params_, "prompt", mc.global_dim, mc.embed_dim, rng_);

    Real tok_std = 1.0 / std::sqrt(static_cast<Real>(mc.embed_dim));
    ctx_ = params_.add_normal("prompt", "ctx", {mc.context_len, mc.embed_dim}, rng_, tok_std);
    cls_ = params_.add_normal("prompt", "cls", {mc.classes, mc.embed_dim}, rng_, tok_std);
    frozen_ctx_ = params_.add_normal("frozen_ctx", "ctx", {mc.context_len, mc.embed_dim}, rng_,
                                     tok_std);

    Real attn_std = tok_std;
    for (int b = 0; b < mc.refine_blocks; ++b) {
      std::string p = "refine" + std::to_string(b);
      RefinementParams rp;
      rp.attn.wq = params_.add_normal("prompt", p + ".wq", {mc.embed_dim, mc.embed_dim}, rng_, attn_std);
      rp.attn.bq = params_.add_full("prompt", p + ".bq", {mc.embed_dim}, 0.0);
      rp.attn.wk = params_.add_normal("prompt", p + ".wk", {mc.embed_dim, mc.embed_dim}, rng_, attn_std);
      rp.attn.bk = params_.add_full("prompt", p + ".bk", {mc.embed_dim}, 0.0);
      rp.attn.wv = params_.add_normal("prompt", p + ".wv", {mc.embed_dim, mc.embed_dim}, rng_, attn_std);
      rp.attn.bv = params_.add_full("prompt", p + ".bv", {mc.embed_dim}, 0.0);
      rp.attn.wo = params_.add_normal("prompt", p + ".wo", {mc.embed_dim, mc.embed_dim}, rng_, attn_std);
      rp.attn.bo = params_.add_full("prompt", p + ".bo", {mc.embed_dim}, 0.0);
      rp.attn.heads = mc.refine_heads;
      rp.lambda = params_.add("prompt_lambda", "lambda" + std::to_string(b), {},
                              {mc.refine_lambda_init});
      refine_.push_back(rp);
    }

    up_ = UpsampleParams::create(params_, "align", mc.embed_dim, mc.classes);

    int c = mc.embed_dim, k = mc.classes;
    std::vector<int> widths = mc.multi_scale ? std::vector<int>{c + k, c + k, c + k, c + k}
                                             : std::vector<int>{c, c, c, c + k};
    dec_.emplace(params_, "head", widths, mc.decoder_width, k, rng_);
  }

  static IcpcModel from_config(const Config& cfg) {
    return IcpcModel(ModelConfig::from(cfg), static_cast<uint64_t>(cfg.integer("run.seed")));
  }

  ModelOutput forward(const Tensor& image) const {
    ModelOutput out;
    auto [pyr, g] = enc_->encode(image);
    out.pyr = pyr;
    out.global = g;
    out.inst = proj_->project(g);
    const Tensor& ctx = mc_.prompt_mode == PromptMode::fixed ? frozen_ctx_ : ctx_;
    Tensor T = txt_->encode(build_prompts(ctx, out.inst, cls_, mc_.prompt_mode));
    for (const auto& rp : refine_) T = refine_text(T, pyr.s32, rp);
    out.text = T;
    if (mc_.multi_scale) {
      out.apyr = multi_scale_align(pyr, T, up_, mc_.normalize_embeddings);
      DecoratedPyramid d = concat_for_decoder(pyr, out.apyr);
      out.logits = dec_->logits({d.s4, d.s8, d.s16, d.s32});
    } else {
      out.apyr.a32 = align(pyr.s32, T, mc_.normalize_embeddings);
      out.logits = dec_->logits({pyr.s4, pyr.s8, pyr.s16, concat_last(pyr.s32, out.apyr.a32)});
    }
    return out;
  }

  // Mean cross-entropy of the full-resolution logits over non-ignored pixels.
  Tensor seg_loss(const ModelOutput& out, const std::vector<int>& labels) const {
    int h = out.logits.dim(0), w = out.logits.dim(1), k = out.logits.dim(2);
    check(static_cast<int>(labels.size()) == h * w, "seg_loss: label count mismatch");
    return cross_entropy_rows(reshape(out.logits, {h * w, k}), labels, kIgnoreLabel);
  }

  // Alignment loss at stride 32, or the mean over all four scales when
  // configured; labels come in at full resolution.
  Tensor align_loss(const ModelOutput& out, const std::vector<int>& labels, int h, int w) const {
    auto at = [&](const Tensor& a) {
      return alignment_loss(a, resize_labels_nearest(labels, h, w, a.dim(0), a.dim(1)),
                            mc_.temp_align, kIgnoreLabel);
    };
    if (!mc_.align_loss_all_scales || !mc_.multi_scale) return at(out.apyr.a32);
    Tensor sum = add(add(at(out.apyr.a32), at(out.apyr.a16)),
                     add(at(out.apyr.a8), at(out.apyr.a4)));
    return scale(sum, 0.25);
  }

  // Labels resized to the stride-32 grid, the resolution contrastive points
  // are harvested at.
  std::vector<int> contrast_labels(const ModelOutput& out, const std::vector<int>& labels, int h,
                                   int w) const {
    return resize_labels_nearest(labels, h, w, out.apyr.a32.dim(0), out.apyr.a32.dim(1));
  }

  std::vector<int> predict(const ModelOutput& out, PredictionSource source) const {
    Tensor scores;
    if (source == PredictionSource::decoder) {
      scores = out.logits;
    } else {
      scores = mc_.multi_scale ? upsample_bilinear(out.apyr.a4, 4)
                               : upsample_bilinear(out.apyr.a32, 32);
    }
    int h = scores.dim(0), w = scores.dim(1), k = scores.dim(2);
    check(h == out.logits.dim(0) && w == out.logits.dim(1), "predict: resolution mismatch");
    const Real* v = scores.val().data();
    std::vector<int> pred(static_cast<size_t>(h) * w);
    for (int p = 0; p < h * w; ++p) {
      const Real* r = v + static_cast<size_t>(p) * k;
      int arg = 0;
      for (int j = 1; j < k; ++j)
        if (r[j] > r[arg]) arg = j;
      pred[static_cast<size_t>(p)] = arg;
    }
    return pred;
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return mc_; }

 private:
  ModelConfig mc_;
  Rng rng_;
  ParamStore params_;
  std::optional<ImageEncoder> enc_;
  std::optional<TextEncoder> txt_;
  std::optional<Projector> proj_;
  Tensor ctx_, cls_, frozen_ctx_;
  std::vector<RefinementParams> refine_;
  UpsampleParams up_;
  std::optional<Decoder> dec_;
};

}  // namespace icpc
