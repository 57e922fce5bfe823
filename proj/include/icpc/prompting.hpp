#pragma once

// Prompt assembly (shared learnable context + per-image instance vector +
// class token), cross-attention refinement of the encoded text embeddings
// against image features, and the CLIP-style zero-shot probability head.

#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/nn.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

enum class PromptMode { fixed, learnable, instance, icpc, cocoop };

inline PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "fixed") return PromptMode::fixed;
  if (s == "learnable") return PromptMode::learnable;
  if (s == "instance") return PromptMode::instance;
  if (s == "icpc") return PromptMode::icpc;
  if (s == "cocoop") return PromptMode::cocoop;
  throw config_error("unknown prompt mode '" + s +
                     "' (expected fixed|learnable|instance|icpc|cocoop)");
}

inline std::string prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::fixed: return "fixed";
    case PromptMode::learnable: return "learnable";
    case PromptMode::instance: return "instance";
    case PromptMode::icpc: return "icpc";
    case PromptMode::cocoop: return "cocoop";
  }
  return "?";
}

// Builds one prompt sequence per class.
//   icpc:      [V1..VN, I, CLS_k]           length N+2
//   cocoop:    [V1+I .. VN+I, CLS_k]        length N+1
//   learnable: [V1..VN, CLS_k]              length N+1
//   fixed:     same layout as learnable; the caller passes a frozen table
//   instance:  [I, CLS_k]                   length 2
// ctx: [N, C]; inst: [C]; cls: [K, C].
inline std::vector<Tensor> build_prompts(const Tensor& ctx, const Tensor& inst,
                                         const Tensor& cls, PromptMode mode) {
  check(ctx.ndim() == 2 && cls.ndim() == 2 && inst.ndim() == 1, "build_prompts: bad ranks");
  int c = cls.dim(1);
  check(ctx.dim(1) == c, "build_prompts: context width " + std::to_string(ctx.dim(1)) +
                             " != class token width " + std::to_string(c));
  check(inst.dim(0) == c, "build_prompts: instance width " + std::to_string(inst.dim(0)) +
                              " != class token width " + std::to_string(c));
  int k = cls.dim(0);
  Tensor inst_row = reshape(inst, {1, c});
  Tensor base;  // everything before CLS_k, shared across classes
  switch (mode) {
    case PromptMode::fixed:
    case PromptMode::learnable:
      base = ctx;
      break;
    case PromptMode::icpc:
      base = concat_rows(ctx, inst_row);
      break;
    case PromptMode::cocoop:
      base = add_rowvec(ctx, inst);
      break;
    case PromptMode::instance:
      base = inst_row;
      break;
  }
  std::vector<Tensor> prompts;
  prompts.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) prompts.push_back(concat_rows(base, row(cls, i)));
  return prompts;
}

struct RefinementParams {
  AttentionParams attn;
  Tensor lambda;  // trainable scalar, initialized to 1e-4
};

// T <- T + lambda * cross_attention(T, feat): text embeddings as queries,
// image pixels (the flattened stride-32 feature map) as keys and values.
inline Tensor refine_text(const Tensor& T, const Tensor& feat, const RefinementParams& p) {
  check(T.ndim() == 2, "refine_text: [K,C] text matrix expected");
  check(feat.ndim() == 3, "refine_text: [H,W,C] feature map expected");
  check(feat.dim(0) >= 1 && feat.dim(1) >= 1, "refine_text: empty feature map");
  check(feat.dim(2) == T.dim(1), "refine_text: feature width " + std::to_string(feat.dim(2)) +
                                     " != text width " + std::to_string(T.dim(1)));
  Tensor kv = reshape(feat, {feat.dim(0) * feat.dim(1), feat.dim(2)});
  Tensor delta = attention(T, kv, p.attn);
  return add(T, scale_by(delta, p.lambda));
}

// p_k = exp(cos(g, T_k)/temp) / sum_j exp(cos(g, T_j)/temp). Returns [K].
inline Tensor zero_shot_probs(const Tensor& g, const Tensor& T, Real temp) {
  check(temp > 0.0, "zero_shot_probs: temperature must be positive");
  check(g.ndim() == 1 && T.ndim() == 2, "zero_shot_probs: bad ranks");
  check(g.dim(0) == T.dim(1), "zero_shot_probs: global width " + std::to_string(g.dim(0)) +
                                  " != text width " + std::to_string(T.dim(1)));
  Tensor gn = l2_normalize_rows(reshape(g, {1, g.dim(0)}));
  Tensor tn = l2_normalize_rows(T);
  Tensor sims = matmul(gn, transpose2d(tn));  // [1, K] of cosines
  return reshape(softmax_rows(scale(sims, 1.0 / temp)), {T.dim(0)});
}

}  // namespace icpc
