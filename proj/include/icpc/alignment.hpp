#pragma once

// Dense pixel-text alignment: per-pixel score maps against the class text
// embeddings, the four-level multi-scale extension built with learned 2x
// transposed convolutions, the per-pixel alignment loss, and the channel
// concatenation that feeds the segmentation decoder.

#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/encoders.hpp"
#include "icpc/params.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

// A[h,w,k] = <pixel(h,w), T_k>, optionally on L2-normalized vectors.
inline Tensor align(const Tensor& feat, const Tensor& T, bool normalize) {
  check(feat.ndim() == 3, "align: [H,W,C] feature expected");
  check(T.ndim() == 2, "align: [K,C] text matrix expected");
  check(feat.dim(2) == T.dim(1), "align: feature width " + std::to_string(feat.dim(2)) +
                                     " != text width " + std::to_string(T.dim(1)));
  int h = feat.dim(0), w = feat.dim(1), c = feat.dim(2), k = T.dim(0);
  Tensor flat = reshape(feat, {h * w, c});
  Tensor txt = T;
  if (normalize) {
    flat = l2_normalize_rows(flat);
    txt = l2_normalize_rows(txt);
  }
  return reshape(matmul(flat, transpose2d(txt)), {h, w, k});
}

// Learned 2x upsampling kernels, one per factor appearing in the multi-scale
// recursion; the 4x and 8x paths reuse their kernel across chained 2x stages.
struct UpsampleParams {
  Tensor feat2;   // [C,2,2] feature-space 2x (for the 1/16 line)
  Tensor score2;  // [K,2,2] score-space 2x
  Tensor score4;  // [K,2,2] score-space 4x, applied twice
  Tensor score8;  // [K,2,2] score-space 8x, applied three times

  static UpsampleParams create(ParamStore& ps, const std::string& group, int c, int k) {
    UpsampleParams up;
    up.feat2 = ps.add_full(group, "up.feat2", {c, 2, 2}, 1.0);
    up.score2 = ps.add_full(group, "up.score2", {k, 2, 2}, 1.0);
    up.score4 = ps.add_full(group, "up.score4", {k, 2, 2}, 1.0);
    up.score8 = ps.add_full(group, "up.score8", {k, 2, 2}, 1.0);
    return up;
  }
};

struct AlignmentPyramid {
  Tensor a32, a16, a8, a4;  // [H/s, W/s, K] for s in {32, 16, 8, 4}
};

// The four-level recursion:
//   A_1/32 = align(F32)
//   A_1/16 = align(Up2x(F32))           (feature-space upsampling)
//   A_1/8  = Up4x(A_1/32) + Up2x(A_1/16)  (score-space)
//   A_1/4  = Up8x(A_1/32) + Up4x(A_1/16) + Up2x(A_1/8)
inline AlignmentPyramid multi_scale_align(const FeaturePyramid& pyr, const Tensor& T,
                                          const UpsampleParams& up, bool normalize) {
  auto expect = [](const Tensor& t, const Tensor& ref, const std::string& what) {
    check(t.dim(0) == ref.dim(0) && t.dim(1) == ref.dim(1),
          "multi_scale_align: " + what + " is " + std::to_string(t.dim(0)) + "x" +
              std::to_string(t.dim(1)) + ", expected " + std::to_string(ref.dim(0)) + "x" +
              std::to_string(ref.dim(1)));
  };
  AlignmentPyramid apyr;
  apyr.a32 = align(pyr.s32, T, normalize);
  Tensor f16 = deconv2x_depthwise(pyr.s32, up.feat2);
  expect(f16, pyr.s16, "upsampled stride-32 feature");
  apyr.a16 = align(f16, T, normalize);
  Tensor a8 = add(deconv2x_depthwise(deconv2x_depthwise(apyr.a32, up.score4), up.score4),
                  deconv2x_depthwise(apyr.a16, up.score2));
  expect(a8, pyr.s8, "1/8 alignment map");
  apyr.a8 = a8;
  Tensor up32 = deconv2x_depthwise(
      deconv2x_depthwise(deconv2x_depthwise(apyr.a32, up.score8), up.score8), up.score8);
  Tensor up16 = deconv2x_depthwise(deconv2x_depthwise(apyr.a16, up.score4), up.score4);
  Tensor a4 = add(add(up32, up16), deconv2x_depthwise(apyr.a8, up.score2));
  expect(a4, pyr.s4, "1/4 alignment map");
  apyr.a4 = a4;
  return apyr;
}

// Nearest-neighbour resize of an integer label map (categorical values, no
// interpolation); destination pixels sample source cell centers.
inline std::vector<int> resize_labels_nearest(const std::vector<int>& labels, int in_h, int in_w,
                                              int out_h, int out_w) {
  check(static_cast<int>(labels.size()) == in_h * in_w, "resize_labels: size mismatch");
  std::vector<int> out(static_cast<size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    int sy = ((2 * y + 1) * in_h) / (2 * out_h);
    for (int x = 0; x < out_w; ++x) {
      int sx = ((2 * x + 1) * in_w) / (2 * out_w);
      out[static_cast<size_t>(y) * out_w + x] = labels[static_cast<size_t>(sy) * in_w + sx];
    }
  }
  return out;
}

// Mean cross-entropy of A/temp over non-ignored pixels; labels must already
// be at A's spatial resolution.
inline Tensor alignment_loss(const Tensor& A, const std::vector<int>& labels, Real temp,
                             int ignore_label) {
  check(A.ndim() == 3, "alignment_loss: [H,W,K] map expected");
  check(temp > 0.0, "alignment_loss: temperature must be positive");
  int h = A.dim(0), w = A.dim(1), k = A.dim(2);
  check(static_cast<int>(labels.size()) == h * w,
        "alignment_loss: label count " + std::to_string(labels.size()) + " != " +
            std::to_string(h * w));
  Tensor logits = scale(reshape(A, {h * w, k}), 1.0 / temp);
  return cross_entropy_rows(logits, labels, ignore_label);
}

// Per-stride channel concat [feature | alignment], width C+K.
struct DecoratedPyramid {
  Tensor s4, s8, s16, s32;  // [H/s, W/s, C+K]
};

inline DecoratedPyramid concat_for_decoder(const FeaturePyramid& pyr,
                                           const AlignmentPyramid& apyr) {
  auto cat = [](const Tensor& f, const Tensor& a, const std::string& what) {
    check(f.dim(0) == a.dim(0) && f.dim(1) == a.dim(1),
          "concat_for_decoder: spatial mismatch at " + what);
    return concat_last(f, a);
  };
  DecoratedPyramid d;
  d.s32 = cat(pyr.s32, apyr.a32, "stride 32");
  d.s16 = cat(pyr.s16, apyr.a16, "stride 16");
  d.s8 = cat(pyr.s8, apyr.a8, "stride 8");
  d.s4 = cat(pyr.s4, apyr.a4, "stride 4");
  return d;
}

}  // namespace icpc
