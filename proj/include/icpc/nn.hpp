#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

// y = x W + b for row-major x [m, in], W [in, out], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add_rowvec(y, b);
  return y;
}

struct AttentionParams {
  Tensor wq, bq;
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;
  int heads = 1;
};

// Multi-head scaled dot-product attention: queries [m, d], keys/values [n, d].
// d must be divisible by the head count; scores are scaled by 1/sqrt(d/heads).
inline Tensor attention(const Tensor& queries, const Tensor& keys_values,
                        const AttentionParams& p) {
  check(queries.ndim() == 2 && keys_values.ndim() == 2, "attention: 2-D inputs expected");
  check(keys_values.dim(0) >= 1, "attention: empty key/value set");
  int d = queries.dim(1);
  check(keys_values.dim(1) == d, "attention: query/key width mismatch");
  check(p.heads >= 1 && d % p.heads == 0,
        "attention: width " + std::to_string(d) + " not divisible by " +
            std::to_string(p.heads) + " heads");
  int dh = d / p.heads;

  Tensor q = linear(queries, p.wq, p.bq);
  Tensor k = linear(keys_values, p.wk, p.bk);
  Tensor v = linear(keys_values, p.wv, p.bv);

  Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    Tensor qh = slice_last(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_last(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_last(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
    Tensor attn = softmax_rows(scores);
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor merged = head_outs[0];
  for (size_t h = 1; h < head_outs.size(); ++h) merged = concat_last(merged, head_outs[h]);
  return linear(merged, p.wo, p.bo);
}

}  // namespace icpc
