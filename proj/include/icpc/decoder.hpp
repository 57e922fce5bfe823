#pragma once

// Lightweight fusion head standing in for a full FPN decoder: per-level 1x1
// projections to a common width, nearest upsampling of every level to the
// stride-4 grid, summation, a nonlinearity, a 1x1 classification convolution,
// and bilinear interpolation of the stride-4 logits to full resolution.

#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/params.hpp"
#include "icpc/rng.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

class Decoder {
 public:
  // in_widths: channel width of the incoming maps at strides {4, 8, 16, 32}.
  Decoder(ParamStore& ps, const std::string& group, const std::vector<int>& in_widths,
          int fuse_width, int num_classes, Rng& rng)
      : width_(fuse_width), k_(num_classes) {
    check(in_widths.size() == 4, "decoder: four pyramid levels expected");
    for (int l = 0; l < 4; ++l) {
      int ci = in_widths[static_cast<size_t>(l)];
      Real std = 1.0 / std::sqrt(static_cast<Real>(ci));
      lat_w_.push_back(ps.add_normal(group, "lat" + std::to_string(l) + ".w", {1, 1, ci, width_},
                                     rng, std));
      lat_b_.push_back(ps.add_full(group, "lat" + std::to_string(l) + ".b", {width_}, 0.0));
    }
    cls_w_ = ps.add_normal(group, "cls.w", {1, 1, width_, k_}, rng,
                           1.0 / std::sqrt(static_cast<Real>(width_)));
    cls_b_ = ps.add_full(group, "cls.b", {k_}, 0.0);
  }

  // levels: maps at strides {4, 8, 16, 32}. Returns full-resolution logits
  // [4*H4, 4*W4, K].
  Tensor logits(const std::vector<Tensor>& levels) const {
    check(levels.size() == 4, "decoder: four pyramid levels expected");
    Tensor fused;
    for (int l = 0; l < 4; ++l) {
      Tensor lat = conv2d(levels[static_cast<size_t>(l)], lat_w_[static_cast<size_t>(l)],
                          lat_b_[static_cast<size_t>(l)], 1, 0);
      if (l > 0) lat = upsample_nearest(lat, 1 << l);
      fused = l == 0 ? lat : add(fused, lat);
    }
    Tensor head = conv2d(tanh_t(fused), cls_w_, cls_b_, 1, 0);  // [H/4, W/4, K]
    return upsample_bilinear(head, 4);
  }

  int num_classes() const { return k_; }

 private:
  int width_, k_;
  std::vector<Tensor> lat_w_, lat_b_;
  Tensor cls_w_, cls_b_;
};

}  // namespace icpc
