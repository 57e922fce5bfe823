#pragma once

// Synthetic segmentation data: colored geometric shapes (rectangles and
// ellipses) on a background, one color family per class, with per-image
// brightness/tint jitter so the global image statistics genuinely vary from
// image to image, pixel noise, and a thin ignore band along label boundaries
// (contour pixels are ambiguous at any finite decoder stride, as in
// VOC-style void contours).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/rng.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

constexpr int kIgnoreLabel = 255;

struct SyntheticDatasetSpec {
  int classes = 8;        // class 0 is the background family
  int train_images = 10;
  int val_images = 8;
  int image_size = 64;
  int shapes_min = 2;
  int shapes_max = 3;
  double noise = 0.05;    // per-pixel channel noise amplitude
  double jitter = 0.25;   // per-image brightness range and half the tint range
  int boundary_band = 2;  // ignore-label band radius around label transitions
  uint64_t seed = 1;
};

struct Sample {
  std::vector<Real> image;  // [H, W, 3], values roughly in [0, 1]
  std::vector<int> labels;  // [H, W], {0..K-1} plus the ignore sentinel
  int h = 0, w = 0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

// Fixed palette: distinct hues per class, background dark gray.
inline void class_color(int cls, int num_classes, Real rgb[3]) {
  if (cls == 0) {
    rgb[0] = rgb[1] = rgb[2] = 0.25;
    return;
  }
  double hue = 6.0 * (cls - 1) / std::max(1, num_classes - 1);
  int sextant = static_cast<int>(hue) % 6;
  double f = hue - std::floor(hue);
  double v = 0.9, p = 0.15, q = v - (v - p) * f, t = p + (v - p) * f;
  switch (sextant) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

namespace detail {

inline Sample generate_sample(const SyntheticDatasetSpec& spec, uint64_t stream, int index,
                              int* shape_class_cursor) {
  Rng rng(Rng::mix(stream, static_cast<uint64_t>(index)));
  int n = spec.image_size;
  Sample s;
  s.h = s.w = n;
  s.image.assign(static_cast<size_t>(n) * n * 3, 0.0);
  s.labels.assign(static_cast<size_t>(n) * n, 0);

  Real bg[3];
  class_color(0, spec.classes, bg);
  for (int i = 0; i < n * n; ++i)
    for (int c = 0; c < 3; ++c) s.image[static_cast<size_t>(i) * 3 + c] = bg[c];

  int n_shapes = spec.shapes_min + rng.uniform_int(spec.shapes_max - spec.shapes_min + 1);
  for (int j = 0; j < n_shapes; ++j) {
    // round-robin class assignment guarantees split-wide coverage
    int cls = 1 + (*shape_class_cursor % (spec.classes - 1));
    ++*shape_class_cursor;
    Real col[3];
    class_color(cls, spec.classes, col);
    int ext_min = std::max(4, n / 6), ext_max = std::max(ext_min + 1, n / 3);
    int half_h = ext_min + rng.uniform_int(ext_max - ext_min);
    int half_w = ext_min + rng.uniform_int(ext_max - ext_min);
    int cy = half_h + rng.uniform_int(std::max(1, n - 2 * half_h));
    int cx = half_w + rng.uniform_int(std::max(1, n - 2 * half_w));
    bool ellipse = rng.uniform() < 0.5;
    for (int y = cy - half_h; y <= cy + half_h; ++y) {
      if (y < 0 || y >= n) continue;
      for (int x = cx - half_w; x <= cx + half_w; ++x) {
        if (x < 0 || x >= n) continue;
        if (ellipse) {
          double dy = static_cast<double>(y - cy) / half_h;
          double dx = static_cast<double>(x - cx) / half_w;
          if (dy * dy + dx * dx > 1.0) continue;
        }
        size_t p = static_cast<size_t>(y) * n + x;
        s.labels[p] = cls;
        for (int c = 0; c < 3; ++c) s.image[p * 3 + c] = col[c];
      }
    }
  }

  // per-image photometric jitter: the instance-conditioning signal
  double brightness = 1.0 + rng.uniform(-spec.jitter, spec.jitter);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-spec.jitter / 2.0, spec.jitter / 2.0);
  for (int i = 0; i < n * n; ++i)
    for (int c = 0; c < 3; ++c) {
      double v = s.image[static_cast<size_t>(i) * 3 + c] * brightness + tint[c] +
                 rng.uniform(-spec.noise, spec.noise);
      s.image[static_cast<size_t>(i) * 3 + c] = std::min(1.5, std::max(-0.5, v));
    }

  // void band along label transitions
  if (spec.boundary_band > 0) {
    int b = spec.boundary_band;
    std::vector<int> out = s.labels;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        int lab = s.labels[static_cast<size_t>(y) * n + x];
        bool boundary = false;
        for (int dy = -b; dy <= b && !boundary; ++dy)
          for (int dx = -b; dx <= b && !boundary; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
            if (s.labels[static_cast<size_t>(yy) * n + xx] != lab) boundary = true;
          }
        if (boundary) out[static_cast<size_t>(y) * n + x] = kIgnoreLabel;
      }
    s.labels = std::move(out);
  }
  return s;
}

}  // namespace detail

inline Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
  check_config(spec.classes >= 2 && spec.classes < kIgnoreLabel,
               "dataset: classes must be in [2, 255)");
  check_config(spec.image_size >= 32 && spec.image_size % 32 == 0,
               "dataset: image_size must be a positive multiple of 32");
  check_config(spec.train_images >= 1 && spec.val_images >= 0,
               "dataset: split sizes must be positive");
  check_config(spec.shapes_min >= 1 && spec.shapes_min <= spec.shapes_max,
               "dataset: need 1 <= shapes_min <= shapes_max");
  check_config(spec.shapes_max <= spec.image_size * spec.image_size / 64,
               "dataset: more shapes than the image can hold");
  check_config(spec.train_images * spec.shapes_min >= spec.classes - 1,
               "dataset: too few shapes to cover every class in the train split");
  check_config(spec.noise >= 0.0 && spec.jitter >= 0.0 && spec.boundary_band >= 0,
               "dataset: noise, jitter, and boundary_band must be nonnegative");

  Dataset ds;
  int cursor = 0;
  for (int i = 0; i < spec.train_images; ++i)
    ds.train.push_back(detail::generate_sample(spec, Rng::mix(spec.seed, 0x7261696eull), i,
                                               &cursor));
  int vcursor = 0;
  for (int i = 0; i < spec.val_images; ++i)
    ds.val.push_back(detail::generate_sample(spec, Rng::mix(spec.seed, 0x76616cull), i,
                                             &vcursor));

  std::vector<bool> seen(static_cast<size_t>(spec.classes), false);
  for (const Sample& s : ds.train)
    for (int l : s.labels)
      if (l != kIgnoreLabel) seen[static_cast<size_t>(l)] = true;
  for (int k = 0; k < spec.classes; ++k)
    check_config(seen[static_cast<size_t>(k)],
                 "dataset: class " + std::to_string(k) + " never appears in the train split");
  return ds;
}

inline Tensor image_tensor(const Sample& s) {
  return Tensor::leaf({s.h, s.w, 3}, s.image);
}

}  // namespace icpc
