#pragma once

// Plot emission: a validation-mIoU convergence curve from the metrics log,
// and a 2-D scatter of projected pixel embeddings (colored by class) with the
// K class text embeddings overlaid. Both are written as self-contained SVG.
// The projection is PCA by default (deterministic power iteration), with a
// stochastic-neighbor option.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/checkpoint.hpp"
#include "icpc/config.hpp"
#include "icpc/data.hpp"
#include "icpc/model.hpp"
#include "icpc/rng.hpp"
#include "icpc/train.hpp"
#include "json.hpp"

namespace icpc {

inline std::vector<StepRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("missing metrics log: " + path);
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    StepRecord r;
    r.step = j.at("step").get<int64_t>();
    r.l_seg = j.at("l_seg").get<double>();
    r.l_align = j.at("l_align").get<double>();
    r.l_contrast = j.at("l_contrast").get<double>();
    r.total = j.at("total").get<double>();
    r.n_easy = j.at("n_easy").get<int>();
    r.n_hard = j.at("n_hard").get<int>();
    if (j.contains("val_miou")) r.val_miou = j.at("val_miou").get<double>();
    out.push_back(r);
  }
  return out;
}

namespace detail {

inline std::string color_hex(int cls, int num_classes) {
  Real rgb[3];
  class_color(cls, num_classes, rgb);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(rgb[0] * 255.0 + 0.5),
                static_cast<int>(rgb[1] * 255.0 + 0.5), static_cast<int>(rgb[2] * 255.0 + 0.5));
  return buf;
}

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// Top-2 principal directions of the (centered) point cloud via deflated power
// iteration. rows: n x d, row-major. Returns n x 2 coordinates.
inline std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows) {
  size_t n = rows.size();
  check(n >= 1, "pca: empty point set");
  size_t d = rows[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) x[i][j] = rows[i][j] - mean[j];

  std::vector<double> cov(d * d, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t a = 0; a < d; ++a) {
      double xa = x[i][a];
      if (xa == 0.0) continue;
      for (size_t b = 0; b < d; ++b) cov[a * d + b] += xa * x[i][b];
    }

  auto power_iter = [&](const std::vector<double>& deflate, double lam1) {
    std::vector<double> v(d);
    for (size_t j = 0; j < d; ++j) v[j] = 1.0 + 0.01 * static_cast<double>(j % 7);
    double lam = 0.0;
    for (int it = 0; it < 500; ++it) {
      std::vector<double> next(d, 0.0);
      for (size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
        next[a] = s;
      }
      if (!deflate.empty()) {
        double proj = 0.0;
        for (size_t j = 0; j < d; ++j) proj += deflate[j] * v[j];
        for (size_t j = 0; j < d; ++j) next[j] -= lam1 * proj * deflate[j];
      }
      double norm = 0.0;
      for (double t : next) norm += t * t;
      norm = std::sqrt(norm);
      if (norm < 1e-30) return std::make_pair(v, 0.0);
      for (size_t j = 0; j < d; ++j) next[j] /= norm;
      lam = norm;
      v = std::move(next);
    }
    return std::make_pair(v, lam);
  };
  auto [v1, lam1] = power_iter({}, 0.0);
  auto [v2, lam2] = power_iter(v1, lam1);
  (void)lam2;

  std::vector<std::array<double, 2>> out(n);
  for (size_t i = 0; i < n; ++i) {
    double px = 0.0, py = 0.0;
    for (size_t j = 0; j < d; ++j) {
      px += x[i][j] * v1[j];
      py += x[i][j] * v2[j];
    }
    out[i] = {px, py};
  }
  return out;
}

// Small deterministic stochastic-neighbor embedding: Gaussian input
// affinities at a fixed perplexity, Student-t output kernel, momentum descent
// from a scaled PCA start.
inline std::vector<std::array<double, 2>> sne_2d(const std::vector<std::vector<double>>& rows,
                                                 uint64_t seed) {
  size_t n = rows.size();
  if (n < 4) return pca_2d(rows);
  size_t d = rows[0].size();
  std::vector<double> d2(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < d; ++k) {
        double diff = rows[i][k] - rows[j][k];
        s += diff * diff;
      }
      d2[i * n + j] = d2[j * n + i] = s;
    }

  double perplexity = std::min(15.0, static_cast<double>(n - 1) / 3.0);
  double target = std::log(perplexity);
  std::vector<double> p(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double lo = 1e-10, hi = 1e10, beta = 1.0;
    for (int it = 0; it < 50; ++it) {
      double sum = 0.0, wdist = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double w = std::exp(-d2[i * n + j] * beta);
        sum += w;
        wdist += w * d2[i * n + j];
      }
      double entropy = sum > 0.0 ? std::log(sum) + beta * wdist / sum : 0.0;
      if (entropy > target)
        lo = beta, beta = std::min(beta * 2.0, hi);
      else
        hi = beta, beta = (lo + hi) / 2.0;
    }
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j)
      if (j != i) sum += std::exp(-d2[i * n + j] * beta);
    for (size_t j = 0; j < n; ++j)
      if (j != i && sum > 0.0) p[i * n + j] = std::exp(-d2[i * n + j] * beta) / sum;
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double sym = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
      p[i * n + j] = p[j * n + i] = sym;
    }

  std::vector<std::array<double, 2>> y = pca_2d(rows);
  double span = 1e-12;
  for (const auto& pt : y) span = std::max({span, std::fabs(pt[0]), std::fabs(pt[1])});
  Rng rng(Rng::mix(seed, 0x736e65ull));
  for (auto& pt : y) {
    pt[0] = pt[0] / span * 0.01 + rng.normal() * 1e-4;
    pt[1] = pt[1] / span * 0.01 + rng.normal() * 1e-4;
  }

  std::vector<std::array<double, 2>> vel(n, {0.0, 0.0});
  for (int it = 0; it < 300; ++it) {
    std::vector<double> q(n * n, 0.0);
    double qsum = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        double w = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = w;
        qsum += 2.0 * w;
      }
    double momentum = it < 100 ? 0.5 : 0.8;
    for (size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double w = q[i * n + j];
        double coeff = 4.0 * (p[i * n + j] - w / qsum) * w;
        gx += coeff * (y[i][0] - y[j][0]);
        gy += coeff * (y[i][1] - y[j][1]);
      }
      vel[i][0] = momentum * vel[i][0] - 100.0 * gx;
      vel[i][1] = momentum * vel[i][1] - 100.0 * gy;
      y[i][0] += vel[i][0];
      y[i][1] += vel[i][1];
    }
  }
  return y;
}

}  // namespace detail

// Validation-mIoU-vs-step curve read from a run's metrics log.
inline std::string convergence_plot(const std::string& run_dir) {
  auto records = read_metrics(run_dir + "/metrics.ndjson");
  std::vector<std::pair<int64_t, double>> pts;
  for (const auto& r : records)
    if (r.val_miou >= 0.0) pts.push_back({r.step, r.val_miou});
  if (pts.empty())
    throw config_error("no validation points in " + run_dir +
                       "/metrics.ndjson (train with a validation split and a positive "
                       "train.eval_interval)");

  const double iw = 640, ih = 420, ml = 60, mr = 20, mt = 30, mb = 45;
  double x0 = 0.0, x1 = static_cast<double>(pts.back().first);
  if (x1 <= x0) x1 = x0 + 1.0;
  auto sx = [&](double s) { return ml + (s - x0) / (x1 - x0) * (iw - ml - mr); };
  auto sy = [&](double m) { return ih - mb - m * (ih - mt - mb); };  // mIoU in [0,1]

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << iw << "\" height=\"" << ih
      << "\" viewBox=\"0 0 " << iw << " " << ih << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << iw / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\" "
         "font-family=\"sans-serif\">validation mIoU vs step</text>\n";
  for (int i = 0; i <= 5; ++i) {
    double m = i / 5.0;
    svg << "<line x1=\"" << ml << "\" y1=\"" << sy(m) << "\" x2=\"" << iw - mr << "\" y2=\""
        << sy(m) << "\" stroke=\"#dddddd\"/>\n"
        << "<text x=\"" << ml - 8 << "\" y=\"" << sy(m) + 4
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << detail::fmt(m).substr(0, 3) << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    double s = x0 + (x1 - x0) * i / 4.0;
    svg << "<text x=\"" << sx(s) << "\" y=\"" << ih - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
        << static_cast<long long>(s) << "</text>\n";
  }
  svg << "<line x1=\"" << ml << "\" y1=\"" << sy(0) << "\" x2=\"" << iw - mr << "\" y2=\""
      << sy(0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << sy(0) << "\" x2=\"" << ml << "\" y2=\"" << sy(1)
      << "\" stroke=\"black\"/>\n<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" "
         "points=\"";
  for (const auto& [s, m] : pts) svg << detail::fmt(sx(static_cast<double>(s))) << ","
                                     << detail::fmt(sy(m)) << " ";
  svg << "\"/>\n";
  for (const auto& [s, m] : pts)
    svg << "<circle cx=\"" << detail::fmt(sx(static_cast<double>(s))) << "\" cy=\""
        << detail::fmt(sy(m)) << "\" r=\"3\" fill=\"#1f6fb2\"/>\n";
  svg << "<text x=\"" << iw / 2 << "\" y=\"" << ih - 10
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">step</text>\n"
      << "</svg>\n";

  std::string path = run_dir + "/convergence.svg";
  std::ofstream out(path, std::ios::trunc);
  check(static_cast<bool>(out), "plot: cannot write " + path);
  out << svg.str();
  return path;
}

// 2-D scatter of projected pixel embeddings colored by class, with exactly K
// class-text embedding markers overlaid. Embeddings come from the run's final
// checkpoint; the dataset is regenerated from the checkpoint's config.
inline std::string embeddings_plot(const std::string& run_dir, const std::string& projection) {
  if (projection != "pca" && projection != "sne")
    throw config_error("plot.projection must be pca or sne, got: " + projection);
  const std::string ckpt_path = run_dir + "/checkpoint.ckpt";
  if (!std::filesystem::exists(ckpt_path))
    throw config_error("missing checkpoint: " + ckpt_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  IcpcModel model = restore_model(ck);
  Dataset data = generate_dataset(dataset_spec_from(ck.config));
  uint64_t seed = static_cast<uint64_t>(ck.config.integer("run.seed"));
  bool normalize = ck.config.boolean("normalize_embeddings");
  int k = model.config().classes;

  std::vector<std::vector<double>> points;
  std::vector<int> point_cls;
  Tensor text;  // [K, C] from the first evaluated image
  std::vector<const Sample*> pool;
  for (const Sample& s : data.val) pool.push_back(&s);
  for (const Sample& s : data.train) pool.push_back(&s);
  check(!pool.empty(), "plot: dataset is empty");
  for (const Sample* s : pool) {
    ModelOutput out = model.forward(image_tensor(*s));
    if (!text.defined()) text = out.text;
    Tensor feat = out.pyr.s32;
    int h = feat.dim(0), w = feat.dim(1), c = feat.dim(2);
    Tensor flat = reshape(feat, {h * w, c});
    if (normalize) flat = l2_normalize_rows(flat);
    std::vector<int> lab32 = resize_labels_nearest(s->labels, s->h, s->w, h, w);
    const Real* v = flat.val().data();
    for (int p = 0; p < h * w; ++p) {
      if (lab32[static_cast<size_t>(p)] == kIgnoreLabel) continue;
      points.emplace_back(v + static_cast<size_t>(p) * c, v + static_cast<size_t>(p + 1) * c);
      point_cls.push_back(lab32[static_cast<size_t>(p)]);
    }
  }
  check(!points.empty(), "plot: no labeled pixels to embed");

  const size_t max_points = 600;
  if (points.size() > max_points) {
    Rng rng(Rng::mix(seed, 0x706c6f74ull));
    std::vector<int> keep = rng.sample_indices(static_cast<int>(points.size()),
                                               static_cast<int>(max_points));
    std::vector<std::vector<double>> np;
    std::vector<int> nc;
    for (int i : keep) {
      np.push_back(std::move(points[static_cast<size_t>(i)]));
      nc.push_back(point_cls[static_cast<size_t>(i)]);
    }
    points = std::move(np);
    point_cls = std::move(nc);
  }

  Tensor tn = normalize ? l2_normalize_rows(text) : text;
  const Real* tv = tn.val().data();
  int c = tn.dim(1);
  std::vector<std::vector<double>> all = points;
  for (int i = 0; i < k; ++i)
    all.emplace_back(tv + static_cast<size_t>(i) * c, tv + static_cast<size_t>(i + 1) * c);

  std::vector<std::array<double, 2>> xy =
      projection == "pca" ? detail::pca_2d(all) : detail::sne_2d(all, seed);

  double lox = xy[0][0], hix = xy[0][0], loy = xy[0][1], hiy = xy[0][1];
  for (const auto& ppt : xy) {
    lox = std::min(lox, ppt[0]);
    hix = std::max(hix, ppt[0]);
    loy = std::min(loy, ppt[1]);
    hiy = std::max(hiy, ppt[1]);
  }
  if (hix - lox < 1e-12) hix = lox + 1.0;
  if (hiy - loy < 1e-12) hiy = loy + 1.0;
  const double iw = 640, ih = 480, margin = 40;
  auto sx = [&](double x) { return margin + (x - lox) / (hix - lox) * (iw - 2 * margin); };
  auto sy = [&](double yv) { return ih - margin - (yv - loy) / (hiy - loy) * (ih - 2 * margin); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << iw << "\" height=\"" << ih
      << "\" viewBox=\"0 0 " << iw << " " << ih << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << iw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" "
         "font-family=\"sans-serif\">pixel and class-text embeddings (" << projection
      << ")</text>\n";
  for (size_t i = 0; i < points.size(); ++i)
    svg << "<circle cx=\"" << detail::fmt(sx(xy[i][0])) << "\" cy=\""
        << detail::fmt(sy(xy[i][1])) << "\" r=\"2.5\" fill=\""
        << detail::color_hex(point_cls[i], k) << "\" fill-opacity=\"0.6\"/>\n";
  for (int i = 0; i < k; ++i) {
    const auto& pt = xy[points.size() + static_cast<size_t>(i)];
    svg << "<rect class=\"text-emb\" x=\"" << detail::fmt(sx(pt[0]) - 5) << "\" y=\""
        << detail::fmt(sy(pt[1]) - 5)
        << "\" width=\"10\" height=\"10\" transform=\"rotate(45 " << detail::fmt(sx(pt[0]))
        << " " << detail::fmt(sy(pt[1])) << ")\" fill=\"" << detail::color_hex(i, k)
        << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n"
        << "<text x=\"" << detail::fmt(sx(pt[0]) + 8) << "\" y=\"" << detail::fmt(sy(pt[1]) - 8)
        << "\" font-size=\"11\" font-family=\"sans-serif\">class " << i << "</text>\n";
  }
  svg << "</svg>\n";

  std::string path = run_dir + "/embeddings.svg";
  std::ofstream out(path, std::ios::trunc);
  check(static_cast<bool>(out), "plot: cannot write " + path);
  out << svg.str();
  return path;
}

}  // namespace icpc
