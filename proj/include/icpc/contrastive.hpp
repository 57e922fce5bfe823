#pragma once

// Align-guided contrastive learning: harvest per-pixel alignment points from
// a mini-batch, split them into easy/hard by argmax-vs-label, schedule the
// easy/hard mix linearly over training, sample per-class positive/negative
// sets, and evaluate the InfoNCE objective.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/rng.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

// One pixel of one image's alignment map, viewed as a K-dim score vector.
struct AlignmentPoint {
  int image = 0;  // index into the mini-batch
  int pixel = 0;  // row index into the image's flattened [HW, K] map
  int label = 0;
  bool easy = false;
};

enum class SamplingStrategy { random, easy_to_hard };

inline SamplingStrategy parse_sampling_strategy(const std::string& s) {
  if (s == "random") return SamplingStrategy::random;
  if (s == "easy-to-hard") return SamplingStrategy::easy_to_hard;
  throw config_error("unknown sampling strategy '" + s + "' (expected random|easy-to-hard)");
}

struct ContrastiveConfig {
  Real temperature = 0.1;
  int positives_cap = 5;
  int negatives_cap = 64;
  SamplingStrategy strategy = SamplingStrategy::easy_to_hard;
  bool cosine_points = false;  // raw dot products by default, as the loss is written
};

// Every non-ignored pixel of the batch becomes exactly one point; easy iff
// the map's argmax at that pixel equals the label (first index wins ties).
inline std::pair<std::vector<AlignmentPoint>, std::vector<AlignmentPoint>> partition_easy_hard(
    const std::vector<Tensor>& maps, const std::vector<std::vector<int>>& labels,
    int ignore_label) {
  check(maps.size() == labels.size(), "partition_easy_hard: batch size mismatch");
  std::vector<AlignmentPoint> easy, hard;
  for (size_t i = 0; i < maps.size(); ++i) {
    const Tensor& a = maps[i];
    check(a.ndim() == 3, "partition_easy_hard: [H,W,K] maps expected");
    int hw = a.dim(0) * a.dim(1), k = a.dim(2);
    check(static_cast<int>(labels[i].size()) == hw,
          "partition_easy_hard: label count mismatch for image " + std::to_string(i));
    const Real* v = a.val().data();
    for (int p = 0; p < hw; ++p) {
      int lab = labels[i][static_cast<size_t>(p)];
      if (lab == ignore_label) continue;
      check(0 <= lab && lab < k, "partition_easy_hard: label out of range");
      const Real* r = v + static_cast<size_t>(p) * k;
      int arg = 0;
      for (int j = 1; j < k; ++j)
        if (r[j] > r[arg]) arg = j;
      AlignmentPoint pt{static_cast<int>(i), p, lab, arg == lab};
      (pt.easy ? easy : hard).push_back(pt);
    }
  }
  return {easy, hard};
}

struct ScheduleState {
  int64_t t = 0;
  int64_t total_steps = 1;
  int cap = 5;
};

// Linear easy-to-hard schedule: the hard share grows as floor((t/T)*cap).
inline std::pair<int, int> schedule_counts(const ScheduleState& s) {
  check(s.total_steps > 0, "schedule_counts: total_steps must be positive");
  check(s.cap > 0, "schedule_counts: cap must be positive");
  check(0 <= s.t && s.t <= s.total_steps, "schedule_counts: step outside [0, total]");
  int n_hard = static_cast<int>((s.t * s.cap) / s.total_steps);
  return {s.cap - n_hard, n_hard};
}

// Per anchor class: up to cap positives and up to negatives_cap other-class
// points, drawn deterministically from the batch's point pools.
struct SampleSet {
  int cls = 0;
  std::vector<AlignmentPoint> positives;
  std::vector<AlignmentPoint> negatives;
};

inline std::vector<SampleSet> sample_points(const std::vector<AlignmentPoint>& easy,
                                            const std::vector<AlignmentPoint>& hard,
                                            const ScheduleState& sched,
                                            const ContrastiveConfig& cfg, uint64_t seed) {
  auto [n_easy, n_hard] = schedule_counts(
      ScheduleState{sched.t, sched.total_steps, cfg.positives_cap});
  std::map<int, std::vector<AlignmentPoint>> easy_by_cls, hard_by_cls, all_by_cls;
  for (const auto& p : easy) {
    easy_by_cls[p.label].push_back(p);
    all_by_cls[p.label].push_back(p);
  }
  for (const auto& p : hard) {
    hard_by_cls[p.label].push_back(p);
    all_by_cls[p.label].push_back(p);
  }
  // Deterministic pool order regardless of how callers built the sets.
  auto by_origin = [](const AlignmentPoint& a, const AlignmentPoint& b) {
    return a.image != b.image ? a.image < b.image : a.pixel < b.pixel;
  };
  for (auto& [c, v] : all_by_cls) std::sort(v.begin(), v.end(), by_origin);
  for (auto& [c, v] : easy_by_cls) std::sort(v.begin(), v.end(), by_origin);
  for (auto& [c, v] : hard_by_cls) std::sort(v.begin(), v.end(), by_origin);

  Rng rng(seed);
  std::vector<SampleSet> out;
  for (const auto& [cls, pool_all] : all_by_cls) {
    SampleSet set;
    set.cls = cls;
    auto draw = [&rng](const std::vector<AlignmentPoint>& pool, int n,
                       std::vector<AlignmentPoint>& dst) {
      for (int idx : rng.sample_indices(static_cast<int>(pool.size()), n))
        dst.push_back(pool[static_cast<size_t>(idx)]);
    };
    if (cfg.strategy == SamplingStrategy::random) {
      draw(pool_all, std::min<int>(cfg.positives_cap, static_cast<int>(pool_all.size())),
           set.positives);
    } else {
      const auto& pe = easy_by_cls[cls];
      const auto& ph = hard_by_cls[cls];
      int te = std::min<int>(n_easy, static_cast<int>(pe.size()));
      int th = std::min<int>(n_hard, static_cast<int>(ph.size()));
      int deficit = cfg.positives_cap - te - th;
      if (deficit > 0) {  // backfill a short pool from the other one
        int add_e = std::min<int>(deficit, static_cast<int>(pe.size()) - te);
        te += add_e;
        deficit -= add_e;
        th += std::min<int>(deficit, static_cast<int>(ph.size()) - th);
      }
      draw(pe, te, set.positives);
      draw(ph, th, set.positives);
    }
    std::vector<AlignmentPoint> others;
    for (const auto& [c2, pool2] : all_by_cls) {
      if (c2 == cls) continue;
      others.insert(others.end(), pool2.begin(), pool2.end());
    }
    draw(others, std::min<int>(cfg.negatives_cap, static_cast<int>(others.size())),
         set.negatives);
    out.push_back(std::move(set));
  }
  return out;
}

struct ContrastiveResult {
  Tensor loss;             // scalar
  bool empty = false;      // no anchors existed; loss is an exact constant 0
  int n_anchors = 0;
};

// InfoNCE over sampled points. Per anchor p, mean over its positives q+ of
//   -log( exp(p.q+/tau) / (exp(p.q+/tau) + sum_neg exp(p.q-/tau)) )
// and the final loss is the mean over anchors. Every positive in a set acts
// as an anchor against the set's remaining positives. `maps` are the same
// [H,W,K] alignment tensors the points were harvested from.
inline ContrastiveResult contrastive_loss(const std::vector<SampleSet>& samples,
                                          const std::vector<Tensor>& maps,
                                          const ContrastiveConfig& cfg) {
  check(cfg.temperature > 0.0, "contrastive_loss: temperature must be positive");
  std::vector<Tensor> flat;
  flat.reserve(maps.size());
  for (const Tensor& m : maps) {
    check(m.ndim() == 3, "contrastive_loss: [H,W,K] maps expected");
    flat.push_back(reshape(m, {m.dim(0) * m.dim(1), m.dim(2)}));
  }
  auto point_row = [&flat](const AlignmentPoint& p) {
    check(p.image >= 0 && p.image < static_cast<int>(flat.size()),
          "contrastive_loss: point references missing image");
    return gather_rows(flat[static_cast<size_t>(p.image)], {p.pixel});  // [1, K]
  };

  Real inv_tau = 1.0 / cfg.temperature;
  std::vector<Tensor> anchor_terms;
  for (const SampleSet& set : samples) {
    int np = static_cast<int>(set.positives.size());
    if (np < 2) continue;  // no positive pair exists
    Tensor pos = point_row(set.positives[0]);
    for (int i = 1; i < np; ++i) pos = concat_rows(pos, point_row(set.positives[static_cast<size_t>(i)]));
    if (cfg.cosine_points) pos = l2_normalize_rows(pos);
    int nn = static_cast<int>(set.negatives.size());
    Tensor neg;
    if (nn > 0) {
      neg = point_row(set.negatives[0]);
      for (int i = 1; i < nn; ++i) neg = concat_rows(neg, point_row(set.negatives[static_cast<size_t>(i)]));
      if (cfg.cosine_points) neg = l2_normalize_rows(neg);
    }
    Tensor spp = scale(matmul(pos, transpose2d(pos)), inv_tau);  // [np, np]
    Tensor spn;                                                  // [np, nn]
    if (nn > 0) spn = scale(matmul(pos, transpose2d(neg)), inv_tau);
    for (int a = 0; a < np; ++a) {
      Tensor row_pp = reshape(gather_rows(spp, {a}), {np});
      std::vector<Tensor> pair_terms;
      for (int b = 0; b < np; ++b) {
        if (b == a) continue;
        Tensor sp = reshape(slice_last(reshape(row_pp, {1, np}), b, b + 1), {});
        Tensor term;
        if (nn > 0) {
          Tensor row_pn = reshape(gather_rows(spn, {a}), {nn});
          Tensor all = concat_last(reshape(sp, {1}), row_pn);  // [1+nn]
          term = sub(logsumexp_all(all), sp);
        } else {
          term = Tensor::scalar(0.0);  // -log(1): empty negative sum
        }
        pair_terms.push_back(term);
      }
      Tensor anchor = pair_terms[0];
      for (size_t i = 1; i < pair_terms.size(); ++i) anchor = add(anchor, pair_terms[i]);
      anchor_terms.push_back(scale(anchor, 1.0 / static_cast<Real>(pair_terms.size())));
    }
  }
  ContrastiveResult res;
  res.n_anchors = static_cast<int>(anchor_terms.size());
  if (anchor_terms.empty()) {
    res.loss = Tensor::scalar(0.0);
    res.empty = true;
    return res;
  }
  Tensor total = anchor_terms[0];
  for (size_t i = 1; i < anchor_terms.size(); ++i) total = add(total, anchor_terms[i]);
  res.loss = scale(total, 1.0 / static_cast<Real>(anchor_terms.size()));
  return res;
}

}  // namespace icpc
