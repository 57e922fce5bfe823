#pragma once

// Training loop and evaluation: deterministic batching, the three-part loss,
// per-step NDJSON metrics, periodic/final checkpoints, divergence detection,
// and frozen-group hash verification.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/checkpoint.hpp"
#include "icpc/config.hpp"
#include "icpc/contrastive.hpp"
#include "icpc/data.hpp"
#include "icpc/metrics.hpp"
#include "icpc/model.hpp"
#include "icpc/optim.hpp"
#include "icpc/params.hpp"
#include "icpc/rng.hpp"
#include "json.hpp"

namespace icpc {

inline SyntheticDatasetSpec dataset_spec_from(const Config& cfg) {
  SyntheticDatasetSpec spec;
  spec.classes = static_cast<int>(cfg.integer("data.classes"));
  spec.train_images = static_cast<int>(cfg.integer("data.train_images"));
  spec.val_images = static_cast<int>(cfg.integer("data.val_images"));
  spec.image_size = static_cast<int>(cfg.integer("data.image_size"));
  spec.shapes_min = static_cast<int>(cfg.integer("data.shapes_min"));
  spec.shapes_max = static_cast<int>(cfg.integer("data.shapes_max"));
  spec.noise = cfg.real("data.noise");
  spec.jitter = cfg.real("data.jitter");
  spec.boundary_band = static_cast<int>(cfg.integer("data.boundary_band"));
  spec.seed = static_cast<uint64_t>(cfg.integer("data.seed"));
  return spec;
}

struct TrainSettings {
  int64_t total_steps = 2000;
  int batch_size = 8;
  Real base_lr = 0.003;
  Real weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adamw;
  int64_t eval_interval = 200;
  int64_t checkpoint_interval = 0;
  Real gamma = 0.5;
  ContrastiveConfig contrast;
  uint64_t seed = 7;

  static TrainSettings from(const Config& cfg) {
    TrainSettings ts;
    ts.total_steps = cfg.integer("train.total_steps");
    ts.batch_size = static_cast<int>(cfg.integer("train.batch_size"));
    ts.base_lr = cfg.real("train.base_lr");
    ts.weight_decay = cfg.real("train.weight_decay");
    ts.optimizer = parse_optimizer(cfg.str("train.optimizer"));
    ts.eval_interval = cfg.integer("train.eval_interval");
    ts.checkpoint_interval = cfg.integer("train.checkpoint_interval");
    ts.gamma = cfg.real("gamma");
    ts.contrast.temperature = cfg.real("contrast_temperature");
    ts.contrast.positives_cap = static_cast<int>(cfg.integer("positives_per_class"));
    ts.contrast.negatives_cap = static_cast<int>(cfg.integer("negatives_cap"));
    ts.contrast.strategy = parse_sampling_strategy(cfg.str("sampling_strategy"));
    ts.contrast.cosine_points = cfg.boolean("cosine_points");
    ts.seed = static_cast<uint64_t>(cfg.integer("run.seed"));
    return ts;
  }
};

struct EvalResult {
  double miou = 0.0;
  std::vector<double> iou;  // per class; -1 marks classes absent from GT
};

inline EvalResult evaluate_split(const IcpcModel& model, const std::vector<Sample>& split,
                                 PredictionSource source) {
  check(!split.empty(), "evaluate: empty split");
  ConfusionMatrix cm(model.config().classes);
  for (const Sample& s : split) {
    ModelOutput out = model.forward(image_tensor(s));
    cm.update(model.predict(out, source), s.labels);
  }
  EvalResult r;
  r.iou = cm.iou_per_class();
  r.miou = cm.miou();
  return r;
}

struct BatchLoss {
  Tensor total, seg, align, contrast;
  int n_easy = 0, n_hard = 0;  // scheduled per-class quota at this step
};

// Alignment loss pooled over every pixel of the batch at one scale. Coarse
// maps can land entirely inside the boundary-ignore band (a 32x32 image has a
// single stride-32 cell), so a scale with no supervised pixels contributes an
// exact zero instead of aborting.
inline Tensor pooled_align_loss(const std::vector<Tensor>& maps,
                                const std::vector<const Sample*>& batch, Real temp) {
  Tensor rows;
  std::vector<int> labels;
  for (size_t i = 0; i < maps.size(); ++i) {
    const Tensor& a = maps[i];
    int h = a.dim(0), w = a.dim(1), k = a.dim(2);
    std::vector<int> lab =
        resize_labels_nearest(batch[i]->labels, batch[i]->h, batch[i]->w, h, w);
    Tensor flat = reshape(a, {h * w, k});
    rows = rows.defined() ? concat_rows(rows, flat) : flat;
    labels.insert(labels.end(), lab.begin(), lab.end());
  }
  for (int l : labels)
    if (l != kIgnoreLabel)
      return alignment_loss(reshape(rows, {static_cast<int>(labels.size()), 1, rows.dim(1)}),
                            labels, temp, kIgnoreLabel);
  return Tensor::scalar(0.0);
}

// One mini-batch of the three-part objective: total = seg + align + gamma *
// contrast. With gamma = 0 the contrastive branch is skipped entirely and
// logged as zero.
inline BatchLoss batch_loss(const IcpcModel& model, const std::vector<const Sample*>& batch,
                            const TrainSettings& ts, int64_t step) {
  check(!batch.empty(), "batch_loss: empty batch");
  std::vector<ModelOutput> outs;
  outs.reserve(batch.size());
  for (const Sample* s : batch) outs.push_back(model.forward(image_tensor(*s)));

  Real inv_n = 1.0 / static_cast<Real>(batch.size());
  Tensor seg;
  for (size_t i = 0; i < batch.size(); ++i) {
    Tensor si = model.seg_loss(outs[i], batch[i]->labels);
    seg = i == 0 ? si : add(seg, si);
  }
  BatchLoss bl;
  bl.seg = scale(seg, inv_n);

  const ModelConfig& mc = model.config();
  auto collect = [&](Tensor AlignmentPyramid::* member) {
    std::vector<Tensor> maps;
    for (const ModelOutput& o : outs) maps.push_back(o.apyr.*member);
    return maps;
  };
  if (mc.align_loss_all_scales && mc.multi_scale) {
    Tensor sum = add(add(pooled_align_loss(collect(&AlignmentPyramid::a32), batch, mc.temp_align),
                         pooled_align_loss(collect(&AlignmentPyramid::a16), batch, mc.temp_align)),
                     add(pooled_align_loss(collect(&AlignmentPyramid::a8), batch, mc.temp_align),
                         pooled_align_loss(collect(&AlignmentPyramid::a4), batch, mc.temp_align)));
    bl.align = scale(sum, 0.25);
  } else {
    bl.align = pooled_align_loss(collect(&AlignmentPyramid::a32), batch, mc.temp_align);
  }

  ScheduleState sched{step, ts.total_steps, ts.contrast.positives_cap};
  auto [qe, qh] = schedule_counts(sched);
  bl.n_easy = qe;
  bl.n_hard = qh;

  if (ts.gamma > 0.0) {
    std::vector<Tensor> maps;
    std::vector<std::vector<int>> labels32;
    for (size_t i = 0; i < batch.size(); ++i) {
      maps.push_back(outs[i].apyr.a32);
      labels32.push_back(
          model.contrast_labels(outs[i], batch[i]->labels, batch[i]->h, batch[i]->w));
    }
    auto [easy, hard] = partition_easy_hard(maps, labels32, kIgnoreLabel);
    auto samples = sample_points(easy, hard, sched, ts.contrast,
                                 Rng::mix(ts.seed, static_cast<uint64_t>(step)));
    bl.contrast = contrastive_loss(samples, maps, ts.contrast).loss;
  } else {
    bl.contrast = Tensor::scalar(0.0);
  }
  bl.total = add(add(bl.seg, bl.align), scale(bl.contrast, ts.gamma));
  return bl;
}

struct StepRecord {
  int64_t step = 0;
  double l_seg = 0.0, l_align = 0.0, l_contrast = 0.0, total = 0.0;
  int n_easy = 0, n_hard = 0;
  double val_miou = -1.0;  // >= 0 only on steps where validation ran
};

struct TrainResult {
  int64_t steps = 0;
  double final_val_miou = -1.0;
  double final_train_miou = -1.0;
  std::string checkpoint_path;
  std::string metrics_path;
  std::vector<StepRecord> records;
  std::map<std::string, uint64_t> frozen_hashes;  // stable across the whole run
};

// Full training run rooted at out_dir: writes the echoed config, the NDJSON
// metrics log, interval and final checkpoints, and a machine-readable final
// per-class IoU table.
inline TrainResult train_run(const Config& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream echo(out_dir + "/config.txt", std::ios::trunc);
    check(static_cast<bool>(echo), "train: cannot write " + out_dir + "/config.txt");
    echo << cfg.echo();
  }

  Dataset data = generate_dataset(dataset_spec_from(cfg));
  IcpcModel model = IcpcModel::from_config(cfg);
  TrainSettings ts = TrainSettings::from(cfg);
  Optimizer opt(ts.optimizer, ts.base_lr, ts.weight_decay);

  std::map<std::string, uint64_t> frozen_before;
  for (const std::string& g : model.params().group_names())
    if (!model.params().group_trainable(g)) frozen_before[g] = model.params().group_hash(g);

  const std::string metrics_path = out_dir + "/metrics.ndjson";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  check(static_cast<bool>(metrics), "train: cannot write " + metrics_path);

  TrainResult result;
  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  size_t pos = order.size();
  int epoch = 0;

  bool want_val = !data.val.empty();
  for (int64_t step = 1; step <= ts.total_steps; ++step) {
    std::vector<const Sample*> batch;
    for (int b = 0; b < ts.batch_size; ++b) {
      if (pos == order.size()) {
        Rng shuffler(Rng::mix(ts.seed, 1000ull + static_cast<uint64_t>(epoch)));
        shuffler.shuffle(order);
        pos = 0;
        ++epoch;
      }
      batch.push_back(&data.train[static_cast<size_t>(order[pos++])]);
    }

    model.params().zero_grad();
    BatchLoss bl = batch_loss(model, batch, ts, step);
    StepRecord rec;
    rec.step = step;
    rec.l_seg = bl.seg.item();
    rec.l_align = bl.align.item();
    rec.l_contrast = bl.contrast.item();
    rec.total = bl.total.item();
    rec.n_easy = bl.n_easy;
    rec.n_hard = bl.n_hard;
    if (!std::isfinite(rec.total))
      throw divergence_error("training diverged: non-finite loss at step " +
                             std::to_string(step));
    backward(bl.total);
    opt.step(model.params());
    // Saturating activations can keep the loss finite for several steps while
    // the weights explode, and chained products overflow (producing NaN inside
    // the next forward pass) long before the weights themselves stop being
    // representable — so runaway growth has to be caught on the parameters,
    // with a bound low enough that the next forward pass is still finite.
    constexpr Real kParamLimit = 1e12;
    for (const auto& e : model.params().entries()) {
      if (!model.params().group_trainable(e.group)) continue;
      for (Real v : e.t.val())
        if (!std::isfinite(v) || std::abs(v) > kParamLimit)
          throw divergence_error("training diverged: parameter '" + e.name +
                                 "' exploded after step " + std::to_string(step));
    }

    bool last = step == ts.total_steps;
    if (want_val && (last || (ts.eval_interval > 0 && step % ts.eval_interval == 0)))
      rec.val_miou = evaluate_split(model, data.val, PredictionSource::decoder).miou;

    nlohmann::ordered_json line;
    line["step"] = rec.step;
    line["l_seg"] = rec.l_seg;
    line["l_align"] = rec.l_align;
    line["l_contrast"] = rec.l_contrast;
    line["total"] = rec.total;
    line["n_easy"] = rec.n_easy;
    line["n_hard"] = rec.n_hard;
    if (rec.val_miou >= 0.0) line["val_miou"] = rec.val_miou;
    metrics << line.dump() << "\n";
    result.records.push_back(rec);

    if (ts.checkpoint_interval > 0 && step % ts.checkpoint_interval == 0 && !last) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt",
                    static_cast<long long>(step));
      save_checkpoint(out_dir + "/" + name, model.params(), cfg, step);
    }
  }
  metrics.close();

  for (const auto& [g, h] : frozen_before) {
    check(model.params().group_hash(g) == h,
          "train: frozen group '" + g + "' changed during the run");
    result.frozen_hashes[g] = h;
  }

  result.steps = ts.total_steps;
  result.checkpoint_path = out_dir + "/checkpoint.ckpt";
  result.metrics_path = metrics_path;
  save_checkpoint(result.checkpoint_path, model.params(), cfg, ts.total_steps);

  EvalResult train_eval = evaluate_split(model, data.train, PredictionSource::decoder);
  result.final_train_miou = train_eval.miou;
  if (want_val) {
    EvalResult val_eval = evaluate_split(model, data.val, PredictionSource::decoder);
    result.final_val_miou = val_eval.miou;
    nlohmann::ordered_json table;
    table["split"] = "val";
    table["source"] = "decoder";
    table["step"] = ts.total_steps;
    table["miou"] = val_eval.miou;
    table["iou"] = val_eval.iou;
    std::ofstream out(out_dir + "/final_eval.json", std::ios::trunc);
    out << table.dump(2) << "\n";
  }
  return result;
}

}  // namespace icpc
