#pragma once

// Composes the network modules into the single training forward pass, the
// joint detection/recognition loss, the Adam schedule, checkpointed training
// runs, and multi-scale inference with score-threshold post-processing.

#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lpnet/eval.hpp"
#include "lpnet/manifest.hpp"
#include "lpnet/model.hpp"

namespace lpnet {

// ---------------------------------------------------------------------------
// Schedule and resize policy
// ---------------------------------------------------------------------------

// fresh-group learning rate: halved every halve_every iterations, floored
inline double fresh_lr_at(const TrainConfig& tc, int64_t iteration) {
  const double halvings = double(iteration / tc.halve_every);
  return std::max(tc.lr_floor, tc.lr_fresh * std::pow(2.0, -halvings));
}

struct ResizedImage {
  ImageU8 image;  // resized, zero-padded so both sides are multiples of 4
  double scale = 1.0;
  int content_w = 0, content_h = 0;  // resized extent before padding
  int orig_w = 0, orig_h = 0;
};

// Uniform scale bringing the shorter side to the target unless that pushes
// the longer side past the cap, in which case the cap binds.
inline ResizedImage resize_policy(const ImageU8& img, int shorter_target,
                                  int longer_cap) {
  check_arg(img.width > 0 && img.height > 0, "resize_policy: empty image");
  const int shorter = std::min(img.width, img.height);
  const int longer = std::max(img.width, img.height);
  double scale = double(shorter_target) / shorter;
  if (scale * longer > double(longer_cap)) scale = double(longer_cap) / longer;
  ResizedImage out;
  out.orig_w = img.width;
  out.orig_h = img.height;
  out.scale = scale;
  out.content_w = std::max(4, int(std::lround(img.width * scale)));
  out.content_h = std::max(4, int(std::lround(img.height * scale)));
  ImageU8 resized = resize_bilinear(img, out.content_w, out.content_h);
  out.image = pad_to_multiple(resized, 4);
  return out;
}

// ---------------------------------------------------------------------------
// Training plan: everything sampled or derived from the current predictions
// that the loss graph then treats as constants. Holding a plan fixed makes
// the joint loss a deterministic, differentiable function of the parameters
// (the approximate joint training contract: no gradient through RoI boxes).
// ---------------------------------------------------------------------------

struct RoiPlanEntry {
  Box box;  // image coordinates of the padded/resized frame
  bool positive = false;
  int gt_index = -1;
  std::vector<int> label;        // positives: encoded ground-truth string
  RegressionOffsets det_target;  // positives: gt encoded against this RoI
  uint64_t dropout_seed = 0;
};

struct JointPlan {
  std::vector<AnchorAssignment> assignments;
  std::vector<RoiPlanEntry> rois;  // m positives first, then 3m negatives
  int m = 0;
};

template <typename T>
RegressionOffsets read_offsets_at(const Tensor<T>& offset_map, int anchor_index,
                                  int feat_w, int k) {
  auto [cy, cx, a] = anchor_cell(anchor_index, feat_w, k);
  const int64_t plane = int64_t(offset_map.dim(1)) * offset_map.dim(2);
  const int64_t at = int64_t(cy) * offset_map.dim(2) + cx;
  RegressionOffsets t;
  t.tx = double(offset_map.data()[size_t((4 * a + 0) * plane + at)]);
  t.ty = double(offset_map.data()[size_t((4 * a + 1) * plane + at)]);
  t.tw = double(offset_map.data()[size_t((4 * a + 2) * plane + at)]);
  t.th = double(offset_map.data()[size_t((4 * a + 3) * plane + at)]);
  return t;
}

// Samples the 256-anchor RPN batch, decodes the sampled anchors with the
// current regression output, merges positives per ground truth into their
// encompassing boxes, and picks 3m negatives to complete the 4m RoI batch.
template <typename T>
JointPlan make_joint_plan(const RpnOutput<T>& rpn_out, const std::vector<Box>& anchors,
                          const std::vector<Box>& gts,
                          const std::vector<std::vector<int>>& labels,
                          double img_w, double img_h, const ModelConfig& mc,
                          uint64_t seed) {
  check_arg(gts.size() == labels.size(), "make_joint_plan: gt/label count mismatch");
  JointPlan plan;
  AnchorSampleConfig acfg;
  acfg.image_w = img_w;
  acfg.image_h = img_h;
  plan.assignments =
      assign_and_sample_anchors(anchors, gts, acfg, mix_seed(seed, 0xA55));
  const int k = mc.anchor.count();
  const int feat_w = rpn_out.probs.dim(2);
  auto decode_assignment = [&](const AnchorAssignment& as) {
    RegressionOffsets t = read_offsets_at(rpn_out.offsets, as.anchor_index, feat_w, k);
    return decode_offsets(t, anchors[size_t(as.anchor_index)], {{img_w, img_h}});
  };

  std::vector<std::vector<Box>> groups(gts.size());
  for (const auto& as : plan.assignments)
    if (as.role == AnchorRole::kPositive)
      groups[size_t(as.gt_index)].push_back(decode_assignment(as));
  for (size_t j = 0; j < gts.size(); ++j) {
    if (groups[j].empty()) continue;
    Box merged = merge_encompassing(groups[j]);
    if (merged.width() < 2.0 || merged.height() < 2.0) continue;
    RoiPlanEntry e;
    e.box = merged;
    e.positive = true;
    e.gt_index = int(j);
    e.label = labels[j];
    e.det_target = encode_offsets(gts[j], merged);
    plan.rois.push_back(std::move(e));
  }
  plan.m = int(plan.rois.size());
  if (plan.m == 0) return plan;

  std::vector<Box> neg_pool;
  for (const auto& as : plan.assignments) {
    if (as.role != AnchorRole::kNegative) continue;
    Box b = decode_assignment(as);
    if (b.width() < 2.0 || b.height() < 2.0)
      b = anchors[size_t(as.anchor_index)].clipped(img_w, img_h);
    if (b.width() >= 2.0 && b.height() >= 2.0) neg_pool.push_back(b);
  }
  Rng rng(mix_seed(seed, 0xB07));
  const int need = 3 * plan.m;
  std::vector<int> picks;
  if (int(neg_pool.size()) > need) {
    picks = rng.sample_without_replacement(int(neg_pool.size()), need);
    std::sort(picks.begin(), picks.end());
  } else {
    for (int i = 0; i < int(neg_pool.size()); ++i) picks.push_back(i);
    while (int(picks.size()) < need && !neg_pool.empty())
      picks.push_back(rng.uniform_int(int(neg_pool.size())));  // with replacement
  }
  for (int i : picks) {
    RoiPlanEntry e;
    e.box = neg_pool[size_t(i)];
    plan.rois.push_back(std::move(e));
  }
  for (size_t i = 0; i < plan.rois.size(); ++i)
    plan.rois[i].dropout_seed = mix_seed(seed, 0xD120 + uint64_t(i));
  return plan;
}

// ---------------------------------------------------------------------------
// Joint loss
// ---------------------------------------------------------------------------

template <typename T>
struct JointLossParts {
  Tensor<T> total;
  double rpn_cls = 0, rpn_reg = 0, det_cls = 0, det_reg = 0, rec = 0;
  int rpn_positives = 0, m = 0;
  bool roi_stage_skipped = false;

  double value() const { return rpn_cls + rpn_reg + det_cls + det_reg + rec; }
};

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& rows) {
  Tensor<T> acc = rows.at(0);
  for (size_t i = 1; i < rows.size(); ++i) acc = concat_axis0(acc, rows[i]);
  return acc;
}

// RPN two-term loss plus the detection-network loss: mean classification over
// the 4m RoIs, smooth-L1 over the m positives, CTC over the m positives, each
// normalized as 1/N and 1/N+ respectively. RPN and RoI-stage losses are
// summed with unit weights.
template <typename T>
JointLossParts<T> joint_loss_from_plan(const PlateModel<T>& model,
                                       const Tensor<T>& features,
                                       const RpnOutput<T>& rpn_out,
                                       const JointPlan& plan, bool training) {
  JointLossParts<T> parts;
  RpnLossParts<T> rpn_parts = rpn_loss(rpn_out, plan.assignments);
  parts.rpn_cls = rpn_parts.cls;
  parts.rpn_reg = rpn_parts.reg;
  parts.rpn_positives = rpn_parts.positives;
  parts.m = plan.m;
  if (plan.m == 0) {
    parts.total = rpn_parts.total;
    parts.roi_stage_skipped = true;
    return parts;
  }

  const int stride = model.cfg.anchor.stride;
  std::vector<Tensor<T>> cls_rows, reg_rows, rec_losses;
  std::vector<int> cls_labels;
  std::vector<T> reg_targets;
  for (const auto& e : plan.rois) {
    Tensor<T> pooled = roi_pool(features, e.box, stride);
    DetectionOutput<T> det = model.det.forward(pooled, training, e.dropout_seed);
    cls_rows.push_back(det.cls_probs);
    cls_labels.push_back(e.positive ? 1 : 0);
    if (e.positive) {
      reg_rows.push_back(det.offsets);
      reg_targets.push_back(T(e.det_target.tx));
      reg_targets.push_back(T(e.det_target.ty));
      reg_targets.push_back(T(e.det_target.tw));
      reg_targets.push_back(T(e.det_target.th));
      Tensor<T> q = model.rec.recognize(pooled);
      rec_losses.push_back(ctc_loss(q, e.label));
    }
  }
  Tensor<T> det_cls = binary_cross_entropy(concat_rows(cls_rows), cls_labels);
  Tensor<T> reg_pred = concat_rows(reg_rows);
  Tensor<T> reg_target = Tensor<T>::of({plan.m, 4}, std::move(reg_targets));
  Tensor<T> det_reg = scale(smooth_l1(reg_pred, reg_target), T(1.0 / plan.m));
  Tensor<T> rec_sum = rec_losses[0];
  for (size_t i = 1; i < rec_losses.size(); ++i) rec_sum = add(rec_sum, rec_losses[i]);
  Tensor<T> rec_term = scale(rec_sum, T(1.0 / plan.m));

  parts.det_cls = double(det_cls.item());
  parts.det_reg = double(det_reg.item());
  parts.rec = double(rec_term.item());
  parts.total = add(add(rpn_parts.total, det_cls), add(det_reg, rec_term));
  return parts;
}

// ---------------------------------------------------------------------------
// Training step and run loop
// ---------------------------------------------------------------------------

struct StepMetrics {
  int64_t iteration = 0;
  double lr_pretrain = 0, lr_fresh = 0;
  double total = 0, rpn_cls = 0, rpn_reg = 0, det_cls = 0, det_reg = 0, rec = 0;
  int m = 0;
  bool roi_skipped = false;
  bool update_skipped = false;
  double millis = 0;
};

// frozen-parameter mask for one iteration (leading backbone convs and the
// optional backbone fine-tuning horizon)
template <typename T>
std::vector<char> frozen_mask(const ParamRefs<T>& params, const TrainConfig& tc,
                              int64_t iteration) {
  std::vector<char> mask(params.size(), 0);
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i]->name;
    if (name.rfind("backbone.conv", 0) == 0) {
      const int conv_idx = std::atoi(name.c_str() + 13);
      if (conv_idx < tc.freeze_convs) mask[i] = 1;
    }
    if (tc.backbone_train_until > 0 && iteration >= tc.backbone_train_until &&
        name.rfind("backbone.", 0) == 0)
      mask[i] = 1;
  }
  return mask;
}

// One approximate-joint-training iteration on a single prepared image:
// forward, joint loss, backward, Adam with the scheduled rates. A non-finite
// loss aborts the update and leaves the parameters untouched.
template <typename T>
StepMetrics train_step(PlateModel<T>& model, AdamOptimizer<T>& opt,
                       const ParamRefs<T>& params, const ImageU8& padded_image,
                       const std::vector<Box>& gts,
                       const std::vector<std::vector<int>>& labels,
                       const TrainConfig& tc, int64_t iteration) {
  const auto t0 = std::chrono::steady_clock::now();
  StepMetrics ms;
  ms.iteration = iteration;
  ms.lr_pretrain = tc.lr_pretrain;
  ms.lr_fresh = fresh_lr_at(tc, iteration);

  Tensor<T> image = image_to_tensor<T>(padded_image);
  Tensor<T> features = model.extract_features(image);
  RpnOutput<T> rpn_out = model.rpn.forward(features);
  std::vector<Box> anchors =
      generate_anchors(model.cfg.anchor, features.dim(1), features.dim(2));
  JointPlan plan = make_joint_plan(rpn_out, anchors, gts, labels,
                                   double(padded_image.width),
                                   double(padded_image.height), model.cfg,
                                   mix_seed(tc.seed, uint64_t(iteration)));
  JointLossParts<T> loss = joint_loss_from_plan(model, features, rpn_out, plan, true);
  ms.total = loss.value();
  ms.rpn_cls = loss.rpn_cls;
  ms.rpn_reg = loss.rpn_reg;
  ms.det_cls = loss.det_cls;
  ms.det_reg = loss.det_reg;
  ms.rec = loss.rec;
  ms.m = loss.m;
  ms.roi_skipped = loss.roi_stage_skipped;

  if (!std::isfinite(ms.total)) {
    ms.update_skipped = true;
  } else {
    opt.zero_grad(params);
    loss.total.backward();
    std::vector<char> mask = frozen_mask(params, tc, iteration);
    opt.step(params, ms.lr_pretrain, ms.lr_fresh, &mask);
  }
  ms.millis = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
  return ms;
}

struct TrainRunSummary {
  std::string out_dir;
  int64_t completed_iterations = 0;
  std::string final_checkpoint;
};

inline std::string checkpoint_name(int64_t iteration) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.lpnet", (long long)iteration);
  return buf;
}

// Full training run over a manifest: per-iteration random single-image
// sampling, JSONL metrics, checkpoints every checkpoint_every iterations with
// last-N retention, plus an optional periodic hook (early stopping).
template <typename T>
TrainRunSummary run_training(
    const Config& cfg, const std::string& manifest_path, const std::string& out_dir,
    const std::function<bool(int64_t, PlateModel<T>&)>& periodic_hook = {},
    int periodic_every = 0) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream snap((fs::path(out_dir) / "config.json").string(), std::ios::trunc);
    snap << config_to_json_text(cfg);
  }
  const std::vector<ManifestRecord> records = read_manifest(manifest_path);
  check_arg(!records.empty(), "run_training: empty manifest");
  std::vector<std::vector<std::vector<int>>> encoded_labels(records.size());
  for (size_t i = 0; i < records.size(); ++i)
    for (const auto& s : records[i].labels)
      encoded_labels[i].push_back(Alphabet::encode(s));

  PlateModel<T> model(cfg.model);
  ParamRefs<T> params = model.params();
  AdamOptimizer<T> opt(params);
  std::ofstream metrics((fs::path(out_dir) / "metrics.jsonl").string(), std::ios::trunc);

  Rng data_rng(mix_seed(cfg.train.seed, 0xDA7A));
  std::deque<std::string> kept;
  TrainRunSummary summary;
  summary.out_dir = out_dir;

  for (int64_t it = 0; it < cfg.train.iterations; ++it) {
    const int idx = data_rng.uniform_int(int(records.size()));
    const ManifestRecord& rec = records[size_t(idx)];
    ImageU8 raw = load_record_image(manifest_path, rec);
    ResizedImage resized =
        resize_policy(raw, cfg.train.resize_shorter, cfg.train.resize_longer_cap);
    std::vector<Box> gts;
    for (const auto& b : rec.boxes)
      gts.push_back(Box{b.x1 * resized.scale, b.y1 * resized.scale,
                        b.x2 * resized.scale, b.y2 * resized.scale});
    StepMetrics ms = train_step(model, opt, params, resized.image, gts,
                                encoded_labels[size_t(idx)], cfg.train, it);
    summary.completed_iterations = it + 1;

    char line[512];
    std::snprintf(line, sizeof(line),
                  "{\"it\":%lld,\"lr_fresh\":%.8g,\"lr_pretrain\":%.8g,"
                  "\"total\":%.8g,\"rpn_cls\":%.8g,\"rpn_reg\":%.8g,"
                  "\"det_cls\":%.8g,\"det_reg\":%.8g,\"rec\":%.8g,"
                  "\"m\":%d,\"roi_skipped\":%s,\"update_skipped\":%s,\"ms\":%.1f}",
                  (long long)ms.iteration, ms.lr_fresh, ms.lr_pretrain, ms.total,
                  ms.rpn_cls, ms.rpn_reg, ms.det_cls, ms.det_reg, ms.rec, ms.m,
                  ms.roi_skipped ? "true" : "false",
                  ms.update_skipped ? "true" : "false", ms.millis);
    metrics << line << "\n";
    metrics.flush();

    if ((it + 1) % cfg.train.checkpoint_every == 0) {
      const std::string name = checkpoint_name(it + 1);
      model.save((fs::path(out_dir) / name).string(), it + 1);
      kept.push_back(name);
      while (int(kept.size()) > cfg.train.checkpoint_keep) {
        fs::remove(fs::path(out_dir) / kept.front());
        kept.pop_front();
      }
    }
    if (periodic_every > 0 && periodic_hook && (it + 1) % periodic_every == 0) {
      if (periodic_hook(it + 1, model)) break;
    }
  }
  summary.final_checkpoint = (fs::path(out_dir) / "final.lpnet").string();
  model.save(summary.final_checkpoint, summary.completed_iterations);
  return summary;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Runs the detector at every configured scale, keeps detections whose plate
// probability clears the threshold, merges the per-scale results with NMS in
// original-image coordinates, and recognizes the survivors.
template <typename T>
std::vector<Detection> infer_image(const PlateModel<T>& model, const ImageU8& original,
                                   const EvalConfig& ec) {
  NoGradGuard no_grad;
  struct Candidate {
    Box box;  // original coordinates
    double score;
    Tensor<T> pooled;
  };
  std::vector<Candidate> candidates;
  for (int scale_target : ec.scales) {
    ResizedImage r = resize_policy(original, scale_target, ec.resize_longer_cap);
    Tensor<T> image = image_to_tensor<T>(r.image);
    Tensor<T> features = model.extract_features(image);
    RpnOutput<T> rpn_out = model.rpn.forward(features);
    std::vector<Box> anchors =
        generate_anchors(model.cfg.anchor, features.dim(1), features.dim(2));
    std::vector<ScoredBox> proposals = generate_proposals(
        rpn_out, anchors, double(r.image.width), double(r.image.height),
        model.cfg.rpn_nms_iou, model.cfg.rpn_top_n, model.cfg.pre_nms_top_n);
    for (const auto& p : proposals) {
      Tensor<T> pooled = roi_pool(features, p.box, model.cfg.anchor.stride);
      DetectionOutput<T> det = model.det.forward(pooled, false, 0);
      const double prob = double(det.cls_probs.data()[1]);
      if (prob <= ec.score_threshold) continue;
      RegressionOffsets t{double(det.offsets.data()[0]), double(det.offsets.data()[1]),
                          double(det.offsets.data()[2]), double(det.offsets.data()[3])};
      Box refined = decode_offsets(t, p.box, {{double(r.image.width),
                                               double(r.image.height)}});
      Box orig{refined.x1 / r.scale, refined.y1 / r.scale, refined.x2 / r.scale,
               refined.y2 / r.scale};
      orig = orig.clipped(double(r.orig_w), double(r.orig_h));
      if (orig.width() < 1.0 || orig.height() < 1.0) continue;
      candidates.push_back({orig, prob, std::move(pooled)});
    }
  }
  // cross-scale NMS with deterministic score/index ordering
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return candidates[size_t(a)].score > candidates[size_t(b)].score;
  });
  std::vector<char> suppressed(candidates.size(), 0);
  std::vector<Detection> detections;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const int i = order[oi];
    if (suppressed[size_t(i)]) continue;
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (!suppressed[size_t(j)] &&
          iou(candidates[size_t(i)].box, candidates[size_t(j)].box) > ec.final_nms_iou)
        suppressed[size_t(j)] = 1;
    }
    auto [label_idx, log_score] = ctc_best_path_decode(
        model.rec.recognize(candidates[size_t(i)].pooled), Alphabet::kBlank);
    Detection d;
    d.box = candidates[size_t(i)].box;
    d.score = candidates[size_t(i)].score;
    d.label = Alphabet::decode(label_idx);
    d.label_score = log_score;
    detections.push_back(std::move(d));
  }
  return detections;
}

// The single-plate selection rule: prefer detections whose label has exactly
// 7 characters; within that subset (or all detections when it is empty) take
// the highest detection score, breaking ties by label score then input order.
inline std::optional<Detection> select_primary_plate(
    const std::vector<Detection>& detections) {
  if (detections.empty()) return std::nullopt;
  std::vector<int> pool;
  for (size_t i = 0; i < detections.size(); ++i)
    if (detections[i].label.size() == 7) pool.push_back(int(i));
  if (pool.empty())
    for (size_t i = 0; i < detections.size(); ++i) pool.push_back(int(i));
  int best = pool[0];
  for (int i : pool) {
    if (detections[size_t(i)].score > detections[size_t(best)].score ||
        (detections[size_t(i)].score == detections[size_t(best)].score &&
         detections[size_t(i)].label_score > detections[size_t(best)].label_score))
      best = i;
  }
  return detections[size_t(best)];
}

// ---------------------------------------------------------------------------
// Manifest evaluation
// ---------------------------------------------------------------------------

struct ManifestEvaluation {
  MetricsTable metrics;  // carries both the P/R/F and the detection-ratio view
  std::vector<std::vector<Detection>> per_image;  // post-selection detections
};

template <typename T>
ManifestEvaluation evaluate_manifest(const PlateModel<T>& model,
                                     const std::string& manifest_path,
                                     const EvalConfig& ec) {
  const std::vector<ManifestRecord> records = read_manifest(manifest_path);
  std::optional<char> wildcard;
  if (!ec.wildcard.empty()) wildcard = ec.wildcard[0];
  std::vector<ImageEvalResult> results;
  ManifestEvaluation out;
  for (const auto& rec : records) {
    ImageU8 img = load_record_image(manifest_path, rec);
    std::vector<Detection> dets = infer_image(model, img, ec);
    if (ec.selection == "primary") {
      auto primary = select_primary_plate(dets);
      dets.clear();
      if (primary) dets.push_back(*primary);
    }
    ImageEvalResult r;
    r.group = rec.group;
    r.e2e = match_end_to_end(dets, rec.boxes, rec.labels, wildcard);
    r.det = match_detection_only(dets, rec.boxes);
    results.push_back(r);
    out.per_image.push_back(std::move(dets));
  }
  out.metrics = aggregate(results);
  return out;
}

}  // namespace lpnet
