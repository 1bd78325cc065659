#include "lpnet/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lpnet/rng.hpp"

namespace lpnet {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

void require_valid(const Box& b, const char* what) {
  if (!b.valid())
    throw std::invalid_argument(std::string(what) + ": invalid box (" +
                                std::to_string(b.x1) + "," + std::to_string(b.y1) +
                                "," + std::to_string(b.x2) + "," +
                                std::to_string(b.y2) + ")");
}

Box Box::clipped(double img_w, double img_h) const {
  Box c;
  c.x1 = std::clamp(x1, 0.0, img_w);
  c.y1 = std::clamp(y1, 0.0, img_h);
  c.x2 = std::clamp(x2, 0.0, img_w);
  c.y2 = std::clamp(y2, 0.0, img_h);
  return c;
}

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

void AnchorSpec::validate() const {
  if (heights.empty()) throw std::invalid_argument("anchor spec: no heights");
  for (size_t i = 0; i < heights.size(); ++i) {
    if (heights[i] <= 0) throw std::invalid_argument("anchor spec: non-positive height");
    if (i > 0 && heights[i] <= heights[i - 1])
      throw std::invalid_argument("anchor spec: heights must be strictly increasing");
  }
  if (aspect_ratio <= 0) throw std::invalid_argument("anchor spec: aspect ratio <= 0");
  if (stride <= 0) throw std::invalid_argument("anchor spec: stride <= 0");
}

std::vector<Box> generate_anchors(const AnchorSpec& spec, int feat_h, int feat_w) {
  spec.validate();
  if (feat_h <= 0 || feat_w <= 0)
    throw std::invalid_argument("generate_anchors: non-positive feature extent");
  std::vector<Box> anchors;
  anchors.reserve(size_t(feat_h) * size_t(feat_w) * size_t(spec.count()));
  for (int i = 0; i < feat_h; ++i) {
    const double cy = (i + 0.5) * spec.stride;
    for (int j = 0; j < feat_w; ++j) {
      const double cx = (j + 0.5) * spec.stride;
      for (int a = 0; a < spec.count(); ++a) {
        const double h = spec.image_height(a);
        anchors.push_back(Box::from_center(cx, cy, h * spec.aspect_ratio, h));
      }
    }
  }
  return anchors;
}

bool anchor_inside_image(const Box& a, double img_w, double img_h) {
  return a.x1 >= 0 && a.y1 >= 0 && a.x2 <= img_w && a.y2 <= img_h;
}

RegressionOffsets encode_offsets(const Box& box, const Box& anchor) {
  require_valid(box, "encode_offsets box");
  require_valid(anchor, "encode_offsets anchor");
  RegressionOffsets t;
  t.tx = (box.cx() - anchor.cx()) / anchor.width();
  t.ty = (box.cy() - anchor.cy()) / anchor.height();
  t.tw = std::log(box.width() / anchor.width());
  t.th = std::log(box.height() / anchor.height());
  return t;
}

Box decode_offsets(const RegressionOffsets& t, const Box& anchor,
                   std::optional<std::pair<double, double>> image_wh) {
  require_valid(anchor, "decode_offsets anchor");
  static const double kLogCap = std::log(1000.0 / 16.0);
  const double tw = std::clamp(t.tw, -kLogCap, kLogCap);
  const double th = std::clamp(t.th, -kLogCap, kLogCap);
  const double cx = anchor.cx() + t.tx * anchor.width();
  const double cy = anchor.cy() + t.ty * anchor.height();
  const double w = anchor.width() * std::exp(tw);
  const double h = anchor.height() * std::exp(th);
  Box out = Box::from_center(cx, cy, w, h);
  if (image_wh) out = out.clipped(image_wh->first, image_wh->second);
  return out;
}

std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return boxes[size_t(a)].score > boxes[size_t(b)].score;
  });
  std::vector<ScoredBox> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    int i = order[oi];
    if (suppressed[size_t(i)]) continue;
    kept.push_back(boxes[size_t(i)]);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      int j = order[oj];
      if (suppressed[size_t(j)]) continue;
      if (iou(boxes[size_t(i)].box, boxes[size_t(j)].box) > iou_threshold)
        suppressed[size_t(j)] = 1;
    }
  }
  return kept;
}

std::vector<AnchorAssignment> assign_and_sample_anchors(
    const std::vector<Box>& anchors, const std::vector<Box>& ground_truths,
    const AnchorSampleConfig& cfg, uint64_t seed) {
  if (ground_truths.empty())
    throw std::invalid_argument("assign_and_sample_anchors: no ground truths");
  if (int(anchors.size()) < cfg.batch_size)
    throw std::invalid_argument("assign_and_sample_anchors: fewer anchors than batch size");
  const int n = int(anchors.size());
  const int g = int(ground_truths.size());

  std::vector<char> trainable(size_t(n), 1);
  if (cfg.ignore_cross_boundary) {
    for (int i = 0; i < n; ++i)
      trainable[size_t(i)] =
          anchor_inside_image(anchors[size_t(i)], cfg.image_w, cfg.image_h) ? 1 : 0;
  }

  std::vector<double> iou_mat(size_t(n) * size_t(g));
  std::vector<double> best_iou(size_t(n), 0.0);
  std::vector<int> best_gt(size_t(n), -1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < g; ++j) {
      double v = iou(anchors[size_t(i)], ground_truths[size_t(j)]);
      iou_mat[size_t(i) * size_t(g) + size_t(j)] = v;
      if (best_gt[size_t(i)] < 0 || v > best_iou[size_t(i)]) {
        best_iou[size_t(i)] = v;
        best_gt[size_t(i)] = j;
      }
    }
  }

  std::vector<AnchorRole> roles(size_t(n), AnchorRole::kIgnored);
  for (int i = 0; i < n; ++i) {
    if (!trainable[size_t(i)]) continue;
    if (best_iou[size_t(i)] > cfg.positive_iou)
      roles[size_t(i)] = AnchorRole::kPositive;
    else if (best_iou[size_t(i)] < cfg.negative_iou)
      roles[size_t(i)] = AnchorRole::kNegative;
  }
  // Max-IoU rule: every ground truth keeps at least one positive anchor even
  // when none clears the IoU threshold. If every anchor overlapping a ground
  // truth crosses the image border, the best of those is drafted back in; the
  // guarantee takes precedence over the cross-boundary exclusion.
  for (int j = 0; j < g; ++j) {
    int pick = -1;
    double pick_iou = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!trainable[size_t(i)]) continue;
      double v = iou_mat[size_t(i) * size_t(g) + size_t(j)];
      if (v > pick_iou) {
        pick_iou = v;
        pick = i;
      }
    }
    if (pick < 0) {
      for (int i = 0; i < n; ++i) {
        double v = iou_mat[size_t(i) * size_t(g) + size_t(j)];
        if (v > pick_iou) {
          pick_iou = v;
          pick = i;
        }
      }
    }
    if (pick < 0) continue;  // ground truth overlaps no anchor at all
    roles[size_t(pick)] = AnchorRole::kPositive;
    best_gt[size_t(pick)] = j;
  }

  std::vector<int> positive_pool, negative_pool;
  for (int i = 0; i < n; ++i) {
    if (roles[size_t(i)] == AnchorRole::kPositive) positive_pool.push_back(i);
    if (roles[size_t(i)] == AnchorRole::kNegative) negative_pool.push_back(i);
  }
  if (negative_pool.empty())
    throw std::invalid_argument(
        "assign_and_sample_anchors: no negative anchors available (degenerate image)");

  Rng rng(seed);
  const int max_pos = cfg.batch_size / 2;
  std::vector<int> sampled_pos = positive_pool;
  if (int(sampled_pos.size()) > max_pos) {
    auto picks = rng.sample_without_replacement(int(positive_pool.size()), max_pos);
    sampled_pos.clear();
    for (int k : picks) sampled_pos.push_back(positive_pool[size_t(k)]);
    std::sort(sampled_pos.begin(), sampled_pos.end());
  }
  const int need_neg = cfg.batch_size - int(sampled_pos.size());
  std::vector<int> sampled_neg;
  if (int(negative_pool.size()) <= need_neg) {
    sampled_neg = negative_pool;
    // pad by resampling uniformly; only reachable on tiny feature maps
    while (int(sampled_neg.size()) < need_neg)
      sampled_neg.push_back(negative_pool[size_t(rng.uniform_int(int(negative_pool.size())))]);
  } else {
    auto picks = rng.sample_without_replacement(int(negative_pool.size()), need_neg);
    for (int k : picks) sampled_neg.push_back(negative_pool[size_t(k)]);
    std::sort(sampled_neg.begin(), sampled_neg.end());
  }

  std::vector<AnchorAssignment> out;
  out.reserve(size_t(cfg.batch_size));
  for (int i : sampled_pos) {
    AnchorAssignment a;
    a.anchor_index = i;
    a.role = AnchorRole::kPositive;
    a.gt_index = best_gt[size_t(i)];
    a.target = encode_offsets(ground_truths[size_t(a.gt_index)], anchors[size_t(i)]);
    out.push_back(a);
  }
  for (int i : sampled_neg) {
    AnchorAssignment a;
    a.anchor_index = i;
    a.role = AnchorRole::kNegative;
    out.push_back(a);
  }
  return out;
}

Box merge_encompassing(const std::vector<Box>& group) {
  if (group.empty())
    throw std::invalid_argument("merge_encompassing: empty group");
  Box m = group[0];
  require_valid(m, "merge_encompassing");
  for (size_t i = 1; i < group.size(); ++i) {
    require_valid(group[i], "merge_encompassing");
    m.x1 = std::min(m.x1, group[i].x1);
    m.y1 = std::min(m.y1, group[i].y1);
    m.x2 = std::max(m.x2, group[i].x2);
    m.y2 = std::max(m.y2, group[i].y2);
  }
  return m;
}

}  // namespace lpnet
