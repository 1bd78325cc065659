#pragma once

// Bounding-box math: IoU, anchor grids, offset encoding/decoding, NMS,
// training-time anchor assignment/sampling, and the encompassing merge of
// positive proposals. Pure functions over immutable inputs.

#include <cstdint>
#include <optional>
#include <vector>

namespace lpnet {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  bool valid() const;
  // edge-inclusive containment: does this box fully contain `inner`?
  bool contains(const Box& inner) const {
    return x1 <= inner.x1 && y1 <= inner.y1 && x2 >= inner.x2 && y2 >= inner.y2;
  }
  Box clipped(double img_w, double img_h) const;
};

void require_valid(const Box& b, const char* what);

double iou(const Box& a, const Box& b);

// ---------------------------------------------------------------------------
// Anchors
// ---------------------------------------------------------------------------

enum class AnchorUnits { kImage, kFeature };

struct AnchorSpec {
  std::vector<double> heights = {5, 8, 11, 14, 17, 20};
  double aspect_ratio = 5.0;  // width / height
  int stride = 4;             // feature-map cell size in image pixels
  AnchorUnits units = AnchorUnits::kImage;

  int count() const { return int(heights.size()); }
  // anchor height in image pixels
  double image_height(int i) const {
    return units == AnchorUnits::kFeature ? heights[size_t(i)] * stride
                                          : heights[size_t(i)];
  }
  void validate() const;
};

// Anchors for every feature cell, k per location, centered on cell centers.
// Order: cell-major (row, then column), innermost the k scales.
std::vector<Box> generate_anchors(const AnchorSpec& spec, int feat_h, int feat_w);

// true iff the anchor lies fully inside a (0,0)-(img_w,img_h) image
bool anchor_inside_image(const Box& a, double img_w, double img_h);

// ---------------------------------------------------------------------------
// Offset parametrization
// ---------------------------------------------------------------------------

struct RegressionOffsets {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

// translation scaled by anchor size, log-space width/height shift
RegressionOffsets encode_offsets(const Box& box, const Box& anchor);

// Inverse map. tw/th are clamped to +-log(1000/16) before exponentiation so
// untrained regressors cannot overflow; pass an image size to clip the result.
Box decode_offsets(const RegressionOffsets& t, const Box& anchor,
                   std::optional<std::pair<double, double>> image_wh = std::nullopt);

// ---------------------------------------------------------------------------
// NMS
// ---------------------------------------------------------------------------

struct ScoredBox {
  Box box;
  double score = 0;
};

// Greedy NMS. Output sorted by descending score; score ties broken by lower
// input index, which makes the result deterministic.
std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold);

// ---------------------------------------------------------------------------
// Anchor assignment and sampling
// ---------------------------------------------------------------------------

enum class AnchorRole { kPositive, kNegative, kIgnored };

struct AnchorAssignment {
  int anchor_index = -1;
  AnchorRole role = AnchorRole::kIgnored;
  int gt_index = -1;            // positives only
  RegressionOffsets target{};   // positives only
};

struct AnchorSampleConfig {
  double positive_iou = 0.7;
  double negative_iou = 0.3;
  int batch_size = 256;
  // anchors crossing the image border are excluded from training when set
  bool ignore_cross_boundary = true;
  double image_w = 0, image_h = 0;
};

// IoU 0.7/0.3 role assignment with the max-IoU guarantee (every ground truth
// gets at least one positive), then samples up to batch_size/2 positives and
// pads with negatives to exactly batch_size. Deterministic per seed.
std::vector<AnchorAssignment> assign_and_sample_anchors(
    const std::vector<Box>& anchors, const std::vector<Box>& ground_truths,
    const AnchorSampleConfig& cfg, uint64_t seed);

// Minimal axis-aligned box containing every box of a non-empty group.
Box merge_encompassing(const std::vector<Box>& group);

}  // namespace lpnet
