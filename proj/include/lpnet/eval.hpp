#pragma once

// The two evaluation protocols and their aggregation into per-group and
// overall metric tables.

#include <optional>
#include <string>
#include <vector>

#include "lpnet/box.hpp"

namespace lpnet {

struct Detection {
  Box box;
  double score = 0;        // plate classification probability
  std::string label;       // decoded character string
  double label_score = 0;  // log probability of the decoded path
};

// ---------------------------------------------------------------------------
// Per-image matching
// ---------------------------------------------------------------------------

struct E2EMatchRecord {
  int det_index = -1, gt_index = -1;
  double iou = 0;
  bool label_equal = false;
};

struct E2ECounts {
  int tp = 0, fp = 0, fn = 0;
  std::vector<E2EMatchRecord> matches;
};

// position-wise label comparison; positions holding the wildcard in the
// ground truth match any predicted symbol
bool labels_match(const std::string& gt, const std::string& pred,
                  std::optional<char> wildcard);

// Greedy one-to-one matching in descending detection score. A pair counts as
// a true positive iff IoU > 0.5 (strict) and the labels match.
E2ECounts match_end_to_end(const std::vector<Detection>& detections,
                           const std::vector<Box>& gt_boxes,
                           const std::vector<std::string>& gt_labels,
                           std::optional<char> wildcard);

struct DetOnlyCounts {
  int detected = 0, total = 0;
};

// A ground truth counts as detected iff some detection fully contains it
// (edge-inclusive) and their IoU exceeds 0.5.
DetOnlyCounts match_detection_only(const std::vector<Detection>& detections,
                                   const std::vector<Box>& gt_boxes);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct ImageEvalResult {
  std::string group = "all";
  E2ECounts e2e;
  DetOnlyCounts det;
};

struct MetricsRow {
  std::string group;
  int n = 0;  // images
  double precision = 0, recall = 0, f_measure = 0;
  double ratio = 0;
  int tp = 0, fp = 0, fn = 0;
  int detected = 0, gt_total = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> groups;  // sorted by group key
  MetricsRow overall;              // pooled counts; detection ratio macro-averaged
  bool empty_dataset = false;
};

// Per-group and overall end-to-end precision/recall/F plus the detection-only
// ratio. The overall P/R/F pools counts across groups; the overall detection
// ratio averages the per-group ratios.
MetricsTable aggregate(const std::vector<ImageEvalResult>& results);

std::string metrics_to_text(const MetricsTable& t, const std::string& protocol);
// fixed column order: group,n,P,R,F for end2end; group,n,ratio for detect
std::string metrics_to_csv(const MetricsTable& t, const std::string& protocol);

}  // namespace lpnet
