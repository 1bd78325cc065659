#include "lpnet/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace lpnet {

bool labels_match(const std::string& gt, const std::string& pred,
                  std::optional<char> wildcard) {
  if (gt.size() != pred.size()) return false;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (wildcard && gt[i] == *wildcard) continue;
    if (gt[i] != pred[i]) return false;
  }
  return true;
}

E2ECounts match_end_to_end(const std::vector<Detection>& detections,
                           const std::vector<Box>& gt_boxes,
                           const std::vector<std::string>& gt_labels,
                           std::optional<char> wildcard) {
  E2ECounts out;
  std::vector<int> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return detections[size_t(a)].score > detections[size_t(b)].score;
  });
  std::vector<char> gt_taken(gt_boxes.size(), 0);
  for (int di : order) {
    const auto& det = detections[size_t(di)];
    int best_gt = -1;
    double best_iou = 0.5;  // strict: a pair must exceed 0.5
    for (size_t gi = 0; gi < gt_boxes.size(); ++gi) {
      if (gt_taken[gi]) continue;
      double v = iou(det.box, gt_boxes[gi]);
      if (v > best_iou && labels_match(gt_labels[gi], det.label, wildcard)) {
        best_iou = v;
        best_gt = int(gi);
      }
    }
    if (best_gt >= 0) {
      gt_taken[size_t(best_gt)] = 1;
      out.tp += 1;
      out.matches.push_back({di, best_gt, best_iou, true});
    } else {
      out.fp += 1;
      out.matches.push_back({di, -1, 0.0, false});
    }
  }
  for (size_t gi = 0; gi < gt_boxes.size(); ++gi)
    if (!gt_taken[gi]) out.fn += 1;
  return out;
}

DetOnlyCounts match_detection_only(const std::vector<Detection>& detections,
                                   const std::vector<Box>& gt_boxes) {
  DetOnlyCounts out;
  out.total = int(gt_boxes.size());
  for (const auto& gt : gt_boxes) {
    for (const auto& det : detections) {
      if (det.box.contains(gt) && iou(det.box, gt) > 0.5) {
        out.detected += 1;
        break;
      }
    }
  }
  return out;
}

namespace {

void finish_row(MetricsRow& row) {
  const int dets = row.tp + row.fp;
  row.precision = dets > 0 ? double(row.tp) / dets : 0.0;
  row.recall = (row.tp + row.fn) > 0 ? double(row.tp) / (row.tp + row.fn) : 0.0;
  row.f_measure = (row.precision + row.recall) > 0
                      ? 2.0 * row.precision * row.recall / (row.precision + row.recall)
                      : 0.0;
  row.ratio = row.gt_total > 0 ? double(row.detected) / row.gt_total : 0.0;
}

}  // namespace

MetricsTable aggregate(const std::vector<ImageEvalResult>& results) {
  MetricsTable table;
  table.empty_dataset = results.empty();
  std::map<std::string, MetricsRow> groups;
  for (const auto& r : results) {
    MetricsRow& row = groups[r.group];
    row.group = r.group;
    row.n += 1;
    row.tp += r.e2e.tp;
    row.fp += r.e2e.fp;
    row.fn += r.e2e.fn;
    row.detected += r.det.detected;
    row.gt_total += r.det.total;
  }
  MetricsRow& overall = table.overall;
  overall.group = "overall";
  double ratio_sum = 0;
  for (auto& [key, row] : groups) {
    finish_row(row);
    overall.n += row.n;
    overall.tp += row.tp;
    overall.fp += row.fp;
    overall.fn += row.fn;
    overall.detected += row.detected;
    overall.gt_total += row.gt_total;
    ratio_sum += row.ratio;
    table.groups.push_back(row);
  }
  finish_row(overall);
  // the detection-only summary follows the per-group average convention
  if (!groups.empty()) overall.ratio = ratio_sum / double(groups.size());
  return table;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string metrics_to_text(const MetricsTable& t, const std::string& protocol) {
  std::ostringstream os;
  const bool e2e = protocol == "end2end";
  os << (e2e ? "group            n       P       R       F\n"
             : "group            n   ratio\n");
  auto line = [&](const MetricsRow& r) {
    char buf[128];
    if (e2e)
      std::snprintf(buf, sizeof(buf), "%-14s %4d  %s  %s  %s\n", r.group.c_str(), r.n,
                    fmt(r.precision).c_str(), fmt(r.recall).c_str(),
                    fmt(r.f_measure).c_str());
    else
      std::snprintf(buf, sizeof(buf), "%-14s %4d  %s\n", r.group.c_str(), r.n,
                    fmt(r.ratio).c_str());
    os << buf;
  };
  for (const auto& r : t.groups) line(r);
  line(t.overall);
  if (t.empty_dataset) os << "(empty dataset)\n";
  return os.str();
}

std::string metrics_to_csv(const MetricsTable& t, const std::string& protocol) {
  std::ostringstream os;
  const bool e2e = protocol == "end2end";
  os << (e2e ? "group,n,P,R,F\n" : "group,n,ratio\n");
  auto line = [&](const MetricsRow& r) {
    if (e2e)
      os << r.group << "," << r.n << "," << fmt(r.precision) << "," << fmt(r.recall)
         << "," << fmt(r.f_measure) << "\n";
    else
      os << r.group << "," << r.n << "," << fmt(r.ratio) << "\n";
  };
  for (const auto& r : t.groups) line(r);
  line(t.overall);
  return os.str();
}

}  // namespace lpnet
