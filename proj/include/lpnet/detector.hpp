#pragma once

// Shared convolutional backbone, the plate-proposal RPN with its two
// rectangle filters, RoI max pooling onto the 4x20 grid, and the
// plate/non-plate detection head.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "lpnet/box.hpp"
#include "lpnet/nn.hpp"
#include "lpnet/tensor.hpp"

namespace lpnet {

// Softmax over channel pairs of a [2k,h,w] map: channels (2a, 2a+1) form a
// two-way distribution at every location.
template <typename T>
Tensor<T> softmax_pairs(const Tensor<T>& a) {
  check_arg(a.ndim() == 3 && a.dim(0) % 2 == 0,
            "softmax_pairs: input must be [2k,h,w]");
  const int k = a.dim(0) / 2, h = a.dim(1), w = a.dim(2);
  const int64_t plane = int64_t(h) * w;
  std::vector<T> out(a.data().size());
  for (int p = 0; p < k; ++p) {
    const T* x0 = a.data().data() + int64_t(2 * p) * plane;
    const T* x1 = x0 + plane;
    T* y0 = out.data() + int64_t(2 * p) * plane;
    T* y1 = y0 + plane;
    for (int64_t i = 0; i < plane; ++i) {
      T m = std::max(x0[i], x1[i]);
      T e0 = std::exp(x0[i] - m), e1 = std::exp(x1[i] - m);
      T denom = e0 + e1;
      y0[i] = e0 / denom;
      y1[i] = e1 / denom;
    }
  }
  auto y_copy = std::make_shared<std::vector<T>>(out);
  return make_op<T>(a.shape(), std::move(out), {a},
                    [a, y_copy, k, plane](TensorNode<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      auto& g = a.grad();
                      for (int p = 0; p < k; ++p) {
                        const T* y0 = y_copy->data() + int64_t(2 * p) * plane;
                        const T* y1 = y0 + plane;
                        const T* d0 = n.grad.data() + int64_t(2 * p) * plane;
                        const T* d1 = d0 + plane;
                        T* g0 = g.data() + int64_t(2 * p) * plane;
                        T* g1 = g0 + plane;
                        for (int64_t i = 0; i < plane; ++i) {
                          T dot = d0[i] * y0[i] + d1[i] * y1[i];
                          g0[i] += y0[i] * (d0[i] - dot);
                          g1[i] += y1[i] * (d1[i] - dot);
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
  Parameter<T> w, b;
  std::pair<int, int> pad{0, 0};

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int cin, int cout, int kh, int kw,
              std::pair<int, int> padding, LearningGroup group, double init_std,
              Rng& rng)
      : pad(padding) {
    Tensor<T> tw = Tensor<T>::zeros({cout, cin, kh, kw});
    if (init_std < 0)
      fill_he_normal(tw, cin * kh * kw, rng);  // negative std selects He init
    else
      fill_normal(tw, 0.0, init_std, rng);
    w = Parameter<T>(name + ".w", std::move(tw), group);
    b = Parameter<T>(name + ".b", Tensor<T>::zeros({cout}), group);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, w.value, b.value, pad, {1, 1});
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct LinearLayer {
  Parameter<T> w, b;

  LinearLayer() = default;
  LinearLayer(const std::string& name, int din, int dout, LearningGroup group,
              double init_std, Rng& rng) {
    Tensor<T> tw = Tensor<T>::zeros({dout, din});
    fill_normal(tw, 0.0, init_std, rng);
    w = Parameter<T>(name + ".w", std::move(tw), group);
    b = Parameter<T>(name + ".b", Tensor<T>::zeros({dout}), group);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w.value, b.value); }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

// 3x3/pad-1 convolution stages separated by exactly two 2x2 max pools, so the
// output grid is 1/4 of the input in each axis.
template <typename T>
struct Backbone {
  std::vector<Conv2dLayer<T>> convs;
  std::vector<int> pool_after;  // conv indices followed by a pool
  int out_channels = 0;

  Backbone() = default;
  Backbone(const std::vector<std::vector<int>>& stages, LearningGroup group, Rng& rng) {
    check_arg(stages.size() == 3, "backbone: expected 3 stages (2 pooling layers)");
    int cin = 3;
    int conv_idx = 0;
    for (size_t s = 0; s < stages.size(); ++s) {
      check_arg(!stages[s].empty(), "backbone: empty stage");
      for (int cout : stages[s]) {
        check_arg(cout > 0, "backbone: non-positive channel count");
        convs.emplace_back("backbone.conv" + std::to_string(conv_idx), cin, cout, 3,
                           3, std::pair<int, int>{1, 1}, group, -1.0, rng);
        cin = cout;
        ++conv_idx;
      }
      if (s + 1 < stages.size()) pool_after.push_back(conv_idx - 1);
    }
    out_channels = cin;
  }

  Tensor<T> forward(const Tensor<T>& image) const {
    check_arg(image.ndim() == 3 && image.dim(0) == 3,
              "backbone: input must be [3,H,W]");
    check_arg(image.dim(1) % 4 == 0 && image.dim(2) % 4 == 0,
              "backbone: H and W must be divisible by 4; resize/pad the image first "
              "(see resize_policy)");
    Tensor<T> x = image;
    size_t next_pool = 0;
    for (size_t i = 0; i < convs.size(); ++i) {
      x = relu(convs[i].forward(x));
      if (next_pool < pool_after.size() && pool_after[next_pool] == int(i)) {
        x = maxpool2d(x, {2, 2}, {2, 2});
        ++next_pool;
      }
    }
    return x;
  }

  void collect(ParamRefs<T>& out) {
    for (auto& c : convs) c.collect(out);
  }
};

// ---------------------------------------------------------------------------
// RPN head
// ---------------------------------------------------------------------------

template <typename T>
struct RpnOutput {
  Tensor<T> probs;    // [2k,h,w], each channel pair softmaxed
  Tensor<T> offsets;  // [4k,h,w]
};

// Two 256-channel rectangle filters (3x5 and 1x3) padded to preserve h x w,
// concatenated into a 512-channel feature, then sibling 1x1 projections for
// the 2k scores and 4k offsets.
template <typename T>
struct RpnHead {
  Conv2dLayer<T> rect_a;  // 3x5, pad (1,2)
  Conv2dLayer<T> rect_b;  // 1x3, pad (0,1)
  Conv2dLayer<T> cls;     // 1x1 -> 2k
  Conv2dLayer<T> reg;     // 1x1 -> 4k
  int k = 0;

  static constexpr int kRectChannels = 256;

  RpnHead() = default;
  RpnHead(int in_channels, int anchors_per_cell, double init_std, Rng& rng)
      : k(anchors_per_cell) {
    rect_a = Conv2dLayer<T>("rpn.rect_a", in_channels, kRectChannels, 3, 5, {1, 2},
                            LearningGroup::kFresh, init_std, rng);
    rect_b = Conv2dLayer<T>("rpn.rect_b", in_channels, kRectChannels, 1, 3, {0, 1},
                            LearningGroup::kFresh, init_std, rng);
    cls = Conv2dLayer<T>("rpn.cls", 2 * kRectChannels, 2 * k, 1, 1, {0, 0},
                         LearningGroup::kFresh, init_std, rng);
    reg = Conv2dLayer<T>("rpn.reg", 2 * kRectChannels, 4 * k, 1, 1, {0, 0},
                         LearningGroup::kFresh, init_std, rng);
  }

  RpnOutput<T> forward(const Tensor<T>& features) const {
    Tensor<T> fa = rect_a.forward(features);
    Tensor<T> fb = rect_b.forward(features);
    Tensor<T> f = relu(concat_axis0(fa, fb));  // 512 channels
    RpnOutput<T> out;
    out.probs = softmax_pairs(cls.forward(f));
    out.offsets = reg.forward(f);
    return out;
  }

  void collect(ParamRefs<T>& out) {
    rect_a.collect(out);
    rect_b.collect(out);
    cls.collect(out);
    reg.collect(out);
  }
};

// anchor list index -> (cell_y, cell_x, scale slot) for the standard
// generate_anchors ordering
inline std::array<int, 3> anchor_cell(int anchor_index, int feat_w, int k) {
  const int a = anchor_index % k;
  const int cell = anchor_index / k;
  return {cell / feat_w, cell % feat_w, a};
}

template <typename T>
struct RpnLossParts {
  Tensor<T> total;
  double cls = 0, reg = 0;
  int positives = 0;
};

// Eq-style two-term loss: mean binary classification loss over the sampled
// anchors plus smooth-L1 over positive anchors normalized by their count.
// With zero positives the regression term is defined as 0.
template <typename T>
RpnLossParts<T> rpn_loss(const RpnOutput<T>& rpn,
                         const std::vector<AnchorAssignment>& assignments) {
  const int k = rpn.probs.dim(0) / 2;
  const int h = rpn.probs.dim(1), w = rpn.probs.dim(2);
  const int64_t plane = int64_t(h) * w;
  const int n = int(assignments.size());
  check_arg(n > 0, "rpn_loss: empty assignment batch");

  std::vector<int64_t> prob_idx;
  prob_idx.reserve(size_t(n) * 2);
  std::vector<int> labels(size_t(n));
  std::vector<int64_t> reg_idx;
  std::vector<T> reg_targets;
  for (int i = 0; i < n; ++i) {
    const auto& as = assignments[size_t(i)];
    auto [cy, cx, a] = anchor_cell(as.anchor_index, w, k);
    check_arg(cy >= 0 && cy < h && cx >= 0 && cx < w,
              "rpn_loss: anchor index outside score map");
    const int64_t at = int64_t(cy) * w + cx;
    prob_idx.push_back(int64_t(2 * a) * plane + at);
    prob_idx.push_back(int64_t(2 * a + 1) * plane + at);
    labels[size_t(i)] = as.role == AnchorRole::kPositive ? 1 : 0;
    if (as.role == AnchorRole::kPositive) {
      for (int d = 0; d < 4; ++d)
        reg_idx.push_back(int64_t(4 * a + d) * plane + at);
      reg_targets.push_back(T(as.target.tx));
      reg_targets.push_back(T(as.target.ty));
      reg_targets.push_back(T(as.target.tw));
      reg_targets.push_back(T(as.target.th));
    }
  }

  RpnLossParts<T> parts;
  parts.positives = int(reg_idx.size() / 4);
  Tensor<T> probs_n2 = gather(rpn.probs, std::move(prob_idx), {n, 2});
  Tensor<T> cls_loss = binary_cross_entropy(probs_n2, labels);
  parts.cls = double(cls_loss.item());
  if (parts.positives > 0) {
    Tensor<T> pred = gather(rpn.offsets, std::move(reg_idx), {parts.positives, 4});
    Tensor<T> target = Tensor<T>::of({parts.positives, 4}, std::move(reg_targets));
    Tensor<T> reg_loss = scale(smooth_l1(pred, target), T(1.0 / parts.positives));
    parts.reg = double(reg_loss.item());
    parts.total = add(cls_loss, reg_loss);
  } else {
    parts.total = cls_loss;
  }
  return parts;
}

// Decodes every anchor with its predicted offsets, clips to the image, drops
// degenerate boxes, and returns the NMS-filtered top proposals. Scores are
// pre-capped to the best pre_nms_top_n before the quadratic NMS pass.
template <typename T>
std::vector<ScoredBox> generate_proposals(const RpnOutput<T>& rpn,
                                          const std::vector<Box>& anchors,
                                          double img_w, double img_h,
                                          double nms_iou, int top_n,
                                          int pre_nms_top_n = 2000) {
  const int k = rpn.probs.dim(0) / 2;
  const int h = rpn.probs.dim(1), w = rpn.probs.dim(2);
  const int64_t plane = int64_t(h) * w;
  check_arg(int(anchors.size()) == int(plane) * k,
            "generate_proposals: anchor count does not match score map");
  std::vector<int> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  auto score_of = [&](int idx) {
    auto [cy, cx, a] = anchor_cell(idx, w, k);
    return double(rpn.probs.data()[size_t((2 * a + 1) * plane + int64_t(cy) * w + cx)]);
  };
  if (int(order.size()) > pre_nms_top_n) {
    std::nth_element(order.begin(), order.begin() + pre_nms_top_n, order.end(),
                     [&](int a, int b) {
                       double sa = score_of(a), sb = score_of(b);
                       return sa > sb || (sa == sb && a < b);
                     });
    order.resize(size_t(pre_nms_top_n));
    std::sort(order.begin(), order.end());
  }
  std::vector<ScoredBox> candidates;
  candidates.reserve(order.size());
  for (int idx : order) {
    auto [cy, cx, a] = anchor_cell(idx, w, k);
    const int64_t at = int64_t(cy) * w + cx;
    RegressionOffsets t;
    t.tx = double(rpn.offsets.data()[size_t((4 * a + 0) * plane + at)]);
    t.ty = double(rpn.offsets.data()[size_t((4 * a + 1) * plane + at)]);
    t.tw = double(rpn.offsets.data()[size_t((4 * a + 2) * plane + at)]);
    t.th = double(rpn.offsets.data()[size_t((4 * a + 3) * plane + at)]);
    Box b = decode_offsets(t, anchors[size_t(idx)], {{img_w, img_h}});
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    candidates.push_back({b, score_of(idx)});
  }
  auto kept = nms(candidates, nms_iou);
  if (int(kept.size()) > top_n) kept.resize(size_t(top_n));
  return kept;
}

// ---------------------------------------------------------------------------
// RoI pooling
// ---------------------------------------------------------------------------

struct RoiBinGrid {
  std::vector<int> row_lo, row_hi;  // [lo,hi) cell ranges per output row
  std::vector<int> col_lo, col_hi;
};

// Projects an image-coordinate RoI onto the feature grid (divide by stride)
// and splits it into gh x gw bins with rounded edges. Bins that round to
// empty fall back to the nearest valid cell.
inline RoiBinGrid project_roi_bins(const Box& roi, int stride, int feat_h,
                                   int feat_w, int gh = 4, int gw = 20) {
  require_valid(roi, "roi_pool");
  const double fx1 = roi.x1 / stride, fx2 = roi.x2 / stride;
  const double fy1 = roi.y1 / stride, fy2 = roi.y2 / stride;
  if (fx2 <= 0 || fy2 <= 0 || fx1 >= feat_w || fy1 >= feat_h)
    throw std::invalid_argument("roi_pool: RoI lies fully outside the feature map");
  auto round_half_up = [](double v) { return int(std::floor(v + 0.5)); };
  auto make_edges = [&](double lo, double hi, int bins, int limit,
                        std::vector<int>& out_lo, std::vector<int>& out_hi) {
    const double span = hi - lo;
    for (int i = 0; i < bins; ++i) {
      int e0 = round_half_up(lo + span * i / bins);
      int e1 = round_half_up(lo + span * (i + 1) / bins);
      e0 = std::clamp(e0, 0, limit - 1);
      e1 = std::clamp(e1, e0 + 1, limit);
      if (e1 <= e0) e1 = e0 + 1;
      out_lo.push_back(e0);
      out_hi.push_back(e1);
    }
  };
  RoiBinGrid g;
  make_edges(fy1, fy2, gh, feat_h, g.row_lo, g.row_hi);
  make_edges(fx1, fx2, gw, feat_w, g.col_lo, g.col_hi);
  return g;
}

// Max-pools each bin of the projected RoI. RoI coordinates are plain numbers,
// not graph nodes, so no gradient can reach them; the feature gradient routes
// to each bin's argmax cell.
template <typename T>
Tensor<T> roi_pool(const Tensor<T>& features, const Box& roi, int stride,
                   int gh = 4, int gw = 20) {
  check_arg(features.ndim() == 3, "roi_pool: features must be [C,h,w]");
  const int C = features.dim(0), h = features.dim(1), w = features.dim(2);
  RoiBinGrid grid = project_roi_bins(roi, stride, h, w, gh, gw);
  std::vector<T> out(size_t(C) * gh * gw);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const T* src = features.data().data();
  for (int c = 0; c < C; ++c) {
    const int64_t base = int64_t(c) * h * w;
    for (int by = 0; by < gh; ++by) {
      for (int bx = 0; bx < gw; ++bx) {
        int64_t best_idx = -1;
        T best = T(0);
        for (int y = grid.row_lo[size_t(by)]; y < grid.row_hi[size_t(by)]; ++y) {
          for (int x = grid.col_lo[size_t(bx)]; x < grid.col_hi[size_t(bx)]; ++x) {
            int64_t at = base + int64_t(y) * w + x;
            if (best_idx < 0 || src[at] > best) {
              best = src[at];
              best_idx = at;
            }
          }
        }
        size_t o = size_t(c) * gh * gw + size_t(by) * gw + bx;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  return make_op<T>({C, gh, gw}, std::move(out), {features},
                    [features, argmax](TensorNode<T>& n) mutable {
                      if (!features.requires_grad()) return;
                      auto& g = features.grad();
                      for (size_t o = 0; o < argmax->size(); ++o)
                        g[size_t((*argmax)[o])] += n.grad[o];
                    });
}

// ---------------------------------------------------------------------------
// Detection head
// ---------------------------------------------------------------------------

template <typename T>
struct DetectionOutput {
  Tensor<T> cls_probs;  // [1,2], softmaxed
  Tensor<T> offsets;    // [1,4]
};

// flatten -> FC -> ReLU -> dropout -> FC -> ReLU -> dropout -> sibling heads
template <typename T>
struct DetectionHead {
  LinearLayer<T> fc1, fc2, cls, reg;
  double dropout_rate = 0.5;

  DetectionHead() = default;
  DetectionHead(int in_channels, int grid_h, int grid_w, int fc_width,
                double dropout, double init_std, Rng& rng)
      : dropout_rate(dropout) {
    const int flat = in_channels * grid_h * grid_w;
    fc1 = LinearLayer<T>("det.fc1", flat, fc_width, LearningGroup::kFresh, init_std, rng);
    fc2 = LinearLayer<T>("det.fc2", fc_width, fc_width, LearningGroup::kFresh, init_std, rng);
    cls = LinearLayer<T>("det.cls", fc_width, 2, LearningGroup::kFresh, init_std, rng);
    reg = LinearLayer<T>("det.reg", fc_width, 4, LearningGroup::kFresh, init_std, rng);
  }

  DetectionOutput<T> forward(const Tensor<T>& pooled, bool training,
                             uint64_t dropout_seed) const {
    Tensor<T> x = reshape(pooled, {1, int(pooled.numel())});
    x = relu(fc1.forward(x));
    x = dropout(x, dropout_rate, training, mix_seed(dropout_seed, 1));
    x = relu(fc2.forward(x));
    x = dropout(x, dropout_rate, training, mix_seed(dropout_seed, 2));
    DetectionOutput<T> out;
    out.cls_probs = softmax_rows(cls.forward(x));
    out.offsets = reg.forward(x);
    return out;
  }

  void collect(ParamRefs<T>& out) {
    fc1.collect(out);
    fc2.collect(out);
    cls.collect(out);
    reg.collect(out);
  }
};

}  // namespace lpnet
