#pragma once

// The sequence branch: pooled RoI features are reshaped into a length-19
// feature sequence, encoded by a bidirectional LSTM, projected to 37 classes,
// scored with CTC, and decoded with best-path collapse.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lpnet/alphabet.hpp"
#include "lpnet/nn.hpp"
#include "lpnet/tensor.hpp"

namespace lpnet {

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

inline int ctc_adjacent_repeats(const std::vector<int>& label) {
  int r = 0;
  for (size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++r;
  return r;
}

// Negative log probability of the label under the per-step distributions,
// summed over every path the collapse operator maps to the label. Computed
// with the blank-extended forward recursion in log space; unreachable lattice
// cells carry a large finite negative sentinel so no NaN can appear.
template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& q, const std::vector<int>& label, int blank = -1) {
  check_arg(q.ndim() == 2, "ctc_loss: q must be [L, classes]");
  const int L = q.dim(0), C = q.dim(1);
  if (blank < 0) blank = C - 1;
  check_arg(!label.empty(), "ctc_loss: empty label");
  for (int s : label)
    check_arg(s >= 0 && s < C && s != blank, "ctc_loss: label symbol out of range");
  const int S = int(label.size());
  const int need = S + ctc_adjacent_repeats(label);
  check_arg(L >= need, "ctc_loss: infeasible label, needs at least " +
                           std::to_string(need) + " time steps but q has " +
                           std::to_string(L));

  const int E = 2 * S + 1;
  std::vector<int> ext(size_t(E));
  for (int u = 0; u < E; ++u) ext[size_t(u)] = (u % 2 == 0) ? blank : label[size_t(u / 2)];

  Tensor<T> logq = log_clamped(q, T(1e-12));
  const Tensor<T> bottom = Tensor<T>::scalar(T(-1e30));

  std::vector<Tensor<T>> alpha(size_t(E), bottom);
  alpha[0] = pick(logq, int64_t(ext[0]));
  if (E > 1) alpha[1] = pick(logq, int64_t(ext[1]));
  for (int t = 1; t < L; ++t) {
    std::vector<Tensor<T>> next(size_t(E));
    for (int u = 0; u < E; ++u) {
      std::vector<Tensor<T>> terms{alpha[size_t(u)]};
      if (u >= 1) terms.push_back(alpha[size_t(u - 1)]);
      if (u >= 2 && ext[size_t(u)] != blank && ext[size_t(u)] != ext[size_t(u - 2)])
        terms.push_back(alpha[size_t(u - 2)]);
      next[size_t(u)] =
          add(pick(logq, int64_t(t) * C + ext[size_t(u)]), logsumexp(terms));
    }
    alpha = std::move(next);
  }
  std::vector<Tensor<T>> ends{alpha[size_t(E - 1)]};
  if (E >= 2) ends.push_back(alpha[size_t(E - 2)]);
  return scale(logsumexp(ends), T(-1));
}

// Best-path decoding: per-step argmax (ties to the lowest class index),
// then collapse. Returns the label indices and the log path score.
template <typename T>
std::pair<std::vector<int>, double> ctc_best_path_decode(const Tensor<T>& q,
                                                         int blank = -1) {
  check_arg(q.ndim() == 2, "ctc_best_path_decode: q must be [L, classes]");
  const int L = q.dim(0), C = q.dim(1);
  if (blank < 0) blank = C - 1;
  std::vector<int> path(size_t(L));
  double log_score = 0.0;
  for (int t = 0; t < L; ++t) {
    const T* row = q.data().data() + int64_t(t) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    path[size_t(t)] = best;
    log_score += std::log(std::max(double(row[best]), 1e-12));
  }
  return {collapse_repeats_and_blanks(path, blank), log_score};
}

// ---------------------------------------------------------------------------
// LSTM / BRNN
// ---------------------------------------------------------------------------

template <typename T>
struct LstmState {
  Tensor<T> h;  // [1,U]
  Tensor<T> c;  // [1,U]
};

// Gate layout in the stacked weight matrices: input, forget, candidate, output.
template <typename T>
struct LstmCellParams {
  Parameter<T> wx;  // [4U, D]
  Parameter<T> wh;  // [4U, U]
  Parameter<T> b;   // [4U]
  int units = 0;

  LstmCellParams() = default;
  LstmCellParams(const std::string& name, int input_dim, int u, double init_std,
                 double forget_bias, Rng& rng)
      : units(u) {
    Tensor<T> twx = Tensor<T>::zeros({4 * u, input_dim});
    Tensor<T> twh = Tensor<T>::zeros({4 * u, u});
    fill_normal(twx, 0.0, init_std, rng);
    fill_normal(twh, 0.0, init_std, rng);
    Tensor<T> tb = Tensor<T>::zeros({4 * u});
    for (int i = u; i < 2 * u; ++i) tb.data()[size_t(i)] = T(forget_bias);
    wx = Parameter<T>(name + ".wx", std::move(twx), LearningGroup::kFresh);
    wh = Parameter<T>(name + ".wh", std::move(twh), LearningGroup::kFresh);
    b = Parameter<T>(name + ".b", std::move(tb), LearningGroup::kFresh);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&wx);
    out.push_back(&wh);
    out.push_back(&b);
  }
};

// One LSTM step: gates from an affine map of (x, h), then the standard cell
// and hidden updates.
template <typename T>
LstmState<T> lstm_cell_step(const Tensor<T>& x_row, const LstmState<T>& state,
                            const LstmCellParams<T>& p) {
  const int U = p.units;
  check_arg(x_row.ndim() == 2 && x_row.dim(0) == 1, "lstm_cell_step: x must be [1,D]");
  check_arg(x_row.dim(1) == p.wx.value.dim(1), "lstm_cell_step: input width mismatch");
  Tensor<T> z = add(linear(x_row, p.wx.value, p.b.value), linear(state.h, p.wh.value));
  Tensor<T> gi = sigmoid(slice_cols(z, 0, U));
  Tensor<T> gf = sigmoid(slice_cols(z, U, 2 * U));
  Tensor<T> gc = tanh(slice_cols(z, 2 * U, 3 * U));
  Tensor<T> go = sigmoid(slice_cols(z, 3 * U, 4 * U));
  LstmState<T> next;
  next.c = add(mul(gf, state.c), mul(gi, gc));
  next.h = mul(go, tanh(next.c));
  return next;
}

// Runs one LSTM over the columns of seq ([D,L]) in the given direction and
// returns the per-step hidden rows in left-to-right order.
template <typename T>
std::vector<Tensor<T>> lstm_run(const Tensor<T>& seq, const LstmCellParams<T>& p,
                                bool backward_direction) {
  const int D = seq.dim(0), L = seq.dim(1);
  std::vector<Tensor<T>> xs(size_t(L));
  for (int t = 0; t < L; ++t) {
    std::vector<int64_t> idx(size_t(D));
    for (int d = 0; d < D; ++d) idx[size_t(d)] = int64_t(d) * L + t;
    xs[size_t(t)] = gather(seq, std::move(idx), {1, D});
  }
  LstmState<T> st{Tensor<T>::zeros({1, p.units}), Tensor<T>::zeros({1, p.units})};
  std::vector<Tensor<T>> hs(size_t(L));
  for (int k = 0; k < L; ++k) {
    int t = backward_direction ? L - 1 - k : k;
    st = lstm_cell_step(xs[size_t(t)], st, p);
    hs[size_t(t)] = st.h;
  }
  return hs;
}

// ---------------------------------------------------------------------------
// Recognition head
// ---------------------------------------------------------------------------

template <typename T>
struct RecognitionHead {
  Parameter<T> conv1_w, conv1_b;  // 3x3, pad 1
  Parameter<T> conv2_w, conv2_b;  // 2x2, pad 0
  LstmCellParams<T> lstm_fwd, lstm_bwd;
  Parameter<T> proj_w, proj_b;  // [37, 2U]
  int channels = 0, units = 0;

  RecognitionHead() = default;
  RecognitionHead(int in_channels, int rec_channels, int lstm_units, double init_std,
                  Rng& rng)
      : channels(rec_channels), units(lstm_units) {
    Tensor<T> w1 = Tensor<T>::zeros({rec_channels, in_channels, 3, 3});
    Tensor<T> w2 = Tensor<T>::zeros({rec_channels, rec_channels, 2, 2});
    fill_normal(w1, 0.0, init_std, rng);
    fill_normal(w2, 0.0, init_std, rng);
    conv1_w = Parameter<T>("rec.conv1.w", std::move(w1), LearningGroup::kFresh);
    conv1_b = Parameter<T>("rec.conv1.b", Tensor<T>::zeros({rec_channels}),
                           LearningGroup::kFresh);
    conv2_w = Parameter<T>("rec.conv2.w", std::move(w2), LearningGroup::kFresh);
    conv2_b = Parameter<T>("rec.conv2.b", Tensor<T>::zeros({rec_channels}),
                           LearningGroup::kFresh);
    lstm_fwd = LstmCellParams<T>("rec.lstm_f", rec_channels, lstm_units, init_std,
                                 1.0, rng);
    lstm_bwd = LstmCellParams<T>("rec.lstm_b", rec_channels, lstm_units, init_std,
                                 1.0, rng);
    Tensor<T> wp = Tensor<T>::zeros({Alphabet::kNumClasses, 2 * lstm_units});
    fill_normal(wp, 0.0, init_std, rng);
    proj_w = Parameter<T>("rec.proj.w", std::move(wp), LearningGroup::kFresh);
    proj_b = Parameter<T>("rec.proj.b", Tensor<T>::zeros({Alphabet::kNumClasses}),
                          LearningGroup::kFresh);
  }

  void collect(ParamRefs<T>& out) {
    for (auto* p : {&conv1_w, &conv1_b, &conv2_w, &conv2_b}) out.push_back(p);
    lstm_fwd.collect(out);
    lstm_bwd.collect(out);
    out.push_back(&proj_w);
    out.push_back(&proj_b);
  }

  // 4x20 pooled grid -> [D,19] feature sequence:
  // conv3x3(pad 1) -> ReLU -> maxpool (2,1) -> conv2x2 -> ReLU, then the
  // [D,1,19] map is flattened along its unit height.
  Tensor<T> encode_region_sequence(const Tensor<T>& pooled) const {
    check_arg(pooled.ndim() == 3 && pooled.dim(1) == 4 && pooled.dim(2) == 20,
              "encode_region_sequence: expected [C,4,20] pooled features, got " +
                  shape_str(pooled.shape()));
    Tensor<T> x = relu(conv2d(pooled, conv1_w.value, conv1_b.value, {1, 1}, {1, 1}));
    x = maxpool2d(x, {2, 1}, {2, 1});
    x = relu(conv2d(x, conv2_w.value, conv2_b.value, {0, 0}, {1, 1}));
    return reshape(x, {x.dim(0), x.dim(2)});
  }

  // forward and backward LSTM passes, hidden states concatenated per step
  Tensor<T> brnn_forward(const Tensor<T>& seq) const {
    check_arg(seq.ndim() == 2 && seq.dim(1) >= 1, "brnn_forward: seq must be [D,L]");
    auto hf = lstm_run(seq, lstm_fwd, false);
    auto hb = lstm_run(seq, lstm_bwd, true);
    const int L = seq.dim(1);
    std::vector<Tensor<T>> cols(size_t(L));
    for (int t = 0; t < L; ++t)
      cols[size_t(t)] = concat_axis0(reshape(hf[size_t(t)], {units}),
                                     reshape(hb[size_t(t)], {units}));
    return assemble_cols(cols);  // [2U, L]
  }

  // per-step affine map to 37 logits, then row softmax -> [L,37]
  Tensor<T> project_probs(const Tensor<T>& brnn_out) const {
    Tensor<T> x = transpose2d(brnn_out);  // [L, 2U]
    return softmax_rows(linear(x, proj_w.value, proj_b.value));
  }

  Tensor<T> recognize(const Tensor<T>& pooled) const {
    return project_probs(brnn_forward(encode_region_sequence(pooled)));
  }
};

}  // namespace lpnet
