#pragma once

// Parameters, initialization, the Adam optimizer, and the checkpoint
// container shared by all network modules.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lpnet/rng.hpp"
#include "lpnet/tensor.hpp"

namespace lpnet {

// Which of the two learning rates applies: the rate used for the layers that
// stand in for the pre-trained backbone, or the rate for freshly initialized
// layers (which follows the halving schedule).
enum class LearningGroup { kPretrainAnalog, kFresh };

template <typename T>
struct Parameter {
  Tensor<T> value;
  std::string name;
  LearningGroup group = LearningGroup::kFresh;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, LearningGroup g)
      : value(std::move(v)), name(std::move(n)), group(g) {
    value.set_requires_grad(true);
  }

  int64_t numel() const { return value.numel(); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

template <typename T>
void check_unique_names(const ParamRefs<T>& params) {
  std::set<std::string> seen;
  for (auto* p : params)
    check_arg(seen.insert(p->name).second, "duplicate parameter name: " + p->name);
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double stddev, Rng& rng) {
  for (auto& v : t.data()) v = T(rng.normal(mean, stddev));
}

// He initialization for conv/linear weights feeding ReLUs.
template <typename T>
void fill_he_normal(Tensor<T>& t, int fan_in, Rng& rng) {
  fill_normal(t, 0.0, std::sqrt(2.0 / double(fan_in)), rng);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  int64_t step = 0;

  void init(int64_t n) {
    m.assign(size_t(n), T(0));
    v.assign(size_t(n), T(0));
    step = 0;
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update, in place. The gradient is read from the
// parameter's accumulated grad buffer.
template <typename T>
void adam_step(Parameter<T>& p, AdamState<T>& s, double lr,
               const AdamHyper& hp = {}) {
  check_arg(lr > 0.0, "adam_step: learning rate must be positive");
  check_arg(int64_t(s.m.size()) == p.numel() && int64_t(s.v.size()) == p.numel(),
            "adam_step: state not initialized for parameter " + p.name);
  s.step += 1;
  const double b1 = hp.beta1, b2 = hp.beta2;
  const double c1 = 1.0 - std::pow(b1, double(s.step));
  const double c2 = 1.0 - std::pow(b2, double(s.step));
  auto& data = p.value.data();
  auto& grad = p.value.grad();
  for (size_t i = 0; i < data.size(); ++i) {
    double g = double(grad[i]);
    double m = b1 * double(s.m[i]) + (1.0 - b1) * g;
    double v = b2 * double(s.v[i]) + (1.0 - b2) * g * g;
    s.m[i] = T(m);
    s.v[i] = T(v);
    data[i] -= T(lr * (m / c1) / (std::sqrt(v / c2) + hp.epsilon));
  }
}

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(const ParamRefs<T>& params, AdamHyper hp = {}) : hp_(hp) {
    states_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) states_[i].init(params[i]->numel());
  }

  void zero_grad(const ParamRefs<T>& params) {
    for (auto* p : params) p->value.zero_grad();
  }

  // frozen (masked) parameters are skipped entirely: no update, no state decay
  void step(const ParamRefs<T>& params, double lr_pretrain, double lr_fresh,
            const std::vector<char>* frozen = nullptr) {
    check_arg(params.size() == states_.size(), "optimizer/parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
      if (frozen && (*frozen)[i]) continue;
      double lr = params[i]->group == LearningGroup::kPretrainAnalog ? lr_pretrain
                                                                     : lr_fresh;
      adam_step(*params[i], states_[i], lr, hp_);
    }
  }

  const AdamHyper& hyper() const { return hp_; }
  AdamState<T>& state(size_t i) { return states_[i]; }

 private:
  AdamHyper hp_;
  std::vector<AdamState<T>> states_;
};

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------
// Self-describing binary file: magic, format version, a JSON header carrying
// the model configuration (including the alphabet), then one record per
// parameter with name, dtype, shape and raw little-endian payload. Writing
// the same state twice produces byte-identical files.

constexpr char kCheckpointMagic[8] = {'L', 'P', 'N', 'E', 'T', 'C', 'K', '1'};
constexpr uint32_t kCheckpointVersion = 1;

struct ParamBlob {
  std::vector<int> shape;
  uint8_t dtype = 8;  // 4 = float32, 8 = float64
  std::vector<double> values;
};

struct Checkpoint {
  std::string header_json;
  std::vector<std::pair<std::string, ParamBlob>> params;
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <typename V>
void write_pod(std::ostream& os, V v) {
  write_bytes(os, &v, sizeof(V));
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
}

template <typename V>
V read_pod(std::istream& is) {
  V v;
  read_bytes(is, &v, sizeof(V));
  return v;
}

}  // namespace detail

inline void save_checkpoint_blobs(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  detail::write_bytes(os, kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  detail::write_pod<uint64_t>(os, ck.header_json.size());
  detail::write_bytes(os, ck.header_json.data(), ck.header_json.size());
  detail::write_pod<uint64_t>(os, ck.params.size());
  for (const auto& [name, blob] : ck.params) {
    detail::write_pod<uint32_t>(os, uint32_t(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    detail::write_pod<uint8_t>(os, blob.dtype);
    detail::write_pod<uint32_t>(os, uint32_t(blob.shape.size()));
    for (int d : blob.shape) detail::write_pod<int64_t>(os, d);
    if (blob.dtype == 4) {
      std::vector<float> tmp(blob.values.begin(), blob.values.end());
      detail::write_bytes(os, tmp.data(), tmp.size() * sizeof(float));
    } else {
      detail::write_bytes(os, blob.values.data(), blob.values.size() * sizeof(double));
    }
  }
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  detail::read_bytes(is, magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  Checkpoint ck;
  uint64_t hlen = detail::read_pod<uint64_t>(is);
  ck.header_json.resize(hlen);
  detail::read_bytes(is, ck.header_json.data(), hlen);
  uint64_t count = detail::read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = detail::read_pod<uint32_t>(is);
    std::string name(nlen, '\0');
    detail::read_bytes(is, name.data(), nlen);
    ParamBlob blob;
    blob.dtype = detail::read_pod<uint8_t>(is);
    uint32_t nd = detail::read_pod<uint32_t>(is);
    int64_t numel = 1;
    for (uint32_t d = 0; d < nd; ++d) {
      int64_t e = detail::read_pod<int64_t>(is);
      blob.shape.push_back(int(e));
      numel *= e;
    }
    blob.values.resize(size_t(numel));
    if (blob.dtype == 4) {
      std::vector<float> tmp(size_t(numel));
      detail::read_bytes(is, tmp.data(), tmp.size() * sizeof(float));
      std::copy(tmp.begin(), tmp.end(), blob.values.begin());
    } else if (blob.dtype == 8) {
      detail::read_bytes(is, blob.values.data(), blob.values.size() * sizeof(double));
    } else {
      throw std::runtime_error("checkpoint: unknown dtype tag");
    }
    ck.params.emplace_back(std::move(name), std::move(blob));
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const std::string& header_json,
                     const ParamRefs<T>& params) {
  Checkpoint ck;
  ck.header_json = header_json;
  for (auto* p : params) {
    ParamBlob blob;
    blob.shape = p->value.shape();
    blob.dtype = sizeof(T) == 4 ? 4 : 8;
    blob.values.assign(p->value.data().begin(), p->value.data().end());
    ck.params.emplace_back(p->name, std::move(blob));
  }
  save_checkpoint_blobs(path, ck);
}

template <typename T>
void restore_params(const Checkpoint& ck, const ParamRefs<T>& params) {
  std::map<std::string, const ParamBlob*> by_name;
  for (const auto& [name, blob] : ck.params) by_name[name] = &blob;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter " + p->name);
    const ParamBlob& blob = *it->second;
    if (blob.shape != p->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name + ": file " +
                               shape_str(blob.shape) + " vs model " +
                               shape_str(p->value.shape()));
    auto& data = p->value.data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = T(blob.values[i]);
  }
}

}  // namespace lpnet
