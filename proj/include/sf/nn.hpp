#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sf/tensor.hpp"

// Layers, parameter registry, Adam, and the checkpoint archive format.

namespace sf {

template <typename T>
class ParamMap {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    auto [it, inserted] = params_.emplace(name, std::move(t));
    if (!inserted) throw TensorError("ParamMap: duplicate parameter " + name);
    return it->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("ParamMap: unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("ParamMap: unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [k, v] : params_) v.zero_grad();
  }

  void set_trainable_by_prefix(const std::string& prefix, bool trainable) {
    for (auto& [k, v] : params_) {
      if (k.rfind(prefix, 0) == 0) v.set_requires_grad(trainable);
    }
  }

  // FNV-1a over raw value bytes of parameters matching a prefix; used to
  // assert that frozen parameters never move.
  uint64_t checksum(const std::string& prefix = "") const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& [k, v] : params_) {
      if (!prefix.empty() && k.rfind(prefix, 0) != 0) continue;
      const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
      const size_t nb = v.values().size() * sizeof(T);
      for (size_t i = 0; i < nb; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParamMap<T>& pm, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
         T weight_scale = T(-1)) {
    const T std = weight_scale > T(0) ? weight_scale
                                      : static_cast<T>(std::sqrt(2.0 / static_cast<double>(in)));
    weight = pm.add(prefix + ".w", Tensor<T>::randn({in, out}, rng, std));
    bias = pm.add(prefix + ".b", Tensor<T>::zeros({out}));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return matmul(x, weight) + reshape(bias, {1, bias.numel()});
  }
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // [cout, cin, k, k]
  Tensor<T> bias;    // [cout]
  int64_t pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(ParamMap<T>& pm, const std::string& prefix, int64_t cin, int64_t cout, int64_t k,
              int64_t pad_, Rng& rng, T weight_scale = T(-1)) {
    const double fan_in = static_cast<double>(cin * k * k);
    const T std = weight_scale > T(0) ? weight_scale : static_cast<T>(std::sqrt(2.0 / fan_in));
    weight = pm.add(prefix + ".w", Tensor<T>::randn({cout, cin, k, k}, rng, std));
    bias = pm.add(prefix + ".b", Tensor<T>::zeros({cout}));
    pad = pad_;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, pad); }
};

// Plain ReLU perceptron over [n, in] batches.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(ParamMap<T>& pm, const std::string& prefix, const std::vector<int64_t>& dims, Rng& rng) {
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      layers.emplace_back(pm, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h);
      if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
  }
};

// ---------------------------------------------------------------------------
// Adam (bias-corrected). Frozen parameters are skipped.
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(ParamMap<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw TensorError("adam: lr must be positive, got " + std::to_string(lr));
  }

  void set_lr(double lr) {
    if (lr <= 0.0) throw TensorError("adam: lr must be positive, got " + std::to_string(lr));
    lr_ = lr;
  }
  double lr() const { return lr_; }
  int64_t step_count() const { return t_; }

  void zero_grad() { params_->zero_grad(); }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : *params_) {
      if (!p.requires_grad()) continue;
      const auto& g = p.grad();
      auto& st = state_[name];
      if (st.m.size() != g.size()) {
        st.m.assign(g.size(), 0.0);
        st.v.assign(g.size(), 0.0);
      }
      T* w = p.data();
      for (size_t i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * gi;
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  struct State {
    std::vector<double> m, v;
  };
  ParamMap<T>* params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, State> state_;
};

// ---------------------------------------------------------------------------
// Checkpoint archive: a single file mapping parameter names to shape + raw
// little-endian values, with a version header and a free-form JSON meta
// blob.
// ---------------------------------------------------------------------------

namespace ckpt {

constexpr char kMagic[8] = {'S', 'F', 'C', 'K', 'P', 'T', '0', '1'};

struct Entry {
  Shape shape;
  int dtype = 0;  // 0 = f32, 1 = f64
  std::vector<double> data;
};

template <typename V>
void write_pod(std::ofstream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
void read_pod(std::ifstream& is, V& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
}

template <typename T>
void save(const std::string& path, const ParamMap<T>& params, const std::string& meta_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, 8);
  write_pod<uint32_t>(os, 1u);
  write_pod<uint32_t>(os, static_cast<uint32_t>(meta_json.size()));
  os.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
  write_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, sizeof(T) == 8 ? 1 : 0);
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_pod<int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.values().size() * sizeof(T)));
  }
  if (!os) throw TensorError("checkpoint: write failed: " + path);
}

inline std::map<std::string, Entry> read_all(const std::string& path, std::string* meta_json) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw TensorError("checkpoint: bad magic in " + path);
  uint32_t version = 0, meta_len = 0, count = 0;
  read_pod(is, version);
  if (version != 1) throw TensorError("checkpoint: unsupported version");
  read_pod(is, meta_len);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (meta_json) *meta_json = meta;
  read_pod(is, count);
  std::map<std::string, Entry> out;
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint8_t dtype = 0, ndim = 0;
    read_pod(is, dtype);
    read_pod(is, ndim);
    Entry ent;
    ent.dtype = dtype;
    for (uint8_t d = 0; d < ndim; ++d) {
      int64_t dim = 0;
      read_pod(is, dim);
      ent.shape.push_back(dim);
    }
    const int64_t n = shape_numel(ent.shape);
    ent.data.resize(static_cast<size_t>(n));
    if (dtype == 1) {
      is.read(reinterpret_cast<char*>(ent.data.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      std::vector<float> tmp(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(tmp.data()),
              static_cast<std::streamsize>(n * sizeof(float)));
      for (int64_t i = 0; i < n; ++i) ent.data[static_cast<size_t>(i)] = tmp[static_cast<size_t>(i)];
    }
    if (!is) throw TensorError("checkpoint: truncated file: " + path);
    out.emplace(std::move(name), std::move(ent));
  }
  return out;
}

// Loads values into an existing parameter set by name; shapes must match.
template <typename T>
void load_into(ParamMap<T>& params, const std::string& path, std::string* meta_json = nullptr,
               bool allow_missing = false) {
  auto entries = read_all(path, meta_json);
  for (auto& [name, t] : params) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      if (allow_missing) continue;
      throw TensorError("checkpoint: parameter missing from file: " + name);
    }
    if (it->second.shape != t.shape())
      throw TensorError("checkpoint: shape mismatch for " + name + ": file " +
                        shape_str(it->second.shape) + " vs model " + shape_str(t.shape()));
    T* w = t.data();
    for (size_t i = 0; i < it->second.data.size(); ++i) w[i] = static_cast<T>(it->second.data[i]);
  }
}

}  // namespace ckpt
}  // namespace sf
