#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "smvp/tensor.hpp"

namespace smvp::diff {

/// Named map of trainable tensors. Names are stable across save/load; every
/// parameter keeps a gradient slot of identical shape.
template <class T>
class ParameterSet {
 public:
  TensorT<T>& create(const std::string& name, Shape shape) {
    if (params_.count(name))
      throw ShapeError("parameter '" + name + "' already exists");
    auto t = TensorT<T>::zeros(std::move(shape), true);
    auto [it, ok] = params_.emplace(name, std::move(t));
    return it->second;
  }

  /// Fan-in-scaled uniform init for conv kernels, seeded per name so the
  /// values do not depend on registration order.
  TensorT<T>& create_conv(const std::string& name, Shape shape, uint64_t seed) {
    auto& t = create(name, shape);
    int64_t fan_in = 1;
    for (size_t i = 1; i < t.shape().size(); ++i) fan_in *= t.shape()[i];
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng(mix_seed(seed, hash_str(name)));
    for (auto& v : t.value()) v = static_cast<T>(rng.uniform(-s, s));
    return t;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  TensorT<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
  }
  const TensorT<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [k, v] : params_) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [k, v] : params_) v.zero_grad();
  }

 private:
  std::map<std::string, TensorT<T>> params_;  // ordered, stable iteration
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moment accumulators plus the shared step counter.
template <class T>
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  std::map<std::string, std::vector<T>>& first_moments() { return m_; }
  std::map<std::string, std::vector<T>>& second_moments() { return v_; }

  /// One bias-corrected Adam update, in place. Aborts on non-finite
  /// gradients, naming the offending parameter.
  void step(ParameterSet<T>& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      const auto& g = p.grad();
      for (T gv : g)
        if (!std::isfinite(static_cast<double>(gv)))
          throw NumericError("adam_step: non-finite gradient in parameter '" +
                             name + "'");
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != g.size()) m.assign(g.size(), T(0));
      if (v.size() != g.size()) v.assign(g.size(), T(0));
      auto& val = p.value();
      for (size_t i = 0; i < g.size(); ++i) {
        const double gd = static_cast<double>(g[i]);
        const double md = cfg_.beta1 * static_cast<double>(m[i]) +
                          (1.0 - cfg_.beta1) * gd;
        const double vd = cfg_.beta2 * static_cast<double>(v[i]) +
                          (1.0 - cfg_.beta2) * gd * gd;
        m[i] = static_cast<T>(md);
        v[i] = static_cast<T>(vd);
        const double mh = md / bc1;
        const double vh = vd / bc2;
        val[i] = static_cast<T>(static_cast<double>(val[i]) -
                                cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, std::vector<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoint container: JSON header + raw little-endian float32 payloads.
//
//   magic "SMVPCKP1" | u32 header bytes | header JSON | entry payloads
//
// Header: { "variant": ..., "config_hash": ..., "step": ...,
//           "entries": [{"name":..., "shape":[...]}, ...] }
// Payloads follow in entry order. Optimizer moments ride along as entries
// named "opt.m.<param>" / "opt.v.<param>" so resumed runs continue exactly.

inline constexpr char kCheckpointMagic[9] = "SMVPCKP1";

struct CheckpointMeta {
  std::string variant;
  std::string config_hash;
  int64_t step = 0;
  nlohmann::json extra;
};

namespace detail {
inline void write_f32(std::ofstream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}
}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params,
                     const AdamState<T>* opt, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["variant"] = meta.variant;
  header["config_hash"] = meta.config_hash;
  header["step"] = meta.step;
  if (!meta.extra.is_null()) header["extra"] = meta.extra;
  nlohmann::json entries = nlohmann::json::array();
  std::vector<std::pair<std::string, const std::vector<T>*>> payloads;
  auto add_entry = [&](const std::string& name, const Shape& shape,
                       const std::vector<T>& data) {
    entries.push_back({{"name", name}, {"shape", shape}});
    payloads.emplace_back(name, &data);
  };
  for (const auto& [name, p] : params) add_entry(name, p.shape(), p.value());
  if (opt) {
    auto& m = const_cast<AdamState<T>*>(opt)->first_moments();
    auto& v = const_cast<AdamState<T>*>(opt)->second_moments();
    for (const auto& [name, p] : params) {
      auto im = m.find(name);
      auto iv = v.find(name);
      if (im != m.end()) add_entry("opt.m." + name, p.shape(), im->second);
      if (iv != v.end()) add_entry("opt.v." + name, p.shape(), iv->second);
    }
    header["opt_step"] = opt->step_count();
  }
  header["entries"] = std::move(entries);
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  os.write(kCheckpointMagic, 8);
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  os.write(reinterpret_cast<const char*>(&hlen), 4);
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto& [name, data] : payloads) {
    std::vector<float> f32(data->size());
    for (size_t i = 0; i < f32.size(); ++i)
      f32[i] = static_cast<float>((*data)[i]);
    detail::write_f32(os, f32);
  }
  if (!os) throw IoError("short write on checkpoint '" + path + "'");
}

template <class T>
CheckpointMeta load_checkpoint(const std::string& path, ParameterSet<T>& params,
                               AdamState<T>* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("bad checkpoint magic in '" + path + "'");
  uint32_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw FormatError("truncated checkpoint header in '" + path + "'");
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded())
    throw FormatError("unparsable checkpoint header in '" + path + "'");

  CheckpointMeta meta;
  meta.variant = header.value("variant", "");
  meta.config_hash = header.value("config_hash", "");
  meta.step = header.value("step", int64_t(0));
  if (header.contains("extra")) meta.extra = header["extra"];

  for (const auto& e : header["entries"]) {
    const std::string name = e["name"];
    Shape shape = e["shape"].get<Shape>();
    const int64_t n = shape_numel(shape);
    std::vector<float> f32(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(f32.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!is)
      throw FormatError("truncated payload for '" + name + "' in '" + path +
                        "'");
    std::vector<T> data(f32.begin(), f32.end());
    if (name.rfind("opt.m.", 0) == 0 || name.rfind("opt.v.", 0) == 0) {
      if (!opt) continue;
      const bool is_m = name[4] == 'm';
      auto& slot = is_m ? opt->first_moments()[name.substr(6)]
                        : opt->second_moments()[name.substr(6)];
      slot = std::move(data);
      continue;
    }
    if (!params.has(name)) {
      params.create(name, shape);
    } else if (!same_shape(params.at(name).shape(), shape)) {
      throw FormatError("checkpoint shape " + shape_str(shape) +
                        " does not match parameter '" + name + "' " +
                        shape_str(params.at(name).shape()));
    }
    params.at(name).value() = std::move(data);
  }
  if (opt && header.contains("opt_step"))
    opt->set_step_count(header["opt_step"].get<int64_t>());
  return meta;
}

}  // namespace smvp::diff
