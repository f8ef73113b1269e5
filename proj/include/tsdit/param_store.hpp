#ifndef TSDIT_PARAM_STORE_HPP_
#define TSDIT_PARAM_STORE_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsdit/common.hpp"
#include "tsdit/tensor.hpp"

namespace tsdit {

// ---------------------------------------------------------------------------
// Named parameter map. Creation order is fixed by model construction, so a
// seeded init draws the same values on every run. get_or_create returns an
// existing entry (after a checkpoint load) or initializes a fresh one.
// ---------------------------------------------------------------------------
class ParameterStore {
 public:
  // Uniform(-bound, bound) init; the conventional bound is 1/sqrt(d_in).
  Tensor create(const std::string& name, const Shape& shape, double bound, Rng& rng) {
    if (params_.count(name) != 0) throw StateError("parameter already exists: " + name);
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    t.set_requires_grad(true);
    params_.emplace(name, t);
    return t;
  }

  Tensor create_constant(const std::string& name, const Shape& shape, double value) {
    if (params_.count(name) != 0) throw StateError("parameter already exists: " + name);
    Tensor t = Tensor::full(shape, value);
    t.set_requires_grad(true);
    params_.emplace(name, t);
    return t;
  }

  Tensor get_or_create(const std::string& name, const Shape& shape, double bound, Rng& rng) {
    auto it = params_.find(name);
    if (it == params_.end()) return create(name, shape, bound, rng);
    if (it->second.shape() != shape) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(it->second.shape()) +
                       ", expected " + shape_str(shape));
    }
    return it->second;
  }

  Tensor get_or_create_constant(const std::string& name, const Shape& shape, double value) {
    auto it = params_.find(name);
    if (it == params_.end()) return create_constant(name, shape, value);
    if (it->second.shape() != shape) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(it->second.shape()) +
                       ", expected " + shape_str(shape));
    }
    return it->second;
  }

  Tensor get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("no such parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  // Allocates and zeroes every gradient buffer; called before each backward
  // pass so every parameter counts as populated even if a branch is disabled.
  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  void save_checkpoint(const std::string& path) const {
    nlohmann::json j;
    j["checkpoint_version"] = 1;
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : params_) {
      tensors[name] = {{"shape", t.shape()}, {"data", t.data()}};
    }
    j["parameters"] = tensors;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << j.dump(1) << "\n";
  }

  // Loads values into an empty store (model construction then binds to the
  // loaded tensors via get_or_create) or copies into matching entries.
  void load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("checkpoint parse failure in " + path + ": " + e.what());
    }
    if (!j.contains("checkpoint_version")) {
      throw ParseError("checkpoint missing \"checkpoint_version\": " + path);
    }
    if (j["checkpoint_version"].get<int>() != 1) {
      throw VersionError("unsupported checkpoint_version " +
                         std::to_string(j["checkpoint_version"].get<int>()));
    }
    for (auto& [name, entry] : j.at("parameters").items()) {
      Shape shape = entry.at("shape").get<Shape>();
      std::vector<double> data = entry.at("data").get<std::vector<double>>();
      auto it = params_.find(name);
      if (it == params_.end()) {
        Tensor t = Tensor::from(shape, std::move(data));
        t.set_requires_grad(true);
        params_.emplace(name, t);
      } else {
        if (it->second.shape() != shape) {
          throw ShapeError("checkpoint parameter " + name + " has shape " + shape_str(shape) +
                           ", store expects " + shape_str(it->second.shape()));
        }
        it->second.data() = std::move(data);
      }
    }
  }

 private:
  std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// Adam with bias correction. Moment buffers are keyed by parameter name and
// lazily sized on first use.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  void step(ParameterStore& store) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, param] : store.all()) {
      if (!param.has_grad()) {
        throw StateError("adam_step: missing gradient for parameter \"" + name + "\"");
      }
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(param.numel(), 0.0);
        v.assign(param.numel(), 0.0);
      }
      auto& w = param.data();
      const auto& g = param.grad();
      for (int i = 0; i < param.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (!std::isfinite(w[i])) {
          throw NumericError("adam_step: parameter \"" + name + "\" became non-finite at step " +
                             std::to_string(step_));
        }
      }
      param.zero_grad();
    }
  }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

// ---------------------------------------------------------------------------
// Multi-head attention parameters and the composite op.
// ---------------------------------------------------------------------------

struct MhaParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// zero_out_proj starts the output projection at zero, so attention wired as
// a residual (x + attn(x)) begins as the identity and fades in.
inline MhaParams make_mha_params(ParameterStore& store, const std::string& prefix, int d,
                                 Rng& rng, bool zero_out_proj = false) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  MhaParams p;
  p.wq = store.get_or_create(prefix + ".q.w", {d, d}, bound, rng);
  p.bq = store.get_or_create(prefix + ".q.b", {d}, bound, rng);
  p.wk = store.get_or_create(prefix + ".k.w", {d, d}, bound, rng);
  p.bk = store.get_or_create(prefix + ".k.b", {d}, bound, rng);
  p.wv = store.get_or_create(prefix + ".v.w", {d, d}, bound, rng);
  p.bv = store.get_or_create(prefix + ".v.b", {d}, bound, rng);
  if (zero_out_proj) {
    p.wo = store.get_or_create_constant(prefix + ".out.w", {d, d}, 0.0);
    p.bo = store.get_or_create_constant(prefix + ".out.b", {d}, 0.0);
  } else {
    p.wo = store.get_or_create(prefix + ".out.w", {d, d}, bound, rng);
    p.bo = store.get_or_create(prefix + ".out.b", {d}, bound, rng);
  }
  return p;
}

// Scaled dot-product attention with `heads` heads over token matrices
// q_in:[Nq,d], kv_in:[Nk,d]. Self-attention is the q_in == kv_in case. The
// value reduction is permutation-invariant over keys (see matmul_ordersafe).
inline Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, int heads,
                                   const MhaParams& p) {
  if (q_in.ndim() != 2 || kv_in.ndim() != 2 || q_in.dim(1) != kv_in.dim(1)) {
    throw ShapeError("attention: token shapes " + shape_str(q_in.shape()) + " vs " +
                     shape_str(kv_in.shape()));
  }
  const int d = q_in.dim(1);
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const int dk = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q = linear(q_in, p.wq, p.bq);
  Tensor k = linear(kv_in, p.wk, p.bk);
  Tensor v = linear(kv_in, p.wv, p.bv);
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
    Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
    Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    Tensor weights = softmax(scores);
    head_outs.push_back(matmul_ordersafe(weights, vh));
  }
  return linear(concat_cols(head_outs), p.wo, p.bo);
}

}  // namespace tsdit

#endif  // TSDIT_PARAM_STORE_HPP_
