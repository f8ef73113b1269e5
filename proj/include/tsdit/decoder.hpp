#ifndef TSDIT_DECODER_HPP_
#define TSDIT_DECODER_HPP_

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsdit/param_store.hpp"
#include "tsdit/preprocess.hpp"
#include "tsdit/tensor.hpp"

namespace tsdit {

struct DecoderConfig {
  bool enable_self_attention = true;
  int mlp_hidden = 128;
  int t_future = 80;
  int heads = 4;

  void validate() const {
    if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be >= 1");
    if (t_future < 1) throw ConfigError("t_future must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
  }
};

// Decoded per-agent futures. Positions stay on the gradient tape (the loss
// terms act on them); headings and speeds are plain values derived for
// metrics and export.
struct TrajectoryBundle {
  Tensor deltas;     // [A_p, T_f, 2]
  Tensor positions;  // [A_p, T_f, 2], world-centric frame
  std::vector<std::vector<double>> headings;  // [A_p][T_f], radians in (-pi, pi]
  std::vector<std::vector<double>> speeds;    // [A_p][T_f], m/s, >= 0
};

// positions[a][t] = start[a] + sum_{i<=t} deltas[a][i] (inclusive prefix sum).
inline Tensor integrate_trajectory(const Tensor& start_pos, const Tensor& deltas) {
  if (deltas.ndim() != 3 || deltas.dim(2) != 2) {
    throw ShapeError("integrate_trajectory: deltas must be [A,T,2], got " +
                     shape_str(deltas.shape()));
  }
  const int a_p = deltas.dim(0);
  const int t_f = deltas.dim(1);
  if (start_pos.ndim() != 2 || start_pos.dim(0) != a_p || start_pos.dim(1) != 2) {
    throw ShapeError("integrate_trajectory: start positions must be [A,2], got " +
                     shape_str(start_pos.shape()));
  }
  Tensor flat = deltas.reshape({a_p * t_f, 2});
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(a_p));
  for (int a = 0; a < a_p; ++a) {
    Tensor per_agent = slice_rows(flat, a * t_f, (a + 1) * t_f);
    Tensor start = slice_rows(start_pos, a, a + 1);
    rows.push_back(add(tile_rows(start, t_f), cumsum_rows(per_agent)));
  }
  return concat_rows(rows).reshape({a_p, t_f, 2});
}

inline constexpr double kHeadingEps = 1e-6;  // meters; below this, carry forward

// theta = atan2(dy, dx) per step; near-zero displacements carry the previous
// heading, and step 0 falls back to the provided history heading.
inline std::vector<std::vector<double>> compute_heading(const Tensor& deltas,
                                                        const std::vector<double>& fallback) {
  const int a_p = deltas.dim(0);
  const int t_f = deltas.dim(1);
  if (static_cast<int>(fallback.size()) != a_p) {
    throw ShapeError("compute_heading: need one fallback heading per agent");
  }
  std::vector<std::vector<double>> out(static_cast<size_t>(a_p));
  for (int a = 0; a < a_p; ++a) {
    double carry = fallback[static_cast<size_t>(a)];
    auto& row = out[static_cast<size_t>(a)];
    row.resize(static_cast<size_t>(t_f));
    for (int t = 0; t < t_f; ++t) {
      const double dx = deltas.data()[(a * t_f + t) * 2 + 0];
      const double dy = deltas.data()[(a * t_f + t) * 2 + 1];
      if (std::hypot(dx, dy) > kHeadingEps) carry = wrap_angle(std::atan2(dy, dx));
      row[static_cast<size_t>(t)] = carry;
    }
  }
  return out;
}

// speed = |(dx, dy)| / dt.
inline std::vector<std::vector<double>> compute_speed(const Tensor& deltas, double dt) {
  if (!(dt > 0.0)) throw ConfigError("compute_speed: dt must be > 0");
  const int a_p = deltas.dim(0);
  const int t_f = deltas.dim(1);
  std::vector<std::vector<double>> out(static_cast<size_t>(a_p));
  for (int a = 0; a < a_p; ++a) {
    auto& row = out[static_cast<size_t>(a)];
    row.resize(static_cast<size_t>(t_f));
    for (int t = 0; t < t_f; ++t) {
      const double dx = deltas.data()[(a * t_f + t) * 2 + 0];
      const double dy = deltas.data()[(a * t_f + t) * 2 + 1];
      row[static_cast<size_t>(t)] = std::hypot(dx, dy) / dt;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory decoder: optional self-attention summary over the fused tokens,
// an MLP emitting per-step (dx, dy), and kinematic reconstruction.
// ---------------------------------------------------------------------------
class Decoder {
 public:
  Decoder(ParameterStore& store, const DecoderConfig& cfg, int d_model, Rng& rng)
      : cfg_(cfg), d_model_(d_model) {
    cfg_.validate();
    if (d_model % cfg_.heads != 0) {
      throw ConfigError("decoder: d_model must be divisible by heads");
    }
    const double bd = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double bh = 1.0 / std::sqrt(static_cast<double>(cfg_.mlp_hidden));
    attn_ = make_mha_params(store, "dec.attn", d_model, rng, /*zero_out_proj=*/true);
    w1_ = store.get_or_create("dec.mlp.l1.w", {d_model, cfg_.mlp_hidden}, bd, rng);
    b1_ = store.get_or_create("dec.mlp.l1.b", {cfg_.mlp_hidden}, bd, rng);
    w2_ = store.get_or_create("dec.mlp.l2.w", {cfg_.mlp_hidden, cfg_.t_future * 2}, bh, rng);
    b2_ = store.get_or_create("dec.mlp.l2.b", {cfg_.t_future * 2}, bh, rng);
  }

  const DecoderConfig& config() const { return cfg_; }

  Tensor decode_deltas(const Tensor& fused) const {
    if (fused.ndim() != 2 || fused.dim(1) != d_model_) {
      throw ShapeError("decode_deltas: fused must be [A_p," + std::to_string(d_model_) +
                       "], got " + shape_str(fused.shape()));
    }
    Tensor x = fused;
    if (cfg_.enable_self_attention) {
      x = add(x, multi_head_attention(x, x, cfg_.heads, attn_));
    }
    Tensor h = relu(linear(x, w1_, b1_));
    return linear(h, w2_, b2_).reshape({fused.dim(0), cfg_.t_future, 2});
  }

  TrajectoryBundle decode(const Tensor& fused, const ModelInputs& inputs) const {
    if (inputs.t_future != cfg_.t_future) {
      throw ShapeError("decode: scene horizon_future " + std::to_string(inputs.t_future) +
                       " does not match decoder t_future " + std::to_string(cfg_.t_future));
    }
    TrajectoryBundle out;
    out.deltas = decode_deltas(fused);
    out.positions = integrate_trajectory(predicted_start_positions(inputs), out.deltas);
    std::vector<double> fallback;
    fallback.reserve(inputs.predicted_indices.size());
    for (int ai : inputs.predicted_indices) {
      fallback.push_back(inputs.current_headings[static_cast<size_t>(ai)]);
    }
    out.headings = compute_heading(out.deltas, fallback);
    out.speeds = compute_speed(out.deltas, inputs.dt);
    return out;
  }

 private:
  DecoderConfig cfg_;
  int d_model_;
  MhaParams attn_;
  Tensor w1_, b1_, w2_, b2_;
};

inline nlohmann::json bundle_to_json(const TrajectoryBundle& bundle, const ModelInputs& inputs,
                                     uint64_t sample_seed) {
  nlohmann::json j;
  j["scene_id"] = inputs.scene_id;
  nlohmann::json ids = nlohmann::json::array();
  for (int ai : inputs.predicted_indices) ids.push_back(inputs.agent_ids[static_cast<size_t>(ai)]);
  j["agent_ids"] = ids;
  const int a_p = bundle.positions.dim(0);
  const int t_f = bundle.positions.dim(1);
  nlohmann::json positions = nlohmann::json::array();
  for (int a = 0; a < a_p; ++a) {
    nlohmann::json track = nlohmann::json::array();
    for (int t = 0; t < t_f; ++t) {
      track.push_back({bundle.positions.data()[(a * t_f + t) * 2 + 0],
                       bundle.positions.data()[(a * t_f + t) * 2 + 1]});
    }
    positions.push_back(track);
  }
  j["positions"] = positions;
  j["headings"] = bundle.headings;
  j["speeds"] = bundle.speeds;
  j["sample_seed"] = sample_seed;
  return j;
}

}  // namespace tsdit

#endif  // TSDIT_DECODER_HPP_
