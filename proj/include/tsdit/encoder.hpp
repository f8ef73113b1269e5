#ifndef TSDIT_ENCODER_HPP_
#define TSDIT_ENCODER_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "tsdit/param_store.hpp"
#include "tsdit/preprocess.hpp"
#include "tsdit/tensor.hpp"

namespace tsdit {

struct EncoderConfig {
  int d_model = 64;
  int heads = 4;
  bool enable_other_agent_former = true;
  bool enable_hd_map_former = true;
  int map_patch_len = 5;
  int former_layers = 1;
  int t_history = 11;

  void validate() const {
    if (d_model < 2 || d_model % 2 != 0) throw ConfigError("d_model must be even and >= 2");
    if (heads < 1 || d_model % heads != 0) {
      throw ConfigError("d_model must be divisible by heads");
    }
    if (map_patch_len < 2) throw ConfigError("map_patch_len must be >= 2");
    if (former_layers < 1) throw ConfigError("former_layers must be >= 1");
    if (t_history < 2) throw ConfigError("t_history must be >= 2");
  }
};

struct SceneEncoding {
  Tensor predicted_tokens;  // [A_p, d_model], after latent injection
  Tensor other_tokens;      // [A_o + T_tl, d_model]
  Tensor map_tokens;        // [M, d_model]
  Tensor fused;             // [A_p, d_model]
};

namespace detail {

struct FormerParams {
  MhaParams self_attn;
  MhaParams cross_attn;
  Tensor out_w, out_b;
};

// The output projection starts at zero: a fresh former is an exact identity
// on its residual stream and only contributes once trained.
inline FormerParams make_former_params(ParameterStore& store, const std::string& prefix, int d,
                                       Rng& rng) {
  FormerParams p;
  p.self_attn = make_mha_params(store, prefix + ".self", d, rng);
  p.cross_attn = make_mha_params(store, prefix + ".cross", d, rng);
  p.out_w = store.get_or_create_constant(prefix + ".out.w", {d, d}, 0.0);
  p.out_b = store.get_or_create_constant(prefix + ".out.b", {d}, 0.0);
  return p;
}

// Shared former structure: self-attention over the queries, cross-attention
// into a context set, output projection plus the residual. An empty context
// skips the cross step.
inline Tensor former_layer(const Tensor& tokens, const Tensor& context, int heads,
                           const FormerParams& p) {
  Tensor self = multi_head_attention(tokens, tokens, heads, p.self_attn);
  Tensor mixed = context.dim(0) > 0 ? multi_head_attention(self, context, heads, p.cross_attn)
                                    : self;
  return add(linear(mixed, p.out_w, p.out_b), tokens);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// World-centric scene encoder: embedding blocks for agents, traffic lights
// and map patches, temporal history attention, and the two scene formers.
// All parameters are created (or re-bound after a checkpoint load) during
// construction, in a fixed order.
// ---------------------------------------------------------------------------
class Encoder {
 public:
  Encoder(ParameterStore& store, const EncoderConfig& cfg, int d_latent, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_model;
    const int half = d / 2;
    const double b2 = 1.0 / std::sqrt(2.0);
    const double b5 = 1.0 / std::sqrt(5.0);
    const double b4 = 1.0 / std::sqrt(4.0);
    const double bd = 1.0 / std::sqrt(static_cast<double>(d));

    pose_w_ = store.get_or_create("enc.agent_embed.pose.w", {2, half}, b2, rng);
    pose_b_ = store.get_or_create("enc.agent_embed.pose.b", {half}, b2, rng);
    feat_w_ = store.get_or_create("enc.agent_embed.feat.w", {5, half}, b5, rng);
    feat_b_ = store.get_or_create("enc.agent_embed.feat.b", {half}, b5, rng);
    agent_ln_gain_ = store.get_or_create_constant("enc.agent_embed.ln.gain", {d}, 1.0);
    agent_ln_bias_ = store.get_or_create_constant("enc.agent_embed.ln.bias", {d}, 0.0);

    tl_pose_w_ = store.get_or_create("enc.tl_embed.pose.w", {2, half}, b2, rng);
    tl_pose_b_ = store.get_or_create("enc.tl_embed.pose.b", {half}, b2, rng);
    tl_state_w_ = store.get_or_create("enc.tl_embed.state.w", {4, half}, b4, rng);
    tl_state_b_ = store.get_or_create("enc.tl_embed.state.b", {half}, b4, rng);
    tl_ln_gain_ = store.get_or_create_constant("enc.tl_embed.ln.gain", {d}, 1.0);
    tl_ln_bias_ = store.get_or_create_constant("enc.tl_embed.ln.bias", {d}, 0.0);

    hist_w_ = store.get_or_create("enc.history.in.w", {kMotionDim, d}, b4, rng);
    hist_b_ = store.get_or_create("enc.history.in.b", {d}, b4, rng);
    hist_pos_ = store.get_or_create("enc.history.pos_embed", {cfg_.t_history - 1, d}, bd, rng);
    hist_attn_ = make_mha_params(store, "enc.history.attn", d, rng);

    latent_w_ = store.get_or_create("enc.latent_proj.w", {d_latent, d},
                                    1.0 / std::sqrt(static_cast<double>(d_latent)), rng);
    latent_b_ = store.get_or_create("enc.latent_proj.b", {d}, bd, rng);

    const int patch_in = cfg_.map_patch_len * kMapDim;
    map_w_ = store.get_or_create("enc.map_embed.w", {patch_in, d},
                                 1.0 / std::sqrt(static_cast<double>(patch_in)), rng);
    map_b_ = store.get_or_create("enc.map_embed.b", {d}, bd, rng);
    map_ln_gain_ = store.get_or_create_constant("enc.map_embed.ln.gain", {d}, 1.0);
    map_ln_bias_ = store.get_or_create_constant("enc.map_embed.ln.bias", {d}, 0.0);

    for (int i = 0; i < cfg_.former_layers; ++i) {
      oaf_.push_back(
          detail::make_former_params(store, "enc.oaf.l" + std::to_string(i), d, rng));
      hmf_.push_back(
          detail::make_former_params(store, "enc.hmf.l" + std::to_string(i), d, rng));
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  // E_agent = ReLU(LayerNorm(Concat(E_p, E_f))) with E_p from the pose and
  // E_f from (width, length, type one-hot).
  Tensor embed_agent(const Tensor& pose, const Tensor& feats) const {
    if (pose.ndim() != 2 || pose.dim(1) != 2) {
      throw ShapeError("embed_agent: pose must be [n,2], got " + shape_str(pose.shape()));
    }
    if (feats.ndim() != 2 || feats.dim(1) != 5) {
      throw ShapeError("embed_agent: feats must be [n,5], got " + shape_str(feats.shape()));
    }
    for (int r = 0; r < feats.dim(0); ++r) {
      int ones = 0;
      for (int k = 2; k < 5; ++k) {
        const double v = feats.data()[r * 5 + k];
        if (v == 1.0) {
          ++ones;
        } else if (v != 0.0) {
          throw ValidationError("embed_agent: type vector must be one-hot");
        }
      }
      if (ones != 1) throw ValidationError("embed_agent: type vector must be one-hot");
    }
    Tensor e_p = linear(pose, pose_w_, pose_b_);
    Tensor e_f = linear(feats, feat_w_, feat_b_);
    return relu(layer_norm(concat_cols(e_p, e_f), agent_ln_gain_, agent_ln_bias_));
  }

  // Per-agent temporal encoding: step-wise linear embedding plus a learned
  // step-position table, self-attention over the history steps, mean-pooled
  // to one token per agent.
  Tensor embed_history(const Tensor& motion) const {
    if (motion.ndim() != 3 || motion.dim(2) != kMotionDim) {
      throw ShapeError("embed_history: motion must be [A,T-1," + std::to_string(kMotionDim) +
                       "], got " + shape_str(motion.shape()));
    }
    const int a_count = motion.dim(0);
    const int steps = motion.dim(1);
    if (steps != cfg_.t_history - 1) {
      throw ShapeError("embed_history: got " + std::to_string(steps) +
                       " steps, configured for " + std::to_string(cfg_.t_history - 1));
    }
    Tensor flat = motion.reshape({a_count, steps * kMotionDim});
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(a_count));
    for (int a = 0; a < a_count; ++a) {
      Tensor seq = slice_rows(flat, a, a + 1).reshape({steps, kMotionDim});
      Tensor h = add(linear(seq, hist_w_, hist_b_), hist_pos_);
      h = multi_head_attention(h, h, cfg_.heads, hist_attn_);
      rows.push_back(mean_rows(h));
    }
    return concat_rows(rows);
  }

  // Lane polylines chunked into patches of map_patch_len points (the last
  // patch padded by repeating the final point), each patch flattened,
  // linearly embedded and normalized like the other embedding blocks (raw
  // patch coordinates span tens of meters; unnormalized tokens swamp the
  // residual stream). An empty map yields zero tokens.
  Tensor embed_map(const Tensor& map_feat) const {
    if (map_feat.ndim() != 4 || map_feat.dim(0) != 1 || map_feat.dim(3) != kMapDim) {
      throw ShapeError("embed_map: map must be [1,L,P," + std::to_string(kMapDim) + "], got " +
                       shape_str(map_feat.shape()));
    }
    Tensor patches = map_patches(map_feat, cfg_.map_patch_len);
    if (patches.dim(0) == 0) return Tensor::zeros({0, cfg_.d_model});
    return relu(layer_norm(linear(patches, map_w_, map_b_), map_ln_gain_, map_ln_bias_));
  }

  // Pre-embedding patch content, exposed for inspection and tests.
  static Tensor map_patches(const Tensor& map_feat, int patch_len) {
    if (patch_len < 2) throw ConfigError("map_patch_len must be >= 2");
    const int lanes = map_feat.dim(1);
    const int points = map_feat.dim(2);
    if (lanes == 0 || points == 0) return Tensor::zeros({0, patch_len * kMapDim});
    const int per_lane = (points + patch_len - 1) / patch_len;
    Tensor out = Tensor::zeros({lanes * per_lane, patch_len * kMapDim});
    for (int l = 0; l < lanes; ++l) {
      for (int c = 0; c < per_lane; ++c) {
        double* dst = out.data().data() + static_cast<size_t>(l * per_lane + c) * patch_len * kMapDim;
        for (int k = 0; k < patch_len; ++k) {
          const int pi = std::min(c * patch_len + k, points - 1);
          const double* src =
              map_feat.data().data() + (static_cast<size_t>(l) * points + pi) * kMapDim;
          for (int f = 0; f < kMapDim; ++f) dst[k * kMapDim + f] = src[f];
        }
      }
    }
    return out;
  }

  // Self-attention over predicted tokens, cross-attention with other-agent
  // tokens as keys/values, projected and added back to the input.
  Tensor other_agent_former(const Tensor& pred_tokens, const Tensor& other_tokens) const {
    if (!cfg_.enable_other_agent_former) return pred_tokens;
    Tensor x = pred_tokens;
    for (const auto& layer : oaf_) x = detail::former_layer(x, other_tokens, cfg_.heads, layer);
    return x;
  }

  // Same structure with map tokens as the context set.
  Tensor hd_map_former(const Tensor& agent_tokens, const Tensor& map_tokens) const {
    if (!cfg_.enable_hd_map_former) return agent_tokens;
    Tensor x = agent_tokens;
    for (const auto& layer : hmf_) x = detail::former_layer(x, map_tokens, cfg_.heads, layer);
    return x;
  }

  // History embedding rows for the predicted agents; the diffusion model's
  // per-agent conditioning signal (pre-formers).
  Tensor history_context(const ModelInputs& inputs) const {
    Tensor hist = embed_history(inputs.motion);
    return select_rows(hist, inputs.predicted_indices);
  }

  SceneEncoding encode(const ModelInputs& inputs, const Tensor& action_latent) const {
    const int a_count = inputs.agent_count();
    const int a_p = inputs.predicted_count();
    if (action_latent.ndim() != 2 || action_latent.dim(0) != a_p) {
      throw ShapeError("encode: action latent rows " + shape_str(action_latent.shape()) +
                       " do not match " + std::to_string(a_p) + " predicted agents");
    }

    Tensor agent_flat = inputs.agent_feat.reshape({a_count, kAgentDim});
    Tensor tokens = add(embed_agent(slice_cols(agent_flat, 0, 2), slice_cols(agent_flat, 2, 7)),
                        embed_history(inputs.motion));

    std::vector<int> other_indices;
    for (int a = 0; a < a_count; ++a) {
      if (!inputs.predicted_mask[static_cast<size_t>(a)]) other_indices.push_back(a);
    }
    Tensor pred = select_rows(tokens, inputs.predicted_indices);
    Tensor others = select_rows(tokens, other_indices);

    SceneEncoding enc;
    enc.predicted_tokens = add(pred, linear(action_latent, latent_w_, latent_b_));
    enc.other_tokens = append_traffic_lights(others, inputs);
    enc.map_tokens = embed_map(inputs.map_feat);

    Tensor x = other_agent_former(enc.predicted_tokens, enc.other_tokens);
    enc.fused = hd_map_former(x, enc.map_tokens);
    return enc;
  }

 private:
  static Tensor select_rows(const Tensor& m, const std::vector<int>& indices) {
    if (indices.empty()) return Tensor::zeros({0, m.dim(1)});
    std::vector<Tensor> rows;
    rows.reserve(indices.size());
    for (int i : indices) rows.push_back(slice_rows(m, i, i + 1));
    return concat_rows(rows);
  }

  // Traffic lights join the other-agent key/value set, embedded from their
  // position and current-step state.
  Tensor append_traffic_lights(const Tensor& others, const ModelInputs& inputs) const {
    const int tl_count = inputs.tl_feat.dim(0);
    if (tl_count == 0) return others;
    const int t_h = inputs.tl_feat.dim(1);
    Tensor flat = inputs.tl_feat.reshape({tl_count, t_h * kTlDim});
    Tensor current = slice_cols(flat, (t_h - 1) * kTlDim, t_h * kTlDim);
    Tensor e_p = linear(slice_cols(current, 0, 2), tl_pose_w_, tl_pose_b_);
    Tensor e_s = linear(slice_cols(current, 2, kTlDim), tl_state_w_, tl_state_b_);
    Tensor tl_tokens = relu(layer_norm(concat_cols(e_p, e_s), tl_ln_gain_, tl_ln_bias_));
    if (others.dim(0) == 0) return tl_tokens;
    return concat_rows({others, tl_tokens});
  }

  EncoderConfig cfg_;
  Tensor pose_w_, pose_b_, feat_w_, feat_b_, agent_ln_gain_, agent_ln_bias_;
  Tensor tl_pose_w_, tl_pose_b_, tl_state_w_, tl_state_b_, tl_ln_gain_, tl_ln_bias_;
  Tensor hist_w_, hist_b_, hist_pos_;
  MhaParams hist_attn_;
  Tensor latent_w_, latent_b_;
  Tensor map_w_, map_b_, map_ln_gain_, map_ln_bias_;
  std::vector<detail::FormerParams> oaf_;
  std::vector<detail::FormerParams> hmf_;
};

}  // namespace tsdit

#endif  // TSDIT_ENCODER_HPP_
