#ifndef TSDIT_DIFFUSION_HPP_
#define TSDIT_DIFFUSION_HPP_

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "tsdit/param_store.hpp"
#include "tsdit/tensor.hpp"

namespace tsdit {

struct DiffusionConfig {
  int t_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int d_latent = 16;
  int dit_blocks = 2;
  int dit_heads = 4;
  int freq_dim = 32;  // sinusoidal timestep embedding width

  void validate() const {
    if (t_steps < 1) throw ConfigError("t_steps must be >= 1");
    if (!(beta_start > 0.0) || beta_end < beta_start || !(beta_end < 1.0)) {
      throw ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    if (d_latent < 1) throw ConfigError("d_latent must be >= 1");
    if (dit_blocks < 1) throw ConfigError("dit_blocks must be >= 1");
    if (dit_heads < 1 || d_latent % dit_heads != 0) {
      throw ConfigError("d_latent must be divisible by dit_heads");
    }
    if (freq_dim < 2 || freq_dim % 2 != 0) throw ConfigError("freq_dim must be even and >= 2");
  }
};

struct DiffusionSchedule {
  int t_steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
};

inline DiffusionSchedule make_schedule(int t_steps, double beta_start, double beta_end) {
  if (t_steps < 1) throw ConfigError("make_schedule: t_steps must be >= 1");
  if (!(beta_start > 0.0) || beta_end < beta_start || !(beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.t_steps = t_steps;
  s.betas.resize(static_cast<size_t>(t_steps));
  s.alphas.resize(static_cast<size_t>(t_steps));
  s.alpha_bars.resize(static_cast<size_t>(t_steps));
  double bar = 1.0;
  for (int t = 0; t < t_steps; ++t) {
    const double beta =
        t_steps == 1 ? beta_start
                     : beta_start + (beta_end - beta_start) * t / (t_steps - 1);
    s.betas[static_cast<size_t>(t)] = beta;
    s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
    bar *= 1.0 - beta;
    s.alpha_bars[static_cast<size_t>(t)] = bar;
  }
  return s;
}

// Closed-form forward noising q(x_t | x_0):
//   x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
inline Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps,
                            const DiffusionSchedule& sched) {
  if (t < 0 || t >= sched.t_steps) {
    throw IndexError("forward_noise: t=" + std::to_string(t) + " outside [0," +
                     std::to_string(sched.t_steps) + ")");
  }
  if (eps.shape() != x0.shape()) {
    throw ShapeError("forward_noise: eps shape " + shape_str(eps.shape()) +
                     " does not match x0 " + shape_str(x0.shape()));
  }
  const double ab = sched.alpha_bars[static_cast<size_t>(t)];
  return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

inline Tensor gaussian_tensor(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data()) v = rng.gaussian();
  return t;
}

namespace detail {

// Sinusoidal timestep embedding, [1, freq_dim]; cos half then sin half.
inline Tensor timestep_embedding(int t, int freq_dim) {
  const int half = freq_dim / 2;
  Tensor out = Tensor::zeros({1, freq_dim});
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out.data()[i] = std::cos(t * freq);
    out.data()[half + i] = std::sin(t * freq);
  }
  return out;
}

struct ModulationParams {
  Tensor w, b;
};

inline ModulationParams make_mod(ParameterStore& store, const std::string& name, int d_cond,
                                 int d, bool zero_init, Rng& rng) {
  ModulationParams p;
  if (zero_init) {
    p.w = store.get_or_create_constant(name + ".w", {d_cond, d}, 0.0);
    p.b = store.get_or_create_constant(name + ".b", {d}, 0.0);
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_cond));
    p.w = store.get_or_create(name + ".w", {d_cond, d}, bound, rng);
    p.b = store.get_or_create(name + ".b", {d}, bound, rng);
  }
  return p;
}

struct DitBlockParams {
  MhaParams attn;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  ModulationParams scale1, shift1, gate1, scale2, shift2, gate2;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Conditioned transformer denoiser: a stack of blocks whose layer-norm
// scale/shift and residual gates are regressed from (timestep embedding +
// per-agent context). Gates start at zero, so a fresh stack passes latents
// through unchanged to the output head.
// ---------------------------------------------------------------------------
class DitDenoiser {
 public:
  DitDenoiser(ParameterStore& store, const DiffusionConfig& cfg, int d_ctx, Rng& rng)
      : cfg_(cfg), d_ctx_(d_ctx) {
    cfg_.validate();
    const int d = cfg_.d_latent;
    const int d_cond = 2 * d;
    const double bd = 1.0 / std::sqrt(static_cast<double>(d));
    const double bf = 1.0 / std::sqrt(static_cast<double>(cfg_.freq_dim));
    const double bc = 1.0 / std::sqrt(static_cast<double>(d_ctx));

    t_w1_ = store.get_or_create("dit.t_embed.l1.w", {cfg_.freq_dim, d}, bf, rng);
    t_b1_ = store.get_or_create("dit.t_embed.l1.b", {d}, bf, rng);
    t_w2_ = store.get_or_create("dit.t_embed.l2.w", {d, d}, bd, rng);
    t_b2_ = store.get_or_create("dit.t_embed.l2.b", {d}, bd, rng);
    ctx_w_ = store.get_or_create("dit.ctx_proj.w", {d_ctx, d}, bc, rng);
    ctx_b_ = store.get_or_create("dit.ctx_proj.b", {d}, bc, rng);

    for (int i = 0; i < cfg_.dit_blocks; ++i) {
      const std::string p = "dit.b" + std::to_string(i);
      detail::DitBlockParams blk;
      blk.attn = make_mha_params(store, p + ".attn", d, rng);
      const int mlp_hidden = 4 * d;
      blk.mlp_w1 = store.get_or_create(p + ".mlp.l1.w", {d, mlp_hidden}, bd, rng);
      blk.mlp_b1 = store.get_or_create(p + ".mlp.l1.b", {mlp_hidden}, bd, rng);
      blk.mlp_w2 = store.get_or_create(p + ".mlp.l2.w", {mlp_hidden, d},
                                       1.0 / std::sqrt(static_cast<double>(mlp_hidden)), rng);
      blk.mlp_b2 = store.get_or_create(p + ".mlp.l2.b", {d},
                                       1.0 / std::sqrt(static_cast<double>(mlp_hidden)), rng);
      blk.scale1 = detail::make_mod(store, p + ".mod.scale1", d_cond, d, false, rng);
      blk.shift1 = detail::make_mod(store, p + ".mod.shift1", d_cond, d, false, rng);
      blk.gate1 = detail::make_mod(store, p + ".mod.gate1", d_cond, d, true, rng);
      blk.scale2 = detail::make_mod(store, p + ".mod.scale2", d_cond, d, false, rng);
      blk.shift2 = detail::make_mod(store, p + ".mod.shift2", d_cond, d, false, rng);
      blk.gate2 = detail::make_mod(store, p + ".mod.gate2", d_cond, d, true, rng);
      blocks_.push_back(std::move(blk));
    }
    head_scale_ = detail::make_mod(store, "dit.head.mod.scale", d_cond, d, false, rng);
    head_shift_ = detail::make_mod(store, "dit.head.mod.shift", d_cond, d, false, rng);
    head_w_ = store.get_or_create("dit.head.out.w", {d, d}, bd, rng);
    head_b_ = store.get_or_create("dit.head.out.b", {d}, bd, rng);
  }

  const DiffusionConfig& config() const { return cfg_; }

  // Predicts the noise added to x_t given the timestep and per-agent context.
  Tensor forward(const Tensor& x_t, int t, const Tensor& context) const {
    const int d = cfg_.d_latent;
    if (x_t.ndim() != 2 || x_t.dim(1) != d) {
      throw ShapeError("dit: latent must be [A_p," + std::to_string(d) + "], got " +
                       shape_str(x_t.shape()));
    }
    if (context.ndim() != 2 || context.dim(0) != x_t.dim(0) || context.dim(1) != d_ctx_) {
      throw ShapeError("dit: context shape " + shape_str(context.shape()) +
                       " does not match latents " + shape_str(x_t.shape()) + " with d_ctx " +
                       std::to_string(d_ctx_));
    }
    const int rows = x_t.dim(0);

    Tensor t_emb = linear(silu(linear(detail::timestep_embedding(t, cfg_.freq_dim), t_w1_, t_b1_)),
                          t_w2_, t_b2_);
    Tensor cond = silu(concat_cols(tile_rows(t_emb, rows), linear(context, ctx_w_, ctx_b_)));
    Tensor ones = Tensor::full({rows, d}, 1.0);

    Tensor x = x_t;
    for (const auto& blk : blocks_) {
      Tensor h = modulate(layer_norm_plain(x), cond, blk.scale1, blk.shift1, ones);
      Tensor attn = multi_head_attention(h, h, cfg_.dit_heads, blk.attn);
      x = add(x, mul(linear(cond, blk.gate1.w, blk.gate1.b), attn));
      Tensor m = modulate(layer_norm_plain(x), cond, blk.scale2, blk.shift2, ones);
      Tensor mlp = linear(silu(linear(m, blk.mlp_w1, blk.mlp_b1)), blk.mlp_w2, blk.mlp_b2);
      x = add(x, mul(linear(cond, blk.gate2.w, blk.gate2.b), mlp));
    }
    Tensor h = modulate(layer_norm_plain(x), cond, head_scale_, head_shift_, ones);
    return linear(h, head_w_, head_b_);
  }

 private:
  static Tensor modulate(const Tensor& h, const Tensor& cond,
                         const detail::ModulationParams& scale,
                         const detail::ModulationParams& shift, const Tensor& ones) {
    Tensor s = linear(cond, scale.w, scale.b);
    Tensor sh = linear(cond, shift.w, shift.b);
    return add(mul(h, add(ones, s)), sh);
  }

  DiffusionConfig cfg_;
  int d_ctx_;
  Tensor t_w1_, t_b1_, t_w2_, t_b2_, ctx_w_, ctx_b_;
  std::vector<detail::DitBlockParams> blocks_;
  detail::ModulationParams head_scale_, head_shift_;
  Tensor head_w_, head_b_;
};

using DenoiserFn = std::function<Tensor(const Tensor& x_t, int t)>;

// MSE between the injected noise and a denoiser's estimate of it.
inline Tensor diffusion_loss_with(const DenoiserFn& denoiser, const Tensor& x0, int t,
                                  const Tensor& eps, const DiffusionSchedule& sched) {
  return mse(eps, denoiser(forward_noise(x0, t, eps, sched), t));
}

inline Tensor diffusion_loss(const Tensor& x0, int t, const Tensor& eps, const Tensor& context,
                             const DitDenoiser& denoiser, const DiffusionSchedule& sched) {
  return diffusion_loss_with(
      [&](const Tensor& x_t, int step) { return denoiser.forward(x_t, step, context); }, x0, t,
      eps, sched);
}

// Ancestral DDPM sampling from x_T ~ N(0, I):
//   x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//             + sigma_t z,  sigma_t = sqrt(beta_t), z = 0 at t = 0.
// `with_noise=false` drops the sigma_t term entirely (used by the inversion
// oracle). Deterministic given the seed.
inline Tensor reverse_sample(const DenoiserFn& denoiser, const Shape& latent_shape,
                             const DiffusionSchedule& sched, uint64_t seed,
                             bool with_noise = true) {
  Tape::NoGradGuard no_grad;
  Rng rng(mix_seed(seed, 0xd1f));
  Tensor x = gaussian_tensor(latent_shape, rng);
  for (int t = sched.t_steps - 1; t >= 0; --t) {
    const double beta = sched.betas[static_cast<size_t>(t)];
    const double alpha = sched.alphas[static_cast<size_t>(t)];
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    Tensor eps_hat = denoiser(x, t);
    if (eps_hat.shape() != x.shape()) {
      throw ShapeError("reverse_sample: denoiser output shape " + shape_str(eps_hat.shape()) +
                       " does not match latent " + shape_str(x.shape()));
    }
    x = scale(sub(x, scale(eps_hat, beta / std::sqrt(1.0 - ab))), 1.0 / std::sqrt(alpha));
    if (with_noise && t > 0) {
      x = add(x, scale(gaussian_tensor(latent_shape, rng), std::sqrt(beta)));
    }
    if (!all_finite(x.data())) {
      throw NumericError("reverse_sample: non-finite latent at t=" + std::to_string(t));
    }
  }
  return x;
}

// Draws one action latent per predicted agent with the model denoiser.
inline Tensor sample_action_latent(const DitDenoiser& denoiser, const Tensor& context,
                                   const DiffusionSchedule& sched, uint64_t seed,
                                   bool with_noise = true) {
  const Shape shape{context.dim(0), denoiser.config().d_latent};
  return reverse_sample(
      [&](const Tensor& x_t, int t) { return denoiser.forward(x_t, t, context); }, shape, sched,
      seed, with_noise);
}

}  // namespace tsdit

#endif  // TSDIT_DIFFUSION_HPP_
