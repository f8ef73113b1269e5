#ifndef TSDIT_MODEL_HPP_
#define TSDIT_MODEL_HPP_

#include <cmath>

#include "tsdit/decoder.hpp"
#include "tsdit/diffusion.hpp"
#include "tsdit/encoder.hpp"
#include "tsdit/param_store.hpp"
#include "tsdit/preprocess.hpp"

namespace tsdit {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  DiffusionConfig diffusion;

  void validate() const {
    encoder.validate();
    decoder.validate();
    diffusion.validate();
  }
};

// ---------------------------------------------------------------------------
// The full pipeline: scene encoder, DiT noise model over per-agent action
// latents, trajectory decoder, and the learned projection that turns each
// agent's ground-truth future into the clean latent the DDPM is trained on.
// ---------------------------------------------------------------------------
class TsditModel {
 public:
  TsditModel(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        encoder_(store, cfg.encoder, cfg.diffusion.d_latent, rng),
        denoiser_(store, cfg.diffusion, cfg.encoder.d_model, rng),
        decoder_(store, cfg.decoder, cfg.encoder.d_model, rng) {
    const double b2 = 1.0 / std::sqrt(2.0);
    x0_proj_w_ = store.get_or_create("train.x0_proj.w", {2, cfg.diffusion.d_latent}, b2, rng);
    x0_proj_b_ = store.get_or_create("train.x0_proj.b", {cfg.diffusion.d_latent}, b2, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  const DitDenoiser& denoiser() const { return denoiser_; }
  const Decoder& decoder() const { return decoder_; }

  // Clean diffusion target: each agent's mean future step delta, linearly
  // projected into latent space. Deltas telescope, so the mean step is
  // (endpoint - start) / T_f.
  Tensor gt_latent(const ModelInputs& inputs) const {
    const int a_p = inputs.predicted_count();
    const int t_f = inputs.t_future;
    Tensor start = predicted_start_positions(inputs);
    Tensor mean_delta = Tensor::zeros({a_p, 2});
    for (int a = 0; a < a_p; ++a) {
      for (int c = 0; c < 2; ++c) {
        const double end = inputs.gt_future.data()[(a * t_f + t_f - 1) * 2 + c];
        mean_delta.data()[a * 2 + c] = (end - start.data()[a * 2 + c]) / t_f;
      }
    }
    return linear(mean_delta, x0_proj_w_, x0_proj_b_);
  }

  Tensor history_context(const ModelInputs& inputs) const {
    return encoder_.history_context(inputs);
  }

  struct TrainForward {
    Tensor diffusion;  // scalar
    Tensor positions;  // [A_p, T_f, 2]
  };

  // One training-step forward pass: noise the clean latent at step t, score
  // it with the denoiser (the diffusion MSE), rebuild the one-step latent
  // estimate, and decode trajectories from the encoding conditioned on it.
  TrainForward train_forward(const ModelInputs& inputs, int t, const Tensor& eps,
                             const DiffusionSchedule& sched) const {
    Tensor ctx = history_context(inputs);
    Tensor x0 = gt_latent(inputs);
    Tensor x_t = forward_noise(x0, t, eps, sched);
    Tensor eps_hat = denoiser_.forward(x_t, t, ctx);
    TrainForward out;
    out.diffusion = mse(eps, eps_hat);
    const double ab = sched.alpha_bars[static_cast<size_t>(t)];
    Tensor x0_hat = scale(sub(x_t, scale(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
    SceneEncoding enc = encoder_.encode(inputs, x0_hat);
    out.positions = decoder_.decode(enc.fused, inputs).positions;
    return out;
  }

  // Inference path: sample an action latent by reverse diffusion, encode,
  // decode. Pure given (inputs, params, seed).
  TrajectoryBundle sample_and_decode(const ModelInputs& inputs, const DiffusionSchedule& sched,
                                     uint64_t seed) const {
    Tape::NoGradGuard no_grad;
    Tensor ctx = history_context(inputs);
    Tensor latent = sample_action_latent(denoiser_, ctx, sched, seed);
    SceneEncoding enc = encoder_.encode(inputs, latent);
    return decoder_.decode(enc.fused, inputs);
  }

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  DitDenoiser denoiser_;
  Decoder decoder_;
  Tensor x0_proj_w_, x0_proj_b_;
};

}  // namespace tsdit

#endif  // TSDIT_MODEL_HPP_
