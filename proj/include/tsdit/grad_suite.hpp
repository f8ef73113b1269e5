#ifndef TSDIT_GRAD_SUITE_HPP_
#define TSDIT_GRAD_SUITE_HPP_

#include <string>
#include <vector>

#include "tsdit/grad_check.hpp"
#include "tsdit/model.hpp"
#include "tsdit/scene_gen.hpp"
#include "tsdit/training.hpp"

namespace tsdit {

struct GradSuiteRow {
  std::string block;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Finite-difference verification of every registered block on a seeded
// two-agent scene with T_f = 8, at compact widths. Parameters are drawn at
// random seeded points (with the DiT gates woken up, so the gated branches
// carry gradient rather than passing vacuously).
inline std::vector<GradSuiteRow> run_grad_suite(uint64_t seed, double threshold = 1e-4) {
  ModelConfig mcfg;
  mcfg.encoder.d_model = 16;
  mcfg.encoder.heads = 2;
  mcfg.encoder.t_history = 6;
  mcfg.decoder.t_future = 8;
  mcfg.decoder.mlp_hidden = 32;
  mcfg.decoder.heads = 2;
  mcfg.diffusion.t_steps = 10;
  mcfg.diffusion.d_latent = 8;
  mcfg.diffusion.dit_blocks = 2;
  mcfg.diffusion.dit_heads = 2;
  mcfg.diffusion.freq_dim = 8;

  SceneGenConfig scfg;
  scfg.lane_family = LaneFamily::FourWay;
  scfg.agent_count_min = scfg.agent_count_max = 2;
  scfg.predicted_fraction = 1.0;
  scfg.t_history = mcfg.encoder.t_history;
  scfg.t_future = mcfg.decoder.t_future;
  const ModelInputs inputs = preprocess_world_centric(generate_synthetic_scene(seed, scfg));
  const int a_p = inputs.predicted_count();
  const int d_latent = mcfg.diffusion.d_latent;
  const DiffusionSchedule sched =
      make_schedule(mcfg.diffusion.t_steps, mcfg.diffusion.beta_start, mcfg.diffusion.beta_end);

  Rng init_rng(mix_seed(seed, 0x6d));
  ParameterStore store;
  TsditModel model(store, mcfg, init_rng);
  // Wake every identity-at-init branch (DiT gates, former and decoder output
  // projections); at their zero init those branches would pass vacuously.
  Rng wake(mix_seed(seed, 0x6a7e));
  for (auto& [name, p] : store.all()) {
    bool all_zero = true;
    for (double v : p.data()) all_zero = all_zero && v == 0.0;
    if (all_zero) {
      for (double& v : p.data()) v = wake.uniform(-0.5, 0.5);
    }
  }

  auto random_tensor = [](const Shape& shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
  };

  Rng aux(mix_seed(seed, 0xaa));
  const Tensor latent = random_tensor({a_p, d_latent}, aux);
  const Tensor eps = gaussian_tensor({a_p, d_latent}, aux);
  const Tensor w_tokens = random_tensor({inputs.agent_count(), mcfg.encoder.d_model}, aux);
  const Tensor w_fused = random_tensor({a_p, mcfg.encoder.d_model}, aux);
  const Tensor w_latent = random_tensor({a_p, d_latent}, aux);
  const Tensor w_deltas = random_tensor({a_p * 8, 2}, aux);
  const Tensor virt = virtual_trajectory(inputs.gt_future, 4);
  const LossConfig loss_cfg;

  auto prefix_filter = [](std::vector<std::string> prefixes) {
    return [prefixes](const std::string& name) {
      for (const auto& p : prefixes) {
        if (name.rfind(p, 0) == 0) return true;
      }
      return false;
    };
  };

  std::vector<GradSuiteRow> rows;
  auto run_row = [&](const std::string& block, ParameterStore& s,
                     const std::function<Tensor()>& f,
                     const std::function<bool(const std::string&)>& filter) {
    GradSuiteRow row;
    row.block = block;
    row.threshold = threshold;
    row.max_rel_error = grad_check(f, s, 1e-5, filter).max_rel_error;
    row.pass = row.max_rel_error < threshold;
    rows.push_back(row);
  };

  const Encoder& enc = model.encoder();
  Tensor agent_flat = inputs.agent_feat.reshape({inputs.agent_count(), kAgentDim});
  run_row("embedding", store,
          [&] {
            Tensor tokens = add(enc.embed_agent(slice_cols(agent_flat, 0, 2),
                                                slice_cols(agent_flat, 2, 7)),
                                enc.embed_history(inputs.motion));
            Tensor token_term = sum_all(mul(tokens, w_tokens));
            Tensor map_tokens = enc.embed_map(inputs.map_feat);
            return add(token_term, scale(sum_all(map_tokens), 0.1));
          },
          prefix_filter({"enc.agent_embed", "enc.history", "enc.map_embed"}));

  {
    Rng ctx_rng(mix_seed(seed, 0xc0));
    const Tensor pred_tok = random_tensor({a_p, mcfg.encoder.d_model}, ctx_rng);
    const Tensor other_tok = random_tensor({3, mcfg.encoder.d_model}, ctx_rng);
    const Tensor map_tok = random_tensor({4, mcfg.encoder.d_model}, ctx_rng);
    run_row("other_agent_former", store,
            [&] { return sum_all(mul(enc.other_agent_former(pred_tok, other_tok), w_fused)); },
            prefix_filter({"enc.oaf"}));
    run_row("hd_map_former", store,
            [&] { return sum_all(mul(enc.hd_map_former(pred_tok, map_tok), w_fused)); },
            prefix_filter({"enc.hmf"}));
  }

  {
    Tensor ctx = model.history_context(inputs);
    Tensor ctx_fixed = Tensor::from(ctx.shape(), ctx.data());  // constant for the DiT row
    run_row("dit_stack", store,
            [&] {
              return sum_all(mul(model.denoiser().forward(latent, 3, ctx_fixed), w_latent));
            },
            prefix_filter({"dit."}));
  }

  run_row("decoder", store,
          [&] {
            Tensor deltas = model.decoder().decode_deltas(w_fused);
            return sum_all(mul(deltas.reshape({a_p * 8, 2}), w_deltas));
          },
          prefix_filter({"dec."}));

  // Loss terms, each differentiated through its own inputs.
  {
    ParameterStore ls;
    Rng lrng(mix_seed(seed, 0x10));
    Tensor pred = ls.create("pred", {a_p, 8, 2}, 2.0, lrng);
    const Tensor gt = inputs.gt_future;
    run_row("loss_w_ade", ls,
            [&] { return w_ade_loss(pred, gt, default_step_weights(8)); }, nullptr);
    run_row("loss_fde", ls, [&] { return fde_loss(pred, gt); }, nullptr);
    run_row("loss_huber_virtual", ls,
            [&] {
              return huber_mean(sub(pred.reshape({a_p * 8, 2}), virt.reshape({a_p * 8, 2})),
                                loss_cfg.huber_delta);
            },
            nullptr);
  }
  {
    ParameterStore ls;
    Rng lrng(mix_seed(seed, 0x11));
    Tensor x0 = ls.create("x0", {a_p, d_latent}, 1.0, lrng);
    Tensor ctx = ls.create("ctx", {a_p, mcfg.encoder.d_model}, 1.0, lrng);
    run_row("loss_diffusion", ls,
            [&] { return diffusion_loss(x0, 4, eps, ctx, model.denoiser(), sched); }, nullptr);
  }

  run_row("total_loss", store,
          [&] {
            TsditModel::TrainForward fwd = model.train_forward(inputs, 4, eps, sched);
            return total_loss(fwd.diffusion, fwd.positions, inputs.gt_future, virt, loss_cfg)
                .total;
          },
          nullptr);

  return rows;
}

}  // namespace tsdit

#endif  // TSDIT_GRAD_SUITE_HPP_
