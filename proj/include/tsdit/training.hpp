#ifndef TSDIT_TRAINING_HPP_
#define TSDIT_TRAINING_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tsdit/model.hpp"
#include "tsdit/spline.hpp"

namespace tsdit {

struct LossConfig {
  std::vector<double> step_weights;  // empty = default linear 2 -> 0.5 decay
  double huber_delta = 1.0;
  int virtual_knot_stride = 5;
  double lambda_diffusion = 1.0;
  double lambda_w_ade = 1.0;
  double lambda_fde = 1.0;
  double lambda_huber = 1.0;

  void validate() const {
    if (!(huber_delta > 0.0)) throw ConfigError("huber_delta must be > 0");
    if (virtual_knot_stride < 2) throw ConfigError("virtual_knot_stride must be >= 2");
    if (lambda_diffusion < 0.0 || lambda_w_ade < 0.0 || lambda_fde < 0.0 || lambda_huber < 0.0) {
      throw ConfigError("loss term coefficients must be >= 0");
    }
  }
};

// Early steps weigh more: linear decay from 2 at t=0 to 0.5 at t=T_f-1.
inline std::vector<double> default_step_weights(int t_future) {
  std::vector<double> w(static_cast<size_t>(t_future));
  for (int t = 0; t < t_future; ++t) {
    w[static_cast<size_t>(t)] =
        t_future == 1 ? 2.0 : 2.0 - 1.5 * static_cast<double>(t) / (t_future - 1);
  }
  return w;
}

struct LossBreakdown {
  double total = 0.0;
  double diffusion = 0.0;
  double w_ade = 0.0;
  double fde = 0.0;
  double huber_virtual = 0.0;
};

// Weighted ADE: mean over agents of sum_t w_t |pred_t - gt_t| / sum_t w_t.
inline Tensor w_ade_loss(const Tensor& pred, const Tensor& gt,
                         const std::vector<double>& weights) {
  if (pred.shape() != gt.shape() || pred.ndim() != 3 || pred.dim(2) != 2) {
    throw ShapeError("w_ade: positions must share shape [A,T,2], got " +
                     shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  const int a_p = pred.dim(0), t_f = pred.dim(1);
  if (static_cast<int>(weights.size()) != t_f) {
    throw ConfigError("w_ade: need one weight per future step");
  }
  double weight_sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("w_ade: weights must be >= 0");
    weight_sum += w;
  }
  if (weight_sum == 0.0) throw ConfigError("w_ade: weights must not all be zero");
  Tensor wcol = Tensor::zeros({a_p * t_f, 1});
  for (int a = 0; a < a_p; ++a)
    for (int t = 0; t < t_f; ++t) wcol.data()[a * t_f + t] = weights[static_cast<size_t>(t)];
  Tensor dist = l2norm_rows(sub(pred.reshape({a_p * t_f, 2}), gt.reshape({a_p * t_f, 2})));
  return scale(sum_all(mul(dist, wcol)), 1.0 / (a_p * weight_sum));
}

// Mean over agents of the endpoint displacement.
inline Tensor fde_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.ndim() != 3 || pred.dim(2) != 2) {
    throw ShapeError("fde: positions must share shape [A,T,2]");
  }
  const int a_p = pred.dim(0), t_f = pred.dim(1);
  Tensor pred_flat = pred.reshape({a_p * t_f, 2});
  Tensor gt_flat = gt.reshape({a_p * t_f, 2});
  std::vector<Tensor> pred_ends, gt_ends;
  for (int a = 0; a < a_p; ++a) {
    pred_ends.push_back(slice_rows(pred_flat, a * t_f + t_f - 1, a * t_f + t_f));
    gt_ends.push_back(slice_rows(gt_flat, a * t_f + t_f - 1, a * t_f + t_f));
  }
  return mean_all(l2norm_rows(sub(concat_rows(pred_ends), concat_rows(gt_ends))));
}

// Smoothed ground truth: knots at {0, k, 2k, ...} plus the endpoint, natural
// cubic spline per coordinate over knot index, evaluated at every step.
// Futures shorter than 4 steps are returned unchanged.
inline Tensor virtual_trajectory(const Tensor& gt, int stride) {
  if (gt.ndim() != 3 || gt.dim(2) != 2) {
    throw ShapeError("virtual_trajectory: gt must be [A,T,2], got " + shape_str(gt.shape()));
  }
  if (stride < 2) throw ConfigError("virtual_knot_stride must be >= 2");
  const int a_p = gt.dim(0), t_f = gt.dim(1);
  if (t_f < 4) return Tensor::from(gt.shape(), gt.data());

  std::vector<double> knots;
  for (int i = 0; i < t_f; i += stride) knots.push_back(i);
  if (knots.back() != t_f - 1) knots.push_back(t_f - 1);

  Tensor out = Tensor::zeros(gt.shape());
  std::vector<double> values(knots.size());
  for (int a = 0; a < a_p; ++a) {
    for (int c = 0; c < 2; ++c) {
      for (size_t k = 0; k < knots.size(); ++k) {
        values[k] = gt.data()[(a * t_f + static_cast<int>(knots[k])) * 2 + c];
      }
      NaturalCubicSpline spline(knots, values);
      for (int t = 0; t < t_f; ++t) out.data()[(a * t_f + t) * 2 + c] = spline(t);
    }
  }
  return out;
}

struct TotalLossResult {
  Tensor total;  // scalar, on the tape
  LossBreakdown values;
};

// L_total = ld * L_diffusion + lw * L_W-ADE + lf * L_FDE + lh * Huber(pred -
// virtual). The virtual target is precomputed from the ground truth.
inline TotalLossResult total_loss(const Tensor& diffusion, const Tensor& pred_positions,
                                  const Tensor& gt_future, const Tensor& virtual_target,
                                  const LossConfig& cfg) {
  cfg.validate();
  const std::vector<double> weights =
      cfg.step_weights.empty() ? default_step_weights(pred_positions.dim(1)) : cfg.step_weights;
  TotalLossResult out;
  Tensor wade = w_ade_loss(pred_positions, gt_future, weights);
  Tensor fde = fde_loss(pred_positions, gt_future);
  const int n = pred_positions.numel();
  Tensor residual = sub(pred_positions.reshape({n / 2, 2}), virtual_target.reshape({n / 2, 2}));
  Tensor huber = huber_mean(residual, cfg.huber_delta);
  out.total = add(add(scale(diffusion, cfg.lambda_diffusion), scale(wade, cfg.lambda_w_ade)),
                  add(scale(fde, cfg.lambda_fde), scale(huber, cfg.lambda_huber)));
  out.values.diffusion = diffusion.item();
  out.values.w_ade = wade.item();
  out.values.fde = fde.item();
  out.values.huber_virtual = huber.item();
  out.values.total = out.total.item();
  return out;
}

struct TrainConfig {
  int steps = 300;
  AdamConfig adam;
  uint64_t seed = 3;
  int checkpoint_interval = 0;  // every n steps; 0 = none

  void validate() const {
    if (steps < 1) throw ConfigError("train steps must be >= 1");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
  }
};

struct TrainLogRecord {
  int step = 0;
  LossBreakdown losses;
};

// Thrown when a loss term stops being finite; carries the aborting step.
class DivergenceError : public NumericError {
 public:
  DivergenceError(int step, const std::string& term)
      : NumericError("training diverged at step " + std::to_string(step) + ": " + term +
                     " is non-finite"),
        step_(step),
        term_(term) {}
  int step() const { return step_; }
  const std::string& term() const { return term_; }

 private:
  int step_;
  std::string term_;
};

// One scene per step, drawn by seed; forward, composite loss, backward, Adam.
// Deterministic given (dataset order, configs, seeds). Records stream through
// on_record as they are produced, so a divergence abort keeps the log so far.
inline std::vector<TrainLogRecord> train_loop(
    TsditModel& model, ParameterStore& store, const std::vector<Scene>& dataset,
    const DiffusionSchedule& sched, const LossConfig& loss_cfg, const TrainConfig& train_cfg,
    const std::function<void(int)>& checkpoint_hook = nullptr,
    const std::function<void(const TrainLogRecord&)>& on_record = nullptr) {
  train_cfg.validate();
  loss_cfg.validate();
  if (dataset.empty()) throw DataError("train_loop: empty dataset");

  std::vector<ModelInputs> inputs;
  std::vector<Tensor> virtual_targets;
  inputs.reserve(dataset.size());
  for (const Scene& s : dataset) {
    inputs.push_back(preprocess_world_centric(s));
    virtual_targets.push_back(
        virtual_trajectory(inputs.back().gt_future, loss_cfg.virtual_knot_stride));
  }

  Rng rng(mix_seed(train_cfg.seed, 0x7ea17));
  AdamState adam(train_cfg.adam);
  std::vector<TrainLogRecord> log;
  log.reserve(static_cast<size_t>(train_cfg.steps));

  for (int step = 0; step < train_cfg.steps; ++step) {
    const size_t idx = static_cast<size_t>(rng.next_below(static_cast<int64_t>(dataset.size())));
    const ModelInputs& in = inputs[idx];
    const int t = static_cast<int>(rng.next_below(sched.t_steps));
    Tensor eps = gaussian_tensor({in.predicted_count(), model.config().diffusion.d_latent}, rng);

    store.zero_grad();
    Tape tape;
    TsditModel::TrainForward fwd = model.train_forward(in, t, eps, sched);
    TotalLossResult loss = total_loss(fwd.diffusion, fwd.positions, in.gt_future,
                                      virtual_targets[idx], loss_cfg);
    for (auto [value, name] :
         {std::pair{loss.values.diffusion, "diffusion"}, {loss.values.w_ade, "w_ade"},
          {loss.values.fde, "fde"}, {loss.values.huber_virtual, "huber_virtual"},
          {loss.values.total, "total"}}) {
      if (!std::isfinite(value)) throw DivergenceError(step, name);
    }
    tape.backward(loss.total);
    adam.step(store);
    log.push_back({step, loss.values});
    if (on_record) on_record(log.back());
    if (train_cfg.checkpoint_interval > 0 && checkpoint_hook &&
        (step + 1) % train_cfg.checkpoint_interval == 0) {
      checkpoint_hook(step + 1);
    }
  }
  return log;
}

}  // namespace tsdit

#endif  // TSDIT_TRAINING_HPP_
