#ifndef TSDIT_RUN_CONFIG_HPP_
#define TSDIT_RUN_CONFIG_HPP_

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "tsdit/metrics.hpp"
#include "tsdit/model.hpp"
#include "tsdit/scene_gen.hpp"
#include "tsdit/training.hpp"

namespace tsdit {

struct Seeds {
  uint64_t data = 1;
  uint64_t init = 2;
  uint64_t train = 3;
  uint64_t sample = 4;
};

struct Paths {
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
};

// One file drives a full reproducible run: scenario generation, model sizes,
// losses, metrics, seeds and output locations.
struct RunConfig {
  SceneGenConfig scenario;
  EncoderConfig encoder;
  DecoderConfig decoder;
  DiffusionConfig diffusion;
  LossConfig loss;
  MetricsConfig metrics;
  TrainConfig train;
  Seeds seeds;
  Paths paths;
  int scene_count = 20;

  // The scenario horizons are the single source of truth; the encoder and
  // decoder are sized to match.
  void sync_horizons() {
    encoder.t_history = scenario.t_history;
    decoder.t_future = scenario.t_future;
  }

  void validate() const {
    scenario.validate();
    encoder.validate();
    decoder.validate();
    diffusion.validate();
    loss.validate();
    metrics.validate();
    train.validate();
    if (scene_count < 1) throw ConfigError("scene_count must be >= 1");
    if (encoder.t_history != scenario.t_history || decoder.t_future != scenario.t_future) {
      throw ConfigError("encoder/decoder horizons out of sync with scenario");
    }
  }

  ModelConfig model_config() const { return {encoder, decoder, diffusion}; }

  DiffusionSchedule schedule() const {
    return make_schedule(diffusion.t_steps, diffusion.beta_start, diffusion.beta_end);
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError("unknown key \"" + key + "\" in config section \"" + where + "\"");
    }
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for config key \"" + std::string(key) + "\": " + e.what());
    }
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.contains("config_version")) throw ConfigError("config missing \"config_version\"");
  if (j.at("config_version").get<int>() != 1) {
    throw VersionError("unsupported config_version " +
                       std::to_string(j.at("config_version").get<int>()));
  }
  detail::check_keys(j,
                     {"config_version", "scenario", "encoder", "decoder", "diffusion", "loss",
                      "metrics", "train", "seeds", "paths", "scene_count"},
                     "top level");
  RunConfig cfg;
  detail::read_field(j, "scene_count", cfg.scene_count);
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    detail::check_keys(s,
                       {"lane_family", "agent_count_min", "agent_count_max", "jitter",
                        "t_history", "t_future", "dt", "speed_min", "speed_max",
                        "predicted_fraction", "lane_count", "lane_spacing"},
                       "scenario");
    if (s.contains("lane_family")) {
      cfg.scenario.lane_family = parse_lane_family(s.at("lane_family").get<std::string>());
    }
    detail::read_field(s, "agent_count_min", cfg.scenario.agent_count_min);
    detail::read_field(s, "agent_count_max", cfg.scenario.agent_count_max);
    detail::read_field(s, "jitter", cfg.scenario.jitter);
    detail::read_field(s, "t_history", cfg.scenario.t_history);
    detail::read_field(s, "t_future", cfg.scenario.t_future);
    detail::read_field(s, "dt", cfg.scenario.dt);
    detail::read_field(s, "speed_min", cfg.scenario.speed_min);
    detail::read_field(s, "speed_max", cfg.scenario.speed_max);
    detail::read_field(s, "predicted_fraction", cfg.scenario.predicted_fraction);
    detail::read_field(s, "lane_count", cfg.scenario.lane_count);
    detail::read_field(s, "lane_spacing", cfg.scenario.lane_spacing);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::check_keys(e,
                       {"d_model", "heads", "enable_other_agent_former", "enable_hd_map_former",
                        "map_patch_len", "former_layers"},
                       "encoder");
    detail::read_field(e, "d_model", cfg.encoder.d_model);
    detail::read_field(e, "heads", cfg.encoder.heads);
    detail::read_field(e, "enable_other_agent_former", cfg.encoder.enable_other_agent_former);
    detail::read_field(e, "enable_hd_map_former", cfg.encoder.enable_hd_map_former);
    detail::read_field(e, "map_patch_len", cfg.encoder.map_patch_len);
    detail::read_field(e, "former_layers", cfg.encoder.former_layers);
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    detail::check_keys(d, {"enable_self_attention", "mlp_hidden", "heads"}, "decoder");
    detail::read_field(d, "enable_self_attention", cfg.decoder.enable_self_attention);
    detail::read_field(d, "mlp_hidden", cfg.decoder.mlp_hidden);
    detail::read_field(d, "heads", cfg.decoder.heads);
  }
  if (j.contains("diffusion")) {
    const auto& d = j.at("diffusion");
    detail::check_keys(
        d, {"t_steps", "beta_start", "beta_end", "d_latent", "dit_blocks", "dit_heads", "freq_dim"},
        "diffusion");
    detail::read_field(d, "t_steps", cfg.diffusion.t_steps);
    detail::read_field(d, "beta_start", cfg.diffusion.beta_start);
    detail::read_field(d, "beta_end", cfg.diffusion.beta_end);
    detail::read_field(d, "d_latent", cfg.diffusion.d_latent);
    detail::read_field(d, "dit_blocks", cfg.diffusion.dit_blocks);
    detail::read_field(d, "dit_heads", cfg.diffusion.dit_heads);
    detail::read_field(d, "freq_dim", cfg.diffusion.freq_dim);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    detail::check_keys(l,
                       {"step_weights", "huber_delta", "virtual_knot_stride", "lambda_diffusion",
                        "lambda_w_ade", "lambda_fde", "lambda_huber"},
                       "loss");
    detail::read_field(l, "step_weights", cfg.loss.step_weights);
    detail::read_field(l, "huber_delta", cfg.loss.huber_delta);
    detail::read_field(l, "virtual_knot_stride", cfg.loss.virtual_knot_stride);
    detail::read_field(l, "lambda_diffusion", cfg.loss.lambda_diffusion);
    detail::read_field(l, "lambda_w_ade", cfg.loss.lambda_w_ade);
    detail::read_field(l, "lambda_fde", cfg.loss.lambda_fde);
    detail::read_field(l, "lambda_huber", cfg.loss.lambda_huber);
  }
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    detail::check_keys(m, {"bandwidth", "n_samples", "include_position_mmd"}, "metrics");
    detail::read_field(m, "bandwidth", cfg.metrics.kernel.bandwidth);
    detail::read_field(m, "n_samples", cfg.metrics.n_samples);
    detail::read_field(m, "include_position_mmd", cfg.metrics.include_position_mmd);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t, {"steps", "lr", "beta1", "beta2", "eps", "checkpoint_interval"},
                       "train");
    detail::read_field(t, "steps", cfg.train.steps);
    detail::read_field(t, "lr", cfg.train.adam.lr);
    detail::read_field(t, "beta1", cfg.train.adam.beta1);
    detail::read_field(t, "beta2", cfg.train.adam.beta2);
    detail::read_field(t, "eps", cfg.train.adam.eps);
    detail::read_field(t, "checkpoint_interval", cfg.train.checkpoint_interval);
  }
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    detail::check_keys(s, {"data", "init", "train", "sample"}, "seeds");
    detail::read_field(s, "data", cfg.seeds.data);
    detail::read_field(s, "init", cfg.seeds.init);
    detail::read_field(s, "train", cfg.seeds.train);
    detail::read_field(s, "sample", cfg.seeds.sample);
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::check_keys(p, {"data_dir", "checkpoint_dir", "report_dir"}, "paths");
    detail::read_field(p, "data_dir", cfg.paths.data_dir);
    detail::read_field(p, "checkpoint_dir", cfg.paths.checkpoint_dir);
    detail::read_field(p, "report_dir", cfg.paths.report_dir);
  }
  cfg.train.seed = cfg.seeds.train;
  cfg.sync_horizons();
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config parse failure in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tsdit

#endif  // TSDIT_RUN_CONFIG_HPP_
