#ifndef TSDIT_METRICS_HPP_
#define TSDIT_METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsdit/decoder.hpp"
#include "tsdit/preprocess.hpp"
#include "tsdit/scene.hpp"

namespace tsdit {

struct KernelConfig {
  double bandwidth = 0.0;  // <= 0 selects the median heuristic

  void validate() const {
    if (!std::isfinite(bandwidth)) throw ConfigError("kernel bandwidth must be finite");
  }
};

struct MetricsConfig {
  KernelConfig kernel;
  int n_samples = 1;
  bool include_position_mmd = false;

  void validate() const {
    kernel.validate();
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  }
};

struct EvalReport {
  double ade = 0.0;
  double fde = 0.0;
  double speed_mmd = 0.0;
  double heading_mmd = 0.0;
  double collision_rate = 0.0;
  int n_scenes = 0;
  int n_samples_per_scene = 0;
  double kernel_sigma_speed = 0.0;
  double kernel_sigma_heading = 0.0;
  double position_mmd = -1.0;  // < 0 when not requested

  void validate() const {
    for (double v : {ade, fde, speed_mmd, heading_mmd, collision_rate}) {
      if (!std::isfinite(v) || v < 0.0) throw NumericError("eval metric non-finite or negative");
    }
    if (collision_rate > 1.0) throw NumericError("collision_rate above 1");
  }
};

using Sample = std::vector<double>;

// Mean Euclidean displacement over agents and steps.
inline double ade(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.ndim() != 3 || pred.dim(2) != 2) {
    throw ShapeError("ade: positions must share shape [A,T,2]");
  }
  const int rows = pred.dim(0) * pred.dim(1);
  if (rows == 0) return 0.0;
  double acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double dx = pred.data()[r * 2] - gt.data()[r * 2];
    const double dy = pred.data()[r * 2 + 1] - gt.data()[r * 2 + 1];
    acc += std::hypot(dx, dy);
  }
  return acc / rows;
}

// Mean endpoint displacement over agents.
inline double fde(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.ndim() != 3 || pred.dim(2) != 2) {
    throw ShapeError("fde: positions must share shape [A,T,2]");
  }
  const int a_p = pred.dim(0), t_f = pred.dim(1);
  if (a_p == 0) return 0.0;
  double acc = 0.0;
  for (int a = 0; a < a_p; ++a) {
    const int r = a * t_f + t_f - 1;
    const double dx = pred.data()[r * 2] - gt.data()[r * 2];
    const double dy = pred.data()[r * 2 + 1] - gt.data()[r * 2 + 1];
    acc += std::hypot(dx, dy);
  }
  return acc / a_p;
}

namespace detail {

inline double sq_dist(const Sample& a, const Sample& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

// Median pairwise distance over the pooled set; falls back to 1 when every
// point coincides.
inline double median_heuristic_sigma(const std::vector<Sample>& x, const std::vector<Sample>& y) {
  std::vector<Sample> pool = x;
  pool.insert(pool.end(), y.begin(), y.end());
  std::vector<double> dists;
  dists.reserve(pool.size() * (pool.size() - 1) / 2);
  for (size_t i = 0; i < pool.size(); ++i)
    for (size_t j = i + 1; j < pool.size(); ++j) dists.push_back(std::sqrt(sq_dist(pool[i], pool[j])));
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double median = dists[dists.size() / 2];
  return median > 0.0 ? median : 1.0;
}

}  // namespace detail

// Biased (V-statistic) squared MMD with the RBF kernel
// k(a,b) = exp(-|a-b|^2 / (2 sigma^2)), clamped at zero. Accumulation runs in
// extended precision; for equal-size sets the three kernel means are fused
// into per-pair groups, which keeps the cancellation floor far below the
// value itself when the two sets nearly coincide.
inline double mmd_squared(const std::vector<Sample>& x, const std::vector<Sample>& y,
                          const KernelConfig& cfg, double* sigma_out = nullptr) {
  cfg.validate();
  if (x.empty() || y.empty()) throw DataError("mmd: sample sets must be non-empty");
  const size_t d = x.front().size();
  for (const auto& pool : {x, y})
    for (const Sample& s : pool) {
      if (s.size() != d) throw ShapeError("mmd: inconsistent sample dimension");
    }
  const double sigma =
      cfg.bandwidth > 0.0 ? cfg.bandwidth : detail::median_heuristic_sigma(x, y);
  if (sigma_out != nullptr) *sigma_out = sigma;
  const long double inv = 1.0L / (2.0L * static_cast<long double>(sigma) * sigma);
  auto kernel = [&](const Sample& a, const Sample& b) {
    return std::exp(-static_cast<long double>(detail::sq_dist(a, b)) * inv);
  };
  long double value = 0.0L;
  if (x.size() == y.size()) {
    const size_t n = x.size();
    long double acc = 0.0L;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        acc += kernel(x[i], x[j]) + kernel(y[i], y[j]) - kernel(x[i], y[j]) - kernel(y[i], x[j]);
      }
    value = acc / (static_cast<long double>(n) * n);
  } else {
    auto mean_kernel = [&](const std::vector<Sample>& a, const std::vector<Sample>& b) {
      long double acc = 0.0L;
      for (const Sample& p : a)
        for (const Sample& q : b) acc += kernel(p, q);
      return acc / (static_cast<long double>(a.size()) * static_cast<long double>(b.size()));
    };
    value = mean_kernel(x, x) + mean_kernel(y, y) - 2.0L * mean_kernel(x, y);
  }
  return std::max(static_cast<double>(value), 0.0);
}

inline std::vector<Sample> to_samples(const std::vector<double>& values) {
  std::vector<Sample> out;
  out.reserve(values.size());
  for (double v : values) out.push_back({v});
  return out;
}

// Angles embedded as (cos, sin) points before the kernel, so the metric is
// invariant under 2*pi wraps.
inline std::vector<Sample> embed_headings(const std::vector<double>& headings) {
  std::vector<Sample> out;
  out.reserve(headings.size());
  for (double h : headings) out.push_back({std::cos(h), std::sin(h)});
  return out;
}

inline double speed_mmd(const std::vector<double>& generated, const std::vector<double>& truth,
                        const KernelConfig& cfg, double* sigma_out = nullptr) {
  if (generated.empty() || truth.empty()) throw DataError("speed_mmd: empty pools");
  return std::sqrt(mmd_squared(to_samples(generated), to_samples(truth), cfg, sigma_out));
}

inline double heading_mmd(const std::vector<double>& generated, const std::vector<double>& truth,
                          const KernelConfig& cfg, double* sigma_out = nullptr) {
  if (generated.empty() || truth.empty()) throw DataError("heading_mmd: empty pools");
  return std::sqrt(mmd_squared(embed_headings(generated), embed_headings(truth), cfg, sigma_out));
}

// ------------------------------ collisions ---------------------------------

namespace detail {

struct OrientedBox {
  Vec2 center;
  double heading;
  double length;  // along the heading
  double width;

  std::array<Vec2, 4> corners() const {
    const double c = std::cos(heading), s = std::sin(heading);
    const double hl = length / 2.0, hw = width / 2.0;
    std::array<Vec2, 4> out;
    int k = 0;
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0}) {
        out[static_cast<size_t>(k++)] = {center.x + c * sx * hl - s * sy * hw,
                                         center.y + s * sx * hl + c * sy * hw};
      }
    return out;
  }
};

// Separating-axis test over the four face normals of two oriented rectangles.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const Vec2 axes[4] = {{std::cos(a.heading), std::sin(a.heading)},
                        {-std::sin(a.heading), std::cos(a.heading)},
                        {std::cos(b.heading), std::sin(b.heading)},
                        {-std::sin(b.heading), std::cos(b.heading)}};
  for (const Vec2& axis : axes) {
    double a_min = 1e300, a_max = -1e300, b_min = 1e300, b_max = -1e300;
    for (const Vec2& p : ca) {
      const double proj = p.x * axis.x + p.y * axis.y;
      a_min = std::min(a_min, proj);
      a_max = std::max(a_max, proj);
    }
    for (const Vec2& p : cb) {
      const double proj = p.x * axis.x + p.y * axis.y;
      b_min = std::min(b_min, proj);
      b_max = std::max(b_max, proj);
    }
    if (a_max < b_min || b_max < a_min) return false;
  }
  return true;
}

}  // namespace detail

// Fraction of predicted agents whose oriented footprint overlaps any other
// agent's ground-truth footprint at any future step. `margin` inflates every
// box symmetrically (diagnostic knob).
inline double collision_rate(const TrajectoryBundle& bundle, const Scene& scene,
                             const ModelInputs& inputs, double margin = 0.0) {
  const int a_p = inputs.predicted_count();
  if (a_p == 0) return 0.0;
  const int t_f = inputs.t_future;
  const int t_h = inputs.t_history;
  int colliding = 0;
  for (int p = 0; p < a_p; ++p) {
    const int self = inputs.predicted_indices[static_cast<size_t>(p)];
    const AgentTrack& self_track = scene.agents[static_cast<size_t>(self)];
    bool hit = false;
    for (int t = 0; t < t_f && !hit; ++t) {
      detail::OrientedBox mine;
      mine.center = {bundle.positions.data()[(p * t_f + t) * 2 + 0] + inputs.world_center.x,
                     bundle.positions.data()[(p * t_f + t) * 2 + 1] + inputs.world_center.y};
      mine.heading = bundle.headings[static_cast<size_t>(p)][static_cast<size_t>(t)];
      mine.length = self_track.length + margin;
      mine.width = self_track.width + margin;
      for (size_t other = 0; other < scene.agents.size() && !hit; ++other) {
        if (static_cast<int>(other) == self) continue;
        const AgentTrack& track = scene.agents[other];
        detail::OrientedBox theirs;
        theirs.center = track.positions[static_cast<size_t>(t_h + t)];
        theirs.heading = track.headings[static_cast<size_t>(t_h + t)];
        theirs.length = track.length + margin;
        theirs.width = track.width + margin;
        hit = detail::boxes_overlap(mine, theirs);
      }
    }
    colliding += hit ? 1 : 0;
  }
  return static_cast<double>(colliding) / a_p;
}

// ------------------------------ evaluation ---------------------------------

// Ground-truth future speeds/headings derived through the same delta
// formulas as decoded bundles, so a perfect model scores exactly zero.
inline void gt_future_kinematics(const ModelInputs& inputs, std::vector<double>* speeds,
                                 std::vector<double>* headings) {
  const int a_p = inputs.predicted_count();
  const int t_f = inputs.t_future;
  Tensor start = predicted_start_positions(inputs);
  Tensor deltas = Tensor::zeros({a_p, t_f, 2});
  for (int a = 0; a < a_p; ++a)
    for (int t = 0; t < t_f; ++t)
      for (int c = 0; c < 2; ++c) {
        const double prev = t == 0 ? start.data()[a * 2 + c]
                                   : inputs.gt_future.data()[(a * t_f + t - 1) * 2 + c];
        deltas.data()[(a * t_f + t) * 2 + c] =
            inputs.gt_future.data()[(a * t_f + t) * 2 + c] - prev;
      }
  std::vector<double> fallback;
  for (int ai : inputs.predicted_indices) {
    fallback.push_back(inputs.current_headings[static_cast<size_t>(ai)]);
  }
  auto hs = compute_heading(deltas, fallback);
  auto ss = compute_speed(deltas, inputs.dt);
  for (const auto& row : ss) speeds->insert(speeds->end(), row.begin(), row.end());
  for (const auto& row : hs) headings->insert(headings->end(), row.begin(), row.end());
}

using SampleDecodeFn = std::function<TrajectoryBundle(const ModelInputs&, uint64_t sample_seed)>;

// Per scene: n_samples bundles with derived seeds; ADE/FDE from the
// minimum-ADE sample, speed/heading pools from every sample. Scenes are
// processed in scene-id order and the whole report is a pure function of
// (scenes, sampler, seed).
inline EvalReport evaluate(const SampleDecodeFn& sampler, const std::vector<Scene>& scenes,
                           uint64_t seed, const MetricsConfig& cfg) {
  cfg.validate();
  if (scenes.empty()) throw DataError("evaluate: no scenes");

  std::vector<const Scene*> ordered;
  ordered.reserve(scenes.size());
  for (const Scene& s : scenes) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const Scene* a, const Scene* b) { return a->scene_id < b->scene_id; });

  double ade_acc = 0.0, fde_acc = 0.0;
  double collision_acc = 0.0;
  int collision_n = 0;
  std::vector<double> gen_speeds, gen_headings, gt_speeds, gt_headings;
  std::vector<Sample> gen_positions, gt_positions;

  for (const Scene* scene : ordered) {
    const ModelInputs inputs = preprocess_world_centric(*scene);
    gt_future_kinematics(inputs, &gt_speeds, &gt_headings);
    for (int i = 0; i < inputs.gt_future.numel() / 2; ++i) {
      gt_positions.push_back(
          {inputs.gt_future.data()[i * 2], inputs.gt_future.data()[i * 2 + 1]});
    }
    double best_ade = 0.0, best_fde = 0.0;
    for (int s = 0; s < cfg.n_samples; ++s) {
      const uint64_t sample_seed =
          mix_seed(seed, fnv1a64(scene->scene_id) ^ static_cast<uint64_t>(s));
      TrajectoryBundle bundle = sampler(inputs, sample_seed);
      const double sample_ade = ade(bundle.positions, inputs.gt_future);
      if (s == 0 || sample_ade < best_ade) {
        best_ade = sample_ade;
        best_fde = fde(bundle.positions, inputs.gt_future);
      }
      for (const auto& row : bundle.speeds) {
        gen_speeds.insert(gen_speeds.end(), row.begin(), row.end());
      }
      for (const auto& row : bundle.headings) {
        gen_headings.insert(gen_headings.end(), row.begin(), row.end());
      }
      for (int i = 0; i < bundle.positions.numel() / 2; ++i) {
        gen_positions.push_back(
            {bundle.positions.data()[i * 2], bundle.positions.data()[i * 2 + 1]});
      }
      collision_acc += collision_rate(bundle, *scene, inputs);
      ++collision_n;
    }
    ade_acc += best_ade;
    fde_acc += best_fde;
  }

  EvalReport report;
  report.n_scenes = static_cast<int>(scenes.size());
  report.n_samples_per_scene = cfg.n_samples;
  report.ade = ade_acc / static_cast<double>(scenes.size());
  report.fde = fde_acc / static_cast<double>(scenes.size());
  report.speed_mmd = speed_mmd(gen_speeds, gt_speeds, cfg.kernel, &report.kernel_sigma_speed);
  report.heading_mmd =
      heading_mmd(gen_headings, gt_headings, cfg.kernel, &report.kernel_sigma_heading);
  report.collision_rate = collision_n > 0 ? collision_acc / collision_n : 0.0;
  if (cfg.include_position_mmd) {
    report.position_mmd = std::sqrt(mmd_squared(gen_positions, gt_positions, cfg.kernel));
  }
  report.validate();
  return report;
}

// ------------------------------- reports -----------------------------------

inline constexpr const char* kEvalCsvHeader =
    "ade,fde,speed_mmd,heading_mmd,collision_rate,n_scenes,n_samples";

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["ade"] = r.ade;
  j["fde"] = r.fde;
  j["speed_mmd"] = r.speed_mmd;
  j["heading_mmd"] = r.heading_mmd;
  j["collision_rate"] = r.collision_rate;
  j["n_scenes"] = r.n_scenes;
  j["n_samples"] = r.n_samples_per_scene;
  j["kernel_sigma_speed"] = r.kernel_sigma_speed;
  j["kernel_sigma_heading"] = r.kernel_sigma_heading;
  if (r.position_mmd >= 0.0) j["position_mmd"] = r.position_mmd;
  return j;
}

inline std::string report_to_csv(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d", r.ade, r.fde, r.speed_mmd,
                r.heading_mmd, r.collision_rate, r.n_scenes, r.n_samples_per_scene);
  return std::string(kEvalCsvHeader) + "\n" + buf + "\n";
}

inline void save_report(const EvalReport& r, const std::string& json_path,
                        const std::string& csv_path) {
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot write report: " + json_path);
  js << report_to_json(r).dump(1) << "\n";
  std::ofstream cs(csv_path);
  if (!cs) throw IoError("cannot write report: " + csv_path);
  cs << report_to_csv(r);
}

}  // namespace tsdit

#endif  // TSDIT_METRICS_HPP_
