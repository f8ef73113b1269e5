#ifndef TSDIT_PREPROCESS_HPP_
#define TSDIT_PREPROCESS_HPP_

#include <algorithm>
#include <string>
#include <vector>

#include "tsdit/common.hpp"
#include "tsdit/scene.hpp"
#include "tsdit/tensor.hpp"

namespace tsdit {

// Feature widths of the preprocessed tensors.
inline constexpr int kMotionDim = 4;  // dx, dy, dheading, dspeed
inline constexpr int kAgentDim = 7;   // x, y, width, length, type one-hot(3)
inline constexpr int kTlDim = 6;      // x, y, state one-hot(4)
inline constexpr int kMapDim = 5;     // x, y, lane-type one-hot(3)

// World-centric preprocessed tensors plus the bookkeeping the decoder and
// evaluation need to get back to absolute coordinates.
struct ModelInputs {
  Tensor motion;      // [A, T_h-1, 4]
  Tensor agent_feat;  // [A, 1, 7]
  Tensor tl_feat;     // [T_tl, T_h, 6]
  Tensor map_feat;    // [1, L, P, 5]
  std::vector<bool> predicted_mask;  // [A]
  Tensor gt_future;   // [A_p, T_f, 2], world-centric

  std::string scene_id;
  std::vector<std::string> agent_ids;    // [A]
  std::vector<int> predicted_indices;    // into the agent axis, ascending
  std::vector<double> current_headings;  // [A], at the current step
  std::vector<double> current_speeds;    // [A]
  Vec2 world_center;
  double dt = 0.1;
  int t_history = 0;
  int t_future = 0;

  int agent_count() const { return motion.dim(0); }
  int predicted_count() const { return static_cast<int>(predicted_indices.size()); }
};

// Translates the whole scene into a shared world-centric frame (mean of all
// agents' current-step positions; translation only, no rotation) and builds
// the model tensors. Motion features are per-step differences of position,
// heading and speed over the history window.
inline ModelInputs preprocess_world_centric(const Scene& scene) {
  if (scene.horizon_history < 2) {
    throw ShapeError("preprocess: horizon_history must be >= 2");
  }
  scene.validate();

  const int a_count = static_cast<int>(scene.agents.size());
  const int t_h = scene.horizon_history;
  const int t_f = scene.horizon_future;
  const int cur = t_h - 1;

  ModelInputs out;
  out.scene_id = scene.scene_id;
  out.dt = scene.dt;
  out.t_history = t_h;
  out.t_future = t_f;

  // Shared origin; ordered sums keep the mean independent of agent order.
  {
    std::vector<double> xs, ys;
    xs.reserve(static_cast<size_t>(a_count));
    ys.reserve(static_cast<size_t>(a_count));
    for (const AgentTrack& a : scene.agents) {
      xs.push_back(a.positions[static_cast<size_t>(cur)].x);
      ys.push_back(a.positions[static_cast<size_t>(cur)].y);
    }
    if (a_count > 0) {
      out.world_center = {ordered_sum(xs) / a_count, ordered_sum(ys) / a_count};
    }
  }

  out.motion = Tensor::zeros({a_count, t_h - 1, kMotionDim});
  out.agent_feat = Tensor::zeros({a_count, 1, kAgentDim});
  out.predicted_mask.resize(static_cast<size_t>(a_count));

  for (int ai = 0; ai < a_count; ++ai) {
    const AgentTrack& a = scene.agents[static_cast<size_t>(ai)];
    out.agent_ids.push_back(a.agent_id);
    out.predicted_mask[static_cast<size_t>(ai)] = a.role == AgentRole::Predicted;
    if (a.role == AgentRole::Predicted) out.predicted_indices.push_back(ai);
    out.current_headings.push_back(a.headings[static_cast<size_t>(cur)]);
    out.current_speeds.push_back(a.speeds[static_cast<size_t>(cur)]);

    double* m = out.motion.data().data() + static_cast<size_t>(ai) * (t_h - 1) * kMotionDim;
    for (int t = 0; t + 1 < t_h; ++t) {
      const Vec2 dp = a.positions[static_cast<size_t>(t + 1)] - a.positions[static_cast<size_t>(t)];
      m[t * kMotionDim + 0] = dp.x;
      m[t * kMotionDim + 1] = dp.y;
      m[t * kMotionDim + 2] =
          wrap_angle(a.headings[static_cast<size_t>(t + 1)] - a.headings[static_cast<size_t>(t)]);
      m[t * kMotionDim + 3] =
          a.speeds[static_cast<size_t>(t + 1)] - a.speeds[static_cast<size_t>(t)];
    }

    double* f = out.agent_feat.data().data() + static_cast<size_t>(ai) * kAgentDim;
    const Vec2 p = a.positions[static_cast<size_t>(cur)] - out.world_center;
    f[0] = p.x;
    f[1] = p.y;
    f[2] = a.width;
    f[3] = a.length;
    f[4 + static_cast<int>(a.agent_type)] = 1.0;
  }

  const int tl_count = static_cast<int>(scene.traffic_lights.size());
  out.tl_feat = Tensor::zeros({tl_count, t_h, kTlDim});
  for (int li = 0; li < tl_count; ++li) {
    const TrafficLightTrack& tl = scene.traffic_lights[static_cast<size_t>(li)];
    const Vec2 p = tl.position - out.world_center;
    double* row = out.tl_feat.data().data() + static_cast<size_t>(li) * t_h * kTlDim;
    for (int t = 0; t < t_h; ++t) {
      row[t * kTlDim + 0] = p.x;
      row[t * kTlDim + 1] = p.y;
      row[t * kTlDim + 2 + static_cast<int>(tl.states[static_cast<size_t>(t)])] = 1.0;
    }
  }

  const int lane_count = static_cast<int>(scene.lanes.size());
  int max_points = 0;
  for (const LanePolyline& l : scene.lanes) {
    max_points = std::max(max_points, static_cast<int>(l.points.size()));
  }
  out.map_feat = Tensor::zeros({1, lane_count, max_points, kMapDim});
  for (int li = 0; li < lane_count; ++li) {
    const LanePolyline& l = scene.lanes[static_cast<size_t>(li)];
    double* row = out.map_feat.data().data() + static_cast<size_t>(li) * max_points * kMapDim;
    for (int pi = 0; pi < max_points; ++pi) {
      // Shorter lanes are padded by repeating their final point.
      const Vec2& src = l.points[std::min(static_cast<size_t>(pi), l.points.size() - 1)];
      const Vec2 p = src - out.world_center;
      row[pi * kMapDim + 0] = p.x;
      row[pi * kMapDim + 1] = p.y;
      row[pi * kMapDim + 2 + static_cast<int>(l.lane_type)] = 1.0;
    }
  }

  const int a_p = out.predicted_count();
  out.gt_future = Tensor::zeros({a_p, t_f, 2});
  for (int pi = 0; pi < a_p; ++pi) {
    const AgentTrack& a =
        scene.agents[static_cast<size_t>(out.predicted_indices[static_cast<size_t>(pi)])];
    double* g = out.gt_future.data().data() + static_cast<size_t>(pi) * t_f * 2;
    for (int t = 0; t < t_f; ++t) {
      const Vec2 p = a.positions[static_cast<size_t>(t_h + t)] - out.world_center;
      g[t * 2 + 0] = p.x;
      g[t * 2 + 1] = p.y;
    }
  }

  return out;
}

// Current-step position of each predicted agent in the world-centric frame;
// the integration start for decoded trajectories.
inline Tensor predicted_start_positions(const ModelInputs& inputs) {
  const int a_p = inputs.predicted_count();
  Tensor out = Tensor::zeros({a_p, 2});
  for (int pi = 0; pi < a_p; ++pi) {
    const int ai = inputs.predicted_indices[static_cast<size_t>(pi)];
    out.data()[pi * 2 + 0] = inputs.agent_feat.data()[static_cast<size_t>(ai) * kAgentDim + 0];
    out.data()[pi * 2 + 1] = inputs.agent_feat.data()[static_cast<size_t>(ai) * kAgentDim + 1];
  }
  return out;
}

}  // namespace tsdit

#endif  // TSDIT_PREPROCESS_HPP_
