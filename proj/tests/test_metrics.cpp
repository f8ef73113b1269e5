#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "tsdit/metrics.hpp"
#include "tsdit/scene_gen.hpp"
#include "tsdit/training.hpp"

using namespace tsdit;

namespace {

// O(n^2) double-sum reimplementation, independent of the library path.
double brute_force_mmd2(const std::vector<Sample>& x, const std::vector<Sample>& y,
                        double sigma) {
  auto k = [&](const Sample& a, const Sample& b) {
    double d2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-d2 / (2.0 * sigma * sigma));
  };
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (const auto& a : x)
    for (const auto& b : x) xx += k(a, b);
  for (const auto& a : y)
    for (const auto& b : y) yy += k(a, b);
  for (const auto& a : x)
    for (const auto& b : y) xy += k(a, b);
  return xx / (x.size() * x.size()) + yy / (y.size() * y.size()) - 2.0 * xy / (x.size() * y.size());
}

std::vector<Sample> random_samples(int n, int d, Rng& rng) {
  std::vector<Sample> out(static_cast<size_t>(n));
  for (auto& s : out) {
    s.resize(static_cast<size_t>(d));
    for (double& v : s) v = rng.uniform(-2.0, 2.0);
  }
  return out;
}

// Minimal two-agent scene: one predicted, one other, both driving straight
// east at the given lateral offsets.
Scene two_agent_scene(double y_gap, int t_h = 3, int t_f = 5) {
  Scene s;
  s.scene_id = "collision_fixture";
  s.dt = 0.1;
  s.horizon_history = t_h;
  s.horizon_future = t_f;
  for (int idx = 0; idx < 2; ++idx) {
    AgentTrack a;
    a.agent_id = idx == 0 ? "pred" : "other";
    a.role = idx == 0 ? AgentRole::Predicted : AgentRole::Other;
    a.width = 2.0;
    a.length = 4.5;
    const double y = idx == 0 ? 0.0 : y_gap;
    for (int t = 0; t < t_h + t_f; ++t) {
      a.positions.push_back({t * 0.8, y});
      a.headings.push_back(0.0);
      a.speeds.push_back(8.0);
    }
    s.agents.push_back(std::move(a));
  }
  LanePolyline l;
  l.lane_id = "l0";
  l.points = {{-10, 0}, {100, 0}};
  s.lanes.push_back(l);
  return s;
}

// Bundle that replays the exact ground-truth future of the predicted agents.
TrajectoryBundle gt_stub_bundle(const ModelInputs& in) {
  const int a_p = in.predicted_count();
  const int t_f = in.t_future;
  TrajectoryBundle b;
  b.positions = Tensor::from(in.gt_future.shape(), in.gt_future.data());
  Tensor start = predicted_start_positions(in);
  b.deltas = Tensor::zeros({a_p, t_f, 2});
  for (int a = 0; a < a_p; ++a)
    for (int t = 0; t < t_f; ++t)
      for (int c = 0; c < 2; ++c) {
        const double prev = t == 0 ? start.data()[a * 2 + c]
                                   : in.gt_future.data()[(a * t_f + t - 1) * 2 + c];
        b.deltas.data()[(a * t_f + t) * 2 + c] = in.gt_future.data()[(a * t_f + t) * 2 + c] - prev;
      }
  std::vector<double> fallback;
  for (int ai : in.predicted_indices) fallback.push_back(in.current_headings[static_cast<size_t>(ai)]);
  b.headings = compute_heading(b.deltas, fallback);
  b.speeds = compute_speed(b.deltas, in.dt);
  return b;
}

}  // namespace

TEST(Ade, HandValuesAndBruteForce) {
  Rng rng(1);
  Tensor gt = Tensor::zeros({3, 7, 2});
  for (double& v : gt.data()) v = rng.uniform(-5.0, 5.0);
  EXPECT_DOUBLE_EQ(ade(gt, gt), 0.0);

  Tensor shifted = Tensor::from(gt.shape(), gt.data());
  for (int i = 0; i < shifted.numel(); i += 2) shifted.data()[i] += 1.0;
  EXPECT_NEAR(ade(shifted, gt), 1.0, 1e-12);

  Tensor pred = Tensor::zeros({3, 7, 2});
  for (double& v : pred.data()) v = rng.uniform(-5.0, 5.0);
  double brute = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int t = 0; t < 7; ++t) {
      const double dx = pred.data()[(a * 7 + t) * 2] - gt.data()[(a * 7 + t) * 2];
      const double dy = pred.data()[(a * 7 + t) * 2 + 1] - gt.data()[(a * 7 + t) * 2 + 1];
      brute += std::sqrt(dx * dx + dy * dy);
    }
  brute /= 21.0;
  EXPECT_NEAR(ade(pred, gt), brute, 1e-12);
}

TEST(AdeFde, CoincideWithTrainingLosses) {
  Rng rng(2);
  Tensor gt = Tensor::zeros({2, 9, 2});
  Tensor pred = Tensor::zeros({2, 9, 2});
  for (double& v : gt.data()) v = rng.uniform(-3.0, 3.0);
  for (double& v : pred.data()) v = rng.uniform(-3.0, 3.0);
  EXPECT_NEAR(ade(pred, gt), w_ade_loss(pred, gt, std::vector<double>(9, 1.0)).item(), 1e-12);
  EXPECT_NEAR(fde(pred, gt), fde_loss(pred, gt).item(), 1e-12);
}

TEST(Mmd, IdenticalSetsVanish) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_samples(20, 2, rng);
    KernelConfig cfg;
    EXPECT_NEAR(mmd_squared(x, x, cfg), 0.0, 1e-12);
  }
}

TEST(Mmd, TwoPointClosedForm) {
  KernelConfig cfg;
  cfg.bandwidth = 1.0;
  const double got = mmd_squared({{0.0}}, {{2.0}}, cfg);
  EXPECT_NEAR(got, 2.0 - 2.0 * std::exp(-2.0), 1e-12);
  EXPECT_NEAR(got, 1.72933, 1e-5);
}

TEST(Mmd, MatchesBruteForceOnRandomPairs) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(rng.next_below(40));
    const int m = 5 + static_cast<int>(rng.next_below(40));
    const int d = 1 + static_cast<int>(rng.next_below(3));
    auto x = random_samples(n, d, rng);
    auto y = random_samples(m, d, rng);
    KernelConfig cfg;
    cfg.bandwidth = 0.3 + rng.uniform();
    EXPECT_NEAR(mmd_squared(x, y, cfg), std::max(brute_force_mmd2(x, y, cfg.bandwidth), 0.0),
                1e-12);
    // Symmetry.
    EXPECT_NEAR(mmd_squared(x, y, cfg), mmd_squared(y, x, cfg), 1e-12);
  }
}

TEST(Mmd, MedianHeuristicFallsBackOnDegenerateData) {
  KernelConfig cfg;  // bandwidth unset -> median heuristic
  double sigma = 0.0;
  const double got = mmd_squared({{1.0}, {1.0}}, {{1.0}}, cfg, &sigma);
  EXPECT_DOUBLE_EQ(sigma, 1.0);
  EXPECT_NEAR(got, 0.0, 1e-12);
}

TEST(SpeedMmd, ScalingSeparatesPools) {
  Rng rng(5);
  std::vector<double> truth;
  for (int i = 0; i < 60; ++i) truth.push_back(rng.uniform(3.0, 9.0));
  std::vector<double> same = truth;
  std::vector<double> doubled;
  for (double v : truth) doubled.push_back(2.0 * v);
  KernelConfig cfg;
  EXPECT_NEAR(speed_mmd(same, truth, cfg), 0.0, 1e-9);
  EXPECT_GT(speed_mmd(doubled, truth, cfg), 0.01);
  // Set semantics: shuffling sample order changes nothing.
  std::vector<double> shuffled = truth;
  for (size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[static_cast<size_t>(rng.next_below(static_cast<int64_t>(i)))]);
  }
  EXPECT_NEAR(speed_mmd(shuffled, truth, cfg), 0.0, 1e-9);
}

TEST(HeadingMmd, WrapInvariance) {
  Rng rng(6);
  std::vector<double> base;
  for (int i = 0; i < 50; ++i) base.push_back(rng.uniform(-3.0, 3.0));
  std::vector<double> wrapped;
  for (size_t i = 0; i < base.size(); ++i) {
    wrapped.push_back(base[i] + (i % 3 == 0 ? 2.0 * std::numbers::pi : 0.0) +
                      (i % 5 == 0 ? -4.0 * std::numbers::pi : 0.0));
  }
  KernelConfig cfg;
  EXPECT_NEAR(heading_mmd(wrapped, base, cfg), 0.0, 1e-9);
  EXPECT_NEAR(heading_mmd(base, base, cfg), 0.0, 1e-9);
}

TEST(HeadingMmd, OpposedPopulationsClosedForm) {
  // theta=0 vs theta=pi embed to (1,0) vs (-1,0): mmd^2 = 2 - 2 exp(-2).
  KernelConfig cfg;
  cfg.bandwidth = 1.0;
  const double got = heading_mmd({0.0}, {std::numbers::pi}, cfg);
  EXPECT_NEAR(got, std::sqrt(2.0 - 2.0 * std::exp(-2.0)), 1e-12);
}

TEST(Collision, FarApartAndOverlapping) {
  {
    Scene s = two_agent_scene(100.0);
    ModelInputs in = preprocess_world_centric(s);
    EXPECT_DOUBLE_EQ(collision_rate(gt_stub_bundle(in), s, in), 0.0);
  }
  {
    Scene s = two_agent_scene(0.0);  // identical overlapping tracks
    ModelInputs in = preprocess_world_centric(s);
    EXPECT_DOUBLE_EQ(collision_rate(gt_stub_bundle(in), s, in), 1.0);
  }
}

TEST(Collision, SeparatingAxisArithmetic) {
  // Axis-aligned 2x1 boxes centered 1.9 m apart along the long axis overlap
  // (2 * (2/2) = 2 > 1.9), and separate at 2.1 m.
  detail::OrientedBox a{{0.0, 0.0}, 0.0, 2.0, 1.0};
  detail::OrientedBox b{{1.9, 0.0}, 0.0, 2.0, 1.0};
  EXPECT_TRUE(detail::boxes_overlap(a, b));
  detail::OrientedBox c{{2.1, 0.0}, 0.0, 2.0, 1.0};
  EXPECT_FALSE(detail::boxes_overlap(a, c));
  // Turning the near box broadside (long axis vertical) pulls it clear.
  detail::OrientedBox d{{1.9, 0.0}, std::numbers::pi / 2.0, 2.0, 1.0};
  EXPECT_FALSE(detail::boxes_overlap(a, d));
  // At 45 degrees its near corner reaches back in.
  detail::OrientedBox e{{1.9, 0.0}, std::numbers::pi / 4.0, 2.0, 1.0};
  EXPECT_TRUE(detail::boxes_overlap(a, e));
}

TEST(Collision, MarginMonotonicity) {
  SceneGenConfig cfg;
  cfg.lane_family = LaneFamily::FourWay;
  cfg.agent_count_min = cfg.agent_count_max = 6;
  cfg.t_history = 6;
  cfg.t_future = 20;
  double prev = -1.0;
  for (double margin : {0.0, 0.5, 2.0, 8.0}) {
    double acc = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
      Scene s = generate_synthetic_scene(seed, cfg);
      ModelInputs in = preprocess_world_centric(s);
      acc += collision_rate(gt_stub_bundle(in), s, in, margin);
    }
    EXPECT_GE(acc, prev);
    prev = acc;
  }
}

TEST(Evaluate, PerfectStubScoresZero) {
  SceneGenConfig cfg;
  cfg.lane_family = LaneFamily::Straight;
  cfg.agent_count_min = cfg.agent_count_max = 3;
  cfg.t_history = 6;
  cfg.t_future = 10;
  std::vector<Scene> scenes;
  for (uint64_t seed = 0; seed < 3; ++seed) scenes.push_back(generate_synthetic_scene(seed, cfg));
  MetricsConfig mcfg;
  SampleDecodeFn stub = [](const ModelInputs& in, uint64_t) { return gt_stub_bundle(in); };
  EvalReport r = evaluate(stub, scenes, 42, mcfg);
  EXPECT_DOUBLE_EQ(r.ade, 0.0);
  EXPECT_DOUBLE_EQ(r.fde, 0.0);
  EXPECT_LT(r.speed_mmd, 1e-9);
  EXPECT_LT(r.heading_mmd, 1e-9);
  EXPECT_EQ(r.n_scenes, 3);
  EXPECT_GT(r.kernel_sigma_speed, 0.0);
}

TEST(Evaluate, DeterministicAndSampleSeedsDiffer) {
  SceneGenConfig cfg;
  cfg.lane_family = LaneFamily::LTurn;
  cfg.agent_count_min = cfg.agent_count_max = 2;
  cfg.t_history = 6;
  cfg.t_future = 10;
  std::vector<Scene> scenes = {generate_synthetic_scene(1, cfg), generate_synthetic_scene(2, cfg)};
  std::vector<uint64_t> seen_seeds;
  SampleDecodeFn stub = [&](const ModelInputs& in, uint64_t seed) {
    seen_seeds.push_back(seed);
    TrajectoryBundle b = gt_stub_bundle(in);
    // Deterministic per-seed perturbation.
    Rng rng(seed);
    b.positions = Tensor::from(b.positions.shape(), b.positions.data());
    for (double& v : b.positions.data()) v += rng.uniform(-0.1, 0.1);
    return b;
  };
  MetricsConfig mcfg;
  mcfg.n_samples = 3;
  EvalReport a = evaluate(stub, scenes, 7, mcfg);
  const auto seeds_first = seen_seeds;
  seen_seeds.clear();
  EvalReport b = evaluate(stub, scenes, 7, mcfg);
  EXPECT_EQ(report_to_csv(a), report_to_csv(b));
  EXPECT_EQ(seeds_first, seen_seeds);
  std::sort(seen_seeds.begin(), seen_seeds.end());
  EXPECT_EQ(std::unique(seen_seeds.begin(), seen_seeds.end()), seen_seeds.end());
}

TEST(Evaluate, MinAdeAggregationPicksBestSample) {
  Scene s = two_agent_scene(50.0, 3, 6);
  std::vector<Scene> scenes = {s};
  SampleDecodeFn stub = [](const ModelInputs& in, uint64_t seed) {
    TrajectoryBundle b = gt_stub_bundle(in);
    if (seed % 2 == 0) {
      b.positions = Tensor::from(b.positions.shape(), b.positions.data());
      for (double& v : b.positions.data()) v += 5.0;  // a bad sample
    }
    return b;
  };
  MetricsConfig mcfg;
  mcfg.n_samples = 2;
  EvalReport r = evaluate(stub, scenes, 7, mcfg);
  // One of the two samples replays ground truth, so min-ADE is zero.
  EXPECT_DOUBLE_EQ(r.ade, 0.0);
  EXPECT_DOUBLE_EQ(r.fde, 0.0);
}

TEST(Report, CsvHeaderIsPinned) {
  EvalReport r;
  r.n_scenes = 1;
  r.n_samples_per_scene = 1;
  const std::string csv = report_to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "ade,fde,speed_mmd,heading_mmd,collision_rate,n_scenes,n_samples");
  nlohmann::json j = report_to_json(r);
  EXPECT_TRUE(j.contains("kernel_sigma_speed"));
  EXPECT_TRUE(j.contains("kernel_sigma_heading"));
  EXPECT_FALSE(j.contains("position_mmd"));
  r.position_mmd = 0.5;
  EXPECT_TRUE(report_to_json(r).contains("position_mmd"));
}
