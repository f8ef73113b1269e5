#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "tsdit/grad_check.hpp"
#include "tsdit/param_store.hpp"
#include "tsdit/tensor.hpp"

using namespace tsdit;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Fixed-weight sum makes a scalar loss with nondegenerate gradients even for
// outputs with built-in constraints (softmax rows sum to 1). The weights are
// drawn once so the loss stays a pure function of the parameters.
Tensor weighted_sum(const Tensor& x, const Tensor& w) { return sum_all(mul(x, w)); }

}  // namespace

TEST(Linear, IdentityAndAffine) {
  Tensor x = Tensor::from({1, 2}, {1.0, 2.0});
  Tensor w = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor b = Tensor::zeros({2});
  Tensor y = linear(x, w, b);
  EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 2.0);

  Tensor x2 = Tensor::from({1, 2}, {1.0, 1.0});
  Tensor w2 = Tensor::from({2, 1}, {1.0, 1.0});
  Tensor b2 = Tensor::from({1}, {0.5});
  EXPECT_DOUBLE_EQ(linear(x2, w2, b2).item(), 2.5);
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  Tensor x = Tensor::zeros({1, 3});
  Tensor w = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({2});
  try {
    linear(x, w, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(1,3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2,2)"), std::string::npos);
  }
}

TEST(Linear, GradientVsFiniteDifferences) {
  Rng rng(11);
  ParameterStore store;
  Tensor x = store.create("x", {3, 4}, 1.0, rng);
  Tensor w = store.create("w", {4, 2}, 0.5, rng);
  Tensor b = store.create("b", {2}, 0.5, rng);
  auto report = grad_check([&] { return sum_all(linear(x, w, b)); }, store);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(LayerNorm, ConstantVectorNormalizesToBias) {
  Tensor x = Tensor::from({1, 3}, {5.0, 5.0, 5.0});
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor y = layer_norm(x, gain, bias);
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LayerNorm, TwoPointHandValue) {
  // mean 0, variance 1: output is x / sqrt(1 + eps).
  Tensor x = Tensor::from({1, 2}, {-1.0, 1.0});
  Tensor gain = Tensor::full({2}, 1.0);
  Tensor bias = Tensor::zeros({2});
  Tensor y = layer_norm(x, gain, bias, 1e-5);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.data()[0], -expect, 1e-12);
  EXPECT_NEAR(y.data()[1], expect, 1e-12);
}

TEST(LayerNorm, GradientVsFiniteDifferences) {
  Rng rng(12);
  ParameterStore store;
  Tensor x = store.create("x", {4, 6}, 1.0, rng);
  Tensor gain = store.create("gain", {6}, 1.0, rng);
  Tensor bias = store.create("bias", {6}, 1.0, rng);
  Rng wrng(13);
  Tensor w = random_tensor({4, 6}, wrng);
  auto report = grad_check([&] { return sum_all(mul(layer_norm(x, gain, bias), w)); }, store);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(Softmax, Basics) {
  Tensor y = softmax(Tensor::from({1, 2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);

  Tensor big = softmax(Tensor::from({1, 2}, {1000.0, 0.0}));
  EXPECT_NEAR(big.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(big.data()[1], 0.0, 1e-12);

  Tensor t = softmax(Tensor::from({1, 3}, {1.0, 2.0, 3.0}));
  EXPECT_NEAR(t.data()[0], 0.09003, 1e-5);
  EXPECT_NEAR(t.data()[1], 0.24473, 1e-5);
  EXPECT_NEAR(t.data()[2], 0.66524, 1e-5);
}

TEST(Softmax, RowsSumToOneAtAnyMagnitude) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const bool extreme = trial % 2 == 0;
    Tensor x = random_tensor({5, 7}, rng, extreme ? -1e3 : -20.0, extreme ? 1e3 : 20.0);
    Tensor y = softmax(x);
    for (int r = 0; r < 5; ++r) {
      double s = 0.0;
      for (int j = 0; j < 7; ++j) s += y.data()[r * 7 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (int j = 0; j < 7; ++j) {
        // exp underflows to exactly 0 for entries ~2e3 below the row max;
        // at moderate magnitudes every weight stays strictly positive.
        EXPECT_GE(y.data()[r * 7 + j], 0.0);
        if (!extreme) EXPECT_GT(y.data()[r * 7 + j], 0.0);
      }
    }
  }
}

TEST(Attention, SingleKeyReturnsValue) {
  // Identity projections, one key: softmax weight is 1, output equals v.
  const int d = 4;
  MhaParams p;
  std::vector<double> eye(d * d, 0.0);
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  p.wq = p.wk = p.wv = p.wo = Tensor::from({d, d}, eye);
  p.bq = p.bk = p.bv = p.bo = Tensor::zeros({d});
  Tensor q_in = Tensor::from({2, d}, {0.3, -0.1, 0.5, 0.9, -0.4, 0.2, 0.0, 1.0});
  Tensor kv = Tensor::from({1, d}, {0.7, -0.3, 0.1, 0.2});
  Tensor out = multi_head_attention(q_in, kv, 1, p);
  for (int r = 0; r < 2; ++r)
    for (int j = 0; j < d; ++j) EXPECT_NEAR(out.data()[r * d + j], kv.data()[j], 1e-12);
}

TEST(Attention, UniformLogitsGiveUniformWeights) {
  // All keys identical => logits equal => the output is the mean of values.
  const int d = 4, nk = 5;
  Rng rng(31);
  ParameterStore store;
  MhaParams p = make_mha_params(store, "attn", d, rng);
  Tensor q_in = random_tensor({1, d}, rng);
  Tensor one_key = random_tensor({1, d}, rng);
  std::vector<Tensor> reps(nk, one_key);
  Tensor kv = concat_rows(reps);
  Tensor expect = multi_head_attention(q_in, one_key, 2, p);
  Tensor got = multi_head_attention(q_in, kv, 2, p);
  for (int j = 0; j < d; ++j) EXPECT_NEAR(got.data()[j], expect.data()[j], 1e-12);
}

TEST(Attention, HeadCountMustDivideWidth) {
  Rng rng(32);
  ParameterStore store;
  MhaParams p = make_mha_params(store, "attn", 6, rng);
  Tensor x = random_tensor({2, 6}, rng);
  EXPECT_THROW(multi_head_attention(x, x, 4, p), ConfigError);
}

TEST(Attention, FullGradientCheck) {
  Rng rng(33);
  ParameterStore store;
  const int d = 8;
  MhaParams p = make_mha_params(store, "attn", d, rng);
  Tensor q_in = store.create("q_in", {3, d}, 1.0, rng);
  Tensor kv_in = store.create("kv_in", {4, d}, 1.0, rng);
  Rng wrng(34);
  Tensor w = random_tensor({3, d}, wrng);
  auto report = grad_check(
      [&] { return sum_all(mul(multi_head_attention(q_in, kv_in, 2, p), w)); }, store);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(Attention, KeyPermutationIsBitwiseInvariant) {
  Rng rng(35);
  ParameterStore store;
  const int d = 8;
  MhaParams p = make_mha_params(store, "attn", d, rng);
  Tensor q_in = random_tensor({3, d}, rng);
  Tensor kv = random_tensor({6, d}, rng);
  Tensor base = multi_head_attention(q_in, kv, 2, p);
  // Rotate key rows and compare bit-for-bit.
  std::vector<Tensor> rows;
  for (int r = 0; r < 6; ++r) rows.push_back(slice_rows(kv, (r + 3) % 6, (r + 3) % 6 + 1));
  Tensor permuted = concat_rows(rows);
  Tensor out = multi_head_attention(q_in, permuted, 2, p);
  for (int i = 0; i < base.numel(); ++i) EXPECT_EQ(base.data()[i], out.data()[i]);
}

TEST(Primitives, GradCheckAtRandomPoints) {
  // Every differentiable primitive, three seeded points each.
  for (uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    Rng rng(seed);
    ParameterStore store;
    Tensor a = store.create("a", {3, 5}, 1.0, rng);
    Tensor b = store.create("b", {3, 5}, 1.0, rng);
    Tensor m = store.create("m", {4, 3}, 1.0, rng);
    Rng wrng(seed + 7);
    const Tensor w35 = random_tensor({3, 5}, wrng, 0.1, 1.3);
    const Tensor w45 = random_tensor({4, 5}, wrng, 0.1, 1.3);
    const Tensor w53 = random_tensor({5, 3}, wrng, 0.1, 1.3);
    const Tensor w25 = random_tensor({2, 5}, wrng, 0.1, 1.3);
    const Tensor w33 = random_tensor({3, 3}, wrng, 0.1, 1.3);
    const Tensor w65 = random_tensor({6, 5}, wrng, 0.1, 1.3);
    const Tensor w3x10 = random_tensor({3, 10}, wrng, 0.1, 1.3);
    const Tensor w15 = random_tensor({1, 5}, wrng, 0.1, 1.3);
    const Tensor w31 = random_tensor({3, 1}, wrng, 0.1, 1.3);

    std::vector<std::pair<const char*, std::function<Tensor()>>> cases;
    cases.emplace_back("add", [&] { return weighted_sum(add(a, b), w35); });
    cases.emplace_back("sub", [&] { return weighted_sum(sub(a, b), w35); });
    cases.emplace_back("mul", [&] { return weighted_sum(mul(a, b), w35); });
    cases.emplace_back("scale", [&] { return weighted_sum(scale(a, -1.7), w35); });
    cases.emplace_back("relu", [&] { return weighted_sum(relu(a), w35); });
    cases.emplace_back("silu", [&] { return weighted_sum(silu(a), w35); });
    cases.emplace_back("matmul", [&] { return weighted_sum(matmul(m, a), w45); });
    cases.emplace_back("matmul_ordersafe",
                       [&] { return weighted_sum(matmul_ordersafe(m, a), w45); });
    cases.emplace_back("transpose", [&] { return weighted_sum(transpose(a), w53); });
    cases.emplace_back("softmax", [&] { return weighted_sum(softmax(a), w35); });
    cases.emplace_back("layer_norm_plain", [&] { return weighted_sum(layer_norm_plain(a), w35); });
    cases.emplace_back("slice_rows", [&] { return weighted_sum(slice_rows(a, 1, 3), w25); });
    cases.emplace_back("slice_cols", [&] { return weighted_sum(slice_cols(a, 1, 4), w33); });
    cases.emplace_back("concat_rows", [&] { return weighted_sum(concat_rows({a, b}), w65); });
    cases.emplace_back("concat_cols", [&] { return weighted_sum(concat_cols(a, b), w3x10); });
    cases.emplace_back("tile_rows",
                       [&] { return weighted_sum(tile_rows(slice_rows(a, 0, 1), 4), w45); });
    cases.emplace_back("mean_rows", [&] { return weighted_sum(mean_rows(a), w15); });
    cases.emplace_back("cumsum_rows", [&] { return weighted_sum(cumsum_rows(a), w35); });
    cases.emplace_back("l2norm_rows", [&] { return weighted_sum(l2norm_rows(a), w31); });
    cases.emplace_back("sum_all", [&] { return sum_all(a); });
    cases.emplace_back("mean_all", [&] { return mean_all(mul(a, b)); });
    cases.emplace_back("huber_mean", [&] { return huber_mean(sub(a, b), 0.4); });
    cases.emplace_back("mse", [&] { return mse(a, b); });

    for (auto& [name, f] : cases) {
      auto report = grad_check(f, store);
      EXPECT_LT(report.max_rel_error, 1e-5)
          << name << " seed " << seed << " worst " << report.worst_param;
    }
  }
}

TEST(Primitives, AlgebraicIdentitiesExact) {
  // Exact-equality laws are checked on dyadic rationals (k/1024), where every
  // partial sum is representable, so float non-associativity cannot intrude.
  Rng rng(41);
  auto dyadic = [&](const Shape& s) {
    Tensor t = Tensor::zeros(s);
    for (double& v : t.data()) v = static_cast<double>(rng.int_range(-1024, 1024)) / 1024.0;
    return t;
  };
  Tensor a = dyadic({3, 4});
  Tensor b = dyadic({2, 4});
  EXPECT_EQ(sum_all(concat_rows({a, b})).item(), sum_all(a).item() + sum_all(b).item());
  Tensor tt = transpose(transpose(a));
  for (int i = 0; i < a.numel(); ++i) EXPECT_EQ(tt.data()[i], a.data()[i]);
  Tensor r = relu(a);
  for (int i = 0; i < a.numel(); ++i) EXPECT_EQ(r.data()[i], std::max(a.data()[i], 0.0));
  EXPECT_EQ(mean_all(a).item(), sum_all(a).item() / a.numel());
  // matmul against identity is exact data movement.
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  Tensor ma = matmul(eye, a);
  for (int i = 0; i < a.numel(); ++i) EXPECT_EQ(ma.data()[i], a.data()[i]);
  // The same law holds to 1e-12 on generic real data.
  Tensor ga = random_tensor({3, 4}, rng);
  Tensor gb = random_tensor({2, 4}, rng);
  EXPECT_NEAR(sum_all(concat_rows({ga, gb})).item(), sum_all(ga).item() + sum_all(gb).item(),
              1e-12);
  // Reshape is a view: mutating the view mutates the source.
  Tensor v = a.reshape({4, 3});
  v.data()[0] = 42.0;
  EXPECT_EQ(a.data()[0], 42.0);
}

TEST(Huber, ValueTable) {
  EXPECT_DOUBLE_EQ(huber_mean(Tensor::scalar(0.0), 1.0).item(), 0.0);
  // Continuity at the knee: both branches give delta^2 / 2.
  const double delta = 0.7;
  EXPECT_NEAR(huber_mean(Tensor::scalar(delta), delta).item(), 0.5 * delta * delta, 1e-15);
  // r = 2*delta with delta = 1: outer branch gives 1 * (2 - 0.5) = 1.5.
  EXPECT_DOUBLE_EQ(huber_mean(Tensor::scalar(2.0), 1.0).item(), 1.5);
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  Rng rng(51);
  ParameterStore store;
  Tensor w = store.create("w", {3}, 1.0, rng);
  std::vector<double> before = w.data();
  store.zero_grad();
  AdamState adam;
  adam.step(store);
  EXPECT_EQ(w.data(), before);
}

TEST(Adam, MissingGradientNamesParameter) {
  Rng rng(52);
  ParameterStore store;
  store.create("enc.some.w", {2}, 1.0, rng);
  AdamState adam;
  try {
    adam.step(store);
    FAIL() << "expected StateError";
  } catch (const StateError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.some.w"), std::string::npos);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store;
  Tensor w = Tensor::scalar(2.0);
  w.set_requires_grad(true);
  store.all().emplace("w", w);
  w.grad()[0] = 1.0;
  AdamState adam(AdamConfig{.lr = 0.1});
  adam.step(store);
  // Bias-corrected first update is lr * g / (|g| + eps) = ~0.1.
  EXPECT_NEAR(w.data()[0], 1.9, 1e-8);
  EXPECT_TRUE(w.has_grad());
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.0);
}

TEST(Adam, ConvergesOnConvexScalar) {
  // f(w) = (w - 3)^2 from w = 0, lr 0.1: lands within 0.1 after 100 steps.
  ParameterStore store;
  Tensor w = Tensor::scalar(0.0);
  w.set_requires_grad(true);
  store.all().emplace("w", w);
  AdamState adam(AdamConfig{.lr = 0.1});
  for (int step = 0; step < 100; ++step) {
    store.zero_grad();
    Tape tape;
    Tensor loss = mse(w, Tensor::scalar(3.0));
    tape.backward(loss);
    adam.step(store);
  }
  EXPECT_LT(std::fabs(w.data()[0] - 3.0), 0.1);
}

TEST(Adam, DeterministicGivenStoreAndState) {
  auto run = [] {
    Rng rng(53);
    ParameterStore store;
    Tensor w = store.create("w", {4}, 1.0, rng);
    AdamState adam(AdamConfig{.lr = 0.01});
    for (int step = 0; step < 5; ++step) {
      store.zero_grad();
      Tape tape;
      Tensor loss = mse(w, Tensor::from({4}, {1.0, 2.0, 3.0, 4.0}));
      tape.backward(loss);
      adam.step(store);
    }
    return w.data();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, LinearFunctionExact) {
  Rng rng(61);
  ParameterStore store;
  Tensor w = store.create("w", {5}, 1.0, rng);
  auto report = grad_check([&] { return sum_all(w); }, store);
  EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, QuadraticHandGradient) {
  ParameterStore store;
  Tensor w = Tensor::from({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  store.all().emplace("w", w);
  {
    store.zero_grad();
    Tape tape;
    Tensor loss = sum_all(mul(w, w));
    tape.backward(loss);
    EXPECT_NEAR(w.grad()[0], 2.0, 1e-12);
    EXPECT_NEAR(w.grad()[1], 4.0, 1e-12);
  }
  auto report = grad_check([&] { return sum_all(mul(w, w)); }, store, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-7);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(71);
  ParameterStore store;
  store.create("a.w", {3, 4}, 1.0, rng);
  store.create("b.w", {7}, 0.001, rng);
  // Include values that stress shortest-round-trip printing.
  store.all().at("b.w").data()[0] = 0.1;
  store.all().at("b.w").data()[1] = 1.0 / 3.0;
  store.all().at("b.w").data()[2] = 1e-300;
  const std::string path = std::filesystem::temp_directory_path() / "tsdit_ckpt_test.json";
  store.save_checkpoint(path);
  ParameterStore loaded;
  loaded.load_checkpoint(path);
  ASSERT_EQ(loaded.size(), store.size());
  for (const auto& [name, t] : store.all()) {
    const Tensor& l = loaded.get(name);
    ASSERT_EQ(l.shape(), t.shape());
    for (int i = 0; i < t.numel(); ++i) EXPECT_EQ(l.data()[i], t.data()[i]) << name << "[" << i << "]";
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, VersionMismatchRejected) {
  const std::string path = std::filesystem::temp_directory_path() / "tsdit_ckpt_bad.json";
  {
    std::ofstream out(path);
    out << R"({"checkpoint_version": 2, "parameters": {}})";
  }
  ParameterStore store;
  EXPECT_THROW(store.load_checkpoint(path), VersionError);
  std::filesystem::remove(path);
}

namespace {

// An op with a deliberately wrong backward rule (claims d/dx x^2 = 3x), to
// prove the finite-difference harness flags faulty gradients.
Tensor square_with_corrupted_backward(const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape());
  const int n = x.numel();
  for (int i = 0; i < n; ++i) y.data()[i] = x.data()[i] * x.data()[i];
  if (Tape::active() != nullptr && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xs = x.storage();
    auto ys = y.storage();
    Tape::active()->record([xs, ys, n]() mutable {
      if (ys->grad.empty()) return;
      for (int i = 0; i < n; ++i) {
        if (xs->grad.empty()) xs->grad.assign(xs->data.size(), 0.0);
        xs->grad[i] += ys->grad[i] * 3.0 * xs->data[i];
      }
    });
  }
  return y;
}

}  // namespace

TEST(GradCheck, FlagsCorruptedBackwardRule) {
  Rng rng(62);
  ParameterStore store;
  Tensor w = store.create("w", {4}, 1.0, rng);
  auto good = grad_check([&] { return sum_all(mul(w, w)); }, store);
  EXPECT_LT(good.max_rel_error, 1e-7);
  auto bad = grad_check([&] { return sum_all(square_with_corrupted_backward(w)); }, store);
  EXPECT_GT(bad.max_rel_error, 0.1);
  EXPECT_EQ(bad.worst_param, "w");
}

TEST(Tape, DeadBranchesContributeNothing) {
  Rng rng(81);
  ParameterStore store;
  Tensor w = store.create("w", {3}, 1.0, rng);
  store.zero_grad();
  Tape tape;
  Tensor used = scale(w, 2.0);
  Tensor unused = scale(w, 100.0);
  (void)unused;
  Tensor loss = sum_all(used);
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2.0);
}
