// Serial-vs-parallel contracts: the OpenMP kernels partition output rows, so
// any thread count must reproduce the single-thread results bit for bit, and
// the micro-batched production path must agree with the per-sample serial
// reference up to floating-point summation order.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "earlycls/eval.hpp"
#include "earlycls/rng.hpp"
#include "earlycls/train.hpp"

using namespace earlycls;

namespace {

Array random_array(Rng& rng, int rows, int cols) {
  Array a(rows, cols);
  for (double& x : a) x = rng.uniform(-1.5, 1.5);
  return a;
}

struct Fixture {
  ModelConfig model_cfg;
  ParameterSet params;
  std::vector<Array> sequences;
  std::vector<BatchItem> items;

  explicit Fixture(int batch = 48, int seq_len = 12) {
    model_cfg.input_dim = 4;
    model_cfg.hidden_dim = 12;
    model_cfg.num_layers = 3;
    model_cfg.num_classes = 5;
    model_cfg.dropout_rate = 0.5;
    params = init_parameters(model_cfg, 100);
    Rng rng(101);
    for (int i = 0; i < batch; ++i) {
      sequences.push_back(random_array(rng, seq_len, model_cfg.input_dim));
    }
    for (int i = 0; i < batch; ++i) {
      items.push_back({&sequences[static_cast<size_t>(i)], i % model_cfg.num_classes,
                       mix_seed(200, {static_cast<uint64_t>(i)})});
    }
  }
};

}  // namespace

TEST_CASE("matmul kernels are bitwise identical across thread counts") {
  Rng rng(1);
  const Array a = random_array(rng, 64, 48);
  const Array b = random_array(rng, 48, 96);
  Array out1(64, 96), out4(64, 96);
  matmul_accumulate(a.data(), b.data(), out1.data(), 64, 48, 96, 1);
  matmul_accumulate(a.data(), b.data(), out4.data(), 64, 48, 96, 4);
  CHECK(out1 == out4);

  const Array gout = random_array(rng, 64, 96);
  Array ga1(64, 48), ga4(64, 48), gb1(48, 96), gb4(48, 96);
  matmul_grad_left(gout.data(), b.data(), ga1.data(), 64, 48, 96, 1);
  matmul_grad_left(gout.data(), b.data(), ga4.data(), 64, 48, 96, 4);
  CHECK(ga1 == ga4);
  matmul_grad_right(a.data(), gout.data(), gb1.data(), 64, 48, 96, 1);
  matmul_grad_right(a.data(), gout.data(), gb4.data(), 64, 48, 96, 4);
  CHECK(gb1 == gb4);
}

TEST_CASE("batch gradients are bitwise identical across thread counts") {
  const Fixture fx;
  LossConfig loss_cfg;
  loss_cfg.alpha = 0.6;

  std::vector<Array> g1 = make_gradient_buffers(fx.params);
  std::vector<Array> g2 = make_gradient_buffers(fx.params);
  const double l1 =
      batch_gradient(fx.params, fx.model_cfg, loss_cfg, fx.items, true, 1, 16, g1);
  const double l2 =
      batch_gradient(fx.params, fx.model_cfg, loss_cfg, fx.items, true, 2, 16, g2);
  CHECK(l1 == l2);
  for (size_t i = 0; i < g1.size(); ++i) {
    CHECK(g1[i] == g2[i]);
  }
}

TEST_CASE("micro-batched path tracks the per-sample reference") {
  const Fixture fx;
  for (double alpha : {0.0, 0.6, 1.0}) {
    LossConfig loss_cfg;
    loss_cfg.alpha = alpha;
    std::vector<Array> g_ref = make_gradient_buffers(fx.params);
    std::vector<Array> g_fast = make_gradient_buffers(fx.params);
    const double l_ref =
        batch_gradient_reference(fx.params, fx.model_cfg, loss_cfg, fx.items, true, g_ref);
    const double l_fast =
        batch_gradient(fx.params, fx.model_cfg, loss_cfg, fx.items, true, 2, 16, g_fast);
    CHECK(l_fast == doctest::Approx(l_ref).epsilon(1e-11));
    double worst = 0.0;
    for (size_t i = 0; i < g_ref.size(); ++i) {
      for (int j = 0; j < g_ref[i].size(); ++j) {
        worst = std::max(worst, std::fabs(g_fast[i][j] - g_ref[i][j]) /
                                    (std::fabs(g_ref[i][j]) + 1e-9));
      }
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("slab size only reorders the summation") {
  const Fixture fx;
  LossConfig loss_cfg;
  loss_cfg.alpha = 0.4;
  std::vector<Array> g_small = make_gradient_buffers(fx.params);
  std::vector<Array> g_whole = make_gradient_buffers(fx.params);
  batch_gradient(fx.params, fx.model_cfg, loss_cfg, fx.items, true, 2, 7, g_small);
  batch_gradient(fx.params, fx.model_cfg, loss_cfg, fx.items, true, 2, 1000, g_whole);
  for (size_t i = 0; i < g_small.size(); ++i) {
    for (int j = 0; j < g_small[i].size(); ++j) {
      CHECK(g_small[i][j] ==
            doctest::Approx(g_whole[i][j]).epsilon(1e-10).scale(
                std::max(1e-6, std::fabs(g_whole[i][j]))));
    }
  }
}

TEST_CASE("evaluation is identical for any thread count") {
  const Fixture fx(0);
  const auto samples = generate(
      []() {
        PhenologyClassSpec a;
        a.name = "a";
        a.peak_day = 120.0;
        a.season_width = 30.0;
        a.amplitude = {0.4, 0.2, 0.1, 0.3};
        a.base = {0.1, 0.15, 0.2, 0.1};
        PhenologyClassSpec b = a;
        b.name = "b";
        b.peak_day = 230.0;
        return std::vector<PhenologyClassSpec>{a, b};
      }(),
      8, 3, 0.02, 7);
  std::vector<int> indices;
  for (size_t i = 0; i < samples.size(); ++i) indices.push_back(static_cast<int>(i));

  ModelConfig cfg = fx.model_cfg;
  cfg.num_classes = 2;
  const ParameterSet params = init_parameters(cfg, 9);

  EvalOptions one;
  one.threads = 1;
  one.subsample_len = 10;
  one.repeats = 3;
  EvalOptions two = one;
  two.threads = 2;
  const auto r1 = evaluate(params, cfg, samples, indices, one);
  const auto r2 = evaluate(params, cfg, samples, indices, two);
  CHECK(r1.accuracy.mean == r2.accuracy.mean);
  CHECK(r1.tstop.mean == r2.tstop.mean);
  CHECK(r1.kappa_value.mean == r2.kappa_value.mean);
  CHECK(r1.first.cm.counts == r2.first.cm.counts);
}

TEST_CASE("training end to end is thread-count invariant") {
  const auto specs = []() {
    PhenologyClassSpec a;
    a.name = "a";
    a.peak_day = 110.0;
    a.season_width = 25.0;
    a.amplitude = {0.5, 0.2, 0.1, 0.25};
    a.base = {0.1, 0.15, 0.2, 0.1};
    PhenologyClassSpec b = a;
    b.name = "b";
    b.peak_day = 240.0;
    b.amplitude = {0.15, 0.45, 0.3, 0.1};
    return std::vector<PhenologyClassSpec>{a, b};
  }();
  const auto samples = generate(specs, 10, 5, 0.02, 55);
  const auto split = split_by_region(samples, 0.5, 0.25, 0.25, 55);

  ModelConfig model_cfg;
  model_cfg.input_dim = 4;
  model_cfg.hidden_dim = 8;
  model_cfg.num_layers = 2;
  model_cfg.num_classes = 2;

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.subsample_len = 8;
  cfg.micro_batch = 4;
  cfg.seed = 77;

  cfg.threads = 1;
  const Checkpoint a = train(model_cfg, cfg, samples, split);
  cfg.threads = 2;
  const Checkpoint b = train(model_cfg, cfg, samples, split);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
  }
  const auto ra = learnable_parameters(a.params);
  const auto rb = learnable_parameters(b.params);
  for (size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].array == *rb[i].array);
}
