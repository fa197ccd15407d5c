#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "earlycls/rng.hpp"
#include "earlycls/train.hpp"

using namespace earlycls;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.5;
  return cfg;
}

std::vector<PhenologyClassSpec> toy_specs() {
  PhenologyClassSpec early;
  early.name = "early";
  early.peak_day = 110.0;
  early.season_width = 25.0;
  early.amplitude = {0.6, 0.2};
  early.base = {0.1, 0.2};
  PhenologyClassSpec late = early;
  late.name = "late";
  late.peak_day = 250.0;
  late.amplitude = {0.2, 0.6};
  return {early, late};
}

struct ToyData {
  std::vector<TimeSeriesSample> samples;
  DatasetSplit split;
};

ToyData toy_dataset(int per_class = 25, uint64_t seed = 5) {
  ToyData d;
  d.samples = generate(toy_specs(), per_class, 6, 0.01, seed);
  d.split = split_by_region(d.samples, 0.5, 0.25, 0.25, seed);
  return d;
}

TrainConfig toy_train(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.subsample_len = 10;
  cfg.micro_batch = 8;
  cfg.threads = 2;
  cfg.loss.alpha = 1.0;
  cfg.seed = 3;
  return cfg;
}

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool params_equal(const ParameterSet& a, const ParameterSet& b) {
  const auto ra = learnable_parameters(a);
  const auto rb = learnable_parameters(b);
  for (size_t i = 0; i < ra.size(); ++i) {
    if (!(*ra[i].array == *rb[i].array)) return false;
  }
  return a.norm_mean == b.norm_mean && a.norm_std == b.norm_std;
}

}  // namespace

TEST_CASE("adam step basics") {
  const ModelConfig cfg = toy_model();
  ParameterSet params = init_parameters(cfg, 1);
  AdamState state = make_adam_state(params);
  std::vector<Array> grads = make_gradient_buffers(params);

  const ParameterSet before = params;
  adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8);
  CHECK(state.step == 1);
  CHECK(params_equal(params, before));  // zero gradients leave parameters alone

  // on the very first step the bias corrections make mhat/sqrt(vhat) ~ sign(g)
  AdamState fresh = make_adam_state(params);
  grads[0][0] = 0.37;
  const double theta0 = params.layers[0].w_input[0];
  adam_step(params, grads, fresh, 0.01, 0.9, 0.999, 1e-8);
  CHECK(std::fabs(params.layers[0].w_input[0] - theta0) ==
        doctest::Approx(0.01).epsilon(1e-4));

  grads[0][0] = std::nan("");
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8),
                       doctest::Contains("layer0.w_input"), std::runtime_error);
}

TEST_CASE("adam is deterministic across engines") {
  const ModelConfig cfg = toy_model();
  ParameterSet a = init_parameters(cfg, 2);
  ParameterSet b = init_parameters(cfg, 2);
  AdamState sa = make_adam_state(a);
  AdamState sb = make_adam_state(b);
  std::vector<Array> grads = make_gradient_buffers(a);
  Rng rng(4);
  for (int step = 0; step < 5; ++step) {
    for (Array& g : grads) {
      for (double& x : g) x = rng.uniform(-1.0, 1.0);
    }
    adam_step(a, grads, sa, 0.01, 0.9, 0.999, 1e-8);
    adam_step(b, grads, sb, 0.01, 0.9, 0.999, 1e-8);
  }
  CHECK(params_equal(a, b));
}

TEST_CASE("batched gradients agree with the per-sample reference") {
  const ModelConfig cfg = toy_model();
  const ParameterSet params = init_parameters(cfg, 6);
  const ToyData data = toy_dataset(8, 7);

  std::vector<Subsampled> subs;
  std::vector<BatchItem> items;
  subs.reserve(7);
  for (int i = 0; i < 7; ++i) {
    const TimeSeriesSample& s = data.samples[static_cast<size_t>(i)];
    subs.push_back(subsample(s, 10, 50 + static_cast<uint64_t>(i)));
    items.push_back({&subs.back().X, s.label, mix_seed(60, {static_cast<uint64_t>(i)})});
  }

  LossConfig loss_cfg;
  loss_cfg.alpha = 0.6;
  for (bool training : {false, true}) {
    std::vector<Array> g_ref = make_gradient_buffers(params);
    std::vector<Array> g_fast = make_gradient_buffers(params);
    const double l_ref =
        batch_gradient_reference(params, cfg, loss_cfg, items, training, g_ref);
    const double l_fast =
        batch_gradient(params, cfg, loss_cfg, items, training, 2, 3, g_fast);
    CHECK(l_fast == doctest::Approx(l_ref).epsilon(1e-12));
    for (size_t i = 0; i < g_ref.size(); ++i) {
      for (int j = 0; j < g_ref[i].size(); ++j) {
        const double denom = std::fabs(g_ref[i][j]) + 1e-9;
        CHECK(std::fabs(g_fast[i][j] - g_ref[i][j]) / denom < 1e-9);
      }
    }
  }
}

TEST_CASE("loss on a frozen batch decreases under Adam") {
  const ModelConfig cfg = toy_model();
  ParameterSet params = init_parameters(cfg, 8);
  const ToyData data = toy_dataset(10, 9);
  auto [mu, sigma] = fit_normalization(data.samples, data.split.train);
  params.norm_mean = mu;
  params.norm_std = sigma;

  std::vector<Subsampled> subs;
  std::vector<BatchItem> items;
  subs.reserve(data.split.train.size());
  for (int idx : data.split.train) {
    const TimeSeriesSample& s = data.samples[static_cast<size_t>(idx)];
    subs.push_back(subsample(s, 10, 90 + static_cast<uint64_t>(idx)));
    items.push_back({&subs.back().X, s.label, 0});
  }

  LossConfig loss_cfg;
  loss_cfg.alpha = 1.0;
  AdamState state = make_adam_state(params);
  std::vector<Array> grads = make_gradient_buffers(params);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 10; ++step) {
    const double loss =
        batch_gradient(params, cfg, loss_cfg, items, false, 2, 16, grads);
    if (step == 0) first = loss;
    last = loss;
    adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8);
  }
  CHECK(last < first);
}

TEST_CASE("training runs, is deterministic, and learns the toy problem") {
  const ModelConfig model_cfg = toy_model();
  const ToyData data = toy_dataset(25, 11);

  SUBCASE("zero epochs returns the initial state") {
    const Checkpoint ckpt = train(model_cfg, toy_train(0), data.samples, data.split);
    CHECK(ckpt.history.empty());
    CHECK(ckpt.epochs_done == 0);
    const ParameterSet fresh = init_parameters(model_cfg, toy_train(0).seed);
    const auto ra = learnable_parameters(ckpt.params);
    const auto rb = learnable_parameters(fresh);
    for (size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].array == *rb[i].array);
  }

  SUBCASE("alpha = 1 reaches at least 0.95 validation accuracy in 30 epochs") {
    const Checkpoint ckpt = train(model_cfg, toy_train(30), data.samples, data.split);
    CHECK(ckpt.best_val_accuracy >= 0.95);
  }

  SUBCASE("identical seeds reproduce the history") {
    const Checkpoint a = train(model_cfg, toy_train(4), data.samples, data.split);
    const Checkpoint b = train(model_cfg, toy_train(4), data.samples, data.split);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_loss == b.history[i].val_loss);
      CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
    }
    CHECK(params_equal(a.params, b.params));
  }
}

TEST_CASE("validation samples never contribute gradients") {
  const ModelConfig model_cfg = toy_model();
  const ToyData clean = toy_dataset(20, 13);

  ToyData poisoned = clean;
  for (int idx : poisoned.split.val) {
    auto& s = poisoned.samples[static_cast<size_t>(idx)];
    s.label = 1 - s.label;
  }

  const Checkpoint a = train(model_cfg, toy_train(3), clean.samples, clean.split);
  const Checkpoint b = train(model_cfg, toy_train(3), poisoned.samples, poisoned.split);
  CHECK(params_equal(a.params, b.params));
  int moved = 0;
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    if (a.history[i].val_accuracy != b.history[i].val_accuracy) ++moved;
  }
  CHECK(moved > 0);  // the poisoned labels do reach the metrics, just not the gradients
}

TEST_CASE("checkpoint round trip and resume") {
  const ModelConfig model_cfg = toy_model();
  const ToyData data = toy_dataset(16, 17);
  const std::string path = temp_path("earlycls_ckpt_test.json");

  SUBCASE("save-load-save produces identical bytes") {
    const Checkpoint ckpt = train(model_cfg, toy_train(2), data.samples, data.split);
    save_checkpoint(path, ckpt);
    const std::string once = file_bytes(path);
    const Checkpoint loaded = load_checkpoint(path);
    save_checkpoint(path, loaded);
    CHECK(file_bytes(path) == once);
  }

  SUBCASE("resumed run continues the uninterrupted trajectory") {
    const Checkpoint full = train(model_cfg, toy_train(6), data.samples, data.split);

    Checkpoint half = train(model_cfg, toy_train(3), data.samples, data.split);
    save_checkpoint(path, half);
    Checkpoint resumed = load_checkpoint(path);
    resumed.train_cfg.epochs = 6;
    continue_training(resumed, data.samples);

    REQUIRE(resumed.history.size() == full.history.size());
    for (size_t i = 0; i < full.history.size(); ++i) {
      CHECK(std::fabs(resumed.history[i].train_loss - full.history[i].train_loss) < 1e-9);
      CHECK(std::fabs(resumed.history[i].val_loss - full.history[i].val_loss) < 1e-9);
    }
    CHECK(params_equal(resumed.params, full.params));
  }

  SUBCASE("truncated and mismatched files fail cleanly") {
    const Checkpoint ckpt = train(model_cfg, toy_train(1), data.samples, data.split);
    save_checkpoint(path, ckpt);
    const std::string full = file_bytes(path);
    {
      std::ofstream out(path, std::ios::binary);
      out << full.substr(0, full.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

    {
      std::ofstream out(path);
      out << "{\"format\": \"earlycls-checkpoint\", \"version\": 99}";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                         std::runtime_error);
  }

  fs::remove(path);
}

TEST_CASE("history CSV format") {
  const std::string path = temp_path("earlycls_hist_test.csv");
  std::vector<EpochMetrics> history(2);
  history[0] = {0, 1.5, 1.25, 0.5, 0.875};
  history[1] = {1, 1.0, 0.75, 0.625, 0.5};
  write_history_csv(path, history);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,val_loss,val_accuracy,val_mean_stop_fraction");
  std::getline(in, line);
  CHECK(line == "0,1.5,1.25,0.5,0.875");
  std::getline(in, line);
  CHECK(line == "1,1,0.75,0.625,0.5");
  fs::remove(path);
}

TEST_CASE("gradient clipping caps the update norm") {
  const ModelConfig model_cfg = toy_model();
  const ToyData data = toy_dataset(12, 19);
  TrainConfig cfg = toy_train(2);
  cfg.grad_clip_norm = 0.5;
  CHECK_NOTHROW(train(model_cfg, cfg, data.samples, data.split));
}
