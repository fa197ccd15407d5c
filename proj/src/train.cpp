#include "earlycls/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <omp.h>
#include <ostream>
#include <stdexcept>

#include "earlycls/rng.hpp"
#include "earlycls/serialize.hpp"

namespace earlycls {

namespace {

constexpr int kCheckpointFormatVersion = 1;
constexpr uint64_t kShuffleSalt = 0x73686668;   // "shfl"
constexpr uint64_t kSubsampleSalt = 0x73756273; // "subs"
constexpr uint64_t kDropoutSalt = 0x64726f70;   // "drop"
constexpr uint64_t kValSubSalt = 0x76737562;    // "vsub"
constexpr uint64_t kValStopSalt = 0x7673746f;   // "vsto"

int resolve_threads(int requested) {
  return requested > 0 ? requested : omp_get_max_threads();
}

void append_double(std::string& out, double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  out.append(buf, ptr);
}

void check_grad_buffers(const ParameterSet& params, std::vector<Array>& grads) {
  const auto refs = learnable_parameters(params);
  if (grads.size() != refs.size()) {
    throw std::invalid_argument("gradient buffers do not match the parameter list");
  }
  for (size_t i = 0; i < refs.size(); ++i) {
    require_same_shape(*refs[i].array, grads[i], "gradient buffer");
    grads[i].fill(0.0);
  }
}

// One tape pass over items[begin, end); adds gradients of the loss sum.
double accumulate_slab(Tape& tape, const ParameterSet& params, const ModelConfig& cfg,
                       const LossConfig& loss_cfg, std::span<const BatchItem> items,
                       size_t begin, size_t end, bool training, std::vector<Array>& grads) {
  tape.clear();
  BoundModel bound = bind_parameters(tape, params);

  std::vector<const Array*> seqs;
  std::vector<int> labels;
  std::vector<uint64_t> dropout_seeds;
  seqs.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) {
    seqs.push_back(items[i].X);
    labels.push_back(items[i].label);
    dropout_seeds.push_back(items[i].dropout_seed);
  }

  const BatchInput input = make_batch_input(seqs, params.norm_mean, params.norm_std);
  const BatchTrace trace = forward_on_tape(tape, bound, cfg, input, training, dropout_seeds);
  const Value loss = sequence_loss_node(tape, trace, labels, loss_cfg);
  tape.backward(loss);

  for (size_t i = 0; i < grads.size(); ++i) {
    const Array& g = bound.all[i].grad();
    Array& acc = grads[i];
    for (int j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  return loss.scalar();
}

struct ValSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  double mean_stop_fraction = 0.0;
};

ValSummary validate_split(const ParameterSet& params, const ModelConfig& model_cfg,
                          const TrainConfig& cfg, const std::vector<TimeSeriesSample>& dataset,
                          std::span<const int> val_indices, int epoch) {
  const int n = static_cast<int>(val_indices.size());
  std::vector<double> losses(static_cast<size_t>(n));
  std::vector<double> fractions(static_cast<size_t>(n));
  std::vector<char> correct(static_cast<size_t>(n));
  const int threads = resolve_threads(cfg.threads);

#pragma omp parallel for num_threads(threads) schedule(dynamic) if (threads > 1)
  for (int i = 0; i < n; ++i) {
    const TimeSeriesSample& s = dataset[static_cast<size_t>(val_indices[i])];
    const Subsampled sub =
        subsample(s, cfg.subsample_len,
                  mix_seed(cfg.seed, {kValSubSalt, static_cast<uint64_t>(s.sample_id)}));
    const PredictionTrace trace = forward(params, model_cfg, sub.X);
    losses[static_cast<size_t>(i)] = sequence_loss(trace, s.label, cfg.loss);
    fractions[static_cast<size_t>(i)] = expected_stop_fraction(trace.stop_probs);
    const StopDecision d =
        sample_stop(trace, mix_seed(cfg.seed, {kValStopSalt, static_cast<uint64_t>(epoch),
                                               static_cast<uint64_t>(s.sample_id)}));
    correct[static_cast<size_t>(i)] = d.label == s.label ? 1 : 0;
  }

  ValSummary out;
  long hits = 0;
  for (int i = 0; i < n; ++i) {
    out.loss += losses[static_cast<size_t>(i)];
    out.mean_stop_fraction += fractions[static_cast<size_t>(i)];
    hits += correct[static_cast<size_t>(i)];
  }
  out.loss /= n;
  out.mean_stop_fraction /= n;
  out.accuracy = static_cast<double>(hits) / n;
  return out;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"alpha", cfg.loss.alpha},
          {"loss_mode", cfg.loss.mode == LossMode::kEarlyReward ? "early_reward"
                                                                : "cross_entropy"},
          {"seed", cfg.seed},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"grad_clip_norm", cfg.grad_clip_norm},
          {"subsample_len", cfg.subsample_len},
          {"micro_batch", cfg.micro_batch},
          {"threads", cfg.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.loss.alpha = j.at("alpha").get<double>();
  const std::string mode = j.at("loss_mode").get<std::string>();
  if (mode == "early_reward") {
    cfg.loss.mode = LossMode::kEarlyReward;
  } else if (mode == "cross_entropy") {
    cfg.loss.mode = LossMode::kCrossEntropyBaseline;
  } else {
    throw std::runtime_error("train config: unknown loss_mode '" + mode + "'");
  }
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.adam_eps = j.at("adam_eps").get<double>();
  cfg.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  cfg.subsample_len = j.at("subsample_len").get<int>();
  cfg.micro_batch = j.at("micro_batch").get<int>();
  cfg.threads = j.at("threads").get<int>();
  cfg.validate();
  return cfg;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate <= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epochs");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps <= 0");
  if (grad_clip_norm < 0.0) throw std::invalid_argument("TrainConfig: negative grad_clip_norm");
  if (subsample_len < 1) throw std::invalid_argument("TrainConfig: subsample_len < 1");
  if (micro_batch < 1) throw std::invalid_argument("TrainConfig: micro_batch < 1");
  loss.validate();
}

AdamState make_adam_state(const ParameterSet& params) {
  AdamState state;
  for (const ParamRef& ref : learnable_parameters(params)) {
    state.m.emplace_back(ref.array->rows(), ref.array->cols());
    state.v.emplace_back(ref.array->rows(), ref.array->cols());
  }
  return state;
}

std::vector<Array> make_gradient_buffers(const ParameterSet& params) {
  std::vector<Array> grads;
  for (const ParamRef& ref : learnable_parameters(params)) {
    grads.emplace_back(ref.array->rows(), ref.array->cols());
  }
  return grads;
}

void adam_step(ParameterSet& params, const std::vector<Array>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  const auto refs = learnable_parameters(params);
  if (grads.size() != refs.size() || state.m.size() != refs.size()) {
    throw std::invalid_argument("adam_step: state/gradients do not match the parameter list");
  }
  for (size_t i = 0; i < refs.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw std::runtime_error("adam_step: non-finite gradient for parameter '" + refs[i].name +
                               "'");
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < refs.size(); ++i) {
    Array& theta = *refs[i].array;
    Array& m = state.m[i];
    Array& v = state.v[i];
    const Array& g = grads[i];
    for (int j = 0; j < theta.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double batch_gradient(const ParameterSet& params, const ModelConfig& cfg,
                      const LossConfig& loss_cfg, std::span<const BatchItem> items,
                      bool training, int threads, int micro_batch, std::vector<Array>& grads) {
  if (items.empty()) {
    throw std::invalid_argument("batch_gradient: empty batch");
  }
  check_grad_buffers(params, grads);
  Tape tape(resolve_threads(threads));
  double loss_sum = 0.0;
  const size_t n = items.size();
  const size_t slab = micro_batch < 1 ? n : static_cast<size_t>(micro_batch);
  for (size_t begin = 0; begin < n; begin += slab) {
    const size_t end = std::min(n, begin + slab);
    loss_sum += accumulate_slab(tape, params, cfg, loss_cfg, items, begin, end, training, grads);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Array& g : grads) {
    for (double& x : g) x *= inv_n;
  }
  return loss_sum * inv_n;
}

double batch_gradient_reference(const ParameterSet& params, const ModelConfig& cfg,
                                const LossConfig& loss_cfg, std::span<const BatchItem> items,
                                bool training, std::vector<Array>& grads) {
  if (items.empty()) {
    throw std::invalid_argument("batch_gradient_reference: empty batch");
  }
  check_grad_buffers(params, grads);
  Tape tape(1);
  double loss_sum = 0.0;
  for (size_t i = 0; i < items.size(); ++i) {
    loss_sum += accumulate_slab(tape, params, cfg, loss_cfg, items, i, i + 1, training, grads);
  }
  const double inv_n = 1.0 / static_cast<double>(items.size());
  for (Array& g : grads) {
    for (double& x : g) x *= inv_n;
  }
  return loss_sum * inv_n;
}

namespace {

void run_epochs(Checkpoint& state, const std::vector<TimeSeriesSample>& dataset,
                bool use_reference_path, std::ostream* log) {
  const TrainConfig& cfg = state.train_cfg;
  const ModelConfig& model_cfg = state.model_cfg;
  std::vector<Array> grads = make_gradient_buffers(state.params);

  for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = state.split.train;
    Rng shuffle_rng(mix_seed(cfg.seed, {kShuffleSalt, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long seen = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::vector<Subsampled> subs;
      std::vector<BatchItem> items;
      subs.reserve(end - begin);
      items.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) {
        const TimeSeriesSample& s = dataset[static_cast<size_t>(order[i])];
        subs.push_back(subsample(
            s, cfg.subsample_len,
            mix_seed(cfg.seed, {kSubsampleSalt, static_cast<uint64_t>(epoch),
                                static_cast<uint64_t>(s.sample_id)})));
        items.push_back({&subs.back().X, s.label,
                         mix_seed(cfg.seed, {kDropoutSalt, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(s.sample_id)})});
      }

      double batch_loss;
      if (use_reference_path) {
        batch_loss = batch_gradient_reference(state.params, model_cfg, cfg.loss, items, true,
                                              grads);
      } else {
        batch_loss = batch_gradient(state.params, model_cfg, cfg.loss, items, true, cfg.threads,
                                    cfg.micro_batch, grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(begin / cfg.batch_size) +
                                 " (non-finite loss)");
      }
      if (cfg.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const Array& g : grads) {
          for (double x : g) sq += x * x;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip_norm) {
          const double s = cfg.grad_clip_norm / norm;
          for (Array& g : grads) {
            for (double& x : g) x *= s;
          }
        }
      }
      adam_step(state.params, grads, state.adam, cfg.learning_rate, cfg.beta1, cfg.beta2,
                cfg.adam_eps);
      loss_sum += batch_loss * static_cast<double>(end - begin);
      seen += static_cast<long>(end - begin);
    }

    const ValSummary val =
        validate_split(state.params, model_cfg, cfg, dataset, state.split.val, epoch);

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(seen);
    metrics.val_loss = val.loss;
    metrics.val_accuracy = val.accuracy;
    metrics.val_mean_stop_fraction = val.mean_stop_fraction;
    state.history.push_back(metrics);

    if (val.accuracy > state.best_val_accuracy) {
      state.best_val_accuracy = val.accuracy;
      state.best_epoch = epoch;
      state.best_params = state.params;
    }
    state.epochs_done = epoch + 1;

    if (log != nullptr) {
      (*log) << "epoch " << epoch << " train_loss " << metrics.train_loss << " val_loss "
             << metrics.val_loss << " val_acc " << metrics.val_accuracy << " val_tstop "
             << metrics.val_mean_stop_fraction << "\n";
    }
  }
}

}  // namespace

Checkpoint train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                 const std::vector<TimeSeriesSample>& dataset, const DatasetSplit& split,
                 const ParameterSet* init_from, bool use_reference_path, std::ostream* log) {
  model_cfg.validate();
  train_cfg.validate();
  if (split.train.empty() || split.val.empty()) {
    throw std::invalid_argument("train: empty train or validation split");
  }

  Checkpoint state;
  state.model_cfg = model_cfg;
  state.train_cfg = train_cfg;
  state.split = split;
  state.params = init_from != nullptr ? *init_from : init_parameters(model_cfg, train_cfg.seed);
  auto [mu, sigma] = fit_normalization(dataset, split.train);
  state.params.norm_mean = std::move(mu);
  state.params.norm_std = std::move(sigma);
  state.best_params = state.params;
  state.adam = make_adam_state(state.params);

  run_epochs(state, dataset, use_reference_path, log);
  return state;
}

void continue_training(Checkpoint& state, const std::vector<TimeSeriesSample>& dataset,
                       bool use_reference_path, std::ostream* log) {
  run_epochs(state, dataset, use_reference_path, log);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = "earlycls-checkpoint";
  j["version"] = kCheckpointFormatVersion;
  j["model"] = parameters_to_json(ckpt.params, ckpt.model_cfg);
  j["best_model"] = parameters_to_json(ckpt.best_params, ckpt.model_cfg);
  j["train_config"] = train_config_to_json(ckpt.train_cfg);

  nlohmann::json adam;
  adam["step"] = ckpt.adam.step;
  nlohmann::json m, v;
  const auto refs = learnable_parameters(ckpt.params);
  for (size_t i = 0; i < refs.size(); ++i) {
    m[refs[i].name] = array_to_json(ckpt.adam.m[i]);
    v[refs[i].name] = array_to_json(ckpt.adam.v[i]);
  }
  adam["m"] = std::move(m);
  adam["v"] = std::move(v);
  j["adam"] = std::move(adam);

  j["epochs_done"] = ckpt.epochs_done;
  j["best_epoch"] = ckpt.best_epoch;
  j["best_val_accuracy"] = ckpt.best_val_accuracy;
  nlohmann::json hist = nlohmann::json::array();
  for (const EpochMetrics& e : ckpt.history) {
    hist.push_back({e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.val_mean_stop_fraction});
  }
  j["history"] = std::move(hist);
  j["split"] = {{"train", ckpt.split.train},
                {"val", ckpt.split.val},
                {"test", ckpt.split.test},
                {"train_regions", ckpt.split.train_regions},
                {"val_regions", ckpt.split.val_regions},
                {"test_regions", ckpt.split.test_regions}};

  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_checkpoint: cannot open " + path);
  }
  out << j.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_checkpoint: cannot open " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != "earlycls-checkpoint") {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  }
  if (j.at("version").get<int>() != kCheckpointFormatVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + j.at("version").dump());
  }

  Checkpoint ckpt;
  auto [params, model_cfg] = parameters_from_json(j.at("model"));
  ckpt.params = std::move(params);
  ckpt.model_cfg = model_cfg;
  auto [best, best_cfg] = parameters_from_json(j.at("best_model"));
  (void)best_cfg;
  ckpt.best_params = std::move(best);
  ckpt.train_cfg = train_config_from_json(j.at("train_config"));

  const auto& adam = j.at("adam");
  ckpt.adam.step = adam.at("step").get<long>();
  const auto refs = learnable_parameters(ckpt.params);
  for (const ParamRef& ref : refs) {
    ckpt.adam.m.push_back(array_from_json(adam.at("m").at(ref.name), "adam.m." + ref.name));
    ckpt.adam.v.push_back(array_from_json(adam.at("v").at(ref.name), "adam.v." + ref.name));
    require_same_shape(*ref.array, ckpt.adam.m.back(), "checkpoint adam.m");
    require_same_shape(*ref.array, ckpt.adam.v.back(), "checkpoint adam.v");
  }

  ckpt.epochs_done = j.at("epochs_done").get<int>();
  ckpt.best_epoch = j.at("best_epoch").get<int>();
  ckpt.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  for (const auto& e : j.at("history")) {
    EpochMetrics m;
    m.epoch = e.at(0).get<int>();
    m.train_loss = e.at(1).get<double>();
    m.val_loss = e.at(2).get<double>();
    m.val_accuracy = e.at(3).get<double>();
    m.val_mean_stop_fraction = e.at(4).get<double>();
    ckpt.history.push_back(m);
  }
  const auto& split = j.at("split");
  ckpt.split.train = split.at("train").get<std::vector<int>>();
  ckpt.split.val = split.at("val").get<std::vector<int>>();
  ckpt.split.test = split.at("test").get<std::vector<int>>();
  ckpt.split.train_regions = split.at("train_regions").get<std::vector<int>>();
  ckpt.split.val_regions = split.at("val_regions").get<std::vector<int>>();
  ckpt.split.test_regions = split.at("test_regions").get<std::vector<int>>();
  return ckpt;
}

void write_history_csv(const std::string& path, std::span<const EpochMetrics> history) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_history_csv: cannot open " + path);
  }
  out << "epoch,train_loss,val_loss,val_accuracy,val_mean_stop_fraction\n";
  std::string line;
  for (const EpochMetrics& e : history) {
    line.clear();
    line += std::to_string(e.epoch);
    line += ',';
    append_double(line, e.train_loss);
    line += ',';
    append_double(line, e.val_loss);
    line += ',';
    append_double(line, e.val_accuracy);
    line += ',';
    append_double(line, e.val_mean_stop_fraction);
    line += '\n';
    out << line;
  }
}

}  // namespace earlycls
