#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "earlycls/data.hpp"
#include "earlycls/earliness.hpp"
#include "earlycls/model.hpp"

namespace earlycls {

struct TrainConfig {
  double learning_rate = 0.01;
  int batch_size = 1024;
  int epochs = 30;
  LossConfig loss;
  uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  int subsample_len = 70;       // observations drawn per sample per epoch
  int micro_batch = 128;        // tape slab size inside one optimizer step
  int threads = 0;              // OpenMP threads; 0 uses all available

  void validate() const;
};

struct AdamState {
  std::vector<Array> m, v;  // aligned with learnable_parameters()
  long step = 0;
};
AdamState make_adam_state(const ParameterSet& params);
std::vector<Array> make_gradient_buffers(const ParameterSet& params);

// Bias-corrected moment update; theta <- theta - lr * mhat / (sqrt(vhat) + eps).
// Aborts with the offending parameter's name on non-finite gradients.
void adam_step(ParameterSet& params, const std::vector<Array>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps);

struct BatchItem {
  const Array* X = nullptr;  // subsampled T x D observations
  int label = 0;
  uint64_t dropout_seed = 0;
};

// Mean loss over the batch; gradients of the mean are accumulated into
// `grads` (zeroed first). Sequences are processed in micro-batch slabs on one
// tape with OpenMP-parallel kernels; sample contributions inside a slab are
// summed in fixed row order, so results do not depend on the thread count.
double batch_gradient(const ParameterSet& params, const ModelConfig& cfg,
                      const LossConfig& loss_cfg, std::span<const BatchItem> items,
                      bool training, int threads, int micro_batch, std::vector<Array>& grads);

// Serial reference: one sample per tape, gradients folded in sample order.
// Kept for tests and the benchmark; must agree with batch_gradient up to
// floating-point summation order.
double batch_gradient_reference(const ParameterSet& params, const ModelConfig& cfg,
                                const LossConfig& loss_cfg, std::span<const BatchItem> items,
                                bool training, std::vector<Array>& grads);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_mean_stop_fraction = 0.0;
};

// Full training state; also the checkpoint payload, so a resumed run
// continues the metric trajectory of an uninterrupted one.
struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  ParameterSet params;       // after the last completed epoch
  ParameterSet best_params;  // highest validation accuracy so far
  AdamState adam;
  int epochs_done = 0;
  int best_epoch = -1;
  double best_val_accuracy = -1.0;
  std::vector<EpochMetrics> history;
  DatasetSplit split;
};

// Fresh state + run until train_cfg.epochs. init_from, when given, supplies
// the learnable weights; normalization statistics are always fitted on the
// current train split. use_reference_path switches the gradient computation
// to the serial per-sample reference.
Checkpoint train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                 const std::vector<TimeSeriesSample>& dataset, const DatasetSplit& split,
                 const ParameterSet* init_from = nullptr, bool use_reference_path = false,
                 std::ostream* log = nullptr);

// Runs epochs [state.epochs_done, state.train_cfg.epochs) in place.
void continue_training(Checkpoint& state, const std::vector<TimeSeriesSample>& dataset,
                       bool use_reference_path = false, std::ostream* log = nullptr);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// CSV: epoch,train_loss,val_loss,val_accuracy,val_mean_stop_fraction
void write_history_csv(const std::string& path, std::span<const EpochMetrics> history);

}  // namespace earlycls
