#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "earlycls/array.hpp"
#include "earlycls/autodiff.hpp"

namespace earlycls {

struct ModelConfig {
  int input_dim = 13;       // spectral bands per observation
  int hidden_dim = 64;
  int num_layers = 4;
  int num_classes = 9;
  double dropout_rate = 0.5;
  double stop_bias_init_mean = -0.2;
  double stop_bias_init_std = 0.1;
  bool layer_norm = true;   // ablation switch for the per-layer norm

  void validate() const;  // throws std::invalid_argument on bad fields
};

struct LstmLayerParams {
  Array w_input;   // H_in x 4H, gate order [input, forget, cell, output]
  Array w_recur;   // H x 4H
  Array bias;      // 1 x 4H
  Array ln_gain;   // 1 x H
  Array ln_offset; // 1 x H
};

// All learnable weights plus the fixed per-band normalization statistics.
struct ParameterSet {
  std::vector<LstmLayerParams> layers;
  Array class_weight;  // H x M
  Array class_bias;    // 1 x M
  Array stop_weight;   // H x 1
  Array stop_bias;     // 1 x 1
  Array norm_mean;     // 1 x D, not learnable
  Array norm_std;      // 1 x D, entries > 0, not learnable
};

struct ParamRef {
  std::string name;
  Array* array;
};
// Fixed enumeration of the learnable arrays (normalization stats excluded).
// Gradient buffers and optimizer state are aligned with this order.
std::vector<ParamRef> learnable_parameters(ParameterSet& params);
std::vector<ParamRef> learnable_parameters(const ParameterSet& params);

// Weights uniform in [-1/sqrt(H), 1/sqrt(H)], forget-gate biases 1, stopping
// head bias drawn from N(stop_bias_init_mean, stop_bias_init_std^2) so early
// stopping probabilities start below 0.5. Deterministic per seed.
ParameterSet init_parameters(const ModelConfig& cfg, uint64_t seed);

// Per-time-step outputs for one sequence. stop_probs.back() is forced to 1:
// the final observation doubles as the forced terminal decision.
struct PredictionTrace {
  Array class_scores;             // T x M, each row sums to 1
  std::vector<double> stop_probs; // length T, entries in [0, 1]
};

// ----- taped forward (training path) -----

struct BoundLayer {
  Value w_input, w_recur, bias, ln_gain, ln_offset;
};
struct BoundModel {
  std::vector<BoundLayer> layers;
  Value class_weight, class_bias, stop_weight, stop_bias;
  std::vector<Value> all;  // aligned with learnable_parameters()
};
BoundModel bind_parameters(Tape& tape, const ParameterSet& params);

struct LstmOut {
  Value h, c;
};
// One gated step: i,f,g,o from a fused 4H pre-activation, c = f*c_prev + i*g,
// h = o * tanh(c).
LstmOut lstm_cell(const Value& x_in, const Value& h_prev, const Value& c_prev,
                  const BoundLayer& layer);

// Z-scored observation rows for a batch of sequences of equal length.
struct BatchInput {
  int steps = 0, batch = 0, dim = 0;
  std::vector<Array> step_rows;  // T arrays of shape B x D
};
BatchInput make_batch_input(std::span<const Array* const> sequences, const Array& norm_mean,
                            const Array& norm_std);

struct BatchTrace {
  std::vector<Value> class_probs;  // T values, each B x M
  std::vector<Value> stop_probs;   // T values, each B x 1; back() is constant 1
};
// Runs the full recurrent stack on the tape. Dropout (training only) applies
// between recurrent layers with per-sample seeded mask streams, scaled by
// 1/(1-rate). Causality is structural: step t consumes rows 0..t only.
BatchTrace forward_on_tape(Tape& tape, const BoundModel& model, const ModelConfig& cfg,
                           const BatchInput& input, bool training,
                           std::span<const uint64_t> dropout_seeds);

// ----- tape-free forward (inference path) -----

// Same arithmetic as the taped forward without recording; used for
// evaluation and validation. X is T x D raw observations.
PredictionTrace forward(const ParameterSet& params, const ModelConfig& cfg, const Array& X,
                        bool training = false, uint64_t dropout_seed = 0);

// ----- parameter container -----

// JSON container with config echo, all arrays with shapes, and the
// normalization statistics; load(save(x)) is value-identical.
void save_parameters(const std::string& path, const ParameterSet& params, const ModelConfig& cfg);
std::pair<ParameterSet, ModelConfig> load_parameters(const std::string& path);

}  // namespace earlycls
