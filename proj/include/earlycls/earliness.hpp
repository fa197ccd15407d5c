#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "earlycls/autodiff.hpp"
#include "earlycls/model.hpp"

namespace earlycls {

enum class LossMode { kEarlyReward, kCrossEntropyBaseline };

struct LossConfig {
  double alpha = 0.6;  // weight on the classification term; 1 - alpha rewards earliness
  LossMode mode = LossMode::kEarlyReward;

  void validate() const;  // alpha must lie in [0, 1]
};

// Log arguments are clamped to [kProbFloor, 1] so an early all-wrong
// classifier still produces a finite loss.
inline constexpr double kProbFloor = 1e-8;

// Probability of first stopping at t: P[t] = p[t] * prod_{tau<t}(1 - p[tau]),
// accumulated left to right with a running survival product. Requires the
// forced terminal p.back() == 1, which makes the distribution sum to 1.
struct StoppingDistribution {
  std::vector<double> probs;
};
StoppingDistribution stopping_distribution(std::span<const double> p);

// -log of the annotated class's clamped score.
double classification_loss(std::span<const double> yhat, int label);

// y_plus * (1 - t/T): the potential reward shrinks linearly with time.
double earliness_reward(int t, int seq_len, double y_plus);

// alpha * classification_loss - (1 - alpha) * earliness_reward (early-reward
// mode only). May be negative; no floor is applied.
double step_loss(std::span<const double> yhat, int label, int t, int seq_len,
                 const LossConfig& cfg);

// Early-reward mode: sum_t P[t] * step_loss(t). Baseline mode: equal-weight
// mean of the per-step classification losses.
double sequence_loss(const PredictionTrace& trace, int label, const LossConfig& cfg);

struct StopDecision {
  int t_stop = 0;
  int label = -1;  // argmax of the class scores at t_stop
};

// Sequential Bernoulli draws over p; the first success stops, and T-1 is a
// forced stop regardless of p. Deterministic per seed.
StopDecision sample_stop(const PredictionTrace& trace, uint64_t seed);

// E[t / (T-1)] under the stopping distribution; deterministic counterpart of
// sample_stop used for diagnostics. 0 for T == 1.
double expected_stop_fraction(std::span<const double> p);

// ----- taped builders (the trainable path; gradients flow through both the
// class scores and, via the survival chain, the stopping head) -----

// One column per sample: -log(clamp(yhat[r, labels[r]])).
Value classification_loss_node(const Value& yhat, std::span<const int> labels);

// B x 1 step losses at time t of a length-T sequence.
Value step_loss_node(const Value& yhat, std::span<const int> labels, int t, int seq_len,
                     const LossConfig& cfg);

// Scalar sum over the batch of per-sequence losses; callers divide by the
// batch size. Works for a batch of one.
Value sequence_loss_node(Tape& tape, const BatchTrace& trace, std::span<const int> labels,
                         const LossConfig& cfg);

}  // namespace earlycls
