#include "earlycls/earliness.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "earlycls/rng.hpp"

namespace earlycls {

namespace {

void check_prob_entries(std::span<const double> p, const char* what) {
  if (p.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty stop-probability vector");
  }
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) {
      throw std::invalid_argument(std::string(what) + ": entry " + std::to_string(x) +
                                  " outside [0, 1]");
    }
  }
}

int argmax_row(const Array& scores, int row) {
  int best = 0;
  for (int j = 1; j < scores.cols(); ++j) {
    if (scores(row, j) > scores(row, best)) best = j;
  }
  return best;
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("LossConfig: alpha " + std::to_string(alpha) +
                                " outside [0, 1]");
  }
}

StoppingDistribution stopping_distribution(std::span<const double> p) {
  check_prob_entries(p, "stopping_distribution");
  if (std::fabs(p.back() - 1.0) > 1e-12) {
    throw std::invalid_argument(
        "stopping_distribution: terminal probability must be forced to 1, got " +
        std::to_string(p.back()));
  }
  StoppingDistribution dist;
  dist.probs.resize(p.size());
  double survival = 1.0;
  for (size_t t = 0; t < p.size(); ++t) {
    dist.probs[t] = p[t] * survival;
    survival *= 1.0 - p[t];
  }
  return dist;
}

double classification_loss(std::span<const double> yhat, int label) {
  if (label < 0 || label >= static_cast<int>(yhat.size())) {
    throw std::out_of_range("classification_loss: class " + std::to_string(label) +
                            " out of range for " + std::to_string(yhat.size()) + " scores");
  }
  double y_plus = yhat[static_cast<size_t>(label)];
  y_plus = y_plus < kProbFloor ? kProbFloor : (y_plus > 1.0 ? 1.0 : y_plus);
  return -std::log(y_plus);
}

double earliness_reward(int t, int seq_len, double y_plus) {
  return y_plus * (1.0 - static_cast<double>(t) / static_cast<double>(seq_len));
}

double step_loss(std::span<const double> yhat, int label, int t, int seq_len,
                 const LossConfig& cfg) {
  cfg.validate();
  if (cfg.mode != LossMode::kEarlyReward) {
    throw std::invalid_argument("step_loss: only defined for the early-reward mode");
  }
  const double y_plus = yhat[static_cast<size_t>(label)];
  return cfg.alpha * classification_loss(yhat, label) -
         (1.0 - cfg.alpha) * earliness_reward(t, seq_len, y_plus);
}

double sequence_loss(const PredictionTrace& trace, int label, const LossConfig& cfg) {
  cfg.validate();
  const int t_len = trace.class_scores.rows();
  if (t_len < 1 || static_cast<int>(trace.stop_probs.size()) != t_len) {
    throw std::invalid_argument("sequence_loss: trace has " +
                                std::to_string(trace.stop_probs.size()) + " stop probs for " +
                                std::to_string(t_len) + " score rows");
  }
  if (cfg.mode == LossMode::kCrossEntropyBaseline) {
    double total = 0.0;
    for (int t = 0; t < t_len; ++t) {
      total += classification_loss({trace.class_scores.row_ptr(t),
                                    static_cast<size_t>(trace.class_scores.cols())},
                                   label);
    }
    return total / t_len;
  }
  const StoppingDistribution dist = stopping_distribution(trace.stop_probs);
  double total = 0.0;
  for (int t = 0; t < t_len; ++t) {
    const std::span<const double> row{trace.class_scores.row_ptr(t),
                                      static_cast<size_t>(trace.class_scores.cols())};
    total += dist.probs[static_cast<size_t>(t)] * step_loss(row, label, t, t_len, cfg);
  }
  return total;
}

StopDecision sample_stop(const PredictionTrace& trace, uint64_t seed) {
  check_prob_entries(trace.stop_probs, "sample_stop");
  Rng rng(seed);
  const int t_len = static_cast<int>(trace.stop_probs.size());
  StopDecision d;
  d.t_stop = t_len - 1;  // forced terminal if no earlier draw fires
  for (int t = 0; t < t_len - 1; ++t) {
    if (rng.uniform() < trace.stop_probs[static_cast<size_t>(t)]) {
      d.t_stop = t;
      break;
    }
  }
  d.label = argmax_row(trace.class_scores, d.t_stop);
  return d;
}

double expected_stop_fraction(std::span<const double> p) {
  const StoppingDistribution dist = stopping_distribution(p);
  const size_t t_len = dist.probs.size();
  if (t_len == 1) return 0.0;
  double expectation = 0.0;
  for (size_t t = 0; t < t_len; ++t) {
    expectation += dist.probs[t] * (static_cast<double>(t) / static_cast<double>(t_len - 1));
  }
  return expectation;
}

Value classification_loss_node(const Value& yhat, std::span<const int> labels) {
  std::vector<int> idx(labels.begin(), labels.end());
  return neg(log(clamp(gather_cols(yhat, std::move(idx)), kProbFloor, 1.0)));
}

Value step_loss_node(const Value& yhat, std::span<const int> labels, int t, int seq_len,
                     const LossConfig& cfg) {
  cfg.validate();
  std::vector<int> idx(labels.begin(), labels.end());
  Value y_plus = gather_cols(yhat, std::move(idx));
  Value ce = neg(log(clamp(y_plus, kProbFloor, 1.0)));
  const double time_scale = 1.0 - static_cast<double>(t) / static_cast<double>(seq_len);
  Value reward = scale(y_plus, time_scale);
  return sub(scale(ce, cfg.alpha), scale(reward, 1.0 - cfg.alpha));
}

Value sequence_loss_node(Tape& tape, const BatchTrace& trace, std::span<const int> labels,
                         const LossConfig& cfg) {
  cfg.validate();
  const int t_len = static_cast<int>(trace.class_probs.size());
  if (t_len < 1 || static_cast<int>(trace.stop_probs.size()) != t_len) {
    throw std::invalid_argument("sequence_loss_node: malformed trace");
  }
  const int batch = trace.class_probs[0].rows();
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("sequence_loss_node: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(batch));
  }

  if (cfg.mode == LossMode::kCrossEntropyBaseline) {
    Value total = tape.constant(Array(batch, 1));
    for (int t = 0; t < t_len; ++t) {
      total = add(total, classification_loss_node(trace.class_probs[static_cast<size_t>(t)],
                                                  labels));
    }
    return sum(scale(total, 1.0 / t_len));
  }

  Value survival = tape.constant(Array::filled(batch, 1, 1.0));
  Value total = tape.constant(Array(batch, 1));
  for (int t = 0; t < t_len; ++t) {
    const Value& p_t = trace.stop_probs[static_cast<size_t>(t)];
    Value stop_mass = mul(p_t, survival);  // P(t; p) of Eq. 1
    Value loss_t = step_loss_node(trace.class_probs[static_cast<size_t>(t)], labels, t, t_len,
                                  cfg);
    total = add(total, mul(stop_mass, loss_t));
    if (t + 1 < t_len) {
      survival = mul(survival, one_minus(p_t));
    }
  }
  return sum(total);
}

}  // namespace earlycls
