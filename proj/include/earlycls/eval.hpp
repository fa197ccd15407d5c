#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "earlycls/data.hpp"
#include "earlycls/train.hpp"

namespace earlycls {

struct ConfusionMatrix {
  int classes = 0;
  std::vector<long> counts;  // classes x classes, rows = true class

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int m) : classes(m), counts(static_cast<size_t>(m) * m, 0) {}
  long& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * classes + pred]; }
  long at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * classes + pred];
  }
  long total() const;
  double accuracy() const;  // trace / total
};

struct ClassScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  bool degenerate = false;  // some denominator was zero
};
struct PrfSummary {
  std::vector<ClassScore> per_class;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};
// Class-wise precision/recall/f1 with unweighted macro means; zero
// denominators score 0 and set the degenerate flag.
PrfSummary precision_recall_f1(const ConfusionMatrix& cm);

struct KappaResult {
  double value = 0.0;
  bool degenerate = false;  // chance agreement was 1
};
// (p_o - p_e) / (1 - p_e) with marginal-product chance agreement.
KappaResult kappa(const ConfusionMatrix& cm);

// Linear-interpolation quantile on a sorted sequence (the common "R-7" rule).
double quantile_linear(std::span<const double> sorted, double q);

struct StopRecord {
  int true_label = 0;
  double fraction = 0.0;  // t_stop / (T-1)
  double day = 0.0;       // day-of-year of the stopped observation
};
struct StopStats {
  int cls = 0;
  int n = 0;
  double fraction[5] = {0, 0, 0, 0, 0};  // min, q1, median, q3, max
  double day[5] = {0, 0, 0, 0, 0};
};
// Five-number summaries per class; classes without decisions are omitted.
std::vector<StopStats> stop_time_stats(std::span<const StopRecord> records, int classes);

enum class StopMode { kSampled, kExpected, kTerminal };

struct EvalOptions {
  StopMode mode = StopMode::kSampled;
  uint64_t seed = 0;
  int repeats = 1;        // sampled mode only; deterministic modes ignore it
  int subsample_len = 70;
  int threads = 0;
};

struct EvalReport {
  ConfusionMatrix cm;
  double accuracy = 0.0;
  PrfSummary prf;
  KappaResult kappa_score;
  double mean_stop_fraction = 0.0;
  std::vector<StopStats> stop_stats;
};

struct MetricStats {
  double mean = 0.0, std = 0.0;
};
struct EvalSummary {
  MetricStats accuracy, tstop, precision, recall, f1, kappa_value;
  int repeats = 0;
  EvalReport first;                   // full detail of the first repeat
  std::vector<StopStats> stop_stats;  // pooled over repeats
};

// Forward passes run once per sample (dropout off, OpenMP over samples);
// sampled mode then redraws stopping times per repeat and reports
// mean +/- std over repeats.
EvalSummary evaluate(const ParameterSet& params, const ModelConfig& cfg,
                     const std::vector<TimeSeriesSample>& dataset, std::span<const int> indices,
                     const EvalOptions& options);

// ----- alpha sweep -----

struct SweepCell {
  double alpha = 0.0;
  int rep = 0;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0, tstop = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0, kappa_value = 0.0;
  std::vector<StopStats> stop_stats;
  int best_epoch = -1;
  double wall_seconds = 0.0;
};
struct SweepRow {
  double alpha = 0.0;
  MetricStats accuracy, tstop, precision, recall, f1, kappa_value;
  int cells_ok = 0;
};
struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

// Trains seeds_per_alpha models per alpha (fresh derived seed each) and
// evaluates the best-validation checkpoint of each on the test split.
// Training failures are recorded in the cell and the sweep continues.
SweepResult alpha_sweep(const ModelConfig& model_cfg, const TrainConfig& train_template,
                        const std::vector<TimeSeriesSample>& dataset, const DatasetSplit& split,
                        std::span<const double> alphas, int seeds_per_alpha,
                        const EvalOptions& eval_options, std::ostream* log = nullptr);

// CSV emitters (shortest round-trip float formatting, LF endings).
void write_sweep_csv(const std::string& path, const SweepResult& sweep);
void write_report_csv(const std::string& path, const EvalSummary& summary);
void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm);
void write_stop_stats_csv(const std::string& path, std::span<const StopStats> stats);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace earlycls
