#include "earlycls/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <omp.h>
#include <ostream>
#include <stdexcept>

#include "earlycls/earliness.hpp"
#include "earlycls/rng.hpp"

namespace earlycls {

namespace {

constexpr uint64_t kEvalSubSalt = 0x65737562;  // "esub"
constexpr uint64_t kStopSalt = 0x6573746f;     // "esto"
constexpr uint64_t kSweepSalt = 0x73777065;    // "swpe"
constexpr uint64_t kSweepEvalSalt = 0x73776576; // "swev"

void append_double(std::string& out, double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  out.append(buf, ptr);
}

MetricStats stats_of(std::span<const double> xs) {
  MetricStats s;
  if (xs.empty()) {
    s.mean = std::nan("");
    return s;
  }
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return s;
}

int resolve_threads(int requested) {
  return requested > 0 ? requested : omp_get_max_threads();
}

}  // namespace

long ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0L);
}

double ConfusionMatrix::accuracy() const {
  const long n = total();
  if (n == 0) return 0.0;
  long diag = 0;
  for (int c = 0; c < classes; ++c) diag += at(c, c);
  return static_cast<double>(diag) / static_cast<double>(n);
}

PrfSummary precision_recall_f1(const ConfusionMatrix& cm) {
  PrfSummary out;
  out.per_class.resize(static_cast<size_t>(cm.classes));
  for (int c = 0; c < cm.classes; ++c) {
    long tp = cm.at(c, c);
    long fp = 0, fn = 0;
    for (int o = 0; o < cm.classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    ClassScore& s = out.per_class[static_cast<size_t>(c)];
    if (tp + fp > 0) {
      s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      s.degenerate = true;
    }
    if (tp + fn > 0) {
      s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
      s.degenerate = true;
    }
    if (s.precision + s.recall > 0.0) {
      s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }
    out.macro_precision += s.precision;
    out.macro_recall += s.recall;
    out.macro_f1 += s.f1;
  }
  if (cm.classes > 0) {
    out.macro_precision /= cm.classes;
    out.macro_recall /= cm.classes;
    out.macro_f1 /= cm.classes;
  }
  return out;
}

KappaResult kappa(const ConfusionMatrix& cm) {
  const long n = cm.total();
  if (n <= 0) {
    throw std::invalid_argument("kappa: empty confusion matrix");
  }
  double p_o = 0.0, p_e = 0.0;
  for (int c = 0; c < cm.classes; ++c) {
    p_o += static_cast<double>(cm.at(c, c));
    long row = 0, col = 0;
    for (int o = 0; o < cm.classes; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    p_e += static_cast<double>(row) * static_cast<double>(col);
  }
  p_o /= static_cast<double>(n);
  p_e /= static_cast<double>(n) * static_cast<double>(n);
  KappaResult out;
  if (p_e >= 1.0) {
    out.degenerate = true;
    return out;
  }
  out.value = (p_o - p_e) / (1.0 - p_e);
  return out;
}

double quantile_linear(std::span<const double> sorted, double q) {
  if (sorted.empty()) {
    throw std::invalid_argument("quantile_linear: empty input");
  }
  if (sorted.size() == 1) return sorted[0];
  const double h = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<StopStats> stop_time_stats(std::span<const StopRecord> records, int classes) {
  std::vector<std::vector<double>> fractions(static_cast<size_t>(classes));
  std::vector<std::vector<double>> days(static_cast<size_t>(classes));
  for (const StopRecord& r : records) {
    if (r.true_label < 0 || r.true_label >= classes) {
      throw std::out_of_range("stop_time_stats: label " + std::to_string(r.true_label) +
                              " out of range");
    }
    fractions[static_cast<size_t>(r.true_label)].push_back(r.fraction);
    days[static_cast<size_t>(r.true_label)].push_back(r.day);
  }
  const double qs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<StopStats> out;
  for (int c = 0; c < classes; ++c) {
    auto& f = fractions[static_cast<size_t>(c)];
    auto& d = days[static_cast<size_t>(c)];
    if (f.empty()) continue;  // omitted; callers may warn
    std::sort(f.begin(), f.end());
    std::sort(d.begin(), d.end());
    StopStats s;
    s.cls = c;
    s.n = static_cast<int>(f.size());
    for (int k = 0; k < 5; ++k) {
      s.fraction[k] = quantile_linear(f, qs[k]);
      s.day[k] = quantile_linear(d, qs[k]);
    }
    out.push_back(s);
  }
  return out;
}

EvalSummary evaluate(const ParameterSet& params, const ModelConfig& cfg,
                     const std::vector<TimeSeriesSample>& dataset, std::span<const int> indices,
                     const EvalOptions& options) {
  if (indices.empty()) {
    throw std::invalid_argument("evaluate: empty sample set");
  }
  const int n = static_cast<int>(indices.size());
  const int classes = cfg.num_classes;
  const int threads = resolve_threads(options.threads);

  // one forward pass per sample; stopping decisions are drawn from the traces
  std::vector<PredictionTrace> traces(static_cast<size_t>(n));
  std::vector<std::vector<double>> times(static_cast<size_t>(n));
  std::vector<int> labels(static_cast<size_t>(n));

#pragma omp parallel for num_threads(threads) schedule(dynamic) if (threads > 1)
  for (int i = 0; i < n; ++i) {
    const TimeSeriesSample& s = dataset[static_cast<size_t>(indices[i])];
    const Subsampled sub =
        subsample(s, options.subsample_len,
                  mix_seed(options.seed, {kEvalSubSalt, static_cast<uint64_t>(s.sample_id)}));
    traces[static_cast<size_t>(i)] = forward(params, cfg, sub.X);
    times[static_cast<size_t>(i)] = sub.times;
    labels[static_cast<size_t>(i)] = s.label;
  }

  const int repeats = options.mode == StopMode::kSampled ? std::max(1, options.repeats) : 1;
  std::vector<double> acc_r, tstop_r, prec_r, rec_r, f1_r, kappa_r;
  std::vector<StopRecord> pooled;
  EvalSummary summary;

  for (int rep = 0; rep < repeats; ++rep) {
    ConfusionMatrix cm(classes);
    std::vector<StopRecord> records(static_cast<size_t>(n));
    double frac_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const PredictionTrace& trace = traces[static_cast<size_t>(i)];
      const int t_len = static_cast<int>(trace.stop_probs.size());
      int t_stop;
      double fraction;
      if (options.mode == StopMode::kSampled) {
        const TimeSeriesSample& s = dataset[static_cast<size_t>(indices[i])];
        const StopDecision d = sample_stop(
            trace, mix_seed(options.seed, {kStopSalt, static_cast<uint64_t>(rep),
                                           static_cast<uint64_t>(s.sample_id)}));
        t_stop = d.t_stop;
        fraction = t_len > 1 ? static_cast<double>(t_stop) / (t_len - 1) : 0.0;
      } else if (options.mode == StopMode::kExpected) {
        fraction = expected_stop_fraction(trace.stop_probs);
        t_stop = static_cast<int>(std::lround(fraction * (t_len - 1)));
      } else {  // kTerminal
        t_stop = t_len - 1;
        fraction = 1.0;
      }
      int pred = 0;
      for (int j = 1; j < classes; ++j) {
        if (trace.class_scores(t_stop, j) > trace.class_scores(t_stop, pred)) pred = j;
      }
      cm.at(labels[static_cast<size_t>(i)], pred) += 1;
      frac_sum += fraction;
      records[static_cast<size_t>(i)] = {labels[static_cast<size_t>(i)], fraction,
                                         times[static_cast<size_t>(i)][static_cast<size_t>(
                                             t_stop)]};
    }

    EvalReport report;
    report.cm = cm;
    report.accuracy = cm.accuracy();
    report.prf = precision_recall_f1(cm);
    report.kappa_score = kappa(cm);
    report.mean_stop_fraction = frac_sum / n;
    report.stop_stats = stop_time_stats(records, classes);

    acc_r.push_back(report.accuracy);
    tstop_r.push_back(report.mean_stop_fraction);
    prec_r.push_back(report.prf.macro_precision);
    rec_r.push_back(report.prf.macro_recall);
    f1_r.push_back(report.prf.macro_f1);
    kappa_r.push_back(report.kappa_score.value);
    pooled.insert(pooled.end(), records.begin(), records.end());
    if (rep == 0) summary.first = std::move(report);
  }

  summary.repeats = repeats;
  summary.accuracy = stats_of(acc_r);
  summary.tstop = stats_of(tstop_r);
  summary.precision = stats_of(prec_r);
  summary.recall = stats_of(rec_r);
  summary.f1 = stats_of(f1_r);
  summary.kappa_value = stats_of(kappa_r);
  summary.stop_stats = stop_time_stats(pooled, classes);
  return summary;
}

SweepResult alpha_sweep(const ModelConfig& model_cfg, const TrainConfig& train_template,
                        const std::vector<TimeSeriesSample>& dataset, const DatasetSplit& split,
                        std::span<const double> alphas, int seeds_per_alpha,
                        const EvalOptions& eval_options, std::ostream* log) {
  if (alphas.empty()) {
    throw std::invalid_argument("alpha_sweep: empty alpha list");
  }
  if (seeds_per_alpha < 1) {
    throw std::invalid_argument("alpha_sweep: seeds_per_alpha must be >= 1");
  }
  SweepResult result;
  for (size_t ai = 0; ai < alphas.size(); ++ai) {
    for (int rep = 0; rep < seeds_per_alpha; ++rep) {
      SweepCell cell;
      cell.alpha = alphas[ai];
      cell.rep = rep;
      cell.seed = mix_seed(train_template.seed,
                           {kSweepSalt, static_cast<uint64_t>(ai), static_cast<uint64_t>(rep)});
      const auto t0 = std::chrono::steady_clock::now();
      try {
        TrainConfig cfg = train_template;
        cfg.loss.alpha = alphas[ai];
        cfg.seed = cell.seed;
        const Checkpoint ckpt = train(model_cfg, cfg, dataset, split, nullptr, false, nullptr);

        EvalOptions opts = eval_options;
        opts.seed = mix_seed(cell.seed, {kSweepEvalSalt});
        opts.subsample_len = cfg.subsample_len;
        const EvalSummary s = evaluate(ckpt.best_params, model_cfg, dataset, split.test, opts);
        cell.accuracy = s.accuracy.mean;
        cell.tstop = s.tstop.mean;
        cell.precision = s.precision.mean;
        cell.recall = s.recall.mean;
        cell.f1 = s.f1.mean;
        cell.kappa_value = s.kappa_value.mean;
        cell.stop_stats = s.stop_stats;
        cell.best_epoch = ckpt.best_epoch;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      cell.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (log != nullptr) {
        (*log) << "alpha " << cell.alpha << " rep " << cell.rep;
        if (cell.ok) {
          (*log) << " acc " << cell.accuracy << " tstop " << cell.tstop << " ("
                 << cell.wall_seconds << "s)\n";
        } else {
          (*log) << " FAILED: " << cell.error << "\n";
        }
        log->flush();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  for (size_t ai = 0; ai < alphas.size(); ++ai) {
    SweepRow row;
    row.alpha = alphas[ai];
    std::vector<double> acc, tstop, prec, rec, f1, kap;
    for (const SweepCell& cell : result.cells) {
      if (cell.alpha != alphas[ai] || !cell.ok) continue;
      acc.push_back(cell.accuracy);
      tstop.push_back(cell.tstop);
      prec.push_back(cell.precision);
      rec.push_back(cell.recall);
      f1.push_back(cell.f1);
      kap.push_back(cell.kappa_value);
    }
    row.cells_ok = static_cast<int>(acc.size());
    row.accuracy = stats_of(acc);
    row.tstop = stats_of(tstop);
    row.precision = stats_of(prec);
    row.recall = stats_of(rec);
    row.f1 = stats_of(f1);
    row.kappa_value = stats_of(kap);
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_sweep_csv(const std::string& path, const SweepResult& sweep) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_sweep_csv: cannot open " + path);
  }
  out << "alpha,accuracy_mean,accuracy_std,tstop_mean,tstop_std,precision_mean,precision_std,"
         "recall_mean,recall_std,f1_mean,f1_std,kappa_mean,kappa_std\n";
  std::string line;
  for (const SweepRow& row : sweep.rows) {
    line.clear();
    append_double(line, row.alpha);
    for (const MetricStats* m :
         {&row.accuracy, &row.tstop, &row.precision, &row.recall, &row.f1, &row.kappa_value}) {
      line += ',';
      append_double(line, m->mean);
      line += ',';
      append_double(line, m->std);
    }
    line += '\n';
    out << line;
  }
}

void write_report_csv(const std::string& path, const EvalSummary& summary) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_report_csv: cannot open " + path);
  }
  out << "metric,mean,std\n";
  const std::pair<const char*, const MetricStats*> rows[] = {
      {"accuracy", &summary.accuracy},   {"tstop", &summary.tstop},
      {"precision", &summary.precision}, {"recall", &summary.recall},
      {"f1", &summary.f1},               {"kappa", &summary.kappa_value},
  };
  std::string line;
  for (const auto& [name, m] : rows) {
    line.clear();
    line += name;
    line += ',';
    append_double(line, m->mean);
    line += ',';
    append_double(line, m->std);
    line += '\n';
    out << line;
  }
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_confusion_csv: cannot open " + path);
  }
  out << "true_class";
  for (int c = 0; c < cm.classes; ++c) out << ",pred_" << c;
  out << "\n";
  for (int t = 0; t < cm.classes; ++t) {
    out << t;
    for (int p = 0; p < cm.classes; ++p) out << "," << cm.at(t, p);
    out << "\n";
  }
}

void write_stop_stats_csv(const std::string& path, std::span<const StopStats> stats) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_stop_stats_csv: cannot open " + path);
  }
  out << "class,n,min,q1,median,q3,max,min_doy,q1_doy,median_doy,q3_doy,max_doy\n";
  std::string line;
  for (const StopStats& s : stats) {
    line.clear();
    line += std::to_string(s.cls);
    line += ',';
    line += std::to_string(s.n);
    for (int k = 0; k < 5; ++k) {
      line += ',';
      append_double(line, s.fraction[k]);
    }
    for (int k = 0; k < 5; ++k) {
      line += ',';
      append_double(line, s.day[k]);
    }
    line += '\n';
    out << line;
  }
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length series of size >= 2");
  }
  const size_t n = x.size();
  auto ranks = [n](std::span<const double> v) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0.0 || vy == 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

}  // namespace earlycls
