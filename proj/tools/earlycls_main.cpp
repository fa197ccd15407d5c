// Command-line front end: dataset generation, training, evaluation, the
// alpha sweep, and per-sequence trace dumps.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "earlycls/data.hpp"
#include "earlycls/earliness.hpp"
#include "earlycls/eval.hpp"
#include "earlycls/model.hpp"
#include "earlycls/rng.hpp"
#include "earlycls/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// configuration problems the user can fix; mapped to exit code 2
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir = ".";
  std::string dataset;
  earlycls::ModelConfig model;
  earlycls::TrainConfig train;
  double split_train = 0.6, split_val = 0.2, split_test = 0.2;
};

earlycls::LossMode parse_loss_mode(const std::string& mode) {
  if (mode == "early_reward") return earlycls::LossMode::kEarlyReward;
  if (mode == "cross_entropy") return earlycls::LossMode::kCrossEntropyBaseline;
  throw ConfigError("unknown loss mode '" + mode + "' (early_reward or cross_entropy)");
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.dataset = j.value("dataset", cfg.dataset);
  if (j.contains("model")) {
    const json& m = j["model"];
    cfg.model.input_dim = m.value("input_dim", cfg.model.input_dim);
    cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
    cfg.model.num_layers = m.value("num_layers", cfg.model.num_layers);
    cfg.model.num_classes = m.value("num_classes", cfg.model.num_classes);
    cfg.model.dropout_rate = m.value("dropout_rate", cfg.model.dropout_rate);
    cfg.model.stop_bias_init_mean = m.value("stop_bias_init_mean", cfg.model.stop_bias_init_mean);
    cfg.model.stop_bias_init_std = m.value("stop_bias_init_std", cfg.model.stop_bias_init_std);
    cfg.model.layer_norm = m.value("layer_norm", cfg.model.layer_norm);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.loss.alpha = t.value("alpha", cfg.train.loss.alpha);
    if (t.contains("loss_mode")) cfg.train.loss.mode = parse_loss_mode(t["loss_mode"]);
    cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
    cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
    cfg.train.adam_eps = t.value("adam_eps", cfg.train.adam_eps);
    cfg.train.grad_clip_norm = t.value("grad_clip_norm", cfg.train.grad_clip_norm);
    cfg.train.subsample_len = t.value("subsample_len", cfg.train.subsample_len);
    cfg.train.micro_batch = t.value("micro_batch", cfg.train.micro_batch);
    cfg.train.threads = t.value("threads", cfg.train.threads);
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    cfg.split_train = s.value("train", cfg.split_train);
    cfg.split_val = s.value("val", cfg.split_val);
    cfg.split_test = s.value("test", cfg.split_test);
  }
  return cfg;
}

std::string resolve_out_dir(const std::string& configured) {
  const char* env = std::getenv("EARLYCLS_OUT_DIR");
  const std::string dir = env != nullptr && *env != '\0' ? std::string(env) : configured;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path not set");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

std::vector<earlycls::TimeSeriesSample> load_dataset_checked(const std::string& path,
                                                             int expected_bands) {
  require_file(path, "dataset");
  auto samples = earlycls::load_dataset(path, expected_bands);
  if (samples.empty()) throw ConfigError("dataset " + path + " contains no samples");
  return samples;
}

void check_model_matches_dataset(const earlycls::ModelConfig& model,
                                 const std::vector<earlycls::TimeSeriesSample>& samples) {
  const int classes = earlycls::num_classes_in(samples);
  if (classes > model.num_classes) {
    throw ConfigError("dataset has labels up to " + std::to_string(classes - 1) +
                      " but the model is configured for " + std::to_string(model.num_classes) +
                      " classes");
  }
}

std::vector<int> split_indices_for(const std::string& which, const earlycls::DatasetSplit& split,
                                   const std::vector<earlycls::TimeSeriesSample>& samples) {
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  if (which == "all") {
    std::vector<int> all(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }
  throw ConfigError("unknown split '" + which + "' (train|val|test|all)");
}

// Rebuild split membership from the checkpoint's region id sets, so the
// evaluation partition survives dataset-file reordering.
earlycls::DatasetSplit split_from_regions(const earlycls::DatasetSplit& stored,
                                          const std::vector<earlycls::TimeSeriesSample>& samples) {
  earlycls::DatasetSplit out = stored;
  out.train.clear();
  out.val.clear();
  out.test.clear();
  auto contains = [](const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    const int rid = samples[static_cast<size_t>(i)].region_id;
    if (contains(stored.train_regions, rid)) out.train.push_back(i);
    if (contains(stored.val_regions, rid)) out.val.push_back(i);
    if (contains(stored.test_regions, rid)) out.test.push_back(i);
  }
  return out;
}

earlycls::StopMode parse_stop_mode(const std::string& mode) {
  if (mode == "sampled") return earlycls::StopMode::kSampled;
  if (mode == "expected") return earlycls::StopMode::kExpected;
  if (mode == "terminal") return earlycls::StopMode::kTerminal;
  throw ConfigError("unknown stop mode '" + mode + "' (sampled|expected|terminal)");
}

std::vector<double> parse_alpha_list(const std::string& csv) {
  std::vector<double> alphas;
  size_t start = 0;
  while (start <= csv.size()) {
    const size_t comma = csv.find(',', start);
    const std::string field =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!field.empty()) {
      double a = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), a);
      if (ec != std::errc() || ptr != field.data() + field.size() || a < 0.0 || a > 1.0) {
        throw ConfigError("bad alpha '" + field + "' (need values in [0, 1])");
      }
      alphas.push_back(a);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (alphas.empty()) throw ConfigError("empty alpha list");
  return alphas;
}

void print_summary(const earlycls::EvalSummary& s) {
  auto line = [](const char* name, const earlycls::MetricStats& m) {
    std::printf("  %-10s %.4f +/- %.4f\n", name, m.mean, m.std);
  };
  std::printf("test metrics (%d repeat%s):\n", s.repeats, s.repeats == 1 ? "" : "s");
  line("accuracy", s.accuracy);
  line("tstop", s.tstop);
  line("precision", s.precision);
  line("recall", s.recall);
  line("f1", s.f1);
  line("kappa", s.kappa_value);
}

// ----- subcommands -----

int cmd_generate(const std::string& spec_path, const std::string& out_path, int samples_per_class,
                 int regions, double noise_std, uint64_t seed,
                 const earlycls::GenerateOptions& opts, const std::string& write_spec) {
  std::vector<earlycls::PhenologyClassSpec> specs;
  if (spec_path.empty()) {
    specs = earlycls::default_crop_catalogue();
  } else {
    require_file(spec_path, "class spec");
    specs = earlycls::load_class_specs(spec_path);
  }
  if (!write_spec.empty()) {
    earlycls::save_class_specs(write_spec, specs);
  }
  const auto samples = earlycls::generate(specs, samples_per_class, regions, noise_std, seed,
                                          opts);
  earlycls::save_dataset(out_path, samples);
  std::printf("wrote %zu samples (%zu classes, %d regions) to %s\n", samples.size(), specs.size(),
              earlycls::num_regions(samples), out_path.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& init_from, const std::string& resume,
              bool reference_path) {
  const std::string out_dir = resolve_out_dir(cfg.out_dir);
  earlycls::Checkpoint ckpt;
  if (!resume.empty()) {
    require_file(resume, "checkpoint");
    ckpt = earlycls::load_checkpoint(resume);
    const auto samples = load_dataset_checked(cfg.dataset, ckpt.model_cfg.input_dim);
    if (cfg.train.epochs > ckpt.train_cfg.epochs) ckpt.train_cfg.epochs = cfg.train.epochs;
    earlycls::continue_training(ckpt, samples, reference_path, &std::cout);
  } else {
    const auto samples = load_dataset_checked(cfg.dataset, cfg.model.input_dim);
    check_model_matches_dataset(cfg.model, samples);
    const auto split = earlycls::split_by_region(samples, cfg.split_train, cfg.split_val,
                                                 cfg.split_test, cfg.seed);
    earlycls::ParameterSet init;
    const earlycls::ParameterSet* init_ptr = nullptr;
    if (!init_from.empty()) {
      require_file(init_from, "init-from parameters");
      auto [params, model_cfg] = earlycls::load_parameters(init_from);
      (void)model_cfg;
      init = std::move(params);
      init_ptr = &init;
    }
    earlycls::TrainConfig train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    ckpt = earlycls::train(cfg.model, train_cfg, samples, split, init_ptr, reference_path,
                           &std::cout);
  }

  const std::string ckpt_path = out_dir + "/checkpoint.json";
  earlycls::save_checkpoint(ckpt_path, ckpt);
  earlycls::write_history_csv(out_dir + "/history.csv", ckpt.history);
  std::printf("checkpoint: %s (best epoch %d, val accuracy %.4f)\n", ckpt_path.c_str(),
              ckpt.best_epoch, ckpt.best_val_accuracy);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
             const std::string& split_name, const std::string& stop_mode, int repeats,
             uint64_t seed, int threads, bool use_final, const std::string& out_dir_arg) {
  require_file(checkpoint_path, "checkpoint");
  const earlycls::Checkpoint ckpt = earlycls::load_checkpoint(checkpoint_path);
  const auto samples = load_dataset_checked(dataset_path, ckpt.model_cfg.input_dim);
  const auto split = split_from_regions(ckpt.split, samples);
  const auto indices = split_indices_for(split_name, split, samples);
  if (indices.empty()) throw ConfigError("split '" + split_name + "' matches no samples");

  earlycls::EvalOptions opts;
  opts.mode = parse_stop_mode(stop_mode);
  opts.repeats = repeats;
  opts.seed = seed;
  opts.subsample_len = ckpt.train_cfg.subsample_len;
  opts.threads = threads;
  const earlycls::ParameterSet& params = use_final ? ckpt.params : ckpt.best_params;
  const auto summary = earlycls::evaluate(params, ckpt.model_cfg, samples, indices, opts);

  const std::string out_dir = resolve_out_dir(out_dir_arg);
  earlycls::write_report_csv(out_dir + "/report.csv", summary);
  earlycls::write_confusion_csv(out_dir + "/confusion.csv", summary.first.cm);
  earlycls::write_stop_stats_csv(out_dir + "/stopstats.csv", summary.stop_stats);
  print_summary(summary);
  if (static_cast<int>(summary.stop_stats.size()) < ckpt.model_cfg.num_classes) {
    std::fprintf(stderr, "warning: %d class(es) had no decisions and were omitted from "
                         "stopstats.csv\n",
                 ckpt.model_cfg.num_classes - static_cast<int>(summary.stop_stats.size()));
  }
  std::printf("reports written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<double>& alphas, int seeds_per_alpha,
              const std::string& stop_mode, const std::string& out_path) {
  const auto samples = load_dataset_checked(cfg.dataset, cfg.model.input_dim);
  check_model_matches_dataset(cfg.model, samples);
  const auto split = earlycls::split_by_region(samples, cfg.split_train, cfg.split_val,
                                               cfg.split_test, cfg.seed);
  earlycls::TrainConfig train_cfg = cfg.train;
  train_cfg.seed = cfg.seed;
  earlycls::EvalOptions eval_opts;
  eval_opts.mode = parse_stop_mode(stop_mode);
  eval_opts.threads = train_cfg.threads;

  const auto sweep = earlycls::alpha_sweep(cfg.model, train_cfg, samples, split, alphas,
                                           seeds_per_alpha, eval_opts, &std::cout);
  earlycls::write_sweep_csv(out_path, sweep);

  int failed = 0;
  for (const auto& cell : sweep.cells) {
    if (!cell.ok) {
      ++failed;
      std::fprintf(stderr, "cell alpha=%.2f rep=%d failed: %s\n", cell.alpha, cell.rep,
                   cell.error.c_str());
    }
  }
  std::printf("sweep written to %s (%zu cells, %d failed)\n", out_path.c_str(),
              sweep.cells.size(), failed);
  return failed == 0 ? 0 : 1;
}

int cmd_trace(const std::string& checkpoint_path, const std::string& dataset_path, int sample_id,
              uint64_t seed, bool use_final, const std::string& out_path) {
  require_file(checkpoint_path, "checkpoint");
  const earlycls::Checkpoint ckpt = earlycls::load_checkpoint(checkpoint_path);
  const auto samples = load_dataset_checked(dataset_path, ckpt.model_cfg.input_dim);

  const earlycls::TimeSeriesSample* sample = nullptr;
  for (const auto& s : samples) {
    if (s.sample_id == sample_id) {
      sample = &s;
      break;
    }
  }
  if (sample == nullptr) throw ConfigError("sample id " + std::to_string(sample_id) +
                                           " not present in " + dataset_path);

  const auto sub = earlycls::subsample(
      *sample, ckpt.train_cfg.subsample_len,
      earlycls::mix_seed(seed, {0x65737562, static_cast<uint64_t>(sample->sample_id)}));
  const earlycls::ParameterSet& params = use_final ? ckpt.params : ckpt.best_params;
  const auto trace = earlycls::forward(params, ckpt.model_cfg, sub.X);
  const auto dist = earlycls::stopping_distribution(trace.stop_probs);
  const auto decision = earlycls::sample_stop(trace, seed);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << "t,day,p_t,P_t";
  for (int j = 0; j < ckpt.model_cfg.num_classes; ++j) out << ",yhat_" << j;
  out << ",stopped_flag\n";
  char buf[64];
  for (int t = 0; t < trace.class_scores.rows(); ++t) {
    out << t;
    const double row_vals[3] = {sub.times[static_cast<size_t>(t)],
                                trace.stop_probs[static_cast<size_t>(t)],
                                dist.probs[static_cast<size_t>(t)]};
    for (double x : row_vals) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
      (void)ec;
      out << ',' << std::string_view(buf, static_cast<size_t>(ptr - buf));
    }
    for (int j = 0; j < ckpt.model_cfg.num_classes; ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), trace.class_scores(t, j));
      (void)ec;
      out << ',' << std::string_view(buf, static_cast<size_t>(ptr - buf));
    }
    out << ',' << (t == decision.t_stop ? 1 : 0) << "\n";
  }
  std::printf("trace for sample %d (true label %d, sampled stop t=%d, predicted %d): %s\n",
              sample_id, sample->label, decision.t_stop, decision.label, out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"early classification of satellite time series"};
  app.require_subcommand(1);

  std::string config_path, dataset, out_dir, spec_path, write_spec, checkpoint, init_from,
      resume, split_name = "test", stop_mode = "sampled", alphas_csv, out_path;
  uint64_t seed = 0;
  bool seed_set = false, use_final = false, reference_path = false;
  int samples_per_class = 500, regions = 12, repeats = 1, seeds_per_alpha = 3, sample_id = 0,
      threads = 0;
  double noise_std = 0.03;
  earlycls::GenerateOptions gen_opts;

  auto* gen = app.add_subcommand("generate", "write a synthetic phenology dataset CSV");
  gen->add_option("--out", out_path, "output dataset CSV")->required();
  gen->add_option("--spec", spec_path, "class-spec JSON (default: built-in crop catalogue)");
  gen->add_option("--write-spec", write_spec, "also write the effective class specs as JSON");
  gen->add_option("--samples-per-class", samples_per_class, "samples per class")
      ->capture_default_str();
  gen->add_option("--regions", regions, "number of spatial regions")->capture_default_str();
  gen->add_option("--noise-std", noise_std, "observation noise sigma")->capture_default_str();
  gen->add_option("--seed", seed, "generator seed")->capture_default_str();
  gen->add_option("--revisit-days", gen_opts.revisit_days, "nominal revisit interval")
      ->capture_default_str();
  gen->add_option("--cloud-fraction", gen_opts.cloud_fraction, "dropped observation fraction")
      ->capture_default_str();
  gen->add_option("--peak-jitter", gen_opts.peak_jitter_days, "per-sample peak day jitter")
      ->capture_default_str();
  gen->add_option("--amplitude-jitter", gen_opts.amplitude_jitter,
                  "per-sample relative amplitude jitter")
      ->capture_default_str();

  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config (flags override it)");
    cmd->add_option("--dataset", dataset, "dataset CSV path");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "run seed")->each([&](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--threads", threads, "OpenMP threads (0 = all)");
  };

  double alpha = -1.0, learning_rate = -1.0, dropout = -1.0;
  int epochs = -1, batch_size = -1, hidden_dim = -1, num_layers = -1, subsample_len = -1,
      micro_batch = -1;
  std::string loss_mode;

  auto add_scale_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch-size", batch_size, "optimizer batch size");
    cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");
    cmd->add_option("--hidden-dim", hidden_dim, "LSTM hidden width");
    cmd->add_option("--num-layers", num_layers, "LSTM depth");
    cmd->add_option("--dropout", dropout, "inter-layer dropout rate");
    cmd->add_option("--subsample-len", subsample_len, "observations drawn per sample per epoch");
    cmd->add_option("--micro-batch", micro_batch, "tape slab size");
  };

  auto* tr = app.add_subcommand("train", "train a model and write checkpoint + history");
  add_run_options(tr);
  add_scale_overrides(tr);
  tr->add_option("--alpha", alpha, "loss trade-off weight in [0,1]");
  tr->add_option("--loss-mode", loss_mode, "early_reward|cross_entropy");
  tr->add_option("--init-from", init_from, "parameter JSON to start from");
  tr->add_option("--resume", resume, "checkpoint to continue training");
  tr->add_flag("--reference-path", reference_path,
               "use the serial per-sample gradient path (slow; for verification)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write report CSVs");
  ev->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  ev->add_option("--dataset", dataset, "dataset CSV path")->required();
  ev->add_option("--split", split_name, "train|val|test|all")->capture_default_str();
  ev->add_option("--stop-mode", stop_mode, "sampled|expected|terminal")->capture_default_str();
  ev->add_option("--repeats", repeats, "stopping-draw repeats (sampled mode)")
      ->capture_default_str();
  ev->add_option("--seed", seed, "evaluation seed")->capture_default_str();
  ev->add_option("--threads", threads, "OpenMP threads (0 = all)");
  ev->add_option("--out", out_dir, "output directory")->capture_default_str();
  ev->add_flag("--use-final", use_final, "evaluate the final instead of the best parameters");

  auto* sw = app.add_subcommand("sweep", "train/evaluate a grid of alpha values");
  add_run_options(sw);
  add_scale_overrides(sw);
  sw->add_option("--alphas", alphas_csv, "comma-separated alpha values")->required();
  sw->add_option("--seeds", seeds_per_alpha, "trainings per alpha")->capture_default_str();
  sw->add_option("--stop-mode", stop_mode, "sampled|expected|terminal")->capture_default_str();
  sw->add_option("--sweep-out", out_path, "sweep CSV path (default <out>/sweep.csv)");

  auto* tc = app.add_subcommand("trace", "dump per-time-step scores for one sample");
  tc->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  tc->add_option("--dataset", dataset, "dataset CSV path")->required();
  tc->add_option("--sample-id", sample_id, "sample id to trace")->required();
  tc->add_option("--seed", seed, "stop-sampling seed")->capture_default_str();
  tc->add_option("--out", out_path, "trace CSV path")->capture_default_str();
  tc->add_flag("--use-final", use_final, "use the final instead of the best parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(spec_path, out_path, samples_per_class, regions, noise_std, seed,
                          gen_opts, write_spec);
    }

    RunConfig cfg = load_run_config(config_path);
    if (!dataset.empty()) cfg.dataset = dataset;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed_set) cfg.seed = seed;
    if (threads > 0) cfg.train.threads = threads;
    if (alpha >= 0.0) cfg.train.loss.alpha = alpha;
    if (!loss_mode.empty()) cfg.train.loss.mode = parse_loss_mode(loss_mode);
    if (epochs >= 0) cfg.train.epochs = epochs;
    if (batch_size > 0) cfg.train.batch_size = batch_size;
    if (learning_rate > 0.0) cfg.train.learning_rate = learning_rate;
    if (hidden_dim > 0) cfg.model.hidden_dim = hidden_dim;
    if (num_layers > 0) cfg.model.num_layers = num_layers;
    if (dropout >= 0.0) cfg.model.dropout_rate = dropout;
    if (subsample_len > 0) cfg.train.subsample_len = subsample_len;
    if (micro_batch > 0) cfg.train.micro_batch = micro_batch;

    if (tr->parsed()) {
      try {
        cfg.model.validate();
        cfg.train.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      return cmd_train(cfg, init_from, resume, reference_path);
    }
    if (ev->parsed()) {
      return cmd_eval(checkpoint, dataset, split_name, stop_mode, repeats, seed, threads,
                      use_final, out_dir.empty() ? "." : out_dir);
    }
    if (sw->parsed()) {
      const auto alphas = parse_alpha_list(alphas_csv);
      const std::string sweep_out =
          out_path.empty() ? resolve_out_dir(cfg.out_dir) + "/sweep.csv" : out_path;
      return cmd_sweep(cfg, alphas, seeds_per_alpha, stop_mode, sweep_out);
    }
    if (tc->parsed()) {
      return cmd_trace(checkpoint, dataset, sample_id, seed, use_final,
                       out_path.empty() ? "trace.csv" : out_path);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
