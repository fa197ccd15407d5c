// Benchmark of the batch gradient paths: the serial per-sample reference vs
// the micro-batched tape with OpenMP-parallel kernels at 1..N threads.
// Also reports the largest gradient deviation between the two paths.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <omp.h>
#include <string>
#include <vector>

#include "earlycls/data.hpp"
#include "earlycls/model.hpp"
#include "earlycls/rng.hpp"
#include "earlycls/train.hpp"

using namespace earlycls;

namespace {

double run_timed(const char* name, int batch, int iters, const std::function<double()>& fn) {
  // one warmup, then best of `iters`
  fn();
  double best = 1e300;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    best = std::min(best, dt);
  }
  std::printf("  %-28s %8.3f s/batch   %8.1f samples/s\n", name, best, batch / best);
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int batch = 128, iters = 3, seq_len = 70;
  ModelConfig cfg;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto next = [&]() { return std::atoi(argv[++i]); };
    if (arg == "--batch" && i + 1 < argc) {
      batch = next();
    } else if (arg == "--iters" && i + 1 < argc) {
      iters = next();
    } else if (arg == "--seq-len" && i + 1 < argc) {
      seq_len = next();
    } else if (arg == "--hidden" && i + 1 < argc) {
      cfg.hidden_dim = next();
    } else if (arg == "--layers" && i + 1 < argc) {
      cfg.num_layers = next();
    } else {
      std::fprintf(stderr,
                   "usage: %s [--batch N] [--iters N] [--seq-len N] [--hidden N] [--layers N]\n",
                   argv[0]);
      return 2;
    }
  }

  std::printf("batch gradient benchmark: B=%d T=%d D=%d H=%d L=%d M=%d (max %d threads)\n",
              batch, seq_len, cfg.input_dim, cfg.hidden_dim, cfg.num_layers, cfg.num_classes,
              omp_get_max_threads());

  const ParameterSet params = init_parameters(cfg, 7);
  LossConfig loss_cfg;

  Rng rng(42);
  std::vector<Array> seqs;
  std::vector<BatchItem> items;
  seqs.reserve(static_cast<size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    Array x(seq_len, cfg.input_dim);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    seqs.push_back(std::move(x));
  }
  for (int i = 0; i < batch; ++i) {
    items.push_back({&seqs[static_cast<size_t>(i)], i % cfg.num_classes,
                     mix_seed(9, {static_cast<uint64_t>(i)})});
  }

  std::vector<Array> grads_ref = make_gradient_buffers(params);
  std::vector<Array> grads = make_gradient_buffers(params);

  const double t_ref = run_timed("per-sample reference", batch, iters, [&] {
    return batch_gradient_reference(params, cfg, loss_cfg, items, true, grads_ref);
  });
  const double t1 = run_timed("micro-batched, 1 thread", batch, iters, [&] {
    return batch_gradient(params, cfg, loss_cfg, items, true, 1, 128, grads);
  });

  double max_dev = 0.0;
  for (size_t i = 0; i < grads.size(); ++i) {
    for (int j = 0; j < grads[i].size(); ++j) {
      max_dev = std::max(max_dev, std::fabs(grads[i][j] - grads_ref[i][j]));
    }
  }
  std::printf("  max |grad(batched) - grad(reference)| = %.3e\n", max_dev);

  const int max_threads = omp_get_max_threads();
  double t_n = t1;
  if (max_threads > 1) {
    const std::string label = "micro-batched, " + std::to_string(max_threads) + " threads";
    t_n = run_timed(label.c_str(), batch, iters, [&] {
      return batch_gradient(params, cfg, loss_cfg, items, true, max_threads, 128, grads);
    });
  }
  std::printf("speedup vs reference: %.2fx (1 thread), %.2fx (%d threads)\n", t_ref / t1,
              t_ref / t_n, max_threads);
  return 0;
}
