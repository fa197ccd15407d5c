#include "earlycls/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "earlycls/rng.hpp"

namespace earlycls {

namespace {

double eval_plain(const ScalarComputation& f, const std::vector<Array>& params) {
  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(params.size());
  for (const Array& p : params) leaves.push_back(tape.leaf(p));
  return f(tape, leaves).scalar();
}

}  // namespace

std::string GradCheckReport::worst_str() const {
  const GradCheckEntry* worst = nullptr;
  for (const GradCheckEntry& e : entries) {
    if (worst == nullptr || e.rel_error > worst->rel_error) worst = &e;
  }
  if (worst == nullptr) return "no entries";
  return "param " + std::to_string(worst->param) + "[" + std::to_string(worst->element) +
         "]: analytic " + std::to_string(worst->analytic) + " vs numeric " +
         std::to_string(worst->numeric) + " (rel " + std::to_string(worst->rel_error) + ")";
}

GradCheckReport check_gradients(const ScalarComputation& f, std::vector<Array> params,
                                double eps, double tol, int sample_count, uint64_t sample_seed) {
  if (!(eps > 0.0)) {
    throw std::invalid_argument("check_gradients: eps must be positive");
  }

  // analytic gradients from one taped pass
  std::vector<Array> analytic;
  {
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(params.size());
    for (const Array& p : params) leaves.push_back(tape.leaf(p));
    Value loss = f(tape, leaves);
    tape.backward(loss);
    analytic.reserve(params.size());
    for (const Value& leaf : leaves) analytic.push_back(leaf.grad());
  }

  // which (param, element) pairs to probe
  std::vector<std::pair<int, int>> probes;
  int total = 0;
  for (const Array& p : params) total += p.size();
  if (sample_count > 0 && sample_count < total) {
    Rng rng(mix_seed(sample_seed, {0x67726463u}));
    std::vector<int> flat = rng.sample_indices(total, sample_count);
    for (int fidx : flat) {
      int pi = 0;
      while (fidx >= params[static_cast<size_t>(pi)].size()) {
        fidx -= params[static_cast<size_t>(pi)].size();
        ++pi;
      }
      probes.emplace_back(pi, fidx);
    }
  } else {
    for (int pi = 0; pi < static_cast<int>(params.size()); ++pi) {
      for (int j = 0; j < params[static_cast<size_t>(pi)].size(); ++j) probes.emplace_back(pi, j);
    }
  }

  GradCheckReport report;
  report.entries.reserve(probes.size());
  for (auto [pi, j] : probes) {
    Array& p = params[static_cast<size_t>(pi)];
    const double saved = p[j];
    p[j] = saved + eps;
    const double up = eval_plain(f, params);
    p[j] = saved - eps;
    const double down = eval_plain(f, params);
    p[j] = saved;

    GradCheckEntry e;
    e.param = pi;
    e.element = j;
    e.analytic = analytic[static_cast<size_t>(pi)][j];
    e.numeric = (up - down) / (2.0 * eps);
    e.rel_error = std::fabs(e.analytic - e.numeric) /
                  (std::fabs(e.analytic) + std::fabs(e.numeric) + 1e-8);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  report.tolerance = tol;
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace earlycls
