#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "earlycls/autodiff.hpp"

namespace earlycls {

struct GradCheckEntry {
  int param = 0;       // index into the parameter list
  int element = 0;     // flat index within that parameter
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;  // max_rel_error < tolerance

  bool pass(double tol) const { return max_rel_error < tol; }
  std::string worst_str() const;
};

// Builds a scalar loss from leaves bound to the given parameter arrays.
using ScalarComputation = std::function<Value(Tape&, std::span<const Value> params)>;

// Compares tape gradients against central finite differences. When
// sample_count > 0, checks that many randomly chosen parameter elements
// (seeded); otherwise checks every element. Relative error uses
// |a - n| / (|a| + |n| + 1e-8), which is 0 when both gradients vanish.
GradCheckReport check_gradients(const ScalarComputation& f, std::vector<Array> params,
                                double eps, double tol, int sample_count = 0,
                                uint64_t sample_seed = 0);

}  // namespace earlycls
