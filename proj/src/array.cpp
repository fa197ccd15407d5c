#include "earlycls/array.hpp"

#include <cmath>
#include <stdexcept>

namespace earlycls {

Array::Array(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) {
    throw std::invalid_argument("Array: negative dimension " + shape_str());
  }
  v_.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
}

Array::Array(int rows, int cols, std::initializer_list<double> values) : Array(rows, cols) {
  if (static_cast<size_t>(size()) != values.size()) {
    throw std::invalid_argument("Array: initializer size " + std::to_string(values.size()) +
                                " does not match shape " + shape_str());
  }
  size_t i = 0;
  for (double x : values) v_[i++] = x;
}

Array Array::filled(int rows, int cols, double value) {
  Array a(rows, cols);
  a.fill(value);
  return a;
}

Array Array::row(std::initializer_list<double> values) {
  Array a(1, static_cast<int>(values.size()));
  size_t i = 0;
  for (double x : values) a.v_[i++] = x;
  return a;
}

std::string Array::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Array::fill(double value) {
  for (double& x : v_) x = value;
}

bool Array::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Array::scalar() const {
  if (size() != 1) {
    throw std::invalid_argument("Array::scalar called on non-scalar " + shape_str());
  }
  return v_[0];
}

void require_same_shape(const Array& a, const Array& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

void matmul_accumulate(const double* a, const double* b, double* out, int m, int k, int n,
                       int threads) {
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && m >= 16)
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* orow = out + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double al = arow[l];
      const double* brow = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) orow[j] += al * brow[j];
    }
  }
}

void matmul_grad_left(const double* gout, const double* b, double* ga, int m, int k, int n,
                      int threads) {
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && m >= 16)
  for (int i = 0; i < m; ++i) {
    const double* grow = gout + static_cast<size_t>(i) * n;
    double* garow = ga + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double* brow = b + static_cast<size_t>(l) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      garow[l] += acc;
    }
  }
}

void matmul_grad_right(const double* a, const double* gout, double* gb, int m, int k, int n,
                       int threads) {
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && k >= 8 && m >= 16)
  for (int l = 0; l < k; ++l) {
    double* gbrow = gb + static_cast<size_t>(l) * n;
    for (int i = 0; i < m; ++i) {
      const double al = a[static_cast<size_t>(i) * k + l];
      const double* grow = gout + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) gbrow[j] += al * grow[j];
    }
  }
}

}  // namespace earlycls
