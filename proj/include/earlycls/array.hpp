#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace earlycls {

// Dense row-major array of doubles, rank <= 2. Vectors are stored as 1 x n.
// Batching uses the leading (row) dimension.
class Array {
 public:
  Array() = default;
  Array(int rows, int cols);
  Array(int rows, int cols, std::initializer_list<double> values);

  static Array filled(int rows, int cols, double value);
  static Array row(std::initializer_list<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return static_cast<int>(v_.size()); }
  bool empty() const { return v_.empty(); }
  bool same_shape(const Array& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  double& operator()(int r, int c) { return v_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return v_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](int i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return v_[static_cast<size_t>(i)]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row_ptr(int r) { return v_.data() + static_cast<size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return v_.data() + static_cast<size_t>(r) * cols_; }

  std::span<const double> values() const { return {v_.data(), v_.size()}; }
  std::span<double> values() { return {v_.data(), v_.size()}; }

  void fill(double value);
  bool all_finite() const;
  double scalar() const;  // requires size() == 1

  auto begin() { return v_.begin(); }
  auto end() { return v_.end(); }
  auto begin() const { return v_.begin(); }
  auto end() const { return v_.end(); }

  friend bool operator==(const Array& a, const Array& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.v_ == b.v_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

// Throws if the shapes differ; `what` names the operation in the message.
void require_same_shape(const Array& a, const Array& b, const char* what);

// Matmul kernels for row-major operands. `threads` > 1 partitions the output
// rows across OpenMP threads; every row is computed with the same serial
// arithmetic, so the result is bitwise identical for any thread count.
//
// out += a * b for a (m x k), b (k x n), out (m x n).
void matmul_accumulate(const double* a, const double* b, double* out, int m, int k, int n,
                       int threads = 1);
// ga += gout * b^T (gradient w.r.t. the left operand).
void matmul_grad_left(const double* gout, const double* b, double* ga, int m, int k, int n,
                      int threads = 1);
// gb += a^T * gout (gradient w.r.t. the right operand).
void matmul_grad_right(const double* a, const double* gout, double* gb, int m, int k, int n,
                       int threads = 1);

}  // namespace earlycls
