#pragma once

#include <cstdint>
#include <vector>

#include "earlycls/array.hpp"

namespace earlycls {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape
// lives and has not been cleared.
struct Value {
  Tape* tape = nullptr;
  int node = -1;

  bool valid() const { return tape != nullptr && node >= 0; }
  const Array& data() const;
  const Array& grad() const;  // allocates a zero gradient on first access
  double scalar() const { return data().scalar(); }
  int rows() const { return data().rows(); }
  int cols() const { return data().cols(); }
};

// Reverse-mode tape over dense arrays. Records one forward pass; backward()
// walks the nodes in exact reverse order. One tape per forward pass; clear()
// recycles the node storage between passes.
//
// Single-threaded per tape. kernel_threads > 1 only parallelizes the row
// dimension of the heavy kernels (matmul, layer norm); each output row is
// produced by exactly one thread with the same arithmetic as the serial
// path, so results are bitwise identical for any thread count.
class Tape {
 public:
  enum class Op : uint8_t {
    kLeaf,
    kConstant,
    kMatMul,
    kAdd,        // broadcast: right operand may have 1 row
    kSub,
    kMul,
    kMulConst,   // elementwise product with a fixed array (aux)
    kAffine,     // x0 * x + x1, elementwise
    kSigmoid,
    kTanh,
    kLog,
    kClamp,      // clamp to [x0, x1]; gradient passes strictly inside
    kSoftmax,    // row-wise, max-subtracted
    kSumAll,
    kMeanAll,
    kSelect,     // single flat element -> scalar
    kGatherCols, // per-row column pick -> column vector
    kSliceCols,  // column range [i0, i1)
    kLayerNorm,  // inputs: x, gain, offset; x1 = epsilon
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double x0 = 0.0, x1 = 0.0;
    int i0 = 0, i1 = 0;
    Array data;
    Array grad;
    Array aux;               // op-dependent saved state (mask, xhat, ...)
    std::vector<int> idx;    // gather indices
  };

  explicit Tape(int kernel_threads = 1) : kernel_threads_(kernel_threads) {}

  Value leaf(Array data);
  Value constant(Array data);
  Value constant_scalar(double x);

  // Accumulates d(loss)/d(node) into every node's grad. loss must be a
  // scalar on this tape. Repeated calls accumulate until zero_grad().
  void backward(const Value& loss);
  void zero_grad();

  void clear() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }
  void reserve(int n) { nodes_.reserve(static_cast<size_t>(n)); }

  int kernel_threads() const { return kernel_threads_; }
  void set_kernel_threads(int n) { kernel_threads_ = n < 1 ? 1 : n; }

  Node& at(int i) { return nodes_[static_cast<size_t>(i)]; }
  const Node& at(int i) const { return nodes_[static_cast<size_t>(i)]; }

  Value emit(Node n);

 private:
  Array& ensure_grad(int i);
  void backward_node(int i, std::vector<Array>& adjoint);

  std::vector<Node> nodes_;
  int kernel_threads_ = 1;
};

// Recorded operations. Binary elementwise ops require equal shapes, except
// that the right operand may be a single row broadcast across the left
// operand's rows.
Value matmul(const Value& a, const Value& b);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value mul_const(const Value& a, Array mask);
Value affine(const Value& a, double scale, double shift);
Value neg(const Value& a);
Value scale(const Value& a, double s);
Value one_minus(const Value& a);
Value sigmoid(const Value& a);
Value tanh(const Value& a);
Value log(const Value& a);
Value clamp(const Value& a, double lo, double hi);
Value softmax(const Value& a);
Value sum(const Value& a);
Value mean(const Value& a);
Value select(const Value& a, int flat_index);
Value gather_cols(const Value& a, std::vector<int> col_per_row);
Value slice_cols(const Value& a, int col_begin, int col_end);
Value layer_norm(const Value& x, const Value& gain, const Value& offset, double eps = 1e-5);

// Overflow-safe logistic, shared by the tape op and the inference path.
double stable_sigmoid(double x);

}  // namespace earlycls
