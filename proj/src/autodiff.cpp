#include "earlycls/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace earlycls {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void check_same_tape(const Value& a, const Value& b, const char* what) {
  if (a.tape != b.tape) {
    throw std::invalid_argument(std::string(what) + ": operands recorded on different tapes");
  }
}

void check_valid(const Value& v, const char* what) {
  if (!v.valid()) {
    throw std::invalid_argument(std::string(what) + ": invalid value handle");
  }
}

// Binary elementwise shapes: equal, or right operand a single row broadcast
// across the left operand's rows.
bool broadcast_row(const Array& a, const Array& b) {
  return b.rows() == 1 && a.rows() > 1 && a.cols() == b.cols();
}

void check_binary_shapes(const Array& a, const Array& b, const char* what) {
  if (!a.same_shape(b) && !broadcast_row(a, b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

}  // namespace

const Array& Value::data() const { return tape->at(node).data; }

const Array& Value::grad() const {
  Tape::Node& n = tape->at(node);
  if (n.grad.empty() && !n.data.empty()) {
    n.grad = Array(n.data.rows(), n.data.cols());
  }
  return n.grad;
}

Value Tape::emit(Node n) {
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::leaf(Array data) {
  Node n;
  n.op = Op::kLeaf;
  n.data = std::move(data);
  return emit(std::move(n));
}

Value Tape::constant(Array data) {
  Node n;
  n.op = Op::kConstant;
  n.data = std::move(data);
  return emit(std::move(n));
}

Value Tape::constant_scalar(double x) {
  Array a(1, 1);
  a[0] = x;
  return constant(std::move(a));
}

Array& Tape::ensure_grad(int i) {
  Node& n = nodes_[static_cast<size_t>(i)];
  if (n.grad.empty()) {
    n.grad = Array(n.data.rows(), n.data.cols());
  }
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.grad.empty()) {
      n.grad = Array(n.data.rows(), n.data.cols());
    } else {
      n.grad.fill(0.0);
    }
  }
}

void Tape::backward(const Value& loss) {
  if (loss.tape != this || loss.node < 0 || loss.node >= size()) {
    throw std::invalid_argument("backward: loss does not belong to this tape");
  }
  if (nodes_[static_cast<size_t>(loss.node)].data.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                nodes_[static_cast<size_t>(loss.node)].data.shape_str());
  }
  // Adjoints live in scratch storage for this call and are folded into each
  // node's persistent grad right after the node is processed, so repeated
  // backward calls accumulate instead of re-propagating stale gradients.
  std::vector<Array> adjoint(static_cast<size_t>(loss.node) + 1);
  adjoint[static_cast<size_t>(loss.node)] = Array(1, 1);
  adjoint[static_cast<size_t>(loss.node)][0] = 1.0;
  for (int i = loss.node; i >= 0; --i) {
    Array& adj = adjoint[static_cast<size_t>(i)];
    if (adj.empty()) continue;
    backward_node(i, adjoint);
    Array& grad = ensure_grad(i);
    for (int j = 0; j < grad.size(); ++j) grad[j] += adj[j];
    adj = Array();  // release scratch early
  }
}

void Tape::backward_node(int i, std::vector<Array>& adjoint) {
  Node& n = nodes_[static_cast<size_t>(i)];
  const Array& g = adjoint[static_cast<size_t>(i)];
  const int kt = kernel_threads_;

  auto grad_of = [this, &adjoint](int input) -> Array* {
    if (input < 0) return nullptr;
    Node& in = nodes_[static_cast<size_t>(input)];
    if (in.op == Op::kConstant) return nullptr;  // constants never need gradients
    Array& adj = adjoint[static_cast<size_t>(input)];
    if (adj.empty()) adj = Array(in.data.rows(), in.data.cols());
    return &adj;
  };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      break;

    case Op::kMatMul: {
      const Array& a = nodes_[static_cast<size_t>(n.a)].data;
      const Array& b = nodes_[static_cast<size_t>(n.b)].data;
      if (Array* ga = grad_of(n.a)) {
        matmul_grad_left(g.data(), b.data(), ga->data(), a.rows(), a.cols(), b.cols(), kt);
      }
      if (Array* gb = grad_of(n.b)) {
        matmul_grad_right(a.data(), g.data(), gb->data(), a.rows(), a.cols(), b.cols(), kt);
      }
      break;
    }

    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kSub ? -1.0 : 1.0;
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) (*ga)[j] += g[j];
      }
      if (Array* gb = grad_of(n.b)) {
        if (gb->rows() == g.rows()) {
          for (int j = 0; j < g.size(); ++j) (*gb)[j] += sign * g[j];
        } else {  // broadcast row: reduce over rows
          const int c = g.cols();
          for (int r = 0; r < g.rows(); ++r) {
            const double* grow = g.row_ptr(r);
            for (int j = 0; j < c; ++j) (*gb)[j] += sign * grow[j];
          }
        }
      }
      break;
    }

    case Op::kMul: {
      const Array& a = nodes_[static_cast<size_t>(n.a)].data;
      const Array& b = nodes_[static_cast<size_t>(n.b)].data;
      const bool bc = broadcast_row(a, b);
      if (Array* ga = grad_of(n.a)) {
        if (!bc) {
          for (int j = 0; j < g.size(); ++j) (*ga)[j] += g[j] * b[j];
        } else {
          const int c = g.cols();
          for (int r = 0; r < g.rows(); ++r) {
            const double* grow = g.row_ptr(r);
            double* garow = ga->row_ptr(r);
            for (int j = 0; j < c; ++j) garow[j] += grow[j] * b[j];
          }
        }
      }
      if (Array* gb = grad_of(n.b)) {
        if (!bc) {
          for (int j = 0; j < g.size(); ++j) (*gb)[j] += g[j] * a[j];
        } else {
          const int c = g.cols();
          for (int r = 0; r < g.rows(); ++r) {
            const double* grow = g.row_ptr(r);
            const double* arow = a.row_ptr(r);
            for (int j = 0; j < c; ++j) (*gb)[j] += grow[j] * arow[j];
          }
        }
      }
      break;
    }

    case Op::kMulConst: {
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) (*ga)[j] += g[j] * n.aux[j];
      }
      break;
    }

    case Op::kAffine: {
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) (*ga)[j] += n.x0 * g[j];
      }
      break;
    }

    case Op::kSigmoid: {
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) {
          const double y = n.data[j];
          (*ga)[j] += g[j] * y * (1.0 - y);
        }
      }
      break;
    }

    case Op::kTanh: {
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) {
          const double y = n.data[j];
          (*ga)[j] += g[j] * (1.0 - y * y);
        }
      }
      break;
    }

    case Op::kLog: {
      const Array& x = nodes_[static_cast<size_t>(n.a)].data;
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) (*ga)[j] += g[j] / x[j];
      }
      break;
    }

    case Op::kClamp: {
      const Array& x = nodes_[static_cast<size_t>(n.a)].data;
      if (Array* ga = grad_of(n.a)) {
        for (int j = 0; j < g.size(); ++j) {
          if (x[j] > n.x0 && x[j] < n.x1) (*ga)[j] += g[j];
        }
      }
      break;
    }

    case Op::kSoftmax: {
      if (Array* ga = grad_of(n.a)) {
        const int c = n.data.cols();
        for (int r = 0; r < n.data.rows(); ++r) {
          const double* y = n.data.row_ptr(r);
          const double* grow = g.row_ptr(r);
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += grow[j] * y[j];
          double* garow = ga->row_ptr(r);
          for (int j = 0; j < c; ++j) garow[j] += y[j] * (grow[j] - dot);
        }
      }
      break;
    }

    case Op::kSumAll: {
      if (Array* ga = grad_of(n.a)) {
        const double gs = g[0];
        for (int j = 0; j < ga->size(); ++j) (*ga)[j] += gs;
      }
      break;
    }

    case Op::kMeanAll: {
      if (Array* ga = grad_of(n.a)) {
        const double gs = g[0] / static_cast<double>(ga->size());
        for (int j = 0; j < ga->size(); ++j) (*ga)[j] += gs;
      }
      break;
    }

    case Op::kSelect: {
      if (Array* ga = grad_of(n.a)) {
        (*ga)[n.i0] += g[0];
      }
      break;
    }

    case Op::kGatherCols: {
      if (Array* ga = grad_of(n.a)) {
        for (int r = 0; r < static_cast<int>(n.idx.size()); ++r) {
          (*ga)(r, n.idx[static_cast<size_t>(r)]) += g[r];
        }
      }
      break;
    }

    case Op::kSliceCols: {
      if (Array* ga = grad_of(n.a)) {
        const int w = n.i1 - n.i0;
        for (int r = 0; r < g.rows(); ++r) {
          const double* grow = g.row_ptr(r);
          double* garow = ga->row_ptr(r) + n.i0;
          for (int j = 0; j < w; ++j) garow[j] += grow[j];
        }
      }
      break;
    }

    case Op::kLayerNorm: {
      // aux row r: xhat[0..H) then inv_std at [H].
      const Array& gain = nodes_[static_cast<size_t>(n.b)].data;
      const int rows = n.data.rows();
      const int h = n.data.cols();
      Array* gx = grad_of(n.a);
      Array* ggain = grad_of(n.b);
      Array* goffset = grad_of(n.c);
      for (int r = 0; r < rows; ++r) {
        const double* grow = g.row_ptr(r);
        const double* xhat = n.aux.row_ptr(r);
        const double inv_std = xhat[h];
        if (ggain) {
          for (int j = 0; j < h; ++j) (*ggain)[j] += grow[j] * xhat[j];
        }
        if (goffset) {
          for (int j = 0; j < h; ++j) (*goffset)[j] += grow[j];
        }
        if (gx) {
          double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
          for (int j = 0; j < h; ++j) {
            const double dxh = gain[j] * grow[j];
            mean_dxh += dxh;
            mean_dxh_xhat += dxh * xhat[j];
          }
          mean_dxh /= h;
          mean_dxh_xhat /= h;
          double* gxrow = gx->row_ptr(r);
          for (int j = 0; j < h; ++j) {
            const double dxh = gain[j] * grow[j];
            gxrow[j] += inv_std * (dxh - mean_dxh - xhat[j] * mean_dxh_xhat);
          }
        }
      }
      break;
    }
  }
}

Value matmul(const Value& a, const Value& b) {
  check_valid(a, "matmul");
  check_valid(b, "matmul");
  check_same_tape(a, b, "matmul");
  const Array& ad = a.data();
  const Array& bd = b.data();
  if (ad.cols() != bd.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + ad.shape_str() + " * " +
                                bd.shape_str());
  }
  Tape::Node n;
  n.op = Tape::Op::kMatMul;
  n.a = a.node;
  n.b = b.node;
  n.data = Array(ad.rows(), bd.cols());
  matmul_accumulate(ad.data(), bd.data(), n.data.data(), ad.rows(), ad.cols(), bd.cols(),
                    a.tape->kernel_threads());
  return a.tape->emit(std::move(n));
}

namespace {

Value binary_elementwise(const Value& a, const Value& b, Tape::Op op, const char* what) {
  check_valid(a, what);
  check_valid(b, what);
  check_same_tape(a, b, what);
  const Array& ad = a.data();
  const Array& bd = b.data();
  check_binary_shapes(ad, bd, what);
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.b = b.node;
  n.data = Array(ad.rows(), ad.cols());
  const bool bc = broadcast_row(ad, bd);
  const int cols = ad.cols();
  for (int r = 0; r < ad.rows(); ++r) {
    const double* arow = ad.row_ptr(r);
    const double* brow = bc ? bd.data() : bd.row_ptr(r);
    double* orow = n.data.row_ptr(r);
    switch (op) {
      case Tape::Op::kAdd:
        for (int j = 0; j < cols; ++j) orow[j] = arow[j] + brow[j];
        break;
      case Tape::Op::kSub:
        for (int j = 0; j < cols; ++j) orow[j] = arow[j] - brow[j];
        break;
      case Tape::Op::kMul:
        for (int j = 0; j < cols; ++j) orow[j] = arow[j] * brow[j];
        break;
      default:
        throw std::logic_error("binary_elementwise: unexpected op");
    }
  }
  return a.tape->emit(std::move(n));
}

Value unary(const Value& a, Tape::Op op, const char* what,
            double x0 = 0.0, double x1 = 0.0) {
  check_valid(a, what);
  const Array& ad = a.data();
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.x0 = x0;
  n.x1 = x1;
  n.data = Array(ad.rows(), ad.cols());
  for (int j = 0; j < ad.size(); ++j) {
    const double x = ad[j];
    switch (op) {
      case Tape::Op::kAffine:
        n.data[j] = x0 * x + x1;
        break;
      case Tape::Op::kSigmoid:
        n.data[j] = stable_sigmoid(x);
        break;
      case Tape::Op::kTanh:
        n.data[j] = std::tanh(x);
        break;
      case Tape::Op::kLog:
        if (x <= 0.0) {
          throw std::domain_error("log: non-positive entry " + std::to_string(x) +
                                  " (clamp probabilities first)");
        }
        n.data[j] = std::log(x);
        break;
      case Tape::Op::kClamp:
        n.data[j] = x < x0 ? x0 : (x > x1 ? x1 : x);
        break;
      default:
        throw std::logic_error("unary: unexpected op");
    }
  }
  return a.tape->emit(std::move(n));
}

}  // namespace

Value add(const Value& a, const Value& b) { return binary_elementwise(a, b, Tape::Op::kAdd, "add"); }
Value sub(const Value& a, const Value& b) { return binary_elementwise(a, b, Tape::Op::kSub, "sub"); }
Value mul(const Value& a, const Value& b) { return binary_elementwise(a, b, Tape::Op::kMul, "mul"); }

Value mul_const(const Value& a, Array mask) {
  check_valid(a, "mul_const");
  require_same_shape(a.data(), mask, "mul_const");
  Tape::Node n;
  n.op = Tape::Op::kMulConst;
  n.a = a.node;
  n.data = Array(mask.rows(), mask.cols());
  const Array& ad = a.data();
  for (int j = 0; j < ad.size(); ++j) n.data[j] = ad[j] * mask[j];
  n.aux = std::move(mask);
  return a.tape->emit(std::move(n));
}

Value affine(const Value& a, double scale, double shift) {
  return unary(a, Tape::Op::kAffine, "affine", scale, shift);
}
Value neg(const Value& a) { return affine(a, -1.0, 0.0); }
Value scale(const Value& a, double s) { return affine(a, s, 0.0); }
Value one_minus(const Value& a) { return affine(a, -1.0, 1.0); }
Value sigmoid(const Value& a) { return unary(a, Tape::Op::kSigmoid, "sigmoid"); }
Value tanh(const Value& a) { return unary(a, Tape::Op::kTanh, "tanh"); }
Value log(const Value& a) { return unary(a, Tape::Op::kLog, "log"); }

Value clamp(const Value& a, double lo, double hi) {
  if (!(lo < hi)) {
    throw std::invalid_argument("clamp: empty range");
  }
  return unary(a, Tape::Op::kClamp, "clamp", lo, hi);
}

Value softmax(const Value& a) {
  check_valid(a, "softmax");
  const Array& ad = a.data();
  if (!ad.all_finite()) {
    throw std::domain_error("softmax: non-finite logits");
  }
  Tape::Node n;
  n.op = Tape::Op::kSoftmax;
  n.a = a.node;
  n.data = Array(ad.rows(), ad.cols());
  const int c = ad.cols();
  for (int r = 0; r < ad.rows(); ++r) {
    const double* x = ad.row_ptr(r);
    double* y = n.data.row_ptr(r);
    double hi = x[0];
    for (int j = 1; j < c; ++j) hi = std::max(hi, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - hi);
      z += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= z;
  }
  return a.tape->emit(std::move(n));
}

namespace {

Value reduce_all(const Value& a, Tape::Op op, const char* what) {
  check_valid(a, what);
  const Array& ad = a.data();
  if (ad.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty input");
  }
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.data = Array(1, 1);
  double acc = 0.0;
  for (int j = 0; j < ad.size(); ++j) acc += ad[j];
  n.data[0] = op == Tape::Op::kMeanAll ? acc / ad.size() : acc;
  return a.tape->emit(std::move(n));
}

}  // namespace

Value sum(const Value& a) { return reduce_all(a, Tape::Op::kSumAll, "sum"); }
Value mean(const Value& a) { return reduce_all(a, Tape::Op::kMeanAll, "mean"); }

Value select(const Value& a, int flat_index) {
  check_valid(a, "select");
  const Array& ad = a.data();
  if (flat_index < 0 || flat_index >= ad.size()) {
    throw std::out_of_range("select: index " + std::to_string(flat_index) + " out of range for " +
                            ad.shape_str());
  }
  Tape::Node n;
  n.op = Tape::Op::kSelect;
  n.a = a.node;
  n.i0 = flat_index;
  n.data = Array(1, 1);
  n.data[0] = ad[flat_index];
  return a.tape->emit(std::move(n));
}

Value gather_cols(const Value& a, std::vector<int> col_per_row) {
  check_valid(a, "gather_cols");
  const Array& ad = a.data();
  if (static_cast<int>(col_per_row.size()) != ad.rows()) {
    throw std::invalid_argument("gather_cols: need one index per row, got " +
                                std::to_string(col_per_row.size()) + " for " + ad.shape_str());
  }
  Tape::Node n;
  n.op = Tape::Op::kGatherCols;
  n.a = a.node;
  n.data = Array(ad.rows(), 1);
  for (int r = 0; r < ad.rows(); ++r) {
    const int c = col_per_row[static_cast<size_t>(r)];
    if (c < 0 || c >= ad.cols()) {
      throw std::out_of_range("gather_cols: column " + std::to_string(c) + " out of range for " +
                              ad.shape_str());
    }
    n.data[r] = ad(r, c);
  }
  n.idx = std::move(col_per_row);
  return a.tape->emit(std::move(n));
}

Value slice_cols(const Value& a, int col_begin, int col_end) {
  check_valid(a, "slice_cols");
  const Array& ad = a.data();
  if (col_begin < 0 || col_end > ad.cols() || col_begin >= col_end) {
    throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(col_begin) + ", " +
                                std::to_string(col_end) + ") for " + ad.shape_str());
  }
  Tape::Node n;
  n.op = Tape::Op::kSliceCols;
  n.a = a.node;
  n.i0 = col_begin;
  n.i1 = col_end;
  n.data = Array(ad.rows(), col_end - col_begin);
  for (int r = 0; r < ad.rows(); ++r) {
    const double* arow = ad.row_ptr(r) + col_begin;
    double* orow = n.data.row_ptr(r);
    for (int j = 0; j < col_end - col_begin; ++j) orow[j] = arow[j];
  }
  return a.tape->emit(std::move(n));
}

Value layer_norm(const Value& x, const Value& gain, const Value& offset, double eps) {
  check_valid(x, "layer_norm");
  check_valid(gain, "layer_norm");
  check_valid(offset, "layer_norm");
  check_same_tape(x, gain, "layer_norm");
  check_same_tape(x, offset, "layer_norm");
  const Array& xd = x.data();
  const Array& gd = gain.data();
  const Array& od = offset.data();
  const int h = xd.cols();
  if (gd.rows() != 1 || gd.cols() != h || od.rows() != 1 || od.cols() != h) {
    throw std::invalid_argument("layer_norm: gain/offset must be 1x" + std::to_string(h) +
                                ", got " + gd.shape_str() + " and " + od.shape_str());
  }
  Tape::Node n;
  n.op = Tape::Op::kLayerNorm;
  n.a = x.node;
  n.b = gain.node;
  n.c = offset.node;
  n.x1 = eps;
  n.data = Array(xd.rows(), h);
  n.aux = Array(xd.rows(), h + 1);
  const int kt = x.tape->kernel_threads();
#pragma omp parallel for num_threads(kt) schedule(static) if (kt > 1 && xd.rows() >= 16)
  for (int r = 0; r < xd.rows(); ++r) {
    const double* xrow = xd.row_ptr(r);
    double mean = 0.0;
    for (int j = 0; j < h; ++j) mean += xrow[j];
    mean /= h;
    double var = 0.0;
    for (int j = 0; j < h; ++j) {
      const double d = xrow[j] - mean;
      var += d * d;
    }
    var /= h;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    double* xhat = n.aux.row_ptr(r);
    double* orow = n.data.row_ptr(r);
    for (int j = 0; j < h; ++j) {
      xhat[j] = (xrow[j] - mean) * inv_std;
      orow[j] = gd[j] * xhat[j] + od[j];
    }
    xhat[h] = inv_std;
  }
  return x.tape->emit(std::move(n));
}

}  // namespace earlycls
