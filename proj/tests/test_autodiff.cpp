#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "earlycls/autodiff.hpp"
#include "earlycls/gradcheck.hpp"
#include "earlycls/rng.hpp"

using namespace earlycls;

namespace {

Array random_array(Rng& rng, int rows, int cols, double lo = -2.0, double hi = 2.0) {
  Array a(rows, cols);
  for (double& x : a) x = rng.uniform(lo, hi);
  return a;
}

}  // namespace

TEST_CASE("matmul forward") {
  Tape tape;
  Value eye = tape.leaf(Array(2, 2, {1, 0, 0, 1}));
  Value m = tape.leaf(Array(2, 2, {1, 2, 3, 4}));
  Value prod = matmul(eye, m);
  CHECK(prod.data() == m.data());

  Value rowvec = tape.leaf(Array(1, 2, {1, 2}));
  Value colvec = tape.leaf(Array(2, 1, {3, 4}));
  CHECK(matmul(rowvec, colvec).scalar() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  Value a = tape.leaf(Array(2, 3));
  Value b = tape.leaf(Array(2, 3));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), std::invalid_argument);
}

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(11);
  const Array a0 = random_array(rng, 3, 4);
  const Array b0 = random_array(rng, 4, 2);
  auto f = [](Tape&, std::span<const Value> p) { return sum(matmul(p[0], p[1])); };
  const auto report = check_gradients(f, {a0, b0}, 1e-5, 1e-6);
  CHECK(report.pass(1e-6));

  // d sum(a*b) / d a = broadcast of b's row sums
  Tape tape;
  Value a = tape.leaf(a0);
  Value b = tape.leaf(b0);
  tape.backward(sum(matmul(a, b)));
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (int j = 0; j < 2; ++j) expect += b0(k, j);
      CHECK(a.grad()(i, k) == doctest::Approx(expect));
    }
  }
}

TEST_CASE("elementwise forward values") {
  Tape tape;
  Value zero = tape.leaf(Array(1, 1));
  CHECK(sigmoid(zero).scalar() == doctest::Approx(0.5));
  CHECK(tanh(zero).scalar() == doctest::Approx(0.0));

  Value x = tape.leaf(Array(1, 3, {1, 2, 3}));
  Value y = tape.leaf(Array(1, 3, {4, 5, 6}));
  CHECK(add(x, y).data() == Array(1, 3, {5, 7, 9}));
  CHECK(sub(y, x).data() == Array(1, 3, {3, 3, 3}));
  CHECK(mul(x, y).data() == Array(1, 3, {4, 10, 18}));
  CHECK(neg(x).data() == Array(1, 3, {-1, -2, -3}));
  CHECK(scale(x, 2.0).data() == Array(1, 3, {2, 4, 6}));
  CHECK(one_minus(x).data() == Array(1, 3, {0, -1, -2}));
}

TEST_CASE("sigmoid derivative at zero is 0.25") {
  auto f = [](Tape&, std::span<const Value> p) { return sum(sigmoid(p[0])); };
  const auto report = check_gradients(f, {Array(1, 1)}, 1e-6, 1e-6);
  CHECK(report.entries[0].analytic == doctest::Approx(0.25));
  CHECK(report.pass(1e-6));
}

TEST_CASE("log rejects non-positive input") {
  Tape tape;
  Value x = tape.leaf(Array(1, 2, {0.5, 0.0}));
  CHECK_THROWS_AS(log(x), std::domain_error);
}

TEST_CASE("binary op shape mismatch is reported") {
  Tape tape;
  Value a = tape.leaf(Array(2, 3));
  Value b = tape.leaf(Array(2, 2));
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("shape mismatch"), std::invalid_argument);
}

TEST_CASE("softmax basics") {
  Tape tape;
  Value uniform = tape.leaf(Array(1, 3));
  for (double x : softmax(uniform).data()) CHECK(x == doctest::Approx(1.0 / 3.0));

  Value extreme = tape.leaf(Array(1, 2, {1000.0, 0.0}));
  const Array& s = softmax(extreme).data();
  CHECK(s.all_finite());
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(0.0));

  // independent high-precision evaluation for [1, 2, 3]
  Value v = tape.leaf(Array(1, 3, {1, 2, 3}));
  const Array& y = softmax(v).data();
  const long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
  const long double z = e1 + e2 + e3;
  CHECK(y[0] == doctest::Approx(static_cast<double>(e1 / z)).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(static_cast<double>(e2 / z)).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(static_cast<double>(e3 / z)).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const int m = 2 + rng.uniform_int(8);
    Array logits = random_array(rng, 1, m, -5.0, 5.0);
    Value s = softmax(tape.leaf(logits));
    double total = 0.0;
    for (double x : s.data()) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

    const double shift = rng.uniform(-3.0, 3.0);
    for (double& x : logits) x += shift;
    Value shifted = softmax(tape.leaf(logits));
    for (int j = 0; j < m; ++j) {
      CHECK(std::fabs(shifted.data()[j] - s.data()[j]) < 1e-6);
    }
  }
}

TEST_CASE("softmax rejects non-finite logits") {
  Tape tape;
  Value bad = tape.leaf(Array(1, 2, {1.0, std::nan("")}));
  CHECK_THROWS_AS(softmax(bad), std::domain_error);
}

TEST_CASE("reduce ops") {
  Tape tape;
  Value v = tape.leaf(Array(1, 2, {2, 4}));
  CHECK(mean(v).scalar() == doctest::Approx(3.0));
  CHECK(sum(v).scalar() == doctest::Approx(6.0));

  Value empty = tape.leaf(Array(0, 0));
  CHECK_THROWS_AS(sum(empty), std::invalid_argument);

  Value w = tape.leaf(Array(1, 4, {1, 2, 3, 4}));
  tape.backward(mean(w));
  for (double g : w.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("backward basics") {
  Tape tape;
  Value w = tape.leaf(Array(2, 2, {1, 2, 3, 4}));

  // constant loss: no gradient reaches w
  Value c = tape.constant_scalar(5.0);
  tape.backward(c);
  for (double g : w.grad()) CHECK(g == 0.0);

  tape.backward(sum(w));
  for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));

  // repeated backward accumulates, zero_grad resets
  tape.backward(sum(w));
  for (double g : w.grad()) CHECK(g == doctest::Approx(2.0));
  tape.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward requires a scalar on this tape") {
  Tape tape;
  Value v = tape.leaf(Array(1, 3));
  CHECK_THROWS_WITH_AS(tape.backward(v), doctest::Contains("scalar"), std::invalid_argument);
  Tape other;
  Value s = other.leaf(Array(1, 1));
  CHECK_THROWS_AS(tape.backward(s), std::invalid_argument);
}

TEST_CASE("fan-out accumulates both consumers") {
  // loss = sum(x*x) + 3*sum(x): d/dx = 2x + 3
  const Array x0(1, 3, {1.0, -2.0, 0.5});
  Tape tape;
  Value x = tape.leaf(x0);
  Value loss = add(sum(mul(x, x)), scale(sum(x), 3.0));
  tape.backward(loss);
  for (int j = 0; j < 3; ++j) {
    CHECK(x.grad()[j] == doctest::Approx(2.0 * x0[j] + 3.0));
  }
}

TEST_CASE("broadcast add/sub/mul over rows") {
  Rng rng(17);
  const Array a0 = random_array(rng, 4, 3);
  const Array b0 = random_array(rng, 1, 3);

  Tape tape;
  Value out = add(tape.leaf(a0), tape.leaf(b0));
  for (int r = 0; r < 4; ++r) {
    for (int j = 0; j < 3; ++j) CHECK(out.data()(r, j) == doctest::Approx(a0(r, j) + b0[j]));
  }

  for (auto build : {+[](Value a, Value b) { return add(a, b); },
                     +[](Value a, Value b) { return sub(a, b); },
                     +[](Value a, Value b) { return mul(a, b); }}) {
    auto f = [build](Tape&, std::span<const Value> p) { return sum(build(p[0], p[1])); };
    CHECK(check_gradients(f, {a0, b0}, 1e-5, 1e-6).pass(1e-6));
  }
}

TEST_CASE("select, gather, slice, clamp gradients") {
  Rng rng(23);
  const Array a0 = random_array(rng, 3, 4);

  auto f_select = [](Tape&, std::span<const Value> p) { return select(p[0], 5); };
  CHECK(check_gradients(f_select, {a0}, 1e-5, 1e-6).pass(1e-6));

  auto f_gather = [](Tape&, std::span<const Value> p) {
    return sum(gather_cols(p[0], {2, 0, 3}));
  };
  CHECK(check_gradients(f_gather, {a0}, 1e-5, 1e-6).pass(1e-6));

  auto f_slice = [](Tape&, std::span<const Value> p) {
    return sum(mul(slice_cols(p[0], 1, 3), slice_cols(p[0], 1, 3)));
  };
  CHECK(check_gradients(f_slice, {a0}, 1e-5, 1e-6).pass(1e-6));

  Tape tape;
  Value clamped = clamp(tape.leaf(Array(1, 3, {-0.5, 0.25, 1.5})), 0.0, 1.0);
  CHECK(clamped.data() == Array(1, 3, {0.0, 0.25, 1.0}));
  tape.backward(sum(clamped));
  Value x = Value{&tape, 0};
  CHECK(x.grad()[0] == 0.0);   // below the range: no gradient
  CHECK(x.grad()[1] == 1.0);   // strictly inside
  CHECK(x.grad()[2] == 0.0);   // above the range
}

TEST_CASE("every primitive op passes a randomized finite-difference check") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Array a0 = random_array(rng, 2, 3);
    const Array b0 = random_array(rng, 2, 3);
    const Array m0 = random_array(rng, 3, 2);
    auto f = [](Tape&, std::span<const Value> p) {
      Value mixed = add(mul(sigmoid(p[0]), tanh(p[1])), scale(sub(p[0], p[1]), 0.7));
      Value prod = matmul(mixed, p[2]);
      Value probs = softmax(prod);
      Value logs = log(clamp(probs, 1e-8, 1.0));
      return add(mean(logs), sum(mul(prod, prod)));
    };
    const auto report = check_gradients(f, {a0, b0, m0}, 1e-4, 1e-3);
    CHECK_MESSAGE(report.pass(1e-3), report.worst_str());
  }
}

TEST_CASE("check_gradients on analytic cases") {
  // quadratic: f(w) = w^2 at w = 3
  auto quad = [](Tape&, std::span<const Value> p) { return mul(p[0], p[0]); };
  Array w(1, 1);
  w[0] = 3.0;
  const auto report = check_gradients(quad, {w}, 1e-6, 1e-6);
  CHECK(report.entries[0].analytic == doctest::Approx(6.0));
  CHECK(report.pass(1e-6));

  // zero function: both gradients vanish, error defined as 0
  auto zero_fn = [](Tape& t, std::span<const Value> p) {
    return mul(t.constant_scalar(0.0), sum(p[0]));
  };
  const auto zreport = check_gradients(zero_fn, {Array(2, 2)}, 1e-5, 1e-6);
  CHECK(zreport.max_rel_error == 0.0);

  CHECK_THROWS_AS(check_gradients(quad, {w}, 0.0, 1e-6), std::invalid_argument);
}

TEST_CASE("gradients of constants are not tracked") {
  Tape tape;
  Value c = tape.constant(Array(1, 2, {1.0, 2.0}));
  Value x = tape.leaf(Array(1, 2, {3.0, 4.0}));
  tape.backward(sum(mul(c, x)));
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}
