#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "apa/autodiff.hpp"
#include "apa/rng.hpp"
#include "support/testutil.hpp"

using namespace apa;
using apa::ad::Tape;
using apa::ad::Var;

namespace {

// Builds a scalar from `op` applied to a leaf, checks the leaf gradient
// against central finite differences at several coordinates.
void check_input_grad(const std::function<Var(Tape&, Var)>& op,
                      const Tensor& x0, double tol = 1e-7, int checks = 12) {
  auto f = [&](const Tensor& x) {
    Tape t;
    Var in = t.leaf(x, false);
    Var out = op(t, in);
    // reduce to scalar deterministically: weighted sum with fixed weights
    const Tensor& v = t.value(out);
    double acc = 0.0;
    for (int64_t i = 0; i < v.numel(); ++i)
      acc += v[i] * std::sin(0.3 * static_cast<double>(i) + 0.7);
    return acc;
  };
  Tape t;
  Var in = t.leaf(x0, true);
  Var out = op(t, in);
  // same weighted reduction on-tape
  const Tensor& v = t.value(out);
  Tensor w(v.shape());
  for (int64_t i = 0; i < w.numel(); ++i)
    w[i] = std::sin(0.3 * static_cast<double>(i) + 0.7);
  Var wv = t.constant(w);
  Var scalar = ad::sum(t, ad::mul(t, out, wv));
  t.backward(scalar);
  Tensor g = t.grad(in);
  Rng rng(99);
  double err = testutil::max_grad_rel_err(f, x0, g, rng, checks);
  CHECK(err < tol);
}

}  // namespace

TEST_CASE("add/sub/mul/lincomb values and grads") {
  Rng rng(1);
  Tensor a = rng.normal_tensor({2, 3, 3});
  Tensor b = rng.normal_tensor({2, 3, 3});
  Tape t;
  Var va = t.leaf(a, true);
  Var vb = t.leaf(b, true);
  Var s = ad::sum(t, ad::mul(t, ad::add(t, va, vb), ad::sub(t, va, vb)));
  // s = sum(a^2 - b^2), ds/da = 2a, ds/db = -2b
  t.backward(s);
  Tensor ga = t.grad(va), gb = t.grad(vb);
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(ga[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-12));
    CHECK(gb[i] == doctest::Approx(-2.0 * b[i]).epsilon(1e-12));
  }

  Tape t2;
  Var x = t2.leaf(a, true);
  Var y = t2.leaf(b, false);
  Var lc = ad::lincomb(t2, 0.25, x, -1.5, y);
  const Tensor& lv = t2.value(lc);
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(lv[i] == doctest::Approx(0.25 * a[i] - 1.5 * b[i]));
}

TEST_CASE("silu gradient vs finite differences") {
  Rng rng(2);
  check_input_grad([](Tape& t, Var x) { return ad::silu(t, x); },
                   rng.normal_tensor({4, 5}));
}

TEST_CASE("reductions: sum, mean, sum_squares, l2_norm") {
  Rng rng(3);
  Tensor x0 = rng.normal_tensor({3, 4});
  auto run = [&](const std::function<Var(Tape&, Var)>& red,
                 const std::function<double(const Tensor&)>& want_fn,
                 const std::function<double(const Tensor&, int64_t)>& dwant_fn) {
    Tape t;
    Var in = t.leaf(x0, true);
    Var out = red(t, in);
    CHECK(t.value(out)[0] == doctest::Approx(want_fn(x0)).epsilon(1e-12));
    t.backward(out);
    Tensor g = t.grad(in);
    for (int64_t i = 0; i < x0.numel(); ++i)
      CHECK(g[i] == doctest::Approx(dwant_fn(x0, i)).epsilon(1e-10));
  };
  run([](Tape& t, Var x) { return ad::sum(t, x); },
      [](const Tensor& x) { return x.sum(); },
      [](const Tensor&, int64_t) { return 1.0; });
  run([](Tape& t, Var x) { return ad::mean(t, x); },
      [](const Tensor& x) { return x.sum() / x.numel(); },
      [](const Tensor& x, int64_t) { return 1.0 / x.numel(); });
  run([](Tape& t, Var x) { return ad::sum_squares(t, x); },
      [](const Tensor& x) {
        double s = 0;
        for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * x[i];
        return s;
      },
      [](const Tensor& x, int64_t i) { return 2.0 * x[i]; });
  run([](Tape& t, Var x) { return ad::l2_norm(t, x); },
      [](const Tensor& x) { return x.l2_norm(); },
      [](const Tensor& x, int64_t i) { return x[i] / x.l2_norm(); });
}

TEST_CASE("conv2d gradient vs finite differences (stride 1 and 2)") {
  Rng rng(4);
  Tensor x = rng.normal_tensor({2, 6, 6});
  Tensor w = rng.normal_tensor({3, 2, 3, 3});
  Tensor b = rng.normal_tensor({3});

  for (int stride : {1, 2}) {
    // grad w.r.t. input
    check_input_grad(
        [&](Tape& t, Var in) {
          return ad::conv2d(t, in, t.constant(w), t.constant(b), stride, 1);
        },
        x, 1e-6);
    // grad w.r.t. weights
    auto fw = [&](const Tensor& wt) {
      Tape t;
      Var out = ad::conv2d(t, t.constant(x), t.leaf(wt, false),
                           t.constant(b), stride, 1);
      return t.value(ad::sum_squares(t, out))[0];
    };
    Tape t;
    Var vw = t.leaf(w, true);
    Var vb = t.leaf(b, true);
    Var out = ad::conv2d(t, t.constant(x), vw, vb, stride, 1);
    Var loss = ad::sum_squares(t, out);
    t.backward(loss);
    Rng r2(5);
    CHECK(testutil::max_grad_rel_err(fw, w, t.grad(vw), r2, 10) < 1e-6);
    auto fb = [&](const Tensor& bt) {
      Tape t2;
      Var o = ad::conv2d(t2, t2.constant(x), t2.constant(w),
                         t2.leaf(bt, false), stride, 1);
      return t2.value(ad::sum_squares(t2, o))[0];
    };
    CHECK(testutil::max_grad_rel_err(fb, b, t.grad(vb), r2, 3) < 1e-6);
  }
}

TEST_CASE("linear and matmul gradients") {
  Rng rng(6);
  Tensor x = rng.normal_tensor({5});
  Tensor w = rng.normal_tensor({4, 5});
  Tensor b = rng.normal_tensor({4});
  auto f = [&](const Tensor& xt) {
    Tape t;
    Var o = ad::linear(t, t.leaf(xt, false), t.constant(w), t.constant(b));
    return t.value(ad::sum_squares(t, o))[0];
  };
  Tape t;
  Var vx = t.leaf(x, true), vw = t.leaf(w, true);
  Var o = ad::linear(t, vx, vw, t.constant(b));
  t.backward(ad::sum_squares(t, o));
  Rng r2(7);
  CHECK(testutil::max_grad_rel_err(f, x, t.grad(vx), r2, 5) < 1e-6);
  auto fw = [&](const Tensor& wt) {
    Tape t2;
    Var o2 = ad::linear(t2, t2.constant(x), t2.leaf(wt, false), t2.constant(b));
    return t2.value(ad::sum_squares(t2, o2))[0];
  };
  CHECK(testutil::max_grad_rel_err(fw, w, t.grad(vw), r2, 10) < 1e-6);

  Tensor A = rng.normal_tensor({3, 4});
  Tensor B = rng.normal_tensor({4, 2});
  auto fa = [&](const Tensor& at) {
    Tape t2;
    Var o2 = ad::matmul(t2, t2.leaf(at, false), t2.constant(B));
    return t2.value(ad::sum_squares(t2, o2))[0];
  };
  Tape t3;
  Var va = t3.leaf(A, true), vb3 = t3.leaf(B, true);
  Var mm = ad::matmul(t3, va, vb3);
  t3.backward(ad::sum_squares(t3, mm));
  CHECK(testutil::max_grad_rel_err(fa, A, t3.grad(va), r2, 8) < 1e-6);
  auto fbm = [&](const Tensor& bt) {
    Tape t2;
    Var o2 = ad::matmul(t2, t2.constant(A), t2.leaf(bt, false));
    return t2.value(ad::sum_squares(t2, o2))[0];
  };
  CHECK(testutil::max_grad_rel_err(fbm, B, t3.grad(vb3), r2, 8) < 1e-6);
}

TEST_CASE("spatial ops gradients: upsample, avg_pool, pad, resize, patchify") {
  Rng rng(8);
  Tensor x = rng.normal_tensor({2, 8, 8});
  check_input_grad([](Tape& t, Var v) { return ad::upsample2x(t, v); }, x);
  check_input_grad([](Tape& t, Var v) { return ad::avg_pool2(t, v); }, x);
  check_input_grad([](Tape& t, Var v) { return ad::global_avg_pool(t, v); }, x);
  check_input_grad([](Tape& t, Var v) { return ad::pad2d_zero(t, v, 3); }, x);
  check_input_grad(
      [](Tape& t, Var v) { return ad::bilinear_resize(t, v, 5, 11); }, x);
  check_input_grad([](Tape& t, Var v) { return ad::patchify(t, v, 4); }, x);
  check_input_grad(
      [](Tape& t, Var v) { return ad::add_channel_bias(t, v, t.constant(Tensor({2}, {0.3, -1.2}))); },
      x);
  check_input_grad(
      [](Tape& t, Var v) { return ad::concat_ch(t, v, t.constant(Tensor::full({1, 8, 8}, 0.5))); },
      x);
}

TEST_CASE("softmax rows and cross entropy") {
  Tape t;
  Var logits = t.leaf(Tensor({4}, {0.0, 0.0, 0.0, 0.0}), true);
  Var loss = ad::softmax_cross_entropy(t, logits, 2);
  CHECK(t.value(loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  t.backward(loss);
  Tensor g = t.grad(logits);
  CHECK(g[2] == doctest::Approx(0.25 - 1.0));
  CHECK(g[0] == doctest::Approx(0.25));

  Rng rng(9);
  Tensor lg = rng.normal_tensor({6});
  auto f = [&](const Tensor& l) {
    Tape t2;
    return t2.value(ad::softmax_cross_entropy(t2, t2.leaf(l, false), 1))[0];
  };
  Tape t3;
  Var v = t3.leaf(lg, true);
  t3.backward(ad::softmax_cross_entropy(t3, v, 1));
  Rng r2(10);
  CHECK(testutil::max_grad_rel_err(f, lg, t3.grad(v), r2, 6) < 1e-6);

  check_input_grad([](Tape& t2, Var v2) { return ad::softmax_rows(t2, v2); },
                   rng.normal_tensor({3, 5}), 1e-6);
  CHECK_THROWS_AS(ad::softmax_cross_entropy(t3, v, 9), std::invalid_argument);
}

TEST_CASE("gradient accumulates across reuse of a node") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0), true);
  Var y = ad::mul(t, x, x);  // x^2, both parents are the same node
  t.backward(ad::sum(t, y));
  CHECK(t.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires scalar output") {
  Tape t;
  Var x = t.leaf(Tensor({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("mean_scalars averages and distributes gradient") {
  Tape t;
  Var a = t.leaf(Tensor::scalar(2.0), true);
  Var b = t.leaf(Tensor::scalar(4.0), true);
  Var m = ad::mean_scalars(t, {a, b});
  CHECK(t.value(m)[0] == doctest::Approx(3.0));
  t.backward(m);
  CHECK(t.grad(a)[0] == doctest::Approx(0.5));
  CHECK(t.grad(b)[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(ad::mean_scalars(t, {}), std::invalid_argument);
}

TEST_CASE("detach blocks gradient flow") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(2.0), true);
  Var d = ad::detach(t, x);
  Var y = ad::mul(t, x, d);  // y = x * const(2)
  t.backward(ad::sum(t, y));
  CHECK(t.grad(x)[0] == doctest::Approx(2.0));
}
