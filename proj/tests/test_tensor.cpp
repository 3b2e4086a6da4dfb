#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "semdepth/gradcheck.hpp"
#include "semdepth/ops.hpp"
#include "semdepth/rng.hpp"
#include "semdepth/tensor.hpp"
#include "semdepth/verification.hpp"

using namespace semdepth;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  SplitMix64 rng(seed);
  Tensor<double> t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("add of a tensor and its negation is exactly zero") {
  Graph<double> g;
  Tensor<double> x = g.leaf(random_tensor(Shape{2, 1, 4, 4}, 1));
  Tensor<double> z = add(x, neg(x));
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("sigmoid(0) is exactly one half") {
  Graph<double> g;
  Tensor<double> z = sigmoid(g.constant(Shape{1, 1, 3, 3}, 0.0));
  for (double v : z.values()) CHECK(v == 0.5);
}

TEST_CASE("exp gradient matches finite differences at 1e-6") {
  const Tensor<double> x = random_tensor(Shape{2, 1, 4, 4}, 2);
  auto rep = grad_check<double>(
      [](Graph<double>&, const Tensor<double>& t) { return reduce_sum(exp(t)); },
      x, 1e-5, 1e-6);
  INFO(rep.summary());
  CHECK(rep.passed);
}

TEST_CASE("1x1 identity convolution reproduces the input") {
  Graph<double> g;
  Tensor<double> in = g.leaf(random_tensor(Shape{1, 3, 4, 5}, 3));
  Tensor<double> w(Shape{3, 3, 1, 1});
  for (int o = 0; o < 3; ++o) w.at(o, o, 0, 0) = 1.0;
  Tensor<double> y =
      conv2d(in, g.leaf(w), g.leaf(Tensor<double>(Shape{1, 3, 1, 1})), 1);
  auto iv = in.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < iv.size(); ++i) CHECK(yv[i] == iv[i]);
}

TEST_CASE("3x3 all-ones kernel on a constant-1 4x4 counts the window overlap") {
  Graph<double> g;
  Tensor<double> in = g.leaf(Tensor<double>::full(Shape{1, 1, 4, 4}, 1.0));
  Tensor<double> y =
      conv2d(in, g.leaf(Tensor<double>::full(Shape{1, 1, 3, 3}, 1.0)),
             g.leaf(Tensor<double>(Shape{1, 1, 1, 1})), 1);
  CHECK(y.at(0, 0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 1, 2) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 3, 3) == 4.0);
  CHECK(y.at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d weight gradient matches finite differences") {
  const Tensor<double> in = random_tensor(Shape{1, 2, 5, 5}, 4);
  const Tensor<double> w = random_tensor(Shape{3, 2, 3, 3}, 5);
  const Tensor<double> b = random_tensor(Shape{1, 3, 1, 1}, 6);
  auto rep = grad_check_multi<double>(
      [](Graph<double>&, const std::vector<Tensor<double>>& l) {
        return reduce_sum(conv2d(l[0], l[1], l[2], 1));
      },
      {in, w, b}, 1e-5, 1e-4);
  INFO(rep.summary());
  CHECK(rep.passed);
}

TEST_CASE("conv2d stride-2 output dims follow the ceil rule") {
  Graph<double> g;
  Tensor<double> in = g.leaf(random_tensor(Shape{1, 2, 5, 7}, 7));
  Tensor<double> y =
      conv2d(in, g.leaf(random_tensor(Shape{4, 2, 3, 3}, 8)),
             g.leaf(Tensor<double>(Shape{1, 4, 1, 1})), 2);
  CHECK(y.shape() == Shape{1, 4, 3, 4});
}

TEST_CASE("conv2d rejects channel mismatch") {
  Graph<double> g;
  Tensor<double> in = g.leaf(random_tensor(Shape{1, 3, 4, 4}, 9));
  Tensor<double> w = g.leaf(random_tensor(Shape{2, 4, 3, 3}, 10));
  Tensor<double> b = g.leaf(Tensor<double>(Shape{1, 2, 1, 1}));
  CHECK_THROWS_AS(conv2d(in, w, b, 1), ShapeError);
}

TEST_CASE("nearest upsample replicates the 2x2 fixture") {
  Graph<double> g;
  Tensor<double> in(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> y = upsample2x_nearest(g.leaf(in));
  const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2,
                                 3, 3, 4, 4, 3, 3, 4, 4};
  auto yv = y.values();
  REQUIRE(yv.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(yv[i] == want[i]);
}

TEST_CASE("both upsample modes keep constants constant") {
  Graph<double> g;
  Tensor<double> c = g.constant(Shape{1, 2, 3, 3}, 0.7);
  for (double v : upsample2x_nearest(c).values()) CHECK(v == 0.7);
  for (double v : upsample2x_bilinear(c).values())
    CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("bilinear upsample backward matches finite differences") {
  auto rep = grad_check<double>(
      [](Graph<double>&, const Tensor<double>& t) {
        Tensor<double> y = upsample2x_bilinear(t);
        return reduce_sum(mul(y, y));  // quadratic pin catches weight slips
      },
      random_tensor(Shape{1, 1, 2, 2}, 11), 1e-5, 1e-4);
  INFO(rep.summary());
  CHECK(rep.passed);
}

TEST_CASE("reduce ops match their fixtures") {
  Graph<double> g;
  CHECK(reduce_mean(g.constant(Shape{2, 3, 4, 4}, 0.25)).item() ==
        doctest::Approx(0.25).epsilon(1e-15));
  Tensor<double> q(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(reduce_sum(g.leaf(q)).item() == 10.0);
}

TEST_CASE("backward of mean spreads a uniform 1/N gradient") {
  Graph<double> g;
  Tensor<double> x = g.leaf(random_tensor(Shape{1, 2, 3, 4}, 12), true);
  g.backward(reduce_mean(x));
  auto gr = x.grad();
  REQUIRE_FALSE(gr.empty());
  for (double v : gr) CHECK(v == doctest::Approx(1.0 / 24).epsilon(1e-15));
}

TEST_CASE("backward of sum gives all-ones; mean of squares gives 2x/N") {
  const Tensor<double> x0 = random_tensor(Shape{2, 1, 3, 3}, 13);
  {
    Graph<double> g;
    Tensor<double> x = g.leaf(x0, true);
    g.backward(reduce_sum(x));
    for (double v : x.grad()) CHECK(v == 1.0);
  }
  {
    Graph<double> g;
    Tensor<double> x = g.leaf(x0, true);
    g.backward(reduce_mean(mul(x, x)));
    auto gr = x.grad();
    auto xv = x0.values();
    for (std::size_t i = 0; i < gr.size(); ++i) {
      CHECK(gr[i] == doctest::Approx(2.0 * xv[i] / 18).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward accumulates over multiple uses of a node") {
  Graph<double> g;
  Tensor<double> x = g.leaf(Tensor<double>::full(Shape{1, 1, 1, 1}, 3.0), true);
  // y = x*x + x -> dy/dx = 2x + 1 = 7
  g.backward(add(mul(x, x), x));
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("backward is linear in the loss") {
  const Tensor<double> x0 = random_tensor(Shape{1, 1, 4, 4}, 14);
  const double a = 0.7, b = -1.3;
  std::vector<double> gf, gg, gh;
  {
    Graph<double> g;
    Tensor<double> x = g.leaf(x0, true);
    g.backward(reduce_sum(mul(x, x)));
    gf.assign(x.grad().begin(), x.grad().end());
  }
  {
    Graph<double> g;
    Tensor<double> x = g.leaf(x0, true);
    g.backward(reduce_sum(exp(x)));
    gg.assign(x.grad().begin(), x.grad().end());
  }
  {
    Graph<double> g;
    Tensor<double> x = g.leaf(x0, true);
    Tensor<double> h = add(mul_scalar(reduce_sum(mul(x, x)), a),
                           mul_scalar(reduce_sum(exp(x)), b));
    g.backward(h);
    gh.assign(x.grad().begin(), x.grad().end());
  }
  for (std::size_t i = 0; i < gh.size(); ++i) {
    CHECK(gh[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward passes are bit-identical across runs") {
  const Tensor<double> x0 = random_tensor(Shape{1, 3, 6, 6}, 15);
  const Tensor<double> w0 = random_tensor(Shape{4, 3, 3, 3}, 16);
  auto run = [&] {
    Graph<double> g;
    Tensor<double> y = sigmoid(conv2d(
        g.leaf(x0), g.leaf(w0), g.leaf(Tensor<double>(Shape{1, 4, 1, 1})), 2));
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  const auto r1 = run(), r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("graph guards: shape mismatch, non-scalar loss, double backward") {
  Graph<double> g;
  Tensor<double> a = g.leaf(random_tensor(Shape{1, 1, 2, 2}, 17));
  Tensor<double> b = g.leaf(random_tensor(Shape{1, 1, 3, 3}, 18));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(g.backward(a), ShapeError);  // non-scalar

  Graph<double> g2;
  Tensor<double> x = g2.leaf(random_tensor(Shape{1, 1, 2, 2}, 19), true);
  Tensor<double> l = reduce_sum(x);
  g2.backward(l);
  CHECK_THROWS_AS(g2.backward(l), ShapeError);  // consumed
}

TEST_CASE("non-finite forward output is rejected when finite checks are on") {
  Graph<double> g;
  Tensor<double> num = g.constant(Shape{1, 1, 2, 2}, 1.0);
  Tensor<double> den(Shape{1, 1, 2, 2}, {1.0, 0.0, 2.0, 3.0});
  CHECK_THROWS_AS(div(num, g.leaf(den)), NumericalError);
}

TEST_CASE("grad_check: plain sum is exact up to quadrature rounding") {
  auto rep = grad_check<double>(
      [](Graph<double>&, const Tensor<double>& t) { return reduce_sum(t); },
      random_tensor(Shape{1, 1, 3, 3}, 20), 1e-5, 1e-6);
  CHECK(rep.passed);
  // The analytic gradient of a sum is exactly one; the only error left is
  // the rounding of (f(x+h) - f(x-h)) / 2h itself.
  CHECK(rep.max_rel_error < 1e-9);
  CHECK(rep.checked == 9);
}

TEST_CASE("grad_check flags an injected x2 backward bug") {
  auto buggy = [](Graph<double>& g, const Tensor<double>& t) {
    // Identity op whose backward doubles the upstream gradient.
    std::vector<double> copy(t.values().begin(), t.values().end());
    const int src = t.node();
    Tensor<double> y = g.emplace(
        "buggy_identity", t.shape(), std::move(copy), {src},
        [src](Graph<double>& gg, int self) {
          auto& up = gg.grad_buffer(self);
          auto& gx = gg.grad_buffer(src);
          for (std::size_t i = 0; i < up.size(); ++i) gx[i] += 2.0 * up[i];
        });
    return reduce_sum(y);
  };
  auto rep = grad_check<double>(buggy, random_tensor(Shape{1, 1, 3, 3}, 21),
                                1e-5, 1e-4);
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_error > 0.4);  // analytic 2 vs numeric 1
}

TEST_CASE("full gradient suite passes, composite objective included") {
  const auto entries = run_gradient_suite();
  REQUIRE_FALSE(entries.empty());
  bool saw_composite = false;
  for (const auto& e : entries) {
    INFO(e.name << ": " << e.report.summary());
    CHECK(e.report.passed);
    if (e.name == "loss.composite") saw_composite = true;
  }
  CHECK(saw_composite);
}
