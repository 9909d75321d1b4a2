#include <cmath>
#include <functional>
#include <limits>

#include "doctest.h"
#include "gar/adam.hpp"
#include "gar/autodiff.hpp"
#include "gar/errors.hpp"
#include "gar/rng.hpp"

using namespace gar;
using namespace gar::ad;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces any output to a scalar through a fixed random projection.
Var project(Var out, const Tensor& r) {
  Tape& tp = *out.tape();
  const std::size_t n = out.value().size();
  Var w = tp.constant(r.reshaped({n, 1}));
  Var b = tp.constant(Tensor(Shape{1}));
  return reshape(dense(reshape(out, {1, n}), w, b), {});
}

double eval_loss(const Graph& g, const std::vector<Tensor>& inputs, const Tensor& r) {
  Tape tp(false);
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tp.constant(t));
  Var out = g(tp, vars);
  return out.value().size() == 1 && out.value().rank() == 0 ? out.value().item()
                                                           : project(out, r).value().item();
}

// Central differences against the tape's gradients.
void check_gradients(const Graph& g, std::vector<Tensor> inputs, std::uint64_t seed,
                     double tol = 1e-6) {
  Rng rng(seed);
  Tape tp;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tp.parameter(t));
  Var out = g(tp, vars);
  const Tensor r = random_tensor(rng, out.value().shape());
  const bool scalar = out.value().rank() == 0;
  Var loss = scalar ? out : project(out, r);
  tp.backward(loss);
  const double h = 1e-5;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tp.grad(vars[k]);
    REQUIRE(analytic.shape() == inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = eval_loss(g, inputs, r);
      inputs[k][i] = saved - h;
      const double down = eval_loss(g, inputs, r);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2 * h);
      CHECK(std::abs(numeric - analytic[i]) < tol * std::max(1.0, std::abs(numeric)));
    }
  }
}

}  // namespace

TEST_CASE("convolution of ones with a box kernel") {
  Tape tp;
  Var x = tp.constant(Tensor({5, 1}, 1.0));
  Var w = tp.constant(Tensor({5, 1, 1}, 1.0));
  Var b = tp.constant(Tensor({1}, 0.0));
  const Tensor y = temporal_conv1d(x, w, b).value();
  CHECK(y.shape() == Shape{5, 1});
  CHECK(y.values()[0] == 3.0);
  CHECK(y.values()[1] == 4.0);
  CHECK(y.values()[2] == 5.0);
  CHECK(y.values()[3] == 4.0);
  CHECK(y.values()[4] == 3.0);
}

TEST_CASE("identity kernel reproduces the input") {
  Rng rng(1);
  Tape tp;
  const Tensor xv = random_tensor(rng, {2, 7, 3});
  Tensor wv({3, 3, 3}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) wv.at({1, c, c}) = 1.0;
  const Tensor y = temporal_conv1d(tp.constant(xv), tp.constant(wv), tp.constant(Tensor({3}))).value();
  CHECK(y == xv);
}

TEST_CASE("convolution matches a direct loop") {
  Rng rng(2);
  const std::size_t t_len = 9, cin = 3, cout = 4, k = 5;
  const Tensor xv = random_tensor(rng, {2, t_len, cin});
  const Tensor wv = random_tensor(rng, {k, cin, cout});
  const Tensor bv = random_tensor(rng, {cout});
  Tape tp;
  const Tensor y = temporal_conv1d(tp.constant(xv), tp.constant(wv), tp.constant(bv)).value();
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = bv[o];
        for (std::size_t d = 0; d < k; ++d) {
          const auto src = static_cast<std::ptrdiff_t>(t + d) - 2;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
          for (std::size_t i = 0; i < cin; ++i) {
            acc += xv.at({n, static_cast<std::size_t>(src), i}) * wv.at({d, i, o});
          }
        }
        CHECK(y.at({n, t, o}) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("dense on a two-element input") {
  Tape tp;
  Var x = tp.constant(Tensor({2}, std::vector<double>{1.0, 2.0}));
  Var w = tp.constant(Tensor({2, 1}, std::vector<double>{0.5, 1.0}));
  Var b = tp.constant(Tensor({1}, std::vector<double>{1.0}));
  const Tensor y = dense(x, w, b).value();
  CHECK(y.shape() == Shape{1});
  CHECK(y[0] == doctest::Approx(3.5));
}

TEST_CASE("softmax stays on the simplex at extreme inputs") {
  Tape tp;
  Var x = tp.constant(Tensor({3}, std::vector<double>{1e3, -1e3, 0.0}));
  const Tensor y = softmax(x, 0).value();
  CHECK(y.all_finite());
  CHECK(y[0] + y[1] + y[2] == doctest::Approx(1.0));
  CHECK(y[0] == doctest::Approx(1.0));

  Rng rng(3);
  const Tensor base = random_tensor(rng, {4, 5, 6}, -5, 5);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor shifted = base;
    for (double& v : shifted.values()) v += 123.0;
    const Tensor a = softmax(tp.constant(base), axis).value();
    const Tensor b = softmax(tp.constant(shifted), axis).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    double total = 0.0;
    for (double v : a.values()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(static_cast<double>(a.size() / base.dim(axis))));
  }
}

TEST_CASE("transpose moves elements as declared") {
  Rng rng(4);
  const Tensor xv = random_tensor(rng, {2, 3, 4});
  Tape tp;
  const Tensor y = transpose(tp.constant(xv), {2, 0, 1}).value();
  CHECK(y.shape() == Shape{4, 2, 3});
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(y.at({c, a, b}) == xv.at({a, b, c}));
    }
  }
}

TEST_CASE("reductions match loops") {
  Rng rng(5);
  const Tensor xv = random_tensor(rng, {2, 3, 4});
  const Tensor wv = random_tensor(rng, {2, 3});
  Tape tp;
  const Tensor mean = mean_over_axis(tp.constant(xv), 1).value();
  const Tensor ws = weighted_sum_over_axis(tp.constant(xv), tp.constant(wv), 1).value();
  const Tensor sc = scale_last_axis(tp.constant(xv), tp.constant(wv)).value();
  CHECK(mean.shape() == Shape{2, 4});
  CHECK(ws.shape() == Shape{2, 4});
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 4; ++i) {
      double m = 0.0, s = 0.0;
      for (std::size_t l = 0; l < 3; ++l) {
        m += xv.at({o, l, i}) / 3.0;
        s += wv.at({o, l}) * xv.at({o, l, i});
        CHECK(sc.at({o, l, i}) == doctest::Approx(xv.at({o, l, i}) * wv.at({o, l})));
      }
      CHECK(mean.at({o, i}) == doctest::Approx(m));
      CHECK(ws.at({o, i}) == doctest::Approx(s));
    }
  }
}

TEST_CASE("shape errors are rejected") {
  Tape tp;
  Var x = tp.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(dense(x, tp.constant(Tensor({4, 1})), tp.constant(Tensor({1}))),
                  std::invalid_argument);
  CHECK_THROWS_AS(temporal_conv1d(x, tp.constant(Tensor({2, 3, 1})), tp.constant(Tensor({1}))),
                  std::invalid_argument);
  CHECK_THROWS_AS(reshape(x, {5}), std::invalid_argument);
  CHECK_THROWS_AS(softmax(x, 2), std::invalid_argument);
}

TEST_CASE("finite-difference gradients per op") {
  Rng rng(6);
  SUBCASE("conv") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return temporal_conv1d(v[0], v[1], v[2]); },
                    {random_tensor(rng, {2, 6, 3}), random_tensor(rng, {3, 3, 2}),
                     random_tensor(rng, {2})},
                    1);
  }
  SUBCASE("dense") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return dense(v[0], v[1], v[2]); },
                    {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2}), random_tensor(rng, {2})},
                    2);
  }
  SUBCASE("relu and sigmoid") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return sigmoid(relu(v[0])); },
                    {random_tensor(rng, {5, 3})}, 3);
  }
  SUBCASE("softmax over each axis") {
    for (std::size_t axis = 0; axis < 3; ++axis) {
      check_gradients([axis](Tape&, const std::vector<Var>& v) { return softmax(v[0], axis); },
                      {random_tensor(rng, {2, 3, 4}, -3, 3)}, 4 + axis);
    }
  }
  SUBCASE("mean, weighted sum and scaling") {
    check_gradients([](Tape&, const std::vector<Var>& v) { return mean_over_axis(v[0], 1); },
                    {random_tensor(rng, {2, 3, 4})}, 7);
    check_gradients(
        [](Tape&, const std::vector<Var>& v) { return weighted_sum_over_axis(v[0], v[1], 1); },
        {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 3})}, 8);
    check_gradients(
        [](Tape&, const std::vector<Var>& v) { return weighted_sum_over_axis(v[0], v[1], 0); },
        {random_tensor(rng, {3, 5}), random_tensor(rng, {3})}, 9);
    check_gradients([](Tape&, const std::vector<Var>& v) { return scale_last_axis(v[0], v[1]); },
                    {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 3})}, 10);
  }
  SUBCASE("reshape, flatten, transpose") {
    check_gradients(
        [](Tape&, const std::vector<Var>& v) {
          return transpose(reshape(flatten(v[0]), {4, 6}), {1, 0});
        },
        {random_tensor(rng, {2, 3, 4})}, 11);
    check_gradients(
        [](Tape&, const std::vector<Var>& v) { return transpose(v[0], {1, 2, 0, 3}); },
        {random_tensor(rng, {2, 3, 4, 2})}, 12);
  }
  SUBCASE("bce with positive weight") {
    const Tensor targets({4}, std::vector<double>{1, 0, 1, 0});
    check_gradients(
        [&](Tape&, const std::vector<Var>& v) { return bce_loss(v[0], targets, 2.5); },
        {random_tensor(rng, {4}, -4, 4)}, 13);
  }
  SUBCASE("shared subexpression accumulates") {
    check_gradients(
        [](Tape&, const std::vector<Var>& v) {
          Var h = relu(dense(v[0], v[1], v[2]));
          return scale_last_axis(h, mean_over_axis(h, 1));
        },
        {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}), random_tensor(rng, {5})}, 14);
  }
}

TEST_CASE("bce values") {
  Tape tp;
  const Tensor t({2}, std::vector<double>{1, 0});
  CHECK(bce_loss(tp.constant(Tensor({2}, 0.0)), t).value().item() == doctest::Approx(std::log(2.0)));
  // Saturated and correct: near zero. Saturated and wrong: about |z|.
  Var right = tp.parameter(Tensor({2}, std::vector<double>{1e3, -1e3}));
  const double l_right = bce_loss(right, t).value().item();
  CHECK(l_right >= 0.0);
  CHECK(l_right < 1e-300);
  Var wrong = tp.parameter(Tensor({2}, std::vector<double>{-1e3, 1e3}));
  Var l_wrong = bce_loss(wrong, t);
  CHECK(l_wrong.value().item() == doctest::Approx(1e3));
  tp.backward(l_wrong);
  CHECK(tp.grad(wrong).all_finite());
  CHECK(tp.grad(wrong)[0] == doctest::Approx(-0.5));
  CHECK(tp.grad(wrong)[1] == doctest::Approx(0.5));
  CHECK(stable_sigmoid(-800.0) >= 0.0);
  CHECK(softplus(800.0) == doctest::Approx(800.0));
}

TEST_CASE("non-finite values raise NumericFault") {
  Tape tp;
  Var x = tp.constant(Tensor({1, 1}, 1e308));
  Var w = tp.constant(Tensor({1, 1}, 10.0));
  CHECK_THROWS_AS(dense(x, w, tp.constant(Tensor({1}))), NumericFault);
  Tensor nan({2}, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(relu(tp.constant(nan)), NumericFault);
}

TEST_CASE("untouched parameters get zero gradients") {
  Tape tp;
  Var a = tp.parameter(Tensor({2}, 1.0));
  Var unused = tp.parameter(Tensor({3}, 1.0));
  tp.backward(bce_loss(a, Tensor({2}, 1.0)));
  CHECK(tp.grad(unused) == Tensor({3}, 0.0));
}

TEST_CASE("inference tapes keep no closures") {
  Tape tp(false);
  Var a = tp.parameter(Tensor({2}, 1.0));
  Var y = relu(a);
  CHECK_FALSE(tp.recording());
  CHECK(y.value() == Tensor({2}, 1.0));
  CHECK_THROWS(tp.backward(reshape(y, {2})));
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(20);
  const Tensor xv = random_tensor(rng, {3, 8, 4});
  const Tensor wv = random_tensor(rng, {3, 4, 5});
  const Tensor bv = random_tensor(rng, {5});
  auto run = [&] {
    Tape tp;
    Var w = tp.parameter(wv);
    Var h = relu(temporal_conv1d(tp.constant(xv), w, tp.constant(bv)));
    Var z = reshape(mean_over_axis(mean_over_axis(h, 2), 1), {3});
    tp.backward(bce_loss(z, Tensor({3}, 1.0)));
    return tp.grad(w);
  };
  CHECK(run() == run());
}

TEST_CASE("adam matches the scalar recurrence") {
  ParamMap params{{"p", Tensor({1}, 1.0)}};
  AdamState state;
  state.config.lr = 0.1;
  double p = 1.0, m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= 5; ++step) {
    const double g = 0.5 * step - 1.0;
    adam_step(params, {{"p", Tensor({1}, g)}}, state);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, step));
    const double vh = v / (1 - std::pow(b2, step));
    p -= 0.1 * mh / (std::sqrt(vh) + eps);
    CHECK(params["p"][0] == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(state.step == 5);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  ParamMap params{{"a", Tensor({2}, std::vector<double>{0.0, 0.0})}};
  AdamState state;
  adam_step(params, {{"a", Tensor({2}, std::vector<double>{3.0, -0.01})}}, state);
  CHECK(params["a"][0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(params["a"][1] == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK_THROWS(adam_step(params, {{"b", Tensor({2})}}, state));
  CHECK_THROWS(adam_step(params, {{"a", Tensor({3})}}, state));
}

TEST_CASE("adam with zero gradient keeps parameters") {
  ParamMap params{{"a", Tensor({3}, 0.7)}};
  AdamState state;
  adam_step(params, {}, state);
  CHECK(params["a"] == Tensor({3}, 0.7));
}
