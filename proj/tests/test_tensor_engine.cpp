#include "doctest.h"

#include <cmath>
#include <random>

#include "csunet/gradcheck.hpp"
#include "csunet/ops.hpp"
#include "csunet/parallel.hpp"
#include "support.hpp"

using namespace csunet;
using oracle::random_tensor;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor layout is row-major with the last axis fastest") {
  Tensor<float> t(Shape{2, 3, 4});
  CHECK(t.numel() == 24);
  t.at({1, 2, 3}) = 5.0f;
  CHECK(t[1 * 12 + 2 * 4 + 3] == 5.0f);
  CHECK(t.reshaped({6, 4}).shape() == Shape{6, 4});
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0, 0}), ShapeError);
  CHECK(Tensor<double>::scalar(3.5).item() == 3.5);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> ext(1, 6), ch(1, 3), ker(1, 3), st(1, 2), pd(0, 1), dl(1, 2);
  int checked = 0;
  while (checked < 60) {
    const Shape xs{ch(rng), ch(rng), ext(rng), ext(rng), ext(rng)};
    const Shape ws{ch(rng), xs[1], ker(rng), ker(rng), ker(rng)};
    ConvOptions o;
    bool valid = true;
    for (int a = 0; a < 3; ++a) {
      o.stride[a] = st(rng);
      o.padding[a] = pd(rng);
      o.dilation[a] = dl(rng);
      valid = valid && xs[2 + a] + 2 * o.padding[a] - o.dilation[a] * (ws[2 + a] - 1) - 1 >= 0;
    }
    if (!valid) continue;
    const auto x = random_tensor<double>(xs, rng);
    const auto w = random_tensor<double>(ws, rng);
    const auto b = random_tensor<double>({ws[0]}, rng);
    const auto y = conv3d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b), o);
    const auto ref = oracle::conv3d(x, w, &b, o.stride, o.padding, o.dilation);
    CHECK(max_abs_diff(y.value(), ref) <= 1e-12);
    ++checked;
  }
}

TEST_CASE("conv3d float path agrees with the double oracle") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({2, 4, 6, 6, 6}, rng);
  const auto w = random_tensor<double>({3, 4, 3, 3, 3}, rng);
  ConvOptions o;
  o.padding = {1, 1, 1};
  const auto y = conv3d(Var<float>::constant(x.cast<float>()), Var<float>::constant(w.cast<float>()), std::nullopt, o);
  const auto ref = oracle::conv3d(x, w, nullptr, o.stride, o.padding, o.dilation);
  CHECK(max_abs_diff(y.value().template cast<double>(), ref) <= 1e-4);
}

TEST_CASE("conv3d geometry errors name the offending axis") {
  const auto x = Var<double>::constant(Tensor<double>(Shape{1, 2, 4, 2, 4}));
  const auto w = Var<double>::constant(Tensor<double>(Shape{1, 2, 3, 3, 3}));
  try {
    conv3d(x, w, std::nullopt);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("axis H") != std::string::npos);
  }
  const auto w3 = Var<double>::constant(Tensor<double>(Shape{1, 3, 1, 1, 1}));
  try {
    conv3d(x, w3, std::nullopt);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
}

TEST_CASE("conv3d results do not depend on the worker count") {
  std::mt19937_64 rng(9);
  const auto x = random_tensor<float>({3, 2, 6, 6, 6}, rng);
  const auto w = random_tensor<float>({4, 2, 3, 3, 3}, rng);
  ConvOptions o;
  o.padding = {1, 1, 1};
  auto run = [&](int threads) {
    set_thread_count(threads);
    Tape<float> tape;
    auto xv = tape.input(x, true);
    Parameter<float> p{"w", w, Tensor<float>(w.shape()), true};
    auto y = conv3d(xv, tape.param(p), std::nullopt, o);
    tape.backward(sum(mul(y, y)));
    return std::make_tuple(y.value(), xv.grad(), p.grad);
  };
  const auto single = run(0);
  const auto multi = run(3);
  set_thread_count(0);
  CHECK(std::get<0>(single) == std::get<0>(multi));
  CHECK(std::get<1>(single) == std::get<1>(multi));
  CHECK(std::get<2>(single) == std::get<2>(multi));
}

TEST_CASE("maxpool3d matches the window-max oracle and routes the gradient to the first maximum") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({2, 3, 5, 4, 6}, rng);
  const auto y = maxpool3d(Var<double>::constant(x), Triple{2, 2, 2}, Triple{2, 2, 2});
  CHECK(max_abs_diff(y.value(), oracle::maxpool3d(x, {2, 2, 2}, {2, 2, 2})) == 0.0);
  CHECK(y.shape() == Shape{2, 3, 2, 2, 3});

  Tape<double> tape;
  auto v = tape.input(Tensor<double>(Shape{1, 1, 2, 2, 2}, 1.0), true);
  tape.backward(sum(maxpool3d(v, Triple{2, 2, 2}, Triple{2, 2, 2})));
  CHECK(v.grad()[0] == 1.0);
  for (int i = 1; i < 8; ++i) CHECK(v.grad()[i] == 0.0);
}

TEST_CASE("upsample3d matches nearest and half-pixel trilinear oracles") {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<double>({2, 2, 3, 2, 4}, rng);
  CHECK(max_abs_diff(upsample3d(Var<double>::constant(x), UpsampleMode::nearest).value(), oracle::upsample(x, false)) ==
        0.0);
  CHECK(max_abs_diff(upsample3d(Var<double>::constant(x), UpsampleMode::trilinear).value(),
                     oracle::upsample(x, true)) <= 1e-14);
  const Tensor<double> c(Shape{1, 1, 2, 2, 2}, 0.25);
  const auto up = upsample3d(Var<double>::constant(c), UpsampleMode::trilinear).value();
  for (auto v : up.span()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("batchnorm3d uses batch statistics in train mode and running buffers in eval mode") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({3, 2, 2, 3, 2}, rng, -2, 3);
  const Tensor<double> gamma(Shape{2}, std::vector<double>{1.5, 0.5});
  const Tensor<double> beta(Shape{2}, std::vector<double>{0.1, -0.2});
  Tensor<double> rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
  NormOptions opt;
  const auto y = batchnorm3d(Var<double>::constant(x), Var<double>::constant(gamma), Var<double>::constant(beta), rm,
                             rv, Mode::train, opt);
  for (std::int64_t c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    int n = 0;
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t i = 0; i < 12; ++i) {
        const double v = x[(b * 2 + c) * 12 + i];
        s += v;
        ss += v * v;
        ++n;
      }
    const double mu = s / n, var = ss / n - mu * mu;
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t i = 0; i < 12; ++i) {
        const auto k = (b * 2 + c) * 12 + i;
        CHECK(y.value()[k] == doctest::Approx(gamma[c] * (x[k] - mu) / std::sqrt(var + opt.eps) + beta[c]).epsilon(1e-12));
      }
    CHECK(rm[c] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var * n / (n - 1)).epsilon(1e-12));
  }
  const auto e = batchnorm3d(Var<double>::constant(x), Var<double>::constant(gamma), Var<double>::constant(beta), rm,
                             rv, Mode::eval, opt);
  CHECK(e.value()[0] == doctest::Approx(gamma[0] * (x[0] - rm[0]) / std::sqrt(rv[0] + opt.eps) + beta[0]));
}

TEST_CASE("instancenorm3d normalises each sample and channel separately") {
  std::mt19937_64 rng(8);
  const auto x = random_tensor<double>({2, 3, 2, 2, 2}, rng, 0, 5);
  const auto y = instancenorm3d(Var<double>::constant(x), Var<double>::constant(Tensor<double>(Shape{3}, 1.0)),
                                Var<double>::constant(Tensor<double>(Shape{3}, 0.0)));
  for (std::int64_t s = 0; s < 6; ++s) {
    double m = 0;
    for (int i = 0; i < 8; ++i) m += y.value()[s * 8 + i];
    CHECK(std::abs(m / 8) < 1e-12);
  }
}

TEST_CASE("softmax, linear and global average pooling match direct formulas") {
  std::mt19937_64 rng(10);
  const auto x = random_tensor<double>({2, 3, 1, 2, 2}, rng, -3, 3);
  const auto p = softmax_channels(Var<double>::constant(x)).value();
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 4; ++i) {
      double z = 0;
      for (std::int64_t c = 0; c < 3; ++c) z += std::exp(x[(b * 3 + c) * 4 + i]);
      for (std::int64_t c = 0; c < 3; ++c) {
        CHECK(p[(b * 3 + c) * 4 + i] == doctest::Approx(std::exp(x[(b * 3 + c) * 4 + i]) / z).epsilon(1e-12));
      }
    }

  const auto in = random_tensor<double>({2, 3}, rng);
  const auto w = random_tensor<double>({4, 3}, rng);
  const auto bias = random_tensor<double>({4}, rng);
  const auto y = linear(Var<double>::constant(in), Var<double>::constant(w), Var<double>::constant(bias)).value();
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t o = 0; o < 4; ++o) {
      double acc = bias[o];
      for (std::int64_t i = 0; i < 3; ++i) acc += w.at({o, i}) * in.at({b, i});
      CHECK(y.at({b, o}) == doctest::Approx(acc).epsilon(1e-12));
    }

  const auto g = global_avg_pool(Var<double>::constant(x)).value();
  CHECK(g.shape() == Shape{2, 3});
  double m = 0;
  for (int i = 0; i < 4; ++i) m += x[i];
  CHECK(g[0] == doctest::Approx(m / 4));
}

TEST_CASE("a variable used twice accumulates both gradient contributions") {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(Shape{3}, std::vector<double>{1, -2, 3}), true);
  tape.backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == -4.0);
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("parameter gradients accumulate across backward passes until zeroed") {
  Parameter<double> p{"p", Tensor<double>(Shape{2}, 1.5), Tensor<double>(Shape{2}), true};
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(sum(scale(tape.param(p), 2.0)));
  }
  CHECK(p.grad[0] == 4.0);
  p.zero_grad();
  CHECK(p.grad[1] == 0.0);
}

TEST_CASE("tape misuse is rejected") {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(Shape{2}, 1.0), true);
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), TapeError);
  auto loss = sum(x);
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), TapeError);
}

TEST_CASE("non-finite forward values raise") {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(Shape{2}, 1e308), true);
  CHECK_THROWS_AS(add(x, x), NonFiniteError);
}

TEST_CASE("ops over constants record nothing") {
  Tape<double> tape;
  auto c = Var<double>::constant(Tensor<double>(Shape{2}, 1.0));
  auto y = relu(c);
  CHECK(!y.requires_grad());
  CHECK(tape.size() == 0);
}

TEST_CASE("grad_check flags the injected conv backward sign flip") {
  std::mt19937_64 rng(12);
  Parameter<double> w{"w", random_tensor<double>({2, 2, 3, 3, 3}, rng), Tensor<double>(Shape{2, 2, 3, 3, 3}), true};
  ConvOptions o;
  o.padding = {1, 1, 1};
  const auto weights = random_tensor<double>({1, 2, 3, 3, 3}, rng);
  ScalarFn f = [&](Tape<double>* t, const Var<double>& x) {
    auto wv = t ? t->param(w) : Var<double>::constant(w.value);
    return sum(mul(conv3d(x, wv, std::nullopt, o), Var<double>::constant(weights)));
  };
  const auto x = random_tensor<double>({1, 2, 3, 3, 3}, rng);
  CHECK(grad_check(f, x, {}, {&w}).pass);
  debug::set_conv_backward_sign_flip(true);
  const auto bad = grad_check(f, x, {}, {&w});
  debug::set_conv_backward_sign_flip(false);
  CHECK(!bad.pass);
}
