#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "helpers.hpp"
#include "op_cases.hpp"
#include "qgan/autodiff.hpp"
#include "qgan/kernels.hpp"
#include "qgan/ops.hpp"

using namespace qgan;
using namespace qgan::ad;
using testing::random_away_from_zero;
using testing::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kEps = 1e-4;
constexpr double kTol = 1e-3;

}  // namespace

TEST_CASE("tensor rejects malformed shapes") {
  CHECK_THROWS_AS(TensorD(Shape{}), ShapeError);
  CHECK_THROWS_AS(TensorD(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(TensorD(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  TensorD t(Shape{2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t[5] == 1.5);
}

TEST_CASE("conv2d of ones has interior value 9") {
  TensorD x(Shape{1, 1, 4, 4}, 1.0), k(Shape{1, 1, 3, 3}, 1.0);
  TensorD y = conv2d(x, k, TensorD{}, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y[1 * 4 + 1] == doctest::Approx(9.0));
  CHECK(y[0] == doctest::Approx(4.0));
}

TEST_CASE("leaky_relu and abs at the kink") {
  TensorD x(Shape{1}, std::vector<double>{-2.0});
  CHECK(leaky_relu(x, 0.2).item() == doctest::Approx(-0.4));
  CHECK_THROWS(leaky_relu(x, 1.5));

  TensorD z(Shape{1}, 0.0);
  z.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(abs(z));
  CHECK(z.grad()[0] == 0.0);

  TensorD z2(Shape{1}, 0.0);
  z2.set_requires_grad(true);
  tape.backward(leaky_relu(z2, 0.2));
  CHECK(z2.grad()[0] == doctest::Approx(0.2));
}

TEST_CASE("backward examples") {
  SUBCASE("mean of squares") {
    TensorD x(Shape{3}, std::vector<double>{1, 2, 3});
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(mean(square(x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0 / 3.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0 / 3.0));
    CHECK(x.grad()[2] == doctest::Approx(2.0));
  }
  SUBCASE("sum of products") {
    TensorD x(Shape{2}, std::vector<double>{1, 2}), y(Shape{2}, std::vector<double>{3, 4});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum(mul(x, y)));
    CHECK(x.grad()[0] == 3.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(y.grad()[0] == 1.0);
    CHECK(y.grad()[1] == 2.0);
  }
  SUBCASE("repeated backward accumulates on leaves") {
    TensorD x(Shape{2}, std::vector<double>{1, 2});
    x.set_requires_grad(true);
    Tape<double> tape;
    TensorD y = sum(square(x));
    tape.backward(y);
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
  }
  SUBCASE("non-scalar output rejected") {
    TensorD x(Shape{2}, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backward(square(x)), ShapeError);
  }
  SUBCASE("no recording without a tape or under NoGradGuard") {
    TensorD x(Shape{2}, 1.0);
    x.set_requires_grad(true);
    CHECK_FALSE(square(x).requires_grad());
    Tape<double> tape;
    {
      NoGradGuard<double> guard;
      CHECK_FALSE(square(x).requires_grad());
    }
    CHECK(square(x).requires_grad());
    CHECK(tape.size() == 1);
  }
}

TEST_CASE("shape mismatch diagnostics name the op and both shapes") {
  TensorD a(Shape{2, 3}), b(Shape{3, 2});
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(TensorD(Shape{1, 2, 4, 4}), TensorD(Shape{1, 3, 3, 3}), TensorD{}, 1, 1), ShapeError);
  CHECK_THROWS_AS(concat_channels(TensorD(Shape{1, 2, 4, 4}), TensorD(Shape{1, 2, 2, 2})), ShapeError);
  CHECK_THROWS_AS(avg_pool(TensorD(Shape{1, 1, 2, 2}), 3), ShapeError);
}

TEST_CASE("grad_check of sum is exact") {
  const double err = grad_check([](const TensorD& x) { return sum(x); }, random_tensor({3, 4}, 5), 1e-4);
  CHECK(err < 1e-9);
}

TEST_CASE("per-op gradient checks, 20 seeds, 64-bit") {
  for (const auto& c : testing::op_cases()) {
    const double err = testing::op_case_error(c, kSeeds, kEps);
    INFO(c.name << " worst err " << err);
    CHECK(err < kTol);
  }
}

TEST_CASE("composite conv, activation and norm pipelines") {
  for (int s = 0; s < kSeeds; ++s) {
    const TensorD k = random_tensor({2, 3, 3, 3}, 500 + std::uint64_t(s));
    const double e1 = grad_check(
        [&](const TensorD& x) { return mean(leaky_relu(conv2d(x, k, TensorD{}, 1, 1), 0.2)); },
        random_tensor({1, 3, 6, 6}, 600 + std::uint64_t(s)), kEps);
    CHECK(e1 < kTol);
    const double e2 = grad_check([&](const TensorD& x) { return mean(mul(instance_norm(x), x)); },
                                 random_tensor({1, 2, 5, 5}, 700 + std::uint64_t(s)), kEps);
    CHECK(e2 < kTol);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  struct Case {
    std::size_t n, ci, co, h, k, s, p;
  };
  for (Case c : {Case{1, 1, 1, 4, 3, 1, 1}, Case{2, 3, 5, 8, 4, 2, 1}, Case{1, 4, 2, 7, 3, 2, 0},
                 Case{2, 2, 3, 6, 3, 1, 0}, Case{1, 16, 32, 16, 4, 2, 1}}) {
    TensorD x = random_tensor({c.n, c.ci, c.h, c.h}, 1);
    TensorD w = random_tensor({c.co, c.ci, c.k, c.k}, 2);
    TensorD y = conv2d(x, w, TensorD{}, c.s, c.p);
    TensorD r = random_tensor(y.shape(), 3);
    // conv_transpose2d takes [C_in(r), C_out, k, k] == the conv weight layout.
    TensorD xt = conv_transpose2d(r, w, TensorD{}, c.s, c.p);
    if (xt.shape() != x.shape()) {
      // Output-size ambiguity for stride > 1: transpose covers the rows the conv consumed.
      CHECK(xt.dim(2) <= x.dim(2));
      continue;
    }
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) lhs += y[i] * r[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * xt[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("instance_norm normalises each channel") {
  TensorD x = random_tensor({2, 3, 8, 8}, 42, -5.0, 9.0);
  TensorD y = instance_norm(x);
  for (std::size_t g = 0; g < 6; ++g) {
    double m = 0.0, v = 0.0;
    for (std::size_t p = 0; p < 64; ++p) m += y[g * 64 + p];
    m /= 64.0;
    for (std::size_t p = 0; p < 64; ++p) v += (y[g * 64 + p] - m) * (y[g * 64 + p] - m);
    v /= 64.0;
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v - 1.0) < 1e-5);
  }
}

TEST_CASE("backward is bit-deterministic") {
  auto run = [] {
    TensorD x = random_tensor({1, 3, 8, 8}, 9);
    x.set_requires_grad(true);
    TensorD w = random_tensor({4, 3, 3, 3}, 10);
    w.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(mean(square(instance_norm(conv2d(x, w, TensorD{}, 1, 1)))));
    std::vector<double> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("parallel kernels agree with serial references") {
  using namespace qgan::kernels;
  for (ConvGeometry g : {ConvGeometry{2, 3, 9, 7, 4, 3, 1, 1}, ConvGeometry{1, 8, 16, 16, 16, 4, 2, 1},
                         ConvGeometry{3, 2, 5, 5, 1, 5, 1, 2}}) {
    TensorD x = random_tensor({g.input_size()}, 1), w = random_tensor({g.weight_size()}, 2);
    TensorD dy = random_tensor({g.output_size()}, 3);
    std::vector<double> y1(g.output_size()), y2(g.output_size());
    conv2d_forward<double>(g, x.data(), w.data(), y1);
    conv2d_forward_reference<double>(g, x.data(), w.data(), y2);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));

    std::vector<double> dx1(g.input_size(), 0.5), dx2(g.input_size(), 0.5);
    conv2d_backward_input<double>(g, dy.data(), w.data(), dx1);
    conv2d_backward_input_reference<double>(g, dy.data(), w.data(), dx2);
    for (std::size_t i = 0; i < dx1.size(); ++i) CHECK(dx1[i] == doctest::Approx(dx2[i]).epsilon(1e-12));

    std::vector<double> dw1(g.weight_size(), -0.25), dw2(g.weight_size(), -0.25);
    conv2d_backward_weight<double>(g, x.data(), dy.data(), dw1);
    conv2d_backward_weight_reference<double>(g, x.data(), dy.data(), dw2);
    for (std::size_t i = 0; i < dw1.size(); ++i) CHECK(dw1[i] == doctest::Approx(dw2[i]).epsilon(1e-12));
  }
  const std::vector<double> k{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  TensorD x = random_tensor({3 * 6 * 4}, 4);
  std::vector<double> y1(x.numel()), y2(x.numel());
  filter2d_symmetric<double>(3, 6, 4, x.data(), k, 5, 3, y1);
  filter2d_symmetric_reference<double>(3, 6, 4, x.data(), k, 5, 3, y2);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
}

TEST_CASE("float and double paths agree") {
  TensorD x = random_tensor({1, 3, 8, 8}, 31);
  TensorD w = random_tensor({4, 3, 4, 4}, 32);
  TensorD yd = instance_norm(conv2d(x, w, TensorD{}, 2, 1));
  TensorF yf = instance_norm(conv2d(x.cast<float>(), w.cast<float>(), TensorF{}, 2, 1));
  for (std::size_t i = 0; i < yd.numel(); ++i) CHECK(double(yf[i]) == doctest::Approx(yd[i]).epsilon(1e-4));
}
