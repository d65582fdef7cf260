#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "matr/autograd.hpp"
#include "matr/gradcheck.hpp"
#include "matr/tensor.hpp"

using namespace matr;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(r, c);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Values bounded away from zero, so kinks at the origin are never crossed.
Tensor<double> away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor<double> t = random_matrix(r, c, rng, 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data())
    if (sign(rng)) v = -v;
  return t;
}

// Reduces any output to a scalar with fixed random weights, so every output
// entry contributes a distinct gradient.
Var<double> weighted_sum(Var<double> y) {
  std::mt19937_64 rng(99);
  Tensor<double> w = random_matrix(y.rows(), y.cols(), rng);
  return sum(mul(y, y.graph().constant(std::move(w))));
}

double check2(const std::function<Var<double>(Var<double>, Var<double>)>& f, Tensor<double> a,
              Tensor<double> b) {
  std::vector<Tensor<double>*> leaves{&a, &b};
  auto r = finite_diff_check(
      [&](Graph<double>& g) { return weighted_sum(f(g.parameter(a), g.parameter(b))); },
      std::span<Tensor<double>* const>(leaves));
  return r.max_relative_error;
}

double check1(const std::function<Var<double>(Var<double>)>& f, Tensor<double> a) {
  return finite_diff_check([&](Graph<double>&, Var<double> x) { return weighted_sum(f(x)); }, a)
      .max_relative_error;
}

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
  auto t = Tensor<float>::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0f);
  EXPECT_EQ(t.slice_rows(1, 2), Tensor<float>::matrix(1, 3, {4, 5, 6}));
  EXPECT_THROW(t.slice_rows(1, 3), std::out_of_range);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, EmptyMatrixKeepsWidth) {
  Tensor<float> t(0, 7);
  EXPECT_EQ(t.rows(), 0u);
  EXPECT_EQ(t.cols(), 7u);
  EXPECT_TRUE(t.empty());
}

TEST(Tensor, CastRoundTrip) {
  auto t = Tensor<float>::matrix(1, 3, {0.5f, -2.25f, 3.0f});
  EXPECT_EQ(t.cast<double>().cast<float>(), t);
}

TEST(Autograd, MatmulValues) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::matrix(2, 2, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<double>::matrix(2, 1, {5, 6}));
  EXPECT_EQ(matmul(a, b).value(), Tensor<double>::matrix(2, 1, {17, 39}));
  EXPECT_EQ(matmul_nt(a, a).value(), Tensor<double>::matrix(2, 2, {5, 11, 11, 25}));
}

TEST(Autograd, ShapeMismatchThrows) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>(2, 3));
  auto b = g.constant(Tensor<double>(2, 3));
  EXPECT_THROW(matmul(a, b), std::invalid_argument);
  EXPECT_THROW(add(a, g.constant(Tensor<double>(3, 2))), std::invalid_argument);
}

TEST(Autograd, NonFiniteValuesRaise) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::matrix(1, 2, {-1.0, 1.0}));
  EXPECT_THROW(log(x), NumericError);
}

TEST(Autograd, SoftmaxRowsSumToOne) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>::matrix(2, 3, {1000, 1001, 1002, -5, 0, 5}));
  auto y = softmax_rows(x).value();
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(y(r, 0) + y(r, 1) + y(r, 2), 1.0, 1e-12);
}

TEST(Autograd, ParameterLeavesAreShared) {
  Tensor<double> w = Tensor<double>::matrix(1, 1, {3.0});
  Graph<double> g;
  auto a = g.parameter(w);
  auto b = g.parameter(w);
  auto y = sum(mul(a, b));
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad_of(w)[0], 6.0);
}

TEST(Autograd, BackwardRunsOnce) {
  Graph<double> g;
  auto x = g.input(Tensor<double>::scalar(2.0));
  auto y = square(x);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 4.0);
  EXPECT_THROW(g.backward(y), std::logic_error);
}

TEST(Autograd, NoGradGraphRecordsNothing) {
  Tensor<double> w = Tensor<double>::scalar(1.0);
  Graph<double> g(false);
  auto y = square(g.parameter(w));
  EXPECT_FALSE(g.requires_grad(y.id()));
}

TEST(Gradcheck, BinaryOps) {
  std::mt19937_64 rng(1);
  auto a = [&] { return random_matrix(3, 4, rng); };
  EXPECT_LT(check2([](auto x, auto y) { return add(x, y); }, a(), a()), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return sub(x, y); }, a(), a()), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return mul(x, y); }, a(), a()), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return div(x, y); }, a(), random_matrix(3, 4, rng, 0.5, 2.0)), 1e-7);
  EXPECT_LT(check2([](auto x, auto y) { return matmul(x, y); }, a(), random_matrix(4, 2, rng)), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return matmul_nt(x, y); }, a(), random_matrix(5, 4, rng)), 1e-8);
}

TEST(Gradcheck, Broadcasting) {
  std::mt19937_64 rng(2);
  auto m = random_matrix(3, 4, rng);
  EXPECT_LT(check2([](auto x, auto y) { return add(x, y); }, m, random_matrix(1, 4, rng)), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return mul(x, y); }, m, random_matrix(3, 1, rng)), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return sub(x, y); }, m, random_matrix(1, 1, rng)), 1e-8);
}

TEST(Gradcheck, MinimumMaximumAwayFromTies) {
  std::mt19937_64 rng(3);
  Tensor<double> a = random_matrix(2, 5, rng);
  Tensor<double> b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? 0.3 : -0.3);
  EXPECT_LT(check2([](auto x, auto y) { return minimum(x, y); }, a, b), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return maximum(x, y); }, a, b), 1e-8);
}

TEST(Gradcheck, UnaryOps) {
  std::mt19937_64 rng(4);
  auto z = [&] { return away_from_zero(3, 3, rng); };
  EXPECT_LT(check1([](auto x) { return exp(x); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return log(x); }, random_matrix(3, 3, rng, 0.5, 2.0)), 1e-8);
  EXPECT_LT(check1([](auto x) { return sigmoid(x); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return relu(x); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return abs(x); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return square(x); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return softplus(x); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return pow_scalar(x, 2.5); }, random_matrix(3, 3, rng, 0.2, 1.5)), 1e-8);
  EXPECT_LT(check1([](auto x) { return scale(add_scalar(x, 0.5), -1.5); }, z()), 1e-8);
  EXPECT_LT(check1([](auto x) { return transpose(x); }, z()), 1e-8);
}

TEST(Gradcheck, RowwiseOps) {
  std::mt19937_64 rng(5);
  auto m = random_matrix(4, 6, rng, -2.0, 2.0);
  EXPECT_LT(check1([](auto x) { return softmax_rows(x); }, m), 1e-8);
  EXPECT_LT(check1([](auto x) { return log_softmax_rows(x); }, m), 1e-8);
  EXPECT_LT(check1([](auto x) { return sum_cols(x); }, m), 1e-8);
  EXPECT_LT(check1([](auto x) { return mean(x); }, m), 1e-8);
  auto gamma = random_matrix(1, 6, rng, 0.5, 1.5);
  auto beta = random_matrix(1, 6, rng);
  std::vector<Tensor<double>*> leaves{&m, &gamma, &beta};
  auto r = finite_diff_check(
      [&](Graph<double>& g) {
        return weighted_sum(layer_norm(g.parameter(m), g.parameter(gamma), g.parameter(beta), 1e-5));
      },
      std::span<Tensor<double>* const>(leaves));
  EXPECT_LT(r.max_relative_error, 1e-7);
}

TEST(Gradcheck, StructuralOps) {
  std::mt19937_64 rng(6);
  auto a = random_matrix(3, 4, rng);
  auto b = random_matrix(2, 4, rng);
  EXPECT_LT(check2([](auto x, auto y) { return concat_rows({x, y}); }, a, b), 1e-8);
  EXPECT_LT(check2([](auto x, auto y) { return concat_cols({x, y}); }, a, random_matrix(3, 2, rng)), 1e-8);
  EXPECT_LT(check1([](auto x) { return slice_rows(x, 1, 3); }, a), 1e-8);
  EXPECT_LT(check1([](auto x) { return slice_cols(x, 1, 3); }, a), 1e-8);
  EXPECT_LT(check1([](auto x) { return gather_rows(x, {2, 0, 2, 1}); }, a), 1e-8);
  EXPECT_LT(check1([](auto x) { return pick_cols(x, {3, 0, 3}); }, a), 1e-8);
}

TEST(Gradcheck, ReportsWrongGradient) {
  // A deliberately broken op: forward doubles, backward claims identity.
  Tensor<double> x = Tensor<double>::matrix(1, 2, {0.3, -0.7});
  auto r = finite_diff_check(
      [](Graph<double>& g, Var<double> v) {
        auto bad = g.emit("bad", [&] {
          Tensor<double> t = v.value();
          for (auto& e : t.data()) e *= 2;
          return t;
        }(), true, [id = v.id()](Graph<double>& gr, std::size_t self) {
          const Tensor<double> up = gr.grad_of_node(self);
          Tensor<double>& dst = gr.grad_buffer(id);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up[i];
        });
        return sum(bad);
      },
      x);
  EXPECT_NEAR(r.max_relative_error, 1.0, 1e-6);
}
