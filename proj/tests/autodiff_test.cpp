#include <gtest/gtest.h>

#include <cmath>

#include "guq/autodiff.hpp"
#include "guq/random.hpp"

using namespace guq;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Independent central-difference oracle: perturbs one coordinate of a copy
// of `point` and re-evaluates `f` from scratch.
template <typename F>
Tensor central_difference(F f, const Tensor& point, double h = 1e-5) {
  Tensor g(point.shape());
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = f(probe);
    probe[i] = point[i] - h;
    const double down = f(probe);
    probe[i] = point[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double max_rel_error(const Tensor& got, const Tensor& want, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]) /
                                std::max({std::abs(want[i]), std::abs(got[i]), floor}));
  }
  return worst;
}

}  // namespace

TEST(Matmul, IdentityAndDot) {
  Tape t;
  NodeId a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  NodeId i2 = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  EXPECT_EQ(t.value(ops::matmul(t, a, i2)).values(), (std::vector<double>{1, 2, 3, 4}));
  NodeId r = t.constant(Tensor::matrix(1, 2, {1, 2}));
  NodeId c = t.constant(Tensor::matrix(2, 1, {3, 4}));
  EXPECT_EQ(t.value(ops::matmul(t, r, c)).item(), 11.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  NodeId a = t.constant(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
  EXPECT_THROW(ops::matmul(t, a, a), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  Tape t;
  NodeId la = t.leaf(a), lb = t.leaf(b);
  const auto g = t.backward(ops::sum(t, ops::matmul(t, la, lb)));
  auto f_a = [&](const Tensor& p) {
    Tape u;
    return u.value(ops::sum(u, ops::matmul(u, u.constant(p), u.constant(b)))).item();
  };
  auto f_b = [&](const Tensor& p) {
    Tape u;
    return u.value(ops::sum(u, ops::matmul(u, u.constant(a), u.constant(p)))).item();
  };
  EXPECT_LT(max_rel_error(g.at(la), central_difference(f_a, a)), 1e-6);
  EXPECT_LT(max_rel_error(g.at(lb), central_difference(f_b, b)), 1e-6);
}

TEST(Relu, ValuesAndGradient) {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({-1, 0, 2}));
  NodeId y = ops::relu(t, x);
  EXPECT_EQ(t.value(y).values(), (std::vector<double>{0, 0, 2}));
  const auto g = t.backward(ops::sum(t, y));
  EXPECT_EQ(g.at(x).values(), (std::vector<double>{0, 0, 1}));
}

TEST(Relu, AllNegativeGivesZeroOutputAndGradient) {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({-3, -0.5, -1e-3}));
  NodeId y = ops::relu(t, x);
  for (double v : t.value(y).values()) EXPECT_EQ(v, 0.0);
  const auto g = t.backward(ops::sum(t, y));
  for (double v : g.at(x).values()) EXPECT_EQ(v, 0.0);
}

TEST(Relu, FiniteDifferencesAwayFromKink) {
  Rng rng(2);
  Tensor x = random_tensor({40}, rng);
  for (double& v : x.data()) {
    if (std::abs(v) < 1e-4) v = 0.5;
  }
  const Tensor w = random_tensor({40}, rng);
  auto build = [&](Tape& t, NodeId in) { return ops::weighted_sum(t, ops::relu(t, in), w); };
  Tape t;
  NodeId l = t.leaf(x);
  const Tensor g = t.backward(build(t, l)).at(l);
  auto f = [&](const Tensor& p) {
    Tape u;
    return u.value(build(u, u.constant(p))).item();
  };
  EXPECT_LT(max_rel_error(g, central_difference(f, x)), 1e-6);
}

TEST(Conv2d, OnesTimesTwo) {
  Tape t;
  NodeId x = t.constant(Tensor::filled({1, 3, 3}, 1.0));
  NodeId k = t.constant(Tensor({1, 1, 1, 1}, {2.0}));
  NodeId b = t.constant(Tensor::vector({0.0}));
  const Tensor& y = t.value(ops::conv2d(t, x, k, b));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, SingleValidPosition) {
  Tape t;
  NodeId x = t.constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  NodeId k = t.constant(Tensor({1, 1, 2, 2}, {1, 0, 0, 1}));
  NodeId b = t.constant(Tensor::vector({0.0}));
  const Tensor& y = t.value(ops::conv2d(t, x, k, b));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 5.0);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 5, 4}, rng), k = random_tensor({3, 2, 2, 3}, rng),
               b = random_tensor({3}, rng);
  const Tensor w = random_tensor({3, 4, 2}, rng);
  auto build = [&](Tape& t, NodeId xi, NodeId ki, NodeId bi) {
    return ops::weighted_sum(t, ops::conv2d(t, xi, ki, bi), w);
  };
  Tape t;
  NodeId lx = t.leaf(x), lk = t.leaf(k), lb = t.leaf(b);
  const auto g = t.backward(build(t, lx, lk, lb));
  auto fx = [&](const Tensor& p) {
    Tape u;
    return u.value(build(u, u.constant(p), u.constant(k), u.constant(b))).item();
  };
  auto fk = [&](const Tensor& p) {
    Tape u;
    return u.value(build(u, u.constant(x), u.constant(p), u.constant(b))).item();
  };
  auto fb = [&](const Tensor& p) {
    Tape u;
    return u.value(build(u, u.constant(x), u.constant(k), u.constant(p))).item();
  };
  EXPECT_LT(max_rel_error(g.at(lx), central_difference(fx, x)), 1e-5);
  EXPECT_LT(max_rel_error(g.at(lk), central_difference(fk, k)), 1e-5);
  EXPECT_LT(max_rel_error(g.at(lb), central_difference(fb, b)), 1e-5);
}

TEST(MaxPool, PicksMaximum) {
  Tape t;
  NodeId x = t.constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  const Tensor& y = t.value(ops::maxpool2d(t, x));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 4.0);
}

TEST(MaxPool, TiesRouteToFirstPosition) {
  Tape t;
  NodeId x = t.leaf(Tensor::filled({1, 4, 4}, 3.0));
  NodeId y = ops::maxpool2d(t, x);
  for (double v : t.value(y).data()) EXPECT_EQ(v, 3.0);
  const Tensor g = t.backward(ops::sum(t, y)).at(x);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(g[i * 4 + j], (i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0) << i << "," << j;
    }
  }
}

TEST(MaxPool, OddSizeFloorsAndGradientChecks) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 5, 5}, rng);  // continuous values: no ties
  Tape t;
  NodeId l = t.leaf(x);
  NodeId y = ops::maxpool2d(t, l);
  EXPECT_EQ(t.value(y).shape(), (Shape{2, 2, 2}));
  const Tensor w = random_tensor({2, 2, 2}, rng);
  auto build = [&](Tape& u, NodeId in) { return ops::weighted_sum(u, ops::maxpool2d(u, in), w); };
  Tape t2;
  NodeId l2 = t2.leaf(x);
  const Tensor g = t2.backward(build(t2, l2)).at(l2);
  auto f = [&](const Tensor& p) {
    Tape u;
    return u.value(build(u, u.constant(p))).item();
  };
  EXPECT_LT(max_rel_error(g, central_difference(f, x)), 1e-6);
}

TEST(LogSoftmax, ClosedForms) {
  Tape t;
  const double ln2 = std::log(2.0);
  auto ls = [&](std::vector<double> z) {
    return t.value(ops::log_softmax(t, t.constant(Tensor::vector(std::move(z))))).values();
  };
  auto a = ls({0, 0});
  EXPECT_NEAR(a[0], -ln2, 1e-15);
  EXPECT_NEAR(a[1], -ln2, 1e-15);
  auto b = ls({1000, 1000});
  EXPECT_NEAR(b[0], -ln2, 1e-15);
  EXPECT_NEAR(b[1], -ln2, 1e-15);
  auto c = ls({ln2, 0});
  EXPECT_NEAR(c[0], std::log(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(c[1], std::log(1.0 / 3.0), 1e-15);
}

TEST(LogSoftmax, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor z = random_tensor({3, 4}, rng, 3.0), w = random_tensor({3, 4}, rng);
  auto build = [&](Tape& u, NodeId in) { return ops::weighted_sum(u, ops::log_softmax(u, in), w); };
  Tape t;
  NodeId l = t.leaf(z);
  const Tensor g = t.backward(build(t, l)).at(l);
  auto f = [&](const Tensor& p) {
    Tape u;
    return u.value(build(u, u.constant(p))).item();
  };
  EXPECT_LT(max_rel_error(g, central_difference(f, z)), 1e-6);
}

TEST(Backward, SquareAndProduct) {
  Tape t;
  NodeId x = t.leaf(Tensor::scalar(3.0));
  EXPECT_EQ(t.backward(ops::mul(t, x, x)).at(x).item(), 6.0);
  Tape u;
  NodeId a = u.leaf(Tensor::scalar(2.0)), b = u.leaf(Tensor::scalar(5.0));
  const auto g = u.backward(ops::mul(u, a, b));
  EXPECT_EQ(g.at(a).item(), 5.0);
  EXPECT_EQ(g.at(b).item(), 2.0);
}

TEST(Backward, NonScalarSeedThrows) {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(t.backward(x), DomainError);
}

TEST(Backward, VectorJacobianProductIsLinear) {
  Rng rng(6);
  const Tensor x = random_tensor({2, 3}, rng), w = random_tensor({3, 4}, rng);
  Tape t;
  NodeId lx = t.leaf(x);
  NodeId y = ops::log_softmax(t, ops::matmul(t, lx, t.constant(w)));
  const Tensor u1 = random_tensor({2, 4}, rng), u2 = random_tensor({2, 4}, rng);
  Tensor both = u1;
  both += u2;
  const Tensor g1 = t.backward(y, u1).at(lx), g2 = t.backward(y, u2).at(lx);
  const Tensor g12 = t.backward(y, both).at(lx);
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-12);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(seed, 0));
    const Tensor x = random_tensor({1, 3}, rng);
    const Tensor w1 = random_tensor({3, 5}, rng), w2 = random_tensor({5, 4}, rng),
                 w3 = random_tensor({4, 2}, rng);
    auto build = [&](Tape& t, NodeId p1) {
      NodeId h = ops::relu(t, ops::matmul(t, t.constant(x), p1));
      h = ops::relu(t, ops::matmul(t, h, t.constant(w2)));
      h = ops::log_softmax(t, ops::matmul(t, h, t.constant(w3)));
      return ops::weighted_sum(t, h, Tensor::matrix(1, 2, {1.0, 0.0}));
    };
    Tape t;
    NodeId l = t.leaf(w1);
    const Tensor g = t.backward(build(t, l)).at(l);
    auto f = [&](const Tensor& p) {
      Tape u;
      return u.value(build(u, u.constant(p))).item();
    };
    EXPECT_LT(max_rel_error(g, central_difference(f, w1), 1e-6), 1e-5) << "seed " << seed;
  }
}

TEST(GradCheck, LinearAndQuadratic) {
  const Tensor w = Tensor::vector({1.5, -2.0, 0.25});
  auto linear = [&](Tape& t, NodeId x) { return ops::weighted_sum(t, x, w); };
  EXPECT_LT(grad_check(linear, Tensor::vector({0.3, 0.1, -4.0})), 1e-10);
  auto quadratic = [](Tape& t, NodeId x) { return ops::sum(t, ops::mul(t, x, x)); };
  EXPECT_LT(grad_check(quadratic, Tensor::vector({0.0, 0.0, 0.0})), 1e-8);
}

TEST(GradCheck, RandomMlp) {
  Rng rng(7);
  const Tensor x = random_tensor({1, 2}, rng), w2 = random_tensor({6, 3}, rng);
  auto mlp = [&](Tape& t, NodeId w1) {
    NodeId h = ops::relu(t, ops::matmul(t, t.constant(x), w1));
    return ops::sum(t, ops::log_softmax(t, ops::matmul(t, h, t.constant(w2))));
  };
  EXPECT_LT(grad_check(mlp, random_tensor({2, 6}, rng), 1e-5), 1e-5);
}

TEST(Tape, NonFiniteValuesRejected) {
  Tape t;
  EXPECT_THROW(t.leaf(Tensor::scalar(std::nan(""))), DomainError);
}
