#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mistseg/errors.hpp"
#include "mistseg/miclub.hpp"
#include "oracles.hpp"

using namespace mistseg;
using namespace mistseg::mi;

namespace {

double density_log(double y, double mu, double log_var) {
  const double var = std::exp(log_var);
  return std::log(std::exp(-(y - mu) * (y - mu) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var));
}

}  // namespace

TEST(PoolFeature, Examples) {
  EXPECT_EQ(pool_feature(Tensor({2, 3, 3}, 1.25)).shape(), (Shape{1, 2}));
  for (const auto out = pool_feature(Tensor({2, 3, 3}, 1.25)); double v : out.data()) EXPECT_DOUBLE_EQ(v, 1.25);
  Tensor onehot({1, 2, 2}, std::vector<double>{0, 0, 4, 0});
  EXPECT_DOUBLE_EQ(pool_feature(onehot).item(), 1.0);
  Rng rng(1);
  Tensor f = rng.normal_tensor({3, 2, 4, 4});
  Tensor p = pool_feature(f);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < 16; ++k) s += f.data()[(n * 2 + c) * 16 + k];
      EXPECT_NEAR(p.data()[n * 2 + c], s / 16.0, 1e-14);
    }
}

TEST(GaussianLogProb, Examples) {
  DiagGaussian std1{Tensor({1, 1}, 0.0), Tensor({1, 1}, 0.0)};
  EXPECT_NEAR(gaussian_log_prob(std1, Tensor({1, 1}, 0.0)).item(), -0.918938533204672, 1e-12);
  DiagGaussian g{Tensor({1, 1}, 0.7), Tensor({1, 1}, 1.3)};
  EXPECT_NEAR(gaussian_log_prob(g, Tensor({1, 1}, 0.7)).item(), -0.5 * std::log(2 * std::numbers::pi) - 0.65, 1e-12);
  Rng rng(2);
  Tensor mu = rng.normal_tensor({4, 3}), lv = rng.uniform_tensor({4, 3}, -2, 2), y = rng.normal_tensor({4, 3});
  const auto lp = gaussian_log_prob({mu, lv}, y);
  for (std::size_t i = 0; i < 4; ++i) {
    double ref = 0.0;
    for (std::size_t d = 0; d < 3; ++d) ref += density_log(y.data()[i * 3 + d], mu.data()[i * 3 + d], lv.data()[i * 3 + d]);
    EXPECT_NEAR(lp.data()[i], ref, 1e-12);
  }
  EXPECT_THROW(gaussian_log_prob({mu, lv}, Tensor({4, 2}, 0.0)), ShapeError);
}

TEST(ApproxNet, LogVarIsBounded) {
  Rng rng(3);
  ApproxNet q(4, 4, rng);
  const auto g = q.forward(mul_scalar(rng.normal_tensor({50, 4}), 100.0));
  for (double v : g.log_var.data()) {
    EXPECT_GE(v, -kLogVarScale);
    EXPECT_LE(v, kLogVarScale);
  }
}

TEST(Vclub, SingleSampleIsZero) {
  Rng rng(4);
  ApproxNet q(3, 3, rng);
  EXPECT_EQ(vclub_sampled(rng.normal_tensor({1, 3}), rng.normal_tensor({1, 3}), q).item(), 0.0);
}

TEST(Vclub, XIndependentQCancels) {
  Rng rng(5);
  ApproxNet q(2, 2, rng);
  // Zero first-layer weights make q ignore x.
  for (auto& [name, t] : q.named_parameters())
    if (name.find(".0.weight") != std::string::npos) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  EXPECT_NEAR(vclub_sampled(rng.normal_tensor({7, 2}), rng.normal_tensor({7, 2}), q).item(), 0.0, 1e-12);
}

TEST(Vclub, MatchesTwoLoopFormula) {
  Rng rng(6);
  ApproxNet q(3, 2, rng);
  Tensor x = rng.normal_tensor({5, 3}), y = rng.normal_tensor({5, 2});
  const auto g = q.forward(x);
  double ref = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t k = (i + 1) % 5;
    for (std::size_t d = 0; d < 2; ++d) {
      const double mu = g.mu.data()[i * 2 + d], lv = g.log_var.data()[i * 2 + d];
      ref += density_log(y.data()[i * 2 + d], mu, lv) - density_log(y.data()[k * 2 + d], mu, lv);
    }
  }
  EXPECT_NEAR(vclub_sampled(x, y, q).item(), ref / 5.0, 1e-12);
}

TEST(Vclub, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  ApproxNet q(3, 3, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rng.normal_tensor({4, 3}), y = rng.normal_tensor({4, 3});
    EXPECT_LT(oracle::grad_check([&](auto& v) { return vclub_sampled(v[0], v[1], q); }, {x, y}), 1e-4);
  }
}

TEST(TrainQ, AffineTargetLikelihoodRises) {
  Rng rng(8);
  ApproxNet q(2, 2, rng);
  Adam opt(param_values(q.named_parameters()), {.lr = 1e-2});
  Tensor x = rng.normal_tensor({64, 2});
  Tensor y = add_scalar(mul_scalar(x, 0.8), 0.3);
  std::vector<double> nll;
  for (int i = 0; i < 50; ++i) nll.push_back(train_q_step(x, y, q, opt));
  // Allow small Adam wobbles but require an overall downward trend.
  int rises = 0;
  for (std::size_t i = 1; i < nll.size(); ++i) rises += nll[i] > nll[i - 1] + 1e-3;
  EXPECT_LE(rises, 5);
  EXPECT_LT(nll.back(), nll.front() - 0.5);
}

TEST(TrainQ, IndependentDataGivesUnitGaussian) {
  Rng rng(9);
  ApproxNet q(1, 1, rng);
  Adam opt(param_values(q.named_parameters()), {.lr = 5e-3});
  for (int i = 0; i < 1500; ++i) train_q_step(rng.normal_tensor({256, 1}), rng.normal_tensor({256, 1}), q, opt);
  NoGradGuard guard;
  const auto g = q.forward(rng.normal_tensor({500, 1}));
  double mu = 0.0, lv = 0.0;
  for (std::size_t i = 0; i < 500; ++i) mu += g.mu.data()[i] / 500.0, lv += g.log_var.data()[i] / 500.0;
  EXPECT_NEAR(mu, 0.0, 0.3);
  EXPECT_NEAR(lv, 0.0, 0.3);
}

TEST(TrainQ, ZeroDimensionRejected) {
  Rng rng(10);
  ApproxNet q(1, 1, rng);
  Adam opt(param_values(q.named_parameters()), {});
  EXPECT_THROW(train_q_step(Tensor({2, 0}), Tensor({2, 0}), q, opt), std::exception);
}

TEST(TrainQ, OnlyTouchesQ) {
  Rng rng(11);
  ApproxNet q(2, 2, rng);
  Adam opt(param_values(q.named_parameters()), {.lr = 1e-2});
  Tensor x = rng.normal_tensor({6, 2}).set_requires_grad(true);
  train_q_step(x, rng.normal_tensor({6, 2}), q, opt);
  EXPECT_FALSE(x.has_grad());
}

TEST(MiRegularizer, NoGradientToQ) {
  Rng rng(12);
  ApproxNet q(4, 4, rng);
  Tensor a = rng.normal_tensor({3, 4, 2, 2}).set_requires_grad(true);
  Tensor b = rng.normal_tensor({3, 4, 2, 2}).set_requires_grad(true);
  Tensor loss = mi_regularizer(a, b, q);
  EXPECT_TRUE(std::isfinite(loss.item()));
  backward(loss);
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  for (const auto& [name, t] : q.named_parameters()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) EXPECT_EQ(g, 0.0) << name;
  }
  EXPECT_EQ(mi_regularizer(slice(a, 0, 1), slice(b, 0, 1), q).item(), 0.0);
}

TEST(MiRegularizer, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  ApproxNet q(3, 3, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = rng.normal_tensor({3, 3, 2, 2}), b = rng.normal_tensor({3, 3, 2, 2});
    EXPECT_LT(oracle::grad_check([&](auto& v) { return mi_regularizer(v[0], v[1], q); }, {a, b}), 1e-4);
  }
}

TEST(MiRegularizer, ReducesFeatureCorrelation) {
  // Two linear "branches" read a shared signal; the regularizer should pull
  // their pooled outputs apart relative to training without it.
  auto run = [](double alpha) {
    Rng rng(14);
    Tensor wa = rng.normal_tensor({2, 1}).set_requires_grad(true);
    Tensor wb = rng.normal_tensor({2, 1}).set_requires_grad(true);
    ApproxNet q(1, 1, rng);
    Adam opt({wa, wb}, {.lr = 1e-2});
    Adam qopt(param_values(q.named_parameters()), {.lr = 1e-2});
    auto features = [&](Rng& r, Tensor& fa, Tensor& fb, Tensor& target) {
      Tensor shared = r.normal_tensor({64, 1});
      Tensor own_a = r.normal_tensor({64, 1}), own_b = r.normal_tensor({64, 1});
      fa = matmul(concat({shared, own_a}, 1), wa);
      fb = matmul(concat({shared, own_b}, 1), wb);
      target = add(shared, own_a);
    };
    for (int step = 0; step < 400; ++step) {
      Tensor fa, fb, t;
      features(rng, fa, fb, t);
      train_q_step(fa, fb, q, qopt);
      Tensor loss = add(mean(square(sub(fa, t))), mean(square(sub(fb, t))));
      if (alpha > 0) loss = add(loss, mul_scalar(vclub_sampled(fa, fb, q), alpha));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    NoGradGuard guard;
    Rng eval(99);
    Tensor fa, fb, t;
    features(eval, fa, fb, t);
    double ma = 0, mb = 0, sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < 64; ++i) ma += fa.data()[i] / 64, mb += fb.data()[i] / 64;
    for (std::size_t i = 0; i < 64; ++i) {
      const double da = fa.data()[i] - ma, db = fb.data()[i] - mb;
      sab += da * db, saa += da * da, sbb += db * db;
    }
    return std::fabs(sab / std::sqrt(saa * sbb));
  };
  EXPECT_LT(run(1.0), run(0.0));
}

TEST(GaussianMi, Analytic) {
  EXPECT_NEAR(gaussian_mi(0.5), 0.143841036, 1e-8);
  EXPECT_NEAR(gaussian_mi(0.9), 0.830366, 1e-6);
}
