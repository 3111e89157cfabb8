#include <gtest/gtest.h>

#include <cmath>

#include "mistseg/errors.hpp"
#include "mistseg/poecvae.hpp"
#include "oracles.hpp"

using namespace mistseg;
using namespace mistseg::poe;

namespace {

DiagGaussian g1(double mu, double var) {
  return {Tensor({1, 1}, std::vector<double>{mu}), Tensor({1, 1}, std::vector<double>{std::log(var)})};
}

double var_of(const DiagGaussian& g) { return std::exp(g.log_var.item()); }

}  // namespace

TEST(Poe, TwoStandardExpertsAndPrior) {
  const DiagGaussian e[] = {g1(0, 1), g1(0, 1)};
  const auto p = poe_combine(e, true);
  EXPECT_NEAR(p.mu.item(), 0.0, 1e-15);
  EXPECT_NEAR(var_of(p), 1.0 / 3.0, 1e-15);
}

TEST(Poe, SymmetricMeansCancel) {
  const DiagGaussian e[] = {g1(1, 1), g1(-1, 1)};
  const auto p = poe_combine(e, true);
  EXPECT_NEAR(p.mu.item(), 0.0, 1e-15);
  EXPECT_NEAR(var_of(p), 1.0 / 3.0, 1e-15);
}

TEST(Poe, SingleExpertWithPrior) {
  const DiagGaussian e[] = {g1(2, 0.5)};
  const auto p = poe_combine(e, true);
  EXPECT_NEAR(p.mu.item(), 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(var_of(p), 1.0 / 3.0, 1e-14);
}

TEST(Poe, PriorOnlyAndEmptyErrors) {
  const auto p = poe_combine({}, true, {1, 3});
  for (double v : p.mu.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.log_var.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(poe_combine({}, false), std::invalid_argument);
}

TEST(Poe, DominatedExpertContributesLittle) {
  const DiagGaussian both[] = {g1(0.7, 0.4), g1(-3.0, std::exp(8.0))};
  const DiagGaussian one[] = {g1(0.7, 0.4)};
  const auto a = poe_combine(both, true), b = poe_combine(one, true);
  // Precision e^-8 shifts the result by a relative amount of the same order.
  EXPECT_NEAR(a.mu.item(), b.mu.item(), 2e-3);
  EXPECT_NEAR(var_of(a), var_of(b), 2e-4);
}

TEST(Poe, OrderDoesNotMatter) {
  const DiagGaussian ab[] = {g1(0.3, 2.0), g1(-1.1, 0.7)};
  const DiagGaussian ba[] = {g1(-1.1, 0.7), g1(0.3, 2.0)};
  EXPECT_NEAR(poe_combine(ab, true).mu.item(), poe_combine(ba, true).mu.item(), 1e-15);
  EXPECT_NEAR(poe_combine(ab, true).log_var.item(), poe_combine(ba, true).log_var.item(), 1e-15);
}

TEST(Poe, MatchesGridDensityProduct) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<DiagGaussian> experts;
    for (int k = 0; k < 3; ++k) experts.push_back(g1(rng.uniform(-2, 2), rng.uniform(0.2, 3)));
    const auto p = poe_combine(experts, false);
    const double mu = p.mu.item(), var = var_of(p);
    const double lo = -8, hi = 8, step = 1e-3;
    std::vector<double> grid, dens;
    double z = 0.0;
    for (double x = lo; x <= hi; x += step) {
      double d = 1.0;
      for (const auto& e : experts) {
        const double ev = var_of(e), em = e.mu.item();
        d *= std::exp(-(x - em) * (x - em) / (2 * ev)) / std::sqrt(2 * M_PI * ev);
      }
      grid.push_back(x);
      dens.push_back(d);
      z += d * step;
    }
    for (std::size_t i = 0; i < grid.size(); i += 97) {
      const double closed = std::exp(-(grid[i] - mu) * (grid[i] - mu) / (2 * var)) / std::sqrt(2 * M_PI * var);
      EXPECT_NEAR(dens[i] / z, closed, 1e-6);
    }
  }
}

TEST(Kl, Identities) {
  Rng rng(2);
  DiagGaussian p{rng.normal_tensor({3, 8}), rng.uniform_tensor({3, 8}, -3, 3)};
  EXPECT_EQ(kl_diag(p, p).item(), 0.0);
  EXPECT_NEAR(kl_diag(g1(1, 1), g1(0, 1)).item(), 0.5, 1e-15);
  EXPECT_THROW(kl_diag(p, g1(0, 1)), ShapeError);
  for (int trial = 0; trial < 50; ++trial) {
    DiagGaussian q{rng.normal_tensor({2, 4}), rng.uniform_tensor({2, 4}, -3, 3)};
    DiagGaussian r{rng.normal_tensor({2, 4}), rng.uniform_tensor({2, 4}, -3, 3)};
    EXPECT_GT(kl_diag(q, r).item(), 0.0);
  }
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    DiagGaussian q{rng.normal_tensor({1, 2}), rng.uniform_tensor({1, 2}, -1, 1)};
    DiagGaussian p{rng.normal_tensor({1, 2}), rng.uniform_tensor({1, 2}, -1, 1)};
    const std::size_t n = 1000000;
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t d = 0; d < 2; ++d) {
        const double qm = q.mu.data()[d], qv = std::exp(q.log_var.data()[d]);
        const double pm = p.mu.data()[d], pv = std::exp(p.log_var.data()[d]);
        const double z = qm + std::sqrt(qv) * rng.normal();
        acc += -0.5 * std::log(qv) - (z - qm) * (z - qm) / (2 * qv) + 0.5 * std::log(pv) + (z - pm) * (z - pm) / (2 * pv);
      }
    }
    EXPECT_NEAR(kl_diag(q, p).item(), acc / static_cast<double>(n), 1e-2);
  }
}

TEST(Kl, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> in = {rng.normal_tensor({2, 3}), rng.uniform_tensor({2, 3}, -1, 1), rng.normal_tensor({2, 3}),
                              rng.uniform_tensor({2, 3}, -1, 1)};
    EXPECT_LT(oracle::grad_check([](auto& v) { return kl_diag({v[0], v[1]}, {v[2], v[3]}); }, in), 1e-4);
  }
}

TEST(Reparameterize, Examples) {
  Rng rng(5);
  DiagGaussian g{rng.normal_tensor({1, 4}), rng.normal_tensor({1, 4})};
  const auto z0 = reparameterize(g, Tensor::zeros({1, 4}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(z0.z.data()[i], g.mu.data()[i]);
  const auto z1 = reparameterize({Tensor::zeros({1, 4}), Tensor::zeros({1, 4})}, Tensor::ones({1, 4}));
  for (double v : z1.z.data()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(reparameterize(g, Tensor::zeros({1, 3})), ShapeError);
}

TEST(Reparameterize, SampleMoments) {
  Rng rng(6);
  const double mu = 0.4, var = 2.5;
  const std::size_t n = 100000;
  DiagGaussian g{Tensor({n, 1}, mu), Tensor({n, 1}, std::log(var))};
  const auto z = reparameterize(g, rng.normal_tensor({n, 1}));
  double m = 0, s = 0;
  for (double v : z.z.data()) m += v / n;
  for (double v : z.z.data()) s += (v - m) * (v - m) / (n - 1);
  EXPECT_NEAR(m, mu, 3 * std::sqrt(var / n));
  EXPECT_NEAR(s, var, 3 * var * std::sqrt(2.0 / (n - 1)));
}

TEST(Reparameterize, GradientReachesParameters) {
  Rng rng(7);
  Tensor noise = rng.normal_tensor({2, 3});
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(oracle::grad_check([&](auto& v) { return sum(square(reparameterize({v[0], v[1]}, noise).z)); },
                                 {rng.normal_tensor({2, 3}), rng.normal_tensor({2, 3})}),
              1e-4);
  }
}

TEST(ExpertNet, ProducesValidGaussian) {
  Rng rng(8);
  ExpertNet e(3, 64, 8, rng);
  const auto g = e.forward(rng.uniform_tensor({2, 3, 64, 64}, 0, 1));
  EXPECT_EQ(g.mu.shape(), (Shape{2, 8}));
  for (double v : g.log_var.data()) {
    EXPECT_LE(v, kLogVarClamp);
    EXPECT_GE(v, -kLogVarClamp);
  }
  EXPECT_THROW(e.forward(Tensor({1, 1, 64, 64})), ShapeError);
}

TEST(JointPrior, StandardExpertsGiveOneThird) {
  Rng rng(9);
  ModalityExperts nets{ExpertNet(3, 32, 4, rng), ExpertNet(1, 32, 4, rng)};
  // Zero heads make each expert N(0, 1).
  NamedParams params;
  nets.collect(params, "p");
  for (auto& [name, t] : params)
    if (name.find(".mu.") != std::string::npos || name.find(".logvar.") != std::string::npos)
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  const auto g = joint_prior(rng.normal_tensor({1, 3, 32, 32}), rng.normal_tensor({1, 1, 32, 32}), nets);
  for (double v : g.mu.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.log_var.data()) EXPECT_NEAR(std::exp(v), 1.0 / 3.0, 1e-15);
}

TEST(JointPosterior, AlignsLabel) {
  Rng rng(10);
  ModalityExperts nets{ExpertNet(4, 32, 4, rng), ExpertNet(2, 32, 4, rng)};
  Tensor xr = rng.normal_tensor({2, 3, 32, 32}), xd = rng.normal_tensor({2, 1, 32, 32});
  const auto g = joint_posterior(xr, xd, rng.uniform_tensor({2, 1, 32, 32}, 0, 1), nets);
  EXPECT_EQ(g.mu.shape(), (Shape{2, 4}));
  EXPECT_THROW(joint_posterior(xr, xd, Tensor({2, 1, 16, 32}), nets), ShapeError);
}

TEST(Elbo, Arithmetic) {
  EXPECT_DOUBLE_EQ(elbo_loss(Tensor::scalar(1.0), Tensor::scalar(0.2), 1.0, 5.0, 0.5).item(), 1.5);
  EXPECT_DOUBLE_EQ(elbo_loss(Tensor::scalar(0.8), Tensor::scalar(3.0), 1.0, 5.0, 0.0).item(), 0.8);
  DiagGaussian p = g1(0.3, 0.6);
  EXPECT_DOUBLE_EQ(elbo_loss(Tensor::scalar(0.8), p, p).item(), 0.8);
  EXPECT_THROW(elbo_loss(Tensor::scalar(1.0), Tensor::scalar(1.0), 1.0, 5.0, 1.5), std::invalid_argument);
}

TEST(Elbo, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> in = {rng.uniform_tensor({1}, 0, 1), rng.normal_tensor({2, 3}), rng.uniform_tensor({2, 3}, -1, 1),
                              rng.normal_tensor({2, 3}), rng.uniform_tensor({2, 3}, -1, 1)};
    EXPECT_LT(oracle::grad_check([](auto& v) { return elbo_loss(sum(square(v[0])), {v[1], v[2]}, {v[3], v[4]}, 1.0, 5.0, 0.7); },
                                 in),
              1e-4);
  }
}

TEST(Anneal, LinearRampOverFirstFifth) {
  EXPECT_EQ(linear_anneal(0, 100), 0.0);
  EXPECT_DOUBLE_EQ(linear_anneal(10, 100), 0.5);
  EXPECT_EQ(linear_anneal(20, 100), 1.0);
  EXPECT_EQ(linear_anneal(90, 100), 1.0);
}

TEST(LatentInjector, ContractAndShape) {
  Rng rng(12);
  LatentInjector inj(6, 3, rng);
  Tensor top = rng.normal_tensor({2, 6, 4, 4});
  EXPECT_EQ(inj(top, rng.normal_tensor({2, 3})).shape(), top.shape());
  std::fill(inj.conv().weight.mutable_data().begin(), inj.conv().weight.mutable_data().end(), 0.0);
  for (std::size_t c = 0; c < 6; ++c) inj.conv().bias.mutable_data()[c] = 0.1 * static_cast<double>(c);
  Tensor out = inj(top, Tensor::zeros({2, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t p = 0; p < 16; ++p) EXPECT_DOUBLE_EQ(out.data()[(n * 6 + c) * 16 + p], 0.1 * static_cast<double>(c));
}

TEST(LatentInjector, GradientReachesLatent) {
  Rng rng(13);
  LatentInjector inj(2, 3, rng);
  Tensor top = rng.normal_tensor({1, 2, 3, 3});
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_LT(oracle::grad_check([&](auto& v) { return sum(square(inj(top, v[0]))); }, {rng.normal_tensor({1, 3})}), 1e-4);
  }
}
