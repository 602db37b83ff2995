#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dcem/errors.hpp"
#include "dcem/schedule.hpp"
#include "oracles.hpp"

using namespace dcem;

namespace {
const ScheduleParams kP{};
}

TEST(Mean, IdentityAtZero) {
  auto x0 = torch::randn({2, 8, 5}, torch::kDouble);
  auto y = torch::randn({2, 8, 5}, torch::kDouble);
  auto m = interpolate_mean(x0, y, 0.0, kP);
  EXPECT_TRUE(torch::equal(m, x0));
}

TEST(Mean, EqualEndpoints) {
  auto x = torch::randn({2, 4, 3}, torch::kDouble);
  for (double t : {0.1, 0.5, 1.0})
    EXPECT_LT((interpolate_mean(x, x, t, kP) - x).abs().max().item<double>(), 1e-15);
}

TEST(Mean, CleanCoefficientAtOne) {
  const long double expected = std::exp(-1.5L);
  EXPECT_NEAR(clean_coefficient(1.0, kP), static_cast<double>(expected), 1e-15);
  EXPECT_NEAR(clean_coefficient(1.0, kP), 0.22313, 1e-5);
  EXPECT_DOUBLE_EQ(interpolate_mean(1.0, 0.0, 1.0, kP), clean_coefficient(1.0, kP));
}

TEST(Mean, ShapeMismatchIsContractError) {
  auto a = torch::zeros({2, 3});
  auto b = torch::zeros({3, 2});
  EXPECT_THROW(interpolate_mean(a, b, 0.5, kP), ContractError);
}

TEST(StdDev, ZeroAtZero) { EXPECT_EQ(std_dev(0.0, kP), 0.0); }

TEST(StdDev, MatchesOdeOracle) {
  std::vector<double> ts;
  for (int i = 0; i <= 100; ++i) ts.push_back(i / 100.0);
  auto v = oracle::variance_ode(ts, kP.gamma, kP.sigma_min, kP.sigma_max);
  for (std::size_t i = 1; i < ts.size(); ++i) {
    const double got = variance(ts[i], kP);
    EXPECT_LT(std::abs(got - static_cast<double>(v[i])) / static_cast<double>(v[i]), 1e-6)
        << "t=" << ts[i];
  }
  EXPECT_NEAR(static_cast<double>(v.back()), 0.1513, 5e-5);
  EXPECT_NEAR(variance(1.0, kP), 0.1513, 5e-5);
}

TEST(StdDev, StrictlyIncreasingAndContinuous) {
  double prev = std_dev(0.0, kP);
  for (int i = 1; i <= 1000; ++i) {
    const double cur = std_dev(i / 1000.0, kP);
    EXPECT_GT(cur, prev);
    EXPECT_LT(cur - prev, 0.05);
    prev = cur;
  }
}

TEST(StdDev, OutOfRangeIsDomainError) {
  EXPECT_THROW(std_dev(-0.01, kP), DomainError);
  EXPECT_THROW(std_dev(1.01, kP), DomainError);
  EXPECT_THROW(std_dev(std::nan(""), kP), DomainError);
}

TEST(SampleForward, ZeroTimeGivesCleanSignal) {
  auto x0 = torch::randn({2, 6, 4}, torch::kDouble);
  auto y = torch::randn({2, 6, 4}, torch::kDouble);
  auto z = torch::randn({2, 6, 4}, torch::kDouble);
  EXPECT_TRUE(torch::equal(sample_forward(x0, y, 0.0, z, kP), x0));
}

TEST(SampleForward, ZeroNoiseGivesMean) {
  auto x0 = torch::randn({2, 6, 4}, torch::kDouble);
  auto y = torch::randn({2, 6, 4}, torch::kDouble);
  auto z = torch::zeros({2, 6, 4}, torch::kDouble);
  EXPECT_TRUE(torch::allclose(sample_forward(x0, y, 0.7, z, kP), interpolate_mean(x0, y, 0.7, kP),
                              0, 1e-15));
}

TEST(SampleForward, EmpiricalVarianceMatches) {
  torch::manual_seed(7);
  const double t = 0.6;
  auto x0 = torch::full({100000}, 0.3, torch::kDouble);
  auto y = torch::full({100000}, -0.2, torch::kDouble);
  auto z = torch::randn({100000}, torch::kDouble);
  auto x = sample_forward(x0, y, t, z, kP);
  const double var = x.var().item<double>();
  EXPECT_LT(std::abs(var - variance(t, kP)) / variance(t, kP), 0.02);
  EXPECT_NEAR(x.mean().item<double>(), interpolate_mean(0.3, -0.2, t, kP), 0.01);
}

TEST(SampleForward, PerItemTimes) {
  auto x0 = torch::randn({3, 2, 4, 4}, torch::kDouble);
  auto y = torch::randn({3, 2, 4, 4}, torch::kDouble);
  auto z = torch::randn({3, 2, 4, 4}, torch::kDouble);
  auto t = torch::tensor({0.0, 0.5, 1.0}, torch::kDouble);
  auto x = sample_forward(x0, y, t.reshape({3, 1, 1, 1}), z, kP);
  for (int i = 0; i < 3; ++i) {
    const double ti = t[i].item<double>();
    auto expect = interpolate_mean(x0[i], y[i], ti, kP) + std_dev(ti, kP) * z[i];
    EXPECT_LT((x[i] - expect).abs().max().item<double>(), 1e-14);
  }
}

TEST(LossWeight, ValueAtOne) {
  const long double e = std::exp(1.0L);
  EXPECT_NEAR(loss_weight(1.0), static_cast<double>(1.0L / (e - 1.0L)), 1e-15);
  EXPECT_NEAR(loss_weight(1.0), 0.58198, 1e-5);
}

TEST(LossWeight, ClampedNearZero) {
  EXPECT_NEAR(loss_weight(0.001), 1.0 / 0.001 - 0.5, 1e-3);
  EXPECT_NEAR(loss_weight(0.001), 999.5, 0.01);
  EXPECT_EQ(loss_weight(0.0), loss_weight(kLossWeightMinT));
  EXPECT_TRUE(std::isfinite(loss_weight(0.0)));
}

TEST(LossWeight, PositiveAndDecreasing) {
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 1000; ++i) {
    const double w = loss_weight(i / 1000.0);
    EXPECT_GT(w, 0.0);
    EXPECT_LT(w, prev);
    prev = w;
  }
}

TEST(LossWeight, TensorMatchesScalar) {
  auto t = torch::tensor({0.0, 0.0005, 0.25, 1.0}, torch::kDouble);
  auto w = loss_weight(t);
  for (int i = 0; i < 4; ++i)
    EXPECT_DOUBLE_EQ(w[i].item<double>(), loss_weight(t[i].item<double>()));
}

TEST(Grid, Examples) {
  EXPECT_EQ(make_grid(2).values(), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(make_grid(3).values(), (std::vector<double>{1.0, 0.5, 0.0}));
  auto g = make_grid(10);
  ASSERT_EQ(g.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(g[i], 1.0 - i / 9.0, 1e-15);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[9], 0.0);
}

TEST(Grid, Tail) {
  auto g = make_grid(10);
  auto tail = g.tail(2);
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_NEAR(tail[0], 1.0 / 9.0, 1e-15);
  EXPECT_EQ(tail[1], 0.0);
  EXPECT_THROW(g.tail(11), DomainError);
}

TEST(Grid, TooFewStepsIsDomainError) {
  EXPECT_THROW(make_grid(1), DomainError);
  EXPECT_THROW(make_grid(0), DomainError);
}

TEST(Grid, RejectsBadValues) {
  EXPECT_THROW(TimestepGrid({1.0, 0.5, 0.5, 0.0}), ContractError);
  EXPECT_THROW(TimestepGrid({0.9, 0.0}), ContractError);
}

TEST(ScheduleParams, Validation) {
  EXPECT_NO_THROW(kP.validate());
  EXPECT_THROW((ScheduleParams{0.0, 0.05, 0.5}.validate()), DomainError);
  EXPECT_THROW((ScheduleParams{1.5, 0.5, 0.05}.validate()), DomainError);
}
