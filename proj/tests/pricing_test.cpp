#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "vldp/config.hpp"
#include "vldp/pricing.hpp"
#include "vldp/toymodel.hpp"

using namespace vldp;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Model bs(double sigma0 = 0.2, double rho = 0.0) {
  ModelSpec s = io::preset_bs_const(sigma0);
  s.C(0, 0) = rho;
  return Model(s);
}

Vec v1(double a) { return Vec::Constant(1, a); }

ExitDomain up_half_space(double h) { return ExitDomain::half_space(v1(1.0), h); }

}  // namespace

TEST(CallAsymptote, ConstantSigma) {
  const auto r = call_asymptote(bs(0.2), std::exp(0.1), 1.0);
  EXPECT_NEAR(r.rate, 0.01 / (2 * 0.04), 1e-7);
  EXPECT_EQ(r.quantity, Quantity::call);
}

TEST(CallAsymptote, AtTheMoneyIsZero) { EXPECT_EQ(call_asymptote(bs(0.2), 1.0, 1.0).rate, 0.0); }

TEST(CallAsymptote, ToyInsideBounds) {
  const auto r = call_asymptote(toy_model(1.0), std::exp(0.1), 1.0);
  EXPECT_GE(r.rate, 0.0050000);
  EXPECT_LE(r.rate, 0.0158198);
}

TEST(CallAsymptote, VanishingVolatilityNeedsOutOfMoneyStrike) {
  const Model m(io::preset("frac_heston"));
  try {
    call_asymptote(m, 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::out_of_range);
  }
  EXPECT_THROW(call_asymptote(bs(), -1.0, 1.0), Error);
}

TEST(ImpliedVol, ConstantSigmaIsExact) {
  for (double k : {0.05, 0.1, 0.2}) {
    const auto r = implied_vol_limit(bs(0.2, -0.4), k, 1.0);
    ASSERT_TRUE(r.limit_value.has_value());
    EXPECT_NEAR(*r.limit_value, 0.2, 1e-8) << k;
    EXPECT_NEAR(*r.limit_value * std::sqrt(2.0 * 1.0 * r.rate), k, 1e-10);
  }
}

TEST(ImpliedVol, ToyInsideBounds) {
  const auto r = implied_vol_limit(toy_model(1.0), 0.1, 1.0);
  EXPECT_GE(*r.limit_value, 0.56219);
  EXPECT_LE(*r.limit_value, 1.0);
}

TEST(ImpliedVol, Preconditions) {
  ModelSpec s = io::preset_bs_const();
  s.s0(0) = 2.0;
  EXPECT_THROW(implied_vol_limit(Model(s), 0.1, 1.0), Error);
  ModelSpec d = io::preset_bs_const();
  d.drift = VectorField({ScalarFn::constant(0.2)});
  try {
    implied_vol_limit(Model(d), 0.1, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_limit);
  }
}

TEST(AsianAsymptote, ZeroRegime) {
  for (double K : {0.5, 0.9, 1.0}) EXPECT_EQ(asian_asymptote(bs(), K, 1.0).rate, 0.0) << K;
}

TEST(AsianAsymptote, NondecreasingInStrike) {
  RateOptions o;
  o.n_steps = 100;
  double prev = 0.0;
  for (double K : {1.05, 1.1, 1.2}) {
    const auto r = asian_asymptote(bs(), K, 1.0, o);
    EXPECT_TRUE(r.detail.converged);
    EXPECT_GT(r.rate, prev) << K;
    prev = r.rate;
  }
}

TEST(AsianAsymptote, SmallStrikeExpansion) {
  // for constant sigma the cheapest path to a small average excess a is
  // g(t) = a (2t/T - t^2/T^2) * 3/2 with cost 3 a^2 / (2 sigma^2 T)
  RateOptions o;
  o.n_steps = 200;
  const double K = 1.001, a = std::log(K);
  const auto r = asian_asymptote(bs(), K, 1.0, o);
  EXPECT_NEAR(r.rate, 3.0 * a * a / (2 * 0.04), 0.01 * r.rate);
}

TEST(AsianAsymptote, ConstraintIsActive) {
  RateOptions o;
  o.n_steps = 100;
  const auto r = asian_asymptote(bs(), 1.1, 1.0, o);
  const PathFn g = phi_functional(bs(), *r.detail.minimizer_l, r.detail.minimizer_f);
  const double avg = AsianConstraint(1.0, std::log(1.1), 1.0).average(g.values);
  EXPECT_GE(avg, 1.1 - 1e-9);
  EXPECT_LT(avg, 1.1 + 1e-4);
}

TEST(ExitAsymptote, BrownianHalfSpace) {
  for (double h : {0.1, 0.18}) {
    const auto r = exit_asymptote(bs(0.2), up_half_space(h), 1.0);
    EXPECT_NEAR(r.rate, h * h / (2 * 0.04), 1e-3 * h * h / 0.08) << h;
    EXPECT_TRUE(r.detail.converged);
  }
}

TEST(ExitAsymptote, BoundaryAtStartIsZero) {
  EXPECT_EQ(exit_asymptote(bs(), up_half_space(0.0), 1.0).rate, 0.0);
  EXPECT_THROW(exit_asymptote(bs(), up_half_space(-0.1), 1.0), Error);
}

TEST(ExitAsymptote, ShorterHorizonNeverCheaper) {
  RateOptions o;
  o.n_steps = 100;
  const double full = exit_asymptote(bs(), up_half_space(0.1), 1.0, o).rate;
  const double half = exit_asymptote(bs(), up_half_space(0.1), 0.5, o).rate;
  EXPECT_GE(half, full);
  EXPECT_NEAR(half, 2.0 * full, 1e-3 * half);
}

TEST(ExitAsymptote, BoxPicksNearestFace) {
  RateOptions o;
  o.n_steps = 100;
  const auto r = exit_asymptote(bs(), ExitDomain::box(v1(-0.3), v1(0.1)), 1.0, o);
  EXPECT_NEAR(r.rate, 0.125, 1e-3 * 0.125);
  EXPECT_EQ(r.face, "upper[0]");
  const double shrunk = exit_asymptote(bs(), ExitDomain::box(v1(-0.05), v1(0.1)), 1.0, o).rate;
  EXPECT_LE(shrunk, r.rate + 1e-9);
}

TEST(ExitAsymptote, TwoAssetBox) {
  ModelSpec s;
  s.m = 2;
  s.vol.m = 2;
  s.vol.family = VolFamily::gaussian;
  s.vol.noise_kernels = {KernelSpec::brownian(), std::nullopt};
  s.drift = VectorField::zero(2);
  s.volmat = MatrixField::scaled(ScalarFn::constant(0.2), Mat::Identity(2, 2));
  s.C = Mat::Zero(2, 2);
  s.s0 = Vec::Ones(2);
  Vec lo(2), hi(2);
  lo << -kInf, -0.15;
  hi << 0.2, kInf;
  RateOptions o;
  o.n_steps = 60;
  const auto r = exit_asymptote(Model(s), ExitDomain::box(lo, hi), 1.0, o);
  EXPECT_NEAR(r.rate, 0.15 * 0.15 / 0.08, 1e-3 * 0.28);
  EXPECT_EQ(r.face, "lower[1]");
}

TEST(BarrierAsymptote, StartOnBarrierIsZero) {
  EXPECT_EQ(barrier_asymptote(bs(), ExitDomain::box(v1(0.0), v1(1.0)), 1.0).rate, 0.0);
}

TEST(BarrierAsymptote, UpBarrier) {
  const double H = 1.2;
  const auto r = barrier_asymptote(bs(), ExitDomain::box(v1(0.0), v1(H)), 1.0);
  const double exact = std::log(H) * std::log(H) / 0.08;
  EXPECT_NEAR(r.rate, exact, 1e-3 * exact);
  EXPECT_EQ(r.quantity, Quantity::barrier);
  EXPECT_DOUBLE_EQ(r.diagnostics.at("discount_prefactor"), 1.0);
}

TEST(BarrierAsymptote, WideningNeverDecreasesRate) {
  RateOptions o;
  o.n_steps = 100;
  double prev = 0.0;
  for (double H : {1.1, 1.2, 1.4}) {
    const double v = barrier_asymptote(bs(), ExitDomain::box(v1(0.5), v1(H)), 1.0, o).rate;
    EXPECT_GE(v, prev - 1e-12);
    prev = v;
  }
}

TEST(BarrierAsymptote, ObliqueHalfSpaceUnsupported) {
  Vec n(2);
  n << 1.0, 1.0;
  try {
    log_domain(ExitDomain::half_space(n, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_domain);
  }
}

TEST(ExitConstraint, SoftMaxNeverExceedsMax) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n;
  const Face f{v1(1.0), 0.1, "up"};
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd g(21, 1);
    g(0, 0) = 0.0;
    for (int a = 1; a <= 20; ++a) g(a, 0) = g(a - 1, 0) + 0.05 * n(rng);
    const double hard = ExitConstraint(f, v1(0.0), 20, 0.0).value(g, nullptr);
    for (double kappa : {100.0, 1e4})
      EXPECT_LE(ExitConstraint(f, v1(0.0), 20, kappa).value(g, nullptr), hard + 1e-15);
  }
}
