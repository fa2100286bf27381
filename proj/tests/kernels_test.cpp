#include "vldp/kernels.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/hypergeometric_pFq.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace vldp;

namespace {

// Midpoint rule after the substitution u = tb - (tb) * (1 - y)^q, which
// clusters nodes near the singular end. Independent of the tanh-sinh path.
double brute_slice_distance_rl(double h, double ta, double tb, int n) {
  const double g = boost::math::tgamma(h + 0.5);
  auto k = [&](double x) { return x > 0 ? std::pow(x, h - 0.5) / g : 0.0; };
  const double q = 4.0;
  double head = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = (i + 0.5) / n;
    const double u = tb - tb * std::pow(1.0 - y, q);
    const double du = tb * q * std::pow(1.0 - y, q - 1.0) / n;
    const double d = k(ta - u) - k(tb - u);
    head += d * d * du;
  }
  // tail int_0^{ta - tb} k(x)^2 dx with x = (ta - tb) y^q
  double tail = 0.0;
  const double w = ta - tb;
  for (int i = 0; i < n; ++i) {
    const double y = (i + 0.5) / n;
    const double x = w * std::pow(y, q);
    tail += k(x) * k(x) * w * q * std::pow(y, q - 1.0) / n;
  }
  return head + tail;
}

}  // namespace

TEST(EvalKernel, BrownianIsIndicator) {
  EXPECT_DOUBLE_EQ(eval_kernel(KernelSpec::brownian(), 1.0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(eval_kernel(KernelSpec::brownian(), 0.5, 1.0), 0.0);
}

TEST(EvalKernel, RiemannLiouvilleHalfIsBrownian) {
  EXPECT_NEAR(eval_kernel(KernelSpec::riemann_liouville(0.5), 1.0, 0.3), 1.0, 1e-15);
}

TEST(EvalKernel, RiemannLiouvilleMatchesGammaCrossCheck) {
  const double expected = std::pow(0.5, 0.2) / boost::math::tgamma(1.2);
  EXPECT_NEAR(eval_kernel(KernelSpec::riemann_liouville(0.7), 1.0, 0.5), expected, 1e-14);
}

TEST(EvalKernel, VolterraPropertyForAllKinds) {
  auto table = std::make_shared<KernelTable>();
  table->t_max = 1.0;
  table->size = 3;
  table->values.assign(9, 2.0);
  const std::vector<KernelSpec> kinds = {
      KernelSpec::brownian(), KernelSpec::riemann_liouville(0.3), KernelSpec::riemann_liouville(0.8),
      KernelSpec::molchan_golosov(0.3), KernelSpec::molchan_golosov(0.7), KernelSpec::logarithmic(2.0),
      KernelSpec::tabulated(table)};
  const TimeGrid grid(0.9, 9);
  for (const auto& k : kinds)
    for (int i = 0; i <= grid.steps(); ++i)
      for (int j = i; j <= grid.steps(); ++j) EXPECT_EQ(eval_kernel(k, grid.node(i), grid.node(j)), 0.0);
}

TEST(EvalKernel, InvalidParameters) {
  try {
    eval_kernel(KernelSpec::riemann_liouville(1.2), 1.0, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_kernel);
  }
  EXPECT_THROW(eval_kernel(KernelSpec::logarithmic(1.0), 0.5, 0.1), Error);
  EXPECT_THROW(eval_kernel(KernelSpec::molchan_golosov(0.0), 0.5, 0.1), Error);
  EXPECT_THROW(eval_kernel(KernelSpec::logarithmic(2.0), 1.5, 0.1), Error);
}

TEST(EvalKernel, MolchanGolosovMatchesHypergeometricShape) {
  // K_H(t,s) is proportional to (t-s)^{H-1/2} (s/t)^{1/2-H} 2F1(1/2-H, 1, H+1/2, (t-s)/t).
  for (double h : {0.3, 0.7}) {
    const auto k = KernelSpec::molchan_golosov(h);
    auto shape = [&](double t, double s) {
      const double z = (t - s) / t;
      const double f = boost::math::hypergeometric_pFq({0.5 - h, 1.0}, {h + 0.5}, z);
      return std::pow(t - s, h - 0.5) * std::pow(s / t, 0.5 - h) * f;
    };
    const double ref = eval_kernel(k, 1.0, 0.4) / shape(1.0, 0.4);
    for (auto [t, s] : {std::pair{0.9, 0.1}, {0.5, 0.45}, {0.8, 0.3}, {1.0, 0.95}})
      EXPECT_NEAR(eval_kernel(k, t, s) / shape(t, s), ref, 1e-8 * std::abs(ref)) << "H=" << h;
  }
}

TEST(SliceVariance, ClosedForms) {
  EXPECT_DOUBLE_EQ(slice_variance(KernelSpec::brownian(), 0.7), 0.7);
  EXPECT_EQ(slice_variance(KernelSpec::riemann_liouville(0.3), 0.0), 0.0);
  for (double h : {0.3, 0.5, 0.7})
    for (double t : {0.25, 1.0}) {
      const double g = boost::math::tgamma(h + 0.5);
      const double expected = std::pow(t, 2 * h) / (2 * h * g * g);
      EXPECT_NEAR(slice_variance(KernelSpec::riemann_liouville(h), t), expected, 1e-6 * expected);
    }
  // int_0^t beta x^{-1} log(1/x)^{-beta-1} dx = log(1/t)^{-beta}
  EXPECT_NEAR(slice_variance(KernelSpec::logarithmic(2.0), 0.5), std::pow(std::log(2.0), -2.0), 1e-10);
}

TEST(SliceVariance, MolchanGolosovGivesFbmVariance) {
  for (double h : {0.3, 0.7})
    for (double t : {0.5, 1.0})
      EXPECT_NEAR(slice_variance(KernelSpec::molchan_golosov(h), t), std::pow(t, 2 * h), 1e-6) << h << " " << t;
}

TEST(SliceVariance, MolchanGolosovCovarianceMatchesFbm) {
  const double h = 0.7, t = 1.0, s = 0.6;
  const auto k = KernelSpec::molchan_golosov(h);
  auto f = [&](double u) { return eval_kernel(k, t, u) * eval_kernel(k, s, u); };
  const double cov = boost::math::quadrature::tanh_sinh<double>().integrate(f, 0.0, s, 1e-10);
  const double expected = 0.5 * (std::pow(t, 2 * h) + std::pow(s, 2 * h) - std::pow(t - s, 2 * h));
  EXPECT_NEAR(cov, expected, 1e-6);
}

TEST(SliceVariance, DivergentLogSliceIsInadmissible) {
  try {
    slice_variance(KernelSpec::logarithmic(2.0), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::admissibility);
  }
}

TEST(HsApply, ConstantInputs) {
  const TimeGrid grid(1.0, 50);
  PathFn one(grid, 1);
  one.values.setOnes();
  EXPECT_NEAR(hs_apply(KernelSpec::brownian(), one, grid).values(50, 0), 1.0, 1e-14);
  const double rl = 1.0 / (boost::math::tgamma(1.2) * 1.2);
  EXPECT_NEAR(hs_apply(KernelSpec::riemann_liouville(0.7), one, grid).values(50, 0), rl, 1e-13);
  PathFn zero(grid, 1);
  EXPECT_EQ(hs_apply(KernelSpec::riemann_liouville(0.3), zero, grid).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HsApply, DimensionMismatch) {
  PathFn f(TimeGrid(1.0, 10), 1);
  try {
    hs_apply(KernelSpec::brownian(), f, TimeGrid(1.0, 20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(HsApply, LinearityOnRandomInputs) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  const TimeGrid grid(1.0, 40);
  for (const auto& k : {KernelSpec::riemann_liouville(0.3), KernelSpec::molchan_golosov(0.7),
                        KernelSpec::logarithmic(3.0)}) {
    const TimeGrid g = k.kind == KernelKind::logarithmic ? TimeGrid(0.9, 40) : grid;
    PathFn f(g, 1), h(g, 1), mix(g, 1);
    for (int i = 0; i < g.nodes(); ++i) {
      f.values(i, 0) = z(rng);
      h.values(i, 0) = z(rng);
    }
    const double a = z(rng), b = z(rng);
    mix.values = a * f.values + b * h.values;
    const PathFn lhs = hs_apply(k, mix, g);
    PathFn rhs(g, 1);
    rhs.values = a * hs_apply(k, f, g).values + b * hs_apply(k, h, g).values;
    EXPECT_LT(lhs.sup_distance(rhs), 1e-10);
  }
}

TEST(KernelOperator, TransposeIsAdjoint) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  const TimeGrid grid(1.0, 16);
  for (const auto& k : {KernelSpec::brownian(), KernelSpec::riemann_liouville(0.3), KernelSpec::molchan_golosov(0.3)}) {
    const KernelOperator op(k, grid);
    Eigen::VectorXd c(16), a(17);
    for (auto& v : c) v = z(rng);
    for (auto& v : a) v = z(rng);
    EXPECT_NEAR(a.dot(op.apply(c)), op.apply_transpose(a).dot(c), 1e-12);
  }
}

TEST(KernelOperator, SingularDiagonalCellIsExact) {
  // First-lag weight of RL H=0.2 equals dt^{H+1/2}/Gamma(H+3/2).
  const TimeGrid grid(1.0, 10);
  const KernelOperator op(KernelSpec::riemann_liouville(0.2), grid);
  EXPECT_NEAR(op.weight(5, 4), std::pow(0.1, 0.7) / boost::math::tgamma(1.7), 1e-15);
  const KernelOperator lg(KernelSpec::logarithmic(2.0), TimeGrid(0.5, 10));
  // int_0^dt tau(x) dx is finite and positive despite the log singularity
  EXPECT_GT(lg.weight(1, 0), 0.0);
  EXPECT_TRUE(std::isfinite(lg.weight(1, 0)));
}

TEST(Tabulated, BilinearReproducesAffineKernel) {
  auto table = std::make_shared<KernelTable>();
  table->t_max = 1.0;
  table->size = 11;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) table->values.push_back(1.0 + 0.1 * i + 0.05 * j);
  const auto k = KernelSpec::tabulated(table);
  EXPECT_NEAR(eval_kernel(k, 0.73, 0.21), 1.0 + 0.73 + 0.21 * 0.5, 1e-12);
  EXPECT_EQ(eval_kernel(k, 0.2, 0.7), 0.0);
}

TEST(L2Modulus, BrownianAndZero) {
  const TimeGrid grid(1.0, 100);
  EXPECT_NEAR(l2_modulus(KernelSpec::brownian(), 0.1, grid), 0.1, 1e-12);
  EXPECT_EQ(l2_modulus(KernelSpec::riemann_liouville(0.3), 0.0, grid), 0.0);
}

TEST(L2Modulus, RiemannLiouvilleAgainstBruteForce) {
  const double h = 0.3, tau = 0.05;
  const TimeGrid grid(1.0, 40);
  const double m = l2_modulus(KernelSpec::riemann_liouville(h), tau, grid);
  double brute = 0.0;
  for (int lag = 1; lag <= 2; ++lag)
    for (int b = 0; b + lag <= 40; b += 1)
      brute = std::max(brute, brute_slice_distance_rl(h, grid.node(b + lag), grid.node(b), 20000));
  EXPECT_NEAR(m, brute, 2e-3 * brute);
  const double g = boost::math::tgamma(h + 0.5);
  const double scale = std::pow(tau, 2 * h) / (2 * h * g * g);
  EXPECT_GT(m, scale / 2);
  EXPECT_LT(m, 2 * scale);
}

TEST(L2Modulus, MonotoneInTau) {
  const TimeGrid grid(1.0, 20);
  for (const auto& k : {KernelSpec::riemann_liouville(0.3), KernelSpec::riemann_liouville(0.8)}) {
    double prev = 0.0;
    for (int lag = 0; lag <= 6; ++lag) {
      const double m = l2_modulus(k, lag * grid.step(), grid);
      EXPECT_GE(m, prev);
      prev = m;
    }
  }
}
