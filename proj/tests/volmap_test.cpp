#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "vldp/config.hpp"
#include "vldp/kernels.hpp"
#include "vldp/volmap.hpp"

using namespace vldp;

namespace {

VolProcessSpec aux_only(ScalarFn drift, ScalarFn disp, double v0) {
  VolProcessSpec s;
  s.family = VolFamily::fractional_nongaussian;
  s.k = 1;
  s.drift_kernels = {KernelSpec::brownian()};
  s.u = {UComponent{}};
  s.aux_drift = VectorField({std::move(drift)});
  s.aux_disp = MatrixField::entrywise(1, 1, {std::move(disp)});
  s.v0 = Vec::Constant(1, v0);
  return s;
}

VolProcessSpec gaussian_rl(double h) {
  VolProcessSpec s;
  s.family = VolFamily::gaussian;
  s.noise_kernels = {KernelSpec::riemann_liouville(h)};
  return s;
}

VolProcessSpec volterra_nonlinear() {
  VolProcessSpec s;
  s.family = VolFamily::volterra_sde;
  s.x = Vec::Constant(1, 0.1);
  s.kernel_a = KernelSpec::brownian();
  s.kernel_c = KernelSpec::riemann_liouville(0.3);
  s.coef_drift = VectorField({ScalarFn::affine(0.05, {-0.5})});
  AffineForm f;
  f.phi = Phi::exp;
  f.scale = 0.3;
  f.weights = {0.5};
  s.coef_disp = MatrixField::entrywise(1, 1, {ScalarFn(f)});
  return s;
}

Control smooth_control(const TimeGrid& g, int m) {
  Control c(g, m);
  for (int j = 0; j < g.steps(); ++j)
    for (int i = 0; i < m; ++i) c.dot(j, i) = std::cos(g.node(j) + 0.5 * g.step() + i) * (1.0 + 0.3 * i);
  return c;
}

std::vector<std::pair<std::string, VolProcessSpec>> families() {
  std::vector<std::pair<std::string, VolProcessSpec>> out;
  out.emplace_back("toy", VolProcessSpec{});
  out.emplace_back("gaussian", gaussian_rl(0.3));
  auto refl = gaussian_rl(0.7);
  refl.reflect = true;
  refl.x = Vec::Constant(1, 0.05);
  out.emplace_back("gaussian_reflect", refl);
  for (const char* name : {"rough_gauss", "frac_heston", "mixed_demo", "reflected_ou"})
    out.emplace_back(name, io::preset(name).vol);
  out.emplace_back("volterra", volterra_nonlinear());
  auto mg = gaussian_rl(0.3);
  mg.noise_kernels = {KernelSpec::molchan_golosov(0.3)};
  out.emplace_back("molchan_golosov", mg);
  return out;
}

}  // namespace

TEST(SolvePsi, ZeroCoefficientsKeepV0) {
  const auto s = aux_only(ScalarFn::constant(0.0), ScalarFn::constant(0.0), 0.7);
  const PathFn p = solve_psi(s, smooth_control(TimeGrid(1.0, 20), 1));
  EXPECT_EQ((p.values.array() - 0.7).abs().maxCoeff(), 0.0);
}

TEST(SolvePsi, UnitDispersionIntegratesControl) {
  const auto s = aux_only(ScalarFn::constant(0.0), ScalarFn::constant(1.0), 0.2);
  const TimeGrid g(2.0, 40);
  const PathFn p = solve_psi(s, Control::constant(g, Eigen::VectorXd::Constant(1, 0.75)));
  for (int j = 0; j <= 40; ++j) EXPECT_NEAR(p.values(j, 0), 0.2 + 0.75 * g.node(j), 1e-13);
}

TEST(SolvePsi, CirSkeletonFirstOrder) {
  const double kappa = 1.5, theta = 0.04, v0 = 0.1;
  AffineForm disp;
  disp.phi = Phi::sqrt_pos;
  disp.scale = 0.3;
  disp.weights = {1.0};
  const auto s = aux_only(ScalarFn::affine(kappa * theta, {-kappa}), ScalarFn(disp), v0);
  double prev = 1.0;
  for (int n : {50, 100, 200, 400}) {
    const TimeGrid g(1.0, n);
    const PathFn p = solve_psi(s, Control(g, 1));
    double err = 0.0;
    for (int j = 0; j <= n; ++j)
      err = std::max(err, std::abs(p.values(j, 0) - (theta + (v0 - theta) * std::exp(-kappa * g.node(j)))));
    EXPECT_LT(err, 0.1 * g.step());
    EXPECT_GT(prev / err, 1.8);
    prev = err;
  }
}

TEST(GammaY, GaussianBrownianConstantControl) {
  VolProcessSpec s;
  s.family = VolFamily::gaussian;
  s.d = 2;
  s.m = 3;
  s.x = Vec::Zero(2);
  s.noise_kernels.assign(6, KernelSpec::brownian());
  const TimeGrid g(1.0, 16);
  const PathFn eta = gamma_y(s, Control::constant(g, Eigen::VectorXd::Ones(3)));
  for (int j = 0; j <= 16; ++j)
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(eta.values(j, i), 3.0 * g.node(j), 1e-13);
}

TEST(GammaY, ToyIsTheControlPath) {
  const TimeGrid g(1.0, 32);
  const Control f = smooth_control(g, 1);
  EXPECT_LT(gamma_y(VolProcessSpec{}, f).sup_distance(integrate(f)), 1e-14);
  EXPECT_LT(hat_map(VolProcessSpec{}, f).sup_distance(integrate(f)), 1e-14);
}

TEST(GammaY, VolterraWithKernelDispersionMatchesOperator) {
  VolProcessSpec s;
  s.family = VolFamily::volterra_sde;
  s.kernel_a = KernelSpec::brownian();
  s.kernel_c = KernelSpec::riemann_liouville(0.3);
  s.coef_drift = VectorField::zero(1);
  s.coef_disp = MatrixField::entrywise(1, 1, {ScalarFn::constant(1.0)});
  const TimeGrid g(1.0, 64);
  const PathFn eta = gamma_y(s, Control::constant(g, Eigen::VectorXd::Ones(1)));
  PathFn one(g, 1);
  one.values.setOnes();
  const PathFn oracle = hs_apply(s.kernel_c, one, g);
  EXPECT_LT(eta.sup_distance(oracle), 1e-12);
}

TEST(HatMap, ReflectionOfNegativeDriftIsZero) {
  VolProcessSpec s;
  s.family = VolFamily::gaussian;
  s.noise_kernels = {KernelSpec::brownian()};
  s.reflect = true;
  const TimeGrid g(1.0, 20);
  const PathFn out = hat_map(s, Control::constant(g, Eigen::VectorXd::Constant(1, -1.0)));
  EXPECT_EQ(out.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HatMap, GaussianZeroControlIsInitialCondition) {
  auto s = gaussian_rl(0.3);
  s.x = Vec::Constant(1, -0.4);
  const PathFn out = hat_map(s, Control(TimeGrid(1.0, 10), 1));
  EXPECT_EQ((out.values.array() + 0.4).abs().maxCoeff(), 0.0);
}

TEST(HatMap, GaussianIsAffine) {
  auto s = gaussian_rl(0.3);
  s.x = Vec::Constant(1, 0.2);
  const TimeGrid g(1.0, 50);
  std::mt19937_64 rng(7);
  Control f(g, 1), h(g, 1);
  f.dot = check::random_vector(50, rng, 1.0);
  h.dot = check::random_vector(50, rng, 1.0);
  const double a = 1.7, b = -0.6;
  Control comb(g, 1);
  comb.dot = a * f.dot + b * h.dot;
  const Eigen::MatrixXd z = hat_map(s, Control(g, 1)).values;
  const Eigen::MatrixXd lhs = hat_map(s, comb).values - z;
  const Eigen::MatrixXd rhs = a * (hat_map(s, f).values - z) + b * (hat_map(s, h).values - z);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(HatMap, MixedIsSumOfParts) {
  const auto mixed = io::preset("mixed_demo").vol;
  VolProcessSpec gauss = mixed;
  gauss.family = VolFamily::gaussian;
  gauss.drift_kernels.clear();
  VolProcessSpec frac = mixed;
  frac.family = VolFamily::fractional_nongaussian;
  frac.noise_kernels.clear();
  const Control f = smooth_control(TimeGrid(1.0, 40), 1);
  const Eigen::MatrixXd sum = gamma_y(gauss, f).values + gamma_y(frac, f).values;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(41, 1, mixed.x(0));
  EXPECT_LT((gamma_y(mixed, f).values - (sum - x)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(HatMap, GridRefinementIsFirstOrder) {
  // sup-norm change at shared nodes when the grid is doubled
  for (const char* name : {"frac_heston", "reflected_ou"}) {
    const auto s = io::preset(name).vol;
    auto diff = [&](int n) {
      const PathFn a = hat_map(s, smooth_control(TimeGrid(1.0, n), 1));
      const PathFn b = hat_map(s, smooth_control(TimeGrid(1.0, 2 * n), 1));
      double d = 0.0;
      for (int j = 0; j <= n; ++j) d = std::max(d, std::abs(a.values(j, 0) - b.values(2 * j, 0)));
      return d;
    };
    const double d1 = diff(50), d2 = diff(100), d3 = diff(200);
    EXPECT_LT(d1, 0.05) << name;
    EXPECT_GT(d1 / d2, 1.5) << name;
    EXPECT_GT(d2 / d3, 1.5) << name;
  }
}

TEST(Validate, ReflectionNeedsScalarProcess) {
  VolProcessSpec s;
  s.family = VolFamily::gaussian;
  s.d = 2;
  s.x = Vec::Zero(2);
  s.noise_kernels.assign(2, KernelSpec::brownian());
  s.reflect = true;
  try {
    validate(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_domain);
  }
}

TEST(Validate, DimensionMismatch) {
  VolProcessSpec s = gaussian_rl(0.3);
  s.noise_kernels.push_back(KernelSpec::brownian());
  EXPECT_THROW(validate(s), Error);
}

TEST(Skeleton, VolterraBlowUpIsReported) {
  VolProcessSpec s;
  s.family = VolFamily::volterra_sde;
  s.x = Vec::Constant(1, 1.0);
  s.kernel_a = KernelSpec::brownian();
  s.kernel_c = KernelSpec::brownian();
  AffineForm sq;
  sq.phi = Phi::square;
  sq.scale = 50.0;
  sq.weights = {1.0};
  s.coef_drift = VectorField({ScalarFn(sq)});
  s.coef_disp = MatrixField::entrywise(1, 1, {ScalarFn::constant(0.0)});
  try {
    hat_map(s, Control(TimeGrid(1.0, 50), 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::divergence || e.code() == ErrorCode::non_convergence);
  }
}

class VjpTest : public ::testing::TestWithParam<int> {};

TEST_P(VjpTest, MatchesFiniteDifferences) {
  const auto fam = families()[GetParam()];
  const VolProcessSpec& s = fam.second;
  const TimeGrid g(1.0, 24);
  const Skeleton sk(s, g);
  std::mt19937_64 rng(100 + GetParam());
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd fdot = check::random_vector(g.steps() * s.m, rng, 0.8).reshaped(g.steps(), s.m);
    const Eigen::MatrixXd w = check::random_vector(g.nodes() * s.d, rng, 1.0).reshaped(g.nodes(), s.d);
    HatTape tape;
    sk.hat(fdot, &tape);
    const Eigen::MatrixXd adj = sk.vjp(fdot, tape, w);
    Eigen::MatrixXd fd(g.steps(), s.m);
    for (int i = 0; i < fdot.size(); ++i) {
      const double h = 1e-6, x = fdot.data()[i];
      fdot.data()[i] = x + h;
      const double up = (sk.hat(fdot).array() * w.array()).sum();
      fdot.data()[i] = x - h;
      const double dn = (sk.hat(fdot).array() * w.array()).sum();
      fdot.data()[i] = x;
      fd.data()[i] = (up - dn) / (2 * h);
    }
    EXPECT_LT(check::rel_error(adj.reshaped(), fd.reshaped()), 1e-5) << fam.first << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(Families, VjpTest, ::testing::Range(0, 9),
                         [](const ::testing::TestParamInfo<int>& info) { return families()[info.param].first; });
