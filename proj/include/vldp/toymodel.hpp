#pragma once

#include <cmath>
#include <limits>
#include <utility>

#include "vldp/error.hpp"
#include "vldp/model.hpp"
#include "vldp/ratefn.hpp"

namespace vldp {

/// Uncorrelated SABR toy model: dS = X S dW, sigma(t, u) = exp(-t/2 + u), f_hat = f.
struct ToyParams {
  double T = 1.0;
  double k = 0.1;
};

inline ModelSpec toy_model_spec(double T) {
  require(T > 0.0, ErrorCode::domain, "toy model horizon must be > 0");
  ModelSpec s;
  s.name = "toy_sabr";
  s.m = 1;
  s.vol.family = VolFamily::toy;
  s.vol.d = 1;
  s.vol.m = 1;
  s.vol.x = Vec::Zero(1);
  s.drift = VectorField::zero(1);
  AffineForm f;
  f.phi = Phi::exp;
  f.scale = 1.0;
  f.time_coef = -0.5;
  f.weights = {1.0};
  s.volmat = MatrixField::scaled(ScalarFn(f), Mat::Identity(1, 1));
  s.C = Mat::Zero(1, 1);
  s.s0 = Vec::Ones(1);
  s.horizon = T;
  return s;
}

inline Model toy_model(double T) { return Model(toy_model_spec(T)); }

/// Largest admissible log-moneyness for the closed-form bounds.
inline double toy_k_max(double T) { return std::sqrt(-std::expm1(-T) / (2.0 * T * std::exp(1.0))); }

inline void check_toy(const ToyParams& p) {
  require(std::isfinite(p.T) && p.T > 0.0, ErrorCode::domain, "T must be > 0");
  require(std::isfinite(p.k) && p.k > 0.0, ErrorCode::domain, "k must be > 0");
}

inline void check_window(const ToyParams& p) {
  check_toy(p);
  if (!(p.k < toy_k_max(p.T))) fail(ErrorCode::out_of_range, "k lies outside the validity window of the bounds");
}

/// I~_T(k) = 1/2 inf_f [ k^2 / int e^{-t + 2 f} + int f'^2 ].
inline RateResult toy_rate(const ToyParams& p, const RateOptions& opts = {}) {
  check_toy(p);
  return itilde_terminal(toy_model(p.T), p.k, p.T, opts);
}

/// Value of the toy objective at the trial f = 0.
inline double toy_zero_trial(const ToyParams& p) { return 0.5 * p.k * p.k / -std::expm1(-p.T); }

inline double h(double u) { return u * std::exp(u); }

/// Inverse of u e^u on [0, inf) by Newton. The start min(y, log(1 + y)) lies
/// above the root, and h is convex increasing there, so iterates decrease
/// monotonically.
inline double h_inverse(double y) {
  require(!std::isnan(y) && y >= 0.0, ErrorCode::domain, "h_inverse needs y >= 0");
  if (y == 0.0) return 0.0;
  if (std::isinf(y)) return y;
  double u = std::min(y, std::log1p(y));
  const double tol = std::max(1e-13, 4.0 * std::numeric_limits<double>::epsilon() * y);
  for (int it = 0; it < 200; ++it) {
    const double e = std::exp(u);
    const double r = u * e - y;
    if (std::abs(r) < tol) return u;
    double next = u - r / (e * (1.0 + u));
    if (!(next >= 0.0)) next = 0.5 * u;
    if (next == u) return u;
    u = next;
  }
  fail(ErrorCode::non_convergence, "h_inverse Newton iteration did not converge", u * std::exp(u) - y);
}

/// Lagrange series sum_{n>=1} (-1)^{n-1} n^{n-1} / n! y^n, radius 1/e. Terms are
/// added until they fall below 1e-17 relative, at most `max_terms`.
inline double h_inverse_series(double y, int max_terms = 200) {
  require(!std::isnan(y) && y >= 0.0, ErrorCode::domain, "series needs y >= 0");
  if (!(y < std::exp(-1.0))) fail(ErrorCode::domain, "series diverges for y >= 1/e");
  if (y == 0.0) return 0.0;
  const double ly = std::log(y);
  double sum = 0.0;
  for (int n = 1; n <= max_terms; ++n) {
    const double mag = std::exp((n - 1) * std::log(static_cast<double>(n)) - std::lgamma(n + 1.0) + n * ly);
    sum += (n % 2 == 1) ? mag : -mag;
    if (mag < 1e-17 * std::abs(sum)) break;
  }
  return sum;
}

/// a(k) = h^{-1}(2 T k^2 / (1 - e^{-T})) / 2, the root of a e^{2a} = T k^2 / (1 - e^{-T}).
inline double a_of_k(const ToyParams& p) {
  check_toy(p);
  return 0.5 * h_inverse(2.0 * p.T * p.k * p.k / -std::expm1(-p.T));
}

/// k^2 (e - 1) / (2 e (1 - e^{-T})) <= I~_T(k) <= k^2 / (1 - e^{-T}).
inline std::pair<double, double> rate_bounds(const ToyParams& p) {
  check_window(p);
  const double e = std::exp(1.0);
  const double q = -std::expm1(-p.T);
  const double k2 = p.k * p.k;
  return {k2 * (e - 1.0) / (2.0 * e * q), k2 / q};
}

/// sqrt(1 - e^{-T}) / sqrt(2T) <= lim V <= sqrt(e (1 - e^{-T})) / sqrt(T (e - 1)).
inline std::pair<double, double> iv_limit_bounds(const ToyParams& p) {
  check_window(p);
  const double e = std::exp(1.0);
  const double q = -std::expm1(-p.T);
  return {std::sqrt(q / (2.0 * p.T)), std::sqrt(e * q / (p.T * (e - 1.0)))};
}

}  // namespace vldp
