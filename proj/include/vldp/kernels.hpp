#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/paths.hpp"

namespace vldp {

enum class KernelKind { brownian, riemann_liouville, fbm_molchan_golosov, logarithmic, tabulated };

/// Square table of K(t_i, s_j) on the uniform grid t_i = i * t_max / (size - 1).
/// Entries with j >= i are ignored.
struct KernelTable {
  double t_max = 1.0;
  int size = 0;
  std::vector<double> values;  // row-major, size * size

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * size + j]; }
};

struct KernelSpec {
  KernelKind kind = KernelKind::brownian;
  double hurst = 0.5;
  double beta = 2.0;
  std::shared_ptr<const KernelTable> table;

  static KernelSpec brownian() { return {}; }
  static KernelSpec riemann_liouville(double h) { return {KernelKind::riemann_liouville, h, 2.0, nullptr}; }
  static KernelSpec molchan_golosov(double h) { return {KernelKind::fbm_molchan_golosov, h, 2.0, nullptr}; }
  static KernelSpec logarithmic(double b) { return {KernelKind::logarithmic, 0.5, b, nullptr}; }
  static KernelSpec tabulated(std::shared_ptr<const KernelTable> t) {
    return {KernelKind::tabulated, 0.5, 2.0, std::move(t)};
  }
};

inline std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::brownian: return "brownian";
    case KernelKind::riemann_liouville: return "riemann_liouville";
    case KernelKind::fbm_molchan_golosov: return "fbm_molchan_golosov";
    case KernelKind::logarithmic: return "logarithmic";
    case KernelKind::tabulated: return "tabulated";
  }
  return "unknown";
}

inline void validate(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::brownian: return;
    case KernelKind::riemann_liouville:
    case KernelKind::fbm_molchan_golosov:
      if (!(k.hurst > 0.0 && k.hurst < 1.0)) fail(ErrorCode::invalid_kernel, "hurst must lie in (0, 1)");
      return;
    case KernelKind::logarithmic:
      if (!(k.beta > 1.0)) fail(ErrorCode::invalid_kernel, "logarithmic kernel needs beta > 1");
      return;
    case KernelKind::tabulated:
      if (!k.table || k.table->size < 2 || !(k.table->t_max > 0.0) ||
          k.table->values.size() != static_cast<std::size_t>(k.table->size) * k.table->size)
        fail(ErrorCode::invalid_kernel, "tabulated kernel needs a square table with at least 2 nodes");
      return;
  }
}

/// K(t, s) depends on t - s only.
inline bool is_convolution(const KernelSpec& k) {
  return k.kind == KernelKind::brownian || k.kind == KernelKind::riemann_liouville ||
         k.kind == KernelKind::logarithmic;
}

/// The kernel is unbounded as s -> t.
inline bool has_singular_diagonal(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::riemann_liouville:
    case KernelKind::fbm_molchan_golosov: return k.hurst < 0.5;
    case KernelKind::logarithmic: return true;
    default: return false;
  }
}

namespace detail {

inline boost::math::quadrature::tanh_sinh<double>& tanh_sinh_rule() {
  thread_local boost::math::quadrature::tanh_sinh<double> rule;
  return rule;
}

inline double molchan_golosov_constant(double h) {
  using boost::math::beta;
  if (h > 0.5) return std::sqrt(h * (2.0 * h - 1.0) / beta(h - 0.5, 2.0 - 2.0 * h));
  return std::sqrt(2.0 * h / ((1.0 - 2.0 * h) * beta(h + 0.5, 1.0 - 2.0 * h)));
}

// int_s^t (u - s)^{H-3/2} u^{H-1/2} du for H > 1/2, and
// int_s^t u^{H-3/2} (u - s)^{H-1/2} du for H < 1/2. Both reduce to incomplete
// beta functions after u = s / z; for H > 1/2 the second parameter 1 - 2H is
// negative and one recurrence step shifts it back into range.
inline double molchan_golosov_inner(double h, double t, double s) {
  const double scale = std::pow(s, 2.0 * h - 1.0);
  if (h < 0.5) return scale * boost::math::betac(1.0 - 2.0 * h, h + 0.5, s / t);
  const double a = h - 0.5, b = 1.0 - 2.0 * h, w = s / t;
  const double shifted = boost::math::betac(b + 1.0, a, w);
  return scale * ((a + b) * shifted - std::pow(1.0 - w, a) * std::pow(w, b)) / b;
}

inline double molchan_golosov(double h, double t, double s) {
  if (h == 0.5) return 1.0;
  const double c = molchan_golosov_constant(h);
  if (h > 0.5) return c * std::pow(s, 0.5 - h) * molchan_golosov_inner(h, t, s);
  const double a = h - 0.5;
  return c * (std::pow(t / s, a) * std::pow(t - s, a) - a * std::pow(s, -a) * molchan_golosov_inner(h, t, s));
}

inline double log_kernel(double beta, double x) {
  if (x >= 1.0) fail(ErrorCode::invalid_kernel, "logarithmic kernel requires t - s < 1");
  const double l = -std::log(x);
  return std::sqrt(beta / x * std::pow(l, -beta - 1.0));
}

inline double tabulated(const KernelTable& tab, double t, double s) {
  const double h = tab.t_max / (tab.size - 1);
  if (t > tab.t_max * (1.0 + 1e-12)) fail(ErrorCode::invalid_kernel, "time outside the tabulated kernel range");
  auto locate = [&](double x, int& idx, double& w) {
    double pos = std::clamp(x / h, 0.0, static_cast<double>(tab.size - 1));
    idx = std::min(static_cast<int>(pos), tab.size - 2);
    w = pos - idx;
  };
  int i, j;
  double wt, ws;
  locate(t, i, wt);
  locate(s, j, ws);
  return (1 - wt) * (1 - ws) * tab.at(i, j) + (1 - wt) * ws * tab.at(i, j + 1) +
         wt * (1 - ws) * tab.at(i + 1, j) + wt * ws * tab.at(i + 1, j + 1);
}

// Convolution profile k(x) = K(x, 0) for x > 0.
inline double profile(const KernelSpec& k, double x) {
  switch (k.kind) {
    case KernelKind::brownian: return 1.0;
    case KernelKind::riemann_liouville: return std::pow(x, k.hurst - 0.5) / std::tgamma(k.hurst + 0.5);
    case KernelKind::logarithmic: return log_kernel(k.beta, x);
    default: break;
  }
  fail(ErrorCode::invalid_kernel, "not a convolution kernel");
}

}  // namespace detail

/// K(t, s); zero whenever s >= t.
inline double eval_kernel(const KernelSpec& k, double t, double s) {
  validate(k);
  if (s >= t) return 0.0;
  switch (k.kind) {
    case KernelKind::brownian: return 1.0;
    case KernelKind::riemann_liouville:
    case KernelKind::logarithmic: return detail::profile(k, t - s);
    case KernelKind::fbm_molchan_golosov:
      if (s <= 0.0) return k.hurst > 0.5 ? std::numeric_limits<double>::infinity() : 0.0;
      return detail::molchan_golosov(k.hurst, t, s);
    case KernelKind::tabulated: return detail::tabulated(*k.table, t, s);
  }
  return 0.0;
}

/// int_a^b K(t, s) ds for 0 <= a < b <= t.
inline double integrate_kernel(const KernelSpec& k, double t, double a, double b) {
  if (b <= a) return 0.0;
  switch (k.kind) {
    case KernelKind::brownian: return b - a;
    case KernelKind::riemann_liouville: {
      const double e = k.hurst + 0.5;
      return (std::pow(t - a, e) - std::pow(t - b, e)) / std::tgamma(k.hurst + 1.5);
    }
    case KernelKind::logarithmic: {
      // lag x = t - s; the integrand is singular at x = 0 only.
      auto f = [&](double x) { return detail::log_kernel(k.beta, x); };
      return detail::tanh_sinh_rule().integrate(f, t - b, t - a, 1e-12);
    }
    case KernelKind::fbm_molchan_golosov: {
      auto f = [&](double s) { return eval_kernel(k, t, s); };
      return detail::tanh_sinh_rule().integrate(f, a, b, 1e-10);
    }
    case KernelKind::tabulated: {
      auto f = [&](double s) { return eval_kernel(k, t, s); };
      return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 10, 1e-12);
    }
  }
  return 0.0;
}

/// Discretized integral operator on a uniform grid. Weight (i, j) is the exact
/// integral of K(t_i, .) over cell [t_j, t_{j+1}], so the operator is exact on
/// piecewise-constant integrands, singular diagonal included. Immutable once
/// built; safe to share across threads.
class KernelOperator {
 public:
  KernelOperator() = default;
  KernelOperator(const KernelSpec& k, const TimeGrid& grid) : spec_(k), grid_(grid) {
    validate(k);
    const int n = grid.steps();
    const double dt = grid.step();
    brownian_ = k.kind == KernelKind::brownian;
    if (brownian_) return;
    if (is_convolution(k)) {
      lag_.resize(n);
      for (int l = 0; l < n; ++l) lag_[l] = integrate_kernel(k, (l + 1) * dt, 0.0, dt);
      return;
    }
    dense_ = Eigen::MatrixXd::Zero(n + 1, n);
    for (int i = 1; i <= n; ++i)
      for (int j = 0; j < i; ++j) dense_(i, j) = integrate_kernel(k, grid.node(i), grid.node(j), grid.node(j + 1));
  }

  const KernelSpec& spec() const noexcept { return spec_; }
  const TimeGrid& grid() const noexcept { return grid_; }

  double weight(int i, int j) const {
    if (j >= i) return 0.0;
    if (brownian_) return grid_.step();
    if (!lag_.empty()) return lag_[i - 1 - j];
    return dense_(i, j);
  }

  /// Node values sum_j W(i, j) c_j for cell values c.
  template <class Cells>
  Eigen::VectorXd apply(const Cells& cells) const {
    const int n = grid_.steps();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n + 1);
    if (brownian_) {
      const double dt = grid_.step();
      for (int i = 1; i <= n; ++i) out(i) = out(i - 1) + cells(i - 1) * dt;
      return out;
    }
    for (int i = 1; i <= n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < i; ++j) acc += weight(i, j) * cells(j);
      out(i) = acc;
    }
    return out;
  }

  /// Adjoint: cell values sum_i W(i, j) a_i for node values a.
  template <class Nodes>
  Eigen::VectorXd apply_transpose(const Nodes& nodes) const {
    const int n = grid_.steps();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    if (brownian_) {
      const double dt = grid_.step();
      double tail = 0.0;
      for (int j = n - 1; j >= 0; --j) {
        tail += nodes(j + 1);
        out(j) = tail * dt;
      }
      return out;
    }
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = j + 1; i <= n; ++i) acc += weight(i, j) * nodes(i);
      out(j) = acc;
    }
    return out;
  }

 private:
  KernelSpec spec_;
  TimeGrid grid_;
  bool brownian_ = false;
  std::vector<double> lag_;
  Eigen::MatrixXd dense_;
};

/// (K f)(t_i) = int_0^{t_i} K(t_i, s) f(s) ds for f sampled at the nodes. The
/// sample is read as piecewise constant with cell value (f_j + f_{j+1}) / 2.
inline PathFn hs_apply(const KernelSpec& k, const PathFn& f, const TimeGrid& grid) {
  require(f.grid == grid && f.dim() == 1, ErrorCode::dimension, "hs_apply needs a scalar path on the given grid");
  const KernelOperator op(k, grid);
  Eigen::VectorXd cells = 0.5 * (f.values.col(0).head(grid.steps()) + f.values.col(0).tail(grid.steps()));
  PathFn out(grid, 1);
  out.values.col(0) = op.apply(cells);
  return out;
}

namespace detail {

inline double checked_variance(double v) {
  if (!std::isfinite(v) || v > 1e12) fail(ErrorCode::admissibility, "kernel slice is not square integrable");
  return v;
}

}  // namespace detail

/// Variance function int_0^t K(t, s)^2 ds of the Gaussian process int K dB.
inline double slice_variance(const KernelSpec& k, double t) {
  validate(k);
  require(t >= 0.0, ErrorCode::domain, "slice_variance needs t >= 0");
  if (t == 0.0) return 0.0;
  switch (k.kind) {
    case KernelKind::brownian: return t;
    case KernelKind::riemann_liouville: {
      auto f = [&](double x) { return std::pow(detail::profile(k, x), 2); };
      return detail::checked_variance(detail::tanh_sinh_rule().integrate(f, 0.0, t, 1e-13));
    }
    case KernelKind::logarithmic: {
      if (t >= 1.0) fail(ErrorCode::admissibility, "logarithmic kernel slice diverges for t >= 1");
      // x = exp(-w) turns int_0^t tau^2 dx into int_{log(1/t)}^inf beta w^{-beta-1} dw.
      const double lower = -std::log(t);
      auto f = [&](double w) { return k.beta * std::pow(lower + w, -k.beta - 1.0); };
      boost::math::quadrature::exp_sinh<double> rule;
      return detail::checked_variance(rule.integrate(f, 0.0, std::numeric_limits<double>::infinity(), 1e-13));
    }
    case KernelKind::fbm_molchan_golosov: {
      auto f = [&](double s) { return std::pow(eval_kernel(k, t, s), 2); };
      return detail::checked_variance(detail::tanh_sinh_rule().integrate(f, 0.0, t, 1e-10));
    }
    case KernelKind::tabulated: {
      auto f = [&](double s) { return std::pow(eval_kernel(k, t, s), 2); };
      return detail::checked_variance(
          boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, 0.0, t, 12, 1e-12));
    }
  }
  return 0.0;
}

/// L2 distance int_0^T (K(ta, u) - K(tb, u))^2 du between two kernel slices, tb < ta.
inline double slice_distance(const KernelSpec& k, double ta, double tb) {
  if (ta < tb) std::swap(ta, tb);
  if (ta == tb) return 0.0;
  double head = 0.0;
  if (tb > 0.0 && k.kind != KernelKind::brownian) {
    auto f = [&](double u) {
      const double d = eval_kernel(k, ta, u) - eval_kernel(k, tb, u);
      return d * d;
    };
    head = detail::tanh_sinh_rule().integrate(f, 0.0, tb, 1e-10);
  }
  double tail;
  if (is_convolution(k)) {
    tail = slice_variance(k, ta - tb);
  } else {
    auto f = [&](double u) { return std::pow(eval_kernel(k, ta, u), 2); };
    tail = detail::tanh_sinh_rule().integrate(f, tb, ta, 1e-10);
  }
  return detail::checked_variance(head + tail);
}

/// M_K(tau): largest slice distance over grid node pairs at most tau apart.
inline double l2_modulus(const KernelSpec& k, double tau, const TimeGrid& grid) {
  validate(k);
  require(tau >= 0.0 && tau <= grid.horizon() * (1 + 1e-12), ErrorCode::domain, "tau must lie in [0, T]");
  const int max_lag = std::min(grid.steps(), static_cast<int>(std::floor(tau / grid.step() + 1e-9)));
  double best = 0.0;
  for (int lag = 1; lag <= max_lag; ++lag)
    for (int b = 0; b + lag <= grid.steps(); ++b)
      best = std::max(best, slice_distance(k, grid.node(b + lag), grid.node(b)));
  return best;
}

}  // namespace vldp
