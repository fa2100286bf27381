#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/model.hpp"
#include "vldp/optimize.hpp"
#include "vldp/paths.hpp"
#include "vldp/volmap.hpp"

namespace vldp {

struct RateOptions {
  int n_steps = 200;
  OptimizerOptions optimizer;
};

struct RateResult {
  double value = std::numeric_limits<double>::infinity();
  Control minimizer_f;
  std::optional<Control> minimizer_l;
  int iterations = 0;
  int restarts = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  double constraint_violation = 0.0;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Control blocks are optimized in the scaled variables z = sqrt(dt) * f', so
// that the Cameron-Martin energy is ||z||^2 / 2.
inline Eigen::MatrixXd unscale(const double* z, int offset, int steps, int m, double dt) {
  Eigen::Map<const Eigen::MatrixXd> block(z + offset, steps, m);
  return block / std::sqrt(dt);
}

inline bool recoverable(const Error& e) {
  return e.code() == ErrorCode::divergence || e.code() == ErrorCode::non_convergence;
}

}  // namespace detail

/// Phi_n(l, f)(t_a) = sum_{c<a} [b_c + sigma_c Cbar l'_c + sigma_c C f'_c] dt with
/// coefficients read at (t_c, f_hat(t_c)).
inline PathFn phi_functional(const Model& model, const Control& l, const Control& f) {
  require(l.grid == f.grid && l.dim() == model.m() && f.dim() == model.m(), ErrorCode::dimension,
          "l and f must be m-dimensional controls on the same grid");
  const Skeleton skel(model.vol(), f.grid);
  const Eigen::MatrixXd fhat = skel.hat(f.dot);
  const int n = f.grid.steps();
  const double dt = f.grid.step();
  PathFn g(f.grid, model.m());
  for (int c = 0; c < n; ++c) {
    const auto cc = coefficients(model, f.grid.node(c), fhat.row(c).transpose(), false);
    const Vec inc = cc.b + cc.sigma * (model.Cbar() * l.dot.row(c).transpose() + model.C() * f.dot.row(c).transpose());
    g.values.row(c + 1) = g.values.row(c) + inc.transpose() * dt;
  }
  return g;
}

/// Discretized terminal objective
///   J(f) = 1/2 ||x - int b - int sigma C f'||^2 / int xi^2 + 1/2 int ||f'||^2,
/// xi^2 = tr(sigma Cbar Cbar' sigma') / m, with sigma and b at (s, f_hat(s)).
class TerminalObjective final : public Objective {
 public:
  TerminalObjective(const Model& model, const TimeGrid& grid, Vec x)
      : model_(model), skel_(model.vol(), grid), grid_(grid), x_(std::move(x)) {
    require(x_.size() == model.m(), ErrorCode::dimension, "target must have m entries");
  }

  int size() const override { return grid_.steps() * model_.m(); }
  const TimeGrid& grid() const { return grid_; }
  const Skeleton& skeleton() const { return skel_; }

  double evaluate(const double* z, double* grad) const override {
    const int n = grid_.steps(), m = model_.m(), d = model_.d();
    const double dt = grid_.step();
    const Eigen::MatrixXd fdot = detail::unscale(z, 0, n, m, dt);
    HatTape tape;
    Eigen::MatrixXd fhat;
    try {
      fhat = skel_.hat(fdot, grad ? &tape : nullptr);
    } catch (const Error& e) {
      if (detail::recoverable(e)) return detail::kInf;
      throw;
    }
    const bool deriv = grad && !model_.state_free();
    std::vector<CellCoefficients> cells(n);
    Vec B = Vec::Zero(m), S = Vec::Zero(m);
    double Q = 0.0;
    for (int c = 0; c < n; ++c) {
      cells[c] = coefficients(model_, grid_.node(c), fhat.row(c).transpose(), deriv);
      B += cells[c].b * dt;
      S += cells[c].sigma * model_.C() * fdot.row(c).transpose() * dt;
      Q += (cells[c].sigma * model_.Cbar()).squaredNorm() / m * dt;
    }
    const Vec r = x_ - B - S;
    const double r2 = r.squaredNorm();
    const double energy = 0.5 * fdot.squaredNorm() * dt;
    double value;
    if (!(Q > 0.0)) {
      if (r2 != 0.0) return detail::kInf;
      value = energy;
    } else {
      value = 0.5 * r2 / Q + energy;
    }
    if (!std::isfinite(value)) return detail::kInf;
    if (grad) {
      Eigen::MatrixXd fbar = fdot * dt;
      if (Q > 0.0) {
        for (int c = 0; c < n; ++c)
          fbar.row(c) -= ((cells[c].sigma * model_.C()).transpose() * r).transpose() * (dt / Q);
        if (deriv) {
          Eigen::MatrixXd ubar = Eigen::MatrixXd::Zero(n + 1, d);
          const Mat scb_base = model_.Cbar();
          for (int c = 0; c < n; ++c) {
            const auto& cc = cells[c];
            const Vec f = fdot.row(c).transpose();
            const Mat scb = cc.sigma * scb_base;
            for (int k = 0; k < d; ++k) {
              const Mat& ds = cc.dsigma[k];
              const double dr = r.dot(cc.db.col(k) + ds * model_.C() * f);
              const double dxi2 = 2.0 * (ds * scb_base).cwiseProduct(scb).sum() / m;
              ubar(c, k) = (-dr / Q - 0.5 * r2 / (Q * Q) * dxi2) * dt;
            }
          }
          fbar += skel_.vjp(fdot, tape, ubar);
        }
      }
      Eigen::Map<Eigen::MatrixXd>(grad, n, m) = fbar / std::sqrt(dt);
    }
    return value;
  }

 private:
  const Model& model_;
  Skeleton skel_;
  TimeGrid grid_;
  Vec x_;
};

/// Discretized sample-path objective for invertible sigma, with l' eliminated:
///   l'_c = Cbar^{-1} (sigma_c^{-1} (g'_c - b_c) - C f'_c),
///   J(f) = 1/2 sum (||l'_c||^2 + ||f'_c||^2) dt.
class PathObjective final : public Objective {
 public:
  PathObjective(const Model& model, const PathFn& g) : model_(model), skel_(model.vol(), g.grid), grid_(g.grid) {
    require(g.dim() == model.m(), ErrorCode::dimension, "target path must be m-dimensional");
    gdot_ = differentiate(g).dot;
  }

  int size() const override { return grid_.steps() * model_.m(); }

  /// Set when an evaluation met a singular volatility matrix.
  bool hit_singular() const { return singular_.load(); }

  double evaluate(const double* z, double* grad) const override {
    const int n = grid_.steps(), m = model_.m();
    const double dt = grid_.step();
    const Eigen::MatrixXd fdot = detail::unscale(z, 0, n, m, dt);
    Eigen::MatrixXd ldot;
    return compute(fdot, grad, &ldot);
  }

  Eigen::MatrixXd lift_l(const Eigen::MatrixXd& fdot) const {
    Eigen::MatrixXd ldot;
    compute(fdot, nullptr, &ldot);
    return ldot;
  }

 private:
  double compute(const Eigen::MatrixXd& fdot, double* grad, Eigen::MatrixXd* ldot) const {
    const int n = grid_.steps(), m = model_.m(), d = model_.d();
    const double dt = grid_.step();
    HatTape tape;
    Eigen::MatrixXd fhat;
    try {
      fhat = skel_.hat(fdot, grad ? &tape : nullptr);
    } catch (const Error& e) {
      if (detail::recoverable(e)) return detail::kInf;
      throw;
    }
    const bool deriv = grad && !model_.state_free();
    ldot->resize(n, m);
    Eigen::MatrixXd fbar = fdot * dt;
    Eigen::MatrixXd ubar = Eigen::MatrixXd::Zero(n + 1, d);
    double value = 0.5 * fdot.squaredNorm() * dt;
    for (int c = 0; c < n; ++c) {
      const auto cc = coefficients(model_, grid_.node(c), fhat.row(c).transpose(), deriv);
      if (singular(cc.sigma)) {
        singular_.store(true);
        return detail::kInf;
      }
      const Mat sinv = cc.sigma.inverse();
      const Vec v = sinv * (gdot_.row(c).transpose() - cc.b);
      const Vec l = model_.Cbar_inv() * (v - model_.C() * fdot.row(c).transpose());
      ldot->row(c) = l.transpose();
      value += 0.5 * l.squaredNorm() * dt;
      if (grad) {
        const Vec lambda = model_.Cbar_inv().transpose() * l;
        fbar.row(c) -= (model_.C().transpose() * lambda).transpose() * dt;
        if (deriv) {
          const Vec mu = sinv.transpose() * lambda;
          for (int k = 0; k < d; ++k) ubar(c, k) = -mu.dot(cc.dsigma[k] * v + cc.db.col(k)) * dt;
        }
      }
    }
    if (!std::isfinite(value)) return detail::kInf;
    if (grad) {
      if (deriv) fbar += skel_.vjp(fdot, tape, ubar);
      Eigen::Map<Eigen::MatrixXd>(grad, n, m) = fbar / std::sqrt(dt);
    }
    return value;
  }

  static bool singular(const Mat& s) {
    if (s.rows() == 1) return !(std::abs(s(0, 0)) > 0.0) || !std::isfinite(s(0, 0));
    Eigen::JacobiSVD<Mat> svd(s);
    const auto& sv = svd.singularValues();
    return !(sv(sv.size() - 1) > 0.0) || sv(0) / sv(sv.size() - 1) > 1e12;
  }

  const Model& model_;
  Skeleton skel_;
  TimeGrid grid_;
  Eigen::MatrixXd gdot_;
  mutable std::atomic<bool> singular_{false};
};

/// Scalar constraint c(g) >= 0 on a nodal log-price path g (relative to x0).
class PathConstraint {
 public:
  virtual ~PathConstraint() = default;
  /// Value; fills dg (nodes x m) with dc/dg when non-null.
  virtual double value(const Eigen::MatrixXd& g, Eigen::MatrixXd* dg) const = 0;
};

/// Penalized problem over (l, f):
///   energy(l) + energy(f) + mu/2 min(0, c(Phi_n(l, f)))^2.
/// With mu = 0 and `constraint_only`, evaluates c itself (for the feasibility polish).
class PenalizedPathObjective final : public Objective {
 public:
  PenalizedPathObjective(const Model& model, const TimeGrid& grid, const PathConstraint& constraint, double mu,
                         bool constraint_only = false)
      : model_(model), skel_(model.vol(), grid), grid_(grid), constraint_(constraint), mu_(mu),
        constraint_only_(constraint_only) {}

  int size() const override { return 2 * grid_.steps() * model_.m(); }

  double evaluate(const double* z, double* grad) const override {
    const int n = grid_.steps(), m = model_.m(), d = model_.d();
    const double dt = grid_.step();
    const Eigen::MatrixXd ldot = detail::unscale(z, 0, n, m, dt);
    const Eigen::MatrixXd fdot = detail::unscale(z, n * m, n, m, dt);
    HatTape tape;
    Eigen::MatrixXd fhat;
    try {
      fhat = skel_.hat(fdot, grad ? &tape : nullptr);
    } catch (const Error& e) {
      if (detail::recoverable(e)) return detail::kInf;
      throw;
    }
    const bool deriv = grad && !model_.state_free();
    std::vector<CellCoefficients> cells(n);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n + 1, m);
    for (int c = 0; c < n; ++c) {
      cells[c] = coefficients(model_, grid_.node(c), fhat.row(c).transpose(), deriv);
      const Vec drive = model_.Cbar() * ldot.row(c).transpose() + model_.C() * fdot.row(c).transpose();
      g.row(c + 1) = g.row(c) + (cells[c].b + cells[c].sigma * drive).transpose() * dt;
    }
    if (!g.allFinite()) return detail::kInf;
    Eigen::MatrixXd dc;
    const double cval = constraint_.value(g, grad ? &dc : nullptr);
    double value, weight;
    if (constraint_only_) {
      value = cval;
      weight = 1.0;
    } else {
      const double short_fall = std::min(0.0, cval);
      value = 0.5 * (ldot.squaredNorm() + fdot.squaredNorm()) * dt + 0.5 * mu_ * short_fall * short_fall;
      weight = mu_ * short_fall;
    }
    if (!std::isfinite(value)) return detail::kInf;
    if (grad) {
      Eigen::MatrixXd lbar = constraint_only_ ? Eigen::MatrixXd::Zero(n, m) : Eigen::MatrixXd(ldot * dt);
      Eigen::MatrixXd fbar = constraint_only_ ? Eigen::MatrixXd::Zero(n, m) : Eigen::MatrixXd(fdot * dt);
      if (weight != 0.0) {
        Eigen::MatrixXd ubar = Eigen::MatrixXd::Zero(n + 1, d);
        Vec tail = Vec::Zero(m);
        for (int c = n - 1; c >= 0; --c) {
          tail += weight * dc.row(c + 1).transpose();
          const auto& cc = cells[c];
          lbar.row(c) += ((cc.sigma * model_.Cbar()).transpose() * tail).transpose() * dt;
          fbar.row(c) += ((cc.sigma * model_.C()).transpose() * tail).transpose() * dt;
          if (deriv) {
            const Vec drive = model_.Cbar() * ldot.row(c).transpose() + model_.C() * fdot.row(c).transpose();
            for (int k = 0; k < d; ++k) ubar(c, k) = tail.dot(cc.db.col(k) + cc.dsigma[k] * drive) * dt;
          }
        }
        if (deriv) fbar += skel_.vjp(fdot, tape, ubar);
      }
      const double s = std::sqrt(dt);
      Eigen::Map<Eigen::MatrixXd>(grad, n, m) = lbar / s;
      Eigen::Map<Eigen::MatrixXd>(grad + n * m, n, m) = fbar / s;
    }
    return value;
  }

 private:
  const Model& model_;
  Skeleton skel_;
  TimeGrid grid_;
  const PathConstraint& constraint_;
  double mu_;
  bool constraint_only_;
};

struct PenaltySchedule {
  int stages = 6;
  double mu0 = 10.0;
  double growth = 10.0;
};

/// Exterior quadratic penalty with geometric continuation, then a Newton
/// polish along the constraint gradient onto {c_hard >= 0}.
/// soft(stage) supplies the (possibly smoothed) constraint used at each stage.
inline RateResult solve_constrained(const Model& model, const TimeGrid& grid,
                                    const std::function<std::unique_ptr<PathConstraint>(int)>& soft,
                                    const PathConstraint& hard, const RateOptions& opts,
                                    const PenaltySchedule& schedule = {}) {
  const int n = grid.steps(), m = model.m();
  const int size = 2 * n * m;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(size);
  RateResult res;
  double mu = schedule.mu0;
  for (int stage = 0; stage < schedule.stages; ++stage, mu *= schedule.growth) {
    const auto constraint = soft(stage);
    const PenalizedPathObjective obj(model, grid, *constraint, mu);
    OptimizerOptions o = opts.optimizer;
    if (stage > 0) {
      o.restarts = 0;
      o.include_zero_start = false;
    }
    const auto best = minimize(obj, o, {z});
    if (!std::isfinite(best.value)) fail(ErrorCode::non_convergence, "penalized problem has no finite start");
    z = best.z;
    res.iterations += best.iterations;
    res.restarts += best.restarts;
    res.gradient_norm = best.gradient_norm;
  }
  // polish onto the hard constraint
  const PenalizedPathObjective cons(model, grid, hard, 0.0, true);
  Eigen::VectorXd dir(size), gz(size);
  double phi = cons.evaluate(z.data(), dir.data());
  if (phi < 0.0 && dir.squaredNorm() > 0.0) {
    double alpha = 0.0;
    for (int it = 0; it < 100 && (phi < 0.0 || phi > 1e-12); ++it) {
      const Eigen::VectorXd trial = z + alpha * dir;
      phi = cons.evaluate(trial.data(), gz.data());
      const double slope = gz.dot(dir);
      if (!(slope > 0.0)) break;
      if (phi >= 0.0 && phi <= 1e-12) break;
      alpha -= phi / slope;
    }
    for (int bump = 0; bump < 60 && phi < 0.0; ++bump) {
      alpha += 1e-12 * (1.0 + std::abs(alpha)) * std::pow(2.0, bump);
      const Eigen::VectorXd trial = z + alpha * dir;
      phi = cons.evaluate(trial.data(), nullptr);
    }
    z += alpha * dir;
  }
  res.constraint_violation = std::max(0.0, -phi);
  res.converged = res.constraint_violation <= 1e-6;
  const double dt = grid.step();
  res.minimizer_l = Control(grid, detail::unscale(z.data(), 0, n, m, dt));
  res.minimizer_f = Control(grid, detail::unscale(z.data(), n * m, n, m, dt));
  res.value = 0.5 * z.squaredNorm();
  return res;
}

namespace detail {

inline RateResult pack(const OptimizeResult& best, const TimeGrid& grid, int m) {
  RateResult res;
  res.value = best.value;
  res.iterations = best.iterations;
  res.restarts = best.restarts;
  res.gradient_norm = best.gradient_norm;
  res.converged = best.converged;
  if (best.z.size() > 0) res.minimizer_f = Control(grid, unscale(best.z.data(), 0, grid.steps(), m, grid.step()));
  return res;
}

}  // namespace detail

/// Sample-path rate Q~_T(g) for invertible sigma.
inline RateResult qtilde_path(const Model& model, const PathFn& g, const RateOptions& opts = {}) {
  require(g.values.row(0).cwiseAbs().maxCoeff() == 0.0, ErrorCode::domain, "target path must start at 0");
  const PathObjective obj(model, g);
  const auto best = minimize(obj, opts.optimizer);
  if (!std::isfinite(best.value)) {
    if (obj.hit_singular()) fail(ErrorCode::singular_volatility, "volatility matrix is singular along the skeleton");
    fail(ErrorCode::non_convergence, "no restart produced a finite objective");
  }
  auto res = detail::pack(best, g.grid, model.m());
  res.minimizer_l = Control(g.grid, obj.lift_l(res.minimizer_f.dot));
  return res;
}

/// Terminal rate I~_T(x). For m > 1 the model must be in orthogonal-scalar form.
inline RateResult itilde_terminal(const Model& model, const Vec& x, double T, const RateOptions& opts = {},
                                  const std::vector<Eigen::VectorXd>& guesses = {}) {
  if (model.m() > 1 && !model.orthogonal_scalar())
    fail(ErrorCode::unsupported_form, "terminal rate for m > 1 needs sigma = xi O Cbar^{-1}");
  const TimeGrid grid(T, opts.n_steps);
  const TerminalObjective obj(model, grid, x);
  const auto best = minimize(obj, opts.optimizer, guesses);
  if (!std::isfinite(best.value)) fail(ErrorCode::non_convergence, "no restart produced a finite objective");
  auto res = detail::pack(best, grid, model.m());
  res.value = std::max(0.0, res.value);
  return res;
}

inline RateResult itilde_terminal(const Model& model, double x, double T, const RateOptions& opts = {}) {
  Vec v(1);
  v(0) = x;
  return itilde_terminal(model, v, T, opts);
}

struct TailResult {
  double value = 0.0;
  double argmin_x = 0.0;
  RateResult at;
  bool shortcut = false;  // returned I~_T(k) directly
};

/// int b(s, f_hat_0(s)) ds and int xi^2 at the zero control.
inline std::pair<Vec, double> zero_control_moments(const Model& model, const TimeGrid& grid) {
  const Skeleton skel(model.vol(), grid);
  const Eigen::MatrixXd fhat = skel.hat(Eigen::MatrixXd::Zero(grid.steps(), model.m()));
  Vec B = Vec::Zero(model.m());
  double Q = 0.0;
  for (int c = 0; c < grid.steps(); ++c) {
    const auto cc = coefficients(model, grid.node(c), fhat.row(c).transpose(), false);
    B += cc.b * grid.step();
    Q += (cc.sigma * model.Cbar()).squaredNorm() / model.m() * grid.step();
  }
  return {B, Q};
}

/// inf_{x >= k} I~_T(x) for m = 1.
inline TailResult inf_tail(const Model& model, double k, double T, const RateOptions& opts = {}) {
  require(model.m() == 1, ErrorCode::dimension, "inf_tail is defined for m = 1");
  const TimeGrid grid(T, opts.n_steps);
  const auto [B, Q] = zero_control_moments(model, grid);
  TailResult out;
  if (k <= B(0)) {
    out.value = 0.0;
    out.argmin_x = B(0);
    out.at.value = 0.0;
    out.at.minimizer_f = Control(grid, 1);
    out.at.converged = true;
    return out;
  }
  if (model.uncorrelated() && model.spec().drift.state_free()) {
    out.at = itilde_terminal(model, k, T, opts);
    out.value = out.at.value;
    out.argmin_x = k;
    out.shortcut = true;
    return out;
  }
  RateOptions light = opts;
  light.optimizer.restarts = std::min(opts.optimizer.restarts, 2);
  std::vector<Eigen::VectorXd> warm;
  auto eval = [&](double x) {
    Vec v(1);
    v(0) = x;
    auto r = itilde_terminal(model, v, T, light, warm);
    warm = {r.minimizer_f.dot.reshaped() * std::sqrt(grid.step())};
    return r;
  };
  const double width = 10.0 * std::sqrt(std::max(Q, 1e-300) / (T * (1.0 - model.C()(0, 0) * model.C()(0, 0)))) *
                       std::sqrt(T);
  double a = k, b = k + width;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  RateResult r1 = eval(x1), r2 = eval(x2);
  for (int it = 0; it < 60 && (b - a) > 1e-7 * (1.0 + std::abs(k)); ++it) {
    if (r1.value <= r2.value) {
      b = x2;
      x2 = x1;
      r2 = r1;
      x1 = b - gr * (b - a);
      r1 = eval(x1);
    } else {
      a = x1;
      x1 = x2;
      r1 = r2;
      x2 = a + gr * (b - a);
      r2 = eval(x2);
    }
  }
  RateResult best = r1.value <= r2.value ? r1 : r2;
  double bx = r1.value <= r2.value ? x1 : x2;
  RateResult at_k = itilde_terminal(model, k, T, opts);
  if (at_k.value <= best.value) {
    best = at_k;
    bx = k;
  }
  out.at = best;
  out.value = best.value;
  out.argmin_x = bx;
  return out;
}

}  // namespace vldp
