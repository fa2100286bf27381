#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/model.hpp"
#include "vldp/parallel.hpp"
#include "vldp/ratefn.hpp"

namespace vldp {

/// Open exit domain in log-price coordinates: an axis-aligned box (infinite
/// bounds allowed) or a half-space {x : <normal, x> < offset}.
struct ExitDomain {
  enum class Kind { box, half_space };
  Kind kind = Kind::box;
  Vec lower, upper;
  Vec normal;
  double offset = 0.0;

  static ExitDomain box(Vec lo, Vec hi) {
    require(lo.size() == hi.size(), ErrorCode::dimension, "box bounds differ in length");
    require((lo.array() < hi.array()).all(), ErrorCode::domain, "box needs lower < upper");
    ExitDomain d;
    d.kind = Kind::box;
    d.lower = std::move(lo);
    d.upper = std::move(hi);
    return d;
  }
  static ExitDomain half_space(Vec n, double off) {
    require(n.norm() > 0.0, ErrorCode::domain, "half-space normal must be nonzero");
    ExitDomain d;
    d.kind = Kind::half_space;
    d.normal = std::move(n);
    d.offset = off;
    return d;
  }
  int dim() const { return static_cast<int>(kind == Kind::box ? lower.size() : normal.size()); }
};

/// Exit through a face means <normal, x> >= level.
struct Face {
  Vec normal;
  double level = 0.0;
  std::string label;
};

inline std::vector<Face> faces(const ExitDomain& dom) {
  std::vector<Face> out;
  if (dom.kind == ExitDomain::Kind::half_space) {
    out.push_back({dom.normal, dom.offset, "half_space"});
    return out;
  }
  const int m = dom.dim();
  for (int k = 0; k < m; ++k) {
    Vec e = Vec::Zero(m);
    e(k) = 1.0;
    if (std::isfinite(dom.upper(k))) out.push_back({e, dom.upper(k), "upper[" + std::to_string(k) + "]"});
    if (std::isfinite(dom.lower(k))) out.push_back({-e, -dom.lower(k), "lower[" + std::to_string(k) + "]"});
  }
  return out;
}

enum class Quantity { call, implied_vol, asian, exit_prob, barrier };

inline std::string to_string(Quantity q) {
  switch (q) {
    case Quantity::call: return "call";
    case Quantity::implied_vol: return "implied_vol";
    case Quantity::asian: return "asian";
    case Quantity::exit_prob: return "exit_prob";
    case Quantity::barrier: return "barrier";
  }
  return "call";
}

struct AsymptoteReport {
  Quantity quantity = Quantity::call;
  double rate = 0.0;
  std::optional<double> limit_value;
  RateResult detail;
  std::map<std::string, double> diagnostics;
  std::string face;
};

/// log( (1/T) int_0^T e^{g} ) >= log K, integrated exactly on the piecewise-linear g.
class AsianConstraint final : public PathConstraint {
 public:
  AsianConstraint(double horizon, double log_moneyness, double scale)
      : horizon_(horizon), log_k_(log_moneyness), scale_(scale) {}

  static double exp_mean(double a, double b, double* da, double* db) {
    const double delta = b - a;
    const double ea = std::exp(a);
    double phi, dphi;
    if (std::abs(delta) < 1e-3) {
      phi = 1.0 + delta * (0.5 + delta * (1.0 / 6.0 + delta * (1.0 / 24.0 + delta / 120.0)));
      dphi = 0.5 + delta * (1.0 / 3.0 + delta * (0.125 + delta / 30.0));
    } else {
      const double e = std::expm1(delta);
      phi = e / delta;
      dphi = (delta * (e + 1.0) - e) / (delta * delta);
    }
    if (da) *da = ea * (phi - dphi);
    if (db) *db = ea * dphi;
    return ea * phi;
  }

  double average(const Eigen::MatrixXd& g) const {
    const int n = static_cast<int>(g.rows()) - 1;
    double acc = 0.0;
    for (int c = 0; c < n; ++c) acc += exp_mean(g(c, 0), g(c + 1, 0), nullptr, nullptr);
    return acc / n;
  }

  double value(const Eigen::MatrixXd& g, Eigen::MatrixXd* dg) const override {
    const int n = static_cast<int>(g.rows()) - 1;
    double acc = 0.0;
    if (dg) dg->setZero(g.rows(), g.cols());
    for (int c = 0; c < n; ++c) {
      double da, db;
      acc += exp_mean(g(c, 0), g(c + 1, 0), &da, &db);
      if (dg) {
        (*dg)(c, 0) += da;
        (*dg)(c + 1, 0) += db;
      }
    }
    const double avg = acc / n;
    if (dg) *dg /= (acc * scale_);
    (void)horizon_;
    return (std::log(avg) - log_k_) / scale_;
  }

 private:
  double horizon_, log_k_, scale_;
};

/// Face exit by node a_max: max_{1<=a<=a_max} (<n, x0 + g_a> - level) / scale >= 0.
/// With kappa > 0 the max is replaced by the conservative soft-max
/// (1/kappa) log sum exp(kappa s_a) - log(N) / kappa, which never exceeds it.
class ExitConstraint final : public PathConstraint {
 public:
  ExitConstraint(Face face, Vec x0, int a_max, double kappa)
      : face_(std::move(face)), x0_(std::move(x0)), a_max_(a_max), kappa_(kappa) {
    scale_ = face_.level - face_.normal.dot(x0_);
    require(scale_ > 0.0, ErrorCode::domain, "start point must lie strictly inside the face");
  }

  double value(const Eigen::MatrixXd& g, Eigen::MatrixXd* dg) const override {
    const int m = static_cast<int>(g.cols());
    Eigen::VectorXd s(a_max_);
    for (int a = 1; a <= a_max_; ++a) {
      double proj = face_.normal.dot(x0_);
      for (int j = 0; j < m; ++j) proj += face_.normal(j) * g(a, j);
      s(a - 1) = (proj - face_.level) / scale_;
    }
    if (dg) dg->setZero(g.rows(), g.cols());
    Eigen::Index arg;
    const double smax = s.maxCoeff(&arg);
    if (kappa_ <= 0.0) {
      if (dg) (*dg).row(arg + 1) = face_.normal.transpose() / scale_;
      return smax;
    }
    const Eigen::VectorXd w = (kappa_ * (s.array() - smax)).exp();
    const double total = w.sum();
    if (dg)
      for (int a = 1; a <= a_max_; ++a) (*dg).row(a) = (w(a - 1) / total) * face_.normal.transpose() / scale_;
    return smax + std::log(total) / kappa_ - std::log(static_cast<double>(a_max_)) / kappa_;
  }

 private:
  Face face_;
  Vec x0_;
  int a_max_;
  double kappa_;
  double scale_ = 1.0;
};

/// Leading-order call asymptote: eps log C = -inf_{x >= k} I~_T(x).
inline AsymptoteReport call_asymptote(const Model& model, double K, double T, const RateOptions& opts = {}) {
  require(model.m() == 1, ErrorCode::dimension, "call asymptote is defined for m = 1");
  require(K > 0.0, ErrorCode::domain, "strike must be > 0");
  require(T > 0.0, ErrorCode::domain, "maturity must be > 0");
  const double s0 = model.spec().s0(0), r = model.spec().r;
  if (model.spec().sigma_may_vanish && !(K > s0 * std::exp(r * T)))
    fail(ErrorCode::out_of_range, "vanishing-volatility models need K > s0 exp(rT)");
  const double k = std::log(K / s0);
  const auto tail = inf_tail(model, k, T, opts);
  AsymptoteReport rep;
  rep.quantity = Quantity::call;
  rep.rate = tail.value;
  rep.detail = tail.at;
  rep.diagnostics["log_strike"] = k;
  rep.diagnostics["argmin_x"] = tail.argmin_x;
  rep.diagnostics["shortcut"] = tail.shortcut ? 1.0 : 0.0;
  return rep;
}

/// lim V(eps, T, k) = k / sqrt(2 T inf_{x >= k} I~_T(x)) with s0 = 1, r = 0.
inline AsymptoteReport implied_vol_limit(const Model& model, double k, double T, const RateOptions& opts = {}) {
  require(model.m() == 1, ErrorCode::dimension, "implied volatility limit is defined for m = 1");
  require(model.spec().s0(0) == 1.0 && model.spec().r == 0.0, ErrorCode::domain,
          "implied volatility limit assumes s0 = 1 and r = 0");
  require(k > 0.0, ErrorCode::domain, "log-strike must be > 0");
  const auto tail = inf_tail(model, k, T, opts);
  if (!(tail.value > 0.0)) fail(ErrorCode::degenerate_limit, "rate is zero; the implied volatility limit is +inf");
  AsymptoteReport rep;
  rep.quantity = Quantity::implied_vol;
  rep.rate = tail.value;
  rep.limit_value = k / std::sqrt(2.0 * T * tail.value);
  rep.detail = tail.at;
  rep.diagnostics["log_strike"] = k;
  return rep;
}

/// eps log A = -inf { Q~_T(g) : (1/T) int e^{g} >= K / s0 }.
inline AsymptoteReport asian_asymptote(const Model& model, double K, double T, const RateOptions& opts = {}) {
  require(model.m() == 1, ErrorCode::dimension, "Asian asymptote is defined for m = 1");
  require(K > 0.0 && T > 0.0, ErrorCode::domain, "strike and maturity must be > 0");
  const double s0 = model.spec().s0(0), r = model.spec().r;
  if (model.spec().sigma_may_vanish) {
    const double threshold = r > 0.0 ? s0 / (r * T) * std::expm1(r * T) : s0;
    if (!(K > threshold)) fail(ErrorCode::out_of_range, "vanishing-volatility models need K above the forward average");
  }
  const double log_k = std::log(K / s0);
  const TimeGrid grid(T, opts.n_steps);
  const Control zero(grid, 1);
  const PathFn g0 = phi_functional(model, zero, zero);
  const double avg0 = AsianConstraint(T, log_k, 1.0).average(g0.values);
  AsymptoteReport rep;
  rep.quantity = Quantity::asian;
  rep.diagnostics["log_moneyness"] = log_k;
  if (avg0 >= std::exp(log_k)) {
    rep.rate = 0.0;
    rep.detail.value = 0.0;
    rep.detail.minimizer_f = zero;
    rep.detail.minimizer_l = zero;
    rep.detail.converged = true;
    return rep;
  }
  const double scale = log_k - std::log(avg0);
  const AsianConstraint cons(T, log_k, scale);
  auto soft = [&](int) -> std::unique_ptr<PathConstraint> { return std::make_unique<AsianConstraint>(T, log_k, scale); };
  rep.detail = solve_constrained(model, grid, soft, cons, opts);
  rep.rate = rep.detail.value;
  rep.diagnostics["constraint_violation"] = rep.detail.constraint_violation;
  return rep;
}

/// eps log P(tau <= t) = -inf { Q~_T(g) : g leaves domain - x0 on (0, t] }.
inline AsymptoteReport exit_asymptote(const Model& model, const ExitDomain& dom, double t, const RateOptions& opts = {}) {
  require(dom.dim() == model.m(), ErrorCode::dimension, "domain dimension must equal m");
  require(t > 0.0, ErrorCode::domain, "exit horizon must be > 0");
  const Vec& x0 = model.x0();
  const auto fs = faces(dom);
  require(!fs.empty(), ErrorCode::domain, "domain has no finite face");
  AsymptoteReport rep;
  rep.quantity = Quantity::exit_prob;
  for (const auto& f : fs) {
    const double gap = f.level - f.normal.dot(x0);
    if (gap < -1e-14 * (1.0 + std::abs(f.level))) fail(ErrorCode::domain, "start point lies outside the exit domain");
    if (gap <= 1e-14 * (1.0 + std::abs(f.level))) {
      const TimeGrid grid(t, opts.n_steps);
      rep.rate = 0.0;
      rep.face = f.label;
      rep.detail.value = 0.0;
      rep.detail.minimizer_f = Control(grid, model.m());
      rep.detail.minimizer_l = Control(grid, model.m());
      rep.detail.converged = true;
      return rep;
    }
  }
  const TimeGrid grid(t, opts.n_steps);
  auto results = ordered_map<RateResult>(fs.size(), opts.optimizer.workers, [&](std::size_t i) {
    const ExitConstraint hard(fs[i], x0, grid.steps(), 0.0);
    auto soft = [&](int stage) -> std::unique_ptr<PathConstraint> {
      return std::make_unique<ExitConstraint>(fs[i], x0, grid.steps(), std::pow(10.0, stage + 2));
    };
    RateOptions inner = opts;
    inner.optimizer.workers = 1;
    return solve_constrained(model, grid, soft, hard, inner);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i].value < results[best].value) best = i;
  rep.rate = results[best].value;
  rep.detail = results[best];
  rep.face = fs[best].label;
  rep.diagnostics["constraint_violation"] = results[best].constraint_violation;
  for (std::size_t i = 0; i < results.size(); ++i) rep.diagnostics["rate:" + fs[i].label] = results[i].value;
  return rep;
}

/// Maps a price-space domain to log coordinates. Half-spaces must be axis aligned.
inline ExitDomain log_domain(const ExitDomain& price) {
  const int m = price.dim();
  if (price.kind == ExitDomain::Kind::box) {
    require((price.lower.array() >= 0.0).all(), ErrorCode::domain, "barrier domain must lie in the positive orthant");
    Vec lo(m), hi(m);
    for (int k = 0; k < m; ++k) {
      lo(k) = price.lower(k) > 0.0 ? std::log(price.lower(k)) : -std::numeric_limits<double>::infinity();
      hi(k) = std::isfinite(price.upper(k)) ? std::log(price.upper(k)) : std::numeric_limits<double>::infinity();
    }
    return ExitDomain::box(lo, hi);
  }
  int axis = -1;
  for (int k = 0; k < m; ++k)
    if (price.normal(k) != 0.0) {
      if (axis >= 0) fail(ErrorCode::unsupported_domain, "only axis-aligned half-spaces map to log coordinates");
      axis = k;
    }
  const double level = price.offset / price.normal(axis);
  require(level > 0.0, ErrorCode::domain, "barrier level must be positive");
  Vec n = Vec::Zero(m);
  n(axis) = price.normal(axis) > 0.0 ? 1.0 : -1.0;
  return ExitDomain::half_space(n, n(axis) * std::log(level));
}

/// Up-and-in style binary barrier: eps log B = -inf over paths leaving the domain by T.
inline AsymptoteReport barrier_asymptote(const Model& model, const ExitDomain& price_domain, double T,
                                         const RateOptions& opts = {}) {
  auto rep = exit_asymptote(model, log_domain(price_domain), T, opts);
  rep.quantity = Quantity::barrier;
  rep.diagnostics["discount_prefactor"] = std::exp(-model.spec().r * T);
  return rep;
}

}  // namespace vldp
