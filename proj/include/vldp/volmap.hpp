#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/fields.hpp"
#include "vldp/kernels.hpp"
#include "vldp/paths.hpp"

namespace vldp {

enum class VolFamily { gaussian, mixed, fractional_nongaussian, volterra_sde, reflected_diffusion, toy };

inline std::string to_string(VolFamily f) {
  switch (f) {
    case VolFamily::gaussian: return "gaussian";
    case VolFamily::mixed: return "mixed";
    case VolFamily::fractional_nongaussian: return "fractional_nongaussian";
    case VolFamily::volterra_sde: return "volterra_sde";
    case VolFamily::reflected_diffusion: return "reflected_diffusion";
    case VolFamily::toy: return "toy";
  }
  return "toy";
}

inline VolFamily family_from_string(const std::string& s) {
  for (auto f : {VolFamily::gaussian, VolFamily::mixed, VolFamily::fractional_nongaussian, VolFamily::volterra_sde,
                 VolFamily::reflected_diffusion, VolFamily::toy})
    if (to_string(f) == s) return f;
  fail(ErrorCode::config, "unknown volatility family '" + s + "'");
}

enum class UMap { identity, exp, abs, square };

inline std::string to_string(UMap u) {
  switch (u) {
    case UMap::identity: return "identity";
    case UMap::exp: return "exp";
    case UMap::abs: return "abs";
    case UMap::square: return "square";
  }
  return "identity";
}

inline UMap umap_from_string(const std::string& s) {
  for (auto u : {UMap::identity, UMap::exp, UMap::abs, UMap::square})
    if (to_string(u) == s) return u;
  fail(ErrorCode::config, "unknown U map '" + s + "'");
}

/// Component i of U: map applied to component `source` of the auxiliary state.
struct UComponent {
  UMap map = UMap::identity;
  int source = 0;

  double apply(double v) const {
    switch (map) {
      case UMap::identity: return v;
      case UMap::exp: return std::exp(v);
      case UMap::abs: return std::abs(v);
      case UMap::square: return v * v;
    }
    return v;
  }
  double derivative(double v) const {
    switch (map) {
      case UMap::identity: return 1.0;
      case UMap::exp: return std::exp(v);
      case UMap::abs: return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
      case UMap::square: return 2.0 * v;
    }
    return 1.0;
  }
};

/// Description of the volatility process and its controlled skeleton.
///
///   gaussian / mixed / fractional_nongaussian:
///     eta_i(t) = x_i + int K_i(t,s) U_i(psi(s)) ds + sum_j int K_ij(t,s) f_j'(s) ds
///     psi' = aux_drift(s, psi) + aux_disp(s, psi) f'
///   volterra_sde:
///     eta(t) = x + int K_a(t,s) coef_drift(s, eta(s)) ds + int K_c(t,s) coef_disp(s, eta(s)) f'(s) ds
///   reflected_diffusion (d = 1):
///     U' = coef_drift(s, Gamma U) + coef_disp(s, Gamma U) f',  output Gamma U
///   toy (d = m = 1): eta = x + f
struct VolProcessSpec {
  VolFamily family = VolFamily::toy;
  int d = 1, m = 1, k = 0;
  Vec x = Vec::Zero(1);
  std::vector<std::optional<KernelSpec>> drift_kernels;  // d
  std::vector<std::optional<KernelSpec>> noise_kernels;  // d * m, row-major
  std::vector<UComponent> u;                             // d
  VectorField aux_drift;                                 // k components over R^k
  MatrixField aux_disp;                                  // k x m over R^k
  Vec v0;
  bool aux_truncate = false;  // Monte Carlo reads aux coefficients at psi^+
  KernelSpec kernel_a, kernel_c;
  VectorField coef_drift;  // d components over R^d
  MatrixField coef_disp;   // d x m over R^d
  bool reflect = false;
};

inline bool has_aux(const VolProcessSpec& s) {
  return s.family == VolFamily::mixed || s.family == VolFamily::fractional_nongaussian;
}
inline bool has_noise_kernels(const VolProcessSpec& s) {
  return s.family == VolFamily::mixed || s.family == VolFamily::gaussian;
}

inline void validate(const VolProcessSpec& s) {
  check_dim(s.d, "volatility dimension d");
  check_dim(s.m, "driving dimension m");
  require(s.x.size() == s.d, ErrorCode::dimension, "initial condition x must have d entries");
  if (s.family == VolFamily::toy)
    require(s.d == 1 && s.m == 1, ErrorCode::dimension, "toy family is one dimensional");
  if (has_noise_kernels(s)) {
    require(static_cast<int>(s.noise_kernels.size()) == s.d * s.m, ErrorCode::dimension,
            "noise kernels must form a d x m matrix");
    for (const auto& k : s.noise_kernels)
      if (k) validate(*k);
  } else {
    for (const auto& k : s.noise_kernels)
      require(!k, ErrorCode::config, "noise kernels are only allowed for gaussian and mixed families");
  }
  if (has_aux(s)) {
    check_dim(s.k, "auxiliary dimension k");
    require(static_cast<int>(s.drift_kernels.size()) == s.d, ErrorCode::dimension, "need d drift kernels");
    require(static_cast<int>(s.u.size()) == s.d, ErrorCode::dimension, "U needs d components");
    for (const auto& u : s.u)
      require(u.source >= 0 && u.source < s.k, ErrorCode::dimension, "U source index out of range");
    for (const auto& k : s.drift_kernels)
      if (k) validate(*k);
    require(s.aux_drift.size() == s.k, ErrorCode::dimension, "aux drift must have k components");
    require(s.aux_disp.rows() == s.k && s.aux_disp.cols() == s.m, ErrorCode::dimension, "aux dispersion must be k x m");
    require(s.v0.size() == s.k, ErrorCode::dimension, "v0 must have k entries");
  } else {
    for (const auto& k : s.drift_kernels)
      require(!k, ErrorCode::config, "drift kernels are only allowed for mixed and fractional families");
  }
  if (s.family == VolFamily::volterra_sde || s.family == VolFamily::reflected_diffusion) {
    require(s.coef_drift.size() == s.d, ErrorCode::dimension, "coefficient drift must have d components");
    require(s.coef_disp.rows() == s.d && s.coef_disp.cols() == s.m, ErrorCode::dimension,
            "coefficient dispersion must be d x m");
    validate(s.kernel_a);
    validate(s.kernel_c);
  }
  if (s.family == VolFamily::reflected_diffusion || s.reflect) {
    if (s.d != 1) fail(ErrorCode::unsupported_domain, "reflection is implemented on the half-line only");
  }
}

/// Intermediate values of one forward evaluation, reused by the adjoint.
struct HatTape {
  Eigen::MatrixXd psi;  // nodes x k
  Eigen::MatrixXd eta;  // nodes x d, before G
  Eigen::MatrixXd out;  // nodes x d
  std::vector<int> argmin;  // running argmin for the Skorokhod map, -1 when min(.,0) = 0
  int picard_iterations = 0;
};

namespace detail {

inline void check_blowup(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite() || m.cwiseAbs().maxCoeff() > 1e9)
    fail(ErrorCode::divergence, std::string(what) + " exceeded the blow-up threshold");
}

// Gamma on a scalar nodal column; records the argmin used by the compensator.
inline Eigen::VectorXd skorokhod_column(const Eigen::VectorXd& p, std::vector<int>* argmin) {
  Eigen::VectorXd out(p.size());
  double running = 0.0;
  int idx = -1;
  if (argmin) argmin->assign(p.size(), -1);
  for (int j = 0; j < p.size(); ++j) {
    if (p(j) < running) {
      running = p(j);
      idx = j;
    }
    out(j) = p(j) - running;
    if (argmin) (*argmin)[j] = idx;
  }
  return out;
}

}  // namespace detail

/// Discretized skeleton map f' -> f_hat on a fixed grid. Kernel operators are
/// built once; the object is immutable and thread-safe afterwards.
class Skeleton {
 public:
  Skeleton(VolProcessSpec spec, TimeGrid grid) : spec_(std::move(spec)), grid_(grid) {
    validate(spec_);
    if (has_noise_kernels(spec_)) {
      noise_ops_.resize(spec_.noise_kernels.size());
      for (std::size_t i = 0; i < spec_.noise_kernels.size(); ++i)
        if (spec_.noise_kernels[i]) noise_ops_[i].emplace(*spec_.noise_kernels[i], grid_);
    }
    if (has_aux(spec_)) {
      drift_ops_.resize(spec_.drift_kernels.size());
      for (std::size_t i = 0; i < spec_.drift_kernels.size(); ++i)
        if (spec_.drift_kernels[i]) drift_ops_[i].emplace(*spec_.drift_kernels[i], grid_);
    }
    if (spec_.family == VolFamily::volterra_sde) {
      op_a_ = KernelOperator(spec_.kernel_a, grid_);
      op_c_ = KernelOperator(spec_.kernel_c, grid_);
    }
  }

  const VolProcessSpec& spec() const noexcept { return spec_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  int d() const noexcept { return spec_.d; }
  int m() const noexcept { return spec_.m; }

  /// Euler solution of the controlled auxiliary ODE, nodes x k.
  Eigen::MatrixXd psi(const Eigen::MatrixXd& fdot) const {
    check_control(fdot);
    const int n = grid_.steps();
    const double dt = grid_.step();
    Eigen::MatrixXd out(n + 1, spec_.k);
    Vec p = spec_.v0;
    out.row(0) = p.transpose();
    for (int c = 0; c < n; ++c) {
      const double t = grid_.node(c);
      const Vec f = fdot.row(c).transpose();
      p = p + (spec_.aux_drift(t, p) + spec_.aux_disp(t, p) * f) * dt;
      out.row(c + 1) = p.transpose();
    }
    detail::check_blowup(out, "auxiliary skeleton");
    return out;
  }

  /// Gamma_y applied to the control, nodes x d (no reflection map G).
  Eigen::MatrixXd gamma(const Eigen::MatrixXd& fdot, HatTape* tape = nullptr) const {
    check_control(fdot);
    const int n = grid_.steps();
    const int d = spec_.d, m = spec_.m;
    Eigen::MatrixXd eta(n + 1, d);
    for (int i = 0; i < d; ++i) eta.col(i).setConstant(spec_.x(i));

    switch (spec_.family) {
      case VolFamily::toy: {
        const double dt = grid_.step();
        for (int c = 0; c < n; ++c) eta(c + 1, 0) = eta(c, 0) + fdot(c, 0) * dt;
        break;
      }
      case VolFamily::gaussian:
      case VolFamily::mixed:
      case VolFamily::fractional_nongaussian: {
        if (has_noise_kernels(spec_))
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < m; ++j)
              if (const auto& op = noise_ops_[i * m + j]) eta.col(i) += op->apply(fdot.col(j));
        if (has_aux(spec_)) {
          Eigen::MatrixXd ps = psi(fdot);
          for (int i = 0; i < d; ++i) {
            const auto& op = drift_ops_[i];
            if (!op) continue;
            const auto& u = spec_.u[i];
            Eigen::VectorXd cells(n);
            for (int c = 0; c < n; ++c) cells(c) = 0.5 * (u.apply(ps(c, u.source)) + u.apply(ps(c + 1, u.source)));
            eta.col(i) += op->apply(cells);
          }
          if (tape) tape->psi = std::move(ps);
        }
        break;
      }
      case VolFamily::volterra_sde: {
        int iterations = 0;
        eta = picard(fdot, &iterations);
        if (tape) tape->picard_iterations = iterations;
        break;
      }
      case VolFamily::reflected_diffusion: {
        const double dt = grid_.step();
        Vec y(1);
        double running = 0.0;
        for (int c = 0; c < n; ++c) {
          running = std::min(running, eta(c, 0));
          y(0) = eta(c, 0) - running;
          const double t = grid_.node(c);
          eta(c + 1, 0) = eta(c, 0) + (spec_.coef_drift.comp[0](t, y) + (spec_.coef_disp(t, y) * fdot.row(c).transpose())(0)) * dt;
        }
        break;
      }
    }
    detail::check_blowup(eta, "volatility skeleton");
    return eta;
  }

  /// f_hat = G(Gamma_y f), nodes x d.
  Eigen::MatrixXd hat(const Eigen::MatrixXd& fdot, HatTape* tape = nullptr) const {
    Eigen::MatrixXd eta = gamma(fdot, tape);
    Eigen::MatrixXd out;
    if (spec_.family == VolFamily::reflected_diffusion || spec_.reflect) {
      out = detail::skorokhod_column(eta.col(0), tape ? &tape->argmin : nullptr);
    } else {
      out = eta;
    }
    if (tape) {
      tape->eta = std::move(eta);
      tape->out = out;
    }
    return out;
  }

  /// Vector-Jacobian product: given d(objective)/d(f_hat) at the nodes
  /// (nodes x d), returns d(objective)/d(f') per cell (steps x m). The tape must
  /// come from hat() with the same control.
  Eigen::MatrixXd vjp(const Eigen::MatrixXd& fdot, const HatTape& tape, const Eigen::MatrixXd& out_bar) const {
    const int n = grid_.steps();
    const int d = spec_.d, m = spec_.m;
    Eigen::MatrixXd eta_bar = out_bar;
    if (spec_.family == VolFamily::reflected_diffusion) return reflected_vjp(fdot, tape, out_bar);
    if (spec_.reflect) {
      for (int p = 0; p <= n; ++p)
        if (tape.argmin[p] >= 0) eta_bar(tape.argmin[p], 0) -= out_bar(p, 0);
    }
    Eigen::MatrixXd fbar = Eigen::MatrixXd::Zero(n, m);
    switch (spec_.family) {
      case VolFamily::toy: {
        const double dt = grid_.step();
        double tail = 0.0;
        for (int c = n - 1; c >= 0; --c) {
          tail += eta_bar(c + 1, 0);
          fbar(c, 0) = tail * dt;
        }
        break;
      }
      case VolFamily::gaussian:
      case VolFamily::mixed:
      case VolFamily::fractional_nongaussian: {
        if (has_noise_kernels(spec_))
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < m; ++j)
              if (const auto& op = noise_ops_[i * m + j]) fbar.col(j) += op->apply_transpose(eta_bar.col(i));
        if (has_aux(spec_)) fbar += aux_vjp(fdot, tape, eta_bar);
        break;
      }
      case VolFamily::volterra_sde: fbar = volterra_vjp(fdot, tape, eta_bar); break;
      case VolFamily::reflected_diffusion: break;
    }
    return fbar;
  }

 private:
  void check_control(const Eigen::MatrixXd& fdot) const {
    require(fdot.rows() == grid_.steps() && fdot.cols() == spec_.m, ErrorCode::dimension,
            "control must be steps x m on the skeleton grid");
  }

  // U-part adjoint followed by backpropagation through the Euler recursion.
  Eigen::MatrixXd aux_vjp(const Eigen::MatrixXd& fdot, const HatTape& tape, const Eigen::MatrixXd& eta_bar) const {
    const int n = grid_.steps();
    const int k = spec_.k, m = spec_.m;
    const double dt = grid_.step();
    const auto& ps = tape.psi;
    Eigen::MatrixXd psi_bar = Eigen::MatrixXd::Zero(n + 1, k);
    for (int i = 0; i < spec_.d; ++i) {
      const auto& op = drift_ops_[i];
      if (!op) continue;
      const auto& u = spec_.u[i];
      const Eigen::VectorXd cell_bar = op->apply_transpose(eta_bar.col(i));
      for (int c = 0; c < n; ++c) {
        psi_bar(c, u.source) += 0.5 * u.derivative(ps(c, u.source)) * cell_bar(c);
        psi_bar(c + 1, u.source) += 0.5 * u.derivative(ps(c + 1, u.source)) * cell_bar(c);
      }
    }
    Eigen::MatrixXd fbar(n, m);
    Vec lambda = psi_bar.row(n).transpose();
    for (int c = n - 1; c >= 0; --c) {
      const double t = grid_.node(c);
      const Vec p = ps.row(c).transpose();
      const Vec f = fdot.row(c).transpose();
      const Mat disp = spec_.aux_disp(t, p);
      fbar.row(c) = (disp.transpose() * lambda).transpose() * dt;
      Mat jac = spec_.aux_drift.jacobian(t, p);
      const auto parts = spec_.aux_disp.partials(t, p);
      for (int q = 0; q < k; ++q) jac.col(q) += parts[q] * f;
      lambda = psi_bar.row(c).transpose() + lambda + dt * jac.transpose() * lambda;
    }
    return fbar;
  }

  // Trapezoidal Volterra equation, solved by Picard iteration from the constant path.
  Eigen::MatrixXd picard(const Eigen::MatrixXd& fdot, int* iterations) const {
    const int n = grid_.steps();
    const int d = spec_.d;
    Eigen::MatrixXd eta(n + 1, d);
    for (int i = 0; i < d; ++i) eta.col(i).setConstant(spec_.x(i));
    double residual = 0.0;
    for (int it = 1; it <= 200; ++it) {
      Eigen::MatrixXd drift(n + 1, d), noise(n + 1, d);
      for (int p = 0; p <= n; ++p) {
        const double t = grid_.node(p);
        const Vec e = eta.row(p).transpose();
        drift.row(p) = spec_.coef_drift(t, e).transpose();
        if (p < n) noise.row(p) = (spec_.coef_disp(t, e) * fdot.row(p).transpose()).transpose();
        if (p > 0) {
          const Vec prev = fdot.row(p - 1).transpose();
          noise.row(p - 1) += (spec_.coef_disp(t, e) * prev).transpose();
        }
      }
      Eigen::MatrixXd next(n + 1, d);
      for (int i = 0; i < d; ++i) {
        const Eigen::VectorXd a_cells = 0.5 * (drift.col(i).head(n) + drift.col(i).tail(n));
        const Eigen::VectorXd c_cells = 0.5 * noise.col(i).head(n);
        next.col(i) = Eigen::VectorXd::Constant(n + 1, spec_.x(i)) + op_a_.apply(a_cells) + op_c_.apply(c_cells);
      }
      if (!next.allFinite() || next.cwiseAbs().maxCoeff() > 1e9)
        fail(ErrorCode::divergence, "Volterra skeleton exceeded the blow-up threshold");
      residual = (next - eta).cwiseAbs().maxCoeff();
      eta = std::move(next);
      if (residual < 1e-10) {
        *iterations = it;
        return eta;
      }
    }
    fail(ErrorCode::non_convergence, "Picard iteration did not converge in 200 iterations", residual);
  }

  Eigen::MatrixXd volterra_vjp(const Eigen::MatrixXd& fdot, const HatTape& tape, const Eigen::MatrixXd& eta_bar) const {
    const int n = grid_.steps();
    const int d = spec_.d, m = spec_.m;
    const auto& eta = tape.eta;
    // acc_a[c] = sum_{a processed} Wa(a, c) lambda_a, likewise acc_c.
    Eigen::MatrixXd acc_a = Eigen::MatrixXd::Zero(n, d), acc_c = Eigen::MatrixXd::Zero(n, d);
    auto dgamma = [&](const std::vector<Mat>& parts, const Vec& v) {
      Mat out(d, d);
      for (int q = 0; q < d; ++q) out.col(q) = parts[q] * v;
      return out;
    };
    for (int p = n; p >= 1; --p) {
      const double t = grid_.node(p);
      const Vec e = eta.row(p).transpose();
      const Mat ja = spec_.coef_drift.jacobian(t, e);
      const auto parts = spec_.coef_disp.partials(t, e);
      const Mat dg_prev = dgamma(parts, fdot.row(p - 1).transpose());
      Vec rhs = eta_bar.row(p).transpose();
      Vec left_a = acc_a.row(p - 1).transpose();
      Vec left_c = acc_c.row(p - 1).transpose();
      rhs += 0.5 * ja.transpose() * left_a + 0.5 * dg_prev.transpose() * left_c;
      if (p < n) {
        const Mat dg_here = dgamma(parts, fdot.row(p).transpose());
        rhs += 0.5 * ja.transpose() * acc_a.row(p).transpose() + 0.5 * dg_here.transpose() * acc_c.row(p).transpose();
      }
      const Mat diag = 0.5 * op_a_.weight(p, p - 1) * ja + 0.5 * op_c_.weight(p, p - 1) * dg_prev;
      const Mat lhs = Mat::Identity(d, d) - diag.transpose();
      const Vec lambda = lhs.partialPivLu().solve(rhs);
      for (int c = 0; c < p; ++c) {
        acc_a.row(c) += op_a_.weight(p, c) * lambda.transpose();
        acc_c.row(c) += op_c_.weight(p, c) * lambda.transpose();
      }
    }
    Eigen::MatrixXd fbar(n, m);
    for (int c = 0; c < n; ++c) {
      const Vec e0 = eta.row(c).transpose(), e1 = eta.row(c + 1).transpose();
      const Mat g = 0.5 * (spec_.coef_disp(grid_.node(c), e0) + spec_.coef_disp(grid_.node(c + 1), e1));
      fbar.row(c) = (g.transpose() * acc_c.row(c).transpose()).transpose();
    }
    return fbar;
  }

  Eigen::MatrixXd reflected_vjp(const Eigen::MatrixXd& fdot, const HatTape& tape, const Eigen::MatrixXd& out_bar) const {
    const int n = grid_.steps();
    const int m = spec_.m;
    const double dt = grid_.step();
    const auto& u = tape.eta;
    const auto& y = tape.out;
    Eigen::VectorXd ubar = Eigen::VectorXd::Zero(n + 1);
    Eigen::VectorXd ybar = out_bar.col(0);
    Eigen::MatrixXd fbar = Eigen::MatrixXd::Zero(n, m);
    for (int p = n; p >= 0; --p) {
      ubar(p) += ybar(p);
      if (tape.argmin[p] >= 0) ubar(tape.argmin[p]) -= ybar(p);
      if (p == 0) break;
      // U_p = U_{p-1} + (a(Y_{p-1}) + c(Y_{p-1}) f'_{p-1}) dt
      const int c = p - 1;
      const double t = grid_.node(c);
      Vec yc(1);
      yc(0) = y(c, 0);
      const Vec f = fdot.row(c).transpose();
      const Mat disp = spec_.coef_disp(t, yc);
      fbar.row(c) = (disp.transpose() * ubar(p) * dt).transpose();
      const double da = spec_.coef_drift.comp[0].gradient(t, yc)(0);
      const double dc = (spec_.coef_disp.partials(t, yc)[0] * f)(0);
      ybar(c) += ubar(p) * (da + dc) * dt;
      ubar(c) += ubar(p);
    }
    (void)u;
    return fbar;
  }

  VolProcessSpec spec_;
  TimeGrid grid_;
  std::vector<std::optional<KernelOperator>> noise_ops_, drift_ops_;
  KernelOperator op_a_, op_c_;
};

/// Euler skeleton of the auxiliary process.
inline PathFn solve_psi(const VolProcessSpec& spec, const Control& f) {
  require(has_aux(spec), ErrorCode::config, "family has no auxiliary process");
  return PathFn(f.grid, Skeleton(spec, f.grid).psi(f.dot));
}

inline PathFn gamma_y(const VolProcessSpec& spec, const Control& f) {
  return PathFn(f.grid, Skeleton(spec, f.grid).gamma(f.dot));
}

inline PathFn hat_map(const VolProcessSpec& spec, const Control& f) {
  return PathFn(f.grid, Skeleton(spec, f.grid).hat(f.dot));
}

}  // namespace vldp
