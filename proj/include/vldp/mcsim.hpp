#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/kernels.hpp"
#include "vldp/model.hpp"
#include "vldp/parallel.hpp"
#include "vldp/pricing.hpp"
#include "vldp/ratefn.hpp"
#include "vldp/volmap.hpp"

namespace vldp {

struct SimConfig {
  ModelSpec model;
  std::vector<double> epsilon_ladder{0.4, 0.2, 0.1, 0.05};
  long n_paths = 100000;
  TimeGrid grid{1.0, 200};
  std::uint64_t seed = 20240607;
  bool antithetic = false;
  int workers = 1;
  int block_size = 4096;  // paths per RNG substream
};

inline void validate(const SimConfig& cfg) {
  require(cfg.n_paths > 0, ErrorCode::domain, "n_paths must be positive");
  require(cfg.block_size > 0 && cfg.block_size % 2 == 0, ErrorCode::domain, "block size must be a positive even number");
  require(!cfg.antithetic || cfg.n_paths % 2 == 0, ErrorCode::domain, "antithetic sampling needs an even path count");
  require(!cfg.epsilon_ladder.empty(), ErrorCode::domain, "epsilon ladder is empty");
  for (std::size_t i = 0; i < cfg.epsilon_ladder.size(); ++i) {
    const double e = cfg.epsilon_ladder[i];
    require(e > 0.0 && e <= 1.0, ErrorCode::domain, "ladder entries must lie in (0, 1]");
    if (i > 0) require(e < cfg.epsilon_ladder[i - 1], ErrorCode::domain, "ladder must be strictly decreasing");
  }
}

struct McRow {
  double epsilon = 0.0;
  double estimate = 0.0;
  double estimate_se = 0.0;
  double eps_log_estimate = 0.0;  // eps log estimate; -inf with zero hits
  double std_error = 0.0;         // delta-method standard error of eps_log_estimate
  long n_effective = 0;
  long hits = 0;
  long excluded = 0;
};

struct McReport {
  std::string quantity;
  std::vector<McRow> rows;
  double reference_rate = std::numeric_limits<double>::quiet_NaN();
  bool warning_low_paths = false;

  /// Smallest epsilon whose row has at least `min_hits` hits.
  const McRow* finest(long min_hits = 1) const {
    const McRow* out = nullptr;
    for (const auto& r : rows)
      if (r.hits >= min_hits && (!out || r.epsilon < out->epsilon)) out = &r;
    return out;
  }
};

inline std::string to_csv(const McReport& rep) {
  std::string s = "epsilon,estimate,estimate_se,eps_log_estimate,std_error,n_effective,hits,excluded\n";
  char buf[512];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%ld,%ld,%ld\n", r.epsilon, r.estimate, r.estimate_se,
                  r.eps_log_estimate, r.std_error, r.n_effective, r.hits, r.excluded);
    s += buf;
  }
  return s;
}

/// Euler simulator for the scaled model on a fixed grid. Increments are
/// supplied by the caller, so shared noise and antithetic pairs are exact.
class PathSimulator {
 public:
  PathSimulator(const Model& model, const TimeGrid& grid) : model_(model), grid_(grid) {
    const auto& v = model_.vol();
    if (has_noise_kernels(v)) {
      noise_ops_.resize(v.noise_kernels.size());
      for (std::size_t i = 0; i < v.noise_kernels.size(); ++i)
        if (v.noise_kernels[i]) noise_ops_[i].emplace(*v.noise_kernels[i], grid_);
    }
    if (has_aux(v)) {
      drift_ops_.resize(v.drift_kernels.size());
      for (std::size_t i = 0; i < v.drift_kernels.size(); ++i)
        if (v.drift_kernels[i]) drift_ops_[i].emplace(*v.drift_kernels[i], grid_);
    }
    if (v.family == VolFamily::volterra_sde) {
      op_a_ = KernelOperator(v.kernel_a, grid_);
      op_c_ = KernelOperator(v.kernel_c, grid_);
    }
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  const Model& model() const noexcept { return model_; }

  /// Volatility path (nodes x d) driven by dB (steps x m). Returns false on blow-up.
  bool volatility(double eps, const Eigen::MatrixXd& dB, Eigen::MatrixXd& out) const {
    const auto& v = model_.vol();
    const int n = grid_.steps(), d = v.d, m = v.m;
    const double dt = grid_.step(), se = std::sqrt(eps);
    out.resize(n + 1, d);
    for (int i = 0; i < d; ++i) out.col(i).setConstant(v.x(i));
    switch (v.family) {
      case VolFamily::toy:
        for (int c = 0; c < n; ++c) out(c + 1, 0) = out(c, 0) + se * dB(c, 0);
        break;
      case VolFamily::gaussian:
      case VolFamily::mixed:
      case VolFamily::fractional_nongaussian: {
        if (has_noise_kernels(v))
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < m; ++j)
              if (const auto& op = noise_ops_[i * m + j]) out.col(i) += op->apply(dB.col(j) * (se / dt));
        if (has_aux(v)) {
          Eigen::MatrixXd ps(n + 1, v.k);
          Vec p = v.v0;
          ps.row(0) = p.transpose();
          for (int c = 0; c < n; ++c) {
            const double t = grid_.node(c);
            const Vec q = v.aux_truncate ? Vec(p.cwiseMax(0.0)) : p;
            const Vec db = dB.row(c).transpose();
            p = p + v.aux_drift(t, q) * dt + se * (v.aux_disp(t, q) * db);
            ps.row(c + 1) = p.transpose();
          }
          if (!ps.allFinite() || ps.cwiseAbs().maxCoeff() > 1e9) return false;
          for (int i = 0; i < d; ++i) {
            const auto& op = drift_ops_[i];
            if (!op) continue;
            const auto& u = v.u[i];
            Eigen::VectorXd cells(n);
            for (int c = 0; c < n; ++c) {
              double a = ps(c, u.source), b = ps(c + 1, u.source);
              if (v.aux_truncate) {
                a = std::max(a, 0.0);
                b = std::max(b, 0.0);
              }
              cells(c) = 0.5 * (u.apply(a) + u.apply(b));
            }
            out.col(i) += op->apply(cells);
          }
        }
        break;
      }
      case VolFamily::volterra_sde: {
        // left-point Euler, each row t_a recomputed from the stored history
        Eigen::MatrixXd drift(n, d), noise(n, d);
        for (int a = 1; a <= n; ++a) {
          const int c = a - 1;
          const double t = grid_.node(c);
          const Vec e = out.row(c).transpose();
          drift.row(c) = v.coef_drift(t, e).transpose();
          noise.row(c) = (v.coef_disp(t, e) * dB.row(c).transpose()).transpose() * (se / dt);
          for (int i = 0; i < d; ++i) {
            double acc = v.x(i);
            for (int j = 0; j < a; ++j) acc += op_a_.weight(a, j) * drift(j, i) + op_c_.weight(a, j) * noise(j, i);
            out(a, i) = acc;
          }
          if (!std::isfinite(out.row(a).sum()) || out.row(a).cwiseAbs().maxCoeff() > 1e9) return false;
        }
        break;
      }
      case VolFamily::reflected_diffusion: {
        Vec y(1);
        double running = 0.0;
        for (int c = 0; c < n; ++c) {
          running = std::min(running, out(c, 0));
          y(0) = out(c, 0) - running;
          const double t = grid_.node(c);
          out(c + 1, 0) = out(c, 0) + v.coef_drift.comp[0](t, y) * dt +
                          se * (v.coef_disp(t, y) * dB.row(c).transpose())(0);
        }
        break;
      }
    }
    if (!out.allFinite() || out.cwiseAbs().maxCoeff() > 1e9) return false;
    if (v.family == VolFamily::reflected_diffusion || v.reflect) out.col(0) = detail::skorokhod_column(out.col(0), nullptr);
    return true;
  }

  /// Log-price path relative to x0 (nodes x m). Returns false on blow-up.
  bool logprice(double eps, const Eigen::MatrixXd& dW, const Eigen::MatrixXd& dB, Eigen::MatrixXd& vol,
                Eigen::MatrixXd& x) const {
    if (!volatility(eps, dB, vol)) return false;
    const int n = grid_.steps(), m = model_.m();
    const double dt = grid_.step(), se = std::sqrt(eps);
    const auto& s = model_.spec();
    x.resize(n + 1, m);
    x.row(0).setZero();
    Vec u(vol.cols());
    for (int c = 0; c < n; ++c) {
      const double t = grid_.node(c);
      u = vol.row(c).transpose();
      const Vec b = s.drift(t, u);
      const Mat sig = s.volmat(t, u);
      const Vec noise = model_.Cbar() * dW.row(c).transpose() + model_.C() * dB.row(c).transpose();
      const Vec ito = (sig * sig.transpose()).diagonal();
      x.row(c + 1) = x.row(c) + ((b - 0.5 * eps * ito) * dt + se * (sig * noise)).transpose();
    }
    return x.allFinite() && x.cwiseAbs().maxCoeff() <= 1e9;
  }

 private:
  const Model& model_;
  TimeGrid grid_;
  std::vector<std::optional<KernelOperator>> noise_ops_, drift_ops_;
  KernelOperator op_a_, op_c_;
};

namespace detail {

inline std::mt19937_64 block_rng(std::uint64_t seed, std::uint64_t block) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32)};
  return std::mt19937_64(seq);
}

/// Per-path observer: (x path relative to x0, vol path) -> sample value.
using PathStatistic = std::function<double(const Eigen::MatrixXd&, const Eigen::MatrixXd&)>;

struct SampleMoments {
  double sum = 0.0, sum_sq = 0.0;  // over independent units (paths or antithetic pairs)
  long units = 0, samples = 0, hits = 0, excluded = 0;
};

/// Simulates all paths block by block and reduces in block order.
inline SampleMoments run_paths(const Model& model, const SimConfig& cfg, double eps, const PathStatistic& stat) {
  const PathSimulator sim(model, cfg.grid);
  const long nb = (cfg.n_paths + cfg.block_size - 1) / cfg.block_size;
  const int n = cfg.grid.steps(), m = model.m();
  const double sdt = std::sqrt(cfg.grid.step());
  auto parts = ordered_map<SampleMoments>(static_cast<std::size_t>(nb), cfg.workers, [&](std::size_t b) {
    SampleMoments acc;
    auto rng = block_rng(cfg.seed, b);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd dW(n, m), dB(n, m), vol, x;
    const long first = static_cast<long>(b) * cfg.block_size;
    const long last = std::min(cfg.n_paths, first + cfg.block_size);
    const int reps = cfg.antithetic ? 2 : 1;
    for (long p = first; p < last; p += reps) {
      for (int c = 0; c < n; ++c)
        for (int j = 0; j < m; ++j) {
          dB(c, j) = sdt * normal(rng);
          dW(c, j) = sdt * normal(rng);
        }
      double unit = 0.0;
      int ok = 0;
      for (int r = 0; r < reps; ++r) {
        if (r == 1) {
          dW = -dW;
          dB = -dB;
        }
        if (!sim.logprice(eps, dW, dB, vol, x)) {
          ++acc.excluded;
          continue;
        }
        const double v = stat(x, vol);
        unit += v;
        ++ok;
        ++acc.samples;
        if (v > 0.0) ++acc.hits;
      }
      if (ok == 0) continue;
      unit /= ok;
      acc.sum += unit;
      acc.sum_sq += unit * unit;
      ++acc.units;
    }
    return acc;
  });
  SampleMoments total;
  for (const auto& p : parts) {
    total.sum += p.sum;
    total.sum_sq += p.sum_sq;
    total.units += p.units;
    total.samples += p.samples;
    total.hits += p.hits;
    total.excluded += p.excluded;
  }
  return total;
}

inline McRow make_row(double eps, const SampleMoments& s) {
  McRow row;
  row.epsilon = eps;
  row.hits = s.hits;
  row.excluded = s.excluded;
  row.n_effective = s.samples;
  if (s.units == 0) {
    row.eps_log_estimate = -std::numeric_limits<double>::infinity();
    return row;
  }
  const double mean = s.sum / s.units;
  const double var = s.units > 1 ? std::max(0.0, (s.sum_sq - s.units * mean * mean) / (s.units - 1)) : 0.0;
  row.estimate = mean;
  row.estimate_se = std::sqrt(var / s.units);
  if (mean > 0.0) {
    row.eps_log_estimate = eps * std::log(mean);
    row.std_error = eps * row.estimate_se / mean;
  } else {
    row.estimate = 0.0;
    row.eps_log_estimate = -std::numeric_limits<double>::infinity();
  }
  return row;
}

inline McReport ladder_report(const SimConfig& cfg, const std::string& quantity, const PathStatistic& stat) {
  validate(cfg);
  const Model model(cfg.model);
  McReport rep;
  rep.quantity = quantity;
  rep.warning_low_paths = cfg.n_paths < 1000;
  for (double eps : cfg.epsilon_ladder) rep.rows.push_back(make_row(eps, run_paths(model, cfg, eps, stat)));
  const bool any = std::any_of(rep.rows.begin(), rep.rows.end(), [](const McRow& r) { return r.hits > 0; });
  if (!any) fail(ErrorCode::insufficient_sampling, "no path hit the event at any epsilon");
  return rep;
}

}  // namespace detail

/// Ensemble of nodal volatility paths (nodes x d) of the scaled process.
inline std::vector<Eigen::MatrixXd> simulate_vol(const VolProcessSpec& spec, double eps, long n_paths,
                                                 const TimeGrid& grid, std::uint64_t seed, long* excluded = nullptr) {
  require(eps >= 0.0, ErrorCode::domain, "epsilon must be >= 0");
  require(n_paths > 0, ErrorCode::domain, "n_paths must be positive");
  validate(spec);
  ModelSpec ms;
  ms.m = spec.m;
  ms.vol = spec;
  ms.drift = VectorField::zero(spec.m);
  ms.volmat = MatrixField::zero(spec.m, spec.m);
  ms.C = Mat::Zero(spec.m, spec.m);
  ms.s0 = Vec::Ones(spec.m);
  const Model model(ms);
  const PathSimulator sim(model, grid);
  const int n = grid.steps(), m = spec.m;
  const double sdt = std::sqrt(grid.step());
  std::vector<Eigen::MatrixXd> out;
  out.reserve(n_paths);
  long bad = 0;
  auto rng = detail::block_rng(seed, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd dB(n, m), vol;
  for (long p = 0; p < n_paths; ++p) {
    for (int c = 0; c < n; ++c)
      for (int j = 0; j < m; ++j) dB(c, j) = sdt * normal(rng);
    if (sim.volatility(eps, dB, vol))
      out.push_back(vol);
    else
      ++bad;
  }
  if (excluded) *excluded = bad;
  return out;
}

struct LogPriceSamples {
  Eigen::MatrixXd terminal;            // n_kept x m, X_T - x0
  std::vector<Eigen::MatrixXd> paths;  // optional nodal paths
  long excluded = 0;
};

inline LogPriceSamples simulate_logprice(const SimConfig& cfg, double eps, bool keep_paths = false) {
  require(eps >= 0.0, ErrorCode::domain, "epsilon must be >= 0");
  require(cfg.n_paths > 0, ErrorCode::domain, "n_paths must be positive");
  const Model model(cfg.model);
  const PathSimulator sim(model, cfg.grid);
  const int n = cfg.grid.steps(), m = model.m();
  const double sdt = std::sqrt(cfg.grid.step());
  LogPriceSamples out;
  std::vector<Eigen::RowVectorXd> rows;
  rows.reserve(cfg.n_paths);
  const long nb = (cfg.n_paths + cfg.block_size - 1) / cfg.block_size;
  Eigen::MatrixXd dW(n, m), dB(n, m), vol, x;
  for (long b = 0; b < nb; ++b) {
    auto rng = detail::block_rng(cfg.seed, b);
    std::normal_distribution<double> normal;
    const long last = std::min(cfg.n_paths, (b + 1) * cfg.block_size);
    for (long p = b * cfg.block_size; p < last; p += cfg.antithetic ? 2 : 1) {
      for (int c = 0; c < n; ++c)
        for (int j = 0; j < m; ++j) {
          dB(c, j) = sdt * normal(rng);
          dW(c, j) = sdt * normal(rng);
        }
      for (int r = 0; r < (cfg.antithetic ? 2 : 1); ++r) {
        if (r == 1) {
          dW = -dW;
          dB = -dB;
        }
        if (!sim.logprice(eps, dW, dB, vol, x)) {
          ++out.excluded;
          continue;
        }
        rows.push_back(x.row(n));
        if (keep_paths) out.paths.push_back(x);
      }
    }
  }
  out.terminal.resize(static_cast<Eigen::Index>(rows.size()), m);
  for (std::size_t i = 0; i < rows.size(); ++i) out.terminal.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

/// -eps log P(X_T - x0 >= k) per ladder entry against inf_{x >= k} I~_T(x).
inline McReport ldp_tail_report(const SimConfig& cfg, double k, const std::optional<RateOptions>& reference = RateOptions{}) {
  require(cfg.model.m == 1, ErrorCode::dimension, "tail report needs m = 1");
  const int n = cfg.grid.steps();
  auto rep = detail::ladder_report(cfg, "tail_probability", [k, n](const Eigen::MatrixXd& x, const Eigen::MatrixXd&) {
    return x(n, 0) >= k ? 1.0 : 0.0;
  });
  if (reference) rep.reference_rate = inf_tail(Model(cfg.model), k, cfg.grid.horizon(), *reference).value;
  return rep;
}

/// E[(S_T - K)^+] per ladder entry against the call asymptote.
inline McReport mc_call_report(const SimConfig& cfg, double K, const std::optional<RateOptions>& reference = RateOptions{}) {
  require(cfg.model.m == 1, ErrorCode::dimension, "call report needs m = 1");
  require(K > 0.0, ErrorCode::domain, "strike must be > 0");
  const int n = cfg.grid.steps();
  const double s0 = cfg.model.s0(0);
  auto rep = detail::ladder_report(cfg, "call_price", [K, n, s0](const Eigen::MatrixXd& x, const Eigen::MatrixXd&) {
    return std::max(0.0, s0 * std::exp(x(n, 0)) - K);
  });
  if (reference) {
    try {
      rep.reference_rate = call_asymptote(Model(cfg.model), K, cfg.grid.horizon(), *reference).rate;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::out_of_range) throw;
      rep.reference_rate = 0.0;
    }
  }
  return rep;
}

/// P(tau <= t) with exit detected at the grid nodes, against exit_asymptote.
inline McReport mc_exit_report(const SimConfig& cfg, const ExitDomain& dom, double t,
                               const std::optional<RateOptions>& reference = RateOptions{}) {
  require(dom.dim() == cfg.model.m, ErrorCode::dimension, "domain dimension must equal m");
  SimConfig c = cfg;
  c.grid = TimeGrid(t, cfg.grid.steps());
  const Vec x0 = cfg.model.s0.array().log().matrix();
  const auto fs = faces(dom);
  auto outside = [fs](const Eigen::VectorXd& y) {
    for (const auto& f : fs)
      if (f.normal.dot(y) >= f.level) return true;
    return false;
  };
  const int nodes = c.grid.nodes();
  auto rep = detail::ladder_report(c, "exit_probability", [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd&) {
    for (int a = 0; a < nodes; ++a)
      if (outside(x0 + x.row(a).transpose())) return 1.0;
    return 0.0;
  });
  if (reference) rep.reference_rate = exit_asymptote(Model(cfg.model), dom, t, *reference).rate;
  return rep;
}

}  // namespace vldp
