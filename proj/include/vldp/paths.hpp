#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "vldp/error.hpp"

namespace vldp {

/// Largest supported asset, volatility and auxiliary dimension. Small vectors
/// and matrices live on the stack, which keeps per-node coefficient calls
/// allocation free inside the Monte Carlo loops.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline void check_dim(int dim, const char* what) {
  if (dim < 1 || dim > kMaxDim)
    fail(ErrorCode::dimension, std::string(what) + " must be in [1, " + std::to_string(kMaxDim) + "]");
}

/// Uniform partition t_j = j T / n of [0, T].
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, int n_steps) : horizon_(horizon), n_steps_(n_steps) {
    require(std::isfinite(horizon) && horizon > 0.0, ErrorCode::domain, "grid horizon must be > 0");
    require(n_steps > 0, ErrorCode::domain, "grid needs at least one step");
  }

  double horizon() const noexcept { return horizon_; }
  int steps() const noexcept { return n_steps_; }
  int nodes() const noexcept { return n_steps_ + 1; }
  double step() const noexcept { return horizon_ / n_steps_; }
  double node(int j) const noexcept { return j == n_steps_ ? horizon_ : horizon_ * j / n_steps_; }

  /// Same horizon, `factor` times as many steps.
  TimeGrid refined(int factor) const { return TimeGrid(horizon_, n_steps_ * factor); }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.horizon_ == b.horizon_ && a.n_steps_ == b.n_steps_;
  }

 private:
  double horizon_ = 1.0;
  int n_steps_ = 1;
};

/// Piecewise-linear element of the Cameron-Martin space (H^1_0)^m, stored as
/// its per-interval derivative: row j of `dot` is f'(t) on [t_j, t_{j+1}).
struct Control {
  TimeGrid grid;
  Eigen::MatrixXd dot;  // steps x dim

  Control() = default;
  Control(TimeGrid g, int dim) : grid(g), dot(Eigen::MatrixXd::Zero(g.steps(), dim)) {}
  Control(TimeGrid g, Eigen::MatrixXd values) : grid(g), dot(std::move(values)) {
    require(dot.rows() == grid.steps(), ErrorCode::dimension, "control rows must equal grid steps");
  }

  int dim() const noexcept { return static_cast<int>(dot.cols()); }

  static Control constant(TimeGrid g, const Eigen::VectorXd& slope) {
    Control c(g, static_cast<int>(slope.size()));
    c.dot.rowwise() = slope.transpose();
    return c;
  }
};

/// Nodal path: row j holds the value at t_j.
struct PathFn {
  TimeGrid grid;
  Eigen::MatrixXd values;  // nodes x dim

  PathFn() = default;
  PathFn(TimeGrid g, int dim) : grid(g), values(Eigen::MatrixXd::Zero(g.nodes(), dim)) {}
  PathFn(TimeGrid g, Eigen::MatrixXd v) : grid(g), values(std::move(v)) {
    require(values.rows() == grid.nodes(), ErrorCode::dimension, "path rows must equal grid nodes");
  }

  int dim() const noexcept { return static_cast<int>(values.cols()); }
  double sup_distance(const PathFn& other) const {
    require(values.rows() == other.values.rows() && values.cols() == other.values.cols(),
            ErrorCode::dimension, "path shapes differ");
    return (values - other.values).cwiseAbs().maxCoeff();
  }
};

/// Cameron-Martin energy 1/2 int ||f'||^2, exact for piecewise-linear controls.
inline double energy(const Control& c) { return 0.5 * c.dot.squaredNorm() * c.grid.step(); }

inline PathFn integrate(const Control& c) {
  PathFn p(c.grid, c.dim());
  const double dt = c.grid.step();
  for (int j = 0; j < c.grid.steps(); ++j) p.values.row(j + 1) = p.values.row(j) + c.dot.row(j) * dt;
  return p;
}

/// Recovers the control whose integral is `p` (p(0) must be 0).
inline Control differentiate(const PathFn& p) {
  Control c(p.grid, p.dim());
  const double dt = p.grid.step();
  for (int j = 0; j < p.grid.steps(); ++j) c.dot.row(j) = (p.values.row(j + 1) - p.values.row(j)) / dt;
  return c;
}

/// Reflection at zero on the half-line: p(t) - min_{s<=t} (p(s) ^ 0).
inline PathFn skorokhod_map(const PathFn& p) {
  if (p.dim() != 1) fail(ErrorCode::unsupported_domain, "Skorokhod map is implemented for the half-line only");
  PathFn out(p.grid, 1);
  double running = 0.0;
  for (int j = 0; j < p.grid.nodes(); ++j) {
    running = std::min(running, p.values(j, 0));
    out.values(j, 0) = p.values(j, 0) - running;
  }
  return out;
}

/// CSV with column 0 the node time and columns 1..dim the values.
inline std::string to_csv(const PathFn& p) {
  std::ostringstream os;
  os.precision(17);
  os << "t";
  for (int k = 0; k < p.dim(); ++k) os << ",v" << k;
  os << "\n";
  for (int j = 0; j < p.grid.nodes(); ++j) {
    os << p.grid.node(j);
    for (int k = 0; k < p.dim(); ++k) os << "," << p.values(j, k);
    os << "\n";
  }
  return os.str();
}

/// Controls are written interval by interval, keyed by the left node time.
inline std::string to_csv(const Control& c) {
  std::ostringstream os;
  os.precision(17);
  os << "t";
  for (int k = 0; k < c.dim(); ++k) os << ",dot" << k;
  os << "\n";
  for (int j = 0; j < c.grid.steps(); ++j) {
    os << c.grid.node(j);
    for (int k = 0; k < c.dim(); ++k) os << "," << c.dot(j, k);
    os << "\n";
  }
  return os.str();
}

}  // namespace vldp
