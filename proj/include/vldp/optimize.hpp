#pragma once

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "vldp/parallel.hpp"

namespace vldp {

/// Smooth objective on R^n; +inf marks points outside the domain.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual int size() const = 0;
  /// Returns the value; fills grad (length size()) when non-null.
  virtual double evaluate(const double* z, double* grad) const = 0;
};

struct OptimizerOptions {
  int restarts = 8;
  std::uint64_t seed = 20240607;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-11;
  double function_tolerance = 1e-15;
  double parameter_tolerance = 1e-14;
  int workers = 1;
  bool include_zero_start = true;
};

struct OptimizeResult {
  Eigen::VectorXd z;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int restarts = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

namespace detail {

class CeresAdapter final : public ceres::FirstOrderFunction {
 public:
  explicit CeresAdapter(const Objective& obj) : obj_(obj) {}
  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const double v = obj_.evaluate(parameters, gradient);
    if (!std::isfinite(v)) return false;
    if (gradient)
      for (int i = 0; i < obj_.size(); ++i)
        if (!std::isfinite(gradient[i])) return false;
    *cost = v;
    return true;
  }
  int NumParameters() const override { return obj_.size(); }

 private:
  const Objective& obj_;
};

inline OptimizeResult run_lbfgs(const Objective& obj, Eigen::VectorXd z, const OptimizerOptions& opt) {
  OptimizeResult res;
  const double start = obj.evaluate(z.data(), nullptr);
  if (!std::isfinite(start)) return res;
  ceres::GradientProblemSolver::Options o;
  o.line_search_direction_type = ceres::LBFGS;
  o.line_search_type = ceres::WOLFE;
  o.max_lbfgs_rank = 10;
  o.max_num_iterations = opt.max_iterations;
  o.function_tolerance = opt.function_tolerance;
  o.gradient_tolerance = opt.gradient_tolerance;
  o.parameter_tolerance = opt.parameter_tolerance;
  o.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::GradientProblem problem(new CeresAdapter(obj));
  ceres::Solve(o, problem, z.data(), &summary);
  Eigen::VectorXd g(obj.size());
  res.value = obj.evaluate(z.data(), g.data());
  res.z = std::move(z);
  res.iterations = static_cast<int>(summary.iterations.size());
  res.gradient_norm = g.norm();
  res.converged = summary.termination_type == ceres::CONVERGENCE ||
                  res.gradient_norm <= 1e-6 * std::max(1.0, std::abs(res.value));
  return res;
}

}  // namespace detail

/// Multi-start L-BFGS: zero start, caller guesses, then `restarts` Gaussian
/// starts with E||z||^2 / 2 = 1. Lowest value wins; ties within relative 1e-12
/// go to the smallest ||z||.
inline OptimizeResult minimize(const Objective& obj, const OptimizerOptions& opt,
                               const std::vector<Eigen::VectorXd>& guesses = {}) {
  const int n = obj.size();
  std::vector<Eigen::VectorXd> starts;
  if (opt.include_zero_start) starts.push_back(Eigen::VectorXd::Zero(n));
  for (const auto& g : guesses)
    if (g.size() == n) starts.push_back(g);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / std::max(1, n)));
  for (int r = 0; r < opt.restarts; ++r) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = normal(rng);
    starts.push_back(std::move(z));
  }
  auto runs = ordered_map<OptimizeResult>(starts.size(), opt.workers,
                                          [&](std::size_t i) { return detail::run_lbfgs(obj, starts[i], opt); });
  OptimizeResult best;
  int total_iterations = 0;
  for (auto& r : runs) {
    total_iterations += r.iterations;
    if (!std::isfinite(r.value)) continue;
    const bool better = !std::isfinite(best.value) || r.value < best.value - 1e-12 * std::abs(best.value) ||
                        (std::abs(r.value - best.value) <= 1e-12 * std::abs(best.value) && r.z.norm() < best.z.norm());
    if (better) best = r;
  }
  best.iterations = total_iterations;
  best.restarts = static_cast<int>(starts.size());
  return best;
}

}  // namespace vldp
