#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "vldp/optimize.hpp"

namespace vldp::check {

inline Eigen::VectorXd fd_gradient(const Objective& obj, const Eigen::VectorXd& z, double h = 1e-6) {
  Eigen::VectorXd g(z.size()), zp = z;
  for (int i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + h;
    const double up = obj.evaluate(zp.data(), nullptr);
    zp(i) = z(i) - h;
    const double dn = obj.evaluate(zp.data(), nullptr);
    zp(i) = z(i);
    g(i) = (up - dn) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

}  // namespace vldp::check
