#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/fields.hpp"
#include "vldp/paths.hpp"
#include "vldp/volmap.hpp"

namespace vldp {

/// Multivariate stochastic volatility model
///   dX = b(t, B_hat) dt + sigma(t, B_hat) (Cbar dW + C dB),  X = log S,
/// with B_hat the volatility process described by `vol`.
struct ModelSpec {
  std::string name = "model";
  int m = 1;
  VolProcessSpec vol;
  VectorField drift;   // m components over R^d
  MatrixField volmat;  // m x m over R^d
  Mat C = Mat::Zero(1, 1);
  Vec s0 = Vec::Ones(1);
  double r = 0.0;
  double horizon = 1.0;
  bool sigma_may_vanish = false;
  bool assumption_b = true;
};

/// sqrt(I - C'C) as the symmetric positive definite root.
inline Mat correlation_complement(const Mat& C) {
  require(C.rows() == C.cols(), ErrorCode::dimension, "C must be square");
  require(C.norm() < 1.0, ErrorCode::domain, "correlation matrix needs Frobenius norm < 1");
  const Mat a = Mat::Identity(C.rows(), C.cols()) - C.transpose() * C;
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  const Mat root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                   es.eigenvectors().transpose();
  if ((root * root - a).cwiseAbs().maxCoeff() > 1e-10)
    fail(ErrorCode::domain, "matrix square root of I - C'C failed its residual check");
  return root;
}

/// Validated model with derived correlation quantities.
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    check_dim(spec_.m, "asset dimension m");
    validate(spec_.vol);
    require(spec_.vol.m == spec_.m, ErrorCode::dimension, "volatility driving dimension must equal m");
    require(spec_.drift.size() == spec_.m, ErrorCode::dimension, "drift must have m components");
    require(spec_.volmat.rows() == spec_.m && spec_.volmat.cols() == spec_.m, ErrorCode::dimension,
            "volatility matrix must be m x m");
    require(spec_.C.rows() == spec_.m && spec_.C.cols() == spec_.m, ErrorCode::dimension, "C must be m x m");
    require(spec_.s0.size() == spec_.m && (spec_.s0.array() > 0.0).all(), ErrorCode::domain,
            "s0 must have m positive entries");
    require(spec_.r >= 0.0, ErrorCode::domain, "interest rate must be >= 0");
    require(spec_.horizon > 0.0, ErrorCode::domain, "horizon must be > 0");
    cbar_ = correlation_complement(spec_.C);
    cbar_inv_ = cbar_.inverse();
    x0_ = spec_.s0.array().log().matrix();
    if (spec_.volmat.is_scaled()) {
      const Mat o = spec_.volmat.factor() * cbar_;
      orthogonal_scalar_ = (o * o.transpose() - Mat::Identity(spec_.m, spec_.m)).cwiseAbs().maxCoeff() < 1e-10;
    }
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const VolProcessSpec& vol() const noexcept { return spec_.vol; }
  int m() const noexcept { return spec_.m; }
  int d() const noexcept { return spec_.vol.d; }
  const Mat& C() const noexcept { return spec_.C; }
  const Mat& Cbar() const noexcept { return cbar_; }
  const Mat& Cbar_inv() const noexcept { return cbar_inv_; }
  const Vec& x0() const noexcept { return x0_; }
  bool uncorrelated() const { return spec_.C.cwiseAbs().maxCoeff() == 0.0; }

  /// sigma = xi * O * Cbar^{-1} with O orthogonal (automatic for m = 1 scaled forms).
  bool orthogonal_scalar() const noexcept { return orthogonal_scalar_; }

  /// Drift and volatility do not depend on the volatility state.
  bool state_free() const { return spec_.drift.state_free() && spec_.volmat.state_free(); }

 private:
  ModelSpec spec_;
  Mat cbar_, cbar_inv_;
  Vec x0_;
  bool orthogonal_scalar_ = false;
};

/// Coefficients b, sigma and their state derivatives at one node.
struct CellCoefficients {
  Vec b;
  Mat sigma;
  Mat db;                    // m x d
  std::vector<Mat> dsigma;   // d entries of m x m
};

inline CellCoefficients coefficients(const Model& model, double t, const Vec& u, bool with_derivatives) {
  const auto& s = model.spec();
  CellCoefficients c;
  c.b = s.drift(t, u);
  c.sigma = s.volmat(t, u);
  if (with_derivatives) {
    c.db = s.drift.jacobian(t, u);
    c.dsigma = s.volmat.partials(t, u);
  }
  return c;
}

}  // namespace vldp
