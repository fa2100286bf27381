#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vldp/error.hpp"
#include "vldp/paths.hpp"

namespace vldp {

/// Outer nonlinearity of an affine coefficient form.
enum class Phi { one, identity, exp, sqrt_pos, abs, square };

inline std::string to_string(Phi p) {
  switch (p) {
    case Phi::one: return "one";
    case Phi::identity: return "identity";
    case Phi::exp: return "exp";
    case Phi::sqrt_pos: return "sqrt_pos";
    case Phi::abs: return "abs";
    case Phi::square: return "square";
  }
  return "one";
}

inline Phi phi_from_string(const std::string& s) {
  if (s == "one" || s == "constant") return Phi::one;
  if (s == "identity" || s == "linear") return Phi::identity;
  if (s == "exp") return Phi::exp;
  if (s == "sqrt_pos" || s == "sqrt") return Phi::sqrt_pos;
  if (s == "abs") return Phi::abs;
  if (s == "square") return Phi::square;
  fail(ErrorCode::config, "unknown coefficient nonlinearity '" + s + "'");
}

/// scale * phi(time_coef * t + <weights, x> + shift). Missing trailing
/// weights count as zero.
struct AffineForm {
  Phi phi = Phi::one;
  double scale = 0.0;
  double time_coef = 0.0;
  std::vector<double> weights;
  double shift = 0.0;

  double argument(double t, const Vec& x) const {
    double z = time_coef * t + shift;
    const int n = std::min<int>(static_cast<int>(weights.size()), static_cast<int>(x.size()));
    for (int i = 0; i < n; ++i) z += weights[i] * x(i);
    return z;
  }

  double outer(double z) const {
    switch (phi) {
      case Phi::one: return 1.0;
      case Phi::identity: return z;
      case Phi::exp: return std::exp(z);
      case Phi::sqrt_pos: return z > 0.0 ? std::sqrt(z) : 0.0;
      case Phi::abs: return std::abs(z);
      case Phi::square: return z * z;
    }
    return 0.0;
  }

  // One-sided choices at kinks: sqrt_pos' = 0 for z <= 0, abs' = sign(z).
  double outer_derivative(double z) const {
    switch (phi) {
      case Phi::one: return 0.0;
      case Phi::identity: return 1.0;
      case Phi::exp: return std::exp(z);
      case Phi::sqrt_pos: return z > 0.0 ? 0.5 / std::sqrt(z) : 0.0;
      case Phi::abs: return z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
      case Phi::square: return 2.0 * z;
    }
    return 0.0;
  }
};

/// Scalar coefficient (t, x) -> R. Either an AffineForm (analytic gradient,
/// serializable) or an arbitrary closure, optionally with its gradient; a
/// closure without gradient is differentiated by central differences.
class ScalarFn {
 public:
  using Fn = std::function<double(double, const Vec&)>;
  using Grad = std::function<Vec(double, const Vec&)>;

  ScalarFn() = default;
  ScalarFn(AffineForm f) : form_(std::move(f)) {}  // NOLINT

  static ScalarFn constant(double c) {
    AffineForm f;
    f.phi = Phi::one;
    f.scale = c;
    return ScalarFn(f);
  }
  static ScalarFn affine(double c, std::vector<double> w, double time_coef = 0.0) {
    AffineForm f;
    f.phi = Phi::identity;
    f.scale = 1.0;
    f.shift = c;
    f.weights = std::move(w);
    f.time_coef = time_coef;
    return ScalarFn(f);
  }
  static ScalarFn custom(Fn fn, Grad grad = {}) {
    ScalarFn s;
    s.fn_ = std::move(fn);
    s.grad_ = std::move(grad);
    s.form_.reset();
    return s;
  }

  double operator()(double t, const Vec& x) const {
    if (form_) return form_->scale * form_->outer(form_->argument(t, x));
    return fn_(t, x);
  }

  Vec gradient(double t, const Vec& x) const {
    const int n = static_cast<int>(x.size());
    Vec g = Vec::Zero(n);
    if (form_) {
      if (form_->phi == Phi::one) return g;
      const double d = form_->scale * form_->outer_derivative(form_->argument(t, x));
      const int w = std::min<int>(static_cast<int>(form_->weights.size()), n);
      for (int i = 0; i < w; ++i) g(i) = d * form_->weights[i];
      return g;
    }
    if (grad_) return grad_(t, x);
    Vec xp = x;
    for (int i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
      xp(i) = x(i) + h;
      const double up = fn_(t, xp);
      xp(i) = x(i) - h;
      const double dn = fn_(t, xp);
      xp(i) = x(i);
      g(i) = (up - dn) / (2.0 * h);
    }
    return g;
  }

  /// Independent of x (may still depend on t).
  bool state_free() const {
    if (!form_) return false;
    if (form_->phi == Phi::one) return true;
    for (double w : form_->weights)
      if (w != 0.0) return false;
    return true;
  }
  bool identically_zero() const { return form_ && form_->scale == 0.0; }
  const std::optional<AffineForm>& form() const noexcept { return form_; }

 private:
  std::optional<AffineForm> form_ = AffineForm{};
  Fn fn_;
  Grad grad_;
};

/// x -> (F_1(t, x), ..., F_n(t, x)).
struct VectorField {
  std::vector<ScalarFn> comp;

  VectorField() = default;
  explicit VectorField(std::vector<ScalarFn> c) : comp(std::move(c)) {}
  static VectorField zero(int n) { return VectorField(std::vector<ScalarFn>(n, ScalarFn::constant(0.0))); }

  int size() const noexcept { return static_cast<int>(comp.size()); }

  Vec operator()(double t, const Vec& x) const {
    Vec out(size());
    for (int i = 0; i < size(); ++i) out(i) = comp[i](t, x);
    return out;
  }

  /// rows = components, cols = dim(x)
  Mat jacobian(double t, const Vec& x) const {
    Mat j(size(), x.size());
    for (int i = 0; i < size(); ++i) j.row(i) = comp[i].gradient(t, x).transpose();
    return j;
  }

  bool state_free() const {
    for (const auto& c : comp)
      if (!c.state_free()) return false;
    return true;
  }
};

/// Matrix-valued coefficient. Either entrywise, or xi(t, x) * M for a constant M.
class MatrixField {
 public:
  MatrixField() = default;

  static MatrixField entrywise(int rows, int cols, std::vector<ScalarFn> entries) {
    require(static_cast<int>(entries.size()) == rows * cols, ErrorCode::dimension, "matrix field entry count");
    MatrixField m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.entries_ = std::move(entries);
    return m;
  }
  static MatrixField scaled(ScalarFn xi, Mat factor) {
    MatrixField m;
    m.rows_ = static_cast<int>(factor.rows());
    m.cols_ = static_cast<int>(factor.cols());
    m.xi_ = std::move(xi);
    m.factor_ = std::move(factor);
    m.scaled_ = true;
    return m;
  }
  static MatrixField zero(int rows, int cols) {
    return entrywise(rows, cols, std::vector<ScalarFn>(rows * cols, ScalarFn::constant(0.0)));
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  bool is_scaled() const noexcept { return scaled_; }
  const ScalarFn& xi() const { return xi_; }
  const Mat& factor() const { return factor_; }
  const ScalarFn& entry(int i, int j) const { return entries_[i * cols_ + j]; }

  Mat operator()(double t, const Vec& x) const {
    if (scaled_) return xi_(t, x) * factor_;
    Mat out(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(i, j) = entry(i, j)(t, x);
    return out;
  }

  /// Partial derivatives d/dx_k for k = 0..dim(x)-1.
  std::vector<Mat> partials(double t, const Vec& x) const {
    const int n = static_cast<int>(x.size());
    std::vector<Mat> out(n, Mat::Zero(rows_, cols_));
    if (scaled_) {
      const Vec g = xi_.gradient(t, x);
      for (int k = 0; k < n; ++k) out[k] = g(k) * factor_;
      return out;
    }
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) {
        const auto& e = entry(i, j);
        if (e.state_free()) continue;
        const Vec g = e.gradient(t, x);
        for (int k = 0; k < n; ++k) out[k](i, j) = g(k);
      }
    return out;
  }

  bool state_free() const {
    if (scaled_) return xi_.state_free();
    for (const auto& e : entries_)
      if (!e.state_free()) return false;
    return true;
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<ScalarFn> entries_;
  ScalarFn xi_;
  Mat factor_;
  bool scaled_ = false;
};

}  // namespace vldp
