#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vldp/error.hpp"
#include "vldp/fields.hpp"
#include "vldp/kernels.hpp"
#include "vldp/model.hpp"
#include "vldp/toymodel.hpp"
#include "vldp/volmap.hpp"

namespace vldp::io {

using json = nlohmann::json;

namespace detail {

inline const json& at(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::config, std::string("missing key '") + key + "'");
  return j.at(key);
}

inline double number(const json& j, const char* what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  fail(ErrorCode::config, std::string(what) + " must be a number");
}

inline json number_json(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return v;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::config, std::string("key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline Vec vec_from_json(const json& j, const char* what) {
  if (j.is_number()) {
    Vec v(1);
    v(0) = j.get<double>();
    return v;
  }
  if (!j.is_array() || j.empty() || j.size() > static_cast<std::size_t>(kMaxDim))
    fail(ErrorCode::config, std::string(what) + " must be a number or a non-empty array of at most 4 numbers");
  Vec v(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = detail::number(j[i], what);
  return v;
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(detail::number_json(v(i)));
  return a;
}

inline Mat mat_from_json(const json& j, const char* what) {
  if (j.is_number()) {
    Mat m(1, 1);
    m(0, 0) = j.get<double>();
    return m;
  }
  if (!j.is_array() || j.empty() || !j[0].is_array())
    fail(ErrorCode::config, std::string(what) + " must be a number or an array of rows");
  const int r = static_cast<int>(j.size()), c = static_cast<int>(j[0].size());
  check_dim(r, what);
  check_dim(c, what);
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    if (!j[i].is_array() || static_cast<int>(j[i].size()) != c) fail(ErrorCode::config, std::string(what) + " rows differ in length");
    for (int k = 0; k < c; ++k) m(i, k) = detail::number(j[i][k], what);
  }
  return m;
}

inline json to_json(const Mat& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    a.push_back(row);
  }
  return a;
}

/// A number c, or {"phi", "scale", "t", "w", "shift"} for scale * phi(t*time + w.x + shift).
inline ScalarFn scalar_from_json(const json& j) {
  if (j.is_number()) return ScalarFn::constant(j.get<double>());
  if (!j.is_object()) fail(ErrorCode::config, "coefficient must be a number or an object");
  AffineForm f;
  f.phi = phi_from_string(detail::get_or<std::string>(j, "phi", "identity"));
  f.scale = detail::get_or(j, "scale", 1.0);
  f.time_coef = detail::get_or(j, "t", 0.0);
  f.shift = detail::get_or(j, "shift", 0.0);
  if (j.contains("w")) {
    const auto& w = j.at("w");
    if (w.is_number())
      f.weights = {w.get<double>()};
    else
      f.weights = detail::get_or<std::vector<double>>(j, "w", {});
  }
  return ScalarFn(f);
}

inline json to_json(const ScalarFn& s) {
  if (!s.form()) fail(ErrorCode::config, "closure coefficients cannot be serialized");
  const auto& f = *s.form();
  if (f.phi == Phi::one) return f.scale;
  return json{{"phi", to_string(f.phi)}, {"scale", f.scale}, {"t", f.time_coef}, {"w", f.weights}, {"shift", f.shift}};
}

inline VectorField vector_field_from_json(const json& j, int n, const char* what) {
  if (j.is_null()) return VectorField::zero(n);
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    fail(ErrorCode::config, std::string(what) + " must list " + std::to_string(n) + " coefficients");
  std::vector<ScalarFn> c;
  for (const auto& e : j) c.push_back(scalar_from_json(e));
  return VectorField(std::move(c));
}

inline json to_json(const VectorField& v) {
  json a = json::array();
  for (const auto& c : v.comp) a.push_back(to_json(c));
  return a;
}

inline MatrixField entrywise_from_json(const json& j, int rows, int cols, const char* what) {
  if (j.is_null()) return MatrixField::zero(rows, cols);
  if (rows == 1 && cols == 1 && !j.is_array()) return MatrixField::entrywise(1, 1, {scalar_from_json(j)});
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    fail(ErrorCode::config, std::string(what) + " must have " + std::to_string(rows) + " rows");
  std::vector<ScalarFn> e;
  for (const auto& row : j) {
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      fail(ErrorCode::config, std::string(what) + " rows must have " + std::to_string(cols) + " entries");
    for (const auto& x : row) e.push_back(scalar_from_json(x));
  }
  return MatrixField::entrywise(rows, cols, std::move(e));
}

inline json to_json(const MatrixField& m) {
  if (m.is_scaled()) return json{{"form", "scaled"}, {"xi", to_json(m.xi())}, {"factor", to_json(m.factor())}};
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int k = 0; k < m.cols(); ++k) row.push_back(to_json(m.entry(i, k)));
    rows.push_back(row);
  }
  return json{{"form", "entrywise"}, {"entries", rows}};
}

/// "brownian", or {"kind", "hurst" | "beta" | "t_max" + "values"}.
inline KernelSpec kernel_from_json(const json& j) {
  const std::string kind = j.is_string() ? j.get<std::string>() : detail::get_or<std::string>(j, "kind", "");
  KernelSpec k;
  if (kind == "brownian") {
    k = KernelSpec::brownian();
  } else if (kind == "riemann_liouville") {
    k = KernelSpec::riemann_liouville(detail::number(detail::at(j, "hurst"), "hurst"));
  } else if (kind == "fbm_molchan_golosov") {
    k = KernelSpec::molchan_golosov(detail::number(detail::at(j, "hurst"), "hurst"));
  } else if (kind == "logarithmic") {
    k = KernelSpec::logarithmic(detail::number(detail::at(j, "beta"), "beta"));
  } else if (kind == "tabulated") {
    auto t = std::make_shared<KernelTable>();
    t->t_max = detail::number(detail::at(j, "t_max"), "t_max");
    const auto& v = detail::at(j, "values");
    if (!v.is_array()) fail(ErrorCode::config, "tabulated values must be an array of rows");
    t->size = static_cast<int>(v.size());
    for (const auto& row : v) {
      if (!row.is_array() || row.size() != v.size()) fail(ErrorCode::config, "tabulated kernel table must be square");
      for (const auto& x : row) t->values.push_back(detail::number(x, "kernel value"));
    }
    k = KernelSpec::tabulated(std::move(t));
  } else {
    fail(ErrorCode::config, "unknown kernel kind '" + kind + "'");
  }
  validate(k);
  return k;
}

inline json to_json(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::brownian: return "brownian";
    case KernelKind::riemann_liouville:
    case KernelKind::fbm_molchan_golosov: return json{{"kind", to_string(k.kind)}, {"hurst", k.hurst}};
    case KernelKind::logarithmic: return json{{"kind", "logarithmic"}, {"beta", k.beta}};
    case KernelKind::tabulated: {
      json rows = json::array();
      for (int i = 0; i < k.table->size; ++i) {
        json row = json::array();
        for (int c = 0; c < k.table->size; ++c) row.push_back(k.table->at(i, c));
        rows.push_back(row);
      }
      return json{{"kind", "tabulated"}, {"t_max", k.table->t_max}, {"values", rows}};
    }
  }
  return "brownian";
}

inline std::optional<KernelSpec> optional_kernel(const json& j) {
  if (j.is_null()) return std::nullopt;
  return kernel_from_json(j);
}

inline json to_json(const std::optional<KernelSpec>& k) { return k ? to_json(*k) : json(nullptr); }

inline VolProcessSpec vol_from_json(const json& j, int m) {
  if (!j.is_object()) fail(ErrorCode::config, "vol must be an object");
  VolProcessSpec s;
  s.family = family_from_string(detail::get_or<std::string>(j, "family", "toy"));
  s.m = m;
  s.d = detail::get_or(j, "d", 1);
  check_dim(s.d, "volatility dimension d");
  s.x = j.contains("x") ? vec_from_json(j.at("x"), "x") : Vec(Vec::Zero(s.d));
  s.reflect = detail::get_or(j, "reflect", false);
  if (has_noise_kernels(s) && j.contains("noise_kernels")) {
    const auto& nk = j.at("noise_kernels");
    if (!nk.is_array() || static_cast<int>(nk.size()) != s.d) fail(ErrorCode::config, "noise_kernels must have d rows");
    for (const auto& row : nk) {
      if (!row.is_array() || static_cast<int>(row.size()) != m) fail(ErrorCode::config, "noise_kernels rows need m entries");
      for (const auto& k : row) s.noise_kernels.push_back(optional_kernel(k));
    }
  } else if (j.contains("noise_kernels")) {
    fail(ErrorCode::config, "noise kernels are only allowed for gaussian and mixed families");
  }
  if (has_aux(s)) {
    s.k = detail::get_or(j, "k", 1);
    check_dim(s.k, "auxiliary dimension k");
    const auto& dk = detail::at(j, "drift_kernels");
    if (!dk.is_array() || static_cast<int>(dk.size()) != s.d) fail(ErrorCode::config, "drift_kernels must list d kernels");
    for (const auto& k : dk) s.drift_kernels.push_back(optional_kernel(k));
    const auto& u = detail::at(j, "u");
    if (!u.is_array() || static_cast<int>(u.size()) != s.d) fail(ErrorCode::config, "u must list d components");
    for (const auto& c : u) {
      UComponent uc;
      uc.map = umap_from_string(detail::get_or<std::string>(c, "map", "identity"));
      uc.source = detail::get_or(c, "source", 0);
      s.u.push_back(uc);
    }
    s.aux_drift = vector_field_from_json(detail::at(j, "aux_drift"), s.k, "aux_drift");
    s.aux_disp = entrywise_from_json(detail::at(j, "aux_disp"), s.k, m, "aux_disp");
    s.v0 = vec_from_json(detail::at(j, "v0"), "v0");
    s.aux_truncate = detail::get_or(j, "aux_truncate", false);
  } else if (j.contains("drift_kernels")) {
    fail(ErrorCode::config, "drift kernels are only allowed for mixed and fractional families");
  }
  if (s.family == VolFamily::volterra_sde || s.family == VolFamily::reflected_diffusion) {
    s.kernel_a = j.contains("kernel_a") ? kernel_from_json(j.at("kernel_a")) : KernelSpec::brownian();
    s.kernel_c = j.contains("kernel_c") ? kernel_from_json(j.at("kernel_c")) : KernelSpec::brownian();
    s.coef_drift = vector_field_from_json(detail::at(j, "coef_drift"), s.d, "coef_drift");
    s.coef_disp = entrywise_from_json(detail::at(j, "coef_disp"), s.d, m, "coef_disp");
  }
  validate(s);
  return s;
}

inline json to_json(const VolProcessSpec& s) {
  json j{{"family", to_string(s.family)}, {"d", s.d}, {"x", to_json(s.x)}, {"reflect", s.reflect}};
  if (has_noise_kernels(s)) {
    json rows = json::array();
    for (int i = 0; i < s.d; ++i) {
      json row = json::array();
      for (int c = 0; c < s.m; ++c) row.push_back(to_json(s.noise_kernels[i * s.m + c]));
      rows.push_back(row);
    }
    j["noise_kernels"] = rows;
  }
  if (has_aux(s)) {
    j["k"] = s.k;
    json dk = json::array();
    for (const auto& k : s.drift_kernels) dk.push_back(to_json(k));
    j["drift_kernels"] = dk;
    json u = json::array();
    for (const auto& c : s.u) u.push_back(json{{"map", to_string(c.map)}, {"source", c.source}});
    j["u"] = u;
    j["aux_drift"] = to_json(s.aux_drift);
    j["aux_disp"] = to_json(s.aux_disp)["entries"];
    j["v0"] = to_json(s.v0);
    j["aux_truncate"] = s.aux_truncate;
  }
  if (s.family == VolFamily::volterra_sde || s.family == VolFamily::reflected_diffusion) {
    j["kernel_a"] = to_json(s.kernel_a);
    j["kernel_c"] = to_json(s.kernel_c);
    j["coef_drift"] = to_json(s.coef_drift);
    j["coef_disp"] = to_json(s.coef_disp)["entries"];
  }
  return j;
}

// ---------------------------------------------------------------- presets

inline ModelSpec preset_bs_const(double sigma0 = 0.2, double T = 1.0) {
  ModelSpec s;
  s.name = "bs_const";
  s.vol.family = VolFamily::toy;
  s.drift = VectorField::zero(1);
  s.volmat = MatrixField::scaled(ScalarFn::constant(sigma0), Mat::Identity(1, 1));
  s.horizon = T;
  return s;
}

inline ModelSpec preset_toy_sabr() { return toy_model_spec(1.0); }

inline ModelSpec preset_rough_gauss() {
  ModelSpec s;
  s.name = "rough_gauss";
  s.vol.family = VolFamily::gaussian;
  s.vol.noise_kernels = {KernelSpec::riemann_liouville(0.3)};
  s.drift = VectorField::zero(1);
  AffineForm f;
  f.phi = Phi::exp;
  f.scale = 0.2;
  f.weights = {1.0};
  s.volmat = MatrixField::scaled(ScalarFn(f), Mat::Identity(1, 1));
  s.C(0, 0) = -0.3;
  return s;
}

inline ModelSpec preset_frac_heston() {
  const double kappa = 1.0, theta = 0.04, eta = 0.3;
  ModelSpec s;
  s.name = "frac_heston";
  auto& v = s.vol;
  v.family = VolFamily::fractional_nongaussian;
  v.k = 1;
  v.x = Vec::Constant(1, 0.02);
  v.drift_kernels = {KernelSpec::riemann_liouville(0.3)};
  v.u = {UComponent{UMap::identity, 0}};
  v.aux_drift = VectorField({ScalarFn::affine(kappa * theta, {-kappa})});
  AffineForm disp;
  disp.phi = Phi::sqrt_pos;
  disp.scale = eta;
  disp.weights = {1.0};
  v.aux_disp = MatrixField::entrywise(1, 1, {ScalarFn(disp)});
  v.v0 = Vec::Constant(1, 0.04);
  v.aux_truncate = true;
  s.drift = VectorField::zero(1);
  AffineForm sig;
  sig.phi = Phi::sqrt_pos;
  sig.scale = 1.0;
  sig.weights = {1.0};
  s.volmat = MatrixField::scaled(ScalarFn(sig), Mat::Identity(1, 1));
  s.C(0, 0) = -0.5;
  s.sigma_may_vanish = true;
  return s;
}

inline ModelSpec preset_mixed_demo() {
  ModelSpec s;
  s.name = "mixed_demo";
  auto& v = s.vol;
  v.family = VolFamily::mixed;
  v.k = 1;
  v.noise_kernels = {KernelSpec::riemann_liouville(0.3)};
  v.drift_kernels = {KernelSpec::brownian()};
  v.u = {UComponent{UMap::identity, 0}};
  v.aux_drift = VectorField({ScalarFn::affine(0.0, {-1.0})});
  v.aux_disp = MatrixField::entrywise(1, 1, {ScalarFn::constant(0.3)});
  v.v0 = Vec::Constant(1, 0.1);
  s.drift = VectorField::zero(1);
  AffineForm f;
  f.phi = Phi::exp;
  f.scale = 0.15;
  f.weights = {1.0};
  s.volmat = MatrixField::scaled(ScalarFn(f), Mat::Identity(1, 1));
  s.C(0, 0) = -0.3;
  return s;
}

inline ModelSpec preset_reflected_ou() {
  ModelSpec s;
  s.name = "reflected_ou";
  auto& v = s.vol;
  v.family = VolFamily::reflected_diffusion;
  v.x = Vec::Constant(1, 0.1);
  v.coef_drift = VectorField({ScalarFn::affine(0.1, {-1.0})});
  v.coef_disp = MatrixField::entrywise(1, 1, {ScalarFn::constant(0.3)});
  s.drift = VectorField::zero(1);
  s.volmat = MatrixField::scaled(ScalarFn::affine(0.05, {1.0}), Mat::Identity(1, 1));
  s.C(0, 0) = -0.3;
  return s;
}

inline std::vector<std::string> preset_names() {
  return {"bs_const", "toy_sabr", "rough_gauss", "frac_heston", "mixed_demo", "reflected_ou"};
}

inline ModelSpec preset(const std::string& name) {
  if (name == "bs_const") return preset_bs_const();
  if (name == "toy_sabr") return preset_toy_sabr();
  if (name == "rough_gauss") return preset_rough_gauss();
  if (name == "frac_heston") return preset_frac_heston();
  if (name == "mixed_demo") return preset_mixed_demo();
  if (name == "reflected_ou") return preset_reflected_ou();
  fail(ErrorCode::config, "unknown preset '" + name + "'");
}

// ---------------------------------------------------------------- model

/// Model JSON. A "preset" key starts from a bundled model; other keys override it.
inline ModelSpec model_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::config, "model must be a JSON object");
  ModelSpec s = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : ModelSpec{};
  s.name = detail::get_or(j, "name", s.name);
  s.m = detail::get_or(j, "m", s.m);
  check_dim(s.m, "asset dimension m");
  if (j.contains("C")) s.C = mat_from_json(j.at("C"), "C");
  else if (!j.contains("preset")) s.C = Mat::Zero(s.m, s.m);
  if (j.contains("s0")) s.s0 = vec_from_json(j.at("s0"), "s0");
  else if (!j.contains("preset")) s.s0 = Vec::Ones(s.m);
  s.r = detail::get_or(j, "r", s.r);
  s.horizon = detail::get_or(j, "horizon", s.horizon);
  s.sigma_may_vanish = detail::get_or(j, "sigma_may_vanish", s.sigma_may_vanish);
  s.assumption_b = detail::get_or(j, "assumption_b", s.assumption_b);
  if (j.contains("vol")) s.vol = vol_from_json(j.at("vol"), s.m);
  else if (!j.contains("preset")) s.vol = vol_from_json(json{{"family", "toy"}}, s.m);
  s.vol.m = s.m;
  if (j.contains("drift")) s.drift = vector_field_from_json(j.at("drift"), s.m, "drift");
  else if (!j.contains("preset")) s.drift = VectorField::zero(s.m);
  if (j.contains("volmat")) {
    const auto& v = j.at("volmat");
    const std::string form = v.is_object() ? detail::get_or<std::string>(v, "form", "scaled") : "scaled";
    if (!v.is_object()) {
      s.volmat = MatrixField::scaled(scalar_from_json(v), Mat::Identity(s.m, s.m));
    } else if (form == "scaled") {
      const Mat factor = v.contains("factor") ? mat_from_json(v.at("factor"), "factor") : Mat(Mat::Identity(s.m, s.m));
      s.volmat = MatrixField::scaled(scalar_from_json(detail::at(v, "xi")), factor);
    } else if (form == "orthogonal_scalar") {
      const Mat o = v.contains("O") ? mat_from_json(v.at("O"), "O") : Mat(Mat::Identity(s.m, s.m));
      const Mat cbar = correlation_complement(s.C);
      s.volmat = MatrixField::scaled(scalar_from_json(detail::at(v, "xi")), o * cbar.inverse());
    } else if (form == "entrywise") {
      s.volmat = entrywise_from_json(detail::at(v, "entries"), s.m, s.m, "volmat entries");
    } else {
      fail(ErrorCode::config, "unknown volmat form '" + form + "'");
    }
  } else if (!j.contains("preset")) {
    fail(ErrorCode::config, "missing key 'volmat'");
  }
  Model check(s);
  return s;
}

inline json to_json(const ModelSpec& s) {
  return json{{"name", s.name},
              {"m", s.m},
              {"C", to_json(s.C)},
              {"s0", to_json(s.s0)},
              {"r", s.r},
              {"horizon", s.horizon},
              {"sigma_may_vanish", s.sigma_may_vanish},
              {"assumption_b", s.assumption_b},
              {"vol", to_json(s.vol)},
              {"drift", to_json(s.drift)},
              {"volmat", to_json(s.volmat)}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::config, "'" + path + "' is not valid JSON: " + e.what());
  }
}

inline ModelSpec load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

}  // namespace vldp::io
