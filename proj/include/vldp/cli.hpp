#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vldp/config.hpp"
#include "vldp/error.hpp"
#include "vldp/kernels.hpp"
#include "vldp/mcsim.hpp"
#include "vldp/parallel.hpp"
#include "vldp/pricing.hpp"
#include "vldp/ratefn.hpp"
#include "vldp/toymodel.hpp"

namespace vldp::cli {

using json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitSchema = 2;
inline constexpr int kExitNumerical = 3;

inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::divergence:
    case ErrorCode::non_convergence:
    case ErrorCode::singular_volatility:
    case ErrorCode::insufficient_sampling:
    case ErrorCode::degenerate_limit: return kExitNumerical;
    default: return kExitSchema;
  }
}

inline json error_json(const std::string& code, const std::string& message, int status, double residual = 0.0) {
  json e{{"code", code}, {"message", message}};
  if (residual != 0.0) e["residual"] = residual;
  return json{{"error", e}, {"exit_code", status}};
}

namespace detail {

using io::detail::number_json;

inline json num(double v) {
  if (std::isnan(v)) return nullptr;
  return number_json(v);
}

inline double param(const json& p, const char* key) { return io::detail::number(io::detail::at(p, key), key); }

inline Vec vec_param(const json& p, const char* key) { return io::vec_from_json(io::detail::at(p, key), key); }

inline RateOptions rate_options(const json& p) {
  RateOptions o;
  o.n_steps = p.value("n_steps", 200);
  o.optimizer.restarts = p.value("restarts", 8);
  o.optimizer.seed = p.value("seed", std::uint64_t{20240607});
  o.optimizer.workers = p.value("workers", 1);
  require(o.n_steps > 0, ErrorCode::config, "n_steps must be positive");
  require(o.optimizer.restarts >= 0, ErrorCode::config, "restarts must be >= 0");
  return o;
}

inline json rate_json(const RateResult& r) {
  return json{{"value", num(r.value)},
              {"converged", r.converged},
              {"iterations", r.iterations},
              {"restarts", r.restarts},
              {"gradient_norm", num(r.gradient_norm)},
              {"constraint_violation", num(r.constraint_violation)}};
}

inline json report_json(const AsymptoteReport& r) {
  json j{{"quantity", to_string(r.quantity)}, {"rate", num(r.rate)}, {"detail", rate_json(r.detail)}};
  if (r.limit_value) j["limit_value"] = num(*r.limit_value);
  if (!r.face.empty()) j["face"] = r.face;
  json d = json::object();
  for (const auto& [k, v] : r.diagnostics) d[k] = num(v);
  j["diagnostics"] = d;
  return j;
}

inline json mc_json(const McReport& r) {
  json rows = json::array();
  for (const auto& x : r.rows)
    rows.push_back(json{{"epsilon", x.epsilon},
                        {"estimate", num(x.estimate)},
                        {"estimate_se", num(x.estimate_se)},
                        {"eps_log_estimate", num(x.eps_log_estimate)},
                        {"std_error", num(x.std_error)},
                        {"n_effective", x.n_effective},
                        {"hits", x.hits},
                        {"excluded", x.excluded}});
  return json{{"quantity", r.quantity}, {"rows", rows}, {"reference_rate", num(r.reference_rate)},
              {"warning_low_paths", r.warning_low_paths}};
}

inline ExitDomain domain_from_json(const json& d) {
  const std::string kind = io::detail::get_or<std::string>(d, "kind", "box");
  if (kind == "box") return ExitDomain::box(vec_param(d, "lower"), vec_param(d, "upper"));
  if (kind == "half_space") return ExitDomain::half_space(vec_param(d, "normal"), param(d, "offset"));
  fail(ErrorCode::config, "domain kind must be 'box' or 'half_space'");
}

inline PathFn path_from_json(const json& p, double T) {
  const auto& rows = io::detail::at(p, "path");
  if (!rows.is_array() || rows.size() < 2) fail(ErrorCode::config, "path needs at least two nodes");
  const int nodes = static_cast<int>(rows.size());
  const Vec first = io::vec_from_json(rows[0], "path row");
  Eigen::MatrixXd v(nodes, first.size());
  for (int a = 0; a < nodes; ++a) {
    const Vec r = io::vec_from_json(rows[a], "path row");
    if (r.size() != first.size()) fail(ErrorCode::config, "path rows differ in length");
    v.row(a) = r.transpose();
  }
  return PathFn(TimeGrid(T, nodes - 1), v);
}

inline std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  bool time_column = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (rows.empty() && line.rfind("t,", 0) == 0) {
      time_column = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (numeric && time_column && !row.empty()) row.erase(row.begin());
    if (numeric && !row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

struct Outcome {
  json result;
  bool converged = true;
  std::string csv;
};

/// Executes a resolved configuration {command, model, parameters}.
inline Outcome execute(const json& cfg) {
  using namespace detail;
  const std::string cmd = io::detail::at(cfg, "command").get<std::string>();
  const json& p = io::detail::at(cfg, "parameters");
  Outcome out;
  auto model = [&] { return Model(io::model_from_json(io::detail::at(cfg, "model"))); };

  if (cmd == "toy-bounds") {
    const ToyParams tp{param(p, "T"), param(p, "k")};
    const auto [lo, hi] = rate_bounds(tp);
    const auto [vlo, vhi] = iv_limit_bounds(tp);
    const auto r = toy_rate(tp, rate_options(p));
    out.result = json{{"rate", num(r.value)},
                      {"lower", lo},
                      {"upper", hi},
                      {"iv_lower", vlo},
                      {"iv_upper", vhi},
                      {"iv", num(tp.k / std::sqrt(2.0 * tp.T * r.value))},
                      {"a_of_k", a_of_k(tp)},
                      {"detail", rate_json(r)}};
    out.converged = r.converged;
    out.csv = to_csv(r.minimizer_f);
  } else if (cmd == "rate-terminal") {
    const auto r = itilde_terminal(model(), vec_param(p, "x"), param(p, "T"), rate_options(p));
    out.result = rate_json(r);
    out.converged = r.converged;
    out.csv = to_csv(r.minimizer_f);
  } else if (cmd == "rate-path") {
    const auto r = qtilde_path(model(), path_from_json(p, param(p, "T")), rate_options(p));
    out.result = rate_json(r);
    out.converged = r.converged;
    out.csv = to_csv(r.minimizer_f);
  } else if (cmd == "call-asymptote" || cmd == "iv-limit" || cmd == "asian-asymptote" || cmd == "exit-rate" ||
             cmd == "barrier-rate") {
    const Model m = model();
    const auto o = rate_options(p);
    AsymptoteReport r;
    if (cmd == "call-asymptote") r = call_asymptote(m, param(p, "K"), param(p, "T"), o);
    if (cmd == "iv-limit") r = implied_vol_limit(m, param(p, "k"), param(p, "T"), o);
    if (cmd == "asian-asymptote") r = asian_asymptote(m, param(p, "K"), param(p, "T"), o);
    if (cmd == "exit-rate") r = exit_asymptote(m, domain_from_json(io::detail::at(p, "domain")), param(p, "t"), o);
    if (cmd == "barrier-rate")
      r = barrier_asymptote(m, domain_from_json(io::detail::at(p, "domain")), param(p, "T"), o);
    out.result = report_json(r);
    out.converged = r.detail.converged;
    if (r.detail.minimizer_f.dot.size() > 0) out.csv = to_csv(r.detail.minimizer_f);
  } else if (cmd == "mc-verify") {
    SimConfig sc;
    sc.model = io::model_from_json(io::detail::at(cfg, "model"));
    sc.epsilon_ladder = p.value("ladder", std::vector<double>{0.4, 0.2, 0.1, 0.05});
    sc.n_paths = p.value("n_paths", 100000L);
    sc.grid = TimeGrid(param(p, "T"), p.value("n_steps", 200));
    sc.seed = p.value("seed", std::uint64_t{20240607});
    sc.antithetic = p.value("antithetic", false);
    sc.workers = p.value("workers", 1);
    std::optional<RateOptions> ref;
    if (p.value("reference", true)) {
      RateOptions ro = rate_options(p);
      ro.n_steps = p.value("reference_steps", 200);
      ref = ro;
    }
    const std::string q = p.value("quantity", "tail");
    McReport r;
    if (q == "tail")
      r = ldp_tail_report(sc, param(p, "k"), ref);
    else if (q == "call")
      r = mc_call_report(sc, param(p, "K"), ref);
    else if (q == "exit")
      r = mc_exit_report(sc, domain_from_json(io::detail::at(p, "domain")), param(p, "T"), ref);
    else
      fail(ErrorCode::config, "quantity must be 'tail', 'call' or 'exit'");
    out.result = mc_json(r);
    out.csv = to_csv(r);
  } else if (cmd == "kernel-info") {
    const KernelSpec k = io::kernel_from_json(io::detail::at(p, "kernel"));
    const double T = param(p, "T");
    const TimeGrid grid(T, p.value("n_steps", 200));
    json mod = json::array();
    for (int lag : {1, 2, 4, 8, 16})
      if (lag <= grid.steps()) {
        const double tau = lag * grid.step();
        mod.push_back(json{{"tau", tau}, {"l2_modulus", l2_modulus(k, tau, grid)}});
      }
    out.result = json{{"kernel", io::to_json(k)},
                      {"slice_variance", slice_variance(k, T)},
                      {"convolution", is_convolution(k)},
                      {"singular_diagonal", has_singular_diagonal(k)},
                      {"modulus", mod}};
  } else {
    fail(ErrorCode::config, "unknown command '" + cmd + "'");
  }
  return out;
}

/// Runs a resolved configuration and writes JSON to `os` (or CSV with format = csv).
inline int dispatch(const json& cfg, std::ostream& os) {
  Outcome res;
  try {
    res = execute(cfg);
  } catch (const Error& e) {
    const int code = exit_code(e.code());
    os << error_json(std::string(to_string(e.code())), e.what(), code, e.residual()).dump(2) << "\n";
    return code;
  } catch (const json::exception& e) {
    os << error_json("config", e.what(), kExitSchema).dump(2) << "\n";
    return kExitSchema;
  }
  const int status = res.converged ? kExitOk : kExitNumerical;
  json doc{{"command", cfg.at("command")}, {"config", cfg}, {"result", res.result}, {"exit_code", status}};
  if (!res.converged) doc["diagnostics"] = "optimizer did not meet its convergence criteria";
  const json& p = cfg.at("parameters");
  const std::string format = p.value("format", "json");
  const std::string prefix = p.value("output", "");
  if (!prefix.empty()) {
    std::ofstream(prefix + ".json") << doc.dump(2) << "\n";
    if (!res.csv.empty()) std::ofstream(prefix + ".csv") << res.csv;
  }
  if (format == "csv")
    os << res.csv;
  else
    os << doc.dump(2) << "\n";
  return status;
}

inline int run(int argc, const char* const* argv, std::ostream& os = std::cout) {
  CLI::App app{"Small-noise large deviation rates for Volterra-type stochastic volatility models", "vldp"};
  app.require_subcommand(1);

  struct Common {
    std::string model_file, preset, output, format = "json";
    int n_steps = 200, restarts = 8, workers = default_workers();
    std::uint64_t seed = 20240607;
  };
  std::vector<std::unique_ptr<Common>> commons;
  json params = json::object();

  auto add_common = [&](CLI::App* sub, bool with_model) {
    commons.push_back(std::make_unique<Common>());
    Common* c = commons.back().get();
    if (with_model) {
      sub->add_option("--model", c->model_file, "model JSON file");
      sub->add_option("--preset", c->preset, "bundled model preset")
          ->check(CLI::IsMember(io::preset_names()));
    }
    sub->add_option("--n-steps", c->n_steps, "time steps of the discretization")->check(CLI::PositiveNumber);
    sub->add_option("--restarts", c->restarts, "random optimizer restarts")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", c->seed, "random seed");
    sub->add_option("--workers", c->workers, "worker threads (default from VLDP_WORKERS)")->check(CLI::PositiveNumber);
    sub->add_option("--output", c->output, "output path prefix");
    sub->add_option("--format", c->format, "stdout format")->check(CLI::IsMember({"json", "csv"}));
    return c;
  };

  double T = 1.0, k = 0.1, K = 1.1, t = 1.0, slope = 0.1;
  std::vector<double> x{0.1};
  std::vector<std::string> lower, upper;
  std::vector<double> normal;
  double offset = 0.0;
  std::string path_file, config_file, kind = "riemann_liouville";
  double hurst = 0.3, beta = 2.0;

  auto* toy = app.add_subcommand("toy-bounds", "toy SABR rate with closed-form rate and implied-vol bounds");
  auto* toy_c = add_common(toy, false);
  toy->add_option("--T", T, "maturity");
  toy->add_option("--k", k, "log-moneyness");

  auto* term = app.add_subcommand("rate-terminal", "terminal rate function I~_T(x)");
  auto* term_c = add_common(term, true);
  term->add_option("--x", x, "terminal log-price displacement (comma separated)")->delimiter(',');
  term->add_option("--T", T, "maturity");

  auto* path = app.add_subcommand("rate-path", "sample-path rate function Q~_T(g)");
  auto* path_c = add_common(path, true);
  path->add_option("--T", T, "horizon");
  path->add_option("--slope", slope, "linear target path g(t) = slope * t (m = 1)");
  path->add_option("--path-file", path_file, "CSV with one row per node (m columns, first row zero)")
      ->check(CLI::ExistingFile);

  auto* call = app.add_subcommand("call-asymptote", "eps log C -> -inf_{x >= k} I~_T(x)");
  auto* call_c = add_common(call, true);
  call->add_option("--K", K, "strike");
  call->add_option("--T", T, "maturity");

  auto* iv = app.add_subcommand("iv-limit", "small-noise implied volatility limit");
  auto* iv_c = add_common(iv, true);
  iv->add_option("--k", k, "log-strike");
  iv->add_option("--T", T, "maturity");

  auto* asian = app.add_subcommand("asian-asymptote", "Asian call rate");
  auto* asian_c = add_common(asian, true);
  asian->add_option("--K", K, "strike");
  asian->add_option("--T", T, "maturity");

  auto add_domain = [&](CLI::App* sub) {
    sub->add_option("--lower", lower, "box lower bounds (comma separated; default -inf, or 0 for prices)")->delimiter(',');
    sub->add_option("--upper", upper, "box upper bounds (comma separated, inf allowed)")->delimiter(',');
    sub->add_option("--normal", normal, "half-space normal n in {<n, x> < offset}")->delimiter(',');
    sub->add_option("--offset", offset, "half-space offset");
  };
  auto* exit_cmd = app.add_subcommand("exit-rate", "log-price exit probability rate by time t");
  auto* exit_c = add_common(exit_cmd, true);
  add_domain(exit_cmd);
  exit_cmd->add_option("--t", t, "exit horizon");

  auto* barrier = app.add_subcommand("barrier-rate", "price-space barrier hitting rate");
  auto* barrier_c = add_common(barrier, true);
  add_domain(barrier);
  barrier->add_option("--T", T, "maturity");

  auto* mc = app.add_subcommand("mc-verify", "Monte Carlo ladder against the computed rate");
  auto* mc_c = add_common(mc, false);
  mc->add_option("--config", config_file, "simulation JSON")->required();

  auto* kinfo = app.add_subcommand("kernel-info", "kernel slice variance and L2 modulus");
  auto* kinfo_c = add_common(kinfo, false);
  kinfo->add_option("--kind", kind, "kernel kind")
      ->check(CLI::IsMember({"brownian", "riemann_liouville", "fbm_molchan_golosov", "logarithmic"}));
  kinfo->add_option("--hurst", hurst, "Hurst index");
  kinfo->add_option("--beta", beta, "logarithmic kernel exponent");
  kinfo->add_option("--T", T, "horizon");

  auto* replay = app.add_subcommand("replay", "re-run a resolved configuration echoed by an earlier run");
  std::string replay_file;
  replay->add_option("--file", replay_file, "JSON output of an earlier run")->required();
  add_common(replay, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, os, os);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, os, os);
  } catch (const CLI::ParseError& e) {
    os << error_json("config", e.what(), kExitSchema).dump(2) << "\n";
    return kExitSchema;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  json cfg;
  try {
    if (name == "replay") {
      json doc = io::read_json_file(replay_file);
      cfg = doc.contains("config") ? doc.at("config") : doc;
      return dispatch(cfg, os);
    }
    const Common* c = nullptr;
    for (const auto& pair : {std::pair{toy, toy_c}, std::pair{term, term_c}, std::pair{path, path_c}, std::pair{call, call_c},
                       std::pair{iv, iv_c}, std::pair{asian, asian_c}, std::pair{exit_cmd, exit_c},
                       std::pair{barrier, barrier_c}, std::pair{mc, mc_c}, std::pair{kinfo, kinfo_c}})
      if (pair.first == sub) c = pair.second;
    json p{{"n_steps", c->n_steps}, {"restarts", c->restarts}, {"seed", c->seed},
           {"workers", c->workers}, {"format", c->format}, {"output", c->output}};

    auto resolve_model = [&](const std::string& fallback) -> json {
      if (!c->model_file.empty() && !c->preset.empty()) fail(ErrorCode::config, "use either --model or --preset");
      if (!c->model_file.empty()) return io::to_json(io::load_model(c->model_file));
      return io::to_json(io::preset(c->preset.empty() ? fallback : c->preset));
    };
    auto domain_json = [&](bool price_space) -> json {
      if (!normal.empty()) {
        if (!lower.empty() || !upper.empty()) fail(ErrorCode::config, "give either box bounds or a half-space");
        return json{{"kind", "half_space"}, {"normal", normal}, {"offset", offset}};
      }
      if (lower.empty() && upper.empty()) fail(ErrorCode::config, "missing exit domain");
      const std::size_t dim = std::max(lower.size(), upper.size());
      json lo = json::array(), hi = json::array();
      for (std::size_t i = 0; i < dim; ++i) {
        lo.push_back(i < lower.size() ? lower[i] : std::string(price_space ? "0" : "-inf"));
        hi.push_back(i < upper.size() ? upper[i] : std::string("inf"));
      }
      for (auto* a : {&lo, &hi})
        for (auto& v : *a) {
          const auto s = v.get<std::string>();
          if (s != "inf" && s != "-inf") {
            try {
              v = std::stod(s);
            } catch (const std::exception&) {
              fail(ErrorCode::config, "bound '" + s + "' is not a number");
            }
          }
        }
      return json{{"kind", "box"}, {"lower", lo}, {"upper", hi}};
    };

    cfg["command"] = name;
    if (name == "toy-bounds") {
      p["T"] = T;
      p["k"] = k;
    } else if (name == "rate-terminal") {
      cfg["model"] = resolve_model("bs_const");
      p["x"] = x;
      p["T"] = T;
    } else if (name == "rate-path") {
      cfg["model"] = resolve_model("bs_const");
      p["T"] = T;
      json rows = json::array();
      if (!path_file.empty()) {
        for (const auto& r : detail::read_csv_rows(path_file)) rows.push_back(r);
      } else {
        for (int a = 0; a <= c->n_steps; ++a) rows.push_back(json::array({slope * T * a / c->n_steps}));
      }
      p["path"] = rows;
    } else if (name == "call-asymptote" || name == "asian-asymptote") {
      cfg["model"] = resolve_model("bs_const");
      p["K"] = K;
      p["T"] = T;
    } else if (name == "iv-limit") {
      cfg["model"] = resolve_model("bs_const");
      p["k"] = k;
      p["T"] = T;
    } else if (name == "exit-rate") {
      cfg["model"] = resolve_model("bs_const");
      p["domain"] = domain_json(false);
      p["t"] = t;
    } else if (name == "barrier-rate") {
      cfg["model"] = resolve_model("bs_const");
      p["domain"] = domain_json(true);
      p["T"] = T;
    } else if (name == "kernel-info") {
      json kj{{"kind", kind}};
      if (kind == "riemann_liouville" || kind == "fbm_molchan_golosov") kj["hurst"] = hurst;
      if (kind == "logarithmic") kj["beta"] = beta;
      p["kernel"] = kj;
      p["T"] = T;
    } else if (name == "mc-verify") {
      json sim = io::read_json_file(config_file);
      json model_j = sim.contains("model") ? sim.at("model") : json{{"preset", sim.value("preset", "bs_const")}};
      cfg["model"] = io::to_json(io::model_from_json(model_j));
      for (const char* key : {"n_steps", "restarts", "seed", "workers"})
        if (sim.contains(key)) p[key] = sim.at(key);
      p["quantity"] = sim.value("quantity", "tail");
      p["ladder"] = sim.value("ladder", std::vector<double>{0.4, 0.2, 0.1, 0.05});
      p["n_paths"] = sim.value("n_paths", 100000L);
      p["T"] = sim.value("T", 1.0);
      p["antithetic"] = sim.value("antithetic", false);
      p["reference"] = sim.value("reference", true);
      p["reference_steps"] = sim.value("reference_steps", 200);
      for (const char* key : {"k", "K", "domain"})
        if (sim.contains(key)) p[key] = sim.at(key);
    }
    cfg["parameters"] = p;
  } catch (const Error& e) {
    const int code = exit_code(e.code());
    os << error_json(std::string(to_string(e.code())), e.what(), code).dump(2) << "\n";
    return code;
  } catch (const json::exception& e) {
    os << error_json("config", e.what(), kExitSchema).dump(2) << "\n";
    return kExitSchema;
  }
  return dispatch(cfg, os);
}

}  // namespace vldp::cli
