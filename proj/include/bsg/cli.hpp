#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bsg/io.hpp"

namespace bsg {

struct ToleranceProfile {
  std::string name;
  double identity;          // pathwise identities and algebraic stationarity
  double follower_gap;      // follower oracle relative cost gap
  double leader_gap;        // leader oracle relative cost gap
  double riccati_residual;  // central-difference residual of the Riccati paths
  double closed_form;       // Riccati solution against the C = 0 closed forms
  double derivative;        // directional derivatives, times max(1, |J|)
  double reserve_sigma;     // Monte Carlo initial reserve, in standard errors
};

inline ToleranceProfile tolerance_profile(const std::string& name) {
  if (name == "strict") return {"strict", 1e-8, 1e-3, 1e-2, 1e-3, 1e-6, 1e-3, 3.0};
  if (name == "desk") return {"desk", 1e-6, 1e-2, 5e-2, 1e-2, 1e-5, 1e-2, 4.0};
  throw InputError("tolerance: unknown profile \"" + name + "\" (strict|desk)");
}

struct RunConfig {
  std::string scenario;
  std::string command;
  std::string out = "out";
  std::optional<int> steps;
  std::size_t paths = 10000;
  std::uint64_t seed = 0;
  std::string tolerance = "strict";
  std::size_t keep = 10;                  // trajectories written to the path CSVs
  std::size_t perturbation_paths = 10000;  // Monte Carlo paths per directional derivative
};

inline const std::vector<std::string>& cli_commands() {
  static const std::vector<std::string> c{"validate", "riccati",  "follower", "leader",
                                          "equilibrium", "finance", "verify"};
  return c;
}

// SHA-1 of "blob <size>\0" followed by the content, as git hashes a file.
inline std::string git_blob_hash(const std::string& content) {
  const std::string head = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, head.data(), head.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("sha1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

namespace detail {

struct CheckList {
  Json rows = Json::array();
  bool all = true;

  void le(const std::string& name, double value, double limit) {
    const bool pass = std::isfinite(value) && value <= limit;
    rows.push_back({{"name", name}, {"value", value}, {"limit", limit}, {"pass", pass}});
    all = all && pass;
  }
};

inline Json riccati_residual_json(const RiccatiResidual& r) { return {{"max", r.max}, {"time", r.time}}; }

inline Json perturbation_json(std::vector<PerturbationRow>& rows, const ToleranceProfile& tp, CheckList& checks) {
  Json a = Json::array();
  for (auto& r : rows) {
    r.tolerance = tp.derivative * std::max(1.0, std::abs(r.cost));
    r.pass = std::abs(r.d.extrapolated) <= r.tolerance && r.d.algebraic_residual <= tp.identity;
    const std::string tag = r.level + "." + r.direction;
    checks.le("derivative." + tag, std::abs(r.d.extrapolated), r.tolerance);
    checks.le("algebraic_stationarity." + tag, r.d.algebraic_residual, tp.identity);
    a.push_back(to_json(r));
  }
  return a;
}

inline std::vector<double> perturbation_eps() { return {1e-2, 1e-3}; }

inline AffineControl follower_control(const Scenario& sc) {
  return sc.u2 ? *sc.u2 : AffineControl::zero(sc.spec.grid, sc.spec.dims.k, sc.spec.dims.d);
}

inline Json leader_summary(const LeaderEnsemble& e, const ToleranceProfile& tp, CheckList& checks) {
  checks.le("terminal_error_max", e.terminal_error_max, tp.identity);
  checks.le("initial_coupling_max", e.initial_coupling_max, tp.identity);
  checks.le("decoupling_gap_max", e.decoupling_gap_max, tp.identity);
  checks.le("u1_feedback_gap_max", e.u1_gap_max, tp.identity);
  checks.le("leader_stationarity", e.stationarity_residual, tp.identity);
  return {{"J1", to_json(e.J1)},
          {"J2", to_json(e.J2)},
          {"stationarity", {{"follower", e.u1_gap_max}, {"leader", e.stationarity_residual}}},
          {"terminal_error_max", e.terminal_error_max},
          {"initial_coupling_max", e.initial_coupling_max},
          {"decoupling_gap_max", e.decoupling_gap_max},
          {"z_alt_gap_max", e.z_alt_gap_max},
          {"bsde_residual_rms", e.bsde_residual_rms},
          {"bsde_residual_max", e.bsde_residual_max},
          {"bsde_step_rms", e.bsde_step_rms}};
}

class Runner {
 public:
  Runner(const RunConfig& cfg, const Scenario& sc, const ToleranceProfile& tp, std::filesystem::path out)
      : cfg_(cfg), sc_(sc), tp_(tp), out_(std::move(out)) {
    mc_.paths = cfg.paths;
    mc_.seed = cfg.seed;
    mc_.keep_paths = cfg.keep;
    pmc_.paths = cfg.perturbation_paths;
    pmc_.seed = cfg.seed;
  }

  Json riccati() {
    const LQGameSpec& s = sc_.spec;
    const auto L = solve_leader_riccati(s, sc_.riccati);
    const double cl = sc_.riccati.cond_limit;
    write_riccati_csv(file("riccati_p1.csv"), L.p1);
    write_riccati_csv(file("riccati_p2.csv"), L.p2);
    write_riccati_csv(file("riccati_pi1.csv"), L.pi1);
    write_riccati_csv(file("riccati_pi2.csv"), L.pi2);
    const auto f1 = p1_field(s, cl);
    const auto f2 = p2_field(s, L.p1, cl);
    const auto f3 = pi1_field(L.sys, s.R2, cl);
    const auto f4 = pi2_field(L.sys, s.R2, L.pi1, cl);
    const RiccatiResidual res[] = {riccati_residual(L.p1, f1), riccati_residual(L.p2, f2),
                                   riccati_residual(L.pi1, f3), riccati_residual(L.pi2, f4)};
    const RiccatiPath* paths[] = {&L.p1, &L.p2, &L.pi1, &L.pi2};
    Json residuals = Json::object(), asym = Json::object();
    for (int i = 0; i < 4; ++i) {
      const std::string tag = tag_name(paths[i]->tag);
      residuals[tag] = riccati_residual_json(res[i]);
      asym[tag] = paths[i]->max_asymmetry;
      checks_.le("riccati_residual." + tag, res[i].max, tp_.riccati_residual);
    }
    Json solv;
    if (L.sys.c_free()) {
      solv["applicable"] = true;
      closed_form(solv, "Pi1", [&] { return pi1_closed_form(L.sys, s.R2); }, L.pi1, true);
      closed_form(solv, "Pi2", [&] { return pi2_closed_form(L.sys, s.R2); }, L.pi2, true);
      closed_form(solv, "Pi2_literal", [&] { return pi2_closed_form_literal(L.sys, s.R2); }, L.pi2, false);
    } else {
      solv = {{"applicable", false}, {"reason", "closed forms need C = 0"}};
    }
    write_json(file("solvability.json"), solv);
    return {{"residuals", residuals},
            {"max_asymmetry", asym},
            {"P1_0", to_json(stack(L.p1[0]))},
            {"P2_T", to_json(stack(L.p2[L.p2.size() - 1]))},
            {"Pi1_0", to_json(stack(L.pi1[0]))},
            {"Pi2_T", to_json(stack(L.pi2[L.pi2.size() - 1]))}};
  }

  Json follower() {
    const LQGameSpec& s = sc_.spec;
    const auto p1 = solve_p1(s, sc_.riccati);
    const auto p2 = solve_p2(s, p1, sc_.riccati);
    FollowerModel m(s, p1, p2, follower_control(sc_));
    const auto e = run_follower(m, mc_);
    write_follower_paths(file("paths_follower.csv"), e.kept, s.grid, s.dims.n, s.dims.k);
    checks_.le("terminal_error_max", e.terminal_error_max, tp_.identity);
    checks_.le("initial_coupling_max", e.initial_coupling_max, tp_.identity);
    checks_.le("feedback_gap_max", e.feedback_gap_max, tp_.identity);
    checks_.le("stationarity_residual", e.stationarity_residual, tp_.identity);
    return {{"J1", to_json(e.J1)},
            {"stationarity_residual", e.stationarity_residual},
            {"terminal_error_max", e.terminal_error_max},
            {"initial_coupling_max", e.initial_coupling_max},
            {"feedback_gap_max", e.feedback_gap_max},
            {"bsde_residual_rms", e.bsde_residual_rms},
            {"bsde_residual_max", e.bsde_residual_max},
            {"bsde_step_rms", e.bsde_step_rms}};
  }

  Json leader(bool perturb) {
    const LQGameSpec& s = sc_.spec;
    const auto L = solve_leader_riccati(s, sc_.riccati);
    LeaderModel m(s, L.p1, L.p2, L.sys, L.pi1, L.pi2, sc_.leader);
    const auto e = run_leader(m, mc_);
    write_leader_paths(file("paths_leader.csv"), e.kept, s.grid, s.dims.n, s.dims.k);
    Json j = leader_summary(e, tp_, checks_);
    if (perturb) {
      FollowerModel f(s, L.p1, L.p2, follower_control(sc_));
      auto rows = perturbation_suite(&f, &m, standard_directions(s.grid, s.dims.k), perturbation_eps(), pmc_);
      j["perturbation"] = perturbation_json(rows, tp_, checks_);
    }
    return j;
  }

  Json finance() {
    if (!sc_.market) throw InputError("finance: scenario has no \"market\"");
    const FinanceModel f(*sc_.market, sc_.riccati, sc_.leader);
    const auto c = consumption_equilibrium(f, mc_);
    const auto r = initial_reserve(f, mc_);
    write_finance_paths(file("paths_finance.csv"), c.kept, f.spec().grid);
    RiccatiOptions shown = sc_.riccati;
    shown.hat_c1 = HatC1Source::Display;
    const auto& sol = f.riccati();
    const double display =
        finance_display_gap(f.market(), build_stacked_system(f.spec(), sol.p1, sol.p2, shown), sol.p1, sol.p2);
    double pi_gap = 0.0;
    for (const auto& p : c.kept)
      for (Eigen::Index i = 0; i < p.pi.cols(); ++i)
        pi_gap = std::max(pi_gap, std::abs(p.pi(0, i) * f.market().sigma[i](0, 0) - p.z(0, i)));
    checks_.le("wealth_terminal_error", c.wealth_terminal_error, tp_.identity);
    checks_.le("c1_feedback_gap", c.c1_gap, tp_.identity);
    checks_.le("portfolio_identity_gap", pi_gap, tp_.identity);
    checks_.le("display_matrix_gap", display, 1e-12);
    for (int j = 0; j < 2; ++j)
      checks_.le("initial_reserve_gap_" + std::to_string(j + 1), std::abs(r.Y0_mc(j) - r.Y0_pipeline(j)),
                 tp_.reserve_sigma * r.Y0_stderr(j) + 1e-10);
    return {{"initial_reserve", c.initial_reserve},
            {"Y0", to_json(c.Y0)},
            {"Y0_mc", to_json(r.Y0_mc)},
            {"Y0_mc_stderr", to_json(r.Y0_stderr)},
            {"J1", to_json(c.J1)},
            {"J2", to_json(c.J2)},
            {"gaps",
             {{"reserve_sigma", r.max_sigma_gap},
              {"reserve_abs", r.max_abs_gap},
              {"wealth_terminal", c.wealth_terminal_error},
              {"c1_feedback", c.c1_gap},
              {"portfolio_identity", pi_gap},
              {"display_matrices", display}}}};
  }

  Json verify() {
    const LQGameSpec& s = sc_.spec;
    const AffineControl u2 = follower_control(sc_);
    Json report;
    const bool applicable = s.c_is_zero() && s.xi.deterministic() && u2.deterministic();
    report["oracle_applicable"] = applicable;
    Json comps = Json::array();
    if (applicable) {
      const auto f = compare_follower(s, u2);
      const auto l = compare_leader(s, sc_.leader, sc_.riccati);
      checks_.le("oracle.follower.rel_gap", f.rel_gap, tp_.follower_gap);
      checks_.le("oracle.leader.rel_gap", l.rel_gap, tp_.leader_gap);
      comps.push_back(to_json(f));
      comps.push_back(to_json(l));
    } else {
      report["reason"] = "the QP oracle needs C = 0, b = 0 and a deterministic u2";
    }
    report["comparisons"] = comps;
    const auto L = solve_leader_riccati(s, sc_.riccati);
    FollowerModel f(s, L.p1, L.p2, u2);
    LeaderModel m(s, L.p1, L.p2, L.sys, L.pi1, L.pi2, sc_.leader);
    auto rows = perturbation_suite(&f, &m, standard_directions(s.grid, s.dims.k), perturbation_eps(), pmc_);
    report["perturbation"] = perturbation_json(rows, tp_, checks_);
    write_json(file("oracle.json"), report);
    return report;
  }

  CheckList& checks() { return checks_; }

 private:
  std::string file(const char* name) const { return (out_ / name).string(); }

  static Vector stack(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

  template <class F>
  void closed_form(Json& solv, const std::string& key, F&& make, const RiccatiPath& solved, bool checked) {
    try {
      const ClosedForm cf = make();
      const double gap = max_node_gap(cf.path.path, solved.path);
      solv[key] = {{"scan", to_json(cf.scan)}, {"max_gap", gap}};
      if (checked) checks_.le("closed_form_gap." + key, gap, tp_.closed_form);
    } catch (const UnsolvableError& e) {
      solv[key] = {{"scan", {{"satisfied", false}, {"min_determinant", e.min_determinant()}, {"min_time", e.time()}}},
                   {"error", e.what()}};
      if (checked) checks_.le("closed_form_solvable." + key, 1.0, 0.0);
    }
  }

  const RunConfig& cfg_;
  const Scenario& sc_;
  ToleranceProfile tp_;
  std::filesystem::path out_;
  MonteCarloConfig mc_, pmc_;
  CheckList checks_;
};

}  // namespace detail

// Exit status: 0 ok, 1 invalid input, 2 solver failure, 3 I/O, 4 a check exceeded its tolerance.
inline int run(const RunConfig& cfg, std::ostream& err = std::cerr) {
  try {
    const auto& cmds = cli_commands();
    if (std::find(cmds.begin(), cmds.end(), cfg.command) == cmds.end())
      throw InputError("command: unknown \"" + cfg.command + "\"");
    const ToleranceProfile tp = tolerance_profile(cfg.tolerance);
    if (cfg.steps && *cfg.steps < 1) throw InputError("steps: must be >= 1");
    if (cfg.paths < 1) throw InputError("paths: must be >= 1");
    const std::string text = read_file(cfg.scenario);
    const std::string hash = git_blob_hash(text);
    const Scenario sc = parse_scenario(parse_json_text(text, cfg.scenario), cfg.steps);

    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    if (ec) throw IoError("cannot create " + cfg.out + ": " + ec.message());

    Json summary = {{"command", cfg.command},
                    {"scenario_hash", hash},
                    {"tolerance_profile", tp.name},
                    {"steps", sc.spec.grid.steps()},
                    {"paths", cfg.paths},
                    {"seed", cfg.seed}};
    const bool strict = sc.spec.mode == ValidationMode::Strict;
    const ValidationReport report = validate_spec(sc.spec, strict);
    summary["validation"] = {{"mode", strict ? "strict" : "permissive"},
                             {"ok", report.ok()},
                             {"entries", to_json(report)}};
    const std::filesystem::path out(cfg.out);
    if (!report.ok()) {
      for (const auto& v : report.entries)
        if (v.severity == Violation::Severity::Error)
          err << "validation error at t=" << v.time << ": " << v.message << '\n';
      summary["status"] = "invalid";
      write_json((out / "summary.json").string(), summary);
      return 1;
    }

    detail::Runner r(cfg, sc, tp, out);
    if (cfg.command == "riccati") summary["riccati"] = r.riccati();
    else if (cfg.command == "follower") summary["follower"] = r.follower();
    else if (cfg.command == "leader") summary["leader"] = r.leader(false);
    else if (cfg.command == "equilibrium") summary["equilibrium"] = r.leader(true);
    else if (cfg.command == "finance") summary["finance"] = r.finance();
    else if (cfg.command == "verify") summary["verify"] = r.verify();

    summary["checks"] = r.checks().rows;
    summary["status"] = r.checks().all ? "ok" : "tolerance_exceeded";
    write_json((out / "summary.json").string(), summary);
    if (!r.checks().all) {
      for (const auto& c : r.checks().rows)
        if (!c["pass"].get<bool>())
          err << "check failed: " << c["name"].get<std::string>() << " = " << c["value"].dump() << " > "
              << c["limit"].dump() << '\n';
      return 4;
    }
    return 0;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return 1;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << '\n';
    return 2;
  } catch (const NonConvexError& e) {
    err << "solver error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace bsg
