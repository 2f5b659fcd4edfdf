#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <initializer_list>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bsg/finance.hpp"
#include "bsg/oracle.hpp"

namespace bsg {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Scenario files

struct Scenario {
  LQGameSpec spec;
  std::optional<AffineControl> u2;       // leader control for the standalone follower
  std::optional<MarketParams> market;
  RiccatiOptions riccati;
  LeaderOptions leader;
};

namespace detail {

inline Matrix row_major(const Json& arr, Eigen::Index rows, Eigen::Index cols, const std::string& where) {
  if (arr.is_number() && rows == 1 && cols == 1) return Matrix::Constant(1, 1, arr.get<double>());
  if (!arr.is_array()) throw InputError(where + ": expected an array of " + std::to_string(rows * cols) + " numbers");
  if (static_cast<Eigen::Index>(arr.size()) != rows * cols)
    throw InputError(where + ": expected " + std::to_string(rows * cols) + " entries (" + std::to_string(rows) +
                     "x" + std::to_string(cols) + "), got " + std::to_string(arr.size()));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Json& v = arr[i * cols + j];
      if (!v.is_number()) throw InputError(where + ": non-numeric entry");
      m(i, j) = v.get<double>();
    }
  return m;
}

// {"constant": [...]}, {"nodes": [[t, [...]], ...]}, a bare row-major array, or a bare number for 1x1.
inline CoefficientPath coefficient(const Json& j, const TimeGrid& g, Eigen::Index rows, Eigen::Index cols,
                                   const std::string& where) {
  if (j.is_number() || j.is_array()) return CoefficientPath::constant(g, row_major(j, rows, cols, where));
  if (!j.is_object()) throw InputError(where + ": expected {\"constant\": ...} or {\"nodes\": ...}");
  if (j.contains("constant")) return CoefficientPath::constant(g, row_major(j.at("constant"), rows, cols, where));
  if (!j.contains("nodes") || !j.at("nodes").is_array() || j.at("nodes").empty())
    throw InputError(where + ": expected {\"constant\": ...} or {\"nodes\": ...}");
  std::vector<double> ts;
  std::vector<Matrix> vs;
  for (const Json& node : j.at("nodes")) {
    if (!node.is_array() || node.size() != 2 || !node[0].is_number())
      throw InputError(where + ": each node must be [t, values]");
    const double t = node[0].get<double>();
    if (!ts.empty() && !(t > ts.back())) throw InputError(where + ": node times must increase");
    ts.push_back(t);
    vs.push_back(row_major(node[1], rows, cols, where));
  }
  const double tol = 1e-12 * std::max(1.0, g.horizon());
  if (std::abs(ts.front()) > tol || std::abs(ts.back() - g.horizon()) > tol)
    throw InputError(where + ": nodes must start at 0 and end at the horizon");
  return CoefficientPath::generate(g, [&](double t) -> Matrix {
    if (ts.size() == 1) return vs[0];
    std::size_t i = 0;
    while (i + 2 < ts.size() && t > ts[i + 1]) ++i;
    const double w = std::clamp((t - ts[i]) / (ts[i + 1] - ts[i]), 0.0, 1.0);
    if (w == 0.0) return vs[i];
    if (w == 1.0) return vs[i + 1];
    return (1.0 - w) * vs[i] + w * vs[i + 1];
  });
}

inline std::string lower_choice(const Json& j, const char* key, const std::string& def,
                                std::initializer_list<const char*> allowed) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string()) throw InputError(std::string(key) + ": expected a string");
  const std::string v = j.at(key).get<std::string>();
  for (const char* a : allowed)
    if (v == a) return v;
  throw InputError(std::string(key) + ": unknown value \"" + v + "\"");
}

inline double number(const Json& j, const char* key, double def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number()) throw InputError(where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

inline MarketParams parse_market(const Json& j, const TimeGrid& g) {
  if (!j.is_object()) throw InputError("market: expected an object");
  MarketParams m;
  m.grid = g;
  auto req = [&](const char* k) -> const Json& {
    if (!j.contains(k)) throw InputError(std::string("market.") + k + ": missing");
    return j.at(k);
  };
  m.r = coefficient(req("r"), g, 1, 1, "market.r");
  m.mu = coefficient(req("mu"), g, 1, 1, "market.mu");
  m.sigma = coefficient(req("sigma"), g, 1, 1, "market.sigma");
  m.R1 = j.contains("R1") ? coefficient(j.at("R1"), g, 1, 1, "market.R1")
                          : CoefficientPath::constant(g, Matrix::Ones(1, 1));
  m.R2 = j.contains("R2") ? coefficient(j.at("R2"), g, 1, 1, "market.R2")
                          : CoefficientPath::constant(g, Matrix::Ones(1, 1));
  m.G1 = number(j, "G1", 0.0, "market");
  m.G2 = number(j, "G2", 0.0, "market");
  const Json xi = j.value("xi", Json::object());
  m.xi = {Vector::Constant(1, number(xi, "a", 0.0, "market.xi")),
          Matrix::Constant(1, 1, number(xi, "b", 0.0, "market.xi"))};
  validate_market(m);
  return m;
}

}  // namespace detail

// steps: explicit override; otherwise the file's "steps", otherwise 1000.
inline Scenario parse_scenario(const Json& j, std::optional<int> steps = std::nullopt) {
  using detail::coefficient;
  if (!j.is_object()) throw InputError("scenario: expected a JSON object");
  const double T = detail::number(j, "horizon", 1.0, "scenario");
  int N = 1000;
  if (steps) N = *steps;
  else if (j.contains("steps")) {
    if (!j.at("steps").is_number_integer()) throw InputError("scenario.steps: expected an integer");
    N = j.at("steps").get<int>();
  }
  const TimeGrid g(T, N);
  Scenario sc;

  if (j.contains("options")) {
    const Json& o = j.at("options");
    if (!o.is_object()) throw InputError("options: expected an object");
    sc.riccati.hat_c1 = detail::lower_choice(o, "hat_c1", "dynamics", {"dynamics", "display"}) == "display"
                            ? HatC1Source::Display
                            : HatC1Source::Dynamics;
    sc.leader.gamma = detail::lower_choice(o, "gamma", "derived", {"derived", "display"}) == "display"
                          ? GammaForm::Display
                          : GammaForm::Derived;
    if (o.contains("symmetrize")) {
      if (!o.at("symmetrize").is_boolean()) throw InputError("options.symmetrize: expected a boolean");
      sc.riccati.symmetrize = o.at("symmetrize").get<bool>();
    }
    sc.riccati.cond_limit = detail::number(o, "cond_limit", sc.riccati.cond_limit, "options");
    sc.leader.cond_limit = sc.riccati.cond_limit;
  }

  if (j.contains("market")) sc.market = detail::parse_market(j.at("market"), g);

  if (!j.contains("coefficients")) {
    if (!sc.market) throw InputError("scenario: needs \"coefficients\" or \"market\"");
    sc.spec = build_finance_spec(*sc.market);
  } else {
    const Json dims = j.value("dims", Json::object());
    const int n = static_cast<int>(detail::number(dims, "n", 1, "dims"));
    const int d = static_cast<int>(detail::number(dims, "d", 1, "dims"));
    const int k = static_cast<int>(detail::number(dims, "k", 1, "dims"));
    if (n < 1 || d < 1 || k < 1) throw InputError("structural error in dims: n, d, k must be >= 1");
    if (d != 1) throw InputError("structural error in dims: only d = 1 is supported");
    LQGameSpec s = make_constant_spec({n, d, k}, T, N);
    const Json& c = j.at("coefficients");
    if (!c.is_object()) throw InputError("coefficients: expected an object");
    struct Field {
      const char* name;
      CoefficientPath LQGameSpec::*member;
      int rows, cols;
    };
    const Field fields[] = {{"A", &LQGameSpec::A, n, n},   {"B1", &LQGameSpec::B1, n, k}, {"B2", &LQGameSpec::B2, n, k},
                            {"C", &LQGameSpec::C, n, n},   {"Q1", &LQGameSpec::Q1, n, n}, {"R1", &LQGameSpec::R1, k, k},
                            {"S1", &LQGameSpec::S1, n, n}, {"Q2", &LQGameSpec::Q2, n, n}, {"R2", &LQGameSpec::R2, k, k},
                            {"S2", &LQGameSpec::S2, n, n}};
    for (auto it = c.begin(); it != c.end(); ++it) {
      bool known = false;
      for (const Field& f : fields) known = known || it.key() == f.name;
      if (!known) throw InputError("coefficients: unknown field \"" + it.key() + "\"");
    }
    for (const Field& f : fields)
      if (c.contains(f.name)) s.*(f.member) = coefficient(c.at(f.name), g, f.rows, f.cols, std::string("coefficients.") + f.name);
    if (j.contains("weights")) {
      const Json& w = j.at("weights");
      if (w.contains("G1")) s.G1 = detail::row_major(w.at("G1"), n, n, "weights.G1");
      if (w.contains("G2")) s.G2 = detail::row_major(w.at("G2"), n, n, "weights.G2");
    }
    if (j.contains("terminal")) {
      const Json& t = j.at("terminal");
      if (t.contains("a")) s.xi.a = detail::row_major(t.at("a"), n, 1, "terminal.a").col(0);
      if (t.contains("b")) s.xi.b = detail::row_major(t.at("b"), n, d, "terminal.b");
    }
    s.mode = detail::lower_choice(j, "mode", "strict", {"strict", "permissive"}) == "permissive"
                 ? ValidationMode::Permissive
                 : ValidationMode::Strict;
    sc.spec = std::move(s);
  }

  if (j.contains("u2")) {
    const Json& u = j.at("u2");
    const int k = sc.spec.dims.k, d = sc.spec.dims.d;
    AffineControl a = AffineControl::zero(g, k, d);
    if (!u.is_object()) throw InputError("u2: expected {\"const\": ..., \"lin\": ...}");
    if (u.contains("const")) a.u_const = coefficient(u.at("const"), g, k, 1, "u2.const");
    if (u.contains("lin")) a.u_lin = coefficient(u.at("lin"), g, k, d, "u2.lin");
    sc.u2 = std::move(a);
  }
  return sc;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path);
  return os.str();
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(what + ": malformed JSON (" + e.what() + ")");
  }
}

inline Scenario load_scenario(const std::string& path, std::optional<int> steps = std::nullopt) {
  return parse_scenario(parse_json_text(read_file(path), path), steps);
}

// ---------------------------------------------------------------------------
// Output

// 17 significant digits: exact round trip for any double.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + path);
  }
  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
    out_ << '\n';
  }
  CsvWriter& cell(double v) {
    out_ << (first_ ? "" : ",") << fmt_double(v);
    first_ = false;
    return *this;
  }
  CsvWriter& cell(std::uint64_t v) {
    out_ << (first_ ? "" : ",") << v;
    first_ = false;
    return *this;
  }
  void end_row() {
    out_ << '\n';
    first_ = true;
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("cannot write " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
  bool first_ = true;
};

inline std::vector<std::string> indexed(const std::string& prefix, Eigen::Index count) {
  std::vector<std::string> v;
  for (Eigen::Index i = 1; i <= count; ++i) v.push_back(prefix + "_" + std::to_string(i));
  return v;
}

inline void write_riccati_csv(const std::string& path, const RiccatiPath& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_csv(out, p.path);
  out.close();
  if (!out) throw IoError("cannot write " + path);
}

namespace detail {

inline void append(std::vector<std::string>& h, const std::string& prefix, Eigen::Index count) {
  for (auto& s : indexed(prefix, count)) h.push_back(std::move(s));
}

inline void cells(CsvWriter& w, const Eigen::Ref<const Vector>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.cell(v(i));
}

}  // namespace detail

// Columns y, z, u1, x first, then varphi and u2.
inline void write_follower_paths(const std::string& path, const std::vector<FollowerPath>& paths,
                                 const TimeGrid& g, int n, int k) {
  CsvWriter w(path);
  std::vector<std::string> h{"path", "t"};
  detail::append(h, "y", n);
  for (int i = 1; i <= n; ++i) h.push_back("z_" + std::to_string(i) + "1");
  detail::append(h, "u1", k);
  detail::append(h, "x", n);
  detail::append(h, "varphi", n);
  detail::append(h, "u2", k);
  w.header(h);
  for (const auto& p : paths)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      w.cell(p.index).cell(g[i]);
      for (const Matrix* m : {&p.y, &p.z, &p.u1, &p.x, &p.varphi, &p.u2}) detail::cells(w, m->col(c));
      w.end_row();
    }
  w.close();
}

// X = (phibar, q), Y = (p, ybar), Z = (k, zbar).
inline void write_leader_paths(const std::string& path, const std::vector<LeaderPath>& paths,
                               const TimeGrid& g, int n, int k) {
  CsvWriter w(path);
  std::vector<std::string> h{"path", "t"};
  for (const char* name : {"phibar", "q", "p", "ybar", "k", "zbar"}) detail::append(h, name, n);
  detail::append(h, "u1", k);
  detail::append(h, "u2", k);
  w.header(h);
  for (const auto& p : paths)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      w.cell(p.index).cell(g[i]);
      for (const Matrix* m : {&p.X, &p.Y, &p.Z}) detail::cells(w, m->col(c));
      detail::cells(w, p.u1.col(c));
      detail::cells(w, p.u2.col(c));
      w.end_row();
    }
  w.close();
}

inline void write_finance_paths(const std::string& path, const std::vector<ConsumptionPath>& paths,
                                const TimeGrid& g) {
  CsvWriter w(path);
  w.header({"path", "t", "y", "pi", "c1", "c2"});
  for (const auto& p : paths)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      w.cell(p.index).cell(g[i]).cell(p.y(0, c)).cell(p.pi(0, c)).cell(p.c1(0, c)).cell(p.c2(0, c));
      w.end_row();
    }
  w.close();
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  out.close();
  if (!out) throw IoError("cannot write " + path);
}

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json to_json(const MeanEstimate& m) { return {{"mean", m.mean}, {"std_error", m.std_error}}; }

inline Json to_json(const ValidationReport& r) {
  Json a = Json::array();
  for (const auto& v : r.entries)
    a.push_back({{"assumption", v.assumption},
                 {"field", v.field},
                 {"time", v.time},
                 {"severity", v.severity == Violation::Severity::Error ? "error" : "warning"},
                 {"message", v.message}});
  return a;
}

inline Json to_json(const SolvabilityReport& r) {
  return {{"satisfied", r.satisfied}, {"min_determinant", r.min_determinant}, {"min_time", r.min_time}};
}

inline Json to_json(const OracleComparison& c) {
  return {{"level", c.level},
          {"N", c.N},
          {"oracle_cost", c.oracle_cost},
          {"pipeline_cost", c.pipeline_cost},
          {"rel_gap", c.rel_gap},
          {"control_rms_gap", c.control_rms_gap},
          {"normal_residual", c.normal_residual}};
}

inline Json to_json(const PerturbationRow& r) {
  return {{"level", r.level},
          {"direction", r.direction},
          {"eps", r.d.eps},
          {"slope", r.d.slope},
          {"slope_stderr", r.d.slope_stderr},
          {"extrapolated", r.d.extrapolated},
          {"raw_extrapolated", r.d.raw_extrapolated},
          {"raw_stderr", r.d.raw_stderr},
          {"algebraic_residual", r.d.algebraic_residual},
          {"cost", r.cost},
          {"tolerance", r.tolerance},
          {"pass", r.pass}};
}

}  // namespace bsg
