#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bsg/errors.hpp"

namespace bsg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Dimensions {
  int n = 1;  // state
  int d = 1;  // Brownian
  int k = 1;  // control
};

class TimeGrid {
 public:
  TimeGrid() : TimeGrid(1.0, 1) {}
  TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw InputError("time grid: horizon must be positive and finite");
    if (steps < 1) throw InputError("time grid: steps must be >= 1");
    dt_ = horizon / steps;
    nodes_.resize(steps + 1);
    for (int i = 0; i < steps; ++i) nodes_[i] = i * dt_;
    nodes_[steps] = horizon;
  }

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return dt_; }
  std::size_t size() const { return nodes_.size(); }
  double operator[](std::size_t i) const { return nodes_[i]; }
  const std::vector<double>& nodes() const { return nodes_; }

  // Time of half-index h: node h/2 for even h, midpoint of interval (h-1)/2 for odd h.
  double half_time(int h) const {
    return (h % 2 == 0) ? nodes_[h / 2] : nodes_[h / 2] + 0.5 * dt_;
  }

  bool operator==(const TimeGrid& o) const { return horizon_ == o.horizon_ && steps_ == o.steps_; }

 private:
  double horizon_;
  int steps_;
  double dt_;
  std::vector<double> nodes_;
};

// Matrix-valued function sampled on the nodes of a grid.
class CoefficientPath {
 public:
  CoefficientPath() = default;

  CoefficientPath(TimeGrid grid, std::vector<Matrix> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size())
      throw InputError("coefficient path: expected " + std::to_string(grid_.size()) +
                       " node values, got " + std::to_string(values_.size()));
    rows_ = values_.front().rows();
    cols_ = values_.front().cols();
    for (const auto& v : values_)
      if (v.rows() != rows_ || v.cols() != cols_)
        throw InputError("coefficient path: inconsistent node shapes");
  }

  static CoefficientPath constant(const TimeGrid& grid, const Matrix& value) {
    return CoefficientPath(grid, std::vector<Matrix>(grid.size(), value));
  }

  template <class F>
  static CoefficientPath generate(const TimeGrid& grid, F&& f) {
    std::vector<Matrix> v;
    v.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) v.emplace_back(f(grid[i]));
    return CoefficientPath(grid, std::move(v));
  }

  const TimeGrid& grid() const { return grid_; }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  const Matrix& operator[](std::size_t i) const { return values_[i]; }
  const Matrix& front() const { return values_.front(); }
  const Matrix& back() const { return values_.back(); }
  const std::vector<Matrix>& values() const { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](const Matrix& m) { return m.allFinite(); });
  }

  bool is_constant() const {
    return std::all_of(values_.begin(), values_.end(),
                       [&](const Matrix& m) { return m == values_.front(); });
  }

  // Linear interpolation; node values are returned bit-exactly.
  Matrix eval(double t) const {
    const double T = grid_.horizon();
    if (!(t >= 0.0 && t <= T)) {
      std::ostringstream os;
      os << "coefficient evaluated at t=" << t << " outside [0, " << T << "]";
      throw std::out_of_range(os.str());
    }
    if (t == T) return values_.back();
    const double dt = grid_.dt();
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t / dt), grid_.steps() - 1);
    if (t < grid_[i]) --i;
    if (t == grid_[i]) return values_[i];
    const double w = (t - grid_[i]) / dt;
    return (1.0 - w) * values_[i] + w * values_[i + 1];
  }

  // Value at the midpoint of interval i by linear interpolation.
  Matrix midpoint_linear(std::size_t i) const { return 0.5 * (values_[i] + values_[i + 1]); }

  // Value at the midpoint of interval i by 4-point cubic interpolation (one-sided near
  // the ends). Used for solved paths, which are smooth and feed fourth-order schemes.
  Matrix midpoint_cubic(std::size_t i) const {
    const std::size_t N = values_.size() - 1;
    if (N < 3) return midpoint_linear(i);
    if (i == 0)  // nodes 0..3 at offset 1/2
      return (5.0 * values_[0] + 15.0 * values_[1] - 5.0 * values_[2] + values_[3]) / 16.0;
    if (i == N - 1)
      return (5.0 * values_[N] + 15.0 * values_[N - 1] - 5.0 * values_[N - 2] + values_[N - 3]) /
             16.0;
    return (-values_[i - 1] + 9.0 * values_[i] + 9.0 * values_[i + 1] - values_[i + 2]) / 16.0;
  }

  // Sample at a half-grid index (see TimeGrid::half_time).
  Matrix half(int h, bool smooth) const {
    if (h % 2 == 0) return values_[h / 2];
    return smooth ? midpoint_cubic(h / 2) : midpoint_linear(h / 2);
  }

 private:
  TimeGrid grid_;
  std::vector<Matrix> values_;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
};

inline Matrix eval_coefficient(const CoefficientPath& path, double t) { return path.eval(t); }

// xi = a + b W(T).
struct TerminalCondition {
  Vector a;
  Matrix b;

  bool deterministic() const { return b.size() == 0 || b.isZero(0.0); }
  Vector value(double w_T) const { return a + b.col(0) * w_T; }
};

// u(t) = u_const(t) + u_lin(t) W(t).
struct AffineControl {
  CoefficientPath u_const;  // k x 1
  CoefficientPath u_lin;    // k x d

  static AffineControl zero(const TimeGrid& grid, int k, int d = 1) {
    return {CoefficientPath::constant(grid, Matrix::Zero(k, 1)),
            CoefficientPath::constant(grid, Matrix::Zero(k, d))};
  }
  static AffineControl constant(const TimeGrid& grid, const Vector& c, int d = 1) {
    return {CoefficientPath::constant(grid, c),
            CoefficientPath::constant(grid, Matrix::Zero(c.size(), d))};
  }

  bool deterministic() const {
    for (std::size_t i = 0; i < u_lin.size(); ++i)
      if (!u_lin[i].isZero(0.0)) return false;
    return true;
  }
  Vector value(std::size_t i, double w) const { return u_const[i].col(0) + u_lin[i].col(0) * w; }
};

enum class ValidationMode { Strict, Permissive };

struct LQGameSpec {
  Dimensions dims;
  TimeGrid grid;
  CoefficientPath A, B1, B2, C;
  CoefficientPath Q1, R1, S1;
  Matrix G1;
  CoefficientPath Q2, R2, S2;
  Matrix G2;
  TerminalCondition xi;
  ValidationMode mode = ValidationMode::Strict;

  bool c_is_zero() const {
    for (std::size_t i = 0; i < C.size(); ++i)
      if (!C[i].isZero(0.0)) return false;
    return true;
  }
};

// Spec with all coefficients constant; weights zero unless given. Handy for tests.
inline LQGameSpec make_constant_spec(const Dimensions& dims, double T, int N) {
  LQGameSpec s;
  s.dims = dims;
  s.grid = TimeGrid(T, N);
  const int n = dims.n, k = dims.k;
  auto c = [&](Matrix m) { return CoefficientPath::constant(s.grid, m); };
  s.A = c(Matrix::Zero(n, n));
  s.B1 = c(Matrix::Zero(n, k));
  s.B2 = c(Matrix::Zero(n, k));
  s.C = c(Matrix::Zero(n, n));
  s.Q1 = c(Matrix::Zero(n, n));
  s.R1 = c(Matrix::Identity(k, k));
  s.S1 = c(Matrix::Zero(n, n));
  s.G1 = Matrix::Zero(n, n);
  s.Q2 = c(Matrix::Zero(n, n));
  s.R2 = c(Matrix::Identity(k, k));
  s.S2 = c(Matrix::Zero(n, n));
  s.G2 = Matrix::Zero(n, n);
  s.xi = {Vector::Zero(n), Matrix::Zero(n, dims.d)};
  return s;
}

// The reference scalar scenario: A=C=0, B1=B2=1, Q1=Q2=0, R1=R2=1, S1=S2=0, G1=G2=1, xi=1.
inline LQGameSpec make_s2(int N, double T = 1.0) {
  LQGameSpec s = make_constant_spec({1, 1, 1}, T, N);
  s.B1 = CoefficientPath::constant(s.grid, Matrix::Ones(1, 1));
  s.B2 = CoefficientPath::constant(s.grid, Matrix::Ones(1, 1));
  s.G1 = Matrix::Ones(1, 1);
  s.G2 = Matrix::Ones(1, 1);
  s.xi.a = Vector::Ones(1);
  return s;
}

// Scalar scenario with noise in the state equation and a random terminal value.
inline LQGameSpec make_stochastic_scenario(int N, double T = 1.0) {
  LQGameSpec s = make_constant_spec({1, 1, 1}, T, N);
  auto c = [&](double v) { return CoefficientPath::constant(s.grid, Matrix::Constant(1, 1, v)); };
  s.A = c(0.3);
  s.B1 = c(1.0);
  s.B2 = c(0.5);
  s.C = c(0.4);
  s.Q1 = c(1.0);
  s.S1 = c(0.5);
  s.Q2 = c(0.5);
  s.S2 = c(0.25);
  s.G1 = Matrix::Constant(1, 1, 1.0);
  s.G2 = Matrix::Constant(1, 1, 0.5);
  s.xi.a = Vector::Ones(1);
  s.xi.b = Matrix::Constant(1, 1, 0.5);
  return s;
}

// Resample every coefficient of a spec on a new grid (linear interpolation).
inline LQGameSpec resample(const LQGameSpec& s, int steps) {
  LQGameSpec r = s;
  r.grid = TimeGrid(s.grid.horizon(), steps);
  auto rs = [&](const CoefficientPath& p) {
    return CoefficientPath::generate(r.grid, [&](double t) { return p.eval(t); });
  };
  r.A = rs(s.A);
  r.B1 = rs(s.B1);
  r.B2 = rs(s.B2);
  r.C = rs(s.C);
  r.Q1 = rs(s.Q1);
  r.R1 = rs(s.R1);
  r.S1 = rs(s.S1);
  r.Q2 = rs(s.Q2);
  r.R2 = rs(s.R2);
  r.S2 = rs(s.S2);
  return r;
}

struct Violation {
  enum class Severity { Error, Warning };
  std::string assumption;  // "(L1)", "(L2)" or "(L3)"
  std::string field;
  double time = 0.0;
  Severity severity = Severity::Error;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> entries;

  bool ok() const {
    return std::none_of(entries.begin(), entries.end(),
                        [](const Violation& v) { return v.severity == Violation::Severity::Error; });
  }
  bool empty() const { return entries.empty(); }
  std::size_t errors() const {
    return std::count_if(entries.begin(), entries.end(),
                         [](const Violation& v) { return v.severity == Violation::Severity::Error; });
  }
};

namespace detail {

inline void check_shape(const CoefficientPath& p, const TimeGrid& grid, Eigen::Index r,
                        Eigen::Index c, const char* name) {
  if (p.size() != grid.size() || !(p.grid() == grid))
    throw InputError(std::string("structural error in ") + name + ": grid mismatch");
  if (p.rows() != r || p.cols() != c)
    throw InputError(std::string("structural error in ") + name + ": expected " +
                     std::to_string(r) + "x" + std::to_string(c) + ", got " +
                     std::to_string(p.rows()) + "x" + std::to_string(p.cols()));
}

inline void check_shape(const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
  if (m.rows() != r || m.cols() != c)
    throw InputError(std::string("structural error in ") + name + ": expected " +
                     std::to_string(r) + "x" + std::to_string(c) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

// Throws InputError when shapes disagree with dims or d != 1.
inline void check_structure(const LQGameSpec& s) {
  const auto [n, d, k] = s.dims;
  if (n < 1 || d < 1 || k < 1) throw InputError("structural error in dims: n, d, k must be >= 1");
  if (d != 1) throw InputError("structural error in dims: only d = 1 is supported");
  using detail::check_shape;
  check_shape(s.A, s.grid, n, n, "A");
  check_shape(s.B1, s.grid, n, k, "B1");
  check_shape(s.B2, s.grid, n, k, "B2");
  check_shape(s.C, s.grid, n, n, "C");
  check_shape(s.Q1, s.grid, n, n, "Q1");
  check_shape(s.R1, s.grid, k, k, "R1");
  check_shape(s.S1, s.grid, n, n, "S1");
  check_shape(s.Q2, s.grid, n, n, "Q2");
  check_shape(s.R2, s.grid, k, k, "R2");
  check_shape(s.S2, s.grid, n, n, "S2");
  check_shape(s.G1, n, n, "G1");
  check_shape(s.G2, n, n, "G2");
  check_shape(s.xi.a, n, 1, "terminal.a");
  check_shape(s.xi.b, n, d, "terminal.b");
}

inline ValidationReport validate_spec(const LQGameSpec& s, bool strict) {
  check_structure(s);
  ValidationReport rep;
  using Sev = Violation::Severity;
  auto add = [&](const char* tag, const char* field, double t, Sev sev, std::string msg) {
    rep.entries.push_back({tag, field, t, sev, std::string(tag) + ": " + field + " " + msg});
  };
  constexpr double kSymTol = 1e-12;

  auto finite = [&](const CoefficientPath& p, const char* tag, const char* name) {
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!p[i].allFinite()) {
        add(tag, name, s.grid[i], Sev::Error, "has non-finite entries");
        return false;
      }
    return true;
  };
  finite(s.A, "(L1)", "A");
  finite(s.B1, "(L1)", "B1");
  finite(s.B2, "(L1)", "B2");
  finite(s.C, "(L1)", "C");

  auto psd_path = [&](const CoefficientPath& p, const char* tag, const char* name) {
    if (!finite(p, tag, name)) return;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Matrix& m = p[i];
      if ((m - m.transpose()).norm() > kSymTol) {
        add(tag, name, s.grid[i], Sev::Error, "not symmetric");
        return;
      }
      if (detail::min_eigenvalue(m) < -kSymTol * std::max(1.0, m.norm())) {
        add(tag, name, s.grid[i], strict ? Sev::Error : Sev::Warning, "not PSD");
        return;
      }
    }
  };
  auto pd_path = [&](const CoefficientPath& p, const char* tag, const char* name) {
    if (!finite(p, tag, name)) return;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Matrix& m = p[i];
      if ((m - m.transpose()).norm() > kSymTol) {
        add(tag, name, s.grid[i], Sev::Error, "not symmetric");
        return;
      }
      if (!(detail::min_eigenvalue(m) > 0.0)) {
        add(tag, name, s.grid[i], Sev::Error, "not positive definite");
        return;
      }
    }
  };
  auto psd_matrix = [&](const Matrix& m, const char* tag, const char* name) {
    if (!m.allFinite()) {
      add(tag, name, 0.0, Sev::Error, "has non-finite entries");
      return;
    }
    if ((m - m.transpose()).norm() > kSymTol) {
      add(tag, name, 0.0, Sev::Error, "not symmetric");
      return;
    }
    if (detail::min_eigenvalue(m) < -kSymTol * std::max(1.0, m.norm()))
      add(tag, name, 0.0, strict ? Sev::Error : Sev::Warning, "not PSD");
  };

  psd_path(s.Q1, "(L2)", "Q1");
  psd_path(s.S1, "(L2)", "S1");
  pd_path(s.R1, "(L2)", "R1");
  psd_matrix(s.G1, "(L2)", "G1");
  psd_path(s.Q2, "(L3)", "Q2");
  psd_path(s.S2, "(L3)", "S2");
  pd_path(s.R2, "(L3)", "R2");
  psd_matrix(s.G2, "(L3)", "G2");

  if (!s.xi.a.allFinite() || !s.xi.b.allFinite())
    add("(L1)", "terminal", s.grid.horizon(), Sev::Error, "has non-finite entries");
  return rep;
}

}  // namespace bsg
