#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bsg/leader.hpp"

namespace bsg {

// Deterministic reduction: with b = 0, C = 0 and deterministic controls the state BSDE is the
// backward ODE -y' = A y + B1 u1 + B2 u2, y(T) = a, and z = 0. Controls are piecewise
// constant on the grid intervals; y_j = Phi_j y_{j+1} + Gam1_j u1_j + Gam2_j u2_j.
struct DiscreteLQProblem {
  TimeGrid grid;
  int n = 0, k = 0;
  std::vector<Matrix> Phi, Gam1, Gam2;  // per interval
  std::vector<Matrix> Q1, Q2;           // per node
  std::vector<Matrix> R1, R2;           // per interval, averaged over the interval
  Matrix G1, G2;
  Vector a;
};

// One RK4 step of the augmented system (y, u1, u2) from t_{j+1} back to t_j.
inline DiscreteLQProblem make_discrete_problem(const LQGameSpec& s) {
  check_structure(s);
  if (!s.xi.deterministic()) throw InputError("oracle: terminal value must be deterministic (b = 0)");
  if (!s.c_is_zero()) throw InputError("oracle: deterministic reduction needs C = 0");
  DiscreteLQProblem p;
  p.grid = s.grid;
  p.n = s.dims.n;
  p.k = s.dims.k;
  const int n = p.n, k = p.k, m = n + 2 * k, N = s.grid.steps();
  const double h = s.grid.dt();
  auto aug = [&](int hh) {
    Matrix M = Matrix::Zero(m, m);
    M.block(0, 0, n, n) = s.A.half(hh, false);
    M.block(0, n, n, k) = s.B1.half(hh, false);
    M.block(0, n + k, n, k) = s.B2.half(hh, false);
    return M;
  };
  const Matrix I = Matrix::Identity(m, m);
  for (int j = 0; j < N; ++j) {
    const Matrix a1 = aug(2 * j + 2), am = aug(2 * j + 1), a0 = aug(2 * j);
    const Matrix k1 = a1;
    const Matrix k2 = am * (I + 0.5 * h * k1);
    const Matrix k3 = am * (I + 0.5 * h * k2);
    const Matrix k4 = a0 * (I + h * k3);
    const Matrix T = I + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    p.Phi.push_back(T.block(0, 0, n, n));
    p.Gam1.push_back(T.block(0, n, n, k));
    p.Gam2.push_back(T.block(0, n + k, n, k));
    p.R1.push_back(0.5 * (s.R1[j] + s.R1[j + 1]));
    p.R2.push_back(0.5 * (s.R2[j] + s.R2[j + 1]));
  }
  for (int i = 0; i <= N; ++i) {
    p.Q1.push_back(s.Q1[i]);
    p.Q2.push_back(s.Q2[i]);
  }
  p.G1 = s.G1;
  p.G2 = s.G2;
  p.a = s.xi.a;
  return p;
}

// Stacked nodal state y = c + Gu U1 + Gv U2 (node-major, n rows per node; U interval-major).
struct DenseStateMap {
  Vector c;
  Matrix Gu, Gv;
};

inline DenseStateMap dense_state(const DiscreteLQProblem& p) {
  const int n = p.n, k = p.k, N = p.grid.steps();
  DenseStateMap d;
  d.c = Vector::Zero(n * (N + 1));
  d.Gu = Matrix::Zero(n * (N + 1), k * N);
  d.Gv = Matrix::Zero(n * (N + 1), k * N);
  d.c.segment(n * N, n) = p.a;
  for (int j = N - 1; j >= 0; --j) {
    // only controls on intervals j..N-1 reach node j
    d.c.segment(n * j, n) = p.Phi[j] * d.c.segment(n * (j + 1), n);
    if (j + 1 <= N - 1) {
      const int tail = k * (N - j - 1);
      d.Gu.block(n * j, k * (j + 1), n, tail) = p.Phi[j] * d.Gu.block(n * (j + 1), k * (j + 1), n, tail);
      d.Gv.block(n * j, k * (j + 1), n, tail) = p.Phi[j] * d.Gv.block(n * (j + 1), k * (j + 1), n, tail);
    }
    d.Gu.block(n * j, k * j, n, k) = p.Gam1[j];
    d.Gv.block(n * j, k * j, n, k) = p.Gam2[j];
  }
  return d;
}

// Block-diagonal weights: trapezoid on nodes plus the initial weight, h R on intervals.
struct BlockDiagonal {
  std::vector<Matrix> blocks;

  Matrix operator*(const Matrix& m) const {
    Matrix out(m.rows(), m.cols());
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
      out.middleRows(r, b.rows()).noalias() = b * m.middleRows(r, b.rows());
      r += b.rows();
    }
    return out;
  }
  Vector operator*(const Vector& v) const { return (*this * Matrix(v)).col(0); }
  void add_to(Matrix& m) const {
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
      m.block(r, r, b.rows(), b.cols()) += b;
      r += b.rows();
    }
  }
};

inline BlockDiagonal state_weight(const DiscreteLQProblem& p, const std::vector<Matrix>& Q, const Matrix& G) {
  const int N = p.grid.steps();
  BlockDiagonal W;
  for (int i = 0; i <= N; ++i) {
    const double w = (i == 0 || i == N) ? 0.5 * p.grid.dt() : p.grid.dt();
    W.blocks.push_back(w * Q[i]);
  }
  W.blocks[0] += G;
  return W;
}

inline BlockDiagonal control_weight(const DiscreteLQProblem& p, const std::vector<Matrix>& R) {
  BlockDiagonal W;
  for (const auto& r : R) W.blocks.push_back(p.grid.dt() * r);
  return W;
}

struct OracleResult {
  Matrix control;          // k x N, interval j in column j
  Matrix follower_control; // leader oracle only: the inner optimum at the optimal u2
  Matrix y;                // n x (N+1) optimal state at the nodes
  double cost = 0.0;
  double gradient_norm = 0.0;
  double relative_residual = 0.0;  // |H u + g| / max(|g|, |H| |u|)
  int iterations = 1;              // direct solve
};

namespace detail {

inline Vector spd_solve(const Matrix& H, const Vector& rhs, const char* what) {
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() != Eigen::Success)
    throw NonConvexError(std::string(what) + ": reduced Hessian is not positive definite");
  return llt.solve(rhs);
}

inline Matrix unstack(const Vector& v, int rows) {
  return Eigen::Map<const Matrix>(v.data(), rows, v.size() / rows);
}

inline Vector stack(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

}  // namespace detail

// min over piecewise-constant u1 of 1/2 (y^T Q y + u1^T R u1) for a given u2 (k x N).
inline OracleResult deterministic_follower_oracle(const DiscreteLQProblem& p, const Matrix& u2) {
  const DenseStateMap d = dense_state(p);
  const BlockDiagonal Q = state_weight(p, p.Q1, p.G1), R = control_weight(p, p.R1);
  const Vector y0 = d.c + d.Gv * detail::stack(u2);
  const Matrix QG = Q * d.Gu;
  Matrix H = d.Gu.transpose() * QG;
  R.add_to(H);
  const Vector g = QG.transpose() * y0;
  const Vector u = detail::spd_solve(H, -g, "follower oracle");
  const Vector y = y0 + d.Gu * u;
  OracleResult r;
  r.control = detail::unstack(u, p.k);
  r.y = detail::unstack(y, p.n);
  r.cost = 0.5 * (y.dot(Q * y) + u.dot(R * u));
  const Vector res = H * u + g;
  r.gradient_norm = res.norm();
  r.relative_residual = res.norm() / std::max({g.norm(), H.norm() * u.norm(), 1e-300});
  return r;
}

// The inner optimum is affine in U2: y = P (c + Gv U2) with P = I - Gu H1^-1 Gu^T Q1, so J2 is
// again a convex quadratic in U2.
inline OracleResult deterministic_leader_oracle(const DiscreteLQProblem& p) {
  const DenseStateMap d = dense_state(p);
  const BlockDiagonal Q1 = state_weight(p, p.Q1, p.G1), R1 = control_weight(p, p.R1);
  const BlockDiagonal Q2 = state_weight(p, p.Q2, p.G2), R2 = control_weight(p, p.R2);
  const Matrix QG = Q1 * d.Gu;
  Matrix H1 = d.Gu.transpose() * QG;
  R1.add_to(H1);
  Eigen::LLT<Matrix> llt(H1);
  if (llt.info() != Eigen::Success)
    throw NonConvexError("follower oracle: reduced Hessian is not positive definite");
  // K1 = H1^-1 Gu^T Q1, so u1 = -K1 y0 and y = y0 - Gu K1 y0
  const Matrix K1 = llt.solve(QG.transpose());
  const Matrix PGv = d.Gv - d.Gu * (K1 * d.Gv);
  const Vector Pc = d.c - d.Gu * (K1 * d.c);
  Matrix H2 = PGv.transpose() * (Q2 * PGv);
  R2.add_to(H2);
  const Vector g = PGv.transpose() * (Q2 * Pc);
  const Vector v = detail::spd_solve(H2, -g, "leader oracle");
  const Vector y = Pc + PGv * v;
  const Vector y0 = d.c + d.Gv * v;
  const Vector u1 = -K1 * y0;
  OracleResult r;
  r.control = detail::unstack(v, p.k);
  r.follower_control = detail::unstack(u1, p.k);
  r.y = detail::unstack(y, p.n);
  r.cost = 0.5 * (y.dot(Q2 * y) + v.dot(R2 * v));
  const Vector res = H2 * v + g;
  r.gradient_norm = res.norm();
  r.relative_residual = res.norm() / std::max({g.norm(), H2.norm() * v.norm(), 1e-300});
  return r;
}

inline OracleResult deterministic_leader_oracle(const LQGameSpec& s, int N) {
  return deterministic_leader_oracle(make_discrete_problem(resample(s, N)));
}

// Interval averages of a nodal control, the oracle's piecewise-constant counterpart.
inline Matrix interval_average(const AffineControl& u) {
  const std::size_t N = u.u_const.size() - 1;
  Matrix out(u.u_const.rows(), N);
  for (std::size_t j = 0; j < N; ++j) out.col(j) = 0.5 * (u.u_const[j].col(0) + u.u_const[j + 1].col(0));
  return out;
}

inline Matrix interval_average(const Matrix& nodal) {
  return 0.5 * (nodal.leftCols(nodal.cols() - 1) + nodal.rightCols(nodal.cols() - 1));
}

inline double rms_gap(const Matrix& a, const Matrix& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.cols()));
}

struct OracleComparison {
  std::string level;
  int N = 0;
  double oracle_cost = 0.0;
  double pipeline_cost = 0.0;
  double rel_gap = 0.0;
  double control_rms_gap = 0.0;
  double normal_residual = 0.0;
};

inline double relative_gap(double pipeline, double oracle) {
  const double scale = std::max(std::abs(oracle), std::abs(pipeline));
  return scale == 0.0 ? 0.0 : std::abs(pipeline - oracle) / scale;
}

inline OracleComparison compare_follower(const LQGameSpec& s, const AffineControl& u2) {
  if (!u2.deterministic()) throw InputError("oracle: leader control must be deterministic");
  const auto prob = make_discrete_problem(s);
  const OracleResult o = deterministic_follower_oracle(prob, interval_average(u2));
  const auto p1 = solve_p1(s);
  const auto p2 = solve_p2(s, p1);
  FollowerModel m(s, p1, p2, u2);
  MonteCarloConfig mc;
  mc.paths = 1;
  mc.keep_paths = 1;
  const auto e = run_follower(m, mc);
  OracleComparison c;
  c.level = "follower";
  c.N = s.grid.steps();
  c.oracle_cost = o.cost;
  c.pipeline_cost = e.J1.mean;
  c.rel_gap = relative_gap(c.pipeline_cost, c.oracle_cost);
  c.control_rms_gap = rms_gap(interval_average(e.kept[0].u1), o.control);
  c.normal_residual = o.relative_residual;
  return c;
}

inline OracleComparison compare_leader(const LQGameSpec& s, const LeaderOptions& lo = {},
                                       const RiccatiOptions& ro = {}) {
  const auto prob = make_discrete_problem(s);
  const OracleResult o = deterministic_leader_oracle(prob);
  const auto L = solve_leader_riccati(s, ro);
  LeaderModel m(s, L.p1, L.p2, L.sys, L.pi1, L.pi2, lo);
  MonteCarloConfig mc;
  mc.paths = 1;
  mc.keep_paths = 1;
  const auto e = run_leader(m, mc);
  OracleComparison c;
  c.level = "leader";
  c.N = s.grid.steps();
  c.oracle_cost = o.cost;
  c.pipeline_cost = e.J2.mean;
  c.rel_gap = relative_gap(c.pipeline_cost, c.oracle_cost);
  c.control_rms_gap = rms_gap(interval_average(e.kept[0].u2), o.control);
  c.normal_residual = o.relative_residual;
  return c;
}

// Random deterministic scenario: C = 0, b = 0, coefficients uniform in [-1, 1], diagonal
// weights uniform in [0.5, 2].
inline LQGameSpec random_deterministic_scenario(std::uint64_t seed, int n, int k, int N, double T = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0), wt(0.5, 2.0);
  LQGameSpec s = make_constant_spec({n, 1, k}, T, N);
  auto rnd = [&](int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = coef(gen);
    return m;
  };
  auto diag = [&](int d) {
    Matrix m = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) m(i, i) = wt(gen);
    return m;
  };
  auto cp = [&](const Matrix& m) { return CoefficientPath::constant(s.grid, m); };
  s.A = cp(rnd(n, n));
  s.B1 = cp(rnd(n, k));
  s.B2 = cp(rnd(n, k));
  s.Q1 = cp(diag(n));
  s.R1 = cp(diag(k));
  s.S1 = cp(diag(n));
  s.Q2 = cp(diag(n));
  s.R2 = cp(diag(k));
  s.S2 = cp(diag(n));
  s.G1 = diag(n);
  s.G2 = diag(n);
  s.xi.a = rnd(n, 1).col(0);
  return s;
}

// ---------------------------------------------------------------------------
// Perturbation suite

struct NamedDirection {
  std::string name;
  AffineControl v;
};

// v = 1, v = t and v = W(t) in every control component.
inline std::vector<NamedDirection> standard_directions(const TimeGrid& g, int k) {
  auto one = [k](double) { return Vector::Ones(k).eval(); };
  auto zero = [k](double) { return Vector::Zero(k).eval(); };
  auto lin = [k](double t) { return Vector::Constant(k, t).eval(); };
  return {{"constant", control_from_functions(g, k, one, zero)},
          {"time", control_from_functions(g, k, lin, zero)},
          {"brownian", control_from_functions(g, k, zero, one)}};
}

struct PerturbationRow {
  std::string level;
  std::string direction;
  DirectionalDerivatives d;
  double cost = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline std::vector<PerturbationRow> perturbation_suite(const FollowerModel* follower,
                                                       const LeaderModel* leader,
                                                       const std::vector<NamedDirection>& dirs,
                                                       const std::vector<double>& eps,
                                                       const MonteCarloConfig& mc) {
  std::vector<PerturbationRow> rows;
  if (follower) {
    const double J = run_follower(*follower, mc).J1.mean;
    for (const auto& dir : dirs) {
      PerturbationRow r{"follower", dir.name, check_follower_stationarity(*follower, dir.v, eps, mc), J};
      r.tolerance = 1e-3 * std::max(1.0, std::abs(J));
      r.pass = std::abs(r.d.extrapolated) <= r.tolerance && r.d.algebraic_residual <= 1e-8;
      rows.push_back(std::move(r));
    }
  }
  if (leader) {
    const double J = run_leader(*leader, mc).J2.mean;
    for (const auto& dir : dirs) {
      PerturbationRow r{"leader", dir.name, check_leader_stationarity(*leader, dir.v, eps, mc), J};
      r.tolerance = 1e-3 * std::max(1.0, std::abs(J));
      r.pass = std::abs(r.d.extrapolated) <= r.tolerance && r.d.algebraic_residual <= 1e-8;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace bsg
