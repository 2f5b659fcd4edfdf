#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "bsg/core_model.hpp"
#include "bsg/linalg_ode.hpp"

namespace bsg {

enum class RiccatiTag { P1, P2, Pi1, Pi2 };

inline const char* tag_name(RiccatiTag t) {
  switch (t) {
    case RiccatiTag::P1: return "P1";
    case RiccatiTag::P2: return "P2";
    case RiccatiTag::Pi1: return "Pi1";
    case RiccatiTag::Pi2: return "Pi2";
  }
  return "?";
}

struct RiccatiPath {
  RiccatiTag tag;
  CoefficientPath path;
  double max_asymmetry = 0.0;  // before symmetrization

  const Matrix& operator[](std::size_t i) const { return path[i]; }
  const TimeGrid& grid() const { return path.grid(); }
  std::size_t size() const { return path.size(); }
};

// Which block formulas the stacked leader matrices use. Dynamics re-derives every block
// from the follower decoupling (exact for matrices); Display takes the printed blocks.
enum class HatC1Source { Dynamics, Display };

struct RiccatiOptions {
  bool symmetrize = true;
  HatC1Source hat_c1 = HatC1Source::Dynamics;
  double cond_limit = 1e12;
};

// ---------------------------------------------------------------------------
// Follower equations

inline HalfField p1_field(const LQGameSpec& s, double cond_limit = 1e12) {
  return [&s, cond_limit](int h, const Matrix& P) -> Matrix {
    const Matrix A = s.A.half(h, false), B1 = s.B1.half(h, false), C = s.C.half(h, false);
    const Matrix Q1 = s.Q1.half(h, false), S1 = s.S1.half(h, false);
    const Matrix R1inv = s.R1.half(h, false).inverse();
    const Eigen::Index n = P.rows();
    const Matrix K = guarded_inverse(P * S1 + Matrix::Identity(n, n), "(P1 S1 + I)", "P1",
                                     s.grid.half_time(h), cond_limit);
    return -(A * P + P * A.transpose() - P * Q1 * P + B1 * R1inv * B1.transpose() +
             C * K * P * C.transpose());
  };
}

inline RiccatiPath solve_p1(const LQGameSpec& s, const RiccatiOptions& o = {}) {
  check_structure(s);
  const int n = s.dims.n;
  auto r = integrate_half(p1_field(s, o.cond_limit), Matrix::Zero(n, n), s.grid,
                          OdeDirection::Backward, {o.symmetrize, "P1"});
  return {RiccatiTag::P1, std::move(r.path), r.max_asymmetry};
}

inline HalfField p2_field(const LQGameSpec& s, const RiccatiPath& p1, double cond_limit = 1e12) {
  return [&s, &p1, cond_limit](int h, const Matrix& P) -> Matrix {
    const Matrix A = s.A.half(h, false), B1 = s.B1.half(h, false), C = s.C.half(h, false);
    const Matrix Q1 = s.Q1.half(h, false), S1 = s.S1.half(h, false);
    const Matrix R1inv = s.R1.half(h, false).inverse();
    const Matrix P1 = p1.path.half(h, true);
    const Eigen::Index n = P.rows();
    const Matrix K = guarded_inverse(P1 * S1 + Matrix::Identity(n, n), "(P1 S1 + I)", "P2",
                                     s.grid.half_time(h), cond_limit);
    return P * A + A.transpose() * P + Q1 - P * B1 * R1inv * B1.transpose() * P -
           P * C * K * P1 * C.transpose() * P;
  };
}

inline RiccatiPath solve_p2(const LQGameSpec& s, const RiccatiPath& p1,
                            const RiccatiOptions& o = {}) {
  auto r = integrate_half(p2_field(s, p1, o.cond_limit), s.G1, s.grid, OdeDirection::Forward,
                          {o.symmetrize, "P2"});
  return {RiccatiTag::P2, std::move(r.path), r.max_asymmetry};
}

// ---------------------------------------------------------------------------
// Stacked leader system

struct HatMatrices {
  Matrix A1, B1, B2, C1, D1, F1, F2, S1;
};

struct FollowerCoefficients {
  Matrix A, B1, B2, C, R1, S1, Q2, S2, P1, P2;
};

inline HatMatrices assemble_hat(const FollowerCoefficients& c, HatC1Source src, double t,
                                double cond_limit = 1e12) {
  const Eigen::Index n = c.A.rows(), k = c.B2.cols();
  const Matrix I = Matrix::Identity(n, n);
  const Matrix Z = Matrix::Zero(n, n);
  const Matrix E = c.B1 * c.R1.inverse() * c.B1.transpose();
  const Matrix Abar = c.A - E * c.P2;
  const Matrix K = guarded_inverse(c.P1 * c.S1 + I, "(P1 S1 + I)", "stacked system", t, cond_limit);
  const Matrix Ct = c.C.transpose();
  const Matrix P2C = c.P2 * c.C;

  HatMatrices h;
  h.A1 = Matrix::Zero(2 * n, 2 * n);
  h.A1 << Abar, Z, Z, Abar;
  h.B1 = Matrix::Zero(2 * n, k);
  h.B1.topRows(n) = c.P2 * c.B2;
  h.B2 = Matrix::Zero(2 * n, k);
  h.B2.bottomRows(n) = c.B2;

  Matrix c11, d21, f12, f21;
  if (src == HatC1Source::Dynamics) {
    c11 = Ct;
    d21 = P2C;
    f12 = P2C * K * c.P1 * Ct * c.P2;
    f21 = f12;
  } else {
    const Matrix L = guarded_inverse(c.P1 * c.P2 + I, "(P1 P2 + I)", "stacked system", t,
                                     cond_limit);
    c11 = (c.P1 * c.P2 + I) * K * Ct - (c.P2 - c.S1) * L * c.P1 * Ct;
    d21 = P2C * K * (c.P1 * c.P2 + I) - P2C * c.P1 * K * (c.P2 - c.S1);
    f12 = P2C * K * c.P1 * Ct * c.P2;
    f21 = P2C * c.P1 * K * Ct * c.P2;
  }
  h.C1 = Matrix::Zero(2 * n, 2 * n);
  h.C1 << c11, Z, Z, Ct;
  h.D1 = Matrix::Zero(2 * n, 2 * n);
  h.D1 << Z, P2C, d21, Z;
  h.F1 = Matrix::Zero(2 * n, 2 * n);
  h.F1 << Z, f12, f21, c.Q2;
  h.F2 = Matrix::Zero(2 * n, 2 * n);
  h.F2 << Z, -E, -E, Z;
  h.S1 = Matrix::Zero(2 * n, 2 * n);
  h.S1 << Z, -(c.P2 - c.S1), -(c.P2 - c.S1), c.S2;
  return h;
}

class StackedSystem {
 public:
  StackedSystem(const LQGameSpec& s, const RiccatiPath& p1, const RiccatiPath& p2,
                HatC1Source src = HatC1Source::Dynamics, double cond_limit = 1e12)
      : n_(s.dims.n), k_(s.dims.k), grid_(s.grid), source_(src) {
    if (!(p1.grid() == s.grid) || !(p2.grid() == s.grid))
      throw InputError("stacked system: Riccati paths not on the scenario grid");
    const int H = 2 * s.grid.steps() + 1;
    half_.reserve(H);
    for (int h = 0; h < H; ++h) {
      FollowerCoefficients c{s.A.half(h, false),  s.B1.half(h, false), s.B2.half(h, false),
                             s.C.half(h, false),  s.R1.half(h, false), s.S1.half(h, false),
                             s.Q2.half(h, false), s.S2.half(h, false), p1.path.half(h, true),
                             p2.path.half(h, true)};
      half_.push_back(assemble_hat(c, src, s.grid.half_time(h), cond_limit));
    }
    G2h_ = Matrix::Zero(2 * n_, 2 * n_);
    G2h_.bottomRightCorner(n_, n_) = s.G2;
    xih_.a = Vector::Zero(2 * n_);
    xih_.a.tail(n_) = s.xi.a;
    xih_.b = Matrix::Zero(2 * n_, s.dims.d);
    xih_.b.bottomRows(n_) = s.xi.b;
  }

  int n() const { return n_; }
  int k() const { return k_; }
  const TimeGrid& grid() const { return grid_; }
  HatC1Source source() const { return source_; }
  const HatMatrices& node(std::size_t i) const { return half_[2 * i]; }
  const HatMatrices& half(int h) const { return half_[h]; }
  const Matrix& G2h() const { return G2h_; }
  const TerminalCondition& xih() const { return xih_; }

  CoefficientPath node_path(Matrix HatMatrices::*field) const {
    std::vector<Matrix> v;
    v.reserve(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) v.push_back(node(i).*field);
    return CoefficientPath(grid_, std::move(v));
  }

  bool hat_constant() const {
    for (const auto& h : half_)
      if (h.A1 != half_[0].A1 || h.B1 != half_[0].B1 || h.B2 != half_[0].B2 ||
          h.C1 != half_[0].C1 || h.D1 != half_[0].D1 || h.F1 != half_[0].F1 ||
          h.F2 != half_[0].F2 || h.S1 != half_[0].S1)
        return false;
    return true;
  }
  bool c_free() const {
    for (const auto& h : half_)
      if (!h.C1.isZero(0.0) || !h.D1.isZero(0.0)) return false;
    return true;
  }

 private:
  int n_, k_;
  TimeGrid grid_;
  HatC1Source source_;
  std::vector<HatMatrices> half_;
  Matrix G2h_;
  TerminalCondition xih_;
};

inline StackedSystem build_stacked_system(const LQGameSpec& s, const RiccatiPath& p1,
                                          const RiccatiPath& p2, const RiccatiOptions& o = {}) {
  return StackedSystem(s, p1, p2, o.hat_c1, o.cond_limit);
}

// ---------------------------------------------------------------------------
// Leader equations

inline HalfField pi1_field(const StackedSystem& sys, const CoefficientPath& R2,
                           double cond_limit = 1e12) {
  return [&sys, &R2, cond_limit](int h, const Matrix& P) -> Matrix {
    const HatMatrices& m = sys.half(h);
    const Matrix R2inv = R2.half(h, false).inverse();
    const Eigen::Index dim = P.rows();
    const Matrix L = guarded_inverse(Matrix::Identity(dim, dim) + P * m.S1, "(I + Pi1 S1^)",
                                     "Pi1", sys.grid().half_time(h), cond_limit);
    return -(m.A1 * P + P * m.A1.transpose() - P * m.F1 * P +
             (P * m.B1 - m.B2) * R2inv * (m.B1.transpose() * P - m.B2.transpose()) +
             (m.C1.transpose() - P * m.D1) * L * P * (m.C1 - m.D1.transpose() * P) - m.F2);
  };
}

inline RiccatiPath solve_pi1(const StackedSystem& sys, const CoefficientPath& R2,
                             const RiccatiOptions& o = {}) {
  const int m = 2 * sys.n();
  auto r = integrate_half(pi1_field(sys, R2, o.cond_limit), Matrix::Zero(m, m), sys.grid(),
                          OdeDirection::Backward, {o.symmetrize, "Pi1"});
  return {RiccatiTag::Pi1, std::move(r.path), r.max_asymmetry};
}

inline HalfField pi2_field(const StackedSystem& sys, const CoefficientPath& R2,
                           const RiccatiPath& pi1, double cond_limit = 1e12) {
  return [&sys, &R2, &pi1, cond_limit](int h, const Matrix& P) -> Matrix {
    const HatMatrices& m = sys.half(h);
    const Matrix R2inv = R2.half(h, false).inverse();
    const Matrix Pi1 = pi1.path.half(h, true);
    const Eigen::Index dim = P.rows();
    const Matrix L = guarded_inverse(Matrix::Identity(dim, dim) + Pi1 * m.S1, "(I + Pi1 S1^)",
                                     "Pi2", sys.grid().half_time(h), cond_limit);
    const Matrix G = m.B1 + P * m.B2;
    return P * m.A1 + m.A1.transpose() * P + P * m.F2 * P - G * R2inv * G.transpose() -
           (m.D1 + P * m.C1.transpose()) * L * Pi1 * (m.D1.transpose() + m.C1 * P) + m.F1;
  };
}

inline RiccatiPath solve_pi2(const StackedSystem& sys, const CoefficientPath& R2,
                             const RiccatiPath& pi1, const RiccatiOptions& o = {}) {
  auto r = integrate_half(pi2_field(sys, R2, pi1, o.cond_limit), sys.G2h(), sys.grid(),
                          OdeDirection::Forward, {o.symmetrize, "Pi2"});
  return {RiccatiTag::Pi2, std::move(r.path), r.max_asymmetry};
}

// Pi1 equation rewritten for C = 0 in terms of M = A1^ - B2^ R2^-1 B1^T etc.
inline HalfField pi1_reduced_field(const StackedSystem& sys, const CoefficientPath& R2) {
  return [&sys, &R2](int h, const Matrix& P) -> Matrix {
    const HatMatrices& m = sys.half(h);
    const Matrix R2inv = R2.half(h, false).inverse();
    const Matrix M = m.A1 - m.B2 * R2inv * m.B1.transpose();
    return -(M * P + P * M.transpose() + P * (m.B1 * R2inv * m.B1.transpose() - m.F1) * P +
             m.B2 * R2inv * m.B2.transpose() - m.F2);
  };
}

// ---------------------------------------------------------------------------
// Closed forms (C = 0). Constant hat matrices use e^{A(T-t)} directly; otherwise
// the time-ordered propagator of the same linear Hamiltonian system is used.

struct ClosedForm {
  RiccatiPath path;
  SolvabilityReport scan;
};

namespace detail {

struct CfBlocks {
  Matrix M, W, V;  // M = A1^ - B2^ R^-1 B1^T, W = F2^ - B2^ R^-1 B2^T, V = F1^ - B1^ R^-1 B1^T
};

inline CfBlocks cf_blocks(const HatMatrices& m, const Matrix& R2inv) {
  return {m.A1 - m.B2 * R2inv * m.B1.transpose(), m.F2 - m.B2 * R2inv * m.B2.transpose(),
          m.F1 - m.B1 * R2inv * m.B1.transpose()};
}

inline Matrix hamiltonian_pi1(const HatMatrices& m, const Matrix& R2inv) {
  const auto b = cf_blocks(m, R2inv);
  const Eigen::Index d = b.M.rows();
  Matrix H(2 * d, 2 * d);
  H << b.M.transpose(), -b.V, b.W, -b.M;
  return H;
}

inline Matrix hamiltonian_pi2(const HatMatrices& m, const Matrix& R2inv, const Matrix& G,
                              bool literal) {
  const auto b = cf_blocks(m, R2inv);
  const Matrix Phi = b.M + b.W * G;
  const Matrix Psi = G * b.M + b.M.transpose() * G + G * b.W * G + b.V;
  const Eigen::Index d = b.M.rows();
  Matrix H(2 * d, 2 * d);
  H << Phi, b.W, (literal ? Psi : (-Psi).eval()), -Phi.transpose();
  return H;
}

inline std::vector<Matrix> propagators(const StackedSystem& sys, const CoefficientPath& R2,
                                       const std::function<Matrix(int)>& gen, Anchor anchor) {
  const TimeGrid& g = sys.grid();
  if (sys.hat_constant() && R2.is_constant()) {
    const Matrix H = gen(0);
    std::vector<Matrix> phi(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double tau = anchor == Anchor::Terminal ? g.horizon() - g[i] : g[i];
      phi[i] = matrix_exponential(H * tau);
    }
    return phi;
  }
  return ordered_propagator(gen, g, anchor);
}

inline std::vector<Matrix> riccati_from_propagators(const std::vector<Matrix>& phi,
                                                    const Matrix& offset) {
  std::vector<Matrix> out;
  out.reserve(phi.size());
  for (const auto& p : phi) {
    const Eigen::Index m = p.rows() / 2;
    Matrix v = offset - p.bottomRightCorner(m, m).partialPivLu().solve(p.bottomLeftCorner(m, m));
    out.push_back(0.5 * (v + v.transpose()));
  }
  return out;
}

}  // namespace detail

inline ClosedForm pi1_closed_form(const StackedSystem& sys, const CoefficientPath& R2) {
  if (!sys.c_free()) throw InputError("pi1_closed_form requires C = 0");
  auto gen = [&](int h) { return detail::hamiltonian_pi1(sys.half(h), R2.half(h, false).inverse()); };
  auto phi = detail::propagators(sys, R2, gen, Anchor::Terminal);
  auto scan = scan_propagators(phi, sys.grid());
  if (!scan.satisfied) throw UnsolvableError("Pi1 closed form", scan.min_determinant, scan.min_time);
  const Eigen::Index m = 2 * sys.n();
  auto vals = detail::riccati_from_propagators(phi, Matrix::Zero(m, m));
  vals.back().setZero();
  return {{RiccatiTag::Pi1, CoefficientPath(sys.grid(), std::move(vals)), 0.0}, scan};
}

inline ClosedForm pi2_closed_form(const StackedSystem& sys, const CoefficientPath& R2) {
  if (!sys.c_free()) throw InputError("pi2_closed_form requires C = 0");
  auto gen = [&](int h) {
    return detail::hamiltonian_pi2(sys.half(h), R2.half(h, false).inverse(), sys.G2h(), false);
  };
  auto phi = detail::propagators(sys, R2, gen, Anchor::Initial);
  auto scan = scan_propagators(phi, sys.grid());
  if (!scan.satisfied) throw UnsolvableError("Pi2 closed form", scan.min_determinant, scan.min_time);
  auto vals = detail::riccati_from_propagators(phi, sys.G2h());
  vals.front() = sys.G2h();
  return {{RiccatiTag::Pi2, CoefficientPath(sys.grid(), std::move(vals)), 0.0}, scan};
}

// The printed reading: lower-left block +Psi, Pi2(t) = G2^ + Pi21(t) with Pi21(T) = 0.
// Kept only to report how far it is from the forward solution.
inline ClosedForm pi2_closed_form_literal(const StackedSystem& sys, const CoefficientPath& R2) {
  if (!sys.c_free()) throw InputError("pi2_closed_form requires C = 0");
  auto gen = [&](int h) {
    return detail::hamiltonian_pi2(sys.half(h), R2.half(h, false).inverse(), sys.G2h(), true);
  };
  auto phi = detail::propagators(sys, R2, gen, Anchor::Terminal);
  auto scan = scan_propagators(phi, sys.grid());
  if (!scan.satisfied)
    throw UnsolvableError("Pi2 literal closed form", scan.min_determinant, scan.min_time);
  auto vals = detail::riccati_from_propagators(phi, sys.G2h());
  return {{RiccatiTag::Pi2, CoefficientPath(sys.grid(), std::move(vals)), 0.0}, scan};
}

// Block matrix of the Pi1 closed form at node i (constant case: any node).
inline Matrix pi1_block_matrix(const StackedSystem& sys, const CoefficientPath& R2, std::size_t i) {
  return detail::hamiltonian_pi1(sys.node(i), R2[i].inverse());
}

inline Matrix pi2_block_matrix(const StackedSystem& sys, const CoefficientPath& R2, std::size_t i) {
  return detail::hamiltonian_pi2(sys.node(i), R2[i].inverse(), sys.G2h(), false);
}

// ---------------------------------------------------------------------------
// Residual check

struct RiccatiResidual {
  double max = 0.0;
  double time = 0.0;
};

// Central-difference derivative minus the right-hand side, at interior nodes.
inline RiccatiResidual riccati_residual(const RiccatiPath& p, const HalfField& field) {
  const TimeGrid& g = p.grid();
  const double h = g.dt();
  RiccatiResidual r;
  for (int i = 1; i < g.steps(); ++i) {
    const Matrix d = (p[i + 1] - p[i - 1]) / (2.0 * h) - field(2 * i, p[i]);
    const double v = d.norm();
    if (v > r.max) {
      r.max = v;
      r.time = g[i];
    }
  }
  return r;
}

inline double max_node_gap(const CoefficientPath& a, const CoefficientPath& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

inline void write_csv(std::ostream& os, const CoefficientPath& p) {
  os << "t";
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) os << ",m_" << r + 1 << c + 1;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", p.grid()[i]);
    os << buf;
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", p[i](r, c));
        os << ',' << buf;
      }
    os << '\n';
  }
}

}  // namespace bsg
