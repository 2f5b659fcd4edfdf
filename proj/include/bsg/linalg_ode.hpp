#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bsg/core_model.hpp"

namespace bsg {

enum class OdeDirection { Forward, Backward };

// Field sampled on the half grid: h = 2i is node i, h = 2i+1 the midpoint of interval i.
using HalfField = std::function<Matrix(int h, const Matrix& m)>;
using TimeField = std::function<Matrix(double t, const Matrix& m)>;

struct OdeOptions {
  bool symmetrize = false;
  std::string equation = "ode";
};

struct OdeResult {
  CoefficientPath path;
  double max_asymmetry = 0.0;  // relative, measured before any symmetrization
};

namespace detail {

inline bool diverged(const Matrix& m) {
  constexpr double kLimit = 1e150;
  return !m.allFinite() || m.cwiseAbs().maxCoeff() > kLimit;
}

}  // namespace detail

// Classical RK4 on the uniform grid. Backward problems integrate s = T - t forward.
inline OdeResult integrate_half(const HalfField& field, const Matrix& boundary,
                                const TimeGrid& grid, OdeDirection dir,
                                const OdeOptions& opt = {}) {
  const int N = grid.steps();
  const double h = grid.dt();
  const bool square = boundary.rows() == boundary.cols();
  std::vector<Matrix> out(N + 1);
  double asym = 0.0;

  auto eval = [&](int hi, const Matrix& m, double t_report) {
    Matrix f = field(hi, m);
    if (f.rows() != boundary.rows() || f.cols() != boundary.cols())
      throw InputError("ode field returned wrong shape in " + opt.equation);
    if (detail::diverged(f)) throw DivergenceError(opt.equation, t_report);
    return f;
  };

  const int start = dir == OdeDirection::Forward ? 0 : N;
  const double sign = dir == OdeDirection::Forward ? 1.0 : -1.0;
  out[start] = boundary;
  Matrix m = boundary;
  for (int s = 0; s < N; ++s) {
    const int i0 = dir == OdeDirection::Forward ? s : N - s;
    const int i1 = dir == OdeDirection::Forward ? s + 1 : N - s - 1;
    const int h0 = 2 * i0, hm = i0 + i1, h1 = 2 * i1;
    const double t1 = grid[i1];
    Matrix k1 = sign * eval(h0, m, t1);
    Matrix k2 = sign * eval(hm, m + 0.5 * h * k1, t1);
    Matrix k3 = sign * eval(hm, m + 0.5 * h * k2, t1);
    Matrix k4 = sign * eval(h1, m + h * k3, t1);
    m += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (detail::diverged(m)) throw DivergenceError(opt.equation, t1);
    if (square) {
      asym = std::max(asym, (m - m.transpose()).norm() / std::max(1.0, m.norm()));
      if (opt.symmetrize) m = 0.5 * (m + m.transpose()).eval();
    }
    out[i1] = m;
  }
  return {CoefficientPath(grid, std::move(out)), asym};
}

inline CoefficientPath integrate_matrix_ode(const TimeField& field, const Matrix& boundary,
                                            const TimeGrid& grid, OdeDirection dir) {
  HalfField hf = [&](int h, const Matrix& m) { return field(grid.half_time(h), m); };
  return integrate_half(hf, boundary, grid, dir).path;
}

inline Matrix matrix_exponential(const Matrix& m) {
  if (m.rows() != m.cols()) throw InputError("matrix_exponential: matrix not square");
  if (!m.allFinite()) throw InputError("matrix_exponential: non-finite entries");
  return m.exp();
}

struct SolvabilityReport {
  TimeGrid grid;
  std::vector<double> determinants;
  double min_determinant = 1.0;
  double min_time = 0.0;
  bool satisfied = true;
};

// det of the lower-right m x m block of each propagator.
inline SolvabilityReport scan_propagators(const std::vector<Matrix>& phi, const TimeGrid& grid) {
  SolvabilityReport r{grid, {}, std::numeric_limits<double>::infinity(), 0.0, true};
  r.determinants.reserve(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const Eigen::Index m = phi[i].rows() / 2;
    const double det = phi[i].bottomRightCorner(m, m).determinant();
    r.determinants.push_back(det);
    if (det < r.min_determinant || !std::isfinite(det)) {
      r.min_determinant = det;
      r.min_time = grid[i];
    }
  }
  r.satisfied = std::isfinite(r.min_determinant) && r.min_determinant > 0.0;
  return r;
}

inline SolvabilityReport solvability_scan(const Matrix& block, const TimeGrid& grid) {
  if (block.rows() != block.cols() || block.rows() % 2 != 0)
    throw InputError("solvability_scan: block matrix must be square of even size");
  std::vector<Matrix> phi;
  phi.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) phi.push_back(matrix_exponential(block * grid[i]));
  return scan_propagators(phi, grid);
}

enum class Anchor { Initial, Terminal };

// Time-ordered propagator of dPhi/dt = Phi B(t) (Anchor::Initial, Phi(0) = I) or of
// dPhi/dtau = Phi B(T - tau) with tau = T - t (Anchor::Terminal, Phi(T) = I).
// Fourth-order Magnus step per interval from endpoint and midpoint samples.
inline std::vector<Matrix> ordered_propagator(const std::function<Matrix(int h)>& generator,
                                              const TimeGrid& grid, Anchor anchor) {
  const int N = grid.steps();
  const double h = grid.dt();
  std::vector<Matrix> phi(N + 1);
  auto omega = [&](const Matrix& b0, const Matrix& bm, const Matrix& b1) {
    return ((h / 6.0) * (b0 + 4.0 * bm + b1) + (h * h / 12.0) * (b0 * b1 - b1 * b0)).eval();
  };
  const Eigen::Index dim = generator(0).rows();
  if (anchor == Anchor::Initial) {
    phi[0] = Matrix::Identity(dim, dim);
    for (int i = 0; i < N; ++i)
      phi[i + 1] = phi[i] * matrix_exponential(omega(generator(2 * i), generator(2 * i + 1),
                                                     generator(2 * i + 2)));
  } else {
    phi[N] = Matrix::Identity(dim, dim);
    for (int i = N - 1; i >= 0; --i)
      phi[i] = phi[i + 1] * matrix_exponential(omega(generator(2 * i + 2), generator(2 * i + 1),
                                                     generator(2 * i)));
  }
  return phi;
}

// Inverse guarded by a reciprocal-condition estimate.
inline Matrix guarded_inverse(const Matrix& m, const std::string& factor,
                              const std::string& equation, double t, double cond_limit = 1e12) {
  Eigen::PartialPivLU<Matrix> lu(m);
  const double rc = lu.rcond();
  if (!(rc > 1.0 / cond_limit)) throw SingularityError(factor, equation, t);
  return lu.inverse();
}

}  // namespace bsg
