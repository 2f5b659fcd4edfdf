#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bsg/core_model.hpp"
#include "bsg/linalg_ode.hpp"
#include "bsg/parallel.hpp"
#include "bsg/riccati.hpp"
#include "bsg/rng.hpp"

namespace bsg {

struct MonteCarloConfig {
  std::size_t paths = 10000;
  std::uint64_t seed = 0;
  std::size_t keep_paths = 0;  // trajectories retained for export
  bool antithetic = false;     // paths 2j and 2j+1 use W and -W
  unsigned threads = 0;
};

inline void path_noise(const MonteCarloConfig& mc, std::uint64_t path, const TimeGrid& g,
                       std::vector<double>& dW, std::vector<double>& W) {
  if (!mc.antithetic) {
    brownian_path(mc.seed, path, g.steps(), g.dt(), dW, W);
    return;
  }
  brownian_path(mc.seed, path / 2, g.steps(), g.dt(), dW, W);
  if (path % 2 == 1) {
    for (auto& v : dW) v = -v;
    for (auto& v : W) v = -v;
  }
}

// phi(t) = alpha(t) + beta(t) W(t), eta(t) = beta(t)  (d = 1)
struct AffineBSDESolution {
  CoefficientPath alpha;  // m x 1
  CoefficientPath beta;   // m x 1

  Vector phi(std::size_t i, double w) const { return alpha[i].col(0) + beta[i].col(0) * w; }
  Vector eta(std::size_t i) const { return beta[i].col(0); }
};

// Linear BSDE  -dphi = [K phi + L eta + g0 + g1 W] dt - eta dW,  phi(T) = -(a + b W(T)),
// reduced by phi = alpha + beta W to  -alpha' = K alpha + L beta + g0,  -beta' = K beta + g1.
inline AffineBSDESolution solve_affine_bsde(const TimeGrid& grid,
                                            const std::function<Matrix(int)>& K,
                                            const std::function<Matrix(int)>& L,
                                            const std::function<Vector(int)>& g0,
                                            const std::function<Vector(int)>& g1, const Vector& a,
                                            const Matrix& b, const std::string& equation) {
  const Eigen::Index m = a.size();
  HalfField f = [&](int h, const Matrix& v) -> Matrix {
    const Matrix k = K(h);
    Matrix out(2 * m, 1);
    out.topRows(m) = -(k * v.topRows(m) + L(h) * v.bottomRows(m) + g0(h));
    out.bottomRows(m) = -(k * v.bottomRows(m) + g1(h));
    return out;
  };
  Matrix terminal(2 * m, 1);
  terminal.topRows(m) = -a;
  terminal.bottomRows(m) = -b.col(0);
  auto r = integrate_half(f, terminal, grid, OdeDirection::Backward, {false, equation});
  std::vector<Matrix> al(grid.size()), be(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    al[i] = r.path[i].topRows(m);
    be[i] = r.path[i].bottomRows(m);
  }
  return {CoefficientPath(grid, std::move(al)), CoefficientPath(grid, std::move(be))};
}

inline AffineBSDESolution solve_phi_eta(const LQGameSpec& s, const RiccatiPath& p1,
                                        const AffineControl& u2, double cond_limit = 1e12) {
  const Eigen::Index n = s.dims.n;
  const Matrix I = Matrix::Identity(n, n);
  auto K = [&](int h) -> Matrix {
    return s.A.half(h, false) - p1.path.half(h, true) * s.Q1.half(h, false);
  };
  auto L = [&](int h) -> Matrix {
    const Matrix k = guarded_inverse(p1.path.half(h, true) * s.S1.half(h, false) + I,
                                     "(P1 S1 + I)", "phi", s.grid.half_time(h), cond_limit);
    return s.C.half(h, false) * k;
  };
  auto g0 = [&](int h) -> Vector { return -s.B2.half(h, false) * u2.u_const.half(h, false).col(0); };
  auto g1 = [&](int h) -> Vector { return -s.B2.half(h, false) * u2.u_lin.half(h, false).col(0); };
  return solve_affine_bsde(s.grid, K, L, g0, g1, s.xi.a, s.xi.b, "phi");
}

// Trajectories of one path; column i is node i.
struct FollowerPath {
  std::uint64_t index = 0;
  std::vector<double> W, dW;
  Matrix varphi, x, y, z, u1, u1_adjoint, u2;
};

struct FollowerPathStats {
  double J1 = 0.0;
  double terminal_error = 0.0;
  double initial_coupling = 0.0;
  double feedback_gap = 0.0;
  double stationarity = 0.0;
  double bsde_sq = 0.0;   // sum of squared step residuals
  double bsde_max = 0.0;  // largest step residual
  double bsde_cum = 0.0;  // largest accumulated residual over the path
};

// Trapezoid-in-time quadratic cost of one path.
struct QuadraticCost {
  std::vector<Matrix> Q, R, S;
  Matrix G;

  double operator()(const TimeGrid& g, const Matrix& y, const Matrix& z, const Matrix& u) const {
    const int N = g.steps();
    double acc = 0.0;
    for (int i = 0; i <= N; ++i) {
      const double w = (i == 0 || i == N) ? 0.5 * g.dt() : g.dt();
      acc += w * (y.col(i).dot(Q[i] * y.col(i)) + u.col(i).dot(R[i] * u.col(i)) +
                  z.col(i).dot(S[i] * z.col(i)));
    }
    return 0.5 * (acc + y.col(0).dot(G * y.col(0)));
  }

  // Symmetric form B with cost = B(v, v) / 2, so J(v + e d) - J(v) = e B(v, d) + e^2 B(d, d) / 2.
  double bilinear(const TimeGrid& g, const Matrix& y, const Matrix& z, const Matrix& u,
                  const Matrix& dy, const Matrix& dz, const Matrix& du) const {
    const int N = g.steps();
    double acc = 0.0;
    for (int i = 0; i <= N; ++i) {
      const double w = (i == 0 || i == N) ? 0.5 * g.dt() : g.dt();
      acc += w * (y.col(i).dot(Q[i] * dy.col(i)) + u.col(i).dot(R[i] * du.col(i)) +
                  z.col(i).dot(S[i] * dz.col(i)));
    }
    return acc + y.col(0).dot(G * dy.col(0));
  }
};

inline QuadraticCost follower_cost_weights(const LQGameSpec& s) {
  return {s.Q1.values(), s.R1.values(), s.S1.values(), s.G1};
}
inline QuadraticCost leader_cost_weights(const LQGameSpec& s) {
  return {s.Q2.values(), s.R2.values(), s.S2.values(), s.G2};
}

class FollowerModel {
 public:
  FollowerModel(const LQGameSpec& s, const RiccatiPath& p1, const RiccatiPath& p2,
                AffineControl u2, double cond_limit = 1e12)
      : spec_(s), p1_(p1), p2_(p2), u2_(std::move(u2)) {
    check_structure(s);
    phieta_ = solve_phi_eta(s, p1, u2_, cond_limit);
    const Eigen::Index n = s.dims.n;
    const Matrix I = Matrix::Identity(n, n);
    const std::size_t M = s.grid.size();
    nodes_.resize(M);
    for (std::size_t i = 0; i < M; ++i) {
      const double t = s.grid[i];
      const Matrix &P1 = p1[i], &P2 = p2[i], &C = s.C[i];
      const Matrix K = guarded_inverse(P1 * s.S1[i] + I, "(P1 S1 + I)", "varphi", t, cond_limit);
      const Matrix R1inv = s.R1[i].inverse();
      const Matrix E = s.B1[i] * R1inv * s.B1[i].transpose();
      const Matrix J = guarded_inverse(I + P2 * P1, "(I + P2 P1)", "x", t, cond_limit);
      Node& nd = nodes_[i];
      nd.Dv = s.A[i].transpose() - P2 * E - P2 * C * K * P1 * C.transpose();
      nd.Fu = P2 * s.B2[i];
      nd.Deta = -P2 * C * K;
      nd.Xv = J;
      nd.Xphi = -J * P2;
      nd.Zx = -K * P1 * C.transpose();
      nd.Zeta = -K;
      nd.Gx = C.transpose();
      nd.Gz = -(P2 - s.S1[i]);
      nd.Ux = -R1inv * s.B1[i].transpose();
      nd.Abar = s.A[i] - E * P2;
      nd.E = E;
    }
  }

  const LQGameSpec& spec() const { return spec_; }
  const RiccatiPath& p1() const { return p1_; }
  const RiccatiPath& p2() const { return p2_; }
  const AffineControl& u2() const { return u2_; }
  const AffineBSDESolution& phi_eta() const { return phieta_; }

  // Euler-Maruyama for varphi, then the decoupling relations at every node.
  void simulate(const MonteCarloConfig& mc, std::uint64_t path, FollowerPath& out) const {
    const TimeGrid& g = spec_.grid;
    const int N = g.steps();
    const Eigen::Index n = spec_.dims.n, k = spec_.dims.k;
    out.index = path;
    path_noise(mc, path, g, out.dW, out.W);
    out.varphi.resize(n, N + 1);
    out.x.resize(n, N + 1);
    out.y.resize(n, N + 1);
    out.z.resize(n, N + 1);
    out.u1.resize(k, N + 1);
    out.u1_adjoint.resize(k, N + 1);
    out.u2.resize(k, N + 1);
    Vector phi(n), tmp(n), diff(n), xy(n);
    out.varphi.col(0).setZero();
    for (int i = 0; i <= N; ++i) {
      const Node& nd = nodes_[i];
      const double w = out.W[i];
      const auto beta = phieta_.beta[i].col(0);
      phi = phieta_.alpha[i].col(0) + beta * w;
      out.u2.col(i) = u2_.u_const[i].col(0) + u2_.u_lin[i].col(0) * w;
      out.x.col(i).noalias() = nd.Xv * out.varphi.col(i);
      out.x.col(i).noalias() += nd.Xphi * phi;
      out.y.col(i).noalias() = -p1_[i] * out.x.col(i);
      out.y.col(i) -= phi;
      out.z.col(i).noalias() = nd.Zx * out.x.col(i);
      out.z.col(i).noalias() += nd.Zeta * beta;
      xy = out.varphi.col(i);
      xy.noalias() += p2_[i] * out.y.col(i);
      out.u1.col(i).noalias() = nd.Ux * xy;
      out.u1_adjoint.col(i).noalias() = nd.Ux * out.x.col(i);
      if (i == N) break;
      tmp.noalias() = nd.Dv * out.varphi.col(i);
      tmp.noalias() += nd.Fu * out.u2.col(i);
      tmp.noalias() += nd.Deta * beta;
      diff.noalias() = nd.Gx * out.x.col(i);
      diff.noalias() += nd.Gz * out.z.col(i);
      out.varphi.col(i + 1) = out.varphi.col(i) + g.dt() * tmp + out.dW[i] * diff;
    }
  }

  FollowerPathStats stats(const FollowerPath& p, const QuadraticCost& cost) const {
    const TimeGrid& g = spec_.grid;
    const int N = g.steps();
    FollowerPathStats st;
    st.J1 = cost(g, p.y, p.z, p.u1);
    st.terminal_error = (p.y.col(N) - spec_.xi.value(p.W[N])).cwiseAbs().maxCoeff();
    st.initial_coupling = (p.x.col(0) - spec_.G1 * p.y.col(0)).cwiseAbs().maxCoeff();
    Vector r(spec_.dims.n), acc = Vector::Zero(spec_.dims.n);
    for (int i = 0; i <= N; ++i) {
      st.feedback_gap = std::max(st.feedback_gap, (p.u1.col(i) - p.u1_adjoint.col(i)).cwiseAbs().maxCoeff());
      st.stationarity = std::max(
          st.stationarity,
          (spec_.B1[i].transpose() * p.x.col(i) + spec_.R1[i] * p.u1.col(i)).cwiseAbs().maxCoeff());
      if (i == N) break;
      const Node& nd = nodes_[i];
      r = p.y.col(i + 1) - p.y.col(i) - p.dW[i] * p.z.col(i);
      r.noalias() += g.dt() * (nd.Abar * p.y.col(i));
      r.noalias() -= g.dt() * (nd.E * p.varphi.col(i));
      r.noalias() += g.dt() * (spec_.B2[i] * p.u2.col(i));
      r.noalias() += g.dt() * (spec_.C[i] * p.z.col(i));
      const double v = r.squaredNorm();
      st.bsde_sq += v;
      st.bsde_max = std::max(st.bsde_max, std::sqrt(v));
      acc += r;
      st.bsde_cum = std::max(st.bsde_cum, acc.norm());
    }
    return st;
  }

 private:
  struct Node {
    Matrix Dv, Fu, Deta, Xv, Xphi, Zx, Zeta, Gx, Gz, Ux, Abar, E;
  };
  LQGameSpec spec_;
  RiccatiPath p1_, p2_;
  AffineControl u2_;
  AffineBSDESolution phieta_;
  std::vector<Node> nodes_;
};

struct FollowerEnsemble {
  TimeGrid grid;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  std::vector<FollowerPath> kept;
  MeanEstimate J1;
  double terminal_error_max = 0.0;
  double initial_coupling_max = 0.0;
  double feedback_gap_max = 0.0;
  double stationarity_residual = 0.0;
  double bsde_residual_rms = 0.0;   // RMS over paths of the accumulated residual
  double bsde_residual_max = 0.0;
  double bsde_step_rms = 0.0;       // RMS over paths and steps of single-step residuals
};

inline FollowerEnsemble run_follower(const FollowerModel& m, const MonteCarloConfig& mc) {
  const std::size_t P = mc.paths;
  const QuadraticCost cost = follower_cost_weights(m.spec());
  std::vector<FollowerPathStats> st(P);
  FollowerEnsemble e;
  e.grid = m.spec().grid;
  e.seed = mc.seed;
  e.paths = P;
  e.kept.resize(std::min(P, mc.keep_paths));
  parallel_for(
      P,
      [&](std::size_t p) {
        FollowerPath path;
        m.simulate(mc, p, path);
        st[p] = m.stats(path, cost);
        if (p < e.kept.size()) e.kept[p] = std::move(path);
      },
      mc.threads);
  std::vector<double> j(P), sq(P), cum(P);
  for (std::size_t p = 0; p < P; ++p) {
    j[p] = st[p].J1;
    sq[p] = st[p].bsde_sq;
    cum[p] = st[p].bsde_cum * st[p].bsde_cum;
    e.terminal_error_max = std::max(e.terminal_error_max, st[p].terminal_error);
    e.initial_coupling_max = std::max(e.initial_coupling_max, st[p].initial_coupling);
    e.feedback_gap_max = std::max(e.feedback_gap_max, st[p].feedback_gap);
    e.stationarity_residual = std::max(e.stationarity_residual, st[p].stationarity);
    e.bsde_residual_max = std::max(e.bsde_residual_max, st[p].bsde_max);
  }
  e.J1 = mean_and_stderr(j);
  e.bsde_residual_rms = std::sqrt(pairwise_sum(cum) / static_cast<double>(P));
  e.bsde_step_rms =
      std::sqrt(pairwise_sum(sq) / static_cast<double>(P * static_cast<std::size_t>(e.grid.steps())));
  return e;
}

// Response of the follower's state BSDE to a control perturbation v with the follower's
// control held fixed: -d dy = [A dy + B1 v + C dz] dt - dz dW, dy(T) = 0.
inline AffineBSDESolution state_response(const LQGameSpec& s, const AffineControl& v) {
  const Eigen::Index n = s.dims.n;
  auto K = [&](int h) -> Matrix { return s.A.half(h, false); };
  auto L = [&](int h) -> Matrix { return s.C.half(h, false); };
  auto g0 = [&](int h) -> Vector { return s.B1.half(h, false) * v.u_const.half(h, false).col(0); };
  auto g1 = [&](int h) -> Vector { return s.B1.half(h, false) * v.u_lin.half(h, false).col(0); };
  return solve_affine_bsde(s.grid, K, L, g0, g1, Vector::Zero(n), Matrix::Zero(n, 1), "dy");
}

// State BSDE under given open-loop controls: -dy = [A y + B1 u1 + B2 u2 + C z] dt - z dW,
// y(T) = xi. Returned with y = alpha + beta W, z = beta.
inline AffineBSDESolution open_loop_state(const LQGameSpec& s, const AffineControl& u1,
                                          const AffineControl& u2) {
  auto K = [&](int h) -> Matrix { return s.A.half(h, false); };
  auto L = [&](int h) -> Matrix { return s.C.half(h, false); };
  auto g0 = [&](int h) -> Vector {
    return s.B1.half(h, false) * u1.u_const.half(h, false).col(0) +
           s.B2.half(h, false) * u2.u_const.half(h, false).col(0);
  };
  auto g1 = [&](int h) -> Vector {
    return s.B1.half(h, false) * u1.u_lin.half(h, false).col(0) +
           s.B2.half(h, false) * u2.u_lin.half(h, false).col(0);
  };
  return solve_affine_bsde(s.grid, K, L, g0, g1, -s.xi.a, -s.xi.b, "y");
}

struct DirectionalDerivatives {
  std::vector<double> eps;
  std::vector<double> slope;         // mean [J(eps) - J(0)] / eps
  std::vector<double> slope_stderr;
  double extrapolated = 0.0;         // Richardson limit of the two smallest eps
  double algebraic_residual = 0.0;
  double raw_extrapolated = 0.0;     // same, without the martingale control variate
  double raw_stderr = 0.0;
};

inline double richardson(const std::vector<double>& eps, const std::vector<double>& d) {
  const std::size_t m = eps.size();
  if (m == 0) return 0.0;
  if (m == 1) return d[0];
  const double e1 = eps[m - 2], e2 = eps[m - 1];
  return (e1 * d[m - 1] - e2 * d[m - 2]) / (e1 - e2);
}

// Cost differences J(u + eps v) - J(u) per path. For a quadratic cost the difference is
// exactly eps * first variation + eps^2 / 2 * second variation, which is how it is
// evaluated to avoid cancellation.
inline DirectionalDerivatives finite_difference_slopes(const std::vector<double>& first,
                                                      const std::vector<double>& second,
                                                      const std::vector<double>& eps) {
  DirectionalDerivatives out;
  out.eps = eps;
  const std::size_t P = first.size();
  std::vector<double> diff(P);
  for (double e : eps) {
    for (std::size_t p = 0; p < P; ++p) diff[p] = (e * first[p] + 0.5 * e * e * second[p]) / e;
    const auto est = mean_and_stderr(diff);
    out.slope.push_back(est.mean);
    out.slope_stderr.push_back(est.std_error);
  }
  out.extrapolated = richardson(out.eps, out.slope);
  return out;
}

inline AffineControl control_from_functions(const TimeGrid& g, int /*k*/,
                                            const std::function<Vector(double)>& c,
                                            const std::function<Vector(double)>& lin) {
  return {CoefficientPath::generate(g, [&](double t) -> Matrix { return c(t); }),
          CoefficientPath::generate(g, [&](double t) -> Matrix { return lin(t); })};
}

inline Matrix sample_control(const AffineControl& v, const std::vector<double>& W) {
  Matrix out(v.u_const.rows(), W.size());
  for (std::size_t i = 0; i < W.size(); ++i) out.col(i) = v.value(i, W[i]);
  return out;
}

inline Matrix sample_affine(const AffineBSDESolution& s, const std::vector<double>& W) {
  Matrix out(s.alpha.rows(), W.size());
  for (std::size_t i = 0; i < W.size(); ++i) out.col(i) = s.phi(i, W[i]);
  return out;
}

inline Matrix sample_beta(const AffineBSDESolution& s) {
  Matrix out(s.beta.rows(), s.beta.size());
  for (std::size_t i = 0; i < s.beta.size(); ++i) out.col(i) = s.beta[i].col(0);
  return out;
}

inline DirectionalDerivatives check_follower_stationarity(const FollowerModel& m,
                                                          const AffineControl& v,
                                                          const std::vector<double>& eps,
                                                          const MonteCarloConfig& mc) {
  const LQGameSpec& s = m.spec();
  const QuadraticCost cost = follower_cost_weights(s);
  const AffineBSDESolution resp = state_response(s, v);
  const Matrix dz = sample_beta(resp);
  const std::size_t P = mc.paths;
  std::vector<double> first(P), second(P), alg(P), mart(P);
  parallel_for(
      P,
      [&](std::size_t p) {
        FollowerPath path;
        m.simulate(mc, p, path);
        const Matrix dy = sample_affine(resp, path.W);
        const Matrix& dzz = dz;
        const Matrix du = sample_control(v, path.W);
        first[p] = cost.bilinear(s.grid, path.y, path.z, path.u1, dy, dzz, du);
        second[p] = cost.bilinear(s.grid, dy, dzz, du, dy, dzz, du);
        double a = 0.0;
        for (std::size_t i = 0; i < s.grid.size(); ++i)
          a = std::max(a, (s.B1[i].transpose() * path.x.col(i) + s.R1[i] * path.u1.col(i))
                              .cwiseAbs()
                              .maxCoeff());
        alg[p] = a;
        // Ito product of the adjoint and the state response leaves a stochastic integral
        // int [(C^T x + S1 z) . dy + x . dz] dW in the first variation. Its discrete form has
        // zero mean, so adding it back only removes noise.
        double mg = 0.0;
        for (int i = 0; i < s.grid.steps(); ++i)
          mg += ((s.C[i].transpose() * path.x.col(i) + s.S1[i] * path.z.col(i)).dot(dy.col(i)) +
                 path.x.col(i).dot(dzz.col(i))) *
                path.dW[i];
        mart[p] = mg;
      },
      mc.threads);
  auto raw = finite_difference_slopes(first, second, eps);
  for (std::size_t p = 0; p < P; ++p) first[p] += mart[p];
  auto out = finite_difference_slopes(first, second, eps);
  out.algebraic_residual = max_of(alg);
  out.raw_extrapolated = raw.extrapolated;
  out.raw_stderr = raw.slope_stderr.empty() ? 0.0 : raw.slope_stderr.back();
  return out;
}

}  // namespace bsg
