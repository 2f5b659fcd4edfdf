#pragma once

#include <cstdint>
#include <vector>

#include "bsg/follower.hpp"

namespace bsg {

// Derived: gamma~ = C1^ X + D1^T Y + (S1^ - Pi2) Z, read off the X diffusion.
// Display: the printed expansion in terms of (varphi~, phi~, eta~).
enum class GammaForm { Derived, Display };

struct LeaderOptions {
  GammaForm gamma = GammaForm::Derived;
  double cond_limit = 1e12;
};

// K and L of -dphi~ = [K phi~ - L eta~] dt - eta~ dW at half-grid index h.
inline void tilde_phi_coefficients(const StackedSystem& sys, const CoefficientPath& R2,
                                   const RiccatiPath& pi1, int h, Matrix& K, Matrix& L,
                                   double cond_limit = 1e12) {
  const HatMatrices& s = sys.half(h);
  const Eigen::Index m = 2 * sys.n();
  const Matrix P = pi1.path.half(h, true);
  const Matrix R2inv = R2.half(h, false).inverse();
  const Matrix Li = guarded_inverse(Matrix::Identity(m, m) + P * s.S1, "(I + Pi1 S1^)", "phi~",
                                    sys.grid().half_time(h), cond_limit);
  const Matrix G = P * s.D1 - s.C1.transpose();
  K = s.A1 - P * s.F1 + (P * s.B1 - s.B2) * R2inv * s.B1.transpose() + G * Li * P * s.D1.transpose();
  L = G * Li;
}

// phi~(T) = -xi^.
inline AffineBSDESolution solve_tilde_phi(const StackedSystem& sys, const CoefficientPath& R2,
                                          const RiccatiPath& pi1, double cond_limit = 1e12) {
  const Eigen::Index m = 2 * sys.n();
  auto parts = [&](int h, Matrix& K, Matrix& L) {
    tilde_phi_coefficients(sys, R2, pi1, h, K, L, cond_limit);
  };
  auto K = [&](int h) -> Matrix {
    Matrix k, l;
    parts(h, k, l);
    return k;
  };
  auto L = [&](int h) -> Matrix {
    Matrix k, l;
    parts(h, k, l);
    return -l;
  };
  auto zero = [&](int) -> Vector { return Vector::Zero(m); };
  return solve_affine_bsde(sys.grid(), K, L, zero, zero, sys.xih().a, sys.xih().b, "phi~");
}

// Column i of every block is node i. X = (phibar, q), Y = (p, ybar), Z = (k, zbar).
struct LeaderPath {
  std::uint64_t index = 0;
  std::vector<double> W, dW;
  Matrix psi, X, Y, Z, u1, u1_alt, u2;
};

struct LeaderPathStats {
  double J1 = 0.0, J2 = 0.0;
  double terminal_error = 0.0;
  double initial_coupling = 0.0;
  double decoupling_gap = 0.0;  // |X - Pi2 Y - varphi~|
  double u1_gap = 0.0;
  double stationarity = 0.0;
  double z_alt_gap = 0.0;       // Z against (Pi2 - S1^)^-1 (C1^ X + D1^T Y - gamma~), where defined
  double bsde_cum = 0.0;        // accumulated residual of the Y equation
  double bsde_cum_p = 0.0;      // first block
  double bsde_cum_y = 0.0;      // second block
  double bsde_cum_ybar = 0.0;   // ybar against the follower's closed-loop equation
  double bsde_sq = 0.0;
};

class LeaderModel {
 public:
  LeaderModel(const LQGameSpec& s, const RiccatiPath& p1, const RiccatiPath& p2,
              const StackedSystem& sys, const RiccatiPath& pi1, const RiccatiPath& pi2,
              LeaderOptions o = {})
      : spec_(s), p1_(p1), p2_(p2), pi1_(pi1), pi2_(pi2), opt_(o) {
    check_structure(s);
    tphi_ = solve_tilde_phi(sys, s.R2, pi1, o.cond_limit);
    G2h_ = sys.G2h();
    xih_ = sys.xih();
    const Eigen::Index n = s.dims.n, m = 2 * n;
    const Matrix I = Matrix::Identity(m, m);
    const Matrix In = Matrix::Identity(n, n);
    nodes_.resize(s.grid.size());
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
      const double t = s.grid[i];
      const HatMatrices& h = sys.node(i);
      const Matrix &P1 = pi1[i], &P2 = pi2[i];
      const Matrix R2inv = s.R2[i].inverse();
      const Matrix R1inv = s.R1[i].inverse();
      const Matrix Li = guarded_inverse(I + P1 * h.S1, "(I + Pi1 S1^)", "varphi~", t, o.cond_limit);
      const Matrix J21 = guarded_inverse(I + P2 * P1, "(I + Pi2 Pi1)", "X", t, o.cond_limit);
      const Matrix J12 = guarded_inverse(I + P1 * P2, "(I + Pi1 Pi2)", "Y", t, o.cond_limit);
      Node& nd = nodes_[i];
      nd.Xpsi = J21;
      nd.Xphi = -J21 * P2;
      nd.Ypsi = -J12 * P1;
      nd.Yphi = -J12;
      const Matrix ZX = -Li * P1 * h.C1, ZY = -Li * P1 * h.D1.transpose();
      nd.Zpsi = ZX * nd.Xpsi + ZY * nd.Ypsi;
      nd.Zphi = ZX * nd.Xphi + ZY * nd.Yphi;
      nd.Zeta = -Li;
      const Matrix G = h.B1 + P2 * h.B2;
      const Matrix DC = h.D1 + P2 * h.C1.transpose();
      nd.Dpsi = h.A1.transpose() + P2 * h.F2 - G * R2inv * h.B2.transpose() - DC * Li * P1 * h.C1;
      nd.Deta = -DC * Li;
      if (o.gamma == GammaForm::Derived) {
        const Matrix GZ = h.S1 - P2;
        nd.Gpsi = h.C1 * nd.Xpsi + h.D1.transpose() * nd.Ypsi + GZ * nd.Zpsi;
        nd.Gphi = h.C1 * nd.Xphi + h.D1.transpose() * nd.Yphi + GZ * nd.Zphi;
        nd.Geta = GZ * nd.Zeta;
      } else {
        const Matrix PS = P2 - h.S1;
        const Matrix Dt = h.D1.transpose();
        nd.Gpsi = -(Dt * J12 * P1 + PS * Li * P1 * Dt * J21 * P1 - h.C1 * J21 -
                    PS * Li * P1 * h.C1 * J21);
        nd.Gphi = -(Dt * J12 + PS * Li * P1 * Dt * J21 + h.C1 * J21 * P2 +
                    PS * Li * P1 * h.C1 * J21 * P2);
        nd.Geta = PS * Li;
      }
      nd.UY = -R2inv * G.transpose();
      nd.Upsi = -R2inv * h.B2.transpose();
      const Matrix K1 = -R1inv * s.B1[i].transpose();
      Matrix sel0P2 = Matrix::Zero(n, m), selI0 = Matrix::Zero(n, m);
      sel0P2.rightCols(n) = p2[i];
      selI0.leftCols(n) = In;
      nd.V1Y = K1 * (sel0P2 + selI0 * P2);
      nd.V1psi = K1 * selI0;
      nd.K1 = K1;
      nd.DY = h.A1 + h.F2 * P2 - h.B2 * R2inv * G.transpose();
      nd.DZ = h.C1.transpose();
      nd.Dpsi_Y = h.F2 - h.B2 * R2inv * h.B2.transpose();
      nd.B1h = h.B1;
      nd.B2h = h.B2;
      nd.C1 = h.C1;
      nd.D1t = h.D1.transpose();
      nd.S1h = h.S1;
      nd.P2 = P2;
      const Matrix PS = P2 - h.S1;
      Eigen::PartialPivLU<Matrix> lu(PS);
      nd.z_alt_ok = PS.size() > 0 && std::isfinite(lu.rcond()) && lu.rcond() > 1e-8;
      if (nd.z_alt_ok) nd.PSinv = lu.inverse();
      nd.Abar = s.A[i] - s.B1[i] * R1inv * s.B1[i].transpose() * p2[i];
      nd.E = s.B1[i] * R1inv * s.B1[i].transpose();
    }
  }

  const LQGameSpec& spec() const { return spec_; }
  const RiccatiPath& p1() const { return p1_; }
  const RiccatiPath& p2() const { return p2_; }
  const RiccatiPath& pi1() const { return pi1_; }
  const RiccatiPath& pi2() const { return pi2_; }
  const AffineBSDESolution& tilde_phi() const { return tphi_; }
  const LeaderOptions& options() const { return opt_; }

  // Coefficients of -dY = [DY Y + DZ Z + Dpsi_Y varphi~] dt - Z dW at node i.
  const Matrix& y_drift(std::size_t i) const { return nodes_[i].DY; }
  const Matrix& y_z_coeff(std::size_t i) const { return nodes_[i].DZ; }
  const Matrix& y_psi_coeff(std::size_t i) const { return nodes_[i].Dpsi_Y; }

  // Euler-Maruyama for varphi~, then X, Y, Z and both controls at every node.
  void simulate(const MonteCarloConfig& mc, std::uint64_t path, LeaderPath& out) const {
    out.index = path;
    path_noise(mc, path, spec_.grid, out.dW, out.W);
    integrate(out);
  }

  // Same scheme driven by given Brownian increments (one per step).
  void simulate_increments(const std::vector<double>& dW, LeaderPath& out) const {
    if (dW.size() != static_cast<std::size_t>(spec_.grid.steps()))
      throw InputError("simulate_increments: increment count does not match the grid");
    out.dW = dW;
    out.W.assign(dW.size() + 1, 0.0);
    for (std::size_t i = 0; i < dW.size(); ++i) out.W[i + 1] = out.W[i] + dW[i];
    integrate(out);
  }

  void integrate(LeaderPath& out) const {
    const TimeGrid& g = spec_.grid;
    const int N = g.steps();
    const Eigen::Index m = 2 * spec_.dims.n, k = spec_.dims.k;
    out.psi.resize(m, N + 1);
    out.X.resize(m, N + 1);
    out.Y.resize(m, N + 1);
    out.Z.resize(m, N + 1);
    out.u1.resize(k, N + 1);
    out.u1_alt.resize(k, N + 1);
    out.u2.resize(k, N + 1);
    Vector phi(m), drift(m), gam(m), tmp(spec_.dims.n);
    out.psi.col(0).setZero();
    for (int i = 0; i <= N; ++i) {
      const Node& nd = nodes_[i];
      const auto eta = tphi_.beta[i].col(0);
      phi = tphi_.alpha[i].col(0) + eta * out.W[i];
      const auto psi = out.psi.col(i);
      out.X.col(i).noalias() = nd.Xpsi * psi;
      out.X.col(i).noalias() += nd.Xphi * phi;
      out.Y.col(i).noalias() = nd.Ypsi * psi;
      out.Y.col(i).noalias() += nd.Yphi * phi;
      out.Z.col(i).noalias() = nd.Zpsi * psi;
      out.Z.col(i).noalias() += nd.Zphi * phi;
      out.Z.col(i).noalias() += nd.Zeta * eta;
      out.u2.col(i).noalias() = nd.UY * out.Y.col(i);
      out.u2.col(i).noalias() += nd.Upsi * psi;
      out.u1.col(i).noalias() = nd.V1Y * out.Y.col(i);
      out.u1.col(i).noalias() += nd.V1psi * psi;
      const Eigen::Index n = spec_.dims.n;
      tmp = out.X.col(i).head(n);
      tmp.noalias() += p2_[i] * out.Y.col(i).tail(n);
      out.u1_alt.col(i).noalias() = nd.K1 * tmp;
      if (i == N) break;
      drift.noalias() = nd.Dpsi * psi;
      drift.noalias() += nd.Deta * eta;
      gam.noalias() = nd.Gpsi * psi;
      gam.noalias() += nd.Gphi * phi;
      gam.noalias() += nd.Geta * eta;
      out.psi.col(i + 1) = psi + g.dt() * drift + out.dW[i] * gam;
    }
  }

  // Diffusion of varphi~ at node i of a simulated path.
  Vector gamma(const LeaderPath& p, int i) const {
    const Node& nd = nodes_[i];
    const auto eta = tphi_.beta[i].col(0);
    const Vector phi = tphi_.alpha[i].col(0) + eta * p.W[i];
    return nd.Gpsi * p.psi.col(i) + nd.Gphi * phi + nd.Geta * eta;
  }

  // Diffusion of X at node i: C1^ X + D1^T Y + S1^ Z.
  Vector x_diffusion(const LeaderPath& p, int i) const {
    const Node& nd = nodes_[i];
    return nd.C1 * p.X.col(i) + nd.D1t * p.Y.col(i) + nd.S1h * p.Z.col(i);
  }

  LeaderPathStats stats(const LeaderPath& p, const QuadraticCost& c1, const QuadraticCost& c2) const {
    const TimeGrid& g = spec_.grid;
    const int N = g.steps();
    const Eigen::Index n = spec_.dims.n, m = 2 * n;
    LeaderPathStats st;
    const Matrix ybar = p.Y.bottomRows(n), zbar = p.Z.bottomRows(n);
    st.J1 = c1(g, ybar, zbar, p.u1);
    st.J2 = c2(g, ybar, zbar, p.u2);
    st.terminal_error = (p.Y.col(N) - xih_.value(p.W[N])).cwiseAbs().maxCoeff();
    st.initial_coupling = (p.X.col(0) - G2h_ * p.Y.col(0)).cwiseAbs().maxCoeff();
    Vector r(m), acc = Vector::Zero(m), ry(n), accy = Vector::Zero(n);
    for (int i = 0; i <= N; ++i) {
      const Node& nd = nodes_[i];
      st.decoupling_gap = std::max(
          st.decoupling_gap, (p.X.col(i) - nd.P2 * p.Y.col(i) - p.psi.col(i)).cwiseAbs().maxCoeff());
      st.u1_gap = std::max(st.u1_gap, (p.u1.col(i) - p.u1_alt.col(i)).cwiseAbs().maxCoeff());
      st.stationarity = std::max(
          st.stationarity,
          (nd.B1h.transpose() * p.Y.col(i) + nd.B2h.transpose() * p.X.col(i) + spec_.R2[i] * p.u2.col(i))
              .cwiseAbs()
              .maxCoeff());
      if (nd.z_alt_ok) {
        const Vector za = nd.PSinv * (nd.C1 * p.X.col(i) + nd.D1t * p.Y.col(i) - gamma(p, i));
        st.z_alt_gap = std::max(st.z_alt_gap, (za - p.Z.col(i)).cwiseAbs().maxCoeff());
      }
      if (i == N) break;
      r = p.Y.col(i + 1) - p.Y.col(i) - p.dW[i] * p.Z.col(i);
      r.noalias() += g.dt() * (nd.DY * p.Y.col(i));
      r.noalias() += g.dt() * (nd.DZ * p.Z.col(i));
      r.noalias() += g.dt() * (nd.Dpsi_Y * p.psi.col(i));
      st.bsde_sq += r.squaredNorm();
      acc += r;
      st.bsde_cum = std::max(st.bsde_cum, acc.norm());
      st.bsde_cum_p = std::max(st.bsde_cum_p, acc.head(n).norm());
      st.bsde_cum_y = std::max(st.bsde_cum_y, acc.tail(n).norm());
      // ybar in the follower's own closed-loop form with varphi = phibar
      ry = ybar.col(i + 1) - ybar.col(i) - p.dW[i] * zbar.col(i);
      ry.noalias() += g.dt() * (nd.Abar * ybar.col(i));
      ry.noalias() -= g.dt() * (nd.E * p.X.col(i).head(n));
      ry.noalias() += g.dt() * (spec_.B2[i] * p.u2.col(i));
      ry.noalias() += g.dt() * (spec_.C[i] * zbar.col(i));
      accy += ry;
      st.bsde_cum_ybar = std::max(st.bsde_cum_ybar, accy.norm());
    }
    return st;
  }

 private:
  struct Node {
    Matrix Xpsi, Xphi, Ypsi, Yphi, Zpsi, Zphi, Zeta, Dpsi, Deta, Gpsi, Gphi, Geta;
    Matrix UY, Upsi, V1Y, V1psi, K1, DY, DZ, Dpsi_Y, B1h, B2h, C1, D1t, S1h, P2, PSinv, Abar, E;
    bool z_alt_ok = false;
  };
  LQGameSpec spec_;
  RiccatiPath p1_, p2_, pi1_, pi2_;
  LeaderOptions opt_;
  AffineBSDESolution tphi_;
  Matrix G2h_;
  TerminalCondition xih_;
  std::vector<Node> nodes_;
};

struct LeaderEnsemble {
  TimeGrid grid;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  std::vector<LeaderPath> kept;
  MeanEstimate J1, J2;
  double terminal_error_max = 0.0;
  double initial_coupling_max = 0.0;
  double decoupling_gap_max = 0.0;
  double u1_gap_max = 0.0;
  double stationarity_residual = 0.0;
  double z_alt_gap_max = 0.0;
  double bsde_residual_rms = 0.0;      // RMS over paths of the accumulated Y residual
  double bsde_residual_rms_p = 0.0;
  double bsde_residual_rms_y = 0.0;
  double bsde_residual_rms_ybar = 0.0;
  double bsde_residual_max = 0.0;
  double bsde_step_rms = 0.0;
};

inline LeaderEnsemble run_leader(const LeaderModel& m, const MonteCarloConfig& mc) {
  const std::size_t P = mc.paths;
  const QuadraticCost c1 = follower_cost_weights(m.spec()), c2 = leader_cost_weights(m.spec());
  std::vector<LeaderPathStats> st(P);
  LeaderEnsemble e;
  e.grid = m.spec().grid;
  e.seed = mc.seed;
  e.paths = P;
  e.kept.resize(std::min(P, mc.keep_paths));
  parallel_for(
      P,
      [&](std::size_t p) {
        LeaderPath path;
        m.simulate(mc, p, path);
        st[p] = m.stats(path, c1, c2);
        if (p < e.kept.size()) e.kept[p] = std::move(path);
      },
      mc.threads);
  std::vector<double> j1(P), j2(P), cum(P), cp(P), cy(P), cyb(P), sq(P);
  for (std::size_t p = 0; p < P; ++p) {
    j1[p] = st[p].J1;
    j2[p] = st[p].J2;
    cum[p] = st[p].bsde_cum * st[p].bsde_cum;
    cp[p] = st[p].bsde_cum_p * st[p].bsde_cum_p;
    cy[p] = st[p].bsde_cum_y * st[p].bsde_cum_y;
    cyb[p] = st[p].bsde_cum_ybar * st[p].bsde_cum_ybar;
    sq[p] = st[p].bsde_sq;
    e.terminal_error_max = std::max(e.terminal_error_max, st[p].terminal_error);
    e.initial_coupling_max = std::max(e.initial_coupling_max, st[p].initial_coupling);
    e.decoupling_gap_max = std::max(e.decoupling_gap_max, st[p].decoupling_gap);
    e.u1_gap_max = std::max(e.u1_gap_max, st[p].u1_gap);
    e.stationarity_residual = std::max(e.stationarity_residual, st[p].stationarity);
    e.z_alt_gap_max = std::max(e.z_alt_gap_max, st[p].z_alt_gap);
    e.bsde_residual_max = std::max(e.bsde_residual_max, st[p].bsde_cum);
  }
  const double Pd = static_cast<double>(P);
  e.J1 = mean_and_stderr(j1);
  e.J2 = mean_and_stderr(j2);
  e.bsde_residual_rms = std::sqrt(pairwise_sum(cum) / Pd);
  e.bsde_residual_rms_p = std::sqrt(pairwise_sum(cp) / Pd);
  e.bsde_residual_rms_y = std::sqrt(pairwise_sum(cy) / Pd);
  e.bsde_residual_rms_ybar = std::sqrt(pairwise_sum(cyb) / Pd);
  e.bsde_step_rms = std::sqrt(pairwise_sum(sq) / (Pd * e.grid.steps()));
  return e;
}

// Everything the leader needs, solved from a scenario.
struct LeaderSolution {
  RiccatiPath p1, p2;
  StackedSystem sys;
  RiccatiPath pi1, pi2;
};

inline LeaderSolution solve_leader_riccati(const LQGameSpec& s, const RiccatiOptions& o = {}) {
  auto p1 = solve_p1(s, o);
  auto p2 = solve_p2(s, p1, o);
  StackedSystem sys = build_stacked_system(s, p1, p2, o);
  auto pi1 = solve_pi1(sys, s.R2, o);
  auto pi2 = solve_pi2(sys, s.R2, pi1, o);
  return {std::move(p1), std::move(p2), std::move(sys), std::move(pi1), std::move(pi2)};
}

// Leader cost when the follower plays its feedback against a given open-loop u2.
inline MeanEstimate leader_cost_under(const LQGameSpec& s, const RiccatiPath& p1,
                                      const RiccatiPath& p2, const AffineControl& u2,
                                      const MonteCarloConfig& mc) {
  FollowerModel fm(s, p1, p2, u2);
  const QuadraticCost c2 = leader_cost_weights(s);
  std::vector<double> j(mc.paths);
  parallel_for(
      mc.paths,
      [&](std::size_t p) {
        FollowerPath path;
        fm.simulate(mc, p, path);
        j[p] = c2(s.grid, path.y, path.z, path.u2);
      },
      mc.threads);
  return mean_and_stderr(j);
}

// Perturbs u2 by eps v. The follower's response is linear in (xi, u2), so the perturbed
// state is the base state plus eps times the follower pipeline run with xi = 0, u2 = v
// on the same Brownian paths.
inline DirectionalDerivatives check_leader_stationarity(const LeaderModel& m, const AffineControl& v,
                                                        const std::vector<double>& eps,
                                                        const MonteCarloConfig& mc) {
  const LQGameSpec& s = m.spec();
  const Eigen::Index n = s.dims.n;
  const QuadraticCost cost = leader_cost_weights(s);
  LQGameSpec s0 = s;
  s0.xi.a.setZero();
  s0.xi.b.setZero();
  FollowerModel resp(s0, m.p1(), m.p2(), v);
  const std::size_t P = mc.paths;
  std::vector<double> first(P), second(P), alg(P), mart(P);
  parallel_for(
      P,
      [&](std::size_t p) {
        LeaderPath lp;
        FollowerPath dp;
        m.simulate(mc, p, lp);
        resp.simulate(mc, p, dp);
        const Matrix ybar = lp.Y.bottomRows(n), zbar = lp.Z.bottomRows(n);
        first[p] = cost.bilinear(s.grid, ybar, zbar, lp.u2, dp.y, dp.z, dp.u2);
        second[p] = cost.bilinear(s.grid, dp.y, dp.z, dp.u2, dp.y, dp.z, dp.u2);
        double a = 0.0;
        for (int i = 0; i <= s.grid.steps(); ++i) {
          const Matrix& B2 = s.B2[i];
          a = std::max(a, (B2.transpose() * (m.p2()[i] * lp.Y.col(i).head(n) + lp.X.col(i).tail(n)) +
                           s.R2[i] * lp.u2.col(i))
                              .cwiseAbs()
                              .maxCoeff());
        }
        alg[p] = a;
        // Zero-mean stochastic integral from the Ito products <p, d varphi> and <q, d ybar>.
        double mg = 0.0;
        for (int i = 0; i < s.grid.steps(); ++i) {
          const Vector sx = m.x_diffusion(lp, i);
          const Vector dsig = s.C[i].transpose() * dp.x.col(i) - (m.p2()[i] - s.S1[i]) * dp.z.col(i);
          mg += (sx.tail(n).dot(dp.y.col(i)) + lp.X.col(i).tail(n).dot(dp.z.col(i)) -
                 lp.Z.col(i).head(n).dot(dp.varphi.col(i)) - lp.Y.col(i).head(n).dot(dsig)) *
                lp.dW[i];
        }
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
