#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "bsg/leader.hpp"

namespace bsg {

// Bond with rate r, one stock with drift mu and volatility sigma, two consumers.
struct MarketParams {
  TimeGrid grid;
  CoefficientPath r, mu, sigma, R1, R2;  // 1 x 1
  double G1 = 0.0, G2 = 0.0;
  TerminalCondition xi;                  // dimension 1

  bool constant() const {
    return r.is_constant() && mu.is_constant() && sigma.is_constant() && R1.is_constant() &&
           R2.is_constant();
  }
  double theta(std::size_t i) const { return (mu[i](0, 0) - r[i](0, 0)) / sigma[i](0, 0); }
};

inline MarketParams make_market(double T, int N, double r, double mu, double sigma, double R1,
                                double R2, double G1, double G2, double xi_a, double xi_b) {
  MarketParams m;
  m.grid = TimeGrid(T, N);
  auto c = [&](double v) { return CoefficientPath::constant(m.grid, Matrix::Constant(1, 1, v)); };
  m.r = c(r);
  m.mu = c(mu);
  m.sigma = c(sigma);
  m.R1 = c(R1);
  m.R2 = c(R2);
  m.G1 = G1;
  m.G2 = G2;
  m.xi = {Vector::Constant(1, xi_a), Matrix::Constant(1, 1, xi_b)};
  return m;
}

inline void validate_market(const MarketParams& m) {
  auto scalar = [&](const CoefficientPath& p, const char* name) {
    if (p.size() != m.grid.size() || p.rows() != 1 || p.cols() != 1)
      throw InputError(std::string("market: ") + name + " must be 1x1 on the grid");
    if (!p.all_finite()) throw InputError(std::string("market: ") + name + " is not finite");
  };
  scalar(m.r, "r");
  scalar(m.mu, "mu");
  scalar(m.sigma, "sigma");
  scalar(m.R1, "R1");
  scalar(m.R2, "R2");
  if (m.xi.a.size() != 1 || m.xi.b.rows() != 1 || m.xi.b.cols() != 1)
    throw InputError("market: xi must be scalar");
  for (std::size_t i = 0; i < m.grid.size(); ++i) {
    const double t = m.grid[i];
    if (!(m.sigma[i](0, 0) > 0.0))
      throw InputError("market: sigma must be positive (t = " + std::to_string(t) + ")");
    if (m.mu[i](0, 0) < m.r[i](0, 0))
      throw InputError("market: mu must not be below r (t = " + std::to_string(t) + ")");
    if (!(m.R1[i](0, 0) > 0.0) || !(m.R2[i](0, 0) > 0.0))
      throw InputError("market: R1 and R2 must be positive (t = " + std::to_string(t) + ")");
  }
  if (!std::isfinite(m.G1) || !std::isfinite(m.G2)) throw InputError("market: G1, G2 not finite");
}

// A = -r, B1 = B2 = 1, C = -(mu - r)/sigma, no running state weights. G1, G2 are used
// directly as the Riccati boundary values, so validation runs in permissive mode.
inline LQGameSpec build_finance_spec(const MarketParams& m) {
  validate_market(m);
  LQGameSpec s = make_constant_spec({1, 1, 1}, m.grid.horizon(), m.grid.steps());
  s.C = CoefficientPath(m.grid, [&] {
    std::vector<Matrix> v;
    for (std::size_t i = 0; i < m.grid.size(); ++i) v.push_back(Matrix::Constant(1, 1, -m.theta(i)));
    return v;
  }());
  s.A = CoefficientPath(m.grid, [&] {
    std::vector<Matrix> v;
    for (std::size_t i = 0; i < m.grid.size(); ++i) v.push_back(-m.r[i]);
    return v;
  }());
  s.B1 = CoefficientPath::constant(m.grid, Matrix::Ones(1, 1));
  s.B2 = CoefficientPath::constant(m.grid, Matrix::Ones(1, 1));
  s.R1 = m.R1;
  s.R2 = m.R2;
  s.G1 = Matrix::Constant(1, 1, m.G1);
  s.G2 = Matrix::Constant(1, 1, m.G2);
  s.xi = m.xi;
  s.mode = ValidationMode::Permissive;
  return s;
}

// ---------------------------------------------------------------------------
// Scalar Riccati equations

struct ScalarP1 {
  RiccatiPath path;
  std::optional<std::vector<double>> closed;  // constant parameters only
  double closed_gap = 0.0;
};

// (e^{lambda (T-t)} - 1) / (R1 lambda), lambda = theta^2 - 2r; (T - t)/R1 when lambda = 0.
inline double p1_closed_form(double t, double T, double r, double theta, double R1) {
  const double lambda = theta * theta - 2.0 * r;
  const double s = T - t;
  if (std::abs(lambda * s) < 1e-8) return s / R1 * (1.0 + 0.5 * lambda * s);
  return std::expm1(lambda * s) / (R1 * lambda);
}

inline ScalarP1 scalar_p1(const MarketParams& m) {
  const LQGameSpec s = build_finance_spec(m);
  ScalarP1 out{solve_p1(s), std::nullopt, 0.0};
  if (m.constant()) {
    std::vector<double> c(m.grid.size());
    const double T = m.grid.horizon();
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i] = p1_closed_form(m.grid[i], T, m.r[0](0, 0), m.theta(0), m.R1[0](0, 0));
      out.closed_gap = std::max(out.closed_gap, std::abs(c[i] - out.path[i](0, 0)));
    }
    out.closed = std::move(c);
  }
  return out;
}

inline RiccatiPath scalar_p2(const MarketParams& m, const RiccatiPath& p1) {
  return solve_p2(build_finance_spec(m), p1);
}

// 1/P2 solves the linear ODE u' = a + 2 r u, a = 1/R1 + P1 theta^2, u(0) = 1/G1, so
// P2(t) = 1 / (e^{2rt}/G1 + int_0^t e^{2r(t-s)} a(s) ds). Constant parameters, composite
// Simpson with `panels` panels per grid interval on the closed-form P1.
inline std::vector<double> p2_quadrature(const MarketParams& m, int panels = 16) {
  if (!m.constant()) throw InputError("p2_quadrature: constant market parameters required");
  const double T = m.grid.horizon(), r = m.r[0](0, 0), th = m.theta(0), R1 = m.R1[0](0, 0);
  std::vector<double> out(m.grid.size(), 0.0);
  if (m.G1 == 0.0) return out;
  auto f = [&](double s) {
    return std::exp(-2.0 * r * s) * (1.0 / R1 + p1_closed_form(s, T, r, th, R1) * th * th);
  };
  double integral = 0.0;  // int_0^t e^{-2rs} a(s) ds
  out[0] = m.G1;
  for (int i = 0; i < m.grid.steps(); ++i) {
    const double a = m.grid[i], h = (m.grid[i + 1] - a) / panels;
    double acc = 0.0;
    for (int j = 0; j < panels; ++j) {
      const double x = a + j * h;
      acc += h / 6.0 * (f(x) + 4.0 * f(x + 0.5 * h) + f(x + h));
    }
    integral += acc;
    const double t = m.grid[i + 1];
    out[i + 1] = 1.0 / (std::exp(2.0 * r * t) * (1.0 / m.G1 + integral));
  }
  return out;
}

// ---------------------------------------------------------------------------
// The hand-specialized stacked matrices of the consumption game

inline HatMatrices finance_hat_matrices(double r, double theta, double R1, double P1, double P2) {
  HatMatrices h;
  const double a = -r - P2 / R1;
  const double x = P1 * P2;
  h.A1 = Matrix(2, 2);
  h.A1 << a, 0, 0, a;
  h.B1 = Matrix(2, 1);
  h.B1 << P2, 0;
  h.B2 = Matrix(2, 1);
  h.B2 << 0, 1;
  h.C1 = Matrix(2, 2);
  h.C1 << (-1.0 - x * x - x) / (x + 1.0) * theta, 0, 0, -theta;
  h.D1 = Matrix(2, 2);
  h.D1 << 0, -P2 * theta, -P2 * theta, 0;
  h.F1 = Matrix(2, 2);
  h.F1 << 0, theta * theta * P2 * P2 * P1, theta * theta * P2 * P2 * P1, 0;
  h.F2 = Matrix(2, 2);
  h.F2 << 0, -1.0 / R1, -1.0 / R1, 0;
  h.S1 = Matrix(2, 2);
  h.S1 << 0, -P2, -P2, 0;
  return h;
}

inline double hat_gap(const HatMatrices& a, const HatMatrices& b) {
  double g = 0.0;
  for (auto f : {&HatMatrices::A1, &HatMatrices::B1, &HatMatrices::B2, &HatMatrices::C1,
                 &HatMatrices::D1, &HatMatrices::F1, &HatMatrices::F2, &HatMatrices::S1})
    g = std::max(g, ((a.*f) - (b.*f)).cwiseAbs().maxCoeff());
  return g;
}

// Node-wise max gap between the hand-specialized matrices and a generic assembly.
inline double finance_display_gap(const MarketParams& m, const StackedSystem& sys,
                                  const RiccatiPath& p1, const RiccatiPath& p2) {
  double g = 0.0;
  for (std::size_t i = 0; i < m.grid.size(); ++i)
    g = std::max(g, hat_gap(finance_hat_matrices(m.r[i](0, 0), m.theta(i), m.R1[i](0, 0),
                                                 p1[i](0, 0), p2[i](0, 0)),
                            sys.node(i)));
  return g;
}

// ---------------------------------------------------------------------------
// Equilibrium, propagator and initial reserve

class FinanceModel {
 public:
  FinanceModel(const MarketParams& m, const RiccatiOptions& ro = {}, const LeaderOptions& lo = {})
      : market_(m), spec_(build_finance_spec(m)), sol_(solve_leader_riccati(spec_, ro)),
        leader_(spec_, sol_.p1, sol_.p2, sol_.sys, sol_.pi1, sol_.pi2, lo) {
    const int N = spec_.grid.steps();
    const double h = spec_.grid.dt();
    step_.resize(N);
    for (int j = 0; j < N; ++j) {
      const Matrix b0 = gamma_drift_half(2 * j), bm = gamma_drift_half(2 * j + 1),
                   b1 = gamma_drift_half(2 * j + 2);
      step_[j] = matrix_exponential((h / 6.0) * (b0 + 4.0 * bm + b1) + (h * h / 12.0) * (b0 * b1 - b1 * b0));
    }
  }

  const MarketParams& market() const { return market_; }
  const LQGameSpec& spec() const { return spec_; }
  const LeaderSolution& riccati() const { return sol_; }
  const LeaderModel& leader() const { return leader_; }

  // Drift M and diffusion N of dGamma = Gamma (M ds + N dW) at node i.
  const Matrix& gamma_drift(std::size_t i) const { return leader_.y_drift(i); }
  const Matrix& gamma_diffusion(std::size_t i) const { return leader_.y_z_coeff(i); }

  // M = A1^ - B2^ R2^-1 B1^T + (F2^ - B2^ R2^-1 B2^T) Pi2 at half-grid index h.
  Matrix gamma_drift_half(int h) const {
    const HatMatrices& m = sol_.sys.half(h);
    const Matrix P2 = sol_.pi2.path.half(h, true);
    const Matrix R2inv = spec_.R2.half(h, false).inverse();
    return m.A1 + m.F2 * P2 - m.B2 * R2inv * (m.B1 + P2 * m.B2).transpose();
  }

  // Deterministic part of one step: the time-ordered exponential of M over interval j.
  const Matrix& gamma_step(std::size_t j) const { return step_[j]; }

  // Gamma_t(s) for nodes i0 <= i1 along given increments: each step multiplies by the
  // exact deterministic flow plus the Euler diffusion term.
  Matrix gamma_propagator(int i0, int i1, const std::vector<double>& dW) const {
    if (i0 < 0 || i1 < i0 || i1 > spec_.grid.steps())
      throw InputError("gamma_propagator: need 0 <= t <= s <= T");
    if (dW.size() < static_cast<std::size_t>(i1))
      throw InputError("gamma_propagator: not enough increments");
    Matrix G = Matrix::Identity(2, 2);
    for (int j = i0; j < i1; ++j) G = G * (step_[j] + dW[j] * gamma_diffusion(j));
    return G;
  }

  // Pipeline value Y(0) = -(I + Pi1 Pi2)^-1 varphi~(0).
  Vector pipeline_y0() const {
    const Matrix I = Matrix::Identity(2, 2);
    return -(I + sol_.pi1[0] * sol_.pi2[0]).inverse() * leader_.tilde_phi().alpha[0].col(0);
  }

 private:
  MarketParams market_;
  LQGameSpec spec_;
  LeaderSolution sol_;
  LeaderModel leader_;
  std::vector<Matrix> step_;
};

inline MarketParams resample_market(const MarketParams& m, int steps) {
  MarketParams r = m;
  r.grid = TimeGrid(m.grid.horizon(), steps);
  auto rs = [&](const CoefficientPath& p) {
    return CoefficientPath::generate(r.grid, [&](double t) { return p.eval(t); });
  };
  r.r = rs(m.r);
  r.mu = rs(m.mu);
  r.sigma = rs(m.sigma);
  r.R1 = rs(m.R1);
  r.R2 = rs(m.R2);
  return r;
}

// One sample of Gamma_0(T) xi^ + int_0^T Gamma_0(t) (F2^ - B2^ R2^-1 B2^T) varphi~(t) dt along
// the given increments; Gamma as in gamma_propagator, left-point rule for the integral.
inline Eigen::Vector2d reserve_sample(const FinanceModel& f, const std::vector<double>& dW,
                                      LeaderPath& lp) {
  const LeaderModel& lm = f.leader();
  const int N = f.spec().grid.steps();
  const double dt = f.spec().grid.dt();
  lm.simulate_increments(dW, lp);
  Eigen::Matrix2d G = Eigen::Matrix2d::Identity();
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (int i = 0; i < N; ++i) {
    const Eigen::Matrix2d E = f.gamma_step(i), Nz = lm.y_z_coeff(i), cpl = lm.y_psi_coeff(i);
    const Eigen::Vector2d psi = lp.psi.col(i);
    acc += dt * (G * (cpl * psi));
    G = G * (E + dW[i] * Nz);
  }
  const Eigen::Vector2d xiT = f.riccati().sys.xih().value(lp.W[N]);
  return acc + G * xiT;
}

struct InitialReserve {
  Vector Y0_mc = Vector::Zero(2), Y0_stderr = Vector::Zero(2);
  Vector Y0_euler = Vector::Zero(2), Y0_euler_stderr = Vector::Zero(2);  // fine grid, no extrapolation
  Vector Y0_pipeline = Vector::Zero(2);
  double reserve = 0.0, reserve_stderr = 0.0;  // second components
  double max_sigma_gap = 0.0;                  // max_j |mc_j - pipeline_j| / stderr_j
  double max_abs_gap = 0.0;
  bool extrapolated = false;

  bool agrees(double k = 3.0, double floor = 1e-10) const {
    for (int j = 0; j < 2; ++j)
      if (std::abs(Y0_mc(j) - Y0_pipeline(j)) > k * Y0_stderr(j) + floor) return false;
    return true;
  }
};

// Monte Carlo Y(0) against the pipeline value. With `extrapolate`, each path is run on the
// model grid and on its 2x refinement with the same Brownian motion and the sample is
// 2 Y_2N - Y_N, which cancels the first-order weak error of the Euler scheme.
inline InitialReserve initial_reserve(const FinanceModel& f, const MonteCarloConfig& mc,
                                      bool extrapolate = true) {
  const int N = f.spec().grid.steps();
  std::optional<FinanceModel> fine;
  if (extrapolate) fine.emplace(resample_market(f.market(), 2 * N));
  const FinanceModel& ff = fine ? *fine : f;
  const TimeGrid& gf = ff.spec().grid;
  std::vector<double> e0(mc.paths), e1(mc.paths), y0(mc.paths), y1(mc.paths);
  parallel_for(
      mc.paths,
      [&](std::size_t p) {
        std::vector<double> dW, W, dWc;
        LeaderPath lp;
        path_noise(mc, p, gf, dW, W);
        const Eigen::Vector2d yf = reserve_sample(ff, dW, lp);
        e0[p] = yf(0);
        e1[p] = yf(1);
        Eigen::Vector2d y = yf;
        if (extrapolate) {
          dWc.resize(N);
          for (int i = 0; i < N; ++i) dWc[i] = dW[2 * i] + dW[2 * i + 1];
          y = 2.0 * yf - reserve_sample(f, dWc, lp);
        }
        y0[p] = y(0);
        y1[p] = y(1);
      },
      mc.threads);
  InitialReserve out;
  out.extrapolated = extrapolate;
  const MeanEstimate a = mean_and_stderr(y0), b = mean_and_stderr(y1);
  const MeanEstimate ea = mean_and_stderr(e0), eb = mean_and_stderr(e1);
  out.Y0_mc << a.mean, b.mean;
  out.Y0_stderr << a.std_error, b.std_error;
  out.Y0_euler << ea.mean, eb.mean;
  out.Y0_euler_stderr << ea.std_error, eb.std_error;
  out.Y0_pipeline = f.pipeline_y0();
  out.reserve = b.mean;
  out.reserve_stderr = b.std_error;
  for (int j = 0; j < 2; ++j) {
    const double d = std::abs(out.Y0_mc(j) - out.Y0_pipeline(j));
    out.max_abs_gap = std::max(out.max_abs_gap, d);
    if (out.Y0_stderr(j) > 0.0) out.max_sigma_gap = std::max(out.max_sigma_gap, d / out.Y0_stderr(j));
  }
  return out;
}

// Trajectories of one path, each 1 x (N+1).
struct ConsumptionPath {
  std::uint64_t index = 0;
  Matrix c1, c2, y, z, pi;
};

struct ConsumptionSolution {
  std::vector<ConsumptionPath> kept;
  MeanEstimate J1, J2;
  Vector Y0 = Vector::Zero(2);  // pipeline
  double initial_reserve = 0.0;
  double wealth_terminal_error = 0.0;  // max |y(T) - xi|
  double c1_gap = 0.0;                 // feedback c1 against -(P2 ybar + phibar)/R1
  LeaderEnsemble ensemble;
};

inline ConsumptionPath consumption_path(const FinanceModel& f, const LeaderPath& lp) {
  const MarketParams& m = f.market();
  const int N = m.grid.steps();
  ConsumptionPath c;
  c.index = lp.index;
  c.c1.resize(1, N + 1);
  c.c2 = lp.u2;
  c.y = lp.Y.bottomRows(1);
  c.z = lp.Z.bottomRows(1);
  c.pi.resize(1, N + 1);
  for (int i = 0; i <= N; ++i) {
    const double P2 = f.riccati().p2[i](0, 0);
    c.c1(0, i) = -(P2 * lp.Y(1, i) + lp.X(0, i)) / m.R1[i](0, 0);
    c.pi(0, i) = lp.Z(1, i) / m.sigma[i](0, 0);
  }
  return c;
}

inline ConsumptionSolution consumption_equilibrium(const FinanceModel& f, const MonteCarloConfig& mc) {
  ConsumptionSolution out;
  out.ensemble = run_leader(f.leader(), mc);
  out.J1 = out.ensemble.J1;
  out.J2 = out.ensemble.J2;
  out.Y0 = f.pipeline_y0();
  out.initial_reserve = out.Y0(1);
  out.wealth_terminal_error = out.ensemble.terminal_error_max;
  for (const LeaderPath& lp : out.ensemble.kept) {
    ConsumptionPath c = consumption_path(f, lp);
    out.c1_gap = std::max(out.c1_gap, (c.c1 - lp.u1).cwiseAbs().maxCoeff());
    out.kept.push_back(std::move(c));
  }
  return out;
}

}  // namespace bsg
