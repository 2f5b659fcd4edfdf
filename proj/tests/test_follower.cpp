#include <gtest/gtest.h>

#include <cmath>

#include "bsg/follower.hpp"

using namespace bsg;

namespace {

struct Solved {
  LQGameSpec s;
  RiccatiPath p1, p2;
};

Solved solve(const LQGameSpec& s) {
  auto p1 = solve_p1(s);
  auto p2 = solve_p2(s, p1);
  return {s, p1, p2};
}

MonteCarloConfig mc(std::size_t paths, std::uint64_t seed = 7) {
  MonteCarloConfig c;
  c.paths = paths;
  c.seed = seed;
  c.keep_paths = paths;
  return c;
}

}  // namespace

TEST(PhiEta, ZeroData) {
  auto s = make_constant_spec({2, 1, 1}, 1.0, 50);
  auto f = solve(s);
  auto pe = solve_phi_eta(s, f.p1, AffineControl::zero(s.grid, 1));
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    EXPECT_TRUE(pe.alpha[i].isZero(0.0));
    EXPECT_TRUE(pe.beta[i].isZero(0.0));
  }
}

TEST(PhiEta, S2IsMinusOne) {
  auto s = make_s2(200);
  auto f = solve(s);
  auto pe = solve_phi_eta(s, f.p1, AffineControl::zero(s.grid, 1));
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    EXPECT_NEAR(pe.alpha[i](0, 0), -1.0, 1e-14);
    EXPECT_EQ(pe.beta[i](0, 0), 0.0);
  }
}

TEST(PhiEta, LinearTerminalGivesMinusW) {
  auto s = make_constant_spec({1, 1, 1}, 1.0, 100);
  s.xi.a = Vector::Zero(1);
  s.xi.b = Matrix::Ones(1, 1);
  auto f = solve(s);
  auto pe = solve_phi_eta(s, f.p1, AffineControl::zero(s.grid, 1));
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    EXPECT_NEAR(pe.beta[i](0, 0), -1.0, 1e-14);
    EXPECT_NEAR(pe.alpha[i](0, 0), 0.0, 1e-14);
  }
}

TEST(PhiEta, TerminalValuesExact) {
  auto s = make_stochastic_scenario(64);
  auto f = solve(s);
  auto pe = solve_phi_eta(s, f.p1, AffineControl::constant(s.grid, Vector::Ones(1)));
  EXPECT_EQ(pe.alpha.back()(0, 0), -s.xi.a(0));
  EXPECT_EQ(pe.beta.back()(0, 0), -s.xi.b(0, 0));
}

// S2 with u2 = 0. P1 = 1 - t, P2 = 1/(1+t) and phi = -1, so I + P2 P1 = 2/(1+t),
// x = (1+t)/2 / (1+t) = 1/2, y = -(1-t)/2 + 1 = (1+t)/2, z = 0, u1 = -x = -1/2.
// J1 = (int_0^1 1/4 dt + y(0)^2) / 2 = 1/4.
TEST(Follower, S2HandSolution) {
  auto f = solve(make_s2(1000));
  FollowerModel m(f.s, f.p1, f.p2, AffineControl::zero(f.s.grid, 1));
  auto e = run_follower(m, mc(4));
  const auto& g = f.s.grid;
  for (const auto& p : e.kept) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_NEAR(p.varphi(0, i), 0.0, 1e-14);
      EXPECT_NEAR(p.x(0, i), 0.5, 1e-6);
      EXPECT_NEAR(p.y(0, i), 0.5 * (1.0 + g[i]), 1e-6);
      EXPECT_NEAR(p.z(0, i), 0.0, 1e-14);
      EXPECT_NEAR(p.u1(0, i), -0.5, 1e-6);
    }
    EXPECT_NEAR(p.x(0, 0), 0.5, 1e-6);
  }
  EXPECT_NEAR(e.J1.mean, 0.25, 1e-6);
  EXPECT_EQ(e.J1.std_error, 0.0);
  EXPECT_LE(e.terminal_error_max, 1e-10);
  EXPECT_LE(e.initial_coupling_max, 1e-10);
  EXPECT_LE(e.feedback_gap_max, 1e-10);
}

TEST(Follower, UncontrolledCostIsHigher) {
  // u1 = 0: -dy = 0 dt, y(1) = 1 gives y = 1 and J1 = G1 / 2 = 1/2.
  auto s = make_s2(1000);
  auto zero = AffineControl::zero(s.grid, 1);
  auto y = open_loop_state(s, zero, zero);
  for (std::size_t i = 0; i < s.grid.size(); ++i) EXPECT_NEAR(y.alpha[i](0, 0), 1.0, 1e-14);
  const auto W = std::vector<double>(s.grid.size(), 0.0);
  const Matrix ym = sample_affine(y, W);
  const double J0 = follower_cost_weights(s)(s.grid, ym, sample_beta(y), sample_control(zero, W));
  EXPECT_NEAR(J0, 0.5, 1e-12);
  auto f = solve(s);
  auto e = run_follower(FollowerModel(s, f.p1, f.p2, zero), mc(1));
  EXPECT_LT(e.J1.mean, J0);
}

TEST(Follower, ConstantLeaderControl) {
  // v' = -P2 v + P2, v(0) = 0 with int_0^1 P2 = ln 2 gives v(1) = 1/2.
  auto s = make_s2(400);
  auto f = solve(s);
  FollowerModel m(s, f.p1, f.p2, AffineControl::constant(s.grid, Vector::Ones(1)));
  auto e = run_follower(m, mc(3));
  for (const auto& p : e.kept) {
    EXPECT_NEAR(p.varphi(0, s.grid.steps()), 0.5, 2.0 * s.grid.dt());
    EXPECT_EQ(p.varphi, e.kept[0].varphi);
  }
}

TEST(Follower, ZeroScenario) {
  auto s = make_constant_spec({2, 1, 2}, 1.0, 50);
  auto f = solve(s);
  auto e = run_follower(FollowerModel(s, f.p1, f.p2, AffineControl::zero(s.grid, 2)), mc(5));
  EXPECT_EQ(e.J1.mean, 0.0);
  for (const auto& p : e.kept) {
    EXPECT_TRUE(p.varphi.isZero(0.0));
    EXPECT_TRUE(p.u1.isZero(0.0));
  }
}

TEST(Follower, NoStateCostMeansNoControl) {
  auto s = make_s2(100);
  s.G1 = Matrix::Zero(1, 1);
  s.xi.b = Matrix::Constant(1, 1, 0.7);
  auto f = solve(s);
  auto e = run_follower(FollowerModel(s, f.p1, f.p2, AffineControl::zero(s.grid, 1)), mc(5));
  for (const auto& p : e.kept) EXPECT_TRUE(p.u1.isZero(0.0));
}

TEST(Follower, NoFollowerInputMeansNoControl) {
  auto s = make_stochastic_scenario(100);
  s.B1 = CoefficientPath::constant(s.grid, Matrix::Zero(1, 1));
  auto f = solve(s);
  auto e = run_follower(FollowerModel(s, f.p1, f.p2, AffineControl::zero(s.grid, 1)), mc(5));
  for (const auto& p : e.kept) EXPECT_TRUE(p.u1.isZero(0.0));
}

TEST(Follower, DeterministicDegeneracy) {
  auto s = make_stochastic_scenario(100);
  s.C = CoefficientPath::constant(s.grid, Matrix::Zero(1, 1));
  s.xi.b = Matrix::Zero(1, 1);
  auto f = solve(s);
  auto e = run_follower(FollowerModel(s, f.p1, f.p2, AffineControl::constant(s.grid, Vector::Ones(1))),
                        mc(6));
  for (const auto& p : e.kept) {
    EXPECT_EQ(p.y, e.kept[0].y);
    EXPECT_TRUE(p.z.isZero(0.0));
    EXPECT_EQ(p.u1, e.kept[0].u1);
  }
  EXPECT_EQ(e.J1.std_error, 0.0);
}

TEST(Follower, StochasticIdentities) {
  auto s = make_stochastic_scenario(200);
  auto f = solve(s);
  AffineControl u2{CoefficientPath::constant(s.grid, Matrix::Constant(1, 1, 0.3)),
                   CoefficientPath::constant(s.grid, Matrix::Constant(1, 1, -0.2))};
  auto e = run_follower(FollowerModel(s, f.p1, f.p2, u2), mc(200));
  EXPECT_LE(e.terminal_error_max, 1e-10);
  EXPECT_LE(e.initial_coupling_max, 1e-10);
  EXPECT_LE(e.feedback_gap_max, 1e-10);
  EXPECT_LE(e.stationarity_residual, 1e-10);
  EXPECT_GT(e.J1.std_error, 0.0);
}

TEST(Follower, SeedReproducibility) {
  auto s = make_stochastic_scenario(50);
  auto f = solve(s);
  FollowerModel m(s, f.p1, f.p2, AffineControl::zero(s.grid, 1));
  auto a = run_follower(m, mc(64, 11));
  auto c = mc(64, 11);
  c.threads = 1;
  auto b = run_follower(m, c);
  EXPECT_EQ(a.J1.mean, b.J1.mean);
  EXPECT_EQ(a.kept[63].y, b.kept[63].y);
  auto d = run_follower(m, mc(64, 12));
  EXPECT_NE(a.J1.mean, d.J1.mean);
}

TEST(Follower, BsdeResidualIsFirstOrder) {
  auto rms = [](int N) {
    auto f = solve(make_stochastic_scenario(N));
    FollowerModel m(f.s, f.p1, f.p2, AffineControl::zero(f.s.grid, 1));
    return run_follower(m, mc(2000)).bsde_residual_rms;
  };
  const double r1 = rms(128), r2 = rms(256);
  EXPECT_NEAR(r1 / r2, 2.0, 0.4);
}

TEST(Stationarity, S2ConstantDirection) {
  auto f = solve(make_s2(1000));
  FollowerModel m(f.s, f.p1, f.p2, AffineControl::zero(f.s.grid, 1));
  auto d = check_follower_stationarity(m, AffineControl::constant(f.s.grid, Vector::Ones(1)),
                                       {1e-2, 1e-3}, mc(2));
  EXPECT_LE(d.algebraic_residual, 1e-10);
  EXPECT_LE(std::abs(d.slope[0]), 2e-2);
  EXPECT_LE(std::abs(d.slope[1]), 2e-3);
  EXPECT_LE(std::abs(d.extrapolated), 1e-3);
}

TEST(Stationarity, ZeroDirectionIsExactlyZero) {
  auto f = solve(make_stochastic_scenario(100));
  FollowerModel m(f.s, f.p1, f.p2, AffineControl::zero(f.s.grid, 1));
  auto d = check_follower_stationarity(m, AffineControl::zero(f.s.grid, 1), {1e-2, 1e-3}, mc(50));
  for (double v : d.slope) EXPECT_EQ(v, 0.0);
}

TEST(Stationarity, StochasticScenarioThreeDirections) {
  auto f = solve(make_stochastic_scenario(256));
  FollowerModel m(f.s, f.p1, f.p2, AffineControl::zero(f.s.grid, 1));
  auto e = run_follower(m, mc(4000, 3));
  const double tol = 1e-3 * std::max(1.0, std::abs(e.J1.mean));
  auto one = [](double) { return Vector::Ones(1); };
  auto zero = [](double) { return Vector::Zero(1); };
  auto lin = [](double t) { return Vector::Constant(1, t); };
  for (const auto& v : {control_from_functions(f.s.grid, 1, one, zero),
                        control_from_functions(f.s.grid, 1, lin, zero),
                        control_from_functions(f.s.grid, 1, zero, one)}) {
    auto d = check_follower_stationarity(m, v, {1e-2, 1e-3}, mc(4000, 3));
    EXPECT_LE(d.algebraic_residual, 1e-10);
    EXPECT_LE(std::abs(d.extrapolated), tol);
    // the control variate changes the noise, not the mean
    EXPECT_NEAR(d.extrapolated, d.raw_extrapolated, 4.0 * d.raw_stderr);
  }
}
