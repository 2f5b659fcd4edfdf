#include <gtest/gtest.h>

#include "bsg/core_model.hpp"

using namespace bsg;

TEST(TimeGrid, UniformNodesEndExactly) {
  TimeGrid g(1.0, 3);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[3], 1.0);
  EXPECT_DOUBLE_EQ(g.dt(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.half_time(3), 1.5 / 3.0);
  EXPECT_THROW(TimeGrid(0.0, 4), InputError);
  EXPECT_THROW(TimeGrid(1.0, 0), InputError);
}

TEST(CoefficientPath, ConstantInterpolation) {
  TimeGrid g(2.0, 7);
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  auto p = CoefficientPath::constant(g, m);
  EXPECT_EQ(p.eval(0.37), m);
  EXPECT_EQ(p.eval(2.0), m);
}

TEST(CoefficientPath, LinearInterpolation) {
  TimeGrid g(1.0, 1);
  CoefficientPath p(g, {Matrix::Zero(1, 1), Matrix::Ones(1, 1)});
  EXPECT_DOUBLE_EQ(p.eval(0.5)(0, 0), 0.5);
  EXPECT_EQ(p.eval(1.0)(0, 0), 1.0);
}

TEST(CoefficientPath, NodesAreBitExact) {
  TimeGrid g(0.7, 13);
  auto p = CoefficientPath::generate(g, [](double t) { return Matrix::Constant(1, 1, std::sin(t)); });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(p.eval(g[i])(0, 0), p[i](0, 0));
}

TEST(CoefficientPath, OutOfRange) {
  auto p = CoefficientPath::constant(TimeGrid(1.0, 4), Matrix::Zero(1, 1));
  EXPECT_THROW(p.eval(-1e-9), std::out_of_range);
  EXPECT_THROW(p.eval(1.0 + 1e-9), std::out_of_range);
}

TEST(CoefficientPath, CubicMidpointExactForCubics) {
  TimeGrid g(1.0, 10);
  auto f = [](double t) { return 1.0 - 2.0 * t + 0.5 * t * t + 3.0 * t * t * t; };
  auto p = CoefficientPath::generate(g, [&](double t) { return Matrix::Constant(1, 1, f(t)); });
  for (int i = 0; i < 10; ++i)
    EXPECT_NEAR(p.midpoint_cubic(i)(0, 0), f(g[i] + 0.05), 1e-13) << i;
}

TEST(CoefficientPath, ShapeMismatchRejected) {
  TimeGrid g(1.0, 1);
  EXPECT_THROW(CoefficientPath(g, {Matrix::Zero(1, 1), Matrix::Zero(2, 1)}), InputError);
  EXPECT_THROW(CoefficientPath(g, {Matrix::Zero(1, 1)}), InputError);
}

TEST(Validate, TrivialScenarioIsClean) {
  auto s = make_constant_spec({1, 1, 1}, 1.0, 10);
  auto rep = validate_spec(s, true);
  EXPECT_TRUE(rep.empty());
  EXPECT_TRUE(rep.ok());
}

TEST(Validate, ZeroR1IsAnL2Error) {
  auto s = make_constant_spec({1, 1, 1}, 1.0, 10);
  s.R1 = CoefficientPath::constant(s.grid, Matrix::Zero(1, 1));
  auto rep = validate_spec(s, true);
  ASSERT_EQ(rep.errors(), 1u);
  EXPECT_EQ(rep.entries[0].message, "(L2): R1 not positive definite");
}

TEST(Validate, NegativeG1StrictVersusPermissive) {
  auto s = make_constant_spec({1, 1, 1}, 1.0, 10);
  s.G1 = Matrix::Constant(1, 1, -2.0);
  auto strict = validate_spec(s, true);
  ASSERT_EQ(strict.entries.size(), 1u);
  EXPECT_EQ(strict.entries[0].message, "(L2): G1 not PSD");
  EXPECT_FALSE(strict.ok());
  auto perm = validate_spec(s, false);
  ASSERT_EQ(perm.entries.size(), 1u);
  EXPECT_EQ(perm.entries[0].severity, Violation::Severity::Warning);
  EXPECT_TRUE(perm.ok());
}

TEST(Validate, AsymmetricWeightAndLeaderTag) {
  auto s = make_constant_spec({2, 1, 1}, 1.0, 4);
  Matrix q(2, 2);
  q << 1, 0.5, 0, 1;
  s.Q2 = CoefficientPath::constant(s.grid, q);
  auto rep = validate_spec(s, true);
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_EQ(rep.entries[0].assumption, "(L3)");
}

TEST(Validate, ShapeMismatchIsStructural) {
  auto s = make_constant_spec({2, 1, 1}, 1.0, 4);
  s.B1 = CoefficientPath::constant(s.grid, Matrix::Zero(2, 2));
  try {
    validate_spec(s, true);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("B1"), std::string::npos);
  }
}

TEST(Validate, Idempotent) {
  auto s = make_s2(20);
  s.G2 = Matrix::Constant(1, 1, -1.0);
  auto a = validate_spec(s, true), b = validate_spec(s, true);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].message, b.entries[i].message);
}

TEST(AffineControl, Value) {
  TimeGrid g(1.0, 2);
  AffineControl u{CoefficientPath::constant(g, Matrix::Constant(1, 1, 2.0)),
                  CoefficientPath::constant(g, Matrix::Constant(1, 1, 3.0))};
  EXPECT_DOUBLE_EQ(u.value(1, 0.5)(0), 3.5);
  EXPECT_FALSE(u.deterministic());
}
