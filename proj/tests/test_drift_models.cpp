#include <ergodiff/drift_models.hpp>
#include <ergodiff/quadrature.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace ergodiff;

namespace {

DriftField bump2d(double eps = 0.1)
{
  return make_bump_perturbation({1.0, Vector::Zero(2)}, eps, Vector::Zero(2), 0.9, 5);
}

} // namespace

TEST(DriftModels, OrnsteinUhlenbeckDensityAndDrift)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2, 1.0);
  Vector x(2);
  x << 0.3, -0.7;
  EXPECT_NEAR(ou.density(x), std::exp(-x.squaredNorm()) / M_PI, 1e-14);
  EXPECT_LT((ou.drift(x) + x).norm(), 1e-15);
  EXPECT_NEAR(ou.drift_derivative(0, {1, 0}, x), -1.0, 1e-15);
  EXPECT_NEAR(ou.drift_derivative(0, {0, 1}, x), 0.0, 1e-15);
  EXPECT_NEAR(ou.drift_derivative(1, {2, 0}, x), 0.0, 1e-15);
}

TEST(DriftModels, BumpDriftMatchesFiniteDifferences)
{
  const auto b = bump2d();
  Vector x(2);
  x << 0.21, -0.37;
  const double e = 1e-5;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      Vector xp = x;
      Vector xm = x;
      xp(j) += e;
      xm(j) -= e;
      const double fd = (b.drift(xp)(i) - b.drift(xm)(i)) / (2 * e);
      MultiIndex alpha{0, 0};
      alpha[static_cast<std::size_t>(j)] = 1;
      EXPECT_NEAR(b.drift_derivative(i, alpha, x), fd, 1e-7);
    }
  }
  // Drift is minus the gradient of the potential.
  for (int j = 0; j < 2; ++j) {
    Vector xp = x;
    Vector xm = x;
    xp(j) += e;
    xm(j) -= e;
    EXPECT_NEAR(b.drift(x)(j), -(b.potential(xp) - b.potential(xm)) / (2 * e), 1e-8);
  }
}

TEST(DriftModels, BumpDensityNormalises)
{
  const auto b = bump2d(0.3);
  // Quadrature on the bump box plus the Gaussian mass outside it in closed form.
  const Vector lo = Vector::Constant(2, -0.9);
  const Vector hi = Vector::Constant(2, 0.9);
  const double inside = integrate_box([&](const Vector& x) { return b.density(x); }, lo, hi, 16, 20);
  const double outside = M_PI * (1.0 - std::pow(std::erf(0.9), 2)) * std::exp(-b.log_normalizer());
  EXPECT_NEAR(inside + outside, 1.0, 1e-12);
}

TEST(DriftModels, BumpStaysInNeighbourhood)
{
  const auto center = DriftField::ornstein_uhlenbeck(2, 1.0);
  const auto b = bump2d(0.1);
  Neighborhood nb{center, 0.1, 0.1, 1.0};
  std::vector<Vector> pts = grid_points(2, 1.5, 61);
  const auto rep = check_neighborhood(nb, b, pts);
  EXPECT_LE(rep.max_drift_deviation_in_A, 0.1 + 1e-12);
  EXPECT_GT(rep.max_drift_deviation_in_A, 0.02);
  EXPECT_LE(rep.max_drift_deviation_outside_A, 1e-12);
  EXPECT_LE(rep.max_density_ratio_deviation, 0.1);
  EXPECT_TRUE(rep.pass);
  EXPECT_NEAR(density_ratio_deviation(b, center, 1.0, 41), rep.max_density_ratio_deviation, 0.02);
}

TEST(DriftModels, MembershipOfOrnsteinUhlenbeck)
{
  ParameterClass pc;
  std::vector<std::pair<Vector, Vector>> sample;
  const auto pts = grid_points(2, 3.0, 9);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    sample.emplace_back(pts[i], pts[pts.size() - 1 - i]);
  }
  const auto ok = check_membership(DriftField::ornstein_uhlenbeck(2, 1.0), pc, sample);
  EXPECT_TRUE(ok.pass);
  EXPECT_NEAR(ok.min_dissipativity_ratio, 1.0, 1e-12);
  const auto weak = check_membership(DriftField::ornstein_uhlenbeck(2, 0.5), pc, sample);
  EXPECT_FALSE(weak.pass);
  EXPECT_GT(weak.dissipativity_violations, 0u);
  EXPECT_THROW(check_membership(DriftField::ornstein_uhlenbeck(2, 1.0), pc, {}), std::invalid_argument);
}

TEST(DriftModels, DensityLowerBoundNormaliser)
{
  // d = 2, M1 = M2 = 1: 2 pi int r e^{2r - r^2} dr in closed form.
  const double expected = M_PI * (1.0 + std::exp(1.0) * std::sqrt(M_PI) * (1.0 + std::erf(1.0)));
  const DensityLowerBound lb(ParameterClass{}, 2);
  EXPECT_NEAR(lb.normalizer(), expected, 1e-9 * expected);
  Vector x(2);
  x << 0.6, 0.8;
  EXPECT_NEAR(mu_star(ParameterClass{}, x), std::exp(-1.0 - 2.0) / expected, 1e-12);
}

TEST(DriftModels, ParameterValidation)
{
  ParameterClass pc;
  pc.beta = 0.0;
  EXPECT_THROW(pc.validate(), std::invalid_argument);
  EXPECT_EQ(taylor_order(2.0), 2);
  EXPECT_EQ(taylor_order(2.7), 2);
  EXPECT_EQ(taylor_order(0.5), 0);
}

TEST(DriftModels, ClosedFormValues)
{
  const auto ou2 = DriftField::ornstein_uhlenbeck(2);
  EXPECT_EQ(ou2.drift((Vector(2) << 1.0, -2.0).finished()), (Vector(2) << -1.0, 2.0).finished());
  EXPECT_NEAR(ou2.density(Vector::Zero(2)), 1.0 / M_PI, 1e-15);
  EXPECT_NEAR(DriftField::ornstein_uhlenbeck(1).density(Vector::Ones(1)), std::exp(-1.0) / std::sqrt(M_PI), 1e-15);
  const auto shifted = DriftField::quadratic({3.0, (Vector(2) << 0.4, -0.2).finished()});
  EXPECT_LT(shifted.drift((Vector(2) << 0.4, -0.2).finished()).norm(), 1e-15);
}

TEST(DriftModels, LowerBoundShape)
{
  ParameterClass pc;
  const DensityLowerBound lb(pc, 1);
  EXPECT_NEAR(lb(Vector::Zero(1)), 1.0 / lb.normalizer(), 1e-15);
  EXPECT_GT(lb(Vector::Constant(1, 0.3)), lb(Vector::Constant(1, 0.6)));
  const auto ou = DriftField::ornstein_uhlenbeck(1);
  for (double x = -2.0; x <= 2.0; x += 0.05) {
    const Vector p = Vector::Constant(1, x);
    EXPECT_LE(lb(p), ou.density(p)) << x;
  }
}

TEST(DriftModels, MembershipRatios)
{
  ParameterClass pc;
  std::vector<std::pair<Vector, Vector>> sample;
  for (const auto& x : grid_points(2, 1.0, 5)) {
    sample.emplace_back(x, -0.5 * x);
  }
  const auto steep = check_membership(DriftField::ornstein_uhlenbeck(2, 2.0), ParameterClass{2.0, 1.0, 1.0, 1.0, 2.0},
                                      sample);
  EXPECT_TRUE(steep.pass);
  EXPECT_NEAR(steep.min_dissipativity_ratio, 2.0, 1e-12);
  CustomPotential up;
  up.dim = 2;
  up.box_radius = 3.0;
  up.potential = [](ConstPoint x) { return -0.5 * x.squaredNorm() + 0.25 * x.squaredNorm() * x.squaredNorm(); };
  up.derivative = [](ConstPoint x, const MultiIndex& g) {
    const int k = g[0] == 1 ? 0 : 1;
    return -x(k) + x.squaredNorm() * x(k);
  };
  // Near the origin b(x) = +x: anti-dissipative.
  std::vector<std::pair<Vector, Vector>> near;
  near.emplace_back(Vector::Constant(2, 0.1), Vector::Constant(2, -0.1));
  const auto bad = check_membership(DriftField::custom(std::move(up)), pc, near);
  EXPECT_FALSE(bad.pass);
  EXPECT_LT(bad.min_dissipativity_ratio, 0.0);
}
