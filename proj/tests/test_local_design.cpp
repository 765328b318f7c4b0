#include <ergodiff/local_design.hpp>
#include <ergodiff/mc_stats.hpp>
#include <ergodiff/quadrature.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace ergodiff;

namespace {

long binomial(int n, int k)
{
  long r = 1;
  for (int i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
  }
  return r;
}

DiffusionPath frozen_path(const Vector& p, std::size_t n, double dt)
{
  DiffusionPath path;
  path.dt = dt;
  path.states = p.replicate(1, static_cast<Eigen::Index>(n + 1));
  path.increments = Matrix::Zero(p.size(), static_cast<Eigen::Index>(n));
  return path;
}

} // namespace

TEST(BasisIndex, GradedLexOrder)
{
  const BasisIndex b(2, 2);
  ASSERT_EQ(b.size(), 6);
  const std::vector<MultiIndex> expected{{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(b.alpha(i), expected[static_cast<std::size_t>(i)]);
  }
  EXPECT_DOUBLE_EQ(b.factorial(3), 2.0);
  EXPECT_EQ(b.degree(4), 2);
  for (int d = 1; d <= 4; ++d) {
    for (int order = 0; order <= 4; ++order) {
      EXPECT_EQ(BasisIndex(d, order).size(), binomial(order + d, d));
    }
  }
  EXPECT_THROW(BasisIndex(0, 1), std::invalid_argument);
  EXPECT_THROW(BasisIndex(1, -1), std::invalid_argument);
}

TEST(BasisIndex, EvaluateMonomials)
{
  const BasisIndex b(2, 2);
  Vector x(2);
  x << 0.5, -2.0;
  const Vector v = basis_vector(b, x);
  Vector expected(6);
  expected << 1.0, 0.5, -2.0, 0.125, -1.0, 2.0;
  EXPECT_LT((v - expected).norm(), 1e-15);
}

TEST(MatrixV, HandWrittenSmallCases)
{
  Matrix v1(3, 3);
  v1 << 1, 1.0 / 2, 1.0 / 6, 1.0 / 2, 1.0 / 3, 1.0 / 8, 1.0 / 6, 1.0 / 8, 1.0 / 20;
  EXPECT_LT((matrix_V(BasisIndex(1, 2)) - v1).cwiseAbs().maxCoeff(), 1e-15);
  Matrix v2(3, 3);
  v2 << 1, 0.5, 0.5, 0.5, 1.0 / 3, 0.25, 0.5, 0.25, 1.0 / 3;
  EXPECT_LT((matrix_V(BasisIndex(2, 1)) - v2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MatrixV, MatchesQuadrature)
{
  const BasisIndex b(3, 2);
  const Matrix q = integrate_box(
      [&](const Vector& u) {
        const Vector v = basis_vector(b, u);
        return Matrix(v * v.transpose());
      },
      Vector::Zero(3), Vector::Ones(3), 1, 7);
  EXPECT_LT((matrix_V(b) - q).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(LocalDesign, GridAndCells)
{
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  EXPECT_EQ(design.per_axis(), 4);
  EXPECT_EQ(design.cells(), 16);
  EXPECT_EQ(design.K(), 6);
  Vector x(2);
  x << -0.75, 0.1;
  const int m = design.cell_of(x);
  ASSERT_GE(m, 0);
  EXPECT_EQ(design.corner(m), (Vector(2) << -1.0, 0.0).finished());
  EXPECT_EQ(design.cell_of(Vector::Constant(2, 1.0)), -1);
  EXPECT_EQ(design.cell_of(Vector::Constant(2, -1.0)), 0);
  EXPECT_THROW(design.corner(16), std::out_of_range);
  EXPECT_THROW(LocalDesign(1.0, 0.3, BasisIndex(2, 2)), std::invalid_argument);
  EXPECT_THROW(LocalDesign(1.0, 0.0, BasisIndex(2, 2)), std::invalid_argument);
  const Matrix jh = design.Jh();
  EXPECT_DOUBLE_EQ(jh(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(jh(2, 2), 0.5);
  EXPECT_DOUBLE_EQ(jh(5, 5), 0.25);
}

TEST(LocalDesign, JmMassEntryMatchesErf)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  for (int m : {0, 5, 15}) {
    const Vector lo = design.corner(m);
    const Matrix J = matrix_Jm(ou, design, m);
    const double mass = 0.25 * (std::erf(lo(0) + 0.5) - std::erf(lo(0))) * (std::erf(lo(1) + 0.5) - std::erf(lo(1)));
    EXPECT_NEAR(J(0, 0), mass, 1e-14);
    EXPECT_LT((J - matrix_Jm(ou, design, m, 4, 20)).norm(), 1e-14 * J.norm());
    EXPECT_LT((J - J.transpose()).norm(), 1e-16);
  }
  EXPECT_THROW(matrix_Jm(ou, design, 16), std::out_of_range);
}

TEST(LocalDesign, CellMatricesAreConsistent)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  const auto cells = design_matrices(ou, design);
  ASSERT_EQ(cells.size(), 16u);
  const auto& c = cells[6];
  const Matrix I = Matrix::Identity(6, 6);
  EXPECT_LT((c.J * c.J_inv - I).norm(), 1e-8);
  EXPECT_LT((c.J_sqrt * c.J_sqrt - c.J).norm(), 1e-12 * c.J.norm());
  EXPECT_LT((c.J_inv_sqrt * c.J * c.J_inv_sqrt - I).norm(), 1e-6);
}

TEST(StoppingRule, FrozenPathCrossesAtPredictedStep)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  const auto cells = design_matrices(ou, design);
  Vector p(2);
  p << 0.2, 0.3;
  const int m = design.cell_of(p);
  const auto path = frozen_path(p, 20000, 1e-3);
  const Vector g = basis_vector(design.basis(), p - design.corner(m));
  // Rank one accumulation: the largest eigenvalue is k dt g' J^-1 g.
  const double per_step = 1e-3 * g.dot(cells[static_cast<std::size_t>(m)].J_inv * g);
  const double threshold = 20.0;
  const auto expected = static_cast<std::size_t>(std::ceil(threshold / per_step)) - 1;
  const auto tau = stopping_time(path, design, m, cells[static_cast<std::size_t>(m)], threshold);
  ASSERT_TRUE(tau.stopped);
  EXPECT_EQ(tau.step, expected);
  EXPECT_NEAR(tau.tau, static_cast<double>(expected) * 1e-3, 1e-12);
  // Never-visited cell: tau = T.
  const auto other = stopping_time(path, design, 0, cells[0], threshold);
  EXPECT_FALSE(other.stopped);
  EXPECT_DOUBLE_EQ(other.tau, path.horizon());
  const Matrix Jhat = empirical_Jm(path, design, m, tau.tau);
  EXPECT_LT((Jhat - static_cast<double>(expected) * 1e-3 * g * g.transpose()).norm(), 1e-9);
  EXPECT_LT(largest_eigenvalue(cells[static_cast<std::size_t>(m)].J_inv_sqrt * Jhat *
                               cells[static_cast<std::size_t>(m)].J_inv_sqrt),
            threshold);
}

TEST(TaylorField, ExactForLinearDrift)
{
  QuadraticPotential q{2.0, (Vector(2) << 0.3, -0.1).finished()};
  const auto field = DriftField::quadratic(q);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  const TaylorField bar(field, design, &field);
  for (const auto& x : grid_points(2, 1.4, 9)) {
    EXPECT_LT((bar(x) - field.drift(x)).norm(), 1e-13);
  }
  // Outside A the fallback field is used.
  const auto center = DriftField::ornstein_uhlenbeck(2);
  const TaylorField with_center(field, design, &center);
  const Vector far = Vector::Constant(2, 1.2);
  EXPECT_LT((with_center(far) - center.drift(far)).norm(), 1e-15);
}

TEST(TaylorField, ThetaTableOfShiftedOrnsteinUhlenbeck)
{
  const auto center = DriftField::ornstein_uhlenbeck(2, 1.0);
  const auto field = DriftField::ornstein_uhlenbeck(2, 2.0);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  const Matrix theta = theta_table(field, center, design);
  ASSERT_EQ(theta.rows(), 6);
  ASSERT_EQ(theta.cols(), 32);
  for (int i = 0; i < 2; ++i) {
    for (int m = 0; m < 16; ++m) {
      Vector expected = Vector::Zero(6);
      expected(0) = -design.corner(m)(i);
      expected(1 + i) = -1.0;
      EXPECT_LT((theta.col(i * 16 + m) - expected).norm(), 1e-14);
    }
  }
}

TEST(Scaling, DeviationShrinksWithBandwidth)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const Matrix V = matrix_V(BasisIndex(2, 2));
  double previous = 1e9;
  for (double h : {0.2, 0.1, 0.05}) {
    const LocalDesign design(1.0, h, BasisIndex(2, 2));
    const int m = design.cell_of(Vector::Constant(2, 0.01));
    const auto s = scaling_statistic(ou, design, m, matrix_Jm(ou, design, m), V);
    EXPECT_LT(s.deviation, previous);
    previous = s.deviation;
  }
}

TEST(BasisIndex, SmallCases)
{
  const BasisIndex b(3, 0);
  ASSERT_EQ(b.size(), 1);
  EXPECT_EQ(b.alpha(0), (MultiIndex{0, 0, 0}));
  EXPECT_EQ(basis_vector(BasisIndex(2, 1), (Vector(2) << 2.0, 3.0).finished()), (Vector(3) << 1, 2, 3).finished());
  EXPECT_EQ(basis_vector(BasisIndex(1, 2), Vector::Constant(1, 2.0)), (Vector(3) << 1, 2, 2).finished());
  const Vector e1 = basis_vector(BasisIndex(2, 2), Vector::Zero(2));
  EXPECT_EQ(e1, (Vector(6) << 1, 0, 0, 0, 0, 0).finished());
  Matrix v(2, 2);
  v << 1, 0.5, 0.5, 1.0 / 3;
  EXPECT_LT((matrix_V(BasisIndex(1, 1)) - v).norm(), 1e-15);
  for (int d = 1; d <= 3; ++d) {
    EXPECT_GT(smallest_eigenvalue(matrix_V(BasisIndex(d, 3))), 0.0);
  }
}

TEST(LocalDesign, JmRefinementAtSmallBandwidth)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const LocalDesign design(1.0, 0.1, BasisIndex(2, 2));
  const int m = design.cell_of(Vector::Constant(2, 1e-9));
  ASSERT_LT(design.corner(m).norm(), 1e-12);
  const Matrix J = matrix_Jm(ou, design, m);
  EXPECT_LT(relative_frobenius(J, matrix_Jm(ou, design, m, 10, 20)), 1e-8);
}

TEST(LocalDesign, EmpiricalJmMeanIsTJm)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  const int m = design.cell_of(Vector::Constant(2, 0.1));
  const Matrix J = matrix_Jm(ou, design, m);
  SimConfig cfg;
  cfg.T = 10.0;
  const int n = 500;
  Matrix samples(n, 36);
  for (int r = 0; r < n; ++r) {
    const auto path = simulate_path(ou, cfg, static_cast<std::uint64_t>(r), false);
    const Matrix Jhat = empirical_Jm(path, design, m, cfg.T);
    samples.row(r) = Eigen::Map<const Vector>(Jhat.data(), 36).transpose();
    if (r == 0) {
      double prev = -1.0;
      for (double t = 0.0; t <= cfg.T; t += 0.5) {
        const double tr = empirical_Jm(path, design, m, t).trace();
        EXPECT_GE(tr, prev);
        prev = tr;
      }
    }
  }
  const Vector expected = Eigen::Map<const Vector>(Matrix(cfg.T * J).data(), 36);
  const Vector z = (mc::column_means(samples) - expected).cwiseQuotient(mc::mean_standard_errors(samples));
  EXPECT_LT(z.cwiseAbs().maxCoeff(), 3.5);
}

TEST(StoppingRule, ZeroThresholdIsFirstEntry)
{
  const auto ou = DriftField::ornstein_uhlenbeck(2);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  const auto cells = design_matrices(ou, design);
  SimConfig cfg;
  cfg.T = 5.0;
  const auto path = simulate_path(ou, cfg, 1, false);
  for (int m = 0; m < design.cells(); ++m) {
    std::size_t entry = path.steps();
    for (std::size_t k = 0; k < path.steps(); ++k) {
      if (design.cell_of(path.states.col(static_cast<Eigen::Index>(k))) == m) {
        entry = k;
        break;
      }
    }
    const auto tau = stopping_time(path, design, m, cells[static_cast<std::size_t>(m)], 0.0);
    EXPECT_EQ(tau.step, entry);
    EXPECT_EQ(tau.stopped, entry < path.steps());
  }
}

TEST(TaylorField, RemainderIsSecondOrder)
{
  const auto bump = make_bump_perturbation({1.0, Vector::Zero(2)}, 0.1, Vector::Zero(2), 0.9, 5);
  std::vector<double> scaled;
  for (double h : {0.2, 0.1, 0.05}) {
    // Taylor order floor(beta) = 2: the remainder of the drift is O(h^3) <= O(h^2).
    const LocalDesign design(1.0, h, BasisIndex(2, 2));
    const TaylorField bar(bump, design);
    double worst = 0.0;
    for (const auto& x : grid_points(2, 0.99, 37)) {
      worst = std::max(worst, (bar(x) - bump.drift(x)).norm());
    }
    scaled.push_back(worst / (h * h));
  }
  EXPECT_LT(scaled[1], 1.2 * scaled[0]);
  EXPECT_LT(scaled[2], 1.2 * scaled[1]);
}

TEST(TaylorField, ThetaVectorsAndQuadraticForm)
{
  const auto center = DriftField::ornstein_uhlenbeck(2);
  const auto bump = make_bump_perturbation({1.0, Vector::Zero(2)}, 0.1, Vector::Zero(2), 0.9, 5);
  const LocalDesign design(1.0, 0.5, BasisIndex(2, 2));
  EXPECT_EQ(theta_table(center, center, design).cwiseAbs().maxCoeff(), 0.0);
  const TaylorField bar(bump, design, &center);
  const TaylorField bar0(center, design, &center);
  for (int m : {5, 6, 9, 10}) {
    const Matrix J = matrix_Jm(center, design, m);
    for (int j = 0; j < 2; ++j) {
      const Vector th = theta_vector(bump, center, design, m, j);
      const Vector lo = design.corner(m);
      const Vector hi = lo.array() + 0.5;
      const double quad = integrate_box(
          [&](const Vector& x) {
            const double diff = bar(x)(j) - bar0(x)(j);
            return diff * diff * center.density(x);
          },
          lo, hi, 4, 20);
      EXPECT_NEAR(th.dot(J * th), quad, 1e-6 * quad);
    }
  }
}
