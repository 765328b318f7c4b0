#include <ergodiff/linalg.hpp>
#include <ergodiff/mc_stats.hpp>
#include <ergodiff/quadrature.hpp>
#include <ergodiff/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ergodiff;

// Known-answer vectors from the Random123 distribution (kat_vectors).
TEST(Philox, KnownAnswers)
{
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  EXPECT_EQ(Philox4x32::block(A4{0, 0, 0, 0}, A2{0, 0}),
            (A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Philox4x32::block(A4{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                              A2{0xffffffffu, 0xffffffffu}),
            (A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Philox4x32::block(A4{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                              A2{0xa4093822u, 0x299f31d0u}),
            (A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, StreamsAreReproducibleAndDistinct)
{
  auto a = make_stream(7, 3, StreamRole::path);
  auto b = make_stream(7, 3, StreamRole::path);
  auto c = make_stream(7, 3, StreamRole::coupling_noise);
  auto e = make_stream(7, 4, StreamRole::path);
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
    EXPECT_NE(x, e());
  }
}

TEST(Philox, UniformMoments)
{
  Philox4x32 g(11, 0);
  std::uniform_real_distribution<double> u;
  double s = 0.0;
  double s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = u(g);
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.5, 5 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(s2 / n, 1.0 / 3, 0.005);
}

TEST(Linalg, PsdSqrtSquaresBack)
{
  Matrix s(3, 3);
  s << 4, 1, 0.5, 1, 3, 0.2, 0.5, 0.2, 2;
  const Matrix r = psd_sqrt(s);
  EXPECT_LT((r * r - s).norm(), 1e-12);
  EXPECT_LT((r - r.transpose()).norm(), 1e-14);
  const Matrix ri = spd_inverse_sqrt(s);
  EXPECT_LT((ri * s * ri - Matrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(Linalg, PsdSqrtClampsRoundingAndRejectsNegative)
{
  Matrix s = Matrix::Zero(2, 2);
  s(0, 0) = 1.0;
  s(1, 1) = -1e-15;
  const Matrix r = psd_sqrt(s);
  EXPECT_DOUBLE_EQ(r(1, 1), 0.0);
  s(1, 1) = -0.1;
  EXPECT_THROW(psd_sqrt(s), NotPositiveSemidefinite);
  EXPECT_THROW(psd_sqrt(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(Linalg, EigenAndNorms)
{
  Matrix s = Vector::LinSpaced(3, 1.0, 3.0).asDiagonal();
  EXPECT_NEAR(largest_eigenvalue(s), 3.0, 1e-14);
  EXPECT_NEAR(operator_norm(s), 3.0, 1e-14);
  EXPECT_NEAR(condition_number(s), 3.0, 1e-12);
  EXPECT_NEAR(relative_frobenius(2 * s, s), 1.0, 1e-14);
}

TEST(Quadrature, ExactForPolynomials)
{
  Vector lo(2);
  Vector hi(2);
  lo << 0.0, -1.0;
  hi << 2.0, 1.0;
  // int x^5 y^4 = (64/6) (2/5)
  const double v = integrate_box([](const Vector& x) { return std::pow(x(0), 5) * std::pow(x(1), 4); }, lo, hi, 1, 7);
  EXPECT_NEAR(v, 64.0 / 6.0 * 0.4, 1e-12);
  const double g = integrate_box_checked([](const Vector& x) { return std::exp(-x.squaredNorm()); }, lo, hi, 1e-12);
  EXPECT_NEAR(g, 0.5 * std::sqrt(M_PI) * std::erf(2.0) * std::sqrt(M_PI) * std::erf(1.0), 1e-12);
}

TEST(Quadrature, RejectsBadInput)
{
  Vector lo = Vector::Zero(2);
  Vector hi = Vector::Ones(3);
  EXPECT_THROW(integrate_box([](const Vector&) { return 1.0; }, lo, hi), std::invalid_argument);
  // Discontinuous integrand never meets a 1e-15 tolerance.
  Vector h1 = Vector::Ones(1);
  Vector l1 = Vector::Zero(1);
  EXPECT_THROW(integrate_box_checked([](const Vector& x) { return x(0) < 1.0 / 3.0 ? 1.0 : 0.0; }, l1, h1, 1e-15),
               QuadratureError);
}

TEST(McStats, MomentsOfKnownSample)
{
  Matrix x(4, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8;
  const Vector m = mc::column_means(x);
  EXPECT_DOUBLE_EQ(m(0), 2.5);
  const Matrix c = mc::sample_covariance(x);
  EXPECT_NEAR(c(0, 0), 5.0 / 3.0, 1e-14);
  EXPECT_NEAR(c(0, 1), 10.0 / 3.0, 1e-14);
  EXPECT_NEAR(mc::correlation(c)(0, 1), 1.0, 1e-14);
  EXPECT_NEAR(mc::skewness(x.col(0)), 0.0, 1e-14);
}

TEST(McStats, MeanDifferenceZ)
{
  Matrix a(3, 1);
  Matrix b(3, 1);
  a << 1, 2, 3;
  b << 1, 2, 3;
  EXPECT_DOUBLE_EQ(mc::mean_difference_z(a, b)(0), 0.0);
  Matrix c = Matrix::Constant(3, 1, 1.0);
  Matrix e = Matrix::Constant(3, 1, 2.0);
  EXPECT_TRUE(std::isinf(mc::mean_difference_z(c, e)(0)));
}
