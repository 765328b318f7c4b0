#pragma once

#include "linalg.hpp"

#include <cmath>
#include <stdexcept>

// Monte Carlo summaries over sample matrices: rows are replicates,
// columns are variables.
namespace ergodiff::mc {

inline Vector column_means(const Matrix& samples) { return samples.colwise().mean().transpose(); }

/// Unbiased sample covariance of the columns.
inline Matrix sample_covariance(const Matrix& samples)
{
  const auto n = samples.rows();
  if (n < 2) {
    throw std::invalid_argument("sample_covariance: need at least two replicates");
  }
  const Matrix centred = samples.rowwise() - samples.colwise().mean();
  return (centred.transpose() * centred) / static_cast<double>(n - 1);
}

/// Unbiased sample variance of each column.
inline Vector column_variances(const Matrix& samples)
{
  const auto n = samples.rows();
  if (n < 2) {
    throw std::invalid_argument("column_variances: need at least two replicates");
  }
  const Matrix centred = samples.rowwise() - samples.colwise().mean();
  return centred.colwise().squaredNorm().transpose() / static_cast<double>(n - 1);
}

/// Monte Carlo standard error of each column mean.
inline Vector mean_standard_errors(const Matrix& samples)
{
  return (column_variances(samples) / static_cast<double>(samples.rows())).cwiseSqrt();
}

inline double mean(const Vector& x) { return x.mean(); }

inline double variance(const Vector& x)
{
  const double m = x.mean();
  return (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
}

inline double skewness(const Vector& x)
{
  const double m = x.mean();
  const auto c = (x.array() - m).eval();
  const double m2 = c.square().mean();
  const double m3 = c.cube().mean();
  return m3 / std::pow(m2, 1.5);
}

inline double excess_kurtosis(const Vector& x)
{
  const double m = x.mean();
  const auto c = (x.array() - m).eval();
  const double m2 = c.square().mean();
  const double m4 = c.square().square().mean();
  return m4 / (m2 * m2) - 3.0;
}

/// Scale a covariance matrix to unit diagonal.
inline Matrix correlation(const Matrix& cov)
{
  const Vector inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  return inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
}

/// Difference of column means in units of the pooled standard error
/// sqrt(s1^2/n1 + s2^2/n2).
inline Vector mean_difference_z(const Matrix& a, const Matrix& b)
{
  const Vector se2 = column_variances(a) / static_cast<double>(a.rows()) +
                     column_variances(b) / static_cast<double>(b.rows());
  const Vector diff = column_means(a) - column_means(b);
  Vector z(diff.size());
  for (Eigen::Index k = 0; k < diff.size(); ++k) {
    z(k) = se2(k) > 0 ? diff(k) / std::sqrt(se2(k)) : (diff(k) == 0 ? 0.0 : INFINITY);
  }
  return z;
}

/// Largest |z| for the deviation of each column mean from `expected`.
inline double max_abs_z(const Matrix& samples, const Vector& expected)
{
  const Vector se = mean_standard_errors(samples);
  return (column_means(samples) - expected).cwiseQuotient(se).cwiseAbs().maxCoeff();
}

} // namespace ergodiff::mc
