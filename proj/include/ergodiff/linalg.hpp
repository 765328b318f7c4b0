#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ergodiff {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ConstPoint = Eigen::Ref<const Eigen::VectorXd>;

/// Raised when a matrix that must be positive semidefinite has a
/// materially negative eigenvalue.
class NotPositiveSemidefinite : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Symmetric PSD square root. Eigenvalues in [-rel_tol*|tr|, 0) are
/// clamped to zero; anything more negative throws.
inline Matrix psd_sqrt(const Matrix& s, double rel_tol = 1e-12)
{
  if (s.rows() != s.cols()) {
    throw std::invalid_argument("psd_sqrt: matrix is not square");
  }
  const Matrix sym = symmetrize(s);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  Vector values = eig.eigenvalues();
  const double floor = -rel_tol * std::abs(sym.trace());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) < floor) {
      std::ostringstream msg;
      msg << "psd_sqrt: eigenvalue " << values(i) << " below tolerance " << floor;
      throw NotPositiveSemidefinite(msg.str());
    }
    values(i) = std::sqrt(std::max(values(i), 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

/// S^{-1/2} for SPD S; eigenvalues are clamped at >= 1e-14 * trace.
inline Matrix spd_inverse_sqrt(const Matrix& s)
{
  const Matrix sym = symmetrize(s);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const double floor = 1e-14 * std::abs(sym.trace());
  Vector values = eig.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

inline double largest_eigenvalue(const Matrix& s)
{
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(s), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

inline double smallest_eigenvalue(const Matrix& s)
{
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(s), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

/// Spectral norm ||A|| = sup |Ax|/|x| (largest singular value).
inline double operator_norm(const Matrix& a)
{
  const Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

inline double condition_number(const Matrix& s)
{
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(s), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
}

/// ||a - b||_F / ||b||_F
inline double relative_frobenius(const Matrix& a, const Matrix& b)
{
  return (a - b).norm() / b.norm();
}

} // namespace ergodiff
