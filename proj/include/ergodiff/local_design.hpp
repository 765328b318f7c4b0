#pragma once

#include "drift_models.hpp"
#include "quadrature.hpp"
#include "sde_sim.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ergodiff {

/// Multi-indices |alpha| <= order in graded lexicographic order (higher
/// first coordinate first within a degree), so alpha(1) = 0 and v_1 == 1.
class BasisIndex
{
public:
  BasisIndex(int d, int order) : d_(d), order_(order)
  {
    if (d < 1 || order < 0) {
      throw std::invalid_argument("BasisIndex: need d >= 1 and order >= 0");
    }
    MultiIndex current(static_cast<std::size_t>(d), 0);
    for (int degree = 0; degree <= order; ++degree) {
      emit(0, degree, current);
    }
    for (const auto& a : alpha_) {
      double f = 1.0;
      for (int e : a) {
        for (int k = 2; k <= e; ++k) {
          f *= k;
        }
      }
      factorial_.push_back(f);
      degree_.push_back(order_of(a));
    }
  }

  int dim() const { return d_; }
  int order() const { return order_; }
  int size() const { return static_cast<int>(alpha_.size()); }
  const MultiIndex& alpha(int i) const { return alpha_[static_cast<std::size_t>(i)]; }
  double factorial(int i) const { return factorial_[static_cast<std::size_t>(i)]; }
  int degree(int i) const { return degree_[static_cast<std::size_t>(i)]; }

  /// v(x) with components x^alpha(i) / alpha(i)!, written into `out`.
  void evaluate(ConstPoint x, Eigen::Ref<Vector> out) const
  {
    double powers[16][16];
    if (d_ > 16 || order_ > 15) {
      throw std::invalid_argument("BasisIndex: dimension or order too large");
    }
    for (int j = 0; j < d_; ++j) {
      powers[j][0] = 1.0;
      for (int e = 1; e <= order_; ++e) {
        powers[j][e] = powers[j][e - 1] * x(j);
      }
    }
    for (int i = 0; i < size(); ++i) {
      const auto& a = alpha_[static_cast<std::size_t>(i)];
      double v = 1.0;
      for (int j = 0; j < d_; ++j) {
        v *= powers[j][a[static_cast<std::size_t>(j)]];
      }
      out(i) = v / factorial_[static_cast<std::size_t>(i)];
    }
  }

private:
  void emit(int pos, int remaining, MultiIndex& current)
  {
    if (pos == d_ - 1) {
      current[static_cast<std::size_t>(pos)] = remaining;
      alpha_.push_back(current);
      return;
    }
    for (int a = remaining; a >= 0; --a) {
      current[static_cast<std::size_t>(pos)] = a;
      emit(pos + 1, remaining - a, current);
    }
  }

  int d_;
  int order_;
  std::vector<MultiIndex> alpha_;
  std::vector<double> factorial_;
  std::vector<int> degree_;
};

inline BasisIndex enumerate_multiindices(int d, int order) { return BasisIndex(d, order); }

inline Vector basis_vector(const BasisIndex& basis, ConstPoint x)
{
  Vector out(basis.size());
  basis.evaluate(x, out);
  return out;
}

/// V = int_{[0,1]^d} v v^T dx, exact.
inline Matrix matrix_V(const BasisIndex& basis)
{
  const int K = basis.size();
  Matrix V(K, K);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      double prod = 1.0 / (basis.factorial(i) * basis.factorial(j));
      for (int k = 0; k < basis.dim(); ++k) {
        prod /= basis.alpha(i)[static_cast<std::size_t>(k)] + basis.alpha(j)[static_cast<std::size_t>(k)] + 1;
      }
      V(i, j) = prod;
    }
  }
  return V;
}

/// Partition of A = [-a, a)^d into M = (2a/h)^d cubes C_m with lower
/// corners a_m; cell index m runs with the first coordinate fastest.
class LocalDesign
{
public:
  LocalDesign(double a, double h, BasisIndex basis) : a_(a), h_(h), basis_(std::move(basis))
  {
    if (!(a > 0 && h > 0)) {
      throw std::invalid_argument("LocalDesign: need a > 0 and h > 0");
    }
    const double ratio = a / h;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
      throw std::invalid_argument("LocalDesign: a/h must be a positive integer");
    }
    per_axis_ = 2 * static_cast<int>(std::llround(ratio));
    cells_ = 1;
    for (int k = 0; k < dim(); ++k) {
      cells_ *= per_axis_;
    }
    corners_.reserve(static_cast<std::size_t>(cells_));
    for (int m = 0; m < cells_; ++m) {
      const auto c = cell_coords(m);
      Vector x(dim());
      for (int k = 0; k < dim(); ++k) {
        x(k) = -a_ + c[static_cast<std::size_t>(k)] * h_;
      }
      corners_.push_back(std::move(x));
    }
  }

  int dim() const { return basis_.dim(); }
  double half_width() const { return a_; }
  double h() const { return h_; }
  int per_axis() const { return per_axis_; }
  int cells() const { return cells_; }
  int K() const { return basis_.size(); }
  const BasisIndex& basis() const { return basis_; }

  /// Integer coordinates of cell m.
  std::vector<int> cell_coords(int m) const
  {
    std::vector<int> c(static_cast<std::size_t>(dim()));
    for (int k = 0; k < dim(); ++k) {
      c[static_cast<std::size_t>(k)] = m % per_axis_;
      m /= per_axis_;
    }
    return c;
  }

  Vector corner(int m) const { return corner_ref(m); }

  const Vector& corner_ref(int m) const
  {
    if (m < 0 || m >= cells_) {
      throw std::out_of_range("LocalDesign: cell index out of range");
    }
    return corners_[static_cast<std::size_t>(m)];
  }

  /// Index of the cell containing x, or -1 outside A.
  int cell_of(ConstPoint x) const
  {
    int m = 0;
    int stride = 1;
    for (int k = 0; k < dim(); ++k) {
      const double t = std::floor((x(k) + a_) / h_);
      if (t < 0 || t >= per_axis_) {
        return -1;
      }
      m += static_cast<int>(t) * stride;
      stride *= per_axis_;
    }
    return m;
  }

  bool in_cell(ConstPoint x, int m) const { return cell_of(x) == m; }

  /// J_h = diag(h^{|alpha(i)|}).
  Matrix Jh() const
  {
    Vector diag(K());
    for (int i = 0; i < K(); ++i) {
      diag(i) = std::pow(h_, basis_.degree(i));
    }
    return diag.asDiagonal();
  }

private:
  double a_;
  double h_;
  BasisIndex basis_;
  int per_axis_ = 0;
  int cells_ = 0;
  std::vector<Vector> corners_;
};

/// J_m = int_{C_m} v(x - a_m) v(x - a_m)^T mu_b°(x) dx by tensor Gauss quadrature.
inline Matrix matrix_Jm(const DriftField& center, const LocalDesign& design, int m, int panels = 1,
                        int order = 20)
{
  if (m < 0 || m >= design.cells()) {
    throw std::out_of_range("matrix_Jm: cell index out of range");
  }
  const Vector lo = design.corner(m);
  const Vector hi = lo.array() + design.h();
  Vector v(design.K());
  return integrate_box(
      [&](const Vector& x) -> Matrix {
        design.basis().evaluate(x - lo, v);
        return (center.density(x) * v) * v.transpose();
      },
      lo, hi, panels, order);
}

/// J_m together with the factorizations used by the coupling.
struct CellMatrices
{
  Matrix J;
  Matrix J_inv;
  Matrix J_sqrt;
  Matrix J_inv_sqrt;
};

inline std::vector<CellMatrices> design_matrices(const DriftField& center, const LocalDesign& design)
{
  std::vector<CellMatrices> out(static_cast<std::size_t>(design.cells()));
  for (int m = 0; m < design.cells(); ++m) {
    auto& c = out[static_cast<std::size_t>(m)];
    c.J = symmetrize(matrix_Jm(center, design, m));
    c.J_inv = symmetrize(c.J.llt().solve(Matrix::Identity(design.K(), design.K())));
    c.J_sqrt = psd_sqrt(c.J);
    c.J_inv_sqrt = spd_inverse_sqrt(c.J);
  }
  return out;
}

inline std::size_t steps_upto(const DiffusionPath& path, double t)
{
  if (t > path.horizon() * (1.0 + 1e-12)) {
    throw std::invalid_argument("steps_upto: t exceeds the path horizon");
  }
  return std::min(path.steps(), static_cast<std::size_t>(std::llround(t / path.dt)));
}

/// Running J_hat_m(t) = sum_{t_k < t} 1_{C_m}(X_k) v v^T dt.
inline Matrix empirical_Jm(const DiffusionPath& path, const LocalDesign& design, int m, double t)
{
  const std::size_t n = steps_upto(path, t);
  const Vector corner = design.corner(m);
  Matrix acc = Matrix::Zero(design.K(), design.K());
  Vector v(design.K());
  for (std::size_t k = 0; k < n; ++k) {
    const auto x = path.states.col(static_cast<Eigen::Index>(k));
    if (design.cell_of(x) == m) {
      design.basis().evaluate(x - corner, v);
      acc.noalias() += path.dt * v * v.transpose();
    }
  }
  return acc;
}

struct StoppingTime
{
  double tau = 0.0;
  std::size_t step = 0; ///< number of steps accumulated before stopping
  bool stopped = false; ///< false when tau = T
};

/// Discrete stopping rule for || J^{-1/2} J_hat(t) J^{-1/2} || >= threshold.
/// The left-point increment of step k is known at t_k, so tau is the first
/// t_k at which accumulating that increment would reach the threshold; the
/// stopped matrix then satisfies J - J_hat(tau)/threshold > 0.
class StoppingRule
{
public:
  StoppingRule(const CellMatrices& cell, double threshold) : cell_(&cell), threshold_(threshold) {}

  /// True when adding increment `dt * g g^T` to `current` crosses the threshold.
  bool crosses(const Matrix& current, double current_trace, const Vector& g, double dt,
               double* increment_trace) const
  {
    const double inc = dt * g.dot(cell_->J_inv * g);
    *increment_trace = inc;
    if (inc <= 0.0) {
      return false;
    }
    // The largest eigenvalue is bounded by the trace; skip the eigen solve
    // while the trace stays below the threshold.
    if (current_trace + inc < threshold_) {
      return false;
    }
    const Matrix candidate = current + dt * g * g.transpose();
    const double norm = largest_eigenvalue(cell_->J_inv_sqrt * candidate * cell_->J_inv_sqrt);
    return norm >= threshold_ && norm > 0.0;
  }

  double threshold() const { return threshold_; }

private:
  const CellMatrices* cell_;
  double threshold_;
};

inline StoppingTime stopping_time(const DiffusionPath& path, const LocalDesign& design, int m,
                                  const CellMatrices& cell, double threshold)
{
  const StoppingRule rule(cell, threshold);
  const Vector corner = design.corner(m);
  Matrix acc = Matrix::Zero(design.K(), design.K());
  double trace = 0.0;
  Vector g(design.K());
  for (std::size_t k = 0; k < path.steps(); ++k) {
    const auto x = path.states.col(static_cast<Eigen::Index>(k));
    if (design.cell_of(x) != m) {
      continue;
    }
    design.basis().evaluate(x - corner, g);
    double inc = 0.0;
    if (rule.crosses(acc, trace, g, path.dt, &inc)) {
      return {static_cast<double>(k) * path.dt, k, true};
    }
    acc.noalias() += path.dt * g * g.transpose();
    trace += inc;
  }
  return {path.horizon(), path.steps(), false};
}

/// D^{alpha(k)} b_i(a_m) for all cells: entry m is a d x K matrix.
inline std::vector<Matrix> taylor_coefficients(const DriftField& field, const LocalDesign& design)
{
  std::vector<Matrix> table;
  table.reserve(static_cast<std::size_t>(design.cells()));
  const int d = design.dim();
  for (int m = 0; m < design.cells(); ++m) {
    const Vector corner = design.corner(m);
    Matrix D(d, design.K());
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < design.K(); ++k) {
        D(i, k) = field.drift_derivative(i, design.basis().alpha(k), corner);
      }
    }
    table.push_back(std::move(D));
  }
  return table;
}

/// Piecewise Taylor polynomial b_bar of a field: on C_m,
/// b_bar(x) = sum_k D^{alpha(k)} b(a_m) v_k(x - a_m); outside A it equals
/// `outside` (the centre b°), or the field itself when none is given.
class TaylorField
{
public:
  TaylorField(const DriftField& field, const LocalDesign& design, const DriftField* outside = nullptr)
    : field_(&field), outside_(outside ? outside : &field), design_(&design),
      coeffs_(taylor_coefficients(field, design)), v_(design.K())
  {
  }

  Vector operator()(ConstPoint x) const
  {
    Vector out(design_->dim());
    eval(x, out);
    return out;
  }

  void eval(ConstPoint x, Eigen::Ref<Vector> out) const
  {
    const int m = design_->cell_of(x);
    if (m < 0) {
      outside_->drift(x, out);
      return;
    }
    Vector v(design_->K());
    design_->basis().evaluate(x - design_->corner_ref(m), v);
    out = coeffs_[static_cast<std::size_t>(m)] * v;
  }

  /// Value on cell m at offset u = x - a_m (no cell lookup).
  double component_on_cell(int i, int m, const Vector& v_at_offset) const
  {
    return coeffs_[static_cast<std::size_t>(m)].row(i).dot(v_at_offset);
  }

  const Matrix& coefficients(int m) const { return coeffs_[static_cast<std::size_t>(m)]; }

private:
  const DriftField* field_;
  const DriftField* outside_;
  const LocalDesign* design_;
  std::vector<Matrix> coeffs_;
  Vector v_;
};

inline Vector taylor_field(const DriftField& field, const LocalDesign& design, ConstPoint x,
                           const DriftField* outside = nullptr)
{
  return TaylorField(field, design, outside)(x);
}

/// theta_j(a_m) = (D^{alpha(k)} (b_j - b°_j)(a_m))_k.
inline Vector theta_vector(const DriftField& field, const DriftField& center, const LocalDesign& design,
                           int m, int j)
{
  const Vector corner = design.corner(m);
  Vector theta(design.K());
  for (int k = 0; k < design.K(); ++k) {
    const auto& alpha = design.basis().alpha(k);
    theta(k) = field.drift_derivative(j, alpha, corner) - center.drift_derivative(j, alpha, corner);
  }
  return theta;
}

/// All theta vectors as a K x (d M) matrix, column i*M + m.
inline Matrix theta_table(const DriftField& field, const DriftField& center, const LocalDesign& design)
{
  const int d = design.dim();
  const int M = design.cells();
  Matrix table(design.K(), d * M);
  for (int i = 0; i < d; ++i) {
    for (int m = 0; m < M; ++m) {
      table.col(i * M + m) = theta_vector(field, center, design, m, i);
    }
  }
  return table;
}

/// Per-cell statistics of the design-matrix scaling: deviation
/// ||h^{-d} mu°(a_m)^{-1} J_h^{-1} J_m J_h^{-1} - V||_F and the inverse
/// bound ||h^d mu°(a_m) J_h J_m^{-1} J_h|| (to compare with 2||V^{-1}||).
struct ScalingStatistic
{
  double deviation = 0.0;
  double inverse_norm = 0.0;
  double condition = 0.0;
};

inline ScalingStatistic scaling_statistic(const DriftField& center, const LocalDesign& design, int m,
                                          const Matrix& Jm, const Matrix& V)
{
  const double mu = center.density(design.corner(m));
  const double hd = std::pow(design.h(), design.dim());
  const Matrix Jh = design.Jh();
  const Matrix Jh_inv = Jh.inverse();
  ScalingStatistic s;
  s.deviation = ((Jh_inv * Jm * Jh_inv) / (hd * mu) - V).norm();
  s.inverse_norm = operator_norm(hd * mu * Jh * Jm.llt().solve(Jh));
  s.condition = condition_number(Jm);
  return s;
}

} // namespace ergodiff
