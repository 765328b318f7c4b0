#pragma once

#include "drift_models.hpp"
#include "sde_sim.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ergodiff {

/// Tensorised compactly supported kernel K(x) = prod_i k(x_i) with
/// k(u) = (1 - u^2)^2 p(u) on [-1, 1], p of degree q chosen so that
/// int k = 1 and int k(u) u^a du = 0 for 1 <= a <= q.
class Kernel
{
public:
  Kernel(int order, std::vector<double> coefficients)
    : order_(order), coeffs_(std::move(coefficients))
  {
  }

  int order() const { return order_; }
  const std::vector<double>& coefficients() const { return coeffs_; }

  /// 1-d profile k(u).
  double profile(double u) const
  {
    if (std::abs(u) >= 1.0) {
      return 0.0;
    }
    double p = 0.0;
    for (std::size_t j = coeffs_.size(); j-- > 0;) {
      p = p * u + coeffs_[j];
    }
    const double w = 1.0 - u * u;
    return w * w * p;
  }

  /// K(x) = prod_i k(x_i).
  double operator()(ConstPoint x) const
  {
    double prod = 1.0;
    for (Eigen::Index i = 0; i < x.size() && prod != 0.0; ++i) {
      prod *= profile(x(i));
    }
    return prod;
  }

  /// K_h(x) = h^{-d} K(x/h).
  double scaled(ConstPoint x, double h) const
  {
    double prod = 1.0;
    for (Eigen::Index i = 0; i < x.size() && prod != 0.0; ++i) {
      prod *= profile(x(i) / h) / h;
    }
    return prod;
  }

private:
  int order_;
  std::vector<double> coeffs_;
};

/// int_{-1}^{1} (1 - u^2)^2 u^n du.
inline double biweight_moment(int n)
{
  if (n % 2 == 1) {
    return 0.0;
  }
  return 2.0 * (1.0 / (n + 1) - 2.0 / (n + 3) + 1.0 / (n + 5));
}

inline Kernel build_kernel(int q)
{
  if (q < 0) {
    throw std::invalid_argument("build_kernel: order must be non-negative");
  }
  // Moment system sum_l c_l m_{a+l} = delta_{a0}, a = 0..q (Hankel, SPD).
  const int n = q + 1;
  Matrix hankel(n, n);
  for (int a = 0; a < n; ++a) {
    for (int l = 0; l < n; ++l) {
      hankel(a, l) = biweight_moment(a + l);
    }
  }
  Vector rhs = Vector::Zero(n);
  rhs(0) = 1.0;
  const Eigen::LDLT<Matrix> ldlt(hankel);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw std::logic_error("build_kernel: singular moment system");
  }
  const Vector c = ldlt.solve(rhs);
  std::vector<double> coeffs(c.data(), c.data() + c.size());
  // Odd coefficients vanish by symmetry; remove rounding residue.
  for (std::size_t j = 1; j < coeffs.size(); j += 2) {
    coeffs[j] = 0.0;
  }
  return Kernel(q, std::move(coeffs));
}

/// mu_hat(x) = T^{-1} sum_k K_h(x - X_k) dt.
inline double density_estimate(const DiffusionPath& path, ConstPoint x, double h, const Kernel& kernel)
{
  if (!(h > 0)) {
    throw std::invalid_argument("density_estimate: bandwidth must be positive");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < path.steps(); ++k) {
    acc += kernel.scaled(x - path.states.col(static_cast<Eigen::Index>(k)), h);
  }
  return acc / static_cast<double>(path.steps());
}

/// b_hat(x) = sum_k K_h(x - X_k) dX_k / (T max(mu_hat(x), mu_*(x))).
inline Vector drift_estimate(const DiffusionPath& path, ConstPoint x, double h, const Kernel& kernel,
                             double mu_star_at_x)
{
  if (!(h > 0)) {
    throw std::invalid_argument("drift_estimate: bandwidth must be positive");
  }
  Vector numerator = Vector::Zero(path.dim());
  double occupation = 0.0;
  for (std::size_t k = 0; k < path.steps(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    const double w = kernel.scaled(x - path.states.col(col), h);
    if (w != 0.0) {
      numerator += w * path.increments.col(col);
      occupation += w;
    }
  }
  const double T = path.horizon();
  const double mu_hat = occupation * path.dt / T;
  return numerator / (T * std::max(mu_hat, mu_star_at_x));
}

inline Vector drift_estimate(const DiffusionPath& path, ConstPoint x, double h, const Kernel& kernel,
                             const ParameterClass& pc)
{
  return drift_estimate(path, x, h, kernel, mu_star(pc, x));
}

/// Streaming accumulator for both estimators at a fixed point, for use as
/// a simulate_stream visitor.
class PointEstimator
{
public:
  PointEstimator(Vector x, double h, const Kernel& kernel, double dt)
    : x_(std::move(x)), h_(h), kernel_(&kernel), dt_(dt), numerator_(Vector::Zero(x_.size())),
      diff_(x_.size())
  {
  }

  void operator()(std::size_t, const Vector& state, const Vector& dx, const Vector&)
  {
    diff_ = x_ - state;
    const double w = kernel_->scaled(diff_, h_);
    ++steps_;
    if (w != 0.0) {
      occupation_ += w;
      numerator_ += w * dx;
    }
  }

  double density() const { return occupation_ / static_cast<double>(steps_); }

  Vector drift(double mu_star_at_x) const
  {
    const double T = dt_ * static_cast<double>(steps_);
    return numerator_ / (T * std::max(density(), mu_star_at_x));
  }

private:
  Vector x_;
  double h_;
  const Kernel* kernel_;
  double dt_;
  Vector numerator_;
  Vector diff_;
  double occupation_ = 0.0;
  std::size_t steps_ = 0;
};

struct RateFit
{
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

/// Least-squares slope of log(MSE) against log(T).
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& table)
{
  std::vector<double> distinct;
  for (const auto& [t, mse] : table) {
    if (!(t > 0 && mse > 0)) {
      throw std::invalid_argument("rate_fit: T and MSE must be positive");
    }
    bool seen = false;
    for (double s : distinct) {
      seen = seen || s == t;
    }
    if (!seen) {
      distinct.push_back(t);
    }
  }
  if (distinct.size() < 2) {
    throw std::invalid_argument("rate_fit: degenerate table (all T equal)");
  }
  if (distinct.size() < 4) {
    throw std::invalid_argument("rate_fit: need at least 4 distinct T values");
  }
  const auto n = static_cast<double>(table.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [t, mse] : table) {
    mx += std::log(t);
    my += std::log(mse);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& [t, mse] : table) {
    const double dx = std::log(t) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(mse) - my);
  }
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (const auto& [t, mse] : table) {
    const double r = std::log(mse) - fit.intercept - fit.slope * std::log(t);
    rss += r * r;
  }
  fit.slope_se = table.size() > 2 ? std::sqrt(rss / (n - 2.0) / sxx) : 0.0;
  return fit;
}

/// Theoretical squared-risk slopes for the rule bandwidth h ~ T^{-1/(2beta+d)}.
inline double drift_risk_slope(double beta, int d) { return -2.0 * beta / (2.0 * beta + d); }

inline double density_risk_slope(double beta, int d)
{
  if (d <= 2) {
    return -1.0; // up to the (log T)^4 factor at d = 2
  }
  return -2.0 * (beta + 1.0) / (2.0 * beta + d);
}

} // namespace ergodiff
