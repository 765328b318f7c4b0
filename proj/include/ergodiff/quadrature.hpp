#pragma once

#include "linalg.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ergodiff {

class QuadratureError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Nodes and weights of a 1-d rule.
struct Rule1D
{
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

namespace detail {

template <unsigned N>
Rule1D unpack_gauss()
{
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& x = G::abscissa();
  const auto& w = G::weights();
  Rule1D rule;
  // Boost stores the non-negative half; for odd N the first node is 0.
  const bool odd = (N % 2) == 1;
  for (std::size_t i = x.size(); i-- > 0;) {
    if (odd && i == 0) {
      continue;
    }
    rule.nodes.push_back(-x[i]);
    rule.weights.push_back(w[i]);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    rule.nodes.push_back(x[i]);
    rule.weights.push_back(w[i]);
  }
  return rule;
}

} // namespace detail

/// Gauss-Legendre rule on [-1, 1]. Supported orders: 7, 10, 15, 20, 25, 30.
inline const Rule1D& gauss_legendre(int order)
{
  static const Rule1D g7 = detail::unpack_gauss<7>();
  static const Rule1D g10 = detail::unpack_gauss<10>();
  static const Rule1D g15 = detail::unpack_gauss<15>();
  static const Rule1D g20 = detail::unpack_gauss<20>();
  static const Rule1D g25 = detail::unpack_gauss<25>();
  static const Rule1D g30 = detail::unpack_gauss<30>();
  switch (order) {
  case 7: return g7;
  case 10: return g10;
  case 15: return g15;
  case 20: return g20;
  case 25: return g25;
  case 30: return g30;
  default:
    throw std::invalid_argument("gauss_legendre: unsupported order " + std::to_string(order));
  }
}

/// Composite rule on [lo, hi] with `panels` equal panels of a Gauss rule.
inline Rule1D composite_rule(double lo, double hi, int panels, int order)
{
  if (panels < 1 || !(hi > lo)) {
    throw std::invalid_argument("composite_rule: need hi > lo and panels >= 1");
  }
  const Rule1D& base = gauss_legendre(order);
  Rule1D rule;
  rule.nodes.reserve(base.size() * static_cast<std::size_t>(panels));
  rule.weights.reserve(rule.nodes.capacity());
  const double width = (hi - lo) / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * width;
    for (std::size_t i = 0; i < base.size(); ++i) {
      rule.nodes.push_back(mid + 0.5 * width * base.nodes[i]);
      rule.weights.push_back(0.5 * width * base.weights[i]);
    }
  }
  return rule;
}

/// Tensor-product Gauss quadrature of f over the box [lo, hi]. The result
/// type is whatever f returns (scalar, Eigen vector or matrix).
template <class F>
auto integrate_box(F&& f, const Vector& lo, const Vector& hi, int panels = 1, int order = 20)
{
  const auto d = lo.size();
  if (hi.size() != d || d == 0) {
    throw std::invalid_argument("integrate_box: dimension mismatch");
  }
  std::vector<Rule1D> rules;
  rules.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    rules.push_back(composite_rule(lo(k), hi(k), panels, order));
  }
  const std::size_t n = rules.front().size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  Vector x(d);
  using Result = std::decay_t<decltype(f(x))>;
  Result acc{};
  bool first = true;
  while (true) {
    double w = 1.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      x(k) = rules[static_cast<std::size_t>(k)].nodes[idx[static_cast<std::size_t>(k)]];
      w *= rules[static_cast<std::size_t>(k)].weights[idx[static_cast<std::size_t>(k)]];
    }
    if (first) {
      acc = w * f(x);
      first = false;
    } else {
      acc += w * f(x);
    }
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == n) {
      idx[k] = 0;
      ++k;
    }
    if (k == idx.size()) {
      break;
    }
  }
  return acc;
}

/// Scalar box integral with a panel-doubling convergence check; throws
/// QuadratureError when two successive refinements disagree by more than
/// rel_tol (relative to the finer value).
template <class F>
double integrate_box_checked(F&& f, const Vector& lo, const Vector& hi, double rel_tol,
                             int panels = 2, int order = 20, int max_refinements = 4)
{
  double coarse = integrate_box(f, lo, hi, panels, order);
  for (int r = 0; r < max_refinements; ++r) {
    panels *= 2;
    const double fine = integrate_box(f, lo, hi, panels, order);
    if (std::abs(fine - coarse) <= rel_tol * std::abs(fine)) {
      return fine;
    }
    coarse = fine;
  }
  throw QuadratureError("integrate_box_checked: no convergence to relative tolerance " +
                        std::to_string(rel_tol));
}

} // namespace ergodiff
