#pragma once

#include "linalg.hpp"
#include "quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ergodiff {

/// Exponent vector of a monomial x^alpha.
using MultiIndex = std::vector<int>;

inline int order_of(const MultiIndex& alpha)
{
  int s = 0;
  for (int a : alpha) {
    s += a;
  }
  return s;
}

/// Constants of the drift class: growth (M1), dissipativity (M2), Hölder
/// (L, beta) and the derivative bound C1 at the origin.
struct ParameterClass
{
  double M1 = 1.0;
  double M2 = 1.0;
  double L = 1.0;
  double C1 = 1.0;
  double beta = 2.0;

  /// Spectral gap of the semigroup under the dissipativity condition.
  double rho() const { return M2; }

  void validate() const
  {
    if (!(M1 > 0 && M2 > 0 && L > 0 && beta > 0 && C1 > 0)) {
      throw std::invalid_argument("ParameterClass: M1, M2, L, C1 and beta must be positive");
    }
  }
};

/// Taylor order used for the local polynomial design at regularity beta.
inline int taylor_order(double beta) { return static_cast<int>(std::floor(beta)); }

/// V(x) = c/2 |x - center|^2; the Ornstein-Uhlenbeck family.
struct QuadraticPotential
{
  double c = 1.0;
  Vector center;
};

/// V(x) = c/2 |x - center|^2 + amplitude * prod_i psi((x_i - bump_center_i)/radius)
/// with psi(u) = (1 - u^2)^power on |u| < 1. The bump has compact support
/// and polynomial derivatives up to any order.
struct BumpPerturbedPotential
{
  double c = 1.0;
  Vector center;
  double amplitude = 0.0;
  Vector bump_center;
  double bump_radius = 0.5;
  int bump_power = 5;
};

/// User supplied potential. The derivative oracle must return D^gamma V(x)
/// for every multi-index the caller needs (the drift uses |gamma| = 1, the
/// Taylor design needs |gamma| up to order+1).
struct CustomPotential
{
  int dim = 1;
  std::function<double(ConstPoint)> potential;
  std::function<double(ConstPoint, const MultiIndex&)> derivative;
  /// e^{-2V} is integrated over [-box_radius, box_radius]^d.
  double box_radius = 8.0;
  /// Gaussian used as burn-in start (N(center, I/(2c))).
  double reference_c = 1.0;
  Vector reference_center;
  std::string name = "custom";
};

/// Half-width R with exp(-M2 R^2 + 2 M1 R + 2|V(0)|) <= e^{-35}, the
/// envelope implied by the growth and dissipativity conditions.
inline double envelope_radius(const ParameterClass& pc, double potential_at_origin)
{
  const double target = 35.0 + 2.0 * std::abs(potential_at_origin);
  return (pc.M1 + std::sqrt(pc.M1 * pc.M1 + pc.M2 * target)) / pc.M2;
}

namespace detail {

/// psi(u) = (1 - u^2)^p and its derivatives as polynomial coefficient tables.
class BumpProfile
{
public:
  explicit BumpProfile(int power, int max_derivative = 10) : power_(power)
  {
    std::vector<double> coeffs(static_cast<std::size_t>(2 * power + 1), 0.0);
    double binom = 1.0;
    for (int k = 0; k <= power; ++k) {
      coeffs[static_cast<std::size_t>(2 * k)] = (k % 2 == 0 ? 1.0 : -1.0) * binom;
      binom = binom * (power - k) / (k + 1);
    }
    table_.push_back(coeffs);
    for (int n = 1; n <= max_derivative; ++n) {
      const auto& prev = table_.back();
      std::vector<double> next(prev.size() > 1 ? prev.size() - 1 : 1, 0.0);
      for (std::size_t j = 1; j < prev.size(); ++j) {
        next[j - 1] = static_cast<double>(j) * prev[j];
      }
      table_.push_back(std::move(next));
    }
  }

  /// n-th derivative at u; zero outside (-1, 1).
  double operator()(int n, double u) const
  {
    if (std::abs(u) >= 1.0) {
      return 0.0;
    }
    if (n >= static_cast<int>(table_.size())) {
      throw std::out_of_range("BumpProfile: derivative order too high");
    }
    const auto& c = table_[static_cast<std::size_t>(n)];
    double acc = 0.0;
    for (std::size_t j = c.size(); j-- > 0;) {
      acc = acc * u + c[j];
    }
    return acc;
  }

  /// max |psi'(u)|, attained at u^2 = 1/(2p - 1).
  double max_slope() const
  {
    const double u = 1.0 / std::sqrt(2.0 * power_ - 1.0);
    return std::abs((*this)(1, u));
  }

  int power() const { return power_; }

private:
  int power_;
  std::vector<std::vector<double>> table_;
};

struct QuadraticModel
{
  QuadraticPotential p;

  int dim() const { return static_cast<int>(p.center.size()); }

  double potential(ConstPoint x) const { return 0.5 * p.c * (x - p.center).squaredNorm(); }

  double derivative(ConstPoint x, const MultiIndex& gamma) const
  {
    const int order = order_of(gamma);
    if (order == 0) {
      return potential(x);
    }
    if (order == 1) {
      for (std::size_t k = 0; k < gamma.size(); ++k) {
        if (gamma[k] == 1) {
          return p.c * (x(static_cast<Eigen::Index>(k)) - p.center(static_cast<Eigen::Index>(k)));
        }
      }
    }
    if (order == 2) {
      for (int g : gamma) {
        if (g == 2) {
          return p.c;
        }
      }
    }
    return 0.0;
  }

  void gradient(ConstPoint x, Eigen::Ref<Vector> out) const { out = p.c * (x - p.center); }

  double log_normalizer() const
  {
    return 0.5 * dim() * std::log(std::numbers::pi / p.c);
  }
};

struct BumpModel
{
  BumpPerturbedPotential p;
  std::shared_ptr<const BumpProfile> profile;
  double log_norm = 0.0;

  explicit BumpModel(BumpPerturbedPotential params)
    : p(std::move(params)), profile(std::make_shared<BumpProfile>(p.bump_power))
  {
    if (p.bump_center.size() != p.center.size()) {
      throw std::invalid_argument("BumpPerturbedPotential: center dimensions differ");
    }
    if (!(p.bump_radius > 0 && p.c > 0) || p.bump_power < 2) {
      throw std::invalid_argument("BumpPerturbedPotential: need c > 0, radius > 0, power >= 2");
    }
    log_norm = compute_log_normalizer();
  }

  int dim() const { return static_cast<int>(p.center.size()); }

  double bump(ConstPoint x, const MultiIndex* gamma) const
  {
    double prod = 1.0;
    for (int i = 0; i < dim(); ++i) {
      const double u = (x(i) - p.bump_center(i)) / p.bump_radius;
      const int n = gamma ? (*gamma)[static_cast<std::size_t>(i)] : 0;
      prod *= (*profile)(n, u) / std::pow(p.bump_radius, n);
      if (prod == 0.0) {
        return 0.0;
      }
    }
    return prod;
  }

  double potential(ConstPoint x) const
  {
    return 0.5 * p.c * (x - p.center).squaredNorm() + p.amplitude * bump(x, nullptr);
  }

  double derivative(ConstPoint x, const MultiIndex& gamma) const
  {
    const QuadraticModel quad{QuadraticPotential{p.c, p.center}};
    if (order_of(gamma) == 0) {
      return potential(x);
    }
    return quad.derivative(x, gamma) + p.amplitude * bump(x, &gamma);
  }

  void gradient(ConstPoint x, Eigen::Ref<Vector> out) const
  {
    out = p.c * (x - p.center);
    const int d = dim();
    double values[16];
    double slopes[16];
    if (d > 16) {
      throw std::invalid_argument("BumpModel: dimension above 16 not supported");
    }
    for (int i = 0; i < d; ++i) {
      const double u = (x(i) - p.bump_center(i)) / p.bump_radius;
      if (std::abs(u) >= 1.0) {
        return;
      }
      values[i] = (*profile)(0, u);
      slopes[i] = (*profile)(1, u) / p.bump_radius;
    }
    for (int k = 0; k < d; ++k) {
      double prod = p.amplitude * slopes[k];
      for (int i = 0; i < d; ++i) {
        if (i != k) {
          prod *= values[i];
        }
      }
      out(k) += prod;
    }
  }

  double compute_log_normalizer() const
  {
    const int d = dim();
    const double gaussian = std::pow(std::numbers::pi / p.c, 0.5 * d);
    if (p.amplitude == 0.0) {
      return std::log(gaussian);
    }
    // C_b = Gaussian mass + correction supported on the bump box.
    const Vector lo = p.bump_center.array() - p.bump_radius;
    const Vector hi = p.bump_center.array() + p.bump_radius;
    auto correction = [&](const Vector& x) {
      const double quad = p.c * (x - p.center).squaredNorm();
      return std::exp(-quad) * std::expm1(-2.0 * p.amplitude * bump(x, nullptr));
    };
    const int panels = d <= 2 ? 8 : 3;
    const double coarse = integrate_box(correction, lo, hi, panels, 20);
    const double fine = integrate_box(correction, lo, hi, 2 * panels, 20);
    if (std::abs(fine - coarse) > 1e-12 * gaussian) {
      throw QuadratureError("BumpPerturbedPotential: normalizer quadrature did not converge");
    }
    return std::log(gaussian + fine);
  }

  double log_normalizer() const { return log_norm; }
};

struct CustomModel
{
  CustomPotential p;
  double log_norm = 0.0;

  explicit CustomModel(CustomPotential params) : p(std::move(params))
  {
    if (!p.potential || !p.derivative || p.dim < 1) {
      throw std::invalid_argument("CustomPotential: potential and derivative oracle required");
    }
    if (p.reference_center.size() == 0) {
      p.reference_center = Vector::Zero(p.dim);
    }
    const Vector lo = Vector::Constant(p.dim, -p.box_radius);
    const Vector hi = Vector::Constant(p.dim, p.box_radius);
    const double v0 = p.potential(Vector::Zero(p.dim));
    auto weight = [&](const Vector& x) { return std::exp(-2.0 * (p.potential(x) - v0)); };
    const double mass = integrate_box_checked(weight, lo, hi, 1e-10, 4, 20, 4);
    log_norm = std::log(mass) - 2.0 * v0;
  }

  int dim() const { return p.dim; }
  double potential(ConstPoint x) const { return p.potential(x); }
  double derivative(ConstPoint x, const MultiIndex& gamma) const { return p.derivative(x, gamma); }

  void gradient(ConstPoint x, Eigen::Ref<Vector> out) const
  {
    MultiIndex gamma(static_cast<std::size_t>(p.dim), 0);
    for (int k = 0; k < p.dim; ++k) {
      gamma[static_cast<std::size_t>(k)] = 1;
      out(k) = p.derivative(x, gamma);
      gamma[static_cast<std::size_t>(k)] = 0;
    }
  }

  double log_normalizer() const { return log_norm; }
};

} // namespace detail

/// Gaussian N(center, I/(2c)): the exact invariant law for quadratic
/// potentials and a burn-in start otherwise.
struct GaussianReference
{
  Vector center;
  double c = 1.0;
  bool exact = false;
};

/// Gradient drift b = -grad V with a derivative oracle and its invariant
/// density mu_b = C_b^{-1} exp(-2V). Immutable once built; all members are
/// safe to call concurrently.
class DriftField
{
public:
  static DriftField ornstein_uhlenbeck(int d, double c = 1.0)
  {
    return DriftField(detail::QuadraticModel{QuadraticPotential{c, Vector::Zero(d)}});
  }

  static DriftField quadratic(QuadraticPotential p)
  {
    if (!(p.c > 0) || p.center.size() == 0) {
      throw std::invalid_argument("QuadraticPotential: need c > 0 and a non-empty center");
    }
    return DriftField(detail::QuadraticModel{std::move(p)});
  }

  static DriftField bump_perturbed(BumpPerturbedPotential p)
  {
    return DriftField(detail::BumpModel(std::move(p)));
  }

  static DriftField custom(CustomPotential p) { return DriftField(detail::CustomModel(std::move(p))); }

  int dim() const
  {
    return std::visit([](const auto& m) { return m.dim(); }, model_);
  }

  std::string family() const
  {
    if (std::holds_alternative<detail::QuadraticModel>(model_)) {
      return "quadratic";
    }
    if (std::holds_alternative<detail::BumpModel>(model_)) {
      return "perturbed_quadratic";
    }
    return std::get<detail::CustomModel>(model_).p.name;
  }

  double potential(ConstPoint x) const
  {
    return std::visit([&](const auto& m) { return m.potential(x); }, model_);
  }

  /// D^gamma V(x).
  double potential_derivative(ConstPoint x, const MultiIndex& gamma) const
  {
    return std::visit([&](const auto& m) { return m.derivative(x, gamma); }, model_);
  }

  void drift(ConstPoint x, Eigen::Ref<Vector> out) const
  {
    std::visit([&](const auto& m) { m.gradient(x, out); }, model_);
    out = -out;
  }

  Vector drift(ConstPoint x) const
  {
    Vector out(dim());
    drift(x, out);
    return out;
  }

  /// D^alpha b_i(x) = -D^{alpha + e_i} V(x).
  double drift_derivative(int i, const MultiIndex& alpha, ConstPoint x) const
  {
    MultiIndex gamma = alpha;
    gamma[static_cast<std::size_t>(i)] += 1;
    return -potential_derivative(x, gamma);
  }

  double log_normalizer() const
  {
    return std::visit([](const auto& m) { return m.log_normalizer(); }, model_);
  }

  /// mu_b(x) = C_b^{-1} e^{-2V(x)}.
  double density(ConstPoint x) const { return std::exp(-2.0 * potential(x) - log_normalizer()); }

  GaussianReference gaussian_reference() const
  {
    if (const auto* q = std::get_if<detail::QuadraticModel>(&model_)) {
      return {q->p.center, q->p.c, true};
    }
    if (const auto* b = std::get_if<detail::BumpModel>(&model_)) {
      return {b->p.center, b->p.c, b->p.amplitude == 0.0};
    }
    const auto& c = std::get<detail::CustomModel>(model_);
    return {c.p.reference_center, c.p.reference_c, false};
  }

  /// Bump parameters when this is a perturbed quadratic field.
  const BumpPerturbedPotential* bump_parameters() const
  {
    if (const auto* b = std::get_if<detail::BumpModel>(&model_)) {
      return &b->p;
    }
    return nullptr;
  }

private:
  using Model = std::variant<detail::QuadraticModel, detail::BumpModel, detail::CustomModel>;

  explicit DriftField(Model m) : model_(std::move(m)) {}

  Model model_;
};

/// Perturbation of the quadratic field (c, center) by a bump supported in
/// [bump_center - radius, bump_center + radius]^d, scaled so that
/// sup |b - b°| = eps exactly at the bound |grad phi| <= sqrt(d) max|psi'|/r.
inline DriftField make_bump_perturbation(const QuadraticPotential& base, double eps,
                                         const Vector& bump_center, double radius, int power = 5)
{
  const detail::BumpProfile profile(power);
  const double d = static_cast<double>(base.center.size());
  const double gradient_bound = std::sqrt(d) * profile.max_slope() / radius;
  BumpPerturbedPotential p;
  p.c = base.c;
  p.center = base.center;
  p.amplitude = eps / gradient_bound;
  p.bump_center = bump_center;
  p.bump_radius = radius;
  p.bump_power = power;
  return DriftField::bump_perturbed(std::move(p));
}

/// A-priori lower bound mu_*(x) = e^{-M1|x|^2 - 2M1|x|} / int e^{2M1|y| - M2|y|^2} dy
/// for every density in the class.
class DensityLowerBound
{
public:
  DensityLowerBound(const ParameterClass& pc, int d) : pc_(pc), d_(d)
  {
    pc.validate();
    // Radial integral: |S^{d-1}| int_0^inf r^{d-1} e^{2 M1 r - M2 r^2} dr.
    const double sphere = 2.0 * std::pow(std::numbers::pi, 0.5 * d) / boost::math::tgamma(0.5 * d);
    auto radial = [&](double r) {
      return std::pow(r, d - 1) * std::exp(2.0 * pc.M1 * r - pc.M2 * r * r);
    };
    double error = 0.0;
    const double radial_integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        radial, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-13, &error);
    normalizer_ = sphere * radial_integral;
  }

  double operator()(ConstPoint x) const
  {
    const double r = x.norm();
    return std::exp(-pc_.M1 * r * r - 2.0 * pc_.M1 * r) / normalizer_;
  }

  double normalizer() const { return normalizer_; }
  int dim() const { return d_; }

private:
  ParameterClass pc_;
  int d_;
  double normalizer_ = 1.0;
};

inline double mu_star(const ParameterClass& pc, ConstPoint x)
{
  return DensityLowerBound(pc, static_cast<int>(x.size()))(x);
}

/// Worst-case ratios for the growth and dissipativity conditions on a set
/// of sample pairs.
struct MembershipReport
{
  double max_growth_ratio = 0.0;           ///< max |b(x)| / (M1 (1 + |x|)); pass iff <= 1
  double min_dissipativity_ratio = 0.0;    ///< min (b(x)-b(y))^T(x-y) / (-M2 |x-y|^2); pass iff >= 1
  std::size_t growth_violations = 0;
  std::size_t dissipativity_violations = 0;
  bool pass = false;
};

inline MembershipReport check_membership(const DriftField& field, const ParameterClass& pc,
                                         std::span<const std::pair<Vector, Vector>> sample)
{
  if (sample.empty()) {
    throw std::invalid_argument("check_membership: sample is empty");
  }
  MembershipReport report;
  report.min_dissipativity_ratio = std::numeric_limits<double>::infinity();
  for (const auto& [x, y] : sample) {
    const Vector bx = field.drift(x);
    const Vector by = field.drift(y);
    for (const auto* pt : {&x, &y}) {
      const Vector& b = (pt == &x) ? bx : by;
      const double growth = b.norm() / (pc.M1 * (1.0 + pt->norm()));
      report.max_growth_ratio = std::max(report.max_growth_ratio, growth);
      if (growth > 1.0) {
        ++report.growth_violations;
      }
    }
    const double dist2 = (x - y).squaredNorm();
    if (dist2 == 0.0) {
      continue;
    }
    const double ratio = (bx - by).dot(x - y) / (-pc.M2 * dist2);
    report.min_dissipativity_ratio = std::min(report.min_dissipativity_ratio, ratio);
    if (ratio < 1.0) {
      ++report.dissipativity_violations;
    }
  }
  report.pass = report.growth_violations == 0 && report.dissipativity_violations == 0;
  return report;
}

/// Local neighbourhood of a centre drift: |b - b°| <= eps 1_A and
/// |mu_b - mu_b°| <= eta mu_b° on A = [-a, a)^d.
struct Neighborhood
{
  DriftField center;
  double eps = 0.1;
  double eta = 0.1;
  double a = 1.0;

  bool in_A(ConstPoint x) const
  {
    return (x.array() >= -a).all() && (x.array() < a).all();
  }
};

struct NeighborhoodReport
{
  double max_drift_deviation_in_A = 0.0;
  double max_drift_deviation_outside_A = 0.0;
  double max_density_ratio_deviation = 0.0; ///< sup_A |mu_b/mu_b° - 1|
  bool pass = false;
};

inline NeighborhoodReport check_neighborhood(const Neighborhood& nb, const DriftField& field,
                                             std::span<const Vector> sample)
{
  NeighborhoodReport r;
  for (const auto& x : sample) {
    const double dev = (field.drift(x) - nb.center.drift(x)).norm();
    if (nb.in_A(x)) {
      r.max_drift_deviation_in_A = std::max(r.max_drift_deviation_in_A, dev);
      const double ratio = field.density(x) / nb.center.density(x) - 1.0;
      r.max_density_ratio_deviation = std::max(r.max_density_ratio_deviation, std::abs(ratio));
    } else {
      r.max_drift_deviation_outside_A = std::max(r.max_drift_deviation_outside_A, dev);
    }
  }
  r.pass = r.max_drift_deviation_in_A <= nb.eps && r.max_drift_deviation_outside_A <= 1e-12 &&
           r.max_density_ratio_deviation <= nb.eta;
  return r;
}

/// Regular grid of n^d points covering [-a, a)^d (cell lower corners shifted
/// to centres), used as the test sample for neighbourhood checks.
inline std::vector<Vector> grid_points(int d, double a, int n)
{
  std::vector<Vector> pts;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  const double step = 2.0 * a / n;
  while (true) {
    Vector x(d);
    for (int k = 0; k < d; ++k) {
      x(k) = -a + (idx[static_cast<std::size_t>(k)] + 0.5) * step;
    }
    pts.push_back(std::move(x));
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == n) {
      idx[k] = 0;
      ++k;
    }
    if (k == idx.size()) {
      break;
    }
  }
  return pts;
}

/// sup over a grid on A of |mu_b / mu_b° - 1|: the smallest eta for which b
/// passes the density part of the neighbourhood test on that grid.
inline double density_ratio_deviation(const DriftField& field, const DriftField& center, double a,
                                      int points_per_axis = 101)
{
  double worst = 0.0;
  for (const auto& x : grid_points(field.dim(), a, points_per_axis)) {
    worst = std::max(worst, std::abs(field.density(x) / center.density(x) - 1.0));
  }
  return worst;
}

} // namespace ergodiff
