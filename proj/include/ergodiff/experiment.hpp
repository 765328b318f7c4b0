#pragma once

#include "config.hpp"
#include "drift_models.hpp"
#include "local_design.hpp"
#include "sde_sim.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace ergodiff {

enum class BandwidthRule
{
  explicit_h,
  estimator,
  coupling
};

inline BandwidthRule parse_bandwidth_rule(const std::string& s)
{
  if (s == "explicit") {
    return BandwidthRule::explicit_h;
  }
  if (s == "estimator") {
    return BandwidthRule::estimator;
  }
  if (s == "coupling") {
    return BandwidthRule::coupling;
  }
  throw ConfigError("bandwidth rule must be one of explicit, estimator, coupling; got '" + s + "'");
}

/// Largest a/k (k a positive integer) not exceeding h.
inline double snap_bandwidth(double h, double a)
{
  if (!(h > 0 && a > 0)) {
    throw std::invalid_argument("snap_bandwidth: h and a must be positive");
  }
  const double k = std::ceil(a / h * (1.0 - 1e-12));
  return a / std::max(1.0, k);
}

/// Bandwidth from the selected rule: T^{-1/(2 beta + d)} for the estimators,
/// (eps^4 / T)^{1/(4 beta + d - 2)} for the coupling, or `explicit_h`.
/// Snapped down to a/k when a > 0.
inline double bandwidth_rule(BandwidthRule rule, double T, double beta, int d, double eps = 0.1,
                             double explicit_h = 0.0, double a = 0.0, double scale = 1.0)
{
  if (!(T > 0 && beta > 0 && d > 0)) {
    throw std::invalid_argument("bandwidth_rule: T, beta and d must be positive");
  }
  double h = 0.0;
  switch (rule) {
  case BandwidthRule::explicit_h:
    h = explicit_h;
    break;
  case BandwidthRule::estimator:
    h = scale * std::pow(T, -1.0 / (2.0 * beta + d));
    break;
  case BandwidthRule::coupling:
    if (!(eps > 0)) {
      throw std::invalid_argument("bandwidth_rule: eps must be positive");
    }
    h = scale * std::pow(std::pow(eps, 4) / T, 1.0 / (4.0 * beta + d - 2.0));
    break;
  }
  if (!(h > 0)) {
    throw std::invalid_argument("bandwidth_rule: bandwidth must be positive");
  }
  return a > 0 ? snap_bandwidth(h, a) : h;
}

/// Minimal-regularity conditions for the local and global equivalence
/// results.
struct GateReport
{
  double beta = 0.0;
  int d = 0;
  bool local_conditions[3] = {false, false, false};
  bool local_gate = false;          ///< all three estimator-rate conditions
  double local_threshold = 0.0;     ///< (d-1+sqrt(2(d-1)^2-1))/2, NaN for d = 1
  double window_lower = 0.0;        ///< max(1/beta, d/(2beta+d)) for 2 alpha
  double window_upper = 0.0;        ///< 4(beta+1)/(d(2beta+d))
  bool global_gate = false;
  double global_threshold = 0.0;    ///< max(d^2/4 - 1, (d-2+sqrt((d-2)^2+4d^2))/4)
  double alpha_lo = std::numeric_limits<double>::quiet_NaN();
  double alpha_hi = std::numeric_limits<double>::quiet_NaN();
};

inline GateReport regularity_gates(double beta, int d)
{
  if (!(beta > 0 && d > 0)) {
    throw std::invalid_argument("regularity_gates: beta and d must be positive");
  }
  GateReport r;
  r.beta = beta;
  r.d = d;
  const double dd = d;
  const double s = 2.0 * beta + dd;
  r.local_conditions[0] = -beta - (2.0 - dd) * beta / s < 0.0;
  r.local_conditions[1] = 0.25 + (dd - 2.0) / (8.0 * beta) - beta / s < 0.0;
  r.local_conditions[2] = 1.0 - (beta + 1.0) / s - 2.0 * beta / s < 0.0;
  r.local_gate = r.local_conditions[0] && r.local_conditions[1] && r.local_conditions[2];
  const double disc = 2.0 * (dd - 1.0) * (dd - 1.0) - 1.0;
  r.local_threshold = disc >= 0 ? (dd - 1.0 + std::sqrt(disc)) / 2.0 : std::numeric_limits<double>::quiet_NaN();
  r.window_lower = std::max(1.0 / beta, dd / s);
  r.window_upper = 4.0 * (beta + 1.0) / (dd * s);
  r.global_gate = r.window_lower < r.window_upper;
  r.global_threshold =
      std::max(dd * dd / 4.0 - 1.0, (dd - 2.0 + std::sqrt((dd - 2.0) * (dd - 2.0) + 4.0 * dd * dd)) / 4.0);
  if (r.global_gate) {
    r.alpha_lo = r.window_lower / 2.0;
    r.alpha_hi = r.window_upper / 2.0;
  }
  return r;
}

/// Thresholds of the verification suites.
struct Thresholds
{
  double cov_rel = 0.10;
  double cross = 0.10;
  double moment = 0.20;
  double z = 3.0;
  double slope_tol = 0.20;
  double density_slope_lo = -1.4;
  double density_slope_hi = -0.6;
  double variance_ratio = 10.0;
  double stop_fraction = 0.01;
  double scaling_deviation = 0.10;
  double corr = 0.10;
  double identity_tol = 1e-10;
};

struct ExperimentConfig
{
  // Field: quadratic potential c/2 |x - center|^2, optionally bumped.
  std::string family = "ou";
  int d = 2;
  double c = 1.0;
  Vector center = Vector::Zero(2);
  double bump_eps = 0.1;
  Vector bump_center = Vector::Zero(2);
  double bump_radius = 0.9;
  int bump_power = 5;

  ParameterClass pclass;

  double a = 1.0;
  double h = 0.5;
  BandwidthRule rule = BandwidthRule::explicit_h;
  double h_scale = 1.0;
  double neighborhood_eps = 0.1;
  double neighborhood_eta = 0.1;
  int lattice_factor = 8;

  std::vector<double> T_list{50.0};
  double dt = 1e-3;
  int n_reps = 2000;
  std::uint64_t seed = 1;
  double burn_in = 0.0;
  int workers = 0;

  // rates
  int estimator_points = 1;
  double estimator_extent = 0.5;
  // variance
  std::vector<double> variance_sides{0.4, 0.2, 0.1};
  double variance_r = 2.0;
  // coupling
  bool write_samples = true;

  Thresholds thresholds;
  std::string out_dir = ".";

  double T() const { return T_list.front(); }

  SimConfig sim(double T_value) const
  {
    SimConfig s;
    s.T = T_value;
    s.dt = dt;
    s.burn_in = burn_in;
    s.seed = seed;
    s.n_reps = n_reps;
    return s;
  }

  QuadraticPotential quadratic() const { return {c, center}; }

  DriftField center_field() const
  {
    if (family == "ou" || family == "quadratic" || family == "bump") {
      return DriftField::quadratic(quadratic());
    }
    throw ConfigError("field.family must be one of ou, quadratic, bump; got '" + family + "'");
  }

  /// The alternative used by the suites: the centre perturbed by a bump of
  /// size bump_eps.
  DriftField bump_field() const
  {
    return make_bump_perturbation(quadratic(), bump_eps, bump_center, bump_radius, bump_power);
  }

  /// The field paths are simulated under.
  DriftField field() const { return family == "bump" ? bump_field() : center_field(); }

  /// Design bandwidth for horizon T (snapped so a/h is an integer).
  double design_h(double T_value) const
  {
    return bandwidth_rule(rule, T_value, pclass.beta, d, neighborhood_eps, h, a, h_scale);
  }

  LocalDesign design(double T_value) const
  {
    return LocalDesign(a, design_h(T_value), BasisIndex(d, taylor_order(pclass.beta)));
  }

  void validate() const
  {
    if (d < 1 || d > 8) {
      throw ConfigError("field.d must be between 1 and 8");
    }
    if (!(c > 0)) {
      throw ConfigError("field.c must be positive");
    }
    if (center.size() != d || bump_center.size() != d) {
      throw ConfigError("field.center and field.bump_center need d coordinates");
    }
    pclass.validate();
    if (!(a > 0)) {
      throw ConfigError("design.a must be positive");
    }
    if (rule == BandwidthRule::explicit_h) {
      const double ratio = a / h;
      if (!(h > 0) || std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
        throw ConfigError("design.h: a/h must be a positive integer (a = " + std::to_string(a) +
                          ", h = " + std::to_string(h) + ")");
      }
    }
    for (double T : T_list) {
      const double ratio = T / dt;
      if (!(T > 0 && dt > 0) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
        throw ConfigError("sim.T: every T/dt must be a positive integer");
      }
    }
    if (n_reps < 2) {
      throw ConfigError("sim.n_reps must be at least 2");
    }
    if (lattice_factor < 1) {
      throw ConfigError("design.lattice_factor must be positive");
    }
    const Thresholds& t = thresholds;
    for (double v : {t.cov_rel, t.cross, t.moment, t.z, t.slope_tol, t.variance_ratio, t.stop_fraction,
                     t.scaling_deviation, t.corr, t.identity_tol}) {
      if (!(v > 0)) {
        throw ConfigError("thresholds must be positive");
      }
    }
  }
};

inline Vector to_vector(const std::vector<double>& v)
{
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<std::string> known_config_keys()
{
  return {"field.family", "field.d", "field.c", "field.center", "field.bump_eps", "field.bump_center",
          "field.bump_radius", "field.bump_power", "pclass.M1", "pclass.M2", "pclass.L", "pclass.C1",
          "pclass.beta", "design.a", "design.h", "design.bandwidth", "design.h_scale", "design.eps",
          "design.eta", "design.lattice_factor", "sim.T", "sim.dt", "sim.n_reps", "sim.seed",
          "sim.burn_in", "sim.workers", "rates.points", "rates.extent", "variance.sides", "variance.r",
          "coupling.write_samples", "thresholds.cov_rel", "thresholds.cross", "thresholds.moment",
          "thresholds.z", "thresholds.slope_tol", "thresholds.density_slope_lo",
          "thresholds.density_slope_hi", "thresholds.variance_ratio", "thresholds.stop_fraction",
          "thresholds.scaling_deviation", "thresholds.corr", "thresholds.identity_tol", "output.dir"};
}

/// Builds and validates an ExperimentConfig; errors name the offending key
/// and its line.
inline ExperimentConfig experiment_from(const Config& cfg)
{
  const auto unknown = cfg.unknown_keys(known_config_keys());
  if (!unknown.empty()) {
    throw ConfigError("unknown key '" + unknown.front() + "'", cfg.line_of(unknown.front()));
  }
  ExperimentConfig e;
  auto checked = [&](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& err) {
      if (err.line() > 0) {
        throw;
      }
      throw ConfigError(std::string(err.what()), cfg.line_of(key));
    }
  };
  e.family = cfg.get_string("field.family", e.family);
  e.d = static_cast<int>(cfg.get_int("field.d", e.d));
  e.c = cfg.get_double("field.c", e.c);
  e.center = to_vector(cfg.get_list("field.center", std::vector<double>(static_cast<std::size_t>(e.d), 0.0)));
  e.bump_eps = cfg.get_double("field.bump_eps", e.bump_eps);
  e.bump_center =
      to_vector(cfg.get_list("field.bump_center", std::vector<double>(static_cast<std::size_t>(e.d), 0.0)));
  e.bump_radius = cfg.get_double("field.bump_radius", e.bump_radius);
  e.bump_power = static_cast<int>(cfg.get_int("field.bump_power", e.bump_power));
  e.pclass.M1 = cfg.get_double("pclass.M1", e.pclass.M1);
  e.pclass.M2 = cfg.get_double("pclass.M2", e.pclass.M2);
  e.pclass.L = cfg.get_double("pclass.L", e.pclass.L);
  e.pclass.C1 = cfg.get_double("pclass.C1", e.pclass.C1);
  e.pclass.beta = cfg.get_double("pclass.beta", e.pclass.beta);
  e.a = cfg.get_double("design.a", e.a);
  e.h = cfg.get_double("design.h", e.h);
  checked("design.bandwidth",
          [&] { e.rule = parse_bandwidth_rule(cfg.get_string("design.bandwidth", "explicit")); });
  e.h_scale = cfg.get_double("design.h_scale", e.h_scale);
  e.neighborhood_eps = cfg.get_double("design.eps", e.neighborhood_eps);
  e.neighborhood_eta = cfg.get_double("design.eta", e.neighborhood_eta);
  e.lattice_factor = static_cast<int>(cfg.get_int("design.lattice_factor", e.lattice_factor));
  e.T_list = cfg.get_list("sim.T", e.T_list);
  e.dt = cfg.get_double("sim.dt", e.dt);
  e.n_reps = static_cast<int>(cfg.get_int("sim.n_reps", e.n_reps));
  e.seed = static_cast<std::uint64_t>(cfg.get_int("sim.seed", static_cast<long long>(e.seed)));
  e.burn_in = cfg.get_double("sim.burn_in", e.burn_in);
  e.workers = static_cast<int>(cfg.get_int("sim.workers", e.workers));
  e.estimator_points = static_cast<int>(cfg.get_int("rates.points", e.estimator_points));
  e.estimator_extent = cfg.get_double("rates.extent", e.estimator_extent);
  e.variance_sides = cfg.get_list("variance.sides", e.variance_sides);
  e.variance_r = cfg.get_double("variance.r", e.variance_r);
  e.write_samples = cfg.get_bool("coupling.write_samples", e.write_samples);
  auto& t = e.thresholds;
  t.cov_rel = cfg.get_double("thresholds.cov_rel", t.cov_rel);
  t.cross = cfg.get_double("thresholds.cross", t.cross);
  t.moment = cfg.get_double("thresholds.moment", t.moment);
  t.z = cfg.get_double("thresholds.z", t.z);
  t.slope_tol = cfg.get_double("thresholds.slope_tol", t.slope_tol);
  t.density_slope_lo = cfg.get_double("thresholds.density_slope_lo", t.density_slope_lo);
  t.density_slope_hi = cfg.get_double("thresholds.density_slope_hi", t.density_slope_hi);
  t.variance_ratio = cfg.get_double("thresholds.variance_ratio", t.variance_ratio);
  t.stop_fraction = cfg.get_double("thresholds.stop_fraction", t.stop_fraction);
  t.scaling_deviation = cfg.get_double("thresholds.scaling_deviation", t.scaling_deviation);
  t.corr = cfg.get_double("thresholds.corr", t.corr);
  t.identity_tol = cfg.get_double("thresholds.identity_tol", t.identity_tol);
  e.out_dir = cfg.get_string("output.dir", e.out_dir);

  // Attribute validation failures to the most likely key.
  const std::pair<const char*, std::function<void()>> checks[] = {
      {"field.d", [&] { if (e.d < 1 || e.d > 8) throw ConfigError("field.d must be between 1 and 8"); }},
      {"field.center", [&] { if (e.center.size() != e.d) throw ConfigError("field.center needs d coordinates"); }},
      {"field.bump_center",
       [&] { if (e.bump_center.size() != e.d) throw ConfigError("field.bump_center needs d coordinates"); }},
      {"field.family", [&] { e.center_field(); }},
      {"design.h", [&] {
         if (e.rule == BandwidthRule::explicit_h) {
           const double ratio = e.a / e.h;
           if (!(e.h > 0) || std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
             throw ConfigError("design.h: a/h must be a positive integer");
           }
         }
       }},
      {"sim.T", [&] {
         for (double T : e.T_list) {
           const double ratio = T / e.dt;
           if (!(T > 0 && e.dt > 0) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
             throw ConfigError("sim.T: every T/dt must be a positive integer");
           }
         }
       }},
  };
  for (const auto& [key, fn] : checks) {
    checked(key, fn);
  }
  try {
    e.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& err) {
    throw ConfigError(err.what());
  }
  return e;
}

} // namespace ergodiff
