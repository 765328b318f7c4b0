#pragma once

#include "drift_models.hpp"
#include "parallel.hpp"
#include "rng.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ergodiff {

struct SimConfig
{
  double T = 1.0;
  double dt = 1e-3;
  double burn_in = 0.0;
  std::uint64_t seed = 1;
  int n_reps = 1;
  /// Drop the Brownian increments (xi_k := 0); deterministic Euler flow.
  bool noiseless = false;

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }

  void validate() const
  {
    if (!(dt > 0 && dt <= T)) {
      throw std::invalid_argument("SimConfig: need 0 < dt <= T");
    }
    const double ratio = T / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
      throw std::invalid_argument("SimConfig: T/dt must be an integer");
    }
    if (burn_in < 0) {
      throw std::invalid_argument("SimConfig: burn_in must be non-negative");
    }
    if (n_reps < 1) {
      throw std::invalid_argument("SimConfig: n_reps must be positive");
    }
  }
};

/// Euler record of X on [0, T]: states(:, k) = X_{k dt}; increments(:, k)
/// = X_{k+1} - X_k as produced by the scheme; noise(:, k) the Brownian
/// increment of step k (empty when not retained).
struct DiffusionPath
{
  double dt = 0.0;
  Matrix states;
  Matrix increments;
  Matrix noise;

  int dim() const { return static_cast<int>(states.rows()); }
  std::size_t steps() const { return static_cast<std::size_t>(increments.cols()); }
  double horizon() const { return dt * static_cast<double>(steps()); }
  bool has_noise() const { return noise.cols() == increments.cols() && noise.size() > 0; }
};

class DivergenceError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline Philox4x32 path_stream(const SimConfig& cfg, std::uint64_t replicate)
{
  return make_stream(cfg.seed, replicate, StreamRole::path);
}

namespace detail {

/// Euler-Maruyama stepping; visit(k, X_k, dX_k, dW_k) is called before
/// X_{k+1} = X_k + dX_k. Returns X_n.
template <class Visitor>
Vector euler_stream(const DriftField& field, Vector x, std::size_t steps, double dt, bool noiseless,
                    Philox4x32& rng, Visitor&& visit)
{
  const int d = field.dim();
  const double sqrt_dt = std::sqrt(dt);
  std::normal_distribution<double> normal;
  Vector b(d);
  Vector dx(d);
  Vector dw = Vector::Zero(d);
  for (std::size_t k = 0; k < steps; ++k) {
    field.drift(x, b);
    if (!noiseless) {
      for (int j = 0; j < d; ++j) {
        dw(j) = sqrt_dt * normal(rng);
      }
    }
    dx = b * dt + dw;
    visit(k, x, dx, dw);
    x += dx;
    if (!(x.squaredNorm() < 1e12)) {
      std::ostringstream msg;
      msg << "Euler path diverged (|X| > 1e6) at step " << k + 1 << ", t = " << (k + 1) * dt;
      throw DivergenceError(msg.str());
    }
  }
  return x;
}

} // namespace detail

/// Draw from the invariant law: exact for quadratic potentials, otherwise
/// the matching Gaussian evolved for burn_in time units.
inline Vector stationary_sample(const DriftField& field, Philox4x32& rng, double burn_in = 0.0,
                                double dt = 1e-3)
{
  const GaussianReference ref = field.gaussian_reference();
  std::normal_distribution<double> normal;
  Vector x(field.dim());
  const double sd = 1.0 / std::sqrt(2.0 * ref.c);
  for (int j = 0; j < field.dim(); ++j) {
    x(j) = ref.center(j) + sd * normal(rng);
  }
  if (ref.exact || burn_in <= 0.0) {
    return x;
  }
  const auto steps = static_cast<std::size_t>(std::ceil(burn_in / dt));
  return detail::euler_stream(field, std::move(x), steps, dt, false, rng,
                              [](std::size_t, const Vector&, const Vector&, const Vector&) {});
}

/// Streams one stationary replicate through visit(k, X_k, dX_k, dW_k)
/// without storing it. Uses the same random sequence as simulate_path.
template <class Visitor>
Vector simulate_stream(const DriftField& field, const SimConfig& cfg, std::uint64_t replicate,
                       Visitor&& visit)
{
  Philox4x32 rng = path_stream(cfg, replicate);
  Vector x0 = stationary_sample(field, rng, cfg.burn_in, cfg.dt);
  return detail::euler_stream(field, std::move(x0), cfg.steps(), cfg.dt, cfg.noiseless, rng,
                              std::forward<Visitor>(visit));
}

/// Stationary Euler-Maruyama path of dX = b(X)dt + dW.
inline DiffusionPath simulate_path(const DriftField& field, const SimConfig& cfg,
                                   std::uint64_t replicate, bool keep_noise = true)
{
  cfg.validate();
  const std::size_t n = cfg.steps();
  const int d = field.dim();
  DiffusionPath path;
  path.dt = cfg.dt;
  path.states.resize(d, static_cast<Eigen::Index>(n + 1));
  path.increments.resize(d, static_cast<Eigen::Index>(n));
  if (keep_noise) {
    path.noise.resize(d, static_cast<Eigen::Index>(n));
  }
  const Vector last = simulate_stream(field, cfg, replicate,
                                      [&](std::size_t k, const Vector& x, const Vector& dx, const Vector& dw) {
                                        const auto col = static_cast<Eigen::Index>(k);
                                        path.states.col(col) = x;
                                        path.increments.col(col) = dx;
                                        if (keep_noise) {
                                          path.noise.col(col) = dw;
                                        }
                                      });
  path.states.col(static_cast<Eigen::Index>(n)) = last;
  return path;
}

/// Left-endpoint Riemann sum of int_0^T f(X_t) dt.
template <class F>
double additive_functional(const DiffusionPath& path, F&& f)
{
  double acc = 0.0;
  for (std::size_t k = 0; k < path.steps(); ++k) {
    acc += f(path.states.col(static_cast<Eigen::Index>(k)));
  }
  return acc * path.dt;
}

/// Correction tag: integrate against dX_j itself.
struct NoCorrection
{
};

/// Correction c(x) = b_j(x) of a drift field; with it the Itô sum integrates
/// against the driving noise dW_j.
inline auto drift_component(const DriftField& field, int j)
{
  return [&field, j](ConstPoint x) { return field.drift(x)(j); };
}

/// Left-point Itô sum  sum_k g(X_k) (dX_{k,j} - c(X_k) dt).
template <class G, class C = NoCorrection>
auto ito_integral(const DiffusionPath& path, G&& g, int j, C&& correction = {})
{
  if (j < 0 || j >= path.dim()) {
    throw std::invalid_argument("ito_integral: coordinate out of range");
  }
  using Result = std::decay_t<decltype(g(path.states.col(0)))>;
  Result acc{};
  bool first = true;
  for (std::size_t k = 0; k < path.steps(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    const auto x = path.states.col(col);
    double increment = path.increments(j, col);
    if constexpr (!std::is_same_v<std::decay_t<C>, NoCorrection>) {
      increment -= correction(x) * path.dt;
    }
    if (first) {
      acc = g(x) * increment;
      first = false;
    } else {
      acc += g(x) * increment;
    }
  }
  return acc;
}

/// psi_d(x): log^2 inflation at d = 2, power x^{1/d - 1/2} for d >= 3, 1 at d = 1.
inline double psi_d(double x, int d)
{
  if (!(x > 0)) {
    throw std::invalid_argument("psi_d: argument must be positive");
  }
  if (d <= 1) {
    return 1.0;
  }
  if (d == 2) {
    const double l = std::log(1.0 / x);
    return std::max(1.0, l * l);
  }
  return std::pow(x, 1.0 / d - 0.5);
}

/// Bounded test function with compact support in the box [lo, hi].
struct BoundedFunction
{
  std::function<double(ConstPoint)> f;
  Vector lo;
  Vector hi;
  double sup_norm = 1.0;

  static BoundedFunction indicator(Vector lo, Vector hi)
  {
    BoundedFunction bf;
    bf.lo = std::move(lo);
    bf.hi = std::move(hi);
    bf.f = [lo = bf.lo, hi = bf.hi](ConstPoint x) {
      return ((x.array() >= lo.array()).all() && (x.array() < hi.array()).all()) ? 1.0 : 0.0;
    };
    return bf;
  }

  double volume() const { return (hi - lo).prod(); }
  double diameter() const { return (hi - lo).norm(); }
};

struct VarianceResult
{
  double volume = 0.0;        ///< |S|
  double mass = 0.0;          ///< mu_b(S)
  double mean = 0.0;          ///< mean of int_0^T f(X_t) dt over replicates
  double variance = 0.0;      ///< sample variance over replicates
  double variance_se = 0.0;   ///< standard error of the sample variance
  double bound = 0.0;         ///< T ||f||^2 mu_b(S) |S| psi_d^2(|S|)
  double ratio = 0.0;         ///< variance / bound
};

/// Monte Carlo variance of additive functionals against the bound
/// C T ||f||_inf^2 mu_b(S) |S| psi_d^2(|S|); all functions are evaluated
/// on the same replicates.
inline std::vector<VarianceResult> variance_harness(const DriftField& field,
                                                    const std::vector<BoundedFunction>& functions,
                                                    const SimConfig& cfg, double r = 2.0,
                                                    int workers = 0)
{
  cfg.validate();
  const int d = field.dim();
  for (const auto& fn : functions) {
    const double vol = fn.volume();
    if (!(vol < 1.0) || !(std::pow(fn.diameter(), d) < std::pow(r, d) * vol)) {
      throw std::invalid_argument(
          "variance_harness: support must satisfy |S| < 1 and diam(S)^d < r^d |S|");
    }
  }
  const auto nf = functions.size();
  Matrix values(cfg.n_reps, static_cast<Eigen::Index>(nf));
  parallel_for(static_cast<std::size_t>(cfg.n_reps), worker_count(workers), [&](std::size_t rep) {
    std::vector<double> acc(nf, 0.0);
    simulate_stream(field, cfg, rep, [&](std::size_t, const Vector& x, const Vector&, const Vector&) {
      for (std::size_t i = 0; i < nf; ++i) {
        acc[i] += functions[i].f(x);
      }
    });
    for (std::size_t i = 0; i < nf; ++i) {
      values(static_cast<Eigen::Index>(rep), static_cast<Eigen::Index>(i)) = acc[i] * cfg.dt;
    }
  });

  std::vector<VarianceResult> out;
  const double n = cfg.n_reps;
  for (std::size_t i = 0; i < nf; ++i) {
    const Vector col = values.col(static_cast<Eigen::Index>(i));
    VarianceResult res;
    res.volume = functions[i].volume();
    res.mass = integrate_box([&](const Vector& x) { return field.density(x); }, functions[i].lo,
                             functions[i].hi, 2, 20);
    res.mean = col.mean();
    const Eigen::ArrayXd c = col.array() - res.mean;
    res.variance = c.square().sum() / (n - 1.0);
    const double m4 = c.square().square().mean();
    res.variance_se = std::sqrt(std::max(0.0, m4 - res.variance * res.variance) / n);
    const double psi = psi_d(res.volume, d);
    res.bound = cfg.T * functions[i].sup_norm * functions[i].sup_norm * res.mass * res.volume * psi * psi;
    res.ratio = res.variance / res.bound;
    out.push_back(res);
  }
  return out;
}

/// Binary path dump: uint64 d, double dt, uint64 n, then the (n+1) states
/// row-major (one state of d doubles per row), little-endian host order.
inline void write_path(const std::string& file, const DiffusionPath& path)
{
  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_path: cannot open " + file);
  }
  const std::uint64_t d = static_cast<std::uint64_t>(path.dim());
  const std::uint64_t n = path.steps();
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(&path.dt), sizeof path.dt);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  // Column-major d x (n+1) storage is exactly row-major (n+1) x d.
  out.write(reinterpret_cast<const char*>(path.states.data()),
            static_cast<std::streamsize>(sizeof(double) * d * (n + 1)));
  if (!out) {
    throw std::runtime_error("write_path: write failed for " + file);
  }
}

/// Reads a dump written by write_path; increments are re-differenced from
/// the states and the noise is not available.
inline DiffusionPath read_path(const std::string& file)
{
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw std::runtime_error("read_path: cannot open " + file);
  }
  std::uint64_t d = 0;
  std::uint64_t n = 0;
  DiffusionPath path;
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  in.read(reinterpret_cast<char*>(&path.dt), sizeof path.dt);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || d == 0 || d > 64 || !(path.dt > 0)) {
    throw std::runtime_error("read_path: malformed header in " + file);
  }
  path.states.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n + 1));
  in.read(reinterpret_cast<char*>(path.states.data()),
          static_cast<std::streamsize>(sizeof(double) * d * (n + 1)));
  if (!in) {
    throw std::runtime_error("read_path: truncated data in " + file);
  }
  path.increments = path.states.rightCols(static_cast<Eigen::Index>(n)) -
                    path.states.leftCols(static_cast<Eigen::Index>(n));
  return path;
}

} // namespace ergodiff
