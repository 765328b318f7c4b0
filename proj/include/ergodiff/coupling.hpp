#pragma once

#include "local_design.hpp"
#include "rng.hpp"
#include "sde_sim.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace ergodiff {

/// eta_hat_mj(t) = sum_{t_k < t} 1_{C_m}(X_k) v(X_k - a_m) (dX_{k,j} - c(X_k) dt).
template <class C = NoCorrection>
Vector eta_hat(const DiffusionPath& path, const LocalDesign& design, int m, int j, double upto,
               C&& correction = {})
{
  if (j < 0 || j >= path.dim()) {
    throw std::invalid_argument("eta_hat: coordinate out of range");
  }
  const std::size_t n = steps_upto(path, upto);
  const Vector corner = design.corner(m);
  Vector acc = Vector::Zero(design.K());
  Vector v(design.K());
  for (std::size_t k = 0; k < n; ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    const auto x = path.states.col(col);
    if (design.cell_of(x) != m) {
      continue;
    }
    double increment = path.increments(j, col);
    if constexpr (!std::is_same_v<std::decay_t<C>, NoCorrection>) {
      increment -= correction(x) * path.dt;
    }
    design.basis().evaluate(x - corner, v);
    acc += v * increment;
  }
  return acc;
}

/// eta_mj = T^{-1/2} eta_hat_mj(tau_m) + (J_m - J_hat_m(tau_m)/T)^{1/2} eps,
/// with eta_hat corrected by the centre drift b°_j.
inline Vector couple_eta(const DiffusionPath& path, const LocalDesign& design, int m, int j,
                         const CellMatrices& cell, const DriftField& center, const Vector& eps)
{
  const double T = path.horizon();
  const StoppingTime tau = stopping_time(path, design, m, cell, T);
  const Vector eh = eta_hat(path, design, m, j, tau.tau, drift_component(center, j));
  const Matrix remainder = cell.J - empirical_Jm(path, design, m, tau.tau) / T;
  return eh / std::sqrt(T) + psd_sqrt(remainder) * eps;
}

/// Drift corrections for the streaming accumulator; each writes c(x) for
/// x in cell m with basis vector v = v(x - a_m).
struct ZeroCorrection
{
  void operator()(int, ConstPoint, const Vector&, Eigen::Ref<Vector> out) const { out.setZero(); }
};

struct DriftCorrection
{
  const DriftField* field;
  void operator()(int, ConstPoint x, const Vector&, Eigen::Ref<Vector> out) const { field->drift(x, out); }
};

struct TaylorCorrection
{
  const TaylorField* field;
  void operator()(int m, ConstPoint, const Vector& v, Eigen::Ref<Vector> out) const
  {
    out = field->coefficients(m) * v;
  }
};

/// Stopped statistics of one cell.
struct CellOutcome
{
  Matrix J_hat;   ///< J_hat_m(tau_m)
  Matrix eta_hat; ///< K x d, column j is eta_hat_mj(tau_m)
  double tau = 0.0;
  bool stopped = false;
};

/// Single-pass accumulation of J_hat_m, tau_m and eta_hat_mj(tau_m) for all
/// cells at once; feed it every Euler step in order.
class CellAccumulator
{
public:
  CellAccumulator(const LocalDesign& design, const std::vector<CellMatrices>& cells, double threshold,
                  double dt)
    : design_(&design), cells_(&cells), threshold_(threshold), dt_(dt), v_(design.K()),
      residual_(design.dim()), correction_(design.dim())
  {
    if (static_cast<int>(cells.size()) != design.cells()) {
      throw std::invalid_argument("CellAccumulator: one CellMatrices per cell required");
    }
    state_.resize(static_cast<std::size_t>(design.cells()));
    for (auto& s : state_) {
      s.out.J_hat = Matrix::Zero(design.K(), design.K());
      s.out.eta_hat = Matrix::Zero(design.K(), design.dim());
    }
  }

  template <class Correction>
  void add(std::size_t k, ConstPoint x, const Vector& dx, const Correction& correction)
  {
    const int m = design_->cell_of(x);
    if (m < 0) {
      return;
    }
    auto& s = state_[static_cast<std::size_t>(m)];
    if (s.out.stopped) {
      return;
    }
    design_->basis().evaluate(x - design_->corner_ref(m), v_);
    const StoppingRule rule((*cells_)[static_cast<std::size_t>(m)], threshold_);
    double inc = 0.0;
    if (rule.crosses(s.out.J_hat, s.trace, v_, dt_, &inc)) {
      s.out.stopped = true;
      s.out.tau = static_cast<double>(k) * dt_;
      return;
    }
    s.out.J_hat.noalias() += dt_ * v_ * v_.transpose();
    s.trace += inc;
    correction(m, x, v_, correction_);
    residual_ = dx - dt_ * correction_;
    s.out.eta_hat.noalias() += v_ * residual_.transpose();
  }

  /// Outcomes after `steps` Euler steps (unstopped cells get tau = T).
  std::vector<CellOutcome> finish(std::size_t steps) const
  {
    std::vector<CellOutcome> out;
    out.reserve(state_.size());
    for (const auto& s : state_) {
      out.push_back(s.out);
      if (!s.out.stopped) {
        out.back().tau = static_cast<double>(steps) * dt_;
      }
    }
    return out;
  }

private:
  struct State
  {
    CellOutcome out;
    double trace = 0.0;
  };

  const LocalDesign* design_;
  const std::vector<CellMatrices>* cells_;
  double threshold_;
  double dt_;
  std::vector<State> state_;
  Vector v_;
  Vector residual_;
  Vector correction_;
};

/// Simulates replicate `rep` under `field` and returns the stopped cell
/// statistics, with threshold T.
template <class Correction>
std::vector<CellOutcome> cell_outcomes(const DriftField& field, const SimConfig& cfg, std::uint64_t rep,
                                       const LocalDesign& design, const std::vector<CellMatrices>& cells,
                                       const Correction& correction)
{
  CellAccumulator acc(design, cells, cfg.T, cfg.dt);
  simulate_stream(field, cfg, rep, [&](std::size_t k, const Vector& x, const Vector& dx, const Vector&) {
    acc.add(k, x, dx, correction);
  });
  return acc.finish(cfg.steps());
}

template <class Correction>
std::vector<CellOutcome> cell_outcomes(const DiffusionPath& path, const LocalDesign& design,
                                       const std::vector<CellMatrices>& cells, const Correction& correction)
{
  CellAccumulator acc(design, cells, path.horizon(), path.dt);
  for (std::size_t k = 0; k < path.steps(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    acc.add(k, path.states.col(col), path.increments.col(col), correction);
  }
  return acc.finish(path.steps());
}

/// Standard normal K x (d M) matrix; column i*M + m belongs to (i, m).
inline Matrix standard_normal_block(int K, int columns, Philox4x32& rng)
{
  std::normal_distribution<double> normal;
  Matrix eps(K, columns);
  for (int c = 0; c < columns; ++c) {
    for (int k = 0; k < K; ++k) {
      eps(k, c) = normal(rng);
    }
  }
  return eps;
}

/// Coupled Gaussian vectors eta_mj for all cells, K x (d M).
inline Matrix couple_all(const std::vector<CellOutcome>& outcomes, const std::vector<CellMatrices>& cells,
                         double T, const Matrix& eps)
{
  const int M = static_cast<int>(outcomes.size());
  const int K = static_cast<int>(eps.rows());
  const int d = static_cast<int>(eps.cols()) / M;
  Matrix eta(K, d * M);
  for (int m = 0; m < M; ++m) {
    const auto& o = outcomes[static_cast<std::size_t>(m)];
    const Matrix root = psd_sqrt(cells[static_cast<std::size_t>(m)].J - o.J_hat / T);
    for (int j = 0; j < d; ++j) {
      eta.col(j * M + m) = o.eta_hat.col(j) / std::sqrt(T) + root * eps.col(j * M + m);
    }
  }
  return eta;
}

/// Gaussian regression observations Y_im, K x (d M) with column i*M + m.
struct CoupledRegression
{
  int d = 0;
  int M = 0;
  int K = 0;
  double T = 0.0;
  double h = 0.0;
  std::uint64_t seed = 0;
  bool tilde = false;
  Matrix Y;

  Eigen::Ref<const Vector> at(int i, int m) const { return Y.col(i * M + m); }
};

/// Y_im = J_m^{-1} Phi1_im with
/// Phi1_im = eta_hat_mi(tau_m)/T + T^{-1/2}(J_m - J_hat_m(tau_m)/T)^{1/2} eps_im.
/// The outcomes must use the Taylor correction of b°. Passing theta selects
/// the tilde variant eps~ = (T J_m - J_hat_m(tau_m))^{1/2} theta_im + eps_im.
inline CoupledRegression phi1(const std::vector<CellOutcome>& outcomes, const std::vector<CellMatrices>& cells,
                              const LocalDesign& design, double T, const Matrix& eps,
                              const Matrix* theta = nullptr)
{
  const int M = design.cells();
  const int d = design.dim();
  const int K = design.K();
  if (eps.rows() != K || eps.cols() != d * M) {
    throw std::invalid_argument("phi1: noise must be K x (d M)");
  }
  CoupledRegression out;
  out.d = d;
  out.M = M;
  out.K = K;
  out.T = T;
  out.h = design.h();
  out.tilde = theta != nullptr;
  out.Y.resize(K, d * M);
  for (int m = 0; m < M; ++m) {
    const auto& o = outcomes[static_cast<std::size_t>(m)];
    const auto& cell = cells[static_cast<std::size_t>(m)];
    const Matrix root = psd_sqrt(cell.J - o.J_hat / T);
    Matrix tilde_root;
    if (theta) {
      tilde_root = psd_sqrt(T * cell.J - o.J_hat);
    }
    for (int i = 0; i < d; ++i) {
      Vector e = eps.col(i * M + m);
      if (theta) {
        e += tilde_root * theta->col(i * M + m);
      }
      const Vector phi = o.eta_hat.col(i) / T + root * e / std::sqrt(T);
      out.Y.col(i * M + m) = cell.J_inv * phi;
    }
  }
  return out;
}

/// Direct draw Y_im = theta_i(a_m) + (T J_m)^{-1/2} eps_im.
inline CoupledRegression regression_sampler(const LocalDesign& design, const std::vector<CellMatrices>& cells,
                                            const Matrix& theta, double T, Philox4x32& rng)
{
  const int M = design.cells();
  const int d = design.dim();
  const int K = design.K();
  if (theta.rows() != K || theta.cols() != d * M) {
    throw std::invalid_argument("regression_sampler: theta must be K x (d M)");
  }
  const Matrix eps = standard_normal_block(K, d * M, rng);
  CoupledRegression out;
  out.d = d;
  out.M = M;
  out.K = K;
  out.T = T;
  out.h = design.h();
  out.Y.resize(K, d * M);
  for (int m = 0; m < M; ++m) {
    const Matrix& root = cells[static_cast<std::size_t>(m)].J_inv_sqrt;
    for (int i = 0; i < d; ++i) {
      out.Y.col(i * M + m) = theta.col(i * M + m) + root * eps.col(i * M + m) / std::sqrt(T);
    }
  }
  return out;
}

/// Heteroskedastic local regression: Y_im = (h^{|alpha|} D^alpha b_i(a_m))_k
/// + V^{-1/2} xi_im / sqrt(T h^d mu_b(a_m)), and the reduced observation
/// Y~_m = b(a_m) + eps_m / sqrt(T h^d mu_b(a_m)).
struct HeteroObservations
{
  Matrix Y;       ///< K x (d M)
  Matrix reduced; ///< d x M
  Matrix mean;    ///< K x (d M), the noiseless part of Y
  Vector scale;   ///< per cell 1/sqrt(T h^d mu_b(a_m))
};

inline HeteroObservations hetero_sampler(const DriftField& field, const LocalDesign& design, double T,
                                         Philox4x32& rng)
{
  const int M = design.cells();
  const int d = design.dim();
  const int K = design.K();
  const Matrix V_inv_sqrt = spd_inverse_sqrt(matrix_V(design.basis()));
  const double hd = std::pow(design.h(), d);
  std::normal_distribution<double> normal;
  HeteroObservations out;
  out.Y.resize(K, d * M);
  out.mean.resize(K, d * M);
  out.reduced.resize(d, M);
  out.scale.resize(M);
  Vector xi(K);
  for (int m = 0; m < M; ++m) {
    const Vector corner = design.corner(m);
    const double mu = field.density(corner);
    if (!(mu > 0)) {
      throw std::domain_error("hetero_sampler: invariant density vanishes at a grid point");
    }
    const double scale = 1.0 / std::sqrt(T * hd * mu);
    out.scale(m) = scale;
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < K; ++k) {
        out.mean(k, i * M + m) = std::pow(design.h(), design.basis().degree(k)) *
                                 field.drift_derivative(i, design.basis().alpha(k), corner);
        xi(k) = normal(rng);
      }
      out.Y.col(i * M + m) = out.mean.col(i * M + m) + scale * (V_inv_sqrt * xi);
    }
    const Vector b = field.drift(corner);
    for (int i = 0; i < d; ++i) {
      out.reduced(i, m) = b(i) + scale * normal(rng);
    }
  }
  return out;
}

/// f_b = sum_{m,j} [ sqrt(T) theta_j(a_m)^T eta_mj - (T/2) theta_j(a_m)^T J_m theta_j(a_m) ].
inline double loglik_fb(const Matrix& eta, const Matrix& theta, const std::vector<CellMatrices>& cells, double T)
{
  if (eta.rows() != theta.rows() || eta.cols() != theta.cols()) {
    throw std::invalid_argument("loglik_fb: eta and theta shapes differ");
  }
  const int M = static_cast<int>(cells.size());
  double f = 0.0;
  for (Eigen::Index c = 0; c < theta.cols(); ++c) {
    const auto th = theta.col(c);
    if (th.isZero(0.0)) {
      continue;
    }
    const Matrix& J = cells[static_cast<std::size_t>(c % M)].J;
    f += std::sqrt(T) * th.dot(eta.col(c)) - 0.5 * T * th.dot(J * th);
  }
  return f;
}

} // namespace ergodiff
