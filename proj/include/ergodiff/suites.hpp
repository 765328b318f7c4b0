#pragma once

#include "coupling.hpp"
#include "estimators.hpp"
#include "experiment.hpp"
#include "gauss_field.hpp"
#include "mc_stats.hpp"
#include "parallel.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace ergodiff {

/// One checked quantity: pass iff the statistic meets the threshold in the
/// sense recorded by the suite (the detail string says which).
struct CriterionLine
{
  std::string id;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

struct SuiteResult
{
  std::string suite;
  std::vector<CriterionLine> lines;

  bool pass() const
  {
    for (const auto& l : lines) {
      if (!l.pass) {
        return false;
      }
    }
    return !lines.empty();
  }
};

/// CSV output with 17 significant digits.
class CsvWriter
{
public:
  CsvWriter(const std::filesystem::path& file, const std::vector<std::string>& header) : out_(file)
  {
    if (!out_) {
      throw std::runtime_error("cannot open " + file.string() + " for writing");
    }
    out_ << std::setprecision(17);
    for (std::size_t i = 0; i < header.size(); ++i) {
      out_ << (i ? "," : "") << header[i];
    }
    out_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... values)
  {
    bool first = true;
    ((out_ << (first ? "" : ",") << values, first = false), ...);
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

inline void write_summary(const std::filesystem::path& dir, const SuiteResult& result)
{
  CsvWriter csv(dir / ("summary_" + result.suite + ".csv"), {"id", "statistic", "threshold", "pass"});
  for (const auto& l : result.lines) {
    csv.row(l.id, l.statistic, l.threshold, l.pass ? "pass" : "fail");
  }
}

inline std::string format_point(const Vector& x)
{
  std::ostringstream s;
  s << std::setprecision(17);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    s << (k ? ":" : "") << x(k);
  }
  return s.str();
}

/// Regular grid of n^d points spanning [-extent, extent]^d (a single point
/// at the origin when n == 1).
inline std::vector<Vector> evaluation_points(int d, int n, double extent)
{
  std::vector<Vector> pts;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  while (true) {
    Vector x(d);
    for (int k = 0; k < d; ++k) {
      x(k) = n == 1 ? 0.0 : -extent + 2.0 * extent * idx[static_cast<std::size_t>(k)] / (n - 1);
    }
    pts.push_back(std::move(x));
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == n) {
      idx[k] = 0;
      ++k;
    }
    if (k == idx.size()) {
      return pts;
    }
  }
}

// ---------------------------------------------------------------- design

struct DesignSuiteOptions
{
  std::vector<double> scaling_h{0.2, 0.1, 0.05};
};

inline SuiteResult run_design_suite(const ExperimentConfig& e, const DesignSuiteOptions& opt = {})
{
  namespace fs = std::filesystem;
  fs::create_directories(e.out_dir);
  SuiteResult res{"design", {}};

  // Kernel moments by an independent adaptive rule.
  {
    const int q = taylor_order(e.pclass.beta) + 1;
    const Kernel k = build_kernel(q);
    auto moment = [&](int a) {
      return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
          [&](double u) { return k.profile(u) * std::pow(u, a); }, -1.0, 1.0, 0, 1e-15);
    };
    const double mass_error = std::abs(moment(0) - 1.0);
    double worst = 0.0;
    std::ostringstream detail;
    detail << "q=" << q << " |int k - 1|=" << mass_error;
    for (int a = 1; a <= q; ++a) {
      const double m = std::abs(moment(a));
      worst = std::max(worst, m);
      detail << " |m" << a << "|=" << m;
    }
    res.lines.push_back({"1", worst, 1e-8, mass_error < 1e-10 && worst < 1e-8, detail.str()});
  }

  // V for d = 2, order 1 against the monomial integrals on [0,1]^2.
  {
    Matrix expected(3, 3);
    expected << 1.0, 0.5, 0.5, 0.5, 1.0 / 3.0, 0.25, 0.5, 0.25, 1.0 / 3.0;
    const double err = (matrix_V(BasisIndex(2, 1)) - expected).cwiseAbs().maxCoeff();
    res.lines.push_back({"2", err, 1e-12, err < 1e-12, "max entrywise error"});
  }

  // Scaling of the design matrices.
  {
    const DriftField center = e.center_field();
    const BasisIndex basis(e.d, taylor_order(e.pclass.beta));
    const Matrix V = matrix_V(basis);
    const double inverse_bound = 2.0 * operator_norm(V.inverse());
    CsvWriter csv(fs::path(e.out_dir) / "design.csv",
                  {"h", "m", "deviation", "inverse_norm", "inverse_bound", "condition"});
    std::vector<double> deviations;
    std::vector<double> worst_deviations;
    double worst_inverse = 0.0;
    for (double h : opt.scaling_h) {
      const LocalDesign design(e.a, h, basis);
      double worst = 0.0;
      double total = 0.0;
      worst_inverse = 0.0;
      for (int m = 0; m < design.cells(); ++m) {
        const Matrix Jm = matrix_Jm(center, design, m);
        const ScalingStatistic s = scaling_statistic(center, design, m, Jm, V);
        csv.row(h, m, s.deviation, s.inverse_norm, inverse_bound, s.condition);
        worst = std::max(worst, s.deviation);
        total += s.deviation;
        worst_inverse = std::max(worst_inverse, s.inverse_norm);
      }
      deviations.push_back(total / design.cells());
      worst_deviations.push_back(worst);
    }
    bool decreasing = true;
    for (std::size_t i = 1; i < deviations.size(); ++i) {
      decreasing = decreasing && deviations[i] < deviations[i - 1];
    }
    std::ostringstream detail;
    detail << "cell-average deviation per h:";
    for (double v : deviations) {
      detail << ' ' << v;
    }
    detail << "; max over cells:";
    for (double v : worst_deviations) {
      detail << ' ' << v;
    }
    detail << "; strictly decreasing=" << (decreasing ? "yes" : "no");
    res.lines.push_back({"3.deviation", deviations.back(), e.thresholds.scaling_deviation,
                         decreasing && deviations.back() < e.thresholds.scaling_deviation, detail.str()});
    std::ostringstream inv;
    inv << "max_m ||h^d mu J_h J_m^-1 J_h|| at smallest h vs 2||V^-1|| = " << inverse_bound;
    res.lines.push_back({"3.inverse", worst_inverse, inverse_bound, worst_inverse <= inverse_bound, inv.str()});
  }

  // Regularity gates.
  {
    int mismatches = 0;
    std::ostringstream detail;
    auto expect = [&](bool condition, const std::string& what) {
      if (!condition) {
        ++mismatches;
        detail << what << "; ";
      }
    };
    const double tiny = 1e-9;
    const GateReport at2 = regularity_gates(2.0, 2);
    expect(std::abs(at2.local_threshold - 1.0) < 1e-12, "d=2 local threshold != 1");
    expect(std::abs(at2.global_threshold - 1.0) < 1e-12, "d=2 global threshold != 1");
    expect(regularity_gates(1.0 + tiny, 2).local_gate && !regularity_gates(1.0, 2).local_gate,
           "d=2 local gate not at beta=1");
    expect(regularity_gates(1.0 + tiny, 2).global_gate && !regularity_gates(1.0, 2).global_gate,
           "d=2 global gate not at beta=1");
    for (int d = 4; d <= 8; ++d) {
      const double t = d * d / 4.0 - 1.0;
      const GateReport g = regularity_gates(t, d);
      expect(std::abs(g.global_threshold - t) < 1e-12, "global threshold != (d/2)^2-1 at d=" + std::to_string(d));
      expect(!g.global_gate, "global gate passes at equality, d=" + std::to_string(d));
      expect(regularity_gates(t + 1e-6, d).global_gate, "global gate fails above threshold, d=" + std::to_string(d));
    }
    expect(!regularity_gates(3.0, 4).global_gate, "d=4 beta=3 should fail");
    res.lines.push_back({"11", static_cast<double>(mismatches), 0.5, mismatches == 0,
                         mismatches ? detail.str() : "all gate checks agree"});
  }
  write_summary(e.out_dir, res);
  return res;
}

// ----------------------------------------------------------------- rates

struct RateRow
{
  double T = 0.0;
  double h = 0.0;
  double drift_mse = 0.0;
  double density_mse = 0.0;
};

inline SuiteResult run_rates_suite(const ExperimentConfig& e)
{
  namespace fs = std::filesystem;
  fs::create_directories(e.out_dir);
  const DriftField field = e.field();
  const int d = e.d;
  const Kernel kernel = build_kernel(taylor_order(e.pclass.beta) + 1);
  const auto points = evaluation_points(d, e.estimator_points, e.estimator_extent);
  const auto np = points.size();
  const DensityLowerBound lower(e.pclass, d);
  std::vector<double> floor_at(np);
  std::vector<double> mu_true(np);
  std::vector<Vector> b_true(np);
  for (std::size_t p = 0; p < np; ++p) {
    floor_at[p] = lower(points[p]);
    mu_true[p] = field.density(points[p]);
    b_true[p] = field.drift(points[p]);
  }

  CsvWriter csv(fs::path(e.out_dir) / "rates.csv", {"run_id", "T", "h", "estimator", "x", "replicate", "sq_error"});
  std::vector<RateRow> rows;
  for (std::size_t run = 0; run < e.T_list.size(); ++run) {
    const double T = e.T_list[run];
    // Estimator bandwidth: the rule is applied without snapping to a/k.
    const double h = bandwidth_rule(BandwidthRule::estimator, T, e.pclass.beta, d, 0.0, 0.0, 0.0, e.h_scale);
    const SimConfig cfg = e.sim(T);
    Matrix drift_err(e.n_reps, static_cast<Eigen::Index>(np));
    Matrix density_err(e.n_reps, static_cast<Eigen::Index>(np));
    parallel_for(static_cast<std::size_t>(e.n_reps), worker_count(e.workers), [&](std::size_t rep) {
      std::vector<PointEstimator> est;
      for (const auto& x : points) {
        est.emplace_back(x, h, kernel, cfg.dt);
      }
      simulate_stream(field, cfg, rep, [&](std::size_t k, const Vector& x, const Vector& dx, const Vector& dw) {
        for (auto& pe : est) {
          pe(k, x, dx, dw);
        }
      });
      for (std::size_t p = 0; p < np; ++p) {
        const auto r = static_cast<Eigen::Index>(rep);
        const auto c = static_cast<Eigen::Index>(p);
        drift_err(r, c) = (est[p].drift(floor_at[p]) - b_true[p]).squaredNorm();
        const double e_mu = est[p].density() - mu_true[p];
        density_err(r, c) = e_mu * e_mu;
      }
    });
    for (int rep = 0; rep < e.n_reps; ++rep) {
      for (std::size_t p = 0; p < np; ++p) {
        const std::string x = format_point(points[p]);
        csv.row(run, T, h, "b", x, rep, drift_err(rep, static_cast<Eigen::Index>(p)));
        csv.row(run, T, h, "mu", x, rep, density_err(rep, static_cast<Eigen::Index>(p)));
      }
    }
    rows.push_back({T, h, drift_err.mean(), density_err.mean()});
  }

  CsvWriter table(fs::path(e.out_dir) / "rates_mse.csv", {"T", "h", "drift_mse", "density_mse"});
  std::vector<std::pair<double, double>> drift_table;
  std::vector<std::pair<double, double>> density_table;
  for (const auto& r : rows) {
    table.row(r.T, r.h, r.drift_mse, r.density_mse);
    drift_table.emplace_back(r.T, r.drift_mse);
    density_table.emplace_back(r.T, r.density_mse);
  }
  const RateFit drift = rate_fit(drift_table);
  const RateFit density = rate_fit(density_table);
  const double target = drift_risk_slope(e.pclass.beta, d);
  const auto& t = e.thresholds;
  SuiteResult res{"rates", {}};
  std::ostringstream dd;
  dd << "fitted " << drift.slope << " (se " << drift.slope_se << "), theory " << target << " +- " << t.slope_tol;
  res.lines.push_back({"7.drift", drift.slope, target, std::abs(drift.slope - target) <= t.slope_tol, dd.str()});
  std::ostringstream md;
  md << "fitted " << density.slope << " (se " << density.slope_se << "), window [" << t.density_slope_lo << ", "
     << t.density_slope_hi << "]";
  res.lines.push_back({"7.density", density.slope, t.density_slope_hi,
                       density.slope >= t.density_slope_lo && density.slope <= t.density_slope_hi, md.str()});
  write_summary(e.out_dir, res);
  return res;
}

// -------------------------------------------------------------- coupling

/// Offset separating the replicate streams of independent ensembles.
inline constexpr std::uint64_t kEnsembleOffset = std::uint64_t{1} << 32;

/// Whitened covariance diagnostics of stacked coupled vectors; `samples`
/// has rows = replicates and columns grouped in blocks of K per (j, m).
struct BlockDiagnostics
{
  Vector rel_frobenius; ///< per block, ||C - J_m||_F / ||J_m||_F
  Vector skewness;      ///< per block, pooled whitened components
  Vector kurtosis;
  double max_cross = 0.0; ///< largest |entry| of whitened off-block covariance
};

inline BlockDiagnostics block_diagnostics(const Matrix& samples, const std::vector<CellMatrices>& cells, int K)
{
  const auto blocks = samples.cols() / K;
  const int M = static_cast<int>(cells.size());
  Matrix white(samples.rows(), samples.cols());
  BlockDiagnostics out;
  out.rel_frobenius.resize(blocks);
  out.skewness.resize(blocks);
  out.kurtosis.resize(blocks);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const auto& cell = cells[static_cast<std::size_t>(b % M)];
    const Matrix block = samples.middleCols(b * K, K);
    out.rel_frobenius(b) = relative_frobenius(mc::sample_covariance(block), cell.J);
    white.middleCols(b * K, K) = block * cell.J_inv_sqrt; // J^{-1/2} is symmetric
    const Matrix wb = white.middleCols(b * K, K);
    const Vector pooled = Eigen::Map<const Vector>(wb.data(), wb.size());
    out.skewness(b) = mc::skewness(pooled);
    out.kurtosis(b) = mc::excess_kurtosis(pooled);
  }
  const Matrix C = mc::sample_covariance(white);
  for (Eigen::Index i = 0; i < C.rows(); ++i) {
    for (Eigen::Index j = 0; j < C.cols(); ++j) {
      if (i / K != j / K) {
        out.max_cross = std::max(out.max_cross, std::abs(C(i, j)));
      }
    }
  }
  return out;
}

inline Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

/// Pooled relative Frobenius difference of per-block covariances.
inline double pooled_covariance_difference(const Matrix& a, const Matrix& b, int K)
{
  double diff = 0.0;
  double ref = 0.0;
  for (Eigen::Index blk = 0; blk < a.cols() / K; ++blk) {
    const Matrix ca = mc::sample_covariance(a.middleCols(blk * K, K));
    const Matrix cb = mc::sample_covariance(b.middleCols(blk * K, K));
    diff += (ca - cb).squaredNorm();
    ref += cb.squaredNorm();
  }
  return std::sqrt(diff / ref);
}

inline SuiteResult run_coupling_suite(const ExperimentConfig& e)
{
  namespace fs = std::filesystem;
  fs::create_directories(e.out_dir);
  const double T = e.T();
  const DriftField center = e.center_field();
  const DriftField bump = e.bump_field();
  const LocalDesign design = e.design(T);
  const auto cells = design_matrices(center, design);
  const TaylorField center_bar(center, design);
  const int K = design.K();
  const int M = design.cells();
  const int d = design.dim();
  const int cols = K * d * M;
  const SimConfig cfg = e.sim(T);
  const auto n = static_cast<std::size_t>(e.n_reps);
  const int workers = worker_count(e.workers);

  // Alternative for the likelihood check, shrunk so that T sum theta^T J theta <= 1.
  Matrix theta = theta_table(bump, center, design);
  double quad = 0.0;
  for (int c = 0; c < d * M; ++c) {
    quad += T * theta.col(c).dot(cells[static_cast<std::size_t>(c % M)].J * theta.col(c));
  }
  const Matrix theta_lik = quad > 1.0 ? Matrix(theta / std::sqrt(quad)) : theta;
  const double quad_lik = std::min(quad, 1.0);
  const Matrix theta_zero = theta_table(center, center, design);

  Matrix eta(e.n_reps, cols);
  Matrix phi_center(e.n_reps, cols);
  Matrix phi_bump(e.n_reps, cols);
  Matrix direct_center(e.n_reps, cols);
  Matrix direct_bump(e.n_reps, cols);
  Vector exp_f(e.n_reps);
  Vector f_center(e.n_reps);
  std::vector<int> stopped(n * static_cast<std::size_t>(M), 0);
  std::vector<double> tau_gap(n * static_cast<std::size_t>(M), 0.0);

  parallel_for(n, workers, [&](std::size_t rep) {
    const auto r = static_cast<Eigen::Index>(rep);
    CellAccumulator acc_eta(design, cells, T, cfg.dt);
    CellAccumulator acc_phi(design, cells, T, cfg.dt);
    const DriftCorrection by_center{&center};
    const TaylorCorrection by_taylor{&center_bar};
    simulate_stream(center, cfg, rep, [&](std::size_t k, const Vector& x, const Vector& dx, const Vector&) {
      acc_eta.add(k, x, dx, by_center);
      acc_phi.add(k, x, dx, by_taylor);
    });
    const auto out_eta = acc_eta.finish(cfg.steps());
    const auto out_phi = acc_phi.finish(cfg.steps());
    Philox4x32 noise = make_stream(cfg.seed, rep, StreamRole::coupling_noise);
    const Matrix eps_eta = standard_normal_block(K, d * M, noise);
    const Matrix eps_phi = standard_normal_block(K, d * M, noise);
    const Matrix eta_rep = couple_all(out_eta, cells, T, eps_eta);
    eta.row(r) = flatten(eta_rep).transpose();
    phi_center.row(r) = flatten(phi1(out_phi, cells, design, T, eps_phi).Y).transpose();
    for (int m = 0; m < M; ++m) {
      const auto& o = out_eta[static_cast<std::size_t>(m)];
      stopped[rep * static_cast<std::size_t>(M) + static_cast<std::size_t>(m)] = o.stopped ? 1 : 0;
      tau_gap[rep * static_cast<std::size_t>(M) + static_cast<std::size_t>(m)] = (T - o.tau) / T;
    }
    f_center(r) = loglik_fb(eta_rep, theta_zero, cells, T);
    exp_f(r) = std::exp(loglik_fb(eta_rep, theta_lik, cells, T));

    // Independent ensemble under the bump alternative.
    const TaylorCorrection by_taylor_b{&center_bar};
    const auto out_bump = cell_outcomes(bump, cfg, rep + kEnsembleOffset, design, cells, by_taylor_b);
    Philox4x32 noise_b = make_stream(cfg.seed, rep + kEnsembleOffset, StreamRole::coupling_noise);
    phi_bump.row(r) = flatten(phi1(out_bump, cells, design, T, standard_normal_block(K, d * M, noise_b)).Y).transpose();

    Philox4x32 reg = make_stream(cfg.seed, rep, StreamRole::regression_noise);
    direct_center.row(r) = flatten(regression_sampler(design, cells, theta_zero, T, reg).Y).transpose();
    Philox4x32 reg_b = make_stream(cfg.seed, rep + kEnsembleOffset, StreamRole::regression_noise);
    direct_bump.row(r) = flatten(regression_sampler(design, cells, theta, T, reg_b).Y).transpose();
  });

  if (e.write_samples) {
    CsvWriter csv(fs::path(e.out_dir) / "coupling.csv", {"rep", "m", "j", "k", "eta_k"});
    for (int rep = 0; rep < e.n_reps; ++rep) {
      for (int j = 0; j < d; ++j) {
        for (int m = 0; m < M; ++m) {
          for (int k = 0; k < K; ++k) {
            csv.row(rep, m, j, k, eta(rep, (j * M + m) * K + k));
          }
        }
      }
    }
  }

  const BlockDiagnostics diag = block_diagnostics(eta, cells, K);
  {
    CsvWriter csv(fs::path(e.out_dir) / "coupling_summary.csv",
                  {"m", "j", "row", "col", "sample_cov", "target_cov", "rel_frobenius", "skewness",
                   "excess_kurtosis"});
    for (int j = 0; j < d; ++j) {
      for (int m = 0; m < M; ++m) {
        const int b = j * M + m;
        const Matrix C = mc::sample_covariance(eta.middleCols(b * K, K));
        for (int r = 0; r < K; ++r) {
          for (int c = 0; c < K; ++c) {
            csv.row(m, j, r, c, C(r, c), cells[static_cast<std::size_t>(m)].J(r, c), diag.rel_frobenius(b),
                    diag.skewness(b), diag.kurtosis(b));
          }
        }
      }
    }
  }

  const auto& t = e.thresholds;
  SuiteResult res{"coupling", {}};
  const double worst_cov = diag.rel_frobenius.maxCoeff();
  res.lines.push_back({"4.cov", worst_cov, t.cov_rel, worst_cov < t.cov_rel,
                       "max over (m,j) of rel. Frobenius distance to J_m"});
  res.lines.push_back({"4.cross", diag.max_cross, t.cross, diag.max_cross < t.cross,
                       "max |whitened cross-block covariance|"});
  const double worst_moment = std::max(diag.skewness.cwiseAbs().maxCoeff(), diag.kurtosis.cwiseAbs().maxCoeff());
  std::ostringstream mom;
  mom << "max |skew| " << diag.skewness.cwiseAbs().maxCoeff() << ", max |excess kurtosis| "
      << diag.kurtosis.cwiseAbs().maxCoeff() << " (pooled whitened components per block)";
  res.lines.push_back({"4.moments", worst_moment, t.moment, worst_moment < t.moment, mom.str()});

  const Vector z_center = mc::mean_difference_z(phi_center, direct_center);
  const Vector z_bump = mc::mean_difference_z(phi_bump, direct_bump);
  const double cov_center = pooled_covariance_difference(phi_center, direct_center, K);
  const double cov_bump = pooled_covariance_difference(phi_bump, direct_bump, K);
  res.lines.push_back({"5.center.mean", z_center.cwiseAbs().maxCoeff(), t.z, z_center.cwiseAbs().maxCoeff() < t.z,
                       "max |z| of J^-1 Phi1 vs direct sampler, b = b°"});
  res.lines.push_back({"5.center.cov", cov_center, t.cov_rel, cov_center < t.cov_rel,
                       "pooled rel. Frobenius covariance difference, b = b°"});
  res.lines.push_back({"5.bump.mean", z_bump.cwiseAbs().maxCoeff(), t.z, z_bump.cwiseAbs().maxCoeff() < t.z,
                       "max |z| of J^-1 Phi1 vs direct sampler, bump alternative"});
  res.lines.push_back({"5.bump.cov", cov_bump, t.cov_rel, cov_bump < t.cov_rel,
                       "pooled rel. Frobenius covariance difference, bump alternative"});

  double frac = 0.0;
  double gap = 0.0;
  for (std::size_t i = 0; i < stopped.size(); ++i) {
    frac += stopped[i];
    gap += tau_gap[i];
  }
  frac /= static_cast<double>(stopped.size());
  gap /= static_cast<double>(stopped.size());
  std::ostringstream st;
  st << "fraction of (rep,m) with tau_m < T; mean (T - tau_m)/T = " << gap;
  res.lines.push_back({"9", frac, t.stop_fraction, frac < t.stop_fraction, st.str()});

  const double f0 = f_center.cwiseAbs().maxCoeff();
  res.lines.push_back({"10.center", f0, 0.0, f0 == 0.0, "max |f_b°| over replicates"});
  const double se = std::sqrt(mc::variance(exp_f) / static_cast<double>(e.n_reps));
  const double z_lik = std::abs(exp_f.mean() - 1.0) / se;
  std::ostringstream lk;
  lk << "mean e^f_b = " << exp_f.mean() << " (se " << se << "), T sum theta'J theta = " << quad_lik;
  res.lines.push_back({"10.mean", z_lik, t.z, z_lik < t.z, lk.str()});
  write_summary(e.out_dir, res);
  return res;
}

// ----------------------------------------------------------------- shift

inline SuiteResult run_shift_suite(const ExperimentConfig& e)
{
  namespace fs = std::filesystem;
  fs::create_directories(e.out_dir);
  const double T = e.T();
  const DriftField center = e.center_field();
  const DriftField bump = e.bump_field();
  const LocalDesign design = e.design(T);
  const auto cells = design_matrices(center, design);
  const int r = e.lattice_factor;
  const FieldDesign fd(design, center, r);
  const Lattice& lattice = fd.lattice();
  const int d = design.dim();
  const int M = design.cells();
  const Matrix theta = theta_table(bump, center, design);
  const TaylorField bump_bar(bump, design, &center);
  const Matrix quad_mean = shift_mean(taylor_signal(bump_bar), center, lattice);
  const Matrix mid_mean = phi2_mean(fd, theta);
  const auto n = static_cast<std::size_t>(e.n_reps);

  // B_hat evaluation points a_m + (j1, ..., jd) h/q inside each cell, q | r.
  const int q = r % 4 == 0 ? 4 : r;
  const int step = r / q;
  const Lattice probe_grid(Vector::Zero(d), Vector::Constant(d, static_cast<double>(q)), 1.0);
  std::vector<std::vector<int>> probes;
  for (int c = 0; c < probe_grid.cells(); ++c) {
    auto coords = probe_grid.cell_coords(c);
    for (auto& k : coords) {
      k = (k + 1) * step;
    }
    probes.push_back(coords);
  }
  const auto np = static_cast<Eigen::Index>(probes.size());
  const int half = r % 2 == 0 ? r / 2 : r;
  const Eigen::Index cross_blocks = block_sums(lattice, Matrix::Zero(lattice.cells(), d), half).rows();

  Matrix cell_sums(e.n_reps, d * M);     // Phi2 per design cell
  Matrix probe_values(e.n_reps * d * M, np);
  Matrix cross(e.n_reps, 2 * cross_blocks);
  Vector identity_gap(e.n_reps);
  std::vector<ShiftField> phi_fields(n, ShiftField{lattice, Matrix(), T});
  std::vector<ShiftField> direct_fields(n, ShiftField{lattice, Matrix(), T});

  parallel_for(n, worker_count(e.workers), [&](std::size_t rep) {
    const auto row = static_cast<Eigen::Index>(rep);
    Philox4x32 reg = make_stream(e.seed, rep, StreamRole::regression_noise);
    const CoupledRegression Y = regression_sampler(design, cells, theta, T, reg);
    Philox4x32 sheet_rng = make_stream(e.seed, rep, StreamRole::sheet);
    const Matrix sheets = sheet_increments(lattice, d, sheet_rng);
    ShiftField via_bridge = phi2(Y, sheets, fd, T, Phi2Route::bridge);
    const ShiftField via_rect = phi2(Y, sheets, fd, T, Phi2Route::rectangle);
    double gap = (via_bridge.increments - via_rect.increments).cwiseAbs().maxCoeff();
    for (int i = 0; i < d; ++i) {
      gap = std::max(gap, (via_bridge.values(i) - via_rect.values(i)).cwiseAbs().maxCoeff());
    }
    identity_gap(row) = gap;

    const Matrix sums = block_sums(lattice, via_bridge.increments, r);
    cell_sums.row(row) = flatten(sums).transpose();
    const Matrix noise = reconstruct_sheet(via_bridge, mid_mean);
    for (int i = 0; i < d; ++i) {
      for (int m = 0; m < M; ++m) {
        const auto& cl = fd.cell(m);
        const Vector local = fd.restrict(m, noise.col(i));
        const Vector corners = cumulative_sum(cl.local, local.transpose()).row(0).transpose();
        const auto out_row = static_cast<Eigen::Index>((rep * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)) *
                                                           static_cast<std::size_t>(M) +
                                                       static_cast<std::size_t>(m));
        for (Eigen::Index p = 0; p < np; ++p) {
          probe_values(out_row, p) = corners(cl.local.corner_index(probes[static_cast<std::size_t>(p)]));
        }
      }
    }
    const Matrix halves = block_sums(lattice, noise, half);
    cross.row(row) << halves.col(0).transpose(), halves.col(d > 1 ? 1 : 0).transpose();

    Philox4x32 shift_rng = make_stream(e.seed, rep, StreamRole::shift_noise);
    direct_fields[rep] = shift_sampler(quad_mean, lattice, T, shift_rng);
    phi_fields[rep] = std::move(via_bridge);
  });

  // Means per design cell against the quadrature of b_bar sqrt(mu°).
  const Matrix expected_sums = block_sums(lattice, quad_mean, r);
  const Vector expected = flatten(expected_sums);
  const Vector se = mc::mean_standard_errors(cell_sums);
  const Vector z = (mc::column_means(cell_sums) - expected).cwiseQuotient(se);

  // Sheet covariance at the probe points, pooled over cells and components.
  Matrix target(np, np);
  const double h = design.h();
  for (Eigen::Index a = 0; a < np; ++a) {
    for (Eigen::Index b = 0; b < np; ++b) {
      double v = 1.0;
      for (int k = 0; k < d; ++k) {
        v *= std::min(probes[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)],
                      probes[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)]) *
             h / r;
      }
      target(a, b) = v;
    }
  }
  Matrix pooled = Matrix::Zero(np, np);
  for (int g = 0; g < d * M; ++g) {
    Matrix block(e.n_reps, np);
    for (int rep = 0; rep < e.n_reps; ++rep) {
      block.row(rep) = probe_values.row(static_cast<Eigen::Index>(rep) * d * M + g);
    }
    pooled += mc::sample_covariance(block);
  }
  pooled /= d * M;
  const double cov_err = relative_frobenius(pooled, target);

  double max_corr = 0.0;
  if (d > 1) {
    const Matrix corr = mc::correlation(mc::sample_covariance(cross));
    max_corr = corr.topRightCorner(cross_blocks, cross_blocks).cwiseAbs().maxCoeff();
  }
  const FieldComparison cmp = compare_fields(phi_fields, direct_fields, r, e.thresholds.z, e.thresholds.cov_rel);

  {
    CsvWriter csv(fs::path(e.out_dir) / "shift.csv",
                  {"cell", "component", "midpoint", "mean_phi2", "mean_direct", "quadrature"});
    for (int c = 0; c < lattice.cells(); ++c) {
      for (int i = 0; i < d; ++i) {
        double a = 0.0;
        double b = 0.0;
        for (std::size_t rep = 0; rep < n; ++rep) {
          a += phi_fields[rep].increments(c, i);
          b += direct_fields[rep].increments(c, i);
        }
        csv.row(c, i, format_point(lattice.midpoint(c)), a / e.n_reps, b / e.n_reps, quad_mean(c, i));
      }
    }
    CsvWriter diag(fs::path(e.out_dir) / "shift_summary.csv", {"statistic", "value"});
    diag.row("max_abs_z_cell_means", z.cwiseAbs().maxCoeff());
    diag.row("sheet_cov_rel_frobenius", cov_err);
    diag.row("max_cross_component_corr", max_corr);
    diag.row("max_route_gap", identity_gap.maxCoeff());
    diag.row("compare_max_abs_z", cmp.max_abs_z);
    diag.row("compare_cov_rel_frobenius", cmp.cov_rel_frobenius);
  }

  const auto& t = e.thresholds;
  SuiteResult res{"shift", {}};
  const double zmax = z.cwiseAbs().maxCoeff();
  res.lines.push_back({"6.mean", zmax, t.z, zmax < t.z, "max |z| of per-cell Phi2 sums vs quadrature of b_bar sqrt(mu°)"});
  res.lines.push_back({"6.cov", cov_err, t.cov_rel, cov_err < t.cov_rel,
                       "rel. Frobenius of reconstructed sheet covariance vs |R_x ^ R_y|"});
  res.lines.push_back({"6.cross", max_corr, t.corr, max_corr < t.corr, "max |corr| between component increments"});
  res.lines.push_back({"6.identity", identity_gap.maxCoeff(), t.identity_tol, identity_gap.maxCoeff() <= t.identity_tol,
                       "max pathwise gap between the two Phi2 formulas"});
  std::ostringstream cm;
  cm << "Phi2 vs direct shift sampler: max |z| " << cmp.max_abs_z << ", cov rel. Frobenius " << cmp.cov_rel_frobenius;
  res.lines.push_back({"6.compare", cmp.cov_rel_frobenius, t.cov_rel, cmp.pass, cm.str()});
  write_summary(e.out_dir, res);
  return res;
}

// -------------------------------------------------------------- variance

inline SuiteResult run_variance_suite(const ExperimentConfig& e)
{
  namespace fs = std::filesystem;
  fs::create_directories(e.out_dir);
  const DriftField field = e.field();
  std::vector<BoundedFunction> fns;
  for (double s : e.variance_sides) {
    fns.push_back(BoundedFunction::indicator(Vector::Constant(e.d, -s / 2), Vector::Constant(e.d, s / 2)));
  }
  const auto results = variance_harness(field, fns, e.sim(e.T()), e.variance_r, e.workers);
  CsvWriter csv(fs::path(e.out_dir) / "variance.csv",
                {"side", "volume", "mass", "mean", "variance", "variance_se", "bound", "ratio"});
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    csv.row(e.variance_sides[i], r.volume, r.mass, r.mean, r.variance, r.variance_se, r.bound, r.ratio);
    lo = std::min(lo, r.ratio);
    hi = std::max(hi, r.ratio);
  }
  SuiteResult res{"variance", {}};
  std::ostringstream dt;
  dt << "ratios in [" << lo << ", " << hi << "]";
  res.lines.push_back({"8", hi / lo, e.thresholds.variance_ratio, hi / lo < e.thresholds.variance_ratio, dt.str()});
  write_summary(e.out_dir, res);
  return res;
}

inline SuiteResult run_suite(const ExperimentConfig& e, const std::string& name)
{
  if (name == "design") {
    return run_design_suite(e);
  }
  if (name == "rates") {
    return run_rates_suite(e);
  }
  if (name == "coupling") {
    return run_coupling_suite(e);
  }
  if (name == "shift") {
    return run_shift_suite(e);
  }
  if (name == "variance") {
    return run_variance_suite(e);
  }
  throw std::invalid_argument("unknown suite '" + name + "'");
}

} // namespace ergodiff
