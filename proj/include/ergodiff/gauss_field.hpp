#pragma once

#include "coupling.hpp"
#include "local_design.hpp"
#include "mc_stats.hpp"
#include "quadrature.hpp"
#include "rng.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace ergodiff {

class LatticeMismatch : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Regular lattice of cubes of side delta covering the box [lo, hi];
/// cell and corner indices run with the first axis fastest.
class Lattice
{
public:
  Lattice(Vector lo, Vector hi, double delta) : lo_(std::move(lo)), delta_(delta)
  {
    if (lo_.size() != hi.size() || lo_.size() < 1) {
      throw std::invalid_argument("Lattice: box corners must have equal positive dimension");
    }
    if (!(delta > 0)) {
      throw std::invalid_argument("Lattice: resolution must be positive");
    }
    for (Eigen::Index k = 0; k < lo_.size(); ++k) {
      const double ratio = (hi(k) - lo_(k)) / delta;
      if (!(ratio > 0.5) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
        throw LatticeMismatch("Lattice: resolution must divide the box sides");
      }
      n_.push_back(static_cast<int>(std::llround(ratio)));
    }
    cells_ = 1;
    corners_ = 1;
    for (int n : n_) {
      cells_ *= n;
      corners_ *= n + 1;
    }
  }

  int dim() const { return static_cast<int>(n_.size()); }
  double delta() const { return delta_; }
  double cell_volume() const { return std::pow(delta_, dim()); }
  const std::vector<int>& per_axis() const { return n_; }
  int cells() const { return cells_; }
  int corners() const { return corners_; }
  const Vector& lo() const { return lo_; }

  std::vector<int> cell_coords(int c) const
  {
    std::vector<int> out(n_.size());
    for (std::size_t k = 0; k < n_.size(); ++k) {
      out[k] = c % n_[k];
      c /= n_[k];
    }
    return out;
  }

  int cell_index(const std::vector<int>& coords) const
  {
    int c = 0;
    int stride = 1;
    for (std::size_t k = 0; k < n_.size(); ++k) {
      c += coords[k] * stride;
      stride *= n_[k];
    }
    return c;
  }

  std::vector<int> corner_coords(int c) const
  {
    std::vector<int> out(n_.size());
    for (std::size_t k = 0; k < n_.size(); ++k) {
      out[k] = c % (n_[k] + 1);
      c /= n_[k] + 1;
    }
    return out;
  }

  int corner_index(const std::vector<int>& coords) const
  {
    int c = 0;
    int stride = 1;
    for (std::size_t k = 0; k < n_.size(); ++k) {
      c += coords[k] * stride;
      stride *= n_[k] + 1;
    }
    return c;
  }

  Vector cell_lower(int c) const
  {
    const auto coords = cell_coords(c);
    Vector x(dim());
    for (int k = 0; k < dim(); ++k) {
      x(k) = lo_(k) + coords[static_cast<std::size_t>(k)] * delta_;
    }
    return x;
  }

  Vector midpoint(int c) const { return cell_lower(c).array() + 0.5 * delta_; }

  Vector corner_point(int c) const
  {
    const auto coords = corner_coords(c);
    Vector x(dim());
    for (int k = 0; k < dim(); ++k) {
      x(k) = lo_(k) + coords[static_cast<std::size_t>(k)] * delta_;
    }
    return x;
  }

  bool same_as(const Lattice& other) const
  {
    return n_ == other.n_ && std::abs(delta_ - other.delta_) <= 1e-12 * delta_ &&
           (lo_ - other.lo_).cwiseAbs().maxCoeff() <= 1e-12;
  }

private:
  Vector lo_;
  double delta_;
  std::vector<int> n_;
  int cells_ = 0;
  int corners_ = 0;
};

/// Rectangle sums F(x) = sum_{cells below x} f_c at every corner: column c
/// of `values` is the (vector) value of cell c; result has one column per
/// corner, zero on the lower faces.
inline Matrix cumulative_sum(const Lattice& lattice, const Matrix& values)
{
  if (values.cols() != lattice.cells()) {
    throw LatticeMismatch("cumulative_sum: one column per lattice cell required");
  }
  const auto& n = lattice.per_axis();
  Matrix out = Matrix::Zero(values.rows(), lattice.corners());
  std::vector<int> coords;
  for (int c = 0; c < lattice.cells(); ++c) {
    coords = lattice.cell_coords(c);
    for (auto& k : coords) {
      ++k;
    }
    out.col(lattice.corner_index(coords)) = values.col(c);
  }
  // Prefix sums along one axis at a time.
  int stride = 1;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const int len = n[k] + 1;
    for (int c = 0; c < lattice.corners(); ++c) {
      if ((c / stride) % len != 0) {
        out.col(c) += out.col(c - stride);
      }
    }
    stride *= len;
  }
  return out;
}

/// Inverse of cumulative_sum: cell increments from corner values.
inline Matrix lattice_differences(const Lattice& lattice, const Matrix& corners)
{
  if (corners.cols() != lattice.corners()) {
    throw LatticeMismatch("lattice_differences: one column per lattice corner required");
  }
  const auto& n = lattice.per_axis();
  Matrix work = corners;
  int stride = 1;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const int len = n[k] + 1;
    for (int c = lattice.corners() - 1; c >= 0; --c) {
      if ((c / stride) % len != 0) {
        work.col(c) -= work.col(c - stride);
      }
    }
    stride *= len;
  }
  Matrix out(corners.rows(), lattice.cells());
  std::vector<int> coords;
  for (int c = 0; c < lattice.cells(); ++c) {
    coords = lattice.cell_coords(c);
    for (auto& k : coords) {
      ++k;
    }
    out.col(c) = work.col(lattice.corner_index(coords));
  }
  return out;
}

/// Brownian sheet on a lattice: i.i.d. N(0, delta^d) cell increments and
/// the sheet values B(x) = sum of increments over [lo, x).
struct SheetField
{
  Lattice lattice;
  Vector increments;

  Vector values() const { return cumulative_sum(lattice, increments.transpose()).row(0).transpose(); }
};

inline Vector gaussian_increments(const Lattice& lattice, double variance, Philox4x32& rng)
{
  std::normal_distribution<double> normal;
  const double sd = std::sqrt(variance);
  Vector out(lattice.cells());
  for (int c = 0; c < lattice.cells(); ++c) {
    out(c) = sd * normal(rng);
  }
  return out;
}

inline SheetField brownian_sheet(const Lattice& lattice, Philox4x32& rng)
{
  return {lattice, gaussian_increments(lattice, lattice.cell_volume(), rng)};
}

inline SheetField brownian_sheet(Vector lo, Vector hi, double delta, Philox4x32& rng)
{
  return brownian_sheet(Lattice(std::move(lo), std::move(hi), delta), rng);
}

/// Gaussian shift field on a lattice: column i of `increments` holds the
/// cell increments of component i.
struct ShiftField
{
  Lattice lattice;
  Matrix increments; ///< cells x d
  double T = 0.0;

  /// Component i at the lattice corners.
  Vector values(int i) const
  {
    return cumulative_sum(lattice, increments.col(i).transpose()).row(0).transpose();
  }
};

using VectorFunction = std::function<void(ConstPoint, Eigen::Ref<Vector>)>;

/// Cell integrals of s_i(x) sqrt(mu°(x)) by Gauss quadrature, cells x d.
inline Matrix shift_mean(const VectorFunction& signal, const DriftField& center, const Lattice& lattice,
                         int order = 7)
{
  const int d = center.dim();
  Matrix out(lattice.cells(), d);
  Vector s(d);
  for (int c = 0; c < lattice.cells(); ++c) {
    const Vector lo = lattice.cell_lower(c);
    const Vector hi = lo.array() + lattice.delta();
    const Vector integral = integrate_box(
        [&](const Vector& x) -> Vector {
          signal(x, s);
          return s * std::sqrt(center.density(x));
        },
        lo, hi, 1, order);
    out.row(c) = integral.transpose();
  }
  return out;
}

inline VectorFunction drift_signal(const DriftField& field)
{
  return [&field](ConstPoint x, Eigen::Ref<Vector> out) { field.drift(x, out); };
}

inline VectorFunction taylor_signal(const TaylorField& field)
{
  return [&field](ConstPoint x, Eigen::Ref<Vector> out) { field.eval(x, out); };
}

/// dZ_i = (precomputed cell mean) + T^{-1/2} N(0, delta^d) per cell.
inline ShiftField shift_sampler(const Matrix& mean, const Lattice& lattice, double T, Philox4x32& rng)
{
  if (mean.rows() != lattice.cells()) {
    throw LatticeMismatch("shift_sampler: mean does not match the lattice");
  }
  ShiftField out{lattice, mean, T};
  const double sd = std::sqrt(lattice.cell_volume() / T);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < mean.cols(); ++i) {
    for (int c = 0; c < lattice.cells(); ++c) {
      out.increments(c, i) += sd * normal(rng);
    }
  }
  return out;
}

inline ShiftField shift_sampler(const DriftField& field, const DriftField& center, double T,
                                const Lattice& lattice, Philox4x32& rng)
{
  return shift_sampler(shift_mean(drift_signal(field), center, lattice), lattice, T, rng);
}

/// Lattice version of int (b - b°) sqrt(mu°) dZ_i summed over components:
/// `weights` holds the cell values of (b - b°) sqrt(mu°), cells x d.
inline double shift_statistic(const ShiftField& z, const Matrix& weights)
{
  if (weights.rows() != z.increments.rows() || weights.cols() != z.increments.cols()) {
    throw LatticeMismatch("shift_statistic: weights do not match the field");
  }
  return weights.cwiseProduct(z.increments).sum();
}

/// Lattice data of one design cell, evaluated at lattice-cell midpoints.
struct CellLattice
{
  int m = 0;
  Lattice local;           ///< lattice on C_m
  std::vector<int> global; ///< global lattice index of each local cell
  Matrix v;                ///< K x cells, v(u_c - a_m)
  Vector mu;               ///< mu°(u_c)
  Vector sqrt_mu;
  Matrix center_taylor; ///< d x cells, b_bar°(u_c)
  Matrix gram_cum;      ///< K*K x corners, int_{R(a_m,x)} v v^T mu° du
  Matrix weight_cum;    ///< K x corners, int_{R(a_m,x)} v sqrt(mu°) du
  Matrix J_lat;         ///< full-cell lattice Gram matrix
  Eigen::LLT<Matrix> J_lat_llt;
};

/// Lattice of resolution h/r on A together with per-design-cell data.
class FieldDesign
{
public:
  FieldDesign(const LocalDesign& design, const DriftField& center, int r)
    : design_(&design), lattice_(Vector::Constant(design.dim(), -design.half_width()),
                                 Vector::Constant(design.dim(), design.half_width()), design.h() / r),
      r_(r)
  {
    if (r < 1) {
      throw LatticeMismatch("FieldDesign: resolution factor must be positive");
    }
    const TaylorField center_bar(center, design);
    const int K = design.K();
    const int d = design.dim();
    const double vol = lattice_.cell_volume();
    for (int m = 0; m < design.cells(); ++m) {
      const Vector& corner = design.corner_ref(m);
      CellLattice cl{m, Lattice(corner, corner.array() + design.h(), lattice_.delta()), {}, {}, {}, {}, {}, {}, {}, {}, {}};
      const int n = cl.local.cells();
      cl.v.resize(K, n);
      cl.mu.resize(n);
      cl.sqrt_mu.resize(n);
      cl.center_taylor.resize(d, n);
      cl.global.resize(static_cast<std::size_t>(n));
      const auto cell_coords = design.cell_coords(m);
      Matrix gram(K * K, n);
      Matrix weight(K, n);
      Vector v(K);
      for (int c = 0; c < n; ++c) {
        auto coords = cl.local.cell_coords(c);
        for (int k = 0; k < d; ++k) {
          coords[static_cast<std::size_t>(k)] += cell_coords[static_cast<std::size_t>(k)] * r;
        }
        cl.global[static_cast<std::size_t>(c)] = lattice_.cell_index(coords);
        const Vector u = cl.local.midpoint(c);
        design.basis().evaluate(u - corner, v);
        cl.v.col(c) = v;
        cl.mu(c) = center.density(u);
        cl.sqrt_mu(c) = std::sqrt(cl.mu(c));
        cl.center_taylor.col(c) = center_bar.coefficients(m) * v;
        const Matrix outer = v * v.transpose() * cl.mu(c) * vol;
        gram.col(c) = Eigen::Map<const Vector>(outer.data(), K * K);
        weight.col(c) = v * cl.sqrt_mu(c) * vol;
      }
      cl.gram_cum = cumulative_sum(cl.local, gram);
      cl.weight_cum = cumulative_sum(cl.local, weight);
      cl.J_lat = Eigen::Map<const Matrix>(gram.rowwise().sum().eval().data(), K, K);
      cl.J_lat_llt.compute(cl.J_lat);
      cells_.push_back(std::move(cl));
    }
  }

  const LocalDesign& design() const { return *design_; }
  const Lattice& lattice() const { return lattice_; }
  int resolution() const { return r_; }
  const CellLattice& cell(int m) const { return cells_[static_cast<std::size_t>(m)]; }

  /// Gram matrix int_{R(a_m,x)} v v^T mu° at local corner `corner`.
  Matrix gram_at(int m, int corner) const
  {
    const int K = design_->K();
    return Eigen::Map<const Matrix>(cell(m).gram_cum.col(corner).data(), K, K);
  }

  /// Restriction of a global increment vector to cell m's local lattice.
  Vector restrict(int m, const Eigen::Ref<const Vector>& global) const
  {
    const auto& cl = cell(m);
    Vector out(cl.local.cells());
    for (int c = 0; c < cl.local.cells(); ++c) {
      out(c) = global(cl.global[static_cast<std::size_t>(c)]);
    }
    return out;
  }

private:
  const LocalDesign* design_;
  Lattice lattice_;
  int r_;
  std::vector<CellLattice> cells_;
};

/// V_i(x) = int_{R(a_m,x)} v sqrt(mu°) dB~ - G(x) J^{-1} int_{C_m} v sqrt(mu°) dB~
/// at the local corners of C_m (K x corners), with G(x) the rectangle Gram
/// matrix and J its full-cell value.
inline Matrix bridge_Vi(const FieldDesign& fd, int m, const Vector& local_increments)
{
  const auto& cl = fd.cell(m);
  if (local_increments.size() != cl.local.cells()) {
    throw LatticeMismatch("bridge_Vi: sheet does not match the cell lattice");
  }
  const int K = fd.design().K();
  Matrix weighted(K, cl.local.cells());
  for (int c = 0; c < cl.local.cells(); ++c) {
    weighted.col(c) = cl.v.col(c) * (cl.sqrt_mu(c) * local_increments(c));
  }
  Matrix out = cumulative_sum(cl.local, weighted);
  const Vector total = weighted.rowwise().sum();
  const Vector w = cl.J_lat_llt.solve(total);
  for (int c = 0; c < cl.local.corners(); ++c) {
    out.col(c) -= fd.gram_at(m, c) * w;
  }
  return out;
}

/// Phi2 of one cell and component by the three-term rectangle formula;
/// returns the field at the local corners.
inline Vector phi2_rectangle(const FieldDesign& fd, int m, int i, const Eigen::Ref<const Vector>& Y,
                             const Vector& local_increments, double T)
{
  const auto& cl = fd.cell(m);
  const double vol = cl.local.cell_volume();
  const int n = cl.local.cells();
  Matrix signal(1, n);
  Matrix weighted(fd.design().K(), n);
  for (int c = 0; c < n; ++c) {
    signal(0, c) = (cl.center_taylor(i, c) + cl.v.col(c).dot(Y)) * cl.sqrt_mu(c) * vol;
    weighted.col(c) = cl.v.col(c) * (cl.sqrt_mu(c) * local_increments(c));
  }
  const Vector w = cl.J_lat_llt.solve(Vector(weighted.rowwise().sum()));
  const Vector drift_part = cumulative_sum(cl.local, signal).row(0).transpose();
  const Vector sheet_part = cumulative_sum(cl.local, local_increments.transpose()).row(0).transpose();
  const Vector projection = cl.weight_cum.transpose() * w;
  return drift_part + (sheet_part - projection) / std::sqrt(T);
}

/// Phi2 of one cell and component through the bridge: V~_i = G(x) Y + T^{-1/2} V_i,
/// then dPhi = b_bar°_i sqrt(mu°) du + mu°^{-1/2} dV~_{i,1}; returns the
/// lattice increments.
inline Vector phi2_bridge(const FieldDesign& fd, int m, int i, const Eigen::Ref<const Vector>& Y,
                          const Vector& local_increments, double T)
{
  const auto& cl = fd.cell(m);
  const Matrix V = bridge_Vi(fd, m, local_increments);
  Matrix first(1, cl.local.corners());
  for (int c = 0; c < cl.local.corners(); ++c) {
    first(0, c) = fd.gram_at(m, c).row(0).dot(Y) + V(0, c) / std::sqrt(T);
  }
  const Vector dV = lattice_differences(cl.local, first).row(0).transpose();
  const double vol = cl.local.cell_volume();
  Vector out(cl.local.cells());
  for (int c = 0; c < cl.local.cells(); ++c) {
    out(c) = cl.center_taylor(i, c) * cl.sqrt_mu(c) * vol + dV(c) / cl.sqrt_mu(c);
  }
  return out;
}

enum class Phi2Route
{
  rectangle,
  bridge
};

/// Randomisation of regression observations into a shift field on the
/// lattice of `fd`. `sheets` is cells x d of independent sheet increments.
inline ShiftField phi2(const CoupledRegression& Y, const Matrix& sheets, const FieldDesign& fd, double T,
                       Phi2Route route = Phi2Route::bridge)
{
  const auto& lattice = fd.lattice();
  const int d = fd.design().dim();
  const int M = fd.design().cells();
  if (sheets.rows() != lattice.cells() || sheets.cols() != d) {
    throw LatticeMismatch("phi2: sheet increments do not match the lattice");
  }
  if (Y.M != M || Y.d != d || Y.K != fd.design().K()) {
    throw LatticeMismatch("phi2: regression does not match the design");
  }
  ShiftField out{lattice, Matrix(lattice.cells(), d), T};
  for (int m = 0; m < M; ++m) {
    const auto& cl = fd.cell(m);
    for (int i = 0; i < d; ++i) {
      const Vector local = fd.restrict(m, sheets.col(i));
      Vector inc;
      if (route == Phi2Route::rectangle) {
        const Vector corners = phi2_rectangle(fd, m, i, Y.at(i, m), local, T);
        inc = lattice_differences(cl.local, corners.transpose()).row(0).transpose();
      } else {
        inc = phi2_bridge(fd, m, i, Y.at(i, m), local, T);
      }
      for (int c = 0; c < cl.local.cells(); ++c) {
        out.increments(cl.global[static_cast<std::size_t>(c)], i) = inc(c);
      }
    }
  }
  return out;
}

/// Sheet increments for phi2: cells x d, i.i.d. N(0, delta^d).
inline Matrix sheet_increments(const Lattice& lattice, int d, Philox4x32& rng)
{
  Matrix out(lattice.cells(), d);
  for (int i = 0; i < d; ++i) {
    out.col(i) = gaussian_increments(lattice, lattice.cell_volume(), rng);
  }
  return out;
}

/// Noise part B_hat_i of a shift field with known signal: increments
/// sqrt(T) (dPhi - mean), cells x d.
inline Matrix reconstruct_sheet(const ShiftField& field, const Matrix& mean)
{
  if (mean.rows() != field.increments.rows() || mean.cols() != field.increments.cols()) {
    throw LatticeMismatch("reconstruct_sheet: mean does not match the field");
  }
  return std::sqrt(field.T) * (field.increments - mean);
}

/// Cell means of the Phi2 output for Y with mean theta (midpoint rule),
/// i.e. b_bar_i sqrt(mu°) delta^d per cell, cells x d.
inline Matrix phi2_mean(const FieldDesign& fd, const Matrix& theta)
{
  const auto& lattice = fd.lattice();
  const int d = fd.design().dim();
  const int M = fd.design().cells();
  Matrix out(lattice.cells(), d);
  const double vol = lattice.cell_volume();
  for (int m = 0; m < M; ++m) {
    const auto& cl = fd.cell(m);
    for (int i = 0; i < d; ++i) {
      for (int c = 0; c < cl.local.cells(); ++c) {
        out(cl.global[static_cast<std::size_t>(c)], i) =
            (cl.center_taylor(i, c) + cl.v.col(c).dot(theta.col(i * M + m))) * cl.sqrt_mu(c) * vol;
      }
    }
  }
  return out;
}

/// Aggregates cell increments into blocks of `block` lattice cells per
/// axis: result is blocks x d.
inline Matrix block_sums(const Lattice& lattice, const Matrix& increments, int block)
{
  const auto& n = lattice.per_axis();
  std::vector<int> nb;
  int blocks = 1;
  for (int k : n) {
    if (block < 1 || k % block != 0) {
      throw LatticeMismatch("block_sums: block size must divide the lattice");
    }
    nb.push_back(k / block);
    blocks *= k / block;
  }
  Matrix out = Matrix::Zero(blocks, increments.cols());
  for (int c = 0; c < lattice.cells(); ++c) {
    const auto coords = lattice.cell_coords(c);
    int b = 0;
    int stride = 1;
    for (std::size_t k = 0; k < n.size(); ++k) {
      b += coords[k] / block * stride;
      stride *= nb[k];
    }
    out.row(b) += increments.row(c);
  }
  return out;
}

struct FieldComparison
{
  Vector mean_z;          ///< per (block, component), column-major blocks x d
  double max_abs_z = 0.0;
  double cov_rel_frobenius = 0.0;
  double mean_threshold = 3.0;
  double cov_threshold = 0.10;
  bool pass = false;
};

/// Compares two ensembles of shift fields on the same lattice after
/// aggregating into blocks: mean difference in pooled MC-SE units and the
/// pooled relative Frobenius distance of the per-block d x d covariances.
inline FieldComparison compare_fields(const std::vector<ShiftField>& first, const std::vector<ShiftField>& second,
                                      int block, double mean_threshold = 3.0, double cov_threshold = 0.10)
{
  if (first.size() < 2 || second.size() < 2) {
    throw std::invalid_argument("compare_fields: need at least two fields per ensemble");
  }
  const Lattice& lattice = first.front().lattice;
  const auto d = first.front().increments.cols();
  auto stack = [&](const std::vector<ShiftField>& fields) {
    Matrix rows;
    for (std::size_t r = 0; r < fields.size(); ++r) {
      if (!fields[r].lattice.same_as(lattice) || fields[r].increments.cols() != d) {
        throw LatticeMismatch("compare_fields: ensembles live on different lattices");
      }
      const Matrix agg = block_sums(lattice, fields[r].increments, block);
      if (r == 0) {
        rows.resize(static_cast<Eigen::Index>(fields.size()), agg.size());
      }
      rows.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const Vector>(agg.data(), agg.size()).transpose();
    }
    return rows;
  };
  const Matrix a = stack(first);
  const Matrix b = stack(second);
  FieldComparison out;
  out.mean_threshold = mean_threshold;
  out.cov_threshold = cov_threshold;
  out.mean_z = mc::mean_difference_z(a, b);
  out.max_abs_z = out.mean_z.cwiseAbs().maxCoeff();
  const Eigen::Index blocks = a.cols() / d;
  double diff = 0.0;
  double ref = 0.0;
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(d));
  for (Eigen::Index blk = 0; blk < blocks; ++blk) {
    Matrix sa(a.rows(), d);
    Matrix sb(b.rows(), d);
    for (Eigen::Index i = 0; i < d; ++i) {
      sa.col(i) = a.col(i * blocks + blk);
      sb.col(i) = b.col(i * blocks + blk);
    }
    const Matrix ca = mc::sample_covariance(sa);
    const Matrix cb = mc::sample_covariance(sb);
    diff += (ca - cb).squaredNorm();
    ref += cb.squaredNorm();
  }
  out.cov_rel_frobenius = ref > 0 ? std::sqrt(diff / ref) : 0.0;
  out.pass = out.max_abs_z < mean_threshold && out.cov_rel_frobenius < cov_threshold;
  return out;
}

} // namespace ergodiff
