#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "levy_met/cocycle.hpp"
#include "levy_met/error.hpp"
#include "levy_met/linalg.hpp"

namespace levy_met {

/// Singular values in descending order; the smallest must exceed rank_tol.
inline Vector singular_values(const Matrix& m, double rank_tol = std::numeric_limits<double>::min()) {
  require(m.allFinite(), ErrorKind::domain, "matrix has non-finite entries");
  Eigen::JacobiSVD<Matrix> svd(m);
  Vector s = svd.singularValues();
  require(s.size() > 0 && s(s.size() - 1) > rank_tol, ErrorKind::singularity, "matrix is singular");
  return s;
}

/// |wedge^k M| = product of the top k singular values.
inline double exterior_power_norm(const Matrix& m, int k) {
  require(k >= 1 && k <= m.rows() && m.rows() == m.cols(), ErrorKind::domain, "need 1 <= k <= d for a square matrix");
  const Vector s = singular_values(m);
  double acc = 1.0;
  for (int i = 0; i < k; ++i) acc *= s(i);
  return acc;
}

struct SpectrumGroup {
  double value = 0.0;
  int multiplicity = 0;
};

struct GroupedSpectrum {
  std::vector<SpectrumGroup> groups;
  /// Smallest gap between consecutive groups; empty when there is one group.
  std::optional<double> gap;

  int dimension() const {
    int d = 0;
    for (const auto& g : groups) d += g.multiplicity;
    return d;
  }
  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& g : groups) v.push_back(g.value);
    return v;
  }
};

/// Greedy clustering of a descending list: neighbours closer than tol merge.
inline GroupedSpectrum group_spectrum(const std::vector<double>& raw, double tol) {
  require(!raw.empty(), ErrorKind::domain, "empty spectrum");
  require(tol >= 0.0, ErrorKind::domain, "group tolerance must be >= 0");
  require(std::is_sorted(raw.rbegin(), raw.rend()), ErrorKind::domain, "spectrum must be sorted descending");
  GroupedSpectrum out;
  std::size_t start = 0;
  for (std::size_t k = 1; k <= raw.size(); ++k) {
    if (k == raw.size() || raw[k - 1] - raw[k] > tol) {
      const double sum = std::accumulate(raw.begin() + static_cast<std::ptrdiff_t>(start),
                                         raw.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
      out.groups.push_back({sum / static_cast<double>(k - start), static_cast<int>(k - start)});
      start = k;
    }
  }
  for (std::size_t i = 1; i < out.groups.size(); ++i) {
    const double g = out.groups[i - 1].value - out.groups[i].value;
    out.gap = out.gap ? std::min(*out.gap, g) : g;
  }
  require(!out.gap || *out.gap > tol, ErrorKind::resolution, "exponent groups not separated; increase the horizon");
  return out;
}

inline GroupedSpectrum group_spectrum(const GroupedSpectrum& grouped, double tol) {
  std::vector<double> raw;
  for (const auto& g : grouped.groups) raw.insert(raw.end(), static_cast<std::size_t>(g.multiplicity), g.value);
  return group_spectrum(raw, tol);
}

struct SpectrumEstimate {
  std::vector<double> raw;
  GroupedSpectrum grouped;
  double horizon = 0.0;
  /// (1/T) log |det phi(T)| accumulated over the same windows.
  double logdet_over_t = 0.0;
};

struct SpectrumOptions {
  double renorm_step = 1.0;
  /// Default 10 / T.
  std::optional<double> group_tol;
  /// Smallest admissible R diagonal entry before the frame counts as degenerate.
  double frame_floor = 1e-300;
};

namespace detail {

/// Benettin iteration over [0, t_end] (either sign): returns the raw sums of log R_kk.
inline std::vector<double> qr_log_growth(const Cocycle& ev, double t_end, const SpectrumOptions& opts) {
  const auto edges = window_edges(0.0, t_end, opts.renorm_step);
  const Eigen::Index d = ev.dimension();
  Matrix q = Matrix::Identity(d, d);
  std::vector<double> sums(static_cast<std::size_t>(d), 0.0);
  for (std::size_t k = 1; k < edges.size(); ++k) {
    const auto [qn, r] = positive_qr(ev.propagate(edges[k - 1], edges[k]) * q);
    for (Eigen::Index i = 0; i < d; ++i) {
      require(std::isfinite(r(i, i)) && r(i, i) > opts.frame_floor, ErrorKind::instability,
              "renormalized frame degenerated; shorten renorm_step");
      sums[static_cast<std::size_t>(i)] += std::log(r(i, i));
    }
    q = qn;
  }
  return sums;
}

inline SpectrumEstimate spectrum_over(const Cocycle& ev, double t_end, const SpectrumOptions& opts) {
  const double span = std::abs(t_end);
  require(span >= 10.0 * opts.renorm_step, ErrorKind::domain, "horizon must be at least 10 renormalization steps");
  SpectrumEstimate out;
  out.horizon = span;
  for (double s : qr_log_growth(ev, t_end, opts)) out.raw.push_back(s / span);
  std::sort(out.raw.begin(), out.raw.end(), std::greater<>());
  out.grouped = group_spectrum(out.raw, opts.group_tol.value_or(10.0 / span));
  out.logdet_over_t = windowed_log_abs_det(ev, 0.0, t_end, opts.renorm_step) / span;
  return out;
}

}  // namespace detail

/// Lyapunov spectrum on [0, T] by QR renormalization every renorm_step.
inline SpectrumEstimate spectrum_qr(const Cocycle& ev, double horizon, const SpectrumOptions& opts = {}) {
  require(horizon > 0.0, ErrorKind::domain, "horizon must be > 0");
  return detail::spectrum_over(ev, horizon, opts);
}

/// Spectrum of the cocycle run into negative time, t -> -T.
inline SpectrumEstimate backward_spectrum(const Cocycle& ev, double horizon, const SpectrumOptions& opts = {}) {
  require(horizon > 0.0, ErrorKind::domain, "horizon must be > 0");
  return detail::spectrum_over(ev, -horizon, opts);
}

/// Nested flag V_p < ... < V_1 = R^d stored as an orthonormal basis whose
/// consecutive column blocks are U_1, ..., U_p; V_i = span(U_i, ..., U_p).
class Flag {
 public:
  Flag(Matrix basis, std::vector<int> block_dims) : basis_(std::move(basis)), dims_(std::move(block_dims)) {
    require(basis_.rows() == basis_.cols(), ErrorKind::structural, "flag basis must be square");
    require(!dims_.empty() && std::all_of(dims_.begin(), dims_.end(), [](int k) { return k > 0; }),
            ErrorKind::structural, "flag blocks must be non-empty");
    require(std::accumulate(dims_.begin(), dims_.end(), 0) == basis_.cols(), ErrorKind::structural,
            "flag block dimensions must sum to d");
    const Matrix gram = basis_.transpose() * basis_;
    require((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <= 1e-10, ErrorKind::structural,
            "flag basis is not orthonormal");
  }

  Eigen::Index dimension() const { return basis_.rows(); }
  int blocks() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& block_dims() const { return dims_; }
  const Matrix& basis() const { return basis_; }

  /// U_i, 0-based.
  Matrix block(int i) const { return basis_.middleCols(offset(i), dims_[static_cast<std::size_t>(i)]); }

  /// V_i = U_i + ... + U_p, 0-based.
  Matrix subspace(int i) const { return basis_.rightCols(basis_.cols() - offset(i)); }

  /// dim V_1 > dim V_2 > ... > dim V_p.
  std::vector<int> type() const {
    std::vector<int> tau;
    for (int i = 0; i < blocks(); ++i) tau.push_back(static_cast<int>(basis_.cols()) - offset(i));
    return tau;
  }

 private:
  Eigen::Index offset(int i) const {
    require(i >= 0 && i < blocks(), ErrorKind::range, "flag block index out of range");
    return std::accumulate(dims_.begin(), dims_.begin() + i, Eigen::Index{0});
  }

  Matrix basis_;
  std::vector<int> dims_;
};

inline std::vector<int> multiplicities(const GroupedSpectrum& g) {
  std::vector<int> out;
  for (const auto& s : g.groups) out.push_back(s.multiplicity);
  return out;
}

/// Coordinate frame turned by `angle` in every consecutive coordinate plane.
inline Matrix rotated_frame(Eigen::Index d, double angle = 0.3) {
  Matrix q = Matrix::Identity(d, d);
  for (Eigen::Index i = 0; i + 1 < d; ++i) {
    Matrix g = Matrix::Identity(d, d);
    g(i, i) = std::cos(angle);
    g(i + 1, i + 1) = std::cos(angle);
    g(i, i + 1) = -std::sin(angle);
    g(i + 1, i) = std::sin(angle);
    q = g * q;
  }
  return q;
}

struct FlagOptions {
  double renorm_step = 1.0;
  /// Starting frame of the adjoint iteration; identity when empty.
  std::optional<Matrix> initial_frame;
};

namespace detail {

inline void check_clusters(const std::vector<double>& growth, const GroupedSpectrum& grouping) {
  if (grouping.groups.size() < 2) return;
  std::size_t k = 0;
  for (std::size_t g = 0; g < grouping.groups.size(); ++g) {
    for (int m = 0; m < grouping.groups[g].multiplicity; ++m, ++k) {
      std::size_t nearest = 0;
      for (std::size_t h = 1; h < grouping.groups.size(); ++h)
        if (std::abs(growth[k] - grouping.groups[h].value) < std::abs(growth[k] - grouping.groups[nearest].value))
          nearest = h;
      require(nearest == g, ErrorKind::resolution, "singular-value clusters do not match the exponent grouping");
    }
  }
}

}  // namespace detail

/// F(t) from the right singular subspaces of phi(t), computed without forming
/// phi(t): the adjoint frame iteration Q <- qr(A_k^T Q) over the window
/// transitions A_k, last window first. Exponentially small angles stay
/// representable, which a direct SVD of phi(t) cannot offer for large t.
inline Flag flag_at(const Cocycle& ev, double t, const GroupedSpectrum& grouping, const FlagOptions& opts = {}) {
  require(t != 0.0, ErrorKind::domain, "flag needs t != 0");
  const Eigen::Index d = ev.dimension();
  require(grouping.dimension() == d, ErrorKind::structural, "grouping does not match the dimension");
  const auto edges = detail::window_edges(0.0, t, opts.renorm_step);
  Matrix q = opts.initial_frame.value_or(Matrix::Identity(d, d));
  std::vector<double> growth(static_cast<std::size_t>(d), 0.0);
  for (std::size_t k = edges.size() - 1; k >= 1; --k) {
    const auto [qn, r] = positive_qr(ev.propagate(edges[k - 1], edges[k]).transpose() * q);
    for (Eigen::Index i = 0; i < d; ++i) growth[static_cast<std::size_t>(i)] += std::log(r(i, i));
    q = qn;
  }
  for (double& g : growth) g /= std::abs(t);
  detail::check_clusters(growth, grouping);
  return Flag(q, multiplicities(grouping));
}

/// F(t) from the SVD of phi(t) itself; usable while phi(t) is well conditioned.
inline Flag flag_at_svd(const Cocycle& ev, double t, const GroupedSpectrum& grouping) {
  require(t != 0.0, ErrorKind::domain, "flag needs t != 0");
  const Matrix m = ev.at(t);
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
  std::vector<double> growth;
  for (Eigen::Index i = 0; i < m.cols(); ++i) growth.push_back(std::log(svd.singularValues()(i)) / std::abs(t));
  detail::check_clusters(growth, grouping);
  return Flag(svd.matrixV(), multiplicities(grouping));
}

/// Exponents per block and the scale h of the flag metric.
struct FlagMetricParams {
  std::vector<double> lambdas;
  double h = 0.0;
  /// Block cross norms at or below this count as zero before the power is taken.
  /// Set to 0 when flags resolve exponentially small angles, as flag_at does.
  double rank_tol = 1e-14;

  /// Asserts h^{-1} |lambda_i - lambda_j| >= d - 1 for i != j.
  void validate(Eigen::Index d) const {
    require(h > 0.0, ErrorKind::domain, "flag metric scale h must be > 0");
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      for (std::size_t j = i + 1; j < lambdas.size(); ++j)
        require(std::abs(lambdas[i] - lambdas[j]) / h >= static_cast<double>(d - 1) * (1.0 - 1e-12), ErrorKind::domain,
                "flag metric needs |lambda_i - lambda_j| / h >= d - 1");
  }

  /// h = gap / (d - 1).
  static FlagMetricParams from_grouping(const GroupedSpectrum& g) {
    require(g.gap.has_value(), ErrorKind::resolution, "flag metric needs at least two exponent groups");
    const int d = g.dimension();
    FlagMetricParams p{g.values(), *g.gap / static_cast<double>(std::max(1, d - 1)), 1e-14};
    p.validate(d);
    return p;
  }
};

/// max_{i != j} |P_i Q_j|^{h / |lambda_i - lambda_j|} with P_i, Q_j the projectors onto the blocks.
inline double flag_distance(const Flag& f, const Flag& g, const FlagMetricParams& params) {
  require(f.block_dims() == g.block_dims() && f.dimension() == g.dimension(), ErrorKind::structural,
          "flags have different types");
  require(static_cast<int>(params.lambdas.size()) == f.blocks(), ErrorKind::structural,
          "one exponent per flag block is required");
  params.validate(f.dimension());
  double out = 0.0;
  for (int i = 0; i < f.blocks(); ++i) {
    for (int j = 0; j < f.blocks(); ++j) {
      if (i == j) continue;
      double norm = hs_cross_norm(f.block(i), g.block(j));
      if (norm <= params.rank_tol) norm = 0.0;
      const double power = params.h / std::abs(params.lambdas[static_cast<std::size_t>(i)] -
                                               params.lambdas[static_cast<std::size_t>(j)]);
      out = std::max(out, std::pow(norm, power));
    }
  }
  return out;
}

struct FlagConvergencePoint {
  double t = 0.0;
  double distance = 0.0;
  bool at_floor = false;
  /// Basis of F(t).
  Matrix basis;
};

struct FlagConvergence {
  std::vector<FlagConvergencePoint> series;
  /// Least-squares slope of log distance against t over points above the floor.
  std::optional<double> slope;
  bool floor_reached = false;
};

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::domain, "slope fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  require(sxx > 0.0, ErrorKind::domain, "slope fit needs distinct abscissae");
  return sxy / sxx;
}

/// rho(F(t), F_inf) along `times`; distances at or below `floor` are flagged and left out of the fit.
/// `floor` replaces params.rank_tol here.
inline FlagConvergence flag_convergence_rate(const Cocycle& ev, const GroupedSpectrum& grouping,
                                             FlagMetricParams params, const std::vector<double>& times,
                                             const Flag& limit, const FlagOptions& opts = {},
                                             double floor = std::numeric_limits<double>::min()) {
  require(times.size() >= 2, ErrorKind::domain, "flag convergence needs at least two times");
  params.rank_tol = 0.0;
  FlagConvergence out;
  std::vector<double> xs;
  std::vector<double> ys;
  for (double t : times) {
    const Flag f = flag_at(ev, t, grouping, opts);
    const double dist = flag_distance(f, limit, params);
    const bool at_floor = !(dist > floor);
    out.series.push_back({t, dist, at_floor, f.basis()});
    out.floor_reached = out.floor_reached || at_floor;
    if (!at_floor) {
      xs.push_back(t);
      ys.push_back(std::log(dist));
    }
  }
  if (xs.size() >= 2) out.slope = fit_slope(xs, ys);
  return out;
}

/// Principal angles between span(a) and span(b) (orthonormal columns), ascending.
inline std::vector<double> principal_angles(const Matrix& a, const Matrix& b) {
  const Matrix& big = a.cols() >= b.cols() ? a : b;
  const Matrix& small = a.cols() >= b.cols() ? b : a;
  Eigen::JacobiSVD<Matrix> cos_svd(big.transpose() * small);
  Eigen::JacobiSVD<Matrix> sin_svd(small - big * (big.transpose() * small));
  const Vector c = cos_svd.singularValues();  // descending
  Vector s = sin_svd.singularValues();        // descending; pair the smallest sine with the largest cosine
  std::vector<double> out;
  const Eigen::Index k = small.cols();
  for (Eigen::Index i = 0; i < k; ++i) {
    const double cosine = std::min(1.0, c(i));
    const double sine = i < s.size() ? std::min(1.0, s(k - 1 - i)) : 0.0;
    out.push_back(cosine >= std::sqrt(0.5) ? std::asin(sine) : std::acos(cosine));
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct OseledetsSplit {
  /// E_1, ..., E_p as orthonormal bases.
  std::vector<Matrix> spaces;
  /// Principal-angle cosines of the vectors kept for each E_i.
  std::vector<std::vector<double>> cosines;
  /// Smallest singular value of [E_1 | ... | E_p].
  double completeness = 0.0;
};

/// E_i = V_i (forward flag) intersected with V^-_{p+1-i} (backward flag).
inline OseledetsSplit oseledets_spaces(const Flag& forward, const Flag& backward, double angle_tol = 1e-6) {
  const int p = forward.blocks();
  require(backward.blocks() == p && forward.dimension() == backward.dimension(), ErrorKind::structural,
          "forward and backward flags have different shapes");
  for (int i = 0; i < p; ++i)
    require(backward.block_dims()[static_cast<std::size_t>(p - 1 - i)] == forward.block_dims()[static_cast<std::size_t>(i)],
            ErrorKind::structural, "backward multiplicities must be the reversed forward multiplicities");

  OseledetsSplit out;
  const Eigen::Index d = forward.dimension();
  Matrix stacked(d, 0);
  for (int i = 0; i < p; ++i) {
    const Matrix a = forward.subspace(i);
    const Matrix b = backward.subspace(p - 1 - i);
    Eigen::JacobiSVD<Matrix> svd(a.transpose() * b, Eigen::ComputeThinU);
    std::vector<double> kept;
    Matrix basis(d, 0);
    for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k) {
      if (svd.singularValues()(k) >= 1.0 - angle_tol) {
        kept.push_back(svd.singularValues()(k));
        basis.conservativeResize(d, basis.cols() + 1);
        basis.col(basis.cols() - 1) = a * svd.matrixU().col(k);
      }
    }
    const int want = forward.block_dims()[static_cast<std::size_t>(i)];
    require(static_cast<int>(kept.size()) == want, ErrorKind::resolution,
            "Oseledets space " + std::to_string(i + 1) + " has dimension " + std::to_string(kept.size()) +
                " instead of " + std::to_string(want));
    basis = positive_qr(basis).q;
    out.spaces.push_back(basis);
    out.cosines.push_back(kept);
    stacked.conservativeResize(d, stacked.cols() + basis.cols());
    stacked.rightCols(basis.cols()) = basis;
  }
  Eigen::JacobiSVD<Matrix> full(stacked);
  out.completeness = full.singularValues()(full.singularValues().size() - 1);
  return out;
}

/// (1/T) log |phi(T) x| with renormalization of x every window.
inline double vector_exponent(const Cocycle& ev, const Vector& x, double horizon, double renorm_step = 1.0) {
  require(x.size() == ev.dimension(), ErrorKind::structural, "vector has the wrong dimension");
  require(x.norm() > 0.0, ErrorKind::domain, "vector must be non-zero");
  require(horizon > 0.0, ErrorKind::domain, "horizon must be > 0");
  const auto edges = detail::window_edges(0.0, horizon, renorm_step);
  Vector v = x / x.norm();
  double acc = std::log(x.norm());
  for (std::size_t k = 1; k < edges.size(); ++k) {
    v = ev.propagate(edges[k - 1], edges[k]) * v;
    const double n = v.norm();
    require(n > 0.0 && std::isfinite(n), ErrorKind::instability, "vector under- or overflowed despite renormalization");
    acc += std::log(n);
    v /= n;
  }
  return acc / horizon;
}

}  // namespace levy_met
