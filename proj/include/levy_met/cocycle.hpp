#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "levy_met/error.hpp"
#include "levy_met/levy_measure.hpp"
#include "levy_met/levy_path.hpp"
#include "levy_met/linalg.hpp"

namespace levy_met {

enum class BetweenJumpScheme { euler, expm };

/// dX = a X dt + sum_i sigma_i X dL^i with q independent scalar drivers.
struct LinearSystem {
  Matrix a;
  std::vector<Matrix> sigmas;
  std::vector<LevyTriplet> drivers;
  bool large_jump_guard = true;
  SamplerOptions sampling;

  Eigen::Index dimension() const { return a.rows(); }
  std::size_t noise_count() const { return sigmas.size(); }

  void validate() const {
    require(a.rows() >= 1 && a.rows() == a.cols(), ErrorKind::structural, "drift matrix must be square");
    require(!sigmas.empty(), ErrorKind::structural, "at least one noise matrix is required");
    require(sigmas.size() == drivers.size(), ErrorKind::structural, "one driver per noise matrix");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      require(sigmas[i].rows() == a.rows() && sigmas[i].cols() == a.cols(), ErrorKind::structural,
              "noise matrix " + std::to_string(i + 1) + " has the wrong shape");
      require(drivers[i].dimension() == 1, ErrorKind::structural, "drivers are scalar Levy processes");
      drivers[i].validate();
    }
  }

  /// a + sum sigma_i b^i.
  Matrix drift_matrix() const {
    Matrix m = a;
    for (std::size_t i = 0; i < sigmas.size(); ++i) m += sigmas[i] * drivers[i].drift(0);
    return m;
  }

  /// Small-jump compensation rate of each driver, for the measure actually simulated.
  std::vector<double> compensation_rates() const {
    std::vector<double> rates;
    rates.reserve(drivers.size());
    for (const LevyTriplet& d : drivers) {
      rates.push_back(d.has_jumps()
                          ? small_jump_mean(detail::simulated_measure(d, sampling), d.truncation, sampling.quadrature)
                          : 0.0);
    }
    return rates;
  }

  /// sum sigma_i c_i.
  Matrix compensation_matrix() const {
    const std::vector<double> c = compensation_rates();
    Matrix m = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < sigmas.size(); ++i) m += sigmas[i] * c[i];
    return m;
  }

  /// sum sigma_i^2 Q_i.
  Matrix ito_correction() const {
    Matrix m = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < sigmas.size(); ++i) m += sigmas[i] * sigmas[i] * drivers[i].covariance()(0, 0);
    return m;
  }
};

/// dX^1 = c_1 X^1 dt + X^1 dL^1, dX^2 = c_2 X^2 dt + X^2 dL^2 with pure-jump
/// drivers sharing one measure; the defaults c = (2, -4) give the reference example.
inline LinearSystem diagonal_example_system(const LevyMeasure& measure, double delta, double c1 = 2.0, double c2 = -4.0) {
  LinearSystem s;
  s.a = Matrix::Zero(2, 2);
  s.a(0, 0) = c1;
  s.a(1, 1) = c2;
  Matrix e11 = Matrix::Zero(2, 2);
  e11(0, 0) = 1.0;
  Matrix e22 = Matrix::Zero(2, 2);
  e22(1, 1) = 1.0;
  s.sigmas = {e11, e22};
  s.drivers = {LevyTriplet::scalar(0.0, 0.0, measure, delta), LevyTriplet::scalar(0.0, 0.0, measure, delta)};
  return s;
}

/// One two-sided path per driver on [-horizon, horizon]; driver i uses label i.
inline std::vector<TwoSidedPath> sample_driver_paths(const LinearSystem& system, double horizon, double dt,
                                                     std::uint64_t master_seed, std::uint64_t path_index) {
  system.validate();
  std::vector<TwoSidedPath> paths;
  paths.reserve(system.drivers.size());
  for (std::size_t i = 0; i < system.drivers.size(); ++i)
    paths.push_back(sample_two_sided(system.drivers[i], horizon, dt, master_seed, path_index, i, system.sampling));
  return paths;
}

namespace detail {

struct DriverJump {
  double time = 0.0;
  std::size_t driver = 0;
  double size = 0.0;
};

inline std::vector<DriverJump> merged_jumps(const std::vector<TwoSidedPath>& paths, double t0, double t1) {
  std::vector<DriverJump> out;
  for (std::size_t i = 0; i < paths.size(); ++i)
    for (const JumpEvent& e : paths[i].jumps_in(t0, t1)) out.push_back({e.time, i, e.size});
  std::stable_sort(out.begin(), out.end(), [](const DriverJump& x, const DriverJump& y) { return x.time < y.time; });
  return out;
}

/// Jump-adapted sweep of (t0, t1]: uniform nodes t0 + k h plus every jump time.
/// on_flow(u, v) runs for each continuous piece, on_jump(j) after reaching j.time.
template <class Flow, class Jump>
void sweep(const std::vector<DriverJump>& jumps, double t0, double t1, double h, Flow&& on_flow, Jump&& on_jump) {
  const double span = t1 - t0;
  const auto steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(span / h - 1e-9)));
  std::size_t next = 0;
  double u = t0;
  for (std::int64_t k = 1; k <= steps; ++k) {
    const double node = k == steps ? t1 : t0 + static_cast<double>(k) * h;
    while (next < jumps.size() && jumps[next].time <= node) {
      const double s = jumps[next].time;
      if (s > u) {
        on_flow(u, s);
        u = s;
      }
      for (; next < jumps.size() && jumps[next].time == s; ++next) on_jump(jumps[next]);
    }
    if (node > u) {
      on_flow(u, node);
      u = node;
    }
  }
}

inline Matrix jump_factor(const Matrix& sigma, double size, bool guard) {
  Matrix f = Matrix::Identity(sigma.rows(), sigma.cols()) + size * sigma;
  if (guard) {
    Eigen::JacobiSVD<Matrix> svd(f);
    const auto& s = svd.singularValues();
    require(s(s.size() - 1) > 1e-12 * std::max(1.0, s(0)), ErrorKind::singularity,
            "jump factor I + u sigma is singular at u = " + std::to_string(size));
  }
  return f;
}

inline void guard_overflow(const Matrix& m, double bound) {
  require(m.allFinite() && m.cwiseAbs().maxCoeff() < bound, ErrorKind::instability,
          "propagated matrix overflowed; use a smaller dt_int or log-scaled propagation");
}

}  // namespace detail

/// A linear cocycle over the path shift: phi(t, w) with phi(0) = I and
/// phi(t + s, w) = phi(t, theta_s w) phi(s, w).
class Cocycle {
 public:
  virtual ~Cocycle() = default;

  virtual Eigen::Index dimension() const = 0;
  virtual double lower() const = 0;
  virtual double upper() const = 0;

  /// phi(t1 - t0, theta_{t0} w), the transition from t0 to t1 in either direction.
  virtual Matrix propagate(double t0, double t1) const = 0;

  /// The cocycle over theta_s w.
  virtual std::shared_ptr<const Cocycle> shifted(double s) const = 0;

  /// Jump times in (t0, t1].
  virtual std::vector<double> breakpoints(double, double) const { return {}; }

  Matrix at(double t) const { return propagate(0.0, t); }

  bool contains(double t) const {
    const double slack = 1e-9 * std::max({1.0, std::abs(lower()), std::abs(upper())});
    return t >= lower() - slack && t <= upper() + slack;
  }

 protected:
  void check_window(double t0, double t1) const {
    require(contains(t0) && contains(t1), ErrorKind::range, "time outside the cocycle horizon");
  }
};

/// Deterministic flow e^{a t}; horizon unbounded.
class LinearFlow final : public Cocycle {
 public:
  explicit LinearFlow(Matrix a) : a_(std::move(a)) {
    require(a_.rows() == a_.cols(), ErrorKind::structural, "generator must be square");
  }

  Eigen::Index dimension() const override { return a_.rows(); }
  double lower() const override { return -std::numeric_limits<double>::infinity(); }
  double upper() const override { return std::numeric_limits<double>::infinity(); }

  Matrix propagate(double t0, double t1) const override {
    if (t0 == t1) return Matrix::Identity(a_.rows(), a_.cols());
    return (a_ * (t1 - t0)).exp();
  }

  std::shared_ptr<const Cocycle> shifted(double) const override { return std::make_shared<LinearFlow>(a_); }

 private:
  Matrix a_;
};

/// Closed-form solution of the diagonal example: component i grows as
///   exp{(c_i + b_i + I - K) t + sum_{jumps} log(1 + kappa)},
/// I = int_{|u|<=delta} (log(1+u) - u) nu(du), K = int_{|u|<=delta} log(1+u) nu(du).
/// For t < 0 the jump sum runs over (t, 0] with a minus sign.
class ExactDiagonal2d final : public Cocycle {
 public:
  ExactDiagonal2d(std::vector<TwoSidedPath> paths, const std::vector<LevyTriplet>& drivers, const Vector& coefficients,
                  const SamplerOptions& sampling = {})
      : paths_(std::move(paths)) {
    require(paths_.size() == 2 && drivers.size() == 2 && coefficients.size() == 2, ErrorKind::structural,
            "the diagonal example has two components");
    for (std::size_t i = 0; i < 2; ++i) {
      const LevyTriplet& d = drivers[i];
      require(d.dimension() == 1 && paths_[i].dimension() == 1, ErrorKind::structural, "drivers must be scalar");
      require(d.covariance()(0, 0) == 0.0, ErrorKind::configuration, "closed form needs pure-jump drivers");
      double rate = coefficients(static_cast<Eigen::Index>(i)) + d.drift(0);
      // I - K = -int_{|u|<=delta} u nu(du), for the measure the paths were sampled from.
      if (d.has_jumps()) {
        rate -= small_jump_mean(detail::simulated_measure(d, sampling), d.truncation, sampling.quadrature);
      }
      rates_[i] = rate;
    }
  }

  static std::shared_ptr<const ExactDiagonal2d> from_system(const LinearSystem& system, std::vector<TwoSidedPath> paths) {
    system.validate();
    require(system.dimension() == 2 && system.noise_count() == 2, ErrorKind::configuration,
            "closed form needs the two-dimensional diagonal system");
    Matrix off = system.a;
    off(0, 0) = 0.0;
    off(1, 1) = 0.0;
    const bool diagonal_noise = system.sigmas[0] == Matrix{{1.0, 0.0}, {0.0, 0.0}} &&
                                system.sigmas[1] == Matrix{{0.0, 0.0}, {0.0, 1.0}};
    require(off.isZero(0.0) && diagonal_noise, ErrorKind::configuration,
            "closed form needs a diagonal drift and coordinate noise matrices");
    return std::make_shared<ExactDiagonal2d>(std::move(paths), system.drivers, system.a.diagonal(), system.sampling);
  }

  Eigen::Index dimension() const override { return 2; }
  double lower() const override { return std::max(paths_[0].lower(), paths_[1].lower()); }
  double upper() const override { return std::min(paths_[0].upper(), paths_[1].upper()); }

  double growth_rate(std::size_t i) const { return rates_[i]; }

  /// log of component i of phi(t1 - t0, theta_{t0} w).
  double log_growth(std::size_t i, double t0, double t1) const {
    if (t0 == t1) return 0.0;
    const double lo = std::min(t0, t1);
    const double hi = std::max(t0, t1);
    const double jumps = paths_[i].jump_sum(lo, hi, [](double kappa) {
      require(kappa > -1.0, ErrorKind::singularity, "jump of size <= -1 makes the solution singular");
      return std::log1p(kappa);
    });
    return rates_[i] * (t1 - t0) + (t1 > t0 ? jumps : -jumps);
  }

  Matrix propagate(double t0, double t1) const override {
    check_window(t0, t1);
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = std::exp(log_growth(0, t0, t1));
    m(1, 1) = std::exp(log_growth(1, t0, t1));
    return m;
  }

  std::shared_ptr<const Cocycle> shifted(double s) const override {
    auto out = std::make_shared<ExactDiagonal2d>(*this);
    for (auto& p : out->paths_) p = p.shift(s);
    return out;
  }

  std::vector<double> breakpoints(double t0, double t1) const override {
    std::vector<double> out;
    for (const auto& d : detail::merged_jumps(paths_, t0, t1)) out.push_back(d.time);
    return out;
  }

 private:
  std::vector<TwoSidedPath> paths_;
  std::array<double, 2> rates_{};
};

inline Matrix exact_diagonal_2d(const std::vector<TwoSidedPath>& paths, const LevyMeasure& measure, double delta, double t) {
  const LevyTriplet driver = LevyTriplet::scalar(0.0, 0.0, measure, delta);
  Vector c(2);
  c << 2.0, -4.0;
  return ExactDiagonal2d(paths, {driver, driver}, c).at(t);
}

/// Doleans-Dade exponential of a scalar path Gamma:
///   Y_t = exp{Gamma_t - Q t / 2} prod_{0 < s <= t} (1 + dGamma_s) exp{-dGamma_s}.
class StochasticExponential1d final : public Cocycle {
 public:
  explicit StochasticExponential1d(TwoSidedPath gamma) : gamma_(std::move(gamma)) {
    require(gamma_.dimension() == 1, ErrorKind::structural, "stochastic exponential needs a scalar path");
    variance_ = gamma_.covariance()(0, 0);
  }

  Eigen::Index dimension() const override { return 1; }
  double lower() const override { return gamma_.lower(); }
  double upper() const override { return gamma_.upper(); }

  Matrix propagate(double t0, double t1) const override {
    check_window(t0, t1);
    if (t0 == t1) return Matrix::Identity(1, 1);
    const double lo = std::min(t0, t1);
    const double hi = std::max(t0, t1);
    double negatives = 0.0;
    double log_product = gamma_.jump_sum(lo, hi, [&](double kappa) {
      require(kappa != -1.0, ErrorKind::singularity, "jump of size -1 sends the exponential to 0");
      if (kappa < -1.0) negatives += 1.0;
      return std::log(std::abs(1.0 + kappa)) - kappa;
    });
    if (t1 < t0) log_product = -log_product;
    const double increment = gamma_.evaluate_scalar(t1) - gamma_.evaluate_scalar(t0);
    const double sign = std::fmod(negatives, 2.0) == 0.0 ? 1.0 : -1.0;
    return Matrix::Constant(1, 1, sign * std::exp(increment - 0.5 * variance_ * (t1 - t0) + log_product));
  }

  std::shared_ptr<const Cocycle> shifted(double s) const override {
    return std::make_shared<StochasticExponential1d>(gamma_.shift(s));
  }

  std::vector<double> breakpoints(double t0, double t1) const override {
    std::vector<double> out;
    for (const auto& e : gamma_.jumps_in(t0, t1)) out.push_back(e.time);
    return out;
  }

 private:
  TwoSidedPath gamma_;
  double variance_ = 0.0;
};

inline double stochastic_exponential(const TwoSidedPath& gamma, double t) {
  return StochasticExponential1d(gamma).at(t)(0, 0);
}

inline double stochastic_exponential(const JumpPath& gamma, double t) {
  return stochastic_exponential(TwoSidedPath(gamma, std::nullopt), t);
}

struct EulerOptions {
  double dt_int = 1e-2;
  BetweenJumpScheme scheme = BetweenJumpScheme::euler;
  double overflow_guard = 1e250;
};

/// Jump-adapted Euler for the linear system: between breakpoints
///   X <- (I + a dt + sum sigma_i dC^i) X
/// with C^i the continuous part of driver i (drift, compensation and Gaussian
/// increments); at a jump of driver i, X <- (I + kappa sigma_i) X.
/// Negative-time transitions invert the forward sweep.
class EulerCocycle final : public Cocycle {
 public:
  EulerCocycle(LinearSystem system, std::vector<TwoSidedPath> paths, EulerOptions opts = {})
      : system_(std::make_shared<const LinearSystem>(std::move(system))), paths_(std::move(paths)), opts_(opts) {
    system_->validate();
    require(paths_.size() == system_->noise_count(), ErrorKind::structural, "one path per driver");
    require(opts_.dt_int > 0.0, ErrorKind::domain, "dt_int must be > 0");
    ito_ = system_->ito_correction();
  }

  Eigen::Index dimension() const override { return system_->dimension(); }
  double lower() const override {
    double lo = -std::numeric_limits<double>::infinity();
    for (const auto& p : paths_) lo = std::max(lo, p.lower());
    return lo;
  }
  double upper() const override {
    double hi = std::numeric_limits<double>::infinity();
    for (const auto& p : paths_) hi = std::min(hi, p.upper());
    return hi;
  }

  const EulerOptions& options() const { return opts_; }

  Matrix propagate(double t0, double t1) const override {
    check_window(t0, t1);
    if (t0 == t1) return Matrix::Identity(dimension(), dimension());
    if (t1 > t0) return forward(t0, t1);
    return checked_inverse(forward(t1, t0));
  }

  std::shared_ptr<const Cocycle> shifted(double s) const override {
    auto out = std::make_shared<EulerCocycle>(*this);
    for (auto& p : out->paths_) p = p.shift(s);
    return out;
  }

  std::vector<double> breakpoints(double t0, double t1) const override {
    std::vector<double> out;
    for (const auto& d : detail::merged_jumps(paths_, t0, t1)) out.push_back(d.time);
    return out;
  }

 private:
  Matrix forward(double t0, double t1) const {
    const Eigen::Index d = dimension();
    const Matrix eye = Matrix::Identity(d, d);
    Matrix x = eye;
    const auto jumps = detail::merged_jumps(paths_, t0, t1);
    detail::sweep(
        jumps, t0, t1, opts_.dt_int,
        [&](double u, double v) {
          const double dt = v - u;
          Matrix m = system_->a * dt;
          for (std::size_t i = 0; i < paths_.size(); ++i)
            m += system_->sigmas[i] * paths_[i].continuous_increment(u, v)(0);
          if (opts_.scheme == BetweenJumpScheme::euler) {
            x = (eye + m) * x;
          } else {
            x = (m - 0.5 * dt * ito_).exp() * x;
          }
        },
        [&](const detail::DriverJump& j) {
          x = detail::jump_factor(system_->sigmas[j.driver], j.size, system_->large_jump_guard) * x;
          detail::guard_overflow(x, opts_.overflow_guard);
        });
    detail::guard_overflow(x, opts_.overflow_guard);
    return x;
  }

  std::shared_ptr<const LinearSystem> system_;
  std::vector<TwoSidedPath> paths_;
  EulerOptions opts_;
  Matrix ito_;
};

/// Euler transition with a Richardson error estimate 2 |Phi_h - Phi_{h/2}|.
struct EulerEstimate {
  Matrix value;
  Matrix refined;
  double error_estimate = 0.0;
};

inline EulerEstimate euler_propagate(const LinearSystem& system, const std::vector<TwoSidedPath>& paths, double t0,
                                     double t1, double dt_int, BetweenJumpScheme scheme = BetweenJumpScheme::euler) {
  require(dt_int > 0.0, ErrorKind::domain, "dt_int must be > 0");
  const EulerCocycle coarse(system, paths, {dt_int, scheme});
  const EulerCocycle fine(system, paths, {0.5 * dt_int, scheme});
  EulerEstimate out{coarse.propagate(t0, t1), fine.propagate(t0, t1), 0.0};
  out.error_estimate = 2.0 * hs_norm(out.value - out.refined);
  return out;
}

/// psi and psi^{-1} of the auxiliary small-jump equation, and the sampled
/// trajectory they were built on.
struct AuxiliaryOptions {
  double dt = 1e-3;
  BetweenJumpScheme scheme = BetweenJumpScheme::euler;
};

struct AuxiliaryNode {
  double time = 0.0;
  Matrix psi_left, psi, inverse_left, inverse;
  std::vector<detail::DriverJump> jumps;  // all jumps (small and large) at this time
};

/// Nodes on [0, t]: uniform steps of opts.dt plus every jump time, with psi
/// and psi^{-1} (left limits and values). Small jumps (|u| <= delta) act as
///   psi <- (I + dZ) psi,   psi^{-1} <- psi^{-1} (I - dZ + (I + dZ)^{-1} dZ^2),
/// and between jumps dpsi = -C psi dt, dpsi^{-1} = psi^{-1} C dt with C = sum sigma_i c_i.
inline std::vector<AuxiliaryNode> auxiliary_trajectory(const LinearSystem& system, const std::vector<TwoSidedPath>& paths,
                                                       double t, const AuxiliaryOptions& opts = {}) {
  system.validate();
  require(paths.size() == system.noise_count(), ErrorKind::structural, "one path per driver");
  require(t >= 0.0, ErrorKind::domain, "auxiliary system runs forward from 0");
  require(opts.dt > 0.0, ErrorKind::domain, "step must be > 0");
  const Eigen::Index d = system.dimension();
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix comp = system.compensation_matrix();

  std::vector<AuxiliaryNode> nodes;
  nodes.push_back({0.0, eye, eye, eye, eye, {}});
  if (t == 0.0) return nodes;

  Matrix psi = eye;
  Matrix inv = eye;
  const auto jumps = detail::merged_jumps(paths, 0.0, t);
  detail::sweep(
      jumps, 0.0, t, opts.dt,
      [&](double u, double v) {
        const double dt = v - u;
        if (opts.scheme == BetweenJumpScheme::euler) {
          psi = (eye - comp * dt) * psi;
          inv = inv * (eye + comp * dt);
        } else {
          psi = (-comp * dt).exp() * psi;
          inv = inv * (comp * dt).exp();
        }
        nodes.push_back({v, psi, psi, inv, inv, {}});
      },
      [&](const detail::DriverJump& j) {
        AuxiliaryNode& node = nodes.back();
        node.jumps.push_back(j);
        if (std::abs(j.size) > system.drivers[j.driver].truncation) return;
        const Matrix dz = system.sigmas[j.driver] * j.size;
        const Matrix step = eye + dz;
        const Matrix step_inverse = checked_inverse(step);
        psi = step * psi;
        inv = inv * (eye - dz + step_inverse * dz * dz);
        node.psi = psi;
        node.inverse = inv;
      });
  return nodes;
}

struct AuxiliaryState {
  Matrix psi;
  Matrix psi_inverse;
};

inline AuxiliaryState auxiliary_state(const LinearSystem& system, const std::vector<TwoSidedPath>& paths, double t,
                                      const AuxiliaryOptions& opts = {}) {
  const auto nodes = auxiliary_trajectory(system, paths, t, opts);
  return {nodes.back().psi, nodes.back().inverse};
}

inline Matrix auxiliary_psi(const LinearSystem& system, const std::vector<TwoSidedPath>& paths, double t,
                            const AuxiliaryOptions& opts = {}) {
  return auxiliary_state(system, paths, t, opts).psi;
}

inline Matrix auxiliary_psi_inverse(const LinearSystem& system, const std::vector<TwoSidedPath>& paths, double t,
                                    const AuxiliaryOptions& opts = {}) {
  return auxiliary_state(system, paths, t, opts).psi_inverse;
}

struct PicardOptions {
  double dt = 1e-3;
  BetweenJumpScheme psi_scheme = BetweenJumpScheme::expm;
};

struct PicardResult {
  Vector value;
  /// differences[n - 1] = sup over nodes of |X^n - X^{n-1}|.
  std::vector<double> differences;
};

/// Picard iterates of the random integral equation
///   X_t = psi_t { x + int_0^t psi_s^{-1} (a + sigma_i b^i) X_s ds
///               + sum_{large jumps s <= t} psi_s^{-1} sigma_i X_{s-} kappa_s },
/// starting from X^0 = x; the time integral is trapezoidal on the jump-adapted nodes.
inline PicardResult picard_solve(const LinearSystem& system, const std::vector<TwoSidedPath>& paths, double t,
                                 int n_iter, const Vector& x, const PicardOptions& opts = {}) {
  require(n_iter >= 1, ErrorKind::domain, "n_iter must be >= 1");
  require(x.size() == system.dimension(), ErrorKind::structural, "initial vector has the wrong dimension");
  for (const LevyTriplet& d : system.drivers)
    require(d.covariance()(0, 0) == 0.0, ErrorKind::configuration, "Picard scheme needs pure-jump drivers");

  const auto nodes = auxiliary_trajectory(system, paths, t, {opts.dt, opts.psi_scheme});
  const Matrix drift = system.drift_matrix();
  const std::size_t n = nodes.size();

  std::vector<Vector> left(n, x);
  std::vector<Vector> right(n, x);
  PicardResult result;
  int growing = 0;
  for (int it = 1; it <= n_iter; ++it) {
    std::vector<Vector> next_left(n), next_right(n);
    next_left[0] = x;
    next_right[0] = x;
    Vector integral = Vector::Zero(x.size());
    Vector large = Vector::Zero(x.size());
    Vector f_prev = nodes[0].inverse * drift * right[0];
    for (std::size_t k = 1; k < n; ++k) {
      const AuxiliaryNode& node = nodes[k];
      const Vector f_left = node.inverse_left * drift * left[k];
      integral += 0.5 * (node.time - nodes[k - 1].time) * (f_prev + f_left);
      next_left[k] = node.psi_left * (x + integral + large);
      for (const auto& j : node.jumps) {
        if (std::abs(j.size) > system.drivers[j.driver].truncation)
          large += node.inverse_left * system.sigmas[j.driver] * left[k] * j.size;
      }
      next_right[k] = node.psi * (x + integral + large);
      f_prev = node.inverse * drift * right[k];
    }
    double diff = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      diff = std::max({diff, (next_right[k] - right[k]).norm(), (next_left[k] - left[k]).norm()});
    if (!result.differences.empty() && diff > result.differences.back()) {
      if (++growing >= 3) fail(ErrorKind::divergence, "Picard differences grew for 3 consecutive iterates");
    } else {
      growing = 0;
    }
    require(std::isfinite(diff), ErrorKind::divergence, "Picard iterate is not finite");
    result.differences.push_back(diff);
    left = std::move(next_left);
    right = std::move(next_right);
  }
  result.value = right.back();
  return result;
}

/// Cocycle whose forward transitions are assembled column-wise from Picard solutions.
class PicardCocycle final : public Cocycle {
 public:
  PicardCocycle(LinearSystem system, std::vector<TwoSidedPath> paths, int n_iter, PicardOptions opts = {})
      : system_(std::make_shared<const LinearSystem>(std::move(system))), paths_(std::move(paths)), n_iter_(n_iter),
        opts_(opts) {
    system_->validate();
    require(paths_.size() == system_->noise_count(), ErrorKind::structural, "one path per driver");
  }

  Eigen::Index dimension() const override { return system_->dimension(); }
  double lower() const override {
    double lo = -std::numeric_limits<double>::infinity();
    for (const auto& p : paths_) lo = std::max(lo, p.lower());
    return lo;
  }
  double upper() const override {
    double hi = std::numeric_limits<double>::infinity();
    for (const auto& p : paths_) hi = std::min(hi, p.upper());
    return hi;
  }

  Matrix propagate(double t0, double t1) const override {
    check_window(t0, t1);
    const Eigen::Index d = dimension();
    if (t0 == t1) return Matrix::Identity(d, d);
    const double from = std::min(t0, t1);
    std::vector<TwoSidedPath> moved;
    for (const auto& p : paths_) moved.push_back(p.shift(from));
    Matrix m(d, d);
    for (Eigen::Index k = 0; k < d; ++k)
      m.col(k) = picard_solve(*system_, moved, std::abs(t1 - t0), n_iter_, Vector::Unit(d, k), opts_).value;
    return t1 > t0 ? m : checked_inverse(m);
  }

  std::shared_ptr<const Cocycle> shifted(double s) const override {
    auto out = std::make_shared<PicardCocycle>(*this);
    for (auto& p : out->paths_) p = p.shift(s);
    return out;
  }

 private:
  std::shared_ptr<const LinearSystem> system_;
  std::vector<TwoSidedPath> paths_;
  int n_iter_;
  PicardOptions opts_;
};

enum class Backend { exact_diagonal_2d, stochastic_exponential_1d, euler, picard };

/// |phi(t + s, w) - phi(t, theta_s w) phi(s, w)| (Hilbert-Schmidt).
inline double cocycle_residual(const Cocycle& ev, double s, double t) {
  require(ev.contains(s) && ev.contains(s + t), ErrorKind::range, "s or s + t outside the cocycle horizon");
  const Matrix whole = ev.at(t + s);
  const Matrix first = ev.at(s);
  const Matrix second = ev.shifted(s)->at(t);
  return hs_norm(whole - second * first);
}

struct IntegrabilityBounds {
  double alpha_plus = 0.0;
  double alpha_minus = 0.0;
};

/// sup of log+ |phi(t)| and log+ |phi(t)^{-1}| over grid nodes and jump times.
inline IntegrabilityBounds integrability_alpha(const Cocycle& ev, const TimeGrid& grid) {
  std::vector<double> times;
  for (std::int64_t k = 0; k < grid.nodes(); ++k) times.push_back(grid.node(k));
  for (double s : ev.breakpoints(grid.t_start(), grid.t_end())) times.push_back(s);
  IntegrabilityBounds out;
  for (double t : times) {
    const Matrix m = ev.at(t);
    out.alpha_plus = std::max(out.alpha_plus, std::log(hs_norm(m)));
    out.alpha_minus = std::max(out.alpha_minus, std::log(hs_norm(checked_inverse(m))));
  }
  return out;
}

/// e^{log_scale} * direction with |direction| = 1 (Hilbert-Schmidt).
struct LogScaledMatrix {
  Matrix direction;
  double log_scale = 0.0;
};

namespace detail {

inline std::vector<double> window_edges(double t0, double t1, double window) {
  require(window > 0.0, ErrorKind::domain, "window length must be > 0");
  std::vector<double> edges{t0};
  const double span = std::abs(t1 - t0);
  const double sign = t1 >= t0 ? 1.0 : -1.0;
  const auto n = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(span / window - 1e-9)));
  for (std::int64_t k = 1; k < n; ++k) edges.push_back(t0 + sign * static_cast<double>(k) * window);
  edges.push_back(t1);
  return edges;
}

}  // namespace detail

/// phi(t1 - t0, theta_{t0} w) as a product of window transitions, renormalized
/// after every window so long horizons neither overflow nor underflow.
inline LogScaledMatrix propagate_scaled(const Cocycle& ev, double t0, double t1, double window) {
  const auto edges = detail::window_edges(t0, t1, window);
  LogScaledMatrix out{Matrix::Identity(ev.dimension(), ev.dimension()), 0.0};
  out.log_scale = std::log(hs_norm(out.direction));
  out.direction /= hs_norm(out.direction);
  for (std::size_t k = 1; k < edges.size(); ++k) {
    out.direction = ev.propagate(edges[k - 1], edges[k]) * out.direction;
    const double norm = hs_norm(out.direction);
    require(norm > 0.0 && std::isfinite(norm), ErrorKind::instability, "scaled propagation lost the matrix");
    out.direction /= norm;
    out.log_scale += std::log(norm);
  }
  return out;
}

/// log |det phi(t1 - t0, theta_{t0} w)| as a sum over window determinants.
inline double windowed_log_abs_det(const Cocycle& ev, double t0, double t1, double window) {
  const auto edges = detail::window_edges(t0, t1, window);
  double acc = 0.0;
  for (std::size_t k = 1; k < edges.size(); ++k) acc += log_abs_det(ev.propagate(edges[k - 1], edges[k]));
  return acc;
}

}  // namespace levy_met
