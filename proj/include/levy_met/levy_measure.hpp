#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/ooura_fourier_integrals.hpp>

#include "levy_met/error.hpp"
#include "levy_met/linalg.hpp"

namespace levy_met {

struct Atom {
  double location = 0.0;
  double rate = 0.0;
};

struct QuadratureOptions {
  double abs_tol = 1e-10;
  double puncture = 1e-10;  // half-width of the excluded symmetric neighbourhood of 0
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Adaptive Gauss-Kronrod on [a, b] (b may be +inf); throws on non-convergence.
template <class F>
double integrate_gk(F&& f, double a, double b, double abs_tol) {
  if (!(b > a)) return 0.0;
  double error = 0.0;
  double l1 = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      std::forward<F>(f), a, b, 25, 1e-13, &error, &l1);
  require(std::isfinite(value), ErrorKind::tolerance, "quadrature produced a non-finite value");
  require(error <= std::max(abs_tol, 1e-12 * l1), ErrorKind::tolerance,
          "quadrature did not converge (estimated error " + std::to_string(error) + ")");
  return value;
}

// Cancellation-free forms of the compensated integrands; near u = 0 the naive
// differences are pure rounding noise, which stalls adaptive quadrature.
inline double cos_minus_one(double x) {
  const double s = std::sin(0.5 * x);
  return -2.0 * s * s;
}

inline double sin_minus_x(double x) {
  if (std::abs(x) > 0.1) return std::sin(x) - x;
  const double x2 = x * x;
  return -x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))));
}

inline double log1p_minus_x(double u) {
  if (std::abs(u) > 0.05) return std::log1p(u) - u;
  double acc = 0.0;
  double power = u * u;
  for (int k = 2; k < 20; ++k, power *= u) acc += ((k % 2 == 0) ? -power : power) / k;
  return acc;
}

}  // namespace detail

/// A one-dimensional Levy measure.
///
/// Three built-in kinds: a finite list of atoms (compound Poisson), the
/// symmetric power law c|u|^{-1-alpha} on lower_cut <= |u| <= support with an
/// optional untruncated tail beyond the support, and a user density on
/// 0 < |u| <= support. The measure never charges {0}.
class LevyMeasure {
 public:
  enum class Kind { atom_list, power_law_truncated, user_density };
  using Density = std::function<double(double)>;

  LevyMeasure() = default;

  static LevyMeasure atoms(std::vector<Atom> atoms) {
    for (const Atom& a : atoms) {
      require(a.location != 0.0, ErrorKind::domain, "Levy measure may not charge u = 0");
      require(a.rate >= 0.0 && std::isfinite(a.rate), ErrorKind::domain, "atom rates must be finite and >= 0");
      require(std::isfinite(a.location), ErrorKind::domain, "atom location must be finite");
    }
    LevyMeasure m;
    m.kind_ = Kind::atom_list;
    m.atoms_ = std::move(atoms);
    return m;
  }

  static LevyMeasure power_law(double scale, double alpha, double support, bool with_tail = false) {
    require(scale > 0.0, ErrorKind::domain, "power-law scale must be > 0");
    require(alpha > 0.0 && alpha < 2.0, ErrorKind::domain, "power-law index must lie in (0, 2)");
    require(support > 0.0 && std::isfinite(support), ErrorKind::domain, "power-law support must be finite and > 0");
    LevyMeasure m;
    m.kind_ = Kind::power_law_truncated;
    m.scale_ = scale;
    m.alpha_ = alpha;
    m.support_ = support;
    m.tail_ = with_tail;
    return m;
  }

  /// `density` is evaluated on 0 < |u| <= support (both signs).
  static LevyMeasure density(Density density, double support) {
    require(static_cast<bool>(density), ErrorKind::domain, "density function is empty");
    require(support > 0.0 && std::isfinite(support), ErrorKind::domain, "density support must be finite and > 0");
    LevyMeasure m;
    m.kind_ = Kind::user_density;
    m.density_ = std::make_shared<const Density>(std::move(density));
    m.support_ = support;
    return m;
  }

  Kind kind() const { return kind_; }
  const std::vector<Atom>& atom_list() const { return atoms_; }
  double scale() const { return scale_; }
  double alpha() const { return alpha_; }
  double lower_cut() const { return lower_cut_; }
  bool has_tail() const { return tail_; }

  /// Largest |u| charged by the (non-tail part of the) measure.
  double support_bound() const {
    if (kind_ != Kind::atom_list) return support_;
    double s = 0.0;
    for (const Atom& a : atoms_) s = std::max(s, std::abs(a.location));
    return s;
  }

  bool is_zero() const {
    if (kind_ != Kind::atom_list) return false;
    return std::all_of(atoms_.begin(), atoms_.end(), [](const Atom& a) { return a.rate == 0.0; });
  }

  bool is_symmetric() const { return kind_ == Kind::power_law_truncated; }

  double density_at(double u) const {
    const double au = std::abs(u);
    switch (kind_) {
      case Kind::atom_list: return 0.0;
      case Kind::power_law_truncated:
        if (au < lower_cut_ || au == 0.0) return 0.0;
        if (au > support_ && !tail_) return 0.0;
        return scale_ * std::pow(au, -1.0 - alpha_);
      case Kind::user_density:
        if (au < lower_cut_ || au == 0.0 || au > support_) return 0.0;
        return (*density_)(u);
    }
    return 0.0;
  }

  /// The measure with all mass on |u| < eps removed.
  LevyMeasure restricted(double eps) const {
    require(eps >= 0.0, ErrorKind::domain, "restriction cut must be >= 0");
    LevyMeasure m = *this;
    if (kind_ == Kind::atom_list) {
      std::erase_if(m.atoms_, [eps](const Atom& a) { return std::abs(a.location) < eps; });
    } else {
      m.lower_cut_ = std::max(lower_cut_, eps);
    }
    return m;
  }

  /// Integral of f over the band {lo <= |u| <= hi} against the measure.
  ///
  /// `quadratic` is the coefficient q with f(u) + f(-u) = 2 q u^2 + o(u^2);
  /// it supplies the power-law remainder over the excluded puncture.
  /// Not meant for oscillatory integrands on the untruncated tail.
  double integrate(const std::function<double(double)>& f, double lo, double hi, double quadratic,
                   const QuadratureOptions& opts = {}) const {
    require(lo >= 0.0 && hi >= lo, ErrorKind::domain, "invalid integration band");
    if (kind_ == Kind::atom_list) {
      double acc = 0.0;
      for (const Atom& a : atoms_) {
        const double au = std::abs(a.location);
        if (au >= lo && au <= hi && a.rate != 0.0) acc += a.rate * f(a.location);
      }
      return acc;
    }

    const double floor = std::max({lo, lower_cut_, opts.puncture});
    const double top = std::min(hi, support_);
    double acc = 0.0;

    // Both signs at once, in log-radius so the u^{-1-alpha} singularity is smooth.
    auto radial = [&](double x) {
      const double u = std::exp(x);
      return (f(u) * density_at(u) + f(-u) * density_at(-u)) * u;
    };
    if (top > floor) acc += detail::integrate_gk(radial, std::log(floor), std::log(top), opts.abs_tol);

    if (kind_ == Kind::power_law_truncated && tail_ && hi > support_) {
      const double start = std::max(support_, lo);
      acc += detail::integrate_gk(radial, std::log(start), std::isinf(hi) ? detail::kInf : std::log(hi), opts.abs_tol);
    }

    // Remainder over lo <= |u| < puncture when the measure reaches into it.
    if (kind_ == Kind::power_law_truncated && lower_cut_ < opts.puncture && lo < opts.puncture) {
      const double inner = std::max(lo, lower_cut_);
      const double e = 2.0 - alpha_;
      acc += scale_ * 2.0 * quadratic * (std::pow(opts.puncture, e) - std::pow(inner, e)) / e;
    }
    return acc;
  }

  /// Total rate of jumps on the band; +inf when the band reaches an
  /// infinite-activity puncture.
  double mass(double lo, double hi, const QuadratureOptions& opts = {}) const {
    if (kind_ == Kind::atom_list) return integrate([](double) { return 1.0; }, lo, hi, 0.0, opts);
    if (std::max(lo, lower_cut_) == 0.0) return detail::kInf;
    if (kind_ == Kind::power_law_truncated) {
      const double a = std::max(lo, lower_cut_);
      const double b = tail_ ? hi : std::min(hi, support_);
      if (!(b > a)) return 0.0;
      const double tail_part = std::isinf(b) ? 0.0 : std::pow(b, -alpha_);
      return 2.0 * scale_ * (std::pow(a, -alpha_) - tail_part) / alpha_;
    }
    return integrate([](double) { return 1.0; }, lo, hi, 0.0, opts);
  }

 private:
  Kind kind_ = Kind::atom_list;
  std::vector<Atom> atoms_;
  double scale_ = 0.0;
  double alpha_ = 0.0;
  double support_ = 0.0;
  double lower_cut_ = 0.0;
  bool tail_ = false;
  std::shared_ptr<const Density> density_;
};

enum class Direction { forward, backward };

/// (drift b, Gaussian factor A, jump measure nu, truncation delta).
/// Covariance Q = A A^T; the Levy-Khintchine drift gamma is identified with b.
struct LevyTriplet {
  Vector drift = Vector::Zero(1);
  Matrix gaussian = Matrix::Zero(1, 1);
  LevyMeasure measure;
  double truncation = 0.5;
  Direction direction = Direction::forward;

  static LevyTriplet scalar(double drift, double gaussian, LevyMeasure measure = {}, double truncation = 0.5,
                            Direction direction = Direction::forward) {
    LevyTriplet t;
    t.drift = Vector::Constant(1, drift);
    t.gaussian = Matrix::Constant(1, 1, gaussian);
    t.measure = std::move(measure);
    t.truncation = truncation;
    t.direction = direction;
    return t;
  }

  Eigen::Index dimension() const { return drift.size(); }
  Matrix covariance() const { return gaussian * gaussian.transpose(); }
  bool has_jumps() const { return !measure.is_zero(); }

  void validate() const {
    require(drift.size() >= 1, ErrorKind::structural, "triplet dimension must be >= 1");
    require(gaussian.rows() == drift.size(), ErrorKind::structural, "Gaussian factor must have d rows");
    require(truncation > 0.0, ErrorKind::domain, "truncation delta must be > 0");
    require(!has_jumps() || drift.size() == 1, ErrorKind::configuration,
            "jump measures are one-dimensional; use a scalar triplet per driver");
  }
};

/// \int_{|u|<=delta} (log(1+u) - u) nu(du).
inline double log_compensator_integral(const LevyMeasure& measure, double delta, const QuadratureOptions& opts = {}) {
  require(delta > 0.0, ErrorKind::domain, "delta must be > 0");
  if (measure.kind() == LevyMeasure::Kind::atom_list) {
    for (const Atom& a : measure.atom_list())
      require(!(std::abs(a.location) <= delta && a.location <= -1.0 && a.rate > 0.0), ErrorKind::domain,
              "atom at u <= -1 inside the truncation band");
  } else {
    require(std::min(delta, measure.support_bound()) < 1.0, ErrorKind::domain,
            "measure reaches u <= -1 inside the truncation band");
  }
  return measure.integrate([](double u) { return detail::log1p_minus_x(u); }, 0.0, delta, -0.5, opts);
}

/// \int_{|u|<=delta} |u|^2 nu(du).
inline double second_moment_small(const LevyMeasure& measure, double delta, const QuadratureOptions& opts = {}) {
  require(delta > 0.0, ErrorKind::domain, "delta must be > 0");
  return measure.integrate([](double u) { return u * u; }, 0.0, delta, 1.0, opts);
}

/// \int_{|u|<=delta} u nu(du): the small-jump compensation rate.
inline double small_jump_mean(const LevyMeasure& measure, double delta, const QuadratureOptions& opts = {}) {
  if (measure.is_symmetric()) return 0.0;
  return measure.integrate([](double u) { return u; }, 0.0, delta, 0.0, opts);
}

/// \int_{|u|<=delta} log(1+u) nu(du).
inline double log_jump_integral(const LevyMeasure& measure, double delta, const QuadratureOptions& opts = {}) {
  // Summing log(1+u) over both signs cancels catastrophically near 0; split off the linear part.
  return log_compensator_integral(measure, delta, opts) + small_jump_mean(measure, delta, opts);
}

namespace detail {

/// 2 \int_s^inf (cos(z u) - 1) c u^{-1-alpha} du for the symmetric power-law tail.
inline double power_law_tail_cosine(double scale, double alpha, double s, double z, double abs_tol) {
  if (z == 0.0) return 0.0;
  const double w = std::abs(z);
  // Adaptive GK over the first 32 periods, Ooura double-exponential beyond,
  // where the integrand is small and slowly decaying.
  const double r = s + 64.0 * std::numbers::pi / w;
  const double near = integrate_gk([&](double u) { return std::cos(w * u) * std::pow(u, -1.0 - alpha); }, s, r,
                                   abs_tol / (4.0 * scale));
  auto g = [&](double v) { return std::pow(r + v, -1.0 - alpha); };
  boost::math::quadrature::ooura_fourier_cos<double> cos_integrator(1e-13);
  boost::math::quadrature::ooura_fourier_sin<double> sin_integrator(1e-13);
  const auto [c_val, c_err] = cos_integrator.integrate(g, w);
  const auto [s_val, s_err] = sin_integrator.integrate(g, w);
  require(std::isfinite(c_val) && std::isfinite(s_val), ErrorKind::tolerance, "tail Fourier integral failed");
  require(scale * (std::abs(c_err) + std::abs(s_err)) <= std::max(abs_tol, 1e-9 * std::pow(r, -alpha)),
          ErrorKind::tolerance, "tail Fourier integral did not converge");
  const double far = std::cos(w * r) * c_val - std::sin(w * r) * s_val;
  return 2.0 * scale * (near + far - std::pow(s, -alpha) / alpha);
}

}  // namespace detail

/// Levy-Khintchine exponent Psi(z) = -1/2 <z,Qz> + i<z,b> + jump part with the
/// small jumps |u| <= delta compensated.
inline std::complex<double> characteristic_exponent(const LevyTriplet& triplet, const Vector& z,
                                                    const QuadratureOptions& opts = {}) {
  triplet.validate();
  require(z.size() == triplet.dimension(), ErrorKind::structural, "z has the wrong dimension");
  const double gauss = -0.5 * z.dot(triplet.covariance() * z);
  const double linear = z.dot(triplet.drift);
  if (!triplet.has_jumps()) return {gauss, linear};

  const LevyMeasure& nu = triplet.measure;
  const double delta = triplet.truncation;
  const double w = z(0);

  double re = nu.integrate([w](double u) { return detail::cos_minus_one(w * u); }, 0.0, delta, -0.5 * w * w, opts);
  double im = nu.integrate([w](double u) { return detail::sin_minus_x(w * u); }, 0.0, delta, 0.0, opts);

  const bool fourier_tail = nu.kind() == LevyMeasure::Kind::power_law_truncated && nu.has_tail();
  const double bounded_top = fourier_tail ? std::max(delta, nu.support_bound()) : detail::kInf;
  if (bounded_top > delta) {
    // Strictly above delta; the band edge at |u| = delta belongs to the small jumps.
    const double above = std::nextafter(delta, detail::kInf);
    re += nu.integrate([w](double u) { return detail::cos_minus_one(w * u); }, above, bounded_top, 0.0, opts);
    im += nu.integrate([w](double u) { return std::sin(w * u); }, above, bounded_top, 0.0, opts);
  }
  if (fourier_tail) {
    const double start = std::max({delta, nu.support_bound(), nu.lower_cut()});
    re += detail::power_law_tail_cosine(nu.scale(), nu.alpha(), start, w, opts.abs_tol);
  }
  return {gauss + re, linear + im};
}

/// |Psi(kz) - k^alpha Psi(z)|: zero for exactly alpha-stable triplets.
inline double stable_scaling_residual(const LevyTriplet& triplet, double alpha, double k, const Vector& z,
                                      const QuadratureOptions& opts = {}) {
  require(k > 0.0, ErrorKind::domain, "scaling factor k must be > 0");
  const Vector kz = k * z;
  return std::abs(characteristic_exponent(triplet, kz, opts) - std::pow(k, alpha) * characteristic_exponent(triplet, z, opts));
}

/// Default small-jump cut: residual variance below `variance_target`, raised
/// if needed so the simulated jump rate stays below `max_rate`.
inline double default_small_jump_cut(const LevyMeasure& measure, double variance_target = 1e-6,
                                     double max_rate = 1e4) {
  switch (measure.kind()) {
    case LevyMeasure::Kind::atom_list:
      return 0.0;
    case LevyMeasure::Kind::power_law_truncated: {
      const double c = measure.scale();
      const double a = measure.alpha();
      const double s = measure.support_bound();
      const double by_variance = std::pow((2.0 - a) * variance_target / (2.0 * c), 1.0 / (2.0 - a));
      const double by_rate = std::pow(max_rate * a / (2.0 * c) + std::pow(s, -a), -1.0 / a);
      return std::min(std::max({by_variance, by_rate, measure.lower_cut()}), s);
    }
    case LevyMeasure::Kind::user_density: {
      // Residual variance grows and simulated rate falls with eps; bisect each in log-radius.
      const double s = measure.support_bound();
      auto bisect = [&](auto&& accept_at_or_above) {
        double lo = std::log(1e-12 * s);
        double hi = std::log(s);
        if (accept_at_or_above(std::exp(lo))) return std::exp(lo);
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (accept_at_or_above(std::exp(mid))) hi = mid; else lo = mid;
        }
        return std::exp(hi);
      };
      const double by_rate = bisect([&](double eps) { return measure.restricted(eps).mass(0.0, s) <= max_rate; });
      const double by_variance = bisect([&](double eps) {
        return measure.integrate([](double u) { return u * u; }, 0.0, eps, 1.0) >= variance_target;
      });
      return std::min(std::max({by_rate, by_variance, measure.lower_cut()}), s);
    }
  }
  return 0.0;
}

}  // namespace levy_met
