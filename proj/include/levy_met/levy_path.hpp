#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "levy_met/error.hpp"
#include "levy_met/levy_measure.hpp"
#include "levy_met/linalg.hpp"
#include "levy_met/rng.hpp"

namespace levy_met {

/// Uniform grid t_start + k*dt, k = 0..steps(); the last node is exactly t_end.
class TimeGrid {
 public:
  TimeGrid(double t_start, double t_end, double dt) : t_start_(t_start), t_end_(t_end), dt_(dt) {
    require(dt > 0.0 && std::isfinite(dt), ErrorKind::domain, "grid step must be > 0");
    require(t_start < t_end, ErrorKind::domain, "grid needs t_start < t_end");
    const double ratio = (t_end - t_start) / dt;
    steps_ = static_cast<std::int64_t>(std::llround(ratio));
    require(std::abs(ratio - static_cast<double>(steps_)) <= 64.0 * 0x1.0p-52 * std::max(1.0, ratio),
            ErrorKind::domain, "grid length is not an integer multiple of dt");
  }

  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  double dt() const { return dt_; }
  std::int64_t steps() const { return steps_; }
  std::int64_t nodes() const { return steps_ + 1; }
  double node(std::int64_t k) const { return k == steps_ ? t_end_ : t_start_ + static_cast<double>(k) * dt_; }

  bool contains(double t) const {
    const double slack = 1e-9 * std::max({1.0, std::abs(t_start_), std::abs(t_end_)});
    return t >= t_start_ - slack && t <= t_end_ + slack;
  }

 private:
  double t_start_;
  double t_end_;
  double dt_;
  std::int64_t steps_ = 0;
};

struct JumpEvent {
  double time = 0.0;
  double size = 0.0;
};

namespace detail {

/// J(t) - J(0) from jump counts at 0 and at t, summed in time order so that
/// every view of the same jumps gives bit-identical values.
inline Vector signed_jump_sum(const Matrix& sizes, std::size_t at_origin, std::size_t at_t) {
  Vector acc = Vector::Zero(sizes.rows());
  if (at_t >= at_origin) {
    for (std::size_t j = at_origin; j < at_t; ++j) acc += sizes.col(static_cast<Eigen::Index>(j));
    return acc;
  }
  for (std::size_t j = at_t; j < at_origin; ++j) acc += sizes.col(static_cast<Eigen::Index>(j));
  return -acc;
}

}  // namespace detail

/// A cadlag path sampled as a continuous skeleton on grid nodes plus an
/// explicit jump list. The value is anchored so that L_0 = 0:
///   L(t) = C(t) + J(t) - J(0),   J(t) = sum of jumps at times <= t,
/// with C linearly interpolated between nodes and C(0) = 0.
class JumpPath {
 public:
  JumpPath(TimeGrid grid, Matrix continuous, std::vector<double> jump_times, Matrix jump_sizes, Matrix covariance)
      : grid_(grid),
        continuous_(std::move(continuous)),
        jump_times_(std::move(jump_times)),
        jump_sizes_(std::move(jump_sizes)),
        covariance_(std::move(covariance)) {
    require(continuous_.cols() == grid_.nodes(), ErrorKind::structural, "one skeleton column per grid node");
    require(jump_sizes_.cols() == static_cast<Eigen::Index>(jump_times_.size()), ErrorKind::structural,
            "jump sizes and times disagree");
    require(jump_sizes_.rows() == continuous_.rows() || jump_times_.empty(), ErrorKind::structural,
            "jump sizes have the wrong dimension");
    if (jump_sizes_.rows() != continuous_.rows()) jump_sizes_.resize(continuous_.rows(), 0);
    require(std::is_sorted(jump_times_.begin(), jump_times_.end()), ErrorKind::structural, "jump times must be sorted");
    require(grid_.contains(0.0), ErrorKind::structural, "path grid must contain the origin");
    origin_count_ = count_at_or_before(0.0);
    require(continuous_at(0.0).cwiseAbs().maxCoeff() == 0.0, ErrorKind::structural, "skeleton must vanish at 0");
  }

  const TimeGrid& grid() const { return grid_; }
  Eigen::Index dimension() const { return continuous_.rows(); }
  const Matrix& skeleton() const { return continuous_; }
  const std::vector<double>& jump_times() const { return jump_times_; }
  const Matrix& jump_sizes() const { return jump_sizes_; }
  const Matrix& covariance() const { return covariance_; }
  std::size_t jump_count() const { return jump_times_.size(); }

  /// Continuous part C(t), linear between nodes (exact node value at nodes).
  Vector continuous_at(double t) const {
    require(grid_.contains(t), ErrorKind::range, "time outside the sampled horizon");
    const double x = (t - grid_.t_start()) / grid_.dt();
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-9) {
      const auto k = std::clamp<std::int64_t>(static_cast<std::int64_t>(nearest), 0, grid_.steps());
      return continuous_.col(k);
    }
    const auto k = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(x)), 0, grid_.steps() - 1);
    const double w = std::clamp(x - static_cast<double>(k), 0.0, 1.0);
    return (1.0 - w) * continuous_.col(k) + w * continuous_.col(k + 1);
  }

  /// Right-continuous value L(t).
  Vector evaluate(double t) const {
    return continuous_at(t) + detail::signed_jump_sum(jump_sizes_, origin_count_, count_at_or_before(t));
  }

  /// Value at grid node k, including all jumps up to that node time.
  Vector node_value(std::int64_t k) const { return evaluate(grid_.node(k)); }

  std::size_t count_at_or_before(double t) const {
    return static_cast<std::size_t>(std::upper_bound(jump_times_.begin(), jump_times_.end(), t) - jump_times_.begin());
  }

 private:
  TimeGrid grid_;
  Matrix continuous_;
  std::vector<double> jump_times_;
  Matrix jump_sizes_;
  Matrix covariance_;
  std::size_t origin_count_ = 0;
};

struct SamplerOptions {
  /// Jumps with |u| below the cut are dropped together with their
  /// compensator. Unset: default_small_jump_cut of the measure.
  std::optional<double> small_jump_cut;
  double variance_target = 1e-6;
  double max_rate = 1e4;
  QuadratureOptions quadrature;
};

namespace detail {

inline double thinning_bound(const LevyMeasure& nu, double lo, double hi) {
  double peak = 0.0;
  const int n = 4000;
  for (int i = 0; i <= n; ++i) {
    const double u = lo * std::pow(hi / lo, static_cast<double>(i) / n);
    peak = std::max({peak, nu.density_at(u) * u, nu.density_at(-u) * u});
  }
  return 1.25 * peak;
}

/// Marked Poisson jumps of the (already restricted, finite-rate) measure on (0, horizon].
inline std::vector<JumpEvent> sample_jumps(const LevyMeasure& nu, double horizon, RandomStream& rng) {
  std::vector<JumpEvent> jumps;
  auto clock = [&](double rate, auto&& draw_size) {
    if (!(rate > 0.0)) return;
    for (double t = rng.exponential(rate); t <= horizon; t += rng.exponential(rate)) {
      const std::optional<double> u = draw_size();
      if (u) jumps.push_back({t, *u});
    }
  };

  switch (nu.kind()) {
    case LevyMeasure::Kind::atom_list:
      for (const Atom& atom : nu.atom_list()) clock(atom.rate, [&]() -> std::optional<double> { return atom.location; });
      break;
    case LevyMeasure::Kind::power_law_truncated: {
      const double a = nu.alpha();
      const double lo = nu.lower_cut();
      const double s = nu.support_bound();
      if (s > lo) {
        const double top = std::pow(lo, -a);
        const double bottom = std::pow(s, -a);
        clock(nu.mass(lo, s), [&]() -> std::optional<double> {
          const double r = std::pow(top - rng.uniform() * (top - bottom), -1.0 / a);
          return rng.coin() ? r : -r;
        });
      }
      if (nu.has_tail()) {
        const double start = std::max(s, lo);
        clock(2.0 * nu.scale() * std::pow(start, -a) / a, [&]() -> std::optional<double> {
          const double r = start * std::pow(rng.uniform(), -1.0 / a);
          return rng.coin() ? r : -r;
        });
      }
      break;
    }
    case LevyMeasure::Kind::user_density: {
      const double lo = nu.lower_cut();
      const double hi = nu.support_bound();
      const double bound = thinning_bound(nu, lo, hi);
      // Proposal intensity bound/|u| on each side: log-uniform radius.
      clock(2.0 * bound * std::log(hi / lo), [&]() -> std::optional<double> {
        const double r = lo * std::pow(hi / lo, rng.uniform());
        const double u = rng.coin() ? r : -r;
        const double ratio = nu.density_at(u) * r / bound;
        require(ratio <= 1.0, ErrorKind::configuration, "thinning bound violated by the user density");
        if (rng.uniform() < ratio) return u;
        return std::nullopt;
      });
      break;
    }
  }
  std::stable_sort(jumps.begin(), jumps.end(), [](const JumpEvent& x, const JumpEvent& y) { return x.time < y.time; });
  return jumps;
}

inline LevyMeasure simulated_measure(const LevyTriplet& triplet, const SamplerOptions& opts) {
  if (!triplet.has_jumps()) return triplet.measure;
  const double cut = opts.small_jump_cut.value_or(
      default_small_jump_cut(triplet.measure, opts.variance_target, opts.max_rate));
  LevyMeasure nu = triplet.measure.restricted(cut);
  require(std::isfinite(nu.mass(0.0, detail::kInf, opts.quadrature)), ErrorKind::configuration,
          "infinite simulable jump rate: set a positive small-jump cut");
  return nu;
}

inline JumpPath sample_on_positive_grid(const LevyTriplet& triplet, const TimeGrid& grid, std::uint64_t seed,
                                        const SamplerOptions& opts) {
  const Eigen::Index d = triplet.dimension();
  const LevyMeasure nu = simulated_measure(triplet, opts);
  const double compensation = triplet.has_jumps() ? small_jump_mean(nu, triplet.truncation, opts.quadrature) : 0.0;
  Vector drift = triplet.drift;
  drift(0) -= compensation;

  Matrix skeleton = Matrix::Zero(d, grid.nodes());
  const Eigen::Index noise_dim = triplet.gaussian.cols();
  const bool gaussian = noise_dim > 0 && triplet.gaussian.cwiseAbs().maxCoeff() > 0.0;
  Vector brownian = Vector::Zero(noise_dim);
  RandomStream gauss_rng(derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::gaussian)}));
  const double sqrt_dt = std::sqrt(grid.dt());
  for (std::int64_t k = 1; k < grid.nodes(); ++k) {
    skeleton.col(k) = drift * grid.node(k);
    if (gaussian) {
      for (Eigen::Index i = 0; i < noise_dim; ++i) brownian(i) += sqrt_dt * gauss_rng.normal();
      skeleton.col(k) += triplet.gaussian * brownian;
    }
  }

  std::vector<double> times;
  Matrix sizes(d, 0);
  if (triplet.has_jumps()) {
    RandomStream jump_rng(derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::jumps)}));
    const std::vector<JumpEvent> jumps = sample_jumps(nu, grid.t_end(), jump_rng);
    times.reserve(jumps.size());
    sizes.resize(1, static_cast<Eigen::Index>(jumps.size()));
    for (std::size_t j = 0; j < jumps.size(); ++j) {
      times.push_back(jumps[j].time);
      sizes(0, static_cast<Eigen::Index>(j)) = jumps[j].size;
    }
  }
  return JumpPath(grid, std::move(skeleton), std::move(times), std::move(sizes), triplet.covariance());
}

}  // namespace detail

/// Levy-Ito sample on [0, T]: b t + A W_t + compensated small jumps + large jumps.
inline JumpPath sample_forward(const LevyTriplet& triplet, const TimeGrid& grid, std::uint64_t seed,
                               const SamplerOptions& opts = {}) {
  triplet.validate();
  require(triplet.direction == Direction::forward, ErrorKind::configuration, "triplet is not a forward triplet");
  require(grid.t_start() == 0.0, ErrorKind::domain, "forward grid must start at 0");
  return detail::sample_on_positive_grid(triplet, grid, seed, opts);
}

/// Sample on [-T, 0] with L_0 = 0, by time reflection of an independent
/// forward-style sample: L^-(t) = -C(|t|) - sum of jumps in (t, 0].
inline JumpPath sample_backward(const LevyTriplet& triplet, const TimeGrid& grid, std::uint64_t seed,
                                const SamplerOptions& opts = {}) {
  triplet.validate();
  require(triplet.direction == Direction::backward, ErrorKind::configuration, "triplet is not a backward triplet");
  require(grid.t_end() == 0.0, ErrorKind::domain, "backward grid must end at 0");
  const TimeGrid mirror(0.0, -grid.t_start(), grid.dt());
  require(mirror.steps() == grid.steps(), ErrorKind::domain, "backward grid does not mirror onto [0, T]");
  const JumpPath ahead = detail::sample_on_positive_grid(triplet, mirror, seed, opts);

  const std::int64_t n = grid.steps();
  Matrix skeleton(ahead.dimension(), grid.nodes());
  for (std::int64_t k = 0; k <= n; ++k) skeleton.col(k) = -ahead.skeleton().col(n - k);
  skeleton.col(n).setZero();

  const std::size_t m = ahead.jump_count();
  std::vector<double> times(m);
  Matrix sizes(ahead.dimension(), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    times[j] = -ahead.jump_times()[m - 1 - j];
    sizes.col(static_cast<Eigen::Index>(j)) = ahead.jump_sizes().col(static_cast<Eigen::Index>(m - 1 - j));
  }
  return JumpPath(grid, std::move(skeleton), std::move(times), std::move(sizes), ahead.covariance());
}

/// Two-sided path: forward leg on [0, T+], backward leg on [-T-, 0], glued at
/// the common origin value 0. Shifts are views: the data is shared and only
/// the offset changes, so shift(shift(w, s), t) == shift(w, s + t) bitwise.
class TwoSidedPath {
 public:
  TwoSidedPath(JumpPath forward, std::optional<JumpPath> backward) {
    require(forward.grid().t_start() == 0.0, ErrorKind::structural, "forward leg must start at 0");
    if (backward) {
      require(backward->grid().t_end() == 0.0, ErrorKind::structural, "backward leg must end at 0");
      require(backward->dimension() == forward.dimension(), ErrorKind::structural, "legs differ in dimension");
      require(backward->evaluate(0.0).cwiseAbs().maxCoeff() == 0.0, ErrorKind::structural,
              "backward leg does not vanish at 0");
    }
    require(forward.evaluate(0.0).cwiseAbs().maxCoeff() == 0.0, ErrorKind::structural, "forward leg does not vanish at 0");

    auto data = std::make_shared<Data>(Data{std::move(forward), std::move(backward), {}, {}});
    const Eigen::Index d = data->forward.dimension();
    const std::size_t nb = data->backward ? data->backward->jump_count() : 0;
    const std::size_t nf = data->forward.jump_count();
    data->times.reserve(nb + nf);
    data->sizes.resize(d, static_cast<Eigen::Index>(nb + nf));
    Eigen::Index col = 0;
    if (data->backward) {
      for (std::size_t j = 0; j < nb; ++j, ++col) {
        data->times.push_back(data->backward->jump_times()[j]);
        data->sizes.col(col) = data->backward->jump_sizes().col(static_cast<Eigen::Index>(j));
      }
    }
    for (std::size_t j = 0; j < nf; ++j, ++col) {
      data->times.push_back(data->forward.jump_times()[j]);
      data->sizes.col(col) = data->forward.jump_sizes().col(static_cast<Eigen::Index>(j));
    }
    data_ = std::move(data);
  }

  const JumpPath& forward_leg() const { return data_->forward; }
  const std::optional<JumpPath>& backward_leg() const { return data_->backward; }
  Eigen::Index dimension() const { return data_->forward.dimension(); }
  const Matrix& covariance() const { return data_->forward.covariance(); }
  double offset() const { return offset_; }

  /// Sampled horizon in this view's time coordinates.
  double lower() const { return (data_->backward ? data_->backward->grid().t_start() : 0.0) - offset_; }
  double upper() const { return data_->forward.grid().t_end() - offset_; }

  bool contains(double t) const {
    const double slack = 1e-9 * std::max({1.0, std::abs(lower()), std::abs(upper())});
    return t >= lower() - slack && t <= upper() + slack;
  }

  /// theta_t: s -> w(t + s) - w(t).
  TwoSidedPath shift(double t) const {
    require(contains(t), ErrorKind::range, "shift leaves the sampled horizon");
    TwoSidedPath out = *this;
    out.offset_ = offset_ + t;
    return out;
  }

  Vector continuous_at(double t) const {
    require(contains(t), ErrorKind::range, "time outside the sampled horizon");
    return raw_continuous(offset_ + t) - raw_continuous(offset_);
  }

  /// C(v) - C(u) of the continuous part.
  Vector continuous_increment(double u, double v) const {
    require(contains(u) && contains(v), ErrorKind::range, "time outside the sampled horizon");
    return raw_continuous(offset_ + v) - raw_continuous(offset_ + u);
  }

  /// Right-continuous value; jump membership is decided in view coordinates.
  Vector evaluate(double t) const {
    require(contains(t), ErrorKind::range, "time outside the sampled horizon");
    if (t == 0.0) return Vector::Zero(dimension());
    return continuous_at(t) + detail::signed_jump_sum(data_->sizes, count_at_or_before(0.0), count_at_or_before(t));
  }

  double evaluate_scalar(double t) const { return evaluate(t)(0); }
  double continuous_scalar(double t) const { return continuous_at(t)(0); }

  /// Jumps with t0 < time <= t1, retimed into view coordinates (scalar paths).
  std::vector<JumpEvent> jumps_in(double t0, double t1) const {
    std::vector<JumpEvent> out;
    if (!(t1 > t0)) return out;
    const std::size_t a = count_at_or_before(t0);
    const std::size_t b = count_at_or_before(t1);
    out.reserve(b - a);
    for (std::size_t j = a; j < b; ++j) out.push_back({data_->times[j] - offset_, data_->sizes(0, static_cast<Eigen::Index>(j))});
    return out;
  }

  /// sum of f(kappa) over jumps with t0 < time <= t1 (scalar paths).
  template <class F>
  double jump_sum(double t0, double t1, F&& f) const {
    double acc = 0.0;
    if (!(t1 > t0)) return acc;
    const std::size_t a = count_at_or_before(t0);
    const std::size_t b = count_at_or_before(t1);
    for (std::size_t j = a; j < b; ++j) acc += f(data_->sizes(0, static_cast<Eigen::Index>(j)));
    return acc;
  }

  /// Number of jumps at view times <= t.
  std::size_t count_at_or_before(double t) const {
    const double shift = offset_;
    return static_cast<std::size_t>(
        std::partition_point(data_->times.begin(), data_->times.end(), [&](double s) { return s - shift <= t; }) -
        data_->times.begin());
  }

 private:
  struct Data {
    JumpPath forward;
    std::optional<JumpPath> backward;
    std::vector<double> times;
    Matrix sizes;
  };

  Vector raw_continuous(double t) const {
    if (t >= 0.0 || !data_->backward) return data_->forward.continuous_at(std::max(t, 0.0));
    return data_->backward->continuous_at(t);
  }

  std::shared_ptr<const Data> data_;
  double offset_ = 0.0;
};

/// Glue independently sampled legs.
inline TwoSidedPath two_sided(JumpPath forward, JumpPath backward) {
  return TwoSidedPath(std::move(forward), std::optional<JumpPath>(std::move(backward)));
}

inline TwoSidedPath shift(const TwoSidedPath& path, double t) { return path.shift(t); }

/// Both legs of one driver on [-T, T], legs keyed by (master, path, driver, leg).
inline TwoSidedPath sample_two_sided(const LevyTriplet& triplet, double horizon, double dt, std::uint64_t master_seed,
                                     std::uint64_t path_index, std::uint64_t driver, const SamplerOptions& opts = {}) {
  LevyTriplet fwd = triplet;
  fwd.direction = Direction::forward;
  LevyTriplet bwd = triplet;
  bwd.direction = Direction::backward;
  const auto seed = [&](Leg leg) { return derive_seed(master_seed, {path_index, driver, static_cast<std::uint64_t>(leg)}); };
  return two_sided(sample_forward(fwd, TimeGrid(0.0, horizon, dt), seed(Leg::forward), opts),
                   sample_backward(bwd, TimeGrid(-horizon, 0.0, dt), seed(Leg::backward), opts));
}

/// Debug dump: `t,component_1..component_d,is_jump`; node rows carry the path
/// value, jump rows carry the jump time and size.
inline void write_path_csv(const JumpPath& path, std::ostream& out) {
  char buf[64];
  out << 't';
  for (Eigen::Index i = 0; i < path.dimension(); ++i) out << ",component_" << (i + 1);
  out << ",is_jump\n";
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  std::size_t j = 0;
  const auto& times = path.jump_times();
  for (std::int64_t k = 0; k < path.grid().nodes(); ++k) {
    const double t = path.grid().node(k);
    for (; j < times.size() && times[j] <= t; ++j) {
      out << num(times[j]);
      for (Eigen::Index i = 0; i < path.dimension(); ++i) out << ',' << num(path.jump_sizes()(i, static_cast<Eigen::Index>(j)));
      out << ",1\n";
    }
    const Vector v = path.evaluate(t);
    out << num(t);
    for (Eigen::Index i = 0; i < path.dimension(); ++i) out << ',' << num(v(i));
    out << ",0\n";
  }
}

}  // namespace levy_met
