#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "levy_met/levy_path.hpp"

using namespace levy_met;
using Catch::Matchers::WithinAbs;

namespace {

LevyTriplet atom_triplet(Direction dir = Direction::forward) {
  return LevyTriplet::scalar(0.0, 0.0, LevyMeasure::atoms({{0.2, 3.0}}), 0.5, dir);
}

template <class F>
std::pair<double, double> mean_and_var(int n, F&& sample) {
  double s = 0.0;
  double s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = sample(i);
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  return {m, s2 / n - m * m};
}

}  // namespace

TEST_CASE("time grid validation") {
  const TimeGrid g(0.0, 2.0, 0.5);
  CHECK(g.steps() == 4);
  CHECK(g.node(4) == 2.0);
  CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0.3), Error);
  CHECK_THROWS_AS(TimeGrid(1.0, 1.0, 0.1), Error);
  CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0.0), Error);
  CHECK(TimeGrid(0.0, 200.0, 0.01).steps() == 20000);
}

TEST_CASE("pure drift forward path") {
  const auto p = sample_forward(LevyTriplet::scalar(1.0, 0.0), TimeGrid(0.0, 2.0, 0.5), 7);
  CHECK(p.jump_count() == 0);
  for (int k = 0; k <= 4; ++k) CHECK(p.node_value(k)(0) == 0.5 * k);
}

TEST_CASE("pure drift backward path and zero triplet") {
  const auto p = sample_backward(LevyTriplet::scalar(1.0, 0.0, {}, 0.5, Direction::backward), TimeGrid(-2.0, 0.0, 0.5), 7);
  CHECK(p.evaluate(-2.0)(0) == -2.0);
  CHECK(p.evaluate(0.0)(0) == 0.0);
  CHECK_THAT(p.evaluate(-0.75)(0), WithinAbs(-0.75, 1e-15));

  const auto z = sample_backward(LevyTriplet::scalar(0.0, 0.0, {}, 0.5, Direction::backward), TimeGrid(-1.0, 0.0, 0.1), 3);
  for (std::int64_t k = 0; k < z.grid().nodes(); ++k) CHECK(z.node_value(k)(0) == 0.0);
}

TEST_CASE("direction and grid preconditions") {
  CHECK_THROWS_AS(sample_forward(atom_triplet(Direction::backward), TimeGrid(0.0, 1.0, 0.1), 1), Error);
  CHECK_THROWS_AS(sample_forward(atom_triplet(), TimeGrid(-1.0, 1.0, 0.1), 1), Error);
  CHECK_THROWS_AS(sample_backward(atom_triplet(Direction::backward), TimeGrid(-1.0, 0.5, 0.1), 1), Error);
}

TEST_CASE("infinite simulable rate is a configuration error") {
  const auto t = LevyTriplet::scalar(0.0, 0.0, LevyMeasure::power_law(1.0, 1.5, 0.5));
  SamplerOptions opts;
  opts.small_jump_cut = 0.0;
  try {
    sample_forward(t, TimeGrid(0.0, 1.0, 0.1), 1, opts);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::configuration);
  }
}

TEST_CASE("Poisson jump counts match the atom rate, both legs") {
  const int n = 10000;
  const TimeGrid fwd(0.0, 1.0, 0.25);
  const TimeGrid bwd(-1.0, 0.0, 0.25);
  const auto [mf, vf] = mean_and_var(n, [&](int i) {
    return static_cast<double>(sample_forward(atom_triplet(), fwd, derive_seed(11, {std::uint64_t(i)})).jump_count());
  });
  const auto [mb, vb] = mean_and_var(n, [&](int i) {
    return static_cast<double>(
        sample_backward(atom_triplet(Direction::backward), bwd, derive_seed(12, {std::uint64_t(i)})).jump_count());
  });
  const double band = 3.0 * std::sqrt(3.0 / n);
  CHECK(std::abs(mf - 3.0) <= band);
  CHECK(std::abs(mb - 3.0) <= band);
  CHECK(std::abs(vf - 3.0) <= 0.3);
}

TEST_CASE("compensated small jumps have mean zero") {
  const int n = 10000;
  const TimeGrid g(0.0, 1.0, 0.1);
  // Asymmetric atom: the compensation drift is -0.6.
  const auto [m_atom, v_atom] = mean_and_var(n, [&](int i) {
    return sample_forward(atom_triplet(), g, derive_seed(21, {std::uint64_t(i)})).evaluate(1.0)(0);
  });
  CHECK(std::abs(m_atom) <= 3.0 * std::sqrt(0.12 / n));
  CHECK(std::abs(v_atom - 0.12) <= 0.02);

  const auto pl = LevyTriplet::scalar(0.0, 0.0, LevyMeasure::power_law(1.0, 1.5, 0.5));
  SamplerOptions opts;
  opts.max_rate = 200.0;
  const double var = second_moment_small(LevyMeasure::power_law(1.0, 1.5, 0.5), 0.5);
  const auto [m_pl, v_pl] = mean_and_var(n, [&](int i) {
    return sample_forward(pl, g, derive_seed(22, {std::uint64_t(i)}), opts).evaluate(1.0)(0);
  });
  CHECK(std::abs(m_pl) <= 3.0 * std::sqrt(var / n));
  CHECK(v_pl <= var);
}

TEST_CASE("user density is sampled by thinning at the right rate") {
  const auto nu = LevyMeasure::density([](double u) { return u > 0 ? 4.0 : 1.0; }, 0.4);
  const auto t = LevyTriplet::scalar(0.0, 0.0, nu);
  SamplerOptions opts;
  opts.small_jump_cut = 0.05;
  const double rate = nu.restricted(0.05).mass(0.0, 1.0);  // 5 * 0.35
  const int n = 4000;
  const auto [m, v] = mean_and_var(n, [&](int i) {
    return static_cast<double>(sample_forward(t, TimeGrid(0.0, 1.0, 0.5), derive_seed(5, {std::uint64_t(i)}), opts).jump_count());
  });
  CHECK(std::abs(m - rate) <= 3.0 * std::sqrt(rate / n));
}

TEST_CASE("two-sided path basics") {
  const auto zf = sample_forward(LevyTriplet::scalar(0.0, 0.0), TimeGrid(0.0, 1.0, 0.1), 1);
  const auto zb = sample_backward(LevyTriplet::scalar(0.0, 0.0, {}, 0.5, Direction::backward), TimeGrid(-1.0, 0.0, 0.1), 2);
  const auto z = two_sided(zf, zb);
  for (double t : {-1.0, -0.35, 0.0, 0.5, 1.0}) CHECK(z.evaluate_scalar(t) == 0.0);

  LevyTriplet tri = LevyTriplet::scalar(0.3, 0.7, LevyMeasure::atoms({{0.2, 3.0}, {-0.3, 2.0}}));
  const auto w = sample_two_sided(tri, 3.0, 0.01, 99, 0, 1);
  CHECK(w.evaluate_scalar(0.0) == 0.0);
  for (double t : {0.013, 0.5, 1.777, 3.0}) CHECK(w.evaluate_scalar(t) == w.forward_leg().evaluate(t)(0));
  for (double t : {-0.013, -1.5, -3.0}) CHECK(w.evaluate_scalar(t) == w.backward_leg()->evaluate(t)(0));
  CHECK_THROWS_AS(w.evaluate(3.5), Error);
  CHECK_THROWS_AS(w.evaluate(-3.5), Error);
}

TEST_CASE("two_sided rejects mismatched legs") {
  const auto f = sample_forward(LevyTriplet::scalar(1.0, 0.0), TimeGrid(0.0, 1.0, 0.1), 1);
  LevyTriplet t2;
  t2.drift = Vector::Zero(2);
  t2.gaussian = Matrix::Zero(2, 2);
  t2.direction = Direction::backward;
  const auto b2 = sample_backward(t2, TimeGrid(-1.0, 0.0, 0.1), 2);
  try {
    two_sided(f, b2);
    FAIL("expected structural error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::structural);
  }
}

TEST_CASE("shift identities") {
  const auto drift = sample_two_sided(LevyTriplet::scalar(1.0, 0.0), 4.0, 0.5, 3, 0, 0);
  CHECK_THAT(shift(drift, 1.0).evaluate_scalar(1.25), WithinAbs(1.25, 1e-15));

  const auto w = sample_two_sided(LevyTriplet::scalar(0.1, 0.5, LevyMeasure::atoms({{0.2, 3.0}})), 10.0, 0.01, 42, 0, 0);
  const auto same = shift(w, 0.0);
  Catch::SimplePcg32 rng(17);
  auto draw = [&](double lo, double hi) { return lo + (hi - lo) * (rng() / 4294967296.0); };
  for (int i = 0; i < 200; ++i) {
    const double t = draw(-10.0, 10.0);
    CHECK(same.evaluate_scalar(t) == w.evaluate_scalar(t));
  }
  for (int i = 0; i < 200; ++i) {
    const double s = draw(-3.0, 3.0);
    const double t = draw(-3.0, 3.0);
    const double u = draw(-3.0, 3.0);
    CHECK(shift(shift(w, s), t).evaluate_scalar(u) == shift(w, s + t).evaluate_scalar(u));
    // theta_s w (u) = w(s + u) - w(s), up to rounding of the re-anchoring.
    CHECK_THAT(shift(w, s).evaluate_scalar(u), WithinAbs(w.evaluate_scalar(s + u) - w.evaluate_scalar(s), 1e-12));
  }
  CHECK_THROWS_AS(shift(w, 11.0), Error);
  CHECK_THROWS_AS(shift(w, 9.0).evaluate(2.0), Error);
}

TEST_CASE("jump times are re-timed by a shift") {
  const auto w = sample_two_sided(atom_triplet(), 5.0, 0.1, 8, 0, 0);
  const auto all = w.jumps_in(0.0, 5.0);
  REQUIRE(!all.empty());
  const double s = 0.5 * all.front().time;
  const auto moved = shift(w, s).jumps_in(-s, 5.0 - s);
  REQUIRE(moved.size() == all.size());
  for (std::size_t j = 0; j < all.size(); ++j) CHECK_THAT(moved[j].time, WithinAbs(all[j].time - s, 1e-15));
}

TEST_CASE("cadlag evaluation at nodes and jumps") {
  const auto p = sample_forward(LevyTriplet::scalar(0.2, 0.4, LevyMeasure::atoms({{0.2, 3.0}})), TimeGrid(0.0, 4.0, 0.05), 123);
  REQUIRE(p.jump_count() > 0);
  for (std::int64_t k = 0; k < p.grid().nodes(); k += 7) {
    const double t = p.grid().node(k);
    const std::size_t n = p.count_at_or_before(t);
    double jumps = 0.0;
    for (std::size_t j = 0; j < n; ++j) jumps += p.jump_sizes()(0, static_cast<Eigen::Index>(j));
    CHECK_THAT(p.evaluate(t)(0), WithinAbs(p.skeleton()(0, k) + jumps, 1e-14));
  }
  for (std::size_t j = 0; j < p.jump_count(); ++j) {
    const double s = p.jump_times()[j];
    const double size = p.jump_sizes()(0, static_cast<Eigen::Index>(j));
    const double before = std::nextafter(s, 0.0);
    CHECK_THAT(p.evaluate(s)(0) - p.evaluate(before)(0), WithinAbs(size, 1e-12));
    double prev = 1.0;
    for (double h = 1e-2; h >= 1e-8; h /= 10.0) {
      const double err = std::abs(p.evaluate(s)(0) - p.evaluate(s - h)(0) - size);
      CHECK(err <= prev + 1e-15);
      prev = err;
    }
  }
}

TEST_CASE("sampling is deterministic given the seed") {
  const auto t = LevyTriplet::scalar(0.3, 0.9, LevyMeasure::atoms({{0.2, 3.0}, {-0.4, 1.0}}));
  const auto a = sample_forward(t, TimeGrid(0.0, 5.0, 0.01), 77);
  const auto b = sample_forward(t, TimeGrid(0.0, 5.0, 0.01), 77);
  const auto c = sample_forward(t, TimeGrid(0.0, 5.0, 0.01), 78);
  CHECK(a.skeleton() == b.skeleton());
  CHECK(a.jump_times() == b.jump_times());
  CHECK(a.jump_sizes() == b.jump_sizes());
  CHECK(a.skeleton() != c.skeleton());
}

TEST_CASE("property: increments on disjoint windows are uncorrelated") {
  const int n = 10000;
  const auto t = LevyTriplet::scalar(0.5, 0.8, LevyMeasure::atoms({{0.2, 3.0}, {-0.3, 1.0}}));
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    const auto w = sample_two_sided(t, 1.0, 0.05, 31, static_cast<std::uint64_t>(i), 0);
    const double x = w.evaluate_scalar(0.5) - w.evaluate_scalar(0.0);
    const double y = w.evaluate_scalar(1.0) - w.evaluate_scalar(0.5);
    const double z = w.evaluate_scalar(0.0) - w.evaluate_scalar(-0.5);
    sx += x;
    sy += y + z;
    sxy += x * (y + z);
    sxx += x * x;
    syy += (y + z) * (y + z);
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double sd = std::sqrt((sxx / n) * (syy / n));
  CHECK(std::abs(cov) <= 4.0 * sd / std::sqrt(n));
}

TEST_CASE("path csv dump") {
  const auto p = sample_forward(atom_triplet(), TimeGrid(0.0, 1.0, 0.5), 9);
  std::ostringstream out;
  write_path_csv(p, out);
  const std::string text = out.str();
  CHECK(text.rfind("t,component_1,is_jump\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  CHECK(lines == 1 + 3 + p.jump_count());
}
