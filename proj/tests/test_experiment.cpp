#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "levy_met/experiment.hpp"

using namespace levy_met;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

std::string parse_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
    return e.what();
  }
  return "";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const CriterionResult* find(const ExperimentReport& r, const std::string& id) {
  for (const auto& c : r.criteria)
    if (c.id == id) return &c;
  return nullptr;
}

const char* kAtomConfig = R"(# closed-form example with one atom
experiment = example_2d_exact
measure.kind = atom
measure.atoms = 0.2:3
horizon = 50
n_paths = 6
master_seed = 17
cocycle.pairs = 10
)";

}  // namespace

TEST_CASE("minimal config gets the documented defaults") {
  const auto c = parse_config("experiment = example_2d_exact\nhorizon = 200\n");
  CHECK(c.experiment == ExperimentKind::example_2d_exact);
  CHECK(c.measure.kind == "none");
  CHECK(c.delta == 0.5);
  CHECK(c.dt == 0.01);
  CHECK(c.dt_int == 0.01);
  CHECK(c.renorm_step == 1.0);
  CHECK(c.n_paths == 1);
  CHECK(c.master_seed == 0);
  CHECK(c.resolved_group_tol() == 10.0 / 200.0);
  CHECK(c.tolerances.se_factor == 3.0);
}

TEST_CASE("config comments, dotted keys and atom lists") {
  const auto c = parse_config(kAtomConfig);
  REQUIRE(c.measure.atoms.size() == 1);
  CHECK(c.measure.atoms[0].location == 0.2);
  CHECK(c.measure.atoms[0].rate == 3.0);
  CHECK(c.n_paths == 6);
  CHECK(c.master_seed == 17);
  const auto again = parse_config(to_text(c));
  CHECK(to_text(again) == to_text(c));
}

TEST_CASE("config errors name the key and the line") {
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 20\nn_paths = 0\n"),
             ContainsSubstring("line 3: n_paths must be ≥ 1"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 20\n\nhorizon = 30\n"),
             ContainsSubstring("line 4: duplicate key 'horizon' (first set on line 2)"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 20\ncolour = red\n"),
             ContainsSubstring("line 3: unknown key 'colour'"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = soon\n"),
             ContainsSubstring("line 2: horizon: expected a number, got 'soon'"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\n"), ContainsSubstring("missing required key 'horizon'"));
  CHECK_THAT(parse_error("horizon = 20\n"), ContainsSubstring("missing required key 'experiment'"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon 20\n"), ContainsSubstring("line 2: expected 'key = value'"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 20\nmeasure.kind = atom\n"),
             ContainsSubstring("line 3: measure.atoms is required"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 20\ndt = -1\n"), ContainsSubstring("dt must be > 0"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 20\nmeasure.kind = atom\nmeasure.atoms = -1.5:1\n"),
             ContainsSubstring("jumps > -1"));
  CHECK_THAT(parse_error("experiment = stable_1d\nhorizon = 20\n"), ContainsSubstring("power_law"));
  CHECK_THAT(parse_error("experiment = example_2d_exact\nhorizon = 5\n"), ContainsSubstring("10 * renorm_step"));
}

TEST_CASE("mean and standard error") {
  const auto m = mean_se({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK_THAT(m.se, WithinAbs(std::sqrt(5.0 / 3.0 / 4.0), 1e-15));
  CHECK(std::isnan(mean_se({1.0}).se));
}

TEST_CASE("worker count honours the environment cap") {
  CHECK(worker_count(1, 8u) == 1);
  ::setenv("LEVY_MET_THREADS", "2", 1);
  CHECK(worker_count(100, 8u) == 2);
  ::setenv("LEVY_MET_THREADS", "junk", 1);
  CHECK(worker_count(100, 8u) == 8);
  ::unsetenv("LEVY_MET_THREADS");
}

TEST_CASE("drift-only example reproduces the coefficients") {
  const auto r = compute_experiment(parse_config("experiment = example_2d_exact\nhorizon = 200\n"));
  REQUIRE(r.paths.size() == 1);
  CHECK_THAT(r.paths[0].lambda[0], WithinAbs(2.0, 1e-8));
  CHECK_THAT(r.paths[0].lambda[1], WithinAbs(-4.0, 1e-8));
  REQUIRE(find(r, "AC1") != nullptr);
  CHECK(find(r, "AC1")->status == CriterionResult::Status::pass);
  CHECK(r.passed());
}

TEST_CASE("single stochastic path skips standard-error criteria") {
  auto c = parse_config(kAtomConfig);
  c.n_paths = 1;
  const auto r = compute_experiment(c);
  REQUIRE(find(r, "AC2") != nullptr);
  CHECK(find(r, "AC2")->status == CriterionResult::Status::skip);
}

TEST_CASE("outputs are independent of the worker count") {
  const auto c = parse_config(kAtomConfig);
  const auto base = std::filesystem::temp_directory_path() / "levy_met_test_experiment";
  std::filesystem::remove_all(base);
  write_outputs(compute_experiment(c, 1u), base / "one");
  write_outputs(compute_experiment(c, 3u), base / "three");
  write_outputs(compute_experiment(c, 1u), base / "again");
  for (const char* name : {"spectrum.csv", "backward_spectrum.csv", "oseledets.csv", "flags.csv"}) {
    const std::string one = slurp(base / "one" / name);
    CHECK(!one.empty());
    CHECK(one == slurp(base / "three" / name));
    CHECK(one == slurp(base / "again" / name));
  }
  const std::string spectrum = slurp(base / "one" / "spectrum.csv");
  CHECK(spectrum.rfind("path_index,Lambda_1,Lambda_2,logdet_over_T\n0,", 0) == 0);
  CHECK(spectrum.find('\r') == std::string::npos);
  CHECK_THAT(slurp(base / "one" / "report.txt"), ContainsSubstring("[criteria]"));
  std::filesystem::remove_all(base);
}

TEST_CASE("path errors are quarantined and fail the run beyond 1%") {
  auto c = parse_config("experiment = example_2d_exact\nhorizon = 20\n");
  c.n_paths = 200;
  const ExperimentReport clean = compute_experiment(c);
  REQUIRE(clean.passed());
  auto with_errors = [&](std::size_t k) {
    ExperimentReport r = clean;
    r.criteria.clear();
    for (std::size_t i = 0; i < k; ++i) {
      r.paths[i * 7 % r.paths.size()] = PathOutcome{};
      r.paths[i * 7 % r.paths.size()].error = "numerical: injected";
    }
    detail::evaluate_criteria(r);
    return r;
  };
  const auto two = with_errors(2);
  CHECK(two.failed_paths() == 2);
  CHECK(find(two, "quarantine")->status == CriterionResult::Status::pass);
  CHECK(two.passed());
  const auto three = with_errors(3);
  CHECK(find(three, "quarantine")->status == CriterionResult::Status::fail);
  CHECK_FALSE(three.passed());
  const auto all = with_errors(200);
  CHECK(all.criteria.size() == 1);
  CHECK_FALSE(all.passed());
}

TEST_CASE("merged exponents are reported rather than quarantined") {
  auto c = parse_config(kAtomConfig);
  c.group_tol = 100.0;
  const auto r = compute_experiment(c);
  CHECK(r.failed_paths() == 0);
  for (const auto& p : r.paths) CHECK(p.multiplicities == std::vector<int>{2});
}

TEST_CASE("scalar experiments compare with the closed form") {
  const auto r = compute_experiment(parse_config(
      "experiment = doleans_1d\nmeasure.kind = atom\nmeasure.atoms = 0.2:3, 0.9:0.5\nmeasure.drift = 0.1\n"
      "horizon = 50\nn_paths = 4\n"));
  const double target = 0.1 + 3.0 * (std::log(1.2) - 0.2) + 0.5 * std::log(1.9);
  CHECK_THAT(r.targets[0], WithinAbs(target, 1e-12));
  REQUIRE(find(r, "AC11") != nullptr);
  CHECK(find(r, "AC11")->status == CriterionResult::Status::pass);
}

TEST_CASE("flag convergence experiment fits the decay rate") {
  const auto r = compute_experiment(parse_config(
      "experiment = flag_convergence\nmeasure.kind = atom\nmeasure.atoms = 0.2:3\nhorizon = 60\n"
      "flag.t_min = 10\nflag.t_max = 60\nflag.points = 6\nn_paths = 3\n"));
  for (const auto& p : r.paths) {
    REQUIRE(p.flag_slope.has_value());
    CHECK(*p.flag_slope < -5.5);
    CHECK(p.flags.size() == 6);
  }
  CHECK(find(r, "AC10")->status == CriterionResult::Status::pass);
}

TEST_CASE("selftest passes") {
  std::ostringstream out;
  CHECK(selftest(out));
  CHECK(out.str().find("FAIL") == std::string::npos);
}
