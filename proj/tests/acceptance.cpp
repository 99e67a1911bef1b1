// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is 0 only when all criteria pass.

#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "levy_met/levy_met.hpp"

using namespace levy_met;

namespace {

struct Line {
  std::string id;
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  std::ostringstream o;
  o.precision(6);
  o << x;
  return o.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Stats {
  double mean = 0.0;
  double se = 0.0;
};

Stats stats(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()))};
}

bool within(const Stats& s, double target, double factor) { return std::abs(s.mean - target) <= factor * s.se; }

std::vector<const PathOutcome*> good_paths(const ExperimentReport& r) {
  std::vector<const PathOutcome*> out;
  for (const auto& p : r.paths)
    if (!p.error) out.push_back(&p);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kAtom =
    "experiment = example_2d_exact\nmeasure.kind = atom\nmeasure.atoms = 0.2:3\ndelta = 0.5\nhorizon = 200\n"
    "dt = 0.01\nn_paths = 100\nmaster_seed = 20240601\n";

// Closed-form targets for the atom measure, written out independently of the library.
const double kJumpTerm = 3.0 * (std::log(1.2) - 0.2);
const double kLambda1 = 2.0 + kJumpTerm;
const double kLambda2 = -4.0 + kJumpTerm;

Line ac1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = compute_experiment(parse_config("experiment = example_2d_exact\nhorizon = 200\nn_paths = 1\n"), 1u);
  const double secs = seconds_since(t0);
  if (r.failed_paths()) return {"AC1", false, "path errored: " + *r.paths[0].error};
  const double err = std::max(std::abs(r.paths[0].lambda[0] - 2.0), std::abs(r.paths[0].lambda[1] + 4.0));
  return {"AC1", err <= 1e-8 && secs < 1.0, "max |Lambda - (2, -4)| = " + num(err) + ", runtime " + num(secs) + " s"};
}

Line ac2(const ExperimentReport& r, double secs) {
  const auto ok = good_paths(r);
  if (ok.size() < 2) return {"AC2", false, "fewer than 2 paths succeeded"};
  std::vector<double> l1, l2;
  for (const auto* p : ok) {
    l1.push_back(p->lambda[0]);
    l2.push_back(p->lambda[1]);
  }
  const Stats s1 = stats(l1), s2 = stats(l2);
  const bool pass = within(s1, kLambda1, 3.0) && within(s2, kLambda2, 3.0) && std::abs(s1.mean - kLambda1) <= 0.05 &&
                    std::abs(s2.mean - kLambda2) <= 0.05 && secs < 120.0 && r.failed_paths() * 100 <= r.paths.size();
  return {"AC2", pass,
          "Lambda_1 " + num(s1.mean) + " +- " + num(s1.se) + " vs " + num(kLambda1) + ", Lambda_2 " + num(s2.mean) +
              " +- " + num(s2.se) + " vs " + num(kLambda2) + ", runtime " + num(secs) + " s"};
}

Line ac3(const ExperimentReport& atom) {
  struct Case {
    std::string name;
    std::string measure;
    int paths;
  };
  const std::vector<Case> cases{
      {"atom 0.2:3", "", 0},
      {"atoms -0.3:2, 0.4:1, 0.7:0.5", "measure.kind = atom\nmeasure.atoms = -0.3:2, 0.4:1, 0.7:0.5\n", 100},
      {"power law alpha 1.5", "measure.kind = power_law\nmeasure.scale = 1\nmeasure.alpha = 1.5\nmeasure.support = 0.5\n", 30},
      {"power law alpha 0.8", "measure.kind = power_law\nmeasure.scale = 0.4\nmeasure.alpha = 0.8\nmeasure.support = 0.9\n", 30},
  };
  bool pass = true;
  std::string text;
  for (const auto& c : cases) {
    ExperimentReport r;
    if (c.paths == 0) {
      r = atom;
    } else {
      r = compute_experiment(parse_config("experiment = backward_spectrum\n" + c.measure +
                                          "horizon = 200\nn_paths = " + std::to_string(c.paths) + "\nmaster_seed = 7\n"));
    }
    std::vector<double> gap;
    for (const auto* p : good_paths(r)) gap.push_back(p->lambda[0] - p->lambda[1]);
    if (gap.size() < 2) {
      pass = false;
      text += c.name + ": no ensemble; ";
      continue;
    }
    const Stats s = stats(gap);
    pass = pass && within(s, 6.0, 3.0);
    text += c.name + ": " + num(s.mean) + " +- " + num(s.se) + "; ";
  }
  return {"AC3", pass, text + "target 6 within 3 SE"};
}

Line ac4(const ExperimentReport& r) {
  double worst = 0.0;
  const auto ok = good_paths(r);
  for (const auto* p : ok) {
    if (p->oseledets_angles.size() != 2) return {"AC4", false, "Oseledets splitting missing on a path"};
    for (double a : p->oseledets_angles) worst = std::max(worst, a);
  }
  return {"AC4", !ok.empty() && worst <= 1e-3, "max principal angle to e_1, e_2 = " + num(worst) + " (tol 1e-3)"};
}

Line ac5(const ExperimentReport& r) {
  const auto ok = good_paths(r);
  bool pass = ok.size() >= 2;
  std::string text;
  for (std::size_t k = 0; pass && k < 2; ++k) {
    std::vector<double> sums;
    for (const auto* p : ok) sums.push_back(p->backward[k] + p->lambda[1 - k]);
    const Stats s = stats(sums);
    pass = pass && within(s, 0.0, 3.0);
    text += "lambda-_" + std::to_string(k + 1) + " + lambda_" + std::to_string(2 - k) + " = " + num(s.mean) + " +- " +
            num(s.se) + "; ";
  }
  return {"AC5", pass, text + "target 0 within 3 SE"};
}

Line ac6(const ExperimentReport& atom) {
  double worst = 0.0;
  for (const auto* p : good_paths(atom)) worst = std::max(worst, p->residual_max.value_or(INFINITY));
  const bool exact_ok = worst <= 1e-9 && atom.config.cocycle_pairs >= 100;

  const auto euler = compute_experiment(parse_config(
      "experiment = example_2d_euler\nmeasure.kind = atom\nmeasure.atoms = 0.2:3\nhorizon = 50\ndt_int = 0.01\n"
      "euler.levels = 5\ncocycle.pairs = 20\nn_paths = 3\nmaster_seed = 20240601\n"));
  const auto ok = good_paths(euler);
  std::vector<double> level(5, 0.0);
  for (const auto* p : ok)
    for (std::size_t k = 0; k < level.size(); ++k) level[k] += p->euler_residual[k] / static_cast<double>(ok.size());
  bool ladder_ok = !ok.empty();
  std::string ratios;
  for (std::size_t k = 0; k + 1 < level.size(); ++k) {
    const double ratio = level[k] / level[k + 1];
    ladder_ok = ladder_ok && ratio >= 1.7 && ratio <= 2.3;
    ratios += (k ? ", " : "") + num(ratio);
  }
  return {"AC6", exact_ok && ladder_ok,
          "exact residual max " + num(worst) + " (tol 1e-9); euler residual ratios " + ratios + " (need [1.7, 2.3])"};
}

Line ac7() {
  std::mt19937_64 gen(424242);
  std::normal_distribution<double> a_dist(0.0, 0.5), s_dist(0.0, 0.3);
  std::uniform_real_distribution<double> loc(-0.8, 1.0), rate(0.5, 3.0);
  int agree = 0, tried = 0;
  double worst = 0.0;
  std::string failures;
  for (int inst = 0; inst < 50; ++inst) {
    LinearSystem sys;
    sys.a = Matrix::NullaryExpr(2, 2, [&] { return a_dist(gen); });
    const int q = 1 + inst % 2;
    for (int i = 0; i < q; ++i) {
      sys.sigmas.push_back(Matrix::NullaryExpr(2, 2, [&] { return s_dist(gen); }));
      std::vector<Atom> atoms;
      for (int j = 0; j < 2; ++j) {
        double u = loc(gen);
        if (std::abs(u) < 0.05) u = 0.05;
        atoms.push_back({u, rate(gen)});
      }
      sys.drivers.push_back(LevyTriplet::scalar(0.0, 0.0, LevyMeasure::atoms(atoms), 0.5));
    }
    const Vector x = Vector::NullaryExpr(2, [&] { return a_dist(gen); }).normalized();
    ++tried;
    try {
      const auto paths = sample_driver_paths(sys, 1.0, 0.01, 99, static_cast<std::uint64_t>(inst));
      PicardOptions popts;
      popts.dt = 1e-3;
      popts.psi_scheme = BetweenJumpScheme::expm;
      const auto picard = picard_solve(sys, paths, 1.0, 12, x, popts);
      const auto euler = euler_propagate(sys, paths, 0.0, 1.0, 0.01);
      const double diff = (picard.value - euler.value * x).norm();
      const double ratio = diff / euler.error_estimate;
      worst = std::max(worst, ratio);
      if (diff <= 5.0 * euler.error_estimate) ++agree;
      else failures += " #" + std::to_string(inst) + " (" + num(ratio) + ")";
    } catch (const std::exception& e) {
      failures += " #" + std::to_string(inst) + " error: " + e.what();
    }
  }
  return {"AC7", agree == tried,
          std::to_string(agree) + "/" + std::to_string(tried) +
              " instances with |Picard - Euler| <= 5 * error estimate; worst ratio " + num(worst) +
              (failures.empty() ? "" : "; failing:" + failures)};
}

// Brute-force k-th compound matrix: all k x k minors.
Matrix compound(const Matrix& m, int k) {
  const int d = static_cast<int>(m.rows());
  std::vector<std::vector<int>> subsets;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(cur.size()) == k) {
      subsets.push_back(cur);
      return;
    }
    for (int i = start; i < d; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  const auto n = static_cast<Eigen::Index>(subsets.size());
  Matrix c(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index s = 0; s < n; ++s) {
      Matrix sub(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) sub(i, j) = m(subsets[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)],
                                                  subsets[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]);
      c(r, s) = sub.determinant();
    }
  return c;
}

Line ac8() {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_product = 0.0, worst_compound = 0.0;
  int compound_checks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + trial % 4;
    const Matrix m = Matrix::NullaryExpr(d, d, [&] { return g(gen); });
    const Vector sv = Eigen::BDCSVD<Matrix>(m).singularValues();
    for (int k = 1; k <= d; ++k) {
      double product = 1.0;
      for (int i = 0; i < k; ++i) product *= sv(i);
      const double value = exterior_power_norm(m, k);
      worst_product = std::max(worst_product, std::abs(value - product) / product);
      if (d == 3) {
        const double brute = Eigen::BDCSVD<Matrix>(compound(m, k)).singularValues()(0);
        worst_compound = std::max(worst_compound, std::abs(value - brute) / brute);
        ++compound_checks;
      }
    }
  }
  return {"AC8", worst_product <= 1e-10 && worst_compound <= 1e-10,
          "max relative error vs singular value product " + num(worst_product) + ", vs compound matrices (d = 3, " +
              std::to_string(compound_checks) + " checks) " + num(worst_compound) + " (tol 1e-10)"};
}

Matrix random_orthogonal(int d, std::mt19937_64& gen) {
  std::normal_distribution<double> g(0.0, 1.0);
  return positive_qr(Matrix::NullaryExpr(d, d, [&] { return g(gen); })).q;
}

Matrix small_rotation(int d, double eps, std::mt19937_64& gen) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix s = Matrix::NullaryExpr(d, d, [&] { return g(gen); });
  s = eps * (s - s.transpose()).eval();
  return s.exp();
}

Line ac9() {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> extra(0.0, 2.0);
  int zero_bad = 0, sym_bad = 0, neg_bad = 0, violations = 0;
  double worst_excess = 0.0;
  const std::vector<std::vector<int>> types{{1, 1}, {1, 1, 1}, {2, 1}, {1, 2}, {1, 2, 1}, {1, 1, 1, 1}, {2, 2}};
  for (int trial = 0; trial < 10000; ++trial) {
    const auto& dims = types[static_cast<std::size_t>(trial) % types.size()];
    int d = 0;
    for (int k : dims) d += k;
    FlagMetricParams params;
    params.h = 1.0;
    double lambda = 0.0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      params.lambdas.push_back(lambda);
      lambda -= static_cast<double>(d - 1) + extra(gen);
    }
    Matrix b1 = random_orthogonal(d, gen);
    Matrix b2, b3;
    if (trial % 2 == 0) {
      b2 = random_orthogonal(d, gen);
      b3 = random_orthogonal(d, gen);
    } else {
      b2 = small_rotation(d, 1e-3, gen) * b1;
      b3 = small_rotation(d, 1e-3, gen) * b2;
    }
    const Flag f(b1, dims), g(b2, dims), h(b3, dims);
    if (flag_distance(f, f, params) != 0.0) ++zero_bad;
    const double fg = flag_distance(f, g, params), gf = flag_distance(g, f, params);
    const double gh = flag_distance(g, h, params), fh = flag_distance(f, h, params);
    if (fg != gf) ++sym_bad;
    if (fg < 0.0 || gh < 0.0 || fh < 0.0) ++neg_bad;
    const double excess = fh - (fg + gh);
    if (excess > 1e-12) {
      ++violations;
      worst_excess = std::max(worst_excess, excess);
    }
  }
  return {"AC9", zero_bad == 0 && sym_bad == 0 && neg_bad == 0,
          "10000 triples: nonzero self-distance " + std::to_string(zero_bad) + ", asymmetric " + std::to_string(sym_bad) +
              ", negative " + std::to_string(neg_bad) + "; triangle violations beyond 1e-12: " +
              std::to_string(violations) + " (worst excess " + num(worst_excess) + ", reported only)"};
}

Line ac10() {
  const auto r = compute_experiment(parse_config(
      "experiment = flag_convergence\nmeasure.kind = atom\nmeasure.atoms = 0.2:3\ndelta = 0.5\nhorizon = 100\n"
      "flag.t_min = 10\nflag.t_max = 100\nflag.points = 10\nn_paths = 100\nmaster_seed = 20240601\n"));
  const auto ok = good_paths(r);
  double worst = -INFINITY;
  std::vector<double> slopes;
  for (const auto* p : ok) {
    const double s = p->flag_slope.value_or(INFINITY);
    slopes.push_back(s);
    worst = std::max(worst, s);
  }
  const bool pass = !ok.empty() && worst <= -6.0 + 0.5 && r.failed_paths() * 100 <= r.paths.size();
  return {"AC10", pass,
          "slope of log distance over t in [10, 100]: mean " + num(stats(slopes).mean) + ", max " + num(worst) +
              " (need <= -5.5 on every path)"};
}

Line ac11() {
  const auto nu = LevyMeasure::atoms({{0.2, 3.0}});
  const std::vector<double> c{2.0, -4.0};
  double worst = 0.0;
  for (std::uint64_t path = 0; path < 20; ++path) {
    std::vector<LevyTriplet> drivers;
    std::vector<TwoSidedPath> paths;
    for (std::size_t i = 0; i < 2; ++i) {
      drivers.push_back(LevyTriplet::scalar(c[i], 0.0, nu, 0.5));
      paths.push_back(sample_two_sided(drivers.back(), 50.0, 0.01, 11, path, i));
    }
    const ExactDiagonal2d exact(paths, drivers, Vector::Zero(2));
    for (std::size_t i = 0; i < 2; ++i) {
      const StochasticExponential1d se(paths[i]);
      for (double t = -10.0; t <= 10.0; t += 0.37) {
        const double want = exact.at(t)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
        worst = std::max(worst, std::abs(se.at(t)(0, 0) - want) / std::abs(want));
      }
    }
  }
  return {"AC11", worst <= 1e-10, "max relative difference over 20 paths, both coordinates, t in [-10, 10]: " + num(worst)};
}

Line ac12(const ExperimentConfig& config) {
  const auto base = std::filesystem::temp_directory_path() / "levy_met_acceptance";
  std::filesystem::remove_all(base);
  write_outputs(compute_experiment(config, 1u), base / "first");
  write_outputs(compute_experiment(config, 1u), base / "second");
  write_outputs(compute_experiment(config, 4u), base / "four_workers");
  bool pass = true;
  std::string text;
  for (const char* name : {"spectrum.csv", "backward_spectrum.csv", "oseledets.csv", "flags.csv"}) {
    const std::string a = slurp(base / "first" / name);
    const bool same = !a.empty() && a == slurp(base / "second" / name) && a == slurp(base / "four_workers" / name);
    pass = pass && same;
    text += std::string(name) + (same ? " identical; " : " DIFFERS; ");
  }
  std::filesystem::remove_all(base);
  return {"AC12", pass, text + "runs: 1 worker twice, 4 workers once"};
}

}  // namespace

int main() {
  std::vector<Line> lines;
  const auto run = [&](const std::function<Line()>& f, const std::string& id) {
    try {
      lines.push_back(f());
    } catch (const std::exception& e) {
      lines.push_back({id, false, std::string("error: ") + e.what()});
    }
    const Line& l = lines.back();
    std::cout << l.id << ' ' << (l.pass ? "PASS" : "FAIL") << ' ' << l.detail << std::endl;
  };

  const ExperimentConfig atom_config = parse_config(kAtom);
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentReport atom = compute_experiment(atom_config);
  const double atom_secs = seconds_since(t0);

  run(ac1, "AC1");
  run([&] { return ac2(atom, atom_secs); }, "AC2");
  run([&] { return ac3(atom); }, "AC3");
  run([&] { return ac4(atom); }, "AC4");
  run([&] { return ac5(atom); }, "AC5");
  run([&] { return ac6(atom); }, "AC6");
  run(ac7, "AC7");
  run(ac8, "AC8");
  run(ac9, "AC9");
  run(ac10, "AC10");
  run(ac11, "AC11");
  run([&] { return ac12(atom_config); }, "AC12");

  const auto failed = std::count_if(lines.begin(), lines.end(), [](const Line& l) { return !l.pass; });
  std::cout << (lines.size() - static_cast<std::size_t>(failed)) << " of " << lines.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
