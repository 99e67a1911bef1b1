#pragma once

#include <cmath>

#include "levy_met/levy_measure.hpp"
#include "levy_met/linalg.hpp"

namespace levy_met {

/// Closed-form data of the diagonal example dX^1 = 2 X^1 dt + X^1 dL^1, dX^2 = -4 X^2 dt + X^2 dL^2.
struct ExampleGroundTruth {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  /// e^{lambda_i}: eigenvalues of the limit matrix diag(M1, M2).
  double m1 = 0.0;
  double m2 = 0.0;
  Vector u1;
  Vector u2;
  /// int_{|u|<=delta} (log(1+u) - u) nu(du).
  double compensator = 0.0;

  Matrix limit_matrix() const {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = m1;
    m(1, 1) = m2;
    return m;
  }
  /// Forward flag blocks U_1, U_2 double as the Oseledets spaces E_1, E_2.
  const Vector& oseledets(int i) const { return i == 0 ? u1 : u2; }
};

inline ExampleGroundTruth example_ground_truth(const LevyMeasure& measure, double delta,
                                               const QuadratureOptions& quad = {}) {
  ExampleGroundTruth g;
  g.compensator = log_compensator_integral(measure, delta, quad);
  g.lambda1 = 2.0 + g.compensator;
  g.lambda2 = -4.0 + g.compensator;
  g.m1 = std::exp(g.lambda1);
  g.m2 = std::exp(g.lambda2);
  g.u1 = Vector::Unit(2, 0);
  g.u2 = Vector::Unit(2, 1);
  return g;
}

}  // namespace levy_met
