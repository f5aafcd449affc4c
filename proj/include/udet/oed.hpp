// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_OED_HPP
#define UDET_OED_HPP

#include "udet/estimation.hpp"

namespace udet {

enum class Criterion { A, D, E };

/// Bounds and forcing sets for the binary sensor-selection problem.
struct CardinalityConstraint {
  int min_sensors = 0;  // raised to n_p internally
  int max_sensors = 0;
  std::vector<int> forced_on;
  std::vector<int> forced_off;

  void validate(int n_s) const;
  bool admits(const Eigen::VectorXi& omega) const;
};

/// A sensor choice with all three criterion values of its covariance.
struct DesignEvaluation {
  Eigen::VectorXi omega;
  double psi_a = 0.0, psi_d = 0.0, psi_e = 0.0;
  bool feasible = false;
  Estimate estimate;
  std::vector<double> elimination_trace;  // greedy diagnostics

  double criterion(Criterion kind) const;
};

/// trace / det / largest eigenvalue of a symmetric PSD matrix.
/// The determinant is computed as exp(sum log eigenvalues).
double criterion_value(const Mat& C, Criterion kind);

/// Re-identifies parameters under omega and evaluates all criteria.
/// Infeasible designs (too few sensors, rank check failure) are returned
/// with feasible == false and no criterion values.
DesignEvaluation evaluate_design(const StateEquationModel& model,
                                 const SensorLayout& layout,
                                 const MeasurementTensor& tensor,
                                 const Eigen::VectorXi& omega, const Vec& p0,
                                 const CellSet& cells, const FitOptions& opts = {});

/// Exhaustive enumeration over all admissible omega (n_S <= 24).
/// Ties break toward fewer sensors, then lexicographically smallest omega.
DesignEvaluation exhaustive_select(const StateEquationModel& model,
                                   const SensorLayout& layout,
                                   const MeasurementTensor& tensor,
                                   const CardinalityConstraint& constraint,
                                   Criterion kind, const Vec& p0,
                                   const CellSet& cells, const FitOptions& opts = {});

/// Backward elimination from the all-on design: repeatedly drops the sensor
/// whose removal increases the criterion the least.
DesignEvaluation greedy_select(const StateEquationModel& model,
                               const SensorLayout& layout,
                               const MeasurementTensor& tensor,
                               const CardinalityConstraint& constraint,
                               Criterion kind, const Vec& p0,
                               const CellSet& cells, const FitOptions& opts = {});

}  // namespace udet

#endif  // UDET_OED_HPP
