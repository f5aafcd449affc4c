// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_ESTIMATION_HPP
#define UDET_ESTIMATION_HPP

#include <utility>
#include <vector>

#include "udet/model.hpp"

namespace udet {

/// Binary sensor usage weights and per-sensor standard deviations.
struct SensorLayout {
  Eigen::VectorXi omega;  // entries in {0,1}
  Vec sigma;              // sigma_k > 0

  int n_s() const { return static_cast<int>(sigma.size()); }
  int active_count() const { return omega.sum(); }
  void validate() const;
};

/// One (series, input) cell of the measurement tensor.
using Cell = std::pair<int, int>;

/// Ordered subset of tensor cells an estimation runs on. Calibration and
/// validation splits are CellSets; the default is every cell in canonical
/// (series-major, input-minor) order.
struct CellSet {
  std::vector<Cell> cells;

  static CellSet all(int n_m, int n_q);
  int size() const { return static_cast<int>(cells.size()); }
  bool empty() const { return cells.empty(); }
  /// Distinct input indices, ascending.
  std::vector<int> input_indices() const;
};

/// Measurements z indexed (series i, input j, sensor k), sensor fastest.
/// `realized` optionally carries the actually applied scalar load per cell
/// (used by the setpoint correction).
struct MeasurementTensor {
  int n_m = 0, n_q = 0, n_s = 0;
  std::vector<double> z;
  InputSchedule schedule;
  Mat realized;  // n_m x n_q, or 0x0 when not tracked

  double& at(int i, int j, int k) { return z[(static_cast<size_t>(i) * n_q + j) * n_s + k]; }
  double at(int i, int j, int k) const { return z[(static_cast<size_t>(i) * n_q + j) * n_s + k]; }
  void validate() const;
};

/// Result of a parameter identification.
struct Estimate {
  Vec p;
  Mat C;  // empty until covariance assembly
  double objective = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool covariance_fallback = false;  // H inverted via clipped pseudo-inverse
};

struct FitOptions {
  double tol_grad = 1e-8;  // relative: ||grad|| <= tol_grad * max(1, f)
  int max_iterations = 200;
  SolveOptions state;
  bool parallel = true;
};

/// r = Sigma^{-1} (z - h(y(p), p, q)) over the given cells, sensor fastest.
/// Unused sensors are still included; masking happens through Omega.
Vec residuals(const StateEquationModel& model, const SensorLayout& layout,
              const MeasurementTensor& tensor, const Vec& p,
              const CellSet& cells, const FitOptions& opts = {});

/// f = 1/2 r^T Omega r.
double objective(const StateEquationModel& model, const SensorLayout& layout,
                 const MeasurementTensor& tensor, const Vec& p,
                 const CellSet& cells, const FitOptions& opts = {});

/// Row weights omega_k and sigma_k replicated over the cells (sensor fastest).
Vec omega_diagonal(const SensorLayout& layout, int n_cells);
Vec sigma_diagonal(const SensorLayout& layout, int n_cells);

/// Weighted least-squares fit by Gauss-Newton with Levenberg-style damping.
/// The returned Estimate has no covariance yet.
Estimate identify_parameters(const StateEquationModel& model,
                             const SensorLayout& layout,
                             const MeasurementTensor& tensor, const Vec& p0,
                             const CellSet& cells, const FitOptions& opts = {});

/// J = dr/dp over the given cells; rows replicate across series.
Mat assemble_jacobian(const StateEquationModel& model, const SensorLayout& layout,
                      const MeasurementTensor& tensor, const Vec& p,
                      const CellSet& cells, const FitOptions& opts = {});

/// S = sum_i r_i Omega_ii d2r_i/dp2, the exact second-order covariance term.
Mat assemble_second_order(const StateEquationModel& model,
                          const SensorLayout& layout,
                          const MeasurementTensor& tensor, const Vec& p,
                          const CellSet& cells, const FitOptions& opts = {});

struct CovarianceOptions {
  double condition_cap = 1e12;
  bool allow_fallback = true;  // eigenvalue-clipped pseudo-inverse on failure
};

/// C = H^{-1} J^T Omega^2 J H^{-T} with H = J^T Omega J + S.
/// Throws SingularH when H is beyond the condition cap and fallback is off;
/// otherwise clips eigenvalues and sets *fallback.
Mat covariance(const Mat& J, const Mat& S, const SensorLayout& layout,
               const CovarianceOptions& opts = {}, bool* fallback = nullptr);

/// dp/dz = -H^{-1} J^T Omega Sigma^{-1}, the linearized solution operator.
Mat sensitivity_dz_p(const Mat& J, const Mat& S, const SensorLayout& layout,
                     const CovarianceOptions& opts = {});

/// identify_parameters followed by J, S and covariance assembly.
Estimate estimate_with_covariance(const StateEquationModel& model,
                                  const SensorLayout& layout,
                                  const MeasurementTensor& tensor, const Vec& p0,
                                  const CellSet& cells, const FitOptions& opts = {},
                                  const CovarianceOptions& cov_opts = {});

}  // namespace udet

#endif  // UDET_ESTIMATION_HPP
