// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_STATS_HPP
#define UDET_STATS_HPP

#include <cstdint>
#include <span>
#include <string>

#include "udet/estimation.hpp"

namespace udet {

// ---------------------------------------------------------------------------
// Chi-squared distribution (regularized incomplete gamma).

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

/// CDF of the chi-squared distribution with dof degrees of freedom.
double chi2_cdf(double x, int dof);

/// gamma^2(alpha) = chi^2_dof(1 - alpha): CDF(result) = 1 - alpha to 1e-10.
double chi2_quantile(int dof, double alpha);

// ---------------------------------------------------------------------------
// Confidence ellipsoids.

/// Squared Mahalanobis distance (p - center)^T C^{-1} (p - center).
/// Near-singular C is handled in the eigenbasis with eigenvalues clipped at
/// 1e-14 * lambda_max; *clipped is set when that happens.
double mahalanobis_sq(const Vec& p, const Vec& center, const Mat& C,
                      bool* clipped = nullptr);

/// Membership in the confidence ellipsoid G(alpha, center, C).
bool ellipsoid_contains(const Vec& p, const Vec& center, const Mat& C, double alpha);

/// Smallest test level at which p_val lies on the ellipsoid boundary:
/// 1 - CDF_{chi2_np}(d^2).
double alpha_min(const Vec& p_val, const Vec& p_cal, const Mat& C_cal,
                 bool* clipped = nullptr);

// ---------------------------------------------------------------------------
// Shapiro-Wilk normality test (Royston's AS R94 approximation).

struct ShapiroWilkResult {
  double w = 0.0;
  double p_value = 0.0;
};

/// W statistic and p-value for an uncensored sample, 3 <= n <= 5000.
ShapiroWilkResult shapiro_wilk(std::span<const double> sample);

/// Paired differences (z_2 - z_1, z_4 - z_3, ...) for sensor k across all
/// inputs; length (n_M/2) * n_q.
std::vector<double> build_error_sample(const MeasurementTensor& tensor, int sensor);

/// Root-sum-of-squares combination of repetition and internal error.
double combine_sigma(double sigma_repetition, double sigma_internal);

// ---------------------------------------------------------------------------
// Calibration/validation splitting.

struct SplitScheme {
  enum class Kind {
    AlternatingWithinPhase,
    LoadingVsUnloading,
    AlternatingAcrossAll,
    RandomMonteCarlo,
  };
  Kind kind = Kind::AlternatingAcrossAll;
  Phase phase = Phase::Loading;  // for AlternatingWithinPhase
  std::uint64_t seed = 0;        // for RandomMonteCarlo
  double ratio = 0.5;            // calibration share for RandomMonteCarlo
  std::vector<int> excluded_inputs;

  std::string name() const;
};

struct Split {
  CellSet calibration;
  CellSet validation;
};

/// Partitions the (series x input) cells per the scheme. Deterministic
/// schemes split input indices (all series on both sides); the random
/// scheme shuffles cells with the given seed.
Split split(const InputSchedule& schedule, const SplitScheme& scheme, int series_count);

// ---------------------------------------------------------------------------
// Uncertainty detection driver.

struct ScenarioResult {
  std::string scenario;
  Vec p_cal;
  Mat C_cal;
  Vec p_val;
  double mahalanobis_sq = 0.0;
  double alpha_min = 0.0;
  bool rejected = false;
  bool covariance_clipped = false;
};

struct NormalityScreenEntry {
  int sensor = 0;
  double w = 0.0;
  double p_value = 0.0;
  double sigma_hat = 0.0;
};

struct UncertaintyReport {
  std::string model_id;
  double tol = 0.0;
  int n_tests = 0;
  double threshold = 0.0;  // tol / n_tests
  std::vector<ScenarioResult> scenarios;
  int verdict = 0;  // 1 = reject, 0 = accept
  std::vector<NormalityScreenEntry> screen;
  bool screen_waived = false;
};

struct Algorithm1Options {
  enum class ScreenPolicy { Abort, WarnAndContinue, Skip };
  ScreenPolicy screen_policy = ScreenPolicy::Abort;
  double screen_level = 0.05;
  int n_tests = 0;  // Bonferroni divisor; 0 means schemes.size()
  bool evaluate_all_scenarios = true;  // richer report, same verdict
  FitOptions fit;
  CovarianceOptions cov;
};

/// Runs the detection loop: per scheme, identify on calibration, assemble
/// covariance, identify on validation, compute alpha_min and compare with
/// TOL / n_tests (Bonferroni).
UncertaintyReport run_algorithm1(const StateEquationModel& model,
                                 const SensorLayout& layout,
                                 const MeasurementTensor& tensor,
                                 const std::vector<SplitScheme>& schemes,
                                 double tol, const Vec& p0,
                                 const Algorithm1Options& opts = {});

}  // namespace udet

#endif  // UDET_STATS_HPP
