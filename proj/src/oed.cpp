// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include "udet/oed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace udet {

void CardinalityConstraint::validate(int n_s) const {
  if (min_sensors > max_sensors)
    throw ConfigError("CardinalityConstraint: min_sensors > max_sensors");
  if (max_sensors > n_s)
    throw ConfigError("CardinalityConstraint: max_sensors exceeds sensor count");
  for (int k : forced_on)
    if (std::find(forced_off.begin(), forced_off.end(), k) != forced_off.end())
      throw ConfigError("CardinalityConstraint: forced sets overlap");
}

bool CardinalityConstraint::admits(const Eigen::VectorXi& omega) const {
  const int count = omega.sum();
  if (count < min_sensors || count > max_sensors) return false;
  for (int k : forced_on)
    if (omega[k] == 0) return false;
  for (int k : forced_off)
    if (omega[k] == 1) return false;
  return true;
}

double DesignEvaluation::criterion(Criterion kind) const {
  switch (kind) {
    case Criterion::A: return psi_a;
    case Criterion::D: return psi_d;
    default: return psi_e;
  }
}

double criterion_value(const Mat& C, Criterion kind) {
  if (!C.allFinite()) throw NonFiniteC("criterion_value: non-finite covariance");
  switch (kind) {
    case Criterion::A:
      return C.trace();
    case Criterion::D: {
      Eigen::SelfAdjointEigenSolver<Mat> es(C, Eigen::EigenvaluesOnly);
      double logdet = 0.0;
      for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double l = es.eigenvalues()[i];
        if (l <= 0.0) return 0.0;
        logdet += std::log(l);
      }
      return std::exp(logdet);
    }
    default: {
      Eigen::SelfAdjointEigenSolver<Mat> es(C, Eigen::EigenvaluesOnly);
      return es.eigenvalues().maxCoeff();
    }
  }
}

DesignEvaluation evaluate_design(const StateEquationModel& model,
                                 const SensorLayout& layout,
                                 const MeasurementTensor& tensor,
                                 const Eigen::VectorXi& omega, const Vec& p0,
                                 const CellSet& cells, const FitOptions& opts) {
  DesignEvaluation ev;
  ev.omega = omega;
  if (omega.size() != layout.n_s())
    throw DimensionMismatch("evaluate_design: omega length != sensor count");
  if (omega.sum() < model.n_p) return ev;  // Assumption 3 guard

  SensorLayout masked = layout;
  masked.omega = omega;
  try {
    ev.estimate = identify_parameters(model, masked, tensor, p0, cells, opts);
  } catch (const RankDeficient&) {
    return ev;
  }

  const Mat J = assemble_jacobian(model, masked, tensor, ev.estimate.p, cells, opts);
  const Vec w = omega_diagonal(masked, cells.size());
  const Mat WJ = w.asDiagonal() * J;
  Eigen::JacobiSVD<Mat> svd(WJ);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) < 1e-10 * sv(0)) return ev;  // rank check

  const Mat S = assemble_second_order(model, masked, tensor, ev.estimate.p, cells, opts);
  bool fb = false;
  ev.estimate.C = covariance(J, S, masked, {}, &fb);
  ev.estimate.covariance_fallback = fb;
  ev.psi_a = criterion_value(ev.estimate.C, Criterion::A);
  ev.psi_d = criterion_value(ev.estimate.C, Criterion::D);
  ev.psi_e = criterion_value(ev.estimate.C, Criterion::E);
  ev.feasible = true;
  return ev;
}

namespace {

// Total order for selector ties: criterion, then sensor count, then
// lexicographically smallest omega.
bool better(const DesignEvaluation& a, const DesignEvaluation& b, Criterion kind) {
  if (!b.feasible) return a.feasible;
  if (!a.feasible) return false;
  const double ca = a.criterion(kind), cb = b.criterion(kind);
  if (ca != cb) return ca < cb;
  const int na = a.omega.sum(), nb = b.omega.sum();
  if (na != nb) return na < nb;
  for (int k = 0; k < a.omega.size(); ++k)
    if (a.omega[k] != b.omega[k]) return a.omega[k] < b.omega[k];
  return false;
}

}  // namespace

DesignEvaluation exhaustive_select(const StateEquationModel& model,
                                   const SensorLayout& layout,
                                   const MeasurementTensor& tensor,
                                   const CardinalityConstraint& constraint,
                                   Criterion kind, const Vec& p0,
                                   const CellSet& cells, const FitOptions& opts) {
  const int n_s = layout.n_s();
  if (n_s > 24) throw ConfigError("exhaustive_select: n_S > 24, use greedy_select");
  CardinalityConstraint cst = constraint;
  cst.min_sensors = std::max(cst.min_sensors, model.n_p);
  cst.validate(n_s);

  std::vector<Eigen::VectorXi> candidates;
  for (unsigned mask = 0; mask < (1u << n_s); ++mask) {
    Eigen::VectorXi omega(n_s);
    for (int k = 0; k < n_s; ++k) omega[k] = (mask >> k) & 1u;
    if (cst.admits(omega)) candidates.push_back(omega);
  }
  if (candidates.empty()) throw NoFeasibleDesign("exhaustive_select: no admissible omega");

  std::vector<DesignEvaluation> evals(candidates.size());
  std::exception_ptr err;
#ifdef UDET_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
#endif
  for (int c = 0; c < static_cast<int>(candidates.size()); ++c) {
    try {
      FitOptions inner = opts;
      inner.parallel = false;  // parallelism lives at the design level here
      evals[c] = evaluate_design(model, layout, tensor, candidates[c], p0, cells, inner);
    } catch (...) {
#ifdef UDET_HAVE_OPENMP
#pragma omp critical
#endif
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  int best = -1;
  for (int c = 0; c < static_cast<int>(evals.size()); ++c)
    if (evals[c].feasible && (best < 0 || better(evals[c], evals[best], kind)))
      best = c;
  if (best < 0) throw NoFeasibleDesign("exhaustive_select: no feasible design");
  return evals[best];
}

DesignEvaluation greedy_select(const StateEquationModel& model,
                               const SensorLayout& layout,
                               const MeasurementTensor& tensor,
                               const CardinalityConstraint& constraint,
                               Criterion kind, const Vec& p0,
                               const CellSet& cells, const FitOptions& opts) {
  const int n_s = layout.n_s();
  CardinalityConstraint cst = constraint;
  cst.min_sensors = std::max(cst.min_sensors, model.n_p);
  cst.validate(n_s);

  Eigen::VectorXi omega = Eigen::VectorXi::Ones(n_s);
  for (int k : cst.forced_off) omega[k] = 0;

  DesignEvaluation current = evaluate_design(model, layout, tensor, omega, p0, cells, opts);
  if (!current.feasible) throw NoFeasibleDesign("greedy_select: starting design infeasible");
  current.elimination_trace.push_back(current.criterion(kind));
  const Vec warm = current.estimate.p;

  while (current.omega.sum() > cst.max_sensors) {
    DesignEvaluation best;
    for (int k = 0; k < n_s; ++k) {
      if (current.omega[k] == 0) continue;
      if (std::find(cst.forced_on.begin(), cst.forced_on.end(), k) != cst.forced_on.end())
        continue;
      Eigen::VectorXi trial = current.omega;
      trial[k] = 0;
      if (trial.sum() < cst.min_sensors) continue;
      DesignEvaluation ev = evaluate_design(model, layout, tensor, trial, warm, cells, opts);
      if (ev.feasible && (!best.feasible || better(ev, best, kind))) best = ev;
    }
    if (!best.feasible)
      throw NoFeasibleDesign("greedy_select: every admissible removal breaks feasibility");
    best.elimination_trace = current.elimination_trace;
    best.elimination_trace.push_back(best.criterion(kind));
    current = std::move(best);
  }
  if (!cst.admits(current.omega))
    throw NoFeasibleDesign("greedy_select: result violates the constraint");
  return current;
}

}  // namespace udet
