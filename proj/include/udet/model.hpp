// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_MODEL_HPP
#define UDET_MODEL_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "udet/errors.hpp"

namespace udet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Phase { Loading, Unloading };

/// Ordered list of inputs q_1..q_{n_q} of a loading-unloading scenario.
/// Setpoints, when present, carry the nominal applied values in the same
/// units as the inputs.
struct InputSchedule {
  std::vector<Vec> inputs;
  std::vector<Vec> setpoints;  // empty or same length as inputs
  std::vector<Phase> phases;   // per index

  int size() const { return static_cast<int>(inputs.size()); }
  bool has_setpoints() const { return !setpoints.empty(); }
  void validate() const;
};

/// Implicit state-equation model E(y, p, q) = 0 with observation operator.
///
/// First-derivative oracles return full Jacobians. Second derivatives are
/// directional: d2E_yy(y,p,q,u,v) contracts the yy-tensor of E with state
/// directions u, v; d2E_yp contracts with a state direction u and a
/// parameter direction hp; d2E_pp with two parameter directions. The same
/// convention holds for the observation operator (result length n_s).
///
/// Any oracle left empty is backed by central finite differences on eval_E
/// or observe. Instances are immutable after construction and safe to share
/// across threads.
class StateEquationModel {
 public:
  using EvalFn = std::function<Vec(const Vec&, const Vec&, const Vec&)>;
  using JacFn = std::function<Mat(const Vec&, const Vec&, const Vec&)>;
  using BilinFn =
      std::function<Vec(const Vec&, const Vec&, const Vec&, const Vec&, const Vec&)>;

  int d_y = 0;
  int n_p = 0;
  int d_q = 0;
  int n_s = 0;

  EvalFn eval_E;
  EvalFn observe;

  JacFn dE_dy, dE_dp;
  JacFn dh_dy, dh_dp;

  BilinFn d2E_yy, d2E_yp, d2E_pp;
  BilinFn d2h_yy, d2h_yp, d2h_pp;

  /// Checks dimensions and d_E == d_y (square invertible dE/dy required).
  void validate(const Vec& y_probe, const Vec& p_probe, const Vec& q_probe) const;

  // Oracle accessors; fall back to finite differences when unset.
  Mat jac_E_y(const Vec& y, const Vec& p, const Vec& q) const;
  Mat jac_E_p(const Vec& y, const Vec& p, const Vec& q) const;
  Mat jac_h_y(const Vec& y, const Vec& p, const Vec& q) const;
  Mat jac_h_p(const Vec& y, const Vec& p, const Vec& q) const;

  Vec hess_E_yy(const Vec& y, const Vec& p, const Vec& q, const Vec& u, const Vec& v) const;
  Vec hess_E_yp(const Vec& y, const Vec& p, const Vec& q, const Vec& u, const Vec& hp) const;
  Vec hess_E_pp(const Vec& y, const Vec& p, const Vec& q, const Vec& h1, const Vec& h2) const;
  Vec hess_h_yy(const Vec& y, const Vec& p, const Vec& q, const Vec& u, const Vec& v) const;
  Vec hess_h_yp(const Vec& y, const Vec& p, const Vec& q, const Vec& u, const Vec& hp) const;
  Vec hess_h_pp(const Vec& y, const Vec& p, const Vec& q, const Vec& h1, const Vec& h2) const;
};

struct SolveOptions {
  double tol_state = 1e-10;    // absolute residual norm
  int max_iterations = 100;
  double condition_cap = 1e12;
};

/// State solutions over one schedule with per-input diagnostics.
struct StateSolution {
  std::vector<Vec> states;
  std::vector<double> residual_norms;
  std::vector<int> iterations;
};

/// Solves E(y,p,q)=0 by damped Newton with backtracking line search.
/// Throws NonConvergence or SingularJacobian.
Vec solve_state(const StateEquationModel& model, const Vec& p, const Vec& q,
                const Vec& y0, const SolveOptions& opts = {},
                int* iterations = nullptr);

/// State sensitivity y'(p) = -(dE/dy)^{-1} dE/dp at a solved state y.
Mat state_sensitivity(const StateEquationModel& model, const Vec& p, const Vec& q,
                      const Vec& y, const SolveOptions& opts = {});

/// Second directional derivative y''(p)(h1; h2) at a solved state y.
/// The mixed term is applied in its symmetric two-sided form so the result
/// is symmetric in (h1, h2).
Vec state_second_directional(const StateEquationModel& model, const Vec& p,
                             const Vec& q, const Vec& y, const Vec& h1,
                             const Vec& h2, const SolveOptions& opts = {});

/// Solves the whole schedule. Warm-starts each input from the previous
/// solution when serial; the OpenMP path starts every input from y0.
StateSolution solve_schedule(const StateEquationModel& model, const Vec& p,
                             const InputSchedule& schedule, const Vec& y0,
                             const SolveOptions& opts = {}, bool parallel = true);

namespace fd {
/// Step size for central differences, h = max(1e-6, 1e-6 |x|).
double step(double x);
}  // namespace fd

}  // namespace udet

#endif  // UDET_MODEL_HPP
