// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include "udet/model.hpp"

#include <cmath>

#ifdef UDET_HAVE_OPENMP
#include <omp.h>
#endif

namespace udet {

namespace fd {
double step(double x) { return std::max(1e-6, 1e-6 * std::abs(x)); }
}  // namespace fd

void InputSchedule::validate() const {
  if (inputs.empty()) throw InvalidModel("InputSchedule: need at least one input");
  if (!setpoints.empty() && setpoints.size() != inputs.size())
    throw InvalidModel("InputSchedule: setpoint count does not match input count");
  if (!phases.empty() && phases.size() != inputs.size())
    throw InvalidModel("InputSchedule: phase tag count does not match input count");
}

void StateEquationModel::validate(const Vec& y, const Vec& p, const Vec& q) const {
  if (!eval_E) throw InvalidModel("model: eval_E not set");
  if (!observe) throw InvalidModel("model: observation operator not set");
  if (y.size() != d_y || p.size() != n_p || q.size() != d_q)
    throw InvalidModel("model: probe point dimensions do not match declared sizes");
  const Vec e = eval_E(y, p, q);
  if (e.size() != d_y)
    throw InvalidModel("model: d_E != d_y, rectangular state equations are not supported");
  const Vec h = observe(y, p, q);
  if (h.size() != n_s)
    throw InvalidModel("model: observation size does not match n_s");
}

namespace {

// Central-difference Jacobian of f with respect to its argument slot.
template <typename F>
Mat fd_jacobian(const F& f, const Vec& x, int out_dim) {
  Mat J(out_dim, x.size());
  Vec xp = x, xm = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = fd::step(x[i]);
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return J;
}

// Directional second derivative from a directional first derivative:
// d/dt [ df(x + t v) u ] at t = 0.
template <typename DF>
Vec fd_bilinear(const DF& df_times_u, const Vec& x, const Vec& v) {
  const double vn = v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0;
  if (vn == 0.0) return 0.0 * df_times_u(x);
  const double h = 1e-6 * std::max(1.0, x.cwiseAbs().maxCoeff()) / vn;
  return (df_times_u(x + h * v) - df_times_u(x - h * v)) / (2.0 * h);
}

}  // namespace

Mat StateEquationModel::jac_E_y(const Vec& y, const Vec& p, const Vec& q) const {
  if (dE_dy) return dE_dy(y, p, q);
  return fd_jacobian([&](const Vec& yy) { return eval_E(yy, p, q); }, y, d_y);
}

Mat StateEquationModel::jac_E_p(const Vec& y, const Vec& p, const Vec& q) const {
  if (dE_dp) return dE_dp(y, p, q);
  return fd_jacobian([&](const Vec& pp) { return eval_E(y, pp, q); }, p, d_y);
}

Mat StateEquationModel::jac_h_y(const Vec& y, const Vec& p, const Vec& q) const {
  if (dh_dy) return dh_dy(y, p, q);
  return fd_jacobian([&](const Vec& yy) { return observe(yy, p, q); }, y, n_s);
}

Mat StateEquationModel::jac_h_p(const Vec& y, const Vec& p, const Vec& q) const {
  if (dh_dp) return dh_dp(y, p, q);
  return fd_jacobian([&](const Vec& pp) { return observe(y, pp, q); }, p, n_s);
}

Vec StateEquationModel::hess_E_yy(const Vec& y, const Vec& p, const Vec& q,
                                  const Vec& u, const Vec& v) const {
  if (d2E_yy) return d2E_yy(y, p, q, u, v);
  return fd_bilinear([&](const Vec& yy) -> Vec { return jac_E_y(yy, p, q) * u; }, y, v);
}

Vec StateEquationModel::hess_E_yp(const Vec& y, const Vec& p, const Vec& q,
                                  const Vec& u, const Vec& hp) const {
  if (d2E_yp) return d2E_yp(y, p, q, u, hp);
  return fd_bilinear([&](const Vec& pp) -> Vec { return jac_E_y(y, pp, q) * u; }, p, hp);
}

Vec StateEquationModel::hess_E_pp(const Vec& y, const Vec& p, const Vec& q,
                                  const Vec& h1, const Vec& h2) const {
  if (d2E_pp) return d2E_pp(y, p, q, h1, h2);
  return fd_bilinear([&](const Vec& pp) -> Vec { return jac_E_p(y, pp, q) * h1; }, p, h2);
}

Vec StateEquationModel::hess_h_yy(const Vec& y, const Vec& p, const Vec& q,
                                  const Vec& u, const Vec& v) const {
  if (d2h_yy) return d2h_yy(y, p, q, u, v);
  return fd_bilinear([&](const Vec& yy) -> Vec { return jac_h_y(yy, p, q) * u; }, y, v);
}

Vec StateEquationModel::hess_h_yp(const Vec& y, const Vec& p, const Vec& q,
                                  const Vec& u, const Vec& hp) const {
  if (d2h_yp) return d2h_yp(y, p, q, u, hp);
  return fd_bilinear([&](const Vec& pp) -> Vec { return jac_h_y(y, pp, q) * u; }, p, hp);
}

Vec StateEquationModel::hess_h_pp(const Vec& y, const Vec& p, const Vec& q,
                                  const Vec& h1, const Vec& h2) const {
  if (d2h_pp) return d2h_pp(y, p, q, h1, h2);
  return fd_bilinear([&](const Vec& pp) -> Vec { return jac_h_p(y, pp, q) * h1; }, p, h2);
}

Vec solve_state(const StateEquationModel& model, const Vec& p, const Vec& q,
                const Vec& y0, const SolveOptions& opts, int* iterations) {
  if (!y0.allFinite()) throw InvalidModel("solve_state: non-finite initial state");
  Vec y = y0;
  Vec e = model.eval_E(y, p, q);
  double norm = e.norm();
  int it = 0;
  while (norm > opts.tol_state) {
    if (it >= opts.max_iterations)
      throw NonConvergence("solve_state: Newton iteration limit reached");
    const Mat Jy = model.jac_E_y(y, p, q);
    Eigen::PartialPivLU<Mat> lu(Jy);
    if (lu.rcond() < 1.0 / opts.condition_cap)
      throw SingularJacobian("solve_state: dE/dy ill-conditioned at iterate");
    const Vec dy = lu.solve(-e);
    double t = 1.0;
    Vec y_trial;
    Vec e_trial;
    double norm_trial;
    for (;;) {
      y_trial = y + t * dy;
      e_trial = model.eval_E(y_trial, p, q);
      norm_trial = e_trial.norm();
      if (norm_trial < (1.0 - 1e-4 * t) * norm || norm_trial <= opts.tol_state) break;
      t *= 0.5;
      if (t < 1e-10)
        throw NonConvergence("solve_state: line search failed to reduce residual");
    }
    y = y_trial;
    e = e_trial;
    norm = norm_trial;
    ++it;
  }
  // Assumption check at the solution: dE/dy must be well conditioned.
  {
    Eigen::PartialPivLU<Mat> lu(model.jac_E_y(y, p, q));
    if (lu.rcond() < 1.0 / opts.condition_cap)
      throw SingularJacobian("solve_state: dE/dy ill-conditioned at solution");
  }
  if (iterations) *iterations = it;
  return y;
}

Mat state_sensitivity(const StateEquationModel& model, const Vec& p, const Vec& q,
                      const Vec& y, const SolveOptions& opts) {
  Eigen::PartialPivLU<Mat> lu(model.jac_E_y(y, p, q));
  if (lu.rcond() < 1.0 / opts.condition_cap)
    throw SingularJacobian("state_sensitivity: dE/dy ill-conditioned");
  return -lu.solve(model.jac_E_p(y, p, q));
}

Vec state_second_directional(const StateEquationModel& model, const Vec& p,
                             const Vec& q, const Vec& y, const Vec& h1,
                             const Vec& h2, const SolveOptions& opts) {
  Eigen::PartialPivLU<Mat> lu(model.jac_E_y(y, p, q));
  if (lu.rcond() < 1.0 / opts.condition_cap)
    throw SingularJacobian("state_second_directional: dE/dy ill-conditioned");
  const Mat yp = -lu.solve(model.jac_E_p(y, p, q));
  const Vec u1 = yp * h1;
  const Vec u2 = yp * h2;
  const Vec rhs = model.hess_E_yy(y, p, q, u1, u2) +
                  model.hess_E_yp(y, p, q, u1, h2) +
                  model.hess_E_yp(y, p, q, u2, h1) +
                  model.hess_E_pp(y, p, q, h1, h2);
  return -lu.solve(rhs);
}

StateSolution solve_schedule(const StateEquationModel& model, const Vec& p,
                             const InputSchedule& schedule, const Vec& y0,
                             const SolveOptions& opts, bool parallel) {
  schedule.validate();
  const int n_q = schedule.size();
  StateSolution sol;
  sol.states.resize(n_q);
  sol.residual_norms.resize(n_q);
  sol.iterations.resize(n_q);

#ifdef UDET_HAVE_OPENMP
  if (parallel) {
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (int j = 0; j < n_q; ++j) {
      try {
        int it = 0;
        sol.states[j] = solve_state(model, p, schedule.inputs[j], y0, opts, &it);
        sol.iterations[j] = it;
        sol.residual_norms[j] =
            model.eval_E(sol.states[j], p, schedule.inputs[j]).norm();
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
    return sol;
  }
#else
  (void)parallel;
#endif

  Vec warm = y0;
  for (int j = 0; j < n_q; ++j) {
    int it = 0;
    sol.states[j] = solve_state(model, p, schedule.inputs[j], warm, opts, &it);
    sol.iterations[j] = it;
    sol.residual_norms[j] = model.eval_E(sol.states[j], p, schedule.inputs[j]).norm();
    warm = sol.states[j];
  }
  return sol;
}

}  // namespace udet
