// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include "udet/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace udet {

void SensorLayout::validate() const {
  if (sigma.size() != omega.size())
    throw InvalidModel("SensorLayout: omega/sigma size mismatch");
  for (int k = 0; k < sigma.size(); ++k) {
    if (!(sigma[k] > 0.0)) throw InvalidModel("SensorLayout: sigma must be positive");
    if (omega[k] != 0 && omega[k] != 1)
      throw InvalidModel("SensorLayout: omega entries must be 0 or 1");
  }
}

CellSet CellSet::all(int n_m, int n_q) {
  CellSet cs;
  cs.cells.reserve(static_cast<size_t>(n_m) * n_q);
  for (int i = 0; i < n_m; ++i)
    for (int j = 0; j < n_q; ++j) cs.cells.emplace_back(i, j);
  return cs;
}

std::vector<int> CellSet::input_indices() const {
  std::vector<int> js;
  for (const auto& c : cells) js.push_back(c.second);
  std::sort(js.begin(), js.end());
  js.erase(std::unique(js.begin(), js.end()), js.end());
  return js;
}

void MeasurementTensor::validate() const {
  if (static_cast<size_t>(n_m) * n_q * n_s != z.size())
    throw DimensionMismatch("MeasurementTensor: storage size mismatch");
  if (schedule.size() != n_q)
    throw DimensionMismatch("MeasurementTensor: schedule length != n_q");
  for (double v : z)
    if (!std::isfinite(v)) throw NonFiniteValue("MeasurementTensor: non-finite entry");
}

namespace {

// States for the distinct inputs of a cell set, keyed by input index.
std::map<int, Vec> solve_states_for(const StateEquationModel& model, const Vec& p,
                                    const InputSchedule& schedule,
                                    const std::vector<int>& inputs,
                                    const FitOptions& opts) {
  const int m = static_cast<int>(inputs.size());
  std::vector<Vec> states(m);
  const Vec y0 = Vec::Zero(model.d_y);

#ifdef UDET_HAVE_OPENMP
  if (opts.parallel) {
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < m; ++t) {
      try {
        states[t] = solve_state(model, p, schedule.inputs[inputs[t]], y0, opts.state);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  } else
#endif
  {
    Vec warm = y0;
    for (int t = 0; t < m; ++t) {
      states[t] = solve_state(model, p, schedule.inputs[inputs[t]], warm, opts.state);
      warm = states[t];
    }
  }

  std::map<int, Vec> by_input;
  for (int t = 0; t < m; ++t) by_input[inputs[t]] = states[t];
  return by_input;
}

void check_shapes(const StateEquationModel& model, const SensorLayout& layout,
                  const MeasurementTensor& tensor) {
  layout.validate();
  if (layout.n_s() != tensor.n_s)
    throw DimensionMismatch("layout sensor count != tensor sensor count");
  if (layout.n_s() != model.n_s)
    throw DimensionMismatch("layout sensor count != model observation size");
}

}  // namespace

Vec omega_diagonal(const SensorLayout& layout, int n_cells) {
  const int n_s = layout.n_s();
  Vec w(static_cast<Eigen::Index>(n_cells) * n_s);
  for (int c = 0; c < n_cells; ++c)
    for (int k = 0; k < n_s; ++k) w[c * n_s + k] = layout.omega[k];
  return w;
}

Vec sigma_diagonal(const SensorLayout& layout, int n_cells) {
  const int n_s = layout.n_s();
  Vec s(static_cast<Eigen::Index>(n_cells) * n_s);
  for (int c = 0; c < n_cells; ++c)
    for (int k = 0; k < n_s; ++k) s[c * n_s + k] = layout.sigma[k];
  return s;
}

Vec residuals(const StateEquationModel& model, const SensorLayout& layout,
              const MeasurementTensor& tensor, const Vec& p,
              const CellSet& cells, const FitOptions& opts) {
  check_shapes(model, layout, tensor);
  const int n_s = tensor.n_s;
  const auto states = solve_states_for(model, p, tensor.schedule, cells.input_indices(), opts);

  std::map<int, Vec> h_by_input;
  for (const auto& [j, y] : states)
    h_by_input[j] = model.observe(y, p, tensor.schedule.inputs[j]);

  Vec r(static_cast<Eigen::Index>(cells.size()) * n_s);
  for (int c = 0; c < cells.size(); ++c) {
    const auto [i, j] = cells.cells[c];
    const Vec& h = h_by_input.at(j);
    for (int k = 0; k < n_s; ++k)
      r[c * n_s + k] = (tensor.at(i, j, k) - h[k]) / layout.sigma[k];
  }
  return r;
}

double objective(const StateEquationModel& model, const SensorLayout& layout,
                 const MeasurementTensor& tensor, const Vec& p,
                 const CellSet& cells, const FitOptions& opts) {
  const Vec r = residuals(model, layout, tensor, p, cells, opts);
  const Vec w = omega_diagonal(layout, cells.size());
  return 0.5 * r.dot(w.cwiseProduct(r));
}

Mat assemble_jacobian(const StateEquationModel& model, const SensorLayout& layout,
                      const MeasurementTensor& tensor, const Vec& p,
                      const CellSet& cells, const FitOptions& opts) {
  check_shapes(model, layout, tensor);
  const int n_s = tensor.n_s;
  const int n_p = model.n_p;
  const auto inputs = cells.input_indices();
  const auto states = solve_states_for(model, p, tensor.schedule, inputs, opts);

  // Per input: dr-block = -Sigma^{-1} (dh/dy y' + dh/dp), identical across series.
  std::map<int, Mat> block;
  for (const auto& [j, y] : states) {
    const Vec& q = tensor.schedule.inputs[j];
    const Mat yp = state_sensitivity(model, p, q, y, opts.state);
    Mat B = -(model.jac_h_y(y, p, q) * yp + model.jac_h_p(y, p, q));
    for (int k = 0; k < n_s; ++k) B.row(k) /= layout.sigma[k];
    block[j] = std::move(B);
  }

  Mat J(static_cast<Eigen::Index>(cells.size()) * n_s, n_p);
  for (int c = 0; c < cells.size(); ++c)
    J.middleRows(static_cast<Eigen::Index>(c) * n_s, n_s) = block.at(cells.cells[c].second);
  return J;
}

Mat assemble_second_order(const StateEquationModel& model,
                          const SensorLayout& layout,
                          const MeasurementTensor& tensor, const Vec& p,
                          const CellSet& cells, const FitOptions& opts) {
  check_shapes(model, layout, tensor);
  const int n_s = tensor.n_s;
  const int n_p = model.n_p;
  const auto inputs = cells.input_indices();
  const auto states = solve_states_for(model, p, tensor.schedule, inputs, opts);
  const Vec r = residuals(model, layout, tensor, p, cells, opts);

  // Residual sums per (input, sensor) over the series that hit that input.
  Mat rsum = Mat::Zero(tensor.n_q, n_s);
  for (int c = 0; c < cells.size(); ++c) {
    const auto [i, j] = cells.cells[c];
    (void)i;
    for (int k = 0; k < n_s; ++k) rsum(j, k) += r[c * n_s + k];
  }

  Mat S = Mat::Zero(n_p, n_p);
  for (const auto& [j, y] : states) {
    const Vec& q = tensor.schedule.inputs[j];
    const Mat yp = state_sensitivity(model, p, q, y, opts.state);
    const Mat dh_y = model.jac_h_y(y, p, q);

    for (int l = 0; l < n_p; ++l) {
      for (int m = l; m < n_p; ++m) {
        const Vec el = Vec::Unit(n_p, l);
        const Vec em = Vec::Unit(n_p, m);
        const Vec ul = yp * el;
        const Vec um = yp * em;
        const Vec y2 = state_second_directional(model, p, q, y, el, em, opts.state);
        // Full second derivative of h(y(p), p, q) in directions (el, em).
        const Vec d2h = model.hess_h_yy(y, p, q, ul, um) +
                        model.hess_h_yp(y, p, q, ul, em) +
                        model.hess_h_yp(y, p, q, um, el) +
                        model.hess_h_pp(y, p, q, el, em) + dh_y * y2;
        for (int k = 0; k < n_s; ++k) {
          const double d2r = -d2h[k] / layout.sigma[k];
          const double contrib = rsum(j, k) * layout.omega[k] * d2r;
          S(l, m) += contrib;
          if (m != l) S(m, l) += contrib;
        }
      }
    }
  }
  return 0.5 * (S + S.transpose());
}

namespace {

// Symmetric solve of H X = B with condition guard and optional
// eigenvalue-clipped pseudo-inverse fallback.
Mat solve_spd(const Mat& H, const Mat& B, const CovarianceOptions& opts,
              bool* fallback) {
  const Mat Hs = 0.5 * (H + H.transpose());
  Eigen::LLT<Mat> llt(Hs);
  bool ok = (llt.info() == Eigen::Success);
  if (ok) {
    Eigen::SelfAdjointEigenSolver<Mat> es(Hs, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff();
    ok = lmin > 0 && lmax / lmin < opts.condition_cap;
  }
  if (ok) return llt.solve(B);

  if (!opts.allow_fallback)
    throw SingularH("covariance: H singular or beyond condition cap");
  if (fallback) *fallback = true;
  Eigen::SelfAdjointEigenSolver<Mat> es(Hs);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  const double floor_ = std::max(lmax, 1e-300) / opts.condition_cap;
  Vec inv = es.eigenvalues();
  for (int i = 0; i < inv.size(); ++i)
    inv[i] = 1.0 / std::max(inv[i], floor_);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * B;
}

}  // namespace

Mat covariance(const Mat& J, const Mat& S, const SensorLayout& layout,
               const CovarianceOptions& opts, bool* fallback) {
  const int n_s = layout.n_s();
  if (J.rows() % n_s != 0)
    throw DimensionMismatch("covariance: J row count not a multiple of n_s");
  const int n_cells = static_cast<int>(J.rows()) / n_s;
  const Vec w = omega_diagonal(layout, n_cells);

  const Mat JtWJ = J.transpose() * w.asDiagonal() * J;
  const Mat H = JtWJ + S;
  const Mat B = J.transpose() * w.cwiseProduct(w).asDiagonal() * J;

  const Mat HinvB = solve_spd(H, B, opts, fallback);
  Mat C = solve_spd(H, HinvB.transpose(), opts, fallback);
  return 0.5 * (C + C.transpose());
}

Mat sensitivity_dz_p(const Mat& J, const Mat& S, const SensorLayout& layout,
                     const CovarianceOptions& opts) {
  const int n_s = layout.n_s();
  if (J.rows() % n_s != 0)
    throw DimensionMismatch("sensitivity_dz_p: J row count not a multiple of n_s");
  const int n_cells = static_cast<int>(J.rows()) / n_s;
  const Vec w = omega_diagonal(layout, n_cells);
  const Vec sinv = sigma_diagonal(layout, n_cells).cwiseInverse();

  const Mat H = J.transpose() * w.asDiagonal() * J + S;
  const Mat JtWSinv = J.transpose() * w.cwiseProduct(sinv).asDiagonal();
  return -solve_spd(H, JtWSinv, opts, nullptr);
}

Estimate identify_parameters(const StateEquationModel& model,
                             const SensorLayout& layout,
                             const MeasurementTensor& tensor, const Vec& p0,
                             const CellSet& cells, const FitOptions& opts) {
  check_shapes(model, layout, tensor);
  if (cells.empty()) throw EmptySplit("identify_parameters: empty cell set");
  if (layout.active_count() < model.n_p)
    throw RankDeficient("identify_parameters: fewer active sensors than parameters");

  const Vec w = omega_diagonal(layout, cells.size());
  Estimate est;
  est.p = p0;

  Vec r = residuals(model, layout, tensor, est.p, cells, opts);
  double f = 0.5 * r.dot(w.cwiseProduct(r));
  double lambda = 1e-4;

  for (int it = 0; it < opts.max_iterations; ++it) {
    const Mat J = assemble_jacobian(model, layout, tensor, est.p, cells, opts);
    const Vec g = J.transpose() * w.cwiseProduct(r);
    est.gradient_norm = g.norm();
    est.objective = f;
    est.iterations = it;
    if (est.gradient_norm <= opts.tol_grad * std::max(1.0, f)) {
      est.converged = true;
      return est;
    }

    const Mat A = J.transpose() * w.asDiagonal() * J;
    {
      Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
      const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
      if (!(lmax > 0.0) || es.eigenvalues().minCoeff() < -1e-10 * lmax)
        throw RankDeficient("identify_parameters: Gauss-Newton normal matrix degenerate");
    }
    const double scale = A.diagonal().maxCoeff();

    bool accepted = false;
    while (!accepted) {
      const Mat Ad = A + lambda * scale * Mat::Identity(model.n_p, model.n_p);
      Eigen::LDLT<Mat> ldlt(Ad);
      if (ldlt.info() != Eigen::Success)
        throw RankDeficient("identify_parameters: damped normal matrix not factorizable");
      const Vec dp = ldlt.solve(-g);
      if (dp.norm() <= 1e-14 * (1.0 + est.p.norm())) {
        // The damped step is below representable resolution: the iterate is
        // at the numerical optimum even if the gradient test missed it.
        est.converged = true;
        return est;
      }
      const Vec p_trial = est.p + dp;
      Vec r_trial;
      double f_trial = std::numeric_limits<double>::infinity();
      try {
        r_trial = residuals(model, layout, tensor, p_trial, cells, opts);
        f_trial = 0.5 * r_trial.dot(w.cwiseProduct(r_trial));
      } catch (const Error&) {
        // state solve failed at the trial point; treat as rejected step
      }
      if (f_trial < f) {
        est.p = p_trial;
        r = std::move(r_trial);
        f = f_trial;
        lambda = std::max(lambda / 10.0, 1e-14);
        accepted = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e14)
          throw NonConvergence("identify_parameters: damping exhausted without progress");
      }
    }
  }
  throw NonConvergence("identify_parameters: iteration limit reached");
}

Estimate estimate_with_covariance(const StateEquationModel& model,
                                  const SensorLayout& layout,
                                  const MeasurementTensor& tensor, const Vec& p0,
                                  const CellSet& cells, const FitOptions& opts,
                                  const CovarianceOptions& cov_opts) {
  Estimate est = identify_parameters(model, layout, tensor, p0, cells, opts);
  const Mat J = assemble_jacobian(model, layout, tensor, est.p, cells, opts);
  const Mat S = assemble_second_order(model, layout, tensor, est.p, cells, opts);
  bool fb = false;
  est.C = covariance(J, S, layout, cov_opts, &fb);
  est.covariance_fallback = fb;
  return est;
}

}  // namespace udet
