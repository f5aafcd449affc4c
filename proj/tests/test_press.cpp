// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "test_helpers.hpp"

using namespace udet;
using namespace udet::testing;

namespace {

Vec vec1(double x) { return Vec::Constant(1, x); }

// Two-spring series chain with both stiffnesses free.
PressSurrogate two_spring_chain(double k5, double k7) {
  PressSurrogate s;
  s.d_y = 2;
  s.n_p = 2;
  s.bars = {
      {k5, 0.0, 0.0, 0, 1, 0},
      {k7, 0.0, 0.0, 1, -1, 1},
  };
  s.load_dof = 0;
  s.sensor_dofs = {0};
  s.nominal_p = Vec(2);
  s.nominal_p << k5, k7;
  return s;
}

}  // namespace

TEST_CASE("assemble_quasistatic: two-spring chain closed form") {
  const PressSurrogate s = two_spring_chain(2e6, 4e6);
  const StateEquationModel m = assemble_quasistatic(s);
  const Vec y = solve_state(m, s.nominal_p, vec1(1000.0), Vec::Zero(2));
  CHECK(y[0] == doctest::Approx(7.5e-4).epsilon(1e-10));  // q (1/k5 + 1/k7)

  // Zero load, no gravity -> zero state.
  const Vec y0 = solve_state(m, s.nominal_p, vec1(0.0), Vec::Zero(2));
  CHECK(y0.norm() < 1e-12);

  // Doubling all stiffnesses halves the displacements (linear variant).
  const Vec y2 = solve_state(m, Vec(2.0 * s.nominal_p), vec1(1000.0), Vec::Zero(2));
  CHECK(y2[0] == doctest::Approx(0.5 * y[0]).epsilon(1e-10));
}

TEST_CASE("default_demo: valid topology and nonsingular stiffness") {
  for (bool nonlinear : {false, true}) {
    const PressSurrogate s = PressSurrogate::default_demo(nonlinear);
    CHECK_NOTHROW(s.validate());
    const Mat K = s.stiffness(s.nominal_p);
    CHECK(K.rows() == s.d_y);
    CHECK(rel_diff(K, Mat(K.transpose())) < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> es(K);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("element validation rejects inconsistent indexing") {
  BarElement bad;
  bad.k = -1.0;
  bad.dof_a = 0;
  bad.dof_b = 1;
  CHECK_THROWS_AS(bad.validate(2, 0), InvalidModel);

  BarElement oob;
  oob.k = 1.0;
  oob.dof_a = 0;
  oob.dof_b = 5;
  CHECK_THROWS_AS(oob.validate(2, 0), InvalidModel);

  PressSurrogate disconnected;
  disconnected.d_y = 2;
  disconnected.n_p = 0;
  disconnected.bars = {{1e6, 0.0, 0.0, 0, -1, -1}};  // dof 1 floats
  disconnected.load_dof = 0;
  disconnected.sensor_dofs = {0};
  disconnected.nominal_p = Vec(0);
  CHECK_THROWS_AS(disconnected.validate(), InvalidTopology);
}

TEST_CASE("beam element: stiffness structure") {
  BeamElement b;
  b.k_alpha = 8e6;
  b.k_beta = 4e6;
  b.length = 0.5;

  const Mat K6 = b.element_stiffness();
  REQUIRE(K6.rows() == 6);
  CHECK(rel_diff(K6, Mat(K6.transpose())) < 1e-12);
  // Axial block on (u1, u2).
  CHECK(K6(0, 0) == doctest::Approx(8e6));
  CHECK(K6(0, 3) == doctest::Approx(-8e6));
  // Bending block is k_beta v v^T with v = (1, l, -1, l).
  CHECK(K6(1, 1) == doctest::Approx(4e6));
  CHECK(K6(1, 2) == doctest::Approx(4e6 * 0.5));
  CHECK(K6(2, 2) == doctest::Approx(4e6 * 0.25));
  CHECK(K6(1, 4) == doctest::Approx(-4e6));
  // Rank 2: one axial mode plus one bending mode.
  Eigen::JacobiSVD<Mat> svd(K6);
  int rank6 = 0;
  for (int i = 0; i < 6; ++i)
    if (svd.singularValues()(i) > 1e-9 * svd.singularValues()(0)) ++rank6;
  CHECK(rank6 == 2);

  const Mat K9 = b.assembled_stiffness();
  REQUIRE(K9.rows() == 9);
  CHECK(rel_diff(K9, Mat(K9.transpose())) < 1e-12);
  Eigen::SelfAdjointEigenSolver<Mat> es(K9);
  // PSD with nullity 5: 9 dofs minus 2 rank-2 elements.
  CHECK(es.eigenvalues().minCoeff() > -1e-9 * es.eigenvalues().maxCoeff());
  int nullity = 0;
  for (int i = 0; i < 9; ++i)
    if (es.eigenvalues()(i) < 1e-9 * es.eigenvalues().maxCoeff()) ++nullity;
  CHECK(nullity == 5);
}

TEST_CASE("coulomb_friction: sign convention") {
  CHECK(coulomb_friction(50.0, 1) == doctest::Approx(50.0));
  CHECK(coulomb_friction(50.0, -1) == doctest::Approx(-50.0));
  CHECK(coulomb_friction(50.0, 0) == doctest::Approx(0.0));
  CHECK(coulomb_friction(0.0, 1) == doctest::Approx(0.0));
}

TEST_CASE("memory_update: recursion traces for both variants") {
  CHECK_THROWS_AS(memory_update(MemoryState{}, 1.0, 1), UninitializedState);

  for (auto variant : {MemoryVariant::LiteralPaper, MemoryVariant::Corrected}) {
    MemoryState st = MemoryState::initial();
    st = memory_update(st, 0.0, 1, variant);
    st = memory_update(st, 5.0, 1, variant);
    CHECK(st.q_min == doctest::Approx(0.0));
    CHECK(st.q_max == doctest::Approx(5.0));

    st = memory_update(st, 3.0, -1, variant);
    CHECK(st.q_min == doctest::Approx(3.0));
    if (variant == MemoryVariant::LiteralPaper)
      CHECK(st.q_max == doctest::Approx(3.0));  // min(q, q_max_prev) as printed
    else
      CHECK(st.q_max == doctest::Approx(5.0));  // turning-point semantics
    CHECK(st.q_prev == doctest::Approx(3.0));
  }
}

TEST_CASE("memory friction: evaluation guards and rate independence") {
  MemoryArctanModel basis = MemoryArctanModel::default_basis(1500.0);
  MemoryState st = MemoryState::initial();
  st = memory_update(st, 100.0, 1);
  CHECK_THROWS_AS(basis.evaluate(st, 100.0, 0.0), UntrainedModel);

  // All-zero output weights produce zero force.
  MemoryArctanModel zero = basis;
  zero.output_weights = Vec::Zero(zero.units());
  zero.output_bias = 0.0;
  zero.trained = true;
  CHECK(zero.evaluate(st, 100.0, 0.0) == doctest::Approx(0.0));

  // Rate independence: friction_series depends only on the force sequence
  // and phase tags, never on timing, so outputs are bit-identical.
  const FrictionModel model = demo_hysteresis_friction();
  std::vector<double> forces;
  std::vector<Phase> phases;
  const InputSchedule sched = default_schedule();
  for (int j = 0; j < sched.size(); ++j) {
    forces.push_back(sched.inputs[j][0]);
    phases.push_back(sched.phases[j]);
  }
  const auto a = friction_series(model, forces, phases);
  const auto b = friction_series(model, forces, phases);
  CHECK(a == b);
}

TEST_CASE("train_coulomb_friction: recovers the generating level") {
  const InputSchedule sched = default_schedule();
  std::vector<Phase> phases = sched.phases;
  std::vector<double> residual(sched.size());
  for (int j = 0; j < sched.size(); ++j)
    residual[j] = (phases[j] == Phase::Loading ? 120.0 : -120.0);
  CHECK(train_coulomb_friction(phases, residual) == doctest::Approx(120.0).epsilon(1e-10));

  // Negative-mean residuals clamp at zero.
  for (auto& v : residual) v = -v;
  CHECK(train_coulomb_friction(phases, residual) == doctest::Approx(0.0));
}

TEST_CASE("train_memory_friction: reproduces a Coulomb loop within 5% RMS") {
  const InputSchedule sched = default_schedule();
  std::vector<double> forces;
  std::vector<Phase> phases;
  for (int j = 0; j < sched.size(); ++j) {
    forces.push_back(sched.inputs[j][0]);
    phases.push_back(sched.phases[j]);
  }
  FrictionModel coulomb;
  coulomb.kind = FrictionKind::Coulomb;
  coulomb.q_c = 150.0;
  const auto target = friction_series(coulomb, forces, phases);

  const auto trained = train_memory_friction(MemoryArctanModel::default_basis(1500.0),
                                             forces, phases, target,
                                             MemoryVariant::Corrected);
  FrictionModel mem;
  mem.kind = FrictionKind::MemoryArctan;
  mem.memory = trained;
  mem.variant = MemoryVariant::Corrected;
  const auto fit = friction_series(mem, forces, phases);

  double err2 = 0.0;
  int count = 0;
  for (size_t j = 0; j < target.size(); ++j) {
    if (forces[j] == 0.0) continue;  // endpoints sit at the sign discontinuity
    err2 += (fit[j] - target[j]) * (fit[j] - target[j]);
    ++count;
  }
  const double rms = std::sqrt(err2 / count);
  const double amplitude = 2.0 * coulomb.q_c;
  CHECK(rms <= 0.05 * amplitude);

  CHECK_THROWS_AS(train_memory_friction(MemoryArctanModel::default_basis(1500.0),
                                        std::vector<double>(10, 5.0),
                                        std::vector<Phase>(10, Phase::Loading),
                                        std::vector<double>(10, 1.0)),
                  DegenerateTraining);
}

TEST_CASE("training generalizes across series from the same generator") {
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(3);
  layout.sigma = Vec(3);
  layout.sigma << 1.518e-5, 4.895e-6, 3.904e-6;
  PressSurrogate truth = PressSurrogate::default_demo(false);
  truth.friction = demo_hysteresis_friction();
  const InputSchedule sched = default_schedule();
  const MeasurementTensor tensor = generate_synthetic_measurements(
      truth, truth.nominal_p, sched, layout, 6, 313);

  const PressSurrogate base = PressSurrogate::default_demo(false);
  std::vector<double> setpoints;
  std::vector<Phase> phases = sched.phases;
  for (int j = 0; j < sched.size(); ++j) setpoints.push_back(sched.setpoints[j][0]);

  auto head = [&](int count) {
    MeasurementTensor t;
    t.n_m = count;
    t.n_q = tensor.n_q;
    t.n_s = tensor.n_s;
    t.schedule = tensor.schedule;
    t.z.assign(tensor.z.begin(),
               tensor.z.begin() + static_cast<size_t>(count) * tensor.n_q * tensor.n_s);
    return t;
  };
  const auto train_res =
      extract_friction_residuals(base, truth.nominal_p, layout, head(4));
  const auto trained = train_memory_friction(MemoryArctanModel::default_basis(1500.0),
                                             setpoints, phases, train_res,
                                             MemoryVariant::Corrected);
  FrictionModel mem;
  mem.kind = FrictionKind::MemoryArctan;
  mem.memory = trained;
  mem.variant = MemoryVariant::Corrected;
  const auto fit = friction_series(mem, setpoints, phases);

  MeasurementTensor tail;
  tail.n_m = 2;
  tail.n_q = tensor.n_q;
  tail.n_s = tensor.n_s;
  tail.schedule = tensor.schedule;
  tail.z.assign(tensor.z.begin() + static_cast<size_t>(4) * tensor.n_q * tensor.n_s,
                tensor.z.end());
  const auto val_res = extract_friction_residuals(base, truth.nominal_p, layout, tail);

  auto rms_against = [&](const std::vector<double>& res) {
    double err2 = 0.0;
    int count = 0;
    for (int j = 1; j < (int)res.size() - 1; ++j) {
      err2 += (fit[j] - res[j]) * (fit[j] - res[j]);
      ++count;
    }
    return std::sqrt(err2 / count);
  };
  const double train_rms = rms_against(train_res);
  const double val_rms = rms_against(val_res);
  CHECK(train_rms <= val_rms * (1 + 1e-9));
  CHECK(val_rms <= 2.0 * train_rms);
}

TEST_CASE("hysteresis signature and frictionless coincidence") {
  PressSurrogate s = PressSurrogate::default_demo(false);
  const StateEquationModel m = assemble_quasistatic(s);
  const InputSchedule sched = default_schedule(1500.0, 16, 15);  // symmetric grid

  auto curve_at = [&](const PressSurrogate& sur, double q_query) {
    // Displacement at the load dof during loading and unloading at |q| = q_query.
    const InputSchedule eff = effective_schedule(sur, sched);
    double up = 0.0, down = 0.0;
    Vec y0 = Vec::Zero(m.d_y);
    for (int j = 0; j < eff.size(); ++j) {
      const Vec y = solve_state(m, sur.nominal_p, eff.inputs[j], y0);
      y0 = y;
      if (std::abs(sched.inputs[j][0] - q_query) < 1e-9) {
        if (sched.phases[j] == Phase::Loading)
          up = y[sur.load_dof];
        else
          down = y[sur.load_dof];
      }
    }
    return std::pair{up, down};
  };

  // Friction None: loading and unloading coincide exactly.
  const auto [u_none, d_none] = curve_at(s, 700.0);
  CHECK(u_none == doctest::Approx(d_none).epsilon(1e-12));

  // Coulomb friction: a loop at least 2 q_c / k_eff wide.
  PressSurrogate withc = s;
  withc.friction.kind = FrictionKind::Coulomb;
  withc.friction.q_c = 150.0;
  const auto [u_c, d_c] = curve_at(withc, 700.0);
  const double k_eff = 700.0 / u_none;  // effective stiffness at the load dof
  CHECK(d_c - u_c >= 2.0 * withc.friction.q_c / k_eff * (1 - 1e-9));

  // MemoryArctan friction: a visible loop as well.
  PressSurrogate withm = s;
  withm.friction = demo_hysteresis_friction();
  const auto [u_m, d_m] = curve_at(withm, 700.0);
  CHECK(d_m - u_m > 100.0 / k_eff);
}

TEST_CASE("energy consistency: strain energy equals the work integral") {
  const PressSurrogate s = PressSurrogate::default_demo(false);
  const StateEquationModel m = assemble_quasistatic(s);
  const Mat K = s.stiffness(s.nominal_p);

  // Fine ramp so the trapezoidal work quadrature converges.
  const int steps = 2000;
  const double q_end = 1500.0;
  double work = 0.0;
  Vec y_prev = Vec::Zero(m.d_y);
  for (int j = 1; j <= steps; ++j) {
    const double q = q_end * j / steps;
    const Vec y = solve_state(m, s.nominal_p, vec1(q), y_prev);
    const double q_prev = q_end * (j - 1) / steps;
    work += 0.5 * (q + q_prev) * (y[s.load_dof] - y_prev[s.load_dof]);
    y_prev = y;
  }
  const double strain = 0.5 * y_prev.dot(K * y_prev);
  CHECK(rel_diff(work, strain) < 1e-6);
}

TEST_CASE("generate_synthetic_measurements: determinism and exactness") {
  const PressSurrogate s = PressSurrogate::default_demo(false);
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(3);
  layout.sigma = Vec(3);
  layout.sigma << 1.518e-5, 4.895e-6, 3.904e-6;
  const InputSchedule sched = default_schedule();

  const auto a = generate_synthetic_measurements(s, s.nominal_p, sched, layout, 3, 9);
  const auto b = generate_synthetic_measurements(s, s.nominal_p, sched, layout, 3, 9);
  CHECK(a.z == b.z);

  // Sigma -> 0 reproduces the noiseless model output.
  SensorLayout tiny = layout;
  tiny.sigma = Vec::Constant(3, 1e-300);
  const auto exact = generate_synthetic_measurements(s, s.nominal_p, sched, tiny, 1, 9);
  const StateEquationModel m = assemble_quasistatic(s);
  Vec y0 = Vec::Zero(m.d_y);
  for (int j = 0; j < sched.size(); ++j) {
    const Vec y = solve_state(m, s.nominal_p, sched.inputs[j], y0);
    y0 = y;
    for (int k = 0; k < 3; ++k)
      CHECK(exact.at(0, j, k) == doctest::Approx(y[s.sensor_dofs[k]]).epsilon(1e-10));
  }

  // Sample mean converges to the model output (CLT scale).
  const auto many = generate_synthetic_measurements(s, s.nominal_p, sched, layout, 2000, 9);
  const int j_mid = 7, k_probe = 0;
  double mean = 0.0;
  for (int i = 0; i < many.n_m; ++i) mean += many.at(i, j_mid, k_probe);
  mean /= many.n_m;
  const Vec y = solve_state(m, s.nominal_p, sched.inputs[j_mid], Vec::Zero(m.d_y));
  CHECK(std::abs(mean - y[s.sensor_dofs[k_probe]]) <
        3.0 * layout.sigma[k_probe] / std::sqrt(2000.0));
}

TEST_CASE("correct_measurements: formula, idempotence, variance reduction") {
  // Formula: z = 10 measured at q = 9 with setpoint 10 -> 11.111...
  MeasurementTensor t;
  t.n_m = 1;
  t.n_q = 1;
  t.n_s = 1;
  t.z = {10.0};
  t.schedule = scalar_schedule({9.0});
  t.schedule.setpoints = {Vec::Constant(1, 10.0)};
  t.realized = Mat::Constant(1, 1, 9.0);
  const auto corrected = correct_measurements(t, {10.0});
  CHECK(corrected.z[0] == doctest::Approx(10.0 * 10.0 / 9.0).epsilon(1e-12));

  // q = setpoint -> unchanged; already-corrected tensors are fixed points.
  const auto twice = correct_measurements(corrected, {10.0});
  CHECK(twice.z == corrected.z);

  // Zero realized force on a nonzero setpoint is an error.
  MeasurementTensor zero = t;
  zero.realized(0, 0) = 0.0;
  CHECK_THROWS_AS(correct_measurements(zero, {10.0}), ZeroRealizedForce);

  // Jittered forces on the (linear) surrogate: correction shrinks the
  // cross-series displacement variance.
  const PressSurrogate s = PressSurrogate::default_demo(false);
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(3);
  layout.sigma = Vec::Constant(3, 1e-9);  // isolate the jitter contribution
  const InputSchedule sched = default_schedule();
  const auto noisy = generate_synthetic_measurements(s, s.nominal_p, sched, layout, 40,
                                                     77, /*force_jitter_rel=*/0.02);
  std::vector<double> setpoints;
  for (int j = 0; j < sched.size(); ++j) setpoints.push_back(sched.setpoints[j][0]);
  const auto fixed = correct_measurements(noisy, setpoints);
  auto var_at = [&](const MeasurementTensor& tt, int j, int k) {
    double mean = 0.0;
    for (int i = 0; i < tt.n_m; ++i) mean += tt.at(i, j, k);
    mean /= tt.n_m;
    double v = 0.0;
    for (int i = 0; i < tt.n_m; ++i)
      v += (tt.at(i, j, k) - mean) * (tt.at(i, j, k) - mean);
    return v / (tt.n_m - 1);
  };
  CHECK(var_at(fixed, 7, 0) < 0.1 * var_at(noisy, 7, 0));
}

TEST_CASE("with_effective_inputs: subtracts the candidate's friction force") {
  PressSurrogate cand = PressSurrogate::default_demo(false);
  cand.friction.kind = FrictionKind::Coulomb;
  cand.friction.q_c = 100.0;
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(3);
  layout.sigma = Vec::Constant(3, 1e-6);
  const InputSchedule sched = default_schedule();
  const auto tensor = generate_synthetic_measurements(
      PressSurrogate::default_demo(false), cand.nominal_p, sched, layout, 1, 3);
  const auto eff = with_effective_inputs(cand, tensor);
  // A loading point away from the start: effective force = q - q_c.
  CHECK(eff.schedule.inputs[5][0] ==
        doctest::Approx(sched.inputs[5][0] - 100.0).epsilon(1e-12));
  // An unloading point: effective force = q + q_c.
  CHECK(eff.schedule.inputs[20][0] ==
        doctest::Approx(sched.inputs[20][0] + 100.0).epsilon(1e-12));
  // Measurements themselves are untouched.
  CHECK(eff.z == tensor.z);
}
