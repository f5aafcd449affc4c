// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "test_helpers.hpp"

using namespace udet;
using namespace udet::testing;

namespace {

struct Instance {
  StateEquationModel model;
  SensorLayout layout;
  MeasurementTensor tensor;
  Vec p0;
  CellSet cells;
};

Instance surrogate_instance(std::uint64_t seed, bool nonlinear = false) {
  Instance in;
  const PressSurrogate s = PressSurrogate::default_demo(nonlinear);
  in.model = assemble_quasistatic(s);
  in.layout.omega = Eigen::VectorXi::Ones(3);
  in.layout.sigma = Vec(3);
  in.layout.sigma << 1.518e-5, 4.895e-6, 3.904e-6;
  in.p0 = s.nominal_p;
  in.tensor =
      generate_synthetic_measurements(s, s.nominal_p, default_schedule(), in.layout, 2, seed);
  for (int i = 0; i < in.tensor.n_m; ++i)
    for (int j = 1; j < in.tensor.n_q - 1; ++j) in.cells.cells.emplace_back(i, j);
  return in;
}

}  // namespace

TEST_CASE("criterion_value: closed forms and eigen oracle") {
  Mat C(2, 2);
  C << 1.0, 0.0, 0.0, 4.0;
  CHECK(criterion_value(C, Criterion::A) == doctest::Approx(5.0));
  CHECK(criterion_value(C, Criterion::D) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(criterion_value(C, Criterion::E) == doctest::Approx(4.0));

  const Mat I2 = Mat::Identity(2, 2);
  CHECK(criterion_value(I2, Criterion::A) == doctest::Approx(2.0));
  CHECK(criterion_value(I2, Criterion::D) == doctest::Approx(1.0));
  CHECK(criterion_value(I2, Criterion::E) == doctest::Approx(1.0));

  // Random PSD: determinant equals the eigenvalue product.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Mat A(2, 2);
  A << g(rng), g(rng), g(rng), g(rng);
  const Mat P = A * A.transpose() + 0.1 * I2;
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  const double prod = es.eigenvalues()(0) * es.eigenvalues()(1);
  CHECK(rel_diff(criterion_value(P, Criterion::D), prod) < 1e-10);

  Mat bad = C;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(criterion_value(bad, Criterion::A), NonFiniteC);
}

TEST_CASE("evaluate_design: full design feasible, undersized design infeasible") {
  const Instance in = surrogate_instance(11);

  const DesignEvaluation full = evaluate_design(in.model, in.layout, in.tensor,
                                                Eigen::VectorXi::Ones(3), in.p0, in.cells);
  CHECK(full.feasible);
  CHECK(full.psi_a > 0.0);
  CHECK(full.psi_d > 0.0);
  CHECK(full.psi_e > 0.0);

  // One active sensor: below n_p = 2, infeasible with no estimate.
  Eigen::VectorXi one = Eigen::VectorXi::Zero(3);
  one[0] = 1;
  const DesignEvaluation under =
      evaluate_design(in.model, in.layout, in.tensor, one, in.p0, in.cells);
  CHECK_FALSE(under.feasible);
  CHECK(under.psi_e == 0.0);
  CHECK(under.estimate.p.size() == 0);
}

TEST_CASE("evaluate_design: criteria sandwich psi_E <= psi_A <= n_p psi_E") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Instance in = surrogate_instance(seed);
    for (unsigned mask = 3; mask < 8; ++mask) {
      Eigen::VectorXi omega(3);
      for (int k = 0; k < 3; ++k) omega[k] = (mask >> k) & 1u;
      if (omega.sum() < 2) continue;
      const DesignEvaluation ev =
          evaluate_design(in.model, in.layout, in.tensor, omega, in.p0, in.cells);
      if (!ev.feasible) continue;
      CHECK(ev.psi_e <= ev.psi_a * (1 + 1e-12));
      CHECK(ev.psi_a <= 2 * ev.psi_e * (1 + 1e-12));
    }
  }
}

TEST_CASE("information monotonicity: dropping a sensor never improves the criteria") {
  // With p held fixed at the full-design optimum and S = 0 (linear variant,
  // unperturbed data), the information matrix can only lose rows.
  const PressSurrogate s = PressSurrogate::default_demo(false);
  const StateEquationModel model = assemble_quasistatic(s);
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(3);
  layout.sigma = Vec(3);
  layout.sigma << 1.518e-5, 4.895e-6, 3.904e-6;
  const auto tensor = exact_tensor(model, s.nominal_p, default_schedule(), 2);
  CellSet cells;
  for (int i = 0; i < 2; ++i)
    for (int j = 1; j < tensor.n_q - 1; ++j) cells.cells.emplace_back(i, j);

  const Mat J = assemble_jacobian(model, layout, tensor, s.nominal_p, cells);
  auto crit = [&](const Eigen::VectorXi& omega) {
    SensorLayout l = layout;
    l.omega = omega;
    const Mat C = covariance(J, Mat::Zero(2, 2), l);
    return std::array<double, 3>{criterion_value(C, Criterion::A),
                                 criterion_value(C, Criterion::D),
                                 criterion_value(C, Criterion::E)};
  };
  const auto full = crit(Eigen::VectorXi::Ones(3));
  for (int drop = 0; drop < 3; ++drop) {
    Eigen::VectorXi omega = Eigen::VectorXi::Ones(3);
    omega[drop] = 0;
    // Skip reduced designs whose weighted Jacobian loses rank: their
    // covariance is not meaningful (the selector marks them infeasible).
    SensorLayout l = layout;
    l.omega = omega;
    const Mat WJ = omega_diagonal(l, cells.size()).asDiagonal() * J;
    Eigen::JacobiSVD<Mat> svd(WJ);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) < 1e-10 * sv(0)) continue;
    const auto reduced = crit(omega);
    for (int c = 0; c < 3; ++c) CHECK(reduced[c] >= full[c] * (1 - 1e-10));
  }
}

TEST_CASE("exhaustive_select: equals a brute-force oracle over 2-subsets") {
  const Instance in = surrogate_instance(17);
  CardinalityConstraint cst;
  cst.min_sensors = 2;
  cst.max_sensors = 2;

  // Independent per-subset evaluation.
  double best_val = 1e300;
  Eigen::VectorXi best_omega;
  for (int drop = 2; drop >= 0; --drop) {
    Eigen::VectorXi omega = Eigen::VectorXi::Ones(3);
    omega[drop] = 0;
    const DesignEvaluation ev =
        evaluate_design(in.model, in.layout, in.tensor, omega, in.p0, in.cells);
    if (ev.feasible && (ev.psi_e < best_val)) {
      best_val = ev.psi_e;
      best_omega = omega;
    }
  }

  const DesignEvaluation sel = exhaustive_select(in.model, in.layout, in.tensor, cst,
                                                 Criterion::E, in.p0, in.cells);
  REQUIRE(best_omega.size() == 3);
  CHECK(sel.omega == best_omega);
  CHECK(sel.psi_e == doctest::Approx(best_val).epsilon(1e-12));
}

TEST_CASE("exhaustive_select: forcing all sensors on returns the full design") {
  const Instance in = surrogate_instance(23);
  CardinalityConstraint cst;
  cst.min_sensors = 3;
  cst.max_sensors = 3;
  const DesignEvaluation sel = exhaustive_select(in.model, in.layout, in.tensor, cst,
                                                 Criterion::A, in.p0, in.cells);
  CHECK(sel.omega.sum() == 3);
}

TEST_CASE("exhaustive_select: determinism and infeasibility guard") {
  const Instance in = surrogate_instance(29);
  CardinalityConstraint cst;
  cst.min_sensors = 2;
  cst.max_sensors = 3;
  const DesignEvaluation a = exhaustive_select(in.model, in.layout, in.tensor, cst,
                                               Criterion::E, in.p0, in.cells);
  const DesignEvaluation b = exhaustive_select(in.model, in.layout, in.tensor, cst,
                                               Criterion::E, in.p0, in.cells);
  CHECK(a.omega == b.omega);
  CHECK(a.omega.sum() >= 2);  // never returns an undersized design

  CardinalityConstraint bad;
  bad.min_sensors = 3;
  bad.max_sensors = 2;
  CHECK_THROWS_AS(exhaustive_select(in.model, in.layout, in.tensor, bad, Criterion::E,
                                    in.p0, in.cells),
                  ConfigError);
}

TEST_CASE("greedy_select: n_S = n_p returns all-on immediately") {
  // Two sensors, two parameters: no slack to eliminate.
  const PressSurrogate base = PressSurrogate::default_demo(false);
  PressSurrogate s = base;
  s.sensor_dofs = {base.sensor_dofs[0], base.sensor_dofs[2]};
  const StateEquationModel model = assemble_quasistatic(s);
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(2);
  layout.sigma = Vec(2);
  layout.sigma << 1.518e-5, 3.904e-6;
  const auto tensor =
      generate_synthetic_measurements(s, s.nominal_p, default_schedule(), layout, 2, 31);
  CellSet cells;
  for (int i = 0; i < 2; ++i)
    for (int j = 1; j < tensor.n_q - 1; ++j) cells.cells.emplace_back(i, j);
  CardinalityConstraint cst;
  cst.min_sensors = 2;
  cst.max_sensors = 2;
  const DesignEvaluation sel =
      greedy_select(model, layout, tensor, cst, Criterion::E, s.nominal_p, cells);
  CHECK(sel.omega.sum() == 2);
  CHECK(sel.elimination_trace.size() == 1);
}

TEST_CASE("greedy_select: matches exhaustive on the 3-sensor surrogate") {
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    const Instance in = surrogate_instance(seed);
    CardinalityConstraint cst;
    cst.min_sensors = 2;
    cst.max_sensors = 2;
    const DesignEvaluation ex = exhaustive_select(in.model, in.layout, in.tensor, cst,
                                                  Criterion::E, in.p0, in.cells);
    const DesignEvaluation gr = greedy_select(in.model, in.layout, in.tensor, cst,
                                              Criterion::E, in.p0, in.cells);
    CHECK(gr.omega == ex.omega);
    // Greedy warm-starts the fit from the full design's estimate, so the two
    // evaluations of the same design agree only to the fit tolerance.
    CHECK(rel_diff(ex.criterion(Criterion::E), gr.criterion(Criterion::E)) < 1e-3);
    // The elimination trace records one value per accepted design.
    CHECK(gr.elimination_trace.size() == 2);
  }
}

TEST_CASE("greedy_select vs exhaustive on random linear instances") {
  // Small linear regression designs with random sensor gains; greedy agrees
  // with enumeration whenever final criteria coincide, and never beats it.
  std::mt19937_64 rng(123);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    StateEquationModel m;
    m.d_y = 2;
    m.n_p = 2;
    m.d_q = 1;
    m.n_s = 4;
    Mat G(4, 2);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 2; ++c) G(r, c) = g(rng);
    m.eval_E = [](const Vec& y, const Vec& p, const Vec& q) {
      Vec e(2);
      e[0] = y[0] - p[0] * q[0];
      e[1] = y[1] - p[1] * q[0];
      return e;
    };
    m.observe = [G](const Vec& y, const Vec&, const Vec&) { return Vec(G * y); };

    SensorLayout layout;
    layout.omega = Eigen::VectorXi::Ones(4);
    layout.sigma = Vec::Constant(4, 0.1);
    const InputSchedule sched = scalar_schedule({1.0, 2.0, 3.0});
    Vec p_true(2);
    p_true << 1.0 + 0.2 * trial, 2.0;
    const auto tensor = exact_tensor(m, p_true, sched, 1);
    const CellSet cells = CellSet::all(1, 3);

    CardinalityConstraint cst;
    cst.min_sensors = 2;
    cst.max_sensors = 2;
    DesignEvaluation ex, gr;
    try {
      ex = exhaustive_select(m, layout, tensor, cst, Criterion::E, p_true, cells);
      gr = greedy_select(m, layout, tensor, cst, Criterion::E, p_true, cells);
    } catch (const NoFeasibleDesign&) {
      continue;  // a random gain matrix may make every 2-subset singular
    }
    CHECK(ex.criterion(Criterion::E) <= gr.criterion(Criterion::E) * (1 + 1e-9));
    if (rel_diff(ex.criterion(Criterion::E), gr.criterion(Criterion::E)) < 1e-12)
      CHECK(gr.omega == ex.omega);
  }
}
