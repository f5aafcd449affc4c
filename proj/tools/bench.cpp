// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

// Compares the OpenMP-parallel kernels against the serial reference paths
// kept for testing: schedule state solves, parameter identification, and
// exhaustive design enumeration.

#include <chrono>
#include <cstdio>

#include "udet/io.hpp"

using namespace udet;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

}  // namespace

int main() {
  const PressSurrogate base = PressSurrogate::default_demo(/*nonlinear=*/true);
  const StateEquationModel model = assemble_quasistatic(base);
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(3);
  layout.sigma = Vec(3);
  layout.sigma << 1.518e-5, 4.895e-6, 3.904e-6;

  // A long schedule makes the per-input parallelism visible.
  const InputSchedule schedule = default_schedule(1500.0, 256, 255);
  const int n_m = 6;
  PressSurrogate truth = base;
  truth.friction = demo_hysteresis_friction(1500.0);
  const MeasurementTensor tensor =
      generate_synthetic_measurements(truth, base.nominal_p, schedule, layout, n_m, 7);
  const CellSet cells = CellSet::all(n_m, tensor.n_q);

  std::printf("%-28s %12s %12s %8s\n", "kernel", "serial [ms]", "openmp [ms]", "speedup");

  {
    StateSolution serial, parallel;
    const double ts = time_best_of(3, [&] {
      serial = solve_schedule(model, base.nominal_p, schedule, Vec::Zero(model.d_y), {}, false);
    });
    const double tp = time_best_of(3, [&] {
      parallel = solve_schedule(model, base.nominal_p, schedule, Vec::Zero(model.d_y), {}, true);
    });
    double max_diff = 0.0;
    for (size_t j = 0; j < serial.states.size(); ++j)
      max_diff = std::max(max_diff, (serial.states[j] - parallel.states[j]).norm());
    std::printf("%-28s %12.2f %12.2f %7.2fx   (max state diff %.2e)\n", "solve_schedule",
                ts, tp, ts / tp, max_diff);
  }

  {
    FitOptions serial_opts, parallel_opts;
    serial_opts.parallel = false;
    parallel_opts.parallel = true;
    Estimate es, ep;
    const double ts = time_best_of(3, [&] {
      es = identify_parameters(model, layout, tensor, 1.2 * base.nominal_p, cells, serial_opts);
    });
    const double tp = time_best_of(3, [&] {
      ep = identify_parameters(model, layout, tensor, 1.2 * base.nominal_p, cells, parallel_opts);
    });
    std::printf("%-28s %12.2f %12.2f %7.2fx   (param diff %.2e)\n", "identify_parameters",
                ts, tp, ts / tp, (es.p - ep.p).norm());
  }

  {
    CardinalityConstraint constraint;
    constraint.min_sensors = 2;
    constraint.max_sensors = 3;
    FitOptions serial_opts, parallel_opts;
    serial_opts.parallel = false;
    parallel_opts.parallel = true;
    DesignEvaluation ds, dp;
    const double ts = time_best_of(2, [&] {
      ds = exhaustive_select(model, layout, tensor, constraint, Criterion::E,
                             base.nominal_p, cells, serial_opts);
    });
    const double tp = time_best_of(2, [&] {
      dp = exhaustive_select(model, layout, tensor, constraint, Criterion::E,
                             base.nominal_p, cells, parallel_opts);
    });
    std::printf("%-28s %12.2f %12.2f %7.2fx   (same omega: %s)\n", "exhaustive_select",
                ts, tp, ts / tp, ds.omega == dp.omega ? "yes" : "NO");
  }
  return 0;
}
