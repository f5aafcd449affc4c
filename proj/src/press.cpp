// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include "udet/press.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace udet {

// ---------------------------------------------------------------------------
// Elements.

namespace {

void check_dof(int dof, int d_y, const char* what) {
  if (dof < -1 || dof >= d_y) throw InvalidModel(std::string(what) + ": coordinate index out of range");
}

Vec incidence_for(int dof_a, int dof_b, int d_y) {
  Vec a = Vec::Zero(d_y);
  if (dof_a >= 0) a[dof_a] += 1.0;
  if (dof_b >= 0) a[dof_b] -= 1.0;
  return a;
}

}  // namespace

void BarElement::validate(int d_y, int n_p) const {
  if (!(k > 0.0)) throw InvalidModel("BarElement: stiffness must be positive");
  if (m1 < 0.0 || m2 < 0.0) throw InvalidModel("BarElement: masses must be nonnegative");
  check_dof(dof_a, d_y, "BarElement");
  check_dof(dof_b, d_y, "BarElement");
  if (dof_a == -1 && dof_b == -1) throw InvalidModel("BarElement: both ends grounded");
  if (parameter < -1 || parameter >= n_p) throw InvalidModel("BarElement: bad parameter slot");
}

Vec BarElement::incidence(int d_y) const { return incidence_for(dof_a, dof_b, d_y); }

void JointElement::validate(int d_y, int n_p) const {
  if (!(k > 0.0)) throw InvalidModel("JointElement: stiffness must be positive");
  check_dof(dof_a, d_y, "JointElement");
  check_dof(dof_b, d_y, "JointElement");
  if (dof_a == -1 && dof_b == -1) throw InvalidModel("JointElement: both ends grounded");
  if (parameter < -1 || parameter >= n_p) throw InvalidModel("JointElement: bad parameter slot");
}

Vec JointElement::incidence(int d_y) const { return incidence_for(dof_a, dof_b, d_y); }

void BeamElement::validate(int d_y) const {
  if (!(k_alpha > 0.0 && k_beta > 0.0 && length > 0.0))
    throw InvalidModel("BeamElement: k_alpha, k_beta, length must be positive");
  for (const auto& node : node_dofs)
    for (int dof : node) check_dof(dof, d_y, "BeamElement");
}

Mat BeamElement::element_stiffness() const {
  Mat K = Mat::Zero(6, 6);
  // Axial part on (u1, u2).
  K(0, 0) = k_alpha;
  K(0, 3) = K(3, 0) = -k_alpha;
  K(3, 3) = k_alpha;
  // Bending part k_beta * v v^T with v = (1, l, -1, l) on (w1, th1, w2, th2).
  Eigen::Vector4d v(1.0, length, -1.0, length);
  const std::array<int, 4> idx = {1, 2, 4, 5};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) K(idx[i], idx[j]) += k_beta * v[i] * v[j];
  return K;
}

Mat BeamElement::assembled_stiffness() const {
  const Mat Ke = element_stiffness();
  Mat K = Mat::Zero(9, 9);
  for (int e = 0; e < 2; ++e) {
    const int base = 3 * e;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) K(base + i, base + j) += Ke(i, j);
  }
  return K;
}

Mat BeamElement::global_stiffness(int d_y) const {
  const Mat K9 = assembled_stiffness();
  std::array<int, 9> map{};
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 3; ++c) map[3 * n + c] = node_dofs[n][c];
  Mat K = Mat::Zero(d_y, d_y);
  for (int i = 0; i < 9; ++i) {
    if (map[i] < 0) continue;
    for (int j = 0; j < 9; ++j)
      if (map[j] >= 0) K(map[i], map[j]) += K9(i, j);
  }
  return K;
}

// ---------------------------------------------------------------------------
// Friction.

double coulomb_friction(double q_c, int rate_sign) {
  if (q_c < 0.0) throw NegativeInput("coulomb_friction: q_c must be nonnegative");
  if (rate_sign > 0) return q_c;
  if (rate_sign < 0) return -q_c;
  return 0.0;
}

MemoryState MemoryState::initial() {
  MemoryState s;
  s.q_min = std::numeric_limits<double>::infinity();
  s.q_max = -std::numeric_limits<double>::infinity();
  s.q_prev = 0.0;
  s.initialized = true;
  return s;
}

MemoryState memory_update(const MemoryState& state, double q_p, int rate_sign,
                          MemoryVariant variant) {
  if (!state.initialized) throw UninitializedState("memory_update: state not initialized");
  MemoryState next = state;
  if (rate_sign >= 0) {
    next.q_min = std::min(q_p, state.q_min);
    next.q_max = q_p;
  } else {
    next.q_min = q_p;
    next.q_max = variant == MemoryVariant::LiteralPaper ? std::min(q_p, state.q_max)
                                                        : std::max(q_p, state.q_max);
  }
  next.q_prev = q_p;
  return next;
}

MemoryArctanModel MemoryArctanModel::default_basis(double force_scale, int units) {
  if (!(force_scale > 0.0) || units < 2 || units % 2 != 0)
    throw ConfigError("MemoryArctanModel: need positive force scale and an even unit count");
  MemoryArctanModel m;
  const int half = units / 2;
  m.input_weights = Mat::Zero(units, 4);
  m.input_bias = Vec::Zero(units);
  m.output_weights = Vec::Zero(units);
  // Log-spaced scalings over the force range; saturation points span roughly
  // [force_scale / 30, force_scale * 4].
  for (int i = 0; i < half; ++i) {
    const double s = (30.0 / force_scale) * std::pow(0.2, i);
    // Feature q_now - q_min: active on the ascending branch.
    m.input_weights(i, 0) = s;
    m.input_weights(i, 2) = -s;
    // Feature q_max - q_now: active on the descending branch.
    m.input_weights(half + i, 0) = -s;
    m.input_weights(half + i, 3) = s;
  }
  return m;
}

Vec MemoryArctanModel::activations(double q_now, double q_prev, double q_min,
                                   double q_max) const {
  Eigen::Vector4d u(q_now, q_prev, q_min, q_max);
  Vec z = input_weights * u + input_bias;
  for (int i = 0; i < z.size(); ++i) z[i] = std::atan(z[i]);
  return z;
}

double MemoryArctanModel::evaluate(const MemoryState& state, double q_now,
                                   double q_prev) const {
  if (!trained) throw UntrainedModel("MemoryArctanModel: evaluate before training");
  if (!state.initialized) throw UninitializedState("MemoryArctanModel: uninitialized state");
  return output_weights.dot(activations(q_now, q_prev, state.q_min, state.q_max)) +
         output_bias;
}

std::vector<double> friction_series(const FrictionModel& model,
                                    const std::vector<double>& q_p,
                                    const std::vector<Phase>& phases) {
  if (q_p.size() != phases.size())
    throw DimensionMismatch("friction_series: force/phase length mismatch");
  std::vector<double> out(q_p.size(), 0.0);
  if (model.kind == FrictionKind::None) return out;
  MemoryState state = MemoryState::initial();
  for (size_t t = 0; t < q_p.size(); ++t) {
    const int rate = phases[t] == Phase::Loading ? +1 : -1;
    const double q_prev = t == 0 ? q_p[0] : q_p[t - 1];
    state = memory_update(state, q_p[t], rate, model.variant);
    if (model.kind == FrictionKind::Coulomb)
      out[t] = coulomb_friction(model.q_c, rate);
    else
      out[t] = model.memory.evaluate(state, q_p[t], q_prev);
  }
  return out;
}

MemoryArctanModel train_memory_friction(const MemoryArctanModel& basis,
                                        const std::vector<double>& q_p,
                                        const std::vector<Phase>& phases,
                                        const std::vector<double>& residual_friction,
                                        MemoryVariant variant) {
  const auto n = q_p.size();
  if (n != phases.size() || n != residual_friction.size())
    throw DimensionMismatch("train_memory_friction: series length mismatch");
  if (n < 2) throw DegenerateTraining("train_memory_friction: series too short");
  const auto [lo, hi] = std::minmax_element(q_p.begin(), q_p.end());
  if (!(*hi > *lo))
    throw DegenerateTraining("train_memory_friction: constant force series");

  const int units = basis.units();
  Mat phi(n, units + 1);
  MemoryState state = MemoryState::initial();
  for (size_t t = 0; t < n; ++t) {
    const int rate = phases[t] == Phase::Loading ? +1 : -1;
    const double q_prev = t == 0 ? q_p[0] : q_p[t - 1];
    state = memory_update(state, q_p[t], rate, variant);
    phi.row(t).head(units) =
        basis.activations(q_p[t], q_prev, state.q_min, state.q_max).transpose();
    phi(t, units) = 1.0;
  }
  Eigen::Map<const Vec> rhs(residual_friction.data(), n);
  Eigen::ColPivHouseholderQR<Mat> qr(phi);
  if (qr.rank() < 2)
    throw DegenerateTraining("train_memory_friction: feature matrix rank deficient");
  const Vec w = qr.solve(rhs);

  MemoryArctanModel trained = basis;
  trained.output_weights = w.head(units);
  trained.output_bias = w[units];
  trained.trained = true;
  return trained;
}

double train_coulomb_friction(const std::vector<Phase>& phases,
                              const std::vector<double>& residual_friction) {
  if (phases.size() != residual_friction.size())
    throw DimensionMismatch("train_coulomb_friction: series length mismatch");
  if (phases.empty()) throw DegenerateTraining("train_coulomb_friction: empty series");
  double acc = 0.0;
  for (size_t t = 0; t < phases.size(); ++t)
    acc += (phases[t] == Phase::Loading ? 1.0 : -1.0) * residual_friction[t];
  return std::max(0.0, acc / static_cast<double>(phases.size()));
}

// ---------------------------------------------------------------------------
// Surrogate assembly.

namespace {

struct Spring {
  Vec a;        // incidence, elongation xi = a^T y
  double k;     // fixed stiffness, ignored when param >= 0
  int param;    // free-parameter slot or -1
  double gamma; // cubic hardening coefficient
};

std::vector<Spring> collect_springs(const PressSurrogate& s) {
  std::vector<Spring> springs;
  springs.reserve(s.bars.size() + s.joints.size());
  for (const auto& b : s.bars)
    springs.push_back({b.incidence(s.d_y), b.k, b.parameter, s.nl_gamma});
  for (const auto& j : s.joints)
    springs.push_back({j.incidence(s.d_y), j.k, j.parameter, 0.0});
  return springs;
}

}  // namespace

Mat PressSurrogate::stiffness(const Vec& p) const {
  if (p.size() != n_p) throw DimensionMismatch("PressSurrogate: parameter size mismatch");
  Mat K = Mat::Zero(d_y, d_y);
  for (const auto& s : collect_springs(*this)) {
    const double k = s.param >= 0 ? p[s.param] : s.k;
    K.noalias() += k * s.a * s.a.transpose();
  }
  for (const auto& beam : beams) K += beam.global_stiffness(d_y);
  return K;
}

void PressSurrogate::validate() const {
  if (d_y < 1) throw InvalidModel("PressSurrogate: d_y must be positive");
  if (n_p < 0 || nominal_p.size() != n_p)
    throw InvalidModel("PressSurrogate: nominal_p size mismatch");
  for (int i = 0; i < n_p; ++i)
    if (!(nominal_p[i] > 0.0)) throw InvalidModel("PressSurrogate: nonpositive nominal stiffness");
  for (const auto& b : bars) b.validate(d_y, n_p);
  for (const auto& j : joints) j.validate(d_y, n_p);
  for (const auto& bm : beams) bm.validate(d_y);
  check_dof(load_dof, d_y, "PressSurrogate load node");
  if (load_dof < 0) throw InvalidModel("PressSurrogate: load node must be free");
  for (int dof : sensor_dofs) {
    check_dof(dof, d_y, "PressSurrogate sensor");
    if (dof < 0) throw InvalidModel("PressSurrogate: sensors must read free coordinates");
  }
  if (gravity_load.size() != 0 && gravity_load.size() != d_y)
    throw InvalidModel("PressSurrogate: gravity load size mismatch");

  // Every free parameter slot must drive at least one element.
  std::vector<bool> used(n_p, false);
  for (const auto& b : bars)
    if (b.parameter >= 0) used[b.parameter] = true;
  for (const auto& j : joints)
    if (j.parameter >= 0) used[j.parameter] = true;
  for (int i = 0; i < n_p; ++i)
    if (!used[i]) throw InvalidModel("PressSurrogate: unused parameter slot");

  const Mat K = stiffness(nominal_p);
  Eigen::FullPivLU<Mat> lu(K);
  if (!lu.isInvertible())
    throw InvalidTopology("PressSurrogate: structure disconnected, stiffness singular");
}

StateEquationModel assemble_quasistatic(const PressSurrogate& surrogate) {
  surrogate.validate();
  struct Ctx {
    std::vector<Spring> springs;
    Mat K_fixed;  // beams (parameter-free, linear)
    Vec gravity;
    int load_dof;
    std::vector<int> sensors;
    int d_y;
  };
  auto ctx = std::make_shared<Ctx>();
  ctx->springs = collect_springs(surrogate);
  ctx->K_fixed = Mat::Zero(surrogate.d_y, surrogate.d_y);
  for (const auto& beam : surrogate.beams)
    ctx->K_fixed += beam.global_stiffness(surrogate.d_y);
  ctx->gravity = surrogate.gravity_load.size() == surrogate.d_y
                     ? surrogate.gravity_load
                     : Vec::Zero(surrogate.d_y);
  ctx->load_dof = surrogate.load_dof;
  ctx->sensors = surrogate.sensor_dofs;
  ctx->d_y = surrogate.d_y;

  auto k_of = [](const Ctx& c, const Spring& s, const Vec& p) {
    return s.param >= 0 ? p[s.param] : s.k;
  };

  StateEquationModel model;
  model.d_y = surrogate.d_y;
  model.n_p = surrogate.n_p;
  model.d_q = 1;
  model.n_s = static_cast<int>(surrogate.sensor_dofs.size());

  model.eval_E = [ctx, k_of](const Vec& y, const Vec& p, const Vec& q) {
    Vec E = ctx->K_fixed * y + ctx->gravity;
    for (const auto& s : ctx->springs) {
      const double xi = s.a.dot(y);
      E += k_of(*ctx, s, p) * (xi + s.gamma * xi * xi * xi) * s.a;
    }
    E[ctx->load_dof] -= q[0];
    return E;
  };
  model.dE_dy = [ctx, k_of](const Vec& y, const Vec& p, const Vec&) {
    Mat K = ctx->K_fixed;
    for (const auto& s : ctx->springs) {
      const double xi = s.a.dot(y);
      K.noalias() +=
          k_of(*ctx, s, p) * (1.0 + 3.0 * s.gamma * xi * xi) * s.a * s.a.transpose();
    }
    return K;
  };
  model.dE_dp = [ctx](const Vec& y, const Vec& p, const Vec&) {
    Mat D = Mat::Zero(ctx->d_y, p.size());
    for (const auto& s : ctx->springs) {
      if (s.param < 0) continue;
      const double xi = s.a.dot(y);
      D.col(s.param) += (xi + s.gamma * xi * xi * xi) * s.a;
    }
    return D;
  };
  model.d2E_yy = [ctx, k_of](const Vec& y, const Vec& p, const Vec&, const Vec& u,
                             const Vec& v) {
    Vec out = Vec::Zero(ctx->d_y);
    for (const auto& s : ctx->springs) {
      if (s.gamma == 0.0) continue;
      const double xi = s.a.dot(y);
      out += k_of(*ctx, s, p) * 6.0 * s.gamma * xi * s.a.dot(u) * s.a.dot(v) * s.a;
    }
    return out;
  };
  model.d2E_yp = [ctx](const Vec& y, const Vec&, const Vec&, const Vec& u, const Vec& hp) {
    Vec out = Vec::Zero(ctx->d_y);
    for (const auto& s : ctx->springs) {
      if (s.param < 0) continue;
      const double xi = s.a.dot(y);
      out += hp[s.param] * (1.0 + 3.0 * s.gamma * xi * xi) * s.a.dot(u) * s.a;
    }
    return out;
  };
  model.d2E_pp = [ctx](const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Vec::Zero(ctx->d_y);
  };

  model.observe = [ctx](const Vec& y, const Vec&, const Vec&) {
    Vec h(ctx->sensors.size());
    for (size_t k = 0; k < ctx->sensors.size(); ++k) h[k] = y[ctx->sensors[k]];
    return h;
  };
  model.dh_dy = [ctx](const Vec&, const Vec&, const Vec&) {
    Mat H = Mat::Zero(ctx->sensors.size(), ctx->d_y);
    for (size_t k = 0; k < ctx->sensors.size(); ++k) H(k, ctx->sensors[k]) = 1.0;
    return H;
  };
  model.dh_dp = [ctx](const Vec&, const Vec& p, const Vec&) {
    return Mat::Zero(ctx->sensors.size(), p.size());
  };
  auto zero_s = [ctx](const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Vec::Zero(ctx->sensors.size());
  };
  model.d2h_yy = zero_s;
  model.d2h_yp = zero_s;
  model.d2h_pp = zero_s;
  return model;
}

PressSurrogate PressSurrogate::default_demo(bool nonlinear) {
  PressSurrogate s;
  s.d_y = 7;
  s.n_p = 2;
  // Coordinates: 0 ram vertical, 1 table vertical, 2 bed vertical,
  // 3 frame-head horizontal (lever axial), 4 lever transverse at the head,
  // 5 lever transverse at mid, 6 lever rotation at mid.
  s.bars = {
      {7e5, 0.0, 0.0, 0, 1, 0},    // drive-train bar, k5 analogue (free)
      {3.5e5, 0.0, 0.0, 1, 2, 1},  // bed bar, k7 analogue (free)
      {3.5e6, 0.0, 0.0, 2, -1, -1},// frame compliance to ground
      {2.1e6, 0.0, 0.0, 1, 4, -1}, // table-to-lever link
  };
  // The transverse supports at dofs 5 and 6 keep the lever branch load
  // bearing: each bending block is rank one, so without them the chain
  // condenses to zero stiffness at dof 4 and the bar into it goes slack.
  s.joints = {
      {1.75e6, 0, 3, -1},  // ram bearing to frame head
      {1.05e6, 5, -1, -1}, // lever mid support, transverse
      {7e5, 6, -1, -1},    // lever mid support, rotational
  };
  BeamElement lever;
  lever.k_alpha = 2.8e6;
  lever.k_beta = 1.4e6;
  lever.length = 0.5;
  lever.node_dofs = {{{3, 4, -1}, {-1, 5, 6}, {-1, -1, -1}}};
  s.beams = {lever};
  s.load_dof = 0;
  s.sensor_dofs = {0, 3, 2};  // D vertical, F horizontal, B0 vertical analogues
  s.nominal_p = Vec(2);
  s.nominal_p << 7e5, 3.5e5;
  s.nl_gamma = nonlinear ? 7e4 : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Schedules and synthetic data.

InputSchedule default_schedule(double q_max, int n_up, int n_down) {
  if (n_up < 2 || n_down < 1) throw ConfigError("default_schedule: too few setpoints");
  InputSchedule sched;
  for (int j = 0; j < n_up; ++j) {
    Vec q(1);
    q[0] = q_max * j / (n_up - 1);
    sched.inputs.push_back(q);
    sched.setpoints.push_back(q);
    sched.phases.push_back(Phase::Loading);
  }
  for (int j = 1; j <= n_down; ++j) {
    Vec q(1);
    q[0] = q_max * (n_down - j) / n_down;
    sched.inputs.push_back(q);
    sched.setpoints.push_back(q);
    sched.phases.push_back(Phase::Unloading);
  }
  return sched;
}

namespace {

std::vector<double> scalar_forces(const InputSchedule& sched, bool prefer_setpoints) {
  const auto& src = prefer_setpoints && sched.has_setpoints() ? sched.setpoints : sched.inputs;
  std::vector<double> q(src.size());
  for (size_t j = 0; j < src.size(); ++j) {
    if (src[j].size() != 1)
      throw DimensionMismatch("press schedule: expected scalar force inputs");
    q[j] = src[j][0];
  }
  return q;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

InputSchedule effective_schedule(const PressSurrogate& surrogate,
                                 const InputSchedule& nominal) {
  nominal.validate();
  const auto q_p = scalar_forces(nominal, true);
  const auto fric = friction_series(surrogate.friction, q_p, nominal.phases);
  InputSchedule eff = nominal;
  if (!eff.has_setpoints()) eff.setpoints = eff.inputs;
  for (size_t j = 0; j < q_p.size(); ++j) {
    Vec q(1);
    q[0] = q_p[j] - fric[j];
    eff.inputs[j] = q;
  }
  return eff;
}

MeasurementTensor with_effective_inputs(const PressSurrogate& surrogate,
                                        MeasurementTensor tensor) {
  tensor.schedule = effective_schedule(surrogate, tensor.schedule);
  return tensor;
}

MeasurementTensor generate_synthetic_measurements(const PressSurrogate& surrogate,
                                                  const Vec& p_true,
                                                  const InputSchedule& schedule,
                                                  const SensorLayout& layout, int n_m,
                                                  std::uint64_t seed,
                                                  double force_jitter_rel) {
  surrogate.validate();
  layout.validate();
  schedule.validate();
  if (n_m < 1) throw ConfigError("generate_synthetic_measurements: n_m must be >= 1");
  if (layout.n_s() != static_cast<int>(surrogate.sensor_dofs.size()))
    throw DimensionMismatch("generate_synthetic_measurements: layout/sensor mismatch");

  const StateEquationModel model = assemble_quasistatic(surrogate);
  const auto setpoints = scalar_forces(schedule, true);
  const int n_q = schedule.size();
  const int n_s = layout.n_s();

  MeasurementTensor tensor;
  tensor.n_m = n_m;
  tensor.n_q = n_q;
  tensor.n_s = n_s;
  tensor.schedule = schedule;
  if (!tensor.schedule.has_setpoints()) tensor.schedule.setpoints = tensor.schedule.inputs;
  tensor.z.assign(static_cast<size_t>(n_m) * n_q * n_s, 0.0);
  tensor.realized = Mat::Zero(n_m, n_q);

  for (int i = 0; i < n_m; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> realized(n_q);
    for (int j = 0; j < n_q; ++j)
      realized[j] = setpoints[j] * (1.0 + force_jitter_rel * gauss(rng));
    const auto fric = friction_series(surrogate.friction, realized, schedule.phases);

    Vec y = Vec::Zero(model.d_y);
    for (int j = 0; j < n_q; ++j) {
      Vec q(1);
      q[0] = realized[j] - fric[j];
      y = solve_state(model, p_true, q, y);
      const Vec h = model.observe(y, p_true, q);
      tensor.realized(i, j) = realized[j];
      for (int k = 0; k < n_s; ++k)
        tensor.at(i, j, k) = h[k] + layout.sigma[k] * gauss(rng);
    }
  }
  return tensor;
}

MeasurementTensor correct_measurements(const MeasurementTensor& tensor,
                                       const std::vector<double>& setpoints) {
  tensor.validate();
  if (static_cast<int>(setpoints.size()) != tensor.n_q)
    throw DimensionMismatch("correct_measurements: setpoint count mismatch");
  MeasurementTensor out = tensor;
  if (out.realized.size() == 0) out.realized = Mat::Zero(tensor.n_m, tensor.n_q);
  for (int i = 0; i < tensor.n_m; ++i) {
    for (int j = 0; j < tensor.n_q; ++j) {
      const double q_d = setpoints[j];
      if (q_d == 0.0) continue;  // zero-setpoint inputs are excluded downstream
      const double q = tensor.realized.size() != 0 ? tensor.realized(i, j) : q_d;
      if (q == 0.0)
        throw ZeroRealizedForce("correct_measurements: realized force is zero");
      const double ratio = q_d / q;
      for (int k = 0; k < tensor.n_s; ++k) out.at(i, j, k) = tensor.at(i, j, k) * ratio;
      out.realized(i, j) = q_d;
    }
  }
  return out;
}

std::vector<double> extract_friction_residuals(const PressSurrogate& surrogate,
                                               const Vec& p_hat,
                                               const SensorLayout& layout,
                                               const MeasurementTensor& tensor) {
  surrogate.validate();
  layout.validate();
  tensor.validate();
  if (layout.n_s() != tensor.n_s)
    throw DimensionMismatch("extract_friction_residuals: sensor count mismatch");

  const StateEquationModel model = assemble_quasistatic(surrogate);
  const auto setpoints = scalar_forces(tensor.schedule, true);
  const double q_ref =
      std::max(1.0, std::abs(*std::max_element(setpoints.begin(), setpoints.end(),
                                               [](double a, double b) {
                                                 return std::abs(a) < std::abs(b);
                                               })));
  // Unit-force sensor response of the linear inverse model at p_hat.
  Vec q(1);
  q[0] = q_ref;
  const Vec y_ref = solve_state(model, p_hat, q, Vec::Zero(model.d_y));
  const Vec c = model.observe(y_ref, p_hat, q) / q_ref;

  double denom = 0.0;
  for (int k = 0; k < tensor.n_s; ++k)
    if (layout.omega[k]) denom += c[k] * c[k] / (layout.sigma[k] * layout.sigma[k]);
  if (!(denom > 0.0))
    throw DegenerateTraining("extract_friction_residuals: no sensor response");

  std::vector<double> residual(tensor.n_q, 0.0);
  for (int j = 0; j < tensor.n_q; ++j) {
    double acc = 0.0;
    for (int i = 0; i < tensor.n_m; ++i) {
      double num = 0.0;
      for (int k = 0; k < tensor.n_s; ++k)
        if (layout.omega[k])
          num += c[k] * tensor.at(i, j, k) / (layout.sigma[k] * layout.sigma[k]);
      acc += setpoints[j] - num / denom;
    }
    residual[j] = acc / tensor.n_m;
  }
  return residual;
}

}  // namespace udet
