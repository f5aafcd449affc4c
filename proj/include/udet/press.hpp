// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_PRESS_HPP
#define UDET_PRESS_HPP

#include <array>
#include <cstdint>
#include <memory>

#include "udet/estimation.hpp"

namespace udet {

// ---------------------------------------------------------------------------
// Structural elements. Elements act on scalar generalized coordinates; an
// index of -1 denotes a grounded (fixed) coordinate.

/// Axial spring between two coordinates, U = 1/2 k xi^2 with xi = y_a - y_b.
struct BarElement {
  double k = 0.0;
  double m1 = 0.0, m2 = 0.0;  // carried for completeness; quasi-static use ignores them
  int dof_a = -1, dof_b = -1;
  int parameter = -1;  // free-parameter slot overriding k, or -1 for fixed

  void validate(int d_y, int n_p) const;
  /// Incidence vector a with xi = a^T y.
  Vec incidence(int d_y) const;
};

/// Bearing spring, U = 1/2 k_joint dr^2; same kinematics as a bar.
struct JointElement {
  double k = 0.0;
  int dof_a = -1, dof_b = -1;
  int parameter = -1;

  void validate(int d_y, int n_p) const;
  Vec incidence(int d_y) const;
};

/// Flat two-element beam (lever) over three nodes with (u, w, theta) each.
/// Per-element 6x6 stiffness: axial k_alpha on (u1, u2) plus the rank-one
/// bending block k_beta * v v^T with v = (1, l, -1, l) on (w1, th1, w2, th2).
struct BeamElement {
  double k_alpha = 0.0;
  double k_beta = 0.0;
  double length = 0.0;
  double mass = 0.0;  // lumped m/4, m/2, m/4; unused quasi-statically
  // Global coordinate indices per node, (u, w, theta); -1 = fixed.
  std::array<std::array<int, 3>, 3> node_dofs{{{-1, -1, -1}, {-1, -1, -1}, {-1, -1, -1}}};

  void validate(int d_y) const;
  /// Single-element 6x6 stiffness over (u1, w1, th1, u2, w2, th2).
  Mat element_stiffness() const;
  /// Two elements joined over the three nodes: 9x9, symmetric PSD.
  Mat assembled_stiffness() const;
  /// Scatter of the 9x9 into the global d_y x d_y space (fixed rows dropped).
  Mat global_stiffness(int d_y) const;
};

// ---------------------------------------------------------------------------
// Friction models.

enum class FrictionKind { None, Coulomb, MemoryArctan };

/// Variant of the running min/max recursion for the hysteresis memory.
/// LiteralPaper keeps the published q_max update (min on the descending
/// branch); Corrected uses standard turning-point semantics (max).
enum class MemoryVariant { LiteralPaper, Corrected };

struct MemoryState {
  double q_min = 0.0;
  double q_max = 0.0;
  double q_prev = 0.0;
  bool initialized = false;

  static MemoryState initial();
};

/// q_fric = q_c * sign(rate); sign(0) := 0.
double coulomb_friction(double q_c, int rate_sign);

/// One step of the min/max memory recursion. Throws UninitializedState.
MemoryState memory_update(const MemoryState& state, double q_p, int rate_sign,
                          MemoryVariant variant = MemoryVariant::LiteralPaper);

/// mu(u) = w^T arctan(W_in u + b) + w0 over u = (q_now, q_prev, q_min, q_max).
/// Continuous and rate-independent by construction.
struct MemoryArctanModel {
  Mat input_weights;   // units x 4, fixed feature directions with scalings
  Vec input_bias;      // units
  Vec output_weights;  // units, set by training
  double output_bias = 0.0;
  bool trained = false;

  /// Eight arctan units: four log-spaced scalings on (q_now - q_min) and the
  /// same four on (q_max - q_now), biases zero. force_scale sets the range.
  static MemoryArctanModel default_basis(double force_scale, int units = 8);

  int units() const { return static_cast<int>(input_bias.size()); }
  /// Arctan unit activations for one feature vector.
  Vec activations(double q_now, double q_prev, double q_min, double q_max) const;
  /// Friction force; throws UntrainedModel when weights are absent.
  double evaluate(const MemoryState& state, double q_now, double q_prev) const;
};

struct FrictionModel {
  FrictionKind kind = FrictionKind::None;
  double q_c = 0.0;  // Coulomb level, >= 0
  MemoryArctanModel memory;
  MemoryVariant variant = MemoryVariant::LiteralPaper;
};

/// Friction force at every schedule index for a force sequence with phase
/// tags; the memory state is advanced strictly sequentially.
std::vector<double> friction_series(const FrictionModel& model,
                                    const std::vector<double>& q_p,
                                    const std::vector<Phase>& phases);

/// Linear least squares for the output layer (weights and bias) against a
/// residual friction series. Throws DegenerateTraining when the force
/// sequence has zero range (all arctan features constant).
MemoryArctanModel train_memory_friction(const MemoryArctanModel& basis,
                                        const std::vector<double>& q_p,
                                        const std::vector<Phase>& phases,
                                        const std::vector<double>& residual_friction,
                                        MemoryVariant variant = MemoryVariant::LiteralPaper);

/// Least-squares Coulomb level against a residual friction series; clamped
/// at zero.
double train_coulomb_friction(const std::vector<Phase>& phases,
                              const std::vector<double>& residual_friction);

// ---------------------------------------------------------------------------
// The reduced press surrogate.

/// Planar two-bar-plus-lever chain: drive train bar (k5 analogue) and bed
/// bar (k7 analogue) free; joint spring, link bar, frame compliance and the
/// lever beam fixed. Three displacement sensors (ram vertical, frame head
/// horizontal, bed vertical). The process force enters at load_dof; friction
/// is an additive force on the pressure-bar analogue, q = q_P - q_fric.
struct PressSurrogate {
  int d_y = 0;
  int n_p = 0;
  std::vector<BarElement> bars;
  std::vector<JointElement> joints;
  std::vector<BeamElement> beams;
  int load_dof = 0;
  std::vector<int> sensor_dofs;
  Vec nominal_p;
  Vec gravity_load;    // constant nodal load, default zero
  double nl_gamma = 0.0;  // cubic hardening coefficient on bars (1/m^2); 0 = linear
  FrictionModel friction;

  static PressSurrogate default_demo(bool nonlinear = false);

  /// Tangent stiffness at y = 0 (the linear stiffness matrix K(p)).
  Mat stiffness(const Vec& p) const;
  /// Throws InvalidTopology when K(nominal_p) is singular, InvalidModel on
  /// inconsistent indexing.
  void validate() const;
};

/// E(y, p, q) = K(p) y (+ cubic bar terms) + g - q * e_load with analytic
/// first and second derivative oracles; h(y) reads the sensor coordinates.
/// q is the scalar effective force already net of friction.
StateEquationModel assemble_quasistatic(const PressSurrogate& surrogate);

/// 15 ramp-up + 14 ramp-down setpoints including both zero endpoints.
InputSchedule default_schedule(double q_max = 1500.0, int n_up = 15, int n_down = 14);

/// Schedule whose inputs are the effective forces q_d - q_fric under the
/// surrogate's friction model, evaluated on the setpoint sequence.
InputSchedule effective_schedule(const PressSurrogate& surrogate,
                                 const InputSchedule& nominal);

/// Copy of the tensor with schedule inputs replaced by the effective forces
/// of this surrogate's friction model (candidate-model preprocessing).
MeasurementTensor with_effective_inputs(const PressSurrogate& surrogate,
                                        MeasurementTensor tensor);

/// Synthetic measurement tensor: per series, optional multiplicative force
/// jitter, friction from the surrogate's model on the realized forces, exact
/// state solves, then i.i.d. N(0, sigma_k^2) sensor noise. Deterministic in
/// (seed, n_m); realized forces are recorded in the tensor.
MeasurementTensor generate_synthetic_measurements(const PressSurrogate& surrogate,
                                                  const Vec& p_true,
                                                  const InputSchedule& schedule,
                                                  const SensorLayout& layout, int n_m,
                                                  std::uint64_t seed,
                                                  double force_jitter_rel = 0.0);

/// Setpoint correction z <- (q_d / q) z per cell; cells with zero setpoint
/// are left untouched (they are excluded downstream). Realized forces are
/// overwritten by the setpoints, making the operation idempotent.
/// Throws ZeroRealizedForce when a corrected cell has realized q = 0.
MeasurementTensor correct_measurements(const MeasurementTensor& tensor,
                                       const std::vector<double>& setpoints);

/// Per-input friction residuals q_d_j - q_eff_j, averaged over series, where
/// q_eff is the sigma-weighted least-squares effective force explaining the
/// sensors under the linear surrogate at p_hat ("inverse model" step).
std::vector<double> extract_friction_residuals(const PressSurrogate& surrogate,
                                               const Vec& p_hat,
                                               const SensorLayout& layout,
                                               const MeasurementTensor& tensor);

}  // namespace udet

#endif  // UDET_PRESS_HPP
