// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_IO_HPP
#define UDET_IO_HPP

#include <cstdint>
#include <string>

#include "json.hpp"
#include "udet/oed.hpp"
#include "udet/press.hpp"
#include "udet/stats.hpp"

namespace udet {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";
/// Displacements cross the I/O boundary in micrometers; internal unit is m.
inline constexpr double kDisplacementUnit = 1e-6;

// ---------------------------------------------------------------------------
// Measurement files. Delimited text, header
//   series,input_index,q_realized,q_setpoint,s1,...,s{n_S}
// one row per (series, input); forces in N, displacements in micrometers.

MeasurementTensor ingest_measurements(const std::string& path);
void export_measurements(const MeasurementTensor& tensor, const std::string& path);

// ---------------------------------------------------------------------------
// Surrogate configuration (element list, nominals, sensors, friction).

PressSurrogate surrogate_from_json(const Json& j);
Json surrogate_to_json(const PressSurrogate& s);

/// The built-in data generator: memory-hysteresis friction whose loading
/// branch rises toward ~220 N and whose unloading branch falls toward
/// ~-180 N, producing a pronounced loop at the default force range.
FrictionModel demo_hysteresis_friction(double q_max = 1500.0);

// ---------------------------------------------------------------------------
// Pipeline configuration.

struct GenerateConfig {
  bool enabled = true;
  int n_series = 6;
  double q_max = 1500.0;
  int n_up = 15, n_down = 14;
  double force_jitter_rel = 0.0;
  std::string truth_friction = "memory-arctan";  // none | coulomb | memory-arctan
  double truth_q_c = 150.0;                      // when truth_friction = coulomb
};

struct RunConfig {
  std::string model_id = "default-demo";  // or "custom" with surrogate below
  Json surrogate;                         // used when model_id == "custom"
  std::vector<std::string> friction_variants = {"none", "coulomb", "memory-arctan"};
  MemoryVariant memory_variant = MemoryVariant::Corrected;
  Vec sigma;  // per-sensor std deviations, meters; default set from model
  Criterion criterion = Criterion::E;
  int min_sensors = 0;  // 0 = n_p
  int max_sensors = 0;  // 0 = all sensors
  double tol = 0.05;
  std::vector<std::string> split_schemes = {"alternating-loading", "alternating-unloading",
                                            "loading-vs-unloading", "alternating-across-all"};
  std::vector<int> excluded_inputs = {};  // default: zero-setpoint endpoints
  std::uint64_t seed = 20260823;
  GenerateConfig generate;
  std::string measurements_path;  // used when generate.enabled == false
  std::string output_dir = ".";
  std::string screen_policy = "abort";  // abort | warn | skip
  int train_series = 4;                 // series used to train friction models
  bool reuse_initial_data = true;

  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::string& path);
  Json to_json() const;
  void validate() const;
};

/// Table-3 scheme suite by name; unknown names raise ConfigError.
std::vector<SplitScheme> make_schemes(const std::vector<std::string>& names,
                                      const std::vector<int>& excluded_inputs,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pipeline stages (shared by run_pipeline and the CLI subcommands).

/// Built-in or custom surrogate per the config, friction cleared.
PressSurrogate make_base_surrogate(const RunConfig& config);

/// All-on layout with config sigmas, or the demo defaults.
SensorLayout make_layout(const RunConfig& config, const PressSurrogate& base);

/// Generate-or-ingest followed by the setpoint correction.
MeasurementTensor acquire_measurements(const RunConfig& config, const PressSurrogate& base,
                                       const SensorLayout& layout);

/// Configured exclusions, or every zero-setpoint input when unset.
std::vector<int> excluded_inputs_for(const RunConfig& config,
                                     const MeasurementTensor& tensor);

/// Inverse-model friction training and the candidate model list (M1/M2/M3).
struct FrictionTraining {
  double q_c = 0.0;
  MemoryArctanModel memory;
  Estimate inverse_fit;
  std::vector<std::pair<std::string, PressSurrogate>> candidates;
};
FrictionTraining train_friction_candidates(const RunConfig& config,
                                           const PressSurrogate& base,
                                           const SensorLayout& layout,
                                           const MeasurementTensor& corrected,
                                           const std::vector<int>& excluded);

// ---------------------------------------------------------------------------
// Report.

struct ReportDocument {
  Json doc;

  std::string dump() const { return doc.dump(2) + "\n"; }
  void write(const std::string& path) const;
};

/// Full batch run: data acquisition (generate or ingest), setpoint
/// correction, friction training, sensor selection, normality screen, and
/// Algorithm 1 per candidate model. Writes report.json, screen.csv,
/// design.csv, verdicts.json and plot_<model>.csv under output_dir.
/// Deterministic: identical config and seeds give byte-identical outputs.
ReportDocument run_pipeline(const RunConfig& config);

}  // namespace udet

#endif  // UDET_IO_HPP
