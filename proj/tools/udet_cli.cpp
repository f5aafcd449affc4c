// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "udet/io.hpp"

namespace {

using namespace udet;

// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
int classify(const std::exception& e) {
  int code = 4;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const InvalidModel*>(&e) || dynamic_cast<const InvalidTopology*>(&e))
    code = 2;
  else if (dynamic_cast<const MalformedRow*>(&e) || dynamic_cast<const DimensionMismatch*>(&e) ||
           dynamic_cast<const NonFiniteValue*>(&e) || dynamic_cast<const ZeroRealizedForce*>(&e) ||
           dynamic_cast<const OddSeriesCount*>(&e) || dynamic_cast<const SampleTooSmall*>(&e) ||
           dynamic_cast<const ConstantSample*>(&e) || dynamic_cast<const EmptySplit*>(&e) ||
           dynamic_cast<const NormalityViolation*>(&e) || dynamic_cast<const NegativeInput*>(&e))
    code = 3;
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    return classify(inner);  // innermost cause decides
  } catch (...) {
  }
  return code;
}

void print_chain(const std::exception& e, int depth = 0) {
  std::cerr << (depth == 0 ? "error: " : "  caused by: ") << e.what() << "\n";
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_chain(inner, depth + 1);
  } catch (...) {
  }
}

struct CommonFlags {
  std::string config_path;
  std::string data_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string output_dir;

  void attach(CLI::App* cmd, bool with_data = true) {
    cmd->add_option("--config", config_path, "JSON run configuration file");
    if (with_data)
      cmd->add_option("--data", data_path, "measurement CSV (overrides generation)");
    cmd->add_option("--seed", seed, "seed override")->each([this](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--output-dir", output_dir, "output directory override");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (!data_path.empty()) {
      cfg.measurements_path = data_path;
      cfg.generate.enabled = false;
    }
    if (seed_set) cfg.seed = seed;
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    cfg.validate();
    return cfg;
  }
};

int cmd_generate(const CommonFlags& flags, const std::string& out_path, int n_series,
                 double jitter, const std::string& truth) {
  RunConfig cfg = flags.resolve();
  cfg.generate.enabled = true;
  if (n_series > 0) cfg.generate.n_series = n_series;
  if (jitter >= 0.0) cfg.generate.force_jitter_rel = jitter;
  if (!truth.empty()) cfg.generate.truth_friction = truth;
  const PressSurrogate base = make_base_surrogate(cfg);
  const SensorLayout layout = make_layout(cfg, base);
  // Export the raw (uncorrected) tensor; the setpoint correction is a
  // pipeline stage applied on ingestion.
  MeasurementTensor tensor;
  {
    const InputSchedule schedule =
        default_schedule(cfg.generate.q_max, cfg.generate.n_up, cfg.generate.n_down);
    PressSurrogate truth_model = base;
    if (cfg.generate.truth_friction == "coulomb") {
      truth_model.friction.kind = FrictionKind::Coulomb;
      truth_model.friction.q_c = cfg.generate.truth_q_c;
    } else if (cfg.generate.truth_friction == "memory-arctan") {
      truth_model.friction = demo_hysteresis_friction(cfg.generate.q_max);
    } else if (cfg.generate.truth_friction != "none") {
      throw ConfigError("unknown truth friction: " + cfg.generate.truth_friction);
    }
    tensor = generate_synthetic_measurements(truth_model, base.nominal_p, schedule, layout,
                                             cfg.generate.n_series, cfg.seed,
                                             cfg.generate.force_jitter_rel);
  }
  export_measurements(tensor, out_path);
  std::cout << "wrote " << tensor.n_m << " series x " << tensor.n_q << " inputs x "
            << tensor.n_s << " sensors to " << out_path << "\n";
  return 0;
}

int cmd_oed(const CommonFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const PressSurrogate base = make_base_surrogate(cfg);
  const SensorLayout layout = make_layout(cfg, base);
  const StateEquationModel model = assemble_quasistatic(base);
  const MeasurementTensor tensor = acquire_measurements(cfg, base, layout);
  const auto excluded = excluded_inputs_for(cfg, tensor);
  CellSet cells;
  for (int i = 0; i < tensor.n_m; ++i)
    for (int j = 0; j < tensor.n_q; ++j)
      if (std::find(excluded.begin(), excluded.end(), j) == excluded.end())
        cells.cells.emplace_back(i, j);
  CardinalityConstraint constraint;
  constraint.min_sensors = cfg.min_sensors > 0 ? cfg.min_sensors : base.n_p;
  constraint.max_sensors = cfg.max_sensors > 0 ? cfg.max_sensors : layout.n_s();
  const DesignEvaluation best = exhaustive_select(model, layout, tensor, constraint,
                                                  cfg.criterion, base.nominal_p, cells);
  std::cout << "omega_opt=";
  for (int k = 0; k < best.omega.size(); ++k) std::cout << best.omega[k];
  std::printf("\npsi_a=%.6e psi_d=%.6e psi_e=%.6e\n", best.psi_a, best.psi_d, best.psi_e);
  return 0;
}

int cmd_screen(const CommonFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const PressSurrogate base = make_base_surrogate(cfg);
  const SensorLayout layout = make_layout(cfg, base);
  const MeasurementTensor tensor = acquire_measurements(cfg, base, layout);
  std::cout << "sensor,w,p_value,sigma_hat_um\n";
  for (int k = 0; k < tensor.n_s; ++k) {
    const auto sample = build_error_sample(tensor, k);
    const auto sw = shapiro_wilk(sample);
    double mean = 0.0;
    for (double v : sample) mean += v;
    mean /= sample.size();
    double var = 0.0;
    for (double v : sample) var += (v - mean) * (v - mean);
    var /= (sample.size() - 1);
    std::printf("%d,%.5f,%.5g,%.5g\n", k + 1, sw.w, sw.p_value,
                std::sqrt(var / 2.0) / kDisplacementUnit);
  }
  return 0;
}

int cmd_detect(const CommonFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const PressSurrogate base = make_base_surrogate(cfg);
  const SensorLayout layout = make_layout(cfg, base);
  const StateEquationModel model = assemble_quasistatic(base);
  const MeasurementTensor tensor = acquire_measurements(cfg, base, layout);
  const auto excluded = excluded_inputs_for(cfg, tensor);
  const FrictionTraining training =
      train_friction_candidates(cfg, base, layout, tensor, excluded);
  const auto schemes = make_schemes(cfg.split_schemes, excluded, cfg.seed);
  Algorithm1Options opts;
  opts.screen_policy = cfg.screen_policy == "abort"
                           ? Algorithm1Options::ScreenPolicy::Abort
                           : cfg.screen_policy == "warn"
                                 ? Algorithm1Options::ScreenPolicy::WarnAndContinue
                                 : Algorithm1Options::ScreenPolicy::Skip;
  for (const auto& [id, cand] : training.candidates) {
    const MeasurementTensor eff = with_effective_inputs(cand, tensor);
    const UncertaintyReport rep =
        run_algorithm1(model, layout, eff, schemes, cfg.tol, base.nominal_p, opts);
    std::cout << id << ": " << (rep.verdict ? "reject" : "accept");
    for (const auto& sc : rep.scenarios)
      std::printf(" %s=%.4g%s", sc.scenario.c_str(), sc.alpha_min,
                  sc.rejected ? "(reject)" : "");
    std::cout << "\n";
  }
  return 0;
}

int cmd_pipeline(const CommonFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const ReportDocument report = run_pipeline(cfg);
  for (const auto& m : report.doc.at("models"))
    std::cout << m.at("model").get<std::string>() << ": "
              << m.at("verdict").get<std::string>() << "\n";
  std::cout << "report written to " << cfg.output_dir << "/report.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"udet - detection of model uncertainty via parameter identification,\n"
               "optimal sensor selection and confidence-ellipsoid testing"};
  app.require_subcommand(1);

  CommonFlags gen_flags, oed_flags, screen_flags, detect_flags, pipe_flags;

  auto* gen = app.add_subcommand("generate", "synthesize a measurement CSV");
  gen_flags.attach(gen, /*with_data=*/false);
  std::string gen_out = "measurements.csv";
  int gen_series = 0;
  double gen_jitter = -1.0;
  std::string gen_truth;
  gen->add_option("--out", gen_out, "output CSV path");
  gen->add_option("--n-series", gen_series, "number of measurement series");
  gen->add_option("--jitter", gen_jitter, "relative force jitter");
  gen->add_option("--truth-friction", gen_truth, "none | coulomb | memory-arctan");

  auto* oed = app.add_subcommand("oed", "optimal sensor selection");
  oed_flags.attach(oed);
  auto* screen = app.add_subcommand("screen", "Shapiro-Wilk normality screen");
  screen_flags.attach(screen);
  auto* detect = app.add_subcommand("detect", "uncertainty detection (Algorithm 1)");
  detect_flags.attach(detect);
  auto* pipeline = app.add_subcommand("pipeline", "all stages, emits report files");
  pipe_flags.attach(pipeline);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_flags, gen_out, gen_series, gen_jitter, gen_truth);
    if (oed->parsed()) return cmd_oed(oed_flags);
    if (screen->parsed()) return cmd_screen(screen_flags);
    if (detect->parsed()) return cmd_detect(detect_flags);
    if (pipeline->parsed()) return cmd_pipeline(pipe_flags);
  } catch (const std::exception& e) {
    print_chain(e);
    return classify(e);
  }
  return 0;
}
