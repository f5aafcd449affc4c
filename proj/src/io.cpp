// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include "udet/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace udet {

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Exact decimal exponent shift: "1.23e-04" -> shift +6 -> "1.23e+02".
// Shifting in string form keeps unit conversion lossless on round trips.
std::string shift_decimal_exponent(const std::string& token, int shift) {
  const auto epos = token.find_first_of("eE");
  if (epos == std::string::npos) return token + "e" + std::to_string(shift);
  const int exp = std::stoi(token.substr(epos + 1));
  return token.substr(0, epos) + "e" + std::to_string(exp + shift);
}

double parse_double(const std::string& token, int line, int shift = 0) {
  const std::string s = shift == 0 ? token : shift_decimal_exponent(token, shift);
  size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw MalformedRow("line " + std::to_string(line) + ": bad number '" + token + "'");
  }
  if (used != s.size())
    throw MalformedRow("line " + std::to_string(line) + ": bad number '" + token + "'");
  if (!std::isfinite(v))
    throw NonFiniteValue("line " + std::to_string(line) + ": non-finite value");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string token;
  std::istringstream ss(line);
  while (std::getline(ss, token, ',')) out.push_back(token);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::vector<double> schedule_setpoints(const InputSchedule& sched) {
  std::vector<double> q(sched.size());
  const auto& src = sched.has_setpoints() ? sched.setpoints : sched.inputs;
  for (int j = 0; j < sched.size(); ++j) {
    if (src[j].size() != 1)
      throw DimensionMismatch("schedule: expected scalar force inputs");
    q[j] = src[j][0];
  }
  return q;
}

std::vector<Phase> infer_phases(const std::vector<double>& setpoints) {
  std::vector<Phase> phases(setpoints.size(), Phase::Loading);
  for (size_t j = 1; j < setpoints.size(); ++j) {
    if (setpoints[j] > setpoints[j - 1])
      phases[j] = Phase::Loading;
    else if (setpoints[j] < setpoints[j - 1])
      phases[j] = Phase::Unloading;
    else
      phases[j] = phases[j - 1];
  }
  return phases;
}

}  // namespace

// ---------------------------------------------------------------------------
// Measurement files.

MeasurementTensor ingest_measurements(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedRow("cannot open measurement file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw MalformedRow("line 1: missing header");
  const auto header = split_csv(line);
  if (header.size() < 5 || header[0] != "series" || header[1] != "input_index" ||
      header[2] != "q_realized" || header[3] != "q_setpoint")
    throw MalformedRow("line 1: expected header series,input_index,q_realized,q_setpoint,s1,...");
  const int n_s = static_cast<int>(header.size()) - 4;
  for (int k = 0; k < n_s; ++k)
    if (header[4 + k] != "s" + std::to_string(k + 1))
      throw MalformedRow("line 1: sensor columns must be named s1..s" + std::to_string(n_s));

  struct Row {
    double q_realized, q_setpoint;
    std::vector<double> z;
  };
  std::map<std::pair<int, int>, Row> rows;
  int n_m = 0, n_q = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tok = split_csv(line);
    if (static_cast<int>(tok.size()) != 4 + n_s)
      throw MalformedRow("line " + std::to_string(lineno) + ": expected " +
                         std::to_string(4 + n_s) + " columns, got " + std::to_string(tok.size()));
    const int i = static_cast<int>(parse_double(tok[0], lineno));
    const int j = static_cast<int>(parse_double(tok[1], lineno));
    if (i < 0 || j < 0)
      throw MalformedRow("line " + std::to_string(lineno) + ": negative index");
    Row row;
    row.q_realized = parse_double(tok[2], lineno);
    row.q_setpoint = parse_double(tok[3], lineno);
    row.z.resize(n_s);
    for (int k = 0; k < n_s; ++k) row.z[k] = parse_double(tok[4 + k], lineno, -6);
    if (!rows.emplace(std::make_pair(i, j), std::move(row)).second)
      throw MalformedRow("line " + std::to_string(lineno) + ": duplicate cell (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");
    n_m = std::max(n_m, i + 1);
    n_q = std::max(n_q, j + 1);
  }
  if (rows.empty()) throw MalformedRow("measurement file has no data rows");
  if (static_cast<int>(rows.size()) != n_m * n_q)
    throw MalformedRow("missing cells: have " + std::to_string(rows.size()) + " rows, expected " +
                       std::to_string(n_m * n_q));

  MeasurementTensor tensor;
  tensor.n_m = n_m;
  tensor.n_q = n_q;
  tensor.n_s = n_s;
  tensor.z.assign(static_cast<size_t>(n_m) * n_q * n_s, 0.0);
  tensor.realized = Mat::Zero(n_m, n_q);

  std::vector<double> setpoints(n_q);
  for (int j = 0; j < n_q; ++j) setpoints[j] = rows.at({0, j}).q_setpoint;
  for (const auto& [cell, row] : rows) {
    const auto [i, j] = cell;
    if (row.q_setpoint != setpoints[j])
      throw MalformedRow("cell (" + std::to_string(i) + "," + std::to_string(j) +
                         "): setpoint differs across series");
    tensor.realized(i, j) = row.q_realized;
    for (int k = 0; k < n_s; ++k) tensor.at(i, j, k) = row.z[k];
  }

  for (int j = 0; j < n_q; ++j) {
    Vec q(1);
    q[0] = setpoints[j];
    tensor.schedule.inputs.push_back(q);
    tensor.schedule.setpoints.push_back(q);
  }
  tensor.schedule.phases = infer_phases(setpoints);
  tensor.validate();
  return tensor;
}

void export_measurements(const MeasurementTensor& tensor, const std::string& path) {
  tensor.validate();
  std::ofstream out(path);
  if (!out) throw MalformedRow("cannot open for writing: " + path);
  out << "series,input_index,q_realized,q_setpoint";
  for (int k = 0; k < tensor.n_s; ++k) out << ",s" << k + 1;
  out << "\n";
  const auto setpoints = schedule_setpoints(tensor.schedule);
  for (int i = 0; i < tensor.n_m; ++i) {
    for (int j = 0; j < tensor.n_q; ++j) {
      const double realized = tensor.realized.size() != 0 ? tensor.realized(i, j) : setpoints[j];
      out << i << ',' << j << ',' << fmt(realized) << ',' << fmt(setpoints[j]);
      for (int k = 0; k < tensor.n_s; ++k)
        out << ',' << shift_decimal_exponent(fmt(tensor.at(i, j, k)), 6);
      out << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Surrogate configuration.

namespace {

Json memory_to_json(const MemoryArctanModel& m) {
  Json j;
  j["units"] = m.units();
  Json w_in = Json::array();
  for (int i = 0; i < m.input_weights.rows(); ++i) {
    Json row = Json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m.input_weights(i, c));
    w_in.push_back(row);
  }
  j["input_weights"] = w_in;
  j["input_bias"] = std::vector<double>(m.input_bias.data(), m.input_bias.data() + m.input_bias.size());
  j["output_weights"] =
      std::vector<double>(m.output_weights.data(), m.output_weights.data() + m.output_weights.size());
  j["output_bias"] = m.output_bias;
  j["trained"] = m.trained;
  return j;
}

MemoryArctanModel memory_from_json(const Json& j) {
  MemoryArctanModel m;
  const auto& w_in = j.at("input_weights");
  const int units = static_cast<int>(w_in.size());
  m.input_weights = Mat::Zero(units, 4);
  for (int i = 0; i < units; ++i)
    for (int c = 0; c < 4; ++c) m.input_weights(i, c) = w_in[i][c].get<double>();
  auto bias = j.at("input_bias").get<std::vector<double>>();
  auto wout = j.at("output_weights").get<std::vector<double>>();
  if (static_cast<int>(bias.size()) != units || static_cast<int>(wout.size()) != units)
    throw ConfigError("memory model: inconsistent unit counts");
  m.input_bias = Eigen::Map<const Vec>(bias.data(), units);
  m.output_weights = Eigen::Map<const Vec>(wout.data(), units);
  m.output_bias = j.at("output_bias").get<double>();
  m.trained = j.value("trained", false);
  return m;
}

std::string variant_name(MemoryVariant v) {
  return v == MemoryVariant::LiteralPaper ? "literal-paper" : "corrected";
}

MemoryVariant variant_from_name(const std::string& s) {
  if (s == "literal-paper") return MemoryVariant::LiteralPaper;
  if (s == "corrected") return MemoryVariant::Corrected;
  throw ConfigError("unknown memory variant: " + s);
}

Json friction_to_json(const FrictionModel& f) {
  Json j;
  switch (f.kind) {
    case FrictionKind::None: j["kind"] = "none"; break;
    case FrictionKind::Coulomb: j["kind"] = "coulomb"; break;
    default: j["kind"] = "memory-arctan"; break;
  }
  j["q_c"] = f.q_c;
  j["variant"] = variant_name(f.variant);
  if (f.kind == FrictionKind::MemoryArctan) j["memory"] = memory_to_json(f.memory);
  return j;
}

FrictionModel friction_from_json(const Json& j) {
  FrictionModel f;
  const std::string kind = j.value("kind", "none");
  if (kind == "none")
    f.kind = FrictionKind::None;
  else if (kind == "coulomb")
    f.kind = FrictionKind::Coulomb;
  else if (kind == "memory-arctan")
    f.kind = FrictionKind::MemoryArctan;
  else
    throw ConfigError("unknown friction kind: " + kind);
  f.q_c = j.value("q_c", 0.0);
  f.variant = variant_from_name(j.value("variant", "literal-paper"));
  if (f.kind == FrictionKind::MemoryArctan) f.memory = memory_from_json(j.at("memory"));
  return f;
}

}  // namespace

PressSurrogate surrogate_from_json(const Json& j) {
  PressSurrogate s;
  s.d_y = j.at("d_y").get<int>();
  s.n_p = j.at("n_p").get<int>();
  s.load_dof = j.at("load_dof").get<int>();
  s.sensor_dofs = j.at("sensor_dofs").get<std::vector<int>>();
  const auto nominal = j.at("nominal_p").get<std::vector<double>>();
  s.nominal_p = Eigen::Map<const Vec>(nominal.data(), nominal.size());
  s.nl_gamma = j.value("nl_gamma", 0.0);
  for (const auto& b : j.value("bars", Json::array())) {
    BarElement bar;
    bar.k = b.at("k").get<double>();
    bar.m1 = b.value("m1", 0.0);
    bar.m2 = b.value("m2", 0.0);
    bar.dof_a = b.value("dof_a", -1);
    bar.dof_b = b.value("dof_b", -1);
    bar.parameter = b.value("parameter", -1);
    s.bars.push_back(bar);
  }
  for (const auto& q : j.value("joints", Json::array())) {
    JointElement joint;
    joint.k = q.at("k").get<double>();
    joint.dof_a = q.value("dof_a", -1);
    joint.dof_b = q.value("dof_b", -1);
    joint.parameter = q.value("parameter", -1);
    s.joints.push_back(joint);
  }
  for (const auto& b : j.value("beams", Json::array())) {
    BeamElement beam;
    beam.k_alpha = b.at("k_alpha").get<double>();
    beam.k_beta = b.at("k_beta").get<double>();
    beam.length = b.at("length").get<double>();
    beam.mass = b.value("mass", 0.0);
    const auto& nd = b.at("node_dofs");
    for (int n = 0; n < 3; ++n)
      for (int c = 0; c < 3; ++c) beam.node_dofs[n][c] = nd[n][c].get<int>();
    s.beams.push_back(beam);
  }
  if (j.contains("friction")) s.friction = friction_from_json(j.at("friction"));
  s.validate();
  return s;
}

Json surrogate_to_json(const PressSurrogate& s) {
  Json j;
  j["d_y"] = s.d_y;
  j["n_p"] = s.n_p;
  j["load_dof"] = s.load_dof;
  j["sensor_dofs"] = s.sensor_dofs;
  j["nominal_p"] = std::vector<double>(s.nominal_p.data(), s.nominal_p.data() + s.nominal_p.size());
  j["nl_gamma"] = s.nl_gamma;
  Json bars = Json::array();
  for (const auto& b : s.bars)
    bars.push_back({{"k", b.k}, {"m1", b.m1}, {"m2", b.m2}, {"dof_a", b.dof_a},
                    {"dof_b", b.dof_b}, {"parameter", b.parameter}});
  j["bars"] = bars;
  Json joints = Json::array();
  for (const auto& q : s.joints)
    joints.push_back({{"k", q.k}, {"dof_a", q.dof_a}, {"dof_b", q.dof_b}, {"parameter", q.parameter}});
  j["joints"] = joints;
  Json beams = Json::array();
  for (const auto& b : s.beams) {
    Json nd = Json::array();
    for (int n = 0; n < 3; ++n)
      nd.push_back({b.node_dofs[n][0], b.node_dofs[n][1], b.node_dofs[n][2]});
    beams.push_back({{"k_alpha", b.k_alpha}, {"k_beta", b.k_beta}, {"length", b.length},
                     {"mass", b.mass}, {"node_dofs", nd}});
  }
  j["beams"] = beams;
  j["friction"] = friction_to_json(s.friction);
  return j;
}

FrictionModel demo_hysteresis_friction(double q_max) {
  FrictionModel f;
  f.kind = FrictionKind::MemoryArctan;
  f.variant = MemoryVariant::Corrected;
  f.memory = MemoryArctanModel::default_basis(q_max);
  // Unit 0 saturates on the ascending branch (feature q_now - q_min), unit 4
  // on the descending branch (q_max - q_now); loading friction rises toward
  // ~+223 N, unloading friction falls toward ~-178 N at the default range.
  f.memory.output_weights[0] = 145.0;
  f.memory.output_weights[4] = -116.0;
  f.memory.trained = true;
  return f;
}

// ---------------------------------------------------------------------------
// Configuration.

namespace {

std::string criterion_name(Criterion c) {
  switch (c) {
    case Criterion::A: return "A";
    case Criterion::D: return "D";
    default: return "E";
  }
}

Criterion criterion_from_name(const std::string& s) {
  if (s == "A") return Criterion::A;
  if (s == "D") return Criterion::D;
  if (s == "E") return Criterion::E;
  throw ConfigError("unknown criterion: " + s);
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig c;
  c.model_id = j.value("model", c.model_id);
  if (j.contains("surrogate")) c.surrogate = j.at("surrogate");
  if (j.contains("friction_variants"))
    c.friction_variants = j.at("friction_variants").get<std::vector<std::string>>();
  c.memory_variant = variant_from_name(j.value("memory_variant", "corrected"));
  if (j.contains("sigma_um")) {
    const auto um = j.at("sigma_um").get<std::vector<double>>();
    c.sigma = Vec(um.size());
    for (size_t k = 0; k < um.size(); ++k) c.sigma[k] = um[k] * kDisplacementUnit;
  }
  c.criterion = criterion_from_name(j.value("criterion", "E"));
  c.min_sensors = j.value("min_sensors", 0);
  c.max_sensors = j.value("max_sensors", 0);
  c.tol = j.value("tol", 0.05);
  if (j.contains("split_schemes"))
    c.split_schemes = j.at("split_schemes").get<std::vector<std::string>>();
  if (j.contains("excluded_inputs"))
    c.excluded_inputs = j.at("excluded_inputs").get<std::vector<int>>();
  c.seed = j.value("seed", c.seed);
  if (j.contains("generate")) {
    const auto& g = j.at("generate");
    c.generate.enabled = g.value("enabled", true);
    c.generate.n_series = g.value("n_series", 6);
    c.generate.q_max = g.value("q_max", 1500.0);
    c.generate.n_up = g.value("n_up", 15);
    c.generate.n_down = g.value("n_down", 14);
    c.generate.force_jitter_rel = g.value("force_jitter_rel", 0.0);
    c.generate.truth_friction = g.value("truth_friction", "memory-arctan");
    c.generate.truth_q_c = g.value("truth_q_c", 150.0);
  }
  c.measurements_path = j.value("measurements", "");
  c.output_dir = j.value("output_dir", ".");
  c.screen_policy = j.value("screen_policy", "abort");
  c.train_series = j.value("train_series", 4);
  c.reuse_initial_data = j.value("reuse_initial_data", true);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

Json RunConfig::to_json() const {
  Json j;
  j["model"] = model_id;
  if (!surrogate.is_null()) j["surrogate"] = surrogate;
  j["friction_variants"] = friction_variants;
  j["memory_variant"] = variant_name(memory_variant);
  if (sigma.size() > 0) {
    std::vector<double> um(sigma.size());
    for (int k = 0; k < sigma.size(); ++k) um[k] = sigma[k] / kDisplacementUnit;
    j["sigma_um"] = um;
  }
  j["criterion"] = criterion_name(criterion);
  j["min_sensors"] = min_sensors;
  j["max_sensors"] = max_sensors;
  j["tol"] = tol;
  j["split_schemes"] = split_schemes;
  j["excluded_inputs"] = excluded_inputs;
  j["seed"] = seed;
  j["generate"] = {{"enabled", generate.enabled},
                   {"n_series", generate.n_series},
                   {"q_max", generate.q_max},
                   {"n_up", generate.n_up},
                   {"n_down", generate.n_down},
                   {"force_jitter_rel", generate.force_jitter_rel},
                   {"truth_friction", generate.truth_friction},
                   {"truth_q_c", generate.truth_q_c}};
  j["measurements"] = measurements_path;
  j["output_dir"] = output_dir;
  j["screen_policy"] = screen_policy;
  j["train_series"] = train_series;
  j["reuse_initial_data"] = reuse_initial_data;
  return j;
}

void RunConfig::validate() const {
  if (!(tol > 0.0 && tol < 1.0)) throw ConfigError("TOL must lie in (0,1)");
  if (split_schemes.empty()) throw ConfigError("need at least one split scheme");
  if (train_series < 1) throw ConfigError("train_series must be >= 1");
  if (!generate.enabled && measurements_path.empty())
    throw ConfigError("either enable generation or provide a measurement file");
  if (screen_policy != "abort" && screen_policy != "warn" && screen_policy != "skip")
    throw ConfigError("screen_policy must be abort | warn | skip");
  for (const auto& name : split_schemes)
    if (name == "random-monte-carlo" && seed == 0)
      throw ConfigError("random schemes require an explicit nonzero seed");
}

std::vector<SplitScheme> make_schemes(const std::vector<std::string>& names,
                                      const std::vector<int>& excluded_inputs,
                                      std::uint64_t seed) {
  std::vector<SplitScheme> out;
  for (const auto& name : names) {
    SplitScheme s;
    s.excluded_inputs = excluded_inputs;
    if (name == "alternating-loading") {
      s.kind = SplitScheme::Kind::AlternatingWithinPhase;
      s.phase = Phase::Loading;
    } else if (name == "alternating-unloading") {
      s.kind = SplitScheme::Kind::AlternatingWithinPhase;
      s.phase = Phase::Unloading;
    } else if (name == "loading-vs-unloading") {
      s.kind = SplitScheme::Kind::LoadingVsUnloading;
    } else if (name == "alternating-across-all") {
      s.kind = SplitScheme::Kind::AlternatingAcrossAll;
    } else if (name == "random-monte-carlo") {
      s.kind = SplitScheme::Kind::RandomMonteCarlo;
      s.seed = seed;
    } else {
      throw ConfigError("unknown split scheme: " + name);
    }
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline.

void ReportDocument::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << dump();
}

namespace {

CellSet active_cells(int series_count, int n_q, const std::vector<int>& excluded) {
  CellSet cs;
  for (int i = 0; i < series_count; ++i)
    for (int j = 0; j < n_q; ++j)
      if (std::find(excluded.begin(), excluded.end(), j) == excluded.end())
        cs.cells.emplace_back(i, j);
  return cs;
}

MeasurementTensor head_series(const MeasurementTensor& tensor, int count) {
  MeasurementTensor out = tensor;
  out.n_m = count;
  out.z.assign(tensor.z.begin(),
               tensor.z.begin() + static_cast<size_t>(count) * tensor.n_q * tensor.n_s);
  out.realized = tensor.realized.topRows(count);
  return out;
}

std::string omega_string(const Eigen::VectorXi& omega) {
  std::string s;
  for (int k = 0; k < omega.size(); ++k) s += omega[k] ? '1' : '0';
  return s;
}

Json vec_to_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

PressSurrogate make_base_surrogate(const RunConfig& cfg) {
  if (cfg.model_id != "custom" && cfg.model_id != "default-demo" &&
      cfg.model_id != "default-demo-nonlinear")
    throw ConfigError("unknown model id: " + cfg.model_id);
  PressSurrogate base =
      cfg.model_id == "custom"
          ? surrogate_from_json(cfg.surrogate)
          : PressSurrogate::default_demo(cfg.model_id == "default-demo-nonlinear");
  base.friction = {};  // candidates attach their own friction models
  return base;
}

SensorLayout make_layout(const RunConfig& cfg, const PressSurrogate& base) {
  const int n_s = static_cast<int>(base.sensor_dofs.size());
  SensorLayout layout;
  layout.omega = Eigen::VectorXi::Ones(n_s);
  if (cfg.sigma.size() > 0) {
    if (cfg.sigma.size() != n_s) throw ConfigError("sigma_um length != sensor count");
    layout.sigma = cfg.sigma;
  } else {
    layout.sigma = Vec(n_s);
    for (int k = 0; k < n_s; ++k) layout.sigma[k] = 5e-6;
    if (n_s == 3) layout.sigma << 1.518e-5, 4.895e-6, 3.904e-6;  // the demo defaults
  }
  return layout;
}

MeasurementTensor acquire_measurements(const RunConfig& cfg, const PressSurrogate& base,
                                       const SensorLayout& layout) {
  MeasurementTensor tensor;
  if (cfg.generate.enabled) {
    const InputSchedule schedule =
        default_schedule(cfg.generate.q_max, cfg.generate.n_up, cfg.generate.n_down);
    PressSurrogate truth = base;
    if (cfg.generate.truth_friction == "none") {
      truth.friction = {};
    } else if (cfg.generate.truth_friction == "coulomb") {
      truth.friction.kind = FrictionKind::Coulomb;
      truth.friction.q_c = cfg.generate.truth_q_c;
    } else if (cfg.generate.truth_friction == "memory-arctan") {
      truth.friction = demo_hysteresis_friction(cfg.generate.q_max);
    } else {
      throw ConfigError("unknown truth friction: " + cfg.generate.truth_friction);
    }
    tensor = generate_synthetic_measurements(truth, base.nominal_p, schedule, layout,
                                             cfg.generate.n_series, cfg.seed,
                                             cfg.generate.force_jitter_rel);
  } else {
    tensor = ingest_measurements(cfg.measurements_path);
  }
  return correct_measurements(tensor, schedule_setpoints(tensor.schedule));
}

std::vector<int> excluded_inputs_for(const RunConfig& cfg, const MeasurementTensor& tensor) {
  std::vector<int> excluded = cfg.excluded_inputs;
  if (excluded.empty()) {
    const auto setpoints = schedule_setpoints(tensor.schedule);
    for (int j = 0; j < tensor.n_q; ++j)
      if (setpoints[j] == 0.0) excluded.push_back(j);
  }
  return excluded;
}

FrictionTraining train_friction_candidates(const RunConfig& cfg, const PressSurrogate& base,
                                           const SensorLayout& layout,
                                           const MeasurementTensor& corrected,
                                           const std::vector<int>& excluded) {
  const StateEquationModel model = assemble_quasistatic(base);
  const auto setpoints = schedule_setpoints(corrected.schedule);
  const int train_count = std::min(cfg.train_series, corrected.n_m);
  const MeasurementTensor train_tensor = head_series(corrected, train_count);
  const CellSet train_cells = active_cells(train_count, corrected.n_q, excluded);

  FrictionTraining t;
  t.inverse_fit =
      identify_parameters(model, layout, train_tensor, base.nominal_p, train_cells);
  const double q_scale = *std::max_element(setpoints.begin(), setpoints.end());

  // Fixed-point refinement: the friction-free fit is biased by the friction
  // itself, which leaks a load-proportional component into the extracted
  // residuals. Alternating the residual extraction with a re-fit on
  // friction-corrected inputs removes that leakage within a few rounds.
  constexpr int kTrainRounds = 4;
  for (int round = 0; round < kTrainRounds; ++round) {
    const auto residual =
        extract_friction_residuals(base, t.inverse_fit.p, layout, train_tensor);
    t.q_c = train_coulomb_friction(corrected.schedule.phases, residual);
    t.memory = train_memory_friction(MemoryArctanModel::default_basis(q_scale), setpoints,
                                     corrected.schedule.phases, residual,
                                     cfg.memory_variant);
    if (round + 1 == kTrainRounds) break;
    PressSurrogate corrector = base;
    corrector.friction.kind = FrictionKind::MemoryArctan;
    corrector.friction.memory = t.memory;
    corrector.friction.variant = cfg.memory_variant;
    const MeasurementTensor effective = with_effective_inputs(corrector, train_tensor);
    t.inverse_fit =
        identify_parameters(model, layout, effective, t.inverse_fit.p, train_cells);
  }

  for (const auto& variant : cfg.friction_variants) {
    PressSurrogate cand = base;
    std::string id;
    if (variant == "none") {
      id = "M1-none";
    } else if (variant == "coulomb") {
      id = "M2-coulomb";
      cand.friction.kind = FrictionKind::Coulomb;
      cand.friction.q_c = t.q_c;
      cand.friction.variant = cfg.memory_variant;
    } else if (variant == "memory-arctan") {
      id = "M3-memory-arctan";
      cand.friction.kind = FrictionKind::MemoryArctan;
      cand.friction.memory = t.memory;
      cand.friction.variant = cfg.memory_variant;
    } else {
      throw ConfigError("unknown friction variant: " + variant);
    }
    t.candidates.emplace_back(id, cand);
  }
  return t;
}

ReportDocument run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  std::string stage = "setup";
  try {
    const PressSurrogate base = make_base_surrogate(cfg);
    const int n_s = static_cast<int>(base.sensor_dofs.size());
    const SensorLayout layout = make_layout(cfg, base);
    const StateEquationModel model = assemble_quasistatic(base);

    stage = "acquire";
    const MeasurementTensor tensor = acquire_measurements(cfg, base, layout);
    const auto setpoints = schedule_setpoints(tensor.schedule);
    const std::vector<int> excluded = excluded_inputs_for(cfg, tensor);

    stage = "train-friction";
    const FrictionTraining training =
        train_friction_candidates(cfg, base, layout, tensor, excluded);
    const double q_c = training.q_c;
    const MemoryArctanModel& memory = training.memory;
    const Estimate& inverse_fit = training.inverse_fit;
    const auto& candidates = training.candidates;

    stage = "oed";
    const CellSet all_cells = active_cells(tensor.n_m, tensor.n_q, excluded);
    CardinalityConstraint constraint;
    constraint.min_sensors = cfg.min_sensors > 0 ? cfg.min_sensors : base.n_p;
    constraint.max_sensors = cfg.max_sensors > 0 ? cfg.max_sensors : n_s;
    const DesignEvaluation best = exhaustive_select(model, layout, tensor, constraint,
                                                    cfg.criterion, base.nominal_p, all_cells);
    Json design_table = Json::array();
    for (unsigned mask = 1; mask < (1u << n_s); ++mask) {
      Eigen::VectorXi omega(n_s);
      for (int k = 0; k < n_s; ++k) omega[k] = (mask >> k) & 1u;
      if (!constraint.admits(omega)) continue;
      const DesignEvaluation ev =
          evaluate_design(model, layout, tensor, omega, base.nominal_p, all_cells);
      design_table.push_back({{"omega", omega_string(omega)},
                              {"feasible", ev.feasible},
                              {"psi_a", ev.psi_a},
                              {"psi_d", ev.psi_d},
                              {"psi_e", ev.psi_e}});
    }
    SensorLayout layout_opt = layout;
    layout_opt.omega = best.omega;

    stage = "screen";
    Json screen_table = Json::array();
    bool screen_violated = false;
    if (cfg.screen_policy != "skip") {
      for (int k = 0; k < n_s; ++k) {
        const auto sample = build_error_sample(tensor, k);
        const auto sw = shapiro_wilk(sample);
        double mean = 0.0;
        for (double v : sample) mean += v;
        mean /= sample.size();
        double var = 0.0;
        for (double v : sample) var += (v - mean) * (v - mean);
        var /= (sample.size() - 1);
        const double sigma_hat = std::sqrt(var / 2.0);
        screen_table.push_back({{"sensor", k + 1},
                                {"w", sw.w},
                                {"p_value", sw.p_value},
                                {"sigma_hat_um", sigma_hat / kDisplacementUnit}});
        if (sw.p_value < 0.05 && layout_opt.omega[k]) screen_violated = true;
      }
      if (screen_violated && cfg.screen_policy == "abort")
        throw NormalityViolation("measurement errors fail the normality screen");
    }

    stage = "detect";
    const auto schemes = make_schemes(cfg.split_schemes, excluded, cfg.seed);
    Algorithm1Options a1;
    a1.screen_policy = Algorithm1Options::ScreenPolicy::Skip;  // screened above
    Json models_json = Json::array();
    std::vector<std::pair<std::string, Estimate>> full_fits;
    for (const auto& [id, cand] : candidates) {
      const MeasurementTensor eff = with_effective_inputs(cand, tensor);
      const UncertaintyReport rep =
          run_algorithm1(model, layout_opt, eff, schemes, cfg.tol, base.nominal_p, a1);
      full_fits.emplace_back(id, identify_parameters(model, layout_opt, eff,
                                                     base.nominal_p, all_cells));
      Json scenarios = Json::array();
      for (const auto& sc : rep.scenarios)
        scenarios.push_back({{"scenario", sc.scenario},
                             {"p_cal", vec_to_json(sc.p_cal)},
                             {"C_cal", mat_to_json(sc.C_cal)},
                             {"p_val", vec_to_json(sc.p_val)},
                             {"mahalanobis_sq", sc.mahalanobis_sq},
                             {"alpha_min", sc.alpha_min},
                             {"alpha_min_underflow", sc.alpha_min < 1e-12},
                             {"covariance_clipped", sc.covariance_clipped},
                             {"rejected", sc.rejected}});
      models_json.push_back({{"model", id},
                             {"tol", rep.tol},
                             {"n_tests", rep.n_tests},
                             {"threshold", rep.threshold},
                             {"scenarios", scenarios},
                             {"verdict", rep.verdict == 1 ? "reject" : "accept"}});
    }

    stage = "emit";
    ReportDocument report;
    report.doc["schema_version"] = 1;
    report.doc["provenance"] = {{"tool", "udet"},
                                {"version", kVersion},
                                {"seed", cfg.seed},
                                {"config", cfg.to_json()},
                                {"excluded_inputs", excluded},
                                {"reuse_initial_data", cfg.reuse_initial_data}};
    report.doc["screen"] = screen_table;
    report.doc["screen_policy"] = cfg.screen_policy;
    report.doc["screen_waived"] = cfg.screen_policy != "abort" && screen_violated;
    report.doc["design"] = {{"criterion", criterion_name(cfg.criterion)},
                            {"table", design_table},
                            {"omega_opt", omega_string(best.omega)}};
    report.doc["friction_training"] = {{"q_c", q_c},
                                       {"memory", memory_to_json(memory)},
                                       {"inverse_model_p", vec_to_json(inverse_fit.p)}};
    report.doc["models"] = models_json;

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);
    report.write((dir / "report.json").string());

    {
      std::ofstream out(dir / "screen.csv");
      out << "sensor,w,p_value,sigma_hat_um\n";
      for (const auto& row : screen_table)
        out << row["sensor"].get<int>() << ',' << fmt(row["w"].get<double>()) << ','
            << fmt(row["p_value"].get<double>()) << ','
            << fmt(row["sigma_hat_um"].get<double>()) << "\n";
    }
    {
      std::ofstream out(dir / "design.csv");
      out << "omega,feasible,psi_a,psi_d,psi_e\n";
      for (const auto& row : design_table)
        out << row["omega"].get<std::string>() << ',' << (row["feasible"].get<bool>() ? 1 : 0)
            << ',' << fmt(row["psi_a"].get<double>()) << ',' << fmt(row["psi_d"].get<double>())
            << ',' << fmt(row["psi_e"].get<double>()) << "\n";
    }
    {
      Json verdicts = Json::array();
      for (const auto& m : models_json)
        verdicts.push_back({{"model", m["model"]}, {"verdict", m["verdict"]}});
      std::ofstream out(dir / "verdicts.json");
      out << verdicts.dump(2) << "\n";
    }
    for (const auto& [id, fit] : full_fits) {
      const PressSurrogate& cand =
          std::find_if(candidates.begin(), candidates.end(),
                       [&](const auto& c) { return c.first == id; })
              ->second;
      const MeasurementTensor eff = with_effective_inputs(cand, tensor);
      std::ofstream out(dir / ("plot_" + id + ".csv"));
      out << "series,input_index,force_n,sensor,displacement_um,model_um\n";
      Vec y = Vec::Zero(model.d_y);
      std::vector<Vec> h_model(tensor.n_q);
      for (int j = 0; j < tensor.n_q; ++j) {
        y = solve_state(model, fit.p, eff.schedule.inputs[j], y);
        h_model[j] = model.observe(y, fit.p, eff.schedule.inputs[j]);
      }
      for (int i = 0; i < tensor.n_m; ++i)
        for (int j = 0; j < tensor.n_q; ++j)
          for (int k = 0; k < n_s; ++k) {
            if (!layout_opt.omega[k]) continue;
            out << i << ',' << j << ',' << fmt(setpoints[j]) << ',' << k + 1 << ','
                << fmt(tensor.at(i, j, k) / kDisplacementUnit) << ','
                << fmt(h_model[j][k] / kDisplacementUnit) << "\n";
          }
    }
    return report;
  } catch (...) {
    std::throw_with_nested(Error("pipeline stage '" + stage + "' failed"));
  }
}

}  // namespace udet
