#pragma once

// Experiment plumbing: configs, instance/result JSON, Monte Carlo campaigns
// and the embedded self-test. The CLI in tools/ is a thin wrapper.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vrecover/oracle.hpp"
#include "vrecover/recover_phase.hpp"
#include "vrecover/recover_phaseless.hpp"
#include "vrecover/types.hpp"

namespace vrecover::harness {

using json = nlohmann::json;

inline constexpr const char* kInstanceFormat = "vrecover-instance/1";
inline constexpr const char* kResultFormat = "vrecover-result/1";
inline constexpr const char* kTolEnv = "VRECOVER_TOL_OVERRIDES";

enum class Mode { R1, R2, R4, R5, R3 };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::R1: return "r1";
    case Mode::R2: return "r2";
    case Mode::R4: return "r4";
    case Mode::R5: return "r5";
    case Mode::R3: return "r3";
  }
  return "unknown";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "r1") return Mode::R1;
  if (s == "r2") return Mode::R2;
  if (s == "r4") return Mode::R4;
  if (s == "r5") return Mode::R5;
  if (s == "r3") return Mode::R3;
  fail(ErrorKind::InvalidInput, "unknown mode '" + std::string(s) + "'");
}

inline bool is_phaseless(Mode m) { return m == Mode::R4 || m == Mode::R5 || m == Mode::R3; }
inline bool uses_grid(Mode m) { return m == Mode::R2 || m == Mode::R3; }

/// Process exit code for a failed run.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return 2;
    case ErrorKind::ModelMismatch: return 4;
    default: return 3;
  }
}

// ---------------------------------------------------------------- tolerances

namespace detail {

struct TolField {
  const char* name;
  double Tolerances::*field;
};

inline const std::vector<TolField>& tol_fields() {
  static const std::vector<TolField> fields = {
      {"root_tol", &Tolerances::root_tol},
      {"pair_tol", &Tolerances::pair_tol},
      {"rank_rel_tol", &Tolerances::rank_rel_tol},
      {"gap_ratio", &Tolerances::gap_ratio},
      {"forward_tol", &Tolerances::forward_tol},
      {"degeneracy_tol", &Tolerances::degeneracy_tol},
      {"match_tol", &Tolerances::match_tol},
      {"dedup_tol", &Tolerances::dedup_tol},
      {"structure_tol", &Tolerances::structure_tol},
      {"disambiguation_tol", &Tolerances::disambiguation_tol},
  };
  return fields;
}

}  // namespace detail

/// Applies {"name": value, ...}; unknown names and non-positive values are
/// rejected.
inline void apply_tolerance_overrides(Tolerances& tol, const json& overrides) {
  if (!overrides.is_object()) fail(ErrorKind::InvalidInput, "tolerance overrides must be a JSON object");
  for (const auto& [key, value] : overrides.items()) {
    const auto& fields = detail::tol_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const detail::TolField& f) { return key == f.name; });
    if (it == fields.end()) fail(ErrorKind::InvalidInput, "unknown tolerance '" + key + "'");
    if (!value.is_number() || !(value.get<double>() > 0.0) || !std::isfinite(value.get<double>()))
      fail(ErrorKind::InvalidInput, "tolerance '" + key + "' must be a positive number");
    tol.*(it->field) = value.get<double>();
  }
}

inline json tolerances_to_json(const Tolerances& tol) {
  json out = json::object();
  for (const auto& f : detail::tol_fields()) out[f.name] = tol.*(f.field);
  return out;
}

/// `base` with VRECOVER_TOL_OVERRIDES applied, if set.
inline Tolerances tolerances_from_env(Tolerances base = Tolerances{}) {
  const char* raw = std::getenv(kTolEnv);
  if (raw == nullptr || *raw == '\0') return base;
  json parsed;
  try {
    parsed = json::parse(raw);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string(kTolEnv) + " is not valid JSON: " + e.what());
  }
  apply_tolerance_overrides(base, parsed);
  return base;
}

// ---------------------------------------------------------------- config

/// n or m as a function of s: "a*s+b" written like "2s", "4s-1", "8s-3", or
/// a fixed integer.
struct Rule {
  int a = 0;
  int b = 0;
  std::string text;

  int operator()(int s) const { return a * s + b; }
};

inline Rule parse_rule(const json& v) {
  if (v.is_number_integer()) {
    const int b = v.get<int>();
    return {0, b, std::to_string(b)};
  }
  if (!v.is_string()) fail(ErrorKind::InvalidInput, "n/m rule must be a string like \"4s-1\" or an integer");
  const std::string text = v.get<std::string>();
  static const std::regex re(R"(^\s*(\d*)\s*\*?\s*s\s*(?:([+-])\s*(\d+))?\s*$)");
  std::smatch m;
  if (std::regex_match(text, m, re)) {
    Rule r;
    r.a = m[1].length() > 0 ? std::stoi(m[1].str()) : 1;
    if (m[2].matched) r.b = (m[2].str() == "-" ? -1 : 1) * std::stoi(m[3].str());
    r.text = text;
    return r;
  }
  static const std::regex num(R"(^\s*(\d+)\s*$)");
  if (std::regex_match(text, m, num)) return {0, std::stoi(m[1].str()), text};
  fail(ErrorKind::InvalidInput, "cannot parse rule '" + text + "'");
}

struct ExperimentConfig {
  Mode mode = Mode::R1;
  std::vector<int> s_list{1};
  Rule n_rule{2, 0, "2s"};
  Rule m_rule{2, 0, "2s"};
  bool extra_row = false;
  int trials = 1;
  std::uint64_t master_seed = 0;
  Tolerances tol;
  SampleKind sample = SampleKind::Harmonic;
  double gamma = 0.0;
  double omega = 2.0 * kPi / 7.0;
  double phi = 4.0 * kPi / 7.0;
  ThetaMode theta_mode = ThetaMode::Continuous;
  double success_tol = 1e-6;
  int threads = 1;
  bool timing = true;  // false writes runtime_ms = 0 for byte-identical CSVs
};

inline std::string_view to_string(SampleKind k) {
  switch (k) {
    case SampleKind::Harmonic: return "harmonic";
    case SampleKind::Arbitrary: return "arbitrary";
    case SampleKind::ThreeGroup: return "three-group";
  }
  return "unknown";
}

/// Rejects configs whose (n, m) violate the sample requirements of the mode.
inline void validate_config(const ExperimentConfig& c) {
  if (c.s_list.empty()) fail(ErrorKind::InvalidInput, "s list is empty");
  if (c.trials < 1) fail(ErrorKind::InvalidInput, "trials must be >= 1");
  if (c.threads < 1) fail(ErrorKind::InvalidInput, "threads must be >= 1");
  if (!(c.success_tol > 0.0)) fail(ErrorKind::InvalidInput, "success_tol must be positive");
  const bool phaseless = is_phaseless(c.mode);
  if (!phaseless && c.sample == SampleKind::ThreeGroup)
    fail(ErrorKind::InvalidInput, "three-group samples are a phaseless construction");
  if (c.mode == Mode::R3 && !c.extra_row) fail(ErrorKind::InvalidInput, "r3 needs extra_row");
  if (c.mode == Mode::R4 && c.extra_row) fail(ErrorKind::InvalidInput, "r4 reports the candidate set; drop extra_row or use r5");
  if (!phaseless && c.extra_row) fail(ErrorKind::InvalidInput, "extra_row is a phaseless option");
  if (!phaseless && c.theta_mode == ThetaMode::DftGrid) fail(ErrorKind::InvalidInput, "dft-grid theta is a phaseless option");
  for (int s : c.s_list) {
    if (s < 1) fail(ErrorKind::InvalidInput, "s must be >= 1");
    const int n = c.n_rule(s), m = c.m_rule(s);
    const std::string at = " at s=" + std::to_string(s);
    if (!phaseless) {
      if (n < 2 * s) fail(ErrorKind::InvalidInput, "n < 2s" + at);
      if (m < 2 * s) fail(ErrorKind::InvalidInput, "m < 2s" + at);
      if (c.sample == SampleKind::Arbitrary && m < 3 * s) fail(ErrorKind::InvalidInput, "arbitrary samples need m >= 3s" + at);
      continue;
    }
    if (n < 4 * s - 1) fail(ErrorKind::InvalidInput, "n < 4s-1" + at);
    if (c.sample == SampleKind::Harmonic) {
      if (m < 4 * s - 1) fail(ErrorKind::InvalidInput, "harmonic samples need m >= 4s-1" + at);
      if (c.theta_mode == ThetaMode::DftGrid || c.mode == Mode::R3) {
        const double r = std::remainder(c.gamma, 2.0 * kPi);
        if (std::abs(r) < 1e-8) fail(ErrorKind::InvalidInput, "DFT-grid theta with gamma = 0 (mod 2pi) has theta^n = e^{-i gamma}");
      }
    } else if (c.sample == SampleKind::ThreeGroup) {
      if (m != 8 * s - 3) fail(ErrorKind::InvalidInput, "three-group samples fix m = 8s-3" + at);
    } else if (m < 8 * s - 3) {
      fail(ErrorKind::InvalidInput, "arbitrary phaseless samples need m >= 8s-3" + at);
    }
  }
}

inline ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) fail(ErrorKind::InvalidInput, "config must be a JSON object");
  static const std::vector<std::string> known = {"mode",   "s",     "n",      "m",           "extra_row",
                                                 "trials", "master_seed", "tolerances", "samples",
                                                 "gamma",  "omega", "phi",    "theta",       "success_tol",
                                                 "threads", "timing"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) fail(ErrorKind::InvalidInput, "unknown config key '" + key + "'");
  ExperimentConfig c;
  try {
    if (!j.contains("mode")) fail(ErrorKind::InvalidInput, "config needs a mode");
    c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("s")) {
      const json& s = j.at("s");
      c.s_list = s.is_array() ? s.get<std::vector<int>>() : std::vector<int>{s.get<int>()};
    }
    if (is_phaseless(c.mode)) {
      c.n_rule = {4, -1, "4s-1"};
      c.m_rule = {4, -1, "4s-1"};
    }
    if (j.contains("n")) c.n_rule = parse_rule(j.at("n"));
    if (j.contains("m")) c.m_rule = parse_rule(j.at("m"));
    c.extra_row = j.value("extra_row", c.extra_row);
    c.trials = j.value("trials", c.trials);
    if (j.contains("master_seed")) {
      const json& seed = j.at("master_seed");
      if (seed.is_string())
        c.master_seed = std::stoull(seed.get<std::string>(), nullptr, 0);
      else
        c.master_seed = seed.get<std::uint64_t>();
    }
    if (j.contains("tolerances")) apply_tolerance_overrides(c.tol, j.at("tolerances"));
    if (j.contains("samples")) {
      const std::string s = j.at("samples").get<std::string>();
      if (s == "harmonic")
        c.sample = SampleKind::Harmonic;
      else if (s == "arbitrary")
        c.sample = SampleKind::Arbitrary;
      else if (s == "three-group")
        c.sample = SampleKind::ThreeGroup;
      else
        fail(ErrorKind::InvalidInput, "samples must be harmonic, arbitrary or three-group");
    }
    c.gamma = j.value("gamma", c.gamma);
    c.omega = j.value("omega", c.omega);
    c.phi = j.value("phi", c.phi);
    if (j.contains("theta")) {
      const std::string t = j.at("theta").get<std::string>();
      if (t == "continuous")
        c.theta_mode = ThetaMode::Continuous;
      else if (t == "dft-grid")
        c.theta_mode = ThetaMode::DftGrid;
      else
        fail(ErrorKind::InvalidInput, "theta must be continuous or dft-grid");
    }
    c.success_tol = j.value("success_tol", c.success_tol);
    c.threads = j.value("threads", c.threads);
    c.timing = j.value("timing", c.timing);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("bad config: ") + e.what());
  } catch (const std::logic_error& e) {  // stoull
    fail(ErrorKind::InvalidInput, std::string("bad config: ") + e.what());
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidInput, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

inline GenSpec gen_spec(const ExperimentConfig& c, int s) {
  GenSpec spec;
  spec.kind = is_phaseless(c.mode) ? MeasurementKind::Phaseless : MeasurementKind::PhaseAware;
  spec.n = c.n_rule(s);
  spec.s = s;
  spec.m = c.m_rule(s);
  spec.sample = c.sample;
  spec.gamma = c.gamma;
  spec.omega = c.omega;
  spec.phi = c.phi;
  spec.theta_mode = c.mode == Mode::R3 ? ThetaMode::DftGrid : c.theta_mode;
  spec.with_grid = uses_grid(c.mode);
  spec.extra_row = c.extra_row;
  return spec;
}

/// Trial id t of the campaign: s_list[t / trials], seed derive_seed(master, t).
inline int s_of_trial(const ExperimentConfig& c, std::size_t t) {
  return c.s_list[t / static_cast<std::size_t>(c.trials)];
}

inline Instance trial_instance(const ExperimentConfig& c, std::size_t t) {
  return generate_instance(gen_spec(c, s_of_trial(c, t)), derive_seed(c.master_seed, t));
}

// ---------------------------------------------------------------- JSON

inline json to_json(cplx v) { return json::array({v.real(), v.imag()}); }

inline json to_json(const std::vector<cplx>& v) {
  json out = json::array();
  for (const cplx& x : v) out.push_back(to_json(x));
  return out;
}

inline json to_json(const CVec& v) { return to_json(to_std(v)); }

inline cplx cplx_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    fail(ErrorKind::InvalidInput, "complex values are [re, im] pairs");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline std::vector<cplx> cvec_from_json(const json& j) {
  if (!j.is_array()) fail(ErrorKind::InvalidInput, "expected an array of complex values");
  std::vector<cplx> out;
  for (const json& x : j) out.push_back(cplx_from_json(x));
  return out;
}

inline json instance_to_json(const Instance& inst) {
  json j;
  j["format"] = kInstanceFormat;
  j["kind"] = inst.kind == MeasurementKind::PhaseAware ? "phase-aware" : "phaseless";
  j["n"] = inst.n;
  j["s"] = inst.s;
  j["seed"] = inst.seed;
  json samples;
  samples["mode"] = inst.samples.harmonic() ? "shifted-harmonic" : "arbitrary";
  if (inst.samples.harmonic()) {
    samples["gamma"] = inst.samples.gamma;
    samples["n"] = inst.samples.n;
  }
  samples["z"] = to_json(inst.samples.z);
  j["samples"] = samples;
  if (inst.kind == MeasurementKind::PhaseAware)
    j["y"] = to_json(inst.y_phase);
  else
    j["y"] = std::vector<double>(inst.y_phaseless.data(), inst.y_phaseless.data() + inst.y_phaseless.size());
  if (inst.has_grid()) {
    j["grid"] = to_json(inst.grid);
    j["positions"] = inst.positions;
  }
  if (inst.extra) j["extra"] = {{"a", to_json(inst.extra->a)}, {"y_m", inst.extra->y_m}};
  j["truth"] = {{"theta", to_json(inst.theta)}, {"g", to_json(inst.g)}};
  return j;
}

/// Parses an instance; when it carries the truth, the stored measurements
/// must agree with the forward model.
inline Instance instance_from_json(const json& j) {
  Instance inst;
  try {
    if (!j.is_object()) fail(ErrorKind::InvalidInput, "instance must be a JSON object");
    if (j.value("format", std::string()) != kInstanceFormat)
      fail(ErrorKind::InvalidInput, std::string("instance format must be ") + kInstanceFormat);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "phase-aware")
      inst.kind = MeasurementKind::PhaseAware;
    else if (kind == "phaseless")
      inst.kind = MeasurementKind::Phaseless;
    else
      fail(ErrorKind::InvalidInput, "kind must be phase-aware or phaseless");
    inst.n = j.at("n").get<int>();
    inst.s = j.at("s").get<int>();
    inst.seed = j.value("seed", std::uint64_t{0});
    const json& samples = j.at("samples");
    const std::string mode = samples.value("mode", std::string("arbitrary"));
    std::vector<cplx> z = cvec_from_json(samples.at("z"));
    if (mode == "shifted-harmonic") {
      inst.samples.z = std::move(z);
      inst.samples.mode = SampleMode::ShiftedHarmonic;
      inst.samples.gamma = samples.at("gamma").get<double>();
      inst.samples.n = samples.value("n", inst.n);
    } else if (mode == "arbitrary") {
      inst.samples = arbitrary_samples(std::move(z));
    } else {
      fail(ErrorKind::InvalidInput, "samples.mode must be shifted-harmonic or arbitrary");
    }
    if (inst.kind == MeasurementKind::PhaseAware) {
      inst.y_phase = to_eigen(cvec_from_json(j.at("y")));
    } else {
      const auto y = j.at("y").get<std::vector<double>>();
      inst.y_phaseless = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    }
    if (j.contains("grid")) inst.grid = cvec_from_json(j.at("grid"));
    if (j.contains("positions")) inst.positions = j.at("positions").get<std::vector<std::size_t>>();
    if (j.contains("extra")) {
      const json& e = j.at("extra");
      inst.extra = ExtraRow{to_eigen(cvec_from_json(e.at("a"))), e.at("y_m").get<double>()};
    }
    if (j.contains("truth")) {
      inst.theta = cvec_from_json(j.at("truth").at("theta"));
      inst.g = cvec_from_json(j.at("truth").at("g"));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("malformed instance: ") + e.what());
  }
  if (inst.n < 1 || inst.s < 1) fail(ErrorKind::InvalidInput, "instance needs n >= 1 and s >= 1");
  const std::size_t m = inst.samples.size();
  const std::size_t ylen = inst.kind == MeasurementKind::PhaseAware ? static_cast<std::size_t>(inst.y_phase.size())
                                                                    : static_cast<std::size_t>(inst.y_phaseless.size());
  if (ylen != m) fail(ErrorKind::InvalidInput, "y and z lengths differ");
  if (inst.theta.size() != inst.g.size()) fail(ErrorKind::InvalidInput, "truth theta and g lengths differ");
  if (!inst.positions.empty() && inst.positions.size() != inst.theta.size())
    fail(ErrorKind::InvalidInput, "positions and truth lengths differ");

  if (!inst.theta.empty()) {
    Instance check = inst;
    simulate(check);
    double diff = 0.0, scale = 0.0;
    if (inst.kind == MeasurementKind::PhaseAware) {
      diff = (check.y_phase - inst.y_phase).cwiseAbs().maxCoeff();
      scale = inst.y_phase.cwiseAbs().maxCoeff();
    } else {
      diff = (check.y_phaseless - inst.y_phaseless).cwiseAbs().maxCoeff();
      scale = inst.y_phaseless.cwiseAbs().maxCoeff();
    }
    if (inst.extra) {
      diff = std::max(diff, std::abs(check.extra->y_m - inst.extra->y_m));
      scale = std::max(scale, inst.extra->y_m);
    }
    if (diff > 1e-8 * std::max(scale, 1.0)) fail(ErrorKind::InvalidInput, "measurements disagree with the stored truth");
  }
  return inst;
}

inline Instance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidInput, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
  return instance_from_json(j);
}

// ---------------------------------------------------------------- dispatch

/// Mode-independent view of a recovery result.
struct Outcome {
  Mode mode = Mode::R1;
  std::string branch;
  int S = 0;
  std::vector<cplx> theta;
  std::vector<cplx> g;  // the answer; empty for r4 (candidate set only)
  std::vector<CVec> candidates;
  std::optional<std::size_t> selected;
  std::optional<SparseVector> x;
  std::vector<double> magnitude_profile;
  std::vector<std::string> warnings;
  std::vector<std::string> diagnostics;
};

namespace detail {

inline std::vector<std::string> describe(const std::vector<SparsityAttempt>& attempts) {
  std::vector<std::string> out;
  for (const auto& a : attempts) out.push_back(vrecover::describe(a));
  return out;
}

inline PhaseInstance phase_view(const Instance& inst) {
  if (inst.kind != MeasurementKind::PhaseAware) fail(ErrorKind::InvalidInput, "mode needs a phase-aware instance");
  return {inst.n, inst.s, inst.y_phase, inst.samples, inst.grid};
}

inline PhaselessInstance phaseless_view(const Instance& inst, bool keep_extra) {
  if (inst.kind != MeasurementKind::Phaseless) fail(ErrorKind::InvalidInput, "mode needs a phaseless instance");
  PhaselessInstance out{inst.n, inst.s, inst.y_phaseless, inst.samples, std::nullopt, inst.grid};
  if (keep_extra) out.extra_row = inst.extra;
  return out;
}

inline void fill_phaseless(Outcome& o, PhaselessResult&& r) {
  o.branch = std::string(to_string(r.branch));
  o.S = r.S;
  o.theta = r.theta;
  o.candidates = std::move(r.candidates);
  o.selected = r.selected;
  o.magnitude_profile = std::move(r.magnitude_profile);
  o.warnings = std::move(r.warnings);
  o.diagnostics = describe(r.diagnostics);
  if (o.selected) o.g = to_std(o.candidates[*o.selected]);
}

}  // namespace detail

/// r1/r2: phase-aware continuous / grid recovery. r4: phaseless continuous
/// recovery returning the candidate set. r5: as r4, disambiguated by the
/// extra row when the instance has one. r3: phaseless grid recovery.
inline Outcome run_recovery(Mode mode, const Instance& inst, const Tolerances& tol) {
  Outcome o;
  o.mode = mode;
  if (uses_grid(mode) && !inst.has_grid()) fail(ErrorKind::InvalidInput, "mode needs an instance with a grid");
  switch (mode) {
    case Mode::R1: {
      PhaseResult r = recover_r1(detail::phase_view(inst), tol);
      o.branch = r.branch;
      o.S = r.S;
      o.theta = r.theta;
      o.g = r.g;
      if (!r.g.empty()) o.candidates.push_back(to_eigen(r.g));
      o.warnings = std::move(r.warnings);
      o.diagnostics = detail::describe(r.diagnostics);
      break;
    }
    case Mode::R2: {
      R2Result r = recover_r2(detail::phase_view(inst), tol);
      o.branch = r.inner.branch;
      o.S = static_cast<int>(r.x.entries.size());
      for (const auto& [pos, value] : r.x.entries) {
        o.theta.push_back(inst.grid[pos]);
        o.g.push_back(value);
      }
      if (!o.g.empty()) o.candidates.push_back(to_eigen(o.g));
      o.x = std::move(r.x);
      o.warnings = std::move(r.inner.warnings);
      o.diagnostics = detail::describe(r.inner.diagnostics);
      break;
    }
    case Mode::R4:
      detail::fill_phaseless(o, recover_r5(detail::phaseless_view(inst, false), tol));
      break;
    case Mode::R5:
      detail::fill_phaseless(o, recover_r5(detail::phaseless_view(inst, true), tol));
      break;
    case Mode::R3: {
      R3Result r = recover_r3(detail::phaseless_view(inst, true), tol);
      detail::fill_phaseless(o, std::move(r.inner));
      o.S = static_cast<int>(r.x.entries.size());
      o.theta.clear();
      o.g.clear();
      for (const auto& [pos, value] : r.x.entries) {
        o.theta.push_back(inst.grid[pos]);
        o.g.push_back(value);
      }
      o.x = std::move(r.x);
      break;
    }
  }
  return o;
}

inline json outcome_to_json(const Outcome& o) {
  json j;
  j["format"] = kResultFormat;
  j["mode"] = to_string(o.mode);
  j["status"] = "ok";
  j["branch"] = o.branch;
  j["S"] = o.S;
  j["theta"] = to_json(o.theta);
  j["g"] = to_json(o.g);
  json cands = json::array();
  for (const CVec& c : o.candidates) cands.push_back(to_json(c));
  j["candidates"] = cands;
  j["candidate_count"] = o.candidates.size();
  j["selected"] = o.selected ? json(*o.selected) : json(nullptr);
  j["magnitude_profile"] = o.magnitude_profile;
  if (o.x) {
    json entries = json::array();
    for (const auto& [pos, value] : o.x->entries) entries.push_back(json::array({pos, to_json(value)}));
    j["x"] = {{"n", o.x->n}, {"entries", entries}};
  }
  j["warnings"] = o.warnings;
  j["diagnostics"] = o.diagnostics;
  return j;
}

inline json error_to_json(Mode mode, const Error& e) {
  json j;
  j["format"] = kResultFormat;
  j["mode"] = to_string(mode);
  j["status"] = to_string(e.kind());
  j["message"] = e.what();
  j["diagnostics"] = e.diagnostics();
  return j;
}

// ---------------------------------------------------------------- trials

struct TrialRecord {
  std::size_t trial = 0;
  int s = 0;
  int S = 0;
  int n = 0;
  int m = 0;
  Mode mode = Mode::R1;
  std::string branch;
  bool success = false;
  double theta_err = std::numeric_limits<double>::quiet_NaN();
  double g_err = std::numeric_limits<double>::quiet_NaN();
  std::size_t candidates = 0;
  double runtime_ms = 0.0;
  std::vector<std::string> warnings;
};

/// Relative distance of a to b after the best global phase on a.
inline double phase_aligned_error(const CVec& a, const CVec& b) {
  const cplx inner = a.dot(b);
  const cplx rot = std::abs(inner) > 0.0 ? inner / std::abs(inner) : cplx(1.0);
  return (rot * a - b).norm() / b.norm();
}

struct Alignment {
  double theta_err = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> perm;  // truth k <-> recovered perm[k]
};

/// Best assignment of recovered support points to the truth by max relative
/// error (exhaustive; s is small).
inline Alignment align_support(const std::vector<cplx>& recovered, const std::vector<cplx>& truth) {
  Alignment best;
  if (recovered.size() != truth.size()) return best;
  std::vector<std::size_t> p(truth.size());
  std::iota(p.begin(), p.end(), 0);
  do {
    double e = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) e = std::max(e, std::abs(recovered[p[k]] - truth[k]) / std::abs(truth[k]));
    if (e < best.theta_err) {
      best.theta_err = e;
      best.perm = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

/// Fills theta_err / g_err / success of `rec` against the truth of `inst`.
/// Phaseless modes compare up to global phase; r4 (and r5 without an extra
/// row) scores the closest candidate.
inline void score(TrialRecord& rec, const Outcome& o, const Instance& inst, double success_tol) {
  const Alignment al = align_support(o.theta, inst.theta);
  rec.theta_err = al.theta_err;
  if (!std::isfinite(al.theta_err)) return;
  const CVec truth = to_eigen(inst.g);
  auto permuted = [&](const CVec& c) {
    CVec out(c.size());
    for (std::size_t k = 0; k < al.perm.size(); ++k) out(static_cast<Eigen::Index>(k)) = c(static_cast<Eigen::Index>(al.perm[k]));
    return out;
  };
  if (inst.theta.empty()) {
    rec.g_err = 0.0;
  } else if (!is_phaseless(o.mode)) {
    rec.g_err = (permuted(to_eigen(o.g)) - truth).norm() / truth.norm();
  } else if (!o.g.empty()) {
    rec.g_err = phase_aligned_error(permuted(to_eigen(o.g)), truth);
  } else {
    rec.g_err = std::numeric_limits<double>::infinity();
    for (const CVec& c : o.candidates) rec.g_err = std::min(rec.g_err, phase_aligned_error(permuted(c), truth));
  }
  rec.success = rec.theta_err <= success_tol && rec.g_err <= success_tol;
}

inline TrialRecord run_trial(const ExperimentConfig& c, std::size_t t) {
  TrialRecord rec;
  rec.trial = t;
  rec.s = s_of_trial(c, t);
  rec.n = c.n_rule(rec.s);
  rec.m = c.m_rule(rec.s);
  rec.mode = c.mode;
  const Instance inst = trial_instance(c, t);
  const auto start = std::chrono::steady_clock::now();
  try {
    const Outcome o = run_recovery(c.mode, inst, c.tol);
    rec.branch = o.branch;
    rec.S = o.S;
    rec.candidates = o.candidates.size();
    rec.warnings = o.warnings;
    score(rec, o, inst, c.success_tol);
  } catch (const Error& e) {
    rec.warnings.push_back("error:" + std::string(to_string(e.kind())));
  }
  if (c.timing)
    rec.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

/// All trials, ordered by trial id whatever the thread count.
inline std::vector<TrialRecord> run_campaign(const ExperimentConfig& c) {
  validate_config(c);
  const std::size_t total = c.s_list.size() * static_cast<std::size_t>(c.trials);
  std::vector<TrialRecord> records(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < total; t = next++) records[t] = run_trial(c, t);
  };
  const int threads = std::min<int>(c.threads, static_cast<int>(total));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  return records;
}

inline constexpr const char* kCsvHeader = "trial,s,S,n,m,mode,branch,success,theta_err,g_err,candidates,runtime_ms,warnings";

namespace detail {

inline std::string fmt(const char* spec, double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k) out += sep;
    out += parts[k];
  }
  return out;
}

}  // namespace detail

/// Nearest-rank percentile of the finite values; NaN when there are none.
inline double percentile(std::vector<double> v, double p) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

struct Summary {
  int s = 0;
  std::size_t trials = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double runtime_ms = 0.0;
  std::vector<double> theta_err, g_err;
};

inline std::vector<Summary> summarize(const ExperimentConfig& c, const std::vector<TrialRecord>& records) {
  std::vector<Summary> out;
  for (int s : c.s_list) {
    Summary sm;
    sm.s = s;
    for (const auto& r : records) {
      if (r.s != s) continue;
      ++sm.trials;
      sm.successes += r.success ? 1 : 0;
      sm.runtime_ms += r.runtime_ms;
      sm.theta_err.push_back(r.theta_err);
      sm.g_err.push_back(r.g_err);
    }
    sm.success_rate = sm.trials ? static_cast<double>(sm.successes) / static_cast<double>(sm.trials) : 0.0;
    out.push_back(std::move(sm));
  }
  return out;
}

/// One row per trial, then one summary row per s: success column holds the
/// success rate, the error columns the medians, warnings the p90/p99/max.
inline void write_csv(std::ostream& os, const ExperimentConfig& c, const std::vector<TrialRecord>& records) {
  using detail::fmt;
  os << kCsvHeader << '\n';
  for (const auto& r : records) {
    os << r.trial << ',' << r.s << ',' << r.S << ',' << r.n << ',' << r.m << ',' << to_string(r.mode) << ',' << r.branch
       << ',' << (r.success ? 1 : 0) << ',' << fmt("%.3e", r.theta_err) << ',' << fmt("%.3e", r.g_err) << ','
       << r.candidates << ',' << fmt("%.3f", r.runtime_ms) << ',' << detail::join(r.warnings, ';') << '\n';
  }
  for (const Summary& sm : summarize(c, records)) {
    std::vector<std::string> pct;
    for (const auto& [name, values] : {std::pair{"theta_err", &sm.theta_err}, std::pair{"g_err", &sm.g_err}})
      for (double p : {90.0, 99.0, 100.0})
        pct.push_back(std::string(name) + (p == 100.0 ? "_max" : "_p" + std::to_string(static_cast<int>(p))) + "=" +
                      fmt("%.3e", percentile(*values, p)));
    os << "summary," << sm.s << ",," << c.n_rule(sm.s) << ',' << c.m_rule(sm.s) << ',' << to_string(c.mode) << ",,"
       << fmt("%.4f", sm.success_rate) << ',' << fmt("%.3e", percentile(sm.theta_err, 50.0)) << ','
       << fmt("%.3e", percentile(sm.g_err, 50.0)) << ",," << fmt("%.3f", sm.runtime_ms) << ',' << detail::join(pct, ';')
       << '\n';
  }
}

/// Writes one instance file per trial into `dir`; returns the paths.
inline std::vector<std::filesystem::path> generate_files(const ExperimentConfig& c, const std::filesystem::path& dir) {
  validate_config(c);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::InvalidInput, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> out;
  const std::size_t total = c.s_list.size() * static_cast<std::size_t>(c.trials);
  for (std::size_t t = 0; t < total; ++t) {
    char name[64];
    std::snprintf(name, sizeof name, "instance_%05zu.json", t);
    const auto path = dir / name;
    std::ofstream os(path);
    if (!os) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
    os << instance_to_json(trial_instance(c, t)).dump(2) << '\n';
    out.push_back(path);
  }
  return out;
}

// ---------------------------------------------------------------- selftest

struct SelfTestCheck {
  std::string name;
  std::function<void(const Tolerances&)> run;  // throws on failure
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

inline ExperimentConfig quick(Mode mode, int s, const char* n, const char* m, SampleKind sample, double gamma, int trials,
                              std::uint64_t seed) {
  ExperimentConfig c;
  c.mode = mode;
  c.s_list = {s};
  c.n_rule = parse_rule(n);
  c.m_rule = parse_rule(m);
  c.sample = sample;
  c.gamma = gamma;
  c.trials = trials;
  c.master_seed = seed;
  return c;
}

inline void require_campaign(ExperimentConfig c, const Tolerances& tol, std::size_t expected_candidates) {
  c.tol = tol;
  for (std::size_t t = 0; t < static_cast<std::size_t>(c.trials); ++t) {
    const TrialRecord r = run_trial(c, t);
    require(r.success, "trial " + std::to_string(t) + " failed (" + join(r.warnings, ';') + ")");
    if (expected_candidates)
      require(r.candidates == expected_candidates, "trial " + std::to_string(t) + " has " + std::to_string(r.candidates) + " candidates");
  }
}

}  // namespace detail

inline std::vector<SelfTestCheck> selftest_checks() {
  using detail::require;
  std::vector<SelfTestCheck> checks;

  checks.push_back({"r1-worked-example", [](const Tolerances& tol) {
                      const SampleSet z = shifted_harmonics(2, 2, 0.0);
                      const CVec y = forward_phase({2.0}, {3.0}, z.z, 2);
                      require(std::abs(y(0) - 9.0) < 1e-12 && std::abs(y(1) + 3.0) < 1e-12, "y != [9, -3]");
                      const PhaseResult r = recover_r1({2, 1, y, z, {}}, tol);
                      require(r.theta.size() == 1 && std::abs(r.theta[0] - 2.0) < 1e-10 && std::abs(r.g[0] - 3.0) < 1e-10,
                              "did not recover theta = [2], g = [3]");
                    }});
  checks.push_back({"zero-signal", [](const Tolerances& tol) {
                      const SampleSet z = shifted_harmonics(4, 4, 0.0);
                      const PhaseResult r = recover_r1({4, 2, CVec::Zero(4), z, {}}, tol);
                      require(r.theta.empty() && r.S == 0, "zero signal gave a nonempty support");
                    }});
  checks.push_back({"r1-harmonic", [](const Tolerances& tol) {
                      detail::require_campaign(detail::quick(Mode::R1, 3, "2s", "2s", SampleKind::Harmonic, 0.0, 10, 11), tol, 1);
                    }});
  checks.push_back({"r1-arbitrary", [](const Tolerances& tol) {
                      detail::require_campaign(detail::quick(Mode::R1, 2, "2s", "3s", SampleKind::Arbitrary, 0.0, 10, 12), tol, 1);
                    }});
  checks.push_back({"r2-vs-brute-force", [](const Tolerances& tol) {
                      ExperimentConfig c = detail::quick(Mode::R2, 2, "8", "4", SampleKind::Harmonic, 0.3, 10, 13);
                      for (std::size_t t = 0; t < 10; ++t) {
                        const Instance inst = trial_instance(c, t);
                        const R2Result r = recover_r2(detail::phase_view(inst), tol);
                        const SparseVector b = brute_force_cs(inst.y_phase, inst.samples.z, inst.grid, inst.n, 2);
                        require(r.x.support() == b.support(), "support differs from brute force");
                        require((r.x.dense() - b.dense()).cwiseAbs().maxCoeff() <= 1e-8, "values differ from brute force");
                      }
                    }});
  checks.push_back({"r5-harmonic-count", [](const Tolerances& tol) {
                      ExperimentConfig c = detail::quick(Mode::R4, 3, "4s-1", "4s-1", SampleKind::Harmonic, kPi, 5, 14);
                      c.theta_mode = ThetaMode::DftGrid;
                      detail::require_campaign(c, tol, 4);
                    }});
  checks.push_back({"r5-dual-pair", [](const Tolerances& tol) {
                      ExperimentConfig c = detail::quick(Mode::R4, 2, "4s-1", "8s-3", SampleKind::Arbitrary, 0.0, 5, 15);
                      c.tol = tol;
                      for (std::size_t t = 0; t < 5; ++t) {
                        const Instance inst = trial_instance(c, t);
                        const Outcome o = run_recovery(Mode::R4, inst, tol);
                        require(o.candidates.size() == 2, "dual-pair branch did not give 2 candidates");
                        const CVec d = dual(o.candidates[0], o.theta, inst.n);
                        require(phase_aligned_error(d, o.candidates[1]) <= 1e-8, "candidates are not duals");
                        TrialRecord rec;
                        rec.mode = Mode::R4;
                        score(rec, o, inst, 1e-6);
                        require(rec.success, "truth is not among the candidates");
                      }
                    }});
  checks.push_back({"r5-disambiguation", [](const Tolerances& tol) {
                      ExperimentConfig c = detail::quick(Mode::R5, 2, "4s-1", "4s-1", SampleKind::Harmonic, kPi, 5, 16);
                      c.theta_mode = ThetaMode::DftGrid;
                      c.extra_row = true;
                      detail::require_campaign(c, tol, 2);
                    }});
  checks.push_back({"r3-grid", [](const Tolerances& tol) {
                      ExperimentConfig c = detail::quick(Mode::R3, 2, "4s-1", "4s-1", SampleKind::Harmonic, kPi, 5, 17);
                      c.extra_row = true;
                      detail::require_campaign(c, tol, 2);
                    }});
  checks.push_back({"forward-dual-path", [](const Tolerances&) {
                      Rng rng(18);
                      for (int t = 0; t < 50; ++t) {
                        std::vector<cplx> theta, g, z;
                        for (int k = 0; k < 3; ++k) {
                          theta.push_back(std::polar(std::exp(rng.uniform(-0.7, 0.7)), rng.uniform(0.0, 2.0 * kPi)));
                          g.push_back(rng.complex_normal());
                        }
                        for (int j = 0; j < 6; ++j) z.push_back(std::polar(std::sqrt(rng.uniform()), rng.uniform(0.0, 2.0 * kPi)));
                        const CVec a = forward_phase(theta, g, z, 8), b = forward_phase_rational(theta, g, z, 8);
                        require((a - b).norm() <= 1e-10 * std::max(1.0, a.norm()), "dual-path forward models disagree");
                      }
                    }});
  checks.push_back({"forward-laurent", [](const Tolerances&) {
                      Rng rng(19);
                      for (int t = 0; t < 50; ++t) {
                        std::vector<cplx> theta, g, z;
                        for (int k = 0; k < 3; ++k) {
                          theta.push_back(std::polar(1.0, rng.uniform(0.0, 2.0 * kPi)));
                          g.push_back(rng.complex_normal());
                        }
                        for (int j = 0; j < 21; ++j) z.push_back(std::polar(1.0, rng.uniform(0.0, 2.0 * kPi)));
                        const Eigen::VectorXd a = forward_phaseless(theta, g, z, 11), b = forward_phaseless_laurent(theta, g, z, 11);
                        require((a - b).norm() <= 1e-10 * std::max(1.0, a.norm()), "Laurent form disagrees");
                      }
                    }});
  checks.push_back({"phaseless-oracle", [](const Tolerances& tol) {
                      ExperimentConfig c = detail::quick(Mode::R4, 2, "4s-1", "8s-3", SampleKind::Arbitrary, 0.0, 2, 20);
                      for (std::size_t t = 0; t < 2; ++t) {
                        Instance inst = trial_instance(c, t);
                        inst.s = 2;
                        const Outcome o = run_recovery(Mode::R4, inst, tol);
                        const auto oracle = brute_force_phaseless_candidates(inst.y_phaseless, o.theta, inst.samples.z, inst.n, 128);
                        require(oracle.size() == o.candidates.size(), "oracle and pipeline candidate counts differ");
                        for (const CVec& b : oracle) {
                          double best = std::numeric_limits<double>::infinity();
                          for (const CVec& a : o.candidates) best = std::min(best, phase_aligned_error(a, b));
                          require(best <= 1e-6, "oracle candidate missing from the pipeline");
                        }
                      }
                    }});
  return checks;
}

/// Names (with messages) of the failing checks; empty means pass.
inline std::vector<std::string> run_selftest(const Tolerances& tol, std::ostream* log = nullptr) {
  std::vector<std::string> failures;
  for (const SelfTestCheck& check : selftest_checks()) {
    std::string msg;
    try {
      check.run(tol);
    } catch (const std::exception& e) {
      msg = e.what();
    }
    if (log) *log << (msg.empty() ? "ok   " : "FAIL ") << check.name << (msg.empty() ? "" : ": " + msg) << '\n';
    if (!msg.empty()) failures.push_back(check.name + ": " + msg);
  }
  return failures;
}

}  // namespace vrecover::harness
