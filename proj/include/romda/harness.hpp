#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "romda/dataio.hpp"
#include "romda/drivers.hpp"
#include "romda/ekf.hpp"
#include "romda/error.hpp"
#include "romda/features.hpp"
#include "romda/ident.hpp"
#include "romda/latent.hpp"
#include "romda/obs.hpp"
#include "romda/rng.hpp"
#include "romda/synthtwin.hpp"
#include "romda/timeutil.hpp"

namespace romda {

inline constexpr const char* kVersion = "romda 0.1.0";

/// Mean absolute percentage error, (100 / N) sum |est - meas| / meas.
inline double mape(const std::vector<double>& estimates, const std::vector<double>& measurements) {
  require(!measurements.empty(), ErrorCode::EmptyInput, "MAPE needs at least one sample");
  require(estimates.size() == measurements.size(), ErrorCode::DimensionMismatch, "MAPE inputs differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < measurements.size(); ++i) {
    require(measurements[i] > 0.0, ErrorCode::NonPositiveMeasurement, "MAPE measurement must be positive");
    sum += std::abs(estimates[i] - measurements[i]) / measurements[i];
  }
  return 100.0 * sum / static_cast<double>(measurements.size());
}

// ---------------------------------------------------------------------------
// Configuration

using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines; '#' starts a comment, blank lines are ignored
/// and later keys override earlier ones.
inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::ConfigError, "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = csv::trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::ConfigError, "config line " + std::to_string(line_no) + ": empty key");
    out[key] = csv::trim(line.substr(eq + 1));
  }
  return out;
}

inline ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::ConfigError, "cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

inline double to_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ConfigError, "config key '" + key + "': '" + v + "' is not a number");
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const double d = to_number(key, v);
  require(d >= 0.0 && std::floor(d) == d, ErrorCode::ConfigError, "config key '" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::ConfigError, "config key '" + key + "': '" + v + "' is not a boolean");
}

inline std::int64_t to_epoch(const std::string& key, const std::string& v) {
  try {
    const double e = timeutil::parse_epoch(v);
    require(std::floor(e) == e, ErrorCode::ConfigError, "config key '" + key + "' must be a whole second");
    return static_cast<std::int64_t>(e);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    fail(ErrorCode::ConfigError, "config key '" + key + "': " + e.what());
  }
}

}  // namespace detail

/// Named kinematic orbit for the twin generator.
struct NamedOrbit {
  std::string satellite_id;
  OrbitSpec orbit;
};

inline std::string format_orbit(const OrbitSpec& o) {
  return format_double(o.altitude_km) + "," + format_double(o.inclination_deg) + "," + format_double(o.period_min) +
         "," + format_double(o.initial_phase_rad) + "," + format_double(o.node_lt_hours) + "," +
         format_double(o.lt_drift_hours_per_day);
}

inline OrbitSpec parse_orbit(const std::string& key, const std::string& v) {
  const auto parts = detail::split_list(v);
  require(parts.size() == 6, ErrorCode::ConfigError,
          "config key '" + key + "' needs alt_km,inclination_deg,period_min,phase_rad,node_lt_h,drift_h_per_day");
  OrbitSpec o;
  o.altitude_km = detail::to_number(key, parts[0]);
  o.inclination_deg = detail::to_number(key, parts[1]);
  o.period_min = detail::to_number(key, parts[2]);
  o.initial_phase_rad = detail::to_number(key, parts[3]);
  o.node_lt_hours = detail::to_number(key, parts[4]);
  o.lt_drift_hours_per_day = detail::to_number(key, parts[5]);
  return o;
}

/// Settings of the `synth` verb.
struct SynthSettings {
  GridSpec grid;
  std::size_t r_true = 4;
  std::uint64_t seed = 1;
  DriverScenario scenario = DriverScenario::Storm;
  std::size_t hours = 72;
  double spectral_radius = 0.95;
  double field_amplitude = 0.3;
  double quad_strength = 0.0;
  double process_noise_std = 0.0;
  double perturb = 0.0;
  std::uint64_t perturb_seed = 7;
  double negative_fraction = 0.0;
  std::vector<NamedOrbit> orbits;

  static std::vector<NamedOrbit> default_orbits() {
    return {{"CHAMP", {400.0, 87.18, 93.6, 0.0, 10.5, 0.0, 0}},
            {"GRACE", {480.0, 89.0, 94.5, 1.3, 4.0, 0.0, 0}},
            {"SWARMC", {450.0, 87.35, 93.7, 2.6, 16.0, 0.0, 0}}};
  }
};

struct ExperimentConfig {
  std::optional<std::int64_t> start;
  std::optional<std::int64_t> stop;
  std::vector<std::string> assimilated;  ///< track CSV files fed to the filter
  std::vector<std::string> withheld;     ///< track CSV files used only for evaluation
  std::vector<std::string> snapshots;    ///< training snapshot containers
  std::string model_path = "model.rdx";
  std::string basis_path = "basis.rdx";
  std::string drivers_path = "drivers.csv";
  std::string output_dir = "out";

  ModelKind kind = ModelKind::SindycAr;
  std::size_t rank = 10;
  std::size_t n_ar = 5;
  int max_degree = 2;
  double alpha = 5e5;
  bool standardize = true;

  std::int64_t t2_s = 60;
  double spin_up_s = 6.0 * 3600.0;
  double q1 = 1e-2;
  double q2 = 1e-3;
  double p0 = 10.0;
  double q_scale = 1.0;
  bool use_q_suggest = false;
  bool gate = false;
  double gate_sigma = 6.0;
  double positivity_floor = 0.0;
  double rel_err = 0.05;
  std::size_t n_mc = 100;
  std::uint64_t seed = 0;
  std::optional<double> align_tolerance_s;
  std::optional<std::int64_t> eval_start;
  std::optional<std::int64_t> eval_stop;

  SynthSettings synth;

  NoiseConfig noise(std::size_t r) const {
    NoiseConfig n = NoiseConfig::defaults(r, q1, q2, p0);
    n.spin_up_s = spin_up_s;
    n.q_scale = q_scale;
    n.gate_enabled = gate;
    n.gate_sigma = gate_sigma;
    n.positivity_floor = positivity_floor;
    return n;
  }

  PreprocessOptions preprocess_options() const {
    PreprocessOptions p;
    p.t2_s = t2_s;
    p.align_tolerance_s = align_tolerance_s.value_or(0.5 * static_cast<double>(t2_s));
    p.rel_err = rel_err;
    p.n_mc = n_mc;
    p.seed = seed;
    return p;
  }

  /// Applies `key = value` pairs over the current values.
  void apply(const ConfigMap& m) {
    using namespace detail;
    for (const auto& [key, v] : m) {
      if (key == "start") start = to_epoch(key, v);
      else if (key == "stop") stop = to_epoch(key, v);
      else if (key == "assimilate") assimilated = split_list(v);
      else if (key == "withhold") withheld = split_list(v);
      else if (key == "snapshots") snapshots = split_list(v);
      else if (key == "model") model_path = v;
      else if (key == "basis") basis_path = v;
      else if (key == "drivers") drivers_path = v;
      else if (key == "output_dir") output_dir = v;
      else if (key == "kind") kind = parse_model_kind(v);
      else if (key == "rank") rank = to_count(key, v);
      else if (key == "n_ar") n_ar = to_count(key, v);
      else if (key == "max_degree") max_degree = static_cast<int>(to_count(key, v));
      else if (key == "alpha") alpha = to_number(key, v);
      else if (key == "standardize") standardize = to_bool(key, v);
      else if (key == "t2_s") t2_s = static_cast<std::int64_t>(to_count(key, v));
      else if (key == "spin_up_hours") spin_up_s = 3600.0 * to_number(key, v);
      else if (key == "spin_up_s") spin_up_s = to_number(key, v);
      else if (key == "q1") q1 = to_number(key, v);
      else if (key == "q2") q2 = to_number(key, v);
      else if (key == "p0") p0 = to_number(key, v);
      else if (key == "q_scale") q_scale = to_number(key, v);
      else if (key == "use_q_suggest") use_q_suggest = to_bool(key, v);
      else if (key == "gate") gate = to_bool(key, v);
      else if (key == "gate_sigma") gate_sigma = to_number(key, v);
      else if (key == "positivity_floor") positivity_floor = to_number(key, v);
      else if (key == "rel_err") rel_err = to_number(key, v);
      else if (key == "n_mc") n_mc = to_count(key, v);
      else if (key == "seed") seed = to_count(key, v);
      else if (key == "align_tolerance_s") align_tolerance_s = to_number(key, v);
      else if (key == "eval_start") eval_start = to_epoch(key, v);
      else if (key == "eval_stop") eval_stop = to_epoch(key, v);
      else if (key == "synth.n_lt") synth.grid.n_lt = to_count(key, v);
      else if (key == "synth.n_lat") synth.grid.n_lat = to_count(key, v);
      else if (key == "synth.n_alt") synth.grid.n_alt = to_count(key, v);
      else if (key == "synth.rank") synth.r_true = to_count(key, v);
      else if (key == "synth.seed") synth.seed = to_count(key, v);
      else if (key == "synth.scenario") synth.scenario = parse_driver_scenario(v);
      else if (key == "synth.hours") synth.hours = to_count(key, v);
      else if (key == "synth.spectral_radius") synth.spectral_radius = to_number(key, v);
      else if (key == "synth.field_amplitude") synth.field_amplitude = to_number(key, v);
      else if (key == "synth.quad_strength") synth.quad_strength = to_number(key, v);
      else if (key == "synth.process_noise") synth.process_noise_std = to_number(key, v);
      else if (key == "synth.perturb") synth.perturb = to_number(key, v);
      else if (key == "synth.perturb_seed") synth.perturb_seed = to_count(key, v);
      else if (key == "synth.negative_fraction") synth.negative_fraction = to_number(key, v);
      else if (key.rfind("orbit.", 0) == 0) {
        const std::string sat = key.substr(6);
        require(!sat.empty(), ErrorCode::ConfigError, "orbit key needs a satellite name");
        auto it = std::find_if(synth.orbits.begin(), synth.orbits.end(),
                               [&](const NamedOrbit& o) { return o.satellite_id == sat; });
        if (it == synth.orbits.end()) synth.orbits.push_back({sat, parse_orbit(key, v)});
        else it->orbit = parse_orbit(key, v);
      } else {
        fail(ErrorCode::ConfigError, "unknown config key '" + key + "'");
      }
    }
  }

  static ExperimentConfig from_map(const ConfigMap& m) {
    ExperimentConfig c;
    c.apply(m);
    return c;
  }

  /// Every resolved setting as `key = value`, keys sorted.
  ConfigMap resolved() const {
    ConfigMap m;
    auto num = [](double v) { return format_double(v); };
    if (start) m["start"] = timeutil::format_iso(*start);
    if (stop) m["stop"] = timeutil::format_iso(*stop);
    m["assimilate"] = detail::join_list(assimilated);
    m["withhold"] = detail::join_list(withheld);
    m["snapshots"] = detail::join_list(snapshots);
    m["model"] = model_path;
    m["basis"] = basis_path;
    m["drivers"] = drivers_path;
    m["output_dir"] = output_dir;
    m["kind"] = to_string(kind);
    m["rank"] = std::to_string(rank);
    m["n_ar"] = std::to_string(n_ar);
    m["max_degree"] = std::to_string(max_degree);
    m["alpha"] = num(alpha);
    m["standardize"] = standardize ? "true" : "false";
    m["t2_s"] = std::to_string(t2_s);
    m["spin_up_s"] = num(spin_up_s);
    m["q1"] = num(q1);
    m["q2"] = num(q2);
    m["p0"] = num(p0);
    m["q_scale"] = num(q_scale);
    m["use_q_suggest"] = use_q_suggest ? "true" : "false";
    m["gate"] = gate ? "true" : "false";
    m["gate_sigma"] = num(gate_sigma);
    m["positivity_floor"] = num(positivity_floor);
    m["rel_err"] = num(rel_err);
    m["n_mc"] = std::to_string(n_mc);
    m["seed"] = std::to_string(seed);
    m["align_tolerance_s"] = num(preprocess_options().align_tolerance_s);
    if (eval_start) m["eval_start"] = timeutil::format_iso(*eval_start);
    if (eval_stop) m["eval_stop"] = timeutil::format_iso(*eval_stop);
    m["synth.n_lt"] = std::to_string(synth.grid.n_lt);
    m["synth.n_lat"] = std::to_string(synth.grid.n_lat);
    m["synth.n_alt"] = std::to_string(synth.grid.n_alt);
    m["synth.rank"] = std::to_string(synth.r_true);
    m["synth.seed"] = std::to_string(synth.seed);
    m["synth.scenario"] = to_string(synth.scenario);
    m["synth.hours"] = std::to_string(synth.hours);
    m["synth.spectral_radius"] = num(synth.spectral_radius);
    m["synth.field_amplitude"] = num(synth.field_amplitude);
    m["synth.quad_strength"] = num(synth.quad_strength);
    m["synth.process_noise"] = num(synth.process_noise_std);
    m["synth.perturb"] = num(synth.perturb);
    m["synth.perturb_seed"] = std::to_string(synth.perturb_seed);
    m["synth.negative_fraction"] = num(synth.negative_fraction);
    for (const auto& o : synth.orbits) m["orbit." + o.satellite_id] = format_orbit(o.orbit);
    return m;
  }

  std::string canonical_text() const {
    std::string out;
    for (const auto& [k, v] : resolved()) out += k + " = " + v + "\n";
    return out;
  }

  std::string hash() const {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_text())));
    return buf;
  }

  void validate_window() const {
    require(start.has_value() && stop.has_value(), ErrorCode::ConfigError, "start and stop are required");
    require(*start < *stop, ErrorCode::ConfigError, "start must precede stop");
  }
};

inline void require_file(const std::string& path, const std::string& what) {
  require(std::filesystem::exists(path), ErrorCode::ConfigError, what + " '" + path + "' does not exist");
}

// ---------------------------------------------------------------------------
// synth

struct SynthResult {
  TwinSpec spec;
  TwinTruth truth;
  std::map<std::string, std::vector<TrackMeasurement>> tracks;
};

/// Twin for the configured scenario. With a nonzero `synth.perturb` the truth
/// runs on perturbed coefficients, which the nominal twin never sees.
inline SynthResult run_synth(const ExperimentConfig& cfg) {
  const auto& s = cfg.synth;
  TwinOptions opt;
  opt.grid = s.grid;
  opt.r_true = s.r_true;
  opt.seed = s.seed;
  opt.scenario = s.scenario;
  opt.start_epoch = cfg.start.value_or(0);
  opt.hours = s.hours;
  opt.spectral_radius = s.spectral_radius;
  opt.field_amplitude = s.field_amplitude;
  opt.quad_strength = s.quad_strength;
  opt.process_noise_std = s.process_noise_std;

  SynthResult res;
  res.spec = make_twin_spec(opt);
  if (s.perturb > 0.0) res.spec = perturb_twin(res.spec, s.perturb, s.perturb_seed);
  res.truth = generate_truth(res.spec);

  const auto orbits = s.orbits.empty() ? SynthSettings::default_orbits() : s.orbits;
  const auto epochs = epoch_grid(res.truth.epochs.front(), res.truth.epochs.back(), cfg.t2_s);
  for (const auto& o : orbits) {
    OrbitSpec orbit = o.orbit;
    orbit.epoch0 = res.truth.epochs.front();
    SynthOptions so;
    so.rel_err = cfg.rel_err;
    so.seed = hash_combine(cfg.seed, s.seed);
    so.satellite_id = o.satellite_id;
    so.n_mc = cfg.n_mc;
    so.negative_fraction = s.negative_fraction;
    res.tracks[o.satellite_id] = synthesize_measurements(res.truth.snapshots, epochs, fly_orbit(orbit, epochs), so);
  }
  return res;
}

inline void write_synth(const SynthResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_snapshot_series(dir / "snapshots.rdx", res.truth.snapshots);
  write_driver_csv(dir / "drivers.csv", res.truth.driver_series);
  for (const auto& [sat, ms] : res.tracks) write_track_csv(dir / ("track_" + sat + ".csv"), to_raw_rows(ms));
  Container latent;
  latent.put_matrix("z_true", res.truth.latents);
  latent.put_matrix("A0", res.spec.a0);
  latent.put_matrix("B0", res.spec.b0);
  latent.put_vector("c0", res.spec.c0);
  latent.put_matrix("lift", res.spec.lift);
  latent.attrs["content"] = std::string("twin_truth");
  write_container(dir / "truth_latents.rdx", latent);
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  LatentBasis basis;
  RomModel model;
  Eigen::MatrixXd latents;
  std::vector<std::int64_t> epochs;
};

/// Fits basis and model from in-memory snapshots and drivers.
inline TrainResult train_from_snapshots(const std::vector<FieldSnapshot>& snaps, const DriverSeries& drivers,
                                        const ExperimentConfig& cfg) {
  require(snaps.size() >= 3, ErrorCode::InsufficientData, "training needs at least three snapshots");
  const std::int64_t cadence = snaps[1].epoch - snaps[0].epoch;
  require(cadence > 0, ErrorCode::DuplicateEpoch, "snapshot epochs must increase");
  for (std::size_t i = 1; i < snaps.size(); ++i)
    require(snaps[i].epoch - snaps[i - 1].epoch == cadence, ErrorCode::InvalidArgument,
            "snapshots must be evenly spaced in time");

  TrainResult res;
  for (const auto& s : snaps) res.epochs.push_back(s.epoch);
  const Eigen::MatrixXd x = snapshot_matrix(snaps);
  res.basis = fit_basis(x, cfg.rank, snaps.front().grid);
  res.latents = project_all(res.basis, x);
  const Eigen::MatrixXd u = driver_matrix(DriverInterpolator(drivers), res.epochs);

  RegressionConfig rc{cfg.alpha, cfg.standardize};
  if (cfg.kind == ModelKind::Dmdc) {
    res.model = fit_dmdc(res.latents, u, rc, static_cast<double>(cadence));
  } else {
    const auto spec = enumerate_terms(cfg.rank, kDriverCount, cfg.max_degree);
    res.model = fit_sindyc_ar(res.latents, u, cfg.n_ar, spec, rc, static_cast<double>(cadence));
  }
  return res;
}

/// Loads snapshots and drivers, fits, and persists basis and model.
inline TrainResult run_train(const ExperimentConfig& cfg) {
  require(!cfg.snapshots.empty(), ErrorCode::ConfigError, "no training snapshots configured");
  for (const auto& p : cfg.snapshots) require_file(p, "snapshot file");
  require_file(cfg.drivers_path, "driver file");
  std::vector<std::filesystem::path> paths(cfg.snapshots.begin(), cfg.snapshots.end());
  auto snaps = ingest_snapshots(paths);
  if (cfg.start || cfg.stop) {
    std::erase_if(snaps, [&](const FieldSnapshot& s) {
      return (cfg.start && s.epoch < *cfg.start) || (cfg.stop && s.epoch > *cfg.stop);
    });
  }
  const DriverSeries drivers = read_driver_csv(cfg.drivers_path);
  TrainResult res = train_from_snapshots(snaps, drivers, cfg);
  save_basis(cfg.basis_path, res.basis);
  save_model(cfg.model_path, res.model);
  return res;
}

// ---------------------------------------------------------------------------
// assimilate

struct MapeRow {
  std::string satellite_id;
  std::string role;      ///< "assimilated" or "withheld"
  std::string estimate;  ///< "assimilated" or "open_loop"
  double mape_percent = 0.0;  ///< NaN when no sample is evaluated
  std::size_t n = 0;
};

struct ResidualRow {
  std::int64_t epoch = 0;
  double elapsed_s = 0.0;
  std::string satellite_id;
  std::string role;
  double lat = 0.0, lt = 0.0, alt = 0.0;
  double rho_meas = 0.0;
  double rho_assimilated = 0.0;
  double rho_open_loop = 0.0;
  bool evaluated = false;
};

struct InnovationRow {
  std::int64_t epoch = 0;
  std::string satellite_id;
  double nu = 0.0;
  double s_ii = 0.0;
  bool gated = false;
};

struct EvalReport {
  std::vector<MapeRow> summary;
  std::vector<ResidualRow> residuals;
  std::vector<InnovationRow> innovations;
  std::vector<std::pair<std::string, std::string>> satellites;  ///< (id, role) in report order
  std::map<std::string, std::string> metadata;
  std::string config_text;
  double innovation_mean = 0.0;
  double normalized_innovation_sq_mean = 0.0;
  std::size_t non_positive_events = 0;
};

struct AssimilationRun {
  std::vector<std::int64_t> epochs;
  Eigen::MatrixXd z_assimilated;  ///< r x steps, posterior means
  Eigen::MatrixXd z_open_loop;    ///< r x steps
  Eigen::VectorXd p_trace;        ///< trace of the current-block posterior covariance
  EvalReport report;
};

struct TrackSet {
  std::vector<TrackMeasurement> measurements;
  std::string role;
};

/// Window evaluation predicate: after spin-up and inside the optional
/// evaluation window.
inline bool in_evaluation(const ExperimentConfig& cfg, std::int64_t start, std::int64_t epoch) {
  if (static_cast<double>(epoch - start) < cfg.spin_up_s) return false;
  if (cfg.eval_start && epoch < *cfg.eval_start) return false;
  if (cfg.eval_stop && epoch > *cfg.eval_stop) return false;
  return true;
}

inline std::vector<MapeRow> summarize(const std::vector<ResidualRow>& rows,
                                      const std::vector<std::pair<std::string, std::string>>& sats) {
  std::vector<MapeRow> out;
  for (const auto& [sat, role] : sats) {
    std::vector<double> meas, assim, open;
    for (const auto& r : rows)
      if (r.satellite_id == sat && r.evaluated) {
        meas.push_back(r.rho_meas);
        assim.push_back(r.rho_assimilated);
        open.push_back(r.rho_open_loop);
      }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.push_back({sat, role, "assimilated", meas.empty() ? nan : mape(assim, meas), meas.size()});
    out.push_back({sat, role, "open_loop", meas.empty() ? nan : mape(open, meas), meas.size()});
  }
  return out;
}

/// Runs the filter and the open-loop baseline over [start, stop] at t2.
///
/// Step k > 0 predicts with the drivers at epoch k-1, then updates with every
/// assimilated measurement at epoch k. Both estimates are evaluated at every
/// measurement epoch of every track, in linear density.
inline AssimilationRun assimilate(const ExperimentConfig& cfg, const LatentBasis& basis, const RomModel& model_t1,
                                  const DriverSeries& drivers, const std::vector<TrackSet>& tracks) {
  cfg.validate_window();
  const std::int64_t start = *cfg.start;
  const std::int64_t stop = *cfg.stop;
  const RomModel model = rescale_cadence(model_t1, static_cast<double>(cfg.t2_s));
  require(basis.rank() == model.r, ErrorCode::DimensionMismatch, "basis rank does not match model");
  const DriverInterpolator interp(drivers);
  require(interp.first_epoch() <= static_cast<double>(start) && interp.last_epoch() >= static_cast<double>(stop),
          ErrorCode::OutOfRangeEpoch, "drivers do not cover the assimilation window");

  NoiseConfig noise = cfg.noise(model.r);
  if (cfg.use_q_suggest && model.q_suggest.size() > 0) noise.q = model.q_suggest;
  const UpdateOptions uopt = UpdateOptions::from(noise);

  AssimilationRun run;
  run.epochs = epoch_grid(start, stop, cfg.t2_s);
  const std::size_t n_steps = run.epochs.size();

  // Measurement lookup by step index.
  struct Slot {
    const TrackMeasurement* m;
    bool assimilate;
    const std::string* role;
  };
  std::vector<std::vector<Slot>> by_step(n_steps);
  std::set<std::string> seen_sats;
  for (const auto& t : tracks) {
    std::set<std::string> in_this;
    for (const auto& m : t.measurements) {
      if (m.epoch < start || m.epoch > stop || (m.epoch - start) % cfg.t2_s != 0) continue;
      by_step[static_cast<std::size_t>((m.epoch - start) / cfg.t2_s)].push_back({&m, t.role == "assimilated", &t.role});
      in_this.insert(m.satellite_id);
    }
    for (const auto& m : t.measurements) {
      if (in_this.count(m.satellite_id) && seen_sats.insert(m.satellite_id).second)
        run.report.satellites.emplace_back(m.satellite_id, t.role);
    }
  }

  // Observation operators are cached per location.
  std::map<std::tuple<double, double, double>, ObsOperator> op_cache;
  auto op_for = [&](const TrackMeasurement& m) -> const ObsOperator& {
    const auto key = std::make_tuple(m.lat, m.lt, m.alt);
    auto it = op_cache.find(key);
    if (it == op_cache.end()) it = op_cache.emplace(key, build_obs_operator(basis, m.location())).first;
    return it->second;
  };

  FilterState st = init_filter(model, noise, static_cast<double>(cfg.t2_s));
  FilterState ol = st;
  const auto r = static_cast<Eigen::Index>(model.r);
  run.z_assimilated.resize(r, static_cast<Eigen::Index>(n_steps));
  run.z_open_loop.resize(r, static_cast<Eigen::Index>(n_steps));
  run.p_trace.resize(static_cast<Eigen::Index>(n_steps));

  double nu_sum = 0.0, nis_sum = 0.0;
  std::size_t nu_count = 0;
  for (std::size_t k = 0; k < n_steps; ++k) {
    if (k > 0) {
      const Eigen::VectorXd u = interp.driver_at(static_cast<double>(run.epochs[k - 1]));
      try {
        st = predict(st, model, u);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteState) throw;
        fail(ErrorCode::NonFiniteState, "filter diverged at " + timeutil::format_iso(run.epochs[k]) + ": " + e.what());
      }
      ol = predict(ol, model, u);
    }

    std::vector<ObsOperator> ops;
    std::vector<double> y, s2;
    std::vector<const TrackMeasurement*> used;
    for (const auto& slot : by_step[k]) {
      if (!slot.assimilate) continue;
      ops.push_back(op_for(*slot.m));
      y.push_back(slot.m->log10_rho());
      s2.push_back(slot.m->sigma_v2);
      used.push_back(slot.m);
    }
    if (!ops.empty()) {
      const UpdateResult ur = update_multi(st, ops, y, s2, uopt);
      st = ur.state;
      Eigen::Index used_idx = 0;
      for (std::size_t i = 0; i < used.size(); ++i) {
        InnovationRow row{run.epochs[k], used[i]->satellite_id, ur.innovation.nu(static_cast<Eigen::Index>(i)), 0.0,
                          ur.innovation.gated[i]};
        if (!row.gated) {
          row.s_ii = ur.innovation.s(used_idx, used_idx);
          ++used_idx;
          nu_sum += row.nu;
          nis_sum += row.nu * row.nu / row.s_ii;
          ++nu_count;
        }
        run.report.innovations.push_back(std::move(row));
      }
      if (ur.innovation.non_positive) ++run.report.non_positive_events;
    } else {
      st = skip_update(st);
    }

    const auto kk = static_cast<Eigen::Index>(k);
    run.z_assimilated.col(kk) = st.current();
    run.z_open_loop.col(kk) = ol.current();
    run.p_trace(kk) = st.p_aug.topLeftCorner(r, r).trace();

    for (const auto& slot : by_step[k]) {
      const auto& m = *slot.m;
      const ObsOperator& op = op_for(m);
      ResidualRow row;
      row.epoch = m.epoch;
      row.elapsed_s = static_cast<double>(m.epoch - start);
      row.satellite_id = m.satellite_id;
      row.role = *slot.role;
      row.lat = m.lat;
      row.lt = m.lt;
      row.alt = m.alt;
      row.rho_meas = m.rho;
      row.rho_assimilated = predict_log_density(op, st.current()).linear_density;
      row.rho_open_loop = predict_log_density(op, ol.current()).linear_density;
      row.evaluated = in_evaluation(cfg, start, m.epoch);
      run.report.residuals.push_back(std::move(row));
    }
  }

  auto& rep = run.report;
  rep.summary = summarize(rep.residuals, rep.satellites);
  if (nu_count > 0) {
    rep.innovation_mean = nu_sum / static_cast<double>(nu_count);
    rep.normalized_innovation_sq_mean = nis_sum / static_cast<double>(nu_count);
  }
  rep.config_text = cfg.canonical_text();
  rep.metadata["config_hash"] = cfg.hash();
  rep.metadata["seed"] = std::to_string(cfg.seed);
  rep.metadata["version"] = kVersion;
  rep.metadata["model_kind"] = to_string(model.kind);
  rep.metadata["steps"] = std::to_string(n_steps);
  rep.metadata["innovations"] = std::to_string(nu_count);
  rep.metadata["innovation_mean"] = format_double(rep.innovation_mean);
  rep.metadata["nis_mean"] = format_double(rep.normalized_innovation_sq_mean);
  rep.metadata["non_positive_events"] = std::to_string(rep.non_positive_events);
  return run;
}

/// Loads configured files, preprocesses tracks and runs `assimilate`.
inline AssimilationRun run_assimilate(const ExperimentConfig& cfg) {
  cfg.validate_window();
  require(!cfg.assimilated.empty(), ErrorCode::ConfigError, "at least one assimilated track is required");
  require_file(cfg.model_path, "model file");
  require_file(cfg.basis_path, "basis file");
  require_file(cfg.drivers_path, "driver file");
  for (const auto& p : cfg.assimilated) require_file(p, "track file");
  for (const auto& p : cfg.withheld) require_file(p, "track file");

  const LatentBasis basis = load_basis(cfg.basis_path);
  const RomModel model = load_model(cfg.model_path);
  const DriverSeries drivers = read_driver_csv(cfg.drivers_path);
  std::vector<TrackSet> tracks;
  for (const auto& p : cfg.assimilated)
    tracks.push_back({preprocess_track(read_track_csv(p), cfg.preprocess_options()).measurements, "assimilated"});
  for (const auto& p : cfg.withheld)
    tracks.push_back({preprocess_track(read_track_csv(p), cfg.preprocess_options()).measurements, "withheld"});
  return assimilate(cfg, basis, model, drivers, tracks);
}

// ---------------------------------------------------------------------------
// reports

inline constexpr const char* kMapeCsvHeader = "satellite_id,role,estimate,mape_percent,n";
inline constexpr const char* kResidualCsvHeader =
    "epoch_utc,elapsed_s,satellite_id,role,lat_deg,lt_hours,alt_km,rho_meas,rho_assimilated,rho_open_loop,evaluated";
inline constexpr const char* kInnovationCsvHeader = "epoch_utc,satellite_id,innovation,innovation_variance,gated";

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open '" + p.string() + "' for writing");
  return out;
}

inline void close_out(std::ofstream& out, const std::filesystem::path& p) {
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write to '" + p.string() + "' failed");
}

}  // namespace detail

inline void write_mape_csv(const std::filesystem::path& p, const std::vector<MapeRow>& rows) {
  auto out = detail::open_out(p);
  out << kMapeCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.satellite_id << ',' << r.role << ',' << r.estimate << ',' << format_double(r.mape_percent) << ',' << r.n
        << '\n';
  detail::close_out(out, p);
}

inline void write_residual_csv(const std::filesystem::path& p, const std::vector<ResidualRow>& rows) {
  auto out = detail::open_out(p);
  out << kResidualCsvHeader << '\n';
  for (const auto& r : rows)
    out << timeutil::format_iso(r.epoch) << ',' << format_double(r.elapsed_s) << ',' << r.satellite_id << ','
        << r.role << ',' << format_double(r.lat) << ',' << format_double(r.lt) << ',' << format_double(r.alt) << ','
        << format_double(r.rho_meas) << ',' << format_double(r.rho_assimilated) << ','
        << format_double(r.rho_open_loop) << ',' << (r.evaluated ? 1 : 0) << '\n';
  detail::close_out(out, p);
}

inline std::vector<ResidualRow> read_residual_csv(const std::filesystem::path& p) {
  std::vector<ResidualRow> out;
  for (const auto& f : csv::read(p, kResidualCsvHeader)) {
    ResidualRow r;
    const std::string ctx = p.string();
    r.epoch = static_cast<std::int64_t>(timeutil::parse_epoch(f[0]));
    r.elapsed_s = csv::to_double(f[1], ctx);
    r.satellite_id = f[2];
    r.role = f[3];
    r.lat = csv::to_double(f[4], ctx);
    r.lt = csv::to_double(f[5], ctx);
    r.alt = csv::to_double(f[6], ctx);
    r.rho_meas = csv::to_double(f[7], ctx);
    r.rho_assimilated = csv::to_double(f[8], ctx);
    r.rho_open_loop = csv::to_double(f[9], ctx);
    r.evaluated = csv::to_double(f[10], ctx) != 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

/// Recomputes MAPE from residual rows with a new spin-up and window.
inline std::vector<MapeRow> evaluate_residuals(std::vector<ResidualRow> rows, double spin_up_s,
                                               std::optional<std::int64_t> eval_start = {},
                                               std::optional<std::int64_t> eval_stop = {}) {
  std::vector<std::pair<std::string, std::string>> sats;
  for (auto& r : rows) {
    r.evaluated = r.elapsed_s >= spin_up_s && !(eval_start && r.epoch < *eval_start) && !(eval_stop && r.epoch > *eval_stop);
    if (std::find_if(sats.begin(), sats.end(), [&](const auto& s) { return s.first == r.satellite_id; }) == sats.end())
      sats.emplace_back(r.satellite_id, r.role);
  }
  return summarize(rows, sats);
}

/// Writes mape_summary.csv, residuals_<sat>.csv, innovations.csv,
/// config_resolved.txt, run_metadata.txt, and gnuplot-ready
/// density_<sat>.dat and latent_series.dat.
inline void emit_report(const EvalReport& rep, const std::filesystem::path& dir, const AssimilationRun* run = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorCode::IoFailure, "cannot create report directory '" + dir.string() + "'");

  write_mape_csv(dir / "mape_summary.csv", rep.summary);
  for (const auto& [sat, role] : rep.satellites) {
    std::vector<ResidualRow> rows;
    for (const auto& r : rep.residuals)
      if (r.satellite_id == sat) rows.push_back(r);
    write_residual_csv(dir / ("residuals_" + sat + ".csv"), rows);

    const auto dat = dir / ("density_" + sat + ".dat");
    auto out = detail::open_out(dat);
    out << "# elapsed_h rho_meas rho_assimilated rho_open_loop  (" << sat << ", " << role << ")\n";
    for (const auto& r : rows)
      out << format_double(r.elapsed_s / 3600.0) << ' ' << format_double(r.rho_meas) << ' '
          << format_double(r.rho_assimilated) << ' ' << format_double(r.rho_open_loop) << '\n';
    detail::close_out(out, dat);
  }

  {
    const auto p = dir / "innovations.csv";
    auto out = detail::open_out(p);
    out << kInnovationCsvHeader << '\n';
    for (const auto& r : rep.innovations)
      out << timeutil::format_iso(r.epoch) << ',' << r.satellite_id << ',' << format_double(r.nu) << ','
          << format_double(r.s_ii) << ',' << (r.gated ? 1 : 0) << '\n';
    detail::close_out(out, p);
  }
  {
    const auto p = dir / "config_resolved.txt";
    auto out = detail::open_out(p);
    out << rep.config_text;
    detail::close_out(out, p);
  }
  {
    const auto p = dir / "run_metadata.txt";
    auto out = detail::open_out(p);
    for (const auto& [k, v] : rep.metadata) out << k << " = " << v << '\n';
    detail::close_out(out, p);
  }
  if (run) {
    const auto p = dir / "latent_series.dat";
    auto out = detail::open_out(p);
    out << "# elapsed_h trace_P z_assimilated[0..r) z_open_loop[0..r)\n";
    for (std::size_t k = 0; k < run->epochs.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      out << format_double(static_cast<double>(run->epochs[k] - run->epochs.front()) / 3600.0) << ' '
          << format_double(run->p_trace(kk));
      for (Eigen::Index i = 0; i < run->z_assimilated.rows(); ++i) out << ' ' << format_double(run->z_assimilated(i, kk));
      for (Eigen::Index i = 0; i < run->z_open_loop.rows(); ++i) out << ' ' << format_double(run->z_open_loop(i, kk));
      out << '\n';
    }
    detail::close_out(out, p);
  }
}

}  // namespace romda
