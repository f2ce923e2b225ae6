#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "romda/drivers.hpp"
#include "romda/error.hpp"
#include "romda/grid.hpp"
#include "romda/obs.hpp"
#include "romda/rng.hpp"
#include "romda/timeutil.hpp"

namespace romda {

enum class DriverScenario { Quiet, Ramp, Storm, Varied };

inline std::string to_string(DriverScenario s) {
  switch (s) {
    case DriverScenario::Quiet: return "quiet";
    case DriverScenario::Ramp: return "ramp";
    case DriverScenario::Storm: return "storm";
    case DriverScenario::Varied: return "varied";
  }
  return "?";
}

inline DriverScenario parse_driver_scenario(const std::string& s) {
  if (s == "quiet") return DriverScenario::Quiet;
  if (s == "ramp") return DriverScenario::Ramp;
  if (s == "storm") return DriverScenario::Storm;
  if (s == "varied") return DriverScenario::Varied;
  fail(ErrorCode::ConfigError, "unknown driver scenario '" + s + "'");
}

/// Hourly indices covering [start, start + hours] plus one trailing hour.
///
/// quiet: f107 near 120 with a slow 27-day wave, kp near 2 with a daily wave.
/// ramp: f107 90 -> 200 and kp 1 -> 5 linearly.
/// storm: quiet base; kp ramps 2 -> 8 -> 2 over 48 h centred in the window.
/// varied: seeded random walks with isolated storms, for training excitation.
inline DriverSeries make_driver_series(DriverScenario scenario, std::int64_t start_epoch, std::size_t hours,
                                       std::uint64_t seed = 0) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  DriverSeries s;
  const std::size_t n = hours + 2;
  const double span_h = static_cast<double>(hours);
  CounterRng rng(hash_combine(seed, fnv1a("drivers")));

  double f_walk = 0.0, fb_walk = 0.0, kp_walk = 0.0;
  std::vector<std::pair<double, double>> storms;  // (centre hour, peak kp)
  if (scenario == DriverScenario::Varied) {
    for (double h = rng.uniform(0.0, 72.0); h < span_h + 48.0; h += rng.uniform(60.0, 200.0))
      storms.emplace_back(h, rng.uniform(4.0, 8.5));
  }

  for (std::size_t k = 0; k < n; ++k) {
    const double h = static_cast<double>(k);
    double f = 120.0 + 8.0 * std::sin(two_pi * h / (27.0 * 24.0));
    double fb = 120.0 + 2.0 * std::sin(two_pi * h / (60.0 * 24.0));
    double kp = 2.0 + 0.7 * std::sin(two_pi * h / 24.0 + 0.4);
    switch (scenario) {
      case DriverScenario::Quiet: break;
      case DriverScenario::Ramp: {
        const double t = span_h > 0.0 ? std::min(h / span_h, 1.0) : 0.0;
        f = 90.0 + 110.0 * t;
        fb = 90.0 + 60.0 * t;
        kp = 1.0 + 4.0 * t;
        break;
      }
      case DriverScenario::Storm: {
        const double centre = 0.5 * span_h;
        const double dist = std::abs(h - centre);
        if (dist < 24.0) kp = 2.0 + 6.0 * (1.0 - dist / 24.0);
        else kp = 2.0;
        f += dist < 24.0 ? 10.0 * (1.0 - dist / 24.0) : 0.0;
        break;
      }
      case DriverScenario::Varied: {
        f_walk = 0.98 * f_walk + rng.uniform(-4.0, 4.0);
        fb_walk = 0.995 * fb_walk + rng.uniform(-0.8, 0.8);
        kp_walk = 0.9 * kp_walk + rng.uniform(-0.6, 0.6);
        f = 130.0 + 25.0 * std::sin(two_pi * h / (27.0 * 24.0)) + 4.0 * f_walk;
        fb = 125.0 + 10.0 * std::sin(two_pi * h / (90.0 * 24.0)) + 3.0 * fb_walk;
        kp = 2.0 + kp_walk + 0.6 * std::sin(two_pi * h / 24.0 + 1.1);
        for (const auto& [c, peak] : storms) {
          const double dist = std::abs(h - c);
          if (dist < 24.0) kp += (peak - 2.0) * (1.0 - dist / 24.0);
        }
        break;
      }
    }
    s.epochs.push_back(start_epoch + static_cast<std::int64_t>(k) * 3600);
    s.f107.push_back(f);
    s.f107_bar41.push_back(fb);
    s.kp.push_back(std::clamp(kp, 0.0, 9.0));
  }
  return s;
}

/// Truth quadratic term: row `target` gains coef * z_i * z_j.
struct QuadTerm {
  std::size_t target = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  double coef = 0.0;
};

/// Known latent system z+ = A0 z + B0 u + c0 + quad(z) + w, lifted to the grid
/// as log10 density mean_field + lift z.
struct TwinSpec {
  GridSpec grid;
  std::size_t r_true = 0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd a0;
  Eigen::MatrixXd b0;
  Eigen::VectorXd c0;
  std::vector<QuadTerm> quad;
  Eigen::MatrixXd lift;        ///< d x r_true, orthonormal columns
  Eigen::VectorXd mean_field;  ///< d, log10 density
  DriverSeries drivers;
  std::int64_t start_epoch = 0;
  std::size_t n_steps = 0;  ///< truth steps; n_steps + 1 snapshots
  double cadence_s = 3600.0;
  Eigen::VectorXd z0;
  double process_noise_std = 0.0;

  void validate() const {
    grid.validate();
    const auto r = static_cast<Eigen::Index>(r_true);
    require(r >= 1 && a0.rows() == r && a0.cols() == r && b0.rows() == r &&
                b0.cols() == static_cast<Eigen::Index>(kDriverCount) && c0.size() == r && z0.size() == r,
            ErrorCode::DimensionMismatch, "twin operators have inconsistent shapes");
    require(lift.rows() == static_cast<Eigen::Index>(grid.size()) && lift.cols() == r &&
                mean_field.size() == lift.rows(),
            ErrorCode::DimensionMismatch, "lift does not match grid");
    require((lift.transpose() * lift - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff() < 1e-10,
            ErrorCode::InvalidArgument, "lift columns must be orthonormal");
    const double rho = a0.eigenvalues().cwiseAbs().maxCoeff();
    require(rho < 1.0, ErrorCode::UnstableTruth, "A0 spectral radius " + std::to_string(rho) + " is not below 1");
    for (const auto& q : quad)
      require(q.target < r_true && q.i < r_true && q.j < r_true, ErrorCode::DimensionMismatch, "bad quadratic term");
    require(process_noise_std >= 0.0, ErrorCode::InvalidArgument, "process noise must be non-negative");
  }
};

struct TwinOptions {
  GridSpec grid;
  std::size_t r_true = 4;
  std::uint64_t seed = 1;
  DriverScenario scenario = DriverScenario::Storm;
  std::int64_t start_epoch = 0;
  std::size_t hours = 72;
  double spectral_radius = 0.95;
  /// Typical log10 excursion of the field per unit normalized driver change.
  double field_amplitude = 0.3;
  /// Relative strength of the z_0 z_1 -> z_0 quadratic term, 0 for a linear truth.
  double quad_strength = 0.0;
  double process_noise_std = 0.0;
};

/// Driver reference and scale used to normalize the truth driver gain.
inline Eigen::VectorXd twin_driver_reference() {
  Eigen::VectorXd u(static_cast<Eigen::Index>(kDriverCount));
  u << 120.0, 120.0, 2.0, 0.0, 0.0, 0.0, 0.0;
  return u;
}

inline Eigen::VectorXd twin_driver_scale() {
  Eigen::VectorXd s(static_cast<Eigen::Index>(kDriverCount));
  s << 50.0, 50.0, 3.0, 3.0, 3.0, 3.0, 3.0;
  return s;
}

/// Mean log10 density: exponential-like decay with altitude plus a
/// day/night bulge and a weak latitude dependence.
inline double twin_mean_log_density(double lt, double lat, double alt) {
  const double h = std::clamp((alt - 100.0) / 880.0, 0.0, 1.0);
  const double diurnal = 0.15 * (0.5 + h) * std::cos(2.0 * std::numbers::pi * (lt - 14.0) / 24.0);
  return -6.3 - 8.2 * std::pow(h, 0.55) + diurnal + 0.05 * (lat / 90.0) * (lat / 90.0);
}

/// Random orthonormal d x r basis drawn from a space of smooth separable
/// patterns (LT harmonics x latitude polynomials x altitude polynomials).
inline Eigen::MatrixXd make_smooth_lift(const GridSpec& grid, std::size_t r, std::uint64_t seed) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  constexpr int n_lt_fn = 5, n_lat_fn = 3, n_alt_fn = 3;
  constexpr std::size_t n_fn = n_lt_fn * n_lat_fn * n_alt_fn;
  require(r <= n_fn, ErrorCode::RankTooLarge, "twin rank exceeds the smooth pattern space");
  const auto d = static_cast<Eigen::Index>(grid.size());

  Eigen::MatrixXd patterns(d, static_cast<Eigen::Index>(n_fn));
  for (std::size_t i = 0; i < grid.n_lt; ++i)
    for (std::size_t j = 0; j < grid.n_lat; ++j)
      for (std::size_t k = 0; k < grid.n_alt; ++k) {
        const double a = two_pi * grid.lt_at(i) / 24.0;
        const double x = std::sin(grid.lat_at(j) * std::numbers::pi / 180.0);
        const double y = 2.0 * (grid.alt_at(k) - grid.alt_min) / (grid.alt_max - grid.alt_min) - 1.0;
        const double lt_fn[n_lt_fn] = {1.0, std::cos(a), std::sin(a), std::cos(2 * a), std::sin(2 * a)};
        const double lat_fn[n_lat_fn] = {1.0, x, x * x - 1.0 / 3.0};
        const double alt_fn[n_alt_fn] = {1.0, y, y * y - 1.0 / 3.0};
        const auto row = static_cast<Eigen::Index>(grid.index(i, j, k));
        Eigen::Index col = 0;
        for (double f1 : lt_fn)
          for (double f2 : lat_fn)
            for (double f3 : alt_fn) patterns(row, col++) = f1 * f2 * f3;
      }

  CounterRng rng(hash_combine(seed, fnv1a("lift")));
  Eigen::MatrixXd mix(static_cast<Eigen::Index>(n_fn), static_cast<Eigen::Index>(r));
  for (Eigen::Index c = 0; c < mix.cols(); ++c)
    for (Eigen::Index t = 0; t < mix.rows(); ++t) mix(t, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(patterns * mix);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, static_cast<Eigen::Index>(r));
}

/// Random stable A with positive real or complex eigenvalues of modulus at
/// most `radius`, conjugated by a random orthogonal matrix.
inline Eigen::MatrixXd make_stable_matrix(std::size_t r, double radius, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(r);
  CounterRng rng(hash_combine(seed, fnv1a("stable")));
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index i = 0;
  while (i < n) {
    const double mod = rng.uniform(0.5 * radius, radius);
    if (i + 1 < n && rng.uniform() < 0.5) {
      const double theta = rng.uniform(0.05, 0.3);
      d(i, i) = d(i + 1, i + 1) = mod * std::cos(theta);
      d(i, i + 1) = -mod * std::sin(theta);
      d(i + 1, i) = mod * std::sin(theta);
      i += 2;
    } else {
      d(i, i) = mod;
      i += 1;
    }
  }
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) g(a, b) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd v = qr.householderQ();
  return v * d * v.transpose();
}

inline TwinSpec make_twin_spec(const TwinOptions& opt) {
  opt.grid.validate();
  require(opt.spectral_radius > 0.0 && opt.spectral_radius < 1.0, ErrorCode::InvalidArgument,
          "spectral radius must lie in (0, 1)");
  TwinSpec spec;
  spec.grid = opt.grid;
  spec.r_true = opt.r_true;
  spec.seed = opt.seed;
  spec.start_epoch = opt.start_epoch;
  spec.n_steps = opt.hours;
  spec.process_noise_std = opt.process_noise_std;
  spec.drivers = make_driver_series(opt.scenario, opt.start_epoch, opt.hours, opt.seed);

  const auto r = static_cast<Eigen::Index>(opt.r_true);
  const auto d = static_cast<Eigen::Index>(opt.grid.size());
  spec.lift = make_smooth_lift(opt.grid, opt.r_true, opt.seed);
  spec.mean_field.resize(d);
  for (std::size_t i = 0; i < opt.grid.n_lt; ++i)
    for (std::size_t j = 0; j < opt.grid.n_lat; ++j)
      for (std::size_t k = 0; k < opt.grid.n_alt; ++k)
        spec.mean_field(static_cast<Eigen::Index>(opt.grid.index(i, j, k))) =
            twin_mean_log_density(opt.grid.lt_at(i), opt.grid.lat_at(j), opt.grid.alt_at(k));

  spec.a0 = make_stable_matrix(opt.r_true, opt.spectral_radius, opt.seed);

  // A latent unit moves the field by about 1/sqrt(d) per grid cell.
  const double latent_scale = opt.field_amplitude * std::sqrt(static_cast<double>(d));
  CounterRng rng(hash_combine(opt.seed, fnv1a("gain")));
  Eigen::MatrixXd gain(r, static_cast<Eigen::Index>(kDriverCount));
  for (Eigen::Index a = 0; a < gain.rows(); ++a)
    for (Eigen::Index b = 0; b < gain.cols(); ++b) gain(a, b) = rng.normal();
  gain *= latent_scale * (1.0 - opt.spectral_radius) / std::sqrt(static_cast<double>(r));
  spec.b0 = gain * twin_driver_scale().cwiseInverse().asDiagonal();
  spec.c0 = -spec.b0 * twin_driver_reference();
  spec.z0 = Eigen::VectorXd::Zero(r);

  if (opt.quad_strength != 0.0 && r >= 2)
    spec.quad.push_back({0, 0, 1, opt.quad_strength / latent_scale});
  spec.validate();
  return spec;
}

/// Copy of `spec` with every nonzero entry of A0, B0, c0 and the quadratic
/// coefficients scaled by (1 + frac * U(-1, 1)).
inline TwinSpec perturb_twin(const TwinSpec& spec, double frac, std::uint64_t seed) {
  TwinSpec out = spec;
  CounterRng rng(hash_combine(seed, fnv1a("perturb")));
  auto jitter = [&](double& v) { v *= 1.0 + frac * rng.uniform(-1.0, 1.0); };
  for (Eigen::Index i = 0; i < out.a0.size(); ++i) jitter(out.a0.data()[i]);
  for (Eigen::Index i = 0; i < out.b0.size(); ++i) jitter(out.b0.data()[i]);
  for (Eigen::Index i = 0; i < out.c0.size(); ++i) jitter(out.c0.data()[i]);
  for (auto& q : out.quad) jitter(q.coef);
  out.validate();
  return out;
}

struct TwinTruth {
  std::vector<FieldSnapshot> snapshots;  ///< log10 density
  Eigen::MatrixXd latents;               ///< r_true x (n_steps + 1)
  Eigen::MatrixXd drivers;               ///< 7 x (n_steps + 1), driver_at each snapshot epoch
  std::vector<std::int64_t> epochs;
  DriverSeries driver_series;
};

inline TwinTruth generate_truth(const TwinSpec& spec) {
  spec.validate();
  const auto r = static_cast<Eigen::Index>(spec.r_true);
  const std::size_t m = spec.n_steps + 1;
  const DriverInterpolator interp(spec.drivers);

  TwinTruth out;
  out.driver_series = spec.drivers;
  for (std::size_t k = 0; k < m; ++k)
    out.epochs.push_back(spec.start_epoch + static_cast<std::int64_t>(k) * static_cast<std::int64_t>(spec.cadence_s));
  out.drivers = driver_matrix(interp, out.epochs);
  out.latents.resize(r, static_cast<Eigen::Index>(m));
  out.latents.col(0) = spec.z0;

  CounterRng noise(hash_combine(spec.seed, fnv1a("process")));
  const double bound = 1e6 * std::max(1.0, std::sqrt(static_cast<double>(spec.grid.size())));
  for (std::size_t k = 0; k + 1 < m; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const Eigen::VectorXd z = out.latents.col(kk);
    Eigen::VectorXd next = spec.a0 * z + spec.b0 * out.drivers.col(kk) + spec.c0;
    for (const auto& q : spec.quad)
      next(static_cast<Eigen::Index>(q.target)) += q.coef * z(static_cast<Eigen::Index>(q.i)) * z(static_cast<Eigen::Index>(q.j));
    if (spec.process_noise_std > 0.0)
      for (Eigen::Index i = 0; i < r; ++i) next(i) += spec.process_noise_std * noise.normal();
    require(next.allFinite() && next.cwiseAbs().maxCoeff() < bound, ErrorCode::UnstableTruth,
            "truth latent diverged at step " + std::to_string(k + 1));
    out.latents.col(kk + 1) = next;
  }

  out.snapshots.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    FieldSnapshot s;
    s.grid = spec.grid;
    s.epoch = out.epochs[k];
    const Eigen::VectorXd field = spec.mean_field + spec.lift * out.latents.col(static_cast<Eigen::Index>(k));
    s.values.assign(field.data(), field.data() + field.size());
    out.snapshots.push_back(std::move(s));
  }
  return out;
}

/// Kinematic circular orbit.
struct OrbitSpec {
  double altitude_km = 400.0;
  double inclination_deg = 87.0;
  double period_min = 92.0;
  double initial_phase_rad = 0.0;  ///< argument of latitude at epoch0
  double node_lt_hours = 10.0;     ///< local time of the ascending branch
  double lt_drift_hours_per_day = 0.0;
  std::int64_t epoch0 = 0;

  void validate() const {
    require(altitude_km >= 100.0 && altitude_km <= 980.0, ErrorCode::AltitudeOutOfRange,
            "orbit altitude must lie in [100, 980] km");
    require(period_min > 0.0, ErrorCode::InvalidArgument, "orbit period must be positive");
  }
};

/// Latitude amplitude of the ground track: the inclination for prograde
/// orbits, 180 - inclination for retrograde ones.
inline double orbit_latitude_amplitude(double inclination_deg) {
  const double inc = std::abs(std::fmod(inclination_deg, 360.0));
  return inc <= 90.0 ? inc : (inc <= 180.0 ? 180.0 - inc : std::min(inc - 180.0, 360.0 - inc));
}

/// Latitude is amp * sin(u) with u the argument of latitude; LT follows the
/// node LT plus drift on the ascending branch and is offset by 12 h on the
/// descending branch.
inline std::vector<GeoLocation> fly_orbit(const OrbitSpec& orbit, const std::vector<std::int64_t>& epochs) {
  orbit.validate();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double amp = orbit_latitude_amplitude(orbit.inclination_deg);
  const double period_s = orbit.period_min * 60.0;
  std::vector<GeoLocation> out;
  out.reserve(epochs.size());
  for (auto e : epochs) {
    const double t = static_cast<double>(e - orbit.epoch0);
    const double u = orbit.initial_phase_rad + two_pi * std::fmod(t, period_s) / period_s;
    GeoLocation g;
    g.lat = amp * std::sin(u);
    g.alt = orbit.altitude_km;
    double lt = orbit.node_lt_hours + orbit.lt_drift_hours_per_day * t / 86400.0;
    if (std::cos(u) < 0.0) lt += 12.0;
    lt = std::fmod(lt, 24.0);
    if (lt < 0.0) lt += 24.0;
    g.lt = lt;
    out.push_back(g);
  }
  return out;
}

/// Epochs start, start + step, ... up to and including stop.
inline std::vector<std::int64_t> epoch_grid(std::int64_t start, std::int64_t stop, std::int64_t step) {
  require(step > 0, ErrorCode::InvalidArgument, "epoch step must be positive");
  std::vector<std::int64_t> out;
  for (std::int64_t e = start; e <= stop; e += step) out.push_back(e);
  return out;
}

struct SynthOptions {
  double rel_err = 0.05;
  std::uint64_t seed = 0;
  std::string satellite_id = "SAT";
  std::size_t n_mc = 100;
  /// Fraction of samples whose density is replaced by its negative.
  double negative_fraction = 0.0;
};

/// Truth log10 density at a location, trilinear in space and linear in time
/// between the bracketing snapshots.
inline double interpolate_truth(const std::vector<FieldSnapshot>& snaps, double epoch, const GeoLocation& loc) {
  require(!snaps.empty(), ErrorCode::EmptyInput, "no truth snapshots");
  require(epoch >= static_cast<double>(snaps.front().epoch) && epoch <= static_cast<double>(snaps.back().epoch),
          ErrorCode::OutOfRangeEpoch, "track epoch outside snapshot coverage");
  const auto w = trilinear_weights(snaps.front().grid, loc.lat, loc.lt, loc.alt);
  auto it = std::upper_bound(snaps.begin(), snaps.end(), epoch,
                             [](double e, const FieldSnapshot& s) { return e < static_cast<double>(s.epoch); });
  std::size_t hi = static_cast<std::size_t>(it - snaps.begin());
  if (hi >= snaps.size()) hi = snaps.size() - 1;
  const std::size_t lo = hi == 0 ? 0 : hi - 1;
  const double v_lo = w.dot(snaps[lo].values);
  if (lo == hi) return v_lo;
  const double t0 = static_cast<double>(snaps[lo].epoch);
  const double t1 = static_cast<double>(snaps[hi].epoch);
  const double f = (epoch - t0) / (t1 - t0);
  if (f == 0.0) return v_lo;
  return (1.0 - f) * v_lo + f * w.dot(snaps[hi].values);
}

/// Samples the truth along a track with multiplicative noise
/// rho_meas = rho_true (1 + eps), eps ~ U(-rel_err, rel_err), and attaches the
/// Monte-Carlo log-noise variance. Injected negative samples carry
/// sigma_v2 = 0 and exist only to exercise preprocessing.
inline std::vector<TrackMeasurement> synthesize_measurements(const std::vector<FieldSnapshot>& truth,
                                                             const std::vector<std::int64_t>& epochs,
                                                             const std::vector<GeoLocation>& track,
                                                             const SynthOptions& opt = {}) {
  require(epochs.size() == track.size(), ErrorCode::DimensionMismatch, "track and epoch counts differ");
  require(opt.rel_err >= 0.0 && opt.rel_err < 1.0, ErrorCode::InvalidArgument, "rel_err must lie in [0, 1)");
  std::vector<TrackMeasurement> out;
  out.reserve(epochs.size());
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    TrackMeasurement m;
    m.epoch = epochs[i];
    m.lat = track[i].lat;
    m.lt = track[i].lt;
    m.alt = track[i].alt;
    m.satellite_id = opt.satellite_id;
    const std::uint64_t key = measurement_seed(opt.seed, opt.satellite_id, m.epoch);
    CounterRng rng(hash_combine(key, fnv1a("meas")));
    const double rho_true = std::pow(10.0, interpolate_truth(truth, static_cast<double>(m.epoch), track[i]));
    m.rho = opt.rel_err > 0.0 ? rho_true * (1.0 + rng.uniform(-opt.rel_err, opt.rel_err)) : rho_true;
    if (opt.negative_fraction > 0.0 && rng.uniform() < opt.negative_fraction) {
      m.rho = -m.rho;
      m.sigma_v2 = 0.0;
    } else {
      m.sigma_v2 = opt.rel_err > 0.0 ? mc_noise_variance(m.rho, opt.rel_err, opt.n_mc, key) : 0.0;
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace romda
