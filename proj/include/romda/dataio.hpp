#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "romda/container.hpp"
#include "romda/drivers.hpp"
#include "romda/error.hpp"
#include "romda/grid.hpp"
#include "romda/ident.hpp"
#include "romda/latent.hpp"
#include "romda/obs.hpp"
#include "romda/timeutil.hpp"

namespace romda {

inline constexpr const char* kTrackCsvHeader = "epoch_utc,lat_deg,lt_hours,alt_km,density_kgm3,satellite_id";
inline constexpr const char* kDriverCsvHeader = "epoch_utc,f107,f107_bar41,kp";

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Epoch as ISO-8601 when it is a whole second, else plain seconds.
inline std::string format_epoch(double epoch) {
  if (std::floor(epoch) == epoch && std::abs(epoch) < 9e15) return timeutil::format_iso(static_cast<std::int64_t>(epoch));
  return format_double(epoch);
}

namespace csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& s, const std::string& context) {
  const std::string t = trim(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    // stod rejects "nan"/"inf" spellings on some inputs; strtod accepts them.
    char* end = nullptr;
    v = std::strtod(t.c_str(), &end);
    used = static_cast<std::size_t>(end - t.c_str());
  }
  require(!t.empty() && used == t.size(), ErrorCode::ParseError, "cannot parse number '" + t + "' in " + context);
  return v;
}

/// Reads a CSV file whose first line must equal `header` (whitespace-trimmed
/// per field). Blank lines and lines starting with '#' are skipped.
inline std::vector<std::vector<std::string>> read(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
  std::string line;
  const auto expected = split(header);
  bool have_header = false;
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = split(t);
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      require(fields == expected, ErrorCode::ParseError,
              "unexpected header in '" + path.string() + "', want '" + header + "'");
      have_header = true;
      continue;
    }
    require(fields.size() == expected.size(), ErrorCode::ParseError,
            path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected.size()) + " fields");
    rows.push_back(std::move(fields));
  }
  require(have_header, ErrorCode::ParseError, "'" + path.string() + "' has no header");
  return rows;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Track measurements

struct RawMeasurementRow {
  double epoch = 0.0;  ///< seconds since 2000-01-01T00:00:00 UTC, may be fractional
  double lat_deg = 0.0;
  double lt_hours = 0.0;
  double alt_km = 0.0;
  double density_kgm3 = 0.0;
  std::string satellite_id;
};

inline std::vector<RawMeasurementRow> read_track_csv(const std::filesystem::path& path) {
  std::vector<RawMeasurementRow> out;
  for (const auto& f : csv::read(path, kTrackCsvHeader)) {
    const std::string ctx = path.string();
    out.push_back({timeutil::parse_epoch(f[0]), csv::to_double(f[1], ctx), csv::to_double(f[2], ctx),
                   csv::to_double(f[3], ctx), csv::to_double(f[4], ctx), f[5]});
  }
  return out;
}

inline void write_track_csv(const std::filesystem::path& path, const std::vector<RawMeasurementRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
  out << kTrackCsvHeader << '\n';
  for (const auto& r : rows)
    out << format_epoch(r.epoch) << ',' << format_double(r.lat_deg) << ',' << format_double(r.lt_hours) << ','
        << format_double(r.alt_km) << ',' << format_double(r.density_kgm3) << ',' << r.satellite_id << '\n';
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write to '" + path.string() + "' failed");
}

struct PreprocessOptions {
  std::int64_t t2_s = 60;
  /// Rows farther than this from their rounded grid epoch are discarded.
  double align_tolerance_s = 30.0;
  double rel_err = 0.05;
  std::size_t n_mc = 100;
  std::uint64_t seed = 0;
};

struct PreprocessReport {
  std::size_t input_rows = 0;
  std::size_t output_rows = 0;
  std::size_t negatives_removed = 0;
  std::size_t nonfinite_removed = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t misaligned_dropped = 0;

  bool balanced() const {
    return input_rows == output_rows + negatives_removed + nonfinite_removed + duplicates_dropped + misaligned_dropped;
  }
};

struct PreprocessResult {
  std::vector<TrackMeasurement> measurements;
  PreprocessReport report;
};

/// Rounds half away from zero to the nearest multiple of t2.
inline std::int64_t round_to_step(double epoch, std::int64_t t2) {
  return static_cast<std::int64_t>(std::round(epoch / static_cast<double>(t2))) * t2;
}

/// Drops non-finite and non-positive rows, sorts by time, snaps epochs to the
/// filter grid and keeps the earliest raw row of every (satellite, epoch).
inline PreprocessResult preprocess_track(std::vector<RawMeasurementRow> rows, const PreprocessOptions& opt = {}) {
  require(opt.t2_s > 0, ErrorCode::InvalidArgument, "filter step must be positive");
  PreprocessResult res;
  auto& rep = res.report;
  rep.input_rows = rows.size();

  std::vector<RawMeasurementRow> kept;
  kept.reserve(rows.size());
  for (auto& r : rows) {
    if (!(std::isfinite(r.epoch) && std::isfinite(r.lat_deg) && std::isfinite(r.lt_hours) && std::isfinite(r.alt_km) &&
          std::isfinite(r.density_kgm3))) {
      ++rep.nonfinite_removed;
    } else if (!(r.density_kgm3 > 0.0)) {
      ++rep.negatives_removed;
    } else {
      kept.push_back(std::move(r));
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const RawMeasurementRow& a, const RawMeasurementRow& b) { return a.epoch < b.epoch; });

  std::set<std::pair<std::string, std::int64_t>> seen;
  for (const auto& r : kept) {
    const std::int64_t snapped = round_to_step(r.epoch, opt.t2_s);
    if (std::abs(r.epoch - static_cast<double>(snapped)) > opt.align_tolerance_s) {
      ++rep.misaligned_dropped;
      continue;
    }
    if (!seen.emplace(r.satellite_id, snapped).second) {
      ++rep.duplicates_dropped;
      continue;
    }
    TrackMeasurement m;
    m.epoch = snapped;
    m.lat = r.lat_deg;
    m.lt = r.lt_hours;
    m.alt = r.alt_km;
    m.rho = r.density_kgm3;
    m.satellite_id = r.satellite_id;
    m.sigma_v2 = mc_noise_variance(m.rho, opt.rel_err, opt.n_mc, measurement_seed(opt.seed, m.satellite_id, m.epoch));
    res.measurements.push_back(std::move(m));
  }
  std::stable_sort(res.measurements.begin(), res.measurements.end(),
                   [](const TrackMeasurement& a, const TrackMeasurement& b) { return a.epoch < b.epoch; });
  rep.output_rows = res.measurements.size();
  require(!res.measurements.empty(), ErrorCode::EmptyAfterPreprocessing, "no measurements left after preprocessing");
  return res;
}

inline std::vector<RawMeasurementRow> to_raw_rows(const std::vector<TrackMeasurement>& ms) {
  std::vector<RawMeasurementRow> out;
  out.reserve(ms.size());
  for (const auto& m : ms)
    out.push_back({static_cast<double>(m.epoch), m.lat, m.lt, m.alt, m.rho, m.satellite_id});
  return out;
}

// ---------------------------------------------------------------------------
// Drivers

inline DriverSeries read_driver_csv(const std::filesystem::path& path) {
  DriverSeries s;
  for (const auto& f : csv::read(path, kDriverCsvHeader)) {
    const double e = timeutil::parse_epoch(f[0]);
    require(std::floor(e) == e, ErrorCode::ParseError, "driver epochs must be whole seconds");
    s.epochs.push_back(static_cast<std::int64_t>(e));
    s.f107.push_back(csv::to_double(f[1], path.string()));
    s.f107_bar41.push_back(csv::to_double(f[2], path.string()));
    s.kp.push_back(csv::to_double(f[3], path.string()));
  }
  s.validate();
  return s;
}

inline void write_driver_csv(const std::filesystem::path& path, const DriverSeries& s) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
  out << kDriverCsvHeader << '\n';
  for (std::size_t i = 0; i < s.size(); ++i)
    out << timeutil::format_iso(s.epochs[i]) << ',' << format_double(s.f107[i]) << ','
        << format_double(s.f107_bar41[i]) << ',' << format_double(s.kp[i]) << '\n';
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Snapshots

inline void put_grid_attrs(Container& c, const GridSpec& g) {
  c.attrs["n_lt"] = static_cast<std::int64_t>(g.n_lt);
  c.attrs["n_lat"] = static_cast<std::int64_t>(g.n_lat);
  c.attrs["n_alt"] = static_cast<std::int64_t>(g.n_alt);
  c.attrs["lat_min"] = g.lat_min;
  c.attrs["lat_max"] = g.lat_max;
  c.attrs["alt_min"] = g.alt_min;
  c.attrs["alt_max"] = g.alt_max;
}

inline GridSpec grid_from_attrs(const Container& c) {
  GridSpec g;
  g.n_lt = static_cast<std::size_t>(c.attr_int("n_lt"));
  g.n_lat = static_cast<std::size_t>(c.attr_int("n_lat"));
  g.n_alt = static_cast<std::size_t>(c.attr_int("n_alt"));
  if (c.attrs.count("lat_min")) g.lat_min = c.attr_double("lat_min");
  if (c.attrs.count("lat_max")) g.lat_max = c.attr_double("lat_max");
  if (c.attrs.count("alt_min")) g.alt_min = c.attr_double("alt_min");
  if (c.attrs.count("alt_max")) g.alt_max = c.attr_double("alt_max");
  return g;
}

/// Writes log10 snapshots as a single series container holding linear
/// density: "density" [m, n_lt, n_lat, n_alt] and "epochs" [m].
inline void write_snapshot_series(const std::filesystem::path& path, const std::vector<FieldSnapshot>& snaps) {
  require(!snaps.empty(), ErrorCode::EmptyInput, "no snapshots to write");
  const GridSpec& g = snaps.front().grid;
  Container c;
  NdArray dens;
  dens.shape = {snaps.size(), g.n_lt, g.n_lat, g.n_alt};
  dens.data.reserve(snaps.size() * g.size());
  NdArray epochs;
  epochs.shape = {snaps.size()};
  for (const auto& s : snaps) {
    require(s.grid == g && s.values.size() == g.size(), ErrorCode::GridMismatch, "snapshots use different grids");
    for (double v : s.values) dens.data.push_back(std::pow(10.0, v));
    epochs.data.push_back(static_cast<double>(s.epoch));
  }
  c.arrays["density"] = std::move(dens);
  c.arrays["epochs"] = std::move(epochs);
  put_grid_attrs(c, g);
  c.attrs["content"] = std::string("snapshots");
  c.attrs["units"] = std::string("kg m^-3");
  write_container(path, c);
}

/// Loads snapshot containers holding linear density and converts to log10.
/// A container either holds one field ("density" [n_lt, n_lat, n_alt] with an
/// integer "epoch" attribute) or a series ("density" [m, ...] plus "epochs").
inline std::vector<FieldSnapshot> ingest_snapshots(const std::vector<std::filesystem::path>& paths,
                                                   const GridSpec* expected = nullptr) {
  std::vector<FieldSnapshot> out;
  std::optional<GridSpec> first;
  for (const auto& path : paths) {
    const Container c = read_container(path);
    const auto& dens = c.array("density");
    GridSpec g;
    if (c.attrs.count("n_lt")) g = grid_from_attrs(c);
    std::size_t m = 1;
    std::vector<std::int64_t> epochs;
    if (dens.shape.size() == 3) {
      epochs.push_back(c.attr_int("epoch"));
    } else {
      require(dens.shape.size() == 4, ErrorCode::GridMismatch, "'density' must be 3-D or 4-D in '" + path.string() + "'");
      m = dens.shape[0];
      const auto ev = c.vector("epochs");
      require(static_cast<std::size_t>(ev.size()) == m, ErrorCode::DimensionMismatch, "epochs length mismatch");
      for (double e : ev) epochs.push_back(static_cast<std::int64_t>(e));
    }
    const std::size_t off = dens.shape.size() - 3;
    require(dens.shape[off] == g.n_lt && dens.shape[off + 1] == g.n_lat && dens.shape[off + 2] == g.n_alt,
            ErrorCode::GridMismatch, "'density' shape disagrees with declared grid in '" + path.string() + "'");
    if (expected) require(g == *expected, ErrorCode::GridMismatch, "'" + path.string() + "' does not match expected grid");
    if (first) require(g == *first, ErrorCode::GridMismatch, "snapshot files use different grids");
    first = g;

    const std::size_t d = g.size();
    for (std::size_t s = 0; s < m; ++s) {
      FieldSnapshot snap;
      snap.grid = g;
      snap.epoch = epochs[s];
      snap.values.resize(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double v = dens.data[s * d + i];
        require(std::isfinite(v) && v > 0.0, ErrorCode::NonPositiveTrainingDensity,
                "non-positive training density in '" + path.string() + "'");
        snap.values[i] = std::log10(v);
      }
      out.push_back(std::move(snap));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const FieldSnapshot& a, const FieldSnapshot& b) { return a.epoch < b.epoch; });
  return out;
}

inline Eigen::MatrixXd snapshot_matrix(const std::vector<FieldSnapshot>& snaps) {
  require(!snaps.empty(), ErrorCode::EmptyInput, "no snapshots");
  const auto d = static_cast<Eigen::Index>(snaps.front().values.size());
  Eigen::MatrixXd x(d, static_cast<Eigen::Index>(snaps.size()));
  for (std::size_t i = 0; i < snaps.size(); ++i)
    x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(snaps[i].values.data(), d);
  return x;
}

// ---------------------------------------------------------------------------
// Basis and model persistence

inline Container basis_to_container(const LatentBasis& b) {
  Container c;
  c.put_matrix("W", b.w);
  c.put_vector("mu0", b.mu0);
  c.put_vector("explained_variance", b.explained_variance);
  put_grid_attrs(c, b.grid);
  c.attrs["content"] = std::string("basis");
  c.attrs["r"] = static_cast<std::int64_t>(b.rank());
  c.attrs["d"] = static_cast<std::int64_t>(b.dim());
  c.attrs["snapshot_count"] = static_cast<std::int64_t>(b.snapshot_count);
  return c;
}

inline LatentBasis basis_from_container(const Container& c) {
  LatentBasis b;
  b.w = c.matrix("W");
  b.mu0 = c.vector("mu0");
  b.explained_variance = c.has("explained_variance") ? c.vector("explained_variance") : Eigen::VectorXd();
  b.grid = grid_from_attrs(c);
  b.snapshot_count = c.attrs.count("snapshot_count") ? static_cast<std::size_t>(c.attr_int("snapshot_count")) : 0;
  require(b.dim() == b.grid.size() && static_cast<std::size_t>(b.mu0.size()) == b.dim(), ErrorCode::GridMismatch,
          "basis arrays do not match grid attributes");
  require(static_cast<std::size_t>(c.attr_int("r")) == b.rank(), ErrorCode::DimensionMismatch, "basis rank attribute mismatch");
  return b;
}

inline Container model_to_container(const RomModel& m) {
  Container c;
  c.put_matrix("A", m.a);
  c.put_matrix("B", m.b);
  for (std::size_t j = 0; j < m.n_ar; ++j) {
    c.put_matrix("A_lag_" + std::to_string(j + 1), m.a_lags[j]);
    c.put_matrix("B_lag_" + std::to_string(j + 1), m.b_lags[j]);
  }
  c.put_matrix("Xi_nl", m.xi_nl);
  c.put_vector("c", m.c);
  c.put_vector("scaler_mean", m.scaler.mean);
  c.put_vector("scaler_std", m.scaler.std);
  Eigen::VectorXd frozen(static_cast<Eigen::Index>(m.scaler.frozen.size()));
  for (std::size_t i = 0; i < m.scaler.frozen.size(); ++i) frozen(static_cast<Eigen::Index>(i)) = m.scaler.frozen[i] ? 1.0 : 0.0;
  c.put_vector("scaler_frozen", frozen);
  if (m.q_suggest.size() > 0) c.put_matrix("Q_suggest", m.q_suggest);
  c.attrs["content"] = std::string("model");
  c.attrs["kind"] = to_string(m.kind);
  c.attrs["r"] = static_cast<std::int64_t>(m.r);
  c.attrs["n_u"] = static_cast<std::int64_t>(m.n_u);
  c.attrs["n_ar"] = static_cast<std::int64_t>(m.n_ar);
  c.attrs["max_degree"] = static_cast<std::int64_t>(m.library.max_degree);
  c.attrs["cadence_s"] = m.cadence_s;
  c.attrs["base_cadence_s"] = m.base_cadence_s;
  c.attrs["lag_stride"] = static_cast<std::int64_t>(m.lag_stride);
  c.attrs["alpha"] = m.alpha;
  return c;
}

inline RomModel model_from_container(const Container& c) {
  RomModel m;
  m.kind = parse_model_kind(c.attr_string("kind"));
  m.r = static_cast<std::size_t>(c.attr_int("r"));
  m.n_u = static_cast<std::size_t>(c.attr_int("n_u"));
  m.n_ar = static_cast<std::size_t>(c.attr_int("n_ar"));
  m.cadence_s = c.attr_double("cadence_s");
  m.base_cadence_s = c.attr_double("base_cadence_s");
  m.lag_stride = static_cast<std::size_t>(c.attr_int("lag_stride"));
  m.alpha = c.attr_double("alpha");
  m.a = c.matrix("A");
  m.b = c.matrix("B");
  for (std::size_t j = 0; j < m.n_ar; ++j) {
    m.a_lags.push_back(c.matrix("A_lag_" + std::to_string(j + 1)));
    m.b_lags.push_back(c.matrix("B_lag_" + std::to_string(j + 1)));
  }
  m.xi_nl = c.matrix("Xi_nl");
  m.c = c.vector("c");
  m.library = enumerate_terms(m.r, m.n_u, static_cast<int>(c.attr_int("max_degree")));
  m.nl_index = m.library.nonlinear_indices();
  m.scaler.mean = c.vector("scaler_mean");
  m.scaler.std = c.vector("scaler_std");
  const auto frozen = c.vector("scaler_frozen");
  for (double f : frozen) m.scaler.frozen.push_back(f != 0.0);
  if (c.has("Q_suggest")) m.q_suggest = c.matrix("Q_suggest");

  const auto r = static_cast<Eigen::Index>(m.r);
  require(m.a.rows() == r && m.a.cols() == r && m.b.rows() == r && m.b.cols() == static_cast<Eigen::Index>(m.n_u) &&
              m.xi_nl.rows() == r && m.xi_nl.cols() == static_cast<Eigen::Index>(m.nl_index.size()) &&
              static_cast<std::size_t>(m.scaler.mean.size()) == m.library.size(),
          ErrorCode::DimensionMismatch, "model blocks have inconsistent shapes");
  return m;
}

inline void save_basis(const std::filesystem::path& p, const LatentBasis& b) { write_container(p, basis_to_container(b)); }
inline LatentBasis load_basis(const std::filesystem::path& p) { return basis_from_container(read_container(p)); }
inline void save_model(const std::filesystem::path& p, const RomModel& m) { write_container(p, model_to_container(m)); }
inline RomModel load_model(const std::filesystem::path& p) { return model_from_container(read_container(p)); }

}  // namespace romda
