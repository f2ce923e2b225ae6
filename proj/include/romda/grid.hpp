#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "romda/error.hpp"

namespace romda {

/// Regular LT x LAT x ALT grid. Local time is periodic on [0, 24) with
/// n_lt uniformly spaced bins starting at 0 h; latitude and altitude axes are
/// uniform and include both endpoints.
struct GridSpec {
  std::size_t n_lt = 72;
  std::size_t n_lat = 36;
  std::size_t n_alt = 45;
  double lat_min = -87.5;
  double lat_max = 87.5;
  double alt_min = 100.0;
  double alt_max = 980.0;

  static constexpr double kLtPeriod = 24.0;

  std::size_t size() const { return n_lt * n_lat * n_alt; }

  double lt_step() const { return kLtPeriod / static_cast<double>(n_lt); }
  double lat_step() const { return (lat_max - lat_min) / static_cast<double>(n_lat - 1); }
  double alt_step() const { return (alt_max - alt_min) / static_cast<double>(n_alt - 1); }

  double lt_at(std::size_t i) const { return static_cast<double>(i) * lt_step(); }
  double lat_at(std::size_t j) const { return lat_min + static_cast<double>(j) * lat_step(); }
  double alt_at(std::size_t k) const { return alt_min + static_cast<double>(k) * alt_step(); }

  /// LT-major, then LAT, then ALT.
  std::size_t index(std::size_t i_lt, std::size_t i_lat, std::size_t i_alt) const {
    return (i_lt * n_lat + i_lat) * n_alt + i_alt;
  }

  void validate() const {
    require(n_lt >= 2 && n_lat >= 2 && n_alt >= 2, ErrorCode::InvalidArgument,
            "grid needs at least two samples per axis");
    require(lat_max > lat_min && alt_max > alt_min, ErrorCode::InvalidArgument,
            "grid axes must be strictly increasing");
  }

  bool operator==(const GridSpec&) const = default;
};

struct FieldSnapshot {
  GridSpec grid;
  std::vector<double> values;  ///< length grid.size(), flattened per GridSpec::index
  std::int64_t epoch = 0;      ///< seconds since 2000-01-01T00:00:00 UTC

  double at(std::size_t i_lt, std::size_t i_lat, std::size_t i_alt) const {
    return values[grid.index(i_lt, i_lat, i_alt)];
  }
};

struct WeightEntry {
  std::size_t index;
  double weight;
};

/// Sparse interpolation weights; at most 8 entries, all strictly positive.
struct SparseWeights {
  std::vector<WeightEntry> entries;

  double sum() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.weight;
    return s;
  }

  /// Contraction with a dense field of length d.
  double dot(std::span<const double> field) const {
    double s = 0.0;
    for (const auto& e : entries) s += e.weight * field[e.index];
    return s;
  }
};

namespace detail {

struct AxisBracket {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight of hi
};

inline AxisBracket bracket_uniform(double x, double x0, double step, std::size_t n) {
  double s = (x - x0) / step;
  s = std::clamp(s, 0.0, static_cast<double>(n - 1));
  auto lo = static_cast<std::size_t>(std::floor(s));
  if (lo >= n - 1) lo = n - 2;
  return {lo, lo + 1, s - static_cast<double>(lo)};
}

inline AxisBracket bracket_periodic(double x, double period, std::size_t n) {
  double xr = std::fmod(x, period);
  if (xr < 0.0) xr += period;
  const double s = xr / (period / static_cast<double>(n));
  auto lo = static_cast<std::size_t>(std::floor(s));
  double frac = s - static_cast<double>(lo);
  if (lo >= n) {  // xr rounded up to the period
    lo = 0;
    frac = 0.0;
  }
  return {lo, (lo + 1) % n, frac};
}

}  // namespace detail

/// Tri-linear weights at (lat, lt, alt). Latitude is clamped to the grid,
/// local time wraps between the last and first bins, and altitude outside the
/// grid is rejected.
inline SparseWeights trilinear_weights(const GridSpec& grid, double lat, double lt, double alt) {
  require(std::isfinite(lat) && std::isfinite(lt) && std::isfinite(alt),
          ErrorCode::NonFiniteCoordinate, "interpolation coordinate is not finite");
  require(alt >= grid.alt_min && alt <= grid.alt_max, ErrorCode::AltitudeOutOfRange,
          "altitude " + std::to_string(alt) + " km outside grid");

  const auto b_lt = detail::bracket_periodic(lt, GridSpec::kLtPeriod, grid.n_lt);
  const auto b_lat = detail::bracket_uniform(std::clamp(lat, grid.lat_min, grid.lat_max),
                                             grid.lat_min, grid.lat_step(), grid.n_lat);
  const auto b_alt = detail::bracket_uniform(alt, grid.alt_min, grid.alt_step(), grid.n_alt);

  const std::array<std::size_t, 2> i_lt{b_lt.lo, b_lt.hi};
  const std::array<std::size_t, 2> i_lat{b_lat.lo, b_lat.hi};
  const std::array<std::size_t, 2> i_alt{b_alt.lo, b_alt.hi};
  const std::array<double, 2> w_lt{1.0 - b_lt.frac, b_lt.frac};
  const std::array<double, 2> w_lat{1.0 - b_lat.frac, b_lat.frac};
  const std::array<double, 2> w_alt{1.0 - b_alt.frac, b_alt.frac};

  SparseWeights out;
  out.entries.reserve(8);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 2; ++c) {
        const double w = w_lt[a] * w_lat[b] * w_alt[c];
        if (w > 0.0) out.entries.push_back({grid.index(i_lt[a], i_lat[b], i_alt[c]), w});
      }
    }
  }
  return out;
}

}  // namespace romda
