#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "romda/error.hpp"
#include "romda/grid.hpp"
#include "romda/latent.hpp"
#include "romda/rng.hpp"

namespace romda {

struct GeoLocation {
  double lat = 0.0;  ///< deg
  double lt = 0.0;   ///< hours
  double alt = 0.0;  ///< km
};

/// Affine log10-density observation h(z) = H z + mu at one location.
struct ObsOperator {
  Eigen::RowVectorXd h_row;
  double mu_scalar = 0.0;
  SparseWeights weights;
  GeoLocation location;
};

/// One along-track sample after preprocessing.
struct TrackMeasurement {
  std::int64_t epoch = 0;  ///< seconds since 2000-01-01T00:00:00 UTC
  double lat = 0.0;
  double lt = 0.0;
  double alt = 0.0;
  double rho = 0.0;       ///< kg m^-3, linear
  double sigma_v2 = 0.0;  ///< variance of log10 density noise
  std::string satellite_id;

  GeoLocation location() const { return {lat, lt, alt}; }
  double log10_rho() const { return std::log10(rho); }
};

inline ObsOperator build_obs_operator(const LatentBasis& basis, const GridSpec& grid, const GeoLocation& loc) {
  require(grid == basis.grid && basis.dim() == grid.size(), ErrorCode::DimensionMismatch,
          "basis was fitted on a different grid");
  ObsOperator op;
  op.location = loc;
  op.weights = trilinear_weights(grid, loc.lat, loc.lt, loc.alt);
  op.h_row = Eigen::RowVectorXd::Zero(basis.w.cols());
  for (const auto& e : op.weights.entries) {
    const auto row = static_cast<Eigen::Index>(e.index);
    op.h_row.noalias() += e.weight * basis.w.row(row);
    op.mu_scalar += e.weight * basis.mu0(row);
  }
  return op;
}

inline ObsOperator build_obs_operator(const LatentBasis& basis, const GeoLocation& loc) {
  return build_obs_operator(basis, basis.grid, loc);
}

struct LogDensityPrediction {
  double log10_density = 0.0;
  double linear_density = 0.0;
  /// Set when the linear-space reconstruction is not above the floor.
  bool non_positive = false;
};

inline LogDensityPrediction predict_log_density(const ObsOperator& op, const Eigen::VectorXd& z,
                                                double linear_floor = 0.0) {
  require(z.size() == op.h_row.size(), ErrorCode::DimensionMismatch, "latent length does not match operator");
  LogDensityPrediction p;
  p.log10_density = op.h_row.dot(z) + op.mu_scalar;
  p.linear_density = std::pow(10.0, p.log10_density);
  p.non_positive = !(p.linear_density > linear_floor);
  return p;
}

/// Sample variance of log10(rho (1 + eps)) with eps ~ U(-rel_err, rel_err),
/// n_mc draws from a counter stream keyed by `seed`.
///
/// log10(rho (1 + eps)) = log10(rho) + log10(1 + eps); the constant shift is
/// dropped before accumulation so the result is bit-identical for any rho.
inline double mc_noise_variance(double rho_meas, double rel_err = 0.05, std::size_t n_mc = 100,
                                std::uint64_t seed = 0) {
  require(std::isfinite(rho_meas) && rho_meas > 0.0, ErrorCode::NonPositiveDensity,
          "measured density must be positive");
  require(n_mc >= 2, ErrorCode::InvalidArgument, "n_mc must be at least 2");
  require(rel_err >= 0.0 && rel_err < 1.0, ErrorCode::InvalidArgument, "rel_err must lie in [0, 1)");
  if (rel_err == 0.0) return 0.0;

  CounterRng rng(seed);
  // Welford accumulation.
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t s = 0; s < n_mc; ++s) {
    const double eps = rng.uniform(-rel_err, rel_err);
    const double x = std::log10(1.0 + eps);
    const double delta = x - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (x - mean);
  }
  return m2 / static_cast<double>(n_mc - 1);
}

/// Per-measurement key for the noise stream.
inline std::uint64_t measurement_seed(std::uint64_t seed, const std::string& satellite_id, std::int64_t epoch) {
  return hash_combine(hash_combine(seed, fnv1a(satellite_id)), static_cast<std::uint64_t>(epoch));
}

}  // namespace romda
