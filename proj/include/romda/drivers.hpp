#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "romda/error.hpp"
#include "romda/timeutil.hpp"

namespace romda {

inline constexpr std::size_t kDriverCount = 7;

struct CircularTime {
  double t1, t2, t3, t4;
};

/// cos/sin of UT over a 24 h period and of DOY over a 365.25 d period.
inline CircularTime circular_encode(double ut_hours, double doy) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double ut = std::fmod(ut_hours, 24.0);
  if (ut < 0.0) ut += 24.0;
  double d = std::fmod(doy, 365.25);
  if (d < 0.0) d += 365.25;
  const double a = two_pi * ut / 24.0;
  const double b = two_pi * d / 365.25;
  return {std::cos(a), std::sin(a), std::cos(b), std::sin(b)};
}

/// Shape-preserving piecewise cubic Hermite interpolant. Interior slopes are
/// the weighted harmonic mean of adjacent secants (zero at local extrema);
/// end slopes use the one-sided three-point formula with monotonicity clamps.
class Pchip {
 public:
  Pchip() = default;

  Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    require(x_.size() == y_.size(), ErrorCode::DimensionMismatch, "pchip knot/value count mismatch");
    require(x_.size() >= 2, ErrorCode::InsufficientData, "pchip needs at least two knots");
    for (std::size_t i = 1; i < x_.size(); ++i)
      require(x_[i] > x_[i - 1], ErrorCode::DuplicateEpoch, "pchip knots must be strictly increasing");
    compute_slopes();
  }

  double operator()(double xq) const {
    require(xq >= x_.front() && xq <= x_.back(), ErrorCode::OutOfRangeEpoch, "query outside interpolation range");
    auto it = std::upper_bound(x_.begin(), x_.end(), xq);
    std::size_t i = static_cast<std::size_t>(it - x_.begin());
    i = i == 0 ? 0 : i - 1;
    if (i >= x_.size() - 1) i = x_.size() - 2;
    const double h = x_[i + 1] - x_[i];
    const double t = (xq - x_[i]) / h;
    if (t == 0.0) return y_[i];
    if (t == 1.0) return y_[i + 1];
    // Increment form: exact on flat segments, where the Hermite basis sum
    // h00 + h01 is off by an ulp.
    const double s = xq - x_[i];
    const double del = (y_[i + 1] - y_[i]) / h;
    const double c2 = (3.0 * del - 2.0 * d_[i] - d_[i + 1]) / h;
    const double c3 = (d_[i] + d_[i + 1] - 2.0 * del) / (h * h);
    const double v = y_[i] + s * (d_[i] + s * (c2 + s * c3));
    // Each segment is monotone, so this only trims rounding.
    return std::clamp(v, std::min(y_[i], y_[i + 1]), std::max(y_[i], y_[i + 1]));
  }

  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& values() const { return y_; }
  const std::vector<double>& slopes() const { return d_; }

 private:
  static int sign(double v) { return (v > 0.0) - (v < 0.0); }

  static double end_slope(double h0, double h1, double del0, double del1) {
    const double d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if (sign(d) != sign(del0)) return 0.0;
    if (sign(del0) != sign(del1) && std::abs(d) > 3.0 * std::abs(del0)) return 3.0 * del0;
    return d;
  }

  void compute_slopes() {
    const std::size_t n = x_.size();
    d_.assign(n, 0.0);
    std::vector<double> h(n - 1), del(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      del[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    if (n == 2) {
      d_[0] = d_[1] = del[0];
      return;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
      if (del[k - 1] * del[k] > 0.0) {
        const double w1 = 2.0 * h[k] + h[k - 1];
        const double w2 = h[k] + 2.0 * h[k - 1];
        d_[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
      }
    }
    d_[0] = end_slope(h[0], h[1], del[0], del[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
  }

  std::vector<double> x_, y_, d_;
};

/// Space-weather indices at their native (typically hourly) cadence.
struct DriverSeries {
  std::vector<std::int64_t> epochs;
  std::vector<double> f107;
  std::vector<double> f107_bar41;
  std::vector<double> kp;

  std::size_t size() const { return epochs.size(); }

  void validate() const {
    require(f107.size() == epochs.size() && f107_bar41.size() == epochs.size() && kp.size() == epochs.size(),
            ErrorCode::DimensionMismatch, "driver columns differ in length");
    require(epochs.size() >= 2, ErrorCode::InsufficientData, "driver series needs at least two epochs");
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (i > 0) require(epochs[i] > epochs[i - 1], ErrorCode::DuplicateEpoch, "driver epochs must strictly increase");
      require(std::isfinite(f107[i]) && std::isfinite(f107_bar41[i]) && std::isfinite(kp[i]), ErrorCode::NonFinite,
              "driver values must be finite");
      require(kp[i] >= 0.0 && kp[i] <= 9.0, ErrorCode::InvalidArgument, "kp outside [0, 9]");
    }
  }
};

/// PCHIP interpolants of the three indices over one series.
class DriverInterpolator {
 public:
  explicit DriverInterpolator(const DriverSeries& series) {
    series.validate();
    std::vector<double> x(series.epochs.begin(), series.epochs.end());
    f107_ = Pchip(x, series.f107);
    f107_bar_ = Pchip(x, series.f107_bar41);
    kp_ = Pchip(std::move(x), series.kp);
  }

  double first_epoch() const { return kp_.knots().front(); }
  double last_epoch() const { return kp_.knots().back(); }

  /// u = [f107, f107_bar41, kp, t1, t2, t3, t4].
  Eigen::VectorXd driver_at(double epoch) const {
    require(epoch >= first_epoch() && epoch <= last_epoch(), ErrorCode::OutOfRangeEpoch,
            "epoch " + std::to_string(epoch) + " outside driver coverage");
    const auto enc = circular_encode(timeutil::ut_hours(epoch), timeutil::day_of_year(epoch));
    Eigen::VectorXd u(static_cast<Eigen::Index>(kDriverCount));
    u << f107_(epoch), f107_bar_(epoch), kp_(epoch), enc.t1, enc.t2, enc.t3, enc.t4;
    return u;
  }

  /// Series resampled at the requested epochs.
  DriverSeries resample(const std::vector<std::int64_t>& grid_epochs) const {
    DriverSeries out;
    for (auto e : grid_epochs) {
      const auto x = static_cast<double>(e);
      require(x >= first_epoch() && x <= last_epoch(), ErrorCode::OutOfRangeEpoch, "resample epoch outside coverage");
      out.epochs.push_back(e);
      out.f107.push_back(f107_(x));
      out.f107_bar41.push_back(f107_bar_(x));
      out.kp.push_back(kp_(x));
    }
    return out;
  }

 private:
  Pchip f107_, f107_bar_, kp_;
};

inline DriverSeries pchip_resample(const DriverSeries& series, const std::vector<std::int64_t>& grid_epochs) {
  return DriverInterpolator(series).resample(grid_epochs);
}

inline Eigen::VectorXd driver_at(const DriverSeries& series, double epoch) {
  return DriverInterpolator(series).driver_at(epoch);
}

/// Stacks driver_at for every epoch into a 7 x m matrix.
inline Eigen::MatrixXd driver_matrix(const DriverInterpolator& interp, const std::vector<std::int64_t>& epochs) {
  Eigen::MatrixXd u(static_cast<Eigen::Index>(kDriverCount), static_cast<Eigen::Index>(epochs.size()));
  for (std::size_t i = 0; i < epochs.size(); ++i)
    u.col(static_cast<Eigen::Index>(i)) = interp.driver_at(static_cast<double>(epochs[i]));
  return u;
}

}  // namespace romda
