#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "romda/error.hpp"
#include "romda/ident.hpp"
#include "romda/obs.hpp"

namespace romda {

struct NoiseConfig {
  Eigen::MatrixXd q;   ///< r x r process noise per filter step
  Eigen::MatrixXd p0;  ///< r x r initial covariance of every companion block
  double spin_up_s = 6.0 * 3600.0;
  double q_scale = 1.0;
  bool gate_enabled = false;
  double gate_sigma = 6.0;
  double positivity_floor = 0.0;  ///< linear-density floor for the positivity flag

  /// diag(q1, q1, q2, ..., q2) and P0 = p0_scale I.
  static NoiseConfig defaults(std::size_t r, double q1 = 1e-2, double q2 = 1e-3, double p0_scale = 10.0) {
    NoiseConfig n;
    const auto rr = static_cast<Eigen::Index>(r);
    n.q = Eigen::MatrixXd::Zero(rr, rr);
    for (Eigen::Index i = 0; i < rr; ++i) n.q(i, i) = i < 2 ? q1 : q2;
    n.p0 = p0_scale * Eigen::MatrixXd::Identity(rr, rr);
    return n;
  }
};

/// Companion operators for the linear part of the model.
struct AugOperators {
  Eigen::MatrixXd a_aug;
  Eigen::MatrixXd q_aug;
};

inline AugOperators build_aug_operators(const RomModel& model, const Eigen::MatrixXd& q) {
  const auto r = static_cast<Eigen::Index>(model.r);
  const auto n = r * static_cast<Eigen::Index>(model.n_ar + 1);
  AugOperators ops;
  ops.a_aug = Eigen::MatrixXd::Zero(n, n);
  ops.a_aug.block(0, 0, r, r) = model.a;
  for (std::size_t j = 1; j <= model.n_ar; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    ops.a_aug.block(0, jj * r, r, r) = model.a_lags[j - 1];
    ops.a_aug.block(jj * r, (jj - 1) * r, r, r) = Eigen::MatrixXd::Identity(r, r);
  }
  ops.q_aug = Eigen::MatrixXd::Zero(n, n);
  ops.q_aug.topLeftCorner(r, r) = q;
  return ops;
}

/// Augmented companion state [z_k; lag_1; ...; lag_n_ar] and its covariance.
///
/// At the identification cadence (lag_stride == 1) the lag blocks shift on
/// every step. At a finer cadence they shift once per identification step, on
/// the last sub-step, and hold their value otherwise; the driver history
/// follows the same schedule.
struct FilterState {
  Eigen::VectorXd zeta;
  Eigen::MatrixXd p_aug;
  Eigen::MatrixXd q_aug;
  std::vector<Eigen::VectorXd> u_history;  ///< u_history[j-1] is driver lag j
  std::size_t r = 0;
  std::size_t n_ar = 0;
  std::size_t lag_stride = 1;
  std::uint64_t step = 0;
  double cadence_s = 0.0;

  std::size_t n_aug() const { return r * (n_ar + 1); }

  Eigen::VectorXd current() const { return zeta.head(static_cast<Eigen::Index>(r)); }

  std::vector<Eigen::VectorXd> z_lags() const {
    std::vector<Eigen::VectorXd> lags;
    const auto rr = static_cast<Eigen::Index>(r);
    for (std::size_t j = 1; j <= n_ar; ++j) lags.push_back(zeta.segment(static_cast<Eigen::Index>(j) * rr, rr));
    return lags;
  }

  bool shifts_this_step() const { return (step + 1) % lag_stride == 0; }
};

struct InnovationRecord {
  Eigen::VectorXd nu;        ///< innovations (log10 density)
  Eigen::MatrixXd s;         ///< innovation covariance
  std::vector<bool> gated;   ///< rejected by the innovation gate
  bool non_positive = false; ///< posterior linear density at or below the floor somewhere
};

struct UpdateResult {
  FilterState state;
  InnovationRecord innovation;
};

inline void symmetrize(Eigen::MatrixXd& p) { p = 0.5 * (p + p.transpose()).eval(); }

inline FilterState init_filter(const RomModel& model, const NoiseConfig& noise, double filter_cadence_s) {
  require(std::abs(model.cadence_s - filter_cadence_s) < 1e-9, ErrorCode::CadenceMismatch,
          "model cadence " + std::to_string(model.cadence_s) + " s differs from filter cadence " +
              std::to_string(filter_cadence_s) + " s");
  const auto r = static_cast<Eigen::Index>(model.r);
  require(noise.q.rows() == r && noise.q.cols() == r && noise.p0.rows() == r && noise.p0.cols() == r,
          ErrorCode::DimensionMismatch, "noise matrices do not match latent dimension");

  FilterState st;
  st.r = model.r;
  st.n_ar = model.n_ar;
  st.lag_stride = model.lag_stride;
  st.cadence_s = model.cadence_s;
  const auto n = static_cast<Eigen::Index>(st.n_aug());
  st.zeta = Eigen::VectorXd::Zero(n);
  st.p_aug = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t blk = 0; blk <= model.n_ar; ++blk) {
    const auto o = static_cast<Eigen::Index>(blk) * r;
    st.p_aug.block(o, o, r, r) = noise.p0;
  }
  st.q_aug = Eigen::MatrixXd::Zero(n, n);
  st.q_aug.topLeftCorner(r, r) = noise.q_scale * noise.q;
  st.u_history.assign(model.n_ar, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_u)));
  return st;
}

inline FilterState init_filter(const RomModel& model, const NoiseConfig& noise) {
  return init_filter(model, noise, model.cadence_s);
}

/// Full augmented map F(zeta, u) and its Jacobian F_k at zeta.
struct ProcessStep {
  Eigen::VectorXd zeta_next;
  Eigen::MatrixXd jacobian;
};

inline ProcessStep process_step(const FilterState& st, const RomModel& model, const Eigen::VectorXd& u) {
  const auto r = static_cast<Eigen::Index>(st.r);
  const auto n = static_cast<Eigen::Index>(st.n_aug());
  const Eigen::VectorXd z = st.current();

  ProcessStep out;
  out.zeta_next.resize(n);
  out.zeta_next.head(r) = model.step(z, st.z_lags(), u, st.u_history);

  out.jacobian = Eigen::MatrixXd::Zero(n, n);
  out.jacobian.block(0, 0, r, r) = model.current_jacobian(z, u);
  for (std::size_t j = 1; j <= st.n_ar; ++j)
    out.jacobian.block(0, static_cast<Eigen::Index>(j) * r, r, r) = model.a_lags[j - 1];

  if (st.n_ar > 0) {
    const auto lower = n - r;
    if (st.shifts_this_step()) {
      out.zeta_next.tail(lower) = st.zeta.head(lower);
      out.jacobian.block(r, 0, lower, lower).setIdentity();
    } else {
      out.zeta_next.tail(lower) = st.zeta.tail(lower);
      out.jacobian.block(r, r, lower, lower).setIdentity();
    }
  }
  return out;
}

/// EKF prediction: mean through the nonlinear map, covariance through F_k.
inline FilterState predict(const FilterState& st, const RomModel& model, const Eigen::VectorXd& u) {
  require(static_cast<std::size_t>(u.size()) == model.n_u, ErrorCode::DimensionMismatch, "driver length mismatch");
  require(u.allFinite(), ErrorCode::NonFinite, "driver vector must be finite");
  require(model.r == st.r && model.n_ar == st.n_ar, ErrorCode::DimensionMismatch, "model does not match filter state");

  const ProcessStep ps = process_step(st, model, u);
  FilterState next = st;
  next.zeta = ps.zeta_next;
  next.p_aug = ps.jacobian * st.p_aug * ps.jacobian.transpose() + st.q_aug;
  symmetrize(next.p_aug);
  if (st.n_ar > 0 && st.shifts_this_step()) {
    for (std::size_t j = st.n_ar - 1; j >= 1; --j) next.u_history[j] = next.u_history[j - 1];
    next.u_history[0] = u;
  }
  ++next.step;
  require(next.zeta.allFinite() && next.p_aug.allFinite(), ErrorCode::NonFiniteState,
          "filter diverged at step " + std::to_string(next.step));
  return next;
}

struct UpdateOptions {
  bool gate_enabled = false;
  double gate_sigma = 6.0;
  double positivity_floor = 0.0;

  static UpdateOptions from(const NoiseConfig& n) { return {n.gate_enabled, n.gate_sigma, n.positivity_floor}; }
};

/// Joseph-form update with N_s stacked scalar log-density observations and
/// diagonal R = diag(sigma_v2).
inline UpdateResult update_multi(const FilterState& st, std::span<const ObsOperator> obs, std::span<const double> y,
                                 std::span<const double> sigma_v2, const UpdateOptions& opt = {}) {
  require(!obs.empty(), ErrorCode::EmptyInput, "update needs at least one observation");
  require(obs.size() == y.size() && obs.size() == sigma_v2.size(), ErrorCode::DimensionMismatch,
          "observation, value and variance counts differ");
  const auto r = static_cast<Eigen::Index>(st.r);
  const auto n = static_cast<Eigen::Index>(st.n_aug());
  const Eigen::VectorXd z = st.current();

  UpdateResult res{st, {}};
  auto& rec = res.innovation;
  const auto n_obs = static_cast<Eigen::Index>(obs.size());
  rec.nu.resize(n_obs);
  rec.gated.assign(obs.size(), false);

  std::vector<Eigen::Index> used;
  for (Eigen::Index i = 0; i < n_obs; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    require(o.h_row.size() == r, ErrorCode::DimensionMismatch, "observation operator rank mismatch");
    const double s2 = sigma_v2[static_cast<std::size_t>(i)];
    require(s2 > 0.0 && std::isfinite(s2), ErrorCode::InvalidArgument, "sigma_v2 must be positive");
    rec.nu(i) = y[static_cast<std::size_t>(i)] - o.h_row.dot(z) - o.mu_scalar;
    if (opt.gate_enabled) {
      const double s_ii = o.h_row * st.p_aug.topLeftCorner(r, r) * o.h_row.transpose() + s2;
      if (rec.nu(i) * rec.nu(i) > opt.gate_sigma * opt.gate_sigma * s_ii) {
        rec.gated[static_cast<std::size_t>(i)] = true;
        continue;
      }
    }
    used.push_back(i);
  }

  const auto m = static_cast<Eigen::Index>(used.size());
  rec.s = Eigen::MatrixXd::Zero(m, m);
  if (m > 0) {
    Eigen::MatrixXd h_aug = Eigen::MatrixXd::Zero(m, n);
    Eigen::VectorXd rdiag(m), nu(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const auto i = static_cast<std::size_t>(used[static_cast<std::size_t>(a)]);
      h_aug.row(a).head(r) = obs[i].h_row;
      rdiag(a) = sigma_v2[i];
      nu(a) = rec.nu(static_cast<Eigen::Index>(i));
    }
    const Eigen::MatrixXd ph = st.p_aug * h_aug.transpose();  // n x m
    Eigen::MatrixXd s = h_aug * ph;
    s.diagonal() += rdiag;
    symmetrize(s);
    rec.s = s;
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    require(llt.info() == Eigen::Success && s.diagonal().minCoeff() > 0.0, ErrorCode::NonPositiveInnovationVariance,
            "innovation covariance is not positive definite");
    const Eigen::MatrixXd k = llt.solve(ph.transpose()).transpose();  // n x m

    res.state.zeta = st.zeta + k * nu;
    Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(n, n) - k * h_aug;
    res.state.p_aug = ikh * st.p_aug * ikh.transpose() + k * rdiag.asDiagonal() * k.transpose();
    symmetrize(res.state.p_aug);
  }

  const Eigen::VectorXd z_post = res.state.current();
  for (const auto& o : obs)
    if (predict_log_density(o, z_post, opt.positivity_floor).non_positive) rec.non_positive = true;
  return res;
}

inline UpdateResult update_single(const FilterState& st, const ObsOperator& obs, double y, double sigma_v2,
                                  const UpdateOptions& opt = {}) {
  return update_multi(st, std::span<const ObsOperator>(&obs, 1), std::span<const double>(&y, 1),
                      std::span<const double>(&sigma_v2, 1), opt);
}

/// No measurement at this step: the predicted state is carried unchanged.
inline FilterState skip_update(const FilterState& st) { return st; }

struct CurrentEstimate {
  Eigen::VectorXd z;
  Eigen::MatrixXd p;
};

inline CurrentEstimate extract_current(const FilterState& st) {
  const auto r = static_cast<Eigen::Index>(st.r);
  return {st.zeta.head(r), st.p_aug.topLeftCorner(r, r)};
}

}  // namespace romda
