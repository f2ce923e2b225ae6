#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "romda/error.hpp"
#include "romda/features.hpp"

namespace romda {

enum class ModelKind { SindycAr, Dmdc };

inline std::string to_string(ModelKind kind) { return kind == ModelKind::Dmdc ? "dmdc" : "sindyc_ar"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "dmdc") return ModelKind::Dmdc;
  if (s == "sindyc_ar") return ModelKind::SindycAr;
  fail(ErrorCode::ConfigError, "unknown model kind '" + s + "'");
}

/// Identified latent dynamics
///   z+ = A z + sum_j A_j zlag_j + B u + sum_j B_j ulag_j + Xi_nl phi_nl(z, u) + c
/// where phi_nl is the standardized nonlinear block of the library.
///
/// After rescaling to a finer cadence, `lag_stride` sub-steps make up one
/// identification step and lag j refers to j identification steps.
struct RomModel {
  ModelKind kind = ModelKind::SindycAr;
  std::size_t r = 0;
  std::size_t n_u = 0;
  std::size_t n_ar = 0;
  double cadence_s = 3600.0;
  double base_cadence_s = 3600.0;
  std::size_t lag_stride = 1;
  double alpha = 500000.0;

  Eigen::MatrixXd a;
  std::vector<Eigen::MatrixXd> a_lags;
  Eigen::MatrixXd b;
  std::vector<Eigen::MatrixXd> b_lags;
  Eigen::VectorXd c;

  LibrarySpec library;
  FeatureScaler scaler;
  std::vector<std::size_t> nl_index;  ///< library rows of the nonlinear block
  Eigen::MatrixXd xi_nl;              ///< r x nl_index.size()

  Eigen::MatrixXd q_suggest;  ///< residual covariance of the training fit

  std::size_t p_nl() const { return nl_index.size(); }

  Eigen::VectorXd nl_features(const Eigen::VectorXd& z, const Eigen::VectorXd& u) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(nl_index.size()));
    if (nl_index.empty()) return out;
    const Eigen::VectorXd full = eval_features(library, scaler, z, u);
    for (std::size_t t = 0; t < nl_index.size(); ++t)
      out(static_cast<Eigen::Index>(t)) = full(static_cast<Eigen::Index>(nl_index[t]));
    return out;
  }

  Eigen::MatrixXd nl_jacobian(const Eigen::VectorXd& z, const Eigen::VectorXd& u) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(nl_index.size()), static_cast<Eigen::Index>(r));
    if (nl_index.empty()) return out;
    const Eigen::MatrixXd full = feature_jacobian(library, scaler, z, u);
    for (std::size_t t = 0; t < nl_index.size(); ++t)
      out.row(static_cast<Eigen::Index>(t)) = full.row(static_cast<Eigen::Index>(nl_index[t]));
    return out;
  }

  /// One step of the map. `z_lags[j-1]` and `u_lags[j-1]` hold lag j.
  Eigen::VectorXd step(const Eigen::VectorXd& z, const std::vector<Eigen::VectorXd>& z_lags,
                       const Eigen::VectorXd& u, const std::vector<Eigen::VectorXd>& u_lags) const {
    require(z_lags.size() == n_ar && u_lags.size() == n_ar, ErrorCode::DimensionMismatch,
            "lag history length does not match n_ar");
    Eigen::VectorXd next = a * z + b * u + c;
    for (std::size_t j = 0; j < n_ar; ++j) next += a_lags[j] * z_lags[j] + b_lags[j] * u_lags[j];
    if (!nl_index.empty()) next += xi_nl * nl_features(z, u);
    return next;
  }

  /// Jacobian of `step` with respect to the current state z.
  Eigen::MatrixXd current_jacobian(const Eigen::VectorXd& z, const Eigen::VectorXd& u) const {
    if (nl_index.empty()) return a;
    return a + xi_nl * nl_jacobian(z, u);
  }
};

struct RegressionConfig {
  double alpha = 500000.0;
  bool standardize = true;
};

/// Ridge coefficients C = T X^T (X X^T + alpha I)^{-1} for targets T (n_t x m)
/// and regressors X (q x m).
///
/// Solved as the least-squares problem [X^T; sqrt(alpha) I] C^T = [T^T; 0]
/// by Householder QR, whose triangular factor is the Cholesky factor of the
/// regularized normal matrix; the normal matrix itself is never formed.
inline Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& regressors, double alpha) {
  require(targets.cols() == regressors.cols(), ErrorCode::DimensionMismatch, "targets/regressors sample mismatch");
  require(regressors.cols() > 0, ErrorCode::InsufficientData, "ridge needs at least one sample");
  require(alpha > 0.0 && std::isfinite(alpha), ErrorCode::InvalidArgument, "alpha must be positive");
  require(targets.allFinite() && regressors.allFinite(), ErrorCode::NonFinite, "ridge inputs must be finite");

  const auto m = regressors.cols();
  const auto q = regressors.rows();
  if (q == 0) return Eigen::MatrixXd::Zero(targets.rows(), 0);

  Eigen::MatrixXd lhs(m + q, q);
  lhs.topRows(m) = regressors.transpose();
  lhs.bottomRows(q) = std::sqrt(alpha) * Eigen::MatrixXd::Identity(q, q);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + q, targets.rows());
  rhs.topRows(m) = targets.transpose();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(lhs);
  const auto rdiag = qr.matrixQR().diagonal().cwiseAbs();
  require(rdiag.minCoeff() > 1e-300 && rdiag.minCoeff() > 1e-15 * rdiag.maxCoeff(), ErrorCode::SingularSystem,
          "regularized normal matrix is numerically singular");
  return qr.solve(rhs).transpose();
}

/// Stacked regression internals, exposed for diagnostics and tests.
struct StackedFit {
  Eigen::MatrixXd regressors;    ///< active standardized regressors, q_active x N
  Eigen::MatrixXd targets;       ///< r x N
  Eigen::MatrixXd coefficients;  ///< r x q_active
  Eigen::MatrixXd predictions;   ///< coefficients * regressors
  std::vector<std::size_t> sample_index;  ///< time index k of each sample column
};

namespace detail {

enum class BlockKind { Z, ZLag, U, ULag, Nl, Bias };

struct RegressorRow {
  BlockKind block;
  std::size_t lag = 0;     // 1-based for lag blocks
  std::size_t index = 0;   // component within the block
  double mean = 0.0;
  double std = 1.0;
  bool frozen = false;
};

inline RomModel fit_stacked(const Eigen::MatrixXd& latents, const Eigen::MatrixXd& drivers, std::size_t n_ar,
                            const LibrarySpec& spec, const RegressionConfig& cfg, ModelKind kind,
                            double cadence_s, StackedFit* diag) {
  const auto r = static_cast<std::size_t>(latents.rows());
  const auto n_u = static_cast<std::size_t>(drivers.rows());
  const auto m = static_cast<std::size_t>(latents.cols());
  require(static_cast<std::size_t>(drivers.cols()) == m, ErrorCode::DimensionMismatch,
          "latent and driver series differ in length");
  require(spec.r == r && spec.n_u == n_u, ErrorCode::DimensionMismatch, "library does not match data dimensions");
  require(m > n_ar + 1, ErrorCode::InsufficientData,
          "need more than n_ar + 1 = " + std::to_string(n_ar + 1) + " snapshots");
  require(latents.allFinite() && drivers.allFinite(), ErrorCode::NonFinite, "training series must be finite");
  require(cfg.alpha > 0.0, ErrorCode::InvalidArgument, "alpha must be positive");

  const std::size_t n_samples = m - 1 - n_ar;
  const auto ns = static_cast<Eigen::Index>(n_samples);
  std::vector<std::size_t> ks(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) ks[s] = n_ar + s;

  Eigen::MatrixXd z_now(r, ns), u_now(n_u, ns), targets(r, ns);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const auto k = static_cast<Eigen::Index>(ks[static_cast<std::size_t>(s)]);
    z_now.col(s) = latents.col(k);
    u_now.col(s) = drivers.col(k);
    targets.col(s) = latents.col(k + 1);
  }

  const bool has_bias = !spec.terms.empty() && spec.terms.front().kind == TermKind::Bias;
  const auto nl_index = spec.nonlinear_indices();
  FeatureScaler scaler = FeatureScaler::identity(spec.size());
  if (!nl_index.empty()) scaler = fit_scaler(spec, z_now, u_now);
  if (!cfg.standardize) {
    std::vector<bool> frozen = scaler.frozen;
    scaler = FeatureScaler::identity(spec.size());
    scaler.frozen = frozen;
  }

  // Raw regressor rows in block order.
  std::vector<RegressorRow> rows;
  for (std::size_t i = 0; i < r; ++i) rows.push_back({BlockKind::Z, 0, i});
  for (std::size_t j = 1; j <= n_ar; ++j)
    for (std::size_t i = 0; i < r; ++i) rows.push_back({BlockKind::ZLag, j, i});
  for (std::size_t i = 0; i < n_u; ++i) rows.push_back({BlockKind::U, 0, i});
  for (std::size_t j = 1; j <= n_ar; ++j)
    for (std::size_t i = 0; i < n_u; ++i) rows.push_back({BlockKind::ULag, j, i});
  for (std::size_t t = 0; t < nl_index.size(); ++t) rows.push_back({BlockKind::Nl, 0, t});
  if (has_bias) rows.push_back({BlockKind::Bias});

  const auto q = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(q, ns);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const auto k = static_cast<Eigen::Index>(ks[static_cast<std::size_t>(s)]);
    Eigen::VectorXd nl;
    if (!nl_index.empty()) {
      const Eigen::VectorXd full = eval_features(spec, scaler, latents.col(k), drivers.col(k));
      nl.resize(static_cast<Eigen::Index>(nl_index.size()));
      for (std::size_t t = 0; t < nl_index.size(); ++t)
        nl(static_cast<Eigen::Index>(t)) = full(static_cast<Eigen::Index>(nl_index[t]));
    }
    for (Eigen::Index row = 0; row < q; ++row) {
      const auto& rr = rows[static_cast<std::size_t>(row)];
      const auto idx = static_cast<Eigen::Index>(rr.index);
      const auto lag = static_cast<Eigen::Index>(rr.lag);
      double v = 0.0;
      switch (rr.block) {
        case BlockKind::Z: v = latents(idx, k); break;
        case BlockKind::ZLag: v = latents(idx, k - lag); break;
        case BlockKind::U: v = drivers(idx, k); break;
        case BlockKind::ULag: v = drivers(idx, k - lag); break;
        case BlockKind::Nl: v = nl(idx); break;
        case BlockKind::Bias: v = 1.0; break;
      }
      x(row, s) = v;
    }
  }

  // Standardize the linear and lag rows; nonlinear rows already went through
  // the feature scaler. Centering is applied only when an intercept exists.
  for (Eigen::Index row = 0; row < q; ++row) {
    auto& rr = rows[static_cast<std::size_t>(row)];
    if (rr.block == BlockKind::Bias) continue;
    if (rr.block == BlockKind::Nl) {
      rr.frozen = scaler.frozen[nl_index[rr.index]];
      continue;
    }
    const double mean = x.row(row).mean();
    const double sd = ns > 1 ? std::sqrt((x.row(row).array() - mean).square().sum() / static_cast<double>(ns - 1)) : 0.0;
    if (sd < FeatureScaler::kFreezeTolerance) {
      rr.frozen = true;
      continue;
    }
    if (cfg.standardize) {
      rr.mean = has_bias ? mean : 0.0;
      rr.std = sd;
      x.row(row) = (x.row(row).array() - rr.mean) / rr.std;
    }
  }

  std::vector<Eigen::Index> active;
  for (Eigen::Index row = 0; row < q; ++row)
    if (!rows[static_cast<std::size_t>(row)].frozen) active.push_back(row);
  Eigen::MatrixXd x_active(static_cast<Eigen::Index>(active.size()), ns);
  for (std::size_t a = 0; a < active.size(); ++a) x_active.row(static_cast<Eigen::Index>(a)) = x.row(active[a]);

  const Eigen::MatrixXd coef = ridge_solve(targets, x_active, cfg.alpha);

  RomModel model;
  model.kind = kind;
  model.r = r;
  model.n_u = n_u;
  model.n_ar = n_ar;
  model.cadence_s = cadence_s;
  model.base_cadence_s = cadence_s;
  model.alpha = cfg.alpha;
  model.a = Eigen::MatrixXd::Zero(r, r);
  model.b = Eigen::MatrixXd::Zero(r, n_u);
  model.a_lags.assign(n_ar, Eigen::MatrixXd::Zero(r, r));
  model.b_lags.assign(n_ar, Eigen::MatrixXd::Zero(r, n_u));
  model.c = Eigen::VectorXd::Zero(r);
  model.library = spec;
  model.scaler = scaler;
  model.nl_index = nl_index;
  model.xi_nl = Eigen::MatrixXd::Zero(r, static_cast<Eigen::Index>(nl_index.size()));

  for (std::size_t a = 0; a < active.size(); ++a) {
    const auto& rr = rows[static_cast<std::size_t>(active[a])];
    const Eigen::VectorXd beta = coef.col(static_cast<Eigen::Index>(a));
    const auto idx = static_cast<Eigen::Index>(rr.index);
    const Eigen::VectorXd unscaled = beta / rr.std;
    switch (rr.block) {
      case BlockKind::Z: model.a.col(idx) += unscaled; break;
      case BlockKind::ZLag: model.a_lags[rr.lag - 1].col(idx) += unscaled; break;
      case BlockKind::U: model.b.col(idx) += unscaled; break;
      case BlockKind::ULag: model.b_lags[rr.lag - 1].col(idx) += unscaled; break;
      case BlockKind::Nl: model.xi_nl.col(idx) = beta; break;
      case BlockKind::Bias: model.c += beta; break;
    }
    if (rr.block != BlockKind::Nl && rr.block != BlockKind::Bias) model.c -= unscaled * rr.mean;
  }

  const Eigen::MatrixXd predictions = coef * x_active;
  const Eigen::MatrixXd resid = targets - predictions;
  if (ns > 1) {
    const Eigen::MatrixXd centered = resid.colwise() - resid.rowwise().mean();
    model.q_suggest = centered * centered.transpose() / static_cast<double>(ns - 1);
  } else {
    model.q_suggest = Eigen::MatrixXd::Zero(r, r);
  }

  if (diag) {
    diag->regressors = x_active;
    diag->targets = targets;
    diag->coefficients = coef;
    diag->predictions = predictions;
    diag->sample_index = ks;
  }
  return model;
}

}  // namespace detail

/// Fits the autoregressive SINDy_c model: one stacked ridge regression of
/// z_{k+1} on [z_k; z_{k-1..k-n_ar}; u_k; u_{k-1..k-n_ar}; phi_nl(z_k, u_k); 1].
/// Linear library terms are represented by A and B; lagged quantities never
/// enter the library.
inline RomModel fit_sindyc_ar(const Eigen::MatrixXd& latents, const Eigen::MatrixXd& drivers, std::size_t n_ar,
                              const LibrarySpec& spec, const RegressionConfig& cfg = {}, double cadence_s = 3600.0,
                              StackedFit* diag = nullptr) {
  return detail::fit_stacked(latents, drivers, n_ar, spec, cfg, ModelKind::SindycAr, cadence_s, diag);
}

/// Linear reference model z+ = A z + B u + c.
inline RomModel fit_dmdc(const Eigen::MatrixXd& latents, const Eigen::MatrixXd& drivers,
                         const RegressionConfig& cfg = {}, double cadence_s = 3600.0, StackedFit* diag = nullptr) {
  const auto spec = enumerate_terms(static_cast<std::size_t>(latents.rows()), static_cast<std::size_t>(drivers.rows()), 1);
  return detail::fit_stacked(latents, drivers, 0, spec, cfg, ModelKind::Dmdc, cadence_s, diag);
}

/// Real matrix power A^s and G = (A^s - I)(A - I)^{-1} through a complex
/// eigendecomposition with the principal branch of lambda^s.
struct FractionalPower {
  Eigen::MatrixXd power;
  Eigen::MatrixXd increment_gain;
};

inline FractionalPower fractional_power(const Eigen::MatrixXd& a, double s) {
  using Complex = std::complex<double>;
  require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "matrix power needs a square matrix");
  const auto n = a.rows();
  const double norm = std::max(a.cwiseAbs().maxCoeff(), 1e-300);

  Eigen::EigenSolver<Eigen::MatrixXd> es(a, true);
  require(es.info() == Eigen::Success, ErrorCode::NoRealPrincipalRoot, "eigendecomposition failed");
  const Eigen::VectorXcd lambda = es.eigenvalues();
  const Eigen::MatrixXcd v = es.eigenvectors();

  bool near_one = false;
  Eigen::VectorXcd lambda_s(n), gain(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex l = lambda(i);
    const bool on_real_axis = std::abs(l.imag()) <= 1e-12 * std::max(1.0, norm);
    require(!(on_real_axis && l.real() <= 0.0), ErrorCode::NoRealPrincipalRoot,
            "eigenvalue on the closed negative real axis: " + std::to_string(l.real()));
    lambda_s(i) = std::pow(l, s);
    if (std::abs(l - 1.0) < 1e-10) {
      near_one = true;
      gain(i) = s;
    } else {
      gain(i) = (lambda_s(i) - 1.0) / (l - 1.0);
    }
  }

  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(v);
  const Eigen::MatrixXcd v_inv = lu.inverse();
  const Eigen::MatrixXcd recon = v * lambda.asDiagonal() * v_inv;
  require((recon - a.cast<Complex>()).cwiseAbs().maxCoeff() <= 1e-8 * norm, ErrorCode::NoRealPrincipalRoot,
          "eigenbasis too ill-conditioned for a fractional power");

  const Eigen::MatrixXcd power_c = v * lambda_s.asDiagonal() * v_inv;
  require(power_c.imag().cwiseAbs().maxCoeff() <= 1e-8 * norm, ErrorCode::NoRealPrincipalRoot,
          "fractional power has a non-negligible imaginary part");

  FractionalPower out;
  out.power = power_c.real();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  if (near_one) {
    out.increment_gain = (v * gain.asDiagonal() * v_inv).real();
  } else {
    // (A_s - I)(A - I)^{-1} via a linear solve on the transposed system.
    out.increment_gain = (a - eye).transpose().partialPivLu().solve((out.power - eye).transpose()).transpose();
  }
  return out;
}

/// Converts a model identified at cadence T1 to cadence t2 = T1 / N:
/// A <- A^(t2/T1), B <- (A_t2 - I)(A - I)^{-1} B, and c, Xi_nl, A_j, B_j
/// scaled by t2/T1 per sub-step.
inline RomModel rescale_cadence(const RomModel& model, double t2) {
  require(t2 > 0.0 && std::isfinite(t2), ErrorCode::InvalidArgument, "target cadence must be positive");
  const double ratio = model.cadence_s / t2;
  const double n_sub = std::round(ratio);
  require(n_sub >= 1.0 && std::abs(ratio - n_sub) < 1e-9, ErrorCode::CadenceMismatch,
          "target cadence must divide the model cadence evenly");
  if (n_sub == 1.0) return model;

  const double s = 1.0 / n_sub;
  const auto fp = fractional_power(model.a, s);

  RomModel out = model;
  out.a = fp.power;
  out.b = fp.increment_gain * model.b;
  out.c = s * model.c;
  out.xi_nl = s * model.xi_nl;
  for (auto& m : out.a_lags) m *= s;
  for (auto& m : out.b_lags) m *= s;
  out.q_suggest = s * model.q_suggest;
  out.cadence_s = t2;
  out.lag_stride = model.lag_stride * static_cast<std::size_t>(n_sub);
  return out;
}

}  // namespace romda
