#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "romda/error.hpp"

namespace romda {

enum class TermKind { Bias, Z, ZZ, U, UU, ZU };

struct LibraryTerm {
  TermKind kind;
  std::size_t i = 0;  ///< first index (z for Z/ZZ/ZU, u for U/UU)
  std::size_t j = 0;  ///< second index (z for ZZ, u for UU/ZU)

  bool is_linear() const { return kind == TermKind::Z || kind == TermKind::U; }
  bool is_nonlinear() const { return kind == TermKind::ZZ || kind == TermKind::UU || kind == TermKind::ZU; }

  std::string name() const {
    switch (kind) {
      case TermKind::Bias: return "1";
      case TermKind::Z: return "z" + std::to_string(i);
      case TermKind::ZZ: return "z" + std::to_string(i) + "*z" + std::to_string(j);
      case TermKind::U: return "u" + std::to_string(i);
      case TermKind::UU: return "u" + std::to_string(i) + "*u" + std::to_string(j);
      case TermKind::ZU: return "z" + std::to_string(i) + "*u" + std::to_string(j);
    }
    return "?";
  }
};

/// Polynomial candidate library over (z, u). Term order is fixed:
/// 1, z_i, z_i z_j (i <= j), u_k, u_k u_l (k <= l), z_i u_k.
/// With max_degree = 1 only the bias and linear terms are present.
struct LibrarySpec {
  std::size_t r = 0;
  std::size_t n_u = 0;
  int max_degree = 2;
  std::vector<LibraryTerm> terms;

  std::size_t size() const { return terms.size(); }

  std::vector<std::size_t> nonlinear_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < terms.size(); ++t)
      if (terms[t].is_nonlinear()) idx.push_back(t);
    return idx;
  }
};

constexpr std::size_t library_size(std::size_t r, std::size_t n_u, int max_degree = 2) {
  const std::size_t linear = 1 + r + n_u;
  if (max_degree < 2) return linear;
  return linear + r * (r + 1) / 2 + n_u * (n_u + 1) / 2 + r * n_u;
}

inline LibrarySpec enumerate_terms(std::size_t r, std::size_t n_u, int max_degree = 2) {
  require(r >= 1, ErrorCode::InvalidArgument, "library needs r >= 1");
  require(max_degree == 1 || max_degree == 2, ErrorCode::InvalidArgument, "max_degree must be 1 or 2");
  LibrarySpec spec{r, n_u, max_degree, {}};
  auto& t = spec.terms;
  t.push_back({TermKind::Bias});
  for (std::size_t i = 0; i < r; ++i) t.push_back({TermKind::Z, i});
  if (max_degree >= 2)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = i; j < r; ++j) t.push_back({TermKind::ZZ, i, j});
  for (std::size_t k = 0; k < n_u; ++k) t.push_back({TermKind::U, k});
  if (max_degree >= 2) {
    for (std::size_t k = 0; k < n_u; ++k)
      for (std::size_t l = k; l < n_u; ++l) t.push_back({TermKind::UU, k, l});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < n_u; ++k) t.push_back({TermKind::ZU, i, k});
  }
  return spec;
}

/// Per-term standardization. Frozen terms had negligible training spread and
/// carry mean = training mean, std = 1; their coefficients are forced to zero.
struct FeatureScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::vector<bool> frozen;

  static constexpr double kFreezeTolerance = 1e-12;

  static FeatureScaler identity(std::size_t p) {
    return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p)),
            Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p)), std::vector<bool>(p, false)};
  }
};

inline double raw_term(const LibraryTerm& term, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  const auto i = static_cast<Eigen::Index>(term.i);
  const auto j = static_cast<Eigen::Index>(term.j);
  switch (term.kind) {
    case TermKind::Bias: return 1.0;
    case TermKind::Z: return z(i);
    case TermKind::ZZ: return z(i) * z(j);
    case TermKind::U: return u(i);
    case TermKind::UU: return u(i) * u(j);
    case TermKind::ZU: return z(i) * u(j);
  }
  return 0.0;
}

namespace detail {
inline void check_inputs(const LibrarySpec& spec, const FeatureScaler& scaler, const Eigen::VectorXd& z,
                         const Eigen::VectorXd& u) {
  require(static_cast<std::size_t>(z.size()) == spec.r && static_cast<std::size_t>(u.size()) == spec.n_u,
          ErrorCode::DimensionMismatch, "state/driver length does not match library");
  require(static_cast<std::size_t>(scaler.mean.size()) == spec.size() &&
              static_cast<std::size_t>(scaler.std.size()) == spec.size(),
          ErrorCode::DimensionMismatch, "scaler length does not match library");
  require(z.allFinite() && u.allFinite(), ErrorCode::NonFinite, "library inputs must be finite");
}
}  // namespace detail

/// Raw library terms without standardization.
inline Eigen::VectorXd eval_raw_features(const LibrarySpec& spec, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.size()));
  for (std::size_t t = 0; t < spec.size(); ++t) out(static_cast<Eigen::Index>(t)) = raw_term(spec.terms[t], z, u);
  return out;
}

inline Eigen::VectorXd eval_features(const LibrarySpec& spec, const FeatureScaler& scaler, const Eigen::VectorXd& z,
                                     const Eigen::VectorXd& u) {
  detail::check_inputs(spec, scaler, z, u);
  return (eval_raw_features(spec, z, u) - scaler.mean).cwiseQuotient(scaler.std);
}

/// Analytical d(phi_feat)/dz, p x r.
inline Eigen::MatrixXd feature_jacobian(const LibrarySpec& spec, const FeatureScaler& scaler,
                                        const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  detail::check_inputs(spec, scaler, z, u);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.size()), static_cast<Eigen::Index>(spec.r));
  for (std::size_t t = 0; t < spec.size(); ++t) {
    const auto& term = spec.terms[t];
    const auto row = static_cast<Eigen::Index>(t);
    const auto i = static_cast<Eigen::Index>(term.i);
    const auto j = static_cast<Eigen::Index>(term.j);
    const double inv = 1.0 / scaler.std(row);
    switch (term.kind) {
      case TermKind::Z:
        jac(row, i) = inv;
        break;
      case TermKind::ZZ:
        jac(row, i) += z(j) * inv;
        jac(row, j) += z(i) * inv;
        break;
      case TermKind::ZU:
        jac(row, i) = u(j) * inv;
        break;
      default:
        break;
    }
  }
  return jac;
}

/// Fits per-term mean and sample standard deviation over paired columns of
/// z (r x m) and u (n_u x m). The bias term is pinned to mean 0, std 1.
inline FeatureScaler fit_scaler(const LibrarySpec& spec, const Eigen::MatrixXd& z, const Eigen::MatrixXd& u) {
  require(z.cols() == u.cols() && z.cols() >= 2, ErrorCode::InsufficientData, "scaler needs >= 2 paired samples");
  require(static_cast<std::size_t>(z.rows()) == spec.r && static_cast<std::size_t>(u.rows()) == spec.n_u,
          ErrorCode::DimensionMismatch, "training data does not match library");
  const auto p = static_cast<Eigen::Index>(spec.size());
  const auto m = z.cols();
  Eigen::MatrixXd theta(p, m);
  for (Eigen::Index c = 0; c < m; ++c) theta.col(c) = eval_raw_features(spec, z.col(c), u.col(c));

  FeatureScaler s;
  s.mean = theta.rowwise().mean();
  s.std.resize(p);
  s.frozen.assign(static_cast<std::size_t>(p), false);
  for (Eigen::Index t = 0; t < p; ++t) {
    if (spec.terms[static_cast<std::size_t>(t)].kind == TermKind::Bias) {
      s.mean(t) = 0.0;
      s.std(t) = 1.0;
      continue;
    }
    const double sd = std::sqrt((theta.row(t).array() - s.mean(t)).square().sum() / static_cast<double>(m - 1));
    if (sd < FeatureScaler::kFreezeTolerance) {
      s.std(t) = 1.0;
      s.frozen[static_cast<std::size_t>(t)] = true;
    } else {
      s.std(t) = sd;
    }
  }
  return s;
}

}  // namespace romda
