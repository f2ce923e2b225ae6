#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "romda/error.hpp"
#include "romda/grid.hpp"

namespace romda {

/// Rank-r PCA basis of log10-density fields.
struct LatentBasis {
  Eigen::MatrixXd w;    ///< d x r, orthonormal columns
  Eigen::VectorXd mu0;  ///< length d mean field
  GridSpec grid;
  std::size_t snapshot_count = 0;
  Eigen::VectorXd explained_variance;  ///< fraction of total variance per retained component

  std::size_t rank() const { return static_cast<std::size_t>(w.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(w.rows()); }
};

/// Fits the PCA basis of a d x m snapshot matrix (one snapshot per column).
///
/// The centered matrix is reduced by a thin Householder QR (d x m -> m x m)
/// and the small triangular factor is decomposed by SVD, so the cost is
/// O(d m^2) and the returned columns are orthonormal to machine precision
/// even for components with negligible variance. Each column's sign is fixed
/// so that its largest-magnitude entry is positive.
inline LatentBasis fit_basis(const Eigen::MatrixXd& snapshots, std::size_t r, const GridSpec& grid) {
  const auto d = static_cast<std::size_t>(snapshots.rows());
  const auto m = static_cast<std::size_t>(snapshots.cols());
  require(d == grid.size(), ErrorCode::DimensionMismatch, "snapshot rows do not match grid size");
  require(r >= 1 && m >= 1, ErrorCode::InvalidArgument, "rank and snapshot count must be positive");
  require(r <= std::min(d, m), ErrorCode::RankTooLarge,
          "rank " + std::to_string(r) + " exceeds min(d, m) = " + std::to_string(std::min(d, m)));
  require(snapshots.allFinite(), ErrorCode::NonFinite, "snapshot values must be finite");

  LatentBasis basis;
  basis.grid = grid;
  basis.snapshot_count = m;
  basis.mu0 = snapshots.rowwise().mean();
  Eigen::MatrixXd centered = snapshots.colwise() - basis.mu0;

  const double scale = std::max(1.0, basis.mu0.cwiseAbs().maxCoeff());
  require(centered.cwiseAbs().maxCoeff() > 1e-13 * scale, ErrorCode::DegenerateData,
          "snapshots have zero variance");

  Eigen::MatrixXd u;
  Eigen::VectorXd sigma;
  if (d > m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(centered);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                                                       static_cast<Eigen::Index>(m));
    Eigen::MatrixXd rfac = qr.matrixQR().topRows(static_cast<Eigen::Index>(m))
                               .triangularView<Eigen::Upper>();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(rfac, Eigen::ComputeThinU);
    u = q * svd.matrixU();
    sigma = svd.singularValues();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
    u = svd.matrixU();
    sigma = svd.singularValues();
  }

  const auto rr = static_cast<Eigen::Index>(r);
  basis.w = u.leftCols(rr);
  for (Eigen::Index c = 0; c < rr; ++c) {
    Eigen::Index imax = 0;
    basis.w.col(c).cwiseAbs().maxCoeff(&imax);
    if (basis.w(imax, c) < 0.0) basis.w.col(c) *= -1.0;
  }
  const double total = sigma.squaredNorm();
  basis.explained_variance = sigma.head(rr).array().square() / total;
  return basis;
}

inline Eigen::VectorXd project(const LatentBasis& basis, const Eigen::VectorXd& x_full) {
  require(static_cast<std::size_t>(x_full.size()) == basis.dim(), ErrorCode::DimensionMismatch,
          "field length does not match basis");
  return basis.w.transpose() * (x_full - basis.mu0);
}

inline Eigen::VectorXd reconstruct(const LatentBasis& basis, const Eigen::VectorXd& z) {
  require(static_cast<std::size_t>(z.size()) == basis.rank(), ErrorCode::DimensionMismatch,
          "latent length does not match basis rank");
  return basis.w * z + basis.mu0;
}

/// Projects every column of a d x m matrix.
inline Eigen::MatrixXd project_all(const LatentBasis& basis, const Eigen::MatrixXd& snapshots) {
  require(static_cast<std::size_t>(snapshots.rows()) == basis.dim(), ErrorCode::DimensionMismatch,
          "snapshot rows do not match basis");
  return basis.w.transpose() * (snapshots.colwise() - basis.mu0);
}

}  // namespace romda
