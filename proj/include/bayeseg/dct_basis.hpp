#pragma once

#include <array>

#include <Eigen/Dense>

#include "bayeseg/grid.hpp"

namespace bayeseg {

/// Tensor-product DCT-II basis over the voxel grid: the P = px*py*pz lowest
/// frequencies, orthonormal per axis so the full column set is orthonormal.
/// Column order is x-major: p = (fx*py + fy)*pz + fz, column 0 constant.
///
/// Heavy operations (projection, weighted Gram matrix, evaluation) use the
/// separable structure; dense() exists for tests and small grids.
class BiasBasis {
 public:
  BiasBasis() = default;
  BiasBasis(GridShape shape, std::array<int, 3> per_axis);

  const GridShape& shape() const { return shape_; }
  int count() const { return px_ * py_ * pz_; }
  std::array<int, 3> per_axis() const { return {px_, py_, pz_}; }

  /// phi_i, the P basis values at one voxel.
  Eigen::VectorXd row(std::size_t voxel) const;

  /// I x P matrix of basis evaluations.
  Eigen::MatrixXd dense() const;

  /// Phi^T f over the full grid.
  Eigen::VectorXd project(const std::vector<double>& field) const;

  /// out_i = (Phi c)_i over the full grid.
  void evaluate(const Eigen::VectorXd& coeffs, std::vector<double>& out) const;

  /// Phi^T diag(w) Phi via per-axis contractions.
  Eigen::MatrixXd weighted_gram(const std::vector<double>& weights) const;

 private:
  GridShape shape_;
  int px_ = 0, py_ = 0, pz_ = 0;
  Eigen::MatrixXd fx_, fy_, fz_;  // per-axis factors, n x p, orthonormal
};

/// Per-axis-count^3 lowest 3D DCT frequencies (count=4 gives the default
/// P=64 basis). Throws when a count exceeds the axis length.
BiasBasis build_dct_basis(const GridShape& shape, int per_axis_count);

}  // namespace bayeseg
