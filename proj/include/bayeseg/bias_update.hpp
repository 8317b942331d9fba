#pragma once

#include <vector>

#include <Eigen/Dense>

#include "bayeseg/dct_basis.hpp"
#include "bayeseg/rng.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

/// Gaussian conditional of the stacked bias coefficients given per-voxel
/// precision-weight fields w^{mn} (n*n fields of size I) and linear-term
/// fields q^m (n fields): precision blocks Phi^T W^{mn} Phi, linear term
/// Phi^T q^m. Channels with the bias field disabled keep zero rows; their
/// data still enters through the cross-channel weights in q.
///
/// Writes the mode into coeffs (n x P); adds a posterior draw when rng is
/// non-null. Returns false when no bias-enabled channel exists.
bool solve_bias_coefficients(const MultiChannelImage& data,
                             const BiasBasis& basis,
                             const std::vector<std::vector<double>>& wfields,
                             const std::vector<std::vector<double>>& qfields,
                             Eigen::MatrixXd& coeffs, Rng* rng);

}  // namespace bayeseg
