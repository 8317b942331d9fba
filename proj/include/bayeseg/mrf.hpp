#pragma once

#include <cstdint>

#include "bayeseg/sampler.hpp"

namespace bayeseg {

/// First-order pairwise-MRF tumor prior: per-voxel label draw whose tumor
/// and core terms are exp[-beta sum_{j in N_i} |v_i - v_j|] over the 26
/// in-grid neighbors, applied as a chromatic (8-coloring) Gibbs sweep so
/// that simultaneously updated voxels are never neighbors. With beta = 0
/// the draws coincide with the zero-filter cRBM path on the same seed.
JointLabelState sample_labels_mrf(const MultiChannelImage& data,
                                  const AtlasPrior& atlas,
                                  const GmmMapping& mapping,
                                  const LikelihoodParams& theta,
                                  const BiasBasis* basis,
                                  const JointLabelState& prev,
                                  const MrfConfig& cfg, std::uint64_t seed,
                                  std::uint64_t sweep,
                                  double* surrogate = nullptr);

/// In-grid 26-neighborhood size (smaller at faces, edges, corners).
int neighborhood_size(const GridShape& shape, int x, int y, int z);

}  // namespace bayeseg
