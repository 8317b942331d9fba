#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bayeseg/volume.hpp"

namespace bayeseg {

/// 2|a ^ b| / (|a| + |b|); two empty maps count as perfect agreement (1).
double dice(const BinaryMap& a, const BinaryMap& b);

/// Symmetric robust (percentile) surface distance in mm. Surfaces are mask
/// voxels with at least one complement face-neighbor (out-of-grid counts as
/// complement). Exact brute force below 10^4 surface voxels, a Euclidean
/// distance transform above; the two agree on fixtures to 1e-9. Returns
/// nothing when either map is empty (missing structure).
std::optional<double> robust_hausdorff(const BinaryMap& a, const BinaryMap& b,
                                       const Spacing& spacing,
                                       double percentile = 95.0);

struct StructureScore {
  std::string name;
  double dice = 0.0;
  std::optional<double> hausdorff_mm;
  std::size_t pred_voxels = 0;
  std::size_t truth_voxels = 0;
};

struct EvalReport {
  std::vector<StructureScore> structures;

  std::string to_json() const;
  std::string to_csv() const;
};

/// Structure names: "whole_tumor" (z), "core" (z and y), "edema" (z and not
/// y), or any normal-label name from the default table (the l map).
EvalReport evaluate(const JointLabelState& pred, const JointLabelState& truth,
                    const std::vector<std::string>& structures,
                    const Spacing& spacing);

BinaryMap structure_mask(const JointLabelState& state,
                         const std::string& name);

}  // namespace bayeseg
