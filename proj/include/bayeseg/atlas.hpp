#pragma once

#include <string>
#include <vector>

#include "bayeseg/grid.hpp"
#include "bayeseg/labels.hpp"

namespace bayeseg {

/// Per-voxel probability vectors over the K=17 normal labels, consumed as a
/// pre-rasterized volume with deformation fixed. Immutable after load.
class AtlasPrior {
 public:
  AtlasPrior() = default;
  AtlasPrior(GridShape shape, Spacing spacing);

  const GridShape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  const LabelTable& labels() const { return table_; }
  std::uint32_t brain_mask() const { return table_.brain_mask; }

  double prob(std::size_t voxel, int label) const {
    return probs_[voxel * kNumLabels + label];
  }
  void set_prob(std::size_t voxel, int label, double p) {
    probs_[voxel * kNumLabels + label] = p;
  }
  const double* row(std::size_t voxel) const {
    return probs_.data() + voxel * kNumLabels;
  }

  double brain_prob(std::size_t voxel) const;

  /// Each vector must sum to 1 within tol and have no negative entries.
  void validate(double tol = 1e-6) const;
  void normalize();

  /// Expected voxel count per label: sum of its probabilities.
  std::vector<double> expected_label_volumes() const;

 private:
  GridShape shape_;
  Spacing spacing_;
  LabelTable table_ = default_label_table();
  std::vector<double> probs_;  // voxel-major, K per voxel
};

/// Reads the manifest JSON ({labels, brain_set, epsilon_unspecified, files})
/// and the per-label NIfTI volumes it points at. Rejects shape mismatches,
/// negative probabilities and per-voxel sums deviating more than 1e-3 from 1;
/// smaller deviations are renormalized.
AtlasPrior load_atlas(const std::string& manifest_path,
                      const GridShape& expected_shape);

/// Writes a manifest plus one float64 NIfTI per label into `dir`.
/// Returns the manifest path.
std::string save_atlas(const AtlasPrior& atlas, const std::string& dir,
                       double epsilon_unspecified);

/// Sets the unspecified-brain-tissue label to epsilon everywhere and
/// renormalizes each probability vector. The label must currently be absent
/// (all zero); epsilon must lie in (0,1).
AtlasPrior add_unspecified_tissue(const AtlasPrior& atlas, double epsilon);

}  // namespace bayeseg
