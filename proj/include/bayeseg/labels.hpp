#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bayeseg/errors.hpp"

namespace bayeseg {

// The 17 normal head structure labels, brain structures first.
enum NormalLabel : std::uint8_t {
  kWhiteMatter = 0,
  kGrayMatter = 1,
  kCsf = 2,
  kBrainstem = 3,
  kUnspecifiedTissue = 4,
  kLeftHippocampus = 5,
  kRightHippocampus = 6,
  kBackground = 7,
  kEyeSocketFat = 8,
  kEyeSocketMuscles = 9,
  kOpticChiasm = 10,
  kLeftOpticNerve = 11,
  kRightOpticNerve = 12,
  kLeftEyeTissue = 13,
  kRightEyeTissue = 14,
  kLeftEyeFluid = 15,
  kRightEyeFluid = 16,
};

constexpr int kNumLabels = 17;

struct LabelTable {
  std::array<std::string, kNumLabels> names;
  std::uint32_t brain_mask = 0;  // bit per label code

  bool in_brain(int label) const { return (brain_mask >> label) & 1u; }
};

const LabelTable& default_label_table();

// Shared-intensity classes; one GMM per class.
enum GmmIndex : int {
  kGmmCore = 0,
  kGmmEdema = 1,
  kGmmGlobalGray = 2,
  kGmmGlobalWhite = 3,
  kGmmNervesEyeTissue = 4,
  kGmmEyeFluid = 5,
  kGmmCsf = 6,
  kGmmBackground = 7,
  kGmmUnspecified = 8,
  kGmmChiasm = 9,
  kGmmEyeSocketFat = 10,
  kGmmEyeSocketMuscles = 11,
};

constexpr int kNumGmms = 12;

/// +inf for {z=0, y=1} and {z=1, l outside the brain set}, else 0.
double restriction(int label, bool z, bool y, std::uint32_t brain_mask);

/// Maps allowed (l, z, y) combinations onto the 12 intensity classes and
/// holds the per-class Gaussian component counts.
class GmmMapping {
 public:
  GmmMapping();  // default component counts: 3/3/3 core,muscles,background;
                 // 2/2/2 fat,CSF,nerves-eye; 1 otherwise

  /// Throws ForbiddenCombination exactly where restriction() is infinite.
  int map(int label, bool z, bool y) const;

  int components(int gmm) const { return components_[gmm]; }
  void set_components(int gmm, int g);
  const std::array<int, kNumGmms>& component_counts() const {
    return components_;
  }

  /// Normal labels feeding GMM x through (l, 0, 0).
  const std::vector<int>& normal_labels(int gmm) const {
    return normal_labels_[gmm];
  }

  std::string gmm_name(int gmm) const;

 private:
  std::array<int, kNumLabels> normal_to_gmm_;
  std::array<int, kNumGmms> components_;
  std::array<std::vector<int>, kNumGmms> normal_labels_;
};

}  // namespace bayeseg
