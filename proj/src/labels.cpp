#include "bayeseg/labels.hpp"

#include <limits>

namespace bayeseg {

const LabelTable& default_label_table() {
  static const LabelTable table = [] {
    LabelTable t;
    t.names = {"white matter",
               "gray matter",
               "CSF",
               "brainstem",
               "unspecified brain tissue",
               "left hippocampus",
               "right hippocampus",
               "background",
               "eye socket fat",
               "eye socket muscles",
               "optic chiasm",
               "left optic nerve",
               "right optic nerve",
               "left eye tissue",
               "right eye tissue",
               "left eye fluid",
               "right eye fluid"};
    t.brain_mask = 0;
    for (int l = kWhiteMatter; l <= kRightHippocampus; ++l) {
      t.brain_mask |= 1u << l;
    }
    return t;
  }();
  return table;
}

double restriction(int label, bool z, bool y, std::uint32_t brain_mask) {
  if (!z && y) return std::numeric_limits<double>::infinity();
  if (z && !((brain_mask >> label) & 1u)) {
    return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

GmmMapping::GmmMapping() {
  normal_to_gmm_[kWhiteMatter] = kGmmGlobalWhite;
  normal_to_gmm_[kBrainstem] = kGmmGlobalWhite;
  normal_to_gmm_[kGrayMatter] = kGmmGlobalGray;
  normal_to_gmm_[kLeftHippocampus] = kGmmGlobalGray;
  normal_to_gmm_[kRightHippocampus] = kGmmGlobalGray;
  normal_to_gmm_[kLeftOpticNerve] = kGmmNervesEyeTissue;
  normal_to_gmm_[kRightOpticNerve] = kGmmNervesEyeTissue;
  normal_to_gmm_[kLeftEyeTissue] = kGmmNervesEyeTissue;
  normal_to_gmm_[kRightEyeTissue] = kGmmNervesEyeTissue;
  normal_to_gmm_[kLeftEyeFluid] = kGmmEyeFluid;
  normal_to_gmm_[kRightEyeFluid] = kGmmEyeFluid;
  normal_to_gmm_[kCsf] = kGmmCsf;
  normal_to_gmm_[kBackground] = kGmmBackground;
  normal_to_gmm_[kUnspecifiedTissue] = kGmmUnspecified;
  normal_to_gmm_[kOpticChiasm] = kGmmChiasm;
  normal_to_gmm_[kEyeSocketFat] = kGmmEyeSocketFat;
  normal_to_gmm_[kEyeSocketMuscles] = kGmmEyeSocketMuscles;

  components_.fill(1);
  components_[kGmmCore] = 3;
  components_[kGmmEyeSocketMuscles] = 3;
  components_[kGmmBackground] = 3;
  components_[kGmmEyeSocketFat] = 2;
  components_[kGmmCsf] = 2;
  components_[kGmmNervesEyeTissue] = 2;

  for (int l = 0; l < kNumLabels; ++l) {
    normal_labels_[normal_to_gmm_[l]].push_back(l);
  }
}

int GmmMapping::map(int label, bool z, bool y) const {
  if (label < 0 || label >= kNumLabels) {
    throw std::invalid_argument("GmmMapping: label code out of range");
  }
  const std::uint32_t brain = default_label_table().brain_mask;
  if (!z && y) {
    throw ForbiddenCombination("GmmMapping: core flag without tumor flag");
  }
  if (z && !((brain >> label) & 1u)) {
    throw ForbiddenCombination("GmmMapping: tumor flag on non-brain label " +
                               std::to_string(label));
  }
  if (z) return y ? kGmmCore : kGmmEdema;
  return normal_to_gmm_[label];
}

void GmmMapping::set_components(int gmm, int g) {
  if (g < 1) throw std::invalid_argument("GmmMapping: components must be >= 1");
  components_[gmm] = g;
}

std::string GmmMapping::gmm_name(int gmm) const {
  static const std::array<std::string, kNumGmms> names = {
      "core",
      "edema",
      "global gray matter",
      "global white matter",
      "global nerves/eye tissue",
      "global eye fluid",
      "CSF",
      "background",
      "unspecified brain tissue",
      "optic chiasm",
      "eye socket fat",
      "eye socket muscles"};
  return names[gmm];
}

}  // namespace bayeseg
