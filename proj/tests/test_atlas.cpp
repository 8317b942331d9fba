#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "bayeseg/atlas.hpp"
#include "bayeseg/labels.hpp"

using namespace bayeseg;

TEST_CASE("label table matches the documented layout") {
  const auto& t = default_label_table();
  CHECK(t.in_brain(kWhiteMatter));
  CHECK(t.in_brain(kUnspecifiedTissue));
  CHECK(t.in_brain(kRightHippocampus));
  CHECK(!t.in_brain(kBackground));
  CHECK(!t.in_brain(kOpticChiasm));
  CHECK(!t.in_brain(kRightEyeFluid));
  int brain_count = 0;
  for (int l = 0; l < kNumLabels; ++l) brain_count += t.in_brain(l);
  CHECK(brain_count == 7);
}

TEST_CASE("gmm mapping follows the shared-intensity table") {
  GmmMapping m;
  CHECK(m.map(kWhiteMatter, true, true) == kGmmCore);
  CHECK(m.map(kGrayMatter, true, false) == kGmmEdema);
  CHECK(m.map(kLeftHippocampus, false, false) == kGmmGlobalGray);
  CHECK(m.map(kRightHippocampus, false, false) == kGmmGlobalGray);
  CHECK(m.map(kBrainstem, false, false) == kGmmGlobalWhite);
  CHECK(m.map(kLeftOpticNerve, false, false) == kGmmNervesEyeTissue);
  CHECK(m.map(kRightEyeTissue, false, false) == kGmmNervesEyeTissue);
  CHECK(m.map(kLeftEyeFluid, false, false) == kGmmEyeFluid);
  CHECK(m.map(kRightEyeFluid, false, false) == kGmmEyeFluid);
  CHECK_THROWS_AS(m.map(kBackground, true, false), ForbiddenCombination);
  CHECK_THROWS_AS(m.map(kWhiteMatter, false, true), ForbiddenCombination);
}

TEST_CASE("restriction energy values") {
  const std::uint32_t brain = default_label_table().brain_mask;
  CHECK(std::isinf(restriction(kWhiteMatter, false, true, brain)));
  CHECK(std::isinf(restriction(kBackground, true, false, brain)));
  CHECK(restriction(kGrayMatter, true, true, brain) == 0.0);
  CHECK(restriction(kBackground, false, false, brain) == 0.0);
}

TEST_CASE("mapping errors exactly where the restriction is infinite") {
  GmmMapping m;
  const std::uint32_t brain = default_label_table().brain_mask;
  for (int l = 0; l < kNumLabels; ++l) {
    for (int zi = 0; zi < 2; ++zi) {
      for (int yi = 0; yi < 2; ++yi) {
        const bool forbidden =
            std::isinf(restriction(l, zi != 0, yi != 0, brain));
        if (forbidden) {
          CHECK_THROWS_AS(m.map(l, zi != 0, yi != 0), ForbiddenCombination);
        } else {
          CHECK_NOTHROW(m.map(l, zi != 0, yi != 0));
        }
      }
    }
  }
}

TEST_CASE("exactly 12 distinct classes over the allowed combinations") {
  GmmMapping m;
  const std::uint32_t brain = default_label_table().brain_mask;
  std::set<int> classes;
  for (int l = 0; l < kNumLabels; ++l) {
    for (int zi = 0; zi < 2; ++zi) {
      for (int yi = 0; yi < 2; ++yi) {
        if (std::isinf(restriction(l, zi != 0, yi != 0, brain))) continue;
        classes.insert(m.map(l, zi != 0, yi != 0));
      }
    }
  }
  CHECK(classes.size() == kNumGmms);
}

TEST_CASE("default component counts") {
  GmmMapping m;
  CHECK(m.components(kGmmCore) == 3);
  CHECK(m.components(kGmmEyeSocketMuscles) == 3);
  CHECK(m.components(kGmmBackground) == 3);
  CHECK(m.components(kGmmEyeSocketFat) == 2);
  CHECK(m.components(kGmmCsf) == 2);
  CHECK(m.components(kGmmNervesEyeTissue) == 2);
  CHECK(m.components(kGmmGlobalGray) == 1);
  CHECK(m.components(kGmmEdema) == 1);
  int total = 0;
  for (int x = 0; x < kNumGmms; ++x) total += m.components(x);
  CHECK(total == 21);
}

TEST_CASE("add_unspecified_tissue arithmetic and guards") {
  const GridShape shape(2, 1, 1);
  AtlasPrior atlas(shape, {});
  for (std::size_t i = 0; i < 2; ++i) atlas.set_prob(i, kWhiteMatter, 1.0);

  const AtlasPrior out = add_unspecified_tissue(atlas, 0.01);
  CHECK(out.prob(0, kWhiteMatter) ==
        doctest::Approx(1.0 / 1.01).epsilon(1e-12));
  CHECK(out.prob(0, kUnspecifiedTissue) ==
        doctest::Approx(0.01 / 1.01).epsilon(1e-12));

  // per-voxel normalization preserved to 1e-12
  for (std::size_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (int l = 0; l < kNumLabels; ++l) sum += out.prob(i, l);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(add_unspecified_tissue(atlas, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(add_unspecified_tissue(atlas, 1.0), std::invalid_argument);
  // applying twice: label already present
  CHECK_THROWS_AS(add_unspecified_tissue(out, 0.01), std::invalid_argument);
}

TEST_CASE("atlas save/load round-trips bit-exactly") {
  const GridShape shape(3, 2, 2);
  AtlasPrior atlas(shape, {1.0, 1.0, 1.0});
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    atlas.set_prob(i, kWhiteMatter, 0.25 + 0.01 * i);
    atlas.set_prob(i, kGrayMatter, 0.5);
    atlas.set_prob(i, kBackground, 0.25 - 0.01 * i);
  }
  atlas.validate();
  const std::string dir =
      (std::filesystem::temp_directory_path() / "bayeseg_atlas").string();
  const std::string manifest = save_atlas(atlas, dir, 0.01);
  const AtlasPrior loaded = load_atlas(manifest, shape);
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    for (int l = 0; l < kNumLabels; ++l) {
      CHECK(loaded.prob(i, l) == atlas.prob(i, l));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_atlas rejects badly normalized volumes") {
  const GridShape shape(2, 1, 1);
  AtlasPrior atlas(shape, {});
  for (std::size_t i = 0; i < 2; ++i) atlas.set_prob(i, kCsf, 0.9);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "bayeseg_atlas_bad").string();
  const std::string manifest = save_atlas(atlas, dir, 0.0);
  CHECK_THROWS_AS(load_atlas(manifest, shape), IoError);
  // wrong shape also rejected
  CHECK_THROWS_AS(load_atlas(manifest, GridShape(2, 2, 1)), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("uniform atlas is valid") {
  const GridShape shape(2, 2, 1);
  AtlasPrior atlas(shape, {});
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    for (int l = 0; l < kNumLabels; ++l) {
      atlas.set_prob(i, l, 1.0 / kNumLabels);
    }
  }
  CHECK_NOTHROW(atlas.validate());
  CHECK(atlas.brain_prob(0) == doctest::Approx(7.0 / 17.0));
}
