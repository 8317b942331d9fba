#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bayeseg/metrics.hpp"
#include "bayeseg/phantom.hpp"

using namespace bayeseg;

TEST_CASE("zero noise gives a piecewise-constant image at mu + bias") {
  PhantomSpec spec;
  spec.shape = GridShape(16, 16, 16);
  spec.noise_scale = 0.0;
  spec.seed = 3;
  const Phantom ph = generate_phantom(spec);
  GmmMapping mapping;
  for (std::size_t i = 0; i < spec.shape.voxels(); i += 17) {
    const int x =
        mapping.map(ph.truth.label(i), ph.truth.tumor(i), ph.truth.core(i));
    for (int c = 0; c < ph.image.num_channels(); ++c) {
      // all components of a class share the ground-truth mean
      const double want =
          ph.theta_truth.means[ph.theta_truth.layout.global(x, 0)][c] +
          ph.bias_truth[c][i];
      CHECK(ph.image.channel(c).values[i] ==
            doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("per-class sample means match the ground truth within 3 sigma") {
  PhantomSpec spec;
  spec.shape = GridShape(24, 24, 24);
  spec.seed = 4;
  spec.tumor_radius_frac = 0.5;
  spec.core_radius_frac = 0.7;
  spec.bias_amplitude = 0.0;
  const Phantom ph = generate_phantom(spec);
  GmmMapping mapping;

  for (int x : {kGmmGlobalWhite, kGmmBackground, kGmmCore}) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < spec.shape.voxels(); ++i) {
      const int xi =
          mapping.map(ph.truth.label(i), ph.truth.tumor(i), ph.truth.core(i));
      if (xi != x) continue;
      sum += ph.image.channel(0).values[i];
      ++n;
    }
    REQUIRE(n > 30);
    const double want =
        ph.theta_truth.means[ph.theta_truth.layout.global(x, 0)][0];
    const double sd = std::sqrt(
        ph.theta_truth.covariances[ph.theta_truth.layout.global(x, 0)](0, 0));
    CHECK(std::fabs(sum / n - want) < 3.0 * sd / std::sqrt(n) + 1e-12);
  }
}

TEST_CASE("phantoms are seed-deterministic") {
  PhantomSpec spec;
  spec.shape = GridShape(16, 16, 16);
  spec.seed = 9;
  const Phantom a = generate_phantom(spec);
  const Phantom b = generate_phantom(spec);
  CHECK(a.truth == b.truth);
  for (int c = 0; c < a.image.num_channels(); ++c) {
    CHECK(a.image.channel(c).values == b.image.channel(c).values);
  }
  spec.seed = 10;
  const Phantom c = generate_phantom(spec);
  CHECK(!(c.truth == a.truth));
}

TEST_CASE("planted masks satisfy the restriction and theta is feasible") {
  PhantomSpec spec;
  spec.shape = GridShape(20, 20, 20);
  spec.seed = 12;
  spec.crbm_shapes = true;
  const Phantom ph = generate_phantom(spec);
  CHECK_NOTHROW(ph.truth.validate(ph.atlas.brain_mask()));
  CHECK(ph.truth.tumor_map().count() > 0);
  CHECK(ph.truth.core_map().count() > 0);

  GmmMapping mapping;
  std::vector<Modality> mods;
  for (const auto& ch : ph.image.channels()) mods.push_back(ch.modality);
  const ConstraintSystem cs =
      build_constraints(ComponentLayout::from(mapping), mods);
  CHECK(cs.feasible(ph.theta_truth.stacked_means()));
}

TEST_CASE("phantom bundle round-trips through the filesystem") {
  PhantomSpec spec;
  spec.shape = GridShape(12, 12, 12);
  spec.seed = 5;
  const Phantom ph = generate_phantom(spec);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "bayeseg_phantom").string();
  save_phantom(ph, dir);
  const PhantomBundle bundle = load_phantom(dir);
  CHECK(bundle.truth == ph.truth);
  for (int c = 0; c < ph.image.num_channels(); ++c) {
    CHECK(bundle.image.channel(c).values == ph.image.channel(c).values);
    CHECK(bundle.image.channel(c).tag == ph.image.channel(c).tag);
  }
  const AtlasPrior atlas = load_atlas(bundle.atlas_manifest, spec.shape);
  for (std::size_t i = 0; i < spec.shape.voxels(); i += 13) {
    for (int l = 0; l < kNumLabels; ++l) {
      CHECK(atlas.prob(i, l) == ph.atlas.prob(i, l));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("smoothing cRBM mask sampling keeps a cohesive blob") {
  const GridShape shape(20, 20, 20);
  BinaryMap blob(shape);
  for (int z = 6; z < 14; ++z) {
    for (int y = 6; y < 14; ++y) {
      for (int x = 6; x < 14; ++x) blob.set(x, y, z, true);
    }
  }
  const CrbmParams smoother = smoothing_crbm();
  const BinaryMap sampled = sample_crbm_mask(smoother, blob, 3, 17);
  const double ratio =
      static_cast<double>(sampled.count()) / static_cast<double>(blob.count());
  CHECK(ratio > 0.3);
  CHECK(ratio < 3.0);
  CHECK(dice(sampled, blob) > 0.4);
}
