#include <doctest.h>

#include <cmath>

#include "bayeseg/mrf.hpp"
#include "bayeseg/phantom.hpp"
#include "bayeseg/qp.hpp"

using namespace bayeseg;

TEST_CASE("in-grid neighborhood sizes at faces, edges and corners") {
  const GridShape s(4, 4, 4);
  CHECK(neighborhood_size(s, 0, 0, 0) == 7);    // corner
  CHECK(neighborhood_size(s, 1, 0, 0) == 11);   // edge
  CHECK(neighborhood_size(s, 1, 1, 0) == 17);   // face
  CHECK(neighborhood_size(s, 1, 1, 1) == 26);   // interior
  CHECK(neighborhood_size(s, 3, 3, 3) == 7);
}

TEST_CASE("pairwise weight ratio for k active neighbors") {
  // k neighbors pinned at core by their data, the rest pinned normal by a
  // background atlas; the free center then draws z with the prior-ratio
  // weight e^zeta, zeta = -beta_z (n0 - n1).
  const GridShape shape(3, 3, 3);
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);

  LikelihoodParams theta = LikelihoodParams::zeros(layout, 1, 0);
  for (int g = 0; g < 3; ++g) {
    theta.means[layout.global(kGmmCore, g)][0] = 40.0;
  }
  // edema and the normal classes share the center intensity
  for (auto& cov : theta.covariances) cov(0, 0) = 0.01;

  const int k = 9;
  const std::size_t center = shape.index(1, 1, 1);
  MultiChannelImage img(shape);
  Channel c;
  c.tag = "T2";
  c.modality = Modality::T2;
  c.values = Volume<double>(shape, 0.0);
  AtlasPrior atlas(shape, {});
  int assigned = 0;
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    if (i == center) {
      atlas.set_prob(i, kWhiteMatter, 1.0);
    } else if (assigned < k) {
      c.values[i] = 40.0;            // likelihood pins this voxel at core
      atlas.set_prob(i, kWhiteMatter, 1.0);
      ++assigned;
    } else {
      atlas.set_prob(i, kBackground, 1.0);  // non-brain: z = 0 structurally
    }
  }
  img.add_channel(std::move(c));

  Volume<std::uint8_t> l0(shape, kBackground);
  l0[center] = kWhiteMatter;
  const JointLabelState prev =
      JointLabelState::unchecked(l0, BinaryMap(shape), BinaryMap(shape));

  MrfConfig cfg;
  cfg.beta_z = 0.12;
  cfg.beta_y = 0.05;
  const double zeta = -cfg.beta_z * (26.0 - 2.0 * k);
  const double psi = -cfg.beta_y * (26.0 - 2.0 * k);  // core neighbors = k

  Eigen::VectorXd d(1), phi(0);
  d << 0.0;
  const double l_norm = voxel_likelihood(d, kGmmGlobalWhite, theta, phi);
  const double l_edema = voxel_likelihood(d, kGmmEdema, theta, phi);
  const double l_core = voxel_likelihood(d, kGmmCore, theta, phi);
  const double w0 = l_norm;
  const double w1 = std::exp(zeta) * (l_edema + std::exp(psi) * l_core);
  const double p_want = w1 / (w0 + w1);

  int hits = 0;
  const int n = 20000;
  for (int sweep = 1; sweep <= n; ++sweep) {
    const JointLabelState next = sample_labels_mrf(
        img, atlas, mapping, theta, nullptr, prev, cfg, 77, sweep, nullptr);
    for (std::size_t i = 0; i < shape.voxels(); ++i) {
      if (i == center) continue;
      const bool want_core = img.channel(0).values[i] == 40.0;
      REQUIRE(next.tumor(i) == want_core);
      REQUIRE(next.core(i) == want_core);
    }
    hits += next.tumor(center) ? 1 : 0;
  }
  const double got = static_cast<double>(hits) / n;
  const double se = std::sqrt(p_want * (1.0 - p_want) / n) + 1e-9;
  CHECK(std::fabs(got - p_want) < 3.5 * se);
}

TEST_CASE("beta=0 chain equals the zero-filter cRBM chain draw for draw") {
  PhantomSpec spec;
  spec.shape = GridShape(12, 12, 12);
  spec.seed = 31;
  const Phantom ph = generate_phantom(spec);
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  const HyperPriors hyper =
      build_hyperpriors(ph.image, ph.atlas, mapping, layout, 0.1, 0.5);

  // zeroed cRBM: no filters, no biases
  CrbmParams zero_z(1, 2, 1);
  CrbmParams zero_y(1, 2, 1);

  LikelihoodParams theta0 =
      init_theta(ph.image, ph.atlas, mapping, layout, 0);
  theta0.set_stacked_means(solve_constrained_means(
      theta0.stacked_means(),
      Eigen::MatrixXd::Identity(theta0.stacked_means().size(),
                                theta0.stacked_means().size()),
      hyper.constraints.a, hyper.constraints.b));

  ChainConfig cfg;
  cfg.burn_in = 1;
  cfg.samples = 3;
  cfg.seed = 97;

  const ChainResult crbm_run =
      run_chain(ph.image, ph.atlas, mapping, hyper, nullptr,
                TumorPrior::crbm(zero_z, zero_y), theta0, ph.truth, cfg);
  const ChainResult mrf_run =
      run_chain(ph.image, ph.atlas, mapping, hyper, nullptr,
                TumorPrior::first_order_mrf({0.0, 0.0}), theta0, ph.truth,
                cfg);
  CHECK(crbm_run.final_state == mrf_run.final_state);
  REQUIRE(crbm_run.diagnostics.size() == mrf_run.diagnostics.size());
  for (std::size_t k = 0; k < crbm_run.diagnostics.size(); ++k) {
    // the MRF path accumulates per color, so the sums differ in rounding
    CHECK(crbm_run.diagnostics[k].surrogate ==
          doctest::Approx(mrf_run.diagnostics[k].surrogate).epsilon(1e-12));
    CHECK(crbm_run.diagnostics[k].tumor_count ==
          mrf_run.diagnostics[k].tumor_count);
  }
}
