#include <doctest.h>

#include <cmath>
#include <map>

#include "bayeseg/mrf.hpp"
#include "bayeseg/parallel.hpp"
#include "bayeseg/phantom.hpp"
#include "bayeseg/qp.hpp"
#include "bayeseg/sampler.hpp"

using namespace bayeseg;

TEST_CASE("truncated normal: half-normal mean over 1e5 draws") {
  Rng rng(1, RngPurpose::Generic, 0, 0);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = truncated_normal_sample(
        0.0, 1.0, 0.0, std::numeric_limits<double>::infinity(), rng);
    REQUIRE(x >= 0.0);
    sum += x;
  }
  const double want = std::sqrt(2.0 / std::acos(-1.0));  // 0.7979
  const double sd = std::sqrt(1.0 - 2.0 / std::acos(-1.0));
  CHECK(std::fabs(sum / n - want) < 3.0 * sd / std::sqrt(n));
}

TEST_CASE("unbounded truncated draw equals the plain normal draw") {
  const double inf = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    Rng r1(5, RngPurpose::Generic, 0, k);
    Rng r2(5, RngPurpose::Generic, 0, k);
    const double a = truncated_normal_sample(0.3, 1.7, -inf, inf, r1);
    const double b = 0.3 + 1.7 * r2.normal();
    CHECK(a == b);
  }
}

TEST_CASE("truncated normal respects far-tail intervals") {
  Rng rng(2, RngPurpose::Generic, 0, 0);
  for (int k = 0; k < 1000; ++k) {
    const double x = truncated_normal_sample(0.0, 1.0, 20.0, 21.0, rng);
    CHECK(x >= 20.0);
    CHECK(x <= 21.0);
  }
  // empty interval rejected
  CHECK_THROWS_AS(truncated_normal_sample(0.0, 1.0, 2.0, 1.0, rng),
                  InfeasibleConstraints);
}

TEST_CASE("truncated MVN Gibbs: unconstrained mean recovery") {
  Eigen::VectorXd m(2);
  m << 1.0, -2.0;
  Eigen::MatrixXd s(2, 2);
  s << 2.0, 0.8, 0.8, 1.0;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(0, 2);
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(0);

  Rng rng(3, RngPurpose::Generic, 0, 0);
  Eigen::VectorXd x = m;
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
  for (int k = 0; k < n; ++k) {
    x = sample_truncated_mvn(m, s, a, b, x, rng, 1);
    sum += x;
  }
  // conservative autocorrelation inflation factor 3 on the iid SE
  for (int d = 0; d < 2; ++d) {
    const double se = std::sqrt(s(d, d) / n);
    CHECK(std::fabs(sum[d] / n - m[d]) < 9.0 * se);
  }
}

TEST_CASE("truncated MVN: 1D half-normal via constraint rows") {
  Eigen::VectorXd m(1);
  m << 0.0;
  Eigen::MatrixXd s(1, 1);
  s << 1.0;
  Eigen::MatrixXd a(1, 1);
  a << -1.0;  // -mu <= 0, i.e. mu >= 0
  Eigen::VectorXd b(1);
  b << 0.0;
  Rng rng(4, RngPurpose::Generic, 0, 0);
  Eigen::VectorXd x(1);
  x << 0.5;
  const int n = 100000;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    x = sample_truncated_mvn(m, s, a, b, x, rng, 1);
    sum += x[0];
  }
  const double want = std::sqrt(2.0 / std::acos(-1.0));
  const double sd = std::sqrt(1.0 - 2.0 / std::acos(-1.0));
  CHECK(std::fabs(sum / n - want) < 3.0 * sd / std::sqrt(n));

  // infeasible start rejected
  Eigen::VectorXd bad(1);
  bad << -1.0;
  CHECK_THROWS_AS(sample_truncated_mvn(m, s, a, b, bad, rng, 1),
                  InfeasibleConstraints);
}

TEST_CASE("dirichlet: flat prior with empty counts has mean 1/2") {
  Eigen::VectorXd alpha(2);
  alpha << 1.0, 1.0;  // alpha0 = 1, counts (0,0)
  Rng rng(5, RngPurpose::Generic, 0, 0);
  const int n = 100000;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += sample_dirichlet(alpha, rng)[0];
  const double se = std::sqrt(1.0 / 12.0 / n);
  CHECK(std::fabs(sum / n - 0.5) < 3.0 * se);
}

TEST_CASE("inverse Wishart sampler matches the analytic mean") {
  Eigen::MatrixXd scale(2, 2);
  scale << 2.0, 0.5, 0.5, 1.5;
  const double dof = 8.0;
  Rng rng(6, RngPurpose::Generic, 0, 0);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(2, 2);
  const int n = 30000;
  for (int k = 0; k < n; ++k) {
    sum += sample_inverse_wishart(dof, scale, rng);
  }
  const Eigen::MatrixXd want = scale / (dof - 2.0 - 1.0);  // S/(nu-N-1)
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(sum(i, j) / n == doctest::Approx(want(i, j)).epsilon(0.05));
    }
  }
}

namespace {

struct ToyModel {
  GridShape shape{1, 1, 1};
  MultiChannelImage image;
  AtlasPrior atlas;
  GmmMapping mapping;
  LikelihoodParams theta;

  ToyModel() {
    image = MultiChannelImage(shape);
    Channel c;
    c.tag = "T2";
    c.modality = Modality::T2;
    c.values = Volume<double>(shape, 0.4);
    image.add_channel(std::move(c));

    atlas = AtlasPrior(shape, {});
    atlas.set_prob(0, kWhiteMatter, 0.45);
    atlas.set_prob(0, kGrayMatter, 0.2);
    atlas.set_prob(0, kBackground, 0.3);
    atlas.set_prob(0, kOpticChiasm, 0.05);

    const ComponentLayout layout = ComponentLayout::from(mapping);
    theta = LikelihoodParams::zeros(layout, 1, 0);
    theta.means[layout.global(kGmmGlobalWhite, 0)][0] = 0.3;
    theta.means[layout.global(kGmmGlobalGray, 0)][0] = -0.2;
    theta.means[layout.global(kGmmEdema, 0)][0] = 0.9;
    for (int g = 0; g < 3; ++g) {
      theta.means[layout.global(kGmmCore, g)][0] = 1.4;
    }
    theta.means[layout.global(kGmmBackground, 0)][0] = -1.0;
  }
};

}  // namespace

TEST_CASE("single-voxel label draw matches the normalized weights") {
  const ToyModel toy;
  const double zeta = -0.8;
  const double psi = 0.4;
  const std::vector<double> zf{zeta}, yf{psi};

  // direct enumeration of the 31 admissible triples
  const std::uint32_t brain = toy.atlas.brain_mask();
  std::map<std::array<int, 3>, double> want;
  double z = 0.0;
  Eigen::VectorXd d(1), phi(0);
  d << toy.image.channel(0).values[0];
  for (int l = 0; l < kNumLabels; ++l) {
    const double pi = toy.atlas.prob(0, l);
    if (pi <= 0.0) continue;
    for (int zi = 0; zi < 2; ++zi) {
      for (int yi = 0; yi < 2; ++yi) {
        if (std::isinf(restriction(l, zi, yi, brain))) continue;
        const int x = toy.mapping.map(l, zi, yi);
        const double weight = voxel_likelihood(d, x, toy.theta, phi) * pi *
                              std::exp(zeta * zi + psi * yi);
        want[{l, zi, yi}] = weight;
        z += weight;
      }
    }
  }

  std::map<std::array<int, 3>, int> counts;
  const int n = 100000;
  for (int sweep = 0; sweep < n; ++sweep) {
    const JointLabelState s =
        sample_labels_fields(toy.image, toy.atlas, toy.mapping, toy.theta,
                             nullptr, zf, yf, 99, sweep, nullptr);
    ++counts[{s.label(0), s.tumor(0), s.core(0)}];
  }
  for (const auto& [key, weight] : want) {
    const double p = weight / z;
    const double got = static_cast<double>(counts[key]) / n;
    const double se = std::sqrt(p * (1.0 - p) / n) + 1e-9;
    CHECK(std::fabs(got - p) < 3.5 * se);
  }
  // forbidden triples never sampled
  for (const auto& [key, cnt] : counts) {
    CHECK(want.count(key) == 1);
  }
}

TEST_CASE("label chain with fixed theta matches the enumerated posterior") {
  // 2 voxels, tiny cRBMs on z and y; the stationary distribution of the
  // (H, labels) chain must equal the marginalized posterior, whose tumor
  // terms are exp(-free_energy).
  const GridShape shape(2, 1, 1);
  MultiChannelImage image(shape);
  Channel c;
  c.tag = "T2";
  c.modality = Modality::T2;
  c.values = Volume<double>(shape);
  c.values[0] = 0.6;
  c.values[1] = -0.1;
  image.add_channel(std::move(c));

  AtlasPrior atlas(shape, {});
  for (int i = 0; i < 2; ++i) {
    atlas.set_prob(i, kWhiteMatter, 0.7);
    atlas.set_prob(i, kBackground, 0.3);
  }

  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  LikelihoodParams theta = LikelihoodParams::zeros(layout, 1, 0);
  theta.means[layout.global(kGmmGlobalWhite, 0)][0] = 0.2;
  theta.means[layout.global(kGmmBackground, 0)][0] = -0.5;
  theta.means[layout.global(kGmmEdema, 0)][0] = 0.8;
  for (int g = 0; g < 3; ++g) {
    theta.means[layout.global(kGmmCore, g)][0] = 1.1;
  }

  CrbmParams crbm_z(1, {2, 1, 1}, {1, 1, 1});
  crbm_z.filter(0)[0] = 0.9;
  crbm_z.filter(0)[1] = -0.4;
  crbm_z.set_hidden_bias(0, 0.2);
  crbm_z.set_visible_bias(-0.7);
  CrbmParams crbm_y(1, {2, 1, 1}, {1, 1, 1});
  crbm_y.filter(0)[0] = 0.5;
  crbm_y.filter(0)[1] = 0.5;
  crbm_y.set_hidden_bias(0, -0.3);
  crbm_y.set_visible_bias(-0.4);

  // enumerate p(l,z,y | D) over the 4^2 admissible joint states
  struct Triple {
    int l, z, y;
  };
  const std::vector<Triple> triples{{kWhiteMatter, 0, 0},
                                    {kBackground, 0, 0},
                                    {kWhiteMatter, 1, 0},
                                    {kWhiteMatter, 1, 1}};
  Eigen::VectorXd phi(0);
  std::map<std::pair<int, int>, double> want;
  double zsum = 0.0;
  for (int s0 = 0; s0 < 4; ++s0) {
    for (int s1 = 0; s1 < 4; ++s1) {
      const Triple a = triples[s0];
      const Triple b = triples[s1];
      BinaryMap zm(shape), ym(shape);
      zm.set(std::size_t{0}, a.z);
      zm.set(std::size_t{1}, b.z);
      ym.set(std::size_t{0}, a.y);
      ym.set(std::size_t{1}, b.y);
      double weight = std::exp(-free_energy(crbm_z, zm)) *
                      std::exp(-free_energy(crbm_y, ym));
      Eigen::VectorXd d0(1), d1(1);
      d0 << image.channel(0).values[0];
      d1 << image.channel(0).values[1];
      weight *= voxel_likelihood(d0, mapping.map(a.l, a.z, a.y), theta, phi) *
                atlas.prob(0, a.l);
      weight *= voxel_likelihood(d1, mapping.map(b.l, b.z, b.y), theta, phi) *
                atlas.prob(1, b.l);
      want[{s0, s1}] = weight;
      zsum += weight;
    }
  }

  // run the blocked chain with fixed theta
  std::map<std::pair<int, int>, int> counts;
  Volume<std::uint8_t> l0(shape, kWhiteMatter);
  JointLabelState state = JointLabelState::unchecked(
      l0, BinaryMap(shape), BinaryMap(shape));
  const int sweeps = 1000000;
  for (int s = 1; s <= sweeps; ++s) {
    const HiddenState hz =
        sample_hidden(crbm_z, state.tumor_map(), 7, RngPurpose::HiddenZ, s);
    const HiddenState hy =
        sample_hidden(crbm_y, state.core_map(), 7, RngPurpose::HiddenY, s);
    state = sample_labels(image, atlas, mapping, theta, nullptr, crbm_z, hz,
                          crbm_y, hy, 7, s);
    auto encode = [&](std::size_t i) {
      if (!state.tumor(i)) {
        return state.label(i) == kWhiteMatter ? 0 : 1;
      }
      return state.core(i) ? 3 : 2;
    };
    ++counts[{encode(0), encode(1)}];
  }
  for (const auto& [key, weight] : want) {
    const double p = weight / zsum;
    const double got = static_cast<double>(counts[key]) / sweeps;
    const double se = std::sqrt(p * (1.0 - p) / sweeps) + 1e-12;
    CHECK(std::fabs(got - p) < 4.0 * se);
  }
}

TEST_CASE("majority vote with ties and restriction repair") {
  const GridShape shape(1, 1, 1);
  SampleAccumulator acc(shape);
  const std::uint32_t brain = default_label_table().brain_mask;

  auto add_state = [&](int l, bool z, bool y) {
    Volume<std::uint8_t> lv(shape, static_cast<std::uint8_t>(l));
    BinaryMap zm(shape), ym(shape);
    zm.set(std::size_t{0}, z);
    ym.set(std::size_t{0}, y);
    acc.add(JointLabelState::unchecked(lv, zm, ym));
  };

  // l votes: GM x3, WM x2; z: 3/5 -> 1; y: 2/5 -> 0
  add_state(kGrayMatter, true, true);
  add_state(kGrayMatter, true, true);
  add_state(kGrayMatter, false, false);
  add_state(kWhiteMatter, true, false);
  add_state(kWhiteMatter, false, false);
  CHECK(acc.count == 5);

  // accumulator conservation
  std::uint32_t total = 0;
  for (int l = 0; l < kNumLabels; ++l) total += acc.label_votes[l];
  CHECK(total == 5);

  const JointLabelState vote = majority_vote(acc, brain);
  CHECK(vote.label(0) == kGrayMatter);
  CHECK(vote.tumor(0));
  CHECK(!vote.core(0));

  // 2-2 tie on z resolves to 0; y winning without z is repaired
  SampleAccumulator tie(shape);
  Volume<std::uint8_t> lv(shape, kWhiteMatter);
  for (int k = 0; k < 2; ++k) {
    BinaryMap zm(shape), ym(shape);
    zm.set(std::size_t{0}, true);
    tie.add(JointLabelState::unchecked(lv, zm, BinaryMap(shape)));
  }
  for (int k = 0; k < 2; ++k) {
    BinaryMap zm(shape), ym(shape);
    ym.set(std::size_t{0}, true);
    // per-sample restriction would forbid this, but votes are per-variable;
    // feed it unchecked to exercise the repair
    tie.add(JointLabelState::unchecked(lv, zm, ym));
  }
  const JointLabelState tied = majority_vote(tie, brain);
  CHECK(!tied.tumor(0));  // 2-2 tie toward the lower code
  CHECK(!tied.core(0));   // y majority repaired by the restriction

  // z winning on a non-brain label is repaired
  SampleAccumulator bg(shape);
  Volume<std::uint8_t> bgl(shape, kBackground);
  BinaryMap zm(shape);
  zm.set(std::size_t{0}, true);
  for (int k = 0; k < 3; ++k) {
    Volume<std::uint8_t> wl(shape, kWhiteMatter);
    bg.add(JointLabelState::unchecked(wl, zm, BinaryMap(shape)));
  }
  for (int k = 0; k < 4; ++k) {
    bg.add(JointLabelState::unchecked(bgl, zm, BinaryMap(shape)));
  }
  const JointLabelState repaired = majority_vote(bg, brain);
  CHECK(repaired.label(0) == kBackground);
  CHECK(!repaired.tumor(0));
}

TEST_CASE("run_chain: S=1, burn_in=0 returns the single sample") {
  PhantomSpec spec;
  spec.shape = GridShape(12, 12, 12);
  spec.seed = 21;
  spec.bias_amplitude = 0.0;
  const Phantom ph = generate_phantom(spec);
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  const HyperPriors hyper =
      build_hyperpriors(ph.image, ph.atlas, mapping, layout, 0.1, 0.5);

  const CrbmParams cz = smoothing_crbm(0.1, -0.5);
  const CrbmParams cy = smoothing_crbm(0.1, -0.5);
  const TumorPrior prior = TumorPrior::crbm(cz, cy);

  ChainConfig cfg;
  cfg.burn_in = 0;
  cfg.samples = 1;
  cfg.seed = 33;
  LikelihoodParams theta0 = init_theta(ph.image, ph.atlas, mapping, layout, 0);
  theta0.set_stacked_means(solve_constrained_means(
      theta0.stacked_means(),
      Eigen::MatrixXd::Identity(theta0.stacked_means().size(),
                                theta0.stacked_means().size()),
      hyper.constraints.a, hyper.constraints.b));
  const ChainResult result = run_chain(ph.image, ph.atlas, mapping, hyper,
                                       nullptr, prior, theta0, ph.truth, cfg);

  // replicate the single sweep by hand with the same stream keys
  const LikelihoodParams theta1 = sample_theta(
      ph.image, ph.truth, theta0, hyper, mapping, nullptr, cfg.seed, 1, 1);
  const HiddenState hz = sample_hidden(cz, ph.truth.tumor_map(), cfg.seed,
                                       RngPurpose::HiddenZ, 1);
  const HiddenState hy = sample_hidden(cy, ph.truth.core_map(), cfg.seed,
                                       RngPurpose::HiddenY, 1);
  const JointLabelState manual =
      sample_labels(ph.image, ph.atlas, mapping, theta1, nullptr, cz, hz, cy,
                    hy, cfg.seed, 1);
  CHECK(result.final_state == manual);
  CHECK(result.accumulator.count == 1);
}

TEST_CASE("run_chain is seed-deterministic and thread-invariant") {
  PhantomSpec spec;
  spec.shape = GridShape(12, 12, 12);
  spec.seed = 22;
  const Phantom ph = generate_phantom(spec);
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  const HyperPriors hyper =
      build_hyperpriors(ph.image, ph.atlas, mapping, layout, 0.1, 0.5);
  const BiasBasis basis = build_dct_basis(spec.shape, 2);
  const CrbmParams cz = smoothing_crbm(0.15, -0.6);
  const CrbmParams cy = smoothing_crbm(0.15, -0.6);
  const TumorPrior prior = TumorPrior::crbm(cz, cy);

  ChainConfig cfg;
  cfg.burn_in = 2;
  cfg.samples = 3;
  cfg.seed = 55;
  LikelihoodParams theta0 =
      init_theta(ph.image, ph.atlas, mapping, layout, basis.count());
  theta0.set_stacked_means(solve_constrained_means(
      theta0.stacked_means(),
      Eigen::MatrixXd::Identity(theta0.stacked_means().size(),
                              theta0.stacked_means().size()),
      hyper.constraints.a, hyper.constraints.b));

  set_thread_count(1);
  const ChainResult r1 = run_chain(ph.image, ph.atlas, mapping, hyper, &basis,
                                   prior, theta0, ph.truth, cfg);
  set_thread_count(3);
  const ChainResult r2 = run_chain(ph.image, ph.atlas, mapping, hyper, &basis,
                                   prior, theta0, ph.truth, cfg);
  set_thread_count(0);
  CHECK(r1.final_state == r2.final_state);
  REQUIRE(r1.diagnostics.size() == r2.diagnostics.size());
  for (std::size_t k = 0; k < r1.diagnostics.size(); ++k) {
    CHECK(r1.diagnostics[k].surrogate == r2.diagnostics[k].surrogate);
    CHECK(r1.diagnostics[k].tumor_count == r2.diagnostics[k].tumor_count);
  }
  // restriction safety across all accumulated votes
  for (std::size_t i = 0; i < r1.accumulator.core_votes.size(); ++i) {
    CHECK(r1.accumulator.core_votes[i] <= r1.accumulator.tumor_votes[i]);
  }
}
