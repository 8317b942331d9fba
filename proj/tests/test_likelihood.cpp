#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "bayeseg/atlas.hpp"
#include "bayeseg/likelihood.hpp"
#include "bayeseg/rng.hpp"

using namespace bayeseg;

namespace {

LikelihoodParams single_gaussian_theta(int channels) {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  return LikelihoodParams::zeros(layout, channels, 0);
}

}  // namespace

TEST_CASE("standard normal peak density") {
  LikelihoodParams theta = single_gaussian_theta(1);
  Eigen::VectorXd d(1), phi(0);
  d << 0.0;
  const double got = voxel_likelihood(d, kGmmEdema, theta, phi);
  CHECK(got == doctest::Approx(0.3989422804014327).epsilon(1e-12));
}

TEST_CASE("two identical components collapse to one") {
  LikelihoodParams theta = single_gaussian_theta(1);
  // CSF has two components; make them identical
  theta.means[theta.layout.global(kGmmCsf, 0)][0] = 1.2;
  theta.means[theta.layout.global(kGmmCsf, 1)][0] = 1.2;
  Eigen::VectorXd d(1), phi(0);
  d << 0.7;
  const double two = voxel_likelihood(d, kGmmCsf, theta, phi);
  LikelihoodParams one = theta;
  one.weights[kGmmCsf] << 1.0, 0.0;
  const double collapsed = voxel_likelihood(d, kGmmCsf, one, phi);
  CHECK(two == doctest::Approx(collapsed).epsilon(1e-12));
}

TEST_CASE("2-channel density matches an independently coded formula") {
  LikelihoodParams theta = single_gaussian_theta(2);
  const int comp = theta.layout.global(kGmmEdema, 0);
  theta.means[comp] << 0.4, -0.3;
  Eigen::MatrixXd cov(2, 2);
  cov << 1.3, 0.4, 0.4, 0.9;
  theta.covariances[comp] = cov;
  Eigen::VectorXd d(2), phi(0);
  d << 1.0, 0.5;

  // independent route: explicit 2x2 inverse and determinant
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  const double r0 = d[0] - 0.4, r1 = d[1] + 0.3;
  const double quad =
      (cov(1, 1) * r0 * r0 - 2.0 * cov(0, 1) * r0 * r1 + cov(0, 0) * r1 * r1) /
      det;
  const double want =
      std::exp(-0.5 * quad) / (2.0 * std::acos(-1.0) * std::sqrt(det));
  CHECK(voxel_likelihood(d, kGmmEdema, theta, phi) ==
        doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("1D density integrates to one by quadrature") {
  LikelihoodParams theta = single_gaussian_theta(1);
  theta.means[theta.layout.global(kGmmCsf, 0)][0] = -0.5;
  theta.means[theta.layout.global(kGmmCsf, 1)][0] = 1.5;
  theta.covariances[theta.layout.global(kGmmCsf, 1)](0, 0) = 0.25;
  theta.weights[kGmmCsf] << 0.3, 0.7;
  Eigen::VectorXd phi(0);
  // Simpson over [-12, 12]
  const int steps = 4000;
  const double a = -12.0, b = 12.0, h = (b - a) / steps;
  double integral = 0.0;
  for (int k = 0; k <= steps; ++k) {
    Eigen::VectorXd d(1);
    d << a + k * h;
    const double f = voxel_likelihood(d, kGmmCsf, theta, phi);
    const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    integral += w * f;
  }
  integral *= h / 3.0;
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("bias field acts as a pure mean shift") {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  LikelihoodParams theta = LikelihoodParams::zeros(layout, 2, 3);
  theta.bias_coeffs << 0.1, -0.2, 0.3, 0.0, 0.5, -0.4;
  Eigen::VectorXd d(2), phi(3);
  d << 0.8, -0.2;
  phi << 1.0, 0.3, -0.7;
  LikelihoodParams nobias = theta;
  nobias.bias_coeffs.setZero();
  const Eigen::VectorXd shifted = d - theta.bias_coeffs * phi;
  CHECK(voxel_likelihood(d, kGmmEdema, theta, phi) ==
        voxel_likelihood(shifted, kGmmEdema, nobias, phi));
}

TEST_CASE("constraint rows per channel set") {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);

  const ConstraintSystem full = build_constraints(
      layout, {Modality::Flair, Modality::T1c, Modality::T2});
  CHECK(full.rows() == 12);

  const ConstraintSystem t2only = build_constraints(layout, {Modality::T2});
  CHECK(t2only.rows() == 0);

  const ConstraintSystem flair_only =
      build_constraints(layout, {Modality::Flair});
  CHECK(flair_only.rows() == 8);

  const ConstraintSystem t1c_only =
      build_constraints(layout, {Modality::T1c});
  CHECK(t1c_only.rows() == 4);

  // channel-aware: no row references an absent channel
  for (int r = 0; r < flair_only.rows(); ++r) {
    CHECK(flair_only.names[r].find("T1c") == std::string::npos);
  }
}

TEST_CASE("feasibility by direct substitution") {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  const std::vector<Modality> chans{Modality::Flair, Modality::T1c,
                                    Modality::T2};
  const ConstraintSystem cs = build_constraints(layout, chans);
  LikelihoodParams theta = LikelihoodParams::zeros(layout, 3, 0);
  auto set = [&](int gmm, int g, double f, double t1c, double t2) {
    theta.means[layout.global(gmm, g)] << f, t1c, t2;
  };
  set(kGmmGlobalWhite, 0, 1.0, 1.2, 0.9);
  set(kGmmGlobalGray, 0, 1.1, 1.1, 1.0);
  set(kGmmEdema, 0, 1.1 + std::log(1.2), 1.0, 1.4);  // log 1.2 > log 1.15
  for (int g = 0; g < 3; ++g) {
    set(kGmmCore, g, 1.8, 1.2 + std::log(1.2), 1.2);
  }
  set(kGmmUnspecified, 0, 0.2, 0.2, 0.2);
  set(kGmmChiasm, 0, 0.5, 0.5, 0.5);
  CHECK(cs.feasible(theta.stacked_means()));

  // push edema below the threshold: infeasible
  set(kGmmEdema, 0, 1.1 + std::log(1.10), 1.0, 1.4);
  CHECK(!cs.feasible(theta.stacked_means()));
}

TEST_CASE("scatter hyperprior arithmetic") {
  const GridShape shape(10, 10, 10);
  MultiChannelImage img(shape);
  Rng rng(3, RngPurpose::Generic, 0, 0);
  for (int c = 0; c < 3; ++c) {
    Channel ch;
    ch.tag = "C" + std::to_string(c);
    ch.values = Volume<double>(shape);
    for (std::size_t i = 0; i < shape.voxels(); ++i) {
      ch.values[i] = rng.normal();
    }
    img.add_channel(std::move(ch));
  }

  // nu = N + I_x / (10 G_x): N=3, I_x=3000, G_x=3 -> 103
  auto [s_narrow, nu] = scatter_hyperprior(img, 3, 3000.0, false);
  CHECK(nu == doctest::Approx(103.0));

  // wide (X=1) vs narrow (X=12): ratio 144 entry-wise
  auto [s_wide, nu_w] = scatter_hyperprior(img, 3, 3000.0, true);
  CHECK(nu_w == doctest::Approx(103.0));
  for (int k = 0; k < 3; ++k) {
    CHECK(s_wide(k, k) == doctest::Approx(144.0 * s_narrow(k, k)));
  }
}

TEST_CASE("constant image hits the variance floor") {
  const GridShape shape(4, 4, 4);
  MultiChannelImage img(shape);
  Channel ch;
  ch.tag = "T2";
  ch.values = Volume<double>(shape, 3.14);
  img.add_channel(std::move(ch));
  auto [scatter, nu] = scatter_hyperprior(img, 1, 64.0, false);
  const double want = (1.0 + 0.1 * 64.0) / 144.0 * 1e-8;
  CHECK(scatter(0, 0) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("dirichlet strength") {
  CHECK(dirichlet_strength(1e4) == doctest::Approx(2.0));
  CHECK(dirichlet_strength(0.0) == doctest::Approx(1.0));
  CHECK(dirichlet_strength(262144.0) == doctest::Approx(27.2144));
}

TEST_CASE("log prior: -inf on violation, flat Dirichlet constant in gamma") {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  LikelihoodParams theta = LikelihoodParams::zeros(layout, 1, 0);
  // feasible arrangement for the FLAIR rows
  theta.means[layout.global(kGmmEdema, 0)][0] = 1.0;
  for (int g = 0; g < 3; ++g) {
    theta.means[layout.global(kGmmCore, g)][0] = 1.0;
  }
  theta.means[layout.global(kGmmUnspecified, 0)][0] = -1.0;
  theta.means[layout.global(kGmmChiasm, 0)][0] = -1.0;
  HyperPriors hyper;
  hyper.alpha0 = 1.0;
  hyper.scatter0.assign(kNumGmms, 0.5 * Eigen::MatrixXd::Identity(1, 1));
  hyper.strength0.assign(kNumGmms, 4.0);
  hyper.constraints =
      build_constraints(layout, std::vector<Modality>{Modality::Flair});
  REQUIRE(hyper.constraints.feasible(theta.stacked_means()));

  const double base = log_prior_theta(theta, hyper);
  CHECK(std::isfinite(base));

  // alpha0 = 1: Dirichlet term constant in the weights
  LikelihoodParams skewed = theta;
  skewed.weights[kGmmCore] << 0.7, 0.2, 0.1;
  CHECK(log_prior_theta(skewed, hyper) == doctest::Approx(base).epsilon(1e-12));

  // violating any constraint by any margin gives -inf
  LikelihoodParams bad = theta;
  bad.means[layout.global(kGmmUnspecified, 0)][0] = 10.0;
  CHECK(std::isinf(log_prior_theta(bad, hyper)));
  CHECK(log_prior_theta(bad, hyper) < 0.0);
}

TEST_CASE("log prior matches an independently coded density to 1e-10") {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  const int n = 2;
  LikelihoodParams theta = LikelihoodParams::zeros(layout, n, 0);
  Rng rng(5, RngPurpose::Generic, 0, 0);
  for (int x = 0; x < kNumGmms; ++x) {
    double sum = 0.0;
    for (int g = 0; g < layout.counts[x]; ++g) {
      theta.weights[x][g] = 0.2 + rng.uniform();
      sum += theta.weights[x][g];
    }
    theta.weights[x] /= sum;
    for (int g = 0; g < layout.counts[x]; ++g) {
      const int c = layout.global(x, g);
      Eigen::MatrixXd m(n, n);
      m << 1.0 + rng.uniform(), 0.2 * rng.normal(), 0.0, 1.0 + rng.uniform();
      m(1, 0) = m(0, 1);
      theta.covariances[c] = m * m.transpose() + Eigen::MatrixXd::Identity(n, n);
    }
  }
  HyperPriors hyper;
  hyper.alpha0 = 2.5;
  hyper.scatter0.assign(kNumGmms, Eigen::MatrixXd::Zero(n, n));
  hyper.strength0.assign(kNumGmms, 0.0);
  for (int x = 0; x < kNumGmms; ++x) {
    Eigen::MatrixXd s(n, n);
    s << 2.0 + rng.uniform(), 0.3, 0.3, 1.5 + rng.uniform();
    hyper.scatter0[x] = s;
    hyper.strength0[x] = n + 2.0 + rng.uniform() * 3.0;
  }
  // no constraints

  // test-side re-derivation with direct formulas
  auto log_dir = [&](const Eigen::VectorXd& g, double a0) {
    const int gx = static_cast<int>(g.size());
    double v = std::lgamma(gx * a0) - gx * std::lgamma(a0);
    for (int k = 0; k < gx; ++k) v += (a0 - 1.0) * std::log(g[k]);
    return v;
  };
  auto log_iw = [&](const Eigen::MatrixXd& sig, double nu,
                    const Eigen::MatrixXd& s) {
    const double pi = std::acos(-1.0);
    double mg = 0.25 * n * (n - 1) * std::log(pi);
    for (int j = 1; j <= n; ++j) mg += std::lgamma(0.5 * (nu + 1 - j));
    const double det_s = s.determinant();
    const double det_sig = sig.determinant();
    const double tr = (s * sig.inverse()).trace();
    return 0.5 * nu * std::log(det_s) - 0.5 * nu * n * std::log(2.0) - mg -
           0.5 * (nu + n + 1.0) * std::log(det_sig) - 0.5 * tr;
  };
  double want = 0.0;
  for (int x = 0; x < kNumGmms; ++x) {
    want += log_dir(theta.weights[x], hyper.alpha0);
    for (int g = 0; g < layout.counts[x]; ++g) {
      want += log_iw(theta.covariances[layout.global(x, g)],
                     hyper.strength0[x], hyper.scatter0[x]);
    }
  }
  CHECK(log_prior_theta(theta, hyper) ==
        doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("theta checkpoint round-trips") {
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  LikelihoodParams theta = LikelihoodParams::zeros(layout, 2, 4);
  Rng rng(6, RngPurpose::Generic, 0, 0);
  for (auto& m : theta.means) {
    for (int k = 0; k < 2; ++k) m[k] = rng.normal();
  }
  theta.bias_coeffs.setRandom();
  const std::string path =
      (std::filesystem::temp_directory_path() / "bayeseg_theta.bin").string();
  save_theta(path, theta, {"FLAIR", "T2"});
  std::vector<std::string> tags;
  const LikelihoodParams loaded = load_theta(path, &tags);
  CHECK(tags == std::vector<std::string>{"FLAIR", "T2"});
  CHECK(loaded.num_channels == 2);
  for (int c = 0; c < layout.total; ++c) {
    CHECK(loaded.means[c] == theta.means[c]);
    CHECK(loaded.covariances[c] == theta.covariances[c]);
  }
  CHECK(loaded.bias_coeffs == theta.bias_coeffs);
  std::remove(path.c_str());
}

TEST_CASE("expected class volumes fold the simplified tumor fractions") {
  const GridShape shape(4, 4, 4);
  AtlasPrior atlas(shape, {});
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    atlas.set_prob(i, kWhiteMatter, 0.5);
    atlas.set_prob(i, kBackground, 0.5);
  }
  GmmMapping mapping;
  const auto volumes = expected_gmm_voxels(atlas, mapping, 0.1, 0.5);
  const double brain = 0.5 * shape.voxels();
  CHECK(volumes[kGmmCore] == doctest::Approx(0.05 * brain));
  CHECK(volumes[kGmmEdema] == doctest::Approx(0.05 * brain));
  CHECK(volumes[kGmmGlobalWhite] == doctest::Approx(brain));
  CHECK(volumes[kGmmBackground] == doctest::Approx(brain));
}
