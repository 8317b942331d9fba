#include "bayeseg/likelihood.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "bayeseg/atlas.hpp"
#include "bayeseg/errors.hpp"

using nlohmann::json;

namespace bayeseg {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_multigamma(int n, double a) {
  double v = 0.25 * n * (n - 1) * std::log(std::acos(-1.0));
  for (int j = 1; j <= n; ++j) {
    v += std::lgamma(a + 0.5 * (1 - j));
  }
  return v;
}

Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt;
  // SPD repair: jitter scaled to the trace.
  const int n = cov.rows();
  const double jitter = 1e-10 * cov.trace() / n + 1e-300;
  Eigen::MatrixXd fixed = cov;
  for (int k = 0; k < 60; ++k) {
    fixed.diagonal().array() += jitter * std::pow(2.0, k);
    llt.compute(fixed);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw std::runtime_error("covariance matrix is not positive definite");
}

}  // namespace

ComponentLayout ComponentLayout::from(const GmmMapping& mapping) {
  ComponentLayout layout;
  int off = 0;
  for (int x = 0; x < kNumGmms; ++x) {
    layout.counts[x] = mapping.components(x);
    layout.offsets[x] = off;
    off += layout.counts[x];
  }
  layout.total = off;
  if (layout.total > 64) {
    throw std::invalid_argument("ComponentLayout: too many components");
  }
  return layout;
}

bool ConstraintSystem::feasible(const Eigen::VectorXd& mu, double tol) const {
  if (rows() == 0) return true;
  return ((a * mu - b).array() <= tol).all();
}

LikelihoodParams LikelihoodParams::zeros(const ComponentLayout& layout,
                                         int num_channels, int num_basis) {
  LikelihoodParams p;
  p.num_channels = num_channels;
  p.layout = layout;
  p.weights.resize(kNumGmms);
  for (int x = 0; x < kNumGmms; ++x) {
    p.weights[x] =
        Eigen::VectorXd::Constant(layout.counts[x], 1.0 / layout.counts[x]);
  }
  p.means.assign(layout.total, Eigen::VectorXd::Zero(num_channels));
  p.covariances.assign(layout.total,
                       Eigen::MatrixXd::Identity(num_channels, num_channels));
  p.bias_coeffs = Eigen::MatrixXd::Zero(num_channels, num_basis);
  return p;
}

Eigen::VectorXd LikelihoodParams::stacked_means() const {
  Eigen::VectorXd mu(layout.total * num_channels);
  for (int c = 0; c < layout.total; ++c) {
    mu.segment(c * num_channels, num_channels) = means[c];
  }
  return mu;
}

void LikelihoodParams::set_stacked_means(const Eigen::VectorXd& mu) {
  for (int c = 0; c < layout.total; ++c) {
    means[c] = mu.segment(c * num_channels, num_channels);
  }
}

double gaussian_log_density(const Eigen::VectorXd& x,
                            const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov) {
  const auto llt = robust_llt(cov);
  const Eigen::VectorXd r = x - mean;
  const Eigen::VectorXd w = llt.matrixL().solve(r);
  double logdet = 0.0;
  for (int i = 0; i < cov.rows(); ++i) {
    logdet += std::log(llt.matrixL()(i, i));
  }
  return -0.5 * x.size() * kLog2Pi - logdet - 0.5 * w.squaredNorm();
}

double voxel_likelihood(const Eigen::VectorXd& d, int gmm,
                        const LikelihoodParams& theta,
                        const Eigen::VectorXd& phi) {
  const Eigen::VectorXd shift =
      theta.bias_coeffs.cols() > 0
          ? Eigen::VectorXd(theta.bias_coeffs * phi)
          : Eigen::VectorXd::Zero(theta.num_channels);
  double density = 0.0;
  for (int g = 0; g < theta.layout.counts[gmm]; ++g) {
    const int c = theta.layout.global(gmm, g);
    density += theta.weights[gmm][g] *
               std::exp(gaussian_log_density(d, theta.means[c] + shift,
                                             theta.covariances[c]));
  }
  if (!(density >= 0.0) || !std::isfinite(density)) {
    throw std::runtime_error("voxel_likelihood: non-finite density");
  }
  return density;
}

ConstraintSystem build_constraints(const ComponentLayout& layout,
                                   const std::vector<Modality>& channels) {
  const int n = static_cast<int>(channels.size());
  int flair = -1, t1c = -1;
  for (int c = 0; c < n; ++c) {
    if (channels[c] == Modality::Flair && flair < 0) flair = c;
    if (channels[c] == Modality::T1c && t1c < 0) t1c = c;
  }

  struct Row {
    int low_comp, high_comp, channel;  // mu[low] - mu[high] <= offset
    double offset;
    std::string name;
  };
  const int gwm = layout.global(kGmmGlobalWhite, 0);
  const int ggm = layout.global(kGmmGlobalGray, 0);
  const int edema = layout.global(kGmmEdema, 0);
  const int tc1 = layout.global(kGmmCore, 0);
  const int us = layout.global(kGmmUnspecified, 0);
  const int ch = layout.global(kGmmChiasm, 0);

  std::vector<Row> rows;
  if (flair >= 0) {
    rows.push_back({gwm, edema, flair, -std::log(1.15), "edema.FLAIR>=GWM"});
    rows.push_back({ggm, edema, flair, -std::log(1.15), "edema.FLAIR>=GGM"});
    rows.push_back({gwm, tc1, flair, 0.0, "enhcore.FLAIR>=GWM"});
    rows.push_back({ggm, tc1, flair, 0.0, "enhcore.FLAIR>=GGM"});
  }
  if (t1c >= 0) {
    rows.push_back({gwm, tc1, t1c, -std::log(1.10), "enhcore.T1c>=GWM"});
    rows.push_back({ggm, tc1, t1c, -std::log(1.10), "enhcore.T1c>=GGM"});
  }
  if (flair >= 0) {
    rows.push_back({us, gwm, flair, -std::log(1.05), "unspec.FLAIR<=GWM"});
    rows.push_back({us, ggm, flair, -std::log(1.05), "unspec.FLAIR<=GGM"});
  }
  if (t1c >= 0) {
    rows.push_back({us, gwm, t1c, -std::log(1.05), "unspec.T1c<=GWM"});
    rows.push_back({us, ggm, t1c, -std::log(1.05), "unspec.T1c<=GGM"});
  }
  if (flair >= 0) {
    rows.push_back({ch, gwm, flair, 0.0, "chiasm.FLAIR<=GWM"});
    rows.push_back({ch, ggm, flair, 0.0, "chiasm.FLAIR<=GGM"});
  }

  ConstraintSystem cs;
  const int dim = layout.total * n;
  cs.a = Eigen::MatrixXd::Zero(rows.size(), dim);
  cs.b = Eigen::VectorXd::Zero(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    cs.a(r, rows[r].low_comp * n + rows[r].channel) = 1.0;
    cs.a(r, rows[r].high_comp * n + rows[r].channel) = -1.0;
    cs.b[r] = rows[r].offset;
    cs.names.push_back(rows[r].name);
  }
  return cs;
}

std::pair<Eigen::MatrixXd, double> scatter_hyperprior(
    const MultiChannelImage& data, int components, double expected_voxels,
    bool wide) {
  if (!(expected_voxels > 0.0)) {
    throw std::invalid_argument("scatter_hyperprior: expected voxels <= 0");
  }
  const int n = data.num_channels();
  const std::size_t voxels = data.shape().voxels();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (int c = 0; c < n; ++c) {
    const auto& v = data.channel(c).values;
    double s = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) s += v[i];
    mean[c] = s / static_cast<double>(voxels);
  }
  Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
  for (int c = 0; c < n; ++c) {
    const auto& v = data.channel(c).values;
    double s = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) {
      const double d = v[i] - mean[c];
      s += d * d;
    }
    var[c] = std::max(s / static_cast<double>(voxels), 1e-8);
  }
  const double strength = n + 0.1 * expected_voxels / components;
  const double x_classes = wide ? 1.0 : static_cast<double>(kNumGmms);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(n, n);
  scatter.diagonal() = strength / (x_classes * x_classes) * var;
  return {scatter, strength};
}

double dirichlet_strength(double num_voxels) {
  return 1.0 + 1e-4 * num_voxels;
}

double log_prior_theta(const LikelihoodParams& theta,
                       const HyperPriors& hyper) {
  // tolerance sized for round-off on QP / truncated-Gibbs outputs
  if (!hyper.constraints.feasible(theta.stacked_means(), 1e-7)) {
    return -std::numeric_limits<double>::infinity();
  }
  const int n = theta.num_channels;
  double lp = 0.0;
  for (int x = 0; x < kNumGmms; ++x) {
    const int gx = theta.layout.counts[x];
    // symmetric Dirichlet
    lp += std::lgamma(gx * hyper.alpha0) - gx * std::lgamma(hyper.alpha0);
    for (int g = 0; g < gx; ++g) {
      lp += (hyper.alpha0 - 1.0) * std::log(theta.weights[x][g]);
    }
    const double nu = hyper.strength0[x];
    const Eigen::MatrixXd& s0 = hyper.scatter0[x];
    const auto llt_s = robust_llt(s0);
    double logdet_s = 0.0;
    for (int i = 0; i < n; ++i) logdet_s += std::log(llt_s.matrixL()(i, i));
    logdet_s *= 2.0;
    for (int g = 0; g < gx; ++g) {
      const int c = theta.layout.global(x, g);
      const Eigen::MatrixXd& sig = theta.covariances[c];
      const auto llt = robust_llt(sig);
      double logdet = 0.0;
      for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
      logdet *= 2.0;
      const double trace = llt.solve(s0).trace();
      lp += 0.5 * nu * logdet_s - 0.5 * nu * n * std::log(2.0) -
            log_multigamma(n, 0.5 * nu) - 0.5 * (nu + n + 1.0) * logdet -
            0.5 * trace;
    }
  }
  return lp;
}

std::vector<double> expected_gmm_voxels(const AtlasPrior& atlas,
                                        const GmmMapping& mapping,
                                        double tumor_fraction,
                                        double core_fraction) {
  std::vector<double> volumes = atlas.expected_label_volumes();
  std::vector<double> out(kNumGmms, 0.0);
  double brain = 0.0;
  for (int l = 0; l < kNumLabels; ++l) {
    out[mapping.map(l, false, false)] += volumes[l];
    if (atlas.labels().in_brain(l)) brain += volumes[l];
  }
  out[kGmmCore] = tumor_fraction * core_fraction * brain;
  out[kGmmEdema] = tumor_fraction * (1.0 - core_fraction) * brain;
  for (double& v : out) v = std::max(v, 1.0);
  return out;
}

HyperPriors build_hyperpriors(const MultiChannelImage& data,
                              const AtlasPrior& atlas,
                              const GmmMapping& mapping,
                              const ComponentLayout& layout,
                              double tumor_fraction, double core_fraction) {
  HyperPriors hyper;
  hyper.alpha0 =
      dirichlet_strength(static_cast<double>(data.shape().voxels()));
  const std::vector<double> expected =
      expected_gmm_voxels(atlas, mapping, tumor_fraction, core_fraction);
  hyper.scatter0.resize(kNumGmms);
  hyper.strength0.resize(kNumGmms);
  for (int x = 0; x < kNumGmms; ++x) {
    auto [scatter, strength] = scatter_hyperprior(
        data, layout.counts[x], expected[x], x == kGmmUnspecified);
    hyper.scatter0[x] = scatter;
    hyper.strength0[x] = strength;
  }
  std::vector<Modality> channels;
  for (const auto& c : data.channels()) channels.push_back(c.modality);
  hyper.constraints = build_constraints(layout, channels);
  return hyper;
}

LikelihoodEvaluator::LikelihoodEvaluator(const MultiChannelImage& data,
                                         const BiasBasis* basis,
                                         const LikelihoodParams& theta)
    : data_(data), theta_(theta), n_(data.num_channels()) {
  if (n_ > 8) {
    throw std::invalid_argument("LikelihoodEvaluator: at most 8 channels");
  }
  const std::size_t voxels = data.shape().voxels();
  bias_.resize(n_);
  channel_ptr_.resize(n_);
  for (int c = 0; c < n_; ++c) {
    channel_ptr_[c] = data.channel(c).values.data().data();
    if (basis && theta.bias_coeffs.cols() == basis->count() &&
        theta.bias_coeffs.row(c).cwiseAbs().maxCoeff() > 0.0) {
      basis->evaluate(theta.bias_coeffs.row(c).transpose(), bias_[c]);
    } else {
      bias_[c].assign(voxels, 0.0);
    }
  }
  inv_chol_.resize(theta.layout.total);
  log_const_.resize(theta.layout.total);
  for (int c = 0; c < theta.layout.total; ++c) {
    const auto llt = robust_llt(theta.covariances[c]);
    const Eigen::MatrixXd l = llt.matrixL();
    inv_chol_[c] = l.triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd::Identity(n_, n_));
    double logdet = 0.0;
    for (int i = 0; i < n_; ++i) logdet += std::log(l(i, i));
    log_const_[c] = -0.5 * n_ * kLog2Pi - logdet;
  }
}

void LikelihoodEvaluator::residual(std::size_t voxel, double* out) const {
  for (int c = 0; c < n_; ++c) {
    out[c] = channel_ptr_[c][voxel] - bias_[c][voxel];
  }
}

double LikelihoodEvaluator::component_log_density(const double* r,
                                                  int comp) const {
  const Eigen::MatrixXd& li = inv_chol_[comp];
  const Eigen::VectorXd& mu = theta_.means[comp];
  double quad = 0.0;
  double tmp[8];
  for (int i = 0; i < n_; ++i) tmp[i] = r[i] - mu[i];
  for (int i = 0; i < n_; ++i) {
    double acc = 0.0;
    for (int j = 0; j <= i; ++j) acc += li(i, j) * tmp[j];
    quad += acc * acc;
  }
  return log_const_[comp] - 0.5 * quad;
}

double LikelihoodEvaluator::log_gmm(std::size_t voxel, int gmm) const {
  double r[8];
  residual(voxel, r);
  const int gx = theta_.layout.counts[gmm];
  double terms[8];
  double best = -std::numeric_limits<double>::infinity();
  for (int g = 0; g < gx; ++g) {
    const int c = theta_.layout.global(gmm, g);
    const double w = theta_.weights[gmm][g];
    terms[g] = (w > 0.0 ? std::log(w) : -1e300) + component_log_density(r, c);
    best = std::max(best, terms[g]);
  }
  if (gx == 1) return terms[0];
  double s = 0.0;
  for (int g = 0; g < gx; ++g) s += std::exp(terms[g] - best);
  return best + std::log(s);
}

void LikelihoodEvaluator::component_log_terms(std::size_t voxel, int gmm,
                                              double* out) const {
  double r[8];
  residual(voxel, r);
  const int gx = theta_.layout.counts[gmm];
  for (int g = 0; g < gx; ++g) {
    const int c = theta_.layout.global(gmm, g);
    const double w = theta_.weights[gmm][g];
    out[g] = (w > 0.0 ? std::log(w) : -1e300) + component_log_density(r, c);
  }
}

void save_theta(const std::string& path, const LikelihoodParams& theta,
                const std::vector<std::string>& channel_tags) {
  json meta;
  meta["num_channels"] = theta.num_channels;
  meta["num_basis"] = theta.bias_coeffs.cols();
  meta["channels"] = channel_tags;
  json gmms = json::array();
  GmmMapping mapping;
  for (int x = 0; x < kNumGmms; ++x) {
    gmms.push_back({{"name", mapping.gmm_name(x)},
                    {"components", theta.layout.counts[x]}});
  }
  meta["gmms"] = gmms;
  const std::string header = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write("BSEGTHTA", 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header.data(), header.size());

  auto write_vec = [&](const Eigen::VectorXd& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              v.size() * sizeof(double));
  };
  for (int x = 0; x < kNumGmms; ++x) write_vec(theta.weights[x]);
  for (int c = 0; c < theta.layout.total; ++c) {
    write_vec(theta.means[c]);
    out.write(reinterpret_cast<const char*>(theta.covariances[c].data()),
              theta.covariances[c].size() * sizeof(double));
  }
  out.write(reinterpret_cast<const char*>(theta.bias_coeffs.data()),
            theta.bias_coeffs.size() * sizeof(double));
  if (!out) throw IoError("write failed: " + path);
}

LikelihoodParams load_theta(const std::string& path,
                            std::vector<std::string>* channel_tags) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "BSEGTHTA", 8) != 0) {
    throw IoError(path + ": not a theta checkpoint");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  const json meta = json::parse(header);

  GmmMapping mapping;
  const auto gmms = meta.at("gmms");
  for (int x = 0; x < kNumGmms; ++x) {
    mapping.set_components(x, gmms.at(x).at("components").get<int>());
  }
  const ComponentLayout layout = ComponentLayout::from(mapping);
  LikelihoodParams theta =
      LikelihoodParams::zeros(layout, meta.at("num_channels").get<int>(),
                              meta.at("num_basis").get<int>());
  if (channel_tags) {
    *channel_tags = meta.at("channels").get<std::vector<std::string>>();
  }

  auto read_vec = [&](Eigen::VectorXd& v) {
    in.read(reinterpret_cast<char*>(v.data()), v.size() * sizeof(double));
  };
  for (int x = 0; x < kNumGmms; ++x) read_vec(theta.weights[x]);
  for (int c = 0; c < layout.total; ++c) {
    read_vec(theta.means[c]);
    in.read(reinterpret_cast<char*>(theta.covariances[c].data()),
            theta.covariances[c].size() * sizeof(double));
  }
  in.read(reinterpret_cast<char*>(theta.bias_coeffs.data()),
          theta.bias_coeffs.size() * sizeof(double));
  if (!in) throw IoError(path + ": truncated theta checkpoint");
  return theta;
}

}  // namespace bayeseg
