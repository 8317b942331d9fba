#include "bayeseg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bayeseg/bias_update.hpp"
#include "bayeseg/errors.hpp"
#include "bayeseg/mrf.hpp"
#include "bayeseg/parallel.hpp"

namespace bayeseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kGrain = 4096;

}  // namespace

SampleAccumulator::SampleAccumulator(GridShape s)
    : shape(s),
      label_votes(s.voxels() * kNumLabels, 0),
      tumor_votes(s.voxels(), 0),
      core_votes(s.voxels(), 0) {}

void SampleAccumulator::add(const JointLabelState& state) {
  if (state.shape() != shape) {
    throw std::invalid_argument("SampleAccumulator: shape mismatch");
  }
  const std::size_t n = shape.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    ++label_votes[i * kNumLabels + state.label(i)];
    tumor_votes[i] += state.tumor(i) ? 1 : 0;
    core_votes[i] += state.core(i) ? 1 : 0;
  }
  ++count;
}

double truncated_normal_sample(double mean, double sd, double lo, double hi,
                               Rng& rng) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated normal: sd <= 0");
  double alpha = (lo - mean) / sd;
  double beta = (hi - mean) / sd;
  if (!(alpha < beta)) {
    throw InfeasibleConstraints("truncated normal: empty interval");
  }
  const double u = rng.uniform();
  // Reflect so the interval leans into the lower tail, where the CDF keeps
  // full relative precision down to denormals.
  const bool flip = alpha > -beta;
  if (flip) {
    const double a2 = -beta;
    beta = -alpha;
    alpha = a2;
  }
  const double pa = alpha == -kInf ? 0.0 : normal_cdf(alpha);
  const double pb = beta == kInf ? 1.0 : normal_cdf(beta);
  double p = pa + u * (pb - pa);
  constexpr double tiny = 1e-300;
  p = std::min(std::max(p, tiny), 1.0 - 1e-16);
  double x = inverse_normal_cdf(p);
  if (alpha > -kInf) x = std::max(x, alpha);
  if (beta < kInf) x = std::min(x, beta);
  if (flip) x = -x;
  return mean + sd * x;
}

Eigen::VectorXd sample_truncated_mvn(const Eigen::VectorXd& m,
                                     const Eigen::MatrixXd& s,
                                     const Eigen::MatrixXd& a,
                                     const Eigen::VectorXd& b,
                                     const Eigen::VectorXd& prev, Rng& rng,
                                     int sweeps,
                                     const std::vector<bool>* frozen) {
  const int dim = static_cast<int>(m.size());
  const int rows = static_cast<int>(b.size());
  if (rows > 0) {
    const double entry = (a * prev - b).maxCoeff();
    if (entry > 1e-7 * (1.0 + b.cwiseAbs().maxCoeff())) {
      throw InfeasibleConstraints(
          "sample_truncated_mvn: infeasible starting point (violation " +
          std::to_string(entry) + ")");
    }
  }
  const Eigen::MatrixXd lambda =
      s.llt().solve(Eigen::MatrixXd::Identity(dim, dim));
  Eigen::VectorXd x = prev;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int k = 0; k < dim; ++k) {
      if (frozen && (*frozen)[k]) continue;
      const double lkk = lambda(k, k);
      const double cond_sd = std::sqrt(1.0 / lkk);
      double shift = 0.0;
      for (int j = 0; j < dim; ++j) {
        if (j != k) shift += lambda(k, j) * (x[j] - m[j]);
      }
      const double cond_mean = m[k] - shift / lkk;
      double lo = -kInf, hi = kInf;
      for (int r = 0; r < rows; ++r) {
        const double ark = a(r, k);
        if (ark == 0.0) continue;
        double rest = 0.0;
        for (int j = 0; j < dim; ++j) {
          if (j != k) rest += a(r, j) * x[j];
        }
        const double bound = (b[r] - rest) / ark;
        if (ark > 0.0) {
          hi = std::min(hi, bound);
        } else {
          lo = std::max(lo, bound);
        }
      }
      if (lo > hi) {
        // Round-off on a tight pair of rows; collapse to the midpoint.
        if (lo - hi < 1e-9 * (1.0 + std::fabs(lo))) {
          x[k] = 0.5 * (lo + hi);
          continue;
        }
        throw InfeasibleConstraints(
            "sample_truncated_mvn: empty conditional interval");
      }
      x[k] = truncated_normal_sample(cond_mean, cond_sd, lo, hi, rng);
    }
  }
  return x;
}

Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& alpha, Rng& rng) {
  Eigen::VectorXd g(alpha.size());
  for (int i = 0; i < alpha.size(); ++i) g[i] = rng.gamma(alpha[i]);
  const double sum = g.sum();
  if (!(sum > 0.0)) {
    return Eigen::VectorXd::Constant(alpha.size(), 1.0 / alpha.size());
  }
  return g / sum;
}

Eigen::MatrixXd sample_inverse_wishart(double dof,
                                       const Eigen::MatrixXd& scale,
                                       Rng& rng) {
  const int n = static_cast<int>(scale.rows());
  if (!(dof > n - 1)) {
    throw std::invalid_argument("sample_inverse_wishart: dof too small");
  }
  const Eigen::MatrixXd ls =
      Eigen::LLT<Eigen::MatrixXd>(scale).matrixL();
  // F F^T = scale^-1 with F = L^-T.
  const Eigen::MatrixXd f =
      ls.triangularView<Eigen::Lower>()
          .solve(Eigen::MatrixXd::Identity(n, n))
          .transpose();
  Eigen::MatrixXd bart = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    bart(i, i) = std::sqrt(rng.chi_square(dof - i));
  }
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      bart(i, j) = rng.normal();
    }
  }
  const Eigen::MatrixXd mfac = f * bart;  // W = M M^T ~ Wishart(dof, S^-1)
  const Eigen::MatrixXd minv = mfac.partialPivLu().solve(
      Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd sigma = minv.transpose() * minv;
  return 0.5 * (sigma + sigma.transpose());
}

LikelihoodParams sample_theta(const MultiChannelImage& data,
                              const JointLabelState& state,
                              const LikelihoodParams& prev,
                              const HyperPriors& hyper,
                              const GmmMapping& mapping,
                              const BiasBasis* basis, std::uint64_t seed,
                              std::uint64_t sweep, int trunc_sweeps) {
  const int n = prev.num_channels;
  const int total = prev.layout.total;
  const std::size_t voxels = data.shape().voxels();
  LikelihoodParams theta = prev;

  std::array<int, kNumLabels> normal_gmm{};
  for (int l = 0; l < kNumLabels; ++l) {
    normal_gmm[l] = mapping.map(l, false, false);
  }

  // --- t: one component per voxel within its GMM.
  const LikelihoodEvaluator eval(data, basis, prev);
  std::vector<std::uint8_t> assign(voxels);
  parallel_chunks(voxels, kGrain, [&](std::size_t, std::size_t b,
                                      std::size_t e) {
    double terms[8];
    for (std::size_t i = b; i < e; ++i) {
      const int x = state.tumor(i)
                        ? (state.core(i) ? kGmmCore : kGmmEdema)
                        : normal_gmm[state.label(i)];
      const int gx = prev.layout.counts[x];
      if (gx == 1) {
        assign[i] = static_cast<std::uint8_t>(prev.layout.global(x, 0));
        continue;
      }
      eval.component_log_terms(i, x, terms);
      double best = terms[0];
      for (int g = 1; g < gx; ++g) best = std::max(best, terms[g]);
      double z = 0.0;
      for (int g = 0; g < gx; ++g) {
        terms[g] = std::exp(terms[g] - best);
        z += terms[g];
      }
      Rng rng(seed, RngPurpose::ComponentDraw, sweep, i);
      double u = rng.uniform() * z;
      int g = 0;
      for (; g < gx - 1; ++g) {
        u -= terms[g];
        if (u <= 0.0) break;
      }
      assign[i] = static_cast<std::uint8_t>(prev.layout.global(x, g));
    }
  });

  // Moments of the bias-corrected data per component (ordered reduction).
  const std::size_t chunks = chunk_count(voxels, kGrain);
  std::vector<std::vector<double>> pmass(chunks);
  std::vector<std::vector<Eigen::VectorXd>> pfirst(chunks);
  std::vector<std::vector<Eigen::MatrixXd>> psecond(chunks);
  parallel_chunks(voxels, kGrain, [&](std::size_t c, std::size_t b,
                                      std::size_t e) {
    pmass[c].assign(total, 0.0);
    pfirst[c].assign(total, Eigen::VectorXd::Zero(n));
    psecond[c].assign(total, Eigen::MatrixXd::Zero(n, n));
    double r[8];
    Eigen::VectorXd rv(n);
    for (std::size_t i = b; i < e; ++i) {
      eval.residual(i, r);
      for (int k = 0; k < n; ++k) rv[k] = r[k];
      const int comp = assign[i];
      pmass[c][comp] += 1.0;
      pfirst[c][comp] += rv;
      psecond[c][comp] += rv * rv.transpose();
    }
  });
  std::vector<double> mass(total, 0.0);
  std::vector<Eigen::VectorXd> first(total, Eigen::VectorXd::Zero(n));
  std::vector<Eigen::MatrixXd> second(total, Eigen::MatrixXd::Zero(n, n));
  for (std::size_t c = 0; c < chunks; ++c) {
    for (int k = 0; k < total; ++k) {
      mass[k] += pmass[c][k];
      first[k] += pfirst[c][k];
      second[k] += psecond[c][k];
    }
  }

  // --- gamma | t.
  for (int x = 0; x < kNumGmms; ++x) {
    const int gx = prev.layout.counts[x];
    Eigen::VectorXd alpha(gx);
    for (int g = 0; g < gx; ++g) {
      alpha[g] = hyper.alpha0 + mass[prev.layout.global(x, g)];
    }
    Rng rng(seed, RngPurpose::Weights, sweep, x);
    theta.weights[x] = sample_dirichlet(alpha, rng);
  }

  // --- mu | t, Sigma_prev, C_prev: truncated MVN Gibbs sweep.
  {
    Eigen::VectorXd m_mu(total * n);
    Eigen::MatrixXd s_mu = Eigen::MatrixXd::Zero(total * n, total * n);
    std::vector<bool> frozen(total * n, false);
    for (int c = 0; c < total; ++c) {
      if (mass[c] > 0.0) {
        m_mu.segment(c * n, n) = first[c] / mass[c];
        s_mu.block(c * n, c * n, n, n) = prev.covariances[c] / mass[c];
      } else {
        // Uniform improper conditional: hold the current value.
        m_mu.segment(c * n, n) = prev.means[c];
        s_mu.block(c * n, c * n, n, n) =
            Eigen::MatrixXd::Identity(n, n);
        for (int k = 0; k < n; ++k) frozen[c * n + k] = true;
      }
    }
    Rng rng(seed, RngPurpose::Means, sweep, 0);
    const Eigen::VectorXd mu = sample_truncated_mvn(
        m_mu, s_mu, hyper.constraints.a, hyper.constraints.b,
        prev.stacked_means(), rng, trunc_sweeps, &frozen);
    theta.set_stacked_means(mu);
  }

  // --- Sigma | t, mu, C_prev.
  for (int x = 0; x < kNumGmms; ++x) {
    for (int g = 0; g < prev.layout.counts[x]; ++g) {
      const int c = prev.layout.global(x, g);
      Rng rng(seed, RngPurpose::Covariances, sweep, c);
      const Eigen::VectorXd& mu = theta.means[c];
      Eigen::MatrixXd scatter = hyper.scatter0[x];
      if (mass[c] > 0.0) {
        scatter += second[c] - first[c] * mu.transpose() -
                   mu * first[c].transpose() + mass[c] * (mu * mu.transpose());
      }
      scatter = 0.5 * (scatter + scatter.transpose());
      theta.covariances[c] =
          sample_inverse_wishart(hyper.strength0[x] + mass[c], scatter, rng);
    }
  }

  // --- C | t, mu, Sigma.
  if (basis && theta.bias_coeffs.cols() > 0) {
    std::vector<Eigen::MatrixXd> lambda(total);
    for (int c = 0; c < total; ++c) {
      lambda[c] = theta.covariances[c].llt().solve(
          Eigen::MatrixXd::Identity(n, n));
    }
    std::vector<const double*> chan(n);
    for (int c = 0; c < n; ++c) {
      chan[c] = data.channel(c).values.data().data();
    }
    std::vector<std::vector<double>> wfields(n * n,
                                             std::vector<double>(voxels));
    std::vector<std::vector<double>> qfields(n, std::vector<double>(voxels));
    parallel_chunks(voxels, kGrain, [&](std::size_t, std::size_t b,
                                        std::size_t e) {
      Eigen::VectorXd diff(n), contrib(n);
      for (std::size_t i = b; i < e; ++i) {
        const int comp = assign[i];
        const Eigen::MatrixXd& lam = lambda[comp];
        for (int ch = 0; ch < n; ++ch) {
          diff[ch] = chan[ch][i] - theta.means[comp][ch];
        }
        contrib = lam * diff;
        for (int m = 0; m < n; ++m) {
          qfields[m][i] = contrib[m];
          for (int nn = 0; nn < n; ++nn) {
            wfields[m * n + nn][i] = lam(m, nn);
          }
        }
      }
    });
    Rng rng(seed, RngPurpose::BiasField, sweep, 0);
    solve_bias_coefficients(data, *basis, wfields, qfields,
                            theta.bias_coeffs, &rng);
  }
  return theta;
}

JointLabelState sample_labels_fields(
    const MultiChannelImage& data, const AtlasPrior& atlas,
    const GmmMapping& mapping, const LikelihoodParams& theta,
    const BiasBasis* basis, const std::vector<double>& tumor_field,
    const std::vector<double>& core_field, std::uint64_t seed,
    std::uint64_t sweep, double* surrogate) {
  const std::size_t voxels = data.shape().voxels();
  if (tumor_field.size() != voxels || core_field.size() != voxels) {
    throw std::invalid_argument("sample_labels_fields: field size mismatch");
  }
  const LikelihoodEvaluator eval(data, basis, theta);
  const std::uint32_t brain = atlas.brain_mask();
  std::array<int, kNumLabels> label_gmm;
  for (int l = 0; l < kNumLabels; ++l) {
    label_gmm[l] = mapping.map(l, false, false);
  }

  Volume<std::uint8_t> labels(data.shape());
  BinaryMap zmap(data.shape());
  BinaryMap ymap(data.shape());

  const std::size_t chunks = chunk_count(voxels, kGrain);
  std::vector<double> chunk_surrogate(chunks, 0.0);

  parallel_chunks(voxels, kGrain, [&](std::size_t c, std::size_t b,
                                      std::size_t e) {
    double loglik[kNumGmms];
    // allowed triples: (l,0,0) all l; (l,1,0) and (l,1,1) for brain l
    double logw[kNumLabels * 3];
    std::uint8_t tl[kNumLabels * 3];
    std::uint8_t tz[kNumLabels * 3];
    double score[kNumLabels * 3];
    double surr = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      for (int x = 0; x < kNumGmms; ++x) loglik[x] = eval.log_gmm(i, x);
      const double* pi = atlas.row(i);
      const double zeta = tumor_field[i];
      const double psi = core_field[i];
      int cnt = 0;
      double best = -kInf;
      for (int l = 0; l < kNumLabels; ++l) {
        if (pi[l] <= 0.0) continue;
        const double logpi = std::log(pi[l]);
        logw[cnt] = logpi + loglik[label_gmm[l]];
        score[cnt] = logw[cnt];
        tl[cnt] = static_cast<std::uint8_t>(l);
        tz[cnt] = 0;
        best = std::max(best, logw[cnt]);
        ++cnt;
        if ((brain >> l) & 1u) {
          logw[cnt] = logpi + zeta + loglik[kGmmEdema];
          score[cnt] = logpi + loglik[kGmmEdema];
          tl[cnt] = static_cast<std::uint8_t>(l);
          tz[cnt] = 1;
          best = std::max(best, logw[cnt]);
          ++cnt;
          logw[cnt] = logpi + zeta + psi + loglik[kGmmCore];
          score[cnt] = logpi + loglik[kGmmCore];
          tl[cnt] = static_cast<std::uint8_t>(l);
          tz[cnt] = 2;  // z=1, y=1
          best = std::max(best, logw[cnt]);
          ++cnt;
        }
      }
      if (cnt == 0) {
        throw std::runtime_error(
            "sample_labels: no admissible label at voxel " +
            std::to_string(i));
      }
      double z = 0.0;
      for (int k = 0; k < cnt; ++k) {
        logw[k] = std::exp(logw[k] - best);
        z += logw[k];
      }
      Rng rng(seed, RngPurpose::Labels, sweep, i);
      double u = rng.uniform() * z;
      int k = 0;
      for (; k < cnt - 1; ++k) {
        u -= logw[k];
        if (u <= 0.0) break;
      }
      labels[i] = tl[k];
      zmap.set(i, tz[k] >= 1);
      ymap.set(i, tz[k] == 2);
      surr += score[k];
    }
    chunk_surrogate[c] = surr;
  });

  if (surrogate) {
    double s = 0.0;
    for (double v : chunk_surrogate) s += v;
    *surrogate = s;
  }
  return JointLabelState::unchecked(std::move(labels), std::move(zmap),
                                    std::move(ymap));
}

JointLabelState sample_labels(const MultiChannelImage& data,
                              const AtlasPrior& atlas,
                              const GmmMapping& mapping,
                              const LikelihoodParams& theta,
                              const BiasBasis* basis,
                              const CrbmParams& crbm_z, const HiddenState& hz,
                              const CrbmParams& crbm_y, const HiddenState& hy,
                              std::uint64_t seed, std::uint64_t sweep) {
  const Volume<double> zeta =
      visible_preactivation(crbm_z, data.shape(), hz);
  const Volume<double> psi = visible_preactivation(crbm_y, data.shape(), hy);
  return sample_labels_fields(data, atlas, mapping, theta, basis, zeta.data(),
                              psi.data(), seed, sweep, nullptr);
}

JointLabelState majority_vote(const SampleAccumulator& acc,
                              std::uint32_t brain_mask) {
  if (acc.count < 1) {
    throw std::invalid_argument("majority_vote: no accumulated samples");
  }
  const std::size_t n = acc.shape.voxels();
  Volume<std::uint8_t> labels(acc.shape);
  BinaryMap zmap(acc.shape);
  BinaryMap ymap(acc.shape);
  const std::uint32_t half = static_cast<std::uint32_t>(acc.count);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t* votes = acc.label_votes.data() + i * kNumLabels;
    int bl = 0;
    std::uint32_t bestv = votes[0];
    for (int l = 1; l < kNumLabels; ++l) {
      if (votes[l] > bestv) {  // strict: ties keep the lower code
        bestv = votes[l];
        bl = l;
      }
    }
    bool z = 2 * acc.tumor_votes[i] > half;
    bool y = 2 * acc.core_votes[i] > half;
    // Per-variable votes can disagree with the restriction; repair.
    if (y && !z) y = false;
    if (z && !((brain_mask >> bl) & 1u)) {
      z = false;
      y = false;
    }
    labels[i] = static_cast<std::uint8_t>(bl);
    zmap.set(i, z);
    ymap.set(i, y);
  }
  return JointLabelState(std::move(labels), std::move(zmap), std::move(ymap),
                         brain_mask);
}

ChainResult run_chain(const MultiChannelImage& data, const AtlasPrior& atlas,
                      const GmmMapping& mapping, const HyperPriors& hyper,
                      const BiasBasis* basis, const TumorPrior& prior,
                      const LikelihoodParams& theta0,
                      const JointLabelState& state0, const ChainConfig& cfg) {
  if (cfg.burn_in < 0 || cfg.samples < 1) {
    throw std::invalid_argument("run_chain: need burn_in >= 0, samples >= 1");
  }
  if (prior.kind == TumorPrior::Kind::Crbm &&
      (!prior.crbm_z || !prior.crbm_y)) {
    throw std::invalid_argument("run_chain: cRBM prior without parameters");
  }
  const std::uint32_t brain = atlas.brain_mask();
  state0.validate(brain);

  ChainResult result;
  result.accumulator = SampleAccumulator(data.shape());
  JointLabelState state = state0;
  LikelihoodParams theta = theta0;

  const int total_sweeps = cfg.burn_in + cfg.samples;
  for (int s = 1; s <= total_sweeps; ++s) {
    theta = sample_theta(data, state, theta, hyper, mapping, basis, cfg.seed,
                         s, cfg.trunc_sweeps);
    double surrogate = 0.0;
    if (prior.kind == TumorPrior::Kind::Crbm) {
      const HiddenState hz = sample_hidden(*prior.crbm_z, state.tumor_map(),
                                           cfg.seed, RngPurpose::HiddenZ, s);
      const HiddenState hy = sample_hidden(*prior.crbm_y, state.core_map(),
                                           cfg.seed, RngPurpose::HiddenY, s);
      const Volume<double> zeta =
          visible_preactivation(*prior.crbm_z, data.shape(), hz);
      const Volume<double> psi =
          visible_preactivation(*prior.crbm_y, data.shape(), hy);
      state = sample_labels_fields(data, atlas, mapping, theta, basis,
                                   zeta.data(), psi.data(), cfg.seed, s,
                                   &surrogate);
    } else {
      state = sample_labels_mrf(data, atlas, mapping, theta, basis, state,
                                prior.mrf, cfg.seed, s, &surrogate);
    }
    state.validate(brain);  // restriction safety, every sweep

    ChainDiagRow row;
    row.sweep = s;
    row.surrogate = surrogate;
    for (std::size_t i = 0; i < state.size(); ++i) {
      ++row.label_counts[state.label(i)];
      row.tumor_count += state.tumor(i) ? 1 : 0;
      row.core_count += state.core(i) ? 1 : 0;
    }
    result.diagnostics.push_back(row);

    if (s > cfg.burn_in) {
      result.accumulator.add(state);
      if (basis && theta.bias_coeffs.cols() == basis->count()) {
        if (result.mean_bias.empty()) {
          result.mean_bias.assign(data.num_channels(),
                                  std::vector<double>(data.shape().voxels(),
                                                      0.0));
        }
        std::vector<double> field;
        for (int c = 0; c < data.num_channels(); ++c) {
          basis->evaluate(theta.bias_coeffs.row(c).transpose(), field);
          for (std::size_t i = 0; i < field.size(); ++i) {
            result.mean_bias[c][i] += field[i];
          }
        }
      }
    }
  }
  for (auto& channel_field : result.mean_bias) {
    for (double& v : channel_field) v /= cfg.samples;
  }

  result.theta_last = theta;
  result.final_state = majority_vote(result.accumulator, brain);
  return result;
}

}  // namespace bayeseg
