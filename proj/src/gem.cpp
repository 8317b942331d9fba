#include "bayeseg/gem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bayeseg/bias_update.hpp"
#include "bayeseg/errors.hpp"
#include "bayeseg/parallel.hpp"
#include "bayeseg/qp.hpp"
#include "bayeseg/rng.hpp"

namespace bayeseg {

namespace {

constexpr double kNegInf = -1e300;
constexpr std::size_t kGrain = 4096;

struct MomentStats {
  // Per global component: responsibility mass, first and second moments of
  // the bias-corrected data.
  std::vector<double> mass;                  // total
  std::vector<Eigen::VectorXd> first;        // total x N
  std::vector<Eigen::MatrixXd> second;       // total x N x N
  double log_likelihood = 0.0;

  MomentStats(int total, int n)
      : mass(total, 0.0),
        first(total, Eigen::VectorXd::Zero(n)),
        second(total, Eigen::MatrixXd::Zero(n, n)) {}

  void add(const MomentStats& o) {
    for (std::size_t c = 0; c < mass.size(); ++c) {
      mass[c] += o.mass[c];
      first[c] += o.first[c];
      second[c] += o.second[c];
    }
    log_likelihood += o.log_likelihood;
  }
};

/// Streams the E-step over voxels: accumulates moments and, optionally, the
/// per-voxel responsibilities.
MomentStats estep_moments(const MultiChannelImage& data,
                          const SimplifiedClassWeights& weights,
                          const LikelihoodEvaluator& eval,
                          const LikelihoodParams& theta,
                          Eigen::MatrixXd* resp_out) {
  const std::size_t voxels = data.shape().voxels();
  const int n = theta.num_channels;
  const int total = theta.layout.total;
  const std::size_t chunks = chunk_count(voxels, kGrain);
  std::vector<MomentStats> partial(chunks, MomentStats(total, n));

  parallel_chunks(voxels, kGrain, [&](std::size_t c, std::size_t b,
                                      std::size_t e) {
    MomentStats& st = partial[c];
    double logterm[64];
    double r[8];
    Eigen::VectorXd rv(n);
    for (std::size_t i = b; i < e; ++i) {
      const double* logw = weights.log_weights(i);
      double best = kNegInf;
      int idx = 0;
      for (int x = 0; x < kNumGmms; ++x) {
        const int gx = theta.layout.counts[x];
        if (logw[x] <= kNegInf) {
          for (int g = 0; g < gx; ++g) logterm[idx++] = kNegInf;
          continue;
        }
        eval.component_log_terms(i, x, logterm + idx);
        for (int g = 0; g < gx; ++g) {
          logterm[idx] += logw[x];
          best = std::max(best, logterm[idx]);
          ++idx;
        }
      }
      double z = 0.0;
      for (int c2 = 0; c2 < total; ++c2) {
        logterm[c2] = (logterm[c2] <= kNegInf)
                          ? 0.0
                          : std::exp(logterm[c2] - best);
        z += logterm[c2];
      }
      st.log_likelihood += best + std::log(z);
      eval.residual(i, r);
      for (int k = 0; k < n; ++k) rv[k] = r[k];
      const double inv_z = 1.0 / z;
      for (int c2 = 0; c2 < total; ++c2) {
        const double t = logterm[c2] * inv_z;
        if (resp_out) (*resp_out)(i, c2) = t;
        if (t <= 0.0) continue;
        st.mass[c2] += t;
        st.first[c2] += t * rv;
        st.second[c2] += t * (rv * rv.transpose());
      }
    }
  });

  MomentStats out(total, n);
  for (const auto& p : partial) out.add(p);
  return out;
}

}  // namespace

std::pair<double, double> simplified_biases(const SimplifiedPriorConfig& cfg) {
  const double w = cfg.tumor_fraction;
  const double u = cfg.core_fraction;
  if (!(w >= 1e-6 && w <= 1.0 - 1e-6) || !(u >= 1e-6 && u <= 1.0 - 1e-6)) {
    throw std::invalid_argument(
        "simplified_biases: fractions must lie in [1e-6, 1-1e-6]");
  }
  const double az = std::log((w - w * u) / (1.0 - w));
  const double ay = std::log(u / (1.0 - u));
  return {az, ay};
}

SimplifiedClassWeights::SimplifiedClassWeights(const AtlasPrior& atlas,
                                               const GmmMapping& mapping,
                                               const SimplifiedPriorConfig& cfg) {
  const auto [az, ay] = simplified_biases(cfg);
  az_ = az;
  ay_ = ay;
  const double ez = std::exp(az);        // edema weight per brain label
  const double ezy = std::exp(az + ay);  // core weight per brain label
  const std::size_t voxels = atlas.shape().voxels();
  logw_.assign(voxels * kNumGmms, 0.0);

  std::array<int, kNumLabels> label_gmm;
  for (int l = 0; l < kNumLabels; ++l) label_gmm[l] = mapping.map(l, false, false);
  const std::uint32_t brain = atlas.brain_mask();

  parallel_chunks(voxels, kGrain, [&](std::size_t, std::size_t b,
                                      std::size_t e) {
    double w[kNumGmms];
    for (std::size_t i = b; i < e; ++i) {
      std::fill(w, w + kNumGmms, 0.0);
      const double* pi = atlas.row(i);
      double brain_mass = 0.0;
      for (int l = 0; l < kNumLabels; ++l) {
        w[label_gmm[l]] += pi[l];
        if ((brain >> l) & 1u) brain_mass += pi[l];
      }
      w[kGmmEdema] = ez * brain_mass;
      w[kGmmCore] = ezy * brain_mass;
      double z = 0.0;
      for (int x = 0; x < kNumGmms; ++x) z += w[x];
      double* out = logw_.data() + i * kNumGmms;
      for (int x = 0; x < kNumGmms; ++x) {
        out[x] = w[x] > 0.0 ? std::log(w[x] / z) : kNegInf;
      }
    }
  });
}

bool tumor_init_distance(Modality m, TumorMeanDistances* out) {
  switch (m) {
    case Modality::Flair: *out = {1.0, 1.0}; return true;
    case Modality::T2: *out = {0.7, 0.7}; return true;
    case Modality::T1: *out = {0.2, 0.2}; return true;
    case Modality::T1c: *out = {1.5, 0.2}; return true;
    default: return false;
  }
}

LikelihoodParams init_theta(const MultiChannelImage& data,
                            const AtlasPrior& atlas, const GmmMapping& mapping,
                            const ComponentLayout& layout, int num_basis) {
  const int n = data.num_channels();
  const std::size_t voxels = data.shape().voxels();
  LikelihoodParams theta = LikelihoodParams::zeros(layout, n, num_basis);

  // Global per-channel moments.
  Eigen::VectorXd gmean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd gstd = Eigen::VectorXd::Zero(n);
  for (int c = 0; c < n; ++c) {
    const auto& v = data.channel(c).values;
    double s = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) s += v[i];
    gmean[c] = s / voxels;
    double s2 = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) {
      const double d = v[i] - gmean[c];
      s2 += d * d;
    }
    gstd[c] = std::sqrt(std::max(s2 / voxels, 1e-8));
  }

  // Brain-probability-weighted means (used for tumor CT entries).
  Eigen::VectorXd brain_mean = Eigen::VectorXd::Zero(n);
  {
    double wsum = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) {
      const double w = atlas.brain_prob(i);
      wsum += w;
      for (int c = 0; c < n; ++c) {
        brain_mean[c] += w * data.channel(c).values[i];
      }
    }
    brain_mean /= std::max(wsum, 1e-12);
  }

  // Normal classes: atlas-weighted moments, means spread across components.
  for (int x = 0; x < kNumGmms; ++x) {
    if (x == kGmmCore || x == kGmmEdema) continue;
    const auto& members = mapping.normal_labels(x);
    double wsum = 0.0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < voxels; ++i) {
      double w = 0.0;
      for (int l : members) w += atlas.prob(i, l);
      if (w <= 0.0) continue;
      wsum += w;
      for (int c = 0; c < n; ++c) mean[c] += w * data.channel(c).values[i];
    }
    if (wsum > 1e-12) {
      mean /= wsum;
    } else {
      mean = gmean;
    }
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
    if (wsum > 1e-12) {
      Eigen::VectorXd d(n);
      for (std::size_t i = 0; i < voxels; ++i) {
        double w = 0.0;
        for (int l : members) w += atlas.prob(i, l);
        if (w <= 0.0) continue;
        for (int c = 0; c < n; ++c) d[c] = data.channel(c).values[i] - mean[c];
        cov += w * (d * d.transpose());
      }
      cov /= wsum;
    } else {
      cov = gstd.array().square().matrix().asDiagonal();
    }
    cov.diagonal() = cov.diagonal().cwiseMax(1e-8);

    const int gx = layout.counts[x];
    const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
    for (int g = 0; g < gx; ++g) {
      const int comp = layout.global(x, g);
      const double delta =
          gx == 1 ? 0.0 : -0.5 + static_cast<double>(g) / (gx - 1);
      theta.means[comp] = mean + delta * sd;
      theta.covariances[comp] = cov;
    }
  }

  // Tumor classes: global mean + table distance * global std per channel.
  for (int c = 0; c < n; ++c) {
    const Modality m = data.channel(c).modality;
    double core_mean, edema_mean;
    TumorMeanDistances dist;
    if (m == Modality::Ct) {
      core_mean = brain_mean[c];
      edema_mean = brain_mean[c];
    } else if (tumor_init_distance(m, &dist)) {
      core_mean = gmean[c] + dist.core * gstd[c];
      edema_mean = gmean[c] + dist.edema * gstd[c];
    } else {
      throw std::invalid_argument(
          "init_theta: no tumor-mean initialization for channel tag '" +
          data.channel(c).tag + "'");
    }
    for (int g = 0; g < layout.counts[kGmmCore]; ++g) {
      theta.means[layout.global(kGmmCore, g)][c] = core_mean;
    }
    theta.means[layout.global(kGmmEdema, 0)][c] = edema_mean;
  }
  const Eigen::MatrixXd tumor_cov =
      gstd.array().square().matrix().asDiagonal();
  for (int g = 0; g < layout.counts[kGmmCore]; ++g) {
    theta.covariances[layout.global(kGmmCore, g)] = tumor_cov;
  }
  theta.covariances[layout.global(kGmmEdema, 0)] = tumor_cov;
  return theta;
}

Eigen::MatrixXd responsibilities(const MultiChannelImage& data,
                                 const AtlasPrior& atlas,
                                 const GmmMapping& mapping,
                                 const LikelihoodParams& theta,
                                 const BiasBasis* basis,
                                 const SimplifiedPriorConfig& cfg) {
  const SimplifiedClassWeights weights(atlas, mapping, cfg);
  const LikelihoodEvaluator eval(data, basis, theta);
  Eigen::MatrixXd resp(data.shape().voxels(), theta.layout.total);
  estep_moments(data, weights, eval, theta, &resp);
  return resp;
}

namespace {

/// Builds the per-voxel weight fields w^{mn} and the linear-term fields
/// q^m = sum_c t_ic Lambda_c (d_i - mu_c) from streamed responsibilities.
void bias_fields(const MultiChannelImage& data,
                 const SimplifiedClassWeights& weights,
                 const LikelihoodEvaluator& eval,
                 const LikelihoodParams& theta,
                 std::vector<std::vector<double>>& wfields,
                 std::vector<std::vector<double>>& qfields) {
  const int n = theta.num_channels;
  const int total = theta.layout.total;
  const std::size_t voxels = data.shape().voxels();
  wfields.assign(n * n, std::vector<double>(voxels, 0.0));
  qfields.assign(n, std::vector<double>(voxels, 0.0));

  std::vector<Eigen::MatrixXd> lambda(total);
  for (int c = 0; c < total; ++c) {
    lambda[c] = theta.covariances[c].llt().solve(
        Eigen::MatrixXd::Identity(n, n));
  }
  // d (not bias-corrected): the linear system solves for C directly.
  std::vector<const double*> chan(n);
  for (int c = 0; c < n; ++c) chan[c] = data.channel(c).values.data().data();

  parallel_chunks(voxels, kGrain, [&](std::size_t, std::size_t b,
                                      std::size_t e) {
    double logterm[64];
    Eigen::VectorXd diff(n), contrib(n);
    for (std::size_t i = b; i < e; ++i) {
      const double* logw = weights.log_weights(i);
      double best = kNegInf;
      int idx = 0;
      for (int x = 0; x < kNumGmms; ++x) {
        const int gx = theta.layout.counts[x];
        if (logw[x] <= kNegInf) {
          for (int g = 0; g < gx; ++g) logterm[idx++] = kNegInf;
          continue;
        }
        eval.component_log_terms(i, x, logterm + idx);
        for (int g = 0; g < gx; ++g) {
          logterm[idx] += logw[x];
          best = std::max(best, logterm[idx]);
          ++idx;
        }
      }
      double z = 0.0;
      for (int c = 0; c < total; ++c) {
        logterm[c] = (logterm[c] <= kNegInf) ? 0.0
                                             : std::exp(logterm[c] - best);
        z += logterm[c];
      }
      const double inv_z = 1.0 / z;
      for (int c = 0; c < total; ++c) {
        const double t = logterm[c] * inv_z;
        if (t <= 1e-15) continue;
        const Eigen::MatrixXd& lam = lambda[c];
        for (int ch = 0; ch < n; ++ch) {
          diff[ch] = chan[ch][i] - theta.means[c][ch];
        }
        contrib = lam * diff;
        for (int m = 0; m < n; ++m) {
          qfields[m][i] += t * contrib[m];
          for (int nn = 0; nn < n; ++nn) {
            wfields[m * n + nn][i] += t * lam(m, nn);
          }
        }
      }
    }
  });
}

}  // namespace

double gem_step(GemState& state, const MultiChannelImage& data,
                const AtlasPrior& atlas, const GmmMapping& mapping,
                const HyperPriors& hyper, const BiasBasis* basis,
                const SimplifiedPriorConfig& cfg, bool tie_core) {
  LikelihoodParams& theta = state.theta;
  const int n = theta.num_channels;
  const int total = theta.layout.total;
  const SimplifiedClassWeights weights(atlas, mapping, cfg);
  const LikelihoodEvaluator eval(data, basis, theta);

  MomentStats st = estep_moments(data, weights, eval, theta, nullptr);
  const double log_post =
      st.log_likelihood + log_prior_theta(theta, hyper);
  state.trace.push_back(log_post);

  // --- gamma: Dirichlet mode.
  for (int x = 0; x < kNumGmms; ++x) {
    const int gx = theta.layout.counts[x];
    double denom = 0.0;
    for (int g = 0; g < gx; ++g) {
      denom += hyper.alpha0 + st.mass[theta.layout.global(x, g)] - 1.0;
    }
    for (int g = 0; g < gx; ++g) {
      theta.weights[x][g] =
          (hyper.alpha0 + st.mass[theta.layout.global(x, g)] - 1.0) / denom;
    }
  }

  // --- mu: constrained mode via QP on (possibly tied) blocks.
  std::vector<int> comp_block(total);
  int nblocks = 0;
  for (int x = 0; x < kNumGmms; ++x) {
    const int gx = theta.layout.counts[x];
    if (tie_core && x == kGmmCore) {
      for (int g = 0; g < gx; ++g) {
        comp_block[theta.layout.global(x, g)] = nblocks;
      }
      ++nblocks;
    } else {
      for (int g = 0; g < gx; ++g) {
        comp_block[theta.layout.global(x, g)] = nblocks++;
      }
    }
  }
  Eigen::VectorXd block_mass = Eigen::VectorXd::Zero(nblocks);
  std::vector<Eigen::VectorXd> block_first(nblocks, Eigen::VectorXd::Zero(n));
  std::vector<int> block_rep(nblocks, -1);
  for (int c = 0; c < total; ++c) {
    const int blk = comp_block[c];
    block_mass[blk] += st.mass[c];
    block_first[blk] += st.first[c];
    block_rep[blk] = c;
  }
  // Blocks with essentially no responsibility mass hold their current mean;
  // they still enter the constraint rows of the others as constants.
  std::vector<int> active_of(nblocks, -1);
  std::vector<int> active_blocks;
  for (int blk = 0; blk < nblocks; ++blk) {
    if (block_mass[blk] > 1e-8) {
      active_of[blk] = static_cast<int>(active_blocks.size());
      active_blocks.push_back(blk);
    }
  }
  const int nact = static_cast<int>(active_blocks.size());
  if (nact > 0) {
    Eigen::VectorXd m_mu(nact * n);
    Eigen::MatrixXd s_mu = Eigen::MatrixXd::Zero(nact * n, nact * n);
    for (int k = 0; k < nact; ++k) {
      const int blk = active_blocks[k];
      m_mu.segment(k * n, n) = block_first[blk] / block_mass[blk];
      s_mu.block(k * n, k * n, n, n) =
          theta.covariances[block_rep[blk]] / block_mass[blk];
    }
    const int rows = hyper.constraints.rows();
    Eigen::MatrixXd a_red = Eigen::MatrixXd::Zero(rows, nact * n);
    Eigen::VectorXd b_red(rows);
    std::vector<bool> keep(rows, false);
    for (int r = 0; r < rows; ++r) {
      b_red[r] = hyper.constraints.b[r];
      for (int c = 0; c < total; ++c) {
        for (int ch = 0; ch < n; ++ch) {
          const double v = hyper.constraints.a(r, c * n + ch);
          if (v == 0.0) continue;
          const int blk = comp_block[c];
          if (active_of[blk] >= 0) {
            a_red(r, active_of[blk] * n + ch) += v;
            keep[r] = true;
          } else {
            b_red[r] -= v * theta.means[block_rep[blk]][ch];
          }
        }
      }
    }
    int nkeep = 0;
    for (int r = 0; r < rows; ++r) nkeep += keep[r];
    Eigen::MatrixXd a_kept(nkeep, nact * n);
    Eigen::VectorXd b_kept(nkeep);
    for (int r = 0, k = 0; r < rows; ++r) {
      if (keep[r]) {
        a_kept.row(k) = a_red.row(r);
        b_kept[k] = b_red[r];
        ++k;
      }
    }
    const Eigen::VectorXd mu_sol =
        solve_constrained_means(m_mu, s_mu, a_kept, b_kept);
    for (int c = 0; c < total; ++c) {
      const int act = active_of[comp_block[c]];
      if (act >= 0) theta.means[c] = mu_sol.segment(act * n, n);
    }
  }

  // --- Sigma: inverse-Wishart mode around the updated means.
  for (int x = 0; x < kNumGmms; ++x) {
    const int gx = theta.layout.counts[x];
    if (tie_core && x == kGmmCore) {
      double mass = 0.0;
      Eigen::VectorXd first = Eigen::VectorXd::Zero(n);
      Eigen::MatrixXd second = Eigen::MatrixXd::Zero(n, n);
      for (int g = 0; g < gx; ++g) {
        const int c = theta.layout.global(x, g);
        mass += st.mass[c];
        first += st.first[c];
        second += st.second[c];
      }
      const Eigen::VectorXd& mu = theta.means[theta.layout.global(x, 0)];
      Eigen::MatrixXd scatter = hyper.scatter0[x] + second -
                                first * mu.transpose() -
                                mu * first.transpose() +
                                mass * (mu * mu.transpose());
      const double dof = hyper.strength0[x] + mass;
      const Eigen::MatrixXd cov = scatter / (dof + n + 1.0);
      for (int g = 0; g < gx; ++g) {
        theta.covariances[theta.layout.global(x, g)] = cov;
      }
    } else {
      for (int g = 0; g < gx; ++g) {
        const int c = theta.layout.global(x, g);
        const Eigen::VectorXd& mu = theta.means[c];
        Eigen::MatrixXd scatter = hyper.scatter0[x] + st.second[c] -
                                  st.first[c] * mu.transpose() -
                                  mu * st.first[c].transpose() +
                                  st.mass[c] * (mu * mu.transpose());
        const double dof = hyper.strength0[x] + st.mass[c];
        theta.covariances[c] = scatter / (dof + n + 1.0);
      }
    }
  }

  // --- bias coefficients: mode of the Gaussian conditional.
  if (basis && theta.bias_coeffs.cols() > 0) {
    const LikelihoodEvaluator eval2(data, basis, theta);
    std::vector<std::vector<double>> wfields, qfields;
    bias_fields(data, weights, eval2, theta, wfields, qfields);
    solve_bias_coefficients(data, *basis, wfields, qfields,
                            theta.bias_coeffs, nullptr);
  }
  return log_post;
}

JointLabelState map_initial_state(const MultiChannelImage& data,
                                  const AtlasPrior& atlas,
                                  const GmmMapping& mapping,
                                  const LikelihoodParams& theta,
                                  const BiasBasis* basis,
                                  const SimplifiedPriorConfig& cfg,
                                  double flip_fraction, std::uint64_t seed) {
  const auto [az, ay] = simplified_biases(cfg);
  const LikelihoodEvaluator eval(data, basis, theta);
  const std::size_t voxels = data.shape().voxels();
  const std::uint32_t brain = atlas.brain_mask();

  Volume<std::uint8_t> labels(data.shape());
  BinaryMap zmap(data.shape());
  BinaryMap ymap(data.shape());

  std::array<int, kNumLabels> label_gmm;
  for (int l = 0; l < kNumLabels; ++l) {
    label_gmm[l] = mapping.map(l, false, false);
  }

  parallel_chunks(voxels, kGrain, [&](std::size_t, std::size_t b,
                                      std::size_t e) {
    double loglik[kNumGmms];
    for (std::size_t i = b; i < e; ++i) {
      for (int x = 0; x < kNumGmms; ++x) loglik[x] = eval.log_gmm(i, x);
      const double* pi = atlas.row(i);
      double best = kNegInf;
      int bl = 0;
      bool bz = false, by = false;
      // lexicographic (l, z, y) order; strict improvement keeps the lowest
      for (int l = 0; l < kNumLabels; ++l) {
        if (pi[l] <= 0.0) continue;
        const double logpi = std::log(pi[l]);
        double score = logpi + loglik[label_gmm[l]];
        if (score > best) {
          best = score;
          bl = l;
          bz = false;
          by = false;
        }
        if ((brain >> l) & 1u) {
          score = logpi + az + loglik[kGmmEdema];
          if (score > best) {
            best = score;
            bl = l;
            bz = true;
            by = false;
          }
          score = logpi + az + ay + loglik[kGmmCore];
          if (score > best) {
            best = score;
            bl = l;
            bz = true;
            by = true;
          }
        }
      }
      labels[i] = static_cast<std::uint8_t>(bl);
      zmap.set(i, bz);
      ymap.set(i, by);
    }
  });

  // Edema-to-core flip: an unbiased random fifth (flip_fraction) of the
  // edema voxels becomes core.
  std::vector<std::size_t> edema;
  for (std::size_t i = 0; i < voxels; ++i) {
    if (zmap.get(i) && !ymap.get(i)) edema.push_back(i);
  }
  const std::size_t flips = static_cast<std::size_t>(
      std::llround(flip_fraction * static_cast<double>(edema.size())));
  Rng rng(seed, RngPurpose::EdemaFlip, 0, 0);
  for (std::size_t k = 0; k < flips; ++k) {
    const std::size_t j = k + rng.below(edema.size() - k);
    std::swap(edema[k], edema[j]);
    ymap.set(edema[k], true);
  }

  return JointLabelState(std::move(labels), std::move(zmap), std::move(ymap),
                         brain);
}

GemResult run_gem(const MultiChannelImage& data, const AtlasPrior& atlas,
                  const GmmMapping& mapping, const HyperPriors& hyper,
                  const BiasBasis* basis, const SimplifiedPriorConfig& prior,
                  const GemConfig& cfg) {
  GemResult result;
  GemState state;
  state.theta = init_theta(data, atlas, mapping,
                           ComponentLayout::from(mapping),
                           basis ? basis->count() : 0);

  // Project the initial means onto the constraint set so the prior is
  // finite from the first evaluation.
  if (hyper.constraints.rows() > 0) {
    const Eigen::VectorXd mu0 = state.theta.stacked_means();
    if (!hyper.constraints.feasible(mu0)) {
      const int n = state.theta.num_channels;
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(mu0.size(), mu0.size());
      for (int c = 0; c < state.theta.layout.total; ++c) {
        s.block(c * n, c * n, n, n) = state.theta.covariances[c];
      }
      state.theta.set_stacked_means(solve_constrained_means(
          mu0, s, hyper.constraints.a, hyper.constraints.b));
    }
  }

  int iterations = 0;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    const double lp = gem_step(state, data, atlas, mapping, hyper, basis,
                               prior, cfg.tie_core);
    iterations = iter;
    if (iter >= 2) {
      const double prev = state.trace[state.trace.size() - 2];
      const double rel = std::fabs(lp - prev) / std::max(1.0, std::fabs(lp));
      if (rel < cfg.rel_tol) {
        iterations = iter - 1;
        break;
      }
    }
  }

  result.theta = state.theta;
  result.trace = state.trace;
  result.iterations = iterations;
  result.initial_state =
      map_initial_state(data, atlas, mapping, state.theta, basis, prior,
                        cfg.flip_fraction, cfg.seed);
  return result;
}

}  // namespace bayeseg
