#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bayeseg/atlas.hpp"
#include "bayeseg/crbm.hpp"
#include "bayeseg/dct_basis.hpp"
#include "bayeseg/gem.hpp"
#include "bayeseg/likelihood.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

struct ChainConfig {
  int burn_in = 200;
  int samples = 50;
  std::uint64_t seed = 0;
  int trunc_sweeps = 1;  // truncated-MVN Gibbs sweeps per theta sweep
};

struct SampleAccumulator {
  GridShape shape;
  int count = 0;
  std::vector<std::uint32_t> label_votes;  // I * kNumLabels
  std::vector<std::uint32_t> tumor_votes;  // I
  std::vector<std::uint32_t> core_votes;   // I

  SampleAccumulator() = default;
  explicit SampleAccumulator(GridShape s);
  void add(const JointLabelState& state);
};

/// Inverse-CDF draw from N(mean, sd^2) truncated to [lo, hi]; bounds may be
/// infinite. Stable in far tails (complementary-CDF form via reflection).
double truncated_normal_sample(double mean, double sd, double lo, double hi,
                               Rng& rng);

/// Coordinate-wise Gibbs sweeps over N(m, S) restricted to {A mu <= b},
/// sampling each univariate conditional by inverse transform. prev must be
/// feasible. frozen coordinates (if given) are held fixed but still enter
/// the constraint bounds of the others.
Eigen::VectorXd sample_truncated_mvn(const Eigen::VectorXd& m,
                                     const Eigen::MatrixXd& s,
                                     const Eigen::MatrixXd& a,
                                     const Eigen::VectorXd& b,
                                     const Eigen::VectorXd& prev, Rng& rng,
                                     int sweeps = 1,
                                     const std::vector<bool>* frozen = nullptr);

Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& alpha, Rng& rng);

/// Bartlett-style draw: Sigma^-1 ~ Wishart(dof, scale^-1).
Eigen::MatrixXd sample_inverse_wishart(double dof,
                                       const Eigen::MatrixXd& scale, Rng& rng);

/// One partially-collapsed sweep over (t, gamma, mu, Sigma, C) given the
/// current labels. Components with no assigned voxels get prior-only draws
/// (gamma, Sigma) and keep their current mean.
LikelihoodParams sample_theta(const MultiChannelImage& data,
                              const JointLabelState& state,
                              const LikelihoodParams& prev,
                              const HyperPriors& hyper,
                              const GmmMapping& mapping,
                              const BiasBasis* basis, std::uint64_t seed,
                              std::uint64_t sweep, int trunc_sweeps = 1);

/// Per-voxel categorical draw over the allowed (l, z, y) triples given the
/// tumor/core visible pre-activation fields (cRBM adjoint + bias, or the
/// MRF neighbor terms). Log-space normalization. Optionally accumulates
/// sum_i [log pi_i(l_i) + log p_i(d_i | x_i)] of the drawn labels.
JointLabelState sample_labels_fields(
    const MultiChannelImage& data, const AtlasPrior& atlas,
    const GmmMapping& mapping, const LikelihoodParams& theta,
    const BiasBasis* basis, const std::vector<double>& tumor_field,
    const std::vector<double>& core_field, std::uint64_t seed,
    std::uint64_t sweep, double* surrogate = nullptr);

/// Full label conditional: the fields are computed from the hidden states.
JointLabelState sample_labels(const MultiChannelImage& data,
                              const AtlasPrior& atlas,
                              const GmmMapping& mapping,
                              const LikelihoodParams& theta,
                              const BiasBasis* basis,
                              const CrbmParams& crbm_z, const HiddenState& hz,
                              const CrbmParams& crbm_y, const HiddenState& hy,
                              std::uint64_t seed, std::uint64_t sweep);

struct MrfConfig {
  double beta_z = 4.0;
  double beta_y = 1.0;
};

/// Tumor shape prior used by the chain: the two trained cRBMs, or the
/// first-order pairwise MRF baseline.
struct TumorPrior {
  enum class Kind { Crbm, Mrf };
  Kind kind = Kind::Crbm;
  const CrbmParams* crbm_z = nullptr;
  const CrbmParams* crbm_y = nullptr;
  MrfConfig mrf;

  static TumorPrior crbm(const CrbmParams& z, const CrbmParams& y) {
    TumorPrior p;
    p.kind = Kind::Crbm;
    p.crbm_z = &z;
    p.crbm_y = &y;
    return p;
  }
  static TumorPrior first_order_mrf(MrfConfig cfg) {
    TumorPrior p;
    p.kind = Kind::Mrf;
    p.mrf = cfg;
    return p;
  }
};

struct ChainDiagRow {
  int sweep = 0;
  double surrogate = 0.0;  // sum_i [log pi_i(l_i) + log p_i(d_i|x_i)]
  std::array<std::size_t, kNumLabels> label_counts{};
  std::size_t tumor_count = 0;
  std::size_t core_count = 0;
};

struct ChainResult {
  JointLabelState final_state;
  SampleAccumulator accumulator;
  LikelihoodParams theta_last;
  std::vector<ChainDiagRow> diagnostics;
  /// Posterior-mean bias field per channel over the accumulated sweeps
  /// (empty when no basis was supplied).
  std::vector<std::vector<double>> mean_bias;
};

/// Blocked Gibbs sampler: per sweep a theta sweep, hidden-unit draws (cRBM
/// prior only), then the label draw; the last `samples` states are
/// accumulated and majority-voted. The restriction is asserted on every
/// sweep.
ChainResult run_chain(const MultiChannelImage& data, const AtlasPrior& atlas,
                      const GmmMapping& mapping, const HyperPriors& hyper,
                      const BiasBasis* basis, const TumorPrior& prior,
                      const LikelihoodParams& theta0,
                      const JointLabelState& state0, const ChainConfig& cfg);

/// Per-variable majority vote (ties toward the lower code), then the
/// restriction repair: y=1 without z becomes y=0, z=1 on a non-brain label
/// becomes z=0.
JointLabelState majority_vote(const SampleAccumulator& acc,
                              std::uint32_t brain_mask);

}  // namespace bayeseg
