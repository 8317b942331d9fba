#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bayeseg/atlas.hpp"
#include "bayeseg/dct_basis.hpp"
#include "bayeseg/likelihood.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

/// Simplified tumor prior: cRBM filters zeroed, visible biases set so a
/// fraction w of brain voxels is expected tumorous and a fraction u of those
/// is core.
struct SimplifiedPriorConfig {
  double tumor_fraction = 0.1;  // w
  double core_fraction = 0.5;   // u
};

/// (a_z, a_y) = (log((w - w u)/(1 - w)), log(u/(1 - u))). Fractions closer
/// than 1e-6 to 0 or 1 are rejected.
std::pair<double, double> simplified_biases(const SimplifiedPriorConfig& cfg);

/// Per-voxel class weights p_i(x) of the simplified model, one vector of
/// kNumGmms log-weights per voxel (normalized over classes).
class SimplifiedClassWeights {
 public:
  SimplifiedClassWeights(const AtlasPrior& atlas, const GmmMapping& mapping,
                         const SimplifiedPriorConfig& cfg);

  const double* log_weights(std::size_t voxel) const {
    return logw_.data() + voxel * kNumGmms;
  }
  double az() const { return az_; }
  double ay() const { return ay_; }

 private:
  std::vector<double> logw_;
  double az_ = 0.0, ay_ = 0.0;
};

struct TumorMeanDistances {
  double core;
  double edema;
};

/// Distance (in global standard deviations above the global channel mean)
/// used to initialize the tumor means, keyed by borrowed modality settings.
/// CT has no entry: its tumor means are initialized like normal labels.
bool tumor_init_distance(Modality m, TumorMeanDistances* out);

/// theta_0: normal-class parameters from atlas-weighted data moments, tumor
/// means from the distance table, C = 0.
LikelihoodParams init_theta(const MultiChannelImage& data,
                            const AtlasPrior& atlas, const GmmMapping& mapping,
                            const ComponentLayout& layout, int num_basis);

/// Posterior responsibilities t_i^{xg} under the simplified prior, one row
/// per voxel in component-layout order (test/diagnostic path; the GEM loop
/// streams them).
Eigen::MatrixXd responsibilities(const MultiChannelImage& data,
                                 const AtlasPrior& atlas,
                                 const GmmMapping& mapping,
                                 const LikelihoodParams& theta,
                                 const BiasBasis* basis,
                                 const SimplifiedPriorConfig& cfg);

struct GemState {
  LikelihoodParams theta;
  std::vector<double> trace;  // log posterior at the start of each step
};

/// One GEM sweep: E-step, then mode updates of gamma, mu (constrained QP),
/// Sigma, and the bias coefficients. Returns the log posterior evaluated at
/// entry and appends it to the trace. tie_core forces the core components to
/// share parameters (pooled statistics).
double gem_step(GemState& state, const MultiChannelImage& data,
                const AtlasPrior& atlas, const GmmMapping& mapping,
                const HyperPriors& hyper, const BiasBasis* basis,
                const SimplifiedPriorConfig& cfg, bool tie_core);

struct GemConfig {
  int max_iter = 100;
  double rel_tol = 1e-6;
  double flip_fraction = 0.2;
  std::uint64_t seed = 0;
  bool tie_core = true;
};

/// MAP segmentation under the simplified prior, lexicographic (l,z,y)
/// tie-break, then the seeded edema-to-core flip of a fifth of the edema
/// voxels.
JointLabelState map_initial_state(const MultiChannelImage& data,
                                  const AtlasPrior& atlas,
                                  const GmmMapping& mapping,
                                  const LikelihoodParams& theta,
                                  const BiasBasis* basis,
                                  const SimplifiedPriorConfig& cfg,
                                  double flip_fraction, std::uint64_t seed);

struct GemResult {
  LikelihoodParams theta;
  JointLabelState initial_state;
  std::vector<double> trace;
  int iterations = 0;
};

/// Algorithm: init_theta, feasibility projection, GEM loop with tied core
/// components until the relative log-posterior change drops below rel_tol
/// (or max_iter), tie released on exit, then the MAP initial state.
GemResult run_gem(const MultiChannelImage& data, const AtlasPrior& atlas,
                  const GmmMapping& mapping, const HyperPriors& hyper,
                  const BiasBasis* basis, const SimplifiedPriorConfig& prior,
                  const GemConfig& cfg);

}  // namespace bayeseg
