#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bayeseg/rng.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

struct CrbmConfig {
  int num_filters = 40;
  int filter_size = 14;   // r, per axis
  int block_size = 2;     // parameter-tying block, per axis
  int steps = 9600;
  double step_size = 0.1;
  int minibatch = 10;
  double init_sigma = 0.01;
  std::uint64_t seed = 0;
};

/// Binary convolutional RBM over one 3D map: M block-tied filters, per-group
/// hidden biases and a scalar visible bias. Valid convolution only, so a map
/// of extent I yields hidden groups of extent I - r + 1 per axis. Filters
/// are cubic in production use; the per-axis constructor exists for
/// degenerate (e.g. 1D) instances.
class CrbmParams {
 public:
  CrbmParams() = default;
  CrbmParams(int num_filters, int filter_size, int block_size);
  CrbmParams(int num_filters, std::array<int, 3> filter_extent,
             std::array<int, 3> block_extent);

  static CrbmParams random_init(const CrbmConfig& cfg);

  int num_filters() const { return num_filters_; }
  const std::array<int, 3>& filter_extent() const { return filter_; }
  const std::array<int, 3>& block_extent() const { return block_; }
  int filter_voxels() const { return filter_[0] * filter_[1] * filter_[2]; }

  /// x-fastest within the filter: index = (tz*fy + ty)*fx + tx.
  int filter_index(int tx, int ty, int tz) const {
    return (tz * filter_[1] + ty) * filter_[0] + tx;
  }

  double* filter(int m) { return filters_.data() + m * filter_voxels(); }
  const double* filter(int m) const {
    return filters_.data() + m * filter_voxels();
  }
  std::vector<double>& filters() { return filters_; }
  const std::vector<double>& filters() const { return filters_; }

  double hidden_bias(int m) const { return hidden_bias_[m]; }
  void set_hidden_bias(int m, double b) { hidden_bias_[m] = b; }
  double visible_bias() const { return visible_bias_; }
  void set_visible_bias(double a) { visible_bias_ = a; }

  GridShape hidden_shape(const GridShape& image) const;

  /// True when every tying block holds a single value.
  bool tying_consistent(double tol = 0.0) const;

  bool operator==(const CrbmParams& o) const {
    return num_filters_ == o.num_filters_ && filter_ == o.filter_ &&
           block_ == o.block_ && filters_ == o.filters_ &&
           hidden_bias_ == o.hidden_bias_ && visible_bias_ == o.visible_bias_;
  }

 private:
  int num_filters_ = 0;
  std::array<int, 3> filter_{1, 1, 1};
  std::array<int, 3> block_{1, 1, 1};
  std::vector<double> filters_;  // M * filter_voxels, x-fastest per filter
  std::vector<double> hidden_bias_;
  double visible_bias_ = 0.0;
};

struct HiddenState {
  GridShape shape;  // per-group extent
  std::vector<BinaryMap> groups;
};

struct CrbmGradient {
  std::vector<double> filters;
  std::vector<double> hidden_bias;
  double visible_bias = 0.0;
};

/// Pre-activation of every hidden unit: (w_m * v)_j + b_m.
std::vector<Volume<double>> hidden_preactivation(const CrbmParams& params,
                                                 const BinaryMap& v);
std::vector<Volume<double>> hidden_preactivation_real(
    const CrbmParams& params, const GridShape& image,
    const std::vector<double>& v);

/// Pre-activation of every visible unit: sum_m (mirrored w_m * h_m)_i + a.
/// The mirrored correlation is the exact adjoint of the forward pass.
Volume<double> visible_preactivation(const CrbmParams& params,
                                     const GridShape& image,
                                     const HiddenState& hidden);
Volume<double> visible_preactivation_real(
    const CrbmParams& params, const GridShape& image,
    const std::vector<std::vector<double>>& hidden);

double energy(const CrbmParams& params, const BinaryMap& v,
              const HiddenState& hidden);

/// -log sum_H exp(-energy(v,H)); equals
/// -sum_{m,j} softplus(pre_mj) - a sum_i v_i exactly.
double free_energy(const CrbmParams& params, const BinaryMap& v);

/// Bernoulli probabilities sigma(pre) for every hidden unit.
std::vector<Volume<double>> hidden_activation(const CrbmParams& params,
                                              const BinaryMap& v);

HiddenState sample_hidden(const CrbmParams& params, const BinaryMap& v,
                          std::uint64_t seed, RngPurpose purpose,
                          std::uint64_t sweep);

BinaryMap sample_visible(const CrbmParams& params, const GridShape& image,
                         const HiddenState& hidden, std::uint64_t seed,
                         RngPurpose purpose, std::uint64_t sweep);

/// One-step contrastive divergence gradient of the mean log-likelihood over
/// the minibatch, with the centered (enhanced) reparameterization and
/// gradient entries averaged within each tying block. Hidden statistics use
/// probabilities, the intermediate visible reconstruction uses
/// probabilities, and the single Gibbs step samples hidden states.
CrbmGradient cd1_gradient(const CrbmParams& params,
                          const std::vector<const BinaryMap*>& minibatch,
                          std::uint64_t seed, std::uint64_t step);

struct TrainLogEntry {
  int step;
  double heldout_free_energy;
  double batch_free_energy;
};

/// Stochastic gradient ascent with CD-1; deterministic given (corpus order,
/// config, seed).
CrbmParams train_crbm(const std::vector<BinaryMap>& corpus,
                      const CrbmConfig& cfg,
                      const BinaryMap* heldout = nullptr,
                      std::vector<TrainLogEntry>* log = nullptr);

/// Binary checkpoint: magic + JSON metadata + little-endian float64 payload.
void save_crbm(const std::string& path, const CrbmParams& params,
               const CrbmConfig& cfg);
CrbmParams load_crbm(const std::string& path, CrbmConfig* cfg_out = nullptr);

}  // namespace bayeseg
