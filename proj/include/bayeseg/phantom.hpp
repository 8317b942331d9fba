#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bayeseg/atlas.hpp"
#include "bayeseg/crbm.hpp"
#include "bayeseg/likelihood.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

/// Synthetic desk-scale dataset drawn from the model itself: labels from a
/// geometric atlas, planted tumor/core masks (parametric blobs or draws from
/// a smoothing cRBM), intensities from the ground-truth GMMs plus a smooth
/// planted bias field.
struct PhantomSpec {
  GridShape shape{64, 64, 64};
  Spacing spacing{1.0, 1.0, 1.0};
  std::uint64_t seed = 1;
  std::vector<std::string> channel_tags{"FLAIR", "T1c", "T2"};
  double noise_scale = 1.0;       // scales the per-class std dev (0.08)
  double mean_separation = 3.0;   // class-mean gap in pooled std devs
  double bias_amplitude = 0.1;    // planted bias range (log units)
  int bias_per_axis = 2;          // planted-bias DCT frequencies per axis
  double tumor_radius_frac = 0.35;  // of brain radius
  double core_radius_frac = 0.55;   // of tumor radius
  int tumor_lobes = 3;
  bool crbm_shapes = false;       // texture the masks with a smoothing cRBM
  double atlas_sharpness = 0.95;  // atlas mass on the layout label
};

struct Phantom {
  PhantomSpec spec;
  MultiChannelImage image;  // log-intensity channels
  JointLabelState truth;
  AtlasPrior atlas;
  LikelihoodParams theta_truth;
  std::vector<std::vector<double>> bias_truth;  // per channel, I values
};

Phantom generate_phantom(const PhantomSpec& spec);

PhantomSpec phantom_spec_from_json(const std::string& json_text);
std::string phantom_spec_to_json(const PhantomSpec& spec);

/// Writes the bundle: channel volumes, truth l/z/y, atlas directory, planted
/// bias fields, ground-truth theta and the spec echo.
void save_phantom(const Phantom& phantom, const std::string& dir);

struct PhantomBundle {
  MultiChannelImage image;
  JointLabelState truth;
  std::string atlas_manifest;
  PhantomSpec spec;
  std::vector<std::vector<double>> bias_truth;
};

PhantomBundle load_phantom(const std::string& dir);

/// Gibbs draw of a textured mask from a hand-set smoothing cRBM, started at
/// `init`; used for the cRBM-structured phantom shapes.
BinaryMap sample_crbm_mask(const CrbmParams& params, const BinaryMap& init,
                           int sweeps, std::uint64_t seed);

/// The fixed smoothing cRBM used by crbm_shapes mode.
CrbmParams smoothing_crbm(double strength = 0.2, double bias = -5.0);

}  // namespace bayeseg
