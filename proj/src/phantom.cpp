#include "bayeseg/phantom.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bayeseg/dct_basis.hpp"
#include "bayeseg/gem.hpp"
#include "bayeseg/errors.hpp"
#include "bayeseg/nifti.hpp"
#include "bayeseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bayeseg {

namespace {

constexpr double kBaseLevel = 2.0;
constexpr double kBaseSd = 0.08;

// Class levels in separation units, per modality. Chosen so the Table-4
// style mean constraints hold with margin and the main confusable classes
// are at least one unit apart on some channel.
const double* level_table(Modality m) {
  // order: core, edema, GGM, GWM, GNE, eyefluid, CSF, background,
  //        unspecified, chiasm, fat, muscles
  static const double flair[kNumGmms] = {3.0, 1.8, 0.0, -0.7, -1.5, -2.2,
                                         -2.8, -5.0, -3.4, -1.9, 1.0, 0.5};
  static const double t1c[kNumGmms] = {2.6, -0.4, 0.0, 0.6, -1.0, -2.4,
                                       -2.0, -5.0, -2.8, -1.2, 1.2, 0.8};
  static const double t2[kNumGmms] = {0.9, 2.0, 0.4, 0.0, -0.9, 2.6,
                                      3.0, -5.0, -1.6, -0.5, 0.7, 0.3};
  static const double t1[kNumGmms] = {0.5, 0.2, 0.0, 0.8, -0.6, -2.0,
                                      -2.4, -5.0, -1.8, -0.8, 1.3, 0.6};
  static const double ct[kNumGmms] = {0.6, 0.3, 0.0, 0.2, -0.3, -1.5,
                                      -1.0, -5.0, -0.8, -0.2, -2.0, 0.4};
  switch (m) {
    case Modality::Flair: return flair;
    case Modality::T1c: return t1c;
    case Modality::T1: return t1;
    case Modality::Ct: return ct;
    default: return t2;
  }
}

struct Geometry {
  double cx, cy, cz;
  double brain_r;
};

Geometry geometry(const GridShape& s) {
  Geometry g;
  g.cx = 0.5 * (s.nx - 1);
  g.cy = 0.5 * (s.ny - 1);
  g.cz = 0.5 * (s.nz - 1);
  g.brain_r = 0.42 * std::min({s.nx, s.ny, s.nz});
  return g;
}

inline double radius(const Geometry& g, int x, int y, int z) {
  const double dx = x - g.cx, dy = y - g.cy, dz = z - g.cz;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

int layout_label(const Geometry& g, int x, int y, int z) {
  const double r = radius(g, x, y, z);
  if (r > g.brain_r) return kBackground;
  if (r > g.brain_r - 2.0) return kCsf;
  if (r > g.brain_r - 5.0) return kGrayMatter;
  return kWhiteMatter;
}

BinaryMap lobed_blob(const GridShape& shape, double center[3],
                     double base_radius, int lobes, Rng& rng) {
  struct Sphere {
    double x, y, z, r;
  };
  std::vector<Sphere> spheres;
  spheres.push_back({center[0], center[1], center[2], base_radius});
  for (int k = 0; k < lobes; ++k) {
    // random direction via normalized normals
    double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
    const double norm = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-12;
    const double dist = 0.8 * base_radius;
    spheres.push_back({center[0] + dist * dx / norm,
                       center[1] + dist * dy / norm,
                       center[2] + dist * dz / norm, 0.55 * base_radius});
  }
  BinaryMap m(shape);
  for (int z = 0; z < shape.nz; ++z) {
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) {
        for (const auto& s : spheres) {
          const double dx = x - s.x, dy = y - s.y, dz = z - s.z;
          if (dx * dx + dy * dy + dz * dz <= s.r * s.r) {
            m.set(x, y, z, true);
            break;
          }
        }
      }
    }
  }
  return m;
}

}  // namespace

CrbmParams smoothing_crbm(double strength, double bias) {
  // Hidden units fire on supermajority windows, visible units need several
  // active windows; the mask keeps its scale while the boundary textures.
  const int r = 5;
  CrbmParams p(1, r, 1);
  double* f = p.filter(0);
  for (int t = 0; t < r * r * r; ++t) f[t] = strength;
  p.set_hidden_bias(0, -0.6 * strength * r * r * r);
  p.set_visible_bias(bias);
  return p;
}

BinaryMap sample_crbm_mask(const CrbmParams& params, const BinaryMap& init,
                           int sweeps, std::uint64_t seed) {
  BinaryMap v = init;
  for (int s = 0; s < sweeps; ++s) {
    const HiddenState h =
        sample_hidden(params, v, seed, RngPurpose::Phantom, 100 + 2 * s);
    v = sample_visible(params, init.shape(), h, seed, RngPurpose::Phantom,
                       101 + 2 * s);
  }
  return v;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  Phantom ph;
  ph.spec = spec;
  const GridShape& shape = spec.shape;
  const std::size_t voxels = shape.voxels();
  const Geometry geo = geometry(shape);

  // --- atlas: sharpness on the layout label, remainder on its siblings.
  AtlasPrior proto(shape, spec.spacing);
  const double s = spec.atlas_sharpness;
  for (int z = 0; z < shape.nz; ++z) {
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) {
        const std::size_t i = shape.index(x, y, z);
        const int lab = layout_label(geo, x, y, z);
        if (lab == kBackground) {
          proto.set_prob(i, kBackground, s);
          proto.set_prob(i, kEyeSocketFat, 0.5 * (1.0 - s));
          proto.set_prob(i, kEyeSocketMuscles, 0.5 * (1.0 - s));
        } else {
          const int trio[3] = {kWhiteMatter, kGrayMatter, kCsf};
          for (int t : trio) {
            proto.set_prob(i, t, t == lab ? s : 0.5 * (1.0 - s));
          }
        }
      }
    }
  }
  ph.atlas = add_unspecified_tissue(proto, 0.01);

  // --- normal labels drawn from the atlas.
  Volume<std::uint8_t> labels(shape);
  for (std::size_t i = 0; i < voxels; ++i) {
    Rng rng(spec.seed, RngPurpose::Phantom, 0, i);
    double u = rng.uniform();
    int lab = kNumLabels - 1;
    const double* pi = ph.atlas.row(i);
    for (int l = 0; l < kNumLabels; ++l) {
      u -= pi[l];
      if (u <= 0.0) {
        lab = l;
        break;
      }
    }
    labels[i] = static_cast<std::uint8_t>(lab);
  }

  // --- planted tumor and core masks inside the brain.
  Rng shape_rng(spec.seed, RngPurpose::Phantom, 1, 0);
  const double tumor_r = spec.tumor_radius_frac * geo.brain_r;
  double dir[3] = {shape_rng.normal(), shape_rng.normal(),
                   shape_rng.normal()};
  const double norm =
      std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
  const double max_offset =
      std::max(0.0, geo.brain_r - 6.0 - 1.9 * tumor_r);
  const double offset = std::min(0.35 * geo.brain_r, max_offset);
  double center[3] = {geo.cx + offset * dir[0] / norm,
                      geo.cy + offset * dir[1] / norm,
                      geo.cz + offset * dir[2] / norm};
  BinaryMap zmask =
      lobed_blob(shape, center, tumor_r, spec.tumor_lobes, shape_rng);
  const double core_r = spec.core_radius_frac * tumor_r;
  BinaryMap ymask = lobed_blob(shape, center, core_r,
                               std::max(0, spec.tumor_lobes - 2), shape_rng);
  if (spec.crbm_shapes) {
    // texture the tumor-affected outline; the core stays parametric and is
    // clipped to the textured mask below
    const CrbmParams smoother = smoothing_crbm();
    zmask = sample_crbm_mask(smoother, zmask, 3, spec.seed);
  }
  // restriction: tumor only on brain labels, core only inside tumor
  const std::uint32_t brain = ph.atlas.brain_mask();
  BinaryMap zfinal(shape), yfinal(shape);
  for (std::size_t i = 0; i < voxels; ++i) {
    const bool in_brain = (brain >> labels[i]) & 1u;
    const bool zv = zmask.get(i) && in_brain;
    zfinal.set(i, zv);
    yfinal.set(i, zv && ymask.get(i));
  }
  ph.truth = JointLabelState(std::move(labels), std::move(zfinal),
                             std::move(yfinal), brain);

  // --- ground-truth theta. Normal classes come from the level table; the
  // tumor classes are placed where the distance-based initialization will
  // look for them (global mean + distance * global std per channel, lifted
  // onto the mean-constraint floors plus a separation margin), mirroring
  // how the clinical distance table was calibrated on its training family.
  const int n = static_cast<int>(spec.channel_tags.size());
  GmmMapping mapping;
  const ComponentLayout layout = ComponentLayout::from(mapping);
  ph.theta_truth = LikelihoodParams::zeros(layout, n, 0);
  const double gap = std::max(spec.mean_separation * kBaseSd, 0.18);
  const double sd = kBaseSd * spec.noise_scale;
  std::vector<Modality> modalities(n);
  for (int c = 0; c < n; ++c) {
    modalities[c] = resolve_modality(spec.channel_tags[c]);
    if (modalities[c] == Modality::Other) {
      throw std::invalid_argument("generate_phantom: unsupported channel '" +
                                  spec.channel_tags[c] + "'");
    }
  }
  for (int x = 0; x < kNumGmms; ++x) {
    for (int g = 0; g < layout.counts[x]; ++g) {
      const int comp = layout.global(x, g);
      for (int c = 0; c < n; ++c) {
        ph.theta_truth.means[comp][c] =
            kBaseLevel + gap * level_table(modalities[c])[x];
      }
      ph.theta_truth.covariances[comp] =
          std::max(sd * sd, 1e-12) * Eigen::MatrixXd::Identity(n, n);
    }
  }
  {
    // class proportions over the generated state
    std::vector<double> prop(kNumGmms, 0.0);
    for (std::size_t i = 0; i < voxels; ++i) {
      prop[mapping.map(ph.truth.label(i), ph.truth.tumor(i),
                       ph.truth.core(i))] += 1.0;
    }
    for (double& p : prop) p /= static_cast<double>(voxels);

    const double margin =
        std::max(spec.mean_separation / 3.0, 0.5) * std::max(sd, 0.02);
    for (int pass = 0; pass < 2; ++pass) {
      for (int c = 0; c < n; ++c) {
        double mean = 0.0, second = 0.0;
        for (int x = 0; x < kNumGmms; ++x) {
          const double m = ph.theta_truth.means[layout.global(x, 0)][c];
          mean += prop[x] * m;
          second += prop[x] * (m * m + sd * sd);
        }
        const double gstd = std::sqrt(std::max(second - mean * mean, 1e-12));
        TumorMeanDistances dist;
        if (!tumor_init_distance(modalities[c], &dist)) continue;  // CT
        const double ref = std::max(
            ph.theta_truth.means[layout.global(kGmmGlobalWhite, 0)][c],
            ph.theta_truth.means[layout.global(kGmmGlobalGray, 0)][c]);
        double core_mean = mean + dist.core * gstd;
        double edema_mean = mean + dist.edema * gstd;
        if (modalities[c] == Modality::Flair) {
          edema_mean = std::max(edema_mean, ref + std::log(1.15) + margin);
          core_mean = std::max(core_mean, ref + margin);
        } else if (modalities[c] == Modality::T1c) {
          core_mean = std::max(core_mean, ref + std::log(1.10) + margin);
        }
        for (int g = 0; g < layout.counts[kGmmCore]; ++g) {
          ph.theta_truth.means[layout.global(kGmmCore, g)][c] = core_mean;
        }
        ph.theta_truth.means[layout.global(kGmmEdema, 0)][c] = edema_mean;
      }
    }
  }
  const ConstraintSystem cs = build_constraints(layout, modalities);
  if (!cs.feasible(ph.theta_truth.stacked_means())) {
    throw std::logic_error("generate_phantom: infeasible ground-truth means");
  }

  // --- planted bias fields (demeaned, scaled to the requested amplitude).
  ph.bias_truth.assign(n, std::vector<double>(voxels, 0.0));
  if (spec.bias_amplitude > 0.0 && spec.bias_per_axis > 1) {
    const BiasBasis basis(shape, {spec.bias_per_axis, spec.bias_per_axis,
                                  spec.bias_per_axis});
    Rng rng(spec.seed, RngPurpose::Phantom, 2, 0);
    for (int c = 0; c < n; ++c) {
      if (modalities[c] == Modality::Ct) continue;  // CT carries no bias
      Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(basis.count());
      for (int p = 1; p < basis.count(); ++p) {
        coeffs[p] = 2.0 * rng.uniform() - 1.0;
      }
      std::vector<double> field;
      basis.evaluate(coeffs, field);
      double lo = field[0], hi = field[0];
      for (double v : field) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double scale =
          (hi - lo) > 1e-12 ? 2.0 * spec.bias_amplitude / (hi - lo) : 0.0;
      double mean = 0.0;
      for (double v : field) mean += v;
      mean /= static_cast<double>(voxels);
      for (std::size_t i = 0; i < voxels; ++i) {
        ph.bias_truth[c][i] = scale * (field[i] - mean);
      }
    }
  }

  // --- intensities: d_i ~ N(mu_{x,g} + bias, sd^2 I).
  ph.image = MultiChannelImage(shape, spec.spacing);
  std::vector<Volume<double>> chans(n, Volume<double>(shape));
  for (std::size_t i = 0; i < voxels; ++i) {
    const int x = mapping.map(ph.truth.label(i), ph.truth.tumor(i),
                              ph.truth.core(i));
    Rng rng(spec.seed, RngPurpose::Phantom, 3, i);
    // component draw (components are identical in truth, but keep the
    // generative order fixed)
    const int gx = layout.counts[x];
    int g = 0;
    if (gx > 1) {
      g = static_cast<int>(rng.below(static_cast<std::uint64_t>(gx)));
    }
    const int comp = layout.global(x, g);
    for (int c = 0; c < n; ++c) {
      const double noise = sd > 0.0 ? sd * rng.normal() : 0.0;
      chans[c][i] =
          ph.theta_truth.means[comp][c] + ph.bias_truth[c][i] + noise;
    }
  }
  for (int c = 0; c < n; ++c) {
    Channel ch;
    ch.tag = spec.channel_tags[c];
    ch.modality = modalities[c];
    ch.bias_field = modalities[c] != Modality::Ct;
    ch.values = std::move(chans[c]);
    ph.image.add_channel(std::move(ch));
  }
  return ph;
}

PhantomSpec phantom_spec_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  PhantomSpec spec;
  if (j.contains("shape")) {
    const auto v = j.at("shape").get<std::vector<int>>();
    if (v.size() != 3) throw IoError("phantom spec: shape needs 3 entries");
    spec.shape = GridShape(v[0], v[1], v[2]);
  }
  if (j.contains("spacing")) {
    const auto v = j.at("spacing").get<std::vector<double>>();
    if (v.size() != 3) throw IoError("phantom spec: spacing needs 3 entries");
    spec.spacing = {v[0], v[1], v[2]};
  }
  spec.seed = j.value("seed", spec.seed);
  if (j.contains("channels")) {
    spec.channel_tags = j.at("channels").get<std::vector<std::string>>();
  }
  spec.noise_scale = j.value("noise_scale", spec.noise_scale);
  spec.mean_separation = j.value("mean_separation", spec.mean_separation);
  spec.bias_amplitude = j.value("bias_amplitude", spec.bias_amplitude);
  spec.bias_per_axis = j.value("bias_per_axis", spec.bias_per_axis);
  spec.tumor_radius_frac = j.value("tumor_radius_frac", spec.tumor_radius_frac);
  spec.core_radius_frac = j.value("core_radius_frac", spec.core_radius_frac);
  spec.tumor_lobes = j.value("tumor_lobes", spec.tumor_lobes);
  spec.crbm_shapes = j.value("crbm_shapes", spec.crbm_shapes);
  spec.atlas_sharpness = j.value("atlas_sharpness", spec.atlas_sharpness);
  return spec;
}

std::string phantom_spec_to_json(const PhantomSpec& spec) {
  json j;
  j["shape"] = {spec.shape.nx, spec.shape.ny, spec.shape.nz};
  j["spacing"] = {spec.spacing.dx, spec.spacing.dy, spec.spacing.dz};
  j["seed"] = spec.seed;
  j["channels"] = spec.channel_tags;
  j["noise_scale"] = spec.noise_scale;
  j["mean_separation"] = spec.mean_separation;
  j["bias_amplitude"] = spec.bias_amplitude;
  j["bias_per_axis"] = spec.bias_per_axis;
  j["tumor_radius_frac"] = spec.tumor_radius_frac;
  j["core_radius_frac"] = spec.core_radius_frac;
  j["tumor_lobes"] = spec.tumor_lobes;
  j["crbm_shapes"] = spec.crbm_shapes;
  j["atlas_sharpness"] = spec.atlas_sharpness;
  return j.dump(2);
}

void save_phantom(const Phantom& ph, const std::string& dir) {
  fs::create_directories(dir);
  const GridShape& shape = ph.image.shape();
  const Spacing& sp = ph.image.spacing();

  {
    std::ofstream out(fs::path(dir) / "spec.json");
    out << phantom_spec_to_json(ph.spec) << "\n";
  }
  for (const Channel& ch : ph.image.channels()) {
    write_nifti_f64((fs::path(dir) / ("channel_" + ch.tag + ".nii.gz")).string(),
                    shape, sp, ch.values.data());
  }
  write_nifti_u8((fs::path(dir) / "truth_labels.nii.gz").string(), shape, sp,
                 ph.truth.labels().data());
  {
    json codes;
    const auto& table = default_label_table();
    for (int l = 0; l < kNumLabels; ++l) {
      codes[std::to_string(l)] = table.names[l];
    }
    std::ofstream out(fs::path(dir) / "truth_labels.json");
    out << codes.dump(2) << "\n";
  }
  write_nifti_u8((fs::path(dir) / "truth_tumor.nii.gz").string(), shape, sp,
                 ph.truth.tumor_map().raw().data());
  write_nifti_u8((fs::path(dir) / "truth_core.nii.gz").string(), shape, sp,
                 ph.truth.core_map().raw().data());
  for (int c = 0; c < ph.image.num_channels(); ++c) {
    write_nifti_f64(
        (fs::path(dir) / ("bias_" + ph.image.channel(c).tag + ".nii.gz"))
            .string(),
        shape, sp, ph.bias_truth[c]);
  }
  std::vector<std::string> tags;
  for (const Channel& ch : ph.image.channels()) tags.push_back(ch.tag);
  save_theta((fs::path(dir) / "theta_truth.bin").string(), ph.theta_truth,
             tags);
  save_atlas(ph.atlas, (fs::path(dir) / "atlas").string(), 0.01);
}

PhantomBundle load_phantom(const std::string& dir) {
  PhantomBundle b;
  std::ifstream spec_in(fs::path(dir) / "spec.json");
  if (!spec_in) throw IoError("phantom bundle: missing spec.json in " + dir);
  std::string text((std::istreambuf_iterator<char>(spec_in)),
                   std::istreambuf_iterator<char>());
  b.spec = phantom_spec_from_json(text);

  b.image = MultiChannelImage(b.spec.shape, b.spec.spacing);
  for (const std::string& tag : b.spec.channel_tags) {
    Channel ch;
    ch.tag = tag;
    ch.modality = resolve_modality(tag);
    ch.bias_field = ch.modality != Modality::Ct;
    ch.values = read_volume(
        (fs::path(dir) / ("channel_" + tag + ".nii.gz")).string(),
        b.spec.shape);
    b.image.add_channel(std::move(ch));
  }
  NiftiVolume lv =
      read_nifti((fs::path(dir) / "truth_labels.nii.gz").string());
  Volume<std::uint8_t> labels(b.spec.shape);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<std::uint8_t>(lv.data[i]);
  }
  BinaryMap z = read_binary_map(
      (fs::path(dir) / "truth_tumor.nii.gz").string(), b.spec.shape);
  BinaryMap y = read_binary_map(
      (fs::path(dir) / "truth_core.nii.gz").string(), b.spec.shape);
  b.truth = JointLabelState(std::move(labels), std::move(z), std::move(y),
                            default_label_table().brain_mask);
  b.atlas_manifest =
      (fs::path(dir) / "atlas" / "atlas_manifest.json").string();
  b.bias_truth.resize(b.image.num_channels());
  for (int c = 0; c < b.image.num_channels(); ++c) {
    const auto path =
        fs::path(dir) / ("bias_" + b.image.channel(c).tag + ".nii.gz");
    if (fs::exists(path)) {
      b.bias_truth[c] = read_volume(path.string(), b.spec.shape).data();
    } else {
      b.bias_truth[c].assign(b.spec.shape.voxels(), 0.0);
    }
  }
  return b;
}

}  // namespace bayeseg
