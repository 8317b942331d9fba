#include "bayeseg/atlas.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bayeseg/errors.hpp"
#include "bayeseg/nifti.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bayeseg {

AtlasPrior::AtlasPrior(GridShape shape, Spacing spacing)
    : shape_(shape),
      spacing_(spacing),
      probs_(shape.voxels() * kNumLabels, 0.0) {}

double AtlasPrior::brain_prob(std::size_t voxel) const {
  const double* p = row(voxel);
  double sum = 0.0;
  for (int l = 0; l < kNumLabels; ++l) {
    if ((table_.brain_mask >> l) & 1u) sum += p[l];
  }
  return sum;
}

void AtlasPrior::validate(double tol) const {
  const std::size_t n = shape_.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = row(i);
    double sum = 0.0;
    for (int l = 0; l < kNumLabels; ++l) {
      if (p[l] < 0.0) {
        throw IoError("atlas: negative probability at voxel " +
                      std::to_string(i));
      }
      sum += p[l];
    }
    if (std::fabs(sum - 1.0) > tol) {
      throw IoError("atlas: probabilities sum to " + std::to_string(sum) +
                    " at voxel " + std::to_string(i));
    }
  }
}

void AtlasPrior::normalize() {
  const std::size_t n = shape_.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double* p = probs_.data() + i * kNumLabels;
    double sum = 0.0;
    for (int l = 0; l < kNumLabels; ++l) sum += p[l];
    if (sum <= 0.0) {
      throw IoError("atlas: zero probability vector at voxel " +
                    std::to_string(i));
    }
    for (int l = 0; l < kNumLabels; ++l) p[l] /= sum;
  }
}

std::vector<double> AtlasPrior::expected_label_volumes() const {
  std::vector<double> out(kNumLabels, 0.0);
  const std::size_t n = shape_.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = row(i);
    for (int l = 0; l < kNumLabels; ++l) out[l] += p[l];
  }
  return out;
}

AtlasPrior load_atlas(const std::string& manifest_path,
                      const GridShape& expected_shape) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open atlas manifest " + manifest_path);
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw IoError("atlas manifest parse error: " + std::string(e.what()));
  }

  const auto& table = default_label_table();
  if (m.contains("labels")) {
    const auto names = m.at("labels").get<std::vector<std::string>>();
    if (names.size() != kNumLabels) {
      throw IoError("atlas manifest: expected " + std::to_string(kNumLabels) +
                    " labels, got " + std::to_string(names.size()));
    }
    for (int l = 0; l < kNumLabels; ++l) {
      if (names[l] != table.names[l]) {
        throw IoError("atlas manifest: label " + std::to_string(l) +
                      " is '" + names[l] + "', expected '" + table.names[l] +
                      "'");
      }
    }
  }
  const auto files = m.at("files").get<std::vector<std::string>>();
  if (files.size() != kNumLabels) {
    throw IoError("atlas manifest: expected one file per label");
  }

  const fs::path base = fs::path(manifest_path).parent_path();
  AtlasPrior atlas;
  Spacing spacing;
  std::vector<Volume<double>> channels;
  channels.reserve(kNumLabels);
  for (int l = 0; l < kNumLabels; ++l) {
    const fs::path p = base / files[l];
    NiftiVolume v = read_nifti(p.string());
    if (v.shape != expected_shape) {
      throw IoError(p.string() + ": atlas shape " + v.shape.str() +
                    " does not match expected " + expected_shape.str());
    }
    if (l == 0) spacing = v.spacing;
    channels.emplace_back(v.shape, std::move(v.data));
  }

  atlas = AtlasPrior(expected_shape, spacing);
  const std::size_t n = expected_shape.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int l = 0; l < kNumLabels; ++l) {
      const double p = channels[l][i];
      if (p < 0.0) {
        throw IoError("atlas: negative probability at voxel " +
                      std::to_string(i));
      }
      atlas.set_prob(i, l, p);
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-3) {
      throw IoError("atlas: probabilities sum to " + std::to_string(sum) +
                    " at voxel " + std::to_string(i));
    }
  }
  atlas.normalize();
  return atlas;
}

std::string save_atlas(const AtlasPrior& atlas, const std::string& dir,
                       double epsilon_unspecified) {
  fs::create_directories(dir);
  const auto& table = atlas.labels();
  json m;
  m["labels"] = std::vector<std::string>(table.names.begin(),
                                         table.names.end());
  std::vector<std::string> brain;
  for (int l = 0; l < kNumLabels; ++l) {
    if (table.in_brain(l)) brain.push_back(table.names[l]);
  }
  m["brain_set"] = brain;
  m["epsilon_unspecified"] = epsilon_unspecified;

  const std::size_t n = atlas.shape().voxels();
  std::vector<std::string> files;
  std::vector<double> channel(n);
  for (int l = 0; l < kNumLabels; ++l) {
    for (std::size_t i = 0; i < n; ++i) channel[i] = atlas.prob(i, l);
    const std::string name = "atlas_label_" + std::to_string(l) + ".nii.gz";
    write_nifti_f64((fs::path(dir) / name).string(), atlas.shape(),
                    atlas.spacing(), channel);
    files.push_back(name);
  }
  m["files"] = files;

  const std::string manifest = (fs::path(dir) / "atlas_manifest.json").string();
  std::ofstream out(manifest);
  out << m.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + manifest);
  return manifest;
}

AtlasPrior add_unspecified_tissue(const AtlasPrior& atlas, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument(
        "add_unspecified_tissue: epsilon must be in (0,1)");
  }
  const std::size_t n = atlas.shape().voxels();
  for (std::size_t i = 0; i < n; ++i) {
    if (atlas.prob(i, kUnspecifiedTissue) != 0.0) {
      throw std::invalid_argument(
          "add_unspecified_tissue: label already present at voxel " +
          std::to_string(i));
    }
  }
  AtlasPrior out = atlas;
  for (std::size_t i = 0; i < n; ++i) {
    out.set_prob(i, kUnspecifiedTissue, epsilon);
  }
  out.normalize();
  return out;
}

}  // namespace bayeseg
