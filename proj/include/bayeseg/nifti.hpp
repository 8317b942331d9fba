#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bayeseg/grid.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

/// NIfTI-1 single-file volumes (.nii / .nii.gz). Only 3D volumes are
/// supported; data is returned as doubles with scl_slope/scl_inter applied.
struct NiftiVolume {
  GridShape shape;
  Spacing spacing;
  std::int16_t datatype = 0;
  std::vector<double> data;
};

NiftiVolume read_nifti(const std::string& path);

void write_nifti_f64(const std::string& path, const GridShape& shape,
                     const Spacing& spacing, const std::vector<double>& data);
void write_nifti_f32(const std::string& path, const GridShape& shape,
                     const Spacing& spacing, const std::vector<double>& data);
void write_nifti_u8(const std::string& path, const GridShape& shape,
                    const Spacing& spacing,
                    const std::vector<std::uint8_t>& data);

Volume<double> read_volume(const std::string& path, const GridShape& expected);
BinaryMap read_binary_map(const std::string& path, const GridShape& expected);

}  // namespace bayeseg
