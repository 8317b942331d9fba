#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bayeseg {

/// Voxel grid dimensions. Storage order is x-fastest everywhere:
/// index = x + nx*(y + ny*z).
struct GridShape {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  GridShape() = default;
  GridShape(int x, int y, int z) : nx(x), ny(y), nz(z) {
    if (nx < 1 || ny < 1 || nz < 1) {
      throw std::invalid_argument("GridShape: all axis counts must be >= 1");
    }
  }

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }

  std::array<int, 3> coords(std::size_t i) const {
    const int x = static_cast<int>(i % static_cast<std::size_t>(nx));
    const std::size_t rest = i / static_cast<std::size_t>(nx);
    const int y = static_cast<int>(rest % static_cast<std::size_t>(ny));
    const int z = static_cast<int>(rest / static_cast<std::size_t>(ny));
    return {x, y, z};
  }

  bool contains(int x, int y, int z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }

  bool operator==(const GridShape& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz;
  }
  bool operator!=(const GridShape& o) const { return !(*this == o); }

  std::string str() const {
    return std::to_string(nx) + "x" + std::to_string(ny) + "x" +
           std::to_string(nz);
  }
};

/// Physical voxel spacing in mm, used only by surface-distance metrics.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;
};

}  // namespace bayeseg
