#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bayeseg/errors.hpp"
#include "bayeseg/grid.hpp"

namespace bayeseg {

template <typename T>
class Volume {
 public:
  Volume() = default;
  explicit Volume(GridShape shape, T fill = T{})
      : shape_(shape), data_(shape.voxels(), fill) {}
  Volume(GridShape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.voxels()) {
      throw std::invalid_argument("Volume: data size does not match shape");
    }
  }

  const GridShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int x, int y, int z) { return data_[shape_.index(x, y, z)]; }
  const T& at(int x, int y, int z) const {
    return data_[shape_.index(x, y, z)];
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Volume& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  GridShape shape_;
  std::vector<T> data_;
};

/// Per-voxel {0,1} field (tumor map z, core map y, cRBM visible units).
class BinaryMap {
 public:
  BinaryMap() = default;
  explicit BinaryMap(GridShape shape) : values_(shape, 0) {}
  BinaryMap(GridShape shape, std::vector<std::uint8_t> bits)
      : values_(shape, std::move(bits)) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i] > 1) {
        throw std::invalid_argument("BinaryMap: value not in {0,1} at voxel " +
                                    std::to_string(i));
      }
    }
  }

  const GridShape& shape() const { return values_.shape(); }
  std::size_t size() const { return values_.size(); }
  bool get(std::size_t i) const { return values_[i] != 0; }
  void set(std::size_t i, bool v) { values_[i] = v ? 1 : 0; }
  bool at(int x, int y, int z) const { return values_.at(x, y, z) != 0; }
  void set(int x, int y, int z, bool v) { values_.at(x, y, z) = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) n += values_[i];
    return n;
  }

  const Volume<std::uint8_t>& raw() const { return values_; }
  bool operator==(const BinaryMap& o) const { return values_ == o.values_; }

 private:
  Volume<std::uint8_t> values_;
};

enum class Modality { Flair, T1, T1c, T2, Ct, Other };

/// Resolves a tag like "FLAIR2" or "DIR" to the modality whose settings it
/// borrows. Unknown tags come back as Other.
Modality resolve_modality(const std::string& tag);
std::string modality_name(Modality m);

struct Channel {
  std::string tag;          // unique per image, e.g. "FLAIR", "T1c", "DIR"
  Modality modality = Modality::Other;
  bool bias_field = true;   // false for CT
  Volume<double> values;    // log-intensities
};

/// N co-registered log-intensity channels on one grid.
class MultiChannelImage {
 public:
  MultiChannelImage() = default;
  MultiChannelImage(GridShape shape, Spacing spacing = {})
      : shape_(shape), spacing_(spacing) {}

  const GridShape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(Spacing s) { spacing_ = s; }

  void add_channel(Channel c);
  int num_channels() const { return static_cast<int>(channels_.size()); }
  const Channel& channel(int n) const { return channels_[n]; }
  Channel& channel(int n) { return channels_[n]; }
  const std::vector<Channel>& channels() const { return channels_; }

  /// Index of the first channel borrowing settings from `m`, or -1.
  int find_modality(Modality m) const;

 private:
  GridShape shape_;
  Spacing spacing_;
  std::vector<Channel> channels_;
};

/// Per-voxel (l, z, y): normal label code, tumor-affected flag, core flag.
/// Construction rejects combinations the restriction energy makes infinite.
class JointLabelState {
 public:
  JointLabelState() = default;
  JointLabelState(Volume<std::uint8_t> l, BinaryMap z, BinaryMap y,
                  std::uint32_t brain_mask);

  /// Skips validation; for samplers that guarantee validity by construction.
  static JointLabelState unchecked(Volume<std::uint8_t> l, BinaryMap z,
                                   BinaryMap y);

  /// Throws with the offending voxel index on any forbidden triple.
  void validate(std::uint32_t brain_mask) const;

  const GridShape& shape() const { return l_.shape(); }
  std::size_t size() const { return l_.size(); }

  std::uint8_t label(std::size_t i) const { return l_[i]; }
  bool tumor(std::size_t i) const { return z_.get(i); }
  bool core(std::size_t i) const { return y_.get(i); }

  const Volume<std::uint8_t>& labels() const { return l_; }
  const BinaryMap& tumor_map() const { return z_; }
  const BinaryMap& core_map() const { return y_; }

  Volume<std::uint8_t>& labels() { return l_; }
  BinaryMap& tumor_map() { return z_; }
  BinaryMap& core_map() { return y_; }

  bool operator==(const JointLabelState& o) const {
    return l_ == o.l_ && z_ == o.z_ && y_ == o.y_;
  }

 private:
  Volume<std::uint8_t> l_;
  BinaryMap z_;
  BinaryMap y_;
};

/// ln(max(raw, floor)) per voxel; rejects non-finite input with voxel index.
MultiChannelImage log_transform(const MultiChannelImage& raw, double floor);

/// The 8 axis reflections {+-x}x{+-y}x{+-z} of a map, identity first.
/// Output order follows the bitmask (bit0 = flip x, bit1 = y, bit2 = z).
std::vector<BinaryMap> flip_augment(const BinaryMap& map);

template <typename Pred>
std::size_t count_label(const JointLabelState& state, Pred&& pred) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (pred(state.label(i), state.tumor(i), state.core(i))) ++n;
  }
  return n;
}

}  // namespace bayeseg
