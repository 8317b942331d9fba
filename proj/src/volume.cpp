#include "bayeseg/volume.hpp"

#include <algorithm>
#include <cctype>

namespace bayeseg {

Modality resolve_modality(const std::string& tag) {
  std::string t;
  t.reserve(tag.size());
  for (char c : tag) t.push_back(static_cast<char>(std::toupper(c)));
  if (t == "FLAIR" || t == "FLAIR2" || t == "DIR") return Modality::Flair;
  if (t == "T1") return Modality::T1;
  if (t == "T1C" || t == "T1CE" || t == "T1GD") return Modality::T1c;
  if (t == "T2") return Modality::T2;
  if (t == "CT") return Modality::Ct;
  return Modality::Other;
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Flair: return "FLAIR";
    case Modality::T1: return "T1";
    case Modality::T1c: return "T1c";
    case Modality::T2: return "T2";
    case Modality::Ct: return "CT";
    default: return "other";
  }
}

void MultiChannelImage::add_channel(Channel c) {
  if (c.values.shape() != shape_) {
    throw std::invalid_argument("MultiChannelImage: channel shape mismatch");
  }
  for (const auto& existing : channels_) {
    if (existing.tag == c.tag) {
      throw std::invalid_argument("MultiChannelImage: duplicate tag " + c.tag);
    }
  }
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    if (!std::isfinite(c.values[i])) {
      throw std::invalid_argument("MultiChannelImage: non-finite value in " +
                                  c.tag + " at voxel " + std::to_string(i));
    }
  }
  channels_.push_back(std::move(c));
}

int MultiChannelImage::find_modality(Modality m) const {
  for (int n = 0; n < num_channels(); ++n) {
    if (channels_[n].modality == m) return n;
  }
  return -1;
}

JointLabelState::JointLabelState(Volume<std::uint8_t> l, BinaryMap z,
                                 BinaryMap y, std::uint32_t brain_mask)
    : l_(std::move(l)), z_(std::move(z)), y_(std::move(y)) {
  if (z_.shape() != l_.shape() || y_.shape() != l_.shape()) {
    throw std::invalid_argument("JointLabelState: shape mismatch");
  }
  validate(brain_mask);
}

JointLabelState JointLabelState::unchecked(Volume<std::uint8_t> l, BinaryMap z,
                                           BinaryMap y) {
  JointLabelState s;
  s.l_ = std::move(l);
  s.z_ = std::move(z);
  s.y_ = std::move(y);
  return s;
}

void JointLabelState::validate(std::uint32_t brain_mask) const {
  for (std::size_t i = 0; i < size(); ++i) {
    const bool z = z_.get(i);
    const bool y = y_.get(i);
    if (!z && y) {
      throw ForbiddenCombination("core outside tumor region at voxel " +
                                 std::to_string(i));
    }
    const bool in_brain = (brain_mask >> l_[i]) & 1u;
    if (z && !in_brain) {
      throw ForbiddenCombination("tumor on non-brain label at voxel " +
                                 std::to_string(i));
    }
  }
}

MultiChannelImage log_transform(const MultiChannelImage& raw, double floor) {
  if (!(floor > 0.0)) {
    throw std::invalid_argument("log_transform: floor must be > 0");
  }
  MultiChannelImage out(raw.shape(), raw.spacing());
  for (const Channel& c : raw.channels()) {
    Channel lc = c;
    for (std::size_t i = 0; i < lc.values.size(); ++i) {
      // add_channel already rejected non-finite input
      lc.values[i] = std::log(std::max(c.values[i], floor));
    }
    out.add_channel(std::move(lc));
  }
  return out;
}

std::vector<BinaryMap> flip_augment(const BinaryMap& map) {
  const GridShape& s = map.shape();
  std::vector<BinaryMap> out;
  out.reserve(8);
  for (int mask = 0; mask < 8; ++mask) {
    BinaryMap flipped(s);
    for (int z = 0; z < s.nz; ++z) {
      const int tz = (mask & 4) ? s.nz - 1 - z : z;
      for (int y = 0; y < s.ny; ++y) {
        const int ty = (mask & 2) ? s.ny - 1 - y : y;
        for (int x = 0; x < s.nx; ++x) {
          const int tx = (mask & 1) ? s.nx - 1 - x : x;
          flipped.set(tx, ty, tz, map.at(x, y, z));
        }
      }
    }
    out.push_back(std::move(flipped));
  }
  return out;
}

}  // namespace bayeseg
