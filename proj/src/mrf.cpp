#include "bayeseg/mrf.hpp"

#include <cmath>
#include <limits>

#include "bayeseg/parallel.hpp"

namespace bayeseg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kGrain = 4096;

// (#neighbors at 1, #neighbors) over the in-grid 26-neighborhood.
inline std::pair<int, int> neighbor_ones(const BinaryMap& map,
                                         const GridShape& s, int x, int y,
                                         int z) {
  int ones = 0;
  int count = 0;
  const int x0 = std::max(0, x - 1), x1 = std::min(s.nx - 1, x + 1);
  const int y0 = std::max(0, y - 1), y1 = std::min(s.ny - 1, y + 1);
  const int z0 = std::max(0, z - 1), z1 = std::min(s.nz - 1, z + 1);
  for (int zz = z0; zz <= z1; ++zz) {
    for (int yy = y0; yy <= y1; ++yy) {
      for (int xx = x0; xx <= x1; ++xx) {
        if (xx == x && yy == y && zz == z) continue;
        ++count;
        ones += map.at(xx, yy, zz) ? 1 : 0;
      }
    }
  }
  return {ones, count};
}

}  // namespace

int neighborhood_size(const GridShape& shape, int x, int y, int z) {
  const int cx = (x > 0) + 1 + (x < shape.nx - 1);
  const int cy = (y > 0) + 1 + (y < shape.ny - 1);
  const int cz = (z > 0) + 1 + (z < shape.nz - 1);
  return cx * cy * cz - 1;
}

JointLabelState sample_labels_mrf(const MultiChannelImage& data,
                                  const AtlasPrior& atlas,
                                  const GmmMapping& mapping,
                                  const LikelihoodParams& theta,
                                  const BiasBasis* basis,
                                  const JointLabelState& prev,
                                  const MrfConfig& cfg, std::uint64_t seed,
                                  std::uint64_t sweep, double* surrogate) {
  const GridShape& shape = data.shape();
  const std::size_t voxels = shape.voxels();
  const LikelihoodEvaluator eval(data, basis, theta);
  const std::uint32_t brain = atlas.brain_mask();
  std::array<int, kNumLabels> label_gmm;
  for (int l = 0; l < kNumLabels; ++l) {
    label_gmm[l] = mapping.map(l, false, false);
  }

  Volume<std::uint8_t> labels = prev.labels();
  BinaryMap zmap = prev.tumor_map();
  BinaryMap ymap = prev.core_map();

  const std::size_t chunks = chunk_count(voxels, kGrain);
  std::vector<double> chunk_surrogate(chunks, 0.0);

  // Same-color voxels are never 26-neighbors, so each color pass may read
  // and write the working maps in place.
  for (int color = 0; color < 8; ++color) {
    parallel_chunks(voxels, kGrain, [&](std::size_t c, std::size_t b,
                                        std::size_t e) {
      double loglik[kNumGmms];
      double logw[kNumLabels * 3];
      double score[kNumLabels * 3];
      std::uint8_t tl[kNumLabels * 3];
      std::uint8_t tz[kNumLabels * 3];
      double surr = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const auto xyz = shape.coords(i);
        if (((xyz[0] & 1) | ((xyz[1] & 1) << 1) | ((xyz[2] & 1) << 2)) !=
            color) {
          continue;
        }
        // Pairwise terms, written in the exp[v * field] form: the |v_i-v_j|
        // penalty differs between v=1 and v=0 by beta (n0 - n1).
        const auto [zn1, zcnt] =
            neighbor_ones(zmap, shape, xyz[0], xyz[1], xyz[2]);
        const auto [yn1, ycnt] =
            neighbor_ones(ymap, shape, xyz[0], xyz[1], xyz[2]);
        const double zeta = -cfg.beta_z * (zcnt - 2.0 * zn1);
        const double psi = -cfg.beta_y * (ycnt - 2.0 * yn1);

        for (int x = 0; x < kNumGmms; ++x) loglik[x] = eval.log_gmm(i, x);
        const double* pi = atlas.row(i);
        int cnt = 0;
        double best = kNegInf;
        for (int l = 0; l < kNumLabels; ++l) {
          if (pi[l] <= 0.0) continue;
          const double logpi = std::log(pi[l]);
          logw[cnt] = logpi + loglik[label_gmm[l]];
          score[cnt] = logw[cnt];
          tl[cnt] = static_cast<std::uint8_t>(l);
          tz[cnt] = 0;
          best = std::max(best, logw[cnt]);
          ++cnt;
          if ((brain >> l) & 1u) {
            logw[cnt] = logpi + zeta + loglik[kGmmEdema];
            score[cnt] = logpi + loglik[kGmmEdema];
            tl[cnt] = static_cast<std::uint8_t>(l);
            tz[cnt] = 1;
            best = std::max(best, logw[cnt]);
            ++cnt;
            logw[cnt] = logpi + zeta + psi + loglik[kGmmCore];
            score[cnt] = logpi + loglik[kGmmCore];
            tl[cnt] = static_cast<std::uint8_t>(l);
            tz[cnt] = 2;
            best = std::max(best, logw[cnt]);
            ++cnt;
          }
        }
        if (cnt == 0) {
          throw std::runtime_error(
              "sample_labels_mrf: no admissible label at voxel " +
              std::to_string(i));
        }
        double zsum = 0.0;
        for (int k = 0; k < cnt; ++k) {
          logw[k] = std::exp(logw[k] - best);
          zsum += logw[k];
        }
        Rng rng(seed, RngPurpose::Labels, sweep, i);
        double u = rng.uniform() * zsum;
        int k = 0;
        for (; k < cnt - 1; ++k) {
          u -= logw[k];
          if (u <= 0.0) break;
        }
        labels[i] = tl[k];
        zmap.set(i, tz[k] >= 1);
        ymap.set(i, tz[k] == 2);
        surr += score[k];
      }
      chunk_surrogate[c] += surr;
    });
  }

  if (surrogate) {
    double s = 0.0;
    for (double v : chunk_surrogate) s += v;
    *surrogate = s;
  }
  return JointLabelState::unchecked(std::move(labels), std::move(zmap),
                                    std::move(ymap));
}

}  // namespace bayeseg
