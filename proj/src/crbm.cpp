#include "bayeseg/crbm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bayeseg/errors.hpp"
#include "bayeseg/parallel.hpp"

using nlohmann::json;

namespace bayeseg {

namespace {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

// out[j] = sum_t w[t] src[j + t] over the valid hidden grid.
void correlate_valid(const GridShape& image, const double* src,
                     const std::array<int, 3>& f, const double* w,
                     const GridShape& hidden, double* out) {
  for (int jz = 0; jz < hidden.nz; ++jz) {
    for (int jy = 0; jy < hidden.ny; ++jy) {
      for (int jx = 0; jx < hidden.nx; ++jx) {
        double acc = 0.0;
        const double* wt = w;
        for (int tz = 0; tz < f[2]; ++tz) {
          for (int ty = 0; ty < f[1]; ++ty) {
            const double* s = src + image.index(jx, jy + ty, jz + tz);
            for (int tx = 0; tx < f[0]; ++tx) {
              acc += wt[tx] * s[tx];
            }
            wt += f[0];
          }
        }
        out[hidden.index(jx, jy, jz)] = acc;
      }
    }
  }
}

// Scatter version for binary input: only set voxels contribute.
void correlate_valid_binary(const GridShape& image, const BinaryMap& v,
                            const std::array<int, 3>& f, const double* w,
                            const GridShape& hidden, double* out) {
  std::fill(out, out + hidden.voxels(), 0.0);
  for (int iz = 0; iz < image.nz; ++iz) {
    for (int iy = 0; iy < image.ny; ++iy) {
      for (int ix = 0; ix < image.nx; ++ix) {
        if (!v.at(ix, iy, iz)) continue;
        const int jz0 = std::max(0, iz - f[2] + 1);
        const int jz1 = std::min(hidden.nz - 1, iz);
        const int jy0 = std::max(0, iy - f[1] + 1);
        const int jy1 = std::min(hidden.ny - 1, iy);
        const int jx0 = std::max(0, ix - f[0] + 1);
        const int jx1 = std::min(hidden.nx - 1, ix);
        for (int jz = jz0; jz <= jz1; ++jz) {
          const int tz = iz - jz;
          for (int jy = jy0; jy <= jy1; ++jy) {
            const int ty = iy - jy;
            const double* wrow = w + (tz * f[1] + ty) * f[0];
            double* orow = out + hidden.index(0, jy, jz);
            for (int jx = jx0; jx <= jx1; ++jx) {
              orow[jx] += wrow[ix - jx];
            }
          }
        }
      }
    }
  }
}

// out[i] += sum_t w[t] h[i - t]; the adjoint of correlate_valid.
void correlate_adjoint(const GridShape& image, const std::array<int, 3>& f,
                       const double* w, const GridShape& hidden,
                       const double* h, double* out) {
  for (int jz = 0; jz < hidden.nz; ++jz) {
    for (int jy = 0; jy < hidden.ny; ++jy) {
      for (int jx = 0; jx < hidden.nx; ++jx) {
        const double hv = h[hidden.index(jx, jy, jz)];
        if (hv == 0.0) continue;
        const double* wt = w;
        for (int tz = 0; tz < f[2]; ++tz) {
          for (int ty = 0; ty < f[1]; ++ty) {
            double* o = out + image.index(jx, jy + ty, jz + tz);
            for (int tx = 0; tx < f[0]; ++tx) {
              o[tx] += wt[tx] * hv;
            }
            wt += f[0];
          }
        }
      }
    }
  }
}

// box[t] = sum_j src[j + t]; shared term of the centered gradient.
void window_sums(const GridShape& image, const double* src,
                 const GridShape& hidden, const std::array<int, 3>& f,
                 double* box) {
  std::fill(box, box + static_cast<std::size_t>(f[0]) * f[1] * f[2], 0.0);
  for (int jz = 0; jz < hidden.nz; ++jz) {
    for (int jy = 0; jy < hidden.ny; ++jy) {
      for (int jx = 0; jx < hidden.nx; ++jx) {
        double* bt = box;
        for (int tz = 0; tz < f[2]; ++tz) {
          for (int ty = 0; ty < f[1]; ++ty) {
            const double* s = src + image.index(jx, jy + ty, jz + tz);
            for (int tx = 0; tx < f[0]; ++tx) {
              bt[tx] += s[tx];
            }
            bt += f[0];
          }
        }
      }
    }
  }
}

std::vector<double> to_real(const BinaryMap& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v.get(i) ? 1.0 : 0.0;
  return out;
}

struct PhaseStats {
  // Sums over hidden positions / voxels of one phase (data or model).
  std::vector<double> wstat;  // M * filter_voxels: sum_j v[j+t] h[m][j]
  std::vector<double> hsum;   // M: sum_j h[m][j]
  std::vector<double> box;    // filter_voxels: sum_j v[j+t]
  double vsum = 0.0;          // sum_i v_i
};

void accumulate_phase(const CrbmParams& params, const GridShape& image,
                      const std::vector<double>& v,
                      const std::vector<std::vector<double>>& h,
                      PhaseStats& st) {
  const int m_count = params.num_filters();
  const auto& f = params.filter_extent();
  const int fv = params.filter_voxels();
  const GridShape hshape = params.hidden_shape(image);
  st.wstat.assign(static_cast<std::size_t>(m_count) * fv, 0.0);
  st.hsum.assign(m_count, 0.0);
  st.box.assign(fv, 0.0);
  st.vsum = 0.0;
  for (double x : v) st.vsum += x;
  window_sums(image, v.data(), hshape, f, st.box.data());
  for (int m = 0; m < m_count; ++m) {
    double* wstat = st.wstat.data() + static_cast<std::size_t>(m) * fv;
    const std::vector<double>& hm = h[m];
    double hs = 0.0;
    for (double x : hm) hs += x;
    st.hsum[m] = hs;
    // wstat[t] = sum_j v[j+t] h[j]
    for (int jz = 0; jz < hshape.nz; ++jz) {
      for (int jy = 0; jy < hshape.ny; ++jy) {
        for (int jx = 0; jx < hshape.nx; ++jx) {
          const double hv = hm[hshape.index(jx, jy, jz)];
          if (hv == 0.0) continue;
          double* wt = wstat;
          for (int tz = 0; tz < f[2]; ++tz) {
            for (int ty = 0; ty < f[1]; ++ty) {
              const double* s = v.data() + image.index(jx, jy + ty, jz + tz);
              for (int tx = 0; tx < f[0]; ++tx) {
                wt[tx] += hv * s[tx];
              }
              wt += f[0];
            }
          }
        }
      }
    }
  }
}

void tie_blocks(const CrbmParams& params, std::vector<double>& grad) {
  const auto& f = params.filter_extent();
  const auto& bs = params.block_extent();
  const int fv = params.filter_voxels();
  const int nbx = f[0] / bs[0], nby = f[1] / bs[1], nbz = f[2] / bs[2];
  for (int m = 0; m < params.num_filters(); ++m) {
    double* g = grad.data() + static_cast<std::size_t>(m) * fv;
    for (int bz = 0; bz < nbz; ++bz) {
      for (int by = 0; by < nby; ++by) {
        for (int bx = 0; bx < nbx; ++bx) {
          double sum = 0.0;
          for (int tz = bz * bs[2]; tz < (bz + 1) * bs[2]; ++tz) {
            for (int ty = by * bs[1]; ty < (by + 1) * bs[1]; ++ty) {
              for (int tx = bx * bs[0]; tx < (bx + 1) * bs[0]; ++tx) {
                sum += g[(tz * f[1] + ty) * f[0] + tx];
              }
            }
          }
          const double mean = sum / (bs[0] * bs[1] * bs[2]);
          for (int tz = bz * bs[2]; tz < (bz + 1) * bs[2]; ++tz) {
            for (int ty = by * bs[1]; ty < (by + 1) * bs[1]; ++ty) {
              for (int tx = bx * bs[0]; tx < (bx + 1) * bs[0]; ++tx) {
                g[(tz * f[1] + ty) * f[0] + tx] = mean;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

CrbmParams::CrbmParams(int num_filters, int filter_size, int block_size)
    : CrbmParams(num_filters, {filter_size, filter_size, filter_size},
                 {block_size, block_size, block_size}) {}

CrbmParams::CrbmParams(int num_filters, std::array<int, 3> filter_extent,
                       std::array<int, 3> block_extent)
    : num_filters_(num_filters),
      filter_(filter_extent),
      block_(block_extent),
      filters_(static_cast<std::size_t>(num_filters) * filter_extent[0] *
                   filter_extent[1] * filter_extent[2],
               0.0),
      hidden_bias_(num_filters, 0.0) {
  if (num_filters < 1) {
    throw std::invalid_argument("CrbmParams: need at least one filter");
  }
  for (int a = 0; a < 3; ++a) {
    if (filter_[a] < 1 || block_[a] < 1 || filter_[a] % block_[a] != 0) {
      throw std::invalid_argument(
          "CrbmParams: filter extent must be a positive multiple of the "
          "block extent");
    }
  }
}

CrbmParams CrbmParams::random_init(const CrbmConfig& cfg) {
  CrbmParams p(cfg.num_filters, cfg.filter_size, cfg.block_size);
  const auto& f = p.filter_extent();
  const auto& bs = p.block_extent();
  const int nbx = f[0] / bs[0], nby = f[1] / bs[1], nbz = f[2] / bs[2];
  Rng rng(cfg.seed, RngPurpose::CrbmInit, 0, 0);
  for (int m = 0; m < cfg.num_filters; ++m) {
    double* w = p.filter(m);
    for (int bz = 0; bz < nbz; ++bz) {
      for (int by = 0; by < nby; ++by) {
        for (int bx = 0; bx < nbx; ++bx) {
          const double v = cfg.init_sigma * rng.normal();
          for (int tz = bz * bs[2]; tz < (bz + 1) * bs[2]; ++tz) {
            for (int ty = by * bs[1]; ty < (by + 1) * bs[1]; ++ty) {
              for (int tx = bx * bs[0]; tx < (bx + 1) * bs[0]; ++tx) {
                w[(tz * f[1] + ty) * f[0] + tx] = v;
              }
            }
          }
        }
      }
    }
  }
  return p;
}

GridShape CrbmParams::hidden_shape(const GridShape& image) const {
  if (image.nx < filter_[0] || image.ny < filter_[1] ||
      image.nz < filter_[2]) {
    throw std::invalid_argument("CrbmParams: image smaller than filter");
  }
  return GridShape(image.nx - filter_[0] + 1, image.ny - filter_[1] + 1,
                   image.nz - filter_[2] + 1);
}

bool CrbmParams::tying_consistent(double tol) const {
  const auto& f = filter_;
  const auto& bs = block_;
  const int nbx = f[0] / bs[0], nby = f[1] / bs[1], nbz = f[2] / bs[2];
  for (int m = 0; m < num_filters_; ++m) {
    const double* w = filter(m);
    for (int bz = 0; bz < nbz; ++bz) {
      for (int by = 0; by < nby; ++by) {
        for (int bx = 0; bx < nbx; ++bx) {
          const double ref =
              w[(bz * bs[2] * f[1] + by * bs[1]) * f[0] + bx * bs[0]];
          for (int tz = bz * bs[2]; tz < (bz + 1) * bs[2]; ++tz) {
            for (int ty = by * bs[1]; ty < (by + 1) * bs[1]; ++ty) {
              for (int tx = bx * bs[0]; tx < (bx + 1) * bs[0]; ++tx) {
                if (std::fabs(w[(tz * f[1] + ty) * f[0] + tx] - ref) > tol) {
                  return false;
                }
              }
            }
          }
        }
      }
    }
  }
  return true;
}

std::vector<Volume<double>> hidden_preactivation(const CrbmParams& params,
                                                 const BinaryMap& v) {
  const GridShape hshape = params.hidden_shape(v.shape());
  std::vector<Volume<double>> out;
  out.reserve(params.num_filters());
  for (int m = 0; m < params.num_filters(); ++m) {
    out.emplace_back(hshape);
  }
  parallel_chunks(params.num_filters(), 1,
                  [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t m = b; m < e; ++m) {
      correlate_valid_binary(v.shape(), v, params.filter_extent(),
                             params.filter(m), hshape, out[m].data().data());
      const double bias = params.hidden_bias(m);
      for (auto& x : out[m].data()) x += bias;
    }
  });
  return out;
}

std::vector<Volume<double>> hidden_preactivation_real(
    const CrbmParams& params, const GridShape& image,
    const std::vector<double>& v) {
  const GridShape hshape = params.hidden_shape(image);
  std::vector<Volume<double>> out;
  out.reserve(params.num_filters());
  for (int m = 0; m < params.num_filters(); ++m) {
    out.emplace_back(hshape);
    correlate_valid(image, v.data(), params.filter_extent(), params.filter(m),
                    hshape, out[m].data().data());
    const double bias = params.hidden_bias(m);
    for (auto& x : out[m].data()) x += bias;
  }
  return out;
}

Volume<double> visible_preactivation(const CrbmParams& params,
                                     const GridShape& image,
                                     const HiddenState& hidden) {
  Volume<double> out(image, params.visible_bias());
  const GridShape& hshape = hidden.shape;
  std::vector<double> hreal(hshape.voxels());
  for (int m = 0; m < params.num_filters(); ++m) {
    for (std::size_t j = 0; j < hreal.size(); ++j) {
      hreal[j] = hidden.groups[m].get(j) ? 1.0 : 0.0;
    }
    correlate_adjoint(image, params.filter_extent(), params.filter(m), hshape,
                      hreal.data(), out.data().data());
  }
  return out;
}

Volume<double> visible_preactivation_real(
    const CrbmParams& params, const GridShape& image,
    const std::vector<std::vector<double>>& hidden) {
  const GridShape hshape = params.hidden_shape(image);
  Volume<double> out(image, params.visible_bias());
  for (int m = 0; m < params.num_filters(); ++m) {
    correlate_adjoint(image, params.filter_extent(), params.filter(m), hshape,
                      hidden[m].data(), out.data().data());
  }
  return out;
}

double energy(const CrbmParams& params, const BinaryMap& v,
              const HiddenState& hidden) {
  const GridShape hshape = params.hidden_shape(v.shape());
  if (hidden.shape != hshape ||
      static_cast<int>(hidden.groups.size()) != params.num_filters()) {
    throw std::invalid_argument("energy: hidden state shape mismatch");
  }
  double e = 0.0;
  std::vector<double> pre(hshape.voxels());
  for (int m = 0; m < params.num_filters(); ++m) {
    correlate_valid_binary(v.shape(), v, params.filter_extent(),
                           params.filter(m), hshape, pre.data());
    const BinaryMap& hm = hidden.groups[m];
    double dot = 0.0;
    double hsum = 0.0;
    for (std::size_t j = 0; j < pre.size(); ++j) {
      if (hm.get(j)) {
        dot += pre[j];
        hsum += 1.0;
      }
    }
    e -= dot + params.hidden_bias(m) * hsum;
  }
  e -= params.visible_bias() * static_cast<double>(v.count());
  return e;
}

double free_energy(const CrbmParams& params, const BinaryMap& v) {
  const auto pre = hidden_preactivation(params, v);
  double f = 0.0;
  for (const auto& group : pre) {
    for (double x : group.data()) f -= softplus(x);
  }
  f -= params.visible_bias() * static_cast<double>(v.count());
  return f;
}

std::vector<Volume<double>> hidden_activation(const CrbmParams& params,
                                              const BinaryMap& v) {
  auto pre = hidden_preactivation(params, v);
  for (auto& group : pre) {
    for (auto& x : group.data()) x = sigmoid(x);
  }
  return pre;
}

HiddenState sample_hidden(const CrbmParams& params, const BinaryMap& v,
                          std::uint64_t seed, RngPurpose purpose,
                          std::uint64_t sweep) {
  const auto pre = hidden_preactivation(params, v);
  HiddenState h;
  h.shape = params.hidden_shape(v.shape());
  h.groups.reserve(params.num_filters());
  const std::size_t per_group = h.shape.voxels();
  for (int m = 0; m < params.num_filters(); ++m) {
    h.groups.emplace_back(h.shape);
  }
  parallel_chunks(params.num_filters(), 1,
                  [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t m = b; m < e; ++m) {
      for (std::size_t j = 0; j < per_group; ++j) {
        Rng rng(seed, purpose, sweep, m * per_group + j);
        h.groups[m].set(j, rng.uniform() < sigmoid(pre[m][j]));
      }
    }
  });
  return h;
}

BinaryMap sample_visible(const CrbmParams& params, const GridShape& image,
                         const HiddenState& hidden, std::uint64_t seed,
                         RngPurpose purpose, std::uint64_t sweep) {
  const Volume<double> pre = visible_preactivation(params, image, hidden);
  BinaryMap v(image);
  for (std::size_t i = 0; i < v.size(); ++i) {
    Rng rng(seed, purpose, sweep, i);
    v.set(i, rng.uniform() < sigmoid(pre[i]));
  }
  return v;
}

CrbmGradient cd1_gradient(const CrbmParams& params,
                          const std::vector<const BinaryMap*>& minibatch,
                          std::uint64_t seed, std::uint64_t step) {
  if (minibatch.empty()) {
    throw std::invalid_argument("cd1_gradient: empty minibatch");
  }
  const int m_count = params.num_filters();
  const int fv = params.filter_voxels();
  const std::size_t n_examples = minibatch.size();

  std::vector<PhaseStats> data_stats(n_examples), model_stats(n_examples);
  std::vector<double> image_voxels(n_examples), hidden_voxels(n_examples);

  parallel_chunks(n_examples, 1, [&](std::size_t, std::size_t b,
                                     std::size_t e) {
    for (std::size_t ex = b; ex < e; ++ex) {
      const BinaryMap& v = *minibatch[ex];
      const GridShape image = v.shape();
      const GridShape hshape = params.hidden_shape(image);
      const std::size_t per_group = hshape.voxels();
      image_voxels[ex] = static_cast<double>(image.voxels());
      hidden_voxels[ex] = static_cast<double>(per_group);

      // Data phase: mean-field hidden probabilities.
      const std::vector<double> vreal = to_real(v);
      auto pre = hidden_preactivation_real(params, image, vreal);
      std::vector<std::vector<double>> ph(m_count);
      std::vector<std::vector<double>> hs(m_count);
      for (int m = 0; m < m_count; ++m) {
        ph[m].resize(per_group);
        hs[m].resize(per_group);
        for (std::size_t j = 0; j < per_group; ++j) {
          const double p = sigmoid(pre[m][j]);
          ph[m][j] = p;
          Rng rng(seed, RngPurpose::CrbmHiddenData, step,
                  ex * static_cast<std::uint64_t>(m_count) * per_group +
                      m * per_group + j);
          hs[m][j] = rng.uniform() < p ? 1.0 : 0.0;  // the one Gibbs step
        }
      }
      accumulate_phase(params, image, vreal, ph, data_stats[ex]);

      // Model phase: probability reconstruction, mean-field hidden.
      Volume<double> vis_pre = visible_preactivation_real(params, image, hs);
      std::vector<double> pv(image.voxels());
      for (std::size_t i = 0; i < pv.size(); ++i) {
        pv[i] = sigmoid(vis_pre[i]);
      }
      auto pre2 = hidden_preactivation_real(params, image, pv);
      for (int m = 0; m < m_count; ++m) {
        for (std::size_t j = 0; j < per_group; ++j) {
          ph[m][j] = sigmoid(pre2[m][j]);
        }
      }
      accumulate_phase(params, image, pv, ph, model_stats[ex]);
    }
  });

  // Ordered reduction over examples. Statistics are normalized per hidden
  // position (per visible voxel for the visible bias) so the step size is
  // independent of the mask extent.
  std::vector<double> dw(static_cast<std::size_t>(m_count) * fv, 0.0);
  std::vector<double> dbox(fv, 0.0);
  std::vector<double> dh(m_count, 0.0);
  double dv = 0.0;
  double mean_v_data = 0.0, mean_v_model = 0.0;
  std::vector<double> mean_h_data(m_count, 0.0), mean_h_model(m_count, 0.0);
  for (std::size_t ex = 0; ex < n_examples; ++ex) {
    const PhaseStats& d = data_stats[ex];
    const PhaseStats& m = model_stats[ex];
    const double inv_j = 1.0 / hidden_voxels[ex];
    const double inv_i = 1.0 / image_voxels[ex];
    for (std::size_t k = 0; k < dw.size(); ++k) {
      dw[k] += (d.wstat[k] - m.wstat[k]) * inv_j;
    }
    for (int k = 0; k < fv; ++k) dbox[k] += (d.box[k] - m.box[k]) * inv_j;
    for (int g = 0; g < m_count; ++g) {
      dh[g] += (d.hsum[g] - m.hsum[g]) * inv_j;
    }
    dv += (d.vsum - m.vsum) * inv_i;
    mean_v_data += d.vsum * inv_i;
    mean_v_model += m.vsum * inv_i;
    for (int g = 0; g < m_count; ++g) {
      mean_h_data[g] += d.hsum[g] * inv_j;
      mean_h_model[g] += m.hsum[g] * inv_j;
    }
  }
  const double inv_e = 1.0 / static_cast<double>(n_examples);
  const double mu = 0.5 * (mean_v_data + mean_v_model) * inv_e;
  std::vector<double> nu(m_count);
  for (int g = 0; g < m_count; ++g) {
    nu[g] = 0.5 * (mean_h_data[g] + mean_h_model[g]) * inv_e;
  }

  // Centered filter gradient, then bias gradients against the offsets.
  CrbmGradient grad;
  grad.filters.assign(dw.size(), 0.0);
  grad.hidden_bias.assign(m_count, 0.0);
  for (int g = 0; g < m_count; ++g) {
    double* gw = grad.filters.data() + static_cast<std::size_t>(g) * fv;
    const double* dwg = dw.data() + static_cast<std::size_t>(g) * fv;
    for (int k = 0; k < fv; ++k) {
      gw[k] = (dwg[k] - nu[g] * dbox[k] - mu * dh[g]) * inv_e;
    }
  }
  tie_blocks(params, grad.filters);
  double cross = 0.0;
  for (int g = 0; g < m_count; ++g) {
    const double* gw = grad.filters.data() + static_cast<std::size_t>(g) * fv;
    double wsum = 0.0;
    for (int k = 0; k < fv; ++k) wsum += gw[k];
    grad.hidden_bias[g] = dh[g] * inv_e - mu * wsum;
    cross += nu[g] * wsum;
  }
  grad.visible_bias = dv * inv_e - cross;
  return grad;
}

CrbmParams train_crbm(const std::vector<BinaryMap>& corpus,
                      const CrbmConfig& cfg, const BinaryMap* heldout,
                      std::vector<TrainLogEntry>* log) {
  if (corpus.empty()) {
    throw std::invalid_argument("train_crbm: empty corpus");
  }
  CrbmParams params = CrbmParams::random_init(cfg);
  const int batch = std::min<int>(cfg.minibatch, corpus.size());
  const int epoch = std::max<int>(1, corpus.size() / batch);

  std::vector<std::size_t> indices(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) indices[i] = i;

  for (int step = 0; step < cfg.steps; ++step) {
    // Partial Fisher-Yates draw of `batch` indices without replacement.
    Rng pick(cfg.seed, RngPurpose::CrbmMinibatch, step, 0);
    for (int k = 0; k < batch; ++k) {
      const std::size_t j = k + pick.below(indices.size() - k);
      std::swap(indices[k], indices[j]);
    }
    std::vector<const BinaryMap*> minibatch(batch);
    for (int k = 0; k < batch; ++k) minibatch[k] = &corpus[indices[k]];

    const CrbmGradient g = cd1_gradient(params, minibatch, cfg.seed, step);
    for (std::size_t k = 0; k < params.filters().size(); ++k) {
      params.filters()[k] += cfg.step_size * g.filters[k];
    }
    for (int m = 0; m < params.num_filters(); ++m) {
      params.set_hidden_bias(
          m, params.hidden_bias(m) + cfg.step_size * g.hidden_bias[m]);
    }
    params.set_visible_bias(params.visible_bias() +
                            cfg.step_size * g.visible_bias);

    if (log && ((step + 1) % epoch == 0 || step + 1 == cfg.steps)) {
      TrainLogEntry entry;
      entry.step = step + 1;
      entry.heldout_free_energy =
          heldout ? free_energy(params, *heldout) : 0.0;
      entry.batch_free_energy = free_energy(params, *minibatch[0]);
      log->push_back(entry);
    }
  }
  return params;
}

void save_crbm(const std::string& path, const CrbmParams& params,
               const CrbmConfig& cfg) {
  json meta;
  meta["num_filters"] = params.num_filters();
  meta["filter_extent"] = params.filter_extent();
  meta["block_extent"] = params.block_extent();
  meta["steps"] = cfg.steps;
  meta["step_size"] = cfg.step_size;
  meta["minibatch"] = cfg.minibatch;
  meta["init_sigma"] = cfg.init_sigma;
  meta["seed"] = cfg.seed;
  const std::string header = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write("BSEGCRBM", 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header.data(), header.size());
  out.write(reinterpret_cast<const char*>(params.filters().data()),
            params.filters().size() * sizeof(double));
  std::vector<double> hb(params.num_filters());
  for (int m = 0; m < params.num_filters(); ++m) hb[m] = params.hidden_bias(m);
  out.write(reinterpret_cast<const char*>(hb.data()),
            hb.size() * sizeof(double));
  const double a = params.visible_bias();
  out.write(reinterpret_cast<const char*>(&a), sizeof(double));
  if (!out) throw IoError("write failed: " + path);
}

CrbmParams load_crbm(const std::string& path, CrbmConfig* cfg_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "BSEGCRBM", 8) != 0) {
    throw IoError(path + ": not a cRBM checkpoint");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  json meta = json::parse(header);

  CrbmParams params(meta.at("num_filters").get<int>(),
                    meta.at("filter_extent").get<std::array<int, 3>>(),
                    meta.at("block_extent").get<std::array<int, 3>>());
  in.read(reinterpret_cast<char*>(params.filters().data()),
          params.filters().size() * sizeof(double));
  std::vector<double> hb(params.num_filters());
  in.read(reinterpret_cast<char*>(hb.data()), hb.size() * sizeof(double));
  for (int m = 0; m < params.num_filters(); ++m) {
    params.set_hidden_bias(m, hb[m]);
  }
  double a = 0.0;
  in.read(reinterpret_cast<char*>(&a), sizeof(double));
  params.set_visible_bias(a);
  if (!in) throw IoError(path + ": truncated cRBM checkpoint");

  if (cfg_out) {
    cfg_out->num_filters = params.num_filters();
    cfg_out->filter_size = params.filter_extent()[0];
    cfg_out->block_size = params.block_extent()[0];
    cfg_out->steps = meta.value("steps", 0);
    cfg_out->step_size = meta.value("step_size", 0.0);
    cfg_out->minibatch = meta.value("minibatch", 0);
    cfg_out->init_sigma = meta.value("init_sigma", 0.0);
    cfg_out->seed = meta.value("seed", 0ull);
  }
  return params;
}

}  // namespace bayeseg
