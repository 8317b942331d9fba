#include "bayeseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bayeseg/labels.hpp"

namespace bayeseg {

namespace {

std::vector<std::size_t> surface_voxels(const BinaryMap& m) {
  const GridShape& s = m.shape();
  std::vector<std::size_t> out;
  for (int z = 0; z < s.nz; ++z) {
    for (int y = 0; y < s.ny; ++y) {
      for (int x = 0; x < s.nx; ++x) {
        if (!m.at(x, y, z)) continue;
        const bool surface =
            x == 0 || !m.at(x - 1, y, z) || x == s.nx - 1 ||
            !m.at(x + 1, y, z) || y == 0 || !m.at(x, y - 1, z) ||
            y == s.ny - 1 || !m.at(x, y + 1, z) || z == 0 ||
            !m.at(x, y, z - 1) || z == s.nz - 1 || !m.at(x, y, z + 1);
        if (surface) out.push_back(s.index(x, y, z));
      }
    }
  }
  return out;
}

double percentile_value(std::vector<double>& values, double percentile) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  // nearest-rank
  std::size_t idx = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n)));
  if (idx > 0) --idx;
  if (idx >= n) idx = n - 1;
  return values[idx];
}

// Felzenszwalb-Huttenlocher 1D lower envelope of parabolas on arbitrary
// sample coordinates.
void edt_1d(const std::vector<double>& f, const std::vector<double>& coord,
            std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<double> zb(n + 1);
  int k = 0;
  v[0] = 0;
  zb[0] = -std::numeric_limits<double>::infinity();
  zb[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int p, int q) {
    return (f[p] + coord[p] * coord[p] - (f[q] + coord[q] * coord[q])) /
           (2.0 * coord[p] - 2.0 * coord[q]);
  };
  for (int q = 1; q < n; ++q) {
    if (f[q] == std::numeric_limits<double>::infinity()) continue;
    if (f[v[k]] == std::numeric_limits<double>::infinity()) {
      v[k] = q;
      continue;
    }
    double s = intersect(q, v[k]);
    while (k > 0 && s <= zb[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    zb[k] = s;
    zb[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    if (f[v[0]] == std::numeric_limits<double>::infinity()) {
      out[q] = std::numeric_limits<double>::infinity();
      continue;
    }
    while (zb[k + 1] < coord[q]) ++k;
    const double d = coord[q] - coord[v[k]];
    out[q] = d * d + f[v[k]];
  }
}

// Squared EDT (mm^2) to the given seed voxels over the whole grid.
std::vector<double> squared_edt(const GridShape& s, const Spacing& spacing,
                                const std::vector<std::size_t>& seeds) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(s.voxels(), inf);
  for (std::size_t i : seeds) dist[i] = 0.0;

  // x pass
  {
    std::vector<double> f(s.nx), coord(s.nx), out(s.nx);
    for (int x = 0; x < s.nx; ++x) coord[x] = x * spacing.dx;
    for (int z = 0; z < s.nz; ++z) {
      for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) f[x] = dist[s.index(x, y, z)];
        edt_1d(f, coord, out);
        for (int x = 0; x < s.nx; ++x) dist[s.index(x, y, z)] = out[x];
      }
    }
  }
  // y pass
  {
    std::vector<double> f(s.ny), coord(s.ny), out(s.ny);
    for (int y = 0; y < s.ny; ++y) coord[y] = y * spacing.dy;
    for (int z = 0; z < s.nz; ++z) {
      for (int x = 0; x < s.nx; ++x) {
        for (int y = 0; y < s.ny; ++y) f[y] = dist[s.index(x, y, z)];
        edt_1d(f, coord, out);
        for (int y = 0; y < s.ny; ++y) dist[s.index(x, y, z)] = out[y];
      }
    }
  }
  // z pass
  {
    std::vector<double> f(s.nz), coord(s.nz), out(s.nz);
    for (int z = 0; z < s.nz; ++z) coord[z] = z * spacing.dz;
    for (int y = 0; y < s.ny; ++y) {
      for (int x = 0; x < s.nx; ++x) {
        for (int z = 0; z < s.nz; ++z) f[z] = dist[s.index(x, y, z)];
        edt_1d(f, coord, out);
        for (int z = 0; z < s.nz; ++z) dist[s.index(x, y, z)] = out[z];
      }
    }
  }
  return dist;
}

double directed_percentile(const GridShape& shape, const Spacing& sp,
                           const std::vector<std::size_t>& from,
                           const std::vector<std::size_t>& to,
                           double percentile) {
  std::vector<double> dists;
  dists.reserve(from.size());
  if (from.size() <= 10000 && to.size() <= 10000) {
    std::vector<std::array<double, 3>> tomm(to.size());
    for (std::size_t k = 0; k < to.size(); ++k) {
      const auto c = shape.coords(to[k]);
      tomm[k] = {c[0] * sp.dx, c[1] * sp.dy, c[2] * sp.dz};
    }
    for (std::size_t i : from) {
      const auto c = shape.coords(i);
      const double px = c[0] * sp.dx, py = c[1] * sp.dy, pz = c[2] * sp.dz;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : tomm) {
        const double dx = px - t[0], dy = py - t[1], dz = pz - t[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      dists.push_back(std::sqrt(best));
    }
  } else {
    const std::vector<double> edt = squared_edt(shape, sp, to);
    for (std::size_t i : from) {
      dists.push_back(std::sqrt(edt[i]));
    }
  }
  return percentile_value(dists, percentile);
}

}  // namespace

double dice(const BinaryMap& a, const BinaryMap& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("dice: shape mismatch");
  }
  std::size_t both = 0, ca = 0, cb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool va = a.get(i);
    const bool vb = b.get(i);
    ca += va;
    cb += vb;
    both += va && vb;
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(ca + cb);
}

std::optional<double> robust_hausdorff(const BinaryMap& a, const BinaryMap& b,
                                       const Spacing& spacing,
                                       double percentile) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("robust_hausdorff: shape mismatch");
  }
  const std::vector<std::size_t> sa = surface_voxels(a);
  const std::vector<std::size_t> sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) return std::nullopt;
  const double ab =
      directed_percentile(a.shape(), spacing, sa, sb, percentile);
  const double ba =
      directed_percentile(a.shape(), spacing, sb, sa, percentile);
  return std::max(ab, ba);
}

BinaryMap structure_mask(const JointLabelState& state,
                         const std::string& name) {
  BinaryMap m(state.shape());
  if (name == "whole_tumor") {
    for (std::size_t i = 0; i < state.size(); ++i) m.set(i, state.tumor(i));
    return m;
  }
  if (name == "core") {
    for (std::size_t i = 0; i < state.size(); ++i) {
      m.set(i, state.tumor(i) && state.core(i));
    }
    return m;
  }
  if (name == "edema") {
    for (std::size_t i = 0; i < state.size(); ++i) {
      m.set(i, state.tumor(i) && !state.core(i));
    }
    return m;
  }
  const auto& table = default_label_table();
  for (int l = 0; l < kNumLabels; ++l) {
    if (table.names[l] == name) {
      for (std::size_t i = 0; i < state.size(); ++i) {
        m.set(i, state.label(i) == l);
      }
      return m;
    }
  }
  throw std::invalid_argument("structure_mask: unknown structure '" + name +
                              "'");
}

EvalReport evaluate(const JointLabelState& pred, const JointLabelState& truth,
                    const std::vector<std::string>& structures,
                    const Spacing& spacing) {
  if (pred.shape() != truth.shape()) {
    throw std::invalid_argument("evaluate: shape mismatch");
  }
  EvalReport report;
  for (const std::string& name : structures) {
    const BinaryMap mp = structure_mask(pred, name);
    const BinaryMap mt = structure_mask(truth, name);
    StructureScore score;
    score.name = name;
    score.dice = dice(mp, mt);
    score.hausdorff_mm = robust_hausdorff(mp, mt, spacing);
    score.pred_voxels = mp.count();
    score.truth_voxels = mt.count();
    report.structures.push_back(std::move(score));
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : structures) {
    nlohmann::json e;
    e["structure"] = s.name;
    e["dice"] = s.dice;
    if (s.hausdorff_mm) {
      e["hausdorff_mm"] = *s.hausdorff_mm;
    } else {
      e["hausdorff_mm"] = nullptr;
    }
    e["pred_voxels"] = s.pred_voxels;
    e["truth_voxels"] = s.truth_voxels;
    j.push_back(e);
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "structure,dice,hausdorff_mm,pred_voxels,truth_voxels\n";
  for (const auto& s : structures) {
    out << s.name << "," << s.dice << ",";
    if (s.hausdorff_mm) {
      out << *s.hausdorff_mm;
    } else {
      out << "missing";
    }
    out << "," << s.pred_voxels << "," << s.truth_voxels << "\n";
  }
  return out.str();
}

}  // namespace bayeseg
