#include "bayeseg/dct_basis.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace bayeseg {

namespace {

Eigen::MatrixXd dct_factor(int n, int p) {
  // Orthonormal DCT-II: f_k(x) = s_k cos(pi (2x+1) k / (2n)).
  Eigen::MatrixXd f(n, p);
  const double pi = std::acos(-1.0);
  for (int k = 0; k < p; ++k) {
    const double scale = (k == 0) ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int x = 0; x < n; ++x) {
      f(x, k) = scale * std::cos(pi * (2.0 * x + 1.0) * k / (2.0 * n));
    }
  }
  return f;
}

}  // namespace

BiasBasis::BiasBasis(GridShape shape, std::array<int, 3> per_axis)
    : shape_(shape), px_(per_axis[0]), py_(per_axis[1]), pz_(per_axis[2]) {
  if (px_ < 1 || py_ < 1 || pz_ < 1) {
    throw std::invalid_argument("BiasBasis: per-axis count must be >= 1");
  }
  if (px_ > shape.nx || py_ > shape.ny || pz_ > shape.nz) {
    throw std::invalid_argument(
        "BiasBasis: per-axis count exceeds axis length");
  }
  fx_ = dct_factor(shape.nx, px_);
  fy_ = dct_factor(shape.ny, py_);
  fz_ = dct_factor(shape.nz, pz_);
}

BiasBasis build_dct_basis(const GridShape& shape, int per_axis_count) {
  return BiasBasis(shape, {per_axis_count, per_axis_count, per_axis_count});
}

Eigen::VectorXd BiasBasis::row(std::size_t voxel) const {
  const auto c = shape_.coords(voxel);
  Eigen::VectorXd phi(count());
  int p = 0;
  for (int kx = 0; kx < px_; ++kx) {
    for (int ky = 0; ky < py_; ++ky) {
      for (int kz = 0; kz < pz_; ++kz) {
        phi[p++] = fx_(c[0], kx) * fy_(c[1], ky) * fz_(c[2], kz);
      }
    }
  }
  return phi;
}

Eigen::MatrixXd BiasBasis::dense() const {
  const std::size_t n = shape_.voxels();
  Eigen::MatrixXd m(n, count());
  for (std::size_t i = 0; i < n; ++i) m.row(i) = row(i).transpose();
  return m;
}

Eigen::VectorXd BiasBasis::project(const std::vector<double>& field) const {
  if (field.size() != shape_.voxels()) {
    throw std::invalid_argument("BiasBasis::project: field size mismatch");
  }
  // Contract x, then y, then z.
  const int ny = shape_.ny, nz = shape_.nz, nx = shape_.nx;
  Eigen::MatrixXd a1 = Eigen::MatrixXd::Zero(ny * nz, px_);  // (y,z) x kx
  std::size_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      auto row1 = a1.row(z * ny + y);
      for (int x = 0; x < nx; ++x, ++i) {
        row1 += field[i] * fx_.row(x);
      }
    }
  }
  Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(nz, px_ * py_);  // z x (kx,ky)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int kx = 0; kx < px_; ++kx) {
        const double v = a1(z * ny + y, kx);
        for (int ky = 0; ky < py_; ++ky) {
          a2(z, kx * py_ + ky) += v * fy_(y, ky);
        }
      }
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(count());
  for (int z = 0; z < nz; ++z) {
    for (int kx = 0; kx < px_; ++kx) {
      for (int ky = 0; ky < py_; ++ky) {
        const double v = a2(z, kx * py_ + ky);
        for (int kz = 0; kz < pz_; ++kz) {
          out[(kx * py_ + ky) * pz_ + kz] += v * fz_(z, kz);
        }
      }
    }
  }
  return out;
}

void BiasBasis::evaluate(const Eigen::VectorXd& coeffs,
                         std::vector<double>& out) const {
  if (coeffs.size() != count()) {
    throw std::invalid_argument("BiasBasis::evaluate: coefficient size");
  }
  const int ny = shape_.ny, nz = shape_.nz, nx = shape_.nx;
  // (kx,ky) x z
  Eigen::MatrixXd a1 = Eigen::MatrixXd::Zero(px_ * py_, nz);
  for (int kx = 0; kx < px_; ++kx) {
    for (int ky = 0; ky < py_; ++ky) {
      for (int kz = 0; kz < pz_; ++kz) {
        const double c = coeffs[(kx * py_ + ky) * pz_ + kz];
        if (c == 0.0) continue;
        for (int z = 0; z < nz; ++z) {
          a1(kx * py_ + ky, z) += c * fz_(z, kz);
        }
      }
    }
  }
  // kx x (y,z)
  Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(px_, ny * nz);
  for (int kx = 0; kx < px_; ++kx) {
    for (int ky = 0; ky < py_; ++ky) {
      for (int z = 0; z < nz; ++z) {
        const double v = a1(kx * py_ + ky, z);
        if (v == 0.0) continue;
        for (int y = 0; y < ny; ++y) {
          a2(kx, z * ny + y) += v * fy_(y, ky);
        }
      }
    }
  }
  out.assign(shape_.voxels(), 0.0);
  std::size_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      const auto col = a2.col(z * ny + y);
      for (int x = 0; x < nx; ++x, ++i) {
        double v = 0.0;
        for (int kx = 0; kx < px_; ++kx) v += fx_(x, kx) * col[kx];
        out[i] = v;
      }
    }
  }
}

Eigen::MatrixXd BiasBasis::weighted_gram(
    const std::vector<double>& weights) const {
  if (weights.size() != shape_.voxels()) {
    throw std::invalid_argument("BiasBasis::weighted_gram: size mismatch");
  }
  const int ny = shape_.ny, nz = shape_.nz, nx = shape_.nx;
  const int qx = px_ * px_, qy = py_ * py_, qz = pz_ * pz_;

  // Per-axis pair tables T[x][(k,k')] = f_k(x) f_k'(x).
  Eigen::MatrixXd tx(nx, qx), ty(ny, qy), tz(nz, qz);
  for (int x = 0; x < nx; ++x) {
    for (int a = 0; a < px_; ++a)
      for (int b = 0; b < px_; ++b) tx(x, a * px_ + b) = fx_(x, a) * fx_(x, b);
  }
  for (int y = 0; y < ny; ++y) {
    for (int a = 0; a < py_; ++a)
      for (int b = 0; b < py_; ++b) ty(y, a * py_ + b) = fy_(y, a) * fy_(y, b);
  }
  for (int z = 0; z < nz; ++z) {
    for (int a = 0; a < pz_; ++a)
      for (int b = 0; b < pz_; ++b) tz(z, a * pz_ + b) = fz_(z, a) * fz_(z, b);
  }

  // Contract x: (y,z) x qx
  Eigen::MatrixXd a1 = Eigen::MatrixXd::Zero(ny * nz, qx);
  std::size_t i = 0;
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      auto row1 = a1.row(z * ny + y);
      for (int x = 0; x < nx; ++x, ++i) {
        const double w = weights[i];
        if (w != 0.0) row1 += w * tx.row(x);
      }
    }
  }
  // Contract y: z x (qx*qy)
  Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(nz, qx * qy);
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      const auto row1 = a1.row(z * ny + y);
      for (int pq = 0; pq < qx; ++pq) {
        const double v = row1[pq];
        if (v == 0.0) continue;
        for (int rs = 0; rs < qy; ++rs) {
          a2(z, pq * qy + rs) += v * ty(y, rs);
        }
      }
    }
  }
  // Contract z and scatter into the P x P Gram matrix.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(count(), count());
  for (int z = 0; z < nz; ++z) {
    for (int pq = 0; pq < qx; ++pq) {
      const int ax = pq / px_, bx = pq % px_;
      for (int rs = 0; rs < qy; ++rs) {
        const double v = a2(z, pq * qy + rs);
        if (v == 0.0) continue;
        const int ay = rs / py_, by = rs % py_;
        const int rowbase = (ax * py_ + ay) * pz_;
        const int colbase = (bx * py_ + by) * pz_;
        for (int tu = 0; tu < qz; ++tu) {
          const int az = tu / pz_, bz = tu % pz_;
          gram(rowbase + az, colbase + bz) += v * tz(z, tu);
        }
      }
    }
  }
  return gram;
}

}  // namespace bayeseg
