#include "bayeseg/bias_update.hpp"

#include <stdexcept>

namespace bayeseg {

bool solve_bias_coefficients(const MultiChannelImage& data,
                             const BiasBasis& basis,
                             const std::vector<std::vector<double>>& wfields,
                             const std::vector<std::vector<double>>& qfields,
                             Eigen::MatrixXd& coeffs, Rng* rng) {
  const int n = data.num_channels();
  std::vector<int> enabled;
  for (int c = 0; c < n; ++c) {
    if (data.channel(c).bias_field) enabled.push_back(c);
  }
  if (enabled.empty()) return false;

  const int p = basis.count();
  const int ne = static_cast<int>(enabled.size());
  Eigen::MatrixXd precision(ne * p, ne * p);
  Eigen::VectorXd rhs(ne * p);
  for (int a = 0; a < ne; ++a) {
    rhs.segment(a * p, p) = basis.project(qfields[enabled[a]]);
    for (int b = a; b < ne; ++b) {
      const Eigen::MatrixXd block =
          basis.weighted_gram(wfields[enabled[a] * n + enabled[b]]);
      precision.block(a * p, b * p, p, p) = block;
      if (b != a) {
        precision.block(b * p, a * p, p, p) = block.transpose();
      }
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    precision.diagonal().array() += 1e-10 * precision.trace() / (ne * p);
    llt.compute(precision);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error(
          "solve_bias_coefficients: singular precision matrix");
    }
  }
  Eigen::VectorXd sol = llt.solve(rhs);
  if (rng) {
    Eigen::VectorXd z(ne * p);
    for (int k = 0; k < z.size(); ++k) z[k] = rng->normal();
    sol += llt.matrixL().transpose().solve(z);
  }
  coeffs.setZero();
  for (int a = 0; a < ne; ++a) {
    coeffs.row(enabled[a]) = sol.segment(a * p, p).transpose();
  }
  return true;
}

}  // namespace bayeseg
