#include "bayeseg/qp.hpp"

#include <cmath>
#include <vector>

#include "bayeseg/errors.hpp"

namespace bayeseg {

namespace {

// Solve G_PP lambda_P = c_P for the passive set.
Eigen::VectorXd solve_passive(const Eigen::MatrixXd& g,
                              const Eigen::VectorXd& c,
                              const std::vector<int>& passive) {
  const int k = static_cast<int>(passive.size());
  Eigen::MatrixXd gpp(k, k);
  Eigen::VectorXd cp(k);
  for (int i = 0; i < k; ++i) {
    cp[i] = c[passive[i]];
    for (int j = 0; j < k; ++j) {
      gpp(i, j) = g(passive[i], passive[j]);
    }
  }
  // Tiny ridge guards against duplicated / dependent rows.
  gpp.diagonal().array() += 1e-12 * (1.0 + gpp.diagonal().maxCoeff());
  return gpp.ldlt().solve(cp);
}

}  // namespace

Eigen::VectorXd solve_constrained_means(const Eigen::VectorXd& m,
                                        const Eigen::MatrixXd& s,
                                        const Eigen::MatrixXd& a,
                                        const Eigen::VectorXd& b) {
  const int rows = static_cast<int>(b.size());
  if (rows == 0) return m;
  if (a.rows() != rows || a.cols() != m.size() || s.rows() != m.size()) {
    throw std::invalid_argument("solve_constrained_means: dimension mismatch");
  }

  // Dual of the projection: min_{lambda>=0} 1/2 lambda^T G lambda - c^T lambda
  // with G = A S A^T and c = A m - b; the primal is mu = m - S A^T lambda.
  const Eigen::MatrixXd sat = s * a.transpose();
  const Eigen::MatrixXd g = a * sat;
  const Eigen::VectorXd c = a * m - b;

  if ((c.array() <= 0.0).all()) return m;  // already feasible

  const double scale = 1.0 + c.cwiseAbs().maxCoeff();
  const double tol = 1e-12 * scale;

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(rows);
  std::vector<bool> in_passive(rows, false);
  std::vector<int> passive;

  const int max_outer = 50 * rows + 100;
  for (int outer = 0; outer < max_outer; ++outer) {
    // Most violated KKT condition among clamped multipliers.
    const Eigen::VectorXd w = c - g * lambda;  // negative dual gradient
    int enter = -1;
    double wmax = tol;
    for (int r = 0; r < rows; ++r) {
      if (!in_passive[r] && w[r] > wmax) {
        wmax = w[r];
        enter = r;
      }
    }
    if (enter < 0) break;
    in_passive[enter] = true;
    passive.push_back(enter);

    for (int inner = 0; inner < max_outer; ++inner) {
      const Eigen::VectorXd sp = solve_passive(g, c, passive);
      bool all_positive = true;
      for (int i = 0; i < static_cast<int>(passive.size()); ++i) {
        if (sp[i] <= 0.0) {
          all_positive = false;
          break;
        }
      }
      if (all_positive) {
        lambda.setZero();
        for (int i = 0; i < static_cast<int>(passive.size()); ++i) {
          lambda[passive[i]] = sp[i];
        }
        break;
      }
      // Step toward sp until the first passive multiplier hits zero.
      double alpha = 1.0;
      for (int i = 0; i < static_cast<int>(passive.size()); ++i) {
        if (sp[i] <= 0.0) {
          const double li = lambda[passive[i]];
          const double denom = li - sp[i];
          if (denom > 0.0) alpha = std::min(alpha, li / denom);
        }
      }
      for (int i = 0; i < static_cast<int>(passive.size()); ++i) {
        const int r = passive[i];
        lambda[r] += alpha * (sp[i] - lambda[r]);
      }
      std::vector<int> next;
      for (int r : passive) {
        if (lambda[r] > tol) {
          next.push_back(r);
        } else {
          lambda[r] = 0.0;
          in_passive[r] = false;
        }
      }
      passive.swap(next);
      if (passive.empty()) break;
    }

    if (lambda.cwiseAbs().maxCoeff() > 1e14 * scale) {
      throw InfeasibleConstraints(
          "solve_constrained_means: diverging multipliers (infeasible "
          "system?)");
    }
  }

  const Eigen::VectorXd mu = m - sat * lambda;
  const double feas = rows ? (a * mu - b).maxCoeff() : 0.0;
  if (feas > 1e-6 * scale) {
    throw InfeasibleConstraints(
        "solve_constrained_means: no feasible solution found (residual " +
        std::to_string(feas) + ")");
  }
  return mu;
}

double kkt_residual(const Eigen::VectorXd& mu, const Eigen::VectorXd& m,
                    const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                    const Eigen::VectorXd& b, double active_tol) {
  // Gradient of 1/2 (mu-m)^T S^-1 (mu-m) must be a nonnegative combination
  // of the negated active-row normals.
  const Eigen::VectorXd grad = s.ldlt().solve(mu - m);
  const Eigen::VectorXd slack = b - a * mu;
  std::vector<int> active;
  for (int r = 0; r < slack.size(); ++r) {
    if (slack[r] < active_tol) active.push_back(r);
  }
  double primal_violation = 0.0;
  for (int r = 0; r < slack.size(); ++r) {
    primal_violation = std::max(primal_violation, -slack[r]);
  }
  if (active.empty()) {
    return std::max(grad.cwiseAbs().maxCoeff(), primal_violation);
  }
  Eigen::MatrixXd at(mu.size(), active.size());
  for (std::size_t i = 0; i < active.size(); ++i) {
    at.col(i) = a.row(active[i]).transpose();
  }
  // Nonnegative least-squares multipliers by exact cyclic coordinate
  // descent; robust to degenerate (rank-deficient) active sets.
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(active.size());
  Eigen::VectorXd resid = grad;  // grad + At*lambda
  for (int sweep = 0; sweep < 2000; ++sweep) {
    double change = 0.0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const double nn = at.col(i).squaredNorm();
      if (nn <= 0.0) continue;
      const double step = at.col(i).dot(resid) / nn;
      const double next = std::max(0.0, lambda[i] - step);
      const double delta = next - lambda[i];
      if (delta != 0.0) {
        resid += delta * at.col(i);
        lambda[i] = next;
        change = std::max(change, std::fabs(delta));
      }
    }
    if (change < 1e-14) break;
  }
  const double stationarity = resid.cwiseAbs().maxCoeff();
  return std::max(stationarity, primal_violation);
}

}  // namespace bayeseg
