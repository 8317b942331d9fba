#pragma once

#include <Eigen/Dense>

namespace bayeseg {

/// Minimizes (mu - m)^T S^-1 (mu - m) subject to A mu <= b, with S SPD
/// (block-diagonal in the intended use). Solved by an active-set iteration
/// on the dual, which never needs a feasible starting point; an infeasible
/// system raises InfeasibleConstraints.
Eigen::VectorXd solve_constrained_means(const Eigen::VectorXd& m,
                                        const Eigen::MatrixXd& s,
                                        const Eigen::MatrixXd& a,
                                        const Eigen::VectorXd& b);

/// Numeric KKT check used by the test suites: stationarity residual of the
/// primal gradient against nonnegative multipliers on active rows.
double kkt_residual(const Eigen::VectorXd& mu, const Eigen::VectorXd& m,
                    const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                    const Eigen::VectorXd& b, double active_tol = 1e-7);

}  // namespace bayeseg
