#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayeseg/dct_basis.hpp"
#include "bayeseg/labels.hpp"
#include "bayeseg/volume.hpp"

namespace bayeseg {

/// Fixed ordering of Gaussian components across all GMMs; the stacked mean
/// vector and the constraint system both use it.
struct ComponentLayout {
  std::array<int, kNumGmms> counts{};
  std::array<int, kNumGmms> offsets{};
  int total = 0;

  static ComponentLayout from(const GmmMapping& mapping);
  int global(int gmm, int g) const { return offsets[gmm] + g; }
};

/// Linear constraints A mu <= b on the stacked mean vector.
struct ConstraintSystem {
  Eigen::MatrixXd a;  // rows x (total components * N); empty when no rows
  Eigen::VectorXd b;
  std::vector<std::string> names;

  int rows() const { return static_cast<int>(b.size()); }
  bool feasible(const Eigen::VectorXd& mu, double tol = 1e-9) const;
};

/// theta: per-GMM weights, per-component means/covariances, and the bias
/// field coefficient matrix C (rows structurally zero for channels with the
/// bias field disabled).
struct LikelihoodParams {
  int num_channels = 0;
  ComponentLayout layout;
  std::vector<Eigen::VectorXd> weights;      // per GMM, simplex of size G_x
  std::vector<Eigen::VectorXd> means;        // per global component, size N
  std::vector<Eigen::MatrixXd> covariances;  // per global component, N x N
  Eigen::MatrixXd bias_coeffs;               // N x P (P may be 0)

  static LikelihoodParams zeros(const ComponentLayout& layout,
                                int num_channels, int num_basis);

  Eigen::VectorXd stacked_means() const;
  void set_stacked_means(const Eigen::VectorXd& mu);
};

struct HyperPriors {
  double alpha0 = 1.0;
  std::vector<Eigen::MatrixXd> scatter0;  // per GMM
  std::vector<double> strength0;          // per GMM
  ConstraintSystem constraints;
};

double gaussian_log_density(const Eigen::VectorXd& x,
                            const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov);

/// p_i(d | x, theta) = sum_g gamma_xg N(d | mu_xg + C phi, Sigma_xg).
double voxel_likelihood(const Eigen::VectorXd& d, int gmm,
                        const LikelihoodParams& theta,
                        const Eigen::VectorXd& phi);

/// Emits the mean constraints for the channels actually present; max/min
/// over the two reference classes become one row per reference. Missing
/// FLAIR or T1c just drops the corresponding rows.
ConstraintSystem build_constraints(const ComponentLayout& layout,
                                   const std::vector<Modality>& channels);

/// Inverse-Wishart hyperparameters from global data statistics:
/// strength nu = N + I_x / (10 G_x), scatter nu X^-2 diag(channel variance)
/// with X = 12 (X = 1 for the deliberately wide unspecified-tissue prior).
/// Zero-variance channels are floored at 1e-8.
std::pair<Eigen::MatrixXd, double> scatter_hyperprior(
    const MultiChannelImage& data, int components, double expected_voxels,
    bool wide);

/// alpha_0 = 1 + 1e-4 I.
double dirichlet_strength(double num_voxels);

/// log p(theta): Dirichlet + inverse-Wishart terms when the mean constraints
/// hold, -inf otherwise (uniform over C and the means).
double log_prior_theta(const LikelihoodParams& theta, const HyperPriors& hyper);

/// Expected voxel count per GMM from the atlas mass (normal classes) and the
/// simplified-prior tumor fractions (tumor classes).
class AtlasPrior;
std::vector<double> expected_gmm_voxels(const AtlasPrior& atlas,
                                        const GmmMapping& mapping,
                                        double tumor_fraction,
                                        double core_fraction);

/// Builds the full hyperprior set for a dataset.
HyperPriors build_hyperpriors(const MultiChannelImage& data,
                              const AtlasPrior& atlas,
                              const GmmMapping& mapping,
                              const ComponentLayout& layout,
                              double tumor_fraction, double core_fraction);

/// Precomputed per-component Cholesky factors and bias fields for the hot
/// loops. Read-only once built; safe to share across threads.
class LikelihoodEvaluator {
 public:
  LikelihoodEvaluator(const MultiChannelImage& data, const BiasBasis* basis,
                      const LikelihoodParams& theta);

  int num_channels() const { return n_; }

  /// d_i - C phi_i into out[0..N).
  void residual(std::size_t voxel, double* out) const;

  /// log p(d_i | x, theta).
  double log_gmm(std::size_t voxel, int gmm) const;

  /// log of gamma_xg N(d_i | ...) for every component of one GMM.
  void component_log_terms(std::size_t voxel, int gmm, double* out) const;

  const std::vector<double>& bias_field(int channel) const {
    return bias_[channel];
  }

 private:
  double component_log_density(const double* r, int comp) const;

  const MultiChannelImage& data_;
  const LikelihoodParams& theta_;
  int n_;
  std::vector<std::vector<double>> bias_;     // per channel, I values
  std::vector<const double*> channel_ptr_;
  std::vector<Eigen::MatrixXd> inv_chol_;     // per component, L^-1
  std::vector<double> log_const_;             // per component
};

void save_theta(const std::string& path, const LikelihoodParams& theta,
                const std::vector<std::string>& channel_tags);
LikelihoodParams load_theta(const std::string& path,
                            std::vector<std::string>* channel_tags = nullptr);

}  // namespace bayeseg
