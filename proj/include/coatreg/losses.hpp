#pragma once

// Training objective: global normalized cross-correlation, KL divergence of
// the velocity posterior against a Laplacian-precision smoothness prior, and
// their weighted sum.

#include "coatreg/fields.hpp"
#include "coatreg/tensor.hpp"

namespace coatreg {

// How the KL term enters the total. per_voxel divides kl_loss by the number
// of grid voxels, the convention of the VoxelMorph reference code
// (0.5 * ndims * mean over entries); sum uses kl_loss as is.
enum class KlNormalization { per_voxel, sum };

struct LossWeights {
  double lambda_sim = 20.0;   // weight of the NCC term
  double lambda_kl = 0.1;     // weight of the KL term
  double prior_lambda = 10.0; // precision scale of the smoothness prior
  KlNormalization kl_normalization = KlNormalization::per_voxel;

  void validate() const;
};

struct NccDiagnostics {
  bool warped_constant = false;
  bool fixed_constant = false;
};

inline constexpr double kNccEpsilon = 1e-8;

// 1 - Pearson correlation over all voxels, in [0, 2]. When either image has
// (near) zero variance the correlation is taken as 0, the loss is 1 and no
// gradient flows; the case is reported through diag.
template <typename T>
Tensor<T> ncc_loss(const Tensor<T>& warped, const Tensor<T>& fixed, NccDiagnostics* diag = nullptr);

// Closed-form KL(q || p) between q = N(mu, diag(exp(log_var))) and
// p = N(0, (prior_lambda * L)^-1), L the 6-neighbour graph Laplacian of the
// grid applied per displacement channel:
//   0.5 * [ prior_lambda * sum_j deg_j * exp(log_var_j)
//         + prior_lambda * sum_{edges (i,j)} (mu_i - mu_j)^2
//         - sum_j log_var_j ]
// Terms independent of (mu, log_var) are dropped.
template <typename T>
Tensor<T> kl_loss(const Tensor<T>& mu, const Tensor<T>& log_var, double prior_lambda);

template <typename T>
Tensor<T> kl_loss(const FlowDistribution<T>& dist, double prior_lambda) {
  return kl_loss(dist.mu, dist.log_var, prior_lambda);
}

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  Tensor<T> ncc;
  Tensor<T> kl;  // after normalization
};

// lambda_sim * ncc_loss + lambda_kl * kl_loss [/ voxels].
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& warped, const Tensor<T>& fixed, const FlowDistribution<T>& dist,
                            const LossWeights& weights, NccDiagnostics* diag = nullptr);

}  // namespace coatreg
