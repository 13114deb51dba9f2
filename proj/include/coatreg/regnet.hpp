#pragma once

// The registration network.
//
//   moving, fixed (full res, 1 channel)
//     -> shared two-layer stride-2 stem           quarter res, 16 ch each
//     -> co-attention                             O_mov, O_fix
//     -> concat [F_mov, F_fix, O_mov, O_fix]      quarter res, 64 ch
//     -> transposed conv x2                       half res
//     -> U-Net (skip connections)                 half res
//     -> mu / log-variance heads                  velocity posterior
//     -> sample z, scaling and squaring, x2 upsample -> full-res flow
//     -> trilinear pull-warp of the moving image
//
// All grids are in voxel units. The U-Net depth along z may be smaller than
// along x/y for thin volumes; both depths are explicit in the config.

#include <array>
#include <cstdint>
#include <vector>

#include "coatreg/coattention.hpp"
#include "coatreg/fields.hpp"

namespace coatreg {

struct NetworkConfig {
  Grid3 in_shape{32, 32, 16};
  std::array<std::size_t, 2> stem_channels{8, 16};
  std::size_t att_channels = 16;
  std::size_t unet_depth = 3;    // levels along x and y
  std::size_t unet_depth_z = 2;  // levels that also halve z
  std::vector<std::size_t> unet_channels{16, 32, 32, 32};
  std::size_t integration_steps = 7;
  std::uint64_t seed = 0;
  std::size_t attention_budget = kDefaultAttentionBudget;

  // Throws ShapeError/UsageError naming the violated constraint.
  void validate() const;

  // Deepest admissible configuration (depth <= 3) for the given input grid.
  static NetworkConfig for_shape(Grid3 shape, std::uint64_t seed = 0);

  [[nodiscard]] Grid3 half_shape() const { return {in_shape.w / 2, in_shape.h / 2, in_shape.d / 2}; }
  [[nodiscard]] Grid3 quarter_shape() const { return {in_shape.w / 4, in_shape.h / 4, in_shape.d / 4}; }
};

enum class SampleMode { sample, mean };

template <typename T>
struct Features {
  Tensor<T> moving;
  Tensor<T> fixed;
};

template <typename T>
struct RegistrationResult {
  Tensor<T> warped;
  DeformationField<T> flow;      // full resolution
  DeformationField<T> velocity;  // half resolution
  FlowDistribution<T> dist;
  CoAttentionOutput<T> attention;
  Features<T> features;
};

template <typename T>
class RegistrationNetwork {
 public:
  // Default initialization from config.seed: Glorot convolutions, zero
  // biases, alpha = 0, zero mu head, log-variance bias -10.
  explicit RegistrationNetwork(NetworkConfig config);

  [[nodiscard]] const NetworkConfig& config() const noexcept { return config_; }

  // Handles share storage with the network; mutate through them to update.
  [[nodiscard]] ParameterList<T> parameters() const;

  void zero_parameters();
  // Every parameter random, including heads and alphas. For gradient-flow
  // and gradient checks, where the default zero heads would hide paths.
  void randomize_parameters(std::uint64_t seed);

  [[nodiscard]] CoAttentionParams<T>& attention_params() noexcept { return attention_; }
  [[nodiscard]] const CoAttentionParams<T>& attention_params() const noexcept { return attention_; }

  // Replace the co-attention block by its plain h-projections.
  void set_attention_ablation(bool ablate) noexcept { ablate_ = ablate; }

  [[nodiscard]] Features<T> extract_features(const Tensor<T>& moving, const Tensor<T>& fixed) const;
  [[nodiscard]] CoAttentionOutput<T> attend(const Features<T>& features) const;
  [[nodiscard]] FlowDistribution<T> predict_flow_distribution(const Features<T>& features,
                                                              const CoAttentionOutput<T>& attention) const;

  // rng is required for SampleMode::sample and ignored otherwise.
  [[nodiscard]] RegistrationResult<T> register_pair(const Tensor<T>& moving, const Tensor<T>& fixed,
                                                    SampleMode mode, Rng* rng = nullptr) const;

 private:
  void build(Rng& rng);

  NetworkConfig config_;
  std::array<ConvLayer<T>, 2> stem_;
  CoAttentionParams<T> attention_;
  UpConvLayer<T> up_;
  std::vector<ConvLayer<T>> encoder_;  // encoder_[l - 1] produces level l
  std::vector<ConvLayer<T>> decoder_;  // decoder_[l - 1] produces level l - 1
  ConvLayer<T> mu_head_;
  ConvLayer<T> log_var_head_;
  bool ablate_ = false;
};

// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) (sample), or z = mu.
template <typename T>
DeformationField<T> sample_velocity(const FlowDistribution<T>& dist, SampleMode mode, Rng* rng);

// Scaling and squaring: u0 = z / 2^K, u <- u + u(x + u), K times.
template <typename T>
DeformationField<T> integrate_svf(const DeformationField<T>& velocity, std::size_t steps);

// Trilinear x2 resize with displacement values doubled (voxel units).
template <typename T>
DeformationField<T> upsample_flow(const DeformationField<T>& half);

}  // namespace coatreg
