#pragma once

// Co-attention between moving and fixed feature maps.
//
// With both maps flattened to N x C (N = W*H*D voxels):
//   S        = f(F_mov) g(F_fix)^T                         N x N
//   ATT_mov  = softmax_rows(S)   h2(F_fix)
//   ATT_fix  = softmax_rows(S^T) h1(F_mov)
//   O_mov    = h1(F_mov) + alpha_mov * sigma_mov(ATT_mov) . h1(F_mov)
//   O_fix    = h2(F_fix) + alpha_fix * sigma_fix(ATT_fix) . h2(F_fix)
// f, g, h1, h2 are 1x1x1 convolutions; sigma_* is a 1x1x1 convolution
// followed by the logistic sigmoid. S is not scaled before the softmax.

#include <cstddef>

#include "coatreg/layers.hpp"

namespace coatreg {

inline constexpr std::size_t kDefaultAttentionBudget = 8192;

template <typename T>
struct CoAttentionParams {
  ConvLayer<T> f, g, h1, h2;
  ConvLayer<T> gate_mov, gate_fix;
  Tensor<T> alpha_mov;  // one element
  Tensor<T> alpha_fix;

  // Glorot projections, alpha = 0.
  static CoAttentionParams create(std::size_t channels_in, std::size_t channels_att, Rng& rng);

  [[nodiscard]] std::size_t channels_in() const { return f.in_channels(); }
  [[nodiscard]] std::size_t channels_att() const { return f.out_channels(); }

  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct CoAttentionOutput {
  Tensor<T> similarity;  // S, N x N
  Tensor<T> att_mov;     // {D,H,W,C_att}
  Tensor<T> att_fix;
  Tensor<T> gate_mov;    // sigma_mov(ATT_mov), values in (0, 1)
  Tensor<T> gate_fix;
  Tensor<T> o_mov;
  Tensor<T> o_fix;
};

// Throws ShapeError when the inputs disagree, ResourceError when N exceeds
// max_positions (the N x N similarity matrix would not fit the budget).
template <typename T>
CoAttentionOutput<T> co_attention_forward(const Tensor<T>& f_mov, const Tensor<T>& f_fix,
                                          const CoAttentionParams<T>& params,
                                          std::size_t max_positions = kDefaultAttentionBudget);

// The block with its attention path removed: O_mov = h1(F_mov),
// O_fix = h2(F_fix). Used for ablation.
template <typename T>
CoAttentionOutput<T> plain_projection_forward(const Tensor<T>& f_mov, const Tensor<T>& f_fix,
                                              const CoAttentionParams<T>& params);

}  // namespace coatreg
