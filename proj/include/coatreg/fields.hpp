#pragma once

#include "coatreg/tensor.hpp"

namespace coatreg {

enum class FieldResolution { half, full };

// Displacement field in voxel units of its own grid, {D,H,W,3} with channel
// order (dx, dy, dz). Also used for velocity fields.
template <typename T>
struct DeformationField {
  Tensor<T> disp;
  FieldResolution resolution = FieldResolution::full;
};

// Diagonal Gaussian posterior over the half-resolution velocity field.
// log_var is already clamped to [kLogVarMin, kLogVarMax].
template <typename T>
struct FlowDistribution {
  Tensor<T> mu;
  Tensor<T> log_var;
};

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 5.0;

}  // namespace coatreg
