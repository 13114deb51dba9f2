#pragma once

// Differentiable tensor operations. Every op validates shapes (ShapeError),
// rejects non-finite results (NumericError) and records itself on the active
// tape when one of its inputs is tracked.

#include <span>
#include <vector>

#include "coatreg/tensor.hpp"

namespace coatreg {

enum class Padding { same, valid };

struct ConvOptions {
  Axes3 stride{1, 1, 1};
  Padding padding = Padding::same;
};

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// a * alpha where alpha is a one-element (possibly learnable) tensor.
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& alpha);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.2));
template <typename T> Tensor<T> exp(const Tensor<T>& a);
// Gradient is zero outside [lo, hi].
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

template <typename T> Tensor<T> sum(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);  // rank 2
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Numerically stable (max-subtracted) softmax along one axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);

// Concatenates volumes along the channel (last) axis.
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

// input {D,H,W,Cin}; weight {KD,KH,KW,Cin,Cout}; bias {Cout} or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions options = {});

// Transposed convolution without padding: output extent (n - 1) * s + k.
// input {D,H,W,Cin}; weight {KD,KH,KW,Cout,Cin}; bias {Cout} or undefined.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Axes3 stride);

// Pull-warp: out(x) = volume(x + displacement(x)), trilinear, border clamp.
// displacement {D,H,W,3} in voxel units, channel order (dx, dy, dz).
template <typename T> Tensor<T> grid_sample(const Tensor<T>& volume, const Tensor<T>& displacement);

// Trilinear resize (align-corners false) to an explicit grid.
template <typename T> Tensor<T> resize_to(const Tensor<T>& input, Grid3 target);
// Isotropic resize by 2 or 1/2; halving requires even extents.
template <typename T> Tensor<T> resize_trilinear(const Tensor<T>& input, double factor);

}  // namespace coatreg
