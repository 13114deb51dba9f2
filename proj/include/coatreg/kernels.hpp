#pragma once

// Raw numeric kernels behind the differentiable ops.
//
// Volumes are stored channel-innermost, then x, then y, then z:
//   offset(c, x, y, z) = c + C * (x + W * (y + H * z)).
// Convolution kernels are stored taps-outermost with output channels
// innermost: offset(co, ci, kx, ky, kz) = co + Cout * (ci + Cin * (kx + KW * (ky + KH * kz))).
//
// Every kernel exists twice: `kernels::` is the OpenMP version used by the
// ops, `kernels::reference::` is a plain serial loop nest kept for tests and
// benchmarks. Both compute each output element with the same summation
// order, so results agree bit for bit.

#include <array>
#include <cstddef>
#include <span>

namespace coatreg {

struct Grid3 {
  std::size_t w = 0;
  std::size_t h = 0;
  std::size_t d = 0;

  [[nodiscard]] constexpr std::size_t voxels() const noexcept { return w * h * d; }
  [[nodiscard]] constexpr std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + w * (y + h * z);
  }
  friend constexpr bool operator==(const Grid3&, const Grid3&) = default;
};

using Axes3 = std::array<std::size_t, 3>;  // per-axis values in (x, y, z) order

struct ConvGeometry {
  Grid3 in;
  Grid3 out;
  Grid3 kernel;
  Axes3 stride{1, 1, 1};
  Axes3 pad{0, 0, 0};
  std::size_t cin = 0;
  std::size_t cout = 0;

  [[nodiscard]] std::size_t taps() const noexcept { return kernel.voxels(); }
  [[nodiscard]] std::size_t weight_size() const noexcept { return taps() * cin * cout; }
};

// Output grid of a strided convolution: floor((n + 2p - k) / s) + 1 per axis.
ConvGeometry make_conv_geometry(Grid3 in, std::size_t cin, std::size_t cout, Grid3 kernel, Axes3 stride, Axes3 pad);

// Single-tap trilinear stencil along one axis with border clamping.
struct LinearTap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double frac = 0.0;    // weight of i1
  bool clamped = false; // coordinate was outside [0, n-1]
};

LinearTap linear_tap(double coord, std::size_t n) noexcept;

namespace kernels {

template <typename T>
void conv3d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

// Overwrites grad_in.
template <typename T>
void conv3d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);

// Overwrites grad_weight and grad_bias (grad_bias may be empty).
template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

// c[m x n] = op(a) * op(b), op = optional transpose. a is stored as [m x k]
// (or [k x m] when trans_a), b as [k x n] (or [n x k] when trans_b).
template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, bool trans_a,
            std::span<const T> b, bool trans_b, std::span<T> c);

// out(x) = vol(x + disp(x)), trilinear with border clamp. disp has 3
// channels (dx, dy, dz) in voxel units on the same grid as vol.
template <typename T>
void grid_sample_forward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                         std::span<T> out);

// Either gradient span may be empty to skip it. grad_vol is overwritten.
template <typename T>
void grid_sample_backward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                          std::span<const T> grad_out, std::span<T> grad_vol, std::span<T> grad_disp);

// Trilinear resize, align-corners-false: src = (dst + 0.5) * in / out - 0.5.
template <typename T>
void resize_forward(Grid3 in, Grid3 out, std::size_t channels, std::span<const T> src, std::span<T> dst);

template <typename T>
void resize_backward(Grid3 in, Grid3 out, std::size_t channels, std::span<const T> grad_dst,
                     std::span<T> grad_src);

namespace reference {

template <typename T>
void conv3d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);
template <typename T>
void conv3d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);
template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);
template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, bool trans_a,
            std::span<const T> b, bool trans_b, std::span<T> c);
template <typename T>
void grid_sample_forward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                         std::span<T> out);
template <typename T>
void grid_sample_backward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                          std::span<const T> grad_out, std::span<T> grad_vol, std::span<T> grad_disp);

}  // namespace reference
}  // namespace kernels
}  // namespace coatreg
