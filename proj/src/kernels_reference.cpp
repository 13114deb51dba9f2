// Serial loop-nest versions of the convolution, matmul and grid-sample
// kernels. Straightforward index arithmetic, no OpenMP, no buffering.

#include <cmath>
#include <cstdint>

#include "coatreg/kernels.hpp"

namespace coatreg::kernels::reference {
namespace {

using Index = std::int64_t;

inline std::size_t woff(const ConvGeometry& g, std::size_t kx, std::size_t ky, std::size_t kz, std::size_t ci,
                        std::size_t co) {
  return co + g.cout * (ci + g.cin * g.kernel.index(kx, ky, kz));
}

}  // namespace

template <typename T>
void conv3d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  for (std::size_t oz = 0; oz < g.out.d; ++oz)
    for (std::size_t oy = 0; oy < g.out.h; ++oy)
      for (std::size_t ox = 0; ox < g.out.w; ++ox)
        for (std::size_t co = 0; co < g.cout; ++co) {
          T s = bias.empty() ? T(0) : bias[co];
          for (std::size_t kz = 0; kz < g.kernel.d; ++kz)
            for (std::size_t ky = 0; ky < g.kernel.h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel.w; ++kx) {
                const Index ix = static_cast<Index>(ox * g.stride[0] + kx) - static_cast<Index>(g.pad[0]);
                const Index iy = static_cast<Index>(oy * g.stride[1] + ky) - static_cast<Index>(g.pad[1]);
                const Index iz = static_cast<Index>(oz * g.stride[2] + kz) - static_cast<Index>(g.pad[2]);
                if (ix < 0 || iy < 0 || iz < 0 || ix >= static_cast<Index>(g.in.w) ||
                    iy >= static_cast<Index>(g.in.h) || iz >= static_cast<Index>(g.in.d))
                  continue;
                for (std::size_t ci = 0; ci < g.cin; ++ci)
                  s += in[ci + g.cin * g.in.index(ix, iy, iz)] * weight[woff(g, kx, ky, kz, ci, co)];
              }
          out[co + g.cout * g.out.index(ox, oy, oz)] = s;
        }
}

template <typename T>
void conv3d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  for (std::size_t iz = 0; iz < g.in.d; ++iz)
    for (std::size_t iy = 0; iy < g.in.h; ++iy)
      for (std::size_t ix = 0; ix < g.in.w; ++ix)
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
          T s = 0;
          for (std::size_t kz = 0; kz < g.kernel.d; ++kz)
            for (std::size_t ky = 0; ky < g.kernel.h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel.w; ++kx) {
                const Index tx = static_cast<Index>(ix + g.pad[0]) - static_cast<Index>(kx);
                const Index ty = static_cast<Index>(iy + g.pad[1]) - static_cast<Index>(ky);
                const Index tz = static_cast<Index>(iz + g.pad[2]) - static_cast<Index>(kz);
                if (tx < 0 || ty < 0 || tz < 0) continue;
                if (tx % static_cast<Index>(g.stride[0]) || ty % static_cast<Index>(g.stride[1]) ||
                    tz % static_cast<Index>(g.stride[2]))
                  continue;
                const auto ox = static_cast<std::size_t>(tx) / g.stride[0];
                const auto oy = static_cast<std::size_t>(ty) / g.stride[1];
                const auto oz = static_cast<std::size_t>(tz) / g.stride[2];
                if (ox >= g.out.w || oy >= g.out.h || oz >= g.out.d) continue;
                for (std::size_t co = 0; co < g.cout; ++co)
                  s += grad_out[co + g.cout * g.out.index(ox, oy, oz)] * weight[woff(g, kx, ky, kz, ci, co)];
              }
          grad_in[ci + g.cin * g.in.index(ix, iy, iz)] = s;
        }
}

template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  for (std::size_t kz = 0; kz < g.kernel.d; ++kz)
    for (std::size_t ky = 0; ky < g.kernel.h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel.w; ++kx)
        for (std::size_t ci = 0; ci < g.cin; ++ci)
          for (std::size_t co = 0; co < g.cout; ++co) {
            T s = 0;
            for (std::size_t oz = 0; oz < g.out.d; ++oz)
              for (std::size_t oy = 0; oy < g.out.h; ++oy)
                for (std::size_t ox = 0; ox < g.out.w; ++ox) {
                  const Index ix = static_cast<Index>(ox * g.stride[0] + kx) - static_cast<Index>(g.pad[0]);
                  const Index iy = static_cast<Index>(oy * g.stride[1] + ky) - static_cast<Index>(g.pad[1]);
                  const Index iz = static_cast<Index>(oz * g.stride[2] + kz) - static_cast<Index>(g.pad[2]);
                  if (ix < 0 || iy < 0 || iz < 0 || ix >= static_cast<Index>(g.in.w) ||
                      iy >= static_cast<Index>(g.in.h) || iz >= static_cast<Index>(g.in.d))
                    continue;
                  s += in[ci + g.cin * g.in.index(ix, iy, iz)] * grad_out[co + g.cout * g.out.index(ox, oy, oz)];
                }
            grad_weight[woff(g, kx, ky, kz, ci, co)] = s;
          }
  if (!grad_bias.empty()) {
    for (std::size_t co = 0; co < g.cout; ++co) grad_bias[co] = 0;
    for (std::size_t o = 0; o < g.out.voxels(); ++o)
      for (std::size_t co = 0; co < g.cout; ++co) grad_bias[co] += grad_out[co + g.cout * o];
  }
}

template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, bool trans_a,
            std::span<const T> b, bool trans_b, std::span<T> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
}

namespace {

// Trilinear read of channel c at fractional (px, py, pz), border clamped.
template <typename T>
T sample(Grid3 grid, std::size_t channels, std::span<const T> vol, std::size_t c, const LinearTap& tx,
         const LinearTap& ty, const LinearTap& tz) {
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) { return vol[c + channels * grid.index(x, y, z)]; };
  const T fx = static_cast<T>(tx.frac), fy = static_cast<T>(ty.frac), fz = static_cast<T>(tz.frac);
  const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
  const T lo = gy * (gx * at(tx.i0, ty.i0, tz.i0) + fx * at(tx.i1, ty.i0, tz.i0)) +
               fy * (gx * at(tx.i0, ty.i1, tz.i0) + fx * at(tx.i1, ty.i1, tz.i0));
  const T hi = gy * (gx * at(tx.i0, ty.i0, tz.i1) + fx * at(tx.i1, ty.i0, tz.i1)) +
               fy * (gx * at(tx.i0, ty.i1, tz.i1) + fx * at(tx.i1, ty.i1, tz.i1));
  return gz * lo + fz * hi;
}

}  // namespace

template <typename T>
void grid_sample_forward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                         std::span<T> out) {
  for (std::size_t z = 0; z < grid.d; ++z)
    for (std::size_t y = 0; y < grid.h; ++y)
      for (std::size_t x = 0; x < grid.w; ++x) {
        const std::size_t v = grid.index(x, y, z);
        const LinearTap tx = linear_tap(static_cast<double>(x) + static_cast<double>(disp[3 * v]), grid.w);
        const LinearTap ty = linear_tap(static_cast<double>(y) + static_cast<double>(disp[3 * v + 1]), grid.h);
        const LinearTap tz = linear_tap(static_cast<double>(z) + static_cast<double>(disp[3 * v + 2]), grid.d);
        for (std::size_t c = 0; c < channels; ++c) out[c + channels * v] = sample(grid, channels, vol, c, tx, ty, tz);
      }
}

template <typename T>
void grid_sample_backward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                          std::span<const T> grad_out, std::span<T> grad_vol, std::span<T> grad_disp) {
  for (auto& g : grad_vol) g = 0;
  for (std::size_t z = 0; z < grid.d; ++z)
    for (std::size_t y = 0; y < grid.h; ++y)
      for (std::size_t x = 0; x < grid.w; ++x) {
        const std::size_t v = grid.index(x, y, z);
        const LinearTap tx = linear_tap(static_cast<double>(x) + static_cast<double>(disp[3 * v]), grid.w);
        const LinearTap ty = linear_tap(static_cast<double>(y) + static_cast<double>(disp[3 * v + 1]), grid.h);
        const LinearTap tz = linear_tap(static_cast<double>(z) + static_cast<double>(disp[3 * v + 2]), grid.d);
        const T fx = static_cast<T>(tx.frac), fy = static_cast<T>(ty.frac), fz = static_cast<T>(tz.frac);
        const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
        auto at = [&](std::size_t c, std::size_t xi, std::size_t yi, std::size_t zi) {
          return vol[c + channels * grid.index(xi, yi, zi)];
        };
        if (!grad_disp.empty()) {
          T sx = 0, sy = 0, sz = 0;
          for (std::size_t c = 0; c < channels; ++c) {
            const T g = grad_out[c + channels * v];
            const T dx = gy * gz * (at(c, tx.i1, ty.i0, tz.i0) - at(c, tx.i0, ty.i0, tz.i0)) +
                         fy * gz * (at(c, tx.i1, ty.i1, tz.i0) - at(c, tx.i0, ty.i1, tz.i0)) +
                         gy * fz * (at(c, tx.i1, ty.i0, tz.i1) - at(c, tx.i0, ty.i0, tz.i1)) +
                         fy * fz * (at(c, tx.i1, ty.i1, tz.i1) - at(c, tx.i0, ty.i1, tz.i1));
            const T dy = gx * gz * (at(c, tx.i0, ty.i1, tz.i0) - at(c, tx.i0, ty.i0, tz.i0)) +
                         fx * gz * (at(c, tx.i1, ty.i1, tz.i0) - at(c, tx.i1, ty.i0, tz.i0)) +
                         gx * fz * (at(c, tx.i0, ty.i1, tz.i1) - at(c, tx.i0, ty.i0, tz.i1)) +
                         fx * fz * (at(c, tx.i1, ty.i1, tz.i1) - at(c, tx.i1, ty.i0, tz.i1));
            const T dz = gx * gy * (at(c, tx.i0, ty.i0, tz.i1) - at(c, tx.i0, ty.i0, tz.i0)) +
                         fx * gy * (at(c, tx.i1, ty.i0, tz.i1) - at(c, tx.i1, ty.i0, tz.i0)) +
                         gx * fy * (at(c, tx.i0, ty.i1, tz.i1) - at(c, tx.i0, ty.i1, tz.i0)) +
                         fx * fy * (at(c, tx.i1, ty.i1, tz.i1) - at(c, tx.i1, ty.i1, tz.i0));
            sx += g * dx;
            sy += g * dy;
            sz += g * dz;
          }
          grad_disp[3 * v] = (tx.clamped || grid.w == 1) ? T(0) : sx;
          grad_disp[3 * v + 1] = (ty.clamped || grid.h == 1) ? T(0) : sy;
          grad_disp[3 * v + 2] = (tz.clamped || grid.d == 1) ? T(0) : sz;
        }
        if (!grad_vol.empty()) {
          const std::size_t xs[2] = {tx.i0, tx.i1}, ys[2] = {ty.i0, ty.i1}, zs[2] = {tz.i0, tz.i1};
          const T wx[2] = {gx, fx}, wy[2] = {gy, fy}, wz[2] = {gz, fz};
          for (int cz = 0; cz < 2; ++cz)
            for (int cy = 0; cy < 2; ++cy)
              for (int cx = 0; cx < 2; ++cx) {
                const T w = wx[cx] * wy[cy] * wz[cz];
                for (std::size_t c = 0; c < channels; ++c)
                  grad_vol[c + channels * grid.index(xs[cx], ys[cy], zs[cz])] += w * grad_out[c + channels * v];
              }
        }
      }
}

#define COATREG_INSTANTIATE_REFERENCE(T)                                                                      \
  template void conv3d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,                \
                                  std::span<const T>, std::span<T>);                                          \
  template void conv3d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,         \
                                         std::span<T>);                                                       \
  template void conv3d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,        \
                                          std::span<T>, std::span<T>);                                        \
  template void matmul<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, bool, std::span<const T>, \
                          bool, std::span<T>);                                                                \
  template void grid_sample_forward<T>(Grid3, std::size_t, std::span<const T>, std::span<const T>,            \
                                       std::span<T>);                                                         \
  template void grid_sample_backward<T>(Grid3, std::size_t, std::span<const T>, std::span<const T>,           \
                                        std::span<const T>, std::span<T>, std::span<T>);

COATREG_INSTANTIATE_REFERENCE(float)
COATREG_INSTANTIATE_REFERENCE(double)

#undef COATREG_INSTANTIATE_REFERENCE

}  // namespace coatreg::kernels::reference
