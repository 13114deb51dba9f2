#include "coatreg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "coatreg/error.hpp"

namespace coatreg {

ConvGeometry make_conv_geometry(Grid3 in, std::size_t cin, std::size_t cout, Grid3 kernel, Axes3 stride,
                                Axes3 pad) {
  const Axes3 n{in.w, in.h, in.d};
  const Axes3 k{kernel.w, kernel.h, kernel.d};
  Axes3 o{};
  for (int a = 0; a < 3; ++a) {
    if (stride[a] == 0) throw ShapeError("convolution stride must be positive");
    if (n[a] + 2 * pad[a] < k[a]) throw ShapeError("convolution kernel larger than padded input");
    o[a] = (n[a] + 2 * pad[a] - k[a]) / stride[a] + 1;
  }
  ConvGeometry g;
  g.in = in;
  g.out = {o[0], o[1], o[2]};
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.cin = cin;
  g.cout = cout;
  return g;
}

LinearTap linear_tap(double coord, std::size_t n) noexcept {
  LinearTap t;
  const double hi = static_cast<double>(n - 1);
  t.clamped = coord < 0.0 || coord > hi;
  if (n == 1) return t;
  if (std::isnan(coord)) {
    // Valid taps, NaN weight: the NaN reaches the output instead of an index.
    t.i1 = 1;
    t.frac = coord;
    return t;
  }
  const double c = std::clamp(coord, 0.0, hi);
  auto i0 = static_cast<std::size_t>(std::floor(c));
  if (i0 >= n - 1) i0 = n - 2;
  t.i0 = i0;
  t.i1 = i0 + 1;
  t.frac = c - static_cast<double>(i0);
  return t;
}

namespace kernels {
namespace {

using Index = std::int64_t;

// Input coordinate hit by output o through tap k, or -1 when it falls in padding.
inline Index source_index(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t n) {
  const Index i = static_cast<Index>(o * stride + k) - static_cast<Index>(pad);
  return (i < 0 || i >= static_cast<Index>(n)) ? -1 : i;
}

// Output coordinate that reads input i through tap k, or -1 when none does.
inline Index target_index(std::size_t i, std::size_t k, std::size_t stride, std::size_t pad, std::size_t n_out) {
  const Index t = static_cast<Index>(i + pad) - static_cast<Index>(k);
  if (t < 0 || t % static_cast<Index>(stride) != 0) return -1;
  const Index o = t / static_cast<Index>(stride);
  return o >= static_cast<Index>(n_out) ? -1 : o;
}

}  // namespace

template <typename T>
void conv3d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const std::size_t cin = g.cin;
  const std::size_t cout = g.cout;
  const Index nz = static_cast<Index>(g.out.d);
  const Index ny = static_cast<Index>(g.out.h);
#pragma omp parallel
  {
    std::vector<T> acc(cout);
#pragma omp for collapse(2) schedule(static)
    for (Index oz = 0; oz < nz; ++oz) {
      for (Index oy = 0; oy < ny; ++oy) {
        for (std::size_t ox = 0; ox < g.out.w; ++ox) {
          if (bias.empty()) {
            std::fill(acc.begin(), acc.end(), T(0));
          } else {
            std::copy(bias.begin(), bias.end(), acc.begin());
          }
          for (std::size_t kz = 0; kz < g.kernel.d; ++kz) {
            const Index iz = source_index(oz, kz, g.stride[2], g.pad[2], g.in.d);
            if (iz < 0) continue;
            for (std::size_t ky = 0; ky < g.kernel.h; ++ky) {
              const Index iy = source_index(oy, ky, g.stride[1], g.pad[1], g.in.h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel.w; ++kx) {
                const Index ix = source_index(ox, kx, g.stride[0], g.pad[0], g.in.w);
                if (ix < 0) continue;
                const T* ip = in.data() + g.in.index(ix, iy, iz) * cin;
                const T* wp = weight.data() + g.kernel.index(kx, ky, kz) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T v = ip[ci];
                  const T* wr = wp + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) acc[co] += v * wr[co];
                }
              }
            }
          }
          std::copy(acc.begin(), acc.end(), out.data() + g.out.index(ox, oy, oz) * cout);
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  const std::size_t cin = g.cin;
  const std::size_t cout = g.cout;
  const Index nz = static_cast<Index>(g.in.d);
  const Index ny = static_cast<Index>(g.in.h);
#pragma omp parallel
  {
    std::vector<T> acc(cin);
#pragma omp for collapse(2) schedule(static)
    for (Index iz = 0; iz < nz; ++iz) {
      for (Index iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < g.in.w; ++ix) {
          std::fill(acc.begin(), acc.end(), T(0));
          for (std::size_t kz = 0; kz < g.kernel.d; ++kz) {
            const Index oz = target_index(iz, kz, g.stride[2], g.pad[2], g.out.d);
            if (oz < 0) continue;
            for (std::size_t ky = 0; ky < g.kernel.h; ++ky) {
              const Index oy = target_index(iy, ky, g.stride[1], g.pad[1], g.out.h);
              if (oy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel.w; ++kx) {
                const Index ox = target_index(ix, kx, g.stride[0], g.pad[0], g.out.w);
                if (ox < 0) continue;
                const T* gp = grad_out.data() + g.out.index(ox, oy, oz) * cout;
                const T* wp = weight.data() + g.kernel.index(kx, ky, kz) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T* wr = wp + ci * cout;
                  T s = acc[ci];
                  for (std::size_t co = 0; co < cout; ++co) s += gp[co] * wr[co];
                  acc[ci] = s;
                }
              }
            }
          }
          std::copy(acc.begin(), acc.end(), grad_in.data() + g.in.index(ix, iy, iz) * cin);
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  const std::size_t cin = g.cin;
  const std::size_t cout = g.cout;
  const Index rows = static_cast<Index>(g.taps() * cin);
#pragma omp parallel
  {
    std::vector<T> acc(cout);
#pragma omp for schedule(static)
    for (Index row = 0; row < rows; ++row) {
      const std::size_t tap = static_cast<std::size_t>(row) / cin;
      const std::size_t ci = static_cast<std::size_t>(row) % cin;
      const std::size_t kx = tap % g.kernel.w;
      const std::size_t ky = (tap / g.kernel.w) % g.kernel.h;
      const std::size_t kz = tap / (g.kernel.w * g.kernel.h);
      std::fill(acc.begin(), acc.end(), T(0));
      for (std::size_t oz = 0; oz < g.out.d; ++oz) {
        const Index iz = source_index(oz, kz, g.stride[2], g.pad[2], g.in.d);
        if (iz < 0) continue;
        for (std::size_t oy = 0; oy < g.out.h; ++oy) {
          const Index iy = source_index(oy, ky, g.stride[1], g.pad[1], g.in.h);
          if (iy < 0) continue;
          for (std::size_t ox = 0; ox < g.out.w; ++ox) {
            const Index ix = source_index(ox, kx, g.stride[0], g.pad[0], g.in.w);
            if (ix < 0) continue;
            const T v = in[g.in.index(ix, iy, iz) * cin + ci];
            const T* gp = grad_out.data() + g.out.index(ox, oy, oz) * cout;
            for (std::size_t co = 0; co < cout; ++co) acc[co] += v * gp[co];
          }
        }
      }
      std::copy(acc.begin(), acc.end(), grad_weight.data() + static_cast<std::size_t>(row) * cout);
    }
  }
  if (!grad_bias.empty()) {
    std::fill(grad_bias.begin(), grad_bias.end(), T(0));
    const std::size_t n = g.out.voxels();
    for (std::size_t o = 0; o < n; ++o) {
      for (std::size_t co = 0; co < cout; ++co) grad_bias[co] += grad_out[o * cout + co];
    }
  }
}

template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, bool trans_a,
            std::span<const T> b, bool trans_b, std::span<T> c) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < rows; ++i) {
    T* crow = c.data() + static_cast<std::size_t>(i) * n;
    std::fill(crow, crow + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * m + i] : a[static_cast<std::size_t>(i) * k + p];
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

namespace {

struct Stencil {
  LinearTap x, y, z;
};

inline Stencil stencil_at(Grid3 grid, std::size_t x, std::size_t y, std::size_t z, const double* d) {
  return {linear_tap(static_cast<double>(x) + d[0], grid.w), linear_tap(static_cast<double>(y) + d[1], grid.h),
          linear_tap(static_cast<double>(z) + d[2], grid.d)};
}

}  // namespace

template <typename T>
void grid_sample_forward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                         std::span<T> out) {
  const Index nz = static_cast<Index>(grid.d);
#pragma omp parallel for schedule(static)
  for (Index zi = 0; zi < nz; ++zi) {
    const auto z = static_cast<std::size_t>(zi);
    for (std::size_t y = 0; y < grid.h; ++y) {
      for (std::size_t x = 0; x < grid.w; ++x) {
        const std::size_t v = grid.index(x, y, z);
        const double d[3] = {static_cast<double>(disp[3 * v]), static_cast<double>(disp[3 * v + 1]),
                             static_cast<double>(disp[3 * v + 2])};
        const Stencil s = stencil_at(grid, x, y, z, d);
        const T fx = static_cast<T>(s.x.frac), fy = static_cast<T>(s.y.frac), fz = static_cast<T>(s.z.frac);
        const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
        const T* c000 = vol.data() + grid.index(s.x.i0, s.y.i0, s.z.i0) * channels;
        const T* c100 = vol.data() + grid.index(s.x.i1, s.y.i0, s.z.i0) * channels;
        const T* c010 = vol.data() + grid.index(s.x.i0, s.y.i1, s.z.i0) * channels;
        const T* c110 = vol.data() + grid.index(s.x.i1, s.y.i1, s.z.i0) * channels;
        const T* c001 = vol.data() + grid.index(s.x.i0, s.y.i0, s.z.i1) * channels;
        const T* c101 = vol.data() + grid.index(s.x.i1, s.y.i0, s.z.i1) * channels;
        const T* c011 = vol.data() + grid.index(s.x.i0, s.y.i1, s.z.i1) * channels;
        const T* c111 = vol.data() + grid.index(s.x.i1, s.y.i1, s.z.i1) * channels;
        T* o = out.data() + v * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          const T lo = gy * (gx * c000[c] + fx * c100[c]) + fy * (gx * c010[c] + fx * c110[c]);
          const T hi = gy * (gx * c001[c] + fx * c101[c]) + fy * (gx * c011[c] + fx * c111[c]);
          o[c] = gz * lo + fz * hi;
        }
      }
    }
  }
}

template <typename T>
void grid_sample_backward(Grid3 grid, std::size_t channels, std::span<const T> vol, std::span<const T> disp,
                          std::span<const T> grad_out, std::span<T> grad_vol, std::span<T> grad_disp) {
  if (!grad_disp.empty()) {
    const Index nz = static_cast<Index>(grid.d);
#pragma omp parallel for schedule(static)
    for (Index zi = 0; zi < nz; ++zi) {
      const auto z = static_cast<std::size_t>(zi);
      for (std::size_t y = 0; y < grid.h; ++y) {
        for (std::size_t x = 0; x < grid.w; ++x) {
          const std::size_t v = grid.index(x, y, z);
          const double d[3] = {static_cast<double>(disp[3 * v]), static_cast<double>(disp[3 * v + 1]),
                               static_cast<double>(disp[3 * v + 2])};
          const Stencil s = stencil_at(grid, x, y, z, d);
          const T fx = static_cast<T>(s.x.frac), fy = static_cast<T>(s.y.frac), fz = static_cast<T>(s.z.frac);
          const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
          const T* c000 = vol.data() + grid.index(s.x.i0, s.y.i0, s.z.i0) * channels;
          const T* c100 = vol.data() + grid.index(s.x.i1, s.y.i0, s.z.i0) * channels;
          const T* c010 = vol.data() + grid.index(s.x.i0, s.y.i1, s.z.i0) * channels;
          const T* c110 = vol.data() + grid.index(s.x.i1, s.y.i1, s.z.i0) * channels;
          const T* c001 = vol.data() + grid.index(s.x.i0, s.y.i0, s.z.i1) * channels;
          const T* c101 = vol.data() + grid.index(s.x.i1, s.y.i0, s.z.i1) * channels;
          const T* c011 = vol.data() + grid.index(s.x.i0, s.y.i1, s.z.i1) * channels;
          const T* c111 = vol.data() + grid.index(s.x.i1, s.y.i1, s.z.i1) * channels;
          const T* go = grad_out.data() + v * channels;
          T sx = 0, sy = 0, sz = 0;
          for (std::size_t c = 0; c < channels; ++c) {
            const T dx = gy * gz * (c100[c] - c000[c]) + fy * gz * (c110[c] - c010[c]) +
                         gy * fz * (c101[c] - c001[c]) + fy * fz * (c111[c] - c011[c]);
            const T dy = gx * gz * (c010[c] - c000[c]) + fx * gz * (c110[c] - c100[c]) +
                         gx * fz * (c011[c] - c001[c]) + fx * fz * (c111[c] - c101[c]);
            const T dz = gx * gy * (c001[c] - c000[c]) + fx * gy * (c101[c] - c100[c]) +
                         gx * fy * (c011[c] - c010[c]) + fx * fy * (c111[c] - c110[c]);
            sx += go[c] * dx;
            sy += go[c] * dy;
            sz += go[c] * dz;
          }
          T* gd = grad_disp.data() + 3 * v;
          gd[0] = (s.x.clamped || grid.w == 1) ? T(0) : sx;
          gd[1] = (s.y.clamped || grid.h == 1) ? T(0) : sy;
          gd[2] = (s.z.clamped || grid.d == 1) ? T(0) : sz;
        }
      }
    }
  }
  if (!grad_vol.empty()) {
    // Scatter; kept serial so the accumulation order is fixed.
    std::fill(grad_vol.begin(), grad_vol.end(), T(0));
    for (std::size_t z = 0; z < grid.d; ++z) {
      for (std::size_t y = 0; y < grid.h; ++y) {
        for (std::size_t x = 0; x < grid.w; ++x) {
          const std::size_t v = grid.index(x, y, z);
          const double d[3] = {static_cast<double>(disp[3 * v]), static_cast<double>(disp[3 * v + 1]),
                               static_cast<double>(disp[3 * v + 2])};
          const Stencil s = stencil_at(grid, x, y, z, d);
          const T fx = static_cast<T>(s.x.frac), fy = static_cast<T>(s.y.frac), fz = static_cast<T>(s.z.frac);
          const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
          const T w[8] = {gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz,
                          gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz};
          const std::size_t idx[8] = {
              grid.index(s.x.i0, s.y.i0, s.z.i0), grid.index(s.x.i1, s.y.i0, s.z.i0),
              grid.index(s.x.i0, s.y.i1, s.z.i0), grid.index(s.x.i1, s.y.i1, s.z.i0),
              grid.index(s.x.i0, s.y.i0, s.z.i1), grid.index(s.x.i1, s.y.i0, s.z.i1),
              grid.index(s.x.i0, s.y.i1, s.z.i1), grid.index(s.x.i1, s.y.i1, s.z.i1)};
          const T* go = grad_out.data() + v * channels;
          for (int corner = 0; corner < 8; ++corner) {
            T* gv = grad_vol.data() + idx[corner] * channels;
            for (std::size_t c = 0; c < channels; ++c) gv[c] += w[corner] * go[c];
          }
        }
      }
    }
  }
}

namespace {

std::vector<LinearTap> resize_taps(std::size_t n_in, std::size_t n_out) {
  std::vector<LinearTap> taps(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    taps[o] = linear_tap((static_cast<double>(o) + 0.5) * scale - 0.5, n_in);
  }
  return taps;
}

}  // namespace

template <typename T>
void resize_forward(Grid3 in, Grid3 out, std::size_t channels, std::span<const T> src, std::span<T> dst) {
  const auto tx = resize_taps(in.w, out.w);
  const auto ty = resize_taps(in.h, out.h);
  const auto tz = resize_taps(in.d, out.d);
  const Index nz = static_cast<Index>(out.d);
#pragma omp parallel for schedule(static)
  for (Index zi = 0; zi < nz; ++zi) {
    const auto z = static_cast<std::size_t>(zi);
    const T fz = static_cast<T>(tz[z].frac), gz = T(1) - fz;
    for (std::size_t y = 0; y < out.h; ++y) {
      const T fy = static_cast<T>(ty[y].frac), gy = T(1) - fy;
      for (std::size_t x = 0; x < out.w; ++x) {
        const T fx = static_cast<T>(tx[x].frac), gx = T(1) - fx;
        const T* c000 = src.data() + in.index(tx[x].i0, ty[y].i0, tz[z].i0) * channels;
        const T* c100 = src.data() + in.index(tx[x].i1, ty[y].i0, tz[z].i0) * channels;
        const T* c010 = src.data() + in.index(tx[x].i0, ty[y].i1, tz[z].i0) * channels;
        const T* c110 = src.data() + in.index(tx[x].i1, ty[y].i1, tz[z].i0) * channels;
        const T* c001 = src.data() + in.index(tx[x].i0, ty[y].i0, tz[z].i1) * channels;
        const T* c101 = src.data() + in.index(tx[x].i1, ty[y].i0, tz[z].i1) * channels;
        const T* c011 = src.data() + in.index(tx[x].i0, ty[y].i1, tz[z].i1) * channels;
        const T* c111 = src.data() + in.index(tx[x].i1, ty[y].i1, tz[z].i1) * channels;
        T* o = dst.data() + out.index(x, y, z) * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          const T lo = gy * (gx * c000[c] + fx * c100[c]) + fy * (gx * c010[c] + fx * c110[c]);
          const T hi = gy * (gx * c001[c] + fx * c101[c]) + fy * (gx * c011[c] + fx * c111[c]);
          o[c] = gz * lo + fz * hi;
        }
      }
    }
  }
}

template <typename T>
void resize_backward(Grid3 in, Grid3 out, std::size_t channels, std::span<const T> grad_dst,
                     std::span<T> grad_src) {
  const auto tx = resize_taps(in.w, out.w);
  const auto ty = resize_taps(in.h, out.h);
  const auto tz = resize_taps(in.d, out.d);
  std::fill(grad_src.begin(), grad_src.end(), T(0));
  for (std::size_t z = 0; z < out.d; ++z) {
    const T fz = static_cast<T>(tz[z].frac), gz = T(1) - fz;
    for (std::size_t y = 0; y < out.h; ++y) {
      const T fy = static_cast<T>(ty[y].frac), gy = T(1) - fy;
      for (std::size_t x = 0; x < out.w; ++x) {
        const T fx = static_cast<T>(tx[x].frac), gx = T(1) - fx;
        const T w[8] = {gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz,
                        gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz};
        const std::size_t idx[8] = {
            in.index(tx[x].i0, ty[y].i0, tz[z].i0), in.index(tx[x].i1, ty[y].i0, tz[z].i0),
            in.index(tx[x].i0, ty[y].i1, tz[z].i0), in.index(tx[x].i1, ty[y].i1, tz[z].i0),
            in.index(tx[x].i0, ty[y].i0, tz[z].i1), in.index(tx[x].i1, ty[y].i0, tz[z].i1),
            in.index(tx[x].i0, ty[y].i1, tz[z].i1), in.index(tx[x].i1, ty[y].i1, tz[z].i1)};
        const T* g = grad_dst.data() + out.index(x, y, z) * channels;
        for (int corner = 0; corner < 8; ++corner) {
          T* gs = grad_src.data() + idx[corner] * channels;
          for (std::size_t c = 0; c < channels; ++c) gs[c] += w[corner] * g[c];
        }
      }
    }
  }
}

#define COATREG_INSTANTIATE_KERNELS(T)                                                                        \
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
                                        std::span<const T>, std::span<T>, std::span<T>);                      \
  template void resize_forward<T>(Grid3, Grid3, std::size_t, std::span<const T>, std::span<T>);               \
  template void resize_backward<T>(Grid3, Grid3, std::size_t, std::span<const T>, std::span<T>);

COATREG_INSTANTIATE_KERNELS(float)
COATREG_INSTANTIATE_KERNELS(double)

#undef COATREG_INSTANTIATE_KERNELS

}  // namespace kernels
}  // namespace coatreg
