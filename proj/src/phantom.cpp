#include "coatreg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "coatreg/error.hpp"
#include "coatreg/metrics.hpp"
#include "coatreg/ops.hpp"
#include "coatreg/regnet.hpp"
#include "coatreg/rng.hpp"

namespace coatreg {
namespace {

struct Ellipsoid {
  double cx, cy, cz, ax, ay, az;
  [[nodiscard]] bool contains(double x, double y, double z) const {
    const double u = (x - cx) / ax, v = (y - cy) / ay, w = (z - cz) / az;
    return u * u + v * v + w * w <= 1.0;
  }
};

constexpr float kIntensity[4] = {0.0f, 0.9f, 0.7f, 0.45f};

}  // namespace

void gaussian_blur(std::vector<double>& data, Grid3 grid, std::size_t channels, double sigma) {
  if (!(sigma > 0.0)) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= norm;

  const std::array<std::size_t, 3> extent{grid.w, grid.h, grid.d};
  const std::array<std::size_t, 3> stride{channels, channels * grid.w, channels * grid.w * grid.h};
  std::vector<double> tmp(data.size());
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = static_cast<long>(extent[axis]);
    for (std::size_t z = 0; z < grid.d; ++z)
      for (std::size_t y = 0; y < grid.h; ++y)
        for (std::size_t x = 0; x < grid.w; ++x) {
          const std::array<std::size_t, 3> p{x, y, z};
          const std::size_t base = channels * grid.index(x, y, z) - p[axis] * stride[axis];
          for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
              const long q = std::clamp(static_cast<long>(p[axis]) + k, 0L, n - 1);
              acc += kernel[k + radius] * data[base + static_cast<std::size_t>(q) * stride[axis] + c];
            }
            tmp[channels * grid.index(x, y, z) + c] = acc;
          }
        }
    data.swap(tmp);
  }
}

Phantom generate_phantom(std::uint64_t seed, Grid3 shape, Spacing spacing) {
  if (shape.w < 16 || shape.h < 16) {
    throw UsageError("generate_phantom: need at least 16 voxels in x and y, got " + std::to_string(shape.w) + "x" +
                     std::to_string(shape.h));
  }
  if (shape.d < 4) throw UsageError("generate_phantom: need at least 4 slices");
  Rng rng = make_rng(seed, {id(Stream::phantom)});
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  const double sxy = static_cast<double>(std::min(shape.w, shape.h)) / 32.0;
  const double sz = static_cast<double>(shape.d) / 16.0;
  const double cx = shape.w / 2.0 + 2.0 * sxy * jitter(rng);
  const double cy = shape.h / 2.0 + 2.0 * sxy * jitter(rng);
  const double cz = shape.d / 2.0 - 0.5 + 1.0 * sz * jitter(rng);

  const Ellipsoid endo{cx, cy, cz, (4.5 + 0.7 * jitter(rng)) * sxy, (4.5 + 0.7 * jitter(rng)) * sxy,
                       (4.0 + 0.6 * jitter(rng)) * sz};
  const double wall = (2.0 + 0.3 * jitter(rng)) * sxy;
  const Ellipsoid epi{cx, cy, cz, endo.ax + wall, endo.ay + wall, endo.az + 1.5 * sz};
  const double rv_ax = (4.0 + 0.5 * jitter(rng)) * sxy;
  const Ellipsoid rv{cx - epi.ax - 0.5 * rv_ax, cy + 1.0 * sxy * jitter(rng), cz, rv_ax,
                     (7.5 + 0.7 * jitter(rng)) * sxy, endo.az};

  Phantom p;
  p.labels = LabelVolume::zeros(shape, spacing);
  for (std::size_t z = 0; z < shape.d; ++z)
    for (std::size_t y = 0; y < shape.h; ++y)
      for (std::size_t x = 0; x < shape.w; ++x) {
        const double fx = x, fy = y, fz = z;
        std::uint8_t l = kBackground;
        if (endo.contains(fx, fy, fz)) {
          l = kLVBP;
        } else if (epi.contains(fx, fy, fz)) {
          l = kLVM;
        } else if (rv.contains(fx, fy, fz)) {
          l = kRV;
        }
        p.labels.at(x, y, z) = l;
      }
  // The blood pool never touches anything but myocardium.
  auto& lab = p.labels;
  for (std::size_t z = 0; z < shape.d; ++z)
    for (std::size_t y = 0; y < shape.h; ++y)
      for (std::size_t x = 0; x < shape.w; ++x) {
        if (lab.at(x, y, z) != kLVBP) continue;
        auto wrap = [&](std::size_t a, std::size_t b, std::size_t c) {
          if (lab.at(a, b, c) != kLVBP) lab.at(a, b, c) = kLVM;
        };
        if (x == 0 || y == 0 || z == 0 || x + 1 == shape.w || y + 1 == shape.h || z + 1 == shape.d) {
          lab.at(x, y, z) = kLVM;
          continue;
        }
        wrap(x - 1, y, z);
        wrap(x + 1, y, z);
        wrap(x, y - 1, z);
        wrap(x, y + 1, z);
        wrap(x, y, z - 1);
        wrap(x, y, z + 1);
      }

  std::vector<double> img(shape.voxels());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = kIntensity[lab.labels[i]];
  gaussian_blur(img, shape, 1, 1.0);
  Rng noise_rng = make_rng(seed, {id(Stream::noise)});
  std::normal_distribution<double> noise(0.0, 0.02);
  p.image = Volume::zeros(shape, 1, spacing);
  for (std::size_t i = 0; i < img.size(); ++i) {
    p.image.data[i] = static_cast<float>(std::clamp(img[i] + noise(noise_rng), 0.0, 1.0));
  }
  return p;
}

std::vector<double> smooth_random_velocity(std::uint64_t seed, Grid3 grid, double max_norm, double sigma) {
  std::vector<double> v(grid.voxels() * 3, 0.0);
  if (max_norm == 0.0) return v;
  if (!(max_norm > 0.0)) throw UsageError("smooth_random_velocity: max_norm must be non-negative");
  Rng rng = make_rng(seed, {id(Stream::deformation)});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& x : v) x = normal(rng);
  gaussian_blur(v, grid, 3, sigma);
  double peak = 0.0;
  for (std::size_t i = 0; i < grid.voxels(); ++i) {
    peak = std::max(peak, std::sqrt(v[3 * i] * v[3 * i] + v[3 * i + 1] * v[3 * i + 1] + v[3 * i + 2] * v[3 * i + 2]));
  }
  for (auto& x : v) x *= max_norm / peak;
  return v;
}

SynthCase generate_gt_pair(std::uint64_t seed, Grid3 shape, Spacing spacing, double max_disp_voxels) {
  if (shape.w % 2 || shape.h % 2 || shape.d % 2) throw ShapeError("generate_gt_pair: extents must be even");
  if (!(max_disp_voxels >= 0.0)) throw UsageError("generate_gt_pair: max_disp_voxels must be non-negative");
  Phantom ph = generate_phantom(seed, shape, spacing);

  const Grid3 half{shape.w / 2, shape.h / 2, shape.d / 2};
  Tensor<double> velocity(volume_shape(half, 3), smooth_random_velocity(seed, half, max_disp_voxels));
  const auto flow64 = upsample_flow(integrate_svf(DeformationField<double>{velocity, FieldResolution::half}, 7));
  const auto d = flow64.disp.data();

  SynthCase c;
  c.seed = seed;
  c.gt_flow = {Tensor<float>(flow64.disp.shape(), std::vector<float>(d.begin(), d.end())), FieldResolution::full};
  c.moving = ph.image;
  c.moving_labels = ph.labels;
  c.fixed = to_volume(grid_sample(to_tensor<float>(ph.image), c.gt_flow.disp), spacing);
  c.fixed_labels = warp_labels(ph.labels, c.gt_flow);
  return c;
}

}  // namespace coatreg
