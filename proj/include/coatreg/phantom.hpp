#pragma once

// Synthetic cardiac phantoms and ground-truth deformation pairs.

#include <cstdint>
#include <vector>

#include "coatreg/fields.hpp"
#include "coatreg/volume.hpp"

namespace coatreg {

struct Phantom {
  Volume image;  // one channel, intensities in [0, 1]
  LabelVolume labels;
};

// LV blood pool (0.9, label 1) inside a myocardial shell (0.7, label 2),
// right-ventricle crescent beside it (0.45, label 3). Geometry jittered by the
// seed and scaled with the grid. Image: Gaussian blur sigma 1 voxel plus
// N(0, 0.02) noise, clamped to [0, 1]. UsageError if W or H < 16.
Phantom generate_phantom(std::uint64_t seed, Grid3 shape, Spacing spacing);

struct SynthCase {
  Volume moving;
  Volume fixed;
  LabelVolume moving_labels;
  LabelVolume fixed_labels;
  DeformationField<float> gt_flow;  // full resolution
  std::uint64_t seed = 0;
};

// Separable Gaussian blur of a {D,H,W,C} array in place, per channel,
// replicate border, kernel radius ceil(3 sigma).
void gaussian_blur(std::vector<double>& data, Grid3 grid, std::size_t channels, double sigma);

// Smooth random velocity on grid: N(0,1) per component, Gaussian blur with
// sigma voxels, scaled so the largest per-voxel vector norm equals max_norm.
std::vector<double> smooth_random_velocity(std::uint64_t seed, Grid3 grid, double max_norm, double sigma = 2.0);

// Half-resolution velocity with max norm max_disp_voxels (half-res voxel
// units, so full-res displacements reach about twice that), integrated with
// 7 squaring steps in double precision and upsampled.
// fixed = grid_sample(moving, gt_flow), fixed_labels = warp_labels(moving_labels, gt_flow).
SynthCase generate_gt_pair(std::uint64_t seed, Grid3 shape, Spacing spacing, double max_disp_voxels = 3.0);

}  // namespace coatreg
