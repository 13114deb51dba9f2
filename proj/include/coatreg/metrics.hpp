#pragma once

// Evaluation: label warping, Dice, Hausdorff distance and Jacobian analysis.

#include <array>
#include <cstddef>
#include <vector>

#include "coatreg/fields.hpp"
#include "coatreg/volume.hpp"

namespace coatreg {

// Nearest-neighbour pull-warp: out(x) = labels(round(x + disp(x))), with
// coordinates clamped to the grid. Rounding is floor(c + 0.5).
template <typename T>
LabelVolume warp_labels(const LabelVolume& labels, const DeformationField<T>& flow);

// 2|A∩B| / (|A|+|B|); 1 when both masks are empty, 0 when exactly one is.
// structure must be LVBP, LVM or RV (UsageError otherwise).
double dice(const LabelVolume& a, const LabelVolume& b, int structure);

// Symmetric Hausdorff distance in mm between the boundary voxels (mask
// voxels with a 6-neighbour outside the mask or outside the grid) of both
// masks. DataError naming the structure if either mask is empty.
double hausdorff(const LabelVolume& a, const LabelVolume& b, int structure);
// Same on the union of all foreground labels.
double hausdorff_foreground(const LabelVolume& a, const LabelVolume& b);

struct JacobianReport {
  std::vector<double> det_map;  // per voxel, NaN outside the interior
  std::size_t foldings = 0;     // interior voxels with det <= 0
  double jacobian_min = 0.0;    // over the interior; NaN if it is empty
};

// det(I + grad u) with central differences, interior voxels only.
template <typename T>
JacobianReport jacobian_analysis(const DeformationField<T>& flow);

struct EvalReport {
  std::array<double, 3> dice{};   // LVBP, LVM, RV
  double avg_dice = 0.0;
  std::array<double, 3> hd_mm{};  // per structure
  double hd_mm_mean = 0.0;        // mean of the three
  double hd_mm_foreground = 0.0;  // union of all structures
  std::size_t foldings = 0;
  double jacobian_min = 0.0;
};

// Segmentation metrics only; foldings and jacobian_min stay default.
EvalReport evaluate_labels(const LabelVolume& warped, const LabelVolume& fixed);

template <typename T>
EvalReport evaluate_case(const LabelVolume& warped, const LabelVolume& fixed, const DeformationField<T>& flow);

}  // namespace coatreg
