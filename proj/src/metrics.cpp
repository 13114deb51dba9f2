#include "coatreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "coatreg/error.hpp"

namespace coatreg {
namespace {

void check_structure(int structure) {
  if (structure < kLVBP || structure > kRV) {
    throw UsageError("unknown structure id " + std::to_string(structure) + " (expected 1=LVBP, 2=LVM, 3=RV)");
  }
}

void check_same_grid(const LabelVolume& a, const LabelVolume& b) {
  if (!(a.shape == b.shape)) throw ShapeError("label volumes differ in shape");
}

template <typename Pred>
std::vector<std::array<double, 3>> boundary_points(const LabelVolume& l, Pred inside) {
  const Grid3 g = l.shape;
  std::vector<std::array<double, 3>> pts;
  for (std::size_t z = 0; z < g.d; ++z)
    for (std::size_t y = 0; y < g.h; ++y)
      for (std::size_t x = 0; x < g.w; ++x) {
        if (!inside(l.at(x, y, z))) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == g.w || y + 1 == g.h || z + 1 == g.d ||
                          !inside(l.at(x - 1, y, z)) || !inside(l.at(x + 1, y, z)) || !inside(l.at(x, y - 1, z)) ||
                          !inside(l.at(x, y + 1, z)) || !inside(l.at(x, y, z - 1)) || !inside(l.at(x, y, z + 1));
        if (edge) {
          pts.push_back({static_cast<double>(x) * l.spacing[0], static_cast<double>(y) * l.spacing[1],
                         static_cast<double>(z) * l.spacing[2]});
        }
      }
  return pts;
}

double directed(const std::vector<std::array<double, 3>>& from, const std::vector<std::array<double, 3>>& to) {
  double worst = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
      if (best <= worst) break;  // cannot raise the max any more
    }
    worst = std::max(worst, best);
  }
  return worst;
}

template <typename Pred>
double hausdorff_impl(const LabelVolume& a, const LabelVolume& b, Pred inside, const std::string& what) {
  check_same_grid(a, b);
  const auto pa = boundary_points(a, inside);
  const auto pb = boundary_points(b, inside);
  if (pa.empty() || pb.empty()) throw DataError("hausdorff: empty mask for " + what);
  return std::sqrt(std::max(directed(pa, pb), directed(pb, pa)));
}

}  // namespace

template <typename T>
LabelVolume warp_labels(const LabelVolume& labels, const DeformationField<T>& flow) {
  const Grid3 g = labels.shape;
  if (flow.disp.rank() != 4 || !(flow.disp.grid() == g) || flow.disp.channels() != 3) {
    throw ShapeError("warp_labels: flow " + shape_string(flow.disp.shape()) + " does not match labels " +
                     shape_string(volume_shape(g, 3)));
  }
  const auto u = flow.disp.data();
  for (const auto x : u) {
    if (!std::isfinite(x)) throw NumericError("warp_labels: flow has a non-finite displacement");
  }
  LabelVolume out = LabelVolume::zeros(g, labels.spacing);
  auto pick = [](double c, std::size_t n) {
    const double r = std::floor(c + 0.5);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(n - 1)));
  };
  for (std::size_t z = 0; z < g.d; ++z)
    for (std::size_t y = 0; y < g.h; ++y)
      for (std::size_t x = 0; x < g.w; ++x) {
        const std::size_t v = g.index(x, y, z);
        const std::size_t sx = pick(static_cast<double>(x) + u[3 * v], g.w);
        const std::size_t sy = pick(static_cast<double>(y) + u[3 * v + 1], g.h);
        const std::size_t sz = pick(static_cast<double>(z) + u[3 * v + 2], g.d);
        out.labels[v] = labels.at(sx, sy, sz);
      }
  return out;
}

double dice(const LabelVolume& a, const LabelVolume& b, int structure) {
  check_structure(structure);
  check_same_grid(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool ia = a.labels[i] == structure, ib = b.labels[i] == structure;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na == 0 && nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double hausdorff(const LabelVolume& a, const LabelVolume& b, int structure) {
  check_structure(structure);
  const auto label = static_cast<std::uint8_t>(structure);
  return hausdorff_impl(a, b, [label](std::uint8_t v) { return v == label; },
                        structure_name(static_cast<Structure>(structure)));
}

double hausdorff_foreground(const LabelVolume& a, const LabelVolume& b) {
  return hausdorff_impl(a, b, [](std::uint8_t v) { return v != kBackground; }, "foreground");
}

template <typename T>
JacobianReport jacobian_analysis(const DeformationField<T>& flow) {
  if (flow.disp.rank() != 4 || flow.disp.channels() != 3) {
    throw ShapeError("jacobian_analysis: expected a {D,H,W,3} field, got " + shape_string(flow.disp.shape()));
  }
  const Grid3 g = flow.disp.grid();
  const auto u = flow.disp.data();
  JacobianReport r;
  r.det_map.assign(g.voxels(), std::numeric_limits<double>::quiet_NaN());
  r.jacobian_min = std::numeric_limits<double>::quiet_NaN();
  if (g.w < 3 || g.h < 3 || g.d < 3) return r;
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t z = 1; z + 1 < g.d; ++z)
    for (std::size_t y = 1; y + 1 < g.h; ++y)
      for (std::size_t x = 1; x + 1 < g.w; ++x) {
        double j[3][3];
        const std::size_t nb[3][2] = {{g.index(x - 1, y, z), g.index(x + 1, y, z)},
                                      {g.index(x, y - 1, z), g.index(x, y + 1, z)},
                                      {g.index(x, y, z - 1), g.index(x, y, z + 1)}};
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) {
            const double d = (static_cast<double>(u[3 * nb[k][1] + i]) - static_cast<double>(u[3 * nb[k][0] + i])) / 2.0;
            j[i][k] = (i == k ? 1.0 : 0.0) + d;
          }
        const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                           j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                           j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        r.det_map[g.index(x, y, z)] = det;
        r.foldings += det <= 0.0;
        lowest = std::min(lowest, det);
      }
  r.jacobian_min = lowest;
  return r;
}

EvalReport evaluate_labels(const LabelVolume& warped, const LabelVolume& fixed) {
  EvalReport r;
  double dsum = 0.0, hsum = 0.0;
  for (std::size_t s = 0; s < kStructures.size(); ++s) {
    r.dice[s] = dice(warped, fixed, kStructures[s]);
    r.hd_mm[s] = hausdorff(warped, fixed, kStructures[s]);
    dsum += r.dice[s];
    hsum += r.hd_mm[s];
  }
  r.avg_dice = dsum / 3.0;
  r.hd_mm_mean = hsum / 3.0;
  r.hd_mm_foreground = hausdorff_foreground(warped, fixed);
  return r;
}

template <typename T>
EvalReport evaluate_case(const LabelVolume& warped, const LabelVolume& fixed, const DeformationField<T>& flow) {
  EvalReport r = evaluate_labels(warped, fixed);
  const JacobianReport j = jacobian_analysis(flow);
  r.foldings = j.foldings;
  r.jacobian_min = j.jacobian_min;
  return r;
}

template LabelVolume warp_labels<float>(const LabelVolume&, const DeformationField<float>&);
template LabelVolume warp_labels<double>(const LabelVolume&, const DeformationField<double>&);
template JacobianReport jacobian_analysis<float>(const DeformationField<float>&);
template JacobianReport jacobian_analysis<double>(const DeformationField<double>&);
template EvalReport evaluate_case<float>(const LabelVolume&, const LabelVolume&, const DeformationField<float>&);
template EvalReport evaluate_case<double>(const LabelVolume&, const LabelVolume&, const DeformationField<double>&);

}  // namespace coatreg
