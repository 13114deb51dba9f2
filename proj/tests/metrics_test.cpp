#include <cmath>

#include "coatreg/error.hpp"
#include "coatreg/metrics.hpp"
#include "coatreg/phantom.hpp"
#include "support.hpp"

using namespace coatreg;

namespace {

DeformationField<double> uniform_flow(Grid3 g, double dx, double dy, double dz) {
  std::vector<double> v(g.voxels() * 3);
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    v[3 * i] = dx;
    v[3 * i + 1] = dy;
    v[3 * i + 2] = dz;
  }
  return {Tensor<double>(volume_shape(g, 3), std::move(v)), FieldResolution::full};
}

LabelVolume single(Grid3 g, Spacing s, std::size_t x, std::size_t y, std::size_t z, std::uint8_t label = kLVBP) {
  auto l = LabelVolume::zeros(g, s);
  l.at(x, y, z) = label;
  return l;
}

// Brute-force Jacobian of phi(x) = x + u(x) at one voxel: central
// differences of the mapped coordinates, determinant by the rule of Sarrus.
double brute_det(const DeformationField<double>& f, std::size_t x, std::size_t y, std::size_t z) {
  const Grid3 g = f.disp.grid();
  const auto u = f.disp.data();
  auto phi = [&](std::size_t px, std::size_t py, std::size_t pz, int axis) {
    const double base[3] = {double(px), double(py), double(pz)};
    return base[axis] + u[3 * g.index(px, py, pz) + axis];
  };
  double m[3][3];
  for (int i = 0; i < 3; ++i) {
    m[i][0] = (phi(x + 1, y, z, i) - phi(x - 1, y, z, i)) / 2;
    m[i][1] = (phi(x, y + 1, z, i) - phi(x, y - 1, z, i)) / 2;
    m[i][2] = (phi(x, y, z + 1, i) - phi(x, y, z - 1, i)) / 2;
  }
  return m[0][0] * m[1][1] * m[2][2] + m[0][1] * m[1][2] * m[2][0] + m[0][2] * m[1][0] * m[2][1] -
         m[0][2] * m[1][1] * m[2][0] - m[0][0] * m[1][2] * m[2][1] - m[0][1] * m[1][0] * m[2][2];
}

}  // namespace

TEST(WarpLabels, ZeroFlowAndPullSemantics) {
  const auto ph = generate_phantom(1, {32, 32, 16}, kDefaultSpacing);
  const auto same = warp_labels(ph.labels, uniform_flow({32, 32, 16}, 0, 0, 0));
  EXPECT_EQ(same.labels, ph.labels.labels);

  // out(x) = labels(x + 1): the label at x = 2 shows up at x = 1.
  const Grid3 g{4, 1, 1};
  const auto moved = warp_labels(single(g, {1, 1, 1}, 2, 0, 0), uniform_flow(g, 1, 0, 0));
  EXPECT_EQ(moved.labels, (std::vector<std::uint8_t>{0, 1, 0, 0}));

  const auto shifted = warp_labels(ph.labels, uniform_flow({32, 32, 16}, 2, 0, 0));
  for (int s : {1, 2, 3}) EXPECT_LT(dice(shifted, ph.labels, s), 1.0);
  EXPECT_THROW(warp_labels(ph.labels, uniform_flow(g, 0, 0, 0)), ShapeError);
}

TEST(Dice, Examples) {
  const Grid3 g{4, 1, 1};
  auto a = LabelVolume::zeros(g, {1, 1, 1});
  auto b = a;
  a.labels = {1, 1, 0, 0};
  b.labels = {0, 1, 1, 0};
  EXPECT_EQ(dice(a, a, kLVBP), 1.0);
  EXPECT_EQ(dice(a, b, kLVBP), 0.5);
  EXPECT_EQ(dice(b, a, kLVBP), 0.5);
  b.labels = {0, 0, 1, 1};
  EXPECT_EQ(dice(a, b, kLVBP), 0.0);
  EXPECT_EQ(dice(a, b, kRV), 1.0);  // both empty
  b.labels = {0, 0, 3, 0};
  EXPECT_EQ(dice(a, b, kRV), 0.0);  // exactly one empty
  EXPECT_THROW(dice(a, b, 0), UsageError);
  EXPECT_THROW(dice(a, b, 4), UsageError);
}

TEST(Hausdorff, Examples) {
  const Grid3 g{4, 5, 1};
  const auto a = single(g, {1, 1, 1}, 0, 0, 0);
  const auto b = single(g, {1, 1, 1}, 3, 4, 0);
  EXPECT_EQ(hausdorff(a, a, kLVBP), 0.0);
  EXPECT_DOUBLE_EQ(hausdorff(a, b, kLVBP), 5.0);
  EXPECT_DOUBLE_EQ(hausdorff(b, a, kLVBP), 5.0);
  const auto a2 = single(g, {2, 1, 1}, 0, 0, 0);
  const auto b2 = single(g, {2, 1, 1}, 3, 4, 0);
  EXPECT_DOUBLE_EQ(hausdorff(a2, b2, kLVBP), std::sqrt(52.0));
  EXPECT_DOUBLE_EQ(hausdorff_foreground(a2, b2), std::sqrt(52.0));
}

TEST(Hausdorff, EmptyMaskNamesTheStructure) {
  const Grid3 g{4, 4, 4};
  const auto a = single(g, {1, 1, 1}, 1, 1, 1);
  try {
    (void)hausdorff(a, a, kRV);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(structure_name(kRV)), std::string::npos);
  }
}

TEST(Hausdorff, OnlyBoundaryVoxelsCount) {
  // Solid 5x5x5 cube against the same cube with its centre removed. The
  // hole's neighbours become boundary voxels, one voxel inside the shell.
  const Grid3 g{7, 7, 7};
  auto a = LabelVolume::zeros(g, {1, 1, 1});
  for (std::size_t z = 1; z < 6; ++z)
    for (std::size_t y = 1; y < 6; ++y)
      for (std::size_t x = 1; x < 6; ++x) a.at(x, y, z) = kLVM;
  auto b = a;
  b.at(3, 3, 3) = kBackground;
  EXPECT_DOUBLE_EQ(hausdorff(a, b, kLVM), 1.0);
  EXPECT_DOUBLE_EQ(hausdorff(a, a, kLVM), 0.0);
}

TEST(Jacobian, IdentityAndTranslation) {
  const Grid3 g{5, 4, 3};
  for (const auto& f : {uniform_flow(g, 0, 0, 0), uniform_flow(g, 1.5, -2, 0.25)}) {
    const auto r = jacobian_analysis(f);
    EXPECT_EQ(r.foldings, 0u);
    EXPECT_DOUBLE_EQ(r.jacobian_min, 1.0);
    for (std::size_t z = 0; z < g.d; ++z)
      for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t x = 0; x < g.w; ++x) {
          const double d = r.det_map[g.index(x, y, z)];
          const bool interior = x > 0 && y > 0 && z > 0 && x + 1 < g.w && y + 1 < g.h && z + 1 < g.d;
          if (interior) {
            EXPECT_DOUBLE_EQ(d, 1.0);
          } else {
            EXPECT_TRUE(std::isnan(d));
          }
        }
  }
}

TEST(Jacobian, OneDimensionalFold) {
  const Grid3 g{3, 3, 3};
  auto with_ux = [&](double a, double b, double c) {
    std::vector<double> v(g.voxels() * 3, 0.0);
    for (std::size_t z = 0; z < 3; ++z)
      for (std::size_t y = 0; y < 3; ++y) {
        v[3 * g.index(0, y, z)] = a;
        v[3 * g.index(1, y, z)] = b;
        v[3 * g.index(2, y, z)] = c;
      }
    return DeformationField<double>{Tensor<double>(volume_shape(g, 3), v), FieldResolution::full};
  };
  // Decreasing u_x: du_x/dx = -3, det = -2 at the only interior voxel.
  const auto fold = with_ux(3, 0, -3);
  auto r = jacobian_analysis(fold);
  EXPECT_EQ(r.foldings, 1u);
  EXPECT_DOUBLE_EQ(r.det_map[g.index(1, 1, 1)], brute_det(fold, 1, 1, 1));
  EXPECT_DOUBLE_EQ(r.jacobian_min, -2.0);
  // Increasing u_x stretches instead: det = 4.
  const auto stretch = with_ux(-3, 0, 3);
  r = jacobian_analysis(stretch);
  EXPECT_EQ(r.foldings, 0u);
  EXPECT_DOUBLE_EQ(r.jacobian_min, brute_det(stretch, 1, 1, 1));
  EXPECT_DOUBLE_EQ(r.jacobian_min, 4.0);
}

TEST(Jacobian, MatchesBruteForceOnRandomFields) {
  const Grid3 g{6, 5, 4};
  const DeformationField<double> f{testsupport::random_tensor(volume_shape(g, 3), 3, -1.2, 1.2),
                                   FieldResolution::full};
  const auto r = jacobian_analysis(f);
  std::size_t folds = 0;
  for (std::size_t z = 1; z + 1 < g.d; ++z)
    for (std::size_t y = 1; y + 1 < g.h; ++y)
      for (std::size_t x = 1; x + 1 < g.w; ++x) {
        const double d = brute_det(f, x, y, z);
        EXPECT_NEAR(r.det_map[g.index(x, y, z)], d, 1e-12);
        folds += d <= 0.0;
      }
  EXPECT_EQ(r.foldings, folds);
  EXPECT_GT(folds, 0u);
}

TEST(Jacobian, NoInterior) {
  const auto r = jacobian_analysis(uniform_flow({4, 4, 2}, 0, 0, 0));
  EXPECT_EQ(r.foldings, 0u);
  EXPECT_TRUE(std::isnan(r.jacobian_min));
}

TEST(Evaluate, IdenticalLabels) {
  const auto ph = generate_phantom(3, {32, 32, 16}, kDefaultSpacing);
  const auto rep = evaluate_case(ph.labels, ph.labels, uniform_flow({32, 32, 16}, 0, 0, 0));
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(rep.dice[s], 1.0);
    EXPECT_EQ(rep.hd_mm[s], 0.0);
  }
  EXPECT_EQ(rep.avg_dice, 1.0);
  EXPECT_EQ(rep.hd_mm_mean, 0.0);
  EXPECT_EQ(rep.foldings, 0u);
  EXPECT_EQ(rep.jacobian_min, 1.0);
}
