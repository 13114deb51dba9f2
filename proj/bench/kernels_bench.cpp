// Reference (serial) against OpenMP kernels at desk-scale sizes.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "coatreg/kernels.hpp"

using namespace coatreg;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Stem convolution at full desk resolution and a U-Net level at half.
ConvGeometry geometry(int which) {
  if (which == 0) return make_conv_geometry({32, 32, 16}, 1, 8, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
  return make_conv_geometry({16, 16, 8}, 32, 32, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
}

template <bool Ref>
void BM_ConvForward(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto in = noise(g.in.voxels() * g.cin, 1), w = noise(g.weight_size(), 2), b = noise(g.cout, 3);
  std::vector<float> out(g.out.voxels() * g.cout);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::conv3d_forward<float>(g, in, w, b, out);
    } else {
      kernels::conv3d_forward<float>(g, in, w, b, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(g.out.voxels() * g.weight_size()));
}

template <bool Ref>
void BM_ConvBackwardInput(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto go = noise(g.out.voxels() * g.cout, 4), w = noise(g.weight_size(), 5);
  std::vector<float> gi(g.in.voxels() * g.cin);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::conv3d_backward_input<float>(g, go, w, gi);
    } else {
      kernels::conv3d_backward_input<float>(g, go, w, gi);
    }
    benchmark::DoNotOptimize(gi.data());
  }
}

template <bool Ref>
void BM_ConvBackwardWeight(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto in = noise(g.in.voxels() * g.cin, 6), go = noise(g.out.voxels() * g.cout, 7);
  std::vector<float> gw(g.weight_size()), gb(g.cout);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::conv3d_backward_weight<float>(g, in, go, gw, gb);
    } else {
      kernels::conv3d_backward_weight<float>(g, in, go, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

// Attention similarity at the quarter-resolution grid: 8*8*4 x 16 times its transpose.
template <bool Ref>
void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), k = 16;
  const auto a = noise(n * k, 8), b = noise(n * k, 9);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::matmul<float>(n, k, n, a, false, b, true, c);
    } else {
      kernels::matmul<float>(n, k, n, a, false, b, true, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * k));
}

const Grid3 kDesk{32, 32, 16};

template <bool Ref>
void BM_GridSampleForward(benchmark::State& state) {
  const auto vol = noise(kDesk.voxels(), 10), disp = noise(kDesk.voxels() * 3, 11, -3.0f, 3.0f);
  std::vector<float> out(kDesk.voxels());
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::grid_sample_forward<float>(kDesk, 1, vol, disp, out);
    } else {
      kernels::grid_sample_forward<float>(kDesk, 1, vol, disp, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Ref>
void BM_GridSampleBackward(benchmark::State& state) {
  const auto vol = noise(kDesk.voxels(), 12), disp = noise(kDesk.voxels() * 3, 13, -3.0f, 3.0f);
  const auto go = noise(kDesk.voxels(), 14);
  std::vector<float> gv(kDesk.voxels()), gd(kDesk.voxels() * 3);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::grid_sample_backward<float>(kDesk, 1, vol, disp, go, gv, gd);
    } else {
      kernels::grid_sample_backward<float>(kDesk, 1, vol, disp, go, gv, gd);
    }
    benchmark::DoNotOptimize(gv.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv3d_forward/reference")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvForward<false>)->Name("conv3d_forward/openmp")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardInput<true>)->Name("conv3d_backward_input/reference")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardInput<false>)->Name("conv3d_backward_input/openmp")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardWeight<true>)->Name("conv3d_backward_weight/reference")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardWeight<false>)->Name("conv3d_backward_weight/openmp")->Arg(0)->Arg(1);
BENCHMARK(BM_Matmul<true>)->Name("matmul/reference")->Arg(256)->Arg(1024);
BENCHMARK(BM_Matmul<false>)->Name("matmul/openmp")->Arg(256)->Arg(1024);
BENCHMARK(BM_GridSampleForward<true>)->Name("grid_sample_forward/reference");
BENCHMARK(BM_GridSampleForward<false>)->Name("grid_sample_forward/openmp");
BENCHMARK(BM_GridSampleBackward<true>)->Name("grid_sample_backward/reference");
BENCHMARK(BM_GridSampleBackward<false>)->Name("grid_sample_backward/openmp");

BENCHMARK_MAIN();
