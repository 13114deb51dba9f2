#include "coatreg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "coatreg/error.hpp"
#include "coatreg/ops.hpp"

namespace coatreg {

void LossWeights::validate() const {
  if (!(lambda_sim > 0.0) || !(lambda_kl > 0.0) || !(prior_lambda > 0.0)) {
    throw UsageError("loss weights must be strictly positive");
  }
}

template <typename T>
Tensor<T> ncc_loss(const Tensor<T>& warped, const Tensor<T>& fixed, NccDiagnostics* diag) {
  if (warped.shape() != fixed.shape()) {
    throw ShapeError("ncc_loss: shape mismatch " + shape_string(warped.shape()) + " vs " + shape_string(fixed.shape()));
  }
  const auto x = warped.data();
  const auto y = fixed.data();
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!std::isfinite(sxy) || !std::isfinite(sxx) || !std::isfinite(syy)) {
    throw NumericError("ncc_loss: non-finite input");
  }
  const bool x_const = sxx <= kNccEpsilon;
  const bool y_const = syy <= kNccEpsilon;
  if (diag != nullptr) {
    diag->warped_constant = x_const;
    diag->fixed_constant = y_const;
  }
  const bool degenerate = x_const || y_const;
  const double denom = std::sqrt(sxx) * std::sqrt(syy);
  const double r = degenerate ? 0.0 : std::clamp(sxy / denom, -1.0, 1.0);

  Tensor<T> out(Shape{1}, std::vector<T>{static_cast<T>(1.0 - r)});
  Tape<T>* tape = Tape<T>::current();
  if (tape != nullptr && (tape->tracks(warped) || tape->tracks(fixed))) {
    tape->record(out, GradientFault::wrap<T>("ncc_loss", [warped, fixed, mx, my, sxx, syy, denom, r, degenerate](std::span<const T> g, Tape<T>& t) {
      if (degenerate) return;
      const auto x = warped.data();
      const auto y = fixed.data();
      const double go = -static_cast<double>(g[0]);
      if (t.tracks(warped)) {
        std::vector<T> gx(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          gx[i] = static_cast<T>(go * ((y[i] - my) / denom - r * (x[i] - mx) / sxx));
        }
        t.accumulate(warped, gx);
      }
      if (t.tracks(fixed)) {
        std::vector<T> gy(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
          gy[i] = static_cast<T>(go * ((x[i] - mx) / denom - r * (y[i] - my) / syy));
        }
        t.accumulate(fixed, gy);
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> kl_loss(const Tensor<T>& mu, const Tensor<T>& log_var, double prior_lambda) {
  if (mu.shape() != log_var.shape()) {
    throw ShapeError("kl_loss: mu " + shape_string(mu.shape()) + " vs log_var " + shape_string(log_var.shape()));
  }
  const Grid3 grid = mu.grid();
  const std::size_t channels = mu.channels();
  const auto m = mu.data();
  const auto lv = log_var.data();
  for (const T v : lv) {
    if (!std::isfinite(v)) throw NumericError("kl_loss: non-finite log-variance");
  }

  auto degree = [grid](std::size_t x, std::size_t y, std::size_t z) {
    return static_cast<double>((x > 0) + (x + 1 < grid.w) + (y > 0) + (y + 1 < grid.h) + (z > 0) + (z + 1 < grid.d));
  };

  double variance_term = 0, log_term = 0, smooth_term = 0;
  for (std::size_t z = 0; z < grid.d; ++z) {
    for (std::size_t y = 0; y < grid.h; ++y) {
      for (std::size_t x = 0; x < grid.w; ++x) {
        const std::size_t v = grid.index(x, y, z);
        const double deg = degree(x, y, z);
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t i = v * channels + c;
          variance_term += deg * std::exp(static_cast<double>(lv[i]));
          log_term += lv[i];
          // Each edge once, through its +x, +y, +z endpoint.
          if (x + 1 < grid.w) {
            const double d = static_cast<double>(m[i]) - m[grid.index(x + 1, y, z) * channels + c];
            smooth_term += d * d;
          }
          if (y + 1 < grid.h) {
            const double d = static_cast<double>(m[i]) - m[grid.index(x, y + 1, z) * channels + c];
            smooth_term += d * d;
          }
          if (z + 1 < grid.d) {
            const double d = static_cast<double>(m[i]) - m[grid.index(x, y, z + 1) * channels + c];
            smooth_term += d * d;
          }
        }
      }
    }
  }
  const double value = 0.5 * (prior_lambda * variance_term + prior_lambda * smooth_term - log_term);
  if (!std::isfinite(value)) throw NumericError("kl_loss: non-finite value");

  Tensor<T> out(Shape{1}, std::vector<T>{static_cast<T>(value)});
  Tape<T>* tape = Tape<T>::current();
  if (tape != nullptr && (tape->tracks(mu) || tape->tracks(log_var))) {
    tape->record(out, GradientFault::wrap<T>("kl_loss", [mu, log_var, prior_lambda, grid, channels, degree](std::span<const T> g, Tape<T>& t) {
      const double go = g[0];
      if (t.tracks(mu)) {
        const auto m = mu.data();
        std::vector<T> gm(m.size());
        for (std::size_t z = 0; z < grid.d; ++z)
          for (std::size_t y = 0; y < grid.h; ++y)
            for (std::size_t x = 0; x < grid.w; ++x) {
              const std::size_t v = grid.index(x, y, z);
              for (std::size_t c = 0; c < channels; ++c) {
                const double mi = m[v * channels + c];
                double acc = 0;
                auto edge = [&](std::size_t u) { acc += mi - static_cast<double>(m[u * channels + c]); };
                if (x > 0) edge(grid.index(x - 1, y, z));
                if (x + 1 < grid.w) edge(grid.index(x + 1, y, z));
                if (y > 0) edge(grid.index(x, y - 1, z));
                if (y + 1 < grid.h) edge(grid.index(x, y + 1, z));
                if (z > 0) edge(grid.index(x, y, z - 1));
                if (z + 1 < grid.d) edge(grid.index(x, y, z + 1));
                gm[v * channels + c] = static_cast<T>(go * prior_lambda * acc);
              }
            }
        t.accumulate(mu, gm);
      }
      if (t.tracks(log_var)) {
        const auto lv = log_var.data();
        std::vector<T> gl(lv.size());
        for (std::size_t z = 0; z < grid.d; ++z)
          for (std::size_t y = 0; y < grid.h; ++y)
            for (std::size_t x = 0; x < grid.w; ++x) {
              const std::size_t v = grid.index(x, y, z);
              const double deg = degree(x, y, z);
              for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t i = v * channels + c;
                gl[i] = static_cast<T>(go * 0.5 * (prior_lambda * deg * std::exp(static_cast<double>(lv[i])) - 1.0));
              }
            }
        t.accumulate(log_var, gl);
      }
    }));
  }
  return out;
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& warped, const Tensor<T>& fixed, const FlowDistribution<T>& dist,
                            const LossWeights& weights, NccDiagnostics* diag) {
  LossBreakdown<T> out;
  out.ncc = ncc_loss(warped, fixed, diag);
  out.kl = kl_loss(dist, weights.prior_lambda);
  if (weights.kl_normalization == KlNormalization::per_voxel) {
    out.kl = scale(out.kl, static_cast<T>(1.0 / static_cast<double>(dist.mu.grid().voxels())));
  }
  out.total = add(scale(out.ncc, static_cast<T>(weights.lambda_sim)), scale(out.kl, static_cast<T>(weights.lambda_kl)));
  return out;
}

#define COATREG_INSTANTIATE_LOSSES(T)                                                                  \
  template Tensor<T> ncc_loss<T>(const Tensor<T>&, const Tensor<T>&, NccDiagnostics*);                \
  template Tensor<T> kl_loss<T>(const Tensor<T>&, const Tensor<T>&, double);                          \
  template LossBreakdown<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const FlowDistribution<T>&, \
                                          const LossWeights&, NccDiagnostics*);

COATREG_INSTANTIATE_LOSSES(float)
COATREG_INSTANTIATE_LOSSES(double)

#undef COATREG_INSTANTIATE_LOSSES

}  // namespace coatreg
