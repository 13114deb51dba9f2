#include "coatreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coatreg/error.hpp"

namespace coatreg {
namespace {

template <typename T>
bool any_tracked(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && tape->tracks(*t)) return true;
  }
  return false;
}

template <typename T>
void require_finite(std::span<const T> values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Wraps a freshly computed result and records its backward pass when needed.
// make_backward is only invoked when the result is recorded.
template <typename T, typename MakeBackward>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                 MakeBackward&& make_backward) {
  require_finite<T>(data, op);
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = Tape<T>::current();
  if (any_tracked(tape, inputs)) tape->record(out, GradientFault::wrap<T>(op, make_backward(out)));
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void require_volume(const Tensor<T>& t, const char* op) {
  if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected {D,H,W,C} volume, got " + shape_string(t.shape()));
}

template <typename T>
std::vector<T> copy_of(std::span<const T> s) {
  return {s.begin(), s.end()};
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish<T>("add", a.shape(), std::move(out), {&a, &b}, [a, b](const Tensor<T>&) {
    return [a, b](std::span<const T> g, Tape<T>& tape) {
      tape.accumulate(a, g);
      tape.accumulate(b, g);
    };
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish<T>("sub", a.shape(), std::move(out), {&a, &b}, [a, b](const Tensor<T>&) {
    return [a, b](std::span<const T> g, Tape<T>& tape) {
      tape.accumulate(a, g);
      if (tape.tracks(b)) {
        std::vector<T> neg(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        tape.accumulate(b, neg);
      }
    };
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish<T>("mul", a.shape(), std::move(out), {&a, &b}, [a, b](const Tensor<T>&) {
    return [a, b](std::span<const T> g, Tape<T>& tape) {
      if (tape.tracks(a)) {
        const auto y = b.data();
        std::vector<T> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
        tape.accumulate(a, ga);
      }
      if (tape.tracks(b)) {
        const auto x = a.data();
        std::vector<T> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * x[i];
        tape.accumulate(b, gb);
      }
    };
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return finish<T>("scale", a.shape(), std::move(out), {&a}, [a, factor](const Tensor<T>&) {
    return [a, factor](std::span<const T> g, Tape<T>& tape) {
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * factor;
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& alpha) {
  if (alpha.numel() != 1) throw ShapeError("mul_scalar: alpha must hold one element, got " + shape_string(alpha.shape()));
  const T s = alpha.item();
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return finish<T>("mul_scalar", a.shape(), std::move(out), {&a, &alpha}, [a, alpha](const Tensor<T>&) {
    return [a, alpha](std::span<const T> g, Tape<T>& tape) {
      if (tape.tracks(a)) {
        const T s = alpha.item();
        std::vector<T> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
        tape.accumulate(a, ga);
      }
      if (tape.tracks(alpha)) {
        const auto x = a.data();
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
        const T galpha[1] = {acc};
        tape.accumulate(alpha, std::span<const T>(galpha, 1));
      }
    };
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return finish<T>("sigmoid", a.shape(), std::move(out), {&a}, [a](const Tensor<T>& y) {
    return [a, y](std::span<const T> g, Tape<T>& tape) {
      const auto s = y.data();
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s[i] * (T(1) - s[i]);
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
  if (auto* probe = KinkProbe::active()) {
    for (std::size_t i = 0; i < x.size(); ++i) probe->mix(x[i] > T(0) ? 2 * i + 1 : 2 * i);
  }
  return finish<T>("leaky_relu", a.shape(), std::move(out), {&a}, [a, slope](const Tensor<T>&) {
    return [a, slope](std::span<const T> g, Tape<T>& tape) {
      const auto x = a.data();
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > T(0) ? g[i] : slope * g[i];
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return finish<T>("exp", a.shape(), std::move(out), {&a}, [a](const Tensor<T>& y) {
    return [a, y](std::span<const T> g, Tape<T>& tape) {
      const auto e = y.data();
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * e[i];
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lower bound exceeds upper bound");
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  if (auto* probe = KinkProbe::active()) {
    for (std::size_t i = 0; i < x.size(); ++i) probe->mix(3 * i + (x[i] < lo ? 0 : x[i] > hi ? 2 : 1));
  }
  return finish<T>("clamp", a.shape(), std::move(out), {&a}, [a, lo, hi](const Tensor<T>&) {
    return [a, lo, hi](std::span<const T> g, Tape<T>& tape) {
      const auto x = a.data();
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = (x[i] < lo || x[i] > hi) ? T(0) : g[i];
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (const T v : a.data()) acc += v;
  return finish<T>("sum", Shape{1}, std::vector<T>{acc}, {&a}, [a](const Tensor<T>&) {
    return [a](std::span<const T> g, Tape<T>& tape) { tape.accumulate(a, std::vector<T>(a.numel(), g[0])); };
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (element_count(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  return finish<T>("reshape", std::move(shape), copy_of(a.data()), {&a}, [a](const Tensor<T>&) {
    return [a](std::span<const T> g, Tape<T>& tape) { tape.accumulate(a, g); };
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return finish<T>("transpose", Shape{n, m}, std::move(out), {&a}, [a, m, n](const Tensor<T>&) {
    return [a, m, n](std::span<const T> g, Tape<T>& tape) {
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(m * n);
  kernels::matmul<T>(m, k, n, a.data(), false, b.data(), false, out);
  return finish<T>("matmul", Shape{m, n}, std::move(out), {&a, &b}, [a, b, m, k, n](const Tensor<T>&) {
    return [a, b, m, k, n](std::span<const T> g, Tape<T>& tape) {
      if (tape.tracks(a)) {
        std::vector<T> ga(m * k);
        kernels::matmul<T>(m, n, k, g, false, b.data(), true, ga);
        tape.accumulate(a, ga);
      }
      if (tape.tracks(b)) {
        std::vector<T> gb(k * n);
        kernels::matmul<T>(k, m, n, a.data(), true, g, false, gb);
        tape.accumulate(b, gb);
      }
    };
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw UsageError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return finish<T>("softmax", s, std::move(out), {&a}, [a, outer, inner, len](const Tensor<T>& y) {
    return [a, y, outer, inner, len](std::span<const T> g, Tape<T>& tape) {
      const auto p = y.data();
      std::vector<T> ga(g.size());
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * p[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            ga[idx] = p[idx] * (g[idx] - dot);
          }
        }
      }
      tape.accumulate(a, ga);
    };
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_channels: no inputs");
  for (const auto& p : parts) require_volume(p, "concat_channels");
  const Grid3 grid = parts.front().grid();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.grid() != grid) throw ShapeError("concat_channels: spatial extents differ");
    offsets.push_back(total);
    total += p.channels();
  }
  const std::size_t n = grid.voxels();
  std::vector<T> out(n * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    const std::size_t c = parts[k].channels();
    for (std::size_t v = 0; v < n; ++v) std::copy_n(x.data() + v * c, c, out.data() + v * total + offsets[k]);
  }
  Tape<T>* tape = Tape<T>::current();
  bool tracked = false;
  if (tape != nullptr) {
    for (const auto& p : parts) tracked = tracked || tape->tracks(p);
  }
  require_finite<T>(out, "concat_channels");
  Tensor<T> result(volume_shape(grid, total), std::move(out));
  if (tracked) {
    tape->record(result, [parts, offsets, total, n](std::span<const T> g, Tape<T>& t) {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!t.tracks(parts[k])) continue;
        const std::size_t c = parts[k].channels();
        std::vector<T> gp(n * c);
        for (std::size_t v = 0; v < n; ++v) std::copy_n(g.data() + v * total + offsets[k], c, gp.data() + v * c);
        t.accumulate(parts[k], gp);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions options) {
  require_volume(input, "conv3d");
  if (weight.rank() != 5) throw ShapeError("conv3d: weight must be {KD,KH,KW,Cin,Cout}, got " + shape_string(weight.shape()));
  const auto& ws = weight.shape();
  const Grid3 kernel{ws[2], ws[1], ws[0]};
  const std::size_t cin = ws[3], cout = ws[4];
  if (input.channels() != cin) {
    throw ShapeError("conv3d: input has " + std::to_string(input.channels()) + " channels, kernel expects " +
                     std::to_string(cin));
  }
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv3d: bias size does not match output channels");
  Axes3 pad{0, 0, 0};
  if (options.padding == Padding::same) {
    const Axes3 k{kernel.w, kernel.h, kernel.d};
    for (int a = 0; a < 3; ++a) {
      if (k[a] % 2 == 0) throw ShapeError("conv3d: same padding needs odd kernel extents");
      pad[a] = k[a] / 2;
    }
  }
  const ConvGeometry g = make_conv_geometry(input.grid(), cin, cout, kernel, options.stride, pad);
  std::vector<T> out(g.out.voxels() * cout);
  kernels::conv3d_forward<T>(g, input.data(), weight.data(),
                             bias.defined() ? bias.data() : std::span<const T>{}, out);
  return finish<T>("conv3d", volume_shape(g.out, cout), std::move(out), {&input, &weight, &bias},
                   [input, weight, bias, g](const Tensor<T>&) {
                     return [input, weight, bias, g](std::span<const T> gout, Tape<T>& tape) {
                       if (tape.tracks(input)) {
                         std::vector<T> gin(input.numel());
                         kernels::conv3d_backward_input<T>(g, gout, weight.data(), gin);
                         tape.accumulate(input, gin);
                       }
                       const bool want_w = tape.tracks(weight);
                       const bool want_b = bias.defined() && tape.tracks(bias);
                       if (want_w || want_b) {
                         std::vector<T> gw(weight.numel());
                         std::vector<T> gb(want_b ? g.cout : 0);
                         kernels::conv3d_backward_weight<T>(g, input.data(), gout, gw, gb);
                         if (want_w) tape.accumulate(weight, gw);
                         if (want_b) tape.accumulate(bias, gb);
                       }
                     };
                   });
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Axes3 stride) {
  require_volume(input, "conv_transpose3d");
  if (weight.rank() != 5) {
    throw ShapeError("conv_transpose3d: weight must be {KD,KH,KW,Cout,Cin}, got " + shape_string(weight.shape()));
  }
  const auto& ws = weight.shape();
  const Grid3 kernel{ws[2], ws[1], ws[0]};
  const std::size_t cout = ws[3], cin = ws[4];
  if (input.channels() != cin) throw ShapeError("conv_transpose3d: channel mismatch");
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv_transpose3d: bias size mismatch");
  const Grid3 in = input.grid();
  for (auto s : stride) {
    if (s == 0) throw ShapeError("conv_transpose3d: stride must be positive");
  }
  const Grid3 out{(in.w - 1) * stride[0] + kernel.w, (in.h - 1) * stride[1] + kernel.h,
                  (in.d - 1) * stride[2] + kernel.d};
  // The adjoint convolution maps the output grid back onto the input grid.
  const ConvGeometry g = make_conv_geometry(out, cout, cin, kernel, stride, Axes3{0, 0, 0});
  std::vector<T> y(out.voxels() * cout);
  kernels::conv3d_backward_input<T>(g, input.data(), weight.data(), y);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t v = 0; v < out.voxels(); ++v)
      for (std::size_t c = 0; c < cout; ++c) y[v * cout + c] += b[c];
  }
  return finish<T>("conv_transpose3d", volume_shape(out, cout), std::move(y), {&input, &weight, &bias},
                   [input, weight, bias, g](const Tensor<T>&) {
                     return [input, weight, bias, g](std::span<const T> gout, Tape<T>& tape) {
                       if (tape.tracks(input)) {
                         std::vector<T> gin(input.numel());
                         kernels::conv3d_forward<T>(g, gout, weight.data(), std::span<const T>{}, gin);
                         tape.accumulate(input, gin);
                       }
                       if (tape.tracks(weight)) {
                         std::vector<T> gw(weight.numel());
                         kernels::conv3d_backward_weight<T>(g, gout, input.data(), gw, std::span<T>{});
                         tape.accumulate(weight, gw);
                       }
                       if (bias.defined() && tape.tracks(bias)) {
                         std::vector<T> gb(g.cin, T(0));
                         const std::size_t n = g.in.voxels();
                         for (std::size_t v = 0; v < n; ++v)
                           for (std::size_t c = 0; c < g.cin; ++c) gb[c] += gout[v * g.cin + c];
                         tape.accumulate(bias, gb);
                       }
                     };
                   });
}

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& volume, const Tensor<T>& displacement) {
  require_volume(volume, "grid_sample");
  require_volume(displacement, "grid_sample");
  const Grid3 grid = volume.grid();
  if (displacement.grid() != grid || displacement.channels() != 3) {
    throw ShapeError("grid_sample: displacement " + shape_string(displacement.shape()) + " does not match volume " +
                     shape_string(volume.shape()));
  }
  const std::size_t channels = volume.channels();
  std::vector<T> out(volume.numel());
  kernels::grid_sample_forward<T>(grid, channels, volume.data(), displacement.data(), out);
  if (auto* probe = KinkProbe::active()) {
    const auto d = displacement.data();
    const Axes3 n{grid.w, grid.h, grid.d};
    for (std::size_t v = 0; v < grid.voxels(); ++v) {
      const Axes3 pos{v % grid.w, (v / grid.w) % grid.h, v / (grid.w * grid.h)};
      for (int a = 0; a < 3; ++a) {
        const LinearTap t = linear_tap(static_cast<double>(pos[a]) + static_cast<double>(d[3 * v + a]), n[a]);
        probe->mix((t.i0 << 1) | (t.clamped ? 1u : 0u));
      }
    }
  }
  return finish<T>("grid_sample", volume.shape(), std::move(out), {&volume, &displacement},
                   [volume, displacement, grid, channels](const Tensor<T>&) {
                     return [volume, displacement, grid, channels](std::span<const T> g, Tape<T>& tape) {
                       const bool want_v = tape.tracks(volume);
                       const bool want_d = tape.tracks(displacement);
                       std::vector<T> gv(want_v ? volume.numel() : 0);
                       std::vector<T> gd(want_d ? displacement.numel() : 0);
                       kernels::grid_sample_backward<T>(grid, channels, volume.data(), displacement.data(), g, gv, gd);
                       if (want_v) tape.accumulate(volume, gv);
                       if (want_d) tape.accumulate(displacement, gd);
                     };
                   });
}

template <typename T>
Tensor<T> resize_to(const Tensor<T>& input, Grid3 target) {
  require_volume(input, "resize");
  if (target.voxels() == 0) throw ShapeError("resize: empty target grid");
  const Grid3 in = input.grid();
  const std::size_t channels = input.channels();
  std::vector<T> out(target.voxels() * channels);
  kernels::resize_forward<T>(in, target, channels, input.data(), out);
  return finish<T>("resize", volume_shape(target, channels), std::move(out), {&input},
                   [input, in, target, channels](const Tensor<T>&) {
                     return [input, in, target, channels](std::span<const T> g, Tape<T>& tape) {
                       std::vector<T> gi(input.numel());
                       kernels::resize_backward<T>(in, target, channels, g, gi);
                       tape.accumulate(input, gi);
                     };
                   });
}

template <typename T>
Tensor<T> resize_trilinear(const Tensor<T>& input, double factor) {
  require_volume(input, "resize_trilinear");
  const Grid3 in = input.grid();
  if (factor == 2.0) return resize_to(input, Grid3{in.w * 2, in.h * 2, in.d * 2});
  if (factor == 0.5) {
    if (in.w % 2 || in.h % 2 || in.d % 2) {
      throw ShapeError("resize_trilinear: halving needs even extents, got " + shape_string(input.shape()));
    }
    return resize_to(input, Grid3{in.w / 2, in.h / 2, in.d / 2});
  }
  throw UsageError("resize_trilinear: factor must be 2 or 0.5");
}

#define COATREG_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                           \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                            \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                                      \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                                \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                                       \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvOptions);            \
  template Tensor<T> conv_transpose3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Axes3);        \
  template Tensor<T> grid_sample<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> resize_to<T>(const Tensor<T>&, Grid3);                                                   \
  template Tensor<T> resize_trilinear<T>(const Tensor<T>&, double);

COATREG_INSTANTIATE_OPS(float)
COATREG_INSTANTIATE_OPS(double)

#undef COATREG_INSTANTIATE_OPS

}  // namespace coatreg
