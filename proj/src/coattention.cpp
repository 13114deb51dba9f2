#include "coatreg/coattention.hpp"

#include "coatreg/error.hpp"

namespace coatreg {

template <typename T>
CoAttentionParams<T> CoAttentionParams<T>::create(std::size_t channels_in, std::size_t channels_att, Rng& rng) {
  CoAttentionParams p;
  p.f = ConvLayer<T>::glorot(1, channels_in, channels_att, rng);
  p.g = ConvLayer<T>::glorot(1, channels_in, channels_att, rng);
  p.h1 = ConvLayer<T>::glorot(1, channels_in, channels_att, rng);
  p.h2 = ConvLayer<T>::glorot(1, channels_in, channels_att, rng);
  p.gate_mov = ConvLayer<T>::glorot(1, channels_att, channels_att, rng);
  p.gate_fix = ConvLayer<T>::glorot(1, channels_att, channels_att, rng);
  p.alpha_mov = Tensor<T>::parameter(Shape{1}, {T(0)});
  p.alpha_fix = Tensor<T>::parameter(Shape{1}, {T(0)});
  return p;
}

template <typename T>
void CoAttentionParams<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  f.collect(prefix + ".f", out);
  g.collect(prefix + ".g", out);
  h1.collect(prefix + ".h1", out);
  h2.collect(prefix + ".h2", out);
  gate_mov.collect(prefix + ".gate_mov", out);
  gate_fix.collect(prefix + ".gate_fix", out);
  out.push_back({prefix + ".alpha_mov", alpha_mov});
  out.push_back({prefix + ".alpha_fix", alpha_fix});
}

namespace {

template <typename T>
void check_inputs(const Tensor<T>& f_mov, const Tensor<T>& f_fix, const CoAttentionParams<T>& params) {
  if (f_mov.shape() != f_fix.shape()) {
    throw ShapeError("co-attention: moving features " + shape_string(f_mov.shape()) + " vs fixed " +
                     shape_string(f_fix.shape()));
  }
  if (f_mov.channels() != params.channels_in()) {
    throw ShapeError("co-attention: features have " + std::to_string(f_mov.channels()) +
                     " channels, block expects " + std::to_string(params.channels_in()));
  }
}

}  // namespace

template <typename T>
CoAttentionOutput<T> co_attention_forward(const Tensor<T>& f_mov, const Tensor<T>& f_fix,
                                          const CoAttentionParams<T>& params, std::size_t max_positions) {
  check_inputs(f_mov, f_fix, params);
  const Grid3 grid = f_mov.grid();
  const std::size_t n = grid.voxels();
  if (n > max_positions) {
    throw ResourceError("co-attention over " + std::to_string(n) + " positions exceeds the budget of " +
                        std::to_string(max_positions) +
                        "; reduce the input extent or raise the attention budget");
  }
  const std::size_t c = params.channels_att();
  const Shape flat{n, c};

  const Tensor<T> h1_mov = params.h1(f_mov);
  const Tensor<T> h2_fix = params.h2(f_fix);

  CoAttentionOutput<T> out;
  out.similarity = matmul(reshape(params.f(f_mov), flat), transpose(reshape(params.g(f_fix), flat)));
  const Tensor<T> att_mov = matmul(softmax(out.similarity, 1), reshape(h2_fix, flat));
  const Tensor<T> att_fix = matmul(softmax(transpose(out.similarity), 1), reshape(h1_mov, flat));
  out.att_mov = reshape(att_mov, volume_shape(grid, c));
  out.att_fix = reshape(att_fix, volume_shape(grid, c));
  out.gate_mov = sigmoid(params.gate_mov(out.att_mov));
  out.gate_fix = sigmoid(params.gate_fix(out.att_fix));
  out.o_mov = add(h1_mov, mul(mul_scalar(out.gate_mov, params.alpha_mov), h1_mov));
  out.o_fix = add(h2_fix, mul(mul_scalar(out.gate_fix, params.alpha_fix), h2_fix));
  return out;
}

template <typename T>
CoAttentionOutput<T> plain_projection_forward(const Tensor<T>& f_mov, const Tensor<T>& f_fix,
                                              const CoAttentionParams<T>& params) {
  check_inputs(f_mov, f_fix, params);
  CoAttentionOutput<T> out;
  out.o_mov = params.h1(f_mov);
  out.o_fix = params.h2(f_fix);
  return out;
}

#define COATREG_INSTANTIATE_COATT(T)                                                                     \
  template struct CoAttentionParams<T>;                                                                  \
  template CoAttentionOutput<T> co_attention_forward<T>(const Tensor<T>&, const Tensor<T>&,              \
                                                        const CoAttentionParams<T>&, std::size_t);       \
  template CoAttentionOutput<T> plain_projection_forward<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                            const CoAttentionParams<T>&);

COATREG_INSTANTIATE_COATT(float)
COATREG_INSTANTIATE_COATT(double)

#undef COATREG_INSTANTIATE_COATT

}  // namespace coatreg
