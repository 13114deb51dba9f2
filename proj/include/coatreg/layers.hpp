#pragma once

#include <string>
#include <vector>

#include "coatreg/ops.hpp"
#include "coatreg/rng.hpp"

namespace coatreg {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

// Convolution with bias. weight {K,K,K,Cin,Cout}.
template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;

  static ConvLayer zeros(std::size_t kernel, std::size_t cin, std::size_t cout);
  // Glorot-uniform weights, zero bias.
  static ConvLayer glorot(std::size_t kernel, std::size_t cin, std::size_t cout, Rng& rng);

  [[nodiscard]] std::size_t in_channels() const { return weight.shape()[3]; }
  [[nodiscard]] std::size_t out_channels() const { return weight.shape()[4]; }

  Tensor<T> operator()(const Tensor<T>& x, ConvOptions options = {}) const {
    return conv3d(x, weight, bias, options);
  }
  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

// Transposed convolution with bias. weight {K,K,K,Cout,Cin}, kernel == stride.
template <typename T>
struct UpConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  Axes3 stride{2, 2, 2};

  static UpConvLayer glorot(Axes3 factor, std::size_t cin, std::size_t cout, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose3d(x, weight, bias, stride); }
  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace coatreg
