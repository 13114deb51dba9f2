#include "coatreg/layers.hpp"

#include <cmath>

namespace coatreg {
namespace {

template <typename T>
std::vector<T> glorot_uniform(std::size_t n, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> w(n);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return w;
}

}  // namespace

template <typename T>
ConvLayer<T> ConvLayer<T>::zeros(std::size_t kernel, std::size_t cin, std::size_t cout) {
  const Shape ws{kernel, kernel, kernel, cin, cout};
  return {Tensor<T>::parameter(ws, std::vector<T>(element_count(ws), T(0))),
          Tensor<T>::parameter(Shape{cout}, std::vector<T>(cout, T(0)))};
}

template <typename T>
ConvLayer<T> ConvLayer<T>::glorot(std::size_t kernel, std::size_t cin, std::size_t cout, Rng& rng) {
  const Shape ws{kernel, kernel, kernel, cin, cout};
  const double taps = static_cast<double>(kernel * kernel * kernel);
  return {Tensor<T>::parameter(ws, glorot_uniform<T>(element_count(ws), taps * cin, taps * cout, rng)),
          Tensor<T>::parameter(Shape{cout}, std::vector<T>(cout, T(0)))};
}

template <typename T>
UpConvLayer<T> UpConvLayer<T>::glorot(Axes3 factor, std::size_t cin, std::size_t cout, Rng& rng) {
  const Shape ws{factor[2], factor[1], factor[0], cout, cin};
  const double taps = static_cast<double>(factor[0] * factor[1] * factor[2]);
  return {Tensor<T>::parameter(ws, glorot_uniform<T>(element_count(ws), taps * cin, taps * cout, rng)),
          Tensor<T>::parameter(Shape{cout}, std::vector<T>(cout, T(0))), factor};
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct UpConvLayer<float>;
template struct UpConvLayer<double>;

}  // namespace coatreg
