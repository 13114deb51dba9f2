#include "coatreg/optim.hpp"

#include <cmath>

#include "coatreg/error.hpp"

namespace coatreg {

template <typename T>
Adam<T>::Adam(ParameterList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0) || !(options_.eps > 0.0) || !(options_.beta1 >= 0.0 && options_.beta1 < 1.0) ||
      !(options_.beta2 >= 0.0 && options_.beta2 < 1.0)) {
    throw UsageError("adam: lr and eps must be positive, betas in [0, 1)");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(const std::vector<std::vector<T>>& grads) {
  if (grads.size() != params_.size()) throw UsageError("adam: gradient count does not match parameters");
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].tensor.mutable_data();
    if (grads[i].size() != p.size()) throw UsageError("adam: gradient size mismatch for " + params_[i].name);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i][k];
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * g * g);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] = static_cast<T>(p[k] - options_.lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template <typename T>
void Adam<T>::restore(std::vector<std::vector<T>> m, std::vector<std::vector<T>> v, std::uint64_t steps) {
  if (m.size() != params_.size() || v.size() != params_.size()) throw UsageError("adam: moment count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].tensor.numel() || v[i].size() != params_[i].tensor.numel()) {
      throw UsageError("adam: moment size mismatch for " + params_[i].name);
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace coatreg
