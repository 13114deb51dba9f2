#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coatreg/layers.hpp"

namespace coatreg {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter registry. Moments are kept in T; updates are
// computed in double and rounded once.
template <typename T>
class Adam {
 public:
  Adam(ParameterList<T> params, AdamOptions options);

  // grads[i] matches params[i].
  void step(const std::vector<std::vector<T>>& grads);

  [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }
  [[nodiscard]] const ParameterList<T>& params() const noexcept { return params_; }
  [[nodiscard]] const AdamOptions& options() const noexcept { return options_; }
  [[nodiscard]] const std::vector<std::vector<T>>& first_moments() const noexcept { return m_; }
  [[nodiscard]] const std::vector<std::vector<T>>& second_moments() const noexcept { return v_; }

  // Restores moments and step count, e.g. from a checkpoint.
  void restore(std::vector<std::vector<T>> m, std::vector<std::vector<T>> v, std::uint64_t steps);

 private:
  ParameterList<T> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::uint64_t steps_ = 0;
};

}  // namespace coatreg
