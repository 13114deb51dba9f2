#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "coatreg/ops.hpp"
#include "coatreg/rng.hpp"
#include "coatreg/tensor.hpp"

namespace testsupport {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "coatreg";
    if (info != nullptr) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    for (auto& ch : name) {
      if (ch == '/') ch = '_';
    }
    static int counter = 0;
    name += "_" + std::to_string(counter++);
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T = double>
std::vector<T> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  coatreg::Rng rng = coatreg::make_rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T = double>
coatreg::Tensor<T> random_tensor(coatreg::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = false) {
  const std::size_t n = coatreg::element_count(shape);
  return coatreg::Tensor<T>(std::move(shape), uniform<T>(n, seed, lo, hi), requires_grad);
}

// Central-difference gradient of a scalar function of one leaf tensor.
inline std::vector<double> numeric_gradient(coatreg::Tensor<double> leaf,
                                            const std::function<double()>& f, double h = 1e-4) {
  auto x = leaf.mutable_data();
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Analytic gradient of loss(leaf) through a fresh tape.
inline std::vector<double> analytic_gradient(const coatreg::Tensor<double>& leaf,
                                             const std::function<coatreg::Tensor<double>()>& loss) {
  coatreg::Tape<double> tape;
  coatreg::TapeScope<double> scope(tape);
  const auto l = loss();
  tape.backward(l);
  return tape.grad(leaf);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
std::vector<T> values(const coatreg::Tensor<T>& t) {
  const auto d = t.data();
  return {d.begin(), d.end()};
}

}  // namespace testsupport
