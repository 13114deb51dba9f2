#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to immutable row-major data (last extent
// fastest). Volumetric tensors use the extent order {D, H, W, C}, which puts
// channels innermost, then x, then y, then z.
//
// Gradients live on a Tape, not on the tensors. Parameters are leaf tensors
// created with requires_grad; every op evaluated while a Tape is active on the
// current thread and touching a tracked input is recorded. The tape is
// build-then-consume: one forward graph, one backward(), then reset().
// Independent threads may hold independent tapes over shared parameters.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "coatreg/kernels.hpp"

namespace coatreg {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);
  // Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<T> data);

  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t numel() const;
  [[nodiscard]] std::span<const T> data() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] T item() const;
  [[nodiscard]] T at(std::size_t flat) const { return data()[flat]; }

  // In-place access for parameter initialization and optimizer updates.
  // Must not be used on a tensor that a live tape still references for
  // backward, or recorded gradients go stale.
  [[nodiscard]] std::span<T> mutable_data();

  // Volumetric view of a {D, H, W, C} tensor.
  [[nodiscard]] Grid3 grid() const;
  [[nodiscard]] std::size_t channels() const;

  [[nodiscard]] const void* identity() const noexcept { return node_.get(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

inline Shape volume_shape(Grid3 grid, std::size_t channels) { return {grid.d, grid.h, grid.w, channels}; }

template <typename T>
class Tape {
 public:
  // Receives the gradient of the recorded output and pushes contributions to
  // its inputs through accumulate().
  using BackwardFn = std::function<void(std::span<const T> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Thread-local active tape, or nullptr.
  static Tape* current() noexcept;

  // True when gradients must flow into t: a parameter leaf, or a result
  // recorded on this tape.
  [[nodiscard]] bool tracks(const Tensor<T>& t) const;

  void record(const Tensor<T>& result, BackwardFn fn);
  void accumulate(const Tensor<T>& t, std::span<const T> grad);

  void backward(const Tensor<T>& loss);

  // Gradient of the last backward() w.r.t. t; zeros when t was not reached.
  [[nodiscard]] std::vector<T> grad(const Tensor<T>& t) const;

  void reset();
  [[nodiscard]] bool consumed() const noexcept { return consumed_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    Tensor<T> tensor;
    BackwardFn backward;
    std::vector<T> grad;
  };

  Entry* find(const Tensor<T>& t);
  const Entry* find(const Tensor<T>& t) const;

  std::vector<Entry> entries_;
  std::unordered_map<const void*, std::size_t> index_;
  bool consumed_ = false;
};

// Makes a tape current for the lifetime of the scope (nesting restores the
// previous one).
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  static Tape<T>*& active_slot() noexcept;
  Tape<T>* previous_;

  friend class Tape<T>;
};

// Differentiability probe used by finite-difference checking. While a probe
// is installed on the current thread, ops with piecewise behaviour (ReLU
// sign, interpolation cell, clamping) fold their branch decisions into a
// running hash. Two evaluations with equal hashes lie on the same smooth
// piece of the function.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  void mix(std::uint64_t value) noexcept;
  [[nodiscard]] std::uint64_t signature() const noexcept { return hash_; }

  static KinkProbe* active() noexcept;

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  KinkProbe* previous_;
};

// Fault injection for testing the gradient checker. While installed on the
// current thread, backward passes of the named op receive their incoming
// gradient scaled by (1 + relative_error).
class GradientFault {
 public:
  GradientFault(std::string op, double relative_error);
  ~GradientFault();
  GradientFault(const GradientFault&) = delete;
  GradientFault& operator=(const GradientFault&) = delete;

  static const GradientFault* active() noexcept;

  template <typename T>
  static typename Tape<T>::BackwardFn wrap(const char* op, typename Tape<T>::BackwardFn fn) {
    const GradientFault* f = active();
    if (f == nullptr || f->op_ != op) return fn;
    const T factor = static_cast<T>(1.0 + f->relative_error_);
    return [fn = std::move(fn), factor](std::span<const T> g, Tape<T>& tape) {
      std::vector<T> scaled(g.begin(), g.end());
      for (auto& v : scaled) v *= factor;
      fn(scaled, tape);
    };
  }

 private:
  std::string op_;
  double relative_error_;
  GradientFault* previous_;
};

}  // namespace coatreg
