#include "coatreg/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "coatreg/error.hpp"

namespace coatreg {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (element_count(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
                     " elements");
  }
  node_ = std::make_shared<Node>(Node{std::move(shape), std::move(data), requires_grad});
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> data) {
  return Tensor(std::move(shape), std::move(data), true);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return shape().empty() ? 0 : node_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->data;
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

template <typename T>
Grid3 Tensor<T>::grid() const {
  const auto& s = shape();
  if (s.size() != 4) throw ShapeError("expected a {D,H,W,C} volume, got " + shape_string(s));
  return {s[2], s[1], s[0]};
}

template <typename T>
std::size_t Tensor<T>::channels() const {
  const auto& s = shape();
  if (s.size() != 4) throw ShapeError("expected a {D,H,W,C} volume, got " + shape_string(s));
  return s[3];
}

template <typename T>
Tape<T>* Tape<T>::current() noexcept {
  return TapeScope<T>::active_slot();
}

template <typename T>
typename Tape<T>::Entry* Tape<T>::find(const Tensor<T>& t) {
  auto it = index_.find(t.identity());
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
const typename Tape<T>::Entry* Tape<T>::find(const Tensor<T>& t) const {
  auto it = index_.find(t.identity());
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
bool Tape<T>::tracks(const Tensor<T>& t) const {
  return t.defined() && (t.requires_grad() || index_.count(t.identity()) != 0);
}

template <typename T>
void Tape<T>::record(const Tensor<T>& result, BackwardFn fn) {
  if (consumed_) throw UsageError("tape already consumed by backward(); reset() before recording");
  if (index_.count(result.identity())) throw UsageError("tensor recorded twice on one tape");
  index_.emplace(result.identity(), entries_.size());
  entries_.push_back(Entry{result, std::move(fn), {}});
}

template <typename T>
void Tape<T>::accumulate(const Tensor<T>& t, std::span<const T> grad) {
  if (!tracks(t)) return;
  Entry* e = find(t);
  if (e == nullptr) {
    // First contribution to a parameter leaf.
    index_.emplace(t.identity(), entries_.size());
    entries_.push_back(Entry{t, nullptr, {}});
    e = &entries_.back();
  }
  if (grad.size() != t.numel()) throw ShapeError("gradient size does not match tensor " + shape_string(t.shape()));
  if (e->grad.empty()) {
    e->grad.assign(grad.begin(), grad.end());
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) e->grad[i] += grad[i];
  }
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw UsageError("backward() called twice on the same tape without reset()");
  if (!loss.defined() || loss.numel() != 1) throw UsageError("backward() needs a scalar loss");
  Entry* root = find(loss);
  if (root == nullptr || !root->backward) throw UsageError("loss was not produced on this tape");
  consumed_ = true;
  root->grad.assign(1, T(1));
  // Entries appended during the sweep are parameter leaves; they have no
  // backward function, so a stable index bound suffices.
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (!entries_[i].backward || entries_[i].grad.empty()) continue;
    // Copy out: accumulate() may grow entries_ and invalidate references.
    std::vector<T> g = std::move(entries_[i].grad);
    BackwardFn fn = entries_[i].backward;
    fn(g, *this);
    entries_[i].grad = std::move(g);
  }
}

template <typename T>
std::vector<T> Tape<T>::grad(const Tensor<T>& t) const {
  const Entry* e = find(t);
  if (e == nullptr || e->grad.empty()) return std::vector<T>(t.numel(), T(0));
  return e->grad;
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  index_.clear();
  consumed_ = false;
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_slot()) {
  active_slot() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_slot() = previous_;
}

template <typename T>
Tape<T>*& TapeScope<T>::active_slot() noexcept {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

namespace {
thread_local KinkProbe* active_probe = nullptr;
thread_local GradientFault* active_fault = nullptr;
}

KinkProbe::KinkProbe() : previous_(active_probe) { active_probe = this; }

KinkProbe::~KinkProbe() { active_probe = previous_; }

void KinkProbe::mix(std::uint64_t value) noexcept {
  hash_ ^= value + 0x9e3779b97f4a7c15ULL + (hash_ << 6) + (hash_ >> 2);
  hash_ *= 1099511628211ULL;
}

KinkProbe* KinkProbe::active() noexcept { return active_probe; }

GradientFault::GradientFault(std::string op, double relative_error)
    : op_(std::move(op)), relative_error_(relative_error), previous_(active_fault) {
  active_fault = this;
}

GradientFault::~GradientFault() { active_fault = previous_; }

const GradientFault* GradientFault::active() noexcept { return active_fault; }

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;

}  // namespace coatreg
