#include "lfsynth/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "lfsynth/error.hpp"

namespace lfsynth {

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::TensorNode<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : node_(std::make_shared<detail::TensorNode<T>>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw InvariantError("tensor: use of undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw InvariantError("tensor: use of undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw InvariantError("tensor: use of undefined tensor");
  if (!node_->is_leaf) throw InvariantError("tensor: op outputs are immutable");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("tensor: item() on non-scalar " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
  const Shape& s = shape();
  return node_->data[((b * s[1] + c) * s[2] + y) * s[3] + x];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw InvariantError("tensor: use of undefined tensor");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (!node_) throw InvariantError("tensor: use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T{0});
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->data);
}

template <typename T>
void Tensor<T>::mark_op_output() {
  node_->requires_grad = true;
  node_->is_leaf = false;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::function<void()> adjoint) {
  entries_.push_back({op, std::move(adjoint)});
}

template <typename T>
std::vector<std::string_view> Tape<T>::ops() const {
  std::vector<std::string_view> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

namespace {

template <typename T>
Tape<T>*& active_tape_slot() noexcept {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
Tape<T>* active_tape() noexcept {
  return active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) noexcept : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() noexcept : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  active_tape_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InvariantError("backward: loss must be a scalar tensor, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw InvariantError("backward: loss was not produced under a tape");
  }
  Tensor<T> seed = loss;
  seed.grad_buffer()[0] += T{1};
  tape.trace_.clear();
  tape.trace_.reserve(tape.entries_.size());
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    tape.trace_.push_back(it->op);
    it->adjoint();
  }
  tape.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template Tape<float>* active_tape<float>() noexcept;
template Tape<double>* active_tape<double>() noexcept;
template void backward<float>(const Tensor<float>&, Tape<float>&);
template void backward<double>(const Tensor<double>&, Tape<double>&);

}  // namespace lfsynth
