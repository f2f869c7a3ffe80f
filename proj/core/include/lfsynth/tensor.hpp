#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lfsynth {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

// Dense row-major array of T with optional participation in a gradient tape.
//
// Tensor is a shared handle: copies alias the same storage, which is what lets
// a parameter be consumed by many ops and still collect one gradient. Values
// produced by an op are never modified afterwards; only leaves (parameters,
// inputs) may be written through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return defined() ? node_->data.size() : 0; }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;
  // Element of a rank-4 [B,C,H,W] tensor.
  T at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const;

  bool requires_grad() const noexcept { return defined() && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const noexcept { return !defined() || node_->is_leaf; }

  bool has_grad() const noexcept { return defined() && !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const;
  // Gradient storage, zero-allocated on first access.
  // Const because gradients live in the shared node, not in the handle.
  std::span<T> grad_buffer() const;
  void zero_grad();

  // New leaf holding a copy of the values, detached from any tape.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

  // Marks the tensor as the output of a recorded op.
  void mark_op_output();

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

// Ordered record of executed ops. Each entry holds the adjoint closure that
// maps the output gradient onto the input gradients.
template <typename T>
class Tape {
 public:
  void record(std::string_view op, std::function<void()> adjoint);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<std::string_view> ops() const;
  void clear() noexcept { entries_.clear(); }

  // Op names in the order the last backward() visited them.
  const std::vector<std::string_view>& last_trace() const noexcept { return trace_; }

  template <typename U>
  friend void backward(const Tensor<U>& loss, Tape<U>& tape);

 private:
  struct Entry {
    std::string_view op;
    std::function<void()> adjoint;
  };
  std::vector<Entry> entries_;
  std::vector<std::string_view> trace_;
};

// Tape that ops on this thread record into, or nullptr when recording is off.
template <typename T>
Tape<T>* active_tape() noexcept;

// Activates a tape on the current thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording (e.g. for finite-difference probes or evaluation).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() noexcept;
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients are
// accumulated, not overwritten: call zero_grad() on leaves between steps.
// The tape is cleared afterwards. Throws InvariantError for a non-scalar loss.
template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape);

}  // namespace lfsynth
