#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace panoswin {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised by tensor ops on incompatible operands; the message names the op
/// and every offending shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// Cache-line aligned storage. Eigen's vectorized reductions peel a scalar
/// head up to the first aligned element, so the rounding of a sum would
/// otherwise depend on where malloc happened to place the buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign})); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t{kAlign}); }
  bool operator==(const AlignedAllocator&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major float64 array with optional reverse-mode gradient.
///
/// Tensor is a shared handle: copies alias the same storage, like a
/// framework tensor. Use clone() or detach() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false);
  static Tensor from(Shape shape, detail::Buffer values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false) {
    return from(std::move(shape), detail::Buffer(values), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> values() const { return node_->data; }
  std::span<double> mutable_values() { return node_->data; }
  double item() const;
  double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);

  /// Gradient buffer; empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  /// Reverse-mode sweep from a single-element tensor, seeding d/d(this) = 1.
  void backward();

  /// Same values, no graph history, fresh storage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Throws if any value is NaN or infinite (a debug aid; cheap enough to
  /// call on losses every step).
  void check_finite(const char* where) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether new ops record graph history on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// A named learnable tensor. Frozen parameters still receive gradients but
/// optimizers skip them.
struct Param {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

}  // namespace panoswin
