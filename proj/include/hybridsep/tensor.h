#pragma once

// Dense double-precision tensors with tape-free reverse-mode differentiation.
//
// Every tensor is row-major and contiguous. An operation whose inputs require
// gradients records a Node holding its inputs and a closure that maps the
// output gradient onto the input gradients. Tensor::backward() walks the
// resulting DAG in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hybridsep {

using Shape = std::vector<int64_t>;

/// Cache-line aligned storage. Vectorised kernels peel a number of leading
/// elements that depends on the address, which changes the rounding of sums;
/// a fixed alignment keeps results bitwise reproducible across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  void accumulate(std::span<const double> g);
  Buffer& grad_buffer();
};

using BackwardFn = std::function<void(const Buffer& grad_out)>;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, const std::vector<double>& values);
  static Tensor from_buffer(Shape shape, Buffer values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t ndim() const { return static_cast<int64_t>(shape().size()); }
  /// Size of dimension `d`; negative indices count from the back.
  int64_t size(int64_t d) const;
  int64_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  /// Accumulated gradient; empty span when none has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  /// A copy that shares no graph history with this tensor.
  Tensor detach() const;
  Tensor clone() const;

  /// Back-propagates from a single-element tensor.
  void backward() const;
  /// Back-propagates with an explicit seed gradient of the same shape.
  void backward(std::span<const double> seed) const;

  // Internal plumbing for op implementations.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Builds an op result. When grad mode is on and any input requires grad,
/// the result records `backward`, which receives the output gradient and is
/// responsible for accumulating into whichever inputs require it.
Tensor make_result(Shape shape, Buffer values, const std::vector<Tensor>& inputs,
                   detail::BackwardFn backward);

/// True when gradients must be delivered to `t` during backward.
inline bool needs_grad(const Tensor& t) { return t.defined() && t.impl()->requires_grad; }

}  // namespace hybridsep
