#include "hybridsep/tensor.h"

#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace hybridsep {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

Buffer& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void TensorImpl::accumulate(std::span<const double> g) {
  auto& buf = grad_buffer();
  if (g.size() != buf.size()) throw std::logic_error("gradient size mismatch");
  for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values) {
  return from_buffer(std::move(shape), Buffer(values.begin(), values.end()));
}

Tensor Tensor::from_buffer(Shape shape, Buffer values) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::size(int64_t d) const {
  const auto& s = shape();
  int64_t n = static_cast<int64_t>(s.size());
  if (d < 0) d += n;
  if (d < 0 || d >= n) throw std::out_of_range("dimension " + std::to_string(d) + " of " + shape_str(s));
  return s[static_cast<size_t>(d)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }
std::vector<double> Tensor::to_vector() const { return {impl_->data.begin(), impl_->data.end()}; }

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw std::out_of_range("at(): rank mismatch");
  int64_t offset = 0;
  size_t d = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= s[d]) throw std::out_of_range("at(): index out of range");
    offset = offset * s[d] + i;
    ++d;
  }
  return impl_->data[static_cast<size_t>(offset)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (impl_->grad_fn) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = value;
  return *this;
}

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  impl_->grad.clear();
}

Tensor Tensor::detach() const { return from_buffer(shape(), impl_->data); }
Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  if (numel() != 1) throw std::logic_error("backward() without seed needs a single-element tensor");
  std::vector<double> seed{1.0};
  backward(seed);
}

void Tensor::backward(std::span<const double> seed) const {
  if (!impl_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");
  if (static_cast<int64_t>(seed.size()) != numel()) throw std::invalid_argument("backward seed size mismatch");

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  impl_->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    if (!node->grad.empty()) node->grad_fn->backward(node->grad);
    // Interior gradients are not retained.
    Buffer().swap(node->grad);
  }
}

Tensor make_result(Shape shape, Buffer values, const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || needs_grad(t);
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  for (const auto& t : inputs)
    if (needs_grad(t)) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

}  // namespace hybridsep
