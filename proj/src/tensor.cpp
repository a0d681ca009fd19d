// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace fairkd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

// BackwardContext

template <typename T>
std::span<const T> BackwardContext<T>::grad() const {
  return node_.grad;
}

template <typename T>
std::span<const T> BackwardContext<T>::value() const {
  return node_.value;
}

template <typename T>
const Shape& BackwardContext<T>::shape() const {
  return node_.shape;
}

template <typename T>
std::size_t BackwardContext<T>::num_inputs() const {
  return node_.parents.size();
}

template <typename T>
std::span<const T> BackwardContext<T>::input(std::size_t i) const {
  return node_.parents.at(i)->value;
}

template <typename T>
const Shape& BackwardContext<T>::input_shape(std::size_t i) const {
  return node_.parents.at(i)->shape;
}

template <typename T>
bool BackwardContext<T>::wants(std::size_t i) const {
  return node_.parents.at(i)->requires_grad;
}

template <typename T>
std::span<T> BackwardContext<T>::input_grad(std::size_t i) const {
  auto& p = *node_.parents.at(i);
  if (!p.requires_grad) return {};
  return p.grad;
}

// Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> v(numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = detail::next_node_id();
  if (requires_grad) node->grad.assign(node->value.size(), T(0));
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(std::string op, Shape shape, std::vector<T> values,
                             const std::vector<Tensor>& inputs, BackwardFn<T> backward) {
  Tensor out = from(std::move(shape), std::move(values), false);
  out.node_->op = std::move(op);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
detail::Node<T>& Tensor<T>::node() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return node().shape;
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return node().value.size();
}

template <typename T>
std::size_t Tensor<T>::extent(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  return s[axis];
}

template <typename T>
const std::string& Tensor<T>::op() const {
  return node().op;
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  return node().value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  return node().value;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().value[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node().requires_grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node().grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return node().grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& n = node();
  if (n.requires_grad) n.grad.assign(n.value.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node().value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from(shape(), node().value, requires_grad());
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  auto& n = node();
  if (!n.parents.empty()) throw Error("set_requires_grad is only valid on leaf tensors");
  n.requires_grad = flag;
  if (flag) {
    n.grad.assign(n.value.size(), T(0));
  } else {
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

template <typename T>
std::uint64_t Tensor<T>::id() const {
  return node().id;
}

template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined()) throw Error("backward on an undefined tensor");
  if (root.rank() != 0) {
    throw ShapeError("backward requires a scalar root, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack{root.node_.get()};
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Parents are always created before children, so descending id is a
  // reverse topological order.
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });

  for (auto* n : order) {
    if (!n->parents.empty() || n->grad.size() != n->value.size()) {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  root.node_->grad[0] += T(1);
  for (auto* n : order) {
    if (n->backward) n->backward(BackwardContext<T>(*n));
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class BackwardContext<float>;
template class BackwardContext<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace fairkd
