// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fairkd/error.hpp"

namespace fairkd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node;

}  // namespace detail

/// View handed to a backward rule. Rules read the output gradient and
/// accumulate (+=) into the gradients of the inputs that want one.
template <typename T>
class BackwardContext {
 public:
  explicit BackwardContext(detail::Node<T>& node) : node_(node) {}

  std::span<const T> grad() const;
  std::span<const T> value() const;
  const Shape& shape() const;

  std::size_t num_inputs() const;
  std::span<const T> input(std::size_t i) const;
  const Shape& input_shape(std::size_t i) const;
  bool wants(std::size_t i) const;
  std::span<T> input_grad(std::size_t i) const;

 private:
  detail::Node<T>& node_;
};

template <typename T>
using BackwardFn = std::function<void(const BackwardContext<T>&)>;

namespace detail {

std::uint64_t next_node_id();

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode autodiff bookkeeping.
///
/// A Tensor is a cheap handle: copies share the same node, so a parameter
/// handle stored in a weight struct and the one used inside a graph refer to
/// the same storage. A rank-0 tensor (empty shape) is a scalar.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  /// Creates the output of an operation. When no input requires a gradient
  /// the result is a constant and the backward rule is dropped.
  static Tensor from_op(std::string op, Shape shape, std::vector<T> values,
                        const std::vector<Tensor>& inputs, BackwardFn<T> backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t extent(std::size_t axis) const;
  const std::string& op() const;

  std::span<const T> values() const;
  std::span<T> mutable_values();
  T item() const;

  bool requires_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Copy of the values with no autodiff history.
  Tensor detach() const;
  /// Deep copy that keeps the requires_grad flag but drops history.
  Tensor clone() const;
  void set_requires_grad(bool flag);

  std::uint64_t id() const;

 private:
  template <typename U>
  friend void backward(const Tensor<U>& root);

  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
  detail::Node<T>& node() const;

  std::shared_ptr<detail::Node<T>> node_;
};

/// Propagates d(root)/d(x) into every reachable tensor that requires a
/// gradient. Leaf gradients accumulate across calls; intermediate gradients
/// are reset at the start of each call. Nodes are visited in reverse
/// creation order.
template <typename T>
void backward(const Tensor<T>& root);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class BackwardContext<float>;
extern template class BackwardContext<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace fairkd
