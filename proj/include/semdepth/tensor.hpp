#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semdepth/error.hpp"
#include "semdepth/shape.hpp"

namespace semdepth {

template <class T>
class Graph;

// Dense NCHW tensor. A tensor is either free-standing (plain data) or bound to
// a Graph node, in which case it participates in reverse-mode differentiation
// and its gradient lives in the graph until the graph is destroyed.
template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(shape),
        data_(std::make_shared<std::vector<T>>(
            static_cast<std::size_t>(shape.numel()), fill)) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(shape), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<std::int64_t>(data_->size()) != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor full(Shape shape, T value) { return Tensor(shape, value); }
  static Tensor zeros(Shape shape) { return Tensor(shape, T{}); }

  static Tensor scalar(T value) {
    return Tensor(Shape{1, 1, 1, 1}, std::vector<T>{value});
  }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }

  std::span<T> values() { return {data_->data(), data_->size()}; }
  std::span<const T> values() const { return {data_->data(), data_->size()}; }

  T& at(int n, int c, int y, int x) {
    return (*data_)[static_cast<std::size_t>(shape_.index(n, c, y, x))];
  }
  T at(int n, int c, int y, int x) const {
    return (*data_)[static_cast<std::size_t>(shape_.index(n, c, y, x))];
  }

  // Value of a scalar (1x1x1x1) tensor.
  T item() const {
    if (shape_.numel() != 1) {
      throw ShapeError("item() on non-scalar tensor " + shape_.str());
    }
    return (*data_)[0];
  }

  bool in_graph() const { return graph_ != nullptr; }
  Graph<T>* graph() const { return graph_; }
  int node() const { return node_; }

  // Gradient accumulated by the last backward pass; empty span if this tensor
  // received no gradient.
  std::span<const T> grad() const;
  bool has_grad() const;

  bool all_finite() const {
    for (T v : *data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  Shape shape_{};
  std::shared_ptr<std::vector<T>> data_;
  Graph<T>* graph_ = nullptr;
  int node_ = -1;

  friend class Graph<T>;
};

template <class From, class To>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> out(src.values().begin(), src.values().end());
  return Tensor<To>(src.shape(), std::move(out));
}

// Reverse-mode tape. Nodes are appended in execution order; one backward pass
// walks them exactly once in reverse insertion order, so gradients from
// multiple uses of a node accumulate by summation before the node itself is
// processed. Graphs are cheap to create and are discarded after each step.
template <class T>
class Graph {
 public:
  struct Node {
    const char* op;
    Shape shape;
    std::shared_ptr<std::vector<T>> value;
    std::vector<T> grad;  // allocated lazily during backward
    std::vector<int> inputs;
    std::function<void(Graph&, int)> backward;  // null for leaves
    bool trainable = false;
  };

  // When set, every op output is scanned for NaN/Inf as it is recorded.
  bool finite_checks = true;

  // Registers an existing tensor as a leaf, sharing its storage.
  Tensor<T> leaf(const Tensor<T>& plain, bool trainable = false) {
    if (plain.in_graph()) {
      throw ShapeError("leaf(): tensor already belongs to a graph");
    }
    Tensor<T> bound = plain;
    bound.graph_ = this;
    bound.node_ = add_node("leaf", plain.shape_, plain.data_, {}, nullptr,
                           trainable);
    return bound;
  }

  Tensor<T> constant(Shape shape, T value) {
    return leaf(Tensor<T>::full(shape, value), false);
  }

  // Records an op node; used by every operator and open to custom ops.
  Tensor<T> emplace(const char* op, Shape shape, std::vector<T> value,
                    std::vector<int> inputs,
                    std::function<void(Graph&, int)> backward) {
    auto storage = std::make_shared<std::vector<T>>(std::move(value));
    Tensor<T> out;
    out.shape_ = shape;
    out.data_ = storage;
    out.graph_ = this;
    out.node_ = add_node(op, shape, storage, std::move(inputs),
                         std::move(backward), false);
    if (finite_checks) {
      for (T v : *storage) {
        if (!std::isfinite(static_cast<double>(v))) {
          throw NumericalError(std::string("non-finite value in output of op '") +
                               op + "'");
        }
      }
    }
    return out;
  }

  void backward(const Tensor<T>& loss) {
    if (loss.graph_ != this) {
      throw ShapeError("backward(): tensor not bound to this graph");
    }
    if (loss.shape().numel() != 1) {
      throw ShapeError("backward(): loss must be scalar, got " +
                       loss.shape().str());
    }
    if (consumed_) {
      throw ShapeError("backward(): graph already consumed");
    }
    grad_buffer(loss.node_)[0] = T{1};
    for (int id = loss.node_; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.grad.empty() && n.backward) n.backward(*this, id);
    }
    consumed_ = true;
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Gradient accumulator of a node, zero-initialized on first touch.
  std::vector<T>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) {
      n.grad.assign(static_cast<std::size_t>(n.shape.numel()), T{});
    }
    return n.grad;
  }

  // True when a gradient for this node would ever be consumed: trainable
  // leaves and all interior nodes. Ops may skip work for dead inputs.
  bool wants_grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.trainable || n.backward != nullptr;
  }

  std::span<const T> values_of(int id) const {
    const auto& v = *nodes_[static_cast<std::size_t>(id)].value;
    return {v.data(), v.size()};
  }

 private:
  int add_node(const char* op, Shape shape, std::shared_ptr<std::vector<T>> value,
               std::vector<int> inputs, std::function<void(Graph&, int)> backward,
               bool trainable) {
    Node n;
    n.op = op;
    n.shape = shape;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.trainable = trainable;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!in_graph()) return {};
  const auto& g = graph_->node(node_).grad;
  return {g.data(), g.size()};
}

template <class T>
bool Tensor<T>::has_grad() const {
  return in_graph() && !graph_->node(node_).grad.empty();
}

}  // namespace semdepth
