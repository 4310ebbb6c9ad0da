#pragma once

// Reverse-mode autodiff tensor. Each op builds a node holding its value and
// a closure that scatters the node's gradient into its parents. backward()
// walks the implicit tape (the parent DAG) in reverse topological order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>

#include "common.hpp"

namespace kseg {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;
  bool requires_grad = false;
  bool trainable = true;  // only meaningful for parameters
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backprop;  // pulls from this->grad into parents' grads

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    require(numel(shape) == data.size(), ErrorClass::Shape,
            "element count " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
    node_ = std::make_shared<Node<T>>();
    node_->shape = std::move(shape);
    node_->val = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), std::vector<T>(numel(shape), T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    return Tensor(std::move(shape), std::vector<T>(numel(shape), v), requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->val.size(); }
  std::vector<T>& data() { return node_->val; }
  const std::vector<T>& data() const { return node_->val; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  bool trainable() const { return node_->trainable; }
  void set_trainable(bool b) { node_->trainable = b; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  T item() const {
    require(size() == 1, ErrorClass::Shape, "item() on non-scalar tensor");
    return node_->val[0];
  }

  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the values (cuts the tape).
  Tensor detach() const {
    return Tensor(node_->shape, node_->val, false);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
std::shared_ptr<Node<T>> make_op_node(Shape shape,
                                      std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->val.resize(numel(n->shape));
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  return n;
}

}  // namespace detail

// ---- elementwise arithmetic -------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorClass::Shape,
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = detail::make_op_node<T>(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] + b.data()[i];
  auto na = a.node(), nb = b.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, nb] {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) na->grad[i] += self->grad[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) nb->grad[i] += self->grad[i];
    }
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorClass::Shape, "sub: shape mismatch");
  auto n = detail::make_op_node<T>(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] - b.data()[i];
  auto na = a.node(), nb = b.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, nb] {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) na->grad[i] += self->grad[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) nb->grad[i] -= self->grad[i];
    }
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorClass::Shape, "mul: shape mismatch");
  auto n = detail::make_op_node<T>(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] * b.data()[i];
  auto na = a.node(), nb = b.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, nb] {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        na->grad[i] += self->grad[i] * nb->val[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        nb->grad[i] += self->grad[i] * na->val[i];
    }
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorClass::Shape, "div: shape mismatch");
  auto n = detail::make_op_node<T>(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] / b.data()[i];
  auto na = a.node(), nb = b.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, nb] {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        na->grad[i] += self->grad[i] / nb->val[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        nb->grad[i] -= self->grad[i] * na->val[i] / (nb->val[i] * nb->val[i]);
    }
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.data()[i] * s;
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, s] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) na->grad[i] += self->grad[i] * s;
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  auto n = detail::make_op_node<T>(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.data()[i] + s;
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) na->grad[i] += self->grad[i];
  };
  return Tensor<T>(n);
}

// ---- reductions -------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto n = detail::make_op_node<T>(Shape{1}, {a.node()});
  T acc = 0;
  for (T v : a.data()) acc += v;
  n->val[0] = acc;
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < na->grad.size(); ++i) na->grad[i] += self->grad[0];
  };
  return Tensor<T>(n);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// Sum over batch and spatial dims of an NCHW tensor, leaving a [C] vector.
template <class T>
Tensor<T> sum_per_channel(const Tensor<T>& a) {
  require(a.shape().size() == 4, ErrorClass::Shape, "sum_per_channel expects NCHW");
  const std::size_t N = a.shape()[0], C = a.shape()[1], HW = a.shape()[2] * a.shape()[3];
  auto n = detail::make_op_node<T>(Shape{C}, {a.node()});
  std::fill(n->val.begin(), n->val.end(), T(0));
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = a.data().data() + (b * C + c) * HW;
      T acc = 0;
      for (std::size_t i = 0; i < HW; ++i) acc += src[i];
      n->val[c] += acc;
    }
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, N, C, HW] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        T g = self->grad[c];
        T* dst = na->grad.data() + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) dst[i] += g;
      }
  };
  return Tensor<T>(n);
}

// Weighted sum of a [C] vector with constant weights -> scalar.
template <class T>
Tensor<T> dot_const(const Tensor<T>& a, const std::vector<T>& w) {
  require(a.size() == w.size(), ErrorClass::Shape, "dot_const: length mismatch");
  auto n = detail::make_op_node<T>(Shape{1}, {a.node()});
  T acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += a.data()[i] * w[i];
  n->val[0] = acc;
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na, w] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < w.size(); ++i) na->grad[i] += self->grad[0] * w[i];
  };
  return Tensor<T>(n);
}

// ---- shape ops --------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.size(), ErrorClass::Shape,
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto n = detail::make_op_node<T>(std::move(shape), {a.node()});
  n->val = a.data();
  auto na = a.node();
  Node<T>* self = n.get();
  n->backprop = [self, na] {
    if (!na->requires_grad) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) na->grad[i] += self->grad[i];
  };
  return Tensor<T>(n);
}

// ---- backward ---------------------------------------------------------------

template <class T>
void backward(const Tensor<T>& loss) {
  require(loss.size() == 1, ErrorClass::Shape, "backward: loss must be scalar");
  require(loss.requires_grad(), ErrorClass::State,
          "backward: loss does not depend on any requires_grad tensor");

  // Reverse topological order by iterative post-order DFS over parents.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace kseg
