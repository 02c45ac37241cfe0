#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "tslab/common.hpp"

namespace tslab {

// Reverse-mode autodiff over a dynamically recorded graph. Each op creates a
// fresh node holding its forward value and a closure that scatters the node's
// gradient into its parents. backward() walks the recorded graph from a
// scalar loss in reverse topological order.

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<real> values;
  std::vector<real> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return values.size(); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    auto node = std::make_shared<detail::Node>();
    node->values.assign(detail::shape_product(shape), 0.0);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<real> values) {
    if (detail::shape_product(shape) != values.size()) {
      throw dim_error("tensor: shape product " + std::to_string(detail::shape_product(shape)) +
                      " != value count " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor scalar(real v) { return from({1}, {v}); }

  static Tensor vector(std::initializer_list<real> vs) { return from({vs.size()}, std::vector<real>(vs)); }

  static Tensor matrix(std::initializer_list<std::initializer_list<real>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<real> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw dim_error("tensor: ragged matrix literal");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(flat));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<real>& values() { return node_->values; }
  const std::vector<real>& values() const { return node_->values; }

  real item() const {
    if (size() != 1) throw dim_error("item: tensor has " + std::to_string(size()) + " elements");
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  // Leaf-only: marks the tensor as a differentiable input and allocates grad.
  Tensor& set_requires_grad(bool on) {
    if (on && node_->backward_fn) throw state_error("set_requires_grad: not a leaf tensor");
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
    return *this;
  }

  std::vector<real>& grad() {
    if (!node_->requires_grad) throw state_error("grad: tensor does not require grad");
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<real>& grad() const {
    if (!node_->requires_grad) throw state_error("grad: tensor does not require grad");
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->values.size(), 0.0);
  }

  void assert_finite(const std::string& context) const {
    check_finite(node_->values, context);
  }

  // Detached deep copy (values only, no graph edges).
  Tensor clone_detached() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->values = node_->values;
    return Tensor(std::move(node));
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::vector<std::size_t> shape, std::vector<real> values,
                        std::vector<Tensor> parents, std::function<void(detail::Node&)> backward_fn);
};

// Scoped switch that disables graph recording (evaluation passes).
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Creates a graph node. The backward closure is dropped when no parent needs
// gradients, so inference passes record nothing.
inline Tensor make_op(std::vector<std::size_t> shape, std::vector<real> values,
                      std::vector<Tensor> parents, std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs = GradMode::enabled();
  if (needs) {
    needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// Populates gradients of every tensor reachable from a scalar loss. Repeated
// calls without zero_grad accumulate into leaf gradients.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw param_error("backward: loss must be scalar, got " + std::to_string(loss.size()) + " elements");
  }
  if (!loss.requires_grad()) return;  // nothing reachable requires grad

  // Iterative post-order topological sort.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next].get();
      ++next;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior nodes get fresh gradients each call; leaves accumulate.
  for (detail::Node* n : order) {
    if (n->backward_fn) {
      n->grad.assign(n->values.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise / structural primitives
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw dim_error(std::string(op) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node(); auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i]; }
    if (bn->requires_grad) { bn->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i]; }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto an = a.node(); auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i]; }
    if (bn->requires_grad) { bn->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) bn->grad[i] -= self.grad[i]; }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node(); auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * bn->values[i]; }
    if (bn->requires_grad) { bn->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i] * an->values[i]; }
  });
}

inline Tensor scale(const Tensor& a, real c) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an, c](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i] * c; }
  });
}

// 64-bit accumulation is the default everywhere since real == double; the
// explicit long-double is unnecessary, plain summation in `real` suffices.
inline Tensor sum(const Tensor& a) {
  real acc = 0.0;
  for (real v : a.values()) acc += v;
  auto an = a.node();
  return make_op({1}, {acc}, {a}, [an](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0]; }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw dim_error("mean: empty tensor");
  real acc = 0.0;
  for (real v : a.values()) acc += v;
  real inv = 1.0 / static_cast<real>(a.size());
  auto an = a.node();
  return make_op({1}, {acc * inv}, {a}, [an, inv](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0] * inv; }
  });
}

inline Tensor sum_squares(const Tensor& a) {
  real acc = 0.0;
  for (real v : a.values()) acc += v * v;
  auto an = a.node();
  return make_op({1}, {acc}, {a}, [an](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0] * 2.0 * an->values[i]; }
  });
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw dim_error("concat: expects rank-1 tensors");
  std::vector<real> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  std::size_t na = a.size();
  auto an = a.node(); auto bn = b.node();
  return make_op({a.size() + b.size()}, std::move(out), {a, b}, [an, bn, na](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < na; ++i) an->grad[i] += self.grad[i]; }
    if (bn->requires_grad) { bn->ensure_grad(); for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += self.grad[na + i]; }
  });
}

inline Tensor slice(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() != 1) throw dim_error("slice: expects rank-1 tensor");
  if (start + len > a.size()) throw dim_error("slice: out of range");
  std::vector<real> out(a.values().begin() + static_cast<std::ptrdiff_t>(start),
                        a.values().begin() + static_cast<std::ptrdiff_t>(start + len));
  auto an = a.node();
  return make_op({len}, std::move(out), {a}, [an, start, len](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < len; ++i) an->grad[start + i] += self.grad[i]; }
  });
}

// Row i of a [R x C] tensor as a length-C vector.
inline Tensor row(const Tensor& a, std::size_t i) {
  if (a.rank() != 2) throw dim_error("row: expects rank-2 tensor");
  std::size_t cols = a.dim(1);
  if (i >= a.dim(0)) throw dim_error("row: index out of range");
  std::vector<real> out(a.values().begin() + static_cast<std::ptrdiff_t>(i * cols),
                        a.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
  auto an = a.node();
  return make_op({cols}, std::move(out), {a}, [an, i, cols](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t j = 0; j < cols; ++j) an->grad[i * cols + j] += self.grad[j]; }
  });
}

// Column j of a [R x C] tensor as a length-R vector.
inline Tensor col(const Tensor& a, std::size_t j) {
  if (a.rank() != 2) throw dim_error("col: expects rank-2 tensor");
  std::size_t rows = a.dim(0), cols = a.dim(1);
  if (j >= cols) throw dim_error("col: index out of range");
  std::vector<real> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = a.values()[i * cols + j];
  auto an = a.node();
  return make_op({rows}, std::move(out), {a}, [an, j, rows, cols](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < rows; ++i) an->grad[i * cols + j] += self.grad[i]; }
  });
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (detail::shape_product(shape) != a.size()) throw dim_error("reshape: element count mismatch");
  std::vector<real> out = a.values();
  auto an = a.node();
  return make_op(std::move(shape), std::move(out), {a}, [an](detail::Node& self) {
    if (an->requires_grad) { an->ensure_grad(); for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i]; }
  });
}

// Repeats a [1 x N] tensor into [r x N]; gradient sums over the copies.
inline Tensor tile_rows(const Tensor& a, std::size_t r) {
  if (a.rank() != 2 || a.dim(0) != 1) throw dim_error("tile_rows: expects [1 x N] tensor");
  std::size_t n = a.dim(1);
  std::vector<real> out;
  out.reserve(r * n);
  for (std::size_t i = 0; i < r; ++i) out.insert(out.end(), a.values().begin(), a.values().end());
  auto an = a.node();
  return make_op({r, n}, std::move(out), {a}, [an, r, n](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) an->grad[j] += self.grad[i * n + j];
    }
  });
}

}  // namespace tslab
