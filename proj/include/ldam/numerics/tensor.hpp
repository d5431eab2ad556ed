#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ldam::numerics {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised when operand extents are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on misuse of the differentiation graph (detached loss, double backward, ...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Row-major backing store. A tensor of shape {d0, d1, ..., dk} is stored as a
/// d0 x (d1*...*dk) matrix; a 1-D tensor {n} is an n x 1 column; a scalar {} is 1 x 1.
template <typename Scalar>
using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline Index storage_rows(const Shape& shape) { return shape.empty() ? 1 : shape[0]; }
inline Index storage_cols(const Shape& shape) {
  return shape.size() <= 1 ? 1 : numel(shape) / shape[0];
}

namespace detail {
// Disables graph recording for the current thread while > 0.
inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}
}  // namespace detail

/// While alive, operations on the current thread produce values only.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode_enabled() { return detail::no_grad_depth() == 0; }

template <typename Scalar>
struct Node {
  Shape shape;
  Storage<Scalar> value;
  Storage<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  void accumulate(const Storage<Scalar>& delta) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = delta;
    } else {
      grad += delta;
    }
  }
};

/// Dense n-dimensional array participating in reverse-mode differentiation.
/// Copies share the underlying node (handle semantics, like a graph reference).
template <typename Scalar>
class Tensor {
 public:
  using Matrix = Storage<Scalar>;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;

  Tensor(Shape shape, Matrix value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    for (Index d : shape) {
      if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
    if (value.rows() != storage_rows(shape) || value.cols() != storage_cols(shape)) {
      throw DimensionError("storage " + std::to_string(value.rows()) + "x" + std::to_string(value.cols()) +
                           " does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Matrix m = Matrix::Zero(storage_rows(shape), storage_cols(shape));
    return Tensor(std::move(shape), std::move(m), requires_grad);
  }

  static Tensor scalar(Scalar v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Tensor(Shape{}, std::move(m));
  }

  static Tensor vector(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& v, bool requires_grad = false) {
    return Tensor(Shape{v.size()}, Matrix(v), requires_grad);
  }

  static Tensor matrix(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>& m,
                       bool requires_grad = false) {
    return Tensor(Shape{m.rows(), m.cols()}, Matrix(m), requires_grad);
  }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->value.size(); }
  Index extent(std::size_t axis) const { return node_->shape.at(axis); }

  const Matrix& value() const { return node_->value; }
  /// Direct write access. Only meaningful on leaves (parameters, inputs).
  Matrix& mutable_value() { return node_->value; }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols()); }
  void clear_grad() { node_->grad.resize(0, 0); }

  bool check_finite() const { return node_->value.allFinite(); }

  Node<Scalar>& node() const { return *node_; }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Creates the result of an operation; records parents and the backward rule
/// only when grad mode is on and some parent requires a gradient.
template <typename Scalar, typename Backward>
Tensor<Scalar> make_result(Shape shape, Storage<Scalar> value, std::vector<Tensor<Scalar>> parents,
                           Backward&& backward) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  if (!grad_mode_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = out.node();
  node.requires_grad = true;
  for (auto& p : parents) node.parents.push_back(p.node_ptr());
  node.backward = std::forward<Backward>(backward);
  return out;
}

/// Propagates d(loss)/d(.) to every tensor reachable from a scalar loss.
/// Leaf gradients accumulate; the interior graph is released afterwards, so a
/// second call on the same loss is an error.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw GraphError("backward() requires a scalar loss");
  }
  auto& root = loss.node();
  if (root.consumed) throw GraphError("backward() already ran on this graph; rebuild it first");
  if (!root.requires_grad) throw GraphError("loss is detached: no input requires a gradient");

  // Iterative post-order DFS yields a topological order (parents before children).
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && !parent->is_leaf() && seen.insert(parent).second) {
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.accumulate(Storage<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
  for (Node<Scalar>* node : order) {
    if (node->is_leaf()) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.resize(0, 0);
    node->consumed = true;
  }
}

}  // namespace ldam::numerics
