#pragma once

#include "ldam/numerics/tensor.hpp"

#include <limits>
#include <span>

namespace ldam::numerics {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// 1-D tensors act as column vectors in matrix products.
inline Index mat_rows(const Shape& s) { return s.empty() ? 1 : s[0]; }
inline Index mat_cols(const Shape& s) { return s.size() == 2 ? s[1] : 1; }

inline void require_matrix_like(const Shape& s, const char* op) {
  require(s.size() == 1 || s.size() == 2,
          std::string(op) + ": expected a 1-D or 2-D tensor, got " + shape_string(s));
}

}  // namespace detail

/// Detached copy: same value, no gradient history.
template <typename Scalar>
Tensor<Scalar> constant(const Storage<Scalar>& value, Shape shape) {
  return Tensor<Scalar>(std::move(shape), value);
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.dim() == 2, "matmul: left operand must be 2-D, got " + shape_string(a.shape()));
  detail::require_matrix_like(b.shape(), "matmul");
  const Index k = a.extent(1);
  detail::require(detail::mat_rows(b.shape()) == k, "matmul: inner dimensions disagree " +
                                                        shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Storage<Scalar> out = a.value() * b.value();
  Shape shape = b.dim() == 1 ? Shape{a.extent(0)} : Shape{a.extent(0), b.extent(1)};
  auto an = a.node_ptr().get();
  auto bn = b.node_ptr().get();
  return make_result<Scalar>(std::move(shape), std::move(out), {a, b}, [an, bn](Node<Scalar>& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  detail::require_matrix_like(a.shape(), "transpose");
  Shape shape{detail::mat_cols(a.shape()), detail::mat_rows(a.shape())};
  Storage<Scalar> out = a.value().transpose();
  auto an = a.node_ptr().get();
  return make_result<Scalar>(std::move(shape), std::move(out), {a},
                             [an](Node<Scalar>& self) { an->accumulate(self.grad.transpose()); });
}

/// Same data, new extents (row-major reinterpretation).
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  detail::require(numel(shape) == a.size(),
                  "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape) + " changes element count");
  Storage<Scalar> out =
      Eigen::Map<const Storage<Scalar>>(a.value().data(), storage_rows(shape), storage_cols(shape));
  auto an = a.node_ptr().get();
  return make_result<Scalar>(std::move(shape), std::move(out), {a}, [an](Node<Scalar>& self) {
    an->accumulate(Eigen::Map<const Storage<Scalar>>(self.grad.data(), an->value.rows(), an->value.cols()));
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "add: shapes differ " + shape_string(a.shape()) + " vs " +
                                              shape_string(b.shape()));
  Storage<Scalar> out = a.value() + b.value();
  auto an = a.node_ptr().get();
  auto bn = b.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a, b}, [an, bn](Node<Scalar>& self) {
    an->accumulate(self.grad);
    bn->accumulate(self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "sub: shapes differ " + shape_string(a.shape()) + " vs " +
                                              shape_string(b.shape()));
  Storage<Scalar> out = a.value() - b.value();
  auto an = a.node_ptr().get();
  auto bn = b.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a, b}, [an, bn](Node<Scalar>& self) {
    an->accumulate(self.grad);
    bn->accumulate(-self.grad);
  });
}

/// Elementwise (Hadamard) product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "mul: shapes differ " + shape_string(a.shape()) + " vs " +
                                              shape_string(b.shape()));
  Storage<Scalar> out = a.value().cwiseProduct(b.value());
  auto an = a.node_ptr().get();
  auto bn = b.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a, b}, [an, bn](Node<Scalar>& self) {
    if (an->requires_grad) an->accumulate(self.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(self.grad.cwiseProduct(an->value));
  });
}

/// scale * a + shift, elementwise.
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& a, Scalar scale, Scalar shift = Scalar(0)) {
  Storage<Scalar> out = (a.value().array() * scale + shift).matrix();
  auto an = a.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a},
                             [an, scale](Node<Scalar>& self) { an->accumulate(self.grad * scale); });
}

/// Adds a vector {R} to every column of an {R} or {R, C} tensor.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& a, const Tensor<Scalar>& bias) {
  detail::require_matrix_like(a.shape(), "add_bias");
  detail::require(bias.dim() == 1 && bias.extent(0) == a.extent(0),
                  "add_bias: bias " + shape_string(bias.shape()) + " does not match rows of " +
                      shape_string(a.shape()));
  Storage<Scalar> out = a.value().colwise() + bias.value().col(0);
  auto an = a.node_ptr().get();
  auto bn = bias.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a, bias}, [an, bn](Node<Scalar>& self) {
    an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad.rowwise().sum());
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  Storage<Scalar> out = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  auto an = a.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a}, [an](Node<Scalar>& self) {
    const auto& y = self.value.array();
    an->accumulate((self.grad.array() * y * (Scalar(1) - y)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  Storage<Scalar> out = a.value().array().tanh().matrix();
  auto an = a.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a}, [an](Node<Scalar>& self) {
    const auto& y = self.value.array();
    an->accumulate((self.grad.array() * (Scalar(1) - y.square())).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Storage<Scalar> out = a.value().cwiseMax(Scalar(0));
  auto an = a.node_ptr().get();
  return make_result<Scalar>(a.shape(), std::move(out), {a}, [an](Node<Scalar>& self) {
    an->accumulate((an->value.array() > Scalar(0)).select(self.grad.array(), Scalar(0)).matrix());
  });
}

/// Softmax over a 1-D tensor, stabilised by max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  detail::require(x.dim() == 1, "softmax: expected a 1-D tensor, got " + shape_string(x.shape()));
  const auto& v = x.value();
  Storage<Scalar> e = (v.array() - v.maxCoeff()).exp().matrix();
  Storage<Scalar> out = e / e.sum();
  auto xn = x.node_ptr().get();
  return make_result<Scalar>(x.shape(), std::move(out), {x}, [xn](Node<Scalar>& self) {
    const Scalar dot = self.grad.cwiseProduct(self.value).sum();
    xn->accumulate((self.value.array() * (self.grad.array() - dot)).matrix());
  });
}

/// Sum of all elements, as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Storage<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  auto an = a.node_ptr().get();
  return make_result<Scalar>(Shape{}, std::move(out), {a}, [an](Node<Scalar>& self) {
    an->accumulate(Storage<Scalar>::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return affine(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

/// Same-padded 1-D cross-correlation.
/// x: {C_in, L}, kernels: {C_out, C_in, k} with k odd, bias: {C_out} -> {C_out, L}.
template <typename Scalar>
Tensor<Scalar> conv1d_same(const Tensor<Scalar>& x, const Tensor<Scalar>& kernels, const Tensor<Scalar>& bias) {
  detail::require(x.dim() == 2, "conv1d_same: input must be {C_in, L}, got " + shape_string(x.shape()));
  detail::require(kernels.dim() == 3,
                  "conv1d_same: kernels must be {C_out, C_in, k}, got " + shape_string(kernels.shape()));
  const Index c_in = x.extent(0);
  const Index len = x.extent(1);
  const Index c_out = kernels.extent(0);
  const Index width = kernels.extent(2);
  if (width % 2 == 0) {
    throw std::invalid_argument("conv1d_same: kernel width must be odd, got " + std::to_string(width));
  }
  detail::require(kernels.extent(1) == c_in, "conv1d_same: kernel input channels " +
                                                  std::to_string(kernels.extent(1)) + " != " +
                                                  std::to_string(c_in));
  detail::require(bias.dim() == 1 && bias.extent(0) == c_out, "conv1d_same: bias must be {C_out}");
  const Index pad = (width - 1) / 2;

  // im2col: column l holds the zero-padded window around l, rows ordered (channel, tap)
  // to match the row-major kernel layout {C_out, C_in * k}.
  Storage<Scalar> cols = Storage<Scalar>::Zero(c_in * width, len);
  const auto& xv = x.value();
  for (Index c = 0; c < c_in; ++c) {
    for (Index t = 0; t < width; ++t) {
      const Index shift = t - pad;
      const Index lo = std::max<Index>(0, -shift);
      const Index hi = std::min<Index>(len, len - shift);
      if (hi > lo) cols.row(c * width + t).segment(lo, hi - lo) = xv.row(c).segment(lo + shift, hi - lo);
    }
  }
  Storage<Scalar> out = kernels.value() * cols;
  out.colwise() += bias.value().col(0);

  auto xn = x.node_ptr().get();
  auto kn = kernels.node_ptr().get();
  auto bn = bias.node_ptr().get();
  return make_result<Scalar>(
      Shape{c_out, len}, std::move(out), {x, kernels, bias},
      [xn, kn, bn, cols = std::move(cols), c_in, len, width, pad](Node<Scalar>& self) {
        if (kn->requires_grad) kn->accumulate(self.grad * cols.transpose());
        if (bn->requires_grad) bn->accumulate(self.grad.rowwise().sum());
        if (xn->requires_grad) {
          Storage<Scalar> dcols = kn->value.transpose() * self.grad;
          Storage<Scalar> dx = Storage<Scalar>::Zero(c_in, len);
          for (Index c = 0; c < c_in; ++c) {
            for (Index t = 0; t < width; ++t) {
              const Index shift = t - pad;
              const Index lo = std::max<Index>(0, -shift);
              const Index hi = std::min<Index>(len, len - shift);
              if (hi > lo) dx.row(c).segment(lo + shift, hi - lo) += dcols.row(c * width + t).segment(lo, hi - lo);
            }
          }
          xn->accumulate(dx);
        }
      });
}

/// Column-wise maximum over the channel axis: {C, L} -> {L}.
/// The gradient goes to the first maximal channel of each column.
template <typename Scalar>
Tensor<Scalar> maxpool_channels(const Tensor<Scalar>& x) {
  detail::require(x.dim() == 2, "maxpool_channels: expected {C, L}, got " +
                                    (x.defined() ? shape_string(x.shape()) : std::string("undefined")));
  const Index len = x.extent(1);
  Storage<Scalar> out(len, 1);
  std::vector<Index> argmax(static_cast<std::size_t>(len));
  for (Index l = 0; l < len; ++l) {
    Index best = 0;
    Scalar v = x.value()(0, l);
    for (Index c = 1; c < x.extent(0); ++c) {
      if (x.value()(c, l) > v) {
        v = x.value()(c, l);
        best = c;
      }
    }
    out(l, 0) = v;
    argmax[static_cast<std::size_t>(l)] = best;
  }
  auto xn = x.node_ptr().get();
  return make_result<Scalar>(Shape{len}, std::move(out), {x}, [xn, argmax = std::move(argmax)](Node<Scalar>& self) {
    Storage<Scalar> dx = Storage<Scalar>::Zero(xn->value.rows(), xn->value.cols());
    for (std::size_t l = 0; l < argmax.size(); ++l) dx(argmax[l], static_cast<Index>(l)) = self.grad(l, 0);
    xn->accumulate(dx);
  });
}

/// Stacks 1-D or 2-D tensors with equal column counts on top of each other.
template <typename Scalar>
Tensor<Scalar> vconcat(std::span<const Tensor<Scalar>> parts) {
  detail::require(!parts.empty(), "vconcat: nothing to concatenate");
  const Index cols = detail::mat_cols(parts[0].shape());
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require_matrix_like(p.shape(), "vconcat");
    detail::require(detail::mat_cols(p.shape()) == cols, "vconcat: column counts differ");
    rows += detail::mat_rows(p.shape());
  }
  Storage<Scalar> out(rows, cols);
  std::vector<Node<Scalar>*> nodes;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.value().rows()) = p.value();
    at += p.value().rows();
    nodes.push_back(p.node_ptr().get());
  }
  Shape shape = parts[0].dim() == 1 ? Shape{rows} : Shape{rows, cols};
  return make_result<Scalar>(std::move(shape), std::move(out), {parts.begin(), parts.end()},
                             [nodes = std::move(nodes)](Node<Scalar>& self) {
                               Index offset = 0;
                               for (auto* n : nodes) {
                                 const Index r = n->value.rows();
                                 if (n->requires_grad) n->accumulate(self.grad.middleRows(offset, r));
                                 offset += r;
                               }
                             });
}

/// Places 1-D or 2-D tensors with equal row counts side by side; the result is 2-D.
template <typename Scalar>
Tensor<Scalar> hconcat(std::span<const Tensor<Scalar>> parts) {
  detail::require(!parts.empty(), "hconcat: nothing to concatenate");
  const Index rows = detail::mat_rows(parts[0].shape());
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require_matrix_like(p.shape(), "hconcat");
    detail::require(detail::mat_rows(p.shape()) == rows, "hconcat: row counts differ");
    cols += detail::mat_cols(p.shape());
  }
  Storage<Scalar> out(rows, cols);
  std::vector<Node<Scalar>*> nodes;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.value().cols()) = p.value();
    at += p.value().cols();
    nodes.push_back(p.node_ptr().get());
  }
  return make_result<Scalar>(Shape{rows, cols}, std::move(out), {parts.begin(), parts.end()},
                             [nodes = std::move(nodes)](Node<Scalar>& self) {
                               Index offset = 0;
                               for (auto* n : nodes) {
                                 const Index c = n->value.cols();
                                 if (n->requires_grad) n->accumulate(self.grad.middleCols(offset, c));
                                 offset += c;
                               }
                             });
}

/// Columns [start, start + count) of a 2-D tensor.
template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Index start, Index count) {
  detail::require(a.dim() == 2, "slice_cols: expected a 2-D tensor");
  detail::require(start >= 0 && count > 0 && start + count <= a.extent(1), "slice_cols: range out of bounds");
  Storage<Scalar> out = a.value().middleCols(start, count);
  auto an = a.node_ptr().get();
  return make_result<Scalar>(Shape{a.extent(0), count}, std::move(out), {a},
                             [an, start, count](Node<Scalar>& self) {
                               Storage<Scalar> d = Storage<Scalar>::Zero(an->value.rows(), an->value.cols());
                               d.middleCols(start, count) = self.grad;
                               an->accumulate(d);
                             });
}

/// Mean binary cross-entropy of probabilities against 0/1 targets.
/// Probabilities are clamped to [clamp, 1 - clamp] before the logarithm.
template <typename Scalar>
Tensor<Scalar> binary_cross_entropy(const Tensor<Scalar>& probs, const Storage<Scalar>& targets,
                                    Scalar clamp = Scalar(1e-12)) {
  detail::require(probs.value().rows() == targets.rows() && probs.value().cols() == targets.cols(),
                  "binary_cross_entropy: target shape mismatch");
  const Scalar n = static_cast<Scalar>(probs.size());
  auto p = probs.value().array().max(clamp).min(Scalar(1) - clamp);
  const auto& y = targets.array();
  Storage<Scalar> out(1, 1);
  out(0, 0) = -(y * p.log() + (Scalar(1) - y) * (Scalar(1) - p).log()).sum() / n;
  auto pn = probs.node_ptr().get();
  return make_result<Scalar>(Shape{}, std::move(out), {probs}, [pn, targets, clamp, n](Node<Scalar>& self) {
    const auto& raw = pn->value.array();
    auto pc = raw.max(clamp).min(Scalar(1) - clamp);
    auto inside = (raw >= clamp && raw <= Scalar(1) - clamp);
    Storage<Scalar> d =
        inside.select((pc - targets.array()) / (pc * (Scalar(1) - pc)), Scalar(0)).matrix() * (self.grad(0, 0) / n);
    pn->accumulate(d);
  });
}

/// Mean over columns of -log softmax(column)[target[column]] for logits {C, N}.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy_cols(const Tensor<Scalar>& logits, std::vector<Index> targets) {
  detail::require(logits.dim() == 2, "softmax_cross_entropy_cols: expected {C, N} logits");
  const Index classes = logits.extent(0);
  const Index n = logits.extent(1);
  detail::require(static_cast<Index>(targets.size()) == n, "softmax_cross_entropy_cols: one target per column");
  Storage<Scalar> probs(classes, n);
  Scalar total = 0;
  for (Index j = 0; j < n; ++j) {
    const Index t = targets[static_cast<std::size_t>(j)];
    detail::require(t >= 0 && t < classes, "softmax_cross_entropy_cols: target out of range");
    auto col = logits.value().col(j);
    const Scalar m = col.maxCoeff();
    const Scalar lse = m + std::log((col.array() - m).exp().sum());
    total += lse - col(t);
    probs.col(j) = (col.array() - lse).exp().matrix();
  }
  Storage<Scalar> out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(n);
  auto ln = logits.node_ptr().get();
  return make_result<Scalar>(Shape{}, std::move(out), {logits},
                             [ln, probs = std::move(probs), targets = std::move(targets), n](Node<Scalar>& self) {
                               Storage<Scalar> d = probs;
                               for (Index j = 0; j < n; ++j) d(targets[static_cast<std::size_t>(j)], j) -= Scalar(1);
                               ln->accumulate(d * (self.grad(0, 0) / static_cast<Scalar>(n)));
                             });
}

}  // namespace ldam::numerics
