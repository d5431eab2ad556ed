#pragma once

#include "ldam/numerics/init.hpp"
#include "ldam/numerics/ops.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ldam::numerics {

/// Weights of one gated recurrent unit. Inputs and states are column-batched:
/// x is {input, B}, h is {hidden, B}.
template <typename Scalar>
struct GruCellParams {
  Tensor<Scalar> w_z, w_r, w_h;  // {hidden, input}
  Tensor<Scalar> u_z, u_r, u_h;  // {hidden, hidden}
  Tensor<Scalar> b_z, b_r, b_h;  // {hidden}

  static GruCellParams zeros(Index input, Index hidden) {
    auto w = [&] { return Tensor<Scalar>::zeros({hidden, input}, true); };
    auto u = [&] { return Tensor<Scalar>::zeros({hidden, hidden}, true); };
    auto b = [&] { return Tensor<Scalar>::zeros({hidden}, true); };
    return {w(), w(), w(), u(), u(), u(), b(), b(), b()};
  }

  /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  template <typename Rng>
  static GruCellParams random(Index input, Index hidden, Rng& rng) {
    GruCellParams p = zeros(input, hidden);
    for (auto* w : {&p.w_z, &p.w_r, &p.w_h}) fill_fan_in_uniform(*w, input, rng);
    for (auto* u : {&p.u_z, &p.u_r, &p.u_h}) fill_fan_in_uniform(*u, hidden, rng);
    return p;
  }

  Index input_size() const { return w_z.extent(1); }
  Index hidden_size() const { return w_z.extent(0); }

  void validate() const {
    const Index h = hidden_size();
    const Index in = input_size();
    for (const auto* w : {&w_z, &w_r, &w_h})
      detail::require(w->shape() == Shape{h, in}, "GruCellParams: input weights must be " + shape_string({h, in}));
    for (const auto* u : {&u_z, &u_r, &u_h})
      detail::require(u->shape() == Shape{h, h}, "GruCellParams: recurrent weights must be " + shape_string({h, h}));
    for (const auto* b : {&b_z, &b_r, &b_h})
      detail::require(b->shape() == Shape{h}, "GruCellParams: biases must be " + shape_string({h}));
  }

  std::vector<std::pair<std::string, Tensor<Scalar>*>> named() {
    return {{"w_z", &w_z}, {"w_r", &w_r}, {"w_h", &w_h}, {"u_z", &u_z}, {"u_r", &u_r},
            {"u_h", &u_h}, {"b_z", &b_z}, {"b_r", &b_r}, {"b_h", &b_h}};
  }
};

/// One GRU transition:
///   z = sigmoid(W_z x + U_z h + b_z)
///   r = sigmoid(W_r x + U_r h + b_r)
///   c = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * c
template <typename Scalar>
Tensor<Scalar> gru_step(const GruCellParams<Scalar>& p, const Tensor<Scalar>& x, const Tensor<Scalar>& h_prev) {
  using M = Storage<Scalar>;
  const Index hidden = p.hidden_size();
  detail::require(detail::mat_rows(x.shape()) == p.input_size(),
                  "gru_step: input " + shape_string(x.shape()) + " does not match input size " +
                      std::to_string(p.input_size()));
  detail::require(detail::mat_rows(h_prev.shape()) == hidden &&
                      detail::mat_cols(h_prev.shape()) == detail::mat_cols(x.shape()),
                  "gru_step: state " + shape_string(h_prev.shape()) + " inconsistent with hidden size " +
                      std::to_string(hidden) + " and batch of input");

  const M& xv = x.value();
  const M& hv = h_prev.value();
  // Pre-activations are materialized first so the element-wise nonlinearities run vectorized.
  auto pre = [&](const Tensor<Scalar>& w, const Tensor<Scalar>& u, const M& state, const Tensor<Scalar>& b) {
    M a = w.value() * xv;
    a.noalias() += u.value() * state;
    a.colwise() += b.value().col(0);
    return a;
  };
  M z = pre(p.w_z, p.u_z, hv, p.b_z).array().logistic().matrix();
  M r = pre(p.w_r, p.u_r, hv, p.b_r).array().logistic().matrix();
  M rh = r.cwiseProduct(hv);
  // tanh(a) = 1 - 2 / (exp(2a) + 1), which saturates correctly at both ends.
  M c = (Scalar(1) - Scalar(2) / ((Scalar(2) * pre(p.w_h, p.u_h, rh, p.b_h).array()).exp() + Scalar(1))).matrix();
  M out = hv + z.cwiseProduct(c - hv);

  std::vector<Tensor<Scalar>> parents{x,     h_prev, p.w_z, p.w_r, p.w_h, p.u_z,
                                      p.u_r, p.u_h,  p.b_z, p.b_r, p.b_h};
  std::vector<Node<Scalar>*> n;
  for (const auto& t : parents) n.push_back(t.node_ptr().get());
  Shape shape = h_prev.shape();
  return make_result<Scalar>(
      std::move(shape), std::move(out), std::move(parents),
      [n = std::move(n), z = std::move(z), r = std::move(r), rh = std::move(rh), c = std::move(c)](Node<Scalar>& self) {
        Node<Scalar>& x_n = *n[0];
        Node<Scalar>& h_n = *n[1];
        const M& g = self.grad;
        const M& hv = h_n.value;
        M da_z = (g.array() * (c - hv).array() * z.array() * (Scalar(1) - z.array())).matrix();
        M da_h = (g.array() * z.array() * (Scalar(1) - c.array().square())).matrix();
        M d_rh = n[7]->value.transpose() * da_h;
        M da_r = (d_rh.array() * hv.array() * r.array() * (Scalar(1) - r.array())).matrix();

        if (n[2]->requires_grad) n[2]->accumulate(da_z * x_n.value.transpose());
        if (n[3]->requires_grad) n[3]->accumulate(da_r * x_n.value.transpose());
        if (n[4]->requires_grad) n[4]->accumulate(da_h * x_n.value.transpose());
        if (n[5]->requires_grad) n[5]->accumulate(da_z * hv.transpose());
        if (n[6]->requires_grad) n[6]->accumulate(da_r * hv.transpose());
        if (n[7]->requires_grad) n[7]->accumulate(da_h * rh.transpose());
        if (n[8]->requires_grad) n[8]->accumulate(da_z.rowwise().sum());
        if (n[9]->requires_grad) n[9]->accumulate(da_r.rowwise().sum());
        if (n[10]->requires_grad) n[10]->accumulate(da_h.rowwise().sum());
        if (x_n.requires_grad) {
          x_n.accumulate(n[2]->value.transpose() * da_z + n[3]->value.transpose() * da_r +
                         n[4]->value.transpose() * da_h);
        }
        if (h_n.requires_grad) {
          M dh = (g.array() * (Scalar(1) - z.array()) + d_rh.array() * r.array()).matrix();
          dh.noalias() += n[5]->value.transpose() * da_z;
          dh.noalias() += n[6]->value.transpose() * da_r;
          h_n.accumulate(dh);
        }
      });
}

template <typename Scalar>
struct BiGruOutput {
  std::vector<Tensor<Scalar>> states;  // per time step, {2*hidden, B}: forward half on top
  Tensor<Scalar> last;                 // {2*hidden, B}: final forward state over final backward state
};

/// Bidirectional GRU over a column-batched sequence (one {input, B} tensor per step).
template <typename Scalar>
BiGruOutput<Scalar> bigru_sequence(const GruCellParams<Scalar>& fwd, const GruCellParams<Scalar>& bwd,
                                   std::span<const Tensor<Scalar>> xs) {
  if (xs.empty()) throw std::invalid_argument("bigru_sequence: empty sequence");
  detail::require(fwd.hidden_size() == bwd.hidden_size() && fwd.input_size() == bwd.input_size(),
                  "bigru_sequence: forward and backward cells disagree in size");
  const std::size_t steps = xs.size();
  const Index batch = detail::mat_cols(xs[0].shape());

  std::vector<Tensor<Scalar>> hf(steps), hb(steps);
  Tensor<Scalar> h = Tensor<Scalar>::zeros({fwd.hidden_size(), batch});
  for (std::size_t t = 0; t < steps; ++t) hf[t] = h = gru_step(fwd, xs[t], h);
  h = Tensor<Scalar>::zeros({bwd.hidden_size(), batch});
  for (std::size_t t = steps; t-- > 0;) hb[t] = h = gru_step(bwd, xs[t], h);

  BiGruOutput<Scalar> out;
  out.states.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::vector<Tensor<Scalar>> halves{hf[t], hb[t]};
    out.states.push_back(vconcat<Scalar>(halves));
  }
  const std::vector<Tensor<Scalar>> ends{hf[steps - 1], hb[0]};
  out.last = vconcat<Scalar>(ends);
  return out;
}

template <typename Scalar>
struct BiGruSequence {
  Tensor<Scalar> states;  // {T, 2*hidden}
  Tensor<Scalar> last;    // {2*hidden}
};

/// Single-sequence convenience form: xs is {T, input}, one row per time step.
template <typename Scalar>
BiGruSequence<Scalar> bigru_sequence(const GruCellParams<Scalar>& fwd, const GruCellParams<Scalar>& bwd,
                                     const Tensor<Scalar>& xs) {
  detail::require(xs.dim() == 2, "bigru_sequence: expected {T, input}, got " + shape_string(xs.shape()));
  const Tensor<Scalar> cols = transpose(xs);
  std::vector<Tensor<Scalar>> steps;
  for (Index t = 0; t < xs.extent(0); ++t) steps.push_back(slice_cols(cols, t, 1));
  auto out = bigru_sequence<Scalar>(fwd, bwd, std::span<const Tensor<Scalar>>(steps));
  const Index width = 2 * fwd.hidden_size();
  return {transpose(hconcat<Scalar>(out.states)), reshape(out.last, {width})};
}

}  // namespace ldam::numerics
