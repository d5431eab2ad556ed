#pragma once

#include "ldam/numerics/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldam::numerics {

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  std::vector<Storage<Scalar>> m;
  std::vector<Storage<Scalar>> v;
};

/// Bias-corrected Adam step over `params`, reading each tensor's gradient.
///
/// A parameter whose gradient is exactly zero everywhere is left untouched and
/// its moments are not decayed, so unused weights never drift.
template <typename Scalar>
void adam_update(AdamState<Scalar>& state, std::span<Tensor<Scalar>* const> params) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto* p : params) {
      state.m.push_back(Storage<Scalar>::Zero(p->value().rows(), p->value().cols()));
      state.v.push_back(Storage<Scalar>::Zero(p->value().rows(), p->value().cols()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw OptimizerError("adam_update: moment buffers track " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->has_grad()) {
      throw OptimizerError("adam_update: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.m[i].rows() != params[i]->value().rows() || state.m[i].cols() != params[i]->value().cols()) {
      throw OptimizerError("adam_update: moment shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->grad();
    if ((g.array() == Scalar(0)).all()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = state.beta1 * m + (Scalar(1) - state.beta1) * g;
    v = state.beta2 * v + (Scalar(1) - state.beta2) * g.cwiseAbs2();
    params[i]->mutable_value().array() -=
        state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

}  // namespace ldam::numerics
