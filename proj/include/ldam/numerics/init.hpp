#pragma once

#include "ldam/numerics/tensor.hpp"

#include <cmath>
#include <random>

namespace ldam::numerics {

/// Fills a tensor with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draws in storage order.
template <typename Scalar, typename Rng>
void fill_fan_in_uniform(Tensor<Scalar>& t, Index fan_in, Rng& rng) {
  const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(fan_in));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  auto& v = t.mutable_value();
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
}

}  // namespace ldam::numerics
