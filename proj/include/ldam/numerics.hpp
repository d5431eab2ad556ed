#pragma once

#include "ldam/numerics/adam.hpp"
#include "ldam/numerics/gru.hpp"
#include "ldam/numerics/init.hpp"
#include "ldam/numerics/ops.hpp"
#include "ldam/numerics/tensor.hpp"

namespace ldam {

using Tensor = numerics::Tensor<double>;
using Matrix = numerics::Storage<double>;
using GruCell = numerics::GruCellParams<double>;
using AdamState = numerics::AdamState<double>;

}  // namespace ldam
