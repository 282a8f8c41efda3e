#pragma once

#include <span>

#include "semfsl/autodiff.hpp"

namespace semfsl {

void zero_grads(std::span<Parameter* const> params);

// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
//   v <- momentum * v + grad + weight_decay * value
//   value <- value - lr * v
void sgd_step(std::span<Parameter* const> params, double lr, double momentum,
              double weight_decay);

}  // namespace semfsl
