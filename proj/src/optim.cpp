#include "semfsl/optim.hpp"

namespace semfsl {

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void sgd_step(std::span<Parameter* const> params, double lr, double momentum,
              double weight_decay) {
  for (Parameter* p : params) {
    p->momentum = momentum * p->momentum + p->grad + weight_decay * p->value;
    p->value -= lr * p->momentum;
  }
}

}  // namespace semfsl
