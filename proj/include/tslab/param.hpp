#pragma once

#include <string>
#include <utility>

#include "tslab/tensor.hpp"

namespace tslab {

// A named trainable tensor. lr_multiplier scales the optimizer's base
// learning rate for this parameter; transfer assigns it per layer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, real lr_multiplier = 1.0)
      : name(std::move(name)), value(std::move(value)), lr_multiplier(lr_multiplier) {
    if (this->lr_multiplier <= 0.0) throw param_error("parameter: lr_multiplier must be > 0");
    this->value.set_requires_grad(true);
  }

  std::string name;
  Tensor value;
  real lr_multiplier = 1.0;
};

}  // namespace tslab
