#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tae/tensor.hpp"

namespace tae {

// Adam with bias correction. Holds one pair of moment accumulators per
// parameter tensor, in registration order.
struct AdamState {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> m, v;
    std::vector<double> lr_mult;  // empty = 1 for every parameter

    static AdamState init(std::span<Tensor* const> params, double learning_rate);
};

// One descent step on `params` along `grads`. Deterministic; shapes must
// match the state's accumulators.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);

}  // namespace tae
