#include "tae/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace tae {

AdamState AdamState::init(std::span<Tensor* const> params, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor* p : params) {
        s.m.push_back(Tensor::zeros(p->shape));
        s.v.push_back(Tensor::zeros(p->shape));
    }
    return s;
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != state.m.size() || grads.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter count mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = *params[p];
        const Tensor& g = grads[p];
        w.check_same_shape(g, "adam_step");
        w.check_same_shape(state.m[p], "adam_step");
        double lr = state.learning_rate * (state.lr_mult.empty() ? 1.0 : state.lr_mult[p]);
        for (std::size_t i = 0; i < w.numel(); ++i) {
            double gi = g.data[i];
            double mi = state.m[p].data[i] = state.beta1 * state.m[p].data[i] + (1.0 - state.beta1) * gi;
            double vi = state.v[p].data[i] = state.beta2 * state.v[p].data[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = mi / bc1;
            double vhat = vi / bc2;
            w.data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace tae
