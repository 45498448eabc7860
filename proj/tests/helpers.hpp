#pragma once

// Test-only oracles: quadrature and finite differences. These live outside
// the library so the checks stay independent of the code paths they verify.

#include <cmath>
#include <functional>
#include <vector>

#include "tae/tape.hpp"
#include "tae/tensor.hpp"

namespace tae::testing {

// Composite Simpson on [a, b]; n must be even.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n) {
    double h = (b - a) / static_cast<double>(n);
    double acc = f(a) + f(b);
    for (std::size_t i = 1; i < n; ++i)
        acc += f(a + static_cast<double>(i) * h) * ((i % 2) ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// Integral over mean +/- span standard deviations of a 1-D Gaussian-weighted
// integrand.
inline double gauss_quad(const std::function<double(double)>& f, double mean, double sd,
                         double span = 12.0, std::size_t n = 20000) {
    return simpson(f, mean - span * sd, mean + span * sd, n);
}

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Central finite differences of a scalar build function against its
// reverse-mode gradients. The builder must be deterministic (draw from a
// freshly seeded generator each call). Relative error has a unit floor so
// near-zero coordinates compare absolutely.
inline GradCheck gradcheck(std::vector<Tensor*> params,
                           const std::function<Var(Tape&, std::span<const Var>)>& build,
                           double h = 1e-5) {
    FbResult fb = forward_backward(params, build);
    auto value_at = [&]() {
        Tape tape;
        std::vector<Var> leaves;
        for (Tensor* p : params) leaves.push_back(tape.leaf(*p));
        Var root = build(tape, leaves);
        return tape.scalar(root);
    };

    GradCheck res;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p]->numel(); ++i) {
            double saved = params[p]->data[i];
            params[p]->data[i] = saved + h;
            double fp = value_at();
            params[p]->data[i] = saved - h;
            double fm = value_at();
            params[p]->data[i] = saved;
            double fd = (fp - fm) / (2.0 * h);
            double ad = fb.grads[p].data[i];
            double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace tae::testing
