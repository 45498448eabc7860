#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tae/gaussian.hpp"
#include "tae/rng.hpp"
#include "tae/tape.hpp"
#include "tae/tensor.hpp"

namespace tae {

struct DenseLayer {
    Tensor w;  // (out, in)
    Tensor b;  // (out)
};

// Fully connected network with leaky-ReLU hidden layers and two affine output
// heads emitting the mean and clamped log-variance of a diagonal Gaussian.
struct Mlp {
    std::vector<DenseLayer> hidden;
    DenseLayer mean_head;
    DenseLayer logvar_head;
    double slope = 0.01;
    double logvar_clamp = 10.0;

    std::size_t in_dim() const { return hidden.empty() ? mean_head.w.cols() : hidden.front().w.cols(); }
    std::size_t out_dim() const { return mean_head.w.rows(); }
    std::size_t param_count() const;
};

// Weights uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero,
// drawn in layer order so a seed pins every value.
Mlp make_mlp(std::size_t in, std::size_t hidden_width, std::size_t hidden_layers, std::size_t out,
             double slope, double logvar_clamp, Rng& rng);

// Deterministic evaluation of one input vector.
DiagGaussian mlp_head(const Mlp& net, std::span<const double> input);

// Batched plain evaluation: input (n, in) -> mean/logvar (n, out) and,
// optionally, the final hidden activation (n, hidden).
struct MlpBatchOut {
    Tensor mean, logvar;
};
MlpBatchOut mlp_forward_batch(const Mlp& net, const Tensor& input, Tensor* trunk_out = nullptr);

// --- tape side ---

// Parameter leaves of one Mlp registered on a tape.
struct MlpVars {
    std::vector<Var> hidden_w, hidden_b;
    Var mean_w, mean_b, logvar_w, logvar_b;
    double slope = 0.01;
    double logvar_clamp = 10.0;
};

// Registers every parameter as a differentiable leaf.
MlpVars register_mlp(Tape& tape, const Mlp& net);
// Registers parameters as constants (frozen network on the tape).
MlpVars register_mlp_frozen(Tape& tape, const Mlp& net);

struct MlpHeadVars {
    Var trunk;  // last hidden activation
    Var mean;
    Var logvar;  // clamped
};
MlpHeadVars mlp_forward(Tape& tape, const MlpVars& vars, Var input);

// Appends parameter pointers in a stable order (hidden layers, then heads).
void collect_params(Mlp& net, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor*>>& out);

}  // namespace tae
