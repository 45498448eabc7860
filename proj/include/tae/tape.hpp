#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tae/tensor.hpp"

namespace tae {

// Handle to a tape node.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation over a linear record of tensor operations.
// Nodes are appended in evaluation order, so walking the record backwards is
// a reverse-topological sweep. Gaussian log-densities, entropies and masked
// observation likelihoods are single fused nodes with closed-form adjoints
// rather than compositions of elementwise primitives.
class Tape {
 public:
    // --- graph inputs ---
    Var constant(Tensor t);                 // owned copy, no gradient
    Var constant_view(const Tensor& t);     // caller keeps t alive, no gradient
    Var leaf(const Tensor& t);              // differentiable parameter (view)

    // --- dense network primitives ---
    // x:(n,i) * w:(o,i)^T + b:(o) -> (n,o)
    Var affine(Var x, Var w, Var b);
    Var leaky_relu(Var x, double slope);
    Var clamp(Var x, double lo, double hi);
    // right-appends a fixed block: x:(n,a) ++ extra:(n,b) -> (n,a+b)
    Var concat_const_cols(Var x, Tensor extra);

    // --- Gaussian primitives (diagonal, parametrized by mean and log-variance) ---
    // mean + exp(logvar/2) * eps, eps fixed at record time
    Var rsample(Var mean, Var logvar, Tensor eps);
    // row sums of log N(x; mean, exp(logvar)) -> (n,1)
    Var gauss_logpdf(Var mean, Var logvar, Var x);
    // row sums of 0.5*(log(2*pi*e) + logvar) -> (n,1)
    Var gauss_entropy(Var logvar);
    // KL(N(mean, exp(logvar)) || N(0, I)) per row -> (n,1)
    Var kl_std(Var mean, Var logvar);

    // --- corruption likelihoods (mask entries in {0,1}; 1 = observed) ---
    // sum over observed entries of log N(y; x, sigma^2) -> (n,1)
    Var obs_loglik(Tensor y, Var x, Tensor mask, double sigma);
    // per-row log sigma in beta:(n,1); sum over observed of log N(y; x, exp(2*beta)) -> (n,1)
    Var obs_loglik_beta(Tensor y, Var x, Var beta, Tensor mask);
    // sum over observed of log N(y; mean, exp(logvar) + sigma^2) -> (n,1)
    Var marginal_obs_loglik(Tensor y, Var mean, Var logvar, Tensor mask, double sigma);

    // --- combinators ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var abs_val(Var a);
    Var stop_gradient(Var a);
    // (n,c) -> (n*k,c), row i repeated k times contiguously
    Var repeat_rows(Var a, std::size_t k);
    // (n*k,1) -> (n,1), log-sum-exp over each contiguous group of k rows
    Var group_logsumexp(Var a, std::size_t k);
    Var sum_all(Var a);  // -> (1,1)
    // logits:(n,c), labels:(n) -> (n,1) negative log softmax at the label
    Var log_softmax_nll(Var logits, std::vector<int> labels);

    // --- evaluation / differentiation ---
    std::span<const double> val(Var v) const;
    double scalar(Var v) const;
    const std::vector<std::size_t>& shape(Var v) const;
    std::size_t vrows(Var v) const;
    std::size_t vcols(Var v) const;

    // Accumulates d(root)/d(node) for every differentiable node. root must be
    // scalar. Grad buffers are re-zeroed each call, so repeated calls agree.
    void backward(Var root);

    std::span<const double> grad(Var v) const;
    Tensor grad_tensor(Var v) const;

    std::size_t size() const { return nodes_.size(); }

 private:
    enum class Op : std::uint8_t {
        kConstant,
        kLeaf,
        kAffine,
        kLeakyRelu,
        kClamp,
        kConcatConstCols,
        kRsample,
        kGaussLogpdf,
        kGaussEntropy,
        kKlStd,
        kObsLoglik,
        kObsLoglikBeta,
        kMarginalObsLoglik,
        kAdd,
        kSub,
        kScale,
        kAddConst,
        kAbs,
        kStopGradient,
        kRepeatRows,
        kGroupLogsumexp,
        kSumAll,
        kLogSoftmaxNll,
    };

    struct Node {
        Op op;
        bool needs_grad = false;
        std::int32_t in0 = -1, in1 = -1, in2 = -1;
        double p0 = 0.0, p1 = 0.0;
        std::vector<std::size_t> shape;
        std::vector<double> owned;       // value storage for computed nodes
        const double* view = nullptr;    // set for constant_view / leaf
        std::vector<double> grad;
        Tensor aux0, aux1;               // op payload: eps, y, mask, ...
        std::vector<int> labels;
    };

    static const char* op_name(Op op);

    Var push(Node n);
    const Node& at(Var v) const;
    Node& at(Var v);
    std::span<const double> node_val(const Node& n) const;
    void compute(Node& n);
    void accumulate(std::int32_t idx);
    void check_finite(const Node& n, std::int32_t idx) const;
    std::span<double> grad_buf(std::int32_t idx);

    std::vector<Node> nodes_;
};

// Evaluates a scalar-valued build function of the given parameters and
// returns its value together with one gradient tensor per parameter
// (zero-filled for parameters the function never touches).
struct FbResult {
    double value = 0.0;
    std::vector<Tensor> grads;
};

FbResult forward_backward(std::span<Tensor* const> params,
                          const std::function<Var(Tape&, std::span<const Var>)>& build);

}  // namespace tae
