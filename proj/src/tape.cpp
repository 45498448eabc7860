#include "tae/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// 1-D tensors behave as a single row
std::size_t shape_rows(const std::vector<std::size_t>& s) { return s.size() < 2 ? 1 : s[0]; }
std::size_t shape_cols(const std::vector<std::size_t>& s) {
    if (s.size() < 2) return s.empty() ? 1 : s[0];
    return s[1];
}

}  // namespace

const char* Tape::op_name(Op op) {
    switch (op) {
        case Op::kConstant: return "constant";
        case Op::kLeaf: return "leaf";
        case Op::kAffine: return "affine";
        case Op::kLeakyRelu: return "leaky_relu";
        case Op::kClamp: return "clamp";
        case Op::kConcatConstCols: return "concat_const_cols";
        case Op::kRsample: return "rsample";
        case Op::kGaussLogpdf: return "gauss_logpdf";
        case Op::kGaussEntropy: return "gauss_entropy";
        case Op::kKlStd: return "kl_std";
        case Op::kObsLoglik: return "obs_loglik";
        case Op::kObsLoglikBeta: return "obs_loglik_beta";
        case Op::kMarginalObsLoglik: return "marginal_obs_loglik";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kScale: return "scale";
        case Op::kAddConst: return "add_const";
        case Op::kAbs: return "abs";
        case Op::kStopGradient: return "stop_gradient";
        case Op::kRepeatRows: return "repeat_rows";
        case Op::kGroupLogsumexp: return "group_logsumexp";
        case Op::kSumAll: return "sum_all";
        case Op::kLogSoftmaxNll: return "log_softmax_nll";
    }
    return "?";
}

Var Tape::push(Node n) {
    if (n.op != Op::kConstant && n.op != Op::kLeaf) {
        compute(n);
        check_finite(n, static_cast<std::int32_t>(nodes_.size()));
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::at(Var v) const {
    if (!v.valid() || v.id >= static_cast<std::int32_t>(nodes_.size()))
        throw std::invalid_argument("tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::at(Var v) {
    return const_cast<Node&>(static_cast<const Tape*>(this)->at(v));
}

std::span<const double> Tape::node_val(const Node& n) const {
    if (n.view) return {n.view, Tensor::numel_of(n.shape)};
    return {n.owned.data(), n.owned.size()};
}

std::span<const double> Tape::val(Var v) const { return node_val(at(v)); }

double Tape::scalar(Var v) const {
    auto s = val(v);
    if (s.size() != 1) throw std::invalid_argument("tape: scalar() on non-scalar node");
    return s[0];
}

const std::vector<std::size_t>& Tape::shape(Var v) const { return at(v).shape; }
std::size_t Tape::vrows(Var v) const { return shape_rows(at(v).shape); }
std::size_t Tape::vcols(Var v) const { return shape_cols(at(v).shape); }

void Tape::check_finite(const Node& n, std::int32_t idx) const {
    for (double x : n.owned) {
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("non-finite value produced by op '") +
                                     op_name(n.op) + "' (node " + std::to_string(idx) + ")");
    }
}

Var Tape::constant(Tensor t) {
    Node n;
    n.op = Op::kConstant;
    n.shape = t.shape;
    n.owned = std::move(t.data);
    return push(std::move(n));
}

Var Tape::constant_view(const Tensor& t) {
    Node n;
    n.op = Op::kConstant;
    n.shape = t.shape;
    n.view = t.data.data();
    return push(std::move(n));
}

Var Tape::leaf(const Tensor& t) {
    Node n;
    n.op = Op::kLeaf;
    n.needs_grad = true;
    n.shape = t.shape;
    n.view = t.data.data();
    return push(std::move(n));
}

Var Tape::affine(Var x, Var w, Var b) {
    const Node &nx = at(x), &nw = at(w), &nb = at(b);
    std::size_t n = shape_rows(nx.shape), in = shape_cols(nx.shape);
    std::size_t out = shape_rows(nw.shape);
    if (shape_cols(nw.shape) != in)
        throw std::invalid_argument("affine: weight/input dim mismatch");
    if (Tensor::numel_of(nb.shape) != out)
        throw std::invalid_argument("affine: bias/output dim mismatch");
    Node r;
    r.op = Op::kAffine;
    r.in0 = x.id;
    r.in1 = w.id;
    r.in2 = b.id;
    r.needs_grad = nx.needs_grad || nw.needs_grad || nb.needs_grad;
    r.shape = {n, out};
    return push(std::move(r));
}

Var Tape::leaky_relu(Var x, double slope) {
    Node r;
    r.op = Op::kLeakyRelu;
    r.in0 = x.id;
    r.p0 = slope;
    r.needs_grad = at(x).needs_grad;
    r.shape = at(x).shape;
    return push(std::move(r));
}

Var Tape::clamp(Var x, double lo, double hi) {
    Node r;
    r.op = Op::kClamp;
    r.in0 = x.id;
    r.p0 = lo;
    r.p1 = hi;
    r.needs_grad = at(x).needs_grad;
    r.shape = at(x).shape;
    return push(std::move(r));
}

Var Tape::concat_const_cols(Var x, Tensor extra) {
    const Node& nx = at(x);
    std::size_t n = shape_rows(nx.shape), a = shape_cols(nx.shape);
    if (extra.rows() != n) throw std::invalid_argument("concat_const_cols: row mismatch");
    Node r;
    r.op = Op::kConcatConstCols;
    r.in0 = x.id;
    r.needs_grad = nx.needs_grad;
    r.shape = {n, a + extra.cols()};
    r.aux0 = std::move(extra);
    return push(std::move(r));
}

Var Tape::rsample(Var mean, Var logvar, Tensor eps) {
    const Node &nm = at(mean), &nl = at(logvar);
    if (nm.shape != nl.shape || nm.shape != eps.shape)
        throw std::invalid_argument("rsample: shape mismatch");
    Node r;
    r.op = Op::kRsample;
    r.in0 = mean.id;
    r.in1 = logvar.id;
    r.needs_grad = nm.needs_grad || nl.needs_grad;
    r.shape = nm.shape;
    r.aux0 = std::move(eps);
    return push(std::move(r));
}

Var Tape::gauss_logpdf(Var mean, Var logvar, Var x) {
    const Node &nm = at(mean), &nl = at(logvar), &nx = at(x);
    if (nm.shape != nl.shape || nm.shape != nx.shape)
        throw std::invalid_argument("gauss_logpdf: shape mismatch");
    Node r;
    r.op = Op::kGaussLogpdf;
    r.in0 = mean.id;
    r.in1 = logvar.id;
    r.in2 = x.id;
    r.needs_grad = nm.needs_grad || nl.needs_grad || nx.needs_grad;
    r.shape = {shape_rows(nm.shape), 1};
    return push(std::move(r));
}

Var Tape::gauss_entropy(Var logvar) {
    Node r;
    r.op = Op::kGaussEntropy;
    r.in0 = logvar.id;
    r.needs_grad = at(logvar).needs_grad;
    r.shape = {shape_rows(at(logvar).shape), 1};
    return push(std::move(r));
}

Var Tape::kl_std(Var mean, Var logvar) {
    const Node &nm = at(mean), &nl = at(logvar);
    if (nm.shape != nl.shape) throw std::invalid_argument("kl_std: shape mismatch");
    Node r;
    r.op = Op::kKlStd;
    r.in0 = mean.id;
    r.in1 = logvar.id;
    r.needs_grad = nm.needs_grad || nl.needs_grad;
    r.shape = {shape_rows(nm.shape), 1};
    return push(std::move(r));
}

Var Tape::obs_loglik(Tensor y, Var x, Tensor mask, double sigma) {
    const Node& nx = at(x);
    if (y.shape != nx.shape || mask.shape != nx.shape)
        throw std::invalid_argument("obs_loglik: shape mismatch");
    if (!(sigma > 0)) throw std::invalid_argument("obs_loglik: sigma must be positive");
    Node r;
    r.op = Op::kObsLoglik;
    r.in0 = x.id;
    r.p0 = sigma;
    r.needs_grad = nx.needs_grad;
    r.shape = {shape_rows(nx.shape), 1};
    r.aux0 = std::move(y);
    r.aux1 = std::move(mask);
    return push(std::move(r));
}

Var Tape::obs_loglik_beta(Tensor y, Var x, Var beta, Tensor mask) {
    const Node &nx = at(x), &nb = at(beta);
    if (y.shape != nx.shape || mask.shape != nx.shape)
        throw std::invalid_argument("obs_loglik_beta: shape mismatch");
    if (shape_rows(nb.shape) != shape_rows(nx.shape) || shape_cols(nb.shape) != 1)
        throw std::invalid_argument("obs_loglik_beta: beta must be (n,1)");
    Node r;
    r.op = Op::kObsLoglikBeta;
    r.in0 = x.id;
    r.in1 = beta.id;
    r.needs_grad = nx.needs_grad || nb.needs_grad;
    r.shape = {shape_rows(nx.shape), 1};
    r.aux0 = std::move(y);
    r.aux1 = std::move(mask);
    return push(std::move(r));
}

Var Tape::marginal_obs_loglik(Tensor y, Var mean, Var logvar, Tensor mask, double sigma) {
    const Node &nm = at(mean), &nl = at(logvar);
    if (y.shape != nm.shape || mask.shape != nm.shape || nl.shape != nm.shape)
        throw std::invalid_argument("marginal_obs_loglik: shape mismatch");
    if (!(sigma > 0)) throw std::invalid_argument("marginal_obs_loglik: sigma must be positive");
    Node r;
    r.op = Op::kMarginalObsLoglik;
    r.in0 = mean.id;
    r.in1 = logvar.id;
    r.p0 = sigma;
    r.needs_grad = nm.needs_grad || nl.needs_grad;
    r.shape = {shape_rows(nm.shape), 1};
    r.aux0 = std::move(y);
    r.aux1 = std::move(mask);
    return push(std::move(r));
}

Var Tape::add(Var a, Var b) {
    const Node &na = at(a), &nb = at(b);
    if (na.shape != nb.shape) throw std::invalid_argument("add: shape mismatch");
    Node r;
    r.op = Op::kAdd;
    r.in0 = a.id;
    r.in1 = b.id;
    r.needs_grad = na.needs_grad || nb.needs_grad;
    r.shape = na.shape;
    return push(std::move(r));
}

Var Tape::sub(Var a, Var b) {
    const Node &na = at(a), &nb = at(b);
    if (na.shape != nb.shape) throw std::invalid_argument("sub: shape mismatch");
    Node r;
    r.op = Op::kSub;
    r.in0 = a.id;
    r.in1 = b.id;
    r.needs_grad = na.needs_grad || nb.needs_grad;
    r.shape = na.shape;
    return push(std::move(r));
}

Var Tape::scale(Var a, double c) {
    Node r;
    r.op = Op::kScale;
    r.in0 = a.id;
    r.p0 = c;
    r.needs_grad = at(a).needs_grad;
    r.shape = at(a).shape;
    return push(std::move(r));
}

Var Tape::add_const(Var a, double c) {
    Node r;
    r.op = Op::kAddConst;
    r.in0 = a.id;
    r.p0 = c;
    r.needs_grad = at(a).needs_grad;
    r.shape = at(a).shape;
    return push(std::move(r));
}

Var Tape::abs_val(Var a) {
    Node r;
    r.op = Op::kAbs;
    r.in0 = a.id;
    r.needs_grad = at(a).needs_grad;
    r.shape = at(a).shape;
    return push(std::move(r));
}

Var Tape::stop_gradient(Var a) {
    Node r;
    r.op = Op::kStopGradient;
    r.in0 = a.id;
    r.needs_grad = false;
    r.shape = at(a).shape;
    return push(std::move(r));
}

Var Tape::repeat_rows(Var a, std::size_t k) {
    if (k == 0) throw std::invalid_argument("repeat_rows: k must be >= 1");
    const Node& na = at(a);
    Node r;
    r.op = Op::kRepeatRows;
    r.in0 = a.id;
    r.p0 = static_cast<double>(k);
    r.needs_grad = na.needs_grad;
    r.shape = {shape_rows(na.shape) * k, shape_cols(na.shape)};
    return push(std::move(r));
}

Var Tape::group_logsumexp(Var a, std::size_t k) {
    const Node& na = at(a);
    std::size_t n = shape_rows(na.shape);
    if (k == 0 || n % k != 0) throw std::invalid_argument("group_logsumexp: bad group size");
    if (shape_cols(na.shape) != 1) throw std::invalid_argument("group_logsumexp: input must be (n,1)");
    Node r;
    r.op = Op::kGroupLogsumexp;
    r.in0 = a.id;
    r.p0 = static_cast<double>(k);
    r.needs_grad = na.needs_grad;
    r.shape = {n / k, 1};
    return push(std::move(r));
}

Var Tape::sum_all(Var a) {
    Node r;
    r.op = Op::kSumAll;
    r.in0 = a.id;
    r.needs_grad = at(a).needs_grad;
    r.shape = {1, 1};
    return push(std::move(r));
}

Var Tape::log_softmax_nll(Var logits, std::vector<int> labels) {
    const Node& nl = at(logits);
    if (labels.size() != shape_rows(nl.shape))
        throw std::invalid_argument("log_softmax_nll: label count mismatch");
    Node r;
    r.op = Op::kLogSoftmaxNll;
    r.in0 = logits.id;
    r.needs_grad = nl.needs_grad;
    r.shape = {shape_rows(nl.shape), 1};
    r.labels = std::move(labels);
    return push(std::move(r));
}

void Tape::compute(Node& n) {
    n.owned.assign(Tensor::numel_of(n.shape), 0.0);
    auto in_val = [&](std::int32_t id) { return node_val(nodes_[static_cast<std::size_t>(id)]); };
    auto in_shape = [&](std::int32_t id) -> const std::vector<std::size_t>& {
        return nodes_[static_cast<std::size_t>(id)].shape;
    };

    switch (n.op) {
        case Op::kConstant:
        case Op::kLeaf:
            break;
        case Op::kAffine: {
            auto xs = in_shape(n.in0);
            std::size_t rows = shape_rows(xs), in = shape_cols(xs);
            std::size_t out = shape_rows(in_shape(n.in1));
            ConstMatMap x(in_val(n.in0).data(), rows, in);
            ConstMatMap w(in_val(n.in1).data(), out, in);
            auto b = in_val(n.in2);
            MatMap y(n.owned.data(), rows, out);
            y.noalias() = x * w.transpose();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < out; ++c) n.owned[r * out + c] += b[c];
            break;
        }
        case Op::kLeakyRelu: {
            auto x = in_val(n.in0);
            for (std::size_t i = 0; i < x.size(); ++i)
                n.owned[i] = x[i] >= 0.0 ? x[i] : n.p0 * x[i];
            break;
        }
        case Op::kClamp: {
            auto x = in_val(n.in0);
            for (std::size_t i = 0; i < x.size(); ++i)
                n.owned[i] = std::min(std::max(x[i], n.p0), n.p1);
            break;
        }
        case Op::kConcatConstCols: {
            auto x = in_val(n.in0);
            std::size_t rows = shape_rows(n.shape);
            std::size_t a = shape_cols(in_shape(n.in0)), b = n.aux0.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < a; ++c) n.owned[r * (a + b) + c] = x[r * a + c];
                for (std::size_t c = 0; c < b; ++c) n.owned[r * (a + b) + a + c] = n.aux0(r, c);
            }
            break;
        }
        case Op::kRsample: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            for (std::size_t i = 0; i < m.size(); ++i)
                n.owned[i] = m[i] + std::exp(0.5 * lv[i]) * n.aux0.data[i];
            break;
        }
        case Op::kGaussLogpdf: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            auto x = in_val(n.in2);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    double diff = x[i] - m[i];
                    acc += -0.5 * kLog2Pi - 0.5 * lv[i] - diff * diff / (2.0 * std::exp(lv[i]));
                }
                n.owned[r] = acc;
            }
            break;
        }
        case Op::kGaussEntropy: {
            auto lv = in_val(n.in0);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) acc += 0.5 * (1.0 + kLog2Pi + lv[r * d + c]);
                n.owned[r] = acc;
            }
            break;
        }
        case Op::kKlStd: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    acc += 0.5 * (std::exp(lv[i]) + m[i] * m[i] - 1.0 - lv[i]);
                }
                n.owned[r] = acc;
            }
            break;
        }
        case Op::kObsLoglik: {
            auto x = in_val(n.in0);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            double sigma = n.p0, inv2v = 1.0 / (2.0 * sigma * sigma);
            double base = -0.5 * kLog2Pi - std::log(sigma);
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (n.aux1.data[i] != 0.0) {
                        double diff = n.aux0.data[i] - x[i];
                        acc += base - diff * diff * inv2v;
                    }
                }
                n.owned[r] = acc;
            }
            break;
        }
        case Op::kObsLoglikBeta: {
            auto x = in_val(n.in0);
            auto beta = in_val(n.in1);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double b = beta[r], inv2v = std::exp(-2.0 * b) * 0.5;
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (n.aux1.data[i] != 0.0) {
                        double diff = n.aux0.data[i] - x[i];
                        acc += -0.5 * kLog2Pi - b - diff * diff * inv2v;
                    }
                }
                n.owned[r] = acc;
            }
            break;
        }
        case Op::kMarginalObsLoglik: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            double s2 = n.p0 * n.p0;
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (n.aux1.data[i] != 0.0) {
                        double v = std::exp(lv[i]) + s2;
                        double diff = n.aux0.data[i] - m[i];
                        acc += -0.5 * kLog2Pi - 0.5 * std::log(v) - diff * diff / (2.0 * v);
                    }
                }
                n.owned[r] = acc;
            }
            break;
        }
        case Op::kAdd: {
            auto a = in_val(n.in0);
            auto b = in_val(n.in1);
            for (std::size_t i = 0; i < a.size(); ++i) n.owned[i] = a[i] + b[i];
            break;
        }
        case Op::kSub: {
            auto a = in_val(n.in0);
            auto b = in_val(n.in1);
            for (std::size_t i = 0; i < a.size(); ++i) n.owned[i] = a[i] - b[i];
            break;
        }
        case Op::kScale: {
            auto a = in_val(n.in0);
            for (std::size_t i = 0; i < a.size(); ++i) n.owned[i] = n.p0 * a[i];
            break;
        }
        case Op::kAddConst: {
            auto a = in_val(n.in0);
            for (std::size_t i = 0; i < a.size(); ++i) n.owned[i] = a[i] + n.p0;
            break;
        }
        case Op::kAbs: {
            auto a = in_val(n.in0);
            for (std::size_t i = 0; i < a.size(); ++i) n.owned[i] = std::abs(a[i]);
            break;
        }
        case Op::kStopGradient: {
            auto a = in_val(n.in0);
            std::copy(a.begin(), a.end(), n.owned.begin());
            break;
        }
        case Op::kRepeatRows: {
            auto a = in_val(n.in0);
            std::size_t k = static_cast<std::size_t>(n.p0);
            std::size_t in_rows = shape_rows(in_shape(n.in0)), c = shape_cols(n.shape);
            for (std::size_t r = 0; r < in_rows; ++r)
                for (std::size_t t = 0; t < k; ++t)
                    std::copy(a.begin() + r * c, a.begin() + (r + 1) * c,
                              n.owned.begin() + (r * k + t) * c);
            break;
        }
        case Op::kGroupLogsumexp: {
            auto a = in_val(n.in0);
            std::size_t k = static_cast<std::size_t>(n.p0), groups = shape_rows(n.shape);
            for (std::size_t g = 0; g < groups; ++g) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t t = 0; t < k; ++t) mx = std::max(mx, a[g * k + t]);
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += std::exp(a[g * k + t] - mx);
                n.owned[g] = mx + std::log(acc);
            }
            break;
        }
        case Op::kSumAll: {
            auto a = in_val(n.in0);
            double acc = 0.0;
            for (double v : a) acc += v;
            n.owned[0] = acc;
            break;
        }
        case Op::kLogSoftmaxNll: {
            auto lg = in_val(n.in0);
            std::size_t rows = shape_rows(n.shape), c = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lg[r * c + j]);
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += std::exp(lg[r * c + j] - mx);
                double lse = mx + std::log(acc);
                int label = n.labels[r];
                if (label < 0 || static_cast<std::size_t>(label) >= c)
                    throw std::invalid_argument("log_softmax_nll: label out of range");
                n.owned[r] = lse - lg[r * c + static_cast<std::size_t>(label)];
            }
            break;
        }
    }
}

std::span<double> Tape::grad_buf(std::int32_t idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    return {n.grad.data(), n.grad.size()};
}

void Tape::backward(Var root) {
    const Node& rn = at(root);
    if (Tensor::numel_of(rn.shape) != 1)
        throw std::invalid_argument("backward: root must be scalar");
    for (std::int32_t i = 0; i <= root.id; ++i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.needs_grad)
            n.grad.assign(Tensor::numel_of(n.shape), 0.0);
        else
            n.grad.clear();
    }
    if (!rn.needs_grad) return;  // objective does not depend on any leaf
    nodes_[static_cast<std::size_t>(root.id)].grad[0] = 1.0;
    for (std::int32_t i = root.id; i >= 0; --i) accumulate(i);
}

void Tape::accumulate(std::int32_t idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad || n.grad.empty()) return;
    auto in_val = [&](std::int32_t id) { return node_val(nodes_[static_cast<std::size_t>(id)]); };
    auto in_shape = [&](std::int32_t id) -> const std::vector<std::size_t>& {
        return nodes_[static_cast<std::size_t>(id)].shape;
    };
    auto wants = [&](std::int32_t id) {
        return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad;
    };
    auto gbuf = [&](std::int32_t id) -> std::vector<double>& {
        return nodes_[static_cast<std::size_t>(id)].grad;
    };

    const std::vector<double>& g = n.grad;

    switch (n.op) {
        case Op::kConstant:
        case Op::kLeaf:
        case Op::kStopGradient:
            break;
        case Op::kAffine: {
            auto xs = in_shape(n.in0);
            std::size_t rows = shape_rows(xs), in = shape_cols(xs);
            std::size_t out = shape_rows(in_shape(n.in1));
            ConstMatMap gy(g.data(), rows, out);
            ConstMatMap x(in_val(n.in0).data(), rows, in);
            ConstMatMap w(in_val(n.in1).data(), out, in);
            if (wants(n.in0)) {
                MatMap gx(gbuf(n.in0).data(), rows, in);
                gx.noalias() += gy * w;
            }
            if (wants(n.in1)) {
                MatMap gw(gbuf(n.in1).data(), out, in);
                gw.noalias() += gy.transpose() * x;
            }
            if (wants(n.in2)) {
                auto& gb = gbuf(n.in2);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < out; ++c) gb[c] += g[r * out + c];
            }
            break;
        }
        case Op::kLeakyRelu: {
            if (!wants(n.in0)) break;
            auto x = in_val(n.in0);
            auto& gx = gbuf(n.in0);
            for (std::size_t i = 0; i < x.size(); ++i)
                gx[i] += (x[i] >= 0.0 ? 1.0 : n.p0) * g[i];
            break;
        }
        case Op::kClamp: {
            if (!wants(n.in0)) break;
            auto x = in_val(n.in0);
            auto& gx = gbuf(n.in0);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] > n.p0 && x[i] < n.p1) gx[i] += g[i];
            break;
        }
        case Op::kConcatConstCols: {
            if (!wants(n.in0)) break;
            std::size_t rows = shape_rows(n.shape);
            std::size_t a = shape_cols(in_shape(n.in0)), b = n.aux0.cols();
            auto& gx = gbuf(n.in0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < a; ++c) gx[r * a + c] += g[r * (a + b) + c];
            break;
        }
        case Op::kRsample: {
            auto lv = in_val(n.in1);
            if (wants(n.in0)) {
                auto& gm = gbuf(n.in0);
                for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
            }
            if (wants(n.in1)) {
                auto& gl = gbuf(n.in1);
                for (std::size_t i = 0; i < gl.size(); ++i)
                    gl[i] += g[i] * 0.5 * std::exp(0.5 * lv[i]) * n.aux0.data[i];
            }
            break;
        }
        case Op::kGaussLogpdf: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            auto x = in_val(n.in2);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    double invv = std::exp(-lv[i]);
                    double diff = x[i] - m[i];
                    if (wants(n.in0)) gbuf(n.in0)[i] += gr * diff * invv;
                    if (wants(n.in2)) gbuf(n.in2)[i] -= gr * diff * invv;
                    if (wants(n.in1)) gbuf(n.in1)[i] += gr * (-0.5 + 0.5 * diff * diff * invv);
                }
            }
            break;
        }
        case Op::kGaussEntropy: {
            if (!wants(n.in0)) break;
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            auto& gl = gbuf(n.in0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < d; ++c) gl[r * d + c] += 0.5 * g[r];
            break;
        }
        case Op::kKlStd: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (wants(n.in0)) gbuf(n.in0)[i] += gr * m[i];
                    if (wants(n.in1)) gbuf(n.in1)[i] += gr * 0.5 * (std::exp(lv[i]) - 1.0);
                }
            }
            break;
        }
        case Op::kObsLoglik: {
            if (!wants(n.in0)) break;
            auto x = in_val(n.in0);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            double invv = 1.0 / (n.p0 * n.p0);
            auto& gx = gbuf(n.in0);
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (n.aux1.data[i] != 0.0) gx[i] += gr * (n.aux0.data[i] - x[i]) * invv;
                }
            }
            break;
        }
        case Op::kObsLoglikBeta: {
            auto x = in_val(n.in0);
            auto beta = in_val(n.in1);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                double invv = std::exp(-2.0 * beta[r]);
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (n.aux1.data[i] == 0.0) continue;
                    double diff = n.aux0.data[i] - x[i];
                    if (wants(n.in0)) gbuf(n.in0)[i] += gr * diff * invv;
                    if (wants(n.in1)) gbuf(n.in1)[r] += gr * (diff * diff * invv - 1.0);
                }
            }
            break;
        }
        case Op::kMarginalObsLoglik: {
            auto m = in_val(n.in0);
            auto lv = in_val(n.in1);
            std::size_t rows = shape_rows(n.shape), d = shape_cols(in_shape(n.in0));
            double s2 = n.p0 * n.p0;
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    std::size_t i = r * d + c;
                    if (n.aux1.data[i] == 0.0) continue;
                    double ev = std::exp(lv[i]);
                    double v = ev + s2;
                    double diff = n.aux0.data[i] - m[i];
                    if (wants(n.in0)) gbuf(n.in0)[i] += gr * diff / v;
                    if (wants(n.in1))
                        gbuf(n.in1)[i] += gr * ev * (diff * diff / (2.0 * v * v) - 0.5 / v);
                }
            }
            break;
        }
        case Op::kAdd: {
            if (wants(n.in0)) {
                auto& ga = gbuf(n.in0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (wants(n.in1)) {
                auto& gb = gbuf(n.in1);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
            break;
        }
        case Op::kSub: {
            if (wants(n.in0)) {
                auto& ga = gbuf(n.in0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (wants(n.in1)) {
                auto& gb = gbuf(n.in1);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
            break;
        }
        case Op::kScale: {
            if (!wants(n.in0)) break;
            auto& ga = gbuf(n.in0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.p0 * g[i];
            break;
        }
        case Op::kAddConst: {
            if (!wants(n.in0)) break;
            auto& ga = gbuf(n.in0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            break;
        }
        case Op::kAbs: {
            if (!wants(n.in0)) break;
            auto a = in_val(n.in0);
            auto& ga = gbuf(n.in0);
            // subgradient 0 at the kink
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += (a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0)) * g[i];
            break;
        }
        case Op::kRepeatRows: {
            if (!wants(n.in0)) break;
            std::size_t k = static_cast<std::size_t>(n.p0);
            std::size_t in_rows = shape_rows(in_shape(n.in0)), c = shape_cols(n.shape);
            auto& ga = gbuf(n.in0);
            for (std::size_t r = 0; r < in_rows; ++r)
                for (std::size_t t = 0; t < k; ++t)
                    for (std::size_t j = 0; j < c; ++j)
                        ga[r * c + j] += g[(r * k + t) * c + j];
            break;
        }
        case Op::kGroupLogsumexp: {
            if (!wants(n.in0)) break;
            auto a = in_val(n.in0);
            std::size_t k = static_cast<std::size_t>(n.p0), groups = shape_rows(n.shape);
            auto& ga = gbuf(n.in0);
            for (std::size_t gi = 0; gi < groups; ++gi) {
                double out = n.owned[gi];
                for (std::size_t t = 0; t < k; ++t)
                    ga[gi * k + t] += g[gi] * std::exp(a[gi * k + t] - out);
            }
            break;
        }
        case Op::kSumAll: {
            if (!wants(n.in0)) break;
            auto& ga = gbuf(n.in0);
            for (double& v : ga) v += g[0];
            break;
        }
        case Op::kLogSoftmaxNll: {
            if (!wants(n.in0)) break;
            auto lg = in_val(n.in0);
            std::size_t rows = shape_rows(n.shape), c = shape_cols(in_shape(n.in0));
            auto& ga = gbuf(n.in0);
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lg[r * c + j]);
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += std::exp(lg[r * c + j] - mx);
                for (std::size_t j = 0; j < c; ++j) {
                    double soft = std::exp(lg[r * c + j] - mx) / acc;
                    double onehot = (static_cast<std::size_t>(n.labels[r]) == j) ? 1.0 : 0.0;
                    ga[r * c + j] += gr * (soft - onehot);
                }
            }
            break;
        }
    }
}

std::span<const double> Tape::grad(Var v) const {
    const Node& n = at(v);
    return {n.grad.data(), n.grad.size()};
}

Tensor Tape::grad_tensor(Var v) const {
    const Node& n = at(v);
    Tensor t(n.shape);
    if (!n.grad.empty()) t.data = n.grad;
    return t;
}

FbResult forward_backward(std::span<Tensor* const> params,
                          const std::function<Var(Tape&, std::span<const Var>)>& build) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (Tensor* p : params) leaves.push_back(tape.leaf(*p));
    Var root = build(tape, leaves);
    if (Tensor::numel_of(tape.shape(root)) != 1)
        throw std::invalid_argument("forward_backward: objective must be scalar");
    tape.backward(root);
    FbResult out;
    out.value = tape.scalar(root);
    out.grads.reserve(params.size());
    for (Var v : leaves) out.grads.push_back(tape.grad_tensor(v));
    return out;
}

}  // namespace tae
