#include "tae/mlp.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace tae {

namespace {

using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Tensor glorot(std::size_t out, std::size_t in, Rng& rng) {
    Tensor w({out, in});
    double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    return w;
}

void affine_batch(const DenseLayer& l, const Tensor& x, Tensor& y) {
    std::size_t n = x.rows(), in = x.cols(), out = l.w.rows();
    if (l.w.cols() != in) throw std::invalid_argument("mlp: input dimension mismatch");
    y = Tensor({n, out});
    ConstMatMap xm(x.data.data(), n, in);
    ConstMatMap wm(l.w.data.data(), out, in);
    MatMap ym(y.data.data(), n, out);
    ym.noalias() = xm * wm.transpose();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out; ++c) y.data[r * out + c] += l.b.data[c];
}

}  // namespace

std::size_t Mlp::param_count() const {
    std::size_t k = 0;
    for (const auto& l : hidden) k += l.w.numel() + l.b.numel();
    k += mean_head.w.numel() + mean_head.b.numel();
    k += logvar_head.w.numel() + logvar_head.b.numel();
    return k;
}

Mlp make_mlp(std::size_t in, std::size_t hidden_width, std::size_t hidden_layers, std::size_t out,
             double slope, double logvar_clamp, Rng& rng) {
    if (in == 0 || out == 0 || (hidden_layers > 0 && hidden_width == 0))
        throw std::invalid_argument("make_mlp: zero layer width");
    Mlp net;
    net.slope = slope;
    net.logvar_clamp = logvar_clamp;
    std::size_t cur = in;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        DenseLayer layer;
        layer.w = glorot(hidden_width, cur, rng);
        layer.b = Tensor({hidden_width});
        net.hidden.push_back(std::move(layer));
        cur = hidden_width;
    }
    net.mean_head.w = glorot(out, cur, rng);
    net.mean_head.b = Tensor({out});
    net.logvar_head.w = glorot(out, cur, rng);
    net.logvar_head.b = Tensor({out});
    return net;
}

MlpBatchOut mlp_forward_batch(const Mlp& net, const Tensor& input, Tensor* trunk_out) {
    Tensor h = input;
    Tensor next;
    for (const auto& l : net.hidden) {
        affine_batch(l, h, next);
        for (double& v : next.data) v = v >= 0.0 ? v : net.slope * v;
        h = std::move(next);
    }
    if (trunk_out) *trunk_out = h;
    MlpBatchOut out;
    affine_batch(net.mean_head, h, out.mean);
    affine_batch(net.logvar_head, h, out.logvar);
    double c = net.logvar_clamp;
    for (double& v : out.logvar.data) v = std::min(std::max(v, -c), c);
    return out;
}

DiagGaussian mlp_head(const Mlp& net, std::span<const double> input) {
    if (input.size() != net.in_dim()) throw std::invalid_argument("mlp_head: input dim mismatch");
    Tensor x({1, input.size()});
    std::copy(input.begin(), input.end(), x.data.begin());
    MlpBatchOut out = mlp_forward_batch(net, x);
    DiagGaussian g;
    g.mean = std::move(out.mean.data);
    g.logvar = std::move(out.logvar.data);
    return g;
}

namespace {
MlpVars register_impl(Tape& tape, const Mlp& net, bool frozen) {
    MlpVars v;
    v.slope = net.slope;
    v.logvar_clamp = net.logvar_clamp;
    auto reg = [&](const Tensor& t) { return frozen ? tape.constant_view(t) : tape.leaf(t); };
    for (const auto& l : net.hidden) {
        v.hidden_w.push_back(reg(l.w));
        v.hidden_b.push_back(reg(l.b));
    }
    v.mean_w = reg(net.mean_head.w);
    v.mean_b = reg(net.mean_head.b);
    v.logvar_w = reg(net.logvar_head.w);
    v.logvar_b = reg(net.logvar_head.b);
    return v;
}
}  // namespace

MlpVars register_mlp(Tape& tape, const Mlp& net) { return register_impl(tape, net, false); }
MlpVars register_mlp_frozen(Tape& tape, const Mlp& net) { return register_impl(tape, net, true); }

MlpHeadVars mlp_forward(Tape& tape, const MlpVars& vars, Var input) {
    Var h = input;
    for (std::size_t l = 0; l < vars.hidden_w.size(); ++l) {
        h = tape.affine(h, vars.hidden_w[l], vars.hidden_b[l]);
        h = tape.leaky_relu(h, vars.slope);
    }
    MlpHeadVars out;
    out.trunk = h;
    out.mean = tape.affine(h, vars.mean_w, vars.mean_b);
    out.logvar = tape.clamp(tape.affine(h, vars.logvar_w, vars.logvar_b), -vars.logvar_clamp,
                            vars.logvar_clamp);
    return out;
}

void collect_params(Mlp& net, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor*>>& out) {
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
        out.emplace_back(prefix + ".hidden" + std::to_string(l) + ".w", &net.hidden[l].w);
        out.emplace_back(prefix + ".hidden" + std::to_string(l) + ".b", &net.hidden[l].b);
    }
    out.emplace_back(prefix + ".mean.w", &net.mean_head.w);
    out.emplace_back(prefix + ".mean.b", &net.mean_head.b);
    out.emplace_back(prefix + ".logvar.w", &net.logvar_head.w);
    out.emplace_back(prefix + ".logvar.b", &net.logvar_head.b);
}

}  // namespace tae
