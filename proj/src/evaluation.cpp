#include "tae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tae/adam.hpp"
#include "tae/errors.hpp"
#include "tae/objectives.hpp"
#include "tae/tape.hpp"

namespace tae {

double psnr(std::span<const double> x_true, std::span<const double> x_est) {
    if (x_true.size() != x_est.size()) throw std::invalid_argument("psnr: dimension mismatch");
    if (x_true.empty()) throw std::invalid_argument("psnr: empty input");
    double mse = 0.0;
    for (std::size_t i = 0; i < x_true.size(); ++i) {
        double d = x_true[i] - x_est[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x_true.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

double diversity(const std::vector<std::vector<double>>& draws) {
    if (draws.size() < 2) throw std::invalid_argument("diversity: need at least 2 draws");
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        for (std::size_t j = i + 1; j < draws.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < draws[i].size(); ++k) {
                double d = draws[i][k] - draws[j][k];
                d2 += d * d;
            }
            acc += std::sqrt(d2);
            ++pairs;
        }
    }
    return acc / static_cast<double>(pairs);
}

namespace {

// (n, 3d) refit input rows: x_clean || y || alpha
Tensor refit_input(const std::vector<RefitPair>& pairs, std::span<const std::size_t> idx) {
    std::size_t d = pairs.front().x_clean.size();
    Tensor t({idx.size(), 3 * d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const RefitPair& p = pairs[idx[r]];
        for (std::size_t c = 0; c < d; ++c) {
            t(r, c) = p.x_clean[c];
            t(r, d + c) = p.y[c];
            t(r, 2 * d + c) = static_cast<double>(p.alpha.on[c]);
        }
    }
    return t;
}

Tensor rows_tensor(const std::vector<RefitPair>& pairs, std::span<const std::size_t> idx,
                   const std::vector<double> RefitPair::*field) {
    std::size_t d = (pairs.front().*field).size();
    Tensor t({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& v = pairs[idx[r]].*field;
        std::copy(v.begin(), v.end(), t.data.begin() + r * d);
    }
    return t;
}

}  // namespace

double refit_elbo(const Mlp& enc, const Mlp& dec, const std::vector<RefitPair>& pairs,
                  const RefitConfig& cfg, Rng& rng) {
    if (pairs.empty()) throw std::invalid_argument("refit_elbo: no evaluation pairs");
    const std::size_t d = pairs.front().x_clean.size();
    const std::size_t z_dim = enc.out_dim();
    for (const RefitPair& p : pairs)
        if (p.x_clean.size() != d || p.y.size() != d || p.alpha.dim() != d)
            throw std::invalid_argument("refit_elbo: inconsistent pair dimensions");

    // frozen q(z|y,alpha) parameters per pair, computed once
    std::vector<std::size_t> all(pairs.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Tensor enc_in({pairs.size(), 2 * d});
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        const RefitPair& p = pairs[r];
        for (std::size_t c = 0; c < d; ++c) {
            enc_in(r, c) = p.y[c];
            enc_in(r, d + c) = static_cast<double>(p.alpha.on[c]);
        }
    }
    MlpBatchOut q1 = mlp_forward_batch(enc, enc_in);

    Rng init_rng = rng.child(0x7e617421);
    Mlp s = make_mlp(3 * d, cfg.hidden, cfg.hidden_layers, z_dim, enc.slope, enc.logvar_clamp,
                     init_rng);
    std::vector<std::pair<std::string, Tensor*>> named;
    collect_params(s, "s", named);
    std::vector<Tensor*> params;
    for (auto& [name, t] : named) params.push_back(t);
    AdamState adam = AdamState::init(params, cfg.learning_rate);

    Rng draw_rng = rng.child(0x7e617422);
    Rng batch_rng = rng.child(0x7e617423);

    auto batch_rows = [&](std::span<const std::size_t> idx, Tape& tape,
                          std::vector<Var>* leaves) -> Var {
        std::size_t n = idx.size();
        MlpVars sv = leaves ? register_mlp(tape, s) : register_mlp_frozen(tape, s);
        if (leaves) {
            for (std::size_t l = 0; l < sv.hidden_w.size(); ++l) {
                leaves->push_back(sv.hidden_w[l]);
                leaves->push_back(sv.hidden_b[l]);
            }
            leaves->push_back(sv.mean_w);
            leaves->push_back(sv.mean_b);
            leaves->push_back(sv.logvar_w);
            leaves->push_back(sv.logvar_b);
        }
        MlpVars dv = register_mlp_frozen(tape, dec);

        Var in = tape.constant(refit_input(pairs, idx));
        MlpHeadVars sh = mlp_forward(tape, sv, in);
        Tensor eps({n, z_dim});
        draw_rng.fill_normal(eps.data);
        Var z = tape.rsample(sh.mean, sh.logvar, std::move(eps));

        // log q(z|y,alpha) under the frozen encoder output
        Tensor mu1({n, z_dim}), lv1({n, z_dim});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < z_dim; ++c) {
                mu1(r, c) = q1.mean(idx[r], c);
                lv1(r, c) = q1.logvar(idx[r], c);
            }
        Var log_q1 = tape.gauss_logpdf(tape.constant(std::move(mu1)),
                                       tape.constant(std::move(lv1)), z);

        MlpHeadVars xh = mlp_forward(tape, dv, z);
        Var x_clean = tape.constant(rows_tensor(pairs, idx, &RefitPair::x_clean));
        Var log_q2 = tape.gauss_logpdf(xh.mean, xh.logvar, x_clean);

        Var log_s = tape.gauss_logpdf(sh.mean, sh.logvar, z);
        return tape.sub(tape.add(log_q1, log_q2), log_s);
    };

    const std::size_t batch = std::min(cfg.batch, pairs.size());
    for (std::size_t k = 0; k < cfg.iterations; ++k) {
        std::vector<std::size_t> idx(batch);
        for (auto& i : idx) i = batch_rng.below(pairs.size());
        try {
            Tape tape;
            std::vector<Var> leaves;
            Var rows = batch_rows(idx, tape, &leaves);
            Var root = tape.sum_all(rows);
            tape.backward(root);
            std::vector<Tensor> grads;
            for (Var lv : leaves) {
                Tensor g = tape.grad_tensor(lv);
                for (double& v : g.data) v = -v;
                grads.push_back(std::move(g));
            }
            adam_step(adam, params, grads);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("refit_elbo: diverged at iteration " + std::to_string(k) +
                                     ": " + e.what());
        }
    }

    // converged estimate: average over final_draws z-draws, mean per pair
    double total = 0.0;
    std::size_t draws = std::max<std::size_t>(1, cfg.final_draws);
    for (std::size_t t = 0; t < draws; ++t) {
        Tape tape;
        Var rows = batch_rows(all, tape, nullptr);
        auto v = tape.val(rows);
        for (double x : v) total += x;
    }
    return total / static_cast<double>(draws * pairs.size());
}

std::vector<double> classifier_probs(const ClassifierHead& head, std::span<const double> x) {
    if (x.size() != head.layer.w.cols())
        throw std::invalid_argument("classifier: input dimension mismatch");
    std::size_t classes = head.classes();
    std::vector<double> logits(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        double acc = head.layer.b.data[c];
        for (std::size_t j = 0; j < x.size(); ++j)
            acc += head.layer.w(c, j) * x[j];
        logits[c] = acc >= 0.0 ? acc : head.slope * acc;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : logits) v /= z;
    return logits;
}

ClassifierHead train_classifier(const PosteriorSampler& sampler, const std::vector<int>& labels,
                                const std::vector<std::size_t>& indices, std::size_t input_dim,
                                const ClassifierConfig& cfg) {
    if (indices.empty()) throw std::invalid_argument("train_classifier: no labelled samples");
    Rng rng(cfg.seed);
    Rng draw_rng = rng.child(1);
    Rng batch_rng = rng.child(2);

    ClassifierHead head;
    head.slope = 0.01;
    Rng init_rng = rng.child(3);
    Mlp proto = make_mlp(input_dim, 0, 0, cfg.classes, head.slope, 10.0, init_rng);
    head.layer = std::move(proto.mean_head);

    std::vector<Tensor*> params{&head.layer.w, &head.layer.b};
    AdamState adam = AdamState::init(params, cfg.learning_rate);

    std::size_t batch = std::min(cfg.batch, indices.size());
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        Tensor x({batch, input_dim});
        std::vector<int> y(batch);
        for (std::size_t r = 0; r < batch; ++r) {
            std::size_t pick = indices[batch_rng.below(indices.size())];
            std::vector<double> draw = sampler(pick, draw_rng);
            if (draw.size() != input_dim)
                throw std::invalid_argument("train_classifier: sampler dimension mismatch");
            std::copy(draw.begin(), draw.end(), x.data.begin() + r * input_dim);
            y[r] = labels[pick];
        }
        Tape tape;
        Var w = tape.leaf(head.layer.w);
        Var b = tape.leaf(head.layer.b);
        Var logits = tape.leaky_relu(tape.affine(tape.constant(std::move(x)), w, b), head.slope);
        Var loss = tape.sum_all(tape.log_softmax_nll(logits, y));
        tape.backward(loss);
        std::vector<Tensor> grads{tape.grad_tensor(w), tape.grad_tensor(b)};
        adam_step(adam, params, grads);
    }
    return head;
}

ClassifyResult classify_draws(const ClassifierHead& head,
                              const std::vector<std::vector<double>>& draws) {
    ClassifyResult res;
    res.histogram.assign(head.classes(), 0);
    for (const auto& d : draws) {
        std::vector<double> probs = classifier_probs(head, d);
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.size(); ++c)
            if (probs[c] > probs[best]) best = c;
        res.histogram[best] += 1;
    }
    int top = 0;
    for (std::size_t c = 1; c < res.histogram.size(); ++c)
        if (res.histogram[c] > res.histogram[static_cast<std::size_t>(top)])
            top = static_cast<int>(c);
    res.label = top;
    return res;
}

ClassifyResult classify_posterior(const ClassifierHead& head, const PosteriorSampler& sampler,
                                  std::size_t index, std::size_t n_draws, Rng& rng) {
    std::vector<std::vector<double>> draws;
    draws.reserve(n_draws);
    for (std::size_t i = 0; i < n_draws; ++i) draws.push_back(sampler(index, rng));
    return classify_draws(head, draws);
}

ClassifyResult classify_posterior(const ClassifierHead& head, const Mlp& enc, const Mlp& dec,
                                  std::span<const double> y, const Mask& alpha,
                                  std::size_t n_draws, Rng& rng) {
    PosteriorDraws d = posterior_sample(enc, dec, y, alpha, n_draws, rng);
    return classify_draws(head, d.draws);
}

std::ptrdiff_t OracleGrid::cell_of(double x0, double x1) const {
    if (x0 < spec.lo0 || x0 >= spec.hi0 || x1 < spec.lo1 || x1 >= spec.hi1) return -1;
    auto i0 = static_cast<std::size_t>((x0 - spec.lo0) / cell_w0());
    auto i1 = static_cast<std::size_t>((x1 - spec.lo1) / cell_w1());
    i0 = std::min(i0, spec.n0 - 1);
    i1 = std::min(i1, spec.n1 - 1);
    return static_cast<std::ptrdiff_t>(i0 * spec.n1 + i1);
}

OracleGrid oracle_posterior_2d(const Curve2dSpec& manifold, std::span<const double> y,
                               const Mask& alpha, double sigma, const OracleGridSpec& grid) {
    if (y.size() != 2 || alpha.dim() != 2)
        throw std::invalid_argument("oracle_posterior_2d: data must be 2-D");
    if (!(sigma > 0.0)) throw std::invalid_argument("oracle_posterior_2d: sigma must be positive");
    OracleGrid g;
    g.spec = grid;
    g.mass.assign(grid.n0 * grid.n1, 0.0);
    double w0 = g.cell_w0(), w1 = g.cell_w1();

    // splat the curve prior over the grid, then weight by the observation
    // likelihood at cell centers
    const std::size_t arc_steps = 4001;
    double h = 1.0 / static_cast<double>(arc_steps - 1);
    double reach = manifold.trunc_radius * manifold.thickness;
    for (std::size_t i = 0; i < arc_steps; ++i) {
        double s = static_cast<double>(i) * h;
        auto c = manifold.point(s);
        double w = (i == 0 || i + 1 == arc_steps) ? 0.5 : 1.0;
        auto lo0 = static_cast<std::ptrdiff_t>(std::floor((c[0] - reach - grid.lo0) / w0));
        auto hi0 = static_cast<std::ptrdiff_t>(std::ceil((c[0] + reach - grid.lo0) / w0));
        auto lo1 = static_cast<std::ptrdiff_t>(std::floor((c[1] - reach - grid.lo1) / w1));
        auto hi1 = static_cast<std::ptrdiff_t>(std::ceil((c[1] + reach - grid.lo1) / w1));
        lo0 = std::max<std::ptrdiff_t>(lo0, 0);
        lo1 = std::max<std::ptrdiff_t>(lo1, 0);
        hi0 = std::min<std::ptrdiff_t>(hi0, static_cast<std::ptrdiff_t>(grid.n0));
        hi1 = std::min<std::ptrdiff_t>(hi1, static_cast<std::ptrdiff_t>(grid.n1));
        for (std::ptrdiff_t i0 = lo0; i0 < hi0; ++i0) {
            double x0 = grid.lo0 + (static_cast<double>(i0) + 0.5) * w0;
            for (std::ptrdiff_t i1 = lo1; i1 < hi1; ++i1) {
                double x1 = grid.lo1 + (static_cast<double>(i1) + 0.5) * w1;
                g.mass[static_cast<std::size_t>(i0) * grid.n1 + static_cast<std::size_t>(i1)] +=
                    w * h * manifold.kernel(x0 - c[0], x1 - c[1]);
            }
        }
    }

    double inv2v = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t i0 = 0; i0 < grid.n0; ++i0) {
        double x0 = grid.lo0 + (static_cast<double>(i0) + 0.5) * w0;
        for (std::size_t i1 = 0; i1 < grid.n1; ++i1) {
            double x1 = grid.lo1 + (static_cast<double>(i1) + 0.5) * w1;
            double loglik = 0.0;
            if (alpha.on[0]) loglik -= (y[0] - x0) * (y[0] - x0) * inv2v;
            if (alpha.on[1]) loglik -= (y[1] - x1) * (y[1] - x1) * inv2v;
            g.mass[i0 * grid.n1 + i1] *= std::exp(loglik);
        }
    }

    double total = std::accumulate(g.mass.begin(), g.mass.end(), 0.0);
    if (!(total > 0.0))
        throw NumericalError("oracle_posterior_2d: observation incompatible with the manifold");
    for (double& v : g.mass) v /= total;
    return g;
}

std::size_t count_modes(const OracleGrid& grid, double rel_threshold) {
    double mx = *std::max_element(grid.mass.begin(), grid.mass.end());
    double thresh = rel_threshold * mx;
    std::vector<std::uint8_t> mark(grid.mass.size(), 0);
    std::size_t modes = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < grid.mass.size(); ++start) {
        if (mark[start] || grid.mass[start] < thresh) continue;
        ++modes;
        stack.push_back(start);
        mark[start] = 1;
        while (!stack.empty()) {
            std::size_t cur = stack.back();
            stack.pop_back();
            std::size_t i0 = cur / grid.spec.n1, i1 = cur % grid.spec.n1;
            auto visit = [&](std::size_t n0, std::size_t n1) {
                std::size_t id = n0 * grid.spec.n1 + n1;
                if (!mark[id] && grid.mass[id] >= thresh) {
                    mark[id] = 1;
                    stack.push_back(id);
                }
            };
            if (i0 > 0) visit(i0 - 1, i1);
            if (i0 + 1 < grid.spec.n0) visit(i0 + 1, i1);
            if (i1 > 0) visit(i0, i1 - 1);
            if (i1 + 1 < grid.spec.n1) visit(i0, i1 + 1);
        }
    }
    return modes;
}

double cross_entropy_vs_grid(const OracleGrid& grid, const std::vector<std::vector<double>>& draws,
                             double mass_floor) {
    if (draws.empty()) throw std::invalid_argument("cross_entropy_vs_grid: no draws");
    double acc = 0.0;
    for (const auto& d : draws) {
        if (d.size() != 2) throw std::invalid_argument("cross_entropy_vs_grid: draws must be 2-D");
        std::ptrdiff_t cell = grid.cell_of(d[0], d[1]);
        double mass = cell >= 0 ? grid.mass[static_cast<std::size_t>(cell)] : 0.0;
        acc += -std::log(std::max(mass, mass_floor));
    }
    return acc / static_cast<double>(draws.size());
}

}  // namespace tae
