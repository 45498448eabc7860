#include "tae/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace tae {

namespace {

Tensor draw_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    rng.fill_normal(t.data);
    return t;
}

Tensor mask_tensor(const Batch& b) { return b.alpha; }

// (n, 2d) encoder input: y columns then mask columns.
Tensor batch_encoder_input(const Batch& b) {
    std::size_t n = b.size(), d = b.dim();
    Tensor x({n, 2 * d});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            x(r, c) = b.y(r, c);
            x(r, d + c) = b.alpha(r, c);
        }
    }
    return x;
}

double mean_of(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace

Batch Batch::from(std::span<const CorruptedSample* const> samples) {
    if (samples.empty()) throw std::invalid_argument("Batch: empty sample list");
    std::size_t n = samples.size(), d = samples[0]->y.size();
    Batch b;
    b.y = Tensor({n, d});
    b.alpha = Tensor({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        const CorruptedSample& s = *samples[r];
        if (s.y.size() != d || s.alpha.dim() != d)
            throw std::invalid_argument("Batch: inconsistent sample dimension");
        for (std::size_t c = 0; c < d; ++c) {
            b.y(r, c) = s.y[c];
            b.alpha(r, c) = static_cast<double>(s.alpha.on[c]);
        }
    }
    return b;
}

Batch Batch::from_single(const CorruptedSample& s) {
    const CorruptedSample* p = &s;
    return from(std::span<const CorruptedSample* const>(&p, 1));
}

namespace {
void append_mlp_vars(const MlpVars& v, std::vector<Var>& out) {
    for (std::size_t l = 0; l < v.hidden_w.size(); ++l) {
        out.push_back(v.hidden_w[l]);
        out.push_back(v.hidden_b[l]);
    }
    out.push_back(v.mean_w);
    out.push_back(v.mean_b);
    out.push_back(v.logvar_w);
    out.push_back(v.logvar_b);
}
}  // namespace

std::vector<Var> TaeModelVars::leaf_vars() const {
    std::vector<Var> out;
    append_mlp_vars(enc, out);
    append_mlp_vars(dec, out);
    append_mlp_vars(prior_enc, out);
    append_mlp_vars(prior_dec, out);
    append_mlp_vars(lat_post, out);
    if (noise_head) {
        out.push_back(noise_mean_w);
        out.push_back(noise_mean_b);
        out.push_back(noise_logvar_w);
        out.push_back(noise_logvar_b);
    }
    return out;
}

std::vector<Var> MvaeModelVars::leaf_vars() const {
    std::vector<Var> out;
    append_mlp_vars(enc, out);
    append_mlp_vars(dec, out);
    return out;
}

TaeModelVars register_tae(Tape& tape, const TaeModel& m) {
    TaeModelVars v;
    v.enc = register_mlp(tape, m.enc);
    v.dec = register_mlp(tape, m.dec);
    v.prior_enc = register_mlp(tape, m.prior_enc);
    v.prior_dec = register_mlp(tape, m.prior_dec);
    v.lat_post = register_mlp(tape, m.lat_post);
    v.noise_head = m.arch.noise_head;
    if (v.noise_head) {
        v.noise_mean_w = tape.leaf(m.noise_mean_head.w);
        v.noise_mean_b = tape.leaf(m.noise_mean_head.b);
        v.noise_logvar_w = tape.leaf(m.noise_logvar_head.w);
        v.noise_logvar_b = tape.leaf(m.noise_logvar_head.b);
    }
    return v;
}

MvaeModelVars register_mvae(Tape& tape, const MvaeModel& m) {
    MvaeModelVars v;
    v.enc = register_mlp(tape, m.enc);
    v.dec = register_mlp(tape, m.dec);
    return v;
}

namespace {
MlpVars mlp_vars_from_leaves(const Mlp& net, std::span<const Var> leaves, std::size_t& pos) {
    MlpVars v;
    v.slope = net.slope;
    v.logvar_clamp = net.logvar_clamp;
    for (std::size_t l = 0; l < net.hidden.size(); ++l) {
        v.hidden_w.push_back(leaves[pos++]);
        v.hidden_b.push_back(leaves[pos++]);
    }
    v.mean_w = leaves[pos++];
    v.mean_b = leaves[pos++];
    v.logvar_w = leaves[pos++];
    v.logvar_b = leaves[pos++];
    return v;
}
}  // namespace

TaeModelVars tae_vars_from_leaves(const TaeModel& m, std::span<const Var> leaves) {
    std::size_t pos = 0;
    TaeModelVars v;
    v.enc = mlp_vars_from_leaves(m.enc, leaves, pos);
    v.dec = mlp_vars_from_leaves(m.dec, leaves, pos);
    v.prior_enc = mlp_vars_from_leaves(m.prior_enc, leaves, pos);
    v.prior_dec = mlp_vars_from_leaves(m.prior_dec, leaves, pos);
    v.lat_post = mlp_vars_from_leaves(m.lat_post, leaves, pos);
    v.noise_head = m.arch.noise_head;
    if (v.noise_head) {
        v.noise_mean_w = leaves[pos++];
        v.noise_mean_b = leaves[pos++];
        v.noise_logvar_w = leaves[pos++];
        v.noise_logvar_b = leaves[pos++];
    }
    if (pos != leaves.size())
        throw std::invalid_argument("tae_vars_from_leaves: leaf count mismatch");
    return v;
}

MvaeModelVars mvae_vars_from_leaves(const MvaeModel& m, std::span<const Var> leaves) {
    std::size_t pos = 0;
    MvaeModelVars v;
    v.enc = mlp_vars_from_leaves(m.enc, leaves, pos);
    v.dec = mlp_vars_from_leaves(m.dec, leaves, pos);
    if (pos != leaves.size())
        throw std::invalid_argument("mvae_vars_from_leaves: leaf count mismatch");
    return v;
}

TaeGraph tae_graph(Tape& tape, const TaeModelVars& vars, const ArchConfig& arch, const Batch& b,
                   const NoiseSpec& noise, double gamma, const PenaltyConfig& pen, Rng& rng,
                   bool detach_lat_post) {
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("tae_graph: gamma must be in [0,1]");
    if (pen.lambda < 0.0) throw std::invalid_argument("tae_graph: lambda must be >= 0");
    const std::size_t n = b.size(), d = b.dim();
    const bool inferred = noise.mode == NoiseSpec::Mode::kInferred;
    if (inferred && !vars.noise_head)
        throw std::invalid_argument("tae_graph: inferred noise requires the phi5 head");
    if (!inferred && !(noise.sigma > 0.0))
        throw std::invalid_argument("tae_graph: sigma must be positive");

    // z ~ q(z|y,alpha)
    Var enc_in = tape.constant(batch_encoder_input(b));
    MlpHeadVars zq = mlp_forward(tape, vars.enc, enc_in);
    Var z = tape.rsample(zq.mean, zq.logvar, draw_normal(n, arch.z_dim, rng));

    // x ~ q(x|z) (optionally conditioned on y,alpha)
    Var dec_in = arch.conditional_decoder ? tape.concat_const_cols(z, batch_encoder_input(b)) : z;
    MlpHeadVars xq = mlp_forward(tape, vars.dec, dec_in);
    Var x = tape.rsample(xq.mean, xq.logvar, draw_normal(n, d, rng));

    // E: observation likelihood, with beta ~ q(beta|z,y,alpha) when inferred.
    // The beta noise is drawn in both modes so the draw stream does not
    // depend on the mode.
    Tensor beta_eps = draw_normal(n, 1, rng);
    Var e_rows;
    if (inferred) {
        Var bm = tape.affine(xq.trunk, vars.noise_mean_w, vars.noise_mean_b);
        Var blv = tape.clamp(tape.affine(xq.trunk, vars.noise_logvar_w, vars.noise_logvar_b),
                             -vars.enc.logvar_clamp, vars.enc.logvar_clamp);
        Var beta = tape.rsample(bm, blv, std::move(beta_eps));
        e_rows = tape.obs_loglik_beta(b.y, x, beta, mask_tensor(b));
    } else {
        e_rows = tape.obs_loglik(b.y, x, mask_tensor(b), noise.sigma);
    }

    // prior LVM terms: z_p ~ q(z_p|x), P = log p(x|z_p), K = KL(q(z_p|x)||N(0,I))
    MlpHeadVars zpq = mlp_forward(tape, vars.prior_enc, x);
    Var zp = tape.rsample(zpq.mean, zpq.logvar, draw_normal(n, arch.zp_dim, rng));
    MlpHeadVars px = mlp_forward(tape, vars.prior_dec, zp);
    Var p_rows = tape.gauss_logpdf(px.mean, px.logvar, x);
    Var k_rows = tape.kl_std(zpq.mean, zpq.logvar);

    // entropies
    Var hz_rows = tape.gauss_entropy(zq.logvar);
    Var hx_rows = tape.gauss_entropy(xq.logvar);

    // localization condition: R = log r(z|x), Q = log q(z|y,alpha)
    Var r_in = detach_lat_post ? tape.stop_gradient(x) : x;
    if (arch.conditional_decoder)
        r_in = tape.concat_const_cols(r_in, batch_encoder_input(b));
    MlpHeadVars rz = mlp_forward(tape, vars.lat_post, r_in);
    Var z_for_r = detach_lat_post ? tape.stop_gradient(z) : z;
    Var r_rows = tape.gauss_logpdf(rz.mean, rz.logvar, z_for_r);
    Var q_rows;
    if (detach_lat_post) {
        q_rows = tape.gauss_logpdf(tape.stop_gradient(zq.mean), tape.stop_gradient(zq.logvar),
                                   tape.stop_gradient(z));
    } else {
        q_rows = tape.gauss_logpdf(zq.mean, zq.logvar, z);
    }

    Var pen_rows = tape.scale(tape.abs_val(tape.add_const(tape.sub(r_rows, q_rows), -pen.C)),
                              pen.lambda);

    // F = E + gamma (P - K + Hx) + Hz - penalty
    Var warm = tape.scale(tape.add(tape.sub(p_rows, k_rows), hx_rows), gamma);
    Var f_rows = tape.sub(tape.add(tape.add(e_rows, warm), hz_rows), pen_rows);

    TaeGraph g;
    g.objective = tape.sum_all(f_rows);
    g.obs_lik = e_rows;
    g.prior_rec = p_rows;
    g.prior_kl = k_rows;
    g.h_z = hz_rows;
    g.h_x = hx_rows;
    g.r_logq = r_rows;
    g.q_logq = q_rows;
    g.penalty = pen_rows;
    return g;
}

MvaeGraph mvae_graph(Tape& tape, const MvaeModelVars& vars, const Batch& b, double sigma,
                     Rng& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("mvae_graph: sigma must be positive");
    const std::size_t n = b.size();
    Var enc_in = tape.constant(batch_encoder_input(b));
    MlpHeadVars zq = mlp_forward(tape, vars.enc, enc_in);
    std::size_t z_dim = tape.vcols(zq.mean);
    Var z = tape.rsample(zq.mean, zq.logvar, draw_normal(n, z_dim, rng));
    MlpHeadVars px = mlp_forward(tape, vars.dec, z);
    MvaeGraph g;
    g.lik_rows = tape.marginal_obs_loglik(b.y, px.mean, px.logvar, mask_tensor(b), sigma);
    g.kl_rows = tape.kl_std(zq.mean, zq.logvar);
    g.rows = tape.sub(g.lik_rows, g.kl_rows);
    return g;
}

Var miwae_graph(Tape& tape, const MvaeModelVars& vars, const Batch& b, double sigma, std::size_t k,
                Rng& rng) {
    if (k == 0) throw std::invalid_argument("miwae_graph: K must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("miwae_graph: sigma must be positive");
    const std::size_t n = b.size(), d = b.dim();
    Var enc_in = tape.constant(batch_encoder_input(b));
    MlpHeadVars zq = mlp_forward(tape, vars.enc, enc_in);
    std::size_t z_dim = tape.vcols(zq.mean);

    // K z-draws per sample as contiguous row groups
    Var mean_rep = tape.repeat_rows(zq.mean, k);
    Var logvar_rep = tape.repeat_rows(zq.logvar, k);
    Var z = tape.rsample(mean_rep, logvar_rep, draw_normal(n * k, z_dim, rng));

    MlpHeadVars px = mlp_forward(tape, vars.dec, z);

    Tensor y_rep({n * k, d}), a_rep({n * k, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t t = 0; t < k; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                y_rep(r * k + t, c) = b.y(r, c);
                a_rep(r * k + t, c) = b.alpha(r, c);
            }
    Var lik = tape.marginal_obs_loglik(std::move(y_rep), px.mean, px.logvar, std::move(a_rep),
                                       sigma);

    Var prior_mean = tape.constant(Tensor::zeros({n * k, z_dim}));
    Var prior_logvar = tape.constant(Tensor::zeros({n * k, z_dim}));
    Var log_prior = tape.gauss_logpdf(prior_mean, prior_logvar, z);
    Var log_q = tape.gauss_logpdf(mean_rep, logvar_rep, z);

    // log (1/K) sum_k exp(w_k)
    Var w = tape.sub(tape.add(lik, log_prior), log_q);
    return tape.add_const(tape.group_logsumexp(w, k), -std::log(static_cast<double>(k)));
}

TaeTerms mean_terms(const Tape& tape, const TaeGraph& g) {
    TaeTerms t;
    t.obs_lik = mean_of(tape.val(g.obs_lik));
    t.prior_rec = mean_of(tape.val(g.prior_rec));
    t.prior_kl = mean_of(tape.val(g.prior_kl));
    t.h_z = mean_of(tape.val(g.h_z));
    t.h_x = mean_of(tape.val(g.h_x));
    t.r_logq = mean_of(tape.val(g.r_logq));
    t.q_logq = mean_of(tape.val(g.q_logq));
    t.penalty = mean_of(tape.val(g.penalty));
    return t;
}

double mvae_elbo(const MvaeModel& m, const CorruptedSample& s, double sigma, Rng& rng) {
    Tape tape;
    MvaeModelVars vars = register_mvae(tape, m);
    MvaeGraph g = mvae_graph(tape, vars, Batch::from_single(s), sigma, rng);
    return tape.val(g.rows)[0];
}

double miwae_elbo(const MvaeModel& m, const CorruptedSample& s, double sigma, std::size_t k,
                  Rng& rng) {
    Tape tape;
    MvaeModelVars vars = register_mvae(tape, m);
    Var rows = miwae_graph(tape, vars, Batch::from_single(s), sigma, k, rng);
    return tape.val(rows)[0];
}

std::pair<double, TaeTerms> tae_objective(const TaeModel& m, const CorruptedSample& s,
                                          double sigma, double gamma, const PenaltyConfig& pen,
                                          Rng& rng) {
    Tape tape;
    TaeModelVars vars = register_tae(tape, m);
    NoiseSpec noise{NoiseSpec::Mode::kFixed, sigma};
    TaeGraph g = tae_graph(tape, vars, m.arch, Batch::from_single(s), noise, gamma, pen, rng);
    return {tape.scalar(g.objective), mean_terms(tape, g)};
}

std::pair<double, TaeTerms> tae_objective_beta(const TaeModel& m, const CorruptedSample& s,
                                               double gamma, const PenaltyConfig& pen, Rng& rng) {
    if (!m.arch.noise_head)
        throw std::invalid_argument("tae_objective_beta: model has no noise head");
    Tape tape;
    TaeModelVars vars = register_tae(tape, m);
    NoiseSpec noise{NoiseSpec::Mode::kInferred, 0.0};
    TaeGraph g = tae_graph(tape, vars, m.arch, Batch::from_single(s), noise, gamma, pen, rng);
    return {tape.scalar(g.objective), mean_terms(tape, g)};
}

double reduced_entropy(const DiagGaussian& z_gauss, const DiagGaussian& x_gauss) {
    return entropy(z_gauss) + entropy(x_gauss);
}

double condition_value(const DiagGaussian& z_gauss, std::span<const double> z_draw,
                       std::span<const double> x_draw, const Mlp& lat_post) {
    DiagGaussian r = mlp_head(lat_post, x_draw);
    return log_density(r, z_draw) - log_density(z_gauss, z_draw);
}

}  // namespace tae
