#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tae/corruption.hpp"
#include "tae/model.hpp"
#include "tae/tape.hpp"

namespace tae {

// Penalty strength and target for the localization condition.
struct PenaltyConfig {
    double lambda = 2.0;
    double C = 10.0;
};

// Per-sample scalar terms of the training objective. For a batch these are
// per-sample means; the objective itself is the batch sum.
struct TaeTerms {
    double obs_lik = 0.0;    // E:  log p(y|x, alpha, beta)
    double prior_rec = 0.0;  // P:  log p(x|z_p)
    double prior_kl = 0.0;   // K:  KL(q(z_p|x) || p(z_p))
    double h_z = 0.0;        // Hz: H(q(z|y, alpha))
    double h_x = 0.0;        // Hx: H(q(x|z)) at the drawn z
    double r_logq = 0.0;     // R:  log r(z|x)
    double q_logq = 0.0;     // Q:  log q(z|y, alpha)
    double penalty = 0.0;    // lambda * |R - Q - C|
};

// Row-major (n, d) views of a minibatch.
struct Batch {
    Tensor y;
    Tensor alpha;

    std::size_t size() const { return y.rows(); }
    std::size_t dim() const { return y.cols(); }

    static Batch from(std::span<const CorruptedSample* const> samples);
    static Batch from_single(const CorruptedSample& s);
};

// --- tape-level builders (shared by training, per-sample evaluators and the
// gradient tests) ---

struct TaeModelVars {
    MlpVars enc, dec, prior_enc, prior_dec, lat_post;
    Var noise_mean_w, noise_mean_b, noise_logvar_w, noise_logvar_b;
    bool noise_head = false;

    // Leaves in the same order as TaeModel::params().
    std::vector<Var> leaf_vars() const;
};
TaeModelVars register_tae(Tape& tape, const TaeModel& m);

struct MvaeModelVars {
    MlpVars enc, dec;

    std::vector<Var> leaf_vars() const;
};
MvaeModelVars register_mvae(Tape& tape, const MvaeModel& m);

// Rebuilds the var bundles from leaves already on a tape (in params() order),
// for use with forward_backward.
TaeModelVars tae_vars_from_leaves(const TaeModel& m, std::span<const Var> leaves);
MvaeModelVars mvae_vars_from_leaves(const MvaeModel& m, std::span<const Var> leaves);

struct TaeGraph {
    Var objective;  // scalar: batch sum of per-sample F
    Var obs_lik, prior_rec, prior_kl, h_z, h_x, r_logq, q_logq, penalty;  // (n,1) each
};

// Single-draw Monte Carlo graph of the penalized warm-up objective
//   F_i = E_i + gamma (P_i - K_i + Hx_i) + Hz_i - lambda |R_i - Q_i - C|.
// Draw order per batch: eps_z, eps_x, (eps_beta), eps_zp. With
// detach_lat_post, the penalty term propagates gradients into the latent
// posterior network only.
TaeGraph tae_graph(Tape& tape, const TaeModelVars& vars, const ArchConfig& arch, const Batch& b,
                   const NoiseSpec& noise, double gamma, const PenaltyConfig& pen, Rng& rng,
                   bool detach_lat_post = false);

// Single-z-draw estimate rows of E_q log p(y|z) - KL(q(z|y)||N(0,I)) -> (n,1).
struct MvaeGraph {
    Var rows;      // elbo estimate per sample
    Var lik_rows;  // marginal observation likelihood per sample
    Var kl_rows;   // KL(q(z|y,alpha) || N(0,I)) per sample
};
MvaeGraph mvae_graph(Tape& tape, const MvaeModelVars& vars, const Batch& b, double sigma,
                     Rng& rng);

// Importance-weighted bound rows, K weights per sample, log-sum-exp -> (n,1).
Var miwae_graph(Tape& tape, const MvaeModelVars& vars, const Batch& b, double sigma, std::size_t k,
                Rng& rng);

// --- per-sample evaluators (spec-facing operations) ---

double mvae_elbo(const MvaeModel& m, const CorruptedSample& s, double sigma, Rng& rng);
double miwae_elbo(const MvaeModel& m, const CorruptedSample& s, double sigma, std::size_t k,
                  Rng& rng);

std::pair<double, TaeTerms> tae_objective(const TaeModel& m, const CorruptedSample& s,
                                          double sigma, double gamma, const PenaltyConfig& pen,
                                          Rng& rng);
// Noise level routed through the phi5 head (beta = per-sample log sigma).
std::pair<double, TaeTerms> tae_objective_beta(const TaeModel& m, const CorruptedSample& s,
                                               double gamma, const PenaltyConfig& pen, Rng& rng);

// H(q(z|y)) + H(q(x|z)) for one conditional drawn at z.
double reduced_entropy(const DiagGaussian& z_gauss, const DiagGaussian& x_gauss);

// log r(z_draw|x_draw) - log q(z_draw|y): single-sample estimate of the
// localization condition value.
double condition_value(const DiagGaussian& z_gauss, std::span<const double> z_draw,
                       std::span<const double> x_draw, const Mlp& lat_post);

// Extracts per-sample means of each term node after evaluation.
TaeTerms mean_terms(const Tape& tape, const TaeGraph& g);

}  // namespace tae
