#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tae/corruption.hpp"
#include "tae/mlp.hpp"

namespace tae {

// Layer sizes and head options shared by every network in a model bundle.
struct ArchConfig {
    std::size_t data_dim = 784;
    std::size_t z_dim = 20;
    std::size_t zp_dim = 5;
    std::size_t hidden = 400;        // encoder/decoder/latent-posterior width
    std::size_t prior_hidden = 50;   // prior LVM width
    std::size_t hidden_layers = 2;
    double leaky_slope = 0.01;
    double logvar_clamp = 10.0;      // encoder-side networks
    double dec_logvar_clamp = 0.0;   // decoder-side; 0 means same as logvar_clamp
    bool conditional_decoder = false;  // q(x|z,y,alpha) instead of q(x|z)
    bool noise_head = false;           // per-sample log-sigma head on the decoder trunk

    std::size_t enc_in() const { return 2 * data_dim; }  // y concatenated with the mask
    std::size_t dec_in() const { return conditional_decoder ? z_dim + 2 * data_dim : z_dim; }
    std::size_t lat_post_in() const {
        return conditional_decoder ? data_dim + 2 * data_dim : data_dim;
    }
    double dec_clamp() const { return dec_logvar_clamp > 0.0 ? dec_logvar_clamp : logvar_clamp; }

    void validate() const;
};

// Posterior LVM {phi1, phi2}, prior LVM {phi3, theta}, approximate latent
// posterior phi4, optional noise head phi5 on the decoder trunk.
struct TaeModel {
    ArchConfig arch;
    Mlp enc;         // q(z | y, alpha)
    Mlp dec;         // q(x | z)
    Mlp prior_enc;   // q(z_p | x)
    Mlp prior_dec;   // p(x | z_p)
    Mlp lat_post;    // r(z | x)
    DenseLayer noise_mean_head;    // scalar heads, used when arch.noise_head
    DenseLayer noise_logvar_head;

    std::vector<std::pair<std::string, Tensor*>> params();
    std::size_t param_count();
};

// Encoder/decoder pair with the same posterior structure as the TAE.
struct MvaeModel {
    ArchConfig arch;
    Mlp enc;  // q(z | y, alpha)
    Mlp dec;  // p(x | z)

    std::vector<std::pair<std::string, Tensor*>> params();
    std::size_t param_count();
};

TaeModel init_tae(const ArchConfig& arch, std::uint64_t seed);
MvaeModel init_mvae(const ArchConfig& arch, std::uint64_t seed);

// --- posterior sampling (shared by TAE and MVAE posteriors) ---

struct PosteriorDraws {
    std::vector<std::vector<double>> draws;       // x ~ q(x|z)
    std::vector<std::vector<double>> cond_means;  // E[x|z] per draw
};

// n passes of z ~ q(z|y,alpha), x ~ q(x|z).
PosteriorDraws posterior_sample(const Mlp& enc, const Mlp& dec, std::span<const double> y,
                                const Mask& alpha, std::size_t n, Rng& rng);
PosteriorDraws posterior_sample(const TaeModel& m, std::span<const double> y, const Mask& alpha,
                                std::size_t n, Rng& rng);
PosteriorDraws posterior_sample(const MvaeModel& m, std::span<const double> y, const Mask& alpha,
                                std::size_t n, Rng& rng);

// Monte Carlo average of the conditional means over n z-draws.
std::vector<double> posterior_mean(const Mlp& enc, const Mlp& dec, std::span<const double> y,
                                   const Mask& alpha, std::size_t n, Rng& rng);
std::vector<double> posterior_mean(const TaeModel& m, std::span<const double> y, const Mask& alpha,
                                   std::size_t n, Rng& rng);
std::vector<double> posterior_mean(const MvaeModel& m, std::span<const double> y,
                                   const Mask& alpha, std::size_t n, Rng& rng);

// Builds the (1, 2d) encoder input y || alpha.
Tensor encoder_input(std::span<const double> y, const Mask& alpha);

// --- checkpoints ---
// Binary container: magic, version, JSON header (kind + arch), then each
// parameter tensor as raw little-endian doubles. Round-trips bit-exactly.

void save_checkpoint(const std::string& path, const std::string& kind, const ArchConfig& arch,
                     std::vector<std::pair<std::string, Tensor*>> params);
void save_checkpoint(const std::string& path, TaeModel& m);
void save_checkpoint(const std::string& path, MvaeModel& m);

struct Checkpoint {
    std::string kind;  // "tae" | "mvae"
    ArchConfig arch;
    TaeModel tae;
    MvaeModel mvae;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tae
