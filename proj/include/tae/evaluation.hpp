#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tae/data_io.hpp"
#include "tae/model.hpp"

namespace tae {

// -10 log10(MSE) for unit-peak data; +infinity when the vectors coincide.
double psnr(std::span<const double> x_true, std::span<const double> x_est);

// Mean pairwise Euclidean distance between posterior draws; needs n >= 2.
double diversity(const std::vector<std::vector<double>>& draws);

// --- refit ELBO (likelihood the frozen posterior assigns to ground truth) ---

struct RefitPair {
    std::vector<double> x_clean;
    std::vector<double> y;
    Mask alpha;
};

struct RefitConfig {
    std::size_t hidden = 400;       // refit encoder width (phi1 architecture by default)
    std::size_t hidden_layers = 2;
    std::size_t iterations = 50000;
    std::size_t batch = 20;
    double learning_rate = 2e-4;
    std::size_t final_draws = 64;   // z-draws per pair for the converged estimate
    std::uint64_t seed = 0;
};

// Trains a fresh inference network s(z|x,y,alpha) against the frozen
// posterior {enc, dec} maximizing
//   E_s[ log q(z|y,alpha) + log q(x_clean|z) - log s(z|x,y,alpha) ]
// and returns the converged estimate in nats per sample.
double refit_elbo(const Mlp& enc, const Mlp& dec, const std::vector<RefitPair>& pairs,
                  const RefitConfig& cfg, Rng& rng);

// --- downstream classification protocol ---

// Single affine layer with leaky-ReLU, 10-way softmax on top.
struct ClassifierHead {
    DenseLayer layer;
    double slope = 0.01;
    std::size_t classes() const { return layer.w.rows(); }
};

// Emits one posterior draw for the sample with the given index.
using PosteriorSampler = std::function<std::vector<double>(std::size_t index, Rng&)>;

struct ClassifierConfig {
    std::size_t steps = 4000;
    std::size_t batch = 100;
    double learning_rate = 1e-3;
    std::size_t classes = 10;
    std::uint64_t seed = 0;
};

// Softmax cross-entropy on posterior draws, regenerated fresh at every step.
ClassifierHead train_classifier(const PosteriorSampler& sampler, const std::vector<int>& labels,
                                const std::vector<std::size_t>& indices, std::size_t input_dim,
                                const ClassifierConfig& cfg);

std::vector<double> classifier_probs(const ClassifierHead& head, std::span<const double> x);

struct ClassifyResult {
    std::vector<int> histogram;  // counts per class, sums to n_draws
    int label = 0;               // argmax, ties broken by lowest class index
};

ClassifyResult classify_draws(const ClassifierHead& head,
                              const std::vector<std::vector<double>>& draws);
ClassifyResult classify_posterior(const ClassifierHead& head, const PosteriorSampler& sampler,
                                  std::size_t index, std::size_t n_draws, Rng& rng);
ClassifyResult classify_posterior(const ClassifierHead& head, const Mlp& enc, const Mlp& dec,
                                  std::span<const double> y, const Mask& alpha,
                                  std::size_t n_draws, Rng& rng);

// --- exact 2-D posterior oracle ---

struct OracleGridSpec {
    double lo0 = 0.0, hi0 = 1.0, lo1 = 0.0, hi1 = 1.0;
    std::size_t n0 = 200, n1 = 200;
};

struct OracleGrid {
    OracleGridSpec spec;
    std::vector<double> mass;  // n0*n1 cell masses, sum 1

    double cell_w0() const { return (spec.hi0 - spec.lo0) / static_cast<double>(spec.n0); }
    double cell_w1() const { return (spec.hi1 - spec.lo1) / static_cast<double>(spec.n1); }
    double at(std::size_t i0, std::size_t i1) const { return mass[i0 * spec.n1 + i1]; }
    // Cell index of a point, or -1 outside the box.
    std::ptrdiff_t cell_of(double x0, double x1) const;
};

// Exact Bayes posterior p(x|y) ~ prior(x) * prod_observed N(y_j; x_j, sigma^2)
// evaluated at cell centers and normalized.
OracleGrid oracle_posterior_2d(const Curve2dSpec& manifold, std::span<const double> y,
                               const Mask& alpha, double sigma, const OracleGridSpec& grid);

// Connected components (4-neighborhood) of cells with mass above
// rel_threshold * max cell mass.
std::size_t count_modes(const OracleGrid& grid, double rel_threshold = 0.2);

// -mean log cell-mass of the draws; masses floored to keep the summary
// finite when a draw lands in an empty cell.
double cross_entropy_vs_grid(const OracleGrid& grid, const std::vector<std::vector<double>>& draws,
                             double mass_floor = 1e-12);

}  // namespace tae
