#pragma once

#include <span>
#include <vector>

#include "tae/rng.hpp"

namespace tae {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Diagonal Gaussian over a real vector, parametrized by per-coordinate mean
// and log-variance.
struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> logvar;

    std::size_t dim() const { return mean.size(); }

    static DiagGaussian standard(std::size_t d) {
        return DiagGaussian{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    }
};

// log N(x; mean, exp(logvar)), summed over coordinates.
double log_density(const DiagGaussian& g, std::span<const double> x);

// Differential entropy, 0.5 * (log(2*pi*e) + logvar) per coordinate.
double entropy(const DiagGaussian& g);

// KL(g1 || g2) in closed form; always >= 0.
double kl(const DiagGaussian& g1, const DiagGaussian& g2);

// mean + exp(logvar/2) * eps with eps ~ N(0, I).
std::vector<double> rsample(const DiagGaussian& g, Rng& rng);

}  // namespace tae
