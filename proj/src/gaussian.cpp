#include "tae/gaussian.hpp"

#include <cmath>
#include <stdexcept>

namespace tae {

namespace {
void check_dim(const DiagGaussian& g) {
    if (g.mean.size() != g.logvar.size())
        throw std::invalid_argument("DiagGaussian: mean/logvar length mismatch");
}
}  // namespace

double log_density(const DiagGaussian& g, std::span<const double> x) {
    check_dim(g);
    if (x.size() != g.dim()) throw std::invalid_argument("log_density: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double diff = x[i] - g.mean[i];
        acc += -0.5 * kLog2Pi - 0.5 * g.logvar[i] - diff * diff / (2.0 * std::exp(g.logvar[i]));
    }
    return acc;
}

double entropy(const DiagGaussian& g) {
    check_dim(g);
    double acc = 0.0;
    for (double lv : g.logvar) acc += 0.5 * (1.0 + kLog2Pi + lv);
    return acc;
}

double kl(const DiagGaussian& g1, const DiagGaussian& g2) {
    check_dim(g1);
    check_dim(g2);
    if (g1.dim() != g2.dim()) throw std::invalid_argument("kl: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < g1.dim(); ++i) {
        double dm = g1.mean[i] - g2.mean[i];
        acc += 0.5 * (g2.logvar[i] - g1.logvar[i] +
                      (std::exp(g1.logvar[i]) + dm * dm) / std::exp(g2.logvar[i]) - 1.0);
    }
    return acc;
}

std::vector<double> rsample(const DiagGaussian& g, Rng& rng) {
    check_dim(g);
    std::vector<double> x(g.dim());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = g.mean[i] + std::exp(0.5 * g.logvar[i]) * rng.normal();
    return x;
}

}  // namespace tae
