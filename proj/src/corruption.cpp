#include "tae/corruption.hpp"

#include <cmath>
#include <stdexcept>

namespace tae {

Mask generate_mask_mar(std::size_t d, double observed_ratio, Rng& rng) {
    if (observed_ratio < 0.0 || observed_ratio > 1.0)
        throw std::invalid_argument("generate_mask_mar: ratio must be in [0,1]");
    Mask m;
    m.on.resize(d);
    for (std::size_t i = 0; i < d; ++i)
        m.on[i] = rng.uniform() < observed_ratio ? 1 : 0;
    return m;
}

Mask generate_mask_window(std::size_t height, std::size_t width, std::size_t win_h,
                          std::size_t win_w, Rng& rng) {
    if (win_h > height || win_w > width)
        throw std::invalid_argument("generate_mask_window: window larger than image");
    std::size_t top = rng.below(height - win_h + 1);
    std::size_t left = rng.below(width - win_w + 1);
    Mask m;
    m.on.assign(height * width, 0);
    for (std::size_t r = 0; r < win_h; ++r)
        for (std::size_t c = 0; c < win_w; ++c) m.on[(top + r) * width + left + c] = 1;
    return m;
}

CorruptedSample corrupt(std::span<const double> x, const Mask& mask, const NoiseSpec& noise,
                        Rng& rng) {
    if (x.size() != mask.dim()) throw std::invalid_argument("corrupt: dimension mismatch");
    if (noise.mode != NoiseSpec::Mode::kFixed || !(noise.sigma > 0.0))
        throw std::invalid_argument("corrupt: fixed positive sigma required");
    CorruptedSample s;
    s.y.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double noisy = x[i] + noise.sigma * rng.normal();
        s.y[i] = mask.on[i] ? noisy : 0.0;
    }
    s.alpha = mask;
    return s;
}

double obs_log_lik(std::span<const double> y, std::span<const double> x, const Mask& mask,
                   double sigma) {
    if (y.size() != x.size() || y.size() != mask.dim())
        throw std::invalid_argument("obs_log_lik: dimension mismatch");
    if (!(sigma > 0.0)) throw std::invalid_argument("obs_log_lik: sigma must be positive");
    double acc = 0.0;
    double base = -0.5 * kLog2Pi - std::log(sigma);
    double inv2v = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!mask.on[i]) continue;
        double diff = y[i] - x[i];
        acc += base - diff * diff * inv2v;
    }
    return acc;
}

double marginal_obs_log_lik(std::span<const double> y, const DiagGaussian& decoder,
                            const Mask& mask, double sigma) {
    if (y.size() != decoder.dim() || y.size() != mask.dim())
        throw std::invalid_argument("marginal_obs_log_lik: dimension mismatch");
    if (!(sigma > 0.0))
        throw std::invalid_argument("marginal_obs_log_lik: sigma must be positive");
    double acc = 0.0;
    double s2 = sigma * sigma;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!mask.on[i]) continue;
        double v = std::exp(decoder.logvar[i]) + s2;
        double diff = y[i] - decoder.mean[i];
        acc += -0.5 * kLog2Pi - 0.5 * std::log(v) - diff * diff / (2.0 * v);
    }
    return acc;
}

}  // namespace tae
