#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tae/gaussian.hpp"
#include "tae/rng.hpp"

namespace tae {

// Binary observation mask; 1 = observed, 0 = missing.
struct Mask {
    std::vector<std::uint8_t> on;

    std::size_t dim() const { return on.size(); }
    std::size_t observed_count() const {
        std::size_t k = 0;
        for (auto v : on) k += v;
        return k;
    }
};

struct NoiseSpec {
    enum class Mode { kFixed, kInferred };
    Mode mode = Mode::kFixed;
    double sigma = 0.1;  // data units, fixed mode only
};

// One training observation: y has missing entries zeroed; the mask, not the
// zero value, is authoritative. `clean` is kept for evaluation only.
struct CorruptedSample {
    std::vector<double> y;
    Mask alpha;
    std::vector<double> clean;  // empty when ground truth is unavailable
    bool has_clean() const { return !clean.empty(); }
};

// Independent Bernoulli mask; each entry observed with probability
// observed_ratio.
Mask generate_mask_mar(std::size_t d, double observed_ratio, Rng& rng);

// Axis-aligned win_h x win_w observed window at a uniformly random valid
// position of a height x width image; everything else missing.
Mask generate_mask_window(std::size_t height, std::size_t width, std::size_t win_h,
                          std::size_t win_w, Rng& rng);

// y = alpha .* (x + sigma * eps). Noise is drawn for every entry before
// masking so the draw stream does not depend on the mask.
CorruptedSample corrupt(std::span<const double> x, const Mask& mask, const NoiseSpec& noise,
                        Rng& rng);

// Sum over observed entries of log N(y; x, sigma^2); empty sum is 0.
double obs_log_lik(std::span<const double> y, std::span<const double> x, const Mask& mask,
                   double sigma);

// Decoder-marginalized likelihood: sum over observed entries of
// log N(y; mean, exp(logvar) + sigma^2).
double marginal_obs_log_lik(std::span<const double> y, const DiagGaussian& decoder,
                            const Mask& mask, double sigma);

}  // namespace tae
