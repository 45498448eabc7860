#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tae/corruption.hpp"
#include "tae/rng.hpp"

namespace tae {

// Clean samples rescaled to [0,1], optional 0-based labels.
struct Dataset {
    std::string name;
    std::size_t dim = 0;
    std::vector<std::vector<double>> samples;
    std::vector<int> labels;  // empty or aligned 1:1 with samples

    std::size_t size() const { return samples.size(); }
};

// IDX containers (big-endian magic 0x803 for images, 0x801 for labels);
// pixel bytes are rescaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path = "");

// Whitespace-delimited feature matrix (X_*.txt) plus label file (y_*.txt);
// features min-max rescaled to [0,1] per feature by default, globally when
// per_feature is false. Labels 1..k map to 0..k-1.
Dataset load_har(const std::string& dir_path, bool per_feature = true);

// --- synthetic 2-D manifold ---

// Arc-parametrized sine curve in the unit square with truncated Gaussian
// thickness; the full generator is recorded here so the Bayes oracle can
// evaluate it exactly.
struct Curve2dSpec {
    double x_lo = 0.1;
    double x_span = 0.8;
    double amplitude = 0.38;
    double cycles = 1.25;      // sine cycles over the arc
    double center = 0.5;
    double thickness = 0.02;   // isotropic noise std
    double trunc_radius = 4.0; // in units of thickness

    std::array<double, 2> point(double s) const;
    // Normalized density of the truncated 2-D noise kernel at offset (dx,dy).
    double kernel(double dx, double dy) const;
    // Prior density at x: integral of kernel(x - point(s)) over s ~ U[0,1].
    double prior_density(double x0, double x1, std::size_t arc_steps = 2001) const;
};

// n points on the curve, s ~ U[0,1], plus truncated thickness noise.
Dataset synth_2d(std::size_t n, std::uint64_t seed, const Curve2dSpec& spec = {});

// --- PGM output ---

// Tiles square images row-major into a binary P5 grid, 1-px separators at
// gray 128, values clamped to [0,1] then scaled to maxval 255.
void write_pgm_grid(const std::vector<std::vector<double>>& images, std::size_t rows,
                    std::size_t cols, const std::string& path);

struct Pgm {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;
};
Pgm read_pgm(const std::string& path);

// --- corrupted dataset materialization ---

struct MissingSpec {
    // exactly one of the two modes
    std::optional<double> observed_ratio;
    std::optional<std::array<std::size_t, 4>> window;  // {height, width, win_h, win_w}
};

struct CorruptionManifest {
    std::uint64_t seed = 0;
    std::string dataset;
    std::size_t count = 0;
    double sigma = 0.1;
    MissingSpec missing;

    std::string to_json() const;
    static CorruptionManifest from_json(const std::string& text);
};

struct CorruptedDataset {
    std::vector<CorruptedSample> samples;
    std::vector<int> labels;
    CorruptionManifest manifest;

    std::size_t dim() const { return samples.empty() ? 0 : samples.front().y.size(); }
};

// Applies the corruption process per sample with a recorded seed; clean
// vectors are kept alongside for evaluation.
CorruptedDataset materialize_corruption(const Dataset& ds, const MissingSpec& missing,
                                        const NoiseSpec& noise, std::uint64_t seed);

// Binary container with JSON header; bit-exact round trip.
void save_corrupted(const std::string& path, const CorruptedDataset& ds);
CorruptedDataset load_corrupted(const std::string& path);

}  // namespace tae
