#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tae/errors.hpp"
#include "tae/model.hpp"
#include "tae/objectives.hpp"

namespace tae {

enum class ModelKind { kTae, kMvae, kMiwae };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind k);

struct TrainConfig {
    ModelKind kind = ModelKind::kTae;
    std::uint64_t seed = 0;
    std::size_t iterations = 500000;
    std::size_t batch_size = 20;
    double learning_rate = 2e-4;
    PenaltyConfig pen;           // lambda = 2, C = 10
    double gamma0 = 0.01;
    double gamma_f = 1.0;
    std::size_t warmup_start = 50000;  // N_w0
    std::size_t warmup_end = 100000;   // N_wf
    ArchConfig arch;             // z 20, z_p 5, hidden 400/50
    std::size_t miwae_k = 20;
    NoiseSpec noise;             // fixed sigma 0.1
    bool detach_lat_post = false;
    double lat_post_lr_mult = 1.0;  // optimizer detail: faster r-network tracking
    std::size_t log_every = 100;
    std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::string checkpoint_path;       // empty = no checkpoints written

    void validate(std::size_t data_count) const;
};

struct TrainRecord {
    std::size_t iter = 0;
    double gamma = 0.0;
    double objective = 0.0;  // batch sum
    TaeTerms terms;          // per-sample means; zero-filled for MVAE/MIWAE terms that do not apply
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void write_csv(const std::string& path) const;
    static constexpr const char* kCsvHeader = "iter,gamma,objective,E,P,K,Hz,Hx,R,Q,penalty";
};

// Raised when the objective stops being finite; carries the first bad term
// or op and the iteration. Any checkpoint written before the failure is kept.
struct TrainDivergence : NumericalError {
    std::size_t iteration;
    TrainDivergence(const std::string& what, std::size_t iter)
        : NumericalError(what), iteration(iter) {}
};

struct TrainResult {
    ModelKind kind = ModelKind::kTae;
    TaeModel tae;
    MvaeModel mvae;  // holds MIWAE parameters as well
    TrainLog log;
};

// gamma0 for k <= N_w0, linear up to gamma_f on (N_w0, N_wf], gamma_f after.
double warmup_gamma(std::size_t k, const TrainConfig& cfg);

// Minibatch gradient ascent per the training schedule: epochs are seeded
// shuffles without replacement, one Adam step per minibatch, deterministic
// for a given config.
TrainResult train(const TrainConfig& cfg, const std::vector<CorruptedSample>& data);

struct SweepCell {
    double C = 0.0;
    double lambda = 0.0;
    double refit_elbo = 0.0;
    bool ok = false;
    std::string error;
};

struct SweepOptions {
    std::size_t refit_iterations = 4000;
    std::size_t refit_hidden = 64;
    std::size_t eval_count = 64;   // ground-truth pairs used for the refit evaluation
    std::uint64_t eval_seed = 1;
};

// One train + refit evaluation per (C, lambda) cell; failures are recorded
// and the sweep continues. Requires samples with ground truth.
std::vector<SweepCell> sweep(const TrainConfig& base, const std::vector<double>& c_values,
                             const std::vector<double>& lambda_values,
                             const std::vector<CorruptedSample>& data, const SweepOptions& opt);

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells);

}  // namespace tae
