// Command-line front end: corruption, training, recovery, evaluation,
// hyper-parameter sweeps and the 2-D oracle comparison, all driven by one
// flat JSON config plus flag overrides. Exit codes: 0 success, 2 config
// error, 3 numerical divergence, 4 I/O.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "tae/data_io.hpp"
#include "tae/errors.hpp"
#include "tae/evaluation.hpp"
#include "tae/model.hpp"
#include "tae/objectives.hpp"
#include "tae/training.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunConfig {
    // dataset
    std::string dataset = "synth2d";  // synth2d | idx | har
    std::string images, labels, har_dir;
    std::size_t n = 10000;
    // corruption
    double observed_ratio = 0.5;
    std::size_t window_h = 0, window_w = 0;  // both > 0 selects window masks
    double sigma = 0.1;
    std::string noise_mode = "fixed";
    // model + training (defaults follow the reference training conditions)
    std::string model = "tae";
    std::size_t iterations = 500000;
    std::size_t batch_size = 20;
    double learning_rate = 2e-4;
    double lambda = 2.0;
    double C = 10.0;
    double gamma0 = 0.01, gammaF = 1.0;
    std::size_t warmup_start = 50000, warmup_end = 100000;
    std::size_t z_dim = 20, zp_dim = 5;
    std::size_t hidden = 400, prior_hidden = 50;
    double leaky_slope = 0.01, logvar_clamp = 10.0, dec_logvar_clamp = 0.0;
    std::size_t miwae_k = 20;
    bool detach_lat_post = false;
    double lat_post_lr_mult = 1.0;
    std::uint64_t seed = 0;
    std::size_t log_every = 100;
    std::size_t checkpoint_every = 0;
    // paths
    std::string out_dir = "run";
    std::string data_path;    // corrupted container
    std::string checkpoint;   // model checkpoint
    // evaluation
    std::string metric = "all";  // all | refit_elbo | psnr | diversity
    std::size_t eval_count = 100;
    std::size_t n_draws = 16;
    std::size_t mean_draws = 64;
    std::size_t refit_iterations = 50000;
    std::size_t refit_hidden = 400;
    std::size_t refit_draws = 64;
    bool classify = false;
    std::size_t labelled = 1000, unlabelled = 9000;
    std::size_t classifier_steps = 3000;
    std::size_t classifier_batch = 100;
    std::size_t classifier_draws = 400;
    double classifier_lr = 1e-3;
    // sweep
    std::vector<double> sweep_C{10.0};
    std::vector<double> sweep_lambda{2.0};
    std::size_t sweep_iterations = 0;  // 0 = use `iterations`
    // oracle
    std::size_t oracle_resolution = 200;
    std::size_t oracle_index = 0;
};

const std::set<std::string> kKnownKeys = {
    "dataset", "images", "labels", "har_dir", "n",
    "observed_ratio", "window_h", "window_w", "sigma", "noise_mode",
    "model", "iterations", "batch_size", "learning_rate", "lambda", "C",
    "gamma0", "gammaF", "warmup_start", "warmup_end", "z_dim", "zp_dim",
    "hidden", "prior_hidden", "leaky_slope", "logvar_clamp", "dec_logvar_clamp", "miwae_k",
    "detach_lat_post", "lat_post_lr_mult", "seed", "log_every", "checkpoint_every",
    "out_dir", "data_path", "checkpoint",
    "metric", "eval_count", "n_draws", "mean_draws",
    "refit_iterations", "refit_hidden", "refit_draws",
    "classify", "labelled", "unlabelled",
    "classifier_steps", "classifier_batch", "classifier_draws", "classifier_lr",
    "sweep_C", "sweep_lambda", "sweep_iterations",
    "oracle_resolution", "oracle_index",
};

json config_to_json(const RunConfig& c) {
    return json{
        {"dataset", c.dataset}, {"images", c.images}, {"labels", c.labels},
        {"har_dir", c.har_dir}, {"n", c.n},
        {"observed_ratio", c.observed_ratio}, {"window_h", c.window_h},
        {"window_w", c.window_w}, {"sigma", c.sigma}, {"noise_mode", c.noise_mode},
        {"model", c.model}, {"iterations", c.iterations}, {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate}, {"lambda", c.lambda}, {"C", c.C},
        {"gamma0", c.gamma0}, {"gammaF", c.gammaF},
        {"warmup_start", c.warmup_start}, {"warmup_end", c.warmup_end},
        {"z_dim", c.z_dim}, {"zp_dim", c.zp_dim},
        {"hidden", c.hidden}, {"prior_hidden", c.prior_hidden},
        {"leaky_slope", c.leaky_slope}, {"logvar_clamp", c.logvar_clamp},
        {"dec_logvar_clamp", c.dec_logvar_clamp},
        {"miwae_k", c.miwae_k}, {"detach_lat_post", c.detach_lat_post},
        {"lat_post_lr_mult", c.lat_post_lr_mult},
        {"seed", c.seed}, {"log_every", c.log_every},
        {"checkpoint_every", c.checkpoint_every},
        {"out_dir", c.out_dir}, {"data_path", c.data_path}, {"checkpoint", c.checkpoint},
        {"metric", c.metric}, {"eval_count", c.eval_count}, {"n_draws", c.n_draws},
        {"mean_draws", c.mean_draws},
        {"refit_iterations", c.refit_iterations}, {"refit_hidden", c.refit_hidden},
        {"refit_draws", c.refit_draws},
        {"classify", c.classify}, {"labelled", c.labelled}, {"unlabelled", c.unlabelled},
        {"classifier_steps", c.classifier_steps}, {"classifier_batch", c.classifier_batch},
        {"classifier_draws", c.classifier_draws}, {"classifier_lr", c.classifier_lr},
        {"sweep_C", c.sweep_C}, {"sweep_lambda", c.sweep_lambda},
        {"sweep_iterations", c.sweep_iterations},
        {"oracle_resolution", c.oracle_resolution}, {"oracle_index", c.oracle_index},
    };
}

void apply_json(RunConfig& c, const json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!kKnownKeys.count(it.key()))
            throw std::invalid_argument("unknown config key '" + it.key() + "'");
    }
    auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("dataset", c.dataset);
    get("images", c.images);
    get("labels", c.labels);
    get("har_dir", c.har_dir);
    get("n", c.n);
    get("observed_ratio", c.observed_ratio);
    get("window_h", c.window_h);
    get("window_w", c.window_w);
    get("sigma", c.sigma);
    get("noise_mode", c.noise_mode);
    get("model", c.model);
    get("iterations", c.iterations);
    get("batch_size", c.batch_size);
    get("learning_rate", c.learning_rate);
    get("lambda", c.lambda);
    get("C", c.C);
    get("gamma0", c.gamma0);
    get("gammaF", c.gammaF);
    get("warmup_start", c.warmup_start);
    get("warmup_end", c.warmup_end);
    get("z_dim", c.z_dim);
    get("zp_dim", c.zp_dim);
    get("hidden", c.hidden);
    get("prior_hidden", c.prior_hidden);
    get("leaky_slope", c.leaky_slope);
    get("logvar_clamp", c.logvar_clamp);
    get("dec_logvar_clamp", c.dec_logvar_clamp);
    get("miwae_k", c.miwae_k);
    get("detach_lat_post", c.detach_lat_post);
    get("lat_post_lr_mult", c.lat_post_lr_mult);
    get("seed", c.seed);
    get("log_every", c.log_every);
    get("checkpoint_every", c.checkpoint_every);
    get("out_dir", c.out_dir);
    get("data_path", c.data_path);
    get("checkpoint", c.checkpoint);
    get("metric", c.metric);
    get("eval_count", c.eval_count);
    get("n_draws", c.n_draws);
    get("mean_draws", c.mean_draws);
    get("refit_iterations", c.refit_iterations);
    get("refit_hidden", c.refit_hidden);
    get("refit_draws", c.refit_draws);
    get("classify", c.classify);
    get("labelled", c.labelled);
    get("unlabelled", c.unlabelled);
    get("classifier_steps", c.classifier_steps);
    get("classifier_batch", c.classifier_batch);
    get("classifier_draws", c.classifier_draws);
    get("classifier_lr", c.classifier_lr);
    get("sweep_C", c.sweep_C);
    get("sweep_lambda", c.sweep_lambda);
    get("sweep_iterations", c.sweep_iterations);
    get("oracle_resolution", c.oracle_resolution);
    get("oracle_index", c.oracle_index);
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

fs::path resolve_out_dir(const RunConfig& c) {
    fs::path p(c.out_dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("TAE_OUTPUT_ROOT")) p = fs::path(root) / p;
    }
    return p;
}

fs::path prepare_out_dir(const RunConfig& c) {
    fs::path dir = resolve_out_dir(c);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string());
    std::ofstream f(dir / "config.json");
    if (!f) throw std::runtime_error("cannot write config snapshot in " + dir.string());
    f << config_to_json(c).dump(2) << "\n";
    return dir;
}

tae::Dataset load_dataset(const RunConfig& c) {
    if (c.dataset == "synth2d") return tae::synth_2d(c.n, c.seed ^ 0x5eed);
    if (c.dataset == "idx") {
        if (c.images.empty()) throw std::invalid_argument("idx dataset requires 'images'");
        return tae::load_idx(c.images, c.labels);
    }
    if (c.dataset == "har") {
        if (c.har_dir.empty()) throw std::invalid_argument("har dataset requires 'har_dir'");
        return tae::load_har(c.har_dir);
    }
    throw std::invalid_argument("unknown dataset '" + c.dataset + "' (synth2d|idx|har)");
}

tae::TrainConfig to_train_config(const RunConfig& c, std::size_t data_dim) {
    tae::TrainConfig t;
    t.kind = tae::model_kind_from_string(c.model);
    t.seed = c.seed;
    t.iterations = c.iterations;
    t.batch_size = c.batch_size;
    t.learning_rate = c.learning_rate;
    t.pen.lambda = c.lambda;
    t.pen.C = c.C;
    t.gamma0 = c.gamma0;
    t.gamma_f = c.gammaF;
    t.warmup_start = c.warmup_start;
    t.warmup_end = c.warmup_end;
    t.arch.data_dim = data_dim;
    t.arch.z_dim = c.z_dim;
    t.arch.zp_dim = c.zp_dim;
    t.arch.hidden = c.hidden;
    t.arch.prior_hidden = c.prior_hidden;
    t.arch.leaky_slope = c.leaky_slope;
    t.arch.logvar_clamp = c.logvar_clamp;
    t.arch.dec_logvar_clamp = c.dec_logvar_clamp;
    t.miwae_k = c.miwae_k;
    t.detach_lat_post = c.detach_lat_post;
    t.lat_post_lr_mult = c.lat_post_lr_mult;
    if (c.noise_mode == "fixed") {
        t.noise = tae::NoiseSpec{tae::NoiseSpec::Mode::kFixed, c.sigma};
    } else if (c.noise_mode == "inferred") {
        t.noise = tae::NoiseSpec{tae::NoiseSpec::Mode::kInferred, c.sigma};
        t.arch.noise_head = true;
    } else {
        throw std::invalid_argument("unknown noise_mode '" + c.noise_mode + "'");
    }
    t.log_every = c.log_every;
    t.checkpoint_every = c.checkpoint_every;
    return t;
}

double missing_ratio_of(const tae::CorruptionManifest& m, std::size_t dim) {
    if (m.missing.observed_ratio) return 1.0 - *m.missing.observed_ratio;
    if (m.missing.window) {
        const auto& w = *m.missing.window;
        return 1.0 - static_cast<double>(w[2] * w[3]) / static_cast<double>(dim);
    }
    return 0.0;
}

struct LoadedModel {
    tae::Checkpoint ck;
    const tae::Mlp& enc() const { return ck.kind == "tae" ? ck.tae.enc : ck.mvae.enc; }
    const tae::Mlp& dec() const { return ck.kind == "tae" ? ck.tae.dec : ck.mvae.dec; }
};

LoadedModel load_model(const RunConfig& c) {
    if (c.checkpoint.empty()) throw std::invalid_argument("missing 'checkpoint' path");
    return LoadedModel{tae::load_checkpoint(c.checkpoint)};
}

// --- subcommands ---

int cmd_corrupt(const RunConfig& c) {
    fs::path dir = prepare_out_dir(c);
    tae::Dataset ds = load_dataset(c);
    tae::MissingSpec missing;
    if (c.window_h > 0 && c.window_w > 0) {
        auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(ds.dim))));
        missing.window = {{side, side, c.window_h, c.window_w}};
    } else {
        missing.observed_ratio = c.observed_ratio;
    }
    tae::NoiseSpec noise{tae::NoiseSpec::Mode::kFixed, c.sigma};
    tae::CorruptedDataset cd = tae::materialize_corruption(ds, missing, noise, c.seed);
    cd.manifest.dataset = c.dataset;
    tae::save_corrupted((dir / "corrupted.bin").string(), cd);
    std::ofstream mf(dir / "manifest.json");
    mf << cd.manifest.to_json();

    double frac = 0.0;
    for (const auto& s : cd.samples)
        frac += static_cast<double>(s.alpha.observed_count()) / static_cast<double>(ds.dim);
    frac /= static_cast<double>(cd.samples.size());
    std::printf("corrupted %zu samples of dim %zu (observed fraction %.4f, sigma %g) -> %s\n",
                cd.samples.size(), ds.dim, frac, c.sigma,
                (dir / "corrupted.bin").string().c_str());
    return 0;
}

int cmd_train(const RunConfig& c) {
    fs::path dir = prepare_out_dir(c);
    if (c.data_path.empty()) throw std::invalid_argument("missing 'data_path' (corrupted dataset)");
    tae::CorruptedDataset cd = tae::load_corrupted(c.data_path);
    tae::TrainConfig tc = to_train_config(c, cd.dim());
    tc.checkpoint_path = (dir / "checkpoint.bin").string();
    tae::TrainResult res = tae::train(tc, cd.samples);
    res.log.write_csv((dir / "train_log.csv").string());
    std::printf("trained %s for %zu iterations -> %s\n", c.model.c_str(), c.iterations,
                tc.checkpoint_path.c_str());
    if (!res.log.records.empty())
        std::printf("final objective (batch sum): %s\n",
                    format_number(res.log.records.back().objective).c_str());
    return 0;
}

int cmd_recover(const RunConfig& c) {
    fs::path dir = prepare_out_dir(c);
    if (c.data_path.empty()) throw std::invalid_argument("missing 'data_path' (corrupted dataset)");
    tae::CorruptedDataset cd = tae::load_corrupted(c.data_path);
    LoadedModel model = load_model(c);
    if (model.enc().in_dim() != 2 * cd.dim())
        throw std::invalid_argument("checkpoint dimensions do not match the dataset");

    std::size_t count = std::min<std::size_t>(c.eval_count, cd.samples.size());
    std::size_t d = cd.dim();
    auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(d))));
    bool image_mode = side * side == d && d > 4;

    std::ofstream metrics(dir / "recover_metrics.csv");
    metrics << "index,psnr,diversity\n";
    std::ofstream draws_csv;
    if (!image_mode) {
        draws_csv.open(dir / "recover_draws.csv");
        draws_csv << "index,draw,";
        for (std::size_t j = 0; j < d; ++j) draws_csv << "x" << j << (j + 1 < d ? "," : "\n");
    }

    tae::Rng rng(c.seed ^ 0x4ec0);
    for (std::size_t i = 0; i < count; ++i) {
        const tae::CorruptedSample& s = cd.samples[i];
        std::vector<double> mean =
            tae::posterior_mean(model.enc(), model.dec(), s.y, s.alpha, c.mean_draws, rng);
        tae::PosteriorDraws pd =
            tae::posterior_sample(model.enc(), model.dec(), s.y, s.alpha, c.n_draws, rng);

        double ps = s.has_clean() ? tae::psnr(s.clean, mean)
                                  : std::numeric_limits<double>::quiet_NaN();
        double div = pd.draws.size() >= 2 ? tae::diversity(pd.draws)
                                          : std::numeric_limits<double>::quiet_NaN();
        metrics << i << ',' << format_number(ps) << ',' << format_number(div) << "\n";

        if (image_mode) {
            std::vector<std::vector<double>> tiles;
            tiles.push_back(s.y);
            tiles.push_back(mean);
            for (auto& dvec : pd.draws) tiles.push_back(dvec);
            char name[64];
            std::snprintf(name, sizeof(name), "recover_%04zu.pgm", i);
            tae::write_pgm_grid(tiles, 1, tiles.size(), (dir / name).string());
        } else {
            for (std::size_t k = 0; k < pd.draws.size(); ++k) {
                draws_csv << i << ',' << k;
                for (std::size_t j = 0; j < d; ++j)
                    draws_csv << ',' << format_number(pd.draws[k][j]);
                draws_csv << "\n";
            }
        }
    }
    std::printf("recovered %zu observations -> %s\n", count, dir.string().c_str());
    return 0;
}

int cmd_evaluate(const RunConfig& c) {
    fs::path dir = prepare_out_dir(c);
    if (c.data_path.empty()) throw std::invalid_argument("missing 'data_path' (corrupted dataset)");
    tae::CorruptedDataset cd = tae::load_corrupted(c.data_path);
    if (cd.samples.empty() || !cd.samples.front().has_clean())
        throw std::invalid_argument("evaluate requires ground truth in the corrupted dataset");
    LoadedModel model = load_model(c);
    double missing_ratio = missing_ratio_of(cd.manifest, cd.dim());

    std::ofstream out(dir / "metrics.csv");
    out << "metric,dataset,missing_ratio,model,seed,value\n";
    auto emit = [&](const std::string& metric, double value) {
        out << metric << ',' << cd.manifest.dataset << ',' << format_number(missing_ratio) << ','
            << model.ck.kind << ',' << c.seed << ',' << format_number(value) << "\n";
        std::printf("%s = %s\n", metric.c_str(), format_number(value).c_str());
    };

    std::size_t count = std::min<std::size_t>(c.eval_count, cd.samples.size());
    tae::Rng rng(c.seed ^ 0xe7a1);

    bool want_all = c.metric == "all";
    if (want_all || c.metric == "psnr") {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const auto& s = cd.samples[i];
            std::vector<double> mean =
                tae::posterior_mean(model.enc(), model.dec(), s.y, s.alpha, c.mean_draws, rng);
            acc += tae::psnr(s.clean, mean);
        }
        emit("psnr", acc / static_cast<double>(count));
    }
    if (want_all || c.metric == "diversity") {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const auto& s = cd.samples[i];
            tae::PosteriorDraws pd =
                tae::posterior_sample(model.enc(), model.dec(), s.y, s.alpha, c.n_draws, rng);
            acc += tae::diversity(pd.draws);
        }
        emit("diversity", acc / static_cast<double>(count));
    }
    if (want_all || c.metric == "refit_elbo") {
        std::vector<tae::RefitPair> pairs;
        for (std::size_t i = 0; i < count; ++i)
            pairs.push_back(
                tae::RefitPair{cd.samples[i].clean, cd.samples[i].y, cd.samples[i].alpha});
        tae::RefitConfig rc;
        rc.hidden = c.refit_hidden;
        rc.iterations = c.refit_iterations;
        rc.final_draws = c.refit_draws;
        rc.seed = c.seed;
        tae::Rng refit_rng(c.seed ^ 0x2ef1);
        emit("refit_elbo", tae::refit_elbo(model.enc(), model.dec(), pairs, rc, refit_rng));
    }
    if (c.classify) {
        if (cd.labels.empty())
            throw std::invalid_argument("classification requires labels in the dataset");
        std::size_t need = c.labelled + c.unlabelled;
        if (cd.samples.size() < need)
            throw std::invalid_argument("dataset smaller than labelled+unlabelled split");
        std::vector<std::size_t> order(cd.samples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        tae::Rng split_rng(c.seed ^ 0x5071);
        split_rng.shuffle(std::span<std::size_t>(order));
        std::vector<std::size_t> train_idx(order.begin(),
                                           order.begin() + static_cast<std::ptrdiff_t>(c.labelled));
        std::vector<std::size_t> eval_idx(
            order.begin() + static_cast<std::ptrdiff_t>(c.labelled),
            order.begin() + static_cast<std::ptrdiff_t>(need));

        tae::PosteriorSampler sampler = [&](std::size_t idx, tae::Rng& r) {
            tae::PosteriorDraws pd = tae::posterior_sample(model.enc(), model.dec(),
                                                           cd.samples[idx].y,
                                                           cd.samples[idx].alpha, 1, r);
            return pd.draws.front();
        };
        tae::ClassifierConfig cc;
        cc.steps = c.classifier_steps;
        cc.batch = c.classifier_batch;
        cc.learning_rate = c.classifier_lr;
        cc.seed = c.seed ^ 0xc1a5;
        tae::ClassifierHead head =
            tae::train_classifier(sampler, cd.labels, train_idx, cd.dim(), cc);

        tae::Rng class_rng(c.seed ^ 0xc1a6);
        std::size_t correct = 0;
        for (std::size_t idx : eval_idx) {
            tae::ClassifyResult r =
                tae::classify_posterior(head, sampler, idx, c.classifier_draws, class_rng);
            if (r.label == cd.labels[idx]) ++correct;
        }
        emit("classification_accuracy",
             static_cast<double>(correct) / static_cast<double>(eval_idx.size()));
    }
    return 0;
}

int cmd_sweep(const RunConfig& c) {
    fs::path dir = prepare_out_dir(c);
    if (c.data_path.empty()) throw std::invalid_argument("missing 'data_path' (corrupted dataset)");
    tae::CorruptedDataset cd = tae::load_corrupted(c.data_path);
    tae::TrainConfig base = to_train_config(c, cd.dim());
    if (c.sweep_iterations > 0) base.iterations = c.sweep_iterations;
    tae::SweepOptions opt;
    opt.refit_iterations = c.refit_iterations;
    opt.refit_hidden = c.refit_hidden;
    opt.eval_count = c.eval_count;
    opt.eval_seed = c.seed ^ 0x5eeb;
    auto cells = tae::sweep(base, c.sweep_C, c.sweep_lambda, cd.samples, opt);
    tae::write_sweep_csv((dir / "sweep.csv").string(), cells);
    for (const auto& cell : cells)
        std::printf("C=%g lambda=%g -> %s\n", cell.C, cell.lambda,
                    cell.ok ? format_number(cell.refit_elbo).c_str() : cell.error.c_str());
    return 0;
}

int cmd_oracle2d(const RunConfig& c) {
    fs::path dir = prepare_out_dir(c);
    if (c.data_path.empty()) throw std::invalid_argument("missing 'data_path' (corrupted dataset)");
    tae::CorruptedDataset cd = tae::load_corrupted(c.data_path);
    if (cd.dim() != 2) throw std::invalid_argument("oracle2d requires a 2-D dataset");
    if (c.oracle_index >= cd.samples.size())
        throw std::invalid_argument("oracle_index out of range");
    LoadedModel model = load_model(c);
    const tae::CorruptedSample& s = cd.samples[c.oracle_index];

    tae::Curve2dSpec curve;
    tae::OracleGridSpec gs;
    gs.n0 = c.oracle_resolution;
    gs.n1 = c.oracle_resolution;
    tae::OracleGrid grid = tae::oracle_posterior_2d(curve, s.y, s.alpha, cd.manifest.sigma, gs);

    std::ofstream gf(dir / "oracle_grid.csv");
    gf << "i0,i1,x0,x1,mass\n";
    for (std::size_t i0 = 0; i0 < gs.n0; ++i0)
        for (std::size_t i1 = 0; i1 < gs.n1; ++i1)
            gf << i0 << ',' << i1 << ',' << format_number(gs.lo0 + (i0 + 0.5) * grid.cell_w0())
               << ',' << format_number(gs.lo1 + (i1 + 0.5) * grid.cell_w1()) << ','
               << format_number(grid.at(i0, i1)) << "\n";

    tae::Rng rng(c.seed ^ 0x02ac1e);
    tae::PosteriorDraws pd =
        tae::posterior_sample(model.enc(), model.dec(), s.y, s.alpha, c.n_draws, rng);
    std::ofstream df(dir / "posterior_draws.csv");
    df << "draw,x0,x1\n";
    for (std::size_t k = 0; k < pd.draws.size(); ++k)
        df << k << ',' << format_number(pd.draws[k][0]) << ',' << format_number(pd.draws[k][1])
           << "\n";

    double ce = tae::cross_entropy_vs_grid(grid, pd.draws);
    double div = pd.draws.size() >= 2 ? tae::diversity(pd.draws) : 0.0;
    std::size_t modes = tae::count_modes(grid);
    std::ofstream sf(dir / "oracle_summary.csv");
    sf << "metric,value\n";
    sf << "cross_entropy," << format_number(ce) << "\n";
    sf << "diversity," << format_number(div) << "\n";
    sf << "oracle_modes," << modes << "\n";
    std::printf("oracle modes: %zu, draw cross-entropy: %s, diversity: %s\n", modes,
                format_number(ce).c_str(), format_number(div).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tomographic auto-encoder: unsupervised Bayesian recovery of corrupted data"};
    app.require_subcommand(1);

    std::string config_path;
    RunConfig cfg;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--dataset", cfg.dataset, "synth2d|idx|har");
        sub->add_option("--images", cfg.images);
        sub->add_option("--labels", cfg.labels);
        sub->add_option("--har-dir", cfg.har_dir);
        sub->add_option("--n", cfg.n);
        sub->add_option("--observed-ratio", cfg.observed_ratio);
        sub->add_option("--window-h", cfg.window_h);
        sub->add_option("--window-w", cfg.window_w);
        sub->add_option("--sigma", cfg.sigma);
        sub->add_option("--noise-mode", cfg.noise_mode);
        sub->add_option("--model", cfg.model, "tae|mvae|miwae");
        sub->add_option("--iterations", cfg.iterations);
        sub->add_option("--batch-size", cfg.batch_size);
        sub->add_option("--learning-rate", cfg.learning_rate);
        sub->add_option("--lambda", cfg.lambda);
        sub->add_option("--C", cfg.C);
        sub->add_option("--gamma0", cfg.gamma0);
        sub->add_option("--gammaF", cfg.gammaF);
        sub->add_option("--warmup-start", cfg.warmup_start);
        sub->add_option("--warmup-end", cfg.warmup_end);
        sub->add_option("--z-dim", cfg.z_dim);
        sub->add_option("--zp-dim", cfg.zp_dim);
        sub->add_option("--hidden", cfg.hidden);
        sub->add_option("--prior-hidden", cfg.prior_hidden);
        sub->add_option("--leaky-slope", cfg.leaky_slope);
        sub->add_option("--logvar-clamp", cfg.logvar_clamp);
        sub->add_option("--dec-logvar-clamp", cfg.dec_logvar_clamp);
        sub->add_option("--miwae-k,--k", cfg.miwae_k);
        sub->add_flag("--detach-lat-post", cfg.detach_lat_post);
        sub->add_option("--lat-post-lr-mult", cfg.lat_post_lr_mult);
        sub->add_option("--seed", cfg.seed);
        sub->add_option("--log-every", cfg.log_every);
        sub->add_option("--checkpoint-every", cfg.checkpoint_every);
        sub->add_option("--out-dir", cfg.out_dir);
        sub->add_option("--data", cfg.data_path, "corrupted dataset container");
        sub->add_option("--checkpoint", cfg.checkpoint);
        sub->add_option("--metric", cfg.metric, "all|psnr|diversity|refit_elbo");
        sub->add_option("--eval-count", cfg.eval_count);
        sub->add_option("--n-draws", cfg.n_draws);
        sub->add_option("--mean-draws", cfg.mean_draws);
        sub->add_option("--refit-iterations", cfg.refit_iterations);
        sub->add_option("--refit-hidden", cfg.refit_hidden);
        sub->add_option("--refit-draws", cfg.refit_draws);
        sub->add_flag("--classify", cfg.classify);
        sub->add_option("--labelled", cfg.labelled);
        sub->add_option("--unlabelled", cfg.unlabelled);
        sub->add_option("--classifier-steps", cfg.classifier_steps);
        sub->add_option("--classifier-draws", cfg.classifier_draws);
        sub->add_option("--sweep-C", cfg.sweep_C);
        sub->add_option("--sweep-lambda", cfg.sweep_lambda);
        sub->add_option("--sweep-iterations", cfg.sweep_iterations);
        sub->add_option("--oracle-resolution", cfg.oracle_resolution);
        sub->add_option("--oracle-index", cfg.oracle_index);
    };

    CLI::App* corrupt = app.add_subcommand("corrupt", "materialize a corrupted dataset");
    CLI::App* train = app.add_subcommand("train", "train tae/mvae/miwae on corrupted data");
    CLI::App* recover = app.add_subcommand("recover", "posterior means, draws and sample grids");
    CLI::App* evaluate = app.add_subcommand("evaluate", "refit ELBO, PSNR, diversity, classification");
    CLI::App* sweep = app.add_subcommand("sweep", "C x lambda grid of train + refit evaluations");
    CLI::App* oracle2d = app.add_subcommand("oracle2d", "exact 2-D posterior vs model draws");
    for (CLI::App* sub : {corrupt, train, recover, evaluate, sweep, oracle2d}) add_common(sub);

    // two passes: flags must override whatever the config file sets
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw std::runtime_error("cannot open config " + config_path);
            json j = json::parse(f);
            RunConfig from_file;
            apply_json(from_file, j);
            cfg = from_file;
            // re-apply command line on top of the file values
            CLI::App reparse{"tae"};
            reparse.require_subcommand(1);
            CLI::App* c2[6] = {reparse.add_subcommand("corrupt"), reparse.add_subcommand("train"),
                               reparse.add_subcommand("recover"), reparse.add_subcommand("evaluate"),
                               reparse.add_subcommand("sweep"), reparse.add_subcommand("oracle2d")};
            for (CLI::App* sub : c2) add_common(sub);
            reparse.parse(argc, argv);
        }

        if (corrupt->parsed()) return cmd_corrupt(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (recover->parsed()) return cmd_recover(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        if (sweep->parsed()) return cmd_sweep(cfg);
        if (oracle2d->parsed()) return cmd_oracle2d(cfg);
        std::fprintf(stderr, "no subcommand\n");
        return 2;
    } catch (const tae::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    }
}
