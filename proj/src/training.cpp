#include "tae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "tae/adam.hpp"
#include "tae/evaluation.hpp"

namespace tae {

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "tae") return ModelKind::kTae;
    if (s == "mvae") return ModelKind::kMvae;
    if (s == "miwae") return ModelKind::kMiwae;
    throw std::invalid_argument("unknown model kind '" + s + "' (expected tae|mvae|miwae)");
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::kTae: return "tae";
        case ModelKind::kMvae: return "mvae";
        case ModelKind::kMiwae: return "miwae";
    }
    return "?";
}

void TrainConfig::validate(std::size_t data_count) const {
    arch.validate();
    if (data_count == 0) throw std::invalid_argument("train: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (warmup_start >= warmup_end)
        throw std::invalid_argument("train: warm-up start must precede warm-up end");
    if (kind == ModelKind::kMiwae && miwae_k == 0)
        throw std::invalid_argument("train: miwae_k must be >= 1");
    if (pen.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
}

double warmup_gamma(std::size_t k, const TrainConfig& cfg) {
    if (k <= cfg.warmup_start) return cfg.gamma0;
    if (k >= cfg.warmup_end) return cfg.gamma_f;
    double frac = static_cast<double>(k - cfg.warmup_start) /
                  static_cast<double>(cfg.warmup_end - cfg.warmup_start);
    return cfg.gamma0 + (cfg.gamma_f - cfg.gamma0) * frac;
}

namespace {

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// Epoch-wise shuffled index stream.
class BatchSampler {
 public:
    BatchSampler(std::size_t count, std::size_t batch, Rng rng)
        : count_(count), batch_(std::min(batch, count)), rng_(std::move(rng)) {
        order_.resize(count_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        pos_ = count_;  // force shuffle on first batch
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> idx;
        idx.reserve(batch_);
        for (std::size_t i = 0; i < batch_; ++i) {
            if (pos_ == count_) {
                rng_.shuffle(std::span<std::size_t>(order_));
                pos_ = 0;
            }
            idx.push_back(order_[pos_++]);
        }
        return idx;
    }

 private:
    std::size_t count_, batch_, pos_;
    Rng rng_;
    std::vector<std::size_t> order_;
};

}  // namespace

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("TrainLog: cannot open " + path);
    f << kCsvHeader << "\n";
    for (const TrainRecord& r : records) {
        f << r.iter << ',' << format_number(r.gamma) << ',' << format_number(r.objective) << ','
          << format_number(r.terms.obs_lik) << ',' << format_number(r.terms.prior_rec) << ','
          << format_number(r.terms.prior_kl) << ',' << format_number(r.terms.h_z) << ','
          << format_number(r.terms.h_x) << ',' << format_number(r.terms.r_logq) << ','
          << format_number(r.terms.q_logq) << ',' << format_number(r.terms.penalty) << "\n";
    }
    if (!f) throw std::runtime_error("TrainLog: write failed for " + path);
}

TrainResult train(const TrainConfig& cfg, const std::vector<CorruptedSample>& data) {
    cfg.validate(data.size());
    const std::size_t d = data.front().y.size();
    if (cfg.arch.data_dim != d)
        throw std::invalid_argument("train: arch.data_dim does not match data dimension");
    for (const CorruptedSample& s : data)
        if (s.y.size() != d) throw std::invalid_argument("train: inconsistent sample dimensions");

    Rng root(cfg.seed);
    Rng draw_rng = root.child(1);
    BatchSampler sampler(data.size(), cfg.batch_size, root.child(2));

    TrainResult res;
    res.kind = cfg.kind;
    std::vector<std::pair<std::string, Tensor*>> named;
    if (cfg.kind == ModelKind::kTae) {
        res.tae = init_tae(cfg.arch, cfg.seed);
        named = res.tae.params();
    } else {
        res.mvae = init_mvae(cfg.arch, cfg.seed);
        named = res.mvae.params();
    }
    std::vector<Tensor*> params;
    params.reserve(named.size());
    for (auto& [name, t] : named) params.push_back(t);

    AdamState adam = AdamState::init(params, cfg.learning_rate);
    if (cfg.lat_post_lr_mult != 1.0) {
        adam.lr_mult.assign(params.size(), 1.0);
        for (std::size_t p = 0; p < named.size(); ++p)
            if (named[p].first.rfind("phi4", 0) == 0) adam.lr_mult[p] = cfg.lat_post_lr_mult;
    }
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    auto write_ckpt = [&](const std::string& path) {
        if (path.empty()) return;
        if (cfg.kind == ModelKind::kTae)
            save_checkpoint(path, res.tae);
        else
            save_checkpoint(path, res.mvae);
    };

    auto log_step = [&](std::size_t k, double gamma, double objective, const TaeTerms& terms) {
        res.log.records.push_back(TrainRecord{k, gamma, objective, terms, elapsed()});
    };

    for (std::size_t k = 0; k < cfg.iterations; ++k) {
        double gamma = warmup_gamma(k, cfg);
        std::vector<std::size_t> idx = sampler.next();
        std::vector<const CorruptedSample*> ptrs;
        ptrs.reserve(idx.size());
        for (std::size_t i : idx) ptrs.push_back(&data[i]);
        Batch batch = Batch::from(ptrs);

        double objective = 0.0;
        TaeTerms terms;
        bool want_log = (k % cfg.log_every == 0) || (k + 1 == cfg.iterations);
        try {
            Tape tape;
            Var root_var;
            std::vector<Var> leaves;
            if (cfg.kind == ModelKind::kTae) {
                TaeModelVars vars = register_tae(tape, res.tae);
                leaves = vars.leaf_vars();
                TaeGraph g = tae_graph(tape, vars, cfg.arch, batch, cfg.noise, gamma, cfg.pen,
                                       draw_rng, cfg.detach_lat_post);
                root_var = g.objective;
                if (want_log) terms = mean_terms(tape, g);
            } else if (cfg.kind == ModelKind::kMvae) {
                MvaeModelVars vars = register_mvae(tape, res.mvae);
                leaves = vars.leaf_vars();
                MvaeGraph g = mvae_graph(tape, vars, batch, cfg.noise.sigma, draw_rng);
                root_var = tape.sum_all(g.rows);
                if (want_log) {
                    double n = static_cast<double>(batch.size());
                    double lik = 0.0, klv = 0.0;
                    for (double v : tape.val(g.lik_rows)) lik += v;
                    for (double v : tape.val(g.kl_rows)) klv += v;
                    terms.obs_lik = lik / n;
                    terms.prior_kl = klv / n;
                }
            } else {
                MvaeModelVars vars = register_mvae(tape, res.mvae);
                leaves = vars.leaf_vars();
                Var rows = miwae_graph(tape, vars, batch, cfg.noise.sigma, cfg.miwae_k, draw_rng);
                root_var = tape.sum_all(rows);
            }
            objective = tape.scalar(root_var);
            if (!std::isfinite(objective))
                throw std::runtime_error("non-finite objective value");
            tape.backward(root_var);
            // ascend: Adam descends along the negated gradient
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (Var lv : leaves) {
                Tensor g = tape.grad_tensor(lv);
                for (double& v : g.data) v = -v;
                grads.push_back(std::move(g));
            }
            adam_step(adam, params, grads);
        } catch (const std::runtime_error& e) {
            throw TrainDivergence("training diverged at iteration " + std::to_string(k) + ": " +
                                      e.what() +
                                      (cfg.checkpoint_path.empty()
                                           ? ""
                                           : " (last checkpoint: " + cfg.checkpoint_path + ")"),
                                  k);
        }

        if (want_log) log_step(k, gamma, objective, terms);
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            (k + 1) % cfg.checkpoint_every == 0)
            write_ckpt(cfg.checkpoint_path);
    }

    write_ckpt(cfg.checkpoint_path);
    return res;
}

std::vector<SweepCell> sweep(const TrainConfig& base, const std::vector<double>& c_values,
                             const std::vector<double>& lambda_values,
                             const std::vector<CorruptedSample>& data, const SweepOptions& opt) {
    if (c_values.empty() || lambda_values.empty())
        throw std::invalid_argument("sweep: empty grid");
    std::vector<SweepCell> cells;
    for (double c : c_values) {
        for (double lambda : lambda_values) {
            SweepCell cell;
            cell.C = c;
            cell.lambda = lambda;
            TrainConfig cfg = base;
            cfg.pen.C = c;
            cfg.pen.lambda = lambda;
            cfg.checkpoint_path.clear();
            try {
                TrainResult r = train(cfg, data);

                std::vector<RefitPair> pairs;
                Rng eval_rng(opt.eval_seed);
                for (std::size_t i = 0; i < data.size() && pairs.size() < opt.eval_count; ++i)
                    if (data[i].has_clean())
                        pairs.push_back(RefitPair{data[i].clean, data[i].y, data[i].alpha});
                if (pairs.empty()) throw std::runtime_error("sweep: no ground-truth pairs");
                RefitConfig rc;
                rc.hidden = opt.refit_hidden;
                rc.iterations = opt.refit_iterations;
                rc.seed = opt.eval_seed;
                const Mlp& enc = cfg.kind == ModelKind::kTae ? r.tae.enc : r.mvae.enc;
                const Mlp& dec = cfg.kind == ModelKind::kTae ? r.tae.dec : r.mvae.dec;
                cell.refit_elbo = refit_elbo(enc, dec, pairs, rc, eval_rng);
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("sweep: cannot open " + path);
    f << "C,lambda,refit_elbo,status\n";
    for (const SweepCell& c : cells) {
        f << format_number(c.C) << ',' << format_number(c.lambda) << ','
          << (c.ok ? format_number(c.refit_elbo) : "nan") << ','
          << (c.ok ? "ok" : "failed") << "\n";
    }
    if (!f) throw std::runtime_error("sweep: write failed for " + path);
}

}  // namespace tae
