#include "tae/model.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tae {

using nlohmann::json;

void ArchConfig::validate() const {
    if (data_dim == 0 || z_dim == 0 || zp_dim == 0 || hidden == 0 || prior_hidden == 0)
        throw std::invalid_argument("ArchConfig: dimensions must be positive");
    if (!(leaky_slope > 0.0) || !(logvar_clamp > 0.0) || dec_logvar_clamp < 0.0)
        throw std::invalid_argument("ArchConfig: slope and clamp must be positive");
}

std::vector<std::pair<std::string, Tensor*>> TaeModel::params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    collect_params(enc, "phi1", out);
    collect_params(dec, "phi2", out);
    collect_params(prior_enc, "phi3", out);
    collect_params(prior_dec, "theta", out);
    collect_params(lat_post, "phi4", out);
    if (arch.noise_head) {
        out.emplace_back("phi5.mean.w", &noise_mean_head.w);
        out.emplace_back("phi5.mean.b", &noise_mean_head.b);
        out.emplace_back("phi5.logvar.w", &noise_logvar_head.w);
        out.emplace_back("phi5.logvar.b", &noise_logvar_head.b);
    }
    return out;
}

std::size_t TaeModel::param_count() {
    std::size_t k = 0;
    for (auto& [name, t] : params()) k += t->numel();
    return k;
}

std::vector<std::pair<std::string, Tensor*>> MvaeModel::params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    collect_params(enc, "enc", out);
    collect_params(dec, "dec", out);
    return out;
}

std::size_t MvaeModel::param_count() {
    std::size_t k = 0;
    for (auto& [name, t] : params()) k += t->numel();
    return k;
}

TaeModel init_tae(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    TaeModel m;
    m.arch = arch;
    m.enc = make_mlp(arch.enc_in(), arch.hidden, arch.hidden_layers, arch.z_dim, arch.leaky_slope,
                     arch.logvar_clamp, rng);
    m.dec = make_mlp(arch.dec_in(), arch.hidden, arch.hidden_layers, arch.data_dim,
                     arch.leaky_slope, arch.dec_clamp(), rng);
    m.prior_enc = make_mlp(arch.data_dim, arch.prior_hidden, arch.hidden_layers, arch.zp_dim,
                           arch.leaky_slope, arch.logvar_clamp, rng);
    m.prior_dec = make_mlp(arch.zp_dim, arch.prior_hidden, arch.hidden_layers, arch.data_dim,
                           arch.leaky_slope, arch.dec_clamp(), rng);
    m.lat_post = make_mlp(arch.lat_post_in(), arch.hidden, arch.hidden_layers, arch.z_dim,
                          arch.leaky_slope, arch.logvar_clamp, rng);
    if (arch.noise_head) {
        Mlp heads = make_mlp(arch.hidden, 0, 0, 1, arch.leaky_slope, arch.logvar_clamp, rng);
        m.noise_mean_head = std::move(heads.mean_head);
        m.noise_logvar_head = std::move(heads.logvar_head);
    }
    return m;
}

MvaeModel init_mvae(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    MvaeModel m;
    m.arch = arch;
    m.arch.conditional_decoder = false;  // MVAE decoder is p(x|z) by construction
    m.enc = make_mlp(arch.enc_in(), arch.hidden, arch.hidden_layers, arch.z_dim, arch.leaky_slope,
                     arch.logvar_clamp, rng);
    m.dec = make_mlp(arch.z_dim, arch.hidden, arch.hidden_layers, arch.data_dim, arch.leaky_slope,
                     arch.dec_clamp(), rng);
    return m;
}

Tensor encoder_input(std::span<const double> y, const Mask& alpha) {
    if (y.size() != alpha.dim()) throw std::invalid_argument("encoder_input: dim mismatch");
    Tensor x({1, 2 * y.size()});
    for (std::size_t i = 0; i < y.size(); ++i) {
        x.data[i] = y[i];
        x.data[y.size() + i] = static_cast<double>(alpha.on[i]);
    }
    return x;
}

PosteriorDraws posterior_sample(const Mlp& enc, const Mlp& dec, std::span<const double> y,
                                const Mask& alpha, std::size_t n, Rng& rng) {
    PosteriorDraws out;
    if (n == 0) return out;
    Tensor in = encoder_input(y, alpha);
    DiagGaussian zg = mlp_head(enc, {in.data.data(), in.data.size()});
    out.draws.reserve(n);
    out.cond_means.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> z = rsample(zg, rng);
        DiagGaussian xg = mlp_head(dec, z);
        out.draws.push_back(rsample(xg, rng));
        out.cond_means.push_back(std::move(xg.mean));
    }
    return out;
}

PosteriorDraws posterior_sample(const TaeModel& m, std::span<const double> y, const Mask& alpha,
                                std::size_t n, Rng& rng) {
    return posterior_sample(m.enc, m.dec, y, alpha, n, rng);
}

PosteriorDraws posterior_sample(const MvaeModel& m, std::span<const double> y, const Mask& alpha,
                                std::size_t n, Rng& rng) {
    return posterior_sample(m.enc, m.dec, y, alpha, n, rng);
}

std::vector<double> posterior_mean(const Mlp& enc, const Mlp& dec, std::span<const double> y,
                                   const Mask& alpha, std::size_t n, Rng& rng) {
    if (n == 0) throw std::invalid_argument("posterior_mean: n must be >= 1");
    PosteriorDraws d = posterior_sample(enc, dec, y, alpha, n, rng);
    std::vector<double> mean(d.cond_means.front().size(), 0.0);
    for (const auto& cm : d.cond_means)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += cm[i];
    for (double& v : mean) v /= static_cast<double>(n);
    return mean;
}

std::vector<double> posterior_mean(const TaeModel& m, std::span<const double> y, const Mask& alpha,
                                   std::size_t n, Rng& rng) {
    return posterior_mean(m.enc, m.dec, y, alpha, n, rng);
}

std::vector<double> posterior_mean(const MvaeModel& m, std::span<const double> y,
                                   const Mask& alpha, std::size_t n, Rng& rng) {
    return posterior_mean(m.enc, m.dec, y, alpha, n, rng);
}

// --- checkpoint io ---

namespace {

constexpr char kMagic[4] = {'T', 'A', 'E', 'C'};
constexpr std::uint32_t kVersion = 1;

json arch_to_json(const ArchConfig& a) {
    return json{{"data_dim", a.data_dim},
                {"z_dim", a.z_dim},
                {"zp_dim", a.zp_dim},
                {"hidden", a.hidden},
                {"prior_hidden", a.prior_hidden},
                {"hidden_layers", a.hidden_layers},
                {"leaky_slope", a.leaky_slope},
                {"logvar_clamp", a.logvar_clamp},
                {"dec_logvar_clamp", a.dec_logvar_clamp},
                {"conditional_decoder", a.conditional_decoder},
                {"noise_head", a.noise_head}};
}

ArchConfig arch_from_json(const json& j) {
    ArchConfig a;
    a.data_dim = j.at("data_dim").get<std::size_t>();
    a.z_dim = j.at("z_dim").get<std::size_t>();
    a.zp_dim = j.at("zp_dim").get<std::size_t>();
    a.hidden = j.at("hidden").get<std::size_t>();
    a.prior_hidden = j.at("prior_hidden").get<std::size_t>();
    a.hidden_layers = j.at("hidden_layers").get<std::size_t>();
    a.leaky_slope = j.at("leaky_slope").get<double>();
    a.logvar_clamp = j.at("logvar_clamp").get<double>();
    if (j.contains("dec_logvar_clamp")) a.dec_logvar_clamp = j["dec_logvar_clamp"].get<double>();
    a.conditional_decoder = j.at("conditional_decoder").get<bool>();
    a.noise_head = j.at("noise_head").get<bool>();
    return a;
}

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind, const ArchConfig& arch,
                     std::vector<std::pair<std::string, Tensor*>> params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    json header = {{"kind", kind}, {"arch", arch_to_json(arch)}};
    json plist = json::array();
    for (auto& [name, t] : params)
        plist.push_back(json{{"name", name}, {"shape", t->shape}});
    header["params"] = plist;
    std::string hs = header.dump();
    f.write(kMagic, 4);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(hs.size()));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& [name, t] : params)
        f.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void save_checkpoint(const std::string& path, TaeModel& m) {
    save_checkpoint(path, "tae", m.arch, m.params());
}

void save_checkpoint(const std::string& path, MvaeModel& m) {
    save_checkpoint(path, "mvae", m.arch, m.params());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t version = read_u32(f);
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t hlen = read_u32(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path);
    json header = json::parse(hs);

    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.arch = arch_from_json(header.at("arch"));
    std::vector<std::pair<std::string, Tensor*>> params;
    if (ck.kind == "tae") {
        ck.tae = init_tae(ck.arch, 0);
        params = ck.tae.params();
    } else if (ck.kind == "mvae") {
        ck.mvae = init_mvae(ck.arch, 0);
        params = ck.mvae.params();
    } else {
        throw std::runtime_error("load_checkpoint: unknown kind '" + ck.kind + "'");
    }

    const json& plist = header.at("params");
    if (plist.size() != params.size())
        throw std::runtime_error("load_checkpoint: parameter list mismatch in " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        if (plist[i].at("name").get<std::string>() != name)
            throw std::runtime_error("load_checkpoint: parameter order mismatch at " + name);
        auto shape = plist[i].at("shape").get<std::vector<std::size_t>>();
        if (shape != t->shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(t->data.data()),
               static_cast<std::streamsize>(t->data.size() * sizeof(double)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated data at " + name);
    }
    return ck;
}

}  // namespace tae
