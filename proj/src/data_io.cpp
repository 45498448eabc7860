#include "tae/data_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace tae {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.2831853071795864769252867665590;

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw std::runtime_error("idx: truncated header in " + path);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

std::size_t file_size(std::ifstream& f) {
    auto cur = f.tellg();
    f.seekg(0, std::ios::end);
    auto end = f.tellg();
    f.seekg(cur);
    return static_cast<std::size_t>(end);
}

void write_u64(std::ofstream& f, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream f(images_path, std::ios::binary);
    if (!f) throw std::runtime_error("idx: cannot open " + images_path);
    std::size_t total = file_size(f);
    std::uint32_t magic = read_be32(f, images_path);
    if (magic != 0x00000803)
        throw std::runtime_error("idx: bad image magic in " + images_path);
    std::uint32_t count = read_be32(f, images_path);
    std::uint32_t rows = read_be32(f, images_path);
    std::uint32_t cols = read_be32(f, images_path);
    std::size_t d = static_cast<std::size_t>(rows) * cols;
    std::size_t expected = 16 + static_cast<std::size_t>(count) * d;
    if (total != expected)
        throw std::runtime_error("idx: " + images_path + " has " + std::to_string(total) +
                                 " bytes, expected " + std::to_string(expected));

    Dataset ds;
    ds.name = "idx";
    ds.dim = d;
    ds.samples.reserve(count);
    std::vector<std::uint8_t> buf(d);
    for (std::uint32_t i = 0; i < count; ++i) {
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d));
        if (!f) throw std::runtime_error("idx: truncated image data in " + images_path);
        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = static_cast<double>(buf[j]) / 255.0;
        ds.samples.push_back(std::move(x));
    }

    if (!labels_path.empty()) {
        std::ifstream lf(labels_path, std::ios::binary);
        if (!lf) throw std::runtime_error("idx: cannot open " + labels_path);
        std::size_t ltotal = file_size(lf);
        std::uint32_t lmagic = read_be32(lf, labels_path);
        if (lmagic != 0x00000801)
            throw std::runtime_error("idx: bad label magic in " + labels_path);
        std::uint32_t lcount = read_be32(lf, labels_path);
        if (lcount != count)
            throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(count) +
                                     " vs " + std::to_string(lcount) + ")");
        if (ltotal != 8 + static_cast<std::size_t>(lcount))
            throw std::runtime_error("idx: " + labels_path + " has " + std::to_string(ltotal) +
                                     " bytes, expected " + std::to_string(8 + lcount));
        std::vector<std::uint8_t> lb(lcount);
        lf.read(reinterpret_cast<char*>(lb.data()), lcount);
        ds.labels.assign(lb.begin(), lb.end());
    }
    return ds;
}

Dataset load_har(const std::string& dir_path, bool per_feature) {
    std::string xp = dir_path + "/X_train.txt";
    std::string yp = dir_path + "/y_train.txt";
    std::ifstream xf(xp);
    if (!xf) throw std::runtime_error("har: cannot open " + xp);

    Dataset ds;
    ds.name = "har";
    std::string line;
    while (std::getline(xf, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ss(line);
        std::vector<double> row;
        double v;
        while (ss >> v) row.push_back(v);
        if (ds.dim == 0) ds.dim = row.size();
        if (row.size() != ds.dim)
            throw std::runtime_error("har: ragged row " + std::to_string(ds.samples.size() + 1) +
                                     " in " + xp);
        ds.samples.push_back(std::move(row));
    }
    if (ds.samples.empty()) throw std::runtime_error("har: no rows in " + xp);

    // min-max rescale to [0,1]
    if (per_feature) {
        for (std::size_t j = 0; j < ds.dim; ++j) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (const auto& s : ds.samples) {
                lo = std::min(lo, s[j]);
                hi = std::max(hi, s[j]);
            }
            double range = hi - lo;
            for (auto& s : ds.samples) s[j] = range > 0.0 ? (s[j] - lo) / range : 0.0;
        }
    } else {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : ds.samples)
            for (double v : s) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        double range = hi - lo;
        for (auto& s : ds.samples)
            for (double& v : s) v = range > 0.0 ? (v - lo) / range : 0.0;
    }

    std::ifstream yf(yp);
    if (yf) {
        std::vector<int> labels;
        std::string tok;
        while (yf >> tok) {
            int raw;
            try {
                raw = std::stoi(tok);
            } catch (const std::exception&) {
                throw std::runtime_error("har: unknown label '" + tok + "' in " + yp);
            }
            if (raw < 1) throw std::runtime_error("har: unknown label '" + tok + "' in " + yp);
            labels.push_back(raw - 1);
        }
        if (labels.size() != ds.samples.size())
            throw std::runtime_error("har: feature/label count mismatch");
        ds.labels = std::move(labels);
    }
    return ds;
}

std::array<double, 2> Curve2dSpec::point(double s) const {
    return {x_lo + x_span * s, center + amplitude * std::sin(kTwoPi * cycles * s)};
}

double Curve2dSpec::kernel(double dx, double dy) const {
    double s2 = thickness * thickness;
    double r2 = dx * dx + dy * dy;
    double rmax2 = trunc_radius * trunc_radius * s2;
    if (r2 > rmax2) return 0.0;
    double mass_inside = 1.0 - std::exp(-0.5 * trunc_radius * trunc_radius);
    return std::exp(-0.5 * r2 / s2) / (kTwoPi * s2 * mass_inside);
}

double Curve2dSpec::prior_density(double x0, double x1, std::size_t arc_steps) const {
    // trapezoid over the arc parameter
    double acc = 0.0;
    double h = 1.0 / static_cast<double>(arc_steps - 1);
    for (std::size_t i = 0; i < arc_steps; ++i) {
        double s = static_cast<double>(i) * h;
        auto c = point(s);
        double w = (i == 0 || i + 1 == arc_steps) ? 0.5 : 1.0;
        acc += w * kernel(x0 - c[0], x1 - c[1]);
    }
    return acc * h;
}

Dataset synth_2d(std::size_t n, std::uint64_t seed, const Curve2dSpec& spec) {
    if (n == 0) throw std::invalid_argument("synth_2d: n must be >= 1");
    Dataset ds;
    ds.name = "synth2d";
    ds.dim = 2;
    ds.samples.reserve(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        double s = rng.uniform();
        auto c = spec.point(s);
        // truncated isotropic noise: reject beyond trunc_radius
        double dx, dy;
        do {
            dx = spec.thickness * rng.normal();
            dy = spec.thickness * rng.normal();
        } while (dx * dx + dy * dy > spec.trunc_radius * spec.trunc_radius * spec.thickness * spec.thickness);
        ds.samples.push_back({c[0] + dx, c[1] + dy});
    }
    return ds;
}

void write_pgm_grid(const std::vector<std::vector<double>>& images, std::size_t rows,
                    std::size_t cols, const std::string& path) {
    if (images.empty()) throw std::invalid_argument("pgm: no images");
    if (rows * cols < images.size()) throw std::invalid_argument("pgm: grid smaller than image count");
    std::size_t d = images.front().size();
    auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(d))));
    if (side * side != d) throw std::invalid_argument("pgm: images must be square");
    for (const auto& img : images)
        if (img.size() != d) throw std::invalid_argument("pgm: inconsistent image sizes");

    std::size_t height = rows * side + (rows - 1);
    std::size_t width = cols * side + (cols - 1);
    std::vector<std::uint8_t> canvas(height * width, 128);

    for (std::size_t i = 0; i < images.size(); ++i) {
        std::size_t gr = i / cols, gc = i % cols;
        std::size_t top = gr * (side + 1), left = gc * (side + 1);
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c) {
                double v = std::min(std::max(images[i][r * side + c], 0.0), 1.0);
                canvas[(top + r) * width + left + c] =
                    static_cast<std::uint8_t>(std::llround(v * 255.0));
            }
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
    if (!f) throw std::runtime_error("pgm: write failed for " + path);
}

Pgm read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error("pgm: not a P5 file: " + path);
    std::size_t w, h;
    int maxval;
    f >> w >> h >> maxval;
    if (maxval != 255) throw std::runtime_error("pgm: unsupported maxval in " + path);
    f.get();  // single whitespace after header
    Pgm p;
    p.width = w;
    p.height = h;
    p.pixels.resize(w * h);
    f.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(w * h));
    if (!f) throw std::runtime_error("pgm: truncated pixel data in " + path);
    return p;
}

std::string CorruptionManifest::to_json() const {
    json j{{"seed", seed}, {"dataset", dataset}, {"count", count}, {"sigma", sigma}};
    if (missing.observed_ratio) j["observed_ratio"] = *missing.observed_ratio;
    if (missing.window) {
        const auto& w = *missing.window;
        j["window"] = {{"height", w[0]}, {"width", w[1]}, {"win_h", w[2]}, {"win_w", w[3]}};
    }
    return j.dump(2) + "\n";
}

CorruptionManifest CorruptionManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    CorruptionManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dataset = j.at("dataset").get<std::string>();
    m.count = j.at("count").get<std::size_t>();
    m.sigma = j.at("sigma").get<double>();
    if (j.contains("observed_ratio")) m.missing.observed_ratio = j["observed_ratio"].get<double>();
    if (j.contains("window")) {
        const json& w = j["window"];
        m.missing.window = {w.at("height").get<std::size_t>(), w.at("width").get<std::size_t>(),
                            w.at("win_h").get<std::size_t>(), w.at("win_w").get<std::size_t>()};
    }
    return m;
}

CorruptedDataset materialize_corruption(const Dataset& ds, const MissingSpec& missing,
                                        const NoiseSpec& noise, std::uint64_t seed) {
    if (ds.samples.empty()) throw std::invalid_argument("materialize_corruption: empty dataset");
    bool ratio_mode = missing.observed_ratio.has_value();
    bool window_mode = missing.window.has_value();
    if (ratio_mode == window_mode)
        throw std::invalid_argument(
            "materialize_corruption: exactly one of observed_ratio/window required");

    CorruptedDataset out;
    out.manifest.seed = seed;
    out.manifest.dataset = ds.name;
    out.manifest.count = ds.size();
    out.manifest.sigma = noise.sigma;
    out.manifest.missing = missing;
    out.labels = ds.labels;
    out.samples.reserve(ds.size());

    Rng rng(seed);
    for (const auto& x : ds.samples) {
        Mask m;
        if (ratio_mode) {
            m = generate_mask_mar(x.size(), *missing.observed_ratio, rng);
        } else {
            const auto& w = *missing.window;
            if (w[0] * w[1] != x.size())
                throw std::invalid_argument("materialize_corruption: window dims do not match data");
            m = generate_mask_window(w[0], w[1], w[2], w[3], rng);
        }
        CorruptedSample s = corrupt(x, m, noise, rng);
        s.clean = x;
        out.samples.push_back(std::move(s));
    }
    return out;
}

namespace {
constexpr char kCorruptMagic[4] = {'T', 'C', 'D', '1'};
}

void save_corrupted(const std::string& path, const CorruptedDataset& ds) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_corrupted: cannot open " + path);
    std::size_t n = ds.samples.size();
    std::size_t d = ds.dim();
    f.write(kCorruptMagic, 4);
    std::string manifest = ds.manifest.to_json();
    write_u64(f, manifest.size());
    f.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    write_u64(f, n);
    write_u64(f, d);
    bool has_clean = !ds.samples.empty() && ds.samples.front().has_clean();
    bool has_labels = !ds.labels.empty();
    write_u64(f, (has_clean ? 1u : 0u) | (has_labels ? 2u : 0u));
    for (const auto& s : ds.samples) {
        f.write(reinterpret_cast<const char*>(s.y.data()),
                static_cast<std::streamsize>(d * sizeof(double)));
        f.write(reinterpret_cast<const char*>(s.alpha.on.data()), static_cast<std::streamsize>(d));
        if (has_clean)
            f.write(reinterpret_cast<const char*>(s.clean.data()),
                    static_cast<std::streamsize>(d * sizeof(double)));
    }
    if (has_labels)
        for (int l : ds.labels) write_u64(f, static_cast<std::uint64_t>(l));
    if (!f) throw std::runtime_error("save_corrupted: write failed for " + path);
}

CorruptedDataset load_corrupted(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_corrupted: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCorruptMagic, 4) != 0)
        throw std::runtime_error("load_corrupted: bad magic in " + path);
    CorruptedDataset ds;
    std::uint64_t mlen = read_u64(f);
    std::string manifest(mlen, '\0');
    f.read(manifest.data(), static_cast<std::streamsize>(mlen));
    ds.manifest = CorruptionManifest::from_json(manifest);
    std::uint64_t n = read_u64(f);
    std::uint64_t d = read_u64(f);
    std::uint64_t flags = read_u64(f);
    if (!f) throw std::runtime_error("load_corrupted: truncated header in " + path);
    bool has_clean = flags & 1u, has_labels = flags & 2u;
    ds.samples.resize(n);
    for (auto& s : ds.samples) {
        s.y.resize(d);
        s.alpha.on.resize(d);
        f.read(reinterpret_cast<char*>(s.y.data()), static_cast<std::streamsize>(d * sizeof(double)));
        f.read(reinterpret_cast<char*>(s.alpha.on.data()), static_cast<std::streamsize>(d));
        if (has_clean) {
            s.clean.resize(d);
            f.read(reinterpret_cast<char*>(s.clean.data()),
                   static_cast<std::streamsize>(d * sizeof(double)));
        }
    }
    if (has_labels) {
        ds.labels.resize(n);
        for (auto& l : ds.labels) l = static_cast<int>(read_u64(f));
    }
    if (!f) throw std::runtime_error("load_corrupted: truncated data in " + path);
    return ds;
}

}  // namespace tae
