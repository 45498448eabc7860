#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "helpers.hpp"
#include "tae/model.hpp"

using namespace tae;

TEST_SUITE("models") {

TEST_CASE("init is deterministic under the seed") {
    ArchConfig arch;
    arch.data_dim = 12;
    arch.hidden = 8;
    arch.prior_hidden = 4;
    arch.z_dim = 3;
    arch.zp_dim = 2;
    TaeModel a = init_tae(arch, 99);
    TaeModel b = init_tae(arch, 99);
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->data == pb[i].second->data);

    TaeModel c = init_tae(arch, 100);
    bool differs = false;
    auto pc = c.params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].second->data != pc[i].second->data) differs = true;
    CHECK(differs);
}

TEST_CASE("default architecture dimensions and parameter count") {
    ArchConfig arch;  // MNIST defaults
    CHECK(arch.enc_in() == 2 * 784);

    TaeModel m = init_tae(arch, 1);
    CHECK(m.enc.in_dim() == 1568);
    std::size_t expected_enc =
        (1568 * 400 + 400) + (400 * 400 + 400) + 2 * (400 * 20 + 20);
    CHECK(m.enc.param_count() == expected_enc);

    // bias values start at zero
    for (double v : m.enc.hidden[0].b.data) CHECK(v == 0.0);

    MvaeModel mv = init_mvae(arch, 1);
    CHECK(mv.enc.param_count() == expected_enc);
    std::size_t expected_dec = (20 * 400 + 400) + (400 * 400 + 400) + 2 * (400 * 784 + 784);
    CHECK(mv.dec.param_count() == expected_dec);
}

TEST_CASE("mlp_head: zero parameters give a standard normal head") {
    Rng rng(4);
    Mlp net = make_mlp(3, 4, 2, 2, 0.01, 10.0, rng);
    for (auto& l : net.hidden) {
        std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
        std::fill(l.b.data.begin(), l.b.data.end(), 0.0);
    }
    std::fill(net.mean_head.w.data.begin(), net.mean_head.w.data.end(), 0.0);
    std::fill(net.logvar_head.w.data.begin(), net.logvar_head.w.data.end(), 0.0);
    std::vector<double> x{0.5, -0.3, 2.0};
    DiagGaussian g = mlp_head(net, x);
    for (double v : g.mean) CHECK(v == 0.0);
    for (double v : g.logvar) CHECK(v == 0.0);
}

TEST_CASE("leaky relu slope shows in the trunk") {
    Rng rng(4);
    Mlp net = make_mlp(1, 1, 1, 1, 0.01, 10.0, rng);
    net.hidden[0].w.data[0] = 1.0;
    net.hidden[0].b.data[0] = 0.0;
    Tensor in({1, 1});
    in.data[0] = -1.0;
    Tensor trunk;
    mlp_forward_batch(net, in, &trunk);
    CHECK(trunk.data[0] == doctest::Approx(-0.01));
}

TEST_CASE("fuzz: heads stay finite and clamped over random nets") {
    Rng rng(6);
    for (int rep = 0; rep < 1000; ++rep) {
        Mlp net = make_mlp(5, 7, 2, 3, 0.01, 10.0, rng);
        // scale some weights up to provoke the clamp
        for (double& v : net.logvar_head.w.data) v *= 50.0;
        std::vector<double> x(5);
        for (auto& v : x) v = 10.0 * rng.normal();
        DiagGaussian g = mlp_head(net, x);
        for (double v : g.mean) CHECK(std::isfinite(v));
        for (double v : g.logvar) {
            CHECK(v >= -10.0);
            CHECK(v <= 10.0);
        }
    }
}

TEST_CASE("posterior_sample basics") {
    ArchConfig arch;
    arch.data_dim = 6;
    arch.hidden = 8;
    arch.prior_hidden = 4;
    arch.z_dim = 3;
    arch.zp_dim = 2;
    TaeModel m = init_tae(arch, 7);
    std::vector<double> y(6, 0.4);
    Mask alpha{{1, 1, 0, 1, 0, 1}};

    Rng r0(10);
    CHECK(posterior_sample(m, y, alpha, 0, r0).draws.empty());

    Rng r1(10), r2(10);
    PosteriorDraws a = posterior_sample(m, y, alpha, 5, r1);
    PosteriorDraws b = posterior_sample(m, y, alpha, 5, r2);
    CHECK(a.draws == b.draws);
    CHECK(a.cond_means == b.cond_means);
}

TEST_CASE("posterior_sample: draws average to the conditional means") {
    ArchConfig arch;
    arch.data_dim = 4;
    arch.hidden = 6;
    arch.prior_hidden = 4;
    arch.z_dim = 2;
    arch.zp_dim = 2;
    TaeModel m = init_tae(arch, 8);
    std::vector<double> y(4, 0.2);
    Mask alpha{{1, 0, 1, 1}};
    Rng rng(21);
    const std::size_t n = 1000;
    PosteriorDraws d = posterior_sample(m, y, alpha, n, rng);

    for (std::size_t j = 0; j < 4; ++j) {
        double mean_draws = 0.0, mean_cond = 0.0, var_draws = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean_draws += d.draws[i][j];
            mean_cond += d.cond_means[i][j];
        }
        mean_draws /= n;
        mean_cond /= n;
        for (std::size_t i = 0; i < n; ++i) {
            double dd = d.draws[i][j] - mean_draws;
            var_draws += dd * dd;
        }
        double se = std::sqrt(var_draws / (n - 1)) / std::sqrt(static_cast<double>(n));
        CHECK(std::abs(mean_draws - mean_cond) < 3.0 * se + 1e-6);
    }
}

TEST_CASE("posterior_mean: n=1 and deterministic encoder cases") {
    ArchConfig arch;
    arch.data_dim = 4;
    arch.hidden = 6;
    arch.prior_hidden = 4;
    arch.z_dim = 2;
    arch.zp_dim = 2;
    arch.logvar_clamp = 80.0;  // allow a truly deterministic encoder
    TaeModel m = init_tae(arch, 9);
    std::vector<double> y(4, 0.3);
    Mask alpha{{1, 1, 1, 0}};

    Rng r1(3), r2(3);
    std::vector<double> mean1 = posterior_mean(m, y, alpha, 1, r1);
    PosteriorDraws d = posterior_sample(m, y, alpha, 1, r2);
    CHECK(mean1 == d.cond_means[0]);

    std::fill(m.enc.logvar_head.w.data.begin(), m.enc.logvar_head.w.data.end(), 0.0);
    std::fill(m.enc.logvar_head.b.data.begin(), m.enc.logvar_head.b.data.end(), -60.0);
    Rng r3(4), r4(5);
    std::vector<double> a = posterior_mean(m, y, alpha, 10, r3);
    std::vector<double> b = posterior_mean(m, y, alpha, 1000, r4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-12));
}

TEST_CASE("checkpoint: bit-exact round trip") {
    ArchConfig arch;
    arch.data_dim = 5;
    arch.hidden = 6;
    arch.prior_hidden = 3;
    arch.z_dim = 2;
    arch.zp_dim = 2;
    arch.noise_head = true;
    TaeModel m = init_tae(arch, 31);
    std::string path = "/tmp/tae_test_ckpt.bin";
    save_checkpoint(path, m);
    Checkpoint ck = load_checkpoint(path);
    REQUIRE(ck.kind == "tae");
    auto pa = m.params(), pb = ck.tae.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second->data == pb[i].second->data);
    }

    MvaeModel mv = init_mvae(arch, 32);
    save_checkpoint(path, mv);
    Checkpoint ck2 = load_checkpoint(path);
    REQUIRE(ck2.kind == "mvae");
    CHECK(ck2.mvae.enc.hidden[0].w.data == mv.enc.hidden[0].w.data);
}

TEST_CASE("checkpoint: corrupt files are rejected") {
    std::string path = "/tmp/tae_test_bad_ckpt.bin";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTACKPT", f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_missing_ckpt.bin"), std::runtime_error);
}

}  // TEST_SUITE
