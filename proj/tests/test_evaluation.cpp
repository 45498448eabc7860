#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tae/evaluation.hpp"

using namespace tae;

namespace {

void pin_head(DenseLayer& head, std::span<const double> bias) {
    std::fill(head.w.data.begin(), head.w.data.end(), 0.0);
    for (std::size_t i = 0; i < bias.size(); ++i) head.b.data[i] = bias[i];
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("psnr formula and sentinel") {
    std::vector<double> x{0.1, 0.5, 0.9};
    CHECK(std::isinf(psnr(x, x)));

    // MSE 0.01 -> 20 dB
    std::vector<double> off(3);
    for (std::size_t i = 0; i < 3; ++i) off[i] = x[i] + 0.1;
    CHECK(psnr(x, off) == doctest::Approx(20.0).epsilon(1e-9));

    // MSE 0.001 -> 30 dB
    for (std::size_t i = 0; i < 3; ++i) off[i] = x[i] + std::sqrt(0.001);
    CHECK(psnr(x, off) == doctest::Approx(30.0).epsilon(1e-9));

    std::vector<double> bad{0.1};
    CHECK_THROWS_AS(psnr(x, bad), std::invalid_argument);
}

TEST_CASE("diversity definitions") {
    std::vector<std::vector<double>> same{{0.2, 0.4}, {0.2, 0.4}, {0.2, 0.4}};
    CHECK(diversity(same) == doctest::Approx(0.0));

    std::vector<std::vector<double>> two{{0.0, 0.0}, {1.0, 0.0}};
    CHECK(diversity(two) == doctest::Approx(1.0));

    std::vector<std::vector<double>> one{{0.0}};
    CHECK_THROWS_AS(diversity(one), std::invalid_argument);

    // unit Gaussian draws in 20 dims concentrate near sqrt(2*20)
    Rng rng(5);
    std::vector<std::vector<double>> draws;
    for (int i = 0; i < 50; ++i) {
        std::vector<double> v(20);
        rng.fill_normal(v);
        draws.push_back(std::move(v));
    }
    CHECK(diversity(draws) == doctest::Approx(std::sqrt(40.0)).epsilon(0.05));
}

TEST_CASE("refit_elbo recovers the closed form for a z-independent posterior") {
    // decoder ignores z: q(x|y) is a fixed diagonal Gaussian, so the refit
    // bound must converge to its log-density at the clean point
    ArchConfig arch;
    arch.data_dim = 4;
    arch.hidden = 8;
    arch.prior_hidden = 4;
    arch.z_dim = 2;
    arch.zp_dim = 1;
    TaeModel m = init_tae(arch, 3);
    std::vector<double> mu{0.4, 0.6, 0.3, 0.7};
    std::vector<double> lv(4, std::log(0.09));
    pin_head(m.dec.mean_head, mu);
    pin_head(m.dec.logvar_head, lv);

    std::vector<double> x_clean{0.5, 0.5, 0.5, 0.5};
    DiagGaussian q{mu, lv};
    double expected = log_density(q, x_clean);

    RefitPair pair;
    pair.x_clean = x_clean;
    pair.y = {0.45, 0.0, 0.35, 0.0};
    pair.alpha.on = {1, 0, 1, 0};
    std::vector<RefitPair> pairs{pair};

    RefitConfig rc;
    rc.hidden = 16;
    rc.iterations = 4000;
    rc.final_draws = 400;
    Rng rng(7);
    double elbo = refit_elbo(m.enc, m.dec, pairs, rc, rng);
    CHECK(elbo == doctest::Approx(expected).epsilon(0.05));
    // and it is a lower bound up to Monte Carlo slack
    CHECK(elbo <= expected + 0.05);
}

TEST_CASE("refit_elbo best case reaches the decoder maximum") {
    ArchConfig arch;
    arch.data_dim = 3;
    arch.hidden = 6;
    arch.prior_hidden = 3;
    arch.z_dim = 2;
    arch.zp_dim = 1;
    TaeModel m = init_tae(arch, 5);
    std::vector<double> mu{0.2, 0.8, 0.5};
    std::vector<double> lv(3, std::log(1e-4));
    pin_head(m.dec.mean_head, mu);
    pin_head(m.dec.logvar_head, lv);

    RefitPair pair;
    pair.x_clean = mu;  // clean point at the conditional mean
    pair.y = mu;
    pair.alpha.on = {1, 1, 1};
    std::vector<RefitPair> pairs{pair};

    DiagGaussian q{mu, lv};
    double best = log_density(q, mu);

    RefitConfig rc;
    rc.hidden = 16;
    rc.iterations = 4000;
    rc.final_draws = 400;
    Rng rng(9);
    double elbo = refit_elbo(m.enc, m.dec, pairs, rc, rng);
    CHECK(elbo == doctest::Approx(best).epsilon(0.05));
}

TEST_CASE("classifier: collapsed posterior gives a one-hot histogram") {
    ClassifierHead head;
    Rng rng(3);
    Mlp proto = make_mlp(10, 0, 0, 10, 0.01, 10.0, rng);
    head.layer = std::move(proto.mean_head);
    head.slope = 0.01;

    PosteriorSampler collapsed = [](std::size_t, Rng&) {
        return std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    };
    Rng draw_rng(5);
    ClassifyResult r = classify_posterior(head, collapsed, 0, 400, draw_rng);
    int total = 0, nonzero = 0;
    for (int c : r.histogram) {
        total += c;
        nonzero += c > 0;
    }
    CHECK(total == 400);
    CHECK(nonzero == 1);
}

TEST_CASE("classifier: symmetric stub spreads the histogram uniformly") {
    // identity head over exchangeable normal draws: the argmax class is
    // uniform, so counts follow a multinomial(400, 1/10)
    ClassifierHead head;
    head.layer.w = Tensor({10, 10});
    head.layer.b = Tensor({10});
    for (std::size_t i = 0; i < 10; ++i) head.layer.w(i, i) = 1.0;
    head.slope = 0.01;

    PosteriorSampler stub = [](std::size_t, Rng& rng) {
        std::vector<double> v(10);
        rng.fill_normal(v);
        return v;
    };
    Rng draw_rng(11);
    const int n_draws = 4000;
    ClassifyResult r = classify_posterior(head, stub, 0, n_draws, draw_rng);
    int total = 0;
    for (int c : r.histogram) total += c;
    CHECK(total == n_draws);
    double expect = n_draws / 10.0;
    double sd = std::sqrt(n_draws * 0.1 * 0.9);
    for (int c : r.histogram) CHECK(std::abs(c - expect) < 5.0 * sd);
}

TEST_CASE("classifier training separates an easy 10-class problem") {
    const std::size_t d = 10;
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
    PosteriorSampler sampler = [&](std::size_t idx, Rng& rng) {
        std::vector<double> v(d);
        rng.fill_normal(v);
        for (auto& x : v) x *= 0.2;
        v[static_cast<std::size_t>(labels[idx])] += 3.0;
        return v;
    };
    std::vector<std::size_t> indices(labels.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    ClassifierConfig cfg;
    cfg.steps = 2500;
    cfg.batch = 32;
    cfg.learning_rate = 5e-3;
    cfg.seed = 13;
    ClassifierHead head = train_classifier(sampler, labels, indices, d, cfg);

    Rng rng(17);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        ClassifyResult r = classify_posterior(head, sampler, i, 20, rng);
        if (r.label == labels[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(indices.size()) > 0.9);
}

TEST_CASE("oracle grid: delta limit concentrates at the observation") {
    Curve2dSpec curve;
    auto pt = curve.point(0.3);
    std::vector<double> y{pt[0], pt[1]};
    Mask full{{1, 1}};
    OracleGridSpec gs;
    gs.n0 = 120;
    gs.n1 = 120;
    OracleGrid g = oracle_posterior_2d(curve, y, full, 1e-3, gs);

    double total = 0.0;
    for (double v : g.mass) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    auto cell = g.cell_of(y[0], y[1]);
    REQUIRE(cell >= 0);
    double here = 0.0;
    // observation cell plus immediate neighbours carry nearly all the mass
    std::size_t i0 = static_cast<std::size_t>(cell) / gs.n1;
    std::size_t i1 = static_cast<std::size_t>(cell) % gs.n1;
    for (std::size_t a = i0 - 1; a <= i0 + 1; ++a)
        for (std::size_t b = i1 - 1; b <= i1 + 1; ++b) here += g.at(a, b);
    CHECK(here > 0.95);
}

TEST_CASE("oracle grid: all-missing equals the discretized prior") {
    Curve2dSpec curve;
    std::vector<double> y{0.0, 0.0};
    Mask none{{0, 0}};
    OracleGridSpec gs;
    gs.n0 = 80;
    gs.n1 = 80;
    OracleGrid g = oracle_posterior_2d(curve, y, none, 0.1, gs);

    // direct per-cell evaluation of the recorded generator density
    std::vector<double> direct(gs.n0 * gs.n1, 0.0);
    double w0 = g.cell_w0(), w1 = g.cell_w1();
    double total = 0.0;
    for (std::size_t i0 = 0; i0 < gs.n0; ++i0)
        for (std::size_t i1 = 0; i1 < gs.n1; ++i1) {
            double x0 = gs.lo0 + (i0 + 0.5) * w0;
            double x1 = gs.lo1 + (i1 + 0.5) * w1;
            direct[i0 * gs.n1 + i1] = curve.prior_density(x0, x1, 4001);
            total += direct[i0 * gs.n1 + i1];
        }
    double tv = 0.0;
    for (std::size_t i = 0; i < direct.size(); ++i)
        tv += std::abs(direct[i] / total - g.mass[i]);
    CHECK(tv / 2.0 < 1e-6);
}

TEST_CASE("oracle grid: observing one coordinate yields the analytic modes") {
    Curve2dSpec curve;
    // observe x2 = center: the sine crosses it at s = 0, 0.4, 0.8
    std::vector<double> y{0.0, curve.center};
    Mask second_only{{0, 1}};
    OracleGridSpec gs;
    gs.n0 = 200;
    gs.n1 = 200;
    OracleGrid g = oracle_posterior_2d(curve, y, second_only, 0.02, gs);

    CHECK(count_modes(g) == 3);

    // mass clusters around the analytic crossing abscissae
    std::vector<double> expect_x1{curve.x_lo, curve.x_lo + 0.4 * curve.x_span,
                                  curve.x_lo + 0.8 * curve.x_span};
    for (double ex : expect_x1) {
        double nearby = 0.0;
        for (std::size_t i0 = 0; i0 < gs.n0; ++i0) {
            double x0 = gs.lo0 + (i0 + 0.5) * g.cell_w0();
            if (std::abs(x0 - ex) < 0.06)
                for (std::size_t i1 = 0; i1 < gs.n1; ++i1) nearby += g.at(i0, i1);
        }
        CHECK(nearby > 0.15);
    }
}

TEST_CASE("oracle grid: incompatible observation raises") {
    Curve2dSpec curve;
    std::vector<double> y{0.5, 5.0};
    Mask full{{1, 1}};
    OracleGridSpec gs;
    gs.n0 = 60;
    gs.n1 = 60;
    CHECK_THROWS_AS(oracle_posterior_2d(curve, y, full, 1e-3, gs), std::runtime_error);
}

TEST_CASE("oracle grid is stable under resolution doubling") {
    Curve2dSpec curve;
    std::vector<double> y{0.0, 0.55};
    Mask second_only{{0, 1}};
    OracleGridSpec coarse;  // default resolution
    OracleGridSpec fine = coarse;
    fine.n0 = 400;
    fine.n1 = 400;
    OracleGrid gc = oracle_posterior_2d(curve, y, second_only, 0.1, coarse);
    OracleGrid gf = oracle_posterior_2d(curve, y, second_only, 0.1, fine);

    double tv = 0.0;
    for (std::size_t i0 = 0; i0 < coarse.n0; ++i0)
        for (std::size_t i1 = 0; i1 < coarse.n1; ++i1) {
            double agg = gf.at(2 * i0, 2 * i1) + gf.at(2 * i0 + 1, 2 * i1) +
                         gf.at(2 * i0, 2 * i1 + 1) + gf.at(2 * i0 + 1, 2 * i1 + 1);
            tv += std::abs(agg - gc.at(i0, i1));
        }
    CHECK(tv / 2.0 < 1e-3);
}

TEST_CASE("cross-entropy against the grid matches the uniform-support baseline") {
    Curve2dSpec curve;
    std::vector<double> y{0.0, 0.0};
    Mask none{{0, 0}};
    OracleGridSpec gs;
    gs.n0 = 100;
    gs.n1 = 100;
    OracleGrid g = oracle_posterior_2d(curve, y, none, 0.1, gs);

    // support cells and the exact mean of -log mass over them
    std::vector<std::size_t> support;
    double baseline = 0.0;
    for (std::size_t i = 0; i < g.mass.size(); ++i)
        if (g.mass[i] > 0.0) support.push_back(i);
    for (std::size_t i : support) baseline += -std::log(g.mass[i]);
    baseline /= static_cast<double>(support.size());

    // draws uniform over support cell centers
    Rng rng(23);
    std::vector<std::vector<double>> draws;
    for (int k = 0; k < 20000; ++k) {
        std::size_t cell = support[rng.below(support.size())];
        std::size_t i0 = cell / gs.n1, i1 = cell % gs.n1;
        draws.push_back({gs.lo0 + (i0 + 0.5) * g.cell_w0(), gs.lo1 + (i1 + 0.5) * g.cell_w1()});
    }
    double ce = cross_entropy_vs_grid(g, draws);
    CHECK(ce == doctest::Approx(baseline).epsilon(0.01));
}

}  // TEST_SUITE
