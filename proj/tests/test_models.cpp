#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fairlong/models.hpp"
#include "fairlong/rng.hpp"
#include "fairlong/tensor.hpp"

using namespace fairlong;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("MLP with all-zero parameters outputs 0.5 everywhere") {
    MlpClassifierParams m(3, 4, 5);  // zero-filled by construction
    Tape t;
    Rng rng(3);
    Tensor s = t.constant(6, 1, {0, 1, 0, 1, 1, 0});
    Tensor x = t.constant(6, 3, randn(18, rng));
    Tensor p = mlp_forward(t, m, s, x, false);
    for (double v : p.value()) CHECK(v == 0.5);
}

TEST_CASE("MLP output stays strictly inside (0,1)") {
    MlpClassifierParams m(4, 8, 8);
    Rng rng(5);
    m.init(rng);
    Tape t;
    const std::size_t n = 1000;
    std::vector<double> s(n);
    for (double& v : s) v = rng.bernoulli(0.5);
    Tensor p = mlp_forward(t, m, t.constant(n, 1, s), t.constant(n, 4, randn(n * 4, rng)), false);
    for (double v : p.value()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("MLP gradient w.r.t. x matches finite differences") {
    MlpClassifierParams m(3, 6, 6);
    Rng rng(7);
    m.init(rng);
    auto f = [&](Tape& t, const Tensor& x) {
        Tensor s = t.constant(2, 1, {0, 1});
        return t.sum(mlp_forward(t, m, s, x, false));
    };
    CHECK(finite_difference_check(f, 2, 3, randn(6, rng), 1e-5) < 1e-4);
}

TEST_CASE("MLP rejects mismatched shapes") {
    MlpClassifierParams m(3, 4, 4);
    Tape t;
    Tensor s = t.constant(2, 1, {0, 1});
    Tensor x_bad = t.constant(2, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(mlp_forward(t, m, s, x_bad, false), ShapeError);
    Tensor s_bad = t.constant(3, 1, {0, 1, 0});
    Tensor x = t.constant(2, 3, std::vector<double>(6, 0.1));
    CHECK_THROWS_AS(mlp_forward(t, m, s_bad, x, false), ShapeError);
}

TEST_CASE("GRU cell: zero input, state and params gives zero state") {
    GruCellParams g(3, 4);
    Tape t;
    Tensor x = t.full(2, 3, 0.0);
    Tensor h = t.full(2, 4, 0.0);
    Tensor h2 = gru_cell(t, g, x, h, false);
    for (double v : h2.value()) CHECK(v == 0.0);
}

TEST_CASE("GRU cell: saturated update gate keeps previous state") {
    GruCellParams g(2, 3);
    Rng rng(9);
    g.init(rng);
    for (double& v : g.bz.value) v = 60.0;  // z == 1 to machine precision
    Tape t;
    std::vector<double> h0 = {0.3, -0.4, 0.9, 1.2, -0.7, 0.1};
    Tensor h = t.constant(2, 3, h0);
    Tensor x = t.constant(2, 2, {0.5, -0.5, 1.0, 0.2});
    Tensor h2 = gru_cell(t, g, x, h, false);
    for (std::size_t i = 0; i < h0.size(); ++i)
        CHECK(std::fabs(h2.value()[i] - h0[i]) < 1e-6);
}

TEST_CASE("GRU cell gradient matches finite differences") {
    GruCellParams g(3, 5);
    Rng rng(11);
    g.init(rng);
    std::vector<double> h0(2 * 5);
    for (double& v : h0) v = rng.normal();
    auto f = [&](Tape& t, const Tensor& x) {
        return t.sum(gru_cell(t, g, x, t.constant(2, 5, h0), false));
    };
    std::vector<double> x0(2 * 3);
    for (double& v : x0) v = rng.normal();
    CHECK(finite_difference_check(f, 2, 3, x0, 1e-5) < 1e-4);
}

TEST_CASE("generator rollout with horizon 1 skips the recurrence") {
    GeneratorParams gen(2, 3, 4);
    Rng rng(13);
    gen.init(rng);
    MlpClassifierParams clf(2, 4, 4);
    clf.init(rng);
    Tape t;
    Tensor s = t.constant(3, 1, {0, 1, 1});
    std::vector<double> x1v = {0.1, 0.2, -0.5, 0.4, 1.0, -1.0};
    Tensor x1 = t.constant(3, 2, x1v);
    Rollout r = generator_rollout(t, gen, make_decision_fn(clf, false), s, x1, {},
                                  DecisionMode::Soft, nullptr, false);
    REQUIRE(r.x.size() == 1);
    REQUIRE(r.y.size() == 1);
    CHECK(r.x[0].value() == x1v);
    // the decision must equal a standalone classifier call on (s, x1)
    Tensor direct = mlp_forward(t, clf, s, x1, false);
    CHECK(r.y[0].value() == direct.value());
    // no GRU state was materialized: the generator params never got bound
    CHECK_FALSE(t.is_bound(gen.gru1.wz));
}

TEST_CASE("generator rollout is deterministic for a fixed seed") {
    GeneratorParams gen(2, 2, 4);
    MlpClassifierParams clf(2, 4, 4);
    Rng init(17);
    gen.init(init);
    clf.init(init);

    auto run = [&](std::uint64_t seed) {
        Tape t;
        Rng noise_rng(seed), dec_rng(seed + 1);
        Tensor s = t.constant(4, 1, {0, 1, 0, 1});
        Tensor x1 = t.constant(4, 2, {0.1, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4});
        std::vector<Tensor> noise;
        for (int k = 0; k < 3; ++k) {
            std::vector<double> z(4 * 2);
            for (double& v : z) v = noise_rng.normal();
            noise.push_back(t.constant(4, 2, std::move(z)));
        }
        Rollout r = generator_rollout(t, gen, make_decision_fn(clf, false), s, x1, noise,
                                      DecisionMode::Sampled, &dec_rng, false);
        std::vector<double> flat;
        for (const auto& xt : r.x) flat.insert(flat.end(), xt.value().begin(), xt.value().end());
        for (const auto& yt : r.y) flat.insert(flat.end(), yt.value().begin(), yt.value().end());
        return flat;
    };
    CHECK(run(100) == run(100));
    CHECK(run(100) != run(101));
}

TEST_CASE("soft intervention with a parameter-identical copy is the identity") {
    GeneratorParams gen(3, 2, 5);
    MlpClassifierParams clf(3, 4, 4);
    Rng init(19);
    gen.init(init);
    clf.init(init);
    MlpClassifierParams copy = clf;  // value-identical, distinct storage

    for (std::size_t horizon = 1; horizon <= 5; ++horizon) {
        auto run = [&](MlpClassifierParams& model) {
            Tape t;
            Rng noise_rng(71);
            Tensor s = t.constant(3, 1, {0, 1, 1});
            Tensor x1 = t.constant(3, 3, {0.2, -0.4, 0.6, 1.0, 0.0, -1.0, 0.5, 0.5, 0.5});
            std::vector<Tensor> noise;
            for (std::size_t k = 0; k + 1 < horizon; ++k) {
                std::vector<double> z(3 * 2);
                for (double& v : z) v = noise_rng.normal();
                noise.push_back(t.constant(3, 2, std::move(z)));
            }
            Rollout r = generator_rollout(t, gen, make_decision_fn(model, false), s, x1, noise,
                                          DecisionMode::Soft, nullptr, false);
            std::vector<double> flat;
            for (const auto& xt : r.x)
                flat.insert(flat.end(), xt.value().begin(), xt.value().end());
            for (const auto& yt : r.y)
                flat.insert(flat.end(), yt.value().begin(), yt.value().end());
            return flat;
        };
        CHECK(run(clf) == run(copy));
    }
}

TEST_CASE("generator rollout validates noise shape and rng presence") {
    GeneratorParams gen(2, 2, 3);
    MlpClassifierParams clf(2, 3, 3);
    Tape t;
    Tensor s = t.constant(2, 1, {0, 1});
    Tensor x1 = t.constant(2, 2, {0.1, 0.2, 0.3, 0.4});
    std::vector<Tensor> bad_noise = {t.constant(2, 3, std::vector<double>(6, 0.0))};
    CHECK_THROWS_AS(generator_rollout(t, gen, make_decision_fn(clf, false), s, x1, bad_noise,
                                      DecisionMode::Soft, nullptr, false),
                    ShapeError);
    std::vector<Tensor> noise = {t.constant(2, 2, std::vector<double>(4, 0.0))};
    CHECK_THROWS_AS(generator_rollout(t, gen, make_decision_fn(clf, false), s, x1, noise,
                                      DecisionMode::Sampled, nullptr, false),
                    ValidationError);
}

TEST_CASE("soft generator rollout gradient w.r.t. x1 matches finite differences") {
    GeneratorParams gen(2, 2, 3);
    MlpClassifierParams clf(2, 3, 3);
    Rng init(23);
    gen.init(init);
    clf.init(init);
    std::vector<double> z1(2 * 2), z2(2 * 2);
    for (double& v : z1) v = init.normal();
    for (double& v : z2) v = init.normal();
    auto f = [&](Tape& t, const Tensor& x1) {
        Tensor s = t.constant(2, 1, {0, 1});
        std::vector<Tensor> noise = {t.constant(2, 2, z1), t.constant(2, 2, z2)};
        Rollout r = generator_rollout(t, gen, make_decision_fn(clf, false), s, x1, noise,
                                      DecisionMode::Soft, nullptr, false);
        Tensor acc = t.scalar(0.0);
        for (const auto& xt : r.x) acc = t.add(acc, t.sum(xt));
        for (const auto& yt : r.y) acc = t.add(acc, t.sum(yt));
        return acc;
    };
    std::vector<double> x0(2 * 2);
    for (double& v : x0) v = init.normal();
    CHECK(finite_difference_check(f, 2, 2, x0, 1e-5) < 1e-4);
}

TEST_CASE("discriminator with zero parameters outputs 0.5 at every step") {
    DiscriminatorParams disc(3, 4);
    Tape t;
    Rng rng(29);
    std::vector<Tensor> series;
    for (int k = 0; k < 4; ++k) series.push_back(t.constant(2, 3, randn(6, rng)));
    auto probs = discriminator_forward(t, disc, series, false);
    REQUIRE(probs.size() == 4);
    for (const auto& p : probs)
        for (double v : p.value()) CHECK(v == 0.5);
}

TEST_CASE("discriminator after init still outputs 0.5 (zeroed final layer)") {
    DiscriminatorParams disc(2, 4);
    Rng rng(31);
    disc.init(rng);
    Tape t;
    std::vector<Tensor> series = {t.constant(3, 2, randn(6, rng)),
                                  t.constant(3, 2, randn(6, rng))};
    for (const auto& p : discriminator_forward(t, disc, series, false))
        for (double v : p.value()) CHECK(v == 0.5);
}

TEST_CASE("discriminator output length equals input horizon") {
    DiscriminatorParams disc(2, 3);
    Rng rng(37);
    disc.init(rng);
    for (std::size_t horizon = 1; horizon <= 10; ++horizon) {
        Tape t;
        std::vector<Tensor> series;
        for (std::size_t k = 0; k < horizon; ++k)
            series.push_back(t.constant(2, 2, randn(4, rng)));
        CHECK(discriminator_forward(t, disc, series, false).size() == horizon);
    }
}

TEST_CASE("discriminator gradient w.r.t. the series matches finite differences") {
    DiscriminatorParams disc(2, 3);
    Rng rng(41);
    disc.init(rng);
    for (double& v : disc.out_w.value) v = rng.normal();
    disc.out_b.value[0] = rng.normal();
    std::vector<double> step2(2 * 2);
    for (double& v : step2) v = rng.normal();
    auto f = [&](Tape& t, const Tensor& x) {
        std::vector<Tensor> series = {x, t.constant(2, 2, step2)};
        Tensor acc = t.scalar(0.0);
        for (const auto& p : discriminator_forward(t, disc, series, false))
            acc = t.add(acc, t.sum(p));
        return acc;
    };
    std::vector<double> x0(2 * 2);
    for (double& v : x0) v = rng.normal();
    CHECK(finite_difference_check(f, 2, 2, x0, 1e-5) < 1e-4);
}
