#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tracelens/influence.hpp"
#include "tracelens/oracle.hpp"
#include "tracelens/rng.hpp"

using namespace tracelens;

namespace {

Sample make_sample(std::string id, std::vector<double> features, int label,
                   std::string group = "g0") {
    Sample s;
    s.id = std::move(id);
    s.group = std::move(group);
    s.features = std::move(features);
    s.label = label;
    return s;
}

ModelParams linear_params(std::vector<double> w, double b) {
    ModelParams p;
    p.mode = ModelMode::linear;
    p.feature_dim = static_cast<int>(w.size());
    p.w2 = std::move(w);
    p.b2 = b;
    return p;
}

// small separable toy with a duplicated sample pair
Dataset toy_with_twin() {
    std::vector<Sample> samples;
    Rng rng(303);
    for (int i = 0; i < 12; ++i) {
        int label = i % 2;
        double base = label == 1 ? 1.0 : -1.0;
        samples.push_back(make_sample("s" + std::to_string(i),
                                      {base + 0.1 * rng.next_normal(), 0.2 * rng.next_normal()},
                                      label));
    }
    Sample twin = samples[0];
    twin.id = "s0twin";
    samples.push_back(twin);
    return Dataset(std::move(samples));
}

Hyperparams toy_hyper() {
    Hyperparams h;
    h.learning_rate = 0.2;
    h.epochs_max = 20;
    h.patience = 20;
    h.batch_size = 4;
    h.weight_decay = 0.0;
    h.seed = 9;
    return h;
}

// the seeded 64-sample oracle fixture (matches the validate command defaults)
struct OracleFixture {
    Dataset train_ds, dev_ds, test_ds;
    Hyperparams hyper;

    OracleFixture() {
        SynthConfig sc;
        sc.n_groups = 2;
        sc.per_group = 32;
        sc.latent_dim = 8;
        sc.group_shift_scale = 0.3;
        sc.noise_scale = 0.1;
        sc.seed = derive_seed(42, "oracle-fixture");
        sc.split = "train";
        train_ds = generate_synthetic(sc);
        sc.split = "dev";
        sc.per_group = 64;
        dev_ds = generate_synthetic(sc);
        sc.split = "test";
        sc.per_group = 8;
        test_ds = generate_synthetic(sc);

        hyper.learning_rate = 0.01;
        hyper.epochs_max = 4;
        hyper.patience = 4;
        hyper.batch_size = 8;
        hyper.weight_decay = 0.0;
        hyper.seed = derive_seed(42, "oracle-train");
    }
};

}  // namespace

TEST_CASE("loo_influence: removing a duplicated sample barely moves the loss") {
    Dataset toy = toy_with_twin();
    std::vector<Sample> tests{toy[2], toy[3]};
    auto results = loo_influence(toy, toy, toy_hyper(), ModelMode::linear, "s0", tests);
    REQUIRE(results.size() == 2);
    for (const auto& r : results) {
        CHECK(r.train_id == "s0");
        CHECK(std::abs(r.delta) < 0.05);  // the twin still covers the same point
        CHECK(r.delta == r.loss_without - r.loss_with);
    }
}

TEST_CASE("loo_influence: removing the only positive sample hurts positive tests") {
    std::vector<Sample> samples{
        make_sample("n0", {-1.0, 0.1}, 0), make_sample("n1", {-0.9, -0.2}, 0),
        make_sample("n2", {-1.1, 0.0}, 0), make_sample("p0", {1.0, 0.0}, 1)};
    Dataset ds(samples);
    Hyperparams hyper = toy_hyper();
    hyper.batch_size = 2;
    Sample probe = make_sample("probe", {0.9, 0.05}, 1);
    auto results = loo_influence(ds, ds, hyper, ModelMode::linear, "p0", {&probe, 1});
    REQUIRE(results.size() == 1);
    CHECK(results[0].delta > 0.0);  // loss increases once the class is gone
}

TEST_CASE("loo_influence: self-removal does not help itself beyond noise") {
    Dataset toy = toy_with_twin();
    Hyperparams hyper = toy_hyper();
    for (const char* id : {"s1", "s4", "s7"}) {
        Sample self = *toy.find(id);
        auto results = loo_influence(toy, toy, hyper, ModelMode::linear, id, {&self, 1});
        CHECK(results[0].delta >= -0.01);
    }
}

TEST_CASE("loo_influence: deterministic and validates the id") {
    Dataset toy = toy_with_twin();
    std::vector<Sample> tests{toy[5]};
    auto a = loo_influence(toy, toy, toy_hyper(), ModelMode::linear, "s3", tests);
    auto b = loo_influence(toy, toy, toy_hyper(), ModelMode::linear, "s3", tests);
    CHECK(a[0].delta == b[0].delta);
    CHECK(a[0].loss_with == b[0].loss_with);
    CHECK_THROWS_AS(loo_influence(toy, toy, toy_hyper(), ModelMode::linear, "ghost", tests), Error);
}

TEST_CASE("exhaustive_loo is thread-invariant") {
    std::vector<Sample> samples;
    Rng rng(71);
    for (int i = 0; i < 10; ++i)
        samples.push_back(
            make_sample("s" + std::to_string(i), {rng.next_normal(), rng.next_normal()}, i % 2));
    Dataset ds(samples);
    Hyperparams hyper = toy_hyper();
    hyper.epochs_max = 5;
    hyper.patience = 5;
    std::vector<Sample> tests{ds[0], ds[1]};
    LooBattery a = exhaustive_loo(ds, ds, hyper, ModelMode::linear, tests, 1);
    LooBattery b = exhaustive_loo(ds, ds, hyper, ModelMode::linear, tests, 4);
    REQUIRE(a.results.size() == b.results.size());
    for (size_t i = 0; i < a.results.size(); ++i) {
        CHECK(a.results[i].train_id == b.results[i].train_id);
        CHECK(a.results[i].delta == b.results[i].delta);
    }
}

TEST_CASE("hessian_influence: zero training gradient gives zero score") {
    std::vector<Sample> samples{make_sample("a", {1.0, 0.0}, 1),
                                make_sample("b", {-1.0, 0.0}, 0)};
    Dataset ds(samples);
    ModelParams params = linear_params({50.0, 0.0}, 0.0);  // saturated: residuals vanish
    Sample test = make_sample("t", {0.5, 0.5}, 1);
    HessianInfluence h = hessian_influence(params, ds, ds[0], test, 1e-3);
    CHECK(h.score == 0.0);
    CHECK(h.hessian_damping == 1e-3);
}

TEST_CASE("hessian_influence: damping-dominated solve reduces to -g.g") {
    // saturate the model so p(1-p) ~ 0 and H + I ~ I
    std::vector<Sample> samples;
    Rng rng(55);
    for (int i = 0; i < 16; ++i)
        samples.push_back(make_sample("s" + std::to_string(i),
                                      {0.1 * rng.next_normal(), 0.1 * rng.next_normal()}, i % 2));
    Dataset ds(samples);
    ModelParams params = linear_params({0.2, -0.1}, 10.0);
    Sample tr = make_sample("tr", {0.4, -0.2}, 0);
    Sample te = make_sample("te", {-0.3, 0.6}, 1);
    HessianInfluence h = hessian_influence(params, ds, tr, te, 1.0);

    GradientVector g_tr = grad(params, tr), g_te = grad(params, te);
    double dot = 0.0;
    for (size_t i = 0; i < g_tr.values.size(); ++i) dot += g_tr.values[i] * g_te.values[i];
    CHECK(std::abs(h.score - (-dot)) / std::abs(dot) < 5e-3);
}

TEST_CASE("hessian_influence: symmetric in its arguments") {
    OracleFixture fx;
    CheckpointSeries base = train(fx.train_ds, fx.dev_ds, fx.hyper, ModelMode::linear);
    HessianOracle oracle(base.converged().params, fx.train_ds, 1e-3);
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const Sample& a = fx.train_ds[rng.next_below(fx.train_ds.size())];
        const Sample& b = fx.train_ds[rng.next_below(fx.train_ds.size())];
        double ab = oracle.score(a, b).score;
        double ba = oracle.score(b, a).score;
        CHECK(std::abs(ab - ba) < 1e-8);
    }
}

TEST_CASE("hessian_influence: mode and conditioning errors") {
    std::vector<Sample> samples{make_sample("a", {1.0}, 1), make_sample("b", {1.0}, 0, "g1")};
    Dataset ds(samples);
    ModelParams mlp = init_params(ModelMode::mlp, 1, 2, 3);
    Sample t = make_sample("t", {1.0}, 1);
    try {
        hessian_influence(mlp, ds, ds[0], t, 1e-3);
        FAIL("expected unsupported_mode");
    } catch (const Error& e) {
        CHECK(e.kind() == "unsupported_mode");
    }

    // identical feature rows make H rank-1; without damping the solve must fail
    ModelParams lin = linear_params({0.3}, 0.0);
    try {
        hessian_influence(lin, ds, ds[0], t, 0.0);
        FAIL("expected numeric error");
    } catch (const Error& e) {
        CHECK(e.kind() == "numeric");
    }
}

TEST_CASE("rank_agreement: closed forms") {
    std::vector<double> a{1, 2, 3, 4}, b{1, 3, 2, 4}, rev{4, 3, 2, 1};
    RankAgreement same = rank_agreement(a, a);
    CHECK(same.spearman_rho == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.kendall_tau == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rank_agreement(a, rev).spearman_rho == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(rank_agreement(a, b).spearman_rho == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS_AS(rank_agreement(a, std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("oracle chain: tracin_cos tracks exhaustive LOO, Hessian signs match") {
    OracleFixture fx;
    CheckpointSeries base = train(fx.train_ds, fx.dev_ds, fx.hyper, ModelMode::linear);

    std::vector<Sample> tests;
    for (const auto& s : fx.test_ds.samples()) {
        if (confidence(base.converged().params, s) > 0.5) tests.push_back(s);
        if (tests.size() == 5) break;
    }
    REQUIRE(tests.size() == 5);

    LooBattery battery =
        exhaustive_loo(fx.train_ds, fx.dev_ds, fx.hyper, ModelMode::linear, tests, 4);
    REQUIRE(battery.results.size() == fx.train_ds.size() * tests.size());

    InfluenceOptions opts;
    opts.variant = Variant::cosine;
    opts.keep_per_epoch = false;
    Dataset test_subset{tests};
    InfluenceMatrix tracin = influence_matrix(battery.base, fx.train_ds, test_subset, opts);

    auto delta = [&](size_t i, size_t t) { return battery.results[i * tests.size() + t].delta; };

    // first-order scores track the retraining ground truth for every test sample
    for (size_t t = 0; t < tests.size(); ++t) {
        std::vector<double> scores(fx.train_ds.size()), deltas(fx.train_ds.size());
        for (size_t i = 0; i < fx.train_ds.size(); ++i) {
            scores[i] = tracin.total_at(t, i);
            deltas[i] = delta(i, t);
        }
        CHECK(rank_agreement(scores, deltas).spearman_rho > 0.3);
    }

    // the Hessian score predicts a removal delta of -score/N; its sign matches
    // the measured delta on the clearly-affected pairs
    HessianOracle oracle(battery.base.converged().params, fx.train_ds, 1e-3);
    long pairs = 0, agree = 0;
    for (size_t i = 0; i < fx.train_ds.size(); ++i) {
        for (size_t t = 0; t < tests.size(); ++t) {
            double d = delta(i, t);
            if (std::abs(d) <= 1e-4) continue;
            ++pairs;
            if ((d > 0) == (-oracle.score(fx.train_ds[i], tests[t]).score > 0)) ++agree;
        }
    }
    CHECK(pairs > 100);
    CHECK(100.0 * static_cast<double>(agree) / static_cast<double>(pairs) >= 80.0);
}
