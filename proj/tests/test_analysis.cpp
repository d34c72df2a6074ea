#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tracelens/analysis.hpp"
#include "tracelens/rng.hpp"

using namespace tracelens;

namespace {

Sample make_sample(std::string id, std::string group, std::vector<double> features, int label,
                   std::string pair = "") {
    Sample s;
    s.id = std::move(id);
    s.group = std::move(group);
    s.features = std::move(features);
    s.label = label;
    s.pair_id = std::move(pair);
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

TopKSet make_set(std::string test_id, Sign sign, int k,
                 std::vector<std::pair<std::string, double>> entries) {
    TopKSet set;
    set.test_id = std::move(test_id);
    set.sign = sign;
    set.k = k;
    set.entries = std::move(entries);
    return set;
}

// two train groups, pair-linked; used by the share/reinforcing fixtures
Dataset pair_train_set() {
    return Dataset(std::vector<Sample>{
        make_sample("a0", "g0", {1.0, 0.0}, 1, "p0"), make_sample("a1", "g0", {0.9, 0.1}, 0, "p1"),
        make_sample("a2", "g0", {0.8, 0.2}, 1, "p2"), make_sample("b0", "g1", {0.0, 1.0}, 1, "p0"),
        make_sample("b1", "g1", {0.1, 0.9}, 0, "p1"), make_sample("b2", "g1", {0.2, 0.8}, 1, "p2")});
}

Dataset two_group_test_set() {
    return Dataset(std::vector<Sample>{make_sample("q0", "g0", {1.0, 0.0}, 1),
                                       make_sample("q1", "g0", {0.9, 0.0}, 0),
                                       make_sample("r0", "g1", {0.0, 1.0}, 1)});
}

}  // namespace

TEST_CASE("select_test_samples: picks only correct predictions, per group") {
    std::vector<Sample> samples;
    for (int i = 0; i < 8; ++i) {
        int label = i % 2;
        double x = label == 1 ? 1.0 : -1.0;
        samples.push_back(make_sample("s" + std::to_string(i), i < 4 ? "g0" : "g1",
                                      {x + 0.05 * i}, label));
    }
    Dataset ds(samples);
    ModelParams good = linear_params({5.0}, 0.0);
    auto picked = select_test_samples(good, ds, 2, 11);
    CHECK(picked.size() == 4);
    for (const auto& s : picked) CHECK(confidence(good, s) > 0.5);

    // deterministic given the seed
    auto again = select_test_samples(good, ds, 2, 11);
    REQUIRE(again.size() == picked.size());
    for (size_t i = 0; i < picked.size(); ++i) CHECK(again[i].id == picked[i].id);

    // a model that gets everything wrong triggers a shortage with availability
    ModelParams bad = linear_params({-5.0}, 0.0);
    try {
        select_test_samples(bad, ds, 2, 11);
        FAIL("expected shortage");
    } catch (const Error& e) {
        CHECK(e.kind() == "shortage");
        CHECK(std::string(e.what()).find("available") != std::string::npos);
    }
}

TEST_CASE("group_contribution: shares and counts") {
    Dataset train = pair_train_set();
    Dataset tests = two_group_test_set();

    // every retrieved id from g0
    std::vector<TopKSet> own{make_set("q0", Sign::positive, 2, {{"a0", 1.0}, {"a1", 0.9}}),
                             make_set("q1", Sign::positive, 2, {{"a1", 1.0}, {"a2", 0.9}})};
    GroupShareReport r = group_contribution(own, train, tests);
    CHECK(r.test_group == "g0");
    CHECK(r.share_of("g0") == 100.0);
    CHECK(r.share_of("g1") == 0.0);
    CHECK(r.total == 4);

    // 60/40 split in a constructed pool
    std::vector<TopKSet> mixed{
        make_set("q0", Sign::positive, 5,
                 {{"a0", 5}, {"a1", 4}, {"a2", 3}, {"b0", 2}, {"b1", 1}})};
    GroupShareReport m = group_contribution(mixed, train, tests);
    CHECK(m.share_of("g0") == doctest::Approx(60.0));
    CHECK(m.share_of("g1") == doctest::Approx(40.0));
    double total_share = 0;
    for (double s : m.shares) total_share += s;
    CHECK(std::abs(total_share - 100.0) < 0.01);

    // pooling is order-invariant
    std::vector<TopKSet> swapped{own[1], own[0]};
    GroupShareReport r2 = group_contribution(swapped, train, tests);
    CHECK(r2.counts == r.counts);

    // unknown train id is an integrity error
    std::vector<TopKSet> ghost{make_set("q0", Sign::positive, 1, {{"zz", 1.0}})};
    try {
        group_contribution(ghost, train, tests);
        FAIL("expected integrity");
    } catch (const Error& e) {
        CHECK(e.kind() == "integrity");
    }

    // mixed k across sets is a usage error
    std::vector<TopKSet> bad{own[0], make_set("q1", Sign::positive, 3, {{"a0", 1.0}})};
    CHECK_THROWS_AS(group_contribution(bad, train, tests), Error);
}

TEST_CASE("average_influence_table: single group and balanced means") {
    Dataset train(std::vector<Sample>{make_sample("a", "g0", {1.0}, 0),
                                      make_sample("b", "g0", {2.0}, 1)});
    Dataset tests(std::vector<Sample>{make_sample("q", "g0", {1.0}, 1)});
    InfluenceMatrix m;
    m.test_ids = {"q"};
    m.train_ids = {"a", "b"};
    m.epochs = {1};
    m.totals = {2.0, 4.0};
    AvgInfluenceTable t = average_influence_table(m, train, tests);
    REQUIRE(t.test_groups.size() == 1);
    REQUIRE(t.train_groups.size() == 1);
    CHECK(t.at(0, 0) == doctest::Approx(3.0));  // global mean

    // balanced 2x2: mean of cells equals the global mean
    Dataset train2 = pair_train_set();
    Dataset tests2 = two_group_test_set();
    InfluenceMatrix m2;
    m2.test_ids = {"q0", "q1", "r0"};
    m2.train_ids = {"a0", "a1", "a2", "b0", "b1", "b2"};
    m2.epochs = {1};
    m2.totals.resize(18);
    double global = 0.0;
    for (size_t i = 0; i < m2.totals.size(); ++i) {
        m2.totals[i] = static_cast<double>(i) * 0.25 - 2.0;
        global += m2.totals[i];
    }
    global /= 18.0;
    AvgInfluenceTable t2 = average_influence_table(m2, train2, tests2);
    // test groups are unbalanced (2 vs 1 test samples) but train groups are
    // balanced, so weight cells by their test-group sizes
    double weighted = (t2.at(0, 0) + t2.at(0, 1)) * 2.0 / 6.0 + (t2.at(1, 0) + t2.at(1, 1)) / 6.0;
    CHECK(weighted == doctest::Approx(global).epsilon(1e-12));
}

TEST_CASE("reinforcing_share: pure cases and the unsupported error") {
    Dataset train = pair_train_set();
    Dataset tests = two_group_test_set();

    // other-group entries all share a pair with an own-group entry
    std::vector<TopKSet> reinforcing{
        make_set("q0", Sign::positive, 4, {{"a0", 4}, {"a1", 3}, {"b0", 2}, {"b1", 1}})};
    ReinforcingReport r = reinforcing_share(reinforcing, train, tests, "g0");
    CHECK(r.reinforcing_pct == 100.0);
    CHECK(r.complementary_pct == 0.0);
    CHECK(r.other_entries == 2);

    // disjoint pairs: purely complementary
    std::vector<TopKSet> complementary{
        make_set("q0", Sign::positive, 2, {{"a0", 2}, {"b2", 1}})};
    ReinforcingReport c = reinforcing_share(complementary, train, tests, "g0");
    CHECK(c.reinforcing_pct == 0.0);
    CHECK(c.complementary_pct == 100.0);

    // mixed case sums to 100
    std::vector<TopKSet> mixed{
        make_set("q0", Sign::positive, 4, {{"a0", 4}, {"b0", 3}, {"b2", 2}})};
    ReinforcingReport mx = reinforcing_share(mixed, train, tests, "g0");
    CHECK(mx.reinforcing_pct == doctest::Approx(50.0));
    CHECK(mx.reinforcing_pct + mx.complementary_pct == doctest::Approx(100.0));

    Dataset no_pairs(std::vector<Sample>{make_sample("a", "g0", {1.0}, 0),
                                         make_sample("b", "g1", {2.0}, 1)});
    try {
        reinforcing_share(reinforcing, no_pairs, tests, "g0");
        FAIL("expected unsupported");
    } catch (const Error& e) {
        CHECK(e.kind() == "unsupported");
    }
}

TEST_CASE("topk_unions: monotone in k, sorted and unique") {
    InfluenceMatrix m;
    m.test_ids = {"q0", "q1"};
    m.train_ids = {"t0", "t1", "t2", "t3"};
    m.epochs = {1};
    m.totals = {4.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 4.0};
    std::vector<Sample> tests{make_sample("q0", "g0", {1.0}, 1), make_sample("q1", "g0", {1.0}, 1)};
    auto unions = topk_unions(m, tests, {1, 2, 4}, Sign::positive);
    CHECK(unions[1].size() == 2);  // t0 and t3
    CHECK(unions[2].size() == 4);
    CHECK(unions[4].size() == 4);
    CHECK(std::is_sorted(unions[2].begin(), unions[2].end()));
}

TEST_CASE("removal_validation: empty removal is exactly the baseline") {
    std::vector<Sample> samples;
    Rng rng(17);
    for (int i = 0; i < 16; ++i) {
        int label = i % 2;
        double base = label == 1 ? 1.0 : -1.0;
        samples.push_back(make_sample("s" + std::to_string(i), i < 8 ? "g0" : "g1",
                                      {base + 0.2 * rng.next_normal(), rng.next_normal() * 0.1},
                                      label));
    }
    Dataset ds(samples);
    Hyperparams hyper;
    hyper.learning_rate = 0.1;
    hyper.epochs_max = 5;
    hyper.patience = 5;
    hyper.batch_size = 4;
    hyper.seed = 23;
    CheckpointSeries base = train(ds, ds, hyper, ModelMode::linear);
    std::vector<Sample> tests{ds[0], ds[1], ds[2]};

    std::map<int, std::vector<std::string>> unions{{0, {}}};
    ValidationCurve curve = removal_validation(ds, ds, hyper, ModelMode::linear,
                                               base.converged().params, tests, unions,
                                               Sign::positive, 31);
    REQUIRE(curve.points.size() == 1);
    CHECK(curve.points[0].removed == 0);
    CHECK(curve.points[0].mean_pct_change == 0.0);
    for (double v : curve.points[0].per_test_pct) CHECK(v == 0.0);

    // removing every sample of one class aborts loudly
    std::vector<std::string> ones;
    for (const auto& s : ds.samples())
        if (s.label == 1) ones.push_back(s.id);
    std::map<int, std::vector<std::string>> degenerate{{1, ones}};
    try {
        removal_validation(ds, ds, hyper, ModelMode::linear, base.converged().params, tests,
                           degenerate, Sign::positive, 31);
        FAIL("expected degenerate_removal");
    } catch (const Error& e) {
        CHECK(e.kind() == "degenerate_removal");
    }

    // deterministic given the seed
    std::map<int, std::vector<std::string>> some{{2, {ds[0].id, ds[5].id}}};
    ValidationCurve c1 = removal_validation(ds, ds, hyper, ModelMode::linear,
                                            base.converged().params, tests, some, Sign::positive, 7);
    ValidationCurve c2 = removal_validation(ds, ds, hyper, ModelMode::linear,
                                            base.converged().params, tests, some, Sign::positive, 7);
    CHECK(c1.points[0].mean_pct_change == c2.points[0].mean_pct_change);
    CHECK(c1.points[0].random_mean_pct_change == c2.points[0].random_mean_pct_change);
}

TEST_CASE("epoch_dynamics: identical slices, rotation, single epoch") {
    Dataset train = pair_train_set();
    Dataset tests = two_group_test_set();

    InfluenceMatrix m;
    m.test_ids = {"q0", "q1", "r0"};
    m.train_ids = {"a0", "a1", "a2", "b0", "b1", "b2"};
    m.epochs = {1, 2};
    m.variant = Variant::cosine;
    std::vector<double> slice{0.9, 0.8, 0.7, 0.3, 0.2, 0.1,   // q0 favours g0
                              0.8, 0.7, 0.9, 0.2, 0.1, 0.3,   // q1 favours g0
                              0.1, 0.2, 0.3, 0.9, 0.8, 0.7};  // r0 favours g1
    m.per_epoch = slice;
    m.per_epoch.insert(m.per_epoch.end(), slice.begin(), slice.end());
    m.totals.assign(18, 0.0);
    for (size_t c = 0; c < 18; ++c) m.totals[c] = slice[c] * 2.0;

    EpochDynamicsReport rep = epoch_dynamics(m, train, tests, 2);
    REQUIRE(rep.epochs.size() == 2);
    CHECK(rep.epochs[0].share_matrix == rep.epochs[1].share_matrix);
    CHECK(rep.epochs[0].own_share.at("g0") == 100.0);
    CHECK(rep.epochs[0].own_share.at("g1") == 100.0);
    REQUIRE(rep.wilcoxon.size() == 1);
    CHECK(rep.wilcoxon[0].p_value == 1.0);  // all differences zero

    // shares move when the ranking rotates across epochs
    InfluenceMatrix rot = m;
    for (size_t c = 0; c < 18; ++c) rot.per_epoch[18 + c] = 1.0 - slice[c];
    for (size_t c = 0; c < 18; ++c) rot.totals[c] = rot.per_epoch[c] + rot.per_epoch[18 + c];
    EpochDynamicsReport rrep = epoch_dynamics(rot, train, tests, 2);
    CHECK(rrep.epochs[0].own_share.at("g0") == 100.0);
    CHECK(rrep.epochs[1].own_share.at("g0") == 0.0);
    CHECK(rrep.wilcoxon[0].p_value < 1.0);

    // single-epoch matrix: no paired tests
    InfluenceMatrix single = m;
    single.epochs = {1};
    single.per_epoch = slice;
    single.totals = slice;
    EpochDynamicsReport srep = epoch_dynamics(single, train, tests, 2);
    CHECK(srep.epochs.size() == 1);
    CHECK(srep.wilcoxon.empty());
}

TEST_CASE("zero_shot_compare: identity, disjoint, errors") {
    // five pairs across two groups so recovery cases stay disjoint
    std::vector<Sample> samples;
    for (int p = 0; p < 5; ++p) {
        std::string pair = "p" + std::to_string(p);
        samples.push_back(make_sample("a" + std::to_string(p), "g0", {1.0, 0.0}, p % 2, pair));
        samples.push_back(make_sample("b" + std::to_string(p), "g1", {0.0, 1.0}, p % 2, pair));
    }
    Dataset train(samples);
    Dataset tests = two_group_test_set();

    // full model: own-group picks a0 (p0), a1 (p1); other-group picks b2, b3
    std::vector<TopKSet> full{
        make_set("q0", Sign::positive, 4, {{"a0", 4}, {"a1", 3}, {"b2", 2}, {"b3", 1}})};

    ZeroShotReport self = zero_shot_compare(full, full, train, tests, "g0");
    CHECK(self.translation_recovery_pct == 100.0);  // own pairs recover themselves
    CHECK(self.verbatim_recovery_pct == 100.0);
    CHECK(self.zs_shares.total == 4);

    // zero-shot picks an unrelated sample: nothing is recovered
    std::vector<TopKSet> zs{make_set("q0", Sign::positive, 4, {{"b4", 9}})};
    ZeroShotReport none = zero_shot_compare(full, zs, train, tests, "g0");
    CHECK(none.translation_recovery_pct == 0.0);
    CHECK(none.verbatim_recovery_pct == 0.0);

    // partial: b0 is the translation of a0; b2 is recovered verbatim
    std::vector<TopKSet> partial{make_set("q0", Sign::positive, 4, {{"b0", 5}, {"b2", 4}})};
    ZeroShotReport part = zero_shot_compare(full, partial, train, tests, "g0");
    CHECK(part.translation_recovery_pct == doctest::Approx(50.0));  // p0 of {p0, p1}
    CHECK(part.verbatim_recovery_pct == doctest::Approx(50.0));     // b2 of {b2, b3}

    std::vector<TopKSet> wrong_group{make_set("r0", Sign::positive, 4, {{"a0", 1}})};
    CHECK_THROWS_AS(zero_shot_compare(wrong_group, wrong_group, train, tests, "g0"), Error);
    std::vector<TopKSet> other_test{make_set("q1", Sign::positive, 4, {{"a0", 1}})};
    CHECK_THROWS_AS(zero_shot_compare(full, other_test, train, tests, "g0"), Error);
}

TEST_CASE("imbalance_sweep: baseline point plus oversampled retrains") {
    SynthConfig sc;
    sc.n_groups = 2;
    sc.per_group = 30;
    sc.latent_dim = 6;
    sc.group_shift_scale = 0.3;
    sc.noise_scale = 0.1;
    sc.seed = 19;
    Dataset train_ds = generate_synthetic(sc);
    sc.split = "dev";
    Dataset dev_ds = generate_synthetic(sc);
    sc.split = "test";
    sc.per_group = 6;
    Dataset test_ds = generate_synthetic(sc);

    Hyperparams hyper;
    hyper.learning_rate = 0.05;
    hyper.epochs_max = 4;
    hyper.patience = 4;
    hyper.batch_size = 8;
    hyper.seed = 3;
    CheckpointSeries base = train(train_ds, dev_ds, hyper, ModelMode::linear);

    auto tests = select_test_samples(base.converged().params, test_ds, 3, 5);
    std::vector<Sample> g0_tests;
    for (const auto& s : tests)
        if (s.group == "g0") g0_tests.push_back(s);
    REQUIRE(g0_tests.size() == 3);

    InfluenceOptions opts;
    opts.keep_per_epoch = false;
    InfluenceMatrix baseline = influence_matrix(base, train_ds, Dataset{g0_tests}, opts);

    ImbalanceReport rep = imbalance_sweep(train_ds, dev_ds, hyper, ModelMode::linear, "g0", {50},
                                          5, g0_tests, baseline, opts, 29);
    REQUIRE(rep.points.size() == 2);
    CHECK(rep.points[0].pct == 0);
    CHECK(rep.points[0].train_size == train_ds.size());
    CHECK(rep.points[1].pct == 50);
    CHECK(rep.points[1].train_size == train_ds.size() + 15);
    for (const auto& p : rep.points) {
        CHECK(p.own_pos_share >= 0.0);
        CHECK(p.own_pos_share <= 100.0);
    }

    CHECK_THROWS_AS(imbalance_sweep(train_ds, dev_ds, hyper, ModelMode::linear, "zz", {50}, 5,
                                    g0_tests, baseline, opts, 29),
                    Error);
}
