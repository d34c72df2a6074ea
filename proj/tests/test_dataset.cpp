#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "tracelens/dataset.hpp"

using namespace tracelens;
namespace fs = std::filesystem;

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

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("load_dataset: minimal well-formed file") {
    TempDir dir("tracelens_dataset_t1");
    write_lines(dir.file("d.jsonl"),
                {R"({"id":"a","group":"g0","pair_id":null,"label":0,"features":[1.0,0.0]})",
                 R"({"id":"b","group":"g0","pair_id":null,"label":1,"features":[0.0,1.0]})"});
    Dataset ds = load_dataset(dir.file("d.jsonl"));
    CHECK(ds.size() == 2);
    CHECK(ds.groups() == std::vector<std::string>{"g0"});
    CHECK(ds.feature_dim() == 2);
    CHECK_FALSE(ds.parallel());  // no pair ids
}

TEST_CASE("load_dataset: repeated pair_id within a group clears the parallel flag") {
    TempDir dir("tracelens_dataset_t2");
    write_lines(dir.file("d.jsonl"),
                {R"({"id":"a","group":"de","pair_id":"p1","label":0,"features":[1.0]})",
                 R"({"id":"b","group":"de","pair_id":"p1","label":0,"features":[2.0]})",
                 R"({"id":"c","group":"fr","pair_id":"p1","label":0,"features":[3.0]})"});
    Dataset ds = load_dataset(dir.file("d.jsonl"));
    CHECK_FALSE(ds.parallel());
}

TEST_CASE("load_dataset: 5 groups x 2 pair ids, one sample each, is parallel") {
    TempDir dir("tracelens_dataset_t3");
    std::vector<std::string> lines;
    for (int g = 0; g < 5; ++g)
        for (int p = 0; p < 2; ++p) {
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          R"({"id":"g%d_p%d","group":"g%d","pair_id":"p%d","label":%d,"features":[%d.0]})",
                          g, p, g, p, p, g);
            lines.push_back(buf);
        }
    write_lines(dir.file("d.jsonl"), lines);
    Dataset ds = load_dataset(dir.file("d.jsonl"));
    CHECK(ds.parallel());
    CHECK(ds.groups().size() == 5);
    CHECK(ds.size() == 10);
}

TEST_CASE("load_dataset: errors carry line numbers and kinds") {
    TempDir dir("tracelens_dataset_t4");
    write_lines(dir.file("bad.jsonl"),
                {R"({"id":"a","group":"g0","label":0,"features":[1.0]})", R"(not json)"});
    try {
        load_dataset(dir.file("bad.jsonl"));
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == "parse");
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    write_lines(dir.file("dup.jsonl"),
                {R"({"id":"a","group":"g0","label":0,"features":[1.0]})",
                 R"({"id":"a","group":"g0","label":1,"features":[2.0]})"});
    try {
        load_dataset(dir.file("dup.jsonl"));
        FAIL("expected integrity error");
    } catch (const Error& e) {
        CHECK(e.kind() == "integrity");
    }

    write_lines(dir.file("both.jsonl"),
                {R"({"id":"a","group":"g0","label":0,"features":[1.0],"text":"hi"})"});
    CHECK_THROWS_AS(load_dataset(dir.file("both.jsonl")), Error);
}

TEST_CASE("load_dataset: text lines are featurized at load") {
    TempDir dir("tracelens_dataset_t5");
    write_lines(dir.file("t.jsonl"),
                {R"({"id":"a","group":"g0","pair_id":null,"label":1,"text":"hello world"})"});
    Dataset ds = load_dataset(dir.file("t.jsonl"), 32, 9);
    CHECK(ds.feature_dim() == 32);
    CHECK(ds[0].features == featurize("hello world", 32, 9));
    // dims are mandatory when text is present
    CHECK_THROWS_AS(load_dataset(dir.file("t.jsonl")), Error);
}

TEST_CASE("featurize: empty and short strings give the zero vector") {
    auto v = featurize("", 64, 0);
    CHECK(v.size() == 64);
    for (double x : v) CHECK(x == 0.0);
    auto w = featurize("ab", 64, 0);
    for (double x : w) CHECK(x == 0.0);
}

TEST_CASE("featurize: deterministic") {
    CHECK(featurize("abc", 64, 0) == featurize("abc", 64, 0));
    CHECK(featurize("abc", 64, 0) != featurize("abc", 64, 1));
}

TEST_CASE("featurize: abcd has two distinct trigrams and unit norm") {
    // "abcd" -> trigrams "abc", "bcd"; at dims=64/seed=0 they land in
    // different buckets
    auto v = featurize("abcd", 64, 0);
    int nonzero = 0;
    double norm_sq = 0.0;
    for (double x : v) {
        if (x != 0.0) ++nonzero;
        norm_sq += x * x;
    }
    CHECK(nonzero == 2);
    CHECK(std::abs(std::sqrt(norm_sq) - 1.0) < 1e-9);
}

TEST_CASE("save/load round trip preserves samples") {
    TempDir dir("tracelens_dataset_t6");
    SynthConfig cfg;
    cfg.n_groups = 2;
    cfg.per_group = 4;
    cfg.latent_dim = 3;
    cfg.seed = 11;
    Dataset ds = generate_synthetic(cfg);
    save_dataset(ds, dir.file("round.jsonl"));
    Dataset back = load_dataset(dir.file("round.jsonl"));
    REQUIRE(back.size() == ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        CHECK(back[i].id == ds[i].id);
        CHECK(back[i].pair_id == ds[i].pair_id);
        CHECK(back[i].label == ds[i].label);
        CHECK(back[i].features == ds[i].features);  // doubles survive JSON exactly
    }
    CHECK(back.fingerprint() == ds.fingerprint());
}

TEST_CASE("generate_synthetic: parallel structure and labels") {
    SynthConfig cfg;
    cfg.n_groups = 2;
    cfg.per_group = 3;
    cfg.latent_dim = 4;
    cfg.seed = 5;
    Dataset ds = generate_synthetic(cfg);
    CHECK(ds.size() == 6);
    CHECK(ds.parallel());

    std::set<std::string> pairs;
    for (const auto& s : ds.samples()) pairs.insert(s.pair_id);
    CHECK(pairs.size() == 3);
    // labels equal within a pair across groups
    for (const auto& a : ds.samples())
        for (const auto& b : ds.samples())
            if (a.pair_id == b.pair_id) CHECK(a.label == b.label);
}

TEST_CASE("generate_synthetic: zero noise and shift make pairs identical") {
    SynthConfig cfg;
    cfg.n_groups = 3;
    cfg.per_group = 2;
    cfg.latent_dim = 5;
    cfg.group_shift_scale = 0.0;
    cfg.noise_scale = 0.0;
    cfg.seed = 2;
    Dataset ds = generate_synthetic(cfg);
    for (const auto& a : ds.samples())
        for (const auto& b : ds.samples())
            if (a.pair_id == b.pair_id) CHECK(a.features == b.features);
}

TEST_CASE("generate_synthetic: label balance per group at scale") {
    SynthConfig cfg;
    cfg.n_groups = 5;
    cfg.per_group = 400;
    cfg.latent_dim = 16;
    cfg.seed = 7;
    Dataset ds = generate_synthetic(cfg);
    CHECK(ds.size() == 2000);
    for (const auto& g : ds.groups()) {
        int ones = 0, total = 0;
        for (const auto& s : ds.samples())
            if (s.group == g) {
                ones += s.label;
                ++total;
            }
        double frac = static_cast<double>(ones) / total;
        CHECK(frac >= 0.45);
        CHECK(frac <= 0.55);
    }
}

TEST_CASE("generate_synthetic: deterministic given seed, splits share group structure") {
    SynthConfig cfg;
    cfg.n_groups = 2;
    cfg.per_group = 8;
    cfg.latent_dim = 4;
    cfg.seed = 3;
    Dataset a = generate_synthetic(cfg);
    Dataset b = generate_synthetic(cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].features == b[i].features);

    cfg.split = "test";
    Dataset t = generate_synthetic(cfg);
    CHECK(t[0].id != a[0].id);  // ids carry the split
    CHECK(t.groups() == a.groups());
}

TEST_CASE("rebalance: counts, ids, purity") {
    SynthConfig cfg;
    cfg.n_groups = 2;
    cfg.per_group = 4;
    cfg.latent_dim = 3;
    cfg.seed = 13;
    Dataset ds = generate_synthetic(cfg);

    Dataset r25 = rebalance(ds, "g0", 25);
    CHECK(r25.group_count("g0") == 5);  // ceil(0.25 * 4) = 1 duplicate
    CHECK(r25.group_count("g1") == 4);
    CHECK(ds.group_count("g0") == 4);  // input untouched

    Dataset r100 = rebalance(ds, "g0", 100);
    CHECK(r100.group_count("g0") == 8);

    // duplicates keep pair ids but get fresh unique ids
    std::set<std::string> original_ids;
    for (const auto& s : ds.samples()) original_ids.insert(s.id);
    int dups = 0;
    for (const auto& s : r100.samples())
        if (!original_ids.count(s.id)) {
            ++dups;
            CHECK_FALSE(s.pair_id.empty());
        }
    CHECK(dups == 4);

    CHECK_THROWS_AS(rebalance(ds, "nope", 50), Error);
    CHECK_THROWS_AS(rebalance(ds, "g0", 0), Error);
}

TEST_CASE("exclude_group: removal and purity") {
    SynthConfig cfg;
    cfg.n_groups = 5;
    cfg.per_group = 3;
    cfg.latent_dim = 3;
    cfg.seed = 17;
    Dataset ds = generate_synthetic(cfg);

    Dataset without = exclude_group(ds, "g2");
    CHECK(without.size() == ds.size() - ds.group_count("g2"));
    CHECK(without.groups().size() == 4);
    CHECK_FALSE(without.has_group("g2"));
    CHECK(without.parallel());       // pair uniqueness preserved under removal
    CHECK(ds.groups().size() == 5);  // input unchanged

    CHECK_THROWS_AS(exclude_group(ds, "nope"), Error);

    Dataset single(std::vector<Sample>{make_sample("x", "only", {1.0}, 0)});
    try {
        exclude_group(single, "only");
        FAIL("expected invalid_operation");
    } catch (const Error& e) {
        CHECK(e.kind() == "invalid_operation");
    }
}

TEST_CASE("dataset constructor rejects bad samples") {
    CHECK_THROWS_AS(Dataset(std::vector<Sample>{make_sample("a", "g", {1.0}, 2)}), Error);
    CHECK_THROWS_AS(Dataset(std::vector<Sample>{make_sample("a", "g", {1.0}, 0),
                                                make_sample("a", "g", {1.0}, 0)}),
                    Error);
    CHECK_THROWS_AS(Dataset(std::vector<Sample>{make_sample("a", "g", {1.0, 2.0}, 0),
                                                make_sample("b", "g", {1.0}, 0)}),
                    Error);
    CHECK_THROWS_AS(Dataset(std::vector<Sample>{make_sample("a", "g", {std::nan("")}, 0)}), Error);
}
