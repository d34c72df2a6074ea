// Command-line driver: wires datasets, training, influence scoring, oracle
// validation and the analysis battery into config-driven, file-mediated runs.
// Every phase reads the artifacts written by the previous one, records output
// hashes in out/manifest.json, and is deterministic given (config, seed).

#include "tracelens/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>

#include "tracelens/oracle.hpp"
#include "tracelens/report.hpp"
#include "tracelens/rng.hpp"

namespace fs = std::filesystem;

namespace tracelens {

using nlohmann::json;

// ---- config -------------------------------------------------------------

namespace {

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (j.contains(key) && !j[key].is_null()) return j[key].get<T>();
    return fallback;
}

json hyper_json(const Hyperparams& h) {
    return json{{"learning_rate", h.learning_rate}, {"epochs_max", h.epochs_max},
                {"patience", h.patience},           {"batch_size", h.batch_size},
                {"hidden_dim", h.hidden_dim},       {"weight_decay", h.weight_decay}};
}

Hyperparams hyper_from(const json& j, Hyperparams base) {
    base.learning_rate = get_or(j, "learning_rate", base.learning_rate);
    base.epochs_max = get_or(j, "epochs_max", base.epochs_max);
    base.patience = get_or(j, "patience", base.patience);
    base.batch_size = get_or(j, "batch_size", base.batch_size);
    base.hidden_dim = get_or(j, "hidden_dim", base.hidden_dim);
    base.weight_decay = get_or(j, "weight_decay", base.weight_decay);
    return base;
}

}  // namespace

RunConfig config_from_json(const json& j) {
    RunConfig c;
    c.seed = get_or<uint64_t>(j, "seed", c.seed);
    c.threads = get_or(j, "threads", c.threads);
    c.out_dir = get_or(j, "out_dir", c.out_dir);

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        c.source = get_or<std::string>(d, "source", c.source);
        if (d.contains("synthetic")) {
            const json& s = d["synthetic"];
            c.synth.n_groups = get_or(s, "n_groups", c.synth.n_groups);
            c.synth.per_group = get_or(s, "per_group", c.synth.per_group);
            std::string ps = get_or<std::string>(s, "pair_structure", "parallel");
            if (ps != "parallel" && ps != "independent")
                fail("config", "dataset.synthetic.pair_structure must be parallel or independent");
            c.synth.pair_structure =
                ps == "parallel" ? PairStructure::parallel : PairStructure::independent;
            c.synth.latent_dim = get_or(s, "latent_dim", c.synth.latent_dim);
            c.synth.group_shift_scale = get_or(s, "group_shift_scale", c.synth.group_shift_scale);
            c.synth.noise_scale = get_or(s, "noise_scale", c.synth.noise_scale);
            c.synth.label_rule = get_or<std::string>(s, "label_rule", c.synth.label_rule);
            c.synth_dev_per_group = get_or(s, "dev_per_group", c.synth_dev_per_group);
            c.synth_test_per_group = get_or(s, "test_per_group", c.synth_test_per_group);
        }
        if (d.contains("files")) {
            const json& f = d["files"];
            c.file_train = get_or<std::string>(f, "train", "");
            c.file_dev = get_or<std::string>(f, "dev", "");
            c.file_test = get_or<std::string>(f, "test", "");
            c.file_dims = get_or(f, "dims", 0);
            c.file_feat_seed = get_or<uint64_t>(f, "feat_seed", 0);
        }
    }
    if (c.source != "synthetic" && c.source != "files")
        fail("config", "dataset.source must be synthetic or files");

    if (j.contains("model")) {
        const json& m = j["model"];
        c.mode = parse_model_mode(get_or<std::string>(m, "mode", to_string(c.mode)));
        c.hyper = hyper_from(m, c.hyper);
    }

    if (j.contains("influence")) {
        const json& i = j["influence"];
        c.influence.variant = parse_variant(get_or<std::string>(i, "variant", to_string(c.influence.variant)));
        c.k = get_or(i, "k", c.k);
        c.influence.keep_per_epoch = get_or(i, "keep_per_epoch", c.influence.keep_per_epoch);
        c.influence.use_all_epochs = get_or(i, "use_all_epochs", c.influence.use_all_epochs);
        c.influence.lr_weighted = get_or(i, "lr_weighted", c.influence.lr_weighted);
        std::string scope = get_or<std::string>(i, "grad_scope", "full");
        if (scope != "full" && scope != "output_layer")
            fail("config", "influence.grad_scope must be full or output_layer");
        c.influence.grad_scope = scope == "full" ? GradScope::full : GradScope::output_layer;
        c.export_csv = get_or(i, "export_csv", c.export_csv);
    }

    if (j.contains("test_selection")) {
        const json& t = j["test_selection"];
        c.per_group = get_or(t, "per_group", c.per_group);
        c.select_seed = get_or<uint64_t>(t, "seed", c.select_seed);
    }

    if (j.contains("analysis")) {
        const json& a = j["analysis"];
        c.k_grid = get_or(a, "k_grid", c.k_grid);
        c.run_group_contribution = get_or(a, "group_contribution", c.run_group_contribution);
        c.run_average_influence = get_or(a, "average_influence", c.run_average_influence);
        c.run_reinforcing = get_or(a, "reinforcing", c.run_reinforcing);
        c.run_removal_validation = get_or(a, "removal_validation", c.run_removal_validation);
        c.run_epoch_dynamics = get_or(a, "epoch_dynamics", c.run_epoch_dynamics);
        c.zero_shot_groups = get_or(a, "zero_shot_groups", c.zero_shot_groups);
        if (a.contains("imbalance")) {
            c.imbalance_group = get_or<std::string>(a["imbalance"], "group", c.imbalance_group);
            c.imbalance_pcts = get_or(a["imbalance"], "pcts", c.imbalance_pcts);
        }
        if (a.contains("oracle_fixture")) {
            const json& o = a["oracle_fixture"];
            c.oracle.n_groups = get_or(o, "n_groups", c.oracle.n_groups);
            c.oracle.per_group = get_or(o, "per_group", c.oracle.per_group);
            c.oracle.latent_dim = get_or(o, "latent_dim", c.oracle.latent_dim);
            c.oracle.group_shift_scale = get_or(o, "group_shift_scale", c.oracle.group_shift_scale);
            c.oracle.noise_scale = get_or(o, "noise_scale", c.oracle.noise_scale);
            c.oracle.test_count = get_or(o, "test_count", c.oracle.test_count);
            c.oracle.damping = get_or(o, "damping", c.oracle.damping);
            c.oracle.hyper = hyper_from(o, c.oracle.hyper);
        }
    }
    if (std::find(c.k_grid.begin(), c.k_grid.end(), c.k) == c.k_grid.end())
        c.k_grid.insert(std::lower_bound(c.k_grid.begin(), c.k_grid.end(), c.k), c.k);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("io", "cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("parse", path + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
    json synth{{"n_groups", c.synth.n_groups},
               {"per_group", c.synth.per_group},
               {"pair_structure",
                c.synth.pair_structure == PairStructure::parallel ? "parallel" : "independent"},
               {"latent_dim", c.synth.latent_dim},
               {"group_shift_scale", c.synth.group_shift_scale},
               {"noise_scale", c.synth.noise_scale},
               {"label_rule", c.synth.label_rule},
               {"dev_per_group", c.synth_dev_per_group},
               {"test_per_group", c.synth_test_per_group}};
    json files{{"train", c.file_train}, {"dev", c.file_dev},           {"test", c.file_test},
               {"dims", c.file_dims},   {"feat_seed", c.file_feat_seed}};
    json model = hyper_json(c.hyper);
    model["mode"] = to_string(c.mode);
    json influence{{"variant", to_string(c.influence.variant)},
                   {"k", c.k},
                   {"keep_per_epoch", c.influence.keep_per_epoch},
                   {"use_all_epochs", c.influence.use_all_epochs},
                   {"lr_weighted", c.influence.lr_weighted},
                   {"grad_scope", c.influence.grad_scope == GradScope::full ? "full" : "output_layer"},
                   {"export_csv", c.export_csv}};
    json oracle = hyper_json(c.oracle.hyper);
    oracle["n_groups"] = c.oracle.n_groups;
    oracle["per_group"] = c.oracle.per_group;
    oracle["latent_dim"] = c.oracle.latent_dim;
    oracle["group_shift_scale"] = c.oracle.group_shift_scale;
    oracle["noise_scale"] = c.oracle.noise_scale;
    oracle["test_count"] = c.oracle.test_count;
    oracle["damping"] = c.oracle.damping;
    json analysis{{"k_grid", c.k_grid},
                  {"group_contribution", c.run_group_contribution},
                  {"average_influence", c.run_average_influence},
                  {"reinforcing", c.run_reinforcing},
                  {"removal_validation", c.run_removal_validation},
                  {"epoch_dynamics", c.run_epoch_dynamics},
                  {"zero_shot_groups", c.zero_shot_groups},
                  {"imbalance", json{{"group", c.imbalance_group}, {"pcts", c.imbalance_pcts}}},
                  {"oracle_fixture", oracle}};
    return json{{"seed", c.seed},
                {"threads", c.threads},
                {"out_dir", c.out_dir},
                {"dataset", json{{"source", c.source}, {"synthetic", synth}, {"files", files}}},
                {"model", model},
                {"influence", influence},
                {"test_selection", json{{"per_group", c.per_group}, {"seed", c.select_seed}}},
                {"analysis", analysis}};
}

std::string config_hash(const RunConfig& config) {
    json j = config_to_json(config);
    j.erase("out_dir");
    j.erase("threads");
    Fnv1a h;
    h.feed(j.dump());
    return h.hex();
}

// ---- manifest -------------------------------------------------------------

namespace {

class Manifest {
public:
    Manifest(const RunConfig& config)
        : dir_(config.out_dir), config_hash_(tracelens::config_hash(config)) {
        std::ifstream in(dir_ + "/manifest.json");
        if (in) {
            json j;
            try {
                in >> j;
                if (j.contains("artifacts")) artifacts_ = j["artifacts"];
            } catch (const json::exception&) {
                artifacts_ = json::object();
            }
        }
        if (!artifacts_.is_object()) artifacts_ = json::object();
    }

    void record(const std::string& relpath, const std::vector<std::string>& inputs) {
        artifacts_[relpath] = json{{"hash", hash_file(dir_ + "/" + relpath)}, {"inputs", inputs}};
    }

    void record_external(const std::string& relpath, const std::string& abspath,
                         const std::vector<std::string>& inputs) {
        artifacts_[relpath] = json{{"hash", hash_file(abspath)}, {"inputs", inputs}};
    }

    void save() const {
        json j{{"tool_version", std::string(kToolVersion)},
               {"config_hash", config_hash_},
               {"artifacts", artifacts_}};
        std::ofstream out(dir_ + "/manifest.json", std::ios::binary);
        out << j.dump(2) << "\n";
        if (!out) fail("io", "cannot write manifest in " + dir_);
    }

private:
    std::string dir_;
    json artifacts_;
    std::string config_hash_;
};

// ---- shared path/load helpers -------------------------------------------

std::string data_path(const RunConfig& c, const std::string& split) {
    if (c.source == "files") {
        const std::string& p = split == "train" ? c.file_train
                               : split == "dev" ? c.file_dev
                                                : c.file_test;
        if (p.empty()) fail("config", "dataset.files." + split + " is required for files source");
        return p;
    }
    return c.out_dir + "/data/" + split + ".jsonl";
}

Dataset load_split(const RunConfig& c, const std::string& split) {
    std::string path = data_path(c, split);
    if (!fs::exists(path))
        fail("io", "missing dataset artifact: " + path + " (run gen-data first?)");
    return c.source == "files" ? load_dataset(path, c.file_dims, c.file_feat_seed)
                               : load_dataset(path);
}

std::vector<std::string> data_inputs(const RunConfig& c) {
    if (c.source == "files") return {c.file_train, c.file_dev, c.file_test};
    return {"data/train.jsonl", "data/dev.jsonl", "data/test.jsonl"};
}

CheckpointSeries load_series_checked(const RunConfig& c, const Dataset& train_ds) {
    CheckpointSeries series = load_series(c.out_dir + "/model");
    if (series.dataset_fingerprint != train_ds.fingerprint())
        fail("fingerprint", "checkpoint series was trained on a different dataset: series has " +
                                series.dataset_fingerprint + ", dataset hashes to " +
                                train_ds.fingerprint());
    return series;
}

InfluenceMatrix load_matrix_checked(const RunConfig& c, const CheckpointSeries& series) {
    InfluenceMatrix matrix = load_matrix(c.out_dir + "/influence/matrix.tlim");
    std::string expected = series_fingerprint(series);
    if (matrix.checkpoint_fingerprint != expected)
        fail("fingerprint", "influence matrix was computed from different checkpoints: matrix has " +
                                matrix.checkpoint_fingerprint + ", series hashes to " + expected);
    return matrix;
}

std::vector<Sample> load_selected_test_samples(const RunConfig& c, const Dataset& test_ds) {
    std::ifstream in(c.out_dir + "/influence/test_samples.json");
    if (!in) fail("io", "missing test sample selection (run influence first?)");
    json j;
    in >> j;
    std::vector<Sample> samples;
    for (const auto& id : j.at("test_ids")) samples.push_back(test_ds.require(id.get<std::string>()));
    return samples;
}

std::vector<TopKSet> load_topk_sets(const RunConfig& c, Sign sign) {
    std::string path = c.out_dir + "/influence/topk_" + to_string(sign) + ".json";
    std::ifstream in(path);
    if (!in) fail("io", "missing top-k artifact: " + path + " (run topk first?)");
    json j;
    in >> j;
    std::vector<TopKSet> sets;
    for (const auto& sj : j.at("sets")) {
        TopKSet set;
        set.test_id = sj.at("test_id").get<std::string>();
        set.sign = parse_sign(sj.at("sign").get<std::string>());
        set.k = sj.at("k").get<int>();
        for (const auto& e : sj.at("entries"))
            set.entries.emplace_back(e.at("train_id").get<std::string>(),
                                     e.at("score").get<double>());
        sets.push_back(std::move(set));
    }
    return sets;
}

uint64_t selection_seed(const RunConfig& c) {
    return derive_seed(c.seed, "test-select", c.select_seed);
}

std::map<std::string, std::vector<Sample>> by_group(std::span<const Sample> samples) {
    std::map<std::string, std::vector<Sample>> out;
    for (const Sample& s : samples) out[s.group].push_back(s);
    return out;
}

InfluenceOptions influence_opts(const RunConfig& c) {
    InfluenceOptions opts = c.influence;
    opts.threads = resolve_threads(c.threads);
    return opts;
}

}  // namespace

// ---- phases ---------------------------------------------------------------

void phase_gen_data(const RunConfig& config) {
    if (config.source != "synthetic")
        fail("usage", "gen-data applies only to the synthetic dataset source");
    fs::create_directories(config.out_dir + "/data");
    Manifest manifest(config);

    struct SplitSpec {
        const char* name;
        int per_group;
    } splits[] = {{"train", config.synth.per_group},
                  {"dev", config.synth_dev_per_group},
                  {"test", config.synth_test_per_group}};
    for (const auto& split : splits) {
        SynthConfig sc = config.synth;
        sc.seed = config.seed;
        sc.split = split.name;
        sc.per_group = split.per_group;
        Dataset ds = generate_synthetic(sc);
        std::string rel = "data/" + std::string(split.name) + ".jsonl";
        save_dataset(ds, config.out_dir + "/" + rel);
        manifest.record(rel, {});
        log_info("wrote " + rel + " (" + std::to_string(ds.size()) + " samples, " +
                 std::to_string(ds.groups().size()) + " groups)");
    }
    manifest.save();
}

void phase_train(const RunConfig& config) {
    Dataset train_ds = load_split(config, "train");
    Dataset dev_ds = load_split(config, "dev");
    Hyperparams hyper = config.hyper;
    hyper.seed = config.seed;
    CheckpointSeries series = train(train_ds, dev_ds, hyper, config.mode);
    save_series(series, config.out_dir + "/model", config_hash(config));

    Manifest manifest(config);
    std::vector<std::string> inputs = data_inputs(config);
    inputs.resize(2);  // train + dev
    manifest.record("model/series.json", inputs);
    for (const auto& c : series.checkpoints) {
        std::string n = std::to_string(c.epoch);
        while (n.size() < 3) n.insert(n.begin(), '0');
        manifest.record("model/ckpt_" + n + ".tlck", {"model/series.json"});
    }
    manifest.save();
    log_info("trained " + to_string(config.mode) + " model: " +
             std::to_string(series.checkpoints.size()) + " epochs, converged at " +
             std::to_string(series.converged_epoch) + " (dev acc " +
             std::to_string(series.converged().dev_metric) + ")");
}

void phase_influence(const RunConfig& config) {
    Dataset train_ds = load_split(config, "train");
    Dataset test_ds = load_split(config, "test");
    CheckpointSeries series = load_series_checked(config, train_ds);

    auto selected = select_test_samples(series.converged().params, test_ds, config.per_group,
                                        selection_seed(config));
    fs::create_directories(config.out_dir + "/influence");
    {
        json j;
        j["per_group"] = config.per_group;
        j["seed"] = config.select_seed;
        std::vector<std::string> ids;
        json groups = json::object();
        for (const auto& s : selected) {
            ids.push_back(s.id);
            groups[s.id] = s.group;
        }
        j["test_ids"] = ids;
        j["groups"] = groups;
        j["config_hash"] = config_hash(config);
        write_json(j, config.out_dir + "/influence/test_samples.json");
    }

    Dataset test_subset{std::vector<Sample>(selected.begin(), selected.end())};
    auto t0 = std::chrono::steady_clock::now();
    InfluenceMatrix matrix = influence_matrix(series, train_ds, test_subset, influence_opts(config));
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_matrix(matrix, config.out_dir + "/influence/matrix.tlim", config_hash(config));
    log_info("influence matrix " + std::to_string(matrix.n_test()) + " x " +
             std::to_string(matrix.n_train()) + " over " + std::to_string(matrix.epochs.size()) +
             " epochs in " + std::to_string(secs) + "s");

    Manifest manifest(config);
    manifest.record("influence/test_samples.json", {"model/series.json"});
    manifest.record("influence/matrix.tlim",
                    {"model/series.json", "influence/test_samples.json"});
    if (config.export_csv) {
        export_matrix_csv(matrix, config.out_dir + "/influence/matrix.csv");
        manifest.record("influence/matrix.csv", {"influence/matrix.tlim"});
    }
    manifest.save();
}

void phase_topk(const RunConfig& config) {
    Dataset train_ds = load_split(config, "train");
    CheckpointSeries series = load_series_checked(config, train_ds);
    InfluenceMatrix matrix = load_matrix_checked(config, series);

    Manifest manifest(config);
    for (Sign sign : {Sign::positive, Sign::negative}) {
        json sets = json::array();
        for (const auto& test_id : matrix.test_ids)
            sets.push_back(to_json(topk(matrix, test_id, config.k, sign)));
        json j{{"k", config.k},
               {"variant", to_string(matrix.variant)},
               {"sign", to_string(sign)},
               {"checkpoint_fingerprint", matrix.checkpoint_fingerprint},
               {"config_hash", config_hash(config)},
               {"sets", sets}};
        std::string rel = "influence/topk_" + to_string(sign) + ".json";
        write_json(j, config.out_dir + "/" + rel);
        manifest.record(rel, {"influence/matrix.tlim"});
    }
    manifest.save();
    log_info("wrote top-" + std::to_string(config.k) + " sets for " +
             std::to_string(matrix.n_test()) + " test samples");
}

namespace {

json run_oracle_battery(const RunConfig& config, std::vector<LooResult>* loo_out,
                        std::vector<HessianInfluence>* hess_out) {
    const OracleFixtureConfig& oc = config.oracle;
    auto t0 = std::chrono::steady_clock::now();

    SynthConfig sc;
    sc.n_groups = oc.n_groups;
    sc.per_group = oc.per_group;
    sc.pair_structure = PairStructure::parallel;
    sc.latent_dim = oc.latent_dim;
    sc.group_shift_scale = oc.group_shift_scale;
    sc.noise_scale = oc.noise_scale;
    sc.seed = derive_seed(config.seed, "oracle-fixture");

    sc.split = "train";
    Dataset fixture_train = generate_synthetic(sc);
    sc.split = "dev";
    sc.per_group = std::max(8, oc.per_group * 2);  // fine-grained dev accuracy
    Dataset fixture_dev = generate_synthetic(sc);
    sc.split = "test";
    sc.per_group = std::max(8, oc.test_count);
    Dataset fixture_test = generate_synthetic(sc);

    Hyperparams hyper = oc.hyper;
    hyper.seed = derive_seed(config.seed, "oracle-train");

    // exhaustive leave-one-out: one base run plus one retraining per sample
    CheckpointSeries probe = train(fixture_train, fixture_dev, hyper, ModelMode::linear);
    std::vector<Sample> tests;
    for (const auto& s : fixture_test.samples()) {
        if (confidence(probe.converged().params, s) > 0.5) tests.push_back(s);
        if (static_cast<int>(tests.size()) == oc.test_count) break;
    }
    if (static_cast<int>(tests.size()) < oc.test_count)
        fail("shortage", "oracle fixture: only " + std::to_string(tests.size()) +
                             " correctly-predicted test samples, need " +
                             std::to_string(oc.test_count));

    LooBattery battery =
        exhaustive_loo(fixture_train, fixture_dev, hyper, ModelMode::linear, tests,
                       resolve_threads(config.threads));
    if (loo_out) *loo_out = battery.results;

    InfluenceOptions opts;
    opts.variant = Variant::cosine;
    opts.keep_per_epoch = false;
    opts.threads = resolve_threads(config.threads);
    Dataset test_subset{tests};
    InfluenceMatrix tracin = influence_matrix(battery.base, fixture_train, test_subset, opts);

    // loo delta lookup: results are train-major over tests in order
    auto loo_delta = [&](size_t train_idx, size_t test_idx) {
        return battery.results[train_idx * tests.size() + test_idx].delta;
    };

    json per_test = json::array();
    for (size_t t = 0; t < tests.size(); ++t) {
        std::vector<double> tracin_scores(fixture_train.size()), deltas(fixture_train.size());
        for (size_t i = 0; i < fixture_train.size(); ++i) {
            tracin_scores[i] = tracin.total_at(t, i);
            deltas[i] = loo_delta(i, t);
        }
        RankAgreement agreement = rank_agreement(tracin_scores, deltas);
        per_test.push_back(json{{"test_id", tests[t].id},
                                {"spearman_rho", agreement.spearman_rho},
                                {"kendall_tau", agreement.kendall_tau}});
    }

    // Hessian influence at the converged parameters. The score approximates
    // the effect of upweighting the training sample, so the predicted removal
    // delta is -score/N; sign agreement is measured against that prediction.
    HessianOracle oracle(battery.base.converged().params, fixture_train, oc.damping);
    long pairs_used = 0, agree = 0;
    std::vector<HessianInfluence> hessian_scores;
    for (size_t i = 0; i < fixture_train.size(); ++i) {
        for (size_t t = 0; t < tests.size(); ++t) {
            HessianInfluence h = oracle.score(fixture_train[i], tests[t]);
            hessian_scores.push_back(h);
            double delta = loo_delta(i, t);
            if (std::abs(delta) > 1e-4) {
                ++pairs_used;
                if ((delta > 0) == (-h.score > 0)) ++agree;
            }
        }
    }
    if (hess_out) *hess_out = hessian_scores;

    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double agreement_pct = pairs_used ? 100.0 * static_cast<double>(agree) /
                                            static_cast<double>(pairs_used)
                                      : 0.0;
    log_info("oracle battery: " + std::to_string(fixture_train.size() + 1) + " trainings in " +
             std::to_string(elapsed) + "s, sign agreement " + std::to_string(agreement_pct) +
             "% over " + std::to_string(pairs_used) + " pairs");
    return json{{"n_train", fixture_train.size()},
                {"n_tests", tests.size()},
                {"converged_epoch", battery.base.converged_epoch},
                {"per_test", per_test},
                {"hessian_sign_agreement_pct", agreement_pct},
                {"hessian_pairs_used", pairs_used},
                {"damping", oc.damping}};
}

}  // namespace

void phase_validate(const RunConfig& config) {
    fs::create_directories(config.out_dir + "/reports");
    Manifest manifest(config);

    std::vector<LooResult> loo;
    std::vector<HessianInfluence> hess;
    json oracle_report = run_oracle_battery(config, &loo, &hess);
    oracle_report["config_hash"] = config_hash(config);
    write_json(oracle_report, config.out_dir + "/reports/oracle_report.json");
    write_oracle_csv(loo, hess, config.out_dir + "/reports/oracle_report.csv");
    manifest.record("reports/oracle_report.json", {});
    manifest.record("reports/oracle_report.csv", {"reports/oracle_report.json"});

    if (config.run_removal_validation) {
        Dataset train_ds = load_split(config, "train");
        Dataset dev_ds = load_split(config, "dev");
        Dataset test_ds = load_split(config, "test");
        CheckpointSeries series = load_series_checked(config, train_ds);
        InfluenceMatrix matrix = load_matrix_checked(config, series);
        auto tests = load_selected_test_samples(config, test_ds);
        auto tests_by_group = by_group(tests);

        Hyperparams hyper = config.hyper;
        hyper.seed = config.seed;

        // one removal run per test group and k: the union pools that group's
        // per-test-sample top-k lists, confidence is measured on that group
        json per_group_json = json::object();
        std::map<int, double> agg_change, agg_random;
        std::map<int, size_t> agg_removed;
        for (const auto& [g, g_tests] : tests_by_group) {
            auto unions = topk_unions(matrix, g_tests, config.k_grid, Sign::positive);
            ValidationCurve curve = removal_validation(
                train_ds, dev_ds, hyper, config.mode, series.converged().params, g_tests, unions,
                Sign::positive, derive_seed(config.seed, "removal", fnv1a64(g)));
            for (const auto& p : curve.points) {
                agg_change[p.k] += p.mean_pct_change;
                agg_random[p.k] += p.random_mean_pct_change;
                agg_removed[p.k] += p.removed;
            }
            per_group_json[g] = to_json(curve);
        }
        const double n_groups = static_cast<double>(tests_by_group.size());
        json aggregate = json::array();
        for (int k : config.k_grid)
            aggregate.push_back(json{{"k", k},
                                     {"mean_pct_change", agg_change[k] / n_groups},
                                     {"random_mean_pct_change", agg_random[k] / n_groups},
                                     {"total_removed", agg_removed[k]}});
        json j{{"sign", "positive"},
               {"k_grid", config.k_grid},
               {"aggregate", aggregate},
               {"per_group", per_group_json},
               {"config_hash", config_hash(config)}};
        write_json(j, config.out_dir + "/reports/validation_curve.json");
        {
            std::ofstream csv(config.out_dir + "/reports/validation_curve.csv", std::ios::binary);
            csv << "k,mean_pct_change,random_mean_pct_change,total_removed\n";
            char buf[96];
            for (int k : config.k_grid) {
                std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%zu\n", k,
                              agg_change[k] / n_groups, agg_random[k] / n_groups, agg_removed[k]);
                csv << buf;
            }
        }

        std::vector<double> xs(config.k_grid.begin(), config.k_grid.end());
        LineSeries removal{"top-k removal", {}}, control{"random control", {}};
        for (int k : config.k_grid) {
            removal.y.push_back(agg_change[k] / n_groups);
            control.y.push_back(agg_random[k] / n_groups);
        }
        svg_line_chart(config.out_dir + "/reports/fig1_confidence_vs_k.svg",
                       "Confidence change after removing top-k positive samples", "k",
                       "mean confidence change (%)", xs, {removal, control},
                       "tracelens config " + config_hash(config));
        manifest.record("reports/validation_curve.json",
                        {"influence/matrix.tlim", "model/series.json"});
        manifest.record("reports/validation_curve.csv", {"reports/validation_curve.json"});
        manifest.record("reports/fig1_confidence_vs_k.svg", {"reports/validation_curve.json"});
    }
    manifest.save();
}

void phase_analyze(const RunConfig& config) {
    Dataset train_ds = load_split(config, "train");
    Dataset dev_ds = load_split(config, "dev");
    Dataset test_ds = load_split(config, "test");
    CheckpointSeries series = load_series_checked(config, train_ds);
    InfluenceMatrix matrix = load_matrix_checked(config, series);
    auto tests = load_selected_test_samples(config, test_ds);
    auto tests_by_group = by_group(tests);

    fs::create_directories(config.out_dir + "/reports");
    Manifest manifest(config);
    const std::string ch = config_hash(config);

    std::map<Sign, std::vector<TopKSet>> sets_by_sign;
    for (Sign sign : {Sign::positive, Sign::negative}) sets_by_sign[sign] = load_topk_sets(config, sign);

    auto sets_for_group = [&](Sign sign, const std::string& g) {
        std::vector<TopKSet> out;
        for (const auto& set : sets_by_sign[sign])
            if (test_ds.require(set.test_id).group == g) out.push_back(set);
        return out;
    };

    if (config.run_group_contribution) {
        std::vector<GroupShareReport> all;
        for (Sign sign : {Sign::positive, Sign::negative}) {
            std::vector<GroupShareReport> reports;
            for (const auto& [g, samples] : tests_by_group) {
                (void)samples;
                reports.push_back(group_contribution(sets_for_group(sign, g), train_ds, test_ds));
            }
            json j{{"sign", to_string(sign)}, {"config_hash", ch}, {"reports", json::array()}};
            for (const auto& r : reports) j["reports"].push_back(to_json(r));
            std::string rel = "reports/group_contribution_" + to_string(sign) + ".json";
            write_json(j, config.out_dir + "/" + rel);
            manifest.record(rel, {"influence/topk_" + to_string(sign) + ".json"});

            std::vector<std::string> categories;
            std::vector<LineSeries> bars(train_ds.groups().size());
            for (size_t rg = 0; rg < train_ds.groups().size(); ++rg)
                bars[rg].name = train_ds.groups()[rg];
            for (const auto& r : reports) {
                categories.push_back(r.test_group);
                for (size_t rg = 0; rg < r.shares.size(); ++rg) bars[rg].y.push_back(r.shares[rg]);
            }
            std::string fig = "reports/fig2_group_shares_" + to_string(sign) + ".svg";
            svg_grouped_bar_chart(config.out_dir + "/" + fig,
                                  "Group contribution to top-" + std::to_string(config.k) + " (" +
                                      to_string(sign) + ")",
                                  "share of pooled top-k (%)", categories, bars,
                                  "tracelens config " + ch);
            manifest.record(fig, {rel});
            all.insert(all.end(), reports.begin(), reports.end());
        }
        write_group_shares_csv(all, config.out_dir + "/reports/group_contribution.csv");
        manifest.record("reports/group_contribution.csv",
                        {"reports/group_contribution_positive.json",
                         "reports/group_contribution_negative.json"});
    }

    if (config.run_average_influence) {
        AvgInfluenceTable table = average_influence_table(matrix, train_ds, test_ds);
        json j = to_json(table);
        j["config_hash"] = ch;
        write_json(j, config.out_dir + "/reports/average_influence.json");
        write_avg_influence_csv(table, config.out_dir + "/reports/average_influence.csv");
        manifest.record("reports/average_influence.json", {"influence/matrix.tlim"});
        manifest.record("reports/average_influence.csv", {"reports/average_influence.json"});
    }

    if (config.run_reinforcing) {
        if (!train_ds.parallel()) {
            log_info("skipping reinforcing analysis: training data is not parallel");
        } else {
            json j{{"config_hash", ch}, {"reports", json::array()}};
            std::ofstream csv(config.out_dir + "/reports/reinforcing.csv", std::ios::binary);
            csv << "test_group,sign,k,reinforcing_pct,complementary_pct,other_entries\n";
            char buf[160];
            for (Sign sign : {Sign::positive, Sign::negative})
                for (const auto& [g, samples] : tests_by_group) {
                    (void)samples;
                    ReinforcingReport r = reinforcing_share(sets_for_group(sign, g), train_ds, test_ds, g);
                    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f,%ld\n", r.test_group.c_str(),
                                  to_string(r.sign).c_str(), r.k, r.reinforcing_pct,
                                  r.complementary_pct, r.other_entries);
                    csv << buf;
                    j["reports"].push_back(to_json(r));
                }
            write_json(j, config.out_dir + "/reports/reinforcing.json");
            manifest.record("reports/reinforcing.json",
                            {"influence/topk_positive.json", "influence/topk_negative.json"});
            manifest.record("reports/reinforcing.csv", {"reports/reinforcing.json"});
        }
    }

    if (config.run_epoch_dynamics) {
        if (matrix.per_epoch.empty()) {
            log_info("skipping epoch dynamics: per-epoch terms were not retained");
        } else {
            EpochDynamicsReport report = epoch_dynamics(matrix, train_ds, test_ds, config.k);
            json j = to_json(report);
            j["config_hash"] = ch;
            write_json(j, config.out_dir + "/reports/epoch_dynamics.json");
            {
                std::ofstream csv(config.out_dir + "/reports/epoch_dynamics.csv", std::ios::binary);
                csv << "epoch,test_group,train_group,share_pct\n";
                char buf[128];
                for (const auto& e : report.epochs)
                    for (size_t tg = 0; tg < report.test_groups.size(); ++tg)
                        for (size_t rg = 0; rg < report.train_groups.size(); ++rg) {
                            std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.6f\n", e.epoch,
                                          report.test_groups[tg].c_str(),
                                          report.train_groups[rg].c_str(),
                                          e.share_matrix[tg * report.train_groups.size() + rg]);
                            csv << buf;
                        }
            }
            manifest.record("reports/epoch_dynamics.json", {"influence/matrix.tlim"});
            manifest.record("reports/epoch_dynamics.csv", {"reports/epoch_dynamics.json"});

            std::vector<double> xs;
            for (const auto& e : report.epochs) xs.push_back(e.epoch);
            std::vector<LineSeries> series_lines;
            for (const auto& g : report.test_groups) {
                LineSeries line{g, {}};
                for (const auto& e : report.epochs) line.y.push_back(e.own_share.at(g));
                series_lines.push_back(std::move(line));
            }
            svg_line_chart(config.out_dir + "/reports/fig3_epoch_dynamics.svg",
                           "Own-group share of top-" + std::to_string(config.k) + " per epoch",
                           "epoch", "own-group share (%)", xs, series_lines,
                           "tracelens config " + ch);
            manifest.record("reports/fig3_epoch_dynamics.svg", {"reports/epoch_dynamics.json"});
        }
    }

    Hyperparams hyper = config.hyper;
    hyper.seed = config.seed;

    for (const auto& g : config.zero_shot_groups) {
        if (!train_ds.has_group(g)) fail("lookup", "zero_shot group not in training data: " + g);
        auto it = tests_by_group.find(g);
        if (it == tests_by_group.end()) fail("usage", "no selected test samples for group " + g);
        const auto& g_tests = it->second;

        Dataset zs_train = exclude_group(train_ds, g);
        CheckpointSeries zs_series = train(zs_train, dev_ds, hyper, config.mode);
        InfluenceOptions opts = influence_opts(config);
        opts.keep_per_epoch = false;
        Dataset g_subset{g_tests};
        InfluenceMatrix zs_matrix = influence_matrix(zs_series, zs_train, g_subset, opts);
        std::vector<TopKSet> zs_sets;
        for (const auto& s : g_tests) zs_sets.push_back(topk(zs_matrix, s.id, config.k, Sign::positive));

        ZeroShotReport report =
            zero_shot_compare(sets_for_group(Sign::positive, g), zs_sets, train_ds, test_ds, g);
        json j = to_json(report);
        j["config_hash"] = ch;
        j["zs_dev_accuracy"] = zs_series.converged().dev_metric;
        std::string rel = "reports/zero_shot_" + g + ".json";
        write_json(j, config.out_dir + "/" + rel);
        manifest.record(rel, {"influence/topk_positive.json", "model/series.json"});
        {
            std::ofstream csv(config.out_dir + "/reports/zero_shot_" + g + ".csv", std::ios::binary);
            csv << "metric,value\n";
            char buf[128];
            std::snprintf(buf, sizeof(buf), "translation_recovery_pct,%.6f\n",
                          report.translation_recovery_pct);
            csv << buf;
            std::snprintf(buf, sizeof(buf), "verbatim_recovery_pct,%.6f\n",
                          report.verbatim_recovery_pct);
            csv << buf;
            for (size_t i = 0; i < report.zs_shares.train_groups.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "zs_share_%s,%.6f\n",
                              report.zs_shares.train_groups[i].c_str(), report.zs_shares.shares[i]);
                csv << buf;
            }
        }
        manifest.record("reports/zero_shot_" + g + ".csv", {rel});

        std::vector<LineSeries> bars{{"zero-shot share", report.zs_shares.shares}};
        std::string fig = "reports/fig4_zero_shot_" + g + ".svg";
        svg_grouped_bar_chart(config.out_dir + "/" + fig,
                              "Group shares when testing " + g + " zero-shot",
                              "share of pooled top-k (%)", report.zs_shares.train_groups, bars,
                              "tracelens config " + ch);
        manifest.record(fig, {rel});
    }

    if (!config.imbalance_group.empty()) {
        const std::string& g = config.imbalance_group;
        if (!train_ds.has_group(g)) fail("lookup", "imbalance group not in training data: " + g);
        auto it = tests_by_group.find(g);
        if (it == tests_by_group.end()) fail("usage", "no selected test samples for group " + g);

        InfluenceOptions opts = influence_opts(config);
        opts.keep_per_epoch = false;
        ImbalanceReport report =
            imbalance_sweep(train_ds, dev_ds, hyper, config.mode, g, config.imbalance_pcts,
                            config.k, it->second, matrix, opts, config.seed);
        json j = to_json(report);
        j["config_hash"] = ch;
        std::string rel = "reports/imbalance_" + g + ".json";
        write_json(j, config.out_dir + "/" + rel);
        manifest.record(rel, {"influence/matrix.tlim", "model/series.json"});
        {
            std::ofstream csv(config.out_dir + "/reports/imbalance_" + g + ".csv", std::ios::binary);
            csv << "pct,train_size,own_pos_share,own_neg_share\n";
            char buf[128];
            for (const auto& p : report.points) {
                std::snprintf(buf, sizeof(buf), "%d,%zu,%.6f,%.6f\n", p.pct, p.train_size,
                              p.own_pos_share, p.own_neg_share);
                csv << buf;
            }
        }
        manifest.record("reports/imbalance_" + g + ".csv", {rel});

        std::vector<double> xs;
        LineSeries pos{"own-group positive share", {}}, neg{"own-group negative share", {}};
        for (const auto& p : report.points) {
            xs.push_back(p.pct);
            pos.y.push_back(p.own_pos_share);
            neg.y.push_back(p.own_neg_share);
        }
        std::string fig = "reports/fig5_imbalance_" + g + ".svg";
        svg_line_chart(config.out_dir + "/" + fig, "Own-group share vs oversampling of " + g,
                       "added data (%)", "share of top-k (%)", xs, {pos, neg},
                       "tracelens config " + ch);
        manifest.record(fig, {rel});
    }
    manifest.save();
}

void phase_reproduce(const RunConfig& config) {
    auto t0 = std::chrono::steady_clock::now();
    if (config.source == "synthetic") phase_gen_data(config);
    phase_train(config);
    phase_influence(config);
    phase_topk(config);
    phase_validate(config);
    phase_analyze(config);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_info("reproduce pipeline finished in " + std::to_string(secs) + "s");
}

// ---- CLI ----------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"tracelens: training-data attribution via checkpointed gradient products"};
    app.require_subcommand(1);

    struct Common {
        std::string config_path;
        std::string out_dir;
        std::string variant;
        int64_t seed = -1;
        int threads = -1;
        int k = -1;
    };

    struct Cmd {
        CLI::App* sub;
        Common common;
        void (*phase)(const RunConfig&);
    };
    std::vector<std::unique_ptr<Cmd>> cmds;

    auto add_cmd = [&](const std::string& name, const std::string& desc,
                       void (*phase)(const RunConfig&)) {
        auto cmd = std::make_unique<Cmd>();
        cmd->sub = app.add_subcommand(name, desc);
        cmd->phase = phase;
        cmd->sub->add_option("--config", cmd->common.config_path, "config JSON path")->required();
        cmd->sub->add_option("--out", cmd->common.out_dir, "output directory override");
        cmd->sub->add_option("--seed", cmd->common.seed, "global seed override");
        cmd->sub->add_option("--threads", cmd->common.threads, "worker thread cap (0 = all cores)");
        cmd->sub->add_option("--variant", cmd->common.variant, "influence variant: dot | cosine");
        cmd->sub->add_option("--k", cmd->common.k, "top-k size override");
        cmds.push_back(std::move(cmd));
    };

    add_cmd("gen-data", "generate the synthetic train/dev/test datasets", phase_gen_data);
    add_cmd("train", "train the classifier and write per-epoch checkpoints", phase_train);
    add_cmd("influence", "select test samples and compute the influence matrix", phase_influence);
    add_cmd("topk", "write ranked top-k sets for both signs", phase_topk);
    add_cmd("validate", "run the oracle battery and the removal-validation curve", phase_validate);
    add_cmd("analyze", "run the cross-group analysis battery and emit figures", phase_analyze);
    add_cmd("reproduce", "full pipeline: gen-data, train, influence, topk, validate, analyze",
            phase_reproduce);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        for (const auto& cmd : cmds) {
            if (!cmd->sub->parsed()) continue;
            RunConfig config = load_config(cmd->common.config_path);
            if (!cmd->common.out_dir.empty()) config.out_dir = cmd->common.out_dir;
            if (cmd->common.seed >= 0) config.seed = static_cast<uint64_t>(cmd->common.seed);
            if (cmd->common.threads >= 0) config.threads = cmd->common.threads;
            if (!cmd->common.variant.empty())
                config.influence.variant = parse_variant(cmd->common.variant);
            if (cmd->common.k > 0) config.k = cmd->common.k;
            fs::create_directories(config.out_dir);
            cmd->phase(config);
        }
        return 0;
    } catch (const Error& e) {
        json err{{"error", json{{"kind", e.kind()}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    } catch (const std::exception& e) {
        json err{{"error", json{{"kind", "internal"}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    }
}

}  // namespace tracelens
