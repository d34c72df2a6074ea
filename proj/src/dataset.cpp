#include "tracelens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tracelens/rng.hpp"

namespace tracelens {

using nlohmann::json;

Dataset::Dataset(std::vector<Sample> samples) : samples_(std::move(samples)) {
    by_id_.reserve(samples_.size());
    std::set<std::string> seen_groups;
    size_t dim = samples_.empty() ? 0 : samples_[0].features.size();

    // (group, pair_id) multiplicity decides the parallel flag
    std::unordered_map<std::string, int> pair_in_group;
    bool any_pair = false;
    bool pair_unique_per_group = true;

    for (size_t i = 0; i < samples_.size(); ++i) {
        const Sample& s = samples_[i];
        if (!by_id_.emplace(s.id, i).second)
            fail("integrity", "duplicate sample id: " + s.id);
        if (s.label != 0 && s.label != 1)
            fail("integrity", "label must be 0 or 1 for sample " + s.id);
        if (s.features.size() != dim)
            fail("shape", "feature length mismatch for sample " + s.id + ": expected " +
                              std::to_string(dim) + ", got " + std::to_string(s.features.size()));
        for (double v : s.features)
            if (!std::isfinite(v)) fail("integrity", "non-finite feature in sample " + s.id);
        if (seen_groups.insert(s.group).second) groups_.push_back(s.group);
        if (!s.pair_id.empty()) {
            any_pair = true;
            if (++pair_in_group[s.group + "\x1f" + s.pair_id] > 1) pair_unique_per_group = false;
        }
    }
    parallel_ = any_pair && pair_unique_per_group;
}

const Sample* Dataset::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &samples_[it->second];
}

const Sample& Dataset::require(std::string_view id) const {
    const Sample* s = find(id);
    if (!s) fail("lookup", "unknown sample id: " + std::string(id));
    return *s;
}

bool Dataset::has_group(std::string_view group) const {
    return std::find(groups_.begin(), groups_.end(), group) != groups_.end();
}

size_t Dataset::group_count(std::string_view group) const {
    size_t n = 0;
    for (const auto& s : samples_)
        if (s.group == group) ++n;
    return n;
}

std::vector<size_t> Dataset::group_indices(std::string_view group) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < samples_.size(); ++i)
        if (samples_[i].group == group) out.push_back(i);
    return out;
}

void hash_sample(Fnv1a& hash, const Sample& sample) {
    hash.feed(sample.id).feed_u64(0x1f);
    hash.feed(sample.group).feed_u64(0x1f);
    hash.feed(sample.pair_id).feed_u64(0x1f);
    hash.feed_u64(static_cast<uint64_t>(sample.label));
    for (double v : sample.features) hash.feed_f64(v);
}

std::string Dataset::fingerprint() const {
    Fnv1a h;
    for (const auto& s : samples_) hash_sample(h, s);
    return h.hex();
}

std::vector<double> featurize(std::string_view text, int dims, uint64_t seed) {
    if (dims < 1) fail("usage", "featurize: dims must be >= 1");
    std::vector<double> v(static_cast<size_t>(dims), 0.0);
    if (text.size() < 3) return v;
    for (size_t i = 0; i + 3 <= text.size(); ++i) {
        Fnv1a h;
        h.feed_u64(seed).feed(text.substr(i, 3));
        v[static_cast<size_t>(h.value() % static_cast<uint64_t>(dims))] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return v;
}

namespace {

std::string group_name(int gi) { return "g" + std::to_string(gi); }

std::string padded(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& config) {
    if (config.n_groups < 2) fail("usage", "generate_synthetic: n_groups must be >= 2");
    if (config.per_group < 2) fail("usage", "generate_synthetic: per_group must be >= 2");
    if (config.latent_dim < 1) fail("usage", "generate_synthetic: latent_dim must be >= 1");
    if (config.group_shift_scale < 0 || config.noise_scale < 0)
        fail("usage", "generate_synthetic: scales must be >= 0");
    if (config.label_rule != "median")
        fail("usage", "generate_synthetic: unsupported label_rule: " + config.label_rule);

    const int D = config.latent_dim;
    const int G = config.n_groups;
    const int P = config.per_group;

    // label direction: unit vector, derived from seed only
    std::vector<double> w(static_cast<size_t>(D));
    {
        Rng rng = derive_rng(config.seed, "label-dir");
        double norm = 0.0;
        for (auto& x : w) {
            x = rng.next_normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : w) x /= norm;
    }

    // per-group systematic shifts, derived from seed only (shared across splits)
    std::vector<std::vector<double>> shifts(static_cast<size_t>(G));
    for (int g = 0; g < G; ++g) {
        Rng rng = derive_rng(config.seed, "shift", static_cast<uint64_t>(g));
        auto& sh = shifts[static_cast<size_t>(g)];
        sh.resize(static_cast<size_t>(D));
        for (auto& x : sh) x = config.group_shift_scale * rng.next_normal();
    }

    const bool parallel = config.pair_structure == PairStructure::parallel;
    const uint64_t split_salt = fnv1a64(config.split);
    const int n_latents = parallel ? P : P * G;

    std::vector<std::vector<double>> latents(static_cast<size_t>(n_latents));
    std::vector<double> projections(static_cast<size_t>(n_latents));
    for (int i = 0; i < n_latents; ++i) {
        Rng rng = derive_rng(config.seed, "latent", split_salt, static_cast<uint64_t>(i));
        auto& lat = latents[static_cast<size_t>(i)];
        lat.resize(static_cast<size_t>(D));
        double proj = 0.0;
        for (int d = 0; d < D; ++d) {
            lat[static_cast<size_t>(d)] = rng.next_normal();
            proj += w[static_cast<size_t>(d)] * lat[static_cast<size_t>(d)];
        }
        projections[static_cast<size_t>(i)] = proj;
    }

    const double threshold = median_of(projections);
    const int id_width = static_cast<int>(std::to_string(n_latents).size());

    std::vector<Sample> samples;
    samples.reserve(static_cast<size_t>(G) * static_cast<size_t>(P));
    for (int g = 0; g < G; ++g) {
        for (int p = 0; p < P; ++p) {
            int li = parallel ? p : g * P + p;
            Sample s;
            s.group = group_name(g);
            if (parallel) {
                s.pair_id = config.split + ":p" + padded(p, id_width);
                s.id = config.split + "-" + s.group + "-p" + padded(p, id_width);
            } else {
                s.id = config.split + "-" + s.group + "-s" + padded(p, id_width);
            }
            s.label = projections[static_cast<size_t>(li)] > threshold ? 1 : 0;
            s.features = latents[static_cast<size_t>(li)];
            const auto& sh = shifts[static_cast<size_t>(g)];
            Rng noise = derive_rng(config.seed, "noise", split_salt,
                                   static_cast<uint64_t>(g) * static_cast<uint64_t>(n_latents) +
                                       static_cast<uint64_t>(li));
            for (int d = 0; d < D; ++d)
                s.features[static_cast<size_t>(d)] +=
                    sh[static_cast<size_t>(d)] + config.noise_scale * noise.next_normal();
            samples.push_back(std::move(s));
        }
    }
    return Dataset(std::move(samples));
}

Dataset load_dataset(const std::string& path, int dims, uint64_t feat_seed) {
    std::ifstream in(path);
    if (!in) fail("io", "cannot open dataset file: " + path);

    std::vector<Sample> samples;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail("parse", path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto bad = [&](const std::string& what) {
            fail("parse", path + ":" + std::to_string(line_no) + ": " + what);
        };
        if (!j.is_object()) bad("line is not a JSON object");
        if (!j.contains("id") || !j["id"].is_string()) bad("missing string field 'id'");
        if (!j.contains("group") || !j["group"].is_string()) bad("missing string field 'group'");
        if (!j.contains("label") || !j["label"].is_number_integer()) bad("missing integer field 'label'");

        Sample s;
        s.id = j["id"].get<std::string>();
        s.group = j["group"].get<std::string>();
        s.label = j["label"].get<int>();
        if (s.label != 0 && s.label != 1) bad("label must be 0 or 1");
        if (j.contains("pair_id") && !j["pair_id"].is_null()) {
            if (!j["pair_id"].is_string()) bad("pair_id must be a string or null");
            s.pair_id = j["pair_id"].get<std::string>();
        }

        const bool has_text = j.contains("text") && !j["text"].is_null();
        const bool has_features = j.contains("features") && !j["features"].is_null();
        if (has_text == has_features) bad("need exactly one of 'text' or 'features'");
        if (has_text) {
            if (!j["text"].is_string()) bad("text must be a string");
            if (dims < 1) fail("usage", "dataset has 'text' lines; featurization dims required");
            s.raw_text = j["text"].get<std::string>();
            s.features = featurize(s.raw_text, dims, feat_seed);
        } else {
            if (!j["features"].is_array()) bad("features must be an array");
            s.features.reserve(j["features"].size());
            for (const auto& v : j["features"]) {
                if (!v.is_number()) bad("features must be numeric");
                s.features.push_back(v.get<double>());
            }
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) fail("parse", path + ": no samples");
    return Dataset(std::move(samples));
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write dataset file: " + path);
    for (const auto& s : dataset.samples()) {
        json j;
        j["id"] = s.id;
        j["group"] = s.group;
        if (s.pair_id.empty())
            j["pair_id"] = nullptr;
        else
            j["pair_id"] = s.pair_id;
        j["label"] = s.label;
        j["features"] = s.features;
        out << j.dump() << "\n";
    }
    if (!out) fail("io", "short write: " + path);
}

Dataset rebalance(const Dataset& dataset, const std::string& group, int pct, uint64_t seed) {
    if (!dataset.has_group(group)) fail("lookup", "rebalance: unknown group: " + group);
    if (pct <= 0 || pct > 100) fail("usage", "rebalance: pct must be in (0, 100]");

    auto idx = dataset.group_indices(group);
    size_t n = idx.size();
    size_t count = (static_cast<size_t>(pct) * n + 99) / 100;  // ceil

    Rng rng = derive_rng(seed, "rebalance", fnv1a64(group), static_cast<uint64_t>(pct));
    auto picks = rng.sample_indices(n, count);

    std::vector<Sample> samples = dataset.samples();
    samples.reserve(samples.size() + count);
    for (size_t j = 0; j < picks.size(); ++j) {
        Sample dup = dataset[idx[picks[j]]];
        std::string base = dup.id + "+d";
        std::string fresh = base + std::to_string(j);
        int bump = 0;
        while (dataset.find(fresh) != nullptr) fresh = base + std::to_string(j) + "x" + std::to_string(bump++);
        dup.id = fresh;
        samples.push_back(std::move(dup));
    }
    return Dataset(std::move(samples));
}

Dataset exclude_group(const Dataset& dataset, const std::string& group) {
    if (!dataset.has_group(group)) fail("lookup", "exclude_group: unknown group: " + group);
    if (dataset.groups().size() < 2)
        fail("invalid_operation", "exclude_group: cannot remove the only group");
    std::vector<Sample> kept;
    kept.reserve(dataset.size());
    for (const auto& s : dataset.samples())
        if (s.group != group) kept.push_back(s);
    return Dataset(std::move(kept));
}

}  // namespace tracelens
