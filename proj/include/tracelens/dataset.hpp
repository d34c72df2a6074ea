#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tracelens/common.hpp"

namespace tracelens {

struct Sample {
    std::string id;
    std::string group;
    std::string pair_id;           // empty when the sample has no translation link
    std::vector<double> features;  // fixed dimension across a dataset
    int label = 0;                 // binary {0, 1}
    std::string raw_text;          // kept for reporting only; not persisted
};

// Immutable after construction; safe to share across threads.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<Sample> samples);

    const std::vector<Sample>& samples() const noexcept { return samples_; }
    const std::vector<std::string>& groups() const noexcept { return groups_; }
    bool parallel() const noexcept { return parallel_; }
    size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    int feature_dim() const noexcept { return samples_.empty() ? 0 : static_cast<int>(samples_[0].features.size()); }

    const Sample& operator[](size_t i) const { return samples_[i]; }
    const Sample* find(std::string_view id) const;
    const Sample& require(std::string_view id) const;  // lookup error when absent
    bool has_group(std::string_view group) const;
    size_t group_count(std::string_view group) const;
    std::vector<size_t> group_indices(std::string_view group) const;

    // content hash over (id, group, pair_id, label, features) in order
    std::string fingerprint() const;

private:
    std::vector<Sample> samples_;
    std::vector<std::string> groups_;  // order of first appearance
    std::unordered_map<std::string, size_t> by_id_;
    bool parallel_ = false;
};

// Deterministic hashed character-trigram counts, L2-normalized. Strings
// shorter than 3 characters produce the zero vector.
std::vector<double> featurize(std::string_view text, int dims, uint64_t seed);

enum class PairStructure { parallel, independent };

struct SynthConfig {
    int n_groups = 5;
    int per_group = 2000;
    PairStructure pair_structure = PairStructure::parallel;
    int latent_dim = 64;
    double group_shift_scale = 0.4;
    double noise_scale = 0.15;
    std::string label_rule = "median";  // linear threshold at the median latent projection
    uint64_t seed = 0;
    std::string split = "train";  // salts latent/noise draws; group shifts and the
                                  // label direction depend on seed only
};

// Shared-content generator: one latent vector per pair, each group sees
// latent + group shift + noise, labels follow the latent alone.
Dataset generate_synthetic(const SynthConfig& config);

// JSON-lines ingestion. Lines carrying "text" are featurized with the given
// dims/seed; lines carrying "features" are taken as-is.
Dataset load_dataset(const std::string& path, int dims = 0, uint64_t feat_seed = 0);
void save_dataset(const Dataset& dataset, const std::string& path);

// Oversamples `group` by ceil(pct/100 * group size) duplicates with fresh ids
// and preserved pair_ids.
Dataset rebalance(const Dataset& dataset, const std::string& group, int pct,
                  uint64_t seed = 0x7265626174ull);

Dataset exclude_group(const Dataset& dataset, const std::string& group);

// feeds one sample's identity and content into a fingerprint hash
void hash_sample(Fnv1a& hash, const Sample& sample);

}  // namespace tracelens
