#pragma once

#include <map>
#include <string>
#include <vector>

#include "tracelens/influence.hpp"
#include "tracelens/stats.hpp"

namespace tracelens {

// ---- test sample selection -------------------------------------------

// Uniformly samples `per_group` correctly-predicted samples per group.
// Raises a shortage error listing per-group availability when a group has too
// few correct predictions.
std::vector<Sample> select_test_samples(const ModelParams& params, const Dataset& dataset,
                                        int per_group, uint64_t seed);

// ---- group contribution shares (pooled top-k) --------------------------

struct GroupShareReport {
    std::string test_group;
    Sign sign = Sign::positive;
    int k = 0;
    std::vector<std::string> train_groups;  // all groups of the training set
    std::vector<double> shares;             // percentages, same order; sum to 100
    std::vector<long> counts;               // raw counts behind the percentages
    long total = 0;

    double share_of(std::string_view group) const;
};

// Pools the entries of `sets` (all from test samples of one group, same sign
// and k) and computes the per-train-group percentage split.
GroupShareReport group_contribution(const std::vector<TopKSet>& sets, const Dataset& train_set,
                                    const Dataset& test_set);

// ---- average influence table -------------------------------------------

struct AvgInfluenceTable {
    std::vector<std::string> test_groups;
    std::vector<std::string> train_groups;
    std::vector<double> mean;  // test-major
    double at(size_t tg, size_t rg) const { return mean[tg * train_groups.size() + rg]; }
};

AvgInfluenceTable average_influence_table(const InfluenceMatrix& matrix, const Dataset& train_set,
                                          const Dataset& test_set);

// ---- reinforcing vs complementary --------------------------------------

struct ReinforcingReport {
    std::string test_group;
    Sign sign = Sign::positive;
    int k = 0;
    double reinforcing_pct = 0.0;   // other-group entries whose pair_id also shows
                                    // up among the own-group entries of the same set
    double complementary_pct = 0.0; // remainder; the two sum to 100
    long other_entries = 0;         // pooled denominator
};

ReinforcingReport reinforcing_share(const std::vector<TopKSet>& sets, const Dataset& train_set,
                                    const Dataset& test_set, const std::string& test_group);

// ---- removal validation (confidence-vs-k curve) -------------------------

struct RemovalPoint {
    int k = 0;
    size_t removed = 0;                 // union size actually removed
    double mean_pct_change = 0.0;       // mean % change of correct-class confidence
    double random_mean_pct_change = 0.0;
    std::vector<double> per_test_pct;
    std::vector<double> random_per_test_pct;
};

struct ValidationCurve {
    Sign sign = Sign::positive;
    std::vector<int> k_grid;
    std::vector<RemovalPoint> points;
    double elapsed_seconds = 0.0;
};

// For each k: retrains without the union of per-test top-k ids and without an
// equally sized random set (the control), then measures the mean percentage
// change in correct-class confidence on `test_samples` against `base_params`.
ValidationCurve removal_validation(const Dataset& train_set, const Dataset& dev_set,
                                   const Hyperparams& hyper, ModelMode mode,
                                   const ModelParams& base_params,
                                   std::span<const Sample> test_samples,
                                   const std::map<int, std::vector<std::string>>& union_per_k,
                                   Sign sign, uint64_t seed);

// Union of per-test-sample top-k train ids for each k in `k_grid`.
std::map<int, std::vector<std::string>> topk_unions(const InfluenceMatrix& matrix,
                                                    std::span<const Sample> test_samples,
                                                    const std::vector<int>& k_grid, Sign sign);

// ---- epoch dynamics -------------------------------------------------------

struct EpochShares {
    int epoch = 0;
    std::vector<double> share_matrix;        // test-group-major group x group %
    std::map<std::string, double> own_share; // test group -> own-group %
};

struct WilcoxonEntry {
    int epoch_a = 0;
    int epoch_b = 0;
    double statistic = 0.0;
    double p_value = 1.0;
};

struct EpochDynamicsReport {
    std::vector<std::string> test_groups;
    std::vector<std::string> train_groups;
    int k = 0;
    Sign sign = Sign::positive;
    std::vector<EpochShares> epochs;
    std::vector<WilcoxonEntry> wilcoxon;  // consecutive epoch pairs
};

// Per-epoch view: independent slices (default) or cumulative prefix sums.
enum class EpochView { slice, prefix };

// Runs top-k per epoch slice and reports per-epoch group shares plus Wilcoxon
// signed-rank tests between consecutive epochs' paired score lists.
EpochDynamicsReport epoch_dynamics(const InfluenceMatrix& matrix, const Dataset& train_set,
                                   const Dataset& test_set, int k, Sign sign = Sign::positive,
                                   EpochView view = EpochView::slice);

// ---- zero-shot comparison ---------------------------------------------

struct ZeroShotReport {
    std::string group;
    Sign sign = Sign::positive;
    int k = 0;
    // % of the full model's own-group picks whose translations the zero-shot
    // model retrieves (pair-level; 100 when comparing a model against itself)
    double translation_recovery_pct = 0.0;
    // % of the full model's other-group picks recovered verbatim by id
    double verbatim_recovery_pct = 0.0;
    GroupShareReport zs_shares;
};

ZeroShotReport zero_shot_compare(const std::vector<TopKSet>& topk_full,
                                 const std::vector<TopKSet>& topk_zs, const Dataset& train_set,
                                 const Dataset& test_set, const std::string& group);

// ---- imbalance sweep ----------------------------------------------------

struct ImbalancePoint {
    int pct = 0;
    size_t train_size = 0;
    double own_pos_share = 0.0;
    double own_neg_share = 0.0;
};

struct ImbalanceReport {
    std::string group;
    int k = 0;
    std::vector<ImbalancePoint> points;  // includes the pct=0 baseline
};

// Oversamples `group` by each pct, retrains, recomputes influence for that
// group's test samples and reports own-group share curves. The pct=0 point
// comes from the provided baseline matrix.
ImbalanceReport imbalance_sweep(const Dataset& train_set, const Dataset& dev_set,
                                const Hyperparams& hyper, ModelMode mode,
                                const std::string& group, const std::vector<int>& pct_grid, int k,
                                std::span<const Sample> group_test_samples,
                                const InfluenceMatrix& baseline_matrix,
                                const InfluenceOptions& opts, uint64_t seed);

}  // namespace tracelens
