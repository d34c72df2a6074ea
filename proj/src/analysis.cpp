#include "tracelens/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "tracelens/rng.hpp"

namespace tracelens {

namespace {

const std::string& group_of(const Dataset& ds, const std::string& id) {
    return ds.require(id).group;
}

std::vector<TopKSet> topk_for_samples(const InfluenceMatrix& matrix,
                                      std::span<const Sample> samples, int k, Sign sign) {
    std::vector<TopKSet> sets;
    sets.reserve(samples.size());
    for (const Sample& s : samples) sets.push_back(topk(matrix, s.id, k, sign));
    return sets;
}

double own_share_from(const GroupShareReport& report) {
    return report.share_of(report.test_group);
}

}  // namespace

std::vector<Sample> select_test_samples(const ModelParams& params, const Dataset& dataset,
                                        int per_group, uint64_t seed) {
    if (per_group < 1) fail("usage", "select_test_samples: per_group must be >= 1");

    std::vector<Sample> selected;
    std::vector<std::string> shortage;
    for (const auto& group : dataset.groups()) {
        std::vector<size_t> correct;
        for (size_t i : dataset.group_indices(group))
            if (confidence(params, dataset[i]) > 0.5) correct.push_back(i);
        if (correct.size() < static_cast<size_t>(per_group)) {
            shortage.push_back(group + ": " + std::to_string(correct.size()) + " available");
            continue;
        }
        Rng rng = derive_rng(seed, "select-test", fnv1a64(group));
        auto picks = rng.sample_indices(correct.size(), static_cast<size_t>(per_group));
        std::sort(picks.begin(), picks.end());  // keep dataset order within a group
        for (size_t p : picks) selected.push_back(dataset[correct[p]]);
    }
    if (!shortage.empty()) {
        std::string msg = "not enough correctly-predicted samples (requested " +
                          std::to_string(per_group) + " per group): ";
        for (size_t i = 0; i < shortage.size(); ++i)
            msg += (i ? "; " : "") + shortage[i];
        fail("shortage", msg);
    }
    return selected;
}

double GroupShareReport::share_of(std::string_view group) const {
    for (size_t i = 0; i < train_groups.size(); ++i)
        if (train_groups[i] == group) return shares[i];
    return 0.0;
}

GroupShareReport group_contribution(const std::vector<TopKSet>& sets, const Dataset& train_set,
                                    const Dataset& test_set) {
    if (sets.empty()) fail("usage", "group_contribution: no top-k sets");
    GroupShareReport report;
    report.sign = sets.front().sign;
    report.k = sets.front().k;
    report.test_group = group_of(test_set, sets.front().test_id);
    report.train_groups = train_set.groups();
    report.counts.assign(report.train_groups.size(), 0);

    std::unordered_map<std::string, size_t> group_index;
    for (size_t i = 0; i < report.train_groups.size(); ++i) group_index[report.train_groups[i]] = i;

    for (const auto& set : sets) {
        if (set.sign != report.sign || set.k != report.k)
            fail("usage", "group_contribution: mixed sign or k across top-k sets");
        if (group_of(test_set, set.test_id) != report.test_group)
            fail("usage", "group_contribution: test samples span multiple groups");
        for (const auto& [train_id, score] : set.entries) {
            (void)score;
            const Sample* s = train_set.find(train_id);
            if (!s) fail("integrity", "top-k entry not in the training set: " + train_id);
            ++report.counts[group_index.at(s->group)];
            ++report.total;
        }
    }
    report.shares.resize(report.counts.size());
    for (size_t i = 0; i < report.counts.size(); ++i)
        report.shares[i] = 100.0 * static_cast<double>(report.counts[i]) /
                           static_cast<double>(report.total);
    return report;
}

AvgInfluenceTable average_influence_table(const InfluenceMatrix& matrix, const Dataset& train_set,
                                          const Dataset& test_set) {
    AvgInfluenceTable table;
    table.train_groups = train_set.groups();
    table.test_groups = test_set.groups();
    const size_t TG = table.test_groups.size(), RG = table.train_groups.size();
    table.mean.assign(TG * RG, 0.0);
    std::vector<long> count(TG * RG, 0);

    std::unordered_map<std::string, size_t> tg_index, rg_index;
    for (size_t i = 0; i < TG; ++i) tg_index[table.test_groups[i]] = i;
    for (size_t i = 0; i < RG; ++i) rg_index[table.train_groups[i]] = i;

    std::vector<size_t> row_group(matrix.n_test()), col_group(matrix.n_train());
    for (size_t ti = 0; ti < matrix.n_test(); ++ti)
        row_group[ti] = tg_index.at(group_of(test_set, matrix.test_ids[ti]));
    for (size_t tj = 0; tj < matrix.n_train(); ++tj)
        col_group[tj] = rg_index.at(group_of(train_set, matrix.train_ids[tj]));

    for (size_t ti = 0; ti < matrix.n_test(); ++ti) {
        for (size_t tj = 0; tj < matrix.n_train(); ++tj) {
            size_t cell = row_group[ti] * RG + col_group[tj];
            table.mean[cell] += matrix.total_at(ti, tj);
            ++count[cell];
        }
    }
    for (size_t c = 0; c < table.mean.size(); ++c)
        if (count[c] > 0) table.mean[c] /= static_cast<double>(count[c]);
    return table;
}

ReinforcingReport reinforcing_share(const std::vector<TopKSet>& sets, const Dataset& train_set,
                                    const Dataset& test_set, const std::string& test_group) {
    if (!train_set.parallel())
        fail("unsupported", "reinforcing_share requires a parallel dataset (pair_ids unique per group)");
    if (sets.empty()) fail("usage", "reinforcing_share: no top-k sets");

    ReinforcingReport report;
    report.test_group = test_group;
    report.sign = sets.front().sign;
    report.k = sets.front().k;

    long reinforcing = 0;
    for (const auto& set : sets) {
        if (group_of(test_set, set.test_id) != test_group)
            fail("usage", "reinforcing_share: set for test sample outside " + test_group);
        // pair ids retrieved from the test group itself, within this same set
        std::unordered_set<std::string> own_pairs;
        for (const auto& [train_id, score] : set.entries) {
            (void)score;
            const Sample& s = train_set.require(train_id);
            if (s.group == test_group && !s.pair_id.empty()) own_pairs.insert(s.pair_id);
        }
        for (const auto& [train_id, score] : set.entries) {
            (void)score;
            const Sample& s = train_set.require(train_id);
            if (s.group == test_group) continue;
            ++report.other_entries;
            if (!s.pair_id.empty() && own_pairs.count(s.pair_id)) ++reinforcing;
        }
    }
    if (report.other_entries > 0) {
        report.reinforcing_pct =
            100.0 * static_cast<double>(reinforcing) / static_cast<double>(report.other_entries);
    }
    report.complementary_pct = 100.0 - report.reinforcing_pct;
    return report;
}

std::map<int, std::vector<std::string>> topk_unions(const InfluenceMatrix& matrix,
                                                    std::span<const Sample> test_samples,
                                                    const std::vector<int>& k_grid, Sign sign) {
    std::map<int, std::vector<std::string>> unions;
    for (int k : k_grid) {
        std::set<std::string> ids;
        for (const Sample& s : test_samples) {
            TopKSet set = topk(matrix, s.id, k, sign);
            for (const auto& [train_id, score] : set.entries) {
                (void)score;
                ids.insert(train_id);
            }
        }
        unions[k] = std::vector<std::string>(ids.begin(), ids.end());
    }
    return unions;
}

namespace {

// Mean % change in correct-class confidence after retraining without `removed`.
std::vector<double> confidence_change_pct(const Dataset& train_set, const Dataset& dev_set,
                                          const Hyperparams& hyper, ModelMode mode,
                                          const std::vector<std::string>& removed,
                                          std::span<const Sample> test_samples,
                                          std::span<const double> base_conf) {
    std::unordered_set<std::string> removed_set(removed.begin(), removed.end());
    // refuse removals that empty a class: the confidence change would measure
    // the class prior, not influence
    long remaining[2] = {0, 0};
    for (const auto& s : train_set.samples())
        if (!removed_set.count(s.id)) ++remaining[s.label];
    if (remaining[0] == 0 || remaining[1] == 0)
        fail("degenerate_removal",
             "removal set empties class " + std::string(remaining[0] == 0 ? "0" : "1") +
                 " (removing " + std::to_string(removed.size()) + " of " +
                 std::to_string(train_set.size()) + ")");

    CheckpointSeries series = train(train_set, dev_set, hyper, mode, &removed_set);
    const ModelParams& params = series.converged().params;
    std::vector<double> pct(test_samples.size());
    for (size_t i = 0; i < test_samples.size(); ++i) {
        double after = confidence(params, test_samples[i]);
        pct[i] = 100.0 * (after - base_conf[i]) / base_conf[i];
    }
    return pct;
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

ValidationCurve removal_validation(const Dataset& train_set, const Dataset& dev_set,
                                   const Hyperparams& hyper, ModelMode mode,
                                   const ModelParams& base_params,
                                   std::span<const Sample> test_samples,
                                   const std::map<int, std::vector<std::string>>& union_per_k,
                                   Sign sign, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    ValidationCurve curve;
    curve.sign = sign;

    std::vector<double> base_conf(test_samples.size());
    for (size_t i = 0; i < test_samples.size(); ++i)
        base_conf[i] = confidence(base_params, test_samples[i]);

    std::vector<std::string> train_ids;
    train_ids.reserve(train_set.size());
    for (const auto& s : train_set.samples()) train_ids.push_back(s.id);

    for (const auto& [k, removed] : union_per_k) {
        curve.k_grid.push_back(k);
        RemovalPoint point;
        point.k = k;
        point.removed = removed.size();
        point.per_test_pct = confidence_change_pct(train_set, dev_set, hyper, mode, removed,
                                                   test_samples, base_conf);
        point.mean_pct_change = mean_of(point.per_test_pct);

        // control: remove the same number of uniformly chosen samples
        Rng rng = derive_rng(seed, "random-removal", static_cast<uint64_t>(k));
        auto picks = rng.sample_indices(train_ids.size(), removed.size());
        std::vector<std::string> random_removed;
        random_removed.reserve(picks.size());
        for (size_t p : picks) random_removed.push_back(train_ids[p]);
        point.random_per_test_pct = confidence_change_pct(train_set, dev_set, hyper, mode,
                                                          random_removed, test_samples, base_conf);
        point.random_mean_pct_change = mean_of(point.random_per_test_pct);

        log_info("removal k=" + std::to_string(k) + " removed=" + std::to_string(point.removed) +
                 " mean_change=" + std::to_string(point.mean_pct_change) +
                 "% random=" + std::to_string(point.random_mean_pct_change) + "%");
        curve.points.push_back(std::move(point));
    }
    curve.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return curve;
}

EpochDynamicsReport epoch_dynamics(const InfluenceMatrix& matrix, const Dataset& train_set,
                                   const Dataset& test_set, int k, Sign sign, EpochView view) {
    EpochDynamicsReport report;
    report.k = k;
    report.sign = sign;
    report.train_groups = train_set.groups();
    report.test_groups.clear();

    auto slices = view == EpochView::slice ? per_epoch_matrix(matrix) : per_epoch_prefix(matrix);

    // test samples grouped by their group, order preserved
    std::map<std::string, std::vector<Sample>> by_group;
    for (const auto& id : matrix.test_ids) {
        const Sample& s = test_set.require(id);
        by_group[s.group].push_back(s);
    }
    for (const auto& [g, samples] : by_group) {
        (void)samples;
        report.test_groups.push_back(g);
    }

    const size_t RG = report.train_groups.size();
    for (size_t e = 0; e < slices.size(); ++e) {
        EpochShares shares;
        shares.epoch = slices[e].epochs.back();  // last epoch summed into the slice
        shares.share_matrix.assign(report.test_groups.size() * RG, 0.0);
        for (size_t tg = 0; tg < report.test_groups.size(); ++tg) {
            const auto& samples = by_group[report.test_groups[tg]];
            auto sets = topk_for_samples(slices[e], samples, k, sign);
            GroupShareReport gc = group_contribution(sets, train_set, test_set);
            for (size_t rg = 0; rg < RG; ++rg) shares.share_matrix[tg * RG + rg] = gc.shares[rg];
            shares.own_share[report.test_groups[tg]] = own_share_from(gc);
        }
        report.epochs.push_back(std::move(shares));
    }

    // paired per-(test, train) score lists between consecutive epochs
    for (size_t e = 0; e + 1 < slices.size(); ++e) {
        WilcoxonEntry entry;
        entry.epoch_a = slices[e].epochs.back();
        entry.epoch_b = slices[e + 1].epochs.back();
        WilcoxonResult w = wilcoxon_signed_rank(slices[e].totals, slices[e + 1].totals);
        entry.statistic = w.statistic;
        entry.p_value = w.p_value;
        report.wilcoxon.push_back(entry);
    }
    return report;
}

ZeroShotReport zero_shot_compare(const std::vector<TopKSet>& topk_full,
                                 const std::vector<TopKSet>& topk_zs, const Dataset& train_set,
                                 const Dataset& test_set, const std::string& group) {
    if (topk_full.size() != topk_zs.size() || topk_full.empty())
        fail("usage", "zero_shot_compare: need matching non-empty top-k lists");

    ZeroShotReport report;
    report.group = group;
    report.sign = topk_full.front().sign;
    report.k = topk_full.front().k;

    std::unordered_map<std::string, const TopKSet*> zs_by_test;
    for (const auto& set : topk_zs) zs_by_test[set.test_id] = &set;

    long own_pairs_total = 0, own_pairs_recovered = 0;
    long other_total = 0, other_recovered = 0;

    for (const auto& full : topk_full) {
        if (group_of(test_set, full.test_id) != group)
            fail("usage", "zero_shot_compare: test sample " + full.test_id + " is not from " + group);
        auto it = zs_by_test.find(full.test_id);
        if (it == zs_by_test.end())
            fail("usage", "zero_shot_compare: no zero-shot set for test sample " + full.test_id);
        const TopKSet& zs = *it->second;

        std::unordered_set<std::string> zs_pairs, zs_ids;
        for (const auto& [train_id, score] : zs.entries) {
            (void)score;
            zs_ids.insert(train_id);
            const Sample& s = train_set.require(train_id);
            if (!s.pair_id.empty()) zs_pairs.insert(s.pair_id);
        }
        for (const auto& [train_id, score] : full.entries) {
            (void)score;
            const Sample& s = train_set.require(train_id);
            if (s.group == group) {
                if (s.pair_id.empty()) continue;
                ++own_pairs_total;
                if (zs_pairs.count(s.pair_id)) ++own_pairs_recovered;
            } else {
                ++other_total;
                if (zs_ids.count(train_id)) ++other_recovered;
            }
        }
    }
    report.translation_recovery_pct =
        own_pairs_total ? 100.0 * static_cast<double>(own_pairs_recovered) /
                              static_cast<double>(own_pairs_total)
                        : 0.0;
    report.verbatim_recovery_pct =
        other_total ? 100.0 * static_cast<double>(other_recovered) / static_cast<double>(other_total)
                    : 0.0;
    report.zs_shares = group_contribution(topk_zs, train_set, test_set);
    return report;
}

ImbalanceReport imbalance_sweep(const Dataset& train_set, const Dataset& dev_set,
                                const Hyperparams& hyper, ModelMode mode,
                                const std::string& group, const std::vector<int>& pct_grid, int k,
                                std::span<const Sample> group_test_samples,
                                const InfluenceMatrix& baseline_matrix,
                                const InfluenceOptions& opts, uint64_t seed) {
    if (!train_set.has_group(group)) fail("lookup", "imbalance_sweep: unknown group: " + group);
    ImbalanceReport report;
    report.group = group;
    report.k = k;

    Dataset test_subset(std::vector<Sample>(group_test_samples.begin(), group_test_samples.end()));

    auto shares_at = [&](const InfluenceMatrix& matrix, const Dataset& tset) {
        auto pos = group_contribution(topk_for_samples(matrix, group_test_samples, k, Sign::positive),
                                      tset, test_subset);
        auto neg = group_contribution(topk_for_samples(matrix, group_test_samples, k, Sign::negative),
                                      tset, test_subset);
        return std::pair{pos.share_of(group), neg.share_of(group)};
    };

    {
        ImbalancePoint base;
        base.pct = 0;
        base.train_size = train_set.size();
        auto [pos, neg] = shares_at(baseline_matrix, train_set);
        base.own_pos_share = pos;
        base.own_neg_share = neg;
        report.points.push_back(base);
    }

    for (int pct : pct_grid) {
        Dataset boosted = rebalance(train_set, group, pct, derive_seed(seed, "imbalance", fnv1a64(group)));
        CheckpointSeries series = train(boosted, dev_set, hyper, mode);
        InfluenceMatrix matrix = influence_matrix(series, boosted, test_subset, opts);
        ImbalancePoint point;
        point.pct = pct;
        point.train_size = boosted.size();
        auto [pos, neg] = shares_at(matrix, boosted);
        point.own_pos_share = pos;
        point.own_neg_share = neg;
        log_info("imbalance " + group + " +" + std::to_string(pct) + "%: own pos share " +
                 std::to_string(point.own_pos_share) + "%");
        report.points.push_back(point);
    }
    return report;
}

}  // namespace tracelens
