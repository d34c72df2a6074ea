#pragma once

#include <string>
#include <vector>

#include "tracelens/model.hpp"

namespace tracelens {

enum class Variant { dot, cosine };
enum class Sign { positive, negative };

Variant parse_variant(std::string_view s);
std::string to_string(Variant v);
std::string to_string(Sign s);
Sign parse_sign(std::string_view s);

struct InfluenceOptions {
    Variant variant = Variant::cosine;
    bool use_all_epochs = false;  // default: epochs 1..converged_epoch
    bool lr_weighted = false;     // multiply each term by the learning rate
    GradScope grad_scope = GradScope::full;
    bool keep_per_epoch = true;
    int threads = 1;
};

struct InfluenceRecord {
    std::string train_id;
    std::string test_id;
    std::vector<double> per_epoch;  // one term per checkpoint summed
    double total = 0.0;
    Variant variant = Variant::dot;
};

struct InfluenceMatrix {
    std::vector<std::string> test_ids;
    std::vector<std::string> train_ids;
    std::vector<int> epochs;        // training epochs the scores sum over
    Variant variant = Variant::dot;
    std::vector<double> totals;     // n_test x n_train, row-major
    std::vector<double> per_epoch;  // epochs x n_test x n_train, or empty
    std::string checkpoint_fingerprint;

    size_t n_test() const noexcept { return test_ids.size(); }
    size_t n_train() const noexcept { return train_ids.size(); }
    double total_at(size_t ti, size_t tj) const { return totals[ti * n_train() + tj]; }
    double term_at(size_t e, size_t ti, size_t tj) const {
        return per_epoch[(e * n_test() + ti) * n_train() + tj];
    }
    size_t test_index(std::string_view id) const;   // lookup error when absent
    size_t train_index(std::string_view id) const;  // lookup error when absent
};

struct TopKSet {
    std::string test_id;
    Sign sign = Sign::positive;
    int k = 0;
    std::vector<std::pair<std::string, double>> entries;  // (train_id, score)
};

// Per-epoch gradient product between one train and one test sample; terms run
// over checkpoints 1..converged (or all, per options).
InfluenceRecord tracin_dot(const CheckpointSeries& series, const Sample& train_sample,
                           const Sample& test_sample, const InfluenceOptions& opts = {});
InfluenceRecord tracin_cos(const CheckpointSeries& series, const Sample& train_sample,
                           const Sample& test_sample, const InfluenceOptions& opts = {});

// All-pairs scores. Gradients are computed once per (checkpoint, sample) and
// reused across the other axis; cell values are independent of thread count.
InfluenceMatrix influence_matrix(const CheckpointSeries& series, const Dataset& train_set,
                                 const Dataset& test_set, const InfluenceOptions& opts = {});

// k best (positive) or worst (negative) totals; ties break by ascending
// train_id so rankings are byte-stable.
TopKSet topk(const InfluenceMatrix& matrix, std::string_view test_id, int k, Sign sign);

// One single-epoch matrix per retained checkpoint; requires keep_per_epoch.
std::vector<InfluenceMatrix> per_epoch_matrix(const InfluenceMatrix& matrix);

// Cumulative view: slice i sums epochs 1..i; the last slice equals the total.
std::vector<InfluenceMatrix> per_epoch_prefix(const InfluenceMatrix& matrix);

// TLIM container: float32 totals (+ optional per-epoch tensor) and a JSON
// index. Loading recomputes totals from the per-epoch tensor when present so
// slice additivity is exact after a round trip.
void save_matrix(const InfluenceMatrix& matrix, const std::string& path,
                 const std::string& config_hash = "");
InfluenceMatrix load_matrix(const std::string& path);

void export_matrix_csv(const InfluenceMatrix& matrix, const std::string& path);

}  // namespace tracelens
