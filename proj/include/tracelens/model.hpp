#pragma once

#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "tracelens/dataset.hpp"

namespace tracelens {

enum class ModelMode { linear, mlp };

// Gradient scope: `output_layer` zeroes the hidden-layer block, for speed
// studies; influence defaults to the full parameter vector.
enum class GradScope { full, output_layer };

ModelMode parse_model_mode(std::string_view s);
std::string to_string(ModelMode mode);

// Binary classifier: sigmoid(w2 . tanh(W1 x + b1) + b2), or plain logistic
// regression in linear mode. Parameters are kept in double; checkpoints are
// rounded to float32 so the on-disk format round-trips exactly.
struct ModelParams {
    ModelMode mode = ModelMode::mlp;
    int feature_dim = 0;
    int hidden_dim = 0;       // 0 in linear mode
    std::vector<double> w1;   // hidden x feature, row-major (mlp only)
    std::vector<double> b1;   // hidden (mlp only)
    std::vector<double> w2;   // hidden (mlp) or feature (linear)
    double b2 = 0.0;

    size_t param_count() const;
    // canonical order: W1 row-major, b1, w2, b2
    void flatten_into(std::span<double> out) const;
    static ModelParams from_flat(ModelMode mode, int feature_dim, int hidden_dim,
                                 std::span<const double> flat);
};

ModelParams init_params(ModelMode mode, int feature_dim, int hidden_dim, uint64_t seed);
ModelParams round_to_f32(const ModelParams& params);

struct Hyperparams {
    double learning_rate = 3e-3;
    int epochs_max = 10;
    int patience = 3;
    int batch_size = 32;
    int hidden_dim = 16;
    double weight_decay = 0.01;
    uint64_t seed = 0;
};

struct Checkpoint {
    int epoch = 0;  // 1-based
    ModelParams params;
    double dev_metric = 0.0;  // accuracy on the held-out split
};

struct CheckpointSeries {
    std::vector<Checkpoint> checkpoints;
    int converged_epoch = 0;  // argmax dev accuracy, earliest on ties
    Hyperparams train_config;
    ModelMode mode = ModelMode::mlp;
    std::string dataset_fingerprint;
    std::vector<double> epoch_train_loss;  // mean training loss per epoch

    const Checkpoint& converged() const;
    const Checkpoint& at_epoch(int epoch) const;
};

struct GradientVector {
    std::vector<double> values;  // canonical parameter order
    double norm = 0.0;
    int checkpoint_epoch = 0;
    std::string sample_id;
};

double forward(const ModelParams& params, std::span<const double> features);
double loss(const ModelParams& params, const Sample& sample);
double confidence(const ModelParams& params, const Sample& sample);

// Writes the analytic loss gradient into `out` (size param_count); returns its
// L2 norm.
double grad_into(const ModelParams& params, const Sample& sample, std::span<double> out,
                 GradScope scope = GradScope::full);
GradientVector grad(const ModelParams& params, const Sample& sample,
                    GradScope scope = GradScope::full, int checkpoint_epoch = 0);

double accuracy(const ModelParams& params, const Dataset& dataset);

// AdamW with a seeded shuffle, one checkpoint per epoch, early stopping on dev
// accuracy. `exclude_ids` skips those samples while keeping the batch schedule
// of the full run (slots are skipped, not reshuffled).
CheckpointSeries train(const Dataset& train_set, const Dataset& dev_set, const Hyperparams& hyper,
                       ModelMode mode, const std::unordered_set<std::string>* exclude_ids = nullptr);

// TLCK container + JSON sidecars, one file per epoch under `dir`.
void save_series(const CheckpointSeries& series, const std::string& dir,
                 const std::string& config_hash = "");
CheckpointSeries load_series(const std::string& dir);

std::string series_fingerprint(const CheckpointSeries& series);

}  // namespace tracelens
