#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracelens/analysis.hpp"

namespace tracelens {

// Fixture for the ground-truth validators: small enough that exhaustive
// leave-one-out retraining is cheap, linear mode so the Hessian is exact.
// Short training keeps the argmax-dev checkpoint at the last epoch, so base
// and removal runs compare parameters after identical step counts.
struct OracleFixtureConfig {
    int n_groups = 2;
    int per_group = 32;  // 64 training samples total
    int latent_dim = 8;
    double group_shift_scale = 0.3;
    double noise_scale = 0.1;
    int test_count = 5;
    double damping = 1e-3;
    Hyperparams hyper{0.01, 4, 4, 8, 0, 0.0, 0};  // lr, epochs, patience, batch, hidden, wd, seed
};

struct RunConfig {
    uint64_t seed = 42;
    int threads = 0;  // 0 = hardware concurrency; never part of the config hash
    std::string out_dir = "out";

    // dataset
    std::string source = "synthetic";  // synthetic | files
    SynthConfig synth;
    int synth_dev_per_group = 200;
    int synth_test_per_group = 200;
    std::string file_train, file_dev, file_test;
    int file_dims = 0;
    uint64_t file_feat_seed = 0;

    // model
    ModelMode mode = ModelMode::mlp;
    Hyperparams hyper;

    // influence
    InfluenceOptions influence;
    int k = 100;
    bool export_csv = false;

    // test selection
    int per_group = 25;
    uint64_t select_seed = 7;

    // analysis toggles
    std::vector<int> k_grid{50, 100, 150, 200, 250};
    bool run_group_contribution = true;
    bool run_average_influence = true;
    bool run_reinforcing = true;
    bool run_removal_validation = true;
    bool run_epoch_dynamics = true;
    std::vector<std::string> zero_shot_groups{"g0"};
    std::string imbalance_group = "g0";
    std::vector<int> imbalance_pcts{25, 50, 75, 100};

    OracleFixtureConfig oracle;
};

RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json config_to_json(const RunConfig& config);

// Hash over the canonicalized config; out_dir and threads are excluded so
// reruns in other locations or at other parallelism levels hash identically.
std::string config_hash(const RunConfig& config);

// Pipeline phases, file-mediated: each phase reads the artifacts written by
// the previous one so stepwise and end-to-end runs agree exactly.
void phase_gen_data(const RunConfig& config);
void phase_train(const RunConfig& config);
void phase_influence(const RunConfig& config);
void phase_topk(const RunConfig& config);
void phase_validate(const RunConfig& config);
void phase_analyze(const RunConfig& config);
void phase_reproduce(const RunConfig& config);

// CLI entry used by main() and by in-process tests. Returns the exit code;
// failures print a machine-readable error JSON to stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace tracelens
