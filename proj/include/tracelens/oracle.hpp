#pragma once

#include <string>
#include <vector>

#include "tracelens/model.hpp"

namespace tracelens {

struct LooResult {
    std::string train_id;
    std::string test_id;
    double loss_with = 0.0;     // test loss at the converged checkpoint of the full run
    double loss_without = 0.0;  // same, retrained without the train sample
    double delta = 0.0;         // loss_without - loss_with; positive = sample helped
};

struct HessianInfluence {
    std::string train_id;
    std::string test_id;
    double score = 0.0;
    double hessian_damping = 0.0;
};

struct RankAgreement {
    double spearman_rho = 0.0;
    double kendall_tau = 0.0;
};

// Retrains with and without `train_id` under identical seeds and batch
// schedules (the removed slot is skipped, not reshuffled) and reports the
// per-test loss deltas at each run's converged checkpoint.
std::vector<LooResult> loo_influence(const Dataset& train_set, const Dataset& dev_set,
                                     const Hyperparams& hyper, ModelMode mode,
                                     const std::string& train_id,
                                     std::span<const Sample> test_samples);

// All-removals variant sharing one base run; removals run in parallel, each
// training itself single-threaded.
struct LooBattery {
    CheckpointSeries base;
    std::vector<LooResult> results;  // train-major, test-minor
};
LooBattery exhaustive_loo(const Dataset& train_set, const Dataset& dev_set,
                          const Hyperparams& hyper, ModelMode mode,
                          std::span<const Sample> test_samples, int threads = 1);

// Influence through the damped inverse Hessian of the average training loss
// at converged parameters (linear mode only):
//   score = -grad_test^T (H + damping I)^-1 grad_train.
// Note the sign: the score approximates the effect of *upweighting* the
// training sample, so the predicted leave-one-out delta is -score / N.
class HessianOracle {
public:
    HessianOracle(const ModelParams& converged, const Dataset& train_set, double damping = 1e-3);

    HessianInfluence score(const Sample& z_train, const Sample& z_test) const;
    double damping() const noexcept { return damping_; }

private:
    ModelParams params_;
    double damping_;
    std::vector<double> chol_;  // lower-triangular Cholesky factor, row-major
    size_t dim_;

    std::vector<double> solve(std::span<const double> rhs) const;
};

HessianInfluence hessian_influence(const ModelParams& converged, const Dataset& train_set,
                                   const Sample& z_train, const Sample& z_test,
                                   double damping = 1e-3);

// Spearman rho and Kendall tau with average-rank tie handling.
RankAgreement rank_agreement(std::span<const double> scores_a, std::span<const double> scores_b);

}  // namespace tracelens
