#include "tracelens/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "tracelens/stats.hpp"

namespace tracelens {

namespace {

std::vector<LooResult> deltas_against_base(const CheckpointSeries& base,
                                           const CheckpointSeries& without,
                                           const std::string& train_id,
                                           std::span<const Sample> test_samples) {
    const ModelParams& with_params = base.converged().params;
    const ModelParams& without_params = without.converged().params;
    std::vector<LooResult> out;
    out.reserve(test_samples.size());
    for (const Sample& t : test_samples) {
        LooResult r;
        r.train_id = train_id;
        r.test_id = t.id;
        r.loss_with = loss(with_params, t);
        r.loss_without = loss(without_params, t);
        r.delta = r.loss_without - r.loss_with;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

std::vector<LooResult> loo_influence(const Dataset& train_set, const Dataset& dev_set,
                                     const Hyperparams& hyper, ModelMode mode,
                                     const std::string& train_id,
                                     std::span<const Sample> test_samples) {
    train_set.require(train_id);
    CheckpointSeries base = train(train_set, dev_set, hyper, mode);
    std::unordered_set<std::string> removed{train_id};
    CheckpointSeries without = train(train_set, dev_set, hyper, mode, &removed);
    return deltas_against_base(base, without, train_id, test_samples);
}

LooBattery exhaustive_loo(const Dataset& train_set, const Dataset& dev_set,
                          const Hyperparams& hyper, ModelMode mode,
                          std::span<const Sample> test_samples, int threads) {
    LooBattery battery;
    battery.base = train(train_set, dev_set, hyper, mode);
    const size_t n = train_set.size();
    std::vector<std::vector<LooResult>> per_removal(n);
    parallel_for(n, threads, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            std::unordered_set<std::string> removed{train_set[i].id};
            CheckpointSeries without = train(train_set, dev_set, hyper, mode, &removed);
            per_removal[i] = deltas_against_base(battery.base, without, train_set[i].id, test_samples);
        }
    });
    for (auto& chunk : per_removal)
        for (auto& r : chunk) battery.results.push_back(std::move(r));
    return battery;
}

HessianOracle::HessianOracle(const ModelParams& converged, const Dataset& train_set, double damping)
    : params_(converged), damping_(damping) {
    if (converged.mode != ModelMode::linear)
        fail("unsupported_mode", "hessian influence requires the convex (linear) model mode");
    if (damping < 0) fail("usage", "hessian damping must be >= 0");
    if (train_set.empty()) fail("usage", "hessian influence: empty training set");

    const size_t D = static_cast<size_t>(converged.feature_dim);
    dim_ = D + 1;  // weights + bias

    // H = mean over training samples of p(1-p) * u u^T with u = [x; 1]
    std::vector<double> H(dim_ * dim_, 0.0);
    std::vector<double> u(dim_);
    for (const Sample& s : train_set.samples()) {
        double p = forward(params_, s.features);
        double c = p * (1.0 - p);
        for (size_t d = 0; d < D; ++d) u[d] = s.features[d];
        u[D] = 1.0;
        for (size_t i = 0; i < dim_; ++i) {
            double cu = c * u[i];
            for (size_t j = 0; j <= i; ++j) H[i * dim_ + j] += cu * u[j];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(train_set.size());
    for (size_t i = 0; i < dim_; ++i) {
        for (size_t j = 0; j <= i; ++j) H[i * dim_ + j] *= inv_n;
        H[i * dim_ + i] += damping_;
    }

    // in-place Cholesky (lower triangle)
    chol_ = std::move(H);
    for (size_t i = 0; i < dim_; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double sum = chol_[i * dim_ + j];
            for (size_t k = 0; k < j; ++k) sum -= chol_[i * dim_ + k] * chol_[j * dim_ + k];
            if (i == j) {
                if (sum <= 0.0)
                    fail("numeric", "hessian solve failed: matrix not positive definite "
                                    "(damping " + std::to_string(damping_) + ")");
                chol_[i * dim_ + i] = std::sqrt(sum);
            } else {
                chol_[i * dim_ + j] = sum / chol_[j * dim_ + j];
            }
        }
    }
}

std::vector<double> HessianOracle::solve(std::span<const double> rhs) const {
    std::vector<double> y(dim_);
    for (size_t i = 0; i < dim_; ++i) {
        double sum = rhs[i];
        for (size_t k = 0; k < i; ++k) sum -= chol_[i * dim_ + k] * y[k];
        y[i] = sum / chol_[i * dim_ + i];
    }
    for (size_t ii = dim_; ii-- > 0;) {
        double sum = y[ii];
        for (size_t k = ii + 1; k < dim_; ++k) sum -= chol_[k * dim_ + ii] * y[k];
        y[ii] = sum / chol_[ii * dim_ + ii];
    }
    return y;
}

HessianInfluence HessianOracle::score(const Sample& z_train, const Sample& z_test) const {
    GradientVector g_train = grad(params_, z_train);
    GradientVector g_test = grad(params_, z_test);
    std::vector<double> h_inv_g = solve(g_train.values);
    double s = 0.0;
    for (size_t i = 0; i < dim_; ++i) s += g_test.values[i] * h_inv_g[i];
    HessianInfluence out;
    out.train_id = z_train.id;
    out.test_id = z_test.id;
    out.score = -s;
    out.hessian_damping = damping_;
    if (!std::isfinite(out.score)) fail("numeric", "hessian influence is not finite");
    return out;
}

HessianInfluence hessian_influence(const ModelParams& converged, const Dataset& train_set,
                                   const Sample& z_train, const Sample& z_test, double damping) {
    return HessianOracle(converged, train_set, damping).score(z_train, z_test);
}

RankAgreement rank_agreement(std::span<const double> scores_a, std::span<const double> scores_b) {
    if (scores_a.size() != scores_b.size()) fail("shape", "rank_agreement: length mismatch");
    if (scores_a.size() < 3) fail("usage", "rank_agreement: need at least 3 scores");
    RankAgreement out;
    out.spearman_rho = spearman_rho(scores_a, scores_b);
    out.kendall_tau = kendall_tau_b(scores_a, scores_b);
    return out;
}

}  // namespace tracelens
