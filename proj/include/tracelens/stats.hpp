#pragma once

#include <span>
#include <vector>

#include "tracelens/common.hpp"

namespace tracelens {

// average ranks (1-based), ties get the mean of their rank block
std::vector<double> average_ranks(std::span<const double> values);

double spearman_rho(std::span<const double> a, std::span<const double> b);
double kendall_tau_b(std::span<const double> a, std::span<const double> b);

struct WilcoxonResult {
    double statistic = 0.0;  // min(W+, W-) over nonzero differences
    double p_value = 1.0;    // two-sided
    size_t n_used = 0;       // pairs left after discarding zero differences
    bool exact = true;       // exact null distribution vs normal approximation
};

// Two-sided Wilcoxon signed-rank test on paired lists. Zero differences are
// discarded; all zeros gives p = 1. Exact null distribution for n <= 25,
// normal approximation with tie and continuity corrections above that.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

}  // namespace tracelens
