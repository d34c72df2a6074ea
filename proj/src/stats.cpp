#include "tracelens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tracelens {

std::vector<double> average_ranks(std::span<const double> values) {
    const size_t n = values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of ranks i+1..j+1
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman_rho(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail("shape", "spearman_rho: length mismatch");
    if (a.size() < 3) fail("usage", "spearman_rho: need at least 3 pairs");
    auto ra = average_ranks(a);
    auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double da = ra[i] - ma, db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) fail("numeric", "spearman_rho: constant input");
    return cov / std::sqrt(va * vb);
}

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail("shape", "kendall_tau_b: length mismatch");
    if (a.size() < 3) fail("usage", "kendall_tau_b: need at least 3 pairs");
    const size_t n = a.size();
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) {
                ++ties_a;
            } else if (db == 0.0) {
                ++ties_b;
            } else if ((da > 0) == (db > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    double n0 = concordant + discordant;
    double denom = std::sqrt((n0 + ties_a) * (n0 + ties_b));
    if (denom == 0.0) fail("numeric", "kendall_tau_b: constant input");
    return (static_cast<double>(concordant) - static_cast<double>(discordant)) / denom;
}

namespace {

// Exact distribution of W+ over all 2^n sign assignments via subset-sum
// counting on 2x-scaled ranks (average ranks are multiples of 1/2).
double exact_two_sided_p(const std::vector<double>& ranks, double w_plus) {
    long long total_scaled = 0;
    std::vector<long long> scaled(ranks.size());
    for (size_t i = 0; i < ranks.size(); ++i) {
        scaled[i] = std::llround(2.0 * ranks[i]);
        total_scaled += scaled[i];
    }
    std::vector<uint64_t> count(static_cast<size_t>(total_scaled) + 1, 0);
    count[0] = 1;
    long long reach = 0;
    for (long long s : scaled) {
        reach += s;
        for (long long v = reach; v >= s; --v) count[static_cast<size_t>(v)] += count[static_cast<size_t>(v - s)];
    }
    long long target = std::llround(2.0 * w_plus);
    uint64_t le = 0, ge = 0;
    for (long long v = 0; v <= total_scaled; ++v) {
        if (v <= target) le += count[static_cast<size_t>(v)];
        if (v >= target) ge += count[static_cast<size_t>(v)];
    }
    double denom = std::ldexp(1.0, static_cast<int>(ranks.size()));  // 2^n, exact for n <= 25
    double p = 2.0 * static_cast<double>(std::min(le, ge)) / denom;
    return std::min(1.0, p);
}

double approx_two_sided_p(const std::vector<double>& ranks, double w_plus) {
    const double n = static_cast<double>(ranks.size());
    double mu = n * (n + 1.0) / 4.0;
    double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // tie correction: sum(t^3 - t)/48 over tie blocks
    std::vector<double> sorted(ranks);
    std::sort(sorted.begin(), sorted.end());
    size_t i = 0;
    while (i < sorted.size()) {
        size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        double t = static_cast<double>(j - i + 1);
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    if (var <= 0.0) return 1.0;
    double diff = w_plus - mu;
    if (diff == 0.0) return 1.0;
    double cc = diff > 0 ? -0.5 : 0.5;  // continuity correction toward the mean
    double z = (diff + cc) / std::sqrt(var);
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) fail("shape", "wilcoxon_signed_rank: length mismatch");
    std::vector<double> abs_d;
    std::vector<int> signs;
    abs_d.reserve(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double d = x[i] - y[i];
        if (d == 0.0) continue;  // standard practice: zero differences discarded
        abs_d.push_back(std::abs(d));
        signs.push_back(d > 0 ? 1 : -1);
    }
    WilcoxonResult res;
    res.n_used = abs_d.size();
    if (abs_d.empty()) return res;  // all zero differences: p = 1 by convention

    auto ranks = average_ranks(abs_d);
    double w_plus = 0.0, w_minus = 0.0;
    for (size_t i = 0; i < ranks.size(); ++i)
        (signs[i] > 0 ? w_plus : w_minus) += ranks[i];
    res.statistic = std::min(w_plus, w_minus);
    res.exact = abs_d.size() <= 25;
    res.p_value = res.exact ? exact_two_sided_p(ranks, w_plus) : approx_two_sided_p(ranks, w_plus);
    return res;
}

}  // namespace tracelens
