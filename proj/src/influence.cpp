#include "tracelens/influence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tracelens/binary_io.hpp"

namespace tracelens {

using nlohmann::json;

namespace {

constexpr double kNormFloor = 1e-10;
constexpr uint32_t kMatrixVersion = 1;

std::vector<int> epochs_used(const CheckpointSeries& series, const InfluenceOptions& opts) {
    if (series.checkpoints.empty()) fail("usage", "empty checkpoint series");
    int last = opts.use_all_epochs ? series.checkpoints.back().epoch : series.converged_epoch;
    std::vector<int> out;
    for (int e = 1; e <= last; ++e) out.push_back(e);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// cosine with a zero-gradient guard; bit-identical vectors score exactly 1
double cosine_term(std::span<const double> a, double na, std::span<const double> b, double nb) {
    if (na < kNormFloor || nb < kNormFloor) return 0.0;
    if (a.data() == b.data() || std::equal(a.begin(), a.end(), b.begin())) return 1.0;
    return dot(a, b) / (na * nb);
}

InfluenceRecord tracin_pair(const CheckpointSeries& series, const Sample& train_sample,
                            const Sample& test_sample, Variant variant,
                            const InfluenceOptions& opts) {
    if (train_sample.features.size() != test_sample.features.size())
        fail("shape", "tracin: train/test feature dims differ");
    InfluenceRecord rec;
    rec.train_id = train_sample.id;
    rec.test_id = test_sample.id;
    rec.variant = variant;
    for (int e : epochs_used(series, opts)) {
        const ModelParams& params = series.at_epoch(e).params;
        GradientVector g_train = grad(params, train_sample, opts.grad_scope, e);
        GradientVector g_test = grad(params, test_sample, opts.grad_scope, e);
        double term = variant == Variant::dot
                          ? dot(g_test.values, g_train.values)
                          : cosine_term(g_test.values, g_test.norm, g_train.values, g_train.norm);
        if (opts.lr_weighted) term *= series.train_config.learning_rate;
        rec.per_epoch.push_back(term);
        rec.total += term;
    }
    return rec;
}

void append_double(std::string& out, double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

Variant parse_variant(std::string_view s) {
    if (s == "dot") return Variant::dot;
    if (s == "cosine" || s == "cos") return Variant::cosine;
    fail("usage", "unknown influence variant: " + std::string(s));
}

std::string to_string(Variant v) { return v == Variant::dot ? "dot" : "cosine"; }
std::string to_string(Sign s) { return s == Sign::positive ? "positive" : "negative"; }

Sign parse_sign(std::string_view s) {
    if (s == "positive" || s == "pos") return Sign::positive;
    if (s == "negative" || s == "neg") return Sign::negative;
    fail("usage", "unknown sign: " + std::string(s));
}

size_t InfluenceMatrix::test_index(std::string_view id) const {
    for (size_t i = 0; i < test_ids.size(); ++i)
        if (test_ids[i] == id) return i;
    fail("lookup", "test id not in matrix: " + std::string(id));
}

size_t InfluenceMatrix::train_index(std::string_view id) const {
    for (size_t i = 0; i < train_ids.size(); ++i)
        if (train_ids[i] == id) return i;
    fail("lookup", "train id not in matrix: " + std::string(id));
}

InfluenceRecord tracin_dot(const CheckpointSeries& series, const Sample& train_sample,
                           const Sample& test_sample, const InfluenceOptions& opts) {
    return tracin_pair(series, train_sample, test_sample, Variant::dot, opts);
}

InfluenceRecord tracin_cos(const CheckpointSeries& series, const Sample& train_sample,
                           const Sample& test_sample, const InfluenceOptions& opts) {
    return tracin_pair(series, train_sample, test_sample, Variant::cosine, opts);
}

InfluenceMatrix influence_matrix(const CheckpointSeries& series, const Dataset& train_set,
                                 const Dataset& test_set, const InfluenceOptions& opts) {
    if (train_set.empty() || test_set.empty()) fail("usage", "influence_matrix: empty dataset");
    if (train_set.feature_dim() != test_set.feature_dim())
        fail("shape", "influence_matrix: train/test feature dims differ");

    InfluenceMatrix mat;
    mat.variant = opts.variant;
    mat.epochs = epochs_used(series, opts);
    mat.checkpoint_fingerprint = series_fingerprint(series);
    mat.test_ids.reserve(test_set.size());
    for (const auto& s : test_set.samples()) mat.test_ids.push_back(s.id);
    mat.train_ids.reserve(train_set.size());
    for (const auto& s : train_set.samples()) mat.train_ids.push_back(s.id);

    const size_t n_test = test_set.size(), n_train = train_set.size();
    const size_t E = mat.epochs.size();
    mat.totals.assign(n_test * n_train, 0.0);
    if (opts.keep_per_epoch) mat.per_epoch.assign(E * n_test * n_train, 0.0);

    const size_t P = series.checkpoints.front().params.param_count();
    std::vector<double> g_test(n_test * P), g_train(n_train * P);
    std::vector<double> n_test_norm(n_test), n_train_norm(n_train);

    for (size_t ei = 0; ei < E; ++ei) {
        const ModelParams& params = series.at_epoch(mat.epochs[ei]).params;
        try {
            parallel_for(n_test, opts.threads, [&](size_t lo, size_t hi) {
                for (size_t i = lo; i < hi; ++i)
                    n_test_norm[i] = grad_into(params, test_set[i],
                                               std::span(g_test.data() + i * P, P), opts.grad_scope);
            });
            parallel_for(n_train, opts.threads, [&](size_t lo, size_t hi) {
                for (size_t i = lo; i < hi; ++i)
                    n_train_norm[i] = grad_into(params, train_set[i],
                                                std::span(g_train.data() + i * P, P), opts.grad_scope);
            });
        } catch (const Error& e) {
            fail(e.kind(), "influence_matrix at epoch " + std::to_string(mat.epochs[ei]) + ": " + e.what());
        }

        const double lr_w = opts.lr_weighted ? series.train_config.learning_rate : 1.0;
        double* slice = opts.keep_per_epoch ? mat.per_epoch.data() + ei * n_test * n_train : nullptr;
        parallel_for(n_test, opts.threads, [&](size_t lo, size_t hi) {
            for (size_t ti = lo; ti < hi; ++ti) {
                std::span<const double> gt(g_test.data() + ti * P, P);
                double* totals_row = mat.totals.data() + ti * n_train;
                double* slice_row = slice ? slice + ti * n_train : nullptr;
                for (size_t tj = 0; tj < n_train; ++tj) {
                    std::span<const double> gr(g_train.data() + tj * P, P);
                    double term;
                    if (opts.variant == Variant::dot) {
                        term = dot(gt, gr);
                    } else if (mat.test_ids[ti] == mat.train_ids[tj]) {
                        term = cosine_term(gt, n_test_norm[ti], gr, n_train_norm[tj]);
                    } else {
                        double na = n_test_norm[ti], nb = n_train_norm[tj];
                        term = (na < kNormFloor || nb < kNormFloor) ? 0.0 : dot(gt, gr) / (na * nb);
                    }
                    term *= lr_w;
                    totals_row[tj] += term;
                    if (slice_row) slice_row[tj] = term;
                }
            }
        });
    }
    return mat;
}

TopKSet topk(const InfluenceMatrix& matrix, std::string_view test_id, int k, Sign sign) {
    if (k < 1) fail("usage", "topk: k must be >= 1");
    size_t row = matrix.test_index(test_id);
    const size_t n = matrix.n_train();
    const double* scores = matrix.totals.data() + row * n;

    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    size_t kk = std::min<size_t>(static_cast<size_t>(k), n);
    auto better = [&](size_t a, size_t b) {
        if (scores[a] != scores[b])
            return sign == Sign::positive ? scores[a] > scores[b] : scores[a] < scores[b];
        return matrix.train_ids[a] < matrix.train_ids[b];
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(kk), idx.end(), better);

    TopKSet set;
    set.test_id = std::string(test_id);
    set.sign = sign;
    set.k = k;
    set.entries.reserve(kk);
    for (size_t i = 0; i < kk; ++i) set.entries.emplace_back(matrix.train_ids[idx[i]], scores[idx[i]]);
    return set;
}

std::vector<InfluenceMatrix> per_epoch_matrix(const InfluenceMatrix& matrix) {
    if (matrix.per_epoch.empty())
        fail("unavailable", "per-epoch terms were dropped when this matrix was built");
    std::vector<InfluenceMatrix> slices;
    const size_t cells = matrix.n_test() * matrix.n_train();
    for (size_t e = 0; e < matrix.epochs.size(); ++e) {
        InfluenceMatrix s;
        s.test_ids = matrix.test_ids;
        s.train_ids = matrix.train_ids;
        s.epochs = {matrix.epochs[e]};
        s.variant = matrix.variant;
        s.checkpoint_fingerprint = matrix.checkpoint_fingerprint;
        s.totals.assign(matrix.per_epoch.begin() + static_cast<ptrdiff_t>(e * cells),
                        matrix.per_epoch.begin() + static_cast<ptrdiff_t>((e + 1) * cells));
        slices.push_back(std::move(s));
    }
    return slices;
}

std::vector<InfluenceMatrix> per_epoch_prefix(const InfluenceMatrix& matrix) {
    auto slices = per_epoch_matrix(matrix);
    for (size_t e = 1; e < slices.size(); ++e) {
        for (size_t c = 0; c < slices[e].totals.size(); ++c)
            slices[e].totals[c] += slices[e - 1].totals[c];
        slices[e].epochs = matrix.epochs;
        slices[e].epochs.resize(e + 1);
    }
    return slices;
}

void save_matrix(const InfluenceMatrix& matrix, const std::string& path,
                 const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write matrix: " + path);
    out.write("TLIM", 4);
    bin::put_u32(out, kMatrixVersion);
    bin::put_u8(out, matrix.variant == Variant::dot ? 0 : 1);
    bin::put_u8(out, matrix.per_epoch.empty() ? 0 : 1);
    bin::put_u8(out, 0);
    bin::put_u8(out, 0);
    bin::put_u32(out, static_cast<uint32_t>(matrix.n_test()));
    bin::put_u32(out, static_cast<uint32_t>(matrix.n_train()));
    bin::put_u32(out, static_cast<uint32_t>(matrix.epochs.size()));
    bin::put_f32_array(out, matrix.totals);
    if (!matrix.per_epoch.empty()) bin::put_f32_array(out, matrix.per_epoch);

    json index;
    index["test_ids"] = matrix.test_ids;
    index["train_ids"] = matrix.train_ids;
    index["epochs"] = matrix.epochs;
    index["variant"] = to_string(matrix.variant);
    index["checkpoint_fingerprint"] = matrix.checkpoint_fingerprint;
    index["tool_version"] = std::string(kToolVersion);
    if (!config_hash.empty()) index["config_hash"] = config_hash;
    std::string tail = index.dump();
    bin::put_u64(out, tail.size());
    bin::put_bytes(out, tail.data(), tail.size());
    if (!out) fail("io", "short write: " + path);
}

InfluenceMatrix load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open matrix: " + path);
    char magic[4];
    bin::get_bytes(in, magic, 4);
    if (std::string_view(magic, 4) != "TLIM") fail("parse", "bad magic in " + path);
    uint32_t version = bin::get_u32(in);
    if (version != kMatrixVersion) fail("parse", "unsupported matrix version " + std::to_string(version));
    uint8_t variant_byte = bin::get_u8(in);
    uint8_t has_per_epoch = bin::get_u8(in);
    bin::get_u8(in);
    bin::get_u8(in);
    size_t n_test = bin::get_u32(in);
    size_t n_train = bin::get_u32(in);
    size_t n_epochs = bin::get_u32(in);

    InfluenceMatrix mat;
    mat.variant = variant_byte == 0 ? Variant::dot : Variant::cosine;
    mat.totals.resize(n_test * n_train);
    bin::get_f32_array(in, mat.totals);
    if (has_per_epoch) {
        mat.per_epoch.resize(n_epochs * n_test * n_train);
        bin::get_f32_array(in, mat.per_epoch);
    }
    uint64_t tail_len = bin::get_u64(in);
    std::string tail(tail_len, '\0');
    bin::get_bytes(in, tail.data(), tail_len);
    json index;
    try {
        index = json::parse(tail);
    } catch (const json::exception& e) {
        fail("parse", path + ": bad index: " + e.what());
    }
    mat.test_ids = index.at("test_ids").get<std::vector<std::string>>();
    mat.train_ids = index.at("train_ids").get<std::vector<std::string>>();
    mat.epochs = index.at("epochs").get<std::vector<int>>();
    mat.checkpoint_fingerprint = index.at("checkpoint_fingerprint").get<std::string>();
    if (mat.test_ids.size() != n_test || mat.train_ids.size() != n_train ||
        mat.epochs.size() != n_epochs)
        fail("integrity", path + ": index does not match array dimensions");

    // keep totals exactly equal to the ordered sum of the stored slices
    if (has_per_epoch) {
        const size_t cells = n_test * n_train;
        std::fill(mat.totals.begin(), mat.totals.end(), 0.0);
        for (size_t e = 0; e < n_epochs; ++e)
            for (size_t c = 0; c < cells; ++c) mat.totals[c] += mat.per_epoch[e * cells + c];
    }
    return mat;
}

void export_matrix_csv(const InfluenceMatrix& matrix, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write csv: " + path);
    std::string line = "test_id,train_id,total\n";
    out << line;
    for (size_t ti = 0; ti < matrix.n_test(); ++ti) {
        for (size_t tj = 0; tj < matrix.n_train(); ++tj) {
            line.clear();
            line += matrix.test_ids[ti];
            line += ',';
            line += matrix.train_ids[tj];
            line += ',';
            append_double(line, matrix.total_at(ti, tj));
            line += '\n';
            out << line;
        }
    }
    if (!out) fail("io", "short write: " + path);
}

}  // namespace tracelens
