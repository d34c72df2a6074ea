#include "tracelens/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tracelens/binary_io.hpp"
#include "tracelens/rng.hpp"

namespace fs = std::filesystem;

namespace tracelens {

using nlohmann::json;

namespace {

constexpr double kProbClamp = 1e-12;

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

double bce(double p, int y) {
    double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

void check_dims(const ModelParams& params, size_t feature_len) {
    if (static_cast<size_t>(params.feature_dim) != feature_len)
        fail("shape", "feature length " + std::to_string(feature_len) +
                          " does not match model dim " + std::to_string(params.feature_dim));
}

}  // namespace

ModelMode parse_model_mode(std::string_view s) {
    if (s == "linear") return ModelMode::linear;
    if (s == "mlp") return ModelMode::mlp;
    fail("usage", "unknown model mode: " + std::string(s));
}

std::string to_string(ModelMode mode) { return mode == ModelMode::linear ? "linear" : "mlp"; }

size_t ModelParams::param_count() const {
    if (mode == ModelMode::linear) return static_cast<size_t>(feature_dim) + 1;
    size_t h = static_cast<size_t>(hidden_dim), d = static_cast<size_t>(feature_dim);
    return h * d + h + h + 1;
}

void ModelParams::flatten_into(std::span<double> out) const {
    if (out.size() != param_count()) fail("shape", "flatten_into: wrong buffer size");
    size_t i = 0;
    for (double v : w1) out[i++] = v;
    for (double v : b1) out[i++] = v;
    for (double v : w2) out[i++] = v;
    out[i] = b2;
}

ModelParams ModelParams::from_flat(ModelMode mode, int feature_dim, int hidden_dim,
                                   std::span<const double> flat) {
    ModelParams p;
    p.mode = mode;
    p.feature_dim = feature_dim;
    p.hidden_dim = mode == ModelMode::linear ? 0 : hidden_dim;
    if (flat.size() != p.param_count()) fail("shape", "from_flat: wrong vector size");
    size_t i = 0;
    if (mode == ModelMode::mlp) {
        size_t h = static_cast<size_t>(hidden_dim), d = static_cast<size_t>(feature_dim);
        p.w1.assign(flat.begin(), flat.begin() + static_cast<ptrdiff_t>(h * d));
        i = h * d;
        p.b1.assign(flat.begin() + static_cast<ptrdiff_t>(i), flat.begin() + static_cast<ptrdiff_t>(i + h));
        i += h;
        p.w2.assign(flat.begin() + static_cast<ptrdiff_t>(i), flat.begin() + static_cast<ptrdiff_t>(i + h));
        i += h;
    } else {
        size_t d = static_cast<size_t>(feature_dim);
        p.w2.assign(flat.begin(), flat.begin() + static_cast<ptrdiff_t>(d));
        i = d;
    }
    p.b2 = flat[i];
    return p;
}

ModelParams init_params(ModelMode mode, int feature_dim, int hidden_dim, uint64_t seed) {
    ModelParams p;
    p.mode = mode;
    p.feature_dim = feature_dim;
    p.hidden_dim = mode == ModelMode::linear ? 0 : hidden_dim;
    Rng rng = derive_rng(seed, "init");
    // uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer
    if (mode == ModelMode::mlp) {
        if (hidden_dim < 1) fail("usage", "mlp mode needs hidden_dim >= 1");
        double bound1 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
        double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
        p.w1.resize(static_cast<size_t>(hidden_dim) * static_cast<size_t>(feature_dim));
        p.b1.resize(static_cast<size_t>(hidden_dim));
        p.w2.resize(static_cast<size_t>(hidden_dim));
        for (auto& v : p.w1) v = rng.next_uniform(-bound1, bound1);
        for (auto& v : p.b1) v = rng.next_uniform(-bound1, bound1);
        for (auto& v : p.w2) v = rng.next_uniform(-bound2, bound2);
        p.b2 = rng.next_uniform(-bound2, bound2);
    } else {
        double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
        p.w2.resize(static_cast<size_t>(feature_dim));
        for (auto& v : p.w2) v = rng.next_uniform(-bound, bound);
        p.b2 = rng.next_uniform(-bound, bound);
    }
    return p;
}

ModelParams round_to_f32(const ModelParams& params) {
    ModelParams p = params;
    auto snap = [](std::vector<double>& v) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    };
    snap(p.w1);
    snap(p.b1);
    snap(p.w2);
    p.b2 = static_cast<double>(static_cast<float>(p.b2));
    return p;
}

double forward(const ModelParams& params, std::span<const double> features) {
    check_dims(params, features.size());
    double z;
    if (params.mode == ModelMode::linear) {
        z = params.b2;
        for (size_t d = 0; d < features.size(); ++d) z += params.w2[d] * features[d];
    } else {
        z = params.b2;
        size_t H = static_cast<size_t>(params.hidden_dim), D = features.size();
        for (size_t h = 0; h < H; ++h) {
            double a = params.b1[h];
            const double* row = params.w1.data() + h * D;
            for (size_t d = 0; d < D; ++d) a += row[d] * features[d];
            z += params.w2[h] * std::tanh(a);
        }
    }
    return sigmoid(z);
}

double loss(const ModelParams& params, const Sample& sample) {
    return bce(forward(params, sample.features), sample.label);
}

double confidence(const ModelParams& params, const Sample& sample) {
    double p = forward(params, sample.features);
    return sample.label == 1 ? p : 1.0 - p;
}

double grad_into(const ModelParams& params, const Sample& sample, std::span<double> out,
                 GradScope scope) {
    if (out.size() != params.param_count()) fail("shape", "grad_into: wrong buffer size");
    const auto& x = sample.features;
    check_dims(params, x.size());
    const size_t D = x.size();

    double norm_sq = 0.0;
    if (params.mode == ModelMode::linear) {
        double z = params.b2;
        for (size_t d = 0; d < D; ++d) z += params.w2[d] * x[d];
        double r = sigmoid(z) - static_cast<double>(sample.label);
        for (size_t d = 0; d < D; ++d) {
            out[d] = r * x[d];
            norm_sq += out[d] * out[d];
        }
        out[D] = r;
        norm_sq += r * r;
    } else {
        const size_t H = static_cast<size_t>(params.hidden_dim);
        std::vector<double> hid(H);
        double z = params.b2;
        for (size_t h = 0; h < H; ++h) {
            double a = params.b1[h];
            const double* row = params.w1.data() + h * D;
            for (size_t d = 0; d < D; ++d) a += row[d] * x[d];
            hid[h] = std::tanh(a);
            z += params.w2[h] * hid[h];
        }
        double r = sigmoid(z) - static_cast<double>(sample.label);

        const bool full = scope == GradScope::full;
        for (size_t h = 0; h < H; ++h) {
            double dpre = full ? r * params.w2[h] * (1.0 - hid[h] * hid[h]) : 0.0;
            double* g_row = out.data() + h * D;
            for (size_t d = 0; d < D; ++d) {
                g_row[d] = dpre * x[d];
                norm_sq += g_row[d] * g_row[d];
            }
            out[H * D + h] = dpre;  // b1
            norm_sq += dpre * dpre;
        }
        for (size_t h = 0; h < H; ++h) {
            double g = r * hid[h];
            out[H * D + H + h] = g;  // w2
            norm_sq += g * g;
        }
        out[H * D + H + H] = r;  // b2
        norm_sq += r * r;
    }
    return std::sqrt(norm_sq);
}

GradientVector grad(const ModelParams& params, const Sample& sample, GradScope scope,
                    int checkpoint_epoch) {
    GradientVector g;
    g.values.resize(params.param_count());
    g.norm = grad_into(params, sample, g.values, scope);
    g.checkpoint_epoch = checkpoint_epoch;
    g.sample_id = sample.id;
    return g;
}

double accuracy(const ModelParams& params, const Dataset& dataset) {
    if (dataset.empty()) fail("usage", "accuracy: empty dataset");
    size_t correct = 0;
    for (const auto& s : dataset.samples())
        if (confidence(params, s) > 0.5) ++correct;
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

const Checkpoint& CheckpointSeries::converged() const { return at_epoch(converged_epoch); }

const Checkpoint& CheckpointSeries::at_epoch(int epoch) const {
    for (const auto& c : checkpoints)
        if (c.epoch == epoch) return c;
    fail("lookup", "no checkpoint for epoch " + std::to_string(epoch));
}

CheckpointSeries train(const Dataset& train_set, const Dataset& dev_set, const Hyperparams& hyper,
                       ModelMode mode, const std::unordered_set<std::string>* exclude_ids) {
    if (train_set.empty() || dev_set.empty()) fail("usage", "train: empty train or dev set");
    if (train_set.feature_dim() != dev_set.feature_dim())
        fail("shape", "train: train/dev feature dims differ");
    if (hyper.learning_rate <= 0) fail("usage", "train: learning_rate must be > 0");
    if (hyper.patience < 1) fail("usage", "train: patience must be >= 1");
    if (hyper.batch_size < 1) fail("usage", "train: batch_size must be >= 1");
    if (hyper.epochs_max < 1) fail("usage", "train: epochs_max must be >= 1");

    const size_t N = train_set.size();
    std::vector<char> excluded(N, 0);
    if (exclude_ids) {
        for (size_t i = 0; i < N; ++i)
            if (exclude_ids->count(train_set[i].id)) excluded[i] = 1;
    }

    ModelParams params = init_params(mode, train_set.feature_dim(), hyper.hidden_dim, hyper.seed);
    const size_t P = params.param_count();

    // AdamW state
    std::vector<double> m(P, 0.0), v(P, 0.0), flat(P), batch_grad(P), sample_grad(P);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    CheckpointSeries series;
    series.train_config = hyper;
    series.mode = mode;
    {
        // fingerprint over the samples actually trained on
        Fnv1a h;
        for (size_t i = 0; i < N; ++i)
            if (!excluded[i]) hash_sample(h, train_set[i]);
        series.dataset_fingerprint = h.hex();
    }

    std::vector<size_t> order(N);
    for (size_t i = 0; i < N; ++i) order[i] = i;
    // One shuffle stream for the whole run. A run with exclusions consumes the
    // stream identically to the full run, so batch schedules line up.
    Rng shuffle_rng = derive_rng(hyper.seed, "shuffle");

    double best_dev = -1.0;
    int bad_epochs = 0;

    for (int epoch = 1; epoch <= hyper.epochs_max; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        size_t epoch_loss_count = 0;

        size_t batch_index = 0;
        for (size_t start = 0; start < N; start += static_cast<size_t>(hyper.batch_size), ++batch_index) {
            size_t end = std::min(N, start + static_cast<size_t>(hyper.batch_size));
            std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
            size_t in_batch = 0;
            double batch_loss = 0.0;
            for (size_t i = start; i < end; ++i) {
                size_t idx = order[i];
                if (excluded[idx]) continue;
                const Sample& s = train_set[idx];
                batch_loss += loss(params, s);
                grad_into(params, s, sample_grad);
                for (size_t p = 0; p < P; ++p) batch_grad[p] += sample_grad[p];
                ++in_batch;
            }
            if (in_batch == 0) continue;  // all slots excluded; no step

            double inv = 1.0 / static_cast<double>(in_batch);
            batch_loss *= inv;
            if (!std::isfinite(batch_loss))
                fail("training", "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
            epoch_loss_sum += batch_loss * static_cast<double>(in_batch);
            epoch_loss_count += in_batch;

            ++step;
            params.flatten_into(flat);
            double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (size_t p = 0; p < P; ++p) {
                double g = batch_grad[p] * inv;
                m[p] = beta1 * m[p] + (1.0 - beta1) * g;
                v[p] = beta2 * v[p] + (1.0 - beta2) * g * g;
                double update = (m[p] / bc1) / (std::sqrt(v[p] / bc2) + eps);
                flat[p] -= hyper.learning_rate * (update + hyper.weight_decay * flat[p]);
            }
            params = ModelParams::from_flat(mode, params.feature_dim, params.hidden_dim, flat);
        }

        double dev_acc = accuracy(params, dev_set);
        series.checkpoints.push_back({epoch, round_to_f32(params), dev_acc});
        series.epoch_train_loss.push_back(
            epoch_loss_count ? epoch_loss_sum / static_cast<double>(epoch_loss_count) : 0.0);
        log_debug("epoch " + std::to_string(epoch) + " dev_acc=" + std::to_string(dev_acc) +
                  " train_loss=" + std::to_string(series.epoch_train_loss.back()));

        if (dev_acc > best_dev) {
            best_dev = dev_acc;
            bad_epochs = 0;
        } else if (++bad_epochs >= hyper.patience) {
            break;
        }
    }

    // earliest epoch with the best dev accuracy
    series.converged_epoch = series.checkpoints.front().epoch;
    double best = series.checkpoints.front().dev_metric;
    for (const auto& c : series.checkpoints) {
        if (c.dev_metric > best) {
            best = c.dev_metric;
            series.converged_epoch = c.epoch;
        }
    }
    return series;
}

// ---- TLCK container ------------------------------------------------------

namespace {

constexpr uint32_t kCheckpointVersion = 1;

json hyper_to_json(const Hyperparams& h) {
    return json{{"learning_rate", h.learning_rate}, {"epochs_max", h.epochs_max},
                {"patience", h.patience},           {"batch_size", h.batch_size},
                {"hidden_dim", h.hidden_dim},       {"weight_decay", h.weight_decay},
                {"seed", h.seed}};
}

Hyperparams hyper_from_json(const json& j) {
    Hyperparams h;
    h.learning_rate = j.at("learning_rate").get<double>();
    h.epochs_max = j.at("epochs_max").get<int>();
    h.patience = j.at("patience").get<int>();
    h.batch_size = j.at("batch_size").get<int>();
    h.hidden_dim = j.at("hidden_dim").get<int>();
    h.weight_decay = j.at("weight_decay").get<double>();
    h.seed = j.at("seed").get<uint64_t>();
    return h;
}

std::string ckpt_filename(int epoch) {
    std::string n = std::to_string(epoch);
    while (n.size() < 3) n.insert(n.begin(), '0');
    return "ckpt_" + n + ".tlck";
}

void save_checkpoint_file(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot write checkpoint: " + path);
    out.write("TLCK", 4);
    bin::put_u32(out, kCheckpointVersion);
    bin::put_u8(out, c.params.mode == ModelMode::linear ? 0 : 1);
    bin::put_u8(out, 0);
    bin::put_u8(out, 0);
    bin::put_u8(out, 0);
    bin::put_u32(out, static_cast<uint32_t>(c.params.feature_dim));
    bin::put_u32(out, static_cast<uint32_t>(c.params.hidden_dim));
    bin::put_u32(out, static_cast<uint32_t>(c.epoch));
    std::vector<double> flat(c.params.param_count());
    c.params.flatten_into(flat);
    bin::put_u64(out, flat.size());
    bin::put_f32_array(out, flat);
    if (!out) fail("io", "short write: " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open checkpoint: " + path);
    char magic[4];
    bin::get_bytes(in, magic, 4);
    if (std::string_view(magic, 4) != "TLCK") fail("parse", "bad magic in " + path);
    uint32_t version = bin::get_u32(in);
    if (version != kCheckpointVersion)
        fail("parse", "unsupported checkpoint version " + std::to_string(version));
    ModelMode mode = bin::get_u8(in) == 0 ? ModelMode::linear : ModelMode::mlp;
    bin::get_u8(in);
    bin::get_u8(in);
    bin::get_u8(in);
    int feature_dim = static_cast<int>(bin::get_u32(in));
    int hidden_dim = static_cast<int>(bin::get_u32(in));
    int epoch = static_cast<int>(bin::get_u32(in));
    uint64_t count = bin::get_u64(in);
    std::vector<double> flat(count);
    bin::get_f32_array(in, flat);
    Checkpoint c;
    c.epoch = epoch;
    c.params = ModelParams::from_flat(mode, feature_dim, hidden_dim, flat);
    return c;
}

}  // namespace

void save_series(const CheckpointSeries& series, const std::string& dir,
                 const std::string& config_hash) {
    fs::create_directories(dir);
    json index;
    index["format"] = "tracelens-series";
    index["version"] = 1;
    index["mode"] = to_string(series.mode);
    index["converged_epoch"] = series.converged_epoch;
    index["hyperparams"] = hyper_to_json(series.train_config);
    index["dataset_fingerprint"] = series.dataset_fingerprint;
    index["epoch_train_loss"] = series.epoch_train_loss;
    if (!config_hash.empty()) index["config_hash"] = config_hash;
    json epochs = json::array();
    for (const auto& c : series.checkpoints) {
        std::string name = ckpt_filename(c.epoch);
        save_checkpoint_file(c, dir + "/" + name);
        json sidecar;
        sidecar["epoch"] = c.epoch;
        sidecar["dev_metric"] = c.dev_metric;
        sidecar["mode"] = to_string(series.mode);
        sidecar["hyperparams"] = hyper_to_json(series.train_config);
        sidecar["dataset_fingerprint"] = series.dataset_fingerprint;
        if (!config_hash.empty()) sidecar["config_hash"] = config_hash;
        std::ofstream side(dir + "/" + name + ".json", std::ios::binary);
        side << sidecar.dump(2) << "\n";
        if (!side) fail("io", "cannot write checkpoint sidecar for epoch " + std::to_string(c.epoch));
        epochs.push_back(json{{"epoch", c.epoch}, {"file", name}, {"dev_metric", c.dev_metric}});
    }
    index["epochs"] = epochs;
    std::ofstream out(dir + "/series.json", std::ios::binary);
    out << index.dump(2) << "\n";
    if (!out) fail("io", "cannot write series index in " + dir);
}

CheckpointSeries load_series(const std::string& dir) {
    std::ifstream in(dir + "/series.json");
    if (!in) fail("io", "cannot open series index: " + dir + "/series.json");
    json index;
    try {
        in >> index;
    } catch (const json::exception& e) {
        fail("parse", std::string("bad series index: ") + e.what());
    }
    CheckpointSeries series;
    series.mode = parse_model_mode(index.at("mode").get<std::string>());
    series.converged_epoch = index.at("converged_epoch").get<int>();
    series.train_config = hyper_from_json(index.at("hyperparams"));
    series.dataset_fingerprint = index.at("dataset_fingerprint").get<std::string>();
    if (index.contains("epoch_train_loss"))
        series.epoch_train_loss = index["epoch_train_loss"].get<std::vector<double>>();
    for (const auto& e : index.at("epochs")) {
        Checkpoint c = load_checkpoint_file(dir + "/" + e.at("file").get<std::string>());
        c.dev_metric = e.at("dev_metric").get<double>();
        if (c.epoch != e.at("epoch").get<int>()) fail("integrity", "epoch mismatch in series index");
        series.checkpoints.push_back(std::move(c));
    }
    if (series.checkpoints.empty()) fail("integrity", "series has no checkpoints");
    std::sort(series.checkpoints.begin(), series.checkpoints.end(),
              [](const Checkpoint& a, const Checkpoint& b) { return a.epoch < b.epoch; });
    for (size_t i = 0; i < series.checkpoints.size(); ++i)
        if (series.checkpoints[i].epoch != static_cast<int>(i) + 1)
            fail("integrity", "checkpoint epochs are not consecutive from 1");
    return series;
}

std::string series_fingerprint(const CheckpointSeries& series) {
    Fnv1a h;
    h.feed(to_string(series.mode));
    h.feed_u64(static_cast<uint64_t>(series.converged_epoch));
    h.feed(series.dataset_fingerprint);
    for (const auto& c : series.checkpoints) {
        h.feed_u64(static_cast<uint64_t>(c.epoch));
        std::vector<double> flat(c.params.param_count());
        c.params.flatten_into(flat);
        for (double v : flat) {
            float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            h.feed_u64(bits);
        }
    }
    return h.hex();
}

}  // namespace tracelens
