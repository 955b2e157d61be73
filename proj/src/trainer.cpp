#include "benk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "benk/parallel.hpp"
#include "benk/seed.hpp"

namespace benk {

namespace {

constexpr char kModelMagic[8] = {'B', 'E', 'N', 'K', 'M', 'D', 'L', '1'};
constexpr int kGradChunk = 8;  // examples per deterministic reduction chunk

struct PreparedExample {
    RefBundle bundle;
    Eigen::VectorXd anchor;
    double anchor_time = 0.0;
};

PreparedExample prepare_example(const SurvivalDataset& controls, const TrainingExample& ex) {
    PreparedExample p;
    p.bundle = RefBundle::from_subset(controls, ex.subset_indices);
    const auto& a = controls.records[static_cast<std::size_t>(ex.anchor_index)];
    p.anchor = Eigen::Map<const Eigen::VectorXd>(a.features.data(), controls.d);
    p.anchor_time = a.time;
    return p;
}

void check_examples(const std::vector<TrainingExample>& examples, const SurvivalDataset& controls) {
    const int c = static_cast<int>(controls.size());
    for (const auto& ex : examples) {
        if (ex.anchor_index < 0 || ex.anchor_index >= c)
            throw std::invalid_argument("training example: anchor out of range");
        if (ex.subset_indices.empty())
            throw std::invalid_argument("training example: empty subset");
        for (int idx : ex.subset_indices) {
            if (idx < 0 || idx >= c) throw std::invalid_argument("training example: index out of range");
            if (idx == ex.anchor_index)
                throw std::invalid_argument("training example: subset contains the anchor");
        }
    }
}

}  // namespace

int TrainConfig::resolved_subset_size(std::size_t c) const {
    if (subset_size > 0) return subset_size;
    return static_cast<int>(std::lround(0.2 * static_cast<double>(c)));
}

void TrainConfig::validate() const {
    if (replications < 1) throw std::invalid_argument("TrainConfig: N must be >= 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epochs");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (hidden_layers.empty()) throw std::invalid_argument("TrainConfig: hidden layers required");
}

std::vector<TrainingExample> build_training_examples(const SurvivalDataset& controls,
                                                     const TrainConfig& config,
                                                     std::mt19937_64& rng) {
    config.validate();
    controls.validate();
    const int c = static_cast<int>(controls.size());
    const int n = config.resolved_subset_size(controls.size());
    if (n < 1 || n > c - 1)
        throw InsufficientControlsError("build_training_examples: need c > n, got c=" +
                                        std::to_string(c) + " n=" + std::to_string(n));

    std::vector<TrainingExample> examples;
    examples.reserve(static_cast<std::size_t>(c) * static_cast<std::size_t>(config.replications));
    std::vector<int> pool(static_cast<std::size_t>(c) - 1);
    for (int anchor = 0; anchor < c; ++anchor) {
        int w = 0;
        for (int i = 0; i < c; ++i)
            if (i != anchor) pool[static_cast<std::size_t>(w++)] = i;
        for (int r = 0; r < config.replications; ++r) {
            // Partial Fisher-Yates: first n entries become the subset.
            for (int j = 0; j < n; ++j) {
                std::uniform_int_distribution<int> pick(j, c - 2);
                std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick(rng))]);
            }
            TrainingExample ex;
            ex.anchor_index = anchor;
            ex.subset_indices.assign(pool.begin(), pool.begin() + n);
            examples.push_back(std::move(ex));
        }
    }
    return examples;
}

double benk_loss(const KernelNetParams& params, const std::vector<TrainingExample>& examples,
                 const SurvivalDataset& controls) {
    check_examples(examples, controls);
    double sum = 0.0;
    std::size_t used = 0;
    ForwardCache cache;
    for (const auto& ex : examples) {
        if (!controls.records[static_cast<std::size_t>(ex.anchor_index)].event) continue;
        auto prepared = prepare_example(controls, ex);
        forward_bundle(params, prepared.anchor, prepared.bundle, cache);
        const double err = cached_expected_lifetime(cache) - prepared.anchor_time;
        sum += err * err;
        ++used;
    }
    if (used == 0) throw AllAnchorsCensoredError();
    return sum / static_cast<double>(used);
}

double benk_loss_gradient(const KernelNetParams& params,
                          const std::vector<TrainingExample>& examples,
                          const SurvivalDataset& controls, GradientAccumulator& grad) {
    check_examples(examples, controls);
    std::size_t used = 0;
    for (const auto& ex : examples)
        if (controls.records[static_cast<std::size_t>(ex.anchor_index)].event) ++used;
    if (used == 0) throw AllAnchorsCensoredError();

    double sum = 0.0;
    ForwardCache cache;
    for (const auto& ex : examples) {
        if (!controls.records[static_cast<std::size_t>(ex.anchor_index)].event) continue;
        auto prepared = prepare_example(controls, ex);
        forward_bundle(params, prepared.anchor, prepared.bundle, cache);
        const double err = cached_expected_lifetime(cache) - prepared.anchor_time;
        sum += err * err;
        backward_into(params, cache, 2.0 * err / static_cast<double>(used), grad);
    }
    return sum / static_cast<double>(used);
}

namespace {

struct AdamState {
    GradientAccumulator m, v;
    long step = 0;
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    explicit AdamState(const KernelNetParams& params)
        : m(GradientAccumulator::zeros_like(params)), v(GradientAccumulator::zeros_like(params)) {}

    void update(KernelNetParams& params, const GradientAccumulator& g, double lr) {
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t l = 0; l < params.weights.size(); ++l) {
            m.weights[l] = beta1 * m.weights[l] + (1.0 - beta1) * g.weights[l];
            v.weights[l] = beta2 * v.weights[l].array().matrix() +
                           (1.0 - beta2) * g.weights[l].array().square().matrix();
            params.weights[l].array() -=
                lr * (m.weights[l].array() / c1) / ((v.weights[l].array() / c2).sqrt() + eps);
            m.biases[l] = beta1 * m.biases[l] + (1.0 - beta1) * g.biases[l];
            v.biases[l] = beta2 * v.biases[l].array().matrix() +
                          (1.0 - beta2) * g.biases[l].array().square().matrix();
            params.biases[l].array() -=
                lr * (m.biases[l].array() / c1) / ((v.biases[l].array() / c2).sqrt() + eps);
        }
    }
};

// Validation loss: squared error of the full-control-set Beran expected
// lifetime against the observed time, over uncensored validation records.
double validation_loss(const KernelNetParams& params, const RefBundle& control_bundle,
                       const SurvivalDataset& validation) {
    double sum = 0.0;
    std::size_t used = 0;
    ForwardCache cache;
    for (const auto& rec : validation.records) {
        if (!rec.event) continue;
        Eigen::Map<const Eigen::VectorXd> anchor(rec.features.data(),
                                                 static_cast<int>(rec.features.size()));
        forward_bundle(params, anchor, control_bundle, cache);
        const double err = cached_expected_lifetime(cache) - rec.time;
        sum += err * err;
        ++used;
    }
    if (used == 0) return std::numeric_limits<double>::infinity();
    return sum / static_cast<double>(used);
}

}  // namespace

TrainedBenk train(const SurvivalDataset& controls, const TrainConfig& config,
                  const SurvivalDataset* validation, int threads) {
    config.validate();
    controls.validate();
    if (validation && validation->d != controls.d)
        throw std::invalid_argument("train: validation dimension mismatch");

    std::mt19937_64 subset_rng(derive_seed(config.seed, 0xBE01));
    auto examples = build_training_examples(controls, config, subset_rng);

    KernelNetConfig net_cfg;
    net_cfg.feature_dim = controls.d;
    net_cfg.hidden_layers = config.hidden_layers;
    net_cfg.activation = config.activation;
    net_cfg.init_seed = derive_seed(config.seed, 0xBE02);

    TrainedBenk model;
    model.params = init_params(net_cfg);
    model.config = config;
    model.feature_dim = controls.d;

    // Only uncensored anchors carry loss; censored-anchor examples are inert.
    std::vector<int> active;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (controls.records[static_cast<std::size_t>(examples[i].anchor_index)].event)
            active.push_back(static_cast<int>(i));
    if (active.empty()) throw AllAnchorsCensoredError();

    std::vector<PreparedExample> prepared;
    prepared.reserve(active.size());
    for (int idx : active) prepared.push_back(prepare_example(controls, examples[static_cast<std::size_t>(idx)]));
    std::vector<double> anchor_times;
    for (const auto& p : prepared) anchor_times.push_back(p.anchor_time);

    RefBundle control_bundle;
    if (validation) control_bundle = RefBundle::from_dataset(controls);
    KernelNetParams best_params = model.params;
    double best_val = validation ? validation_loss(model.params, control_bundle, *validation)
                                 : std::numeric_limits<double>::infinity();

    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 0xBE03));
    AdamState adam(model.params);
    GradientAccumulator batch_grad = GradientAccumulator::zeros_like(model.params);

    std::vector<int> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const int batch_n = static_cast<int>(stop - start);
            const int n_chunks = (batch_n + kGradChunk - 1) / kGradChunk;

            std::vector<GradientAccumulator> chunk_grads(static_cast<std::size_t>(n_chunks),
                                                         GradientAccumulator::zeros_like(model.params));
            std::vector<double> chunk_loss(static_cast<std::size_t>(n_chunks), 0.0);

            run_chunked(n_chunks, threads, [&](int chunk) {
                ForwardCache cache;
                const std::size_t lo = start + static_cast<std::size_t>(chunk) * kGradChunk;
                const std::size_t hi = std::min(stop, lo + kGradChunk);
                for (std::size_t i = lo; i < hi; ++i) {
                    const auto& p = prepared[static_cast<std::size_t>(order[i])];
                    forward_bundle(model.params, p.anchor, p.bundle, cache);
                    const double err = cached_expected_lifetime(cache) - p.anchor_time;
                    chunk_loss[static_cast<std::size_t>(chunk)] += err * err;
                    backward_into(model.params, cache, 2.0 * err / static_cast<double>(batch_n),
                                  chunk_grads[static_cast<std::size_t>(chunk)]);
                }
            });

            batch_grad.set_zero();
            double batch_sum = 0.0;
            for (int chunk = 0; chunk < n_chunks; ++chunk) {
                batch_grad.add(chunk_grads[static_cast<std::size_t>(chunk)]);
                batch_sum += chunk_loss[static_cast<std::size_t>(chunk)];
            }
            if (!std::isfinite(batch_sum) || !std::isfinite(batch_grad.max_abs()))
                throw NonFiniteLossError("train: non-finite loss at epoch " + std::to_string(epoch));
            epoch_sum += batch_sum;

            if (config.optimizer == Optimizer::adaptive_moment) {
                adam.update(model.params, batch_grad, config.learning_rate);
            } else {
                for (std::size_t l = 0; l < model.params.weights.size(); ++l) {
                    model.params.weights[l] -= config.learning_rate * batch_grad.weights[l];
                    model.params.biases[l] -= config.learning_rate * batch_grad.biases[l];
                }
            }
        }

        model.loss_trace.push_back(epoch_sum / static_cast<double>(prepared.size()));
        if (validation) {
            const double vl = validation_loss(model.params, control_bundle, *validation);
            model.validation_trace.push_back(vl);
            if (vl < best_val) {
                best_val = vl;
                best_params = model.params;
            }
        }
    }

    if (validation) model.params = best_params;
    return model;
}

double predict_expected_lifetime(const KernelNetParams& params, const RefBundle& refs,
                                 const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != refs.dim())
        throw std::invalid_argument("predict_expected_lifetime: dimension mismatch");
    ForwardCache cache;
    Eigen::Map<const Eigen::VectorXd> anchor(z.data(), static_cast<int>(z.size()));
    forward_bundle(params, anchor, refs, cache);
    return cached_expected_lifetime(cache);
}

double predict_cate(const TrainedBenk& model, const SurvivalDataset& controls,
                    const SurvivalDataset& treatments, const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != model.feature_dim)
        throw std::invalid_argument("predict_cate: dimension mismatch");
    RefBundle cb = RefBundle::from_dataset(controls);
    RefBundle tb = RefBundle::from_dataset(treatments);
    return predict_expected_lifetime(model.params, tb, z) -
           predict_expected_lifetime(model.params, cb, z);
}

std::vector<double> predict_cate_batch(const TrainedBenk& model, const SurvivalDataset& controls,
                                       const SurvivalDataset& treatments,
                                       const std::vector<std::vector<double>>& zs, int threads) {
    RefBundle cb = RefBundle::from_dataset(controls);
    RefBundle tb = RefBundle::from_dataset(treatments);
    std::vector<double> out(zs.size(), 0.0);
    constexpr int kChunk = 16;
    const int n_chunks = static_cast<int>((zs.size() + kChunk - 1) / kChunk);
    run_chunked(n_chunks, threads, [&](int chunk) {
        const std::size_t lo = static_cast<std::size_t>(chunk) * kChunk;
        const std::size_t hi = std::min(zs.size(), lo + kChunk);
        for (std::size_t i = lo; i < hi; ++i) {
            out[i] = predict_expected_lifetime(model.params, tb, zs[i]) -
                     predict_expected_lifetime(model.params, cb, zs[i]);
        }
    });
    return out;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("load_model: truncated stream");
    return v;
}

void write_trace(std::ostream& os, const std::vector<double>& trace) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(trace.size()));
    for (double v : trace) write_pod<double>(os, v);
}

std::vector<double> read_trace(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::vector<double> trace;
    trace.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) trace.push_back(read_pod<double>(is));
    return trace;
}

}  // namespace

void save_model(const std::string& path, const TrainedBenk& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_model: cannot open " + path);
    os.write(kModelMagic, sizeof(kModelMagic));
    write_pod<std::int32_t>(os, model.feature_dim);
    write_pod<std::int32_t>(os, model.config.replications);
    write_pod<std::int32_t>(os, model.config.subset_size);
    write_pod<std::int32_t>(os, model.config.epochs);
    write_pod<std::int32_t>(os, model.config.batch_size);
    write_pod<double>(os, model.config.learning_rate);
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(model.config.optimizer));
    write_pod<std::uint64_t>(os, model.config.seed);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.config.hidden_layers.size()));
    for (int h : model.config.hidden_layers) write_pod<std::int32_t>(os, h);
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(model.config.activation));
    write_trace(os, model.loss_trace);
    write_trace(os, model.validation_trace);
    write_params(os, model.params);
    if (!os) throw std::runtime_error("save_model: stream failure");
}

TrainedBenk load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_model: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_model: bad magic");
    TrainedBenk model;
    model.feature_dim = read_pod<std::int32_t>(is);
    model.config.replications = read_pod<std::int32_t>(is);
    model.config.subset_size = read_pod<std::int32_t>(is);
    model.config.epochs = read_pod<std::int32_t>(is);
    model.config.batch_size = read_pod<std::int32_t>(is);
    model.config.learning_rate = read_pod<double>(is);
    model.config.optimizer = static_cast<Optimizer>(read_pod<std::uint8_t>(is));
    model.config.seed = read_pod<std::uint64_t>(is);
    const auto n_hidden = read_pod<std::uint32_t>(is);
    model.config.hidden_layers.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i)
        model.config.hidden_layers.push_back(read_pod<std::int32_t>(is));
    model.config.activation = static_cast<Activation>(read_pod<std::uint8_t>(is));
    model.loss_trace = read_trace(is);
    model.validation_trace = read_trace(is);
    model.params = read_params(is);
    return model;
}

}  // namespace benk
