#include "benk/kernel_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

namespace benk {

namespace {

constexpr double kLogFactorFloor = 1e-12;
constexpr char kParamsMagic[8] = {'B', 'E', 'N', 'K', 'P', 'A', 'R', '1'};

void apply_activation(Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::relu)
        z = z.cwiseMax(0.0);
    else
        z = z.array().tanh().matrix();
}

// Derivative expressed through the activation output.
Eigen::ArrayXXd activation_deriv(const Eigen::MatrixXd& a, Activation act) {
    if (act == Activation::relu) return (a.array() > 0.0).cast<double>();
    return 1.0 - a.array().square();
}

void check_cache_matches(const KernelNetParams& params, const ForwardCache& cache) {
    if (cache.acts.size() != params.weights.size())
        throw std::invalid_argument("backward: cache does not match parameters");
    for (std::size_t l = 0; l + 1 < params.weights.size(); ++l) {
        if (cache.acts[l + 1].rows() != params.weights[l].rows())
            throw std::invalid_argument("backward: cache does not match parameters");
    }
    if (cache.acts.front().rows() != params.weights.front().cols())
        throw std::invalid_argument("backward: cache does not match parameters");
}

}  // namespace

void KernelNetConfig::validate() const {
    if (feature_dim < 1) throw std::invalid_argument("KernelNetConfig: feature_dim must be >= 1");
    if (hidden_layers.empty())
        throw std::invalid_argument("KernelNetConfig: at least one hidden layer required");
    for (int h : hidden_layers)
        if (h < 1) throw std::invalid_argument("KernelNetConfig: hidden layer sizes must be positive");
}

std::size_t KernelNetParams::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += static_cast<std::size_t>(weights[l].size()) + static_cast<std::size_t>(biases[l].size());
    return n;
}

void KernelNetParams::validate() const {
    if (weights.empty() || weights.size() != biases.size())
        throw std::invalid_argument("KernelNetParams: empty or mismatched layer lists");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != biases[l].size())
            throw std::invalid_argument("KernelNetParams: bias/weight shape mismatch");
        if (l > 0 && weights[l].cols() != weights[l - 1].rows())
            throw std::invalid_argument("KernelNetParams: consecutive layer shape mismatch");
        if (!weights[l].allFinite() || !biases[l].allFinite())
            throw std::invalid_argument("KernelNetParams: non-finite parameter");
    }
    if (weights.back().rows() != 1)
        throw std::invalid_argument("KernelNetParams: output layer must be scalar");
}

KernelNetParams init_params(const KernelNetConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.init_seed);
    KernelNetParams p;
    p.activation = config.activation;
    std::vector<int> dims;
    dims.push_back(config.input_dim());
    for (int h : config.hidden_layers) dims.push_back(h);
    dims.push_back(1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int in = dims[l];
        const int out = dims[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Eigen::MatrixXd w(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) w(r, c) = u(rng);
        Eigen::VectorXd b(out);
        for (int r = 0; r < out; ++r) b(r) = u(rng);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

GradientAccumulator GradientAccumulator::zeros_like(const KernelNetParams& params) {
    GradientAccumulator g;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        g.weights.emplace_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
        g.biases.emplace_back(Eigen::VectorXd::Zero(params.biases[l].size()));
    }
    return g;
}

void GradientAccumulator::set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
}

void GradientAccumulator::add(const GradientAccumulator& other) {
    if (other.weights.size() != weights.size())
        throw std::invalid_argument("GradientAccumulator: shape mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
}

void GradientAccumulator::scale(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
}

double GradientAccumulator::max_abs() const {
    double m = 0.0;
    for (const auto& w : weights) m = std::max(m, w.cwiseAbs().maxCoeff());
    for (const auto& b : biases)
        if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
}

RefBundle RefBundle::from_dataset(const SurvivalDataset& refs) {
    std::vector<int> all(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) all[i] = static_cast<int>(i);
    return from_subset(refs, all);
}

RefBundle RefBundle::from_subset(const SurvivalDataset& data, std::span<const int> indices) {
    if (indices.empty()) throw std::invalid_argument("RefBundle: empty reference subset");
    // Risk order over the subset: time ascending, events first, stable.
    std::vector<int> order(indices.begin(), indices.end());
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& ra = data.records[static_cast<std::size_t>(a)];
        const auto& rb = data.records[static_cast<std::size_t>(b)];
        if (ra.time != rb.time) return ra.time < rb.time;
        return ra.event && !rb.event;
    });

    RefBundle bundle;
    const int m = static_cast<int>(order.size());
    bundle.features.resize(data.d, m);
    bundle.times.resize(static_cast<std::size_t>(m));
    bundle.events.resize(static_cast<std::size_t>(m));
    bundle.source_index.resize(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
        const auto& r = data.records[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        for (int j = 0; j < data.d; ++j) bundle.features(j, k) = r.features[static_cast<std::size_t>(j)];
        bundle.times[static_cast<std::size_t>(k)] = r.time;
        bundle.events[static_cast<std::size_t>(k)] = r.event ? 1 : 0;
        bundle.source_index[static_cast<std::size_t>(k)] = order[static_cast<std::size_t>(k)];
    }
    return bundle;
}

namespace {

// Shared MLP forward over stacked pair inputs; fills cache.acts and cache.scores.
void score_columns(const KernelNetParams& params, const Eigen::Ref<const Eigen::VectorXd>& anchor,
                   const Eigen::Ref<const Eigen::MatrixXd>& ref_features, ForwardCache& cache) {
    const int d = static_cast<int>(ref_features.rows());
    const int m = static_cast<int>(ref_features.cols());
    if (anchor.size() != d) throw std::invalid_argument("kernel_scores: anchor dimension mismatch");
    if (params.input_dim() != 2 * d)
        throw std::invalid_argument("kernel_scores: network input dimension mismatch");

    const std::size_t n_layers = params.weights.size();
    cache.acts.resize(n_layers);

    Eigen::MatrixXd& input = cache.acts[0];
    input.resize(2 * d, m);
    input.topRows(d) = anchor.replicate(1, m);
    input.bottomRows(d) = ref_features;

    for (std::size_t l = 0; l + 1 < n_layers; ++l) {
        Eigen::MatrixXd z = params.weights[l] * cache.acts[l];
        z.colwise() += params.biases[l];
        apply_activation(z, params.activation);
        cache.acts[l + 1] = std::move(z);
    }
    cache.scores = (params.weights.back() * cache.acts[n_layers - 1]).transpose().col(0) +
                   Eigen::VectorXd::Constant(m, params.biases.back()(0));
}

}  // namespace

std::vector<double> kernel_scores(const KernelNetParams& params, const std::vector<double>& anchor,
                                  const std::vector<std::vector<double>>& refs) {
    if (refs.empty()) throw std::invalid_argument("kernel_scores: empty reference list");
    const int d = static_cast<int>(anchor.size());
    Eigen::MatrixXd feats(d, static_cast<int>(refs.size()));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (static_cast<int>(refs[i].size()) != d)
            throw std::invalid_argument("kernel_scores: reference dimension mismatch");
        for (int j = 0; j < d; ++j) feats(j, static_cast<int>(i)) = refs[i][static_cast<std::size_t>(j)];
    }
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(anchor.data(), d);
    ForwardCache cache;
    score_columns(params, a, feats, cache);
    return {cache.scores.data(), cache.scores.data() + cache.scores.size()};
}

Eigen::VectorXd softmax_weights(const Eigen::VectorXd& scores) {
    if (scores.size() == 0) throw std::invalid_argument("softmax_weights: empty scores");
    if (!scores.allFinite()) throw std::invalid_argument("softmax_weights: non-finite score");
    Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp().matrix();
    return w / w.sum();
}

WeightVector softmax_weights(const std::vector<double>& scores) {
    Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(scores.data(), static_cast<int>(scores.size()));
    Eigen::VectorXd w = softmax_weights(s);
    WeightVector out;
    out.weights.assign(w.data(), w.data() + w.size());
    return out;
}

void forward_bundle(const KernelNetParams& params, const Eigen::Ref<const Eigen::VectorXd>& anchor,
                    const RefBundle& refs, ForwardCache& cache) {
    score_columns(params, anchor, refs.features, cache);
    cache.weights = softmax_weights(cache.scores);
    cache.beran = beran_product_ordered(
        refs.times, refs.events,
        std::span<const double>(cache.weights.data(), static_cast<std::size_t>(cache.weights.size())));
}

std::pair<StepSurvivalFunction, ForwardCache> forward_sf(const KernelNetParams& params,
                                                         const std::vector<double>& anchor,
                                                         const SurvivalDataset& refs) {
    if (static_cast<int>(anchor.size()) != refs.d)
        throw std::invalid_argument("forward_sf: anchor dimension mismatch");
    RefBundle bundle = RefBundle::from_dataset(refs);
    ForwardCache cache;
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(anchor.data(), static_cast<int>(anchor.size()));
    forward_bundle(params, a, bundle, cache);
    return {cache.beran.sf, std::move(cache)};
}

double cached_expected_lifetime(const ForwardCache& cache) {
    return expected_lifetime(cache.beran.sf);
}

void backward_into(const KernelNetParams& params, const ForwardCache& cache,
                   double loss_grad_wrt_expected_lifetime, GradientAccumulator& grad) {
    check_cache_matches(params, cache);
    const double upstream = loss_grad_wrt_expected_lifetime;
    const int m = static_cast<int>(cache.weights.size());
    const auto& sf = cache.beran.sf;
    const int n_steps = static_cast<int>(sf.times.size());

    // d(upstream * E)/d(values[j]): the interval right of step j, scaled.
    // values[j] multiplies (times[j+1] - times[j]); the last value is unused.
    std::vector<double> suffix(static_cast<std::size_t>(n_steps) + 1, 0.0);
    for (int j = n_steps - 2; j >= 0; --j) {
        const double coef = upstream * (sf.times[static_cast<std::size_t>(j + 1)] - sf.times[static_cast<std::size_t>(j)]);
        suffix[static_cast<std::size_t>(j)] =
            suffix[static_cast<std::size_t>(j + 1)] + coef * sf.values[static_cast<std::size_t>(j)];
    }

    // Gradient w.r.t. the softmax weights, walked right to left so each
    // record picks up the denominator contributions of later factors.
    Eigen::VectorXd grad_w = Eigen::VectorXd::Zero(m);
    double tail = 0.0;
    for (int k = m - 1; k >= 0; --k) {
        double g = tail;
        const int step = cache.beran.step_of_record[static_cast<std::size_t>(k)];
        if (step >= 0 && !cache.beran.clamped[static_cast<std::size_t>(k)] &&
            cache.beran.factor[static_cast<std::size_t>(k)] >= kLogFactorFloor) {
            const double d_log_factor = suffix[static_cast<std::size_t>(step)] /
                                        cache.beran.factor[static_cast<std::size_t>(k)];
            const double denom = cache.beran.denom[static_cast<std::size_t>(k)];
            g += d_log_factor * (-1.0 / denom);
            tail += d_log_factor * (-cache.weights(k) / (denom * denom));
        }
        grad_w(k) = g;
    }

    // Softmax Jacobian.
    const double dot = grad_w.dot(cache.weights);
    Eigen::MatrixXd dscore = (cache.weights.array() * (grad_w.array() - dot)).matrix().transpose();

    // Backprop through the shared subnetwork, all reference columns at once.
    const std::size_t n_layers = params.weights.size();
    Eigen::MatrixXd delta = std::move(dscore);  // 1 x m
    for (std::size_t l = n_layers; l-- > 0;) {
        grad.weights[l].noalias() += delta * cache.acts[l].transpose();
        grad.biases[l] += delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd back = params.weights[l].transpose() * delta;
            delta = (back.array() * activation_deriv(cache.acts[l], params.activation)).matrix();
        }
    }
}

GradientAccumulator backward(const KernelNetParams& params, const ForwardCache& cache,
                             double loss_grad_wrt_expected_lifetime) {
    GradientAccumulator grad = GradientAccumulator::zeros_like(params);
    backward_into(params, cache, loss_grad_wrt_expected_lifetime, grad);
    return grad;
}

GradCheckReport gradient_check(const KernelNetConfig& arch, int trial_count, std::uint64_t seed) {
    if (trial_count < 1) throw std::invalid_argument("gradient_check: trial_count must be >= 1");
    if (arch.hidden_layers.empty())
        throw std::invalid_argument("gradient_check: architecture must have a hidden layer");

    constexpr double kStep = 1e-5;
    const int dims[] = {2, 3, 5};
    const int ref_counts[] = {3, 5, 8};

    GradCheckReport report;
    report.trials = trial_count;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> feat(0.0, 1.0);
    std::uniform_real_distribution<double> time_dist(0.2, 5.0);
    std::bernoulli_distribution censor(0.3);

    for (int trial = 0; trial < trial_count; ++trial) {
        const int d = dims[trial % 3];
        const int m = ref_counts[(trial / 3) % 3];

        KernelNetConfig cfg = arch;
        cfg.feature_dim = d;
        cfg.init_seed = rng();
        KernelNetParams params = init_params(cfg);

        std::vector<SurvivalRecord> recs;
        bool has_event = false;
        for (int i = 0; i < m; ++i) {
            SurvivalRecord r;
            for (int j = 0; j < d; ++j) r.features.push_back(feat(rng));
            r.time = time_dist(rng);
            r.event = !censor(rng);
            has_event = has_event || r.event;
            recs.push_back(std::move(r));
        }
        if (!has_event) recs.front().event = true;
        SurvivalDataset refs(std::move(recs));
        std::vector<double> anchor(static_cast<std::size_t>(d));
        for (auto& a : anchor) a = feat(rng);

        auto [sf, cache] = forward_sf(params, anchor, refs);
        GradientAccumulator analytic = backward(params, cache, 1.0);

        auto lifetime_at = [&](const KernelNetParams& p) {
            auto [s, c] = forward_sf(p, anchor, refs);
            (void)c;
            return expected_lifetime(s);
        };

        for (std::size_t l = 0; l < params.weights.size(); ++l) {
            for (int idx = 0; idx < params.weights[l].size(); ++idx) {
                KernelNetParams probe = params;
                double* slot = probe.weights[l].data() + idx;
                const double base = *slot;
                *slot = base + kStep;
                const double plus = lifetime_at(probe);
                *slot = base - kStep;
                const double minus = lifetime_at(probe);
                const double numeric = (plus - minus) / (2.0 * kStep);
                const double a = analytic.weights[l].data()[idx];
                if (std::fabs(a) + std::fabs(numeric) > 1e-8) {
                    ++report.params_checked;
                    report.max_rel_error = std::max(
                        report.max_rel_error, std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric)));
                }
            }
            for (int idx = 0; idx < params.biases[l].size(); ++idx) {
                KernelNetParams probe = params;
                double* slot = probe.biases[l].data() + idx;
                const double base = *slot;
                *slot = base + kStep;
                const double plus = lifetime_at(probe);
                *slot = base - kStep;
                const double minus = lifetime_at(probe);
                const double numeric = (plus - minus) / (2.0 * kStep);
                const double a = analytic.biases[l].data()[idx];
                if (std::fabs(a) + std::fabs(numeric) > 1e-8) {
                    ++report.params_checked;
                    report.max_rel_error = std::max(
                        report.max_rel_error, std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric)));
                }
            }
        }
    }
    return report;
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
    if (!is) throw std::runtime_error("read_params: truncated stream");
    return v;
}

}  // namespace

void write_params(std::ostream& os, const KernelNetParams& params) {
    params.validate();
    os.write(kParamsMagic, sizeof(kParamsMagic));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(params.activation));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.weights.size()));
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.weights[l].rows()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.weights[l].cols()));
    }
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        const auto& w = params.weights[l];
        for (int r = 0; r < w.rows(); ++r)
            for (int c = 0; c < w.cols(); ++c) write_pod<double>(os, w(r, c));
        for (int r = 0; r < params.biases[l].size(); ++r) write_pod<double>(os, params.biases[l](r));
    }
    if (!os) throw std::runtime_error("write_params: stream failure");
}

KernelNetParams read_params(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0)
        throw std::runtime_error("read_params: bad magic");
    const auto act = read_pod<std::uint8_t>(is);
    if (act > 1) throw std::runtime_error("read_params: unknown activation code");
    const auto n_layers = read_pod<std::uint32_t>(is);
    if (n_layers == 0 || n_layers > 64) throw std::runtime_error("read_params: invalid layer count");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        auto rows = read_pod<std::uint32_t>(is);
        auto cols = read_pod<std::uint32_t>(is);
        shapes.emplace_back(rows, cols);
    }
    KernelNetParams p;
    p.activation = static_cast<Activation>(act);
    for (auto [rows, cols] : shapes) {
        Eigen::MatrixXd w(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) w(r, c) = read_pod<double>(is);
        Eigen::VectorXd b(rows);
        for (std::uint32_t r = 0; r < rows; ++r) b(r) = read_pod<double>(is);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    p.validate();
    return p;
}

void save_params(const std::string& path, const KernelNetParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_params: cannot open " + path);
    write_params(os, params);
}

KernelNetParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_params: cannot open " + path);
    return read_params(is);
}

}  // namespace benk
