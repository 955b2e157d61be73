#include "benk/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "benk/seed.hpp"

namespace benk {

namespace {

constexpr double kTimeFloor = 1e-6;
constexpr int kQuadraturePoints = 100000;

// rng stream tags
constexpr std::uint64_t kStreamLatent = 0xD601;
constexpr std::uint64_t kStreamFeatures = 0xD602;
constexpr std::uint64_t kStreamNoise = 0xD603;
constexpr std::uint64_t kStreamCensor = 0xD604;
constexpr std::uint64_t kStreamCoeffs = 0xD605;

double control_time(double t) { return -std::log(0.02) / (0.1 * std::exp(0.5 * t)); }
double treatment_time(double t) { return -std::log(0.3) / (0.1 * std::exp(0.15 * t)); }

double midpoint_mean(GeneratorKind kind, double (*fn)(double)) {
    const double lo = domain_lo(kind);
    const double hi = domain_hi(kind);
    const double h = (hi - lo) / kQuadraturePoints;
    double sum = 0.0;
    for (int i = 0; i < kQuadraturePoints; ++i) sum += fn(lo + (i + 0.5) * h);
    return sum / kQuadraturePoints;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw std::runtime_error("CSV: malformed number '" + s + "'");
    return v;
}

}  // namespace

std::string to_string(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::spiral: return "spiral";
        case GeneratorKind::logarithmic: return "logarithmic";
        case GeneratorKind::power: return "power";
    }
    return "spiral";
}

GeneratorKind generator_from_string(const std::string& name) {
    if (name == "spiral") return GeneratorKind::spiral;
    if (name == "logarithmic") return GeneratorKind::logarithmic;
    if (name == "power") return GeneratorKind::power;
    throw std::invalid_argument("unknown generator kind: " + name);
}

double domain_lo(GeneratorKind kind) { return kind == GeneratorKind::logarithmic ? 0.5 : 0.0; }
double domain_hi(GeneratorKind kind) { return kind == GeneratorKind::logarithmic ? 5.0 : 10.0; }

void GenConfig::validate() const {
    if (d < 1) throw std::invalid_argument("GenConfig: d must be >= 1");
    if (c < 1) throw std::invalid_argument("GenConfig: c must be >= 1");
    if (!(q > 0.0) || !(q < 1.0)) throw std::invalid_argument("GenConfig: q must lie in (0,1)");
    if (!(p >= 0.0) || !(p < 1.0)) throw std::invalid_argument("GenConfig: p must lie in [0,1)");
    if (epsilon < 0.0) throw std::invalid_argument("GenConfig: epsilon must be >= 0");
    if (!log_coeffs.empty()) {
        if (static_cast<int>(log_coeffs.size()) != d)
            throw std::invalid_argument("GenConfig: log_coeffs must have length d");
        for (double a : log_coeffs) {
            const double m = std::fabs(a);
            if (m < 1.0 || m > 4.0)
                throw std::invalid_argument("GenConfig: log coefficients must lie in [-4,-1] U [1,4]");
        }
    }
}

std::vector<double> generate_features(GeneratorKind kind, int d, double t,
                                      std::span<const double> coeffs, std::mt19937_64* rng) {
    if (d < 1) throw std::invalid_argument("generate_features: d must be >= 1");
    if (t < domain_lo(kind) || t > domain_hi(kind))
        throw std::domain_error("generate_features: latent parameter outside the generator domain");

    std::vector<double> x(static_cast<std::size_t>(d));
    switch (kind) {
        case GeneratorKind::spiral: {
            // (t sin t, t cos t, t sin 2t, t cos 2t, ...); odd d ends on a sine
            for (int i = 0; i < d; ++i) {
                const int k = i / 2 + 1;
                x[static_cast<std::size_t>(i)] =
                    (i % 2 == 0) ? t * std::sin(k * t) : t * std::cos(k * t);
            }
            break;
        }
        case GeneratorKind::logarithmic: {
            if (static_cast<int>(coeffs.size()) != d)
                throw std::invalid_argument("generate_features: logarithmic kind needs d coefficients");
            const double lt = std::log(t);
            for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = coeffs[static_cast<std::size_t>(i)] * lt;
            break;
        }
        case GeneratorKind::power: {
            const double root = std::sqrt(static_cast<double>(d));
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (int i = 1; i <= d; ++i) {
                const double expo = i / root;
                if (expo > 0.8 && expo < 1.6) {
                    // near-linear coordinate replaced with pure noise
                    if (!rng) throw std::invalid_argument("generate_features: power kind needs an rng");
                    x[static_cast<std::size_t>(i - 1)] = gauss(*rng);
                } else {
                    x[static_cast<std::size_t>(i - 1)] = std::pow(t, expo);
                }
            }
            break;
        }
    }
    return x;
}

std::pair<double, double> generate_event_times(double t) {
    if (!std::isfinite(t)) throw std::invalid_argument("generate_event_times: non-finite t");
    return {control_time(t), treatment_time(t)};
}

double apply_noise(double time, double epsilon, double mean_time, std::mt19937_64& rng) {
    if (epsilon < 0.0) throw std::invalid_argument("apply_noise: epsilon must be >= 0");
    if (epsilon == 0.0) return time;
    const double sigma = epsilon * mean_time / 3.0;
    std::normal_distribution<double> gauss(0.0, sigma);
    return std::max(time + gauss(rng), kTimeFloor);
}

bool apply_censoring(double p, std::mt19937_64& rng) {
    if (!(p >= 0.0) || !(p < 1.0)) throw std::invalid_argument("apply_censoring: p must lie in [0,1)");
    std::bernoulli_distribution keep(1.0 - p);
    return keep(rng);
}

double mean_event_time_control(GeneratorKind kind) { return midpoint_mean(kind, control_time); }
double mean_event_time_treatment(GeneratorKind kind) { return midpoint_mean(kind, treatment_time); }

LabeledTrial generate_trial(const GenConfig& config) {
    config.validate();
    LabeledTrial trial;
    trial.config = config;

    std::mt19937_64 rng_latent(derive_seed(config.seed, kStreamLatent));
    std::mt19937_64 rng_features(derive_seed(config.seed, kStreamFeatures));
    std::mt19937_64 rng_noise(derive_seed(config.seed, kStreamNoise));
    std::mt19937_64 rng_censor(derive_seed(config.seed, kStreamCensor));

    if (config.kind == GeneratorKind::logarithmic && trial.config.log_coeffs.empty()) {
        std::mt19937_64 rng_coeffs(derive_seed(config.seed, kStreamCoeffs));
        std::uniform_real_distribution<double> mag(1.0, 4.0);
        std::bernoulli_distribution negative(0.5);
        for (int i = 0; i < config.d; ++i) {
            const double a = mag(rng_coeffs);
            trial.config.log_coeffs.push_back(negative(rng_coeffs) ? -a : a);
        }
    }
    const std::vector<double>& coeffs = trial.config.log_coeffs;

    const double mean_f = mean_event_time_control(config.kind);
    const double mean_h = mean_event_time_treatment(config.kind);
    std::uniform_real_distribution<double> latent(domain_lo(config.kind), domain_hi(config.kind));

    auto make_record = [&](Group group) {
        const double t = latent(rng_latent);
        SurvivalRecord r;
        r.features = generate_features(config.kind, config.d, t, coeffs, &rng_features);
        const auto [f, h] = generate_event_times(t);
        if (group == Group::control)
            r.time = apply_noise(f, config.epsilon, mean_f, rng_noise);
        else
            r.time = apply_noise(h, config.epsilon, mean_h, rng_noise);
        r.event = apply_censoring(config.p, rng_censor);
        r.group = group;
        return r;
    };

    const int s = static_cast<int>(std::lround(config.q * config.c));
    const int v = static_cast<int>(std::lround(0.5 * config.c));

    std::vector<SurvivalRecord> controls, treatments, validation;
    for (int i = 0; i < config.c; ++i) controls.push_back(make_record(Group::control));
    for (int i = 0; i < s; ++i) treatments.push_back(make_record(Group::treatment));
    for (int i = 0; i < v; ++i) validation.push_back(make_record(Group::control));
    trial.controls = SurvivalDataset(std::move(controls));
    trial.treatments = SurvivalDataset(std::move(treatments));
    trial.validation_controls = SurvivalDataset(std::move(validation));

    trial.test_points.reserve(kTestPointCount);
    for (int i = 0; i < kTestPointCount; ++i) {
        TestPoint tp;
        tp.latent_t = latent(rng_latent);
        tp.z = generate_features(config.kind, config.d, tp.latent_t, coeffs, &rng_features);
        const auto [f, h] = generate_event_times(tp.latent_t);
        tp.true_cate = h - f;
        trial.test_points.push_back(std::move(tp));
    }
    return trial;
}

void write_dataset_csv(const std::string& path, const SurvivalDataset& data) {
    data.validate();
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_dataset_csv: cannot open " + path);
    for (int j = 1; j <= data.d; ++j) os << "x" << j << ",";
    os << "time,event,group\n";
    for (const auto& r : data.records) {
        for (double v : r.features) os << format_double(v) << ",";
        os << format_double(r.time) << "," << (r.event ? 1 : 0) << ","
           << (r.group == Group::treatment ? 1 : 0) << "\n";
    }
    if (!os) throw std::runtime_error("write_dataset_csv: write failure on " + path);
}

SurvivalDataset read_dataset_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_dataset_csv: empty file " + path);
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[header.size() - 3] != "time" ||
        header[header.size() - 2] != "event" || header.back() != "group")
        throw std::runtime_error("read_dataset_csv: unexpected header in " + path);
    const std::size_t d = header.size() - 3;

    std::vector<SurvivalRecord> records;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error("read_dataset_csv: ragged row in " + path);
        SurvivalRecord r;
        for (std::size_t j = 0; j < d; ++j) r.features.push_back(parse_double(fields[j]));
        r.time = parse_double(fields[d]);
        r.event = parse_double(fields[d + 1]) != 0.0;
        r.group = parse_double(fields[d + 2]) != 0.0 ? Group::treatment : Group::control;
        records.push_back(std::move(r));
    }
    return SurvivalDataset(std::move(records));
}

void write_test_points_csv(const std::string& path, const std::vector<TestPoint>& points) {
    if (points.empty()) throw std::invalid_argument("write_test_points_csv: empty list");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_test_points_csv: cannot open " + path);
    const std::size_t d = points.front().z.size();
    for (std::size_t j = 1; j <= d; ++j) os << "x" << j << ",";
    os << "true_cate,latent_t\n";
    for (const auto& tp : points) {
        if (tp.z.size() != d) throw std::invalid_argument("write_test_points_csv: ragged points");
        for (double v : tp.z) os << format_double(v) << ",";
        os << format_double(tp.true_cate) << "," << format_double(tp.latent_t) << "\n";
    }
    if (!os) throw std::runtime_error("write_test_points_csv: write failure on " + path);
}

std::vector<TestPoint> read_test_points_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_test_points_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_test_points_csv: empty file " + path);
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[header.size() - 2] != "true_cate" || header.back() != "latent_t")
        throw std::runtime_error("read_test_points_csv: unexpected header in " + path);
    const std::size_t d = header.size() - 2;

    std::vector<TestPoint> points;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error("read_test_points_csv: ragged row in " + path);
        TestPoint tp;
        for (std::size_t j = 0; j < d; ++j) tp.z.push_back(parse_double(fields[j]));
        tp.true_cate = parse_double(fields[d]);
        tp.latent_t = parse_double(fields[d + 1]);
        points.push_back(std::move(tp));
    }
    return points;
}

}  // namespace benk
