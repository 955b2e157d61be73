#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "benk/survival.hpp"

namespace benk {

enum class GeneratorKind : std::uint8_t { spiral = 0, logarithmic = 1, power = 2 };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_from_string(const std::string& name);

/// Latent-parameter domain of a feature generator.
double domain_lo(GeneratorKind kind);
double domain_hi(GeneratorKind kind);

struct GenConfig {
    GeneratorKind kind = GeneratorKind::spiral;
    int d = 10;
    int c = 100;              // control count
    double q = 0.2;           // treatment proportion
    double p = 0.25;          // censoring proportion
    double epsilon = 0.05;    // noise level, as a fraction of mean time over 3 sigma
    std::uint64_t seed = 0;
    std::vector<double> log_coeffs;  // logarithmic kind; drawn from the seed when empty

    void validate() const;
};

struct TestPoint {
    std::vector<double> z;
    double true_cate = 0.0;
    double latent_t = 0.0;
};

struct LabeledTrial {
    SurvivalDataset controls;
    SurvivalDataset treatments;
    SurvivalDataset validation_controls;
    std::vector<TestPoint> test_points;
    GenConfig config;  // echo with materialized log coefficients
};

/// Feature map at latent parameter t. The power kind replaces its
/// near-linear coordinates with standard normal draws from rng; the other
/// kinds never touch rng.
std::vector<double> generate_features(GeneratorKind kind, int d, double t,
                                      std::span<const double> coeffs, std::mt19937_64* rng);

/// Control and treatment event-time functions (f, h) of the latent parameter.
std::pair<double, double> generate_event_times(double t);

/// Additive Gaussian noise with sigma = epsilon * mean_time / 3, floored at a
/// small positive value.
double apply_noise(double time, double epsilon, double mean_time, std::mt19937_64& rng);

/// Event indicator: true with probability 1 - p. Censoring flips the label
/// only; the recorded time is unchanged.
bool apply_censoring(double p, std::mt19937_64& rng);

/// Average of the control / treatment event-time functions over the uniform
/// latent domain, by 1e5-point midpoint quadrature.
double mean_event_time_control(GeneratorKind kind);
double mean_event_time_treatment(GeneratorKind kind);

/// Full synthetic benchmark trial: c controls, round(q*c) treatments,
/// round(0.5*c) validation controls and 1000 test points carrying the
/// noiseless ground-truth CATE.
LabeledTrial generate_trial(const GenConfig& config);

inline constexpr int kTestPointCount = 1000;

// CSV schemas: datasets as x1,...,xd,time,event,group (event 1/0,
// group 0=control 1=treatment); test points as x1,...,xd,true_cate,latent_t.
void write_dataset_csv(const std::string& path, const SurvivalDataset& data);
SurvivalDataset read_dataset_csv(const std::string& path);
void write_test_points_csv(const std::string& path, const std::vector<TestPoint>& points);
std::vector<TestPoint> read_test_points_csv(const std::string& path);

}  // namespace benk
