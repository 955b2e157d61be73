#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "benk/datagen.hpp"

using namespace benk;

TEST_CASE("spiral features at t=0 vanish") {
    auto x = generate_features(GeneratorKind::spiral, 2, 0.0, {}, nullptr);
    CHECK(x == std::vector<double>{0.0, 0.0});
}

TEST_CASE("spiral features at t=pi/2") {
    const double t = M_PI / 2.0;
    auto x = generate_features(GeneratorKind::spiral, 2, t, {}, nullptr);
    CHECK(x[0] == doctest::Approx(1.5708).epsilon(1e-4));
    CHECK(x[1] == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("spiral features follow the sin/cos pair pattern") {
    const double t = 2.3;
    auto x = generate_features(GeneratorKind::spiral, 5, t, {}, nullptr);
    CHECK(x[0] == doctest::Approx(t * std::sin(t)));
    CHECK(x[1] == doctest::Approx(t * std::cos(t)));
    CHECK(x[2] == doctest::Approx(t * std::sin(2 * t)));
    CHECK(x[3] == doctest::Approx(t * std::cos(2 * t)));
    CHECK(x[4] == doctest::Approx(t * std::sin(3 * t)));
}

TEST_CASE("logarithmic features vanish at t=1 and scale with the coefficients") {
    std::vector<double> coeffs = {2.0, -3.0, 1.5};
    auto zero = generate_features(GeneratorKind::logarithmic, 3, 1.0, coeffs, nullptr);
    for (double v : zero) CHECK(v == 0.0);
    auto x = generate_features(GeneratorKind::logarithmic, 3, 2.5, coeffs, nullptr);
    for (int i = 0; i < 3; ++i)
        CHECK(x[(std::size_t)i] == doctest::Approx(coeffs[(std::size_t)i] * std::log(2.5)));
}

TEST_CASE("power features use t powers except the near-linear band") {
    std::mt19937_64 rng(3);
    const double t = 4.0;
    auto x = generate_features(GeneratorKind::power, 10, t, {}, &rng);
    const double root = std::sqrt(10.0);
    // 1-based coordinates 3, 4, 5 satisfy 0.8 < i/sqrt(10) < 1.6 and are noise
    for (int i = 1; i <= 10; ++i) {
        const double expo = i / root;
        if (expo > 0.8 && expo < 1.6) continue;
        CHECK(x[(std::size_t)(i - 1)] == doctest::Approx(std::pow(t, expo)).epsilon(1e-12));
    }
    std::mt19937_64 rng2(4);
    auto y = generate_features(GeneratorKind::power, 10, t, {}, &rng2);
    CHECK(x[2] != y[2]);  // noise coordinates vary with the rng
    CHECK(x[0] == y[0]);  // deterministic coordinates do not
}

TEST_CASE("generate_features rejects out-of-domain latents") {
    CHECK_THROWS_AS(generate_features(GeneratorKind::spiral, 2, -0.1, {}, nullptr),
                    std::domain_error);
    CHECK_THROWS_AS(generate_features(GeneratorKind::spiral, 2, 10.1, {}, nullptr),
                    std::domain_error);
    std::vector<double> coeffs = {1.0};
    CHECK_THROWS_AS(generate_features(GeneratorKind::logarithmic, 1, 0.4, coeffs, nullptr),
                    std::domain_error);
    CHECK_THROWS_AS(generate_features(GeneratorKind::logarithmic, 1, 5.5, coeffs, nullptr),
                    std::domain_error);
}

TEST_CASE("generate_event_times matches the closed forms") {
    auto [f0, h0] = generate_event_times(0.0);
    CHECK(f0 == doctest::Approx(39.120).epsilon(1e-3 / 39.0));
    CHECK(h0 == doctest::Approx(12.040).epsilon(1e-3 / 12.0));
    auto [f10, h10] = generate_event_times(10.0);
    CHECK(f10 == doctest::Approx(39.120 * std::exp(-5.0)).epsilon(1e-4));
    auto [f1, h1] = generate_event_times(1.0);
    auto [f2, h2] = generate_event_times(2.0);
    CHECK(f1 > f2);
    CHECK(h1 > h2);
    CHECK(f0 > 0.0);
    CHECK(h0 > 0.0);
}

TEST_CASE("apply_noise leaves times untouched at epsilon zero") {
    std::mt19937_64 rng(5);
    CHECK(apply_noise(3.75, 0.0, 40.0, rng) == 3.75);
}

TEST_CASE("apply_noise has the documented sigma") {
    std::mt19937_64 rng(6);
    const double mean_time = 40.0;
    const double epsilon = 0.05;  // sigma = 0.05 * 40 / 3 = 2/3
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = apply_noise(100.0, epsilon, mean_time, rng) - 100.0;
        sum += v;
        sumsq += v * v;
    }
    const double var = sumsq / n - (sum / n) * (sum / n);
    CHECK(std::sqrt(var) == doctest::Approx(2.0 / 3.0).epsilon(0.02));
}

TEST_CASE("apply_noise output stays positive") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 10000; ++i) CHECK(apply_noise(0.01, 3.0, 40.0, rng) > 0.0);
}

TEST_CASE("apply_censoring honors the censoring probability") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) CHECK(apply_censoring(0.0, rng));
    int events = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (apply_censoring(0.25, rng)) ++events;
    CHECK(static_cast<double>(events) / n == doctest::Approx(0.75).epsilon(0.01 / 0.75));
    CHECK_NOTHROW(apply_censoring(0.99, rng));
    CHECK_THROWS_AS(apply_censoring(1.0, rng), std::invalid_argument);
}

TEST_CASE("generate_trial produces the documented counts") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::spiral;
    cfg.d = 10;
    cfg.c = 100;
    cfg.q = 0.2;
    cfg.seed = 11;
    auto trial = generate_trial(cfg);
    CHECK(trial.controls.size() == 100);
    CHECK(trial.treatments.size() == 20);
    CHECK(trial.validation_controls.size() == 50);
    CHECK(trial.test_points.size() == 1000);
    for (const auto& r : trial.controls.records) CHECK(r.group == Group::control);
    for (const auto& r : trial.treatments.records) CHECK(r.group == Group::treatment);
}

TEST_CASE("noiseless uncensored trials reproduce the generator times") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::spiral;
    cfg.d = 2;
    cfg.c = 50;
    cfg.q = 0.2;
    cfg.p = 0.0;
    cfg.epsilon = 0.0;
    cfg.seed = 13;
    auto trial = generate_trial(cfg);
    for (const auto& r : trial.controls.records) {
        CHECK(r.event);
        // for d=2 the spiral radius recovers the latent parameter
        const double t = std::hypot(r.features[0], r.features[1]);
        const auto [f, h] = generate_event_times(t);
        CHECK(r.time == doctest::Approx(f).epsilon(1e-9));
    }
    for (const auto& r : trial.treatments.records) {
        const double t = std::hypot(r.features[0], r.features[1]);
        const auto [f, h] = generate_event_times(t);
        CHECK(r.time == doctest::Approx(h).epsilon(1e-9));
    }
}

TEST_CASE("test points carry the exact noiseless ground truth") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::logarithmic;
    cfg.d = 3;
    cfg.c = 30;
    cfg.seed = 17;
    auto trial = generate_trial(cfg);
    REQUIRE(trial.config.log_coeffs.size() == 3);
    for (const auto& tp : trial.test_points) {
        const auto [f, h] = generate_event_times(tp.latent_t);
        CHECK(tp.true_cate == h - f);
        auto z = generate_features(GeneratorKind::logarithmic, 3, tp.latent_t,
                                   trial.config.log_coeffs, nullptr);
        CHECK(z == tp.z);
    }
}

TEST_CASE("trials are bitwise deterministic in the seed") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::power;
    cfg.d = 10;
    cfg.c = 40;
    cfg.seed = 19;
    auto a = generate_trial(cfg);
    auto b = generate_trial(cfg);
    REQUIRE(a.controls.size() == b.controls.size());
    for (std::size_t i = 0; i < a.controls.size(); ++i) {
        CHECK(a.controls.records[i].time == b.controls.records[i].time);
        CHECK(a.controls.records[i].event == b.controls.records[i].event);
        CHECK(a.controls.records[i].features == b.controls.records[i].features);
    }
    for (std::size_t i = 0; i < a.test_points.size(); ++i)
        CHECK(a.test_points[i].true_cate == b.test_points[i].true_cate);
    cfg.seed = 20;
    auto c = generate_trial(cfg);
    CHECK(a.controls.records[0].time != c.controls.records[0].time);
}

TEST_CASE("empirical censoring fraction tracks p") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::spiral;
    cfg.d = 2;
    cfg.c = 100000;
    cfg.p = 0.3;
    cfg.seed = 23;
    auto trial = generate_trial(cfg);
    int events = 0;
    for (const auto& r : trial.controls.records)
        if (r.event) ++events;
    const double frac = static_cast<double>(events) / static_cast<double>(trial.controls.size());
    CHECK(std::fabs(frac - 0.7) < 0.01);
    for (const auto& r : trial.controls.records) CHECK(r.time > 0.0);
}

TEST_CASE("mean event times match the closed-form integrals") {
    // f(t) = A exp(-t/2) on [0,10]: mean = A (1 - e^-5) / 5
    const double a = -std::log(0.02) / 0.1;
    const double expect_f = a * (1.0 - std::exp(-5.0)) / 5.0;
    CHECK(mean_event_time_control(GeneratorKind::spiral) == doctest::Approx(expect_f).epsilon(1e-6));
    // h(t) = B exp(-0.15 t) on [0,10]: mean = B (1 - e^-1.5) / 1.5
    const double b = -std::log(0.3) / 0.1;
    const double expect_h = b * (1.0 - std::exp(-1.5)) / 1.5;
    CHECK(mean_event_time_treatment(GeneratorKind::power) == doctest::Approx(expect_h).epsilon(1e-6));
}

TEST_CASE("dataset CSV round trip is lossless") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::spiral;
    cfg.d = 4;
    cfg.c = 25;
    cfg.p = 0.25;
    cfg.seed = 29;
    auto trial = generate_trial(cfg);
    const std::string path = "datagen_roundtrip.csv";
    write_dataset_csv(path, trial.controls);
    auto loaded = read_dataset_csv(path);
    REQUIRE(loaded.size() == trial.controls.size());
    CHECK(loaded.d == trial.controls.d);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.records[i].time == trial.controls.records[i].time);
        CHECK(loaded.records[i].event == trial.controls.records[i].event);
        CHECK(loaded.records[i].features == trial.controls.records[i].features);
        CHECK(loaded.records[i].group == trial.controls.records[i].group);
    }
    std::remove(path.c_str());
}

TEST_CASE("test point CSV round trip is lossless") {
    GenConfig cfg;
    cfg.kind = GeneratorKind::power;
    cfg.d = 5;
    cfg.c = 10;
    cfg.seed = 31;
    auto trial = generate_trial(cfg);
    const std::string path = "datagen_points_roundtrip.csv";
    write_test_points_csv(path, trial.test_points);
    auto loaded = read_test_points_csv(path);
    REQUIRE(loaded.size() == trial.test_points.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].z == trial.test_points[i].z);
        CHECK(loaded[i].true_cate == trial.test_points[i].true_cate);
        CHECK(loaded[i].latent_t == trial.test_points[i].latent_t);
    }
    std::remove(path.c_str());
}

TEST_CASE("config validation") {
    GenConfig cfg;
    cfg.q = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.q = 0.2;
    cfg.p = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.p = 0.99;
    CHECK_NOTHROW(cfg.validate());
    cfg.epsilon = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.epsilon = 0.0;
    cfg.log_coeffs = {0.5};
    cfg.d = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.log_coeffs = {2.0};
    CHECK_NOTHROW(cfg.validate());
}
