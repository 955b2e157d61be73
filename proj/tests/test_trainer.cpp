#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "benk/trainer.hpp"

using namespace benk;

namespace {

SurvivalRecord rec(double t, bool event, std::vector<double> x) {
    SurvivalRecord r;
    r.features = std::move(x);
    r.time = t;
    r.event = event;
    return r;
}

SurvivalDataset random_controls(std::mt19937_64& rng, int d, int c, double censor_frac) {
    std::normal_distribution<double> feat(0.0, 1.0);
    std::uniform_real_distribution<double> time_dist(0.5, 6.0);
    std::bernoulli_distribution censor(censor_frac);
    std::vector<SurvivalRecord> rs;
    for (int i = 0; i < c; ++i) {
        std::vector<double> x(static_cast<std::size_t>(d));
        for (auto& v : x) v = feat(rng);
        rs.push_back(rec(time_dist(rng), !censor(rng), std::move(x)));
    }
    rs.front().event = true;
    return SurvivalDataset(std::move(rs));
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.replications = 2;
    cfg.subset_size = 3;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.hidden_layers = {8, 4};
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("build_training_examples produces c*N subsets of size n") {
    std::mt19937_64 rng(1);
    auto controls = random_controls(rng, 2, 5, 0.2);
    TrainConfig cfg = tiny_config();
    cfg.replications = 3;
    cfg.subset_size = 2;
    auto examples = build_training_examples(controls, cfg, rng);
    REQUIRE(examples.size() == 15);
    for (const auto& ex : examples) {
        CHECK(ex.subset_indices.size() == 2);
        for (int idx : ex.subset_indices) {
            CHECK(idx != ex.anchor_index);
            CHECK(idx >= 0);
            CHECK(idx < 5);
        }
        CHECK(ex.subset_indices[0] != ex.subset_indices[1]);
    }
}

TEST_CASE("build_training_examples with c=3, n=2 forces the complementary subset") {
    std::mt19937_64 rng(2);
    auto controls = random_controls(rng, 2, 3, 0.0);
    TrainConfig cfg = tiny_config();
    cfg.replications = 1;
    cfg.subset_size = 2;
    auto examples = build_training_examples(controls, cfg, rng);
    REQUIRE(examples.size() == 3);
    for (const auto& ex : examples) {
        std::vector<int> sorted = ex.subset_indices;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> expected;
        for (int i = 0; i < 3; ++i)
            if (i != ex.anchor_index) expected.push_back(i);
        CHECK(sorted == expected);
    }
}

TEST_CASE("build_training_examples rejects c <= n") {
    std::mt19937_64 rng(3);
    auto controls = random_controls(rng, 2, 2, 0.0);
    TrainConfig cfg = tiny_config();
    cfg.replications = 1;
    cfg.subset_size = 2;
    CHECK_THROWS_AS(build_training_examples(controls, cfg, rng), InsufficientControlsError);
}

TEST_CASE("subset sampling is uniform over the non-anchor controls") {
    std::mt19937_64 rng(4);
    auto controls = random_controls(rng, 2, 10, 0.0);
    TrainConfig cfg = tiny_config();
    cfg.replications = 10000;
    cfg.subset_size = 3;
    auto examples = build_training_examples(controls, cfg, rng);
    // 10k draws for anchor 0: inclusion of each non-anchor index is
    // Binomial(10000, 3/9).
    std::vector<int> counts(10, 0);
    int draws = 0;
    for (const auto& ex : examples) {
        if (ex.anchor_index != 0) continue;
        ++draws;
        for (int idx : ex.subset_indices) counts[static_cast<std::size_t>(idx)]++;
    }
    REQUIRE(draws == 10000);
    const double expected = 10000.0 / 3.0;
    const double sigma = std::sqrt(10000.0 * (1.0 / 3.0) * (2.0 / 3.0));
    for (int idx = 1; idx < 10; ++idx)
        CHECK(std::fabs(counts[static_cast<std::size_t>(idx)] - expected) <= 3.0 * sigma);
    CHECK(counts[0] == 0);
}

TEST_CASE("benk_loss is zero when every anchor is predicted exactly") {
    // Anchor at time 3 with a single-record subset at time 3: the Beran SF is
    // a point mass at 3, so the expected lifetime equals the anchor time.
    std::vector<SurvivalRecord> rs;
    rs.push_back(rec(3.0, true, {0.0}));
    rs.push_back(rec(3.0, true, {1.0}));
    SurvivalDataset controls(std::move(rs));
    std::vector<TrainingExample> examples = {{0, {1}}, {1, {0}}};
    KernelNetConfig net;
    net.feature_dim = 1;
    net.hidden_layers = {4};
    auto params = init_params(net);
    CHECK(benk_loss(params, examples, controls) == 0.0);
}

TEST_CASE("benk_loss single squared error") {
    // Uniform weights over an uncensored pair at (2, 5): S = 1 on [0,2),
    // 0.5 on [2,5), so the expected lifetime is 3.5; anchor time 1.5 -> 4.0.
    std::vector<SurvivalRecord> rs;
    rs.push_back(rec(1.5, true, {0.0}));
    rs.push_back(rec(2.0, true, {0.2}));
    rs.push_back(rec(5.0, true, {-0.2}));
    SurvivalDataset controls(std::move(rs));
    std::vector<TrainingExample> examples = {{0, {1, 2}}};
    KernelNetConfig net;
    net.feature_dim = 1;
    net.hidden_layers = {4};
    auto params = init_params(net);
    params.weights.back().setZero();
    params.biases.back().setZero();  // uniform weights
    CHECK(benk_loss(params, examples, controls) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("benk_loss throws when every anchor is censored") {
    std::vector<SurvivalRecord> rs;
    rs.push_back(rec(1.0, false, {0.0}));
    rs.push_back(rec(2.0, true, {1.0}));
    SurvivalDataset controls(std::move(rs));
    std::vector<TrainingExample> examples = {{0, {1}}};
    auto params = init_params([] {
        KernelNetConfig n;
        n.feature_dim = 1;
        n.hidden_layers = {4};
        return n;
    }());
    CHECK_THROWS_AS(benk_loss(params, examples, controls), AllAnchorsCensoredError);
}

TEST_CASE("benk_loss gradient matches central finite differences") {
    std::mt19937_64 rng(17);
    auto controls = random_controls(rng, 2, 6, 0.25);
    TrainConfig cfg = tiny_config();
    cfg.replications = 2;
    cfg.subset_size = 3;
    auto examples = build_training_examples(controls, cfg, rng);

    KernelNetConfig net;
    net.feature_dim = 2;
    net.hidden_layers = {8, 4};
    net.init_seed = 3;
    auto params = init_params(net);

    GradientAccumulator grad = GradientAccumulator::zeros_like(params);
    benk_loss_gradient(params, examples, controls, grad);

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (int idx = 0; idx < params.weights[l].size(); ++idx) {
            KernelNetParams probe = params;
            double* slot = probe.weights[l].data() + idx;
            const double base = *slot;
            *slot = base + h;
            const double lp = benk_loss(probe, examples, controls);
            *slot = base - h;
            const double lm = benk_loss(probe, examples, controls);
            const double numeric = (lp - lm) / (2 * h);
            const double a = grad.weights[l].data()[idx];
            if (std::fabs(a) + std::fabs(numeric) > 1e-8)
                worst = std::max(worst, std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric)));
        }
        for (int idx = 0; idx < params.biases[l].size(); ++idx) {
            KernelNetParams probe = params;
            double* slot = probe.biases[l].data() + idx;
            const double base = *slot;
            *slot = base + h;
            const double lp = benk_loss(probe, examples, controls);
            *slot = base - h;
            const double lm = benk_loss(probe, examples, controls);
            const double numeric = (lp - lm) / (2 * h);
            const double a = grad.biases[l].data()[idx];
            if (std::fabs(a) + std::fabs(numeric) > 1e-8)
                worst = std::max(worst, std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric)));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("zero-epoch training applies no update") {
    std::mt19937_64 rng(23);
    auto controls = random_controls(rng, 2, 8, 0.2);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 0;
    auto a = train(controls, cfg);
    CHECK(a.loss_trace.empty());
    // the learning rate cannot matter when no batch ever runs
    TrainConfig cfg2 = cfg;
    cfg2.learning_rate = 100.0;
    auto b = train(controls, cfg2);
    for (std::size_t l = 0; l < a.params.weights.size(); ++l) {
        CHECK(a.params.weights[l] == b.params.weights[l]);
        CHECK(a.params.biases[l] == b.params.biases[l]);
    }
    TrainConfig cfg3 = cfg;
    cfg3.epochs = 1;
    auto c = train(controls, cfg3);
    CHECK(a.params.weights[0] != c.params.weights[0]);
}

TEST_CASE("training on homogeneous controls does not increase the loss") {
    std::vector<SurvivalRecord> rs;
    for (int i = 0; i < 6; ++i) rs.push_back(rec(4.0, true, {1.0, -1.0}));
    SurvivalDataset controls(std::move(rs));
    TrainConfig cfg = tiny_config();
    cfg.subset_size = 2;
    cfg.epochs = 50;
    std::mt19937_64 rng(5);
    auto examples = build_training_examples(controls, cfg, rng);
    auto zero_epochs = cfg;
    zero_epochs.epochs = 0;
    const double initial = benk_loss(train(controls, zero_epochs).params, examples, controls);
    const double final_loss = benk_loss(train(controls, cfg).params, examples, controls);
    CHECK(final_loss <= initial + 1e-12);
}

TEST_CASE("training is deterministic given the seed") {
    std::mt19937_64 rng(29);
    auto controls = random_controls(rng, 3, 10, 0.25);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 4;
    auto a = train(controls, cfg);
    auto b = train(controls, cfg);
    REQUIRE(a.loss_trace.size() == b.loss_trace.size());
    for (std::size_t i = 0; i < a.loss_trace.size(); ++i) CHECK(a.loss_trace[i] == b.loss_trace[i]);
    for (std::size_t l = 0; l < a.params.weights.size(); ++l)
        CHECK(a.params.weights[l] == b.params.weights[l]);
}

TEST_CASE("training result is identical across thread counts") {
    std::mt19937_64 rng(31);
    auto controls = random_controls(rng, 2, 12, 0.2);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 3;
    cfg.batch_size = 12;
    auto a = train(controls, cfg, nullptr, 1);
    auto b = train(controls, cfg, nullptr, 4);
    for (std::size_t l = 0; l < a.params.weights.size(); ++l) {
        CHECK(a.params.weights[l] == b.params.weights[l]);
        CHECK(a.params.biases[l] == b.params.biases[l]);
    }
}

TEST_CASE("predict_cate is zero when treatments equal controls") {
    std::mt19937_64 rng(37);
    auto controls = random_controls(rng, 2, 8, 0.2);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    auto model = train(controls, cfg);
    std::vector<double> z = {0.1, -0.4};
    CHECK(predict_cate(model, controls, controls, z) == 0.0);
}

TEST_CASE("predict_cate on point masses reproduces the generator difference") {
    std::vector<SurvivalRecord> c1, t1;
    c1.push_back(rec(39.12, true, {0.0, 0.0}));
    t1.push_back(rec(12.04, true, {0.0, 0.0}));
    SurvivalDataset controls(std::move(c1)), treatments(std::move(t1));
    TrainedBenk model;
    KernelNetConfig net;
    net.feature_dim = 2;
    net.hidden_layers = {4};
    model.params = init_params(net);
    model.feature_dim = 2;
    std::vector<double> z = {0.3, 0.3};
    CHECK(predict_cate(model, controls, treatments, z) == doctest::Approx(-27.08).epsilon(1e-12));
    CHECK(predict_cate(model, treatments, controls, z) == doctest::Approx(27.08).epsilon(1e-12));
}

TEST_CASE("predict_cate is invariant to permuting reference records") {
    std::mt19937_64 rng(41);
    auto controls = random_controls(rng, 2, 9, 0.3);
    auto treatments = random_controls(rng, 2, 5, 0.3);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    auto model = train(controls, cfg);
    std::vector<double> z = {0.5, 0.5};
    const double base = predict_cate(model, controls, treatments, z);

    auto shuffled_c = controls.records;
    auto shuffled_t = treatments.records;
    std::shuffle(shuffled_c.begin(), shuffled_c.end(), rng);
    std::shuffle(shuffled_t.begin(), shuffled_t.end(), rng);
    SurvivalDataset pc(std::move(shuffled_c)), pt(std::move(shuffled_t));
    CHECK(predict_cate(model, pc, pt, z) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("validation selection keeps the best-scoring parameters") {
    std::mt19937_64 rng(43);
    auto controls = random_controls(rng, 2, 12, 0.2);
    auto validation = random_controls(rng, 2, 6, 0.2);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 6;
    auto model = train(controls, cfg, &validation);
    REQUIRE(model.validation_trace.size() == 6);
    // the retained parameters must score no worse than any epoch snapshot did
    double best = *std::min_element(model.validation_trace.begin(), model.validation_trace.end());
    RefBundle bundle = RefBundle::from_dataset(controls);
    double sum = 0.0;
    int used = 0;
    for (const auto& r : validation.records) {
        if (!r.event) continue;
        double e = predict_expected_lifetime(model.params, bundle, r.features);
        sum += (e - r.time) * (e - r.time);
        ++used;
    }
    CHECK(sum / used == doctest::Approx(std::min(best, sum / used)).epsilon(1e-12));
}

TEST_CASE("model save/load round trip") {
    std::mt19937_64 rng(47);
    auto controls = random_controls(rng, 2, 8, 0.2);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    auto model = train(controls, cfg);
    const std::string path = "trainer_roundtrip.bin";
    save_model(path, model);
    auto loaded = load_model(path);
    CHECK(loaded.feature_dim == model.feature_dim);
    CHECK(loaded.config.replications == model.config.replications);
    CHECK(loaded.config.seed == model.config.seed);
    CHECK(loaded.loss_trace == model.loss_trace);
    for (std::size_t l = 0; l < model.params.weights.size(); ++l)
        CHECK(loaded.params.weights[l] == model.params.weights[l]);
    auto treatments = random_controls(rng, 2, 4, 0.2);
    std::vector<double> z = {0.0, 0.1};
    CHECK(predict_cate(loaded, controls, treatments, z) ==
          predict_cate(model, controls, treatments, z));
    std::remove(path.c_str());
}
