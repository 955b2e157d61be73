#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "benk/kernel_net.hpp"
#include "benk/survival.hpp"

namespace benk {

enum class Optimizer : std::uint8_t { sgd = 0, adaptive_moment = 1 };

struct TrainConfig {
    int replications = 1;    // N: subsets drawn per anchor
    int subset_size = 0;     // n: references per subset; 0 = round(0.2 * c)
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adaptive_moment;
    std::uint64_t seed = 0;
    std::vector<int> hidden_layers{100, 100};
    Activation activation = Activation::relu;

    // Concrete subset size for a control set of c records.
    int resolved_subset_size(std::size_t c) const;
    void validate() const;
};

/// One (reference subset, anchor) pair; indices point into the control set.
struct TrainingExample {
    int anchor_index = 0;
    std::vector<int> subset_indices;
};

struct InsufficientControlsError : std::runtime_error {
    explicit InsufficientControlsError(const std::string& what) : std::runtime_error(what) {}
};
struct AllAnchorsCensoredError : std::runtime_error {
    AllAnchorsCensoredError() : std::runtime_error("benk_loss: every anchor is censored") {}
};
struct NonFiniteLossError : std::runtime_error {
    explicit NonFiniteLossError(const std::string& what) : std::runtime_error(what) {}
};

/// Draws N subsets of n non-anchor controls for every anchor, uniformly
/// without replacement; returns exactly c*N examples in anchor-major order.
/// Throws InsufficientControlsError when c <= n.
std::vector<TrainingExample> build_training_examples(const SurvivalDataset& controls,
                                                     const TrainConfig& config,
                                                     std::mt19937_64& rng);

/// Mean squared difference between the Beran-predicted expected lifetime at
/// each uncensored anchor and the anchor's observed time. Censored anchors
/// contribute nothing; normalization is by the number of uncensored-anchor
/// examples. Throws AllAnchorsCensoredError when none exists.
double benk_loss(const KernelNetParams& params, const std::vector<TrainingExample>& examples,
                 const SurvivalDataset& controls);

/// benk_loss plus its exact gradient accumulated into `grad`.
double benk_loss_gradient(const KernelNetParams& params,
                          const std::vector<TrainingExample>& examples,
                          const SurvivalDataset& controls, GradientAccumulator& grad);

struct TrainedBenk {
    KernelNetParams params;
    TrainConfig config;
    int feature_dim = 0;
    std::vector<double> loss_trace;        // per-epoch mean minibatch loss
    std::vector<double> validation_trace;  // per-epoch validation loss, if a validation set was given
};

/// Minibatch training of the neural kernel on the control set (Algorithm 1).
/// When a validation control set is supplied, the parameters with the lowest
/// validation loss across epochs are kept.
TrainedBenk train(const SurvivalDataset& controls, const TrainConfig& config,
                  const SurvivalDataset* validation = nullptr, int threads = 1);

/// CATE at z: expected lifetime under the treatment-conditioned Beran
/// estimator minus the control-conditioned one, both using the trained
/// kernel (Algorithm 2).
double predict_cate(const TrainedBenk& model, const SurvivalDataset& controls,
                    const SurvivalDataset& treatments, const std::vector<double>& z);

std::vector<double> predict_cate_batch(const TrainedBenk& model, const SurvivalDataset& controls,
                                       const SurvivalDataset& treatments,
                                       const std::vector<std::vector<double>>& zs, int threads = 1);

/// Expected lifetime at anchor z from a Beran estimator over refs with the
/// trained kernel.
double predict_expected_lifetime(const KernelNetParams& params, const RefBundle& refs,
                                 const std::vector<double>& z);

void save_model(const std::string& path, const TrainedBenk& model);
TrainedBenk load_model(const std::string& path);

}  // namespace benk
