#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "benk/survival.hpp"

namespace benk {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

/// Architecture of the shared-parameter scoring subnetwork. Every reference
/// pair [anchor ‖ reference] (length 2*feature_dim) is fed through the same
/// stack of hidden layers onto a single linear score.
struct KernelNetConfig {
    int feature_dim = 0;
    std::vector<int> hidden_layers{100, 100};
    Activation activation = Activation::relu;
    std::uint64_t init_seed = 0;

    int input_dim() const { return 2 * feature_dim; }
    void validate() const;
};

struct KernelNetParams {
    // weights[l] has shape (layer_out x layer_in); the final layer has one row.
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Activation activation = Activation::relu;

    int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
    std::size_t parameter_count() const;
    void validate() const;
};

/// Uniform fan-in initialization, deterministic in config.init_seed.
KernelNetParams init_params(const KernelNetConfig& config);

struct GradientAccumulator {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static GradientAccumulator zeros_like(const KernelNetParams& params);
    void set_zero();
    void add(const GradientAccumulator& other);
    void scale(double s);
    double max_abs() const;
};

/// Reference set staged for kernel scoring: feature columns, times and event
/// flags already in risk order.
struct RefBundle {
    Eigen::MatrixXd features;  // d x m, columns in risk order
    std::vector<double> times;
    std::vector<std::uint8_t> events;
    std::vector<int> source_index;  // bundle column -> index in the source list

    static RefBundle from_dataset(const SurvivalDataset& refs);
    static RefBundle from_subset(const SurvivalDataset& data, std::span<const int> indices);

    int dim() const { return static_cast<int>(features.rows()); }
    int size() const { return static_cast<int>(features.cols()); }
};

/// Intermediates retained by a forward pass for the matching backward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = stacked pair inputs, then hidden activations
    Eigen::VectorXd scores;             // risk order
    Eigen::VectorXd weights;            // softmax of scores, risk order
    BeranFactors beran;
};

/// Raw pre-normalization scores, one per reference, in the given order.
std::vector<double> kernel_scores(const KernelNetParams& params,
                                  const std::vector<double>& anchor,
                                  const std::vector<std::vector<double>>& refs);

WeightVector softmax_weights(const std::vector<double>& scores);
Eigen::VectorXd softmax_weights(const Eigen::VectorXd& scores);

/// Kernel scores -> softmax weights -> Beran estimator over the bundle.
void forward_bundle(const KernelNetParams& params,
                    const Eigen::Ref<const Eigen::VectorXd>& anchor,
                    const RefBundle& refs, ForwardCache& cache);

std::pair<StepSurvivalFunction, ForwardCache> forward_sf(const KernelNetParams& params,
                                                         const std::vector<double>& anchor,
                                                         const SurvivalDataset& refs);

/// Expected lifetime of the survival function held by a forward cache.
double cached_expected_lifetime(const ForwardCache& cache);

/// Exact gradient of (loss_grad * expected_lifetime of the cached survival
/// function) with respect to every parameter. Factors clamped during the
/// forward product contribute zero gradient.
void backward_into(const KernelNetParams& params, const ForwardCache& cache,
                   double loss_grad_wrt_expected_lifetime, GradientAccumulator& grad);
GradientAccumulator backward(const KernelNetParams& params, const ForwardCache& cache,
                             double loss_grad_wrt_expected_lifetime);

struct GradCheckReport {
    double max_rel_error = 0.0;
    int trials = 0;
    long params_checked = 0;
};

/// Randomized comparison of analytic gradients against central finite
/// differences (step 1e-5) of the expected lifetime. Each trial draws the
/// feature dimension from {2,3,5}, the reference count from {3,5,8}, mixed
/// censoring, and fresh parameters; hidden sizes and activation come from
/// `arch`. Relative error |a-n|/(|a|+|n|) is tracked over parameters with
/// |a|+|n| > 1e-8.
GradCheckReport gradient_check(const KernelNetConfig& arch, int trial_count, std::uint64_t seed);

/// Binary parameter serialization: shape header then row-major 64-bit values.
void write_params(std::ostream& os, const KernelNetParams& params);
KernelNetParams read_params(std::istream& is);
void save_params(const std::string& path, const KernelNetParams& params);
KernelNetParams load_params(const std::string& path);

}  // namespace benk
