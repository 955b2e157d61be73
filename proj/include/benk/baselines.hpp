#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "benk/survival.hpp"

namespace benk {

struct DegenerateDataError : std::runtime_error {
    explicit DegenerateDataError(const std::string& what) : std::runtime_error(what) {}
};
struct NoUncensoredError : std::runtime_error {
    explicit NoUncensoredError(const std::string& what) : std::runtime_error(what) {}
};

/// Ridge-penalized Cox proportional hazards fit with a Breslow baseline.
struct CoxModel {
    Eigen::VectorXd beta;
    Eigen::VectorXd feature_means;       // centering offsets used during the fit
    std::vector<double> baseline_times;  // distinct event times plus the observed maximum
    std::vector<double> baseline_cumhaz;
    double ridge = 0.0;
    bool converged = true;
    int iterations = 0;
    std::vector<double> loglik_trace;  // penalized partial log-likelihood per Newton iteration
};

/// Newton-Raphson maximization of the ridge-penalized Breslow partial
/// likelihood, with step halving; converges at gradient max-norm < 1e-8 or
/// stops after 100 iterations (converged=false on the returned model).
/// Throws DegenerateDataError when the data contains no event.
CoxModel fit_cox(const SurvivalDataset& data, double ridge);

/// S(t|z) = exp(-Lambda_0(t) * exp(beta' (z - mean))).
StepSurvivalFunction cox_sf(const CoxModel& model, const std::vector<double>& z);

struct GaussianBeranConfig {
    double bandwidth = 1.0;
};

/// Beran estimator with Gaussian Nadaraya-Watson weights
/// w_i proportional to exp(-|z - x_i|^2 / (2 bandwidth^2)).
StepSurvivalFunction gaussian_beran_sf(const SurvivalDataset& data, const std::vector<double>& z,
                                       const GaussianBeranConfig& config);

/// Gaussian Nadaraya-Watson regression of scalar targets on feature columns.
double nw_regress(const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                  const std::vector<double>& z, double bandwidth);

enum class BaseKind : std::uint8_t { cox = 0, gaussian_beran = 1 };

struct BaseLearner {
    BaseKind kind = BaseKind::gaussian_beran;
    double ridge = 0.1;                // cox
    GaussianBeranConfig gaussian{};    // gaussian_beran

    static BaseLearner cox_learner(double ridge_coefficient);
    static BaseLearner gaussian_learner(double bandwidth);
};

/// fit(dataset) then sf(z): the base-learner contract shared by the
/// meta-learners.
struct FittedBase {
    BaseKind kind = BaseKind::gaussian_beran;
    CoxModel cox;
    SurvivalDataset refs;  // gaussian_beran keeps its reference data
    GaussianBeranConfig gaussian{};

    StepSurvivalFunction sf(const std::vector<double>& z) const;
    double expected_lifetime_at(const std::vector<double>& z) const;
};

FittedBase fit_base(const BaseLearner& base, const SurvivalDataset& data);

/// Fitted meta-learners: fit once, predict for many feature vectors.
struct TLearnerModel {
    FittedBase control_fit, treatment_fit;
    double cate(const std::vector<double>& z) const;
};
TLearnerModel fit_t_learner(const BaseLearner& base, const SurvivalDataset& controls,
                            const SurvivalDataset& treatments);

struct SLearnerModel {
    FittedBase pooled_fit;               // on (d+1)-dimensional augmented records
    double control_max_time = 0.0;       // integration bound of the control grid
    double treatment_max_time = 0.0;     // integration bound of the treatment grid
    double cate(const std::vector<double>& z) const;
};
SLearnerModel fit_s_learner(const BaseLearner& base, const SurvivalDataset& controls,
                            const SurvivalDataset& treatments);

struct XLearnerModel {
    Eigen::MatrixXd control_features;    // uncensored controls, columns
    Eigen::VectorXd control_effects;     // imputed g1(x_i) - f_i
    Eigen::MatrixXd treatment_features;  // uncensored treatments, columns
    Eigen::VectorXd treatment_effects;   // imputed h_i - g0(y_i)
    double alpha = 0.5;
    double tau_bandwidth = 1.0;
    double cate(const std::vector<double>& z) const;
};
/// Imputed treatment effects are formed only at uncensored records; the
/// second-stage regressions are Gaussian Nadaraya-Watson with tau_bandwidth.
/// Throws NoUncensoredError when a group has no uncensored record.
XLearnerModel fit_x_learner(const BaseLearner& base, const SurvivalDataset& controls,
                            const SurvivalDataset& treatments, double alpha,
                            double tau_bandwidth);

// One-shot convenience wrappers around the fitted models.
double t_learner_cate(const BaseLearner& base, const SurvivalDataset& controls,
                      const SurvivalDataset& treatments, const std::vector<double>& z);
double s_learner_cate(const BaseLearner& base, const SurvivalDataset& controls,
                      const SurvivalDataset& treatments, const std::vector<double>& z);
double x_learner_cate(const BaseLearner& base, const SurvivalDataset& controls,
                      const SurvivalDataset& treatments, const std::vector<double>& z,
                      double alpha, double tau_bandwidth);

/// Default X-learner blend weight: the ratio of treated records.
double treated_ratio(const SurvivalDataset& controls, const SurvivalDataset& treatments);

}  // namespace benk
