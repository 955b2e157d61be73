#include "benk/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "benk/kernel_net.hpp"

namespace benk {

namespace {

struct CoxWork {
    // records in descending-time traversal order, grouped by distinct time
    std::vector<int> order;            // ascending risk order
    Eigen::MatrixXd x;                 // d x n, centered, column i = record order[i]
    std::vector<double> times;         // ascending
    std::vector<std::uint8_t> events;  // aligned with order
};

CoxWork prepare_cox(const SurvivalDataset& data, Eigen::VectorXd& means) {
    CoxWork w;
    w.order = sort_risk_order(data);
    const int n = static_cast<int>(w.order.size());
    const int d = data.d;
    means = Eigen::VectorXd::Zero(d);
    for (const auto& r : data.records)
        means += Eigen::Map<const Eigen::VectorXd>(r.features.data(), d);
    means /= static_cast<double>(n);

    w.x.resize(d, n);
    w.times.resize(static_cast<std::size_t>(n));
    w.events.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& r = data.records[static_cast<std::size_t>(w.order[static_cast<std::size_t>(i)])];
        w.x.col(i) = Eigen::Map<const Eigen::VectorXd>(r.features.data(), d) - means;
        w.times[static_cast<std::size_t>(i)] = r.time;
        w.events[static_cast<std::size_t>(i)] = r.event ? 1 : 0;
    }
    return w;
}

// Breslow log partial likelihood, gradient and Hessian at beta, traversing
// distinct times from the largest down so the risk set accumulates.
double cox_loglik(const CoxWork& w, const Eigen::VectorXd& beta, Eigen::VectorXd* grad,
                  Eigen::MatrixXd* hess) {
    const int n = static_cast<int>(w.times.size());
    const int d = static_cast<int>(w.x.rows());
    Eigen::VectorXd eta = w.x.transpose() * beta;
    const double shift = eta.maxCoeff();

    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
    double loglik = 0.0;
    if (grad) grad->setZero();
    if (hess) hess->setZero();

    int i = n - 1;
    while (i >= 0) {
        const double t = w.times[static_cast<std::size_t>(i)];
        // absorb every record tied at t into the risk set
        int j = i;
        while (j >= 0 && w.times[static_cast<std::size_t>(j)] == t) {
            const double r = std::exp(eta(j) - shift);
            s0 += r;
            s1 += r * w.x.col(j);
            if (hess) s2 += r * (w.x.col(j) * w.x.col(j).transpose());
            --j;
        }
        // then process the events at t against that risk set
        for (int k = j + 1; k <= i; ++k) {
            if (!w.events[static_cast<std::size_t>(k)]) continue;
            loglik += eta(k) - (std::log(s0) + shift);
            if (grad) *grad += w.x.col(k) - s1 / s0;
            if (hess) {
                Eigen::VectorXd mean = s1 / s0;
                *hess -= s2 / s0 - mean * mean.transpose();
            }
        }
        i = j;
    }
    return loglik;
}

constexpr int kCoxMaxIter = 100;
constexpr double kCoxTol = 1e-8;

}  // namespace

CoxModel fit_cox(const SurvivalDataset& data, double ridge) {
    data.validate();
    if (ridge < 0.0) throw std::invalid_argument("fit_cox: negative ridge coefficient");
    bool any_event = false;
    for (const auto& r : data.records) any_event = any_event || r.event;
    if (!any_event) throw DegenerateDataError("fit_cox: no uncensored record");

    CoxModel model;
    model.ridge = ridge;
    CoxWork w = prepare_cox(data, model.feature_means);
    const int d = data.d;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd grad(d);
    Eigen::MatrixXd hess(d, d);

    double penalized = cox_loglik(w, beta, &grad, &hess) - 0.5 * ridge * beta.squaredNorm();
    Eigen::VectorXd pen_grad = grad - ridge * beta;
    model.converged = false;
    model.loglik_trace.push_back(penalized);
    for (int iter = 0; iter < kCoxMaxIter; ++iter) {
        model.iterations = iter;
        if (pen_grad.cwiseAbs().maxCoeff() < kCoxTol) {
            model.converged = true;
            break;
        }
        Eigen::MatrixXd pen_hess = hess - ridge * Eigen::MatrixXd::Identity(d, d);
        pen_hess.diagonal().array() -= 1e-10;  // keeps the solve well posed with ridge 0
        Eigen::VectorXd step = pen_hess.ldlt().solve(-pen_grad);

        // step halving: the penalized likelihood must not decrease
        double scale = 1.0;
        for (int half = 0; half < 40; ++half) {
            Eigen::VectorXd candidate = beta + scale * step;
            const double value =
                cox_loglik(w, candidate, nullptr, nullptr) - 0.5 * ridge * candidate.squaredNorm();
            if (value >= penalized - 1e-14) {
                beta = candidate;
                penalized = value;
                break;
            }
            scale *= 0.5;
        }
        penalized = cox_loglik(w, beta, &grad, &hess) - 0.5 * ridge * beta.squaredNorm();
        pen_grad = grad - ridge * beta;
        model.loglik_trace.push_back(penalized);
    }
    if (pen_grad.cwiseAbs().maxCoeff() < kCoxTol) model.converged = true;
    model.beta = beta;

    // Breslow baseline cumulative hazard on the distinct event times.
    Eigen::VectorXd eta = w.x.transpose() * beta;
    const double shift = eta.maxCoeff();
    const int n = static_cast<int>(w.times.size());
    std::vector<std::pair<double, double>> jumps;  // (time, d_t / S0)
    {
        double s0 = 0.0;
        int i = n - 1;
        std::vector<std::pair<double, double>> reversed;
        while (i >= 0) {
            const double t = w.times[static_cast<std::size_t>(i)];
            int j = i;
            int deaths = 0;
            while (j >= 0 && w.times[static_cast<std::size_t>(j)] == t) {
                s0 += std::exp(eta(j) - shift);
                if (w.events[static_cast<std::size_t>(j)]) ++deaths;
                --j;
            }
            if (deaths > 0)
                reversed.emplace_back(t, static_cast<double>(deaths) / (s0 * std::exp(shift)));
            i = j;
        }
        jumps.assign(reversed.rbegin(), reversed.rend());
    }
    double cum = 0.0;
    for (auto [t, jump] : jumps) {
        cum += jump;
        model.baseline_times.push_back(t);
        model.baseline_cumhaz.push_back(cum);
    }
    const double t_max = w.times.back();
    if (model.baseline_times.empty() || model.baseline_times.back() < t_max) {
        model.baseline_times.push_back(t_max);
        model.baseline_cumhaz.push_back(cum);
    }
    return model;
}

StepSurvivalFunction cox_sf(const CoxModel& model, const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != model.beta.size())
        throw std::invalid_argument("cox_sf: dimension mismatch");
    const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<int>(z.size()));
    const double risk = std::exp(model.beta.dot(zv - model.feature_means));
    StepSurvivalFunction sf;
    sf.times = model.baseline_times;
    sf.values.reserve(model.baseline_cumhaz.size());
    for (double ch : model.baseline_cumhaz) sf.values.push_back(std::exp(-ch * risk));
    return sf;
}

StepSurvivalFunction gaussian_beran_sf(const SurvivalDataset& data, const std::vector<double>& z,
                                       const GaussianBeranConfig& config) {
    if (!(config.bandwidth > 0.0)) throw std::invalid_argument("gaussian_beran_sf: bandwidth must be > 0");
    if (static_cast<int>(z.size()) != data.d)
        throw std::invalid_argument("gaussian_beran_sf: dimension mismatch");
    std::vector<double> scores;
    scores.reserve(data.size());
    const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<int>(z.size()));
    const double denom = 2.0 * config.bandwidth * config.bandwidth;
    for (const auto& r : data.records) {
        const Eigen::Map<const Eigen::VectorXd> xv(r.features.data(), data.d);
        scores.push_back(-(zv - xv).squaredNorm() / denom);
    }
    return beran_sf(data, softmax_weights(scores));
}

double nw_regress(const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                  const std::vector<double>& z, double bandwidth) {
    if (xs.cols() != ys.size() || xs.cols() == 0)
        throw std::invalid_argument("nw_regress: empty or mismatched data");
    if (static_cast<int>(z.size()) != xs.rows())
        throw std::invalid_argument("nw_regress: dimension mismatch");
    const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<int>(z.size()));
    Eigen::VectorXd scores(xs.cols());
    const double denom = 2.0 * bandwidth * bandwidth;
    for (int i = 0; i < xs.cols(); ++i) scores(i) = -(zv - xs.col(i)).squaredNorm() / denom;
    return softmax_weights(scores).dot(ys);
}

BaseLearner BaseLearner::cox_learner(double ridge_coefficient) {
    BaseLearner b;
    b.kind = BaseKind::cox;
    b.ridge = ridge_coefficient;
    return b;
}

BaseLearner BaseLearner::gaussian_learner(double bandwidth) {
    BaseLearner b;
    b.kind = BaseKind::gaussian_beran;
    b.gaussian.bandwidth = bandwidth;
    return b;
}

StepSurvivalFunction FittedBase::sf(const std::vector<double>& z) const {
    if (kind == BaseKind::cox) return cox_sf(cox, z);
    return gaussian_beran_sf(refs, z, gaussian);
}

double FittedBase::expected_lifetime_at(const std::vector<double>& z) const {
    return expected_lifetime(sf(z));
}

FittedBase fit_base(const BaseLearner& base, const SurvivalDataset& data) {
    FittedBase fit;
    fit.kind = base.kind;
    if (base.kind == BaseKind::cox) {
        fit.cox = fit_cox(data, base.ridge);
    } else {
        fit.refs = data;
        fit.gaussian = base.gaussian;
    }
    return fit;
}

double TLearnerModel::cate(const std::vector<double>& z) const {
    return cate_from_sfs(control_fit.sf(z), treatment_fit.sf(z));
}

TLearnerModel fit_t_learner(const BaseLearner& base, const SurvivalDataset& controls,
                            const SurvivalDataset& treatments) {
    return TLearnerModel{fit_base(base, controls), fit_base(base, treatments)};
}

namespace {

double max_time(const SurvivalDataset& data) {
    double t = 0.0;
    for (const auto& r : data.records) t = std::max(t, r.time);
    return t;
}

SurvivalDataset pooled_with_indicator(const SurvivalDataset& controls,
                                      const SurvivalDataset& treatments) {
    if (controls.d != treatments.d)
        throw std::invalid_argument("s_learner: control/treatment dimension mismatch");
    std::vector<SurvivalRecord> recs;
    recs.reserve(controls.size() + treatments.size());
    for (const auto& r : controls.records) {
        SurvivalRecord q = r;
        q.features.push_back(0.0);
        q.group = Group::control;
        recs.push_back(std::move(q));
    }
    for (const auto& r : treatments.records) {
        SurvivalRecord q = r;
        q.features.push_back(1.0);
        q.group = Group::treatment;
        recs.push_back(std::move(q));
    }
    return SurvivalDataset(std::move(recs));
}

std::vector<double> augmented(const std::vector<double>& z, double indicator) {
    std::vector<double> out = z;
    out.push_back(indicator);
    return out;
}

}  // namespace

double SLearnerModel::cate(const std::vector<double>& z) const {
    const double treated = integrate_survival(pooled_fit.sf(augmented(z, 1.0)), treatment_max_time);
    const double untreated = integrate_survival(pooled_fit.sf(augmented(z, 0.0)), control_max_time);
    return treated - untreated;
}

SLearnerModel fit_s_learner(const BaseLearner& base, const SurvivalDataset& controls,
                            const SurvivalDataset& treatments) {
    SLearnerModel model;
    model.pooled_fit = fit_base(base, pooled_with_indicator(controls, treatments));
    model.control_max_time = max_time(controls);
    model.treatment_max_time = max_time(treatments);
    return model;
}

double XLearnerModel::cate(const std::vector<double>& z) const {
    const double tau0 = nw_regress(control_features, control_effects, z, tau_bandwidth);
    const double tau1 = nw_regress(treatment_features, treatment_effects, z, tau_bandwidth);
    return alpha * tau0 + (1.0 - alpha) * tau1;
}

XLearnerModel fit_x_learner(const BaseLearner& base, const SurvivalDataset& controls,
                            const SurvivalDataset& treatments, double alpha,
                            double tau_bandwidth) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("x_learner: alpha outside [0,1]");
    if (!(tau_bandwidth > 0.0)) throw std::invalid_argument("x_learner: tau_bandwidth must be > 0");
    FittedBase g0 = fit_base(base, controls);
    FittedBase g1 = fit_base(base, treatments);

    std::vector<const SurvivalRecord*> uc, ut;
    for (const auto& r : controls.records)
        if (r.event) uc.push_back(&r);
    for (const auto& r : treatments.records)
        if (r.event) ut.push_back(&r);
    if (uc.empty()) throw NoUncensoredError("x_learner: control group has no uncensored record");
    if (ut.empty()) throw NoUncensoredError("x_learner: treatment group has no uncensored record");

    XLearnerModel model;
    model.alpha = alpha;
    model.tau_bandwidth = tau_bandwidth;
    model.control_features.resize(controls.d, static_cast<int>(uc.size()));
    model.control_effects.resize(static_cast<int>(uc.size()));
    for (std::size_t i = 0; i < uc.size(); ++i) {
        model.control_features.col(static_cast<int>(i)) =
            Eigen::Map<const Eigen::VectorXd>(uc[i]->features.data(), controls.d);
        model.control_effects(static_cast<int>(i)) =
            g1.expected_lifetime_at(uc[i]->features) - uc[i]->time;
    }
    model.treatment_features.resize(treatments.d, static_cast<int>(ut.size()));
    model.treatment_effects.resize(static_cast<int>(ut.size()));
    for (std::size_t i = 0; i < ut.size(); ++i) {
        model.treatment_features.col(static_cast<int>(i)) =
            Eigen::Map<const Eigen::VectorXd>(ut[i]->features.data(), treatments.d);
        model.treatment_effects(static_cast<int>(i)) =
            ut[i]->time - g0.expected_lifetime_at(ut[i]->features);
    }
    return model;
}

double t_learner_cate(const BaseLearner& base, const SurvivalDataset& controls,
                      const SurvivalDataset& treatments, const std::vector<double>& z) {
    return fit_t_learner(base, controls, treatments).cate(z);
}

double s_learner_cate(const BaseLearner& base, const SurvivalDataset& controls,
                      const SurvivalDataset& treatments, const std::vector<double>& z) {
    return fit_s_learner(base, controls, treatments).cate(z);
}

double x_learner_cate(const BaseLearner& base, const SurvivalDataset& controls,
                      const SurvivalDataset& treatments, const std::vector<double>& z,
                      double alpha, double tau_bandwidth) {
    return fit_x_learner(base, controls, treatments, alpha, tau_bandwidth).cate(z);
}

double treated_ratio(const SurvivalDataset& controls, const SurvivalDataset& treatments) {
    return static_cast<double>(treatments.size()) /
           static_cast<double>(controls.size() + treatments.size());
}

}  // namespace benk
