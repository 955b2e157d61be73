#include "benk/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace benk {

namespace {
constexpr double kDenomGuard = 1e-12;
constexpr double kWeightSumTol = 1e-9;
}  // namespace

SurvivalDataset::SurvivalDataset(std::vector<SurvivalRecord> recs) : records(std::move(recs)) {
    if (!records.empty()) d = static_cast<int>(records.front().features.size());
    validate();
}

void SurvivalDataset::validate() const {
    if (records.empty()) throw std::invalid_argument("SurvivalDataset: empty");
    for (const auto& r : records) {
        if (!(r.time > 0.0) || !std::isfinite(r.time))
            throw std::invalid_argument("SurvivalDataset: times must be positive and finite");
        if (static_cast<int>(r.features.size()) != d)
            throw std::invalid_argument("SurvivalDataset: inconsistent feature dimension");
        for (double v : r.features)
            if (!std::isfinite(v)) throw std::invalid_argument("SurvivalDataset: non-finite feature");
    }
    if (d < 1) throw std::invalid_argument("SurvivalDataset: d must be >= 1");
}

double StepSurvivalFunction::value_at(double t) const {
    // First step time strictly greater than t; the value left of times[0] is 1.
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

void StepSurvivalFunction::validate() const {
    if (times.size() != values.size())
        throw std::invalid_argument("StepSurvivalFunction: times/values size mismatch");
    double prev_t = 0.0;
    double prev_v = 1.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (!(times[j] > prev_t))
            throw std::invalid_argument("StepSurvivalFunction: times must be strictly increasing and positive");
        if (values[j] < -1e-15 || values[j] > 1.0 + 1e-15 || values[j] > prev_v + 1e-15)
            throw std::invalid_argument("StepSurvivalFunction: values must be nonincreasing within [0,1]");
        prev_t = times[j];
        prev_v = values[j];
    }
}

WeightVector WeightVector::uniform(std::size_t n) {
    WeightVector w;
    w.weights.assign(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
    return w;
}

void WeightVector::validate() const {
    if (weights.empty()) throw std::invalid_argument("WeightVector: empty");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw std::invalid_argument("WeightVector: weights must be nonnegative and finite");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > kWeightSumTol)
        throw std::invalid_argument("WeightVector: weights must sum to 1");
}

std::vector<int> sort_risk_order(const SurvivalDataset& data) {
    data.validate();
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& ra = data.records[static_cast<std::size_t>(a)];
        const auto& rb = data.records[static_cast<std::size_t>(b)];
        if (ra.time != rb.time) return ra.time < rb.time;
        return ra.event && !rb.event;
    });
    return order;
}

BeranFactors beran_product_ordered(std::span<const double> times,
                                   std::span<const std::uint8_t> events,
                                   std::span<const double> weights) {
    const std::size_t m = times.size();
    if (events.size() != m || weights.size() != m)
        throw std::invalid_argument("beran_product_ordered: length mismatch");
    if (m == 0) throw std::invalid_argument("beran_product_ordered: empty reference set");

    BeranFactors out;
    out.factor.assign(m, 1.0);
    out.denom.assign(m, 1.0);
    out.clamped.assign(m, 0);
    out.step_of_record.assign(m, -1);

    double surv = 1.0;
    double cum_weight = 0.0;
    std::size_t k = 0;
    while (k < m) {
        const double t = times[k];
        bool any_event = false;
        // All records tied at time t; events come first in risk order.
        while (k < m && times[k] == t) {
            out.denom[k] = 1.0 - cum_weight;
            if (events[k]) {
                any_event = true;
                if (out.denom[k] < kDenomGuard) {
                    // Early weights absorbed all mass: no factor, S stays put.
                    out.factor[k] = 1.0;
                    out.clamped[k] = 1;
                } else {
                    double ratio = weights[k] / out.denom[k];
                    if (ratio > 1.0) {
                        ratio = 1.0;
                        out.clamped[k] = 1;
                    }
                    out.factor[k] = 1.0 - ratio;
                    surv *= out.factor[k];
                }
                out.step_of_record[k] = static_cast<int>(out.sf.times.size());
            }
            cum_weight += weights[k];
            ++k;
        }
        if (any_event) {
            out.sf.times.push_back(t);
            out.sf.values.push_back(std::max(surv, 0.0));
        }
    }
    // Jumps happen only at event times; a censored maximum still bounds the
    // observed range, so record it as a final (jumpless) boundary.
    const double t_max = times[m - 1];
    if (out.sf.times.empty() || out.sf.times.back() < t_max) {
        out.sf.times.push_back(t_max);
        out.sf.values.push_back(std::max(surv, 0.0));
    }
    return out;
}

StepSurvivalFunction kaplan_meier(const SurvivalDataset& data) {
    const auto order = sort_risk_order(data);
    const std::size_t n = order.size();

    StepSurvivalFunction sf;
    double surv = 1.0;
    std::size_t at_risk = n;
    std::size_t k = 0;
    while (k < n) {
        const double t = data.records[static_cast<std::size_t>(order[k])].time;
        std::size_t deaths = 0, removed = 0;
        while (k < n && data.records[static_cast<std::size_t>(order[k])].time == t) {
            if (data.records[static_cast<std::size_t>(order[k])].event) ++deaths;
            ++removed;
            ++k;
        }
        if (deaths > 0) {
            surv *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
            sf.times.push_back(t);
            sf.values.push_back(std::max(surv, 0.0));
        }
        at_risk -= removed;
    }
    const double t_max = data.records[static_cast<std::size_t>(order[n - 1])].time;
    if (sf.times.empty() || sf.times.back() < t_max) {
        sf.times.push_back(t_max);
        sf.values.push_back(std::max(surv, 0.0));
    }
    return sf;
}

StepSurvivalFunction beran_sf(const SurvivalDataset& refs, const WeightVector& weights) {
    if (weights.weights.size() != refs.size())
        throw std::invalid_argument("beran_sf: weights not aligned with reference records");
    weights.validate();

    const auto order = sort_risk_order(refs);
    const std::size_t m = order.size();
    std::vector<double> t(m), w(m);
    std::vector<std::uint8_t> e(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto& r = refs.records[static_cast<std::size_t>(order[k])];
        t[k] = r.time;
        e[k] = r.event ? 1 : 0;
        w[k] = weights.weights[static_cast<std::size_t>(order[k])];
    }
    return beran_product_ordered(t, e, w).sf;
}

double integrate_survival(const StepSurvivalFunction& sf, double upper) {
    if (!(upper >= 0.0)) throw std::invalid_argument("integrate_survival: negative upper limit");
    double area = 0.0;
    double prev_t = 0.0;
    double prev_v = 1.0;
    for (std::size_t j = 0; j < sf.times.size() && prev_t < upper; ++j) {
        const double seg_end = std::min(sf.times[j], upper);
        if (seg_end > prev_t) area += (seg_end - prev_t) * prev_v;
        prev_t = sf.times[j];
        prev_v = sf.values[j];
    }
    if (upper > prev_t) area += (upper - prev_t) * prev_v;
    return area;
}

double expected_lifetime(const StepSurvivalFunction& sf) {
    double area = 0.0;
    double prev_t = 0.0;
    double prev_v = 1.0;
    for (std::size_t j = 0; j < sf.times.size(); ++j) {
        area += (sf.times[j] - prev_t) * prev_v;
        prev_t = sf.times[j];
        prev_v = sf.values[j];
    }
    return area;
}

double cate_from_sfs(const StepSurvivalFunction& sf_control,
                     const StepSurvivalFunction& sf_treatment) {
    return expected_lifetime(sf_treatment) - expected_lifetime(sf_control);
}

double concordance_index(const std::vector<double>& predicted_lifetime,
                         const SurvivalDataset& data) {
    if (predicted_lifetime.size() != data.size())
        throw std::invalid_argument("concordance_index: predictions not aligned with dataset");
    const std::size_t n = data.size();
    double concordant = 0.0;
    std::size_t admissible = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto& a = data.records[i];
            const auto& b = data.records[j];
            if (!a.event && !b.event) continue;
            // Identify the record that fails first; at equal times an event
            // precedes a censoring, and two tied events give no ordering.
            const SurvivalRecord* early = nullptr;
            const SurvivalRecord* late = nullptr;
            double pred_early = 0.0, pred_late = 0.0;
            if (a.time < b.time || (a.time == b.time && a.event && !b.event)) {
                early = &a;
                late = &b;
                pred_early = predicted_lifetime[i];
                pred_late = predicted_lifetime[j];
            } else if (b.time < a.time || (a.time == b.time && b.event && !a.event)) {
                early = &b;
                late = &a;
                pred_early = predicted_lifetime[j];
                pred_late = predicted_lifetime[i];
            } else {
                continue;  // tied event times
            }
            if (!early->event) continue;  // earliest observation censored
            (void)late;
            ++admissible;
            if (pred_early < pred_late)
                concordant += 1.0;
            else if (pred_early == pred_late)
                concordant += 0.5;
        }
    }
    if (admissible == 0) throw NoAdmissiblePairsError();
    return concordant / static_cast<double>(admissible);
}

}  // namespace benk
