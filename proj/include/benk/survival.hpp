#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace benk {

enum class Group : std::uint8_t { control = 0, treatment = 1 };

/// One right-censored time-to-event observation.
struct SurvivalRecord {
    std::vector<double> features;
    double time = 0.0;
    bool event = true;  // true = event observed, false = right-censored
    Group group = Group::control;
};

struct SurvivalDataset {
    std::vector<SurvivalRecord> records;
    int d = 0;  // feature dimension, identical across records

    SurvivalDataset() = default;
    explicit SurvivalDataset(std::vector<SurvivalRecord> recs);

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    const SurvivalRecord& operator[](std::size_t i) const { return records[i]; }

    // Throws std::invalid_argument on violation: empty set, nonpositive or
    // non-finite times, inconsistent feature dimension.
    void validate() const;
};

/// Nonincreasing step function on [0, inf) with implicit value 1 on [0, times[0]).
/// value_at(t) = values[j] for t in [times[j], times[j+1]), values.back() beyond.
struct StepSurvivalFunction {
    std::vector<double> times;   // strictly increasing, positive
    std::vector<double> values;  // values[j] in [0,1], nonincreasing

    double value_at(double t) const;
    double last_time() const { return times.empty() ? 0.0 : times.back(); }
    void validate() const;
};

/// Normalized nonnegative weights aligned with a reference record list.
struct WeightVector {
    std::vector<double> weights;

    static WeightVector uniform(std::size_t n);
    // Throws std::invalid_argument unless all weights >= 0 and sum within
    // 1e-9 of one.
    void validate() const;
};

struct NoAdmissiblePairsError : std::runtime_error {
    NoAdmissiblePairsError() : std::runtime_error("concordance_index: no admissible pair") {}
};

/// Risk ordering for the product-limit estimators: ascending time, events
/// before censorings at ties, stable by original index.
std::vector<int> sort_risk_order(const SurvivalDataset& data);

/// Per-record state of the Beran product, computed over records already in
/// risk order. Retained so gradients can be chained through the product.
struct BeranFactors {
    StepSurvivalFunction sf;
    std::vector<double> factor;          // multiplicative factor, 1 for censored records
    std::vector<double> denom;           // 1 - (cumulative weight before record)
    std::vector<std::uint8_t> clamped;   // denominator guard or ratio clamp hit
    std::vector<int> step_of_record;     // index into sf.times, -1 for censored records
};

/// Beran product over (times, events, weights) given in risk order.
/// The step grid is the distinct event times; if the largest observed time is
/// censored it is appended as a final boundary so integration covers the full
/// observed range.
BeranFactors beran_product_ordered(std::span<const double> times,
                                   std::span<const std::uint8_t> events,
                                   std::span<const double> weights);

/// Product-limit estimate with uniform weights, computed by event counting.
StepSurvivalFunction kaplan_meier(const SurvivalDataset& data);

/// Conditional product-limit estimate; weights aligned with data.records.
StepSurvivalFunction beran_sf(const SurvivalDataset& refs, const WeightVector& weights);

/// Exact integral of the step function over [0, upper].
double integrate_survival(const StepSurvivalFunction& sf, double upper);

/// Integral of the survival function up to its last step time.
double expected_lifetime(const StepSurvivalFunction& sf);

/// Difference in expected lifetimes, treatment minus control.
double cate_from_sfs(const StepSurvivalFunction& sf_control,
                     const StepSurvivalFunction& sf_treatment);

/// Harrell's concordance index. Predictions are lifetime-oriented: larger
/// prediction = expected to survive longer. A pair is admissible when not
/// both censored and the strictly earliest observation (events precede
/// censorings at equal times) is uncensored; prediction ties count 0.5.
/// Throws NoAdmissiblePairsError when no pair is admissible.
double concordance_index(const std::vector<double>& predicted_lifetime,
                         const SurvivalDataset& data);

}  // namespace benk
