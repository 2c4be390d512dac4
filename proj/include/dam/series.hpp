#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dam {

// Conversion from source ticks to the model's day-based time unit.
// A tick is one source sample step (e.g. one hour for ETTh). `scaling`
// stretches time for slow datasets so their structure falls inside the
// fixed frequency range; the default of 1 leaves one day == 1.0.
struct TimeUnitConfig {
    double base_seconds = 3600.0;  // seconds per source tick
    double scaling = 1.0;          // extra multiplier on the day offset

    // Days per tick after scaling.
    double days_per_tick() const { return base_seconds / 86400.0 * scaling; }
};

// One univariate channel: irregular access into a regular grid.
//
// Integer ticks are the canonical time representation; `time(i)` derives
// (tick[i] - now_tick) * resolution on demand. Rebasing therefore shifts an
// integer origin and preserves pairwise tick differences exactly, which a
// mutated vector of doubles could not guarantee for resolutions like 1/24.
struct TimeValueSeries {
    std::string name;
    std::vector<std::int64_t> ticks;  // strictly increasing
    std::vector<double> values;       // dataset units
    std::vector<bool> valid;          // false == missing (never filled)
    double resolution = 1.0;          // days between consecutive ticks (R)
    std::int64_t now_tick = 0;        // origin: time(i) == 0 where tick == now_tick

    std::size_t size() const { return ticks.size(); }

    // Time of sample i in days relative to "now".
    double time(std::size_t i) const {
        return static_cast<double>(ticks[i] - now_tick) * resolution;
    }

    // Signed step offset x = t/R of sample i relative to "now".
    std::int64_t step_offset(std::size_t i) const { return ticks[i] - now_tick; }

    // Pairwise time difference computed in tick space (single rounding).
    double time_between(std::size_t i, std::size_t j) const {
        return static_cast<double>(ticks[i] - ticks[j]) * resolution;
    }

    std::vector<double> times() const {
        std::vector<double> out(ticks.size());
        for (std::size_t i = 0; i < ticks.size(); ++i) out[i] = time(i);
        return out;
    }

    // Throws if lengths disagree, ticks are not strictly increasing, or
    // resolution is not positive.
    void validate() const;
};

// Returns a copy whose time origin sits at sample `now_index`.
TimeValueSeries rebase_to_now(const TimeValueSeries& series, std::size_t now_index);

// Contiguous, ordered index ranges [begin, end) into a series.
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
};

struct DatasetSplit {
    IndexRange train;
    IndexRange valid;
    IndexRange test;

    void validate(std::size_t n) const;
};

// Split a series of length n by fractions (train, valid; test gets the rest).
DatasetSplit split_by_fractions(std::size_t n, double train_frac, double valid_frac);

// Sampling-utility proxy for training-corpus draws. The two components:
//   (a) std of the mean daily (or weekly) profile  -- periodic structure
//   (b) mean per-phase std around that profile     -- intrinsic variation
// They are combined by product, which zeroes both degenerate extremes
// (pure noise: a~0; dead-flat or noiseless periodic signal: b~0).
struct UtilityComponents {
    double profile_std = 0.0;   // (a)
    double residual_std = 0.0;  // (b)
    double utility = 0.0;       // product, or overall std on fallback
    // Which rule produced the value: "day", "week", or "overall".
    std::string basis_used = "overall";
};

UtilityComponents compute_utility_components(const TimeValueSeries& series);

inline double compute_utility(const TimeValueSeries& series) {
    return compute_utility_components(series).utility;
}

}  // namespace dam
