#include "dam/series.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dam {

void TimeValueSeries::validate() const {
    if (values.size() != ticks.size() || valid.size() != ticks.size()) {
        throw std::invalid_argument(
            "series '" + name + "': ticks/values/valid lengths disagree (" +
            std::to_string(ticks.size()) + "/" + std::to_string(values.size()) +
            "/" + std::to_string(valid.size()) + ")");
    }
    if (resolution <= 0.0) {
        throw std::invalid_argument("series '" + name + "': resolution must be > 0");
    }
    for (std::size_t i = 1; i < ticks.size(); ++i) {
        if (ticks[i] <= ticks[i - 1]) {
            throw std::invalid_argument(
                "series '" + name + "': ticks not strictly increasing at row " +
                std::to_string(i));
        }
    }
}

TimeValueSeries rebase_to_now(const TimeValueSeries& series, std::size_t now_index) {
    if (now_index >= series.size()) {
        throw std::out_of_range(
            "rebase_to_now: index " + std::to_string(now_index) +
            " out of range for series of length " + std::to_string(series.size()));
    }
    TimeValueSeries out = series;
    out.now_tick = series.ticks[now_index];
    return out;
}

void DatasetSplit::validate(std::size_t n) const {
    if (train.begin != 0 || train.end != valid.begin || valid.end != test.begin ||
        test.end != n) {
        throw std::invalid_argument("dataset split ranges must tile [0, n) in order");
    }
}

DatasetSplit split_by_fractions(std::size_t n, double train_frac, double valid_frac) {
    if (train_frac < 0.0 || valid_frac < 0.0 || train_frac + valid_frac > 1.0) {
        throw std::invalid_argument("split fractions must be nonnegative and sum <= 1");
    }
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
    const auto n_valid = static_cast<std::size_t>(std::floor(valid_frac * static_cast<double>(n)));
    DatasetSplit s;
    s.train = {0, n_train};
    s.valid = {n_train, n_train + n_valid};
    s.test = {n_train + n_valid, n};
    return s;
}

namespace {

struct ProfileStats {
    double profile_std = 0.0;
    double residual_std = 0.0;
    bool ok = false;
};

// Population std over the valid entries; 0 for fewer than 2 points.
double overall_std(const TimeValueSeries& s) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.valid[i]) continue;
        sum += s.values[i];
        ++n;
    }
    if (n < 2) return 0.0;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.valid[i]) continue;
        const double d = s.values[i] - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(n));
}

// Bucket samples by tick phase modulo `m` (one bucket per step of the
// profile period) and compute the two utility components over non-empty
// buckets. Requires at least two full periods of span to be meaningful.
ProfileStats profile_stats(const TimeValueSeries& s, std::int64_t m) {
    ProfileStats st;
    if (m < 2 || s.size() < 2) return st;
    const std::int64_t span = s.ticks.back() - s.ticks.front();
    if (span + 1 < 2 * m) return st;  // fewer than 2 full periods

    std::vector<double> sums(static_cast<std::size_t>(m), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(m), 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.valid[i]) continue;
        const std::int64_t phase = ((s.ticks[i] % m) + m) % m;
        sums[static_cast<std::size_t>(phase)] += s.values[i];
        counts[static_cast<std::size_t>(phase)] += 1;
    }

    std::vector<double> profile;
    profile.reserve(static_cast<std::size_t>(m));
    for (std::size_t p = 0; p < static_cast<std::size_t>(m); ++p) {
        if (counts[p] > 0) profile.push_back(sums[p] / static_cast<double>(counts[p]));
    }
    if (profile.size() < 2) return st;

    double pm = 0.0;
    for (double v : profile) pm += v;
    pm /= static_cast<double>(profile.size());
    double pss = 0.0;
    for (double v : profile) pss += (v - pm) * (v - pm);
    st.profile_std = std::sqrt(pss / static_cast<double>(profile.size()));

    // Mean (over non-empty phases) of the per-phase std around the profile.
    std::vector<double> sq(static_cast<std::size_t>(m), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.valid[i]) continue;
        const auto phase = static_cast<std::size_t>(((s.ticks[i] % m) + m) % m);
        const double d = s.values[i] - sums[phase] / static_cast<double>(counts[phase]);
        sq[phase] += d * d;
    }
    double rsum = 0.0;
    std::size_t rcount = 0;
    for (std::size_t p = 0; p < static_cast<std::size_t>(m); ++p) {
        if (counts[p] == 0) continue;
        rsum += std::sqrt(sq[p] / static_cast<double>(counts[p]));
        ++rcount;
    }
    st.residual_std = rcount > 0 ? rsum / static_cast<double>(rcount) : 0.0;
    st.ok = true;
    return st;
}

}  // namespace

UtilityComponents compute_utility_components(const TimeValueSeries& series) {
    UtilityComponents out;

    // Steps per day; usable only when the resolution is sub-daily.
    const auto steps_per = [&](double period_days) {
        return static_cast<std::int64_t>(std::llround(period_days / series.resolution));
    };

    ProfileStats st = profile_stats(series, steps_per(1.0));
    if (st.ok) {
        out.basis_used = "day";
    } else {
        st = profile_stats(series, steps_per(7.0));
        if (st.ok) out.basis_used = "week";
    }
    if (st.ok) {
        out.profile_std = st.profile_std;
        out.residual_std = st.residual_std;
        out.utility = st.profile_std * st.residual_std;
        return out;
    }

    out.basis_used = "overall";
    out.utility = overall_std(series);
    return out;
}

}  // namespace dam
