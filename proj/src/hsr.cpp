#include "dam/hsr.hpp"

#include "dam/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dam {

double hsr_weight(std::int64_t x, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("hsr_weight: sigma must be > 0");
    const double z = static_cast<double>(x) / sigma;
    return 1.0 / (1.0 + z * z);
}

double hsr_normalizer(std::int64_t x_begin, std::int64_t x_end, double sigma) {
    if (x_end < x_begin) throw std::invalid_argument("hsr_normalizer: empty support");
    double c = 0.0;
    for (std::int64_t x = x_begin; x <= x_end; ++x) c += hsr_weight(x, sigma);
    return c;
}

std::vector<std::size_t> weighted_sample_without_replacement(
    const std::vector<std::int64_t>& offsets, double sigma, int n_points, Rng& rng) {
    const std::size_t n = offsets.size();
    if (n_points < 0 || static_cast<std::size_t>(n_points) > n) {
        throw user_error("weighted sample: need " + std::to_string(n_points) +
                         " points but the support has only " + std::to_string(n));
    }
    if (static_cast<std::size_t>(n_points) == n) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }

    // Exponential-key reservoir scheme: assign each support element the key
    // u^(1/w) (equivalently log(u)/w, compared in log space) and keep the
    // n_points largest. One uniform per element, consumed in support order,
    // keeps the draw deterministic under a fixed generator state.
    std::vector<std::pair<double, std::size_t>> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
        double u = 0.0;
        do {
            u = rng.uniform();
        } while (u <= 0.0);
        keys[i] = {std::log(u) / hsr_weight(offsets[i], sigma), i};
    }
    auto larger = [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // ties (measure zero): lower index
    };
    std::nth_element(keys.begin(), keys.begin() + n_points, keys.end(), larger);

    std::vector<std::size_t> picked(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) picked[static_cast<std::size_t>(i)] = keys[static_cast<std::size_t>(i)].second;
    std::sort(picked.begin(), picked.end());
    return picked;
}

namespace {

HsrDraw draw_from_support(const TimeValueSeries& series,
                          const std::vector<std::size_t>& support_idx,
                          const HsrConfig& cfg, Rng& rng, const char* what) {
    if (cfg.sigma <= 0.0) throw std::invalid_argument("HsrConfig: sigma must be > 0");
    if (support_idx.size() < static_cast<std::size_t>(cfg.n_points)) {
        throw user_error(std::string(what) + ": need " + std::to_string(cfg.n_points) +
                         " valid points but only " + std::to_string(support_idx.size()) +
                         " are available");
    }

    std::vector<std::int64_t> offsets(support_idx.size());
    for (std::size_t i = 0; i < support_idx.size(); ++i) {
        offsets[i] = series.step_offset(support_idx[i]);
    }
    const std::vector<std::size_t> picked =
        weighted_sample_without_replacement(offsets, cfg.sigma, cfg.n_points, rng);

    HsrDraw d;
    d.offsets.reserve(picked.size());
    d.indices.reserve(picked.size());
    d.times.reserve(picked.size());
    d.values.reserve(picked.size());
    for (std::size_t p : picked) {
        const std::size_t i = support_idx[p];
        d.offsets.push_back(offsets[p]);
        d.indices.push_back(i);
        d.times.push_back(series.time(i));
        d.values.push_back(series.values[i]);
    }
    return d;
}

}  // namespace

HsrDraw sample_context(const TimeValueSeries& series, const HsrConfig& cfg, Rng& rng) {
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series.valid[i] && series.step_offset(i) < 0) support.push_back(i);
    }
    return draw_from_support(series, support, cfg, rng, "sample_context");
}

HsrDraw sample_targets(const TimeValueSeries& series, const HsrConfig& cfg, Rng& rng) {
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series.valid[i]) support.push_back(i);
    }
    return draw_from_support(series, support, cfg, rng, "sample_targets");
}

std::vector<std::size_t> sample_with_replacement_diagnostic(
    const std::vector<std::int64_t>& offsets, double sigma, int n_draws, Rng& rng) {
    std::vector<double> cdf(offsets.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        acc += hsr_weight(offsets[i], sigma);
        cdf[i] = acc;
    }
    std::vector<std::size_t> out(static_cast<std::size_t>(n_draws));
    for (auto& o : out) {
        const double u = rng.uniform() * acc;
        o = static_cast<std::size_t>(
            std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        if (o >= offsets.size()) o = offsets.size() - 1;
    }
    return out;
}

}  // namespace dam
