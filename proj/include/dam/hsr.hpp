#pragma once

#include "dam/rng.hpp"
#include "dam/series.hpp"

#include <cstdint>
#include <vector>

namespace dam {

// History sampling regime: a long-tail distribution over signed step
// offsets x = t/R, sampled without replacement.
//
//   p(x) = (1/c) * 1 / (1 + (x/sigma)^2),   c = sum over the support
//
// Larger sigma flattens the tail so distant history is drawn more often;
// sigma -> infinity approaches uniform sampling over the support.
struct HsrConfig {
    double sigma = 720.0;
    int n_points = 540;
};

// A realized draw: step offsets plus the (time, value) pairs built from
// the series at those offsets. Offsets are reported sorted ascending
// (oldest first), which is also the model's canonical token order.
struct HsrDraw {
    std::vector<std::int64_t> offsets;  // x values, relative to now_tick
    std::vector<std::size_t> indices;   // positions in the source series
    std::vector<double> times;          // x * R, days
    std::vector<double> values;         // dataset units
};

// Unnormalized weight w(x) = 1/(1+(x/sigma)^2); w(0)=1, w(sigma)=0.5.
double hsr_weight(std::int64_t x, double sigma);

// Normalization constant c summed over an inclusive offset range.
double hsr_normalizer(std::int64_t x_begin, std::int64_t x_end, double sigma);

// Draw cfg.n_points context points from the valid, strictly-past samples
// (x < 0) of a rebased series. Throws if the support is too small, naming
// the shortfall. Deterministic for a fixed (rng state, cfg, series).
HsrDraw sample_context(const TimeValueSeries& series, const HsrConfig& cfg, Rng& rng);

// As sample_context, but the support spans past and future (any x,
// including 0) — used for training targets.
HsrDraw sample_targets(const TimeValueSeries& series, const HsrConfig& cfg, Rng& rng);

// Weighted sampling without replacement from explicit offsets. `offsets`
// must be the valid support (deduplicated); returns selected positions
// into `offsets`, ascending. Exposed for tests and reuse.
std::vector<std::size_t> weighted_sample_without_replacement(
    const std::vector<std::int64_t>& offsets, double sigma, int n_points, Rng& rng);

// Diagnostic only: with-replacement draws for verifying the empirical
// distribution against p(x). Not a production sampling mode.
std::vector<std::size_t> sample_with_replacement_diagnostic(
    const std::vector<std::int64_t>& offsets, double sigma, int n_draws, Rng& rng);

}  // namespace dam
