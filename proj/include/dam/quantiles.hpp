#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace dam {

// Project-wide quantile convention: linear interpolation between order
// statistics, i.e. quantile(q) sits at rank q*(n-1) of the sorted data.
// Medians, IQRs, the 50 percentiles of the affine token, and the gradient
// clipping percentile all use this one definition so results reproduce.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile of empty vector");
    if (q <= 0.0) return sorted.front();
    if (q >= 1.0) return sorted.back();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 >= sorted.size()) return sorted[lo];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, q);
}

inline double median(std::vector<double> values) {
    return quantile(std::move(values), 0.5);
}

// Evaluate several quantiles against one sort.
inline std::vector<double> quantiles(std::vector<double> values,
                                     const std::vector<double>& qs) {
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    out.reserve(qs.size());
    for (double q : qs) out.push_back(quantile_sorted(values, q));
    return out;
}

}  // namespace dam
