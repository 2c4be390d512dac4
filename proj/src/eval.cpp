#include "dam/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "dam/quantiles.hpp"

namespace dam {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ErrorSums {
    double se = 0.0;   // sum of squared errors
    double sae = 0.0;  // sum of absolute errors
    double sv2 = 0.0;  // sum of squared truths
    double sav = 0.0;  // sum of absolute truths
    std::size_t n = 0;

    void add(double pred, double truth) {
        const double e = pred - truth;
        se += e * e;
        sae += std::abs(e);
        sv2 += truth * truth;
        sav += std::abs(truth);
        ++n;
    }

    ChannelMetrics metrics(const std::string& name) const {
        ChannelMetrics m;
        m.name = name;
        m.points = n;
        m.mse = n > 0 ? se / static_cast<double>(n) : kNaN;
        m.nmse = sv2 > 0.0 ? se / sv2 : kNaN;
        m.nmae = sav > 0.0 ? sae / sav : kNaN;
        return m;
    }
};

// Anchors in [range.begin, range.end - h_max] with enough valid past for the
// context draw. `max_windows` keeps an evenly strided subset.
std::vector<std::size_t> eligible_anchors(const TimeValueSeries& ch, IndexRange range, int h_max,
                                          int context_size, std::size_t max_windows) {
    std::vector<std::size_t> anchors;
    if (range.end < static_cast<std::size_t>(h_max) + 1) return anchors;
    const std::size_t last = range.end - 1 - static_cast<std::size_t>(h_max);
    std::size_t valid_before = 0;
    for (std::size_t i = 0; i < ch.size() && i <= last; ++i) {
        if (i >= range.begin && valid_before >= static_cast<std::size_t>(context_size)) {
            anchors.push_back(i);
        }
        if (ch.valid[i]) ++valid_before;
    }
    if (max_windows > 0 && anchors.size() > max_windows) {
        std::vector<std::size_t> picked;
        picked.reserve(max_windows);
        const std::size_t n = anchors.size();
        for (std::size_t k = 0; k < max_windows; ++k) {
            picked.push_back(anchors[k * (n - 1) / (max_windows > 1 ? max_windows - 1 : 1)]);
        }
        picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
        anchors = std::move(picked);
    }
    return anchors;
}

// One forward pass at an anchor; the context is drawn by the sampling regime
// from all valid history strictly before it.
template <typename S>
ForecastFunction forecast_at_anchor(const DamModel<S>& model, const TimeValueSeries& channel,
                                    std::size_t anchor, const EvalProtocol& proto, Rng rng) {
    const TimeValueSeries rebased = rebase_to_now(channel, anchor);
    const HsrConfig hsr{proto.sigma, proto.context_size};
    const HsrDraw draw = sample_context(rebased, hsr, rng);
    const PreparedContext<S> prep =
        model.prepare_context(draw.times, draw.values, proto.theta_lambda);
    Graph<S> g;
    ForwardOptions<S> opt;
    opt.n_tome = proto.n_tome;
    opt.ablate = proto.ablate;
    const ForwardResult fr = model.forward(g, prep, opt);
    return model.to_forecast_function(g, fr, prep.norm);
}

}  // namespace

IndexRange split_range(const Dataset& data, const std::string& split) {
    if (split == "train") return data.split.train;
    if (split == "valid") return data.split.valid;
    if (split == "test") return data.split.test;
    throw user_error("unknown split '" + split + "' (expected train, valid, or test)");
}

template <typename S>
ForecastReport evaluate_forecast(const DamModel<S>& model, const Dataset& data,
                                 const EvalProtocol& proto) {
    if (proto.horizons.empty()) throw user_error("evaluation needs at least one horizon");
    for (int h : proto.horizons) {
        if (h <= 0) throw user_error("horizons must be positive step counts");
    }
    const IndexRange range = split_range(data, proto.split);
    const int h_max = *std::max_element(proto.horizons.begin(), proto.horizons.end());

    Rng root(proto.seed);
    ForecastReport report;
    // sums[horizon][channel]
    std::vector<std::vector<ErrorSums>> sums(
        proto.horizons.size(), std::vector<ErrorSums>(data.channels.size()));

    for (std::size_t ci = 0; ci < data.channels.size(); ++ci) {
        const TimeValueSeries& ch = data.channels[ci];
        const std::vector<std::size_t> anchors =
            eligible_anchors(ch, range, h_max, proto.context_size, proto.max_windows);
        for (std::size_t a : anchors) {
            Rng rng = root.split(ch.name + "@" + std::to_string(ch.ticks[a]));
            const ForecastFunction fn = forecast_at_anchor(model, ch, a, proto, rng);

            std::vector<double> times(static_cast<std::size_t>(h_max));
            for (int h = 1; h <= h_max; ++h) {
                times[static_cast<std::size_t>(h - 1)] =
                    ch.time_between(a + static_cast<std::size_t>(h), a);
            }
            const std::vector<double> preds = evaluate(fn, times);
            for (std::size_t hi = 0; hi < proto.horizons.size(); ++hi) {
                const int h = proto.horizons[hi];
                for (int j = 1; j <= h; ++j) {
                    const std::size_t t = a + static_cast<std::size_t>(j);
                    if (!ch.valid[t]) continue;
                    sums[hi][ci].add(preds[static_cast<std::size_t>(j - 1)], ch.values[t]);
                }
            }
            ++report.windows;
        }
    }

    for (std::size_t hi = 0; hi < proto.horizons.size(); ++hi) {
        HorizonReport hr;
        hr.horizon = proto.horizons[hi];
        double nmse = 0.0, nmae = 0.0, mse = 0.0;
        std::size_t counted = 0;
        for (std::size_t ci = 0; ci < data.channels.size(); ++ci) {
            ChannelMetrics m = sums[hi][ci].metrics(data.channels[ci].name);
            if (m.points > 0) {
                nmse += m.nmse;
                nmae += m.nmae;
                mse += m.mse;
                ++counted;
            }
            hr.channels.push_back(std::move(m));
        }
        hr.mean_nmse = counted > 0 ? nmse / static_cast<double>(counted) : kNaN;
        hr.mean_nmae = counted > 0 ? nmae / static_cast<double>(counted) : kNaN;
        hr.mean_mse = counted > 0 ? mse / static_cast<double>(counted) : kNaN;
        report.horizons.push_back(std::move(hr));
    }
    return report;
}

template <typename S>
HsrTuneResult tune_hsr(const DamModel<S>& model, const Dataset& data,
                       const std::vector<int>& contexts, const std::vector<double>& sigmas,
                       EvalProtocol proto) {
    if (contexts.empty() || sigmas.empty()) throw user_error("tuning needs a non-empty grid");

    HsrTuneResult result;
    result.contexts = contexts;
    result.sigmas = sigmas;
    result.score.resize(static_cast<Eigen::Index>(contexts.size()),
                        static_cast<Eigen::Index>(sigmas.size()));
    result.score.setConstant(kNaN);
    result.best_score = std::numeric_limits<double>::infinity();

    for (std::size_t ri = 0; ri < contexts.size(); ++ri) {
        for (std::size_t si = 0; si < sigmas.size(); ++si) {
            EvalProtocol cell = proto;
            cell.context_size = contexts[ri];
            cell.sigma = sigmas[si];
            cell.n_tome = -1;  // merge target follows the training ratio per context
            double score = kNaN;
            const ForecastReport rep = evaluate_forecast(model, data, cell);
            double acc = 0.0;
            std::size_t n = 0;
            for (const auto& hr : rep.horizons) {
                if (std::isfinite(hr.mean_nmse)) {
                    acc += hr.mean_nmse;
                    ++n;
                }
            }
            if (n > 0) score = acc / static_cast<double>(n);
            result.score(static_cast<Eigen::Index>(ri), static_cast<Eigen::Index>(si)) = score;
            // Strict improvement only: row-major scan means ties keep the
            // smaller context, then the smaller sigma.
            if (std::isfinite(score) && score < result.best_score) {
                result.best_score = score;
                result.best_context = contexts[ri];
                result.best_sigma = sigmas[si];
            }
        }
    }
    if (!std::isfinite(result.best_score)) {
        throw user_error("tuning produced no finite scores (split too small for the grid)");
    }
    return result;
}

template <typename S>
ImputationReport evaluate_imputation(const DamModel<S>& model, const Dataset& data,
                                     const std::vector<double>& rates, const EvalProtocol& proto,
                                     ImputationMethod method, std::ostream* notices) {
    const IndexRange range = split_range(data, proto.split);
    const std::size_t window_len = static_cast<std::size_t>(kImputationWindowSteps);

    std::vector<std::size_t> starts;
    for (std::size_t s = range.begin; s + window_len <= range.end; s += window_len) {
        starts.push_back(s);
        if (proto.max_windows > 0 && starts.size() >= proto.max_windows) break;
    }
    if (starts.empty()) {
        throw user_error("imputation: split shorter than one " +
                         std::to_string(kImputationWindowSteps) + "-step window");
    }

    ImputationReport report;
    report.method = method;
    for (double rate : rates) {
        ImputationRateReport rr;
        rr.rate = rate;
        if (rate < 0.0 || rate > 100.0) throw user_error("imputation rate must be in [0, 100]");
        const std::size_t masked_len =
            static_cast<std::size_t>(std::llround(rate / 100.0 * static_cast<double>(window_len)));
        if (masked_len == 0) {
            rr.skipped = true;
            if (notices != nullptr) {
                *notices << "note: imputation rate " << rate << "% masks nothing; skipped\n";
            }
            report.rates.push_back(rr);
            continue;
        }

        ErrorSums sums;
        double baseline_se = 0.0;
        Rng mask_root(proto.seed);
        for (std::size_t start : starts) {
            // Masked steps are whole columns (every channel at the drawn
            // steps), sampled without replacement from a centered span so the
            // window keeps unmasked anchors at both edges.
            const std::size_t margin = window_len / 16;
            const std::size_t cand_count = window_len - 2 * margin;
            if (masked_len > cand_count) {
                throw user_error("imputation rate " + std::to_string(rate) +
                                 "% exceeds the maskable span of the window");
            }
            Rng rng = mask_root.split("impute:" + std::to_string(rate) + ":" +
                                      std::to_string(start));
            std::vector<std::size_t> cand(cand_count);
            std::iota(cand.begin(), cand.end(), start + margin);
            for (std::size_t i = 0; i < masked_len; ++i) {
                const std::size_t j =
                    i + static_cast<std::size_t>(
                            rng.bounded(static_cast<std::uint64_t>(cand_count - i)));
                std::swap(cand[i], cand[j]);
            }
            std::vector<std::size_t> drawn(
                cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(masked_len));
            std::sort(drawn.begin(), drawn.end());

            for (const TimeValueSeries& ch : data.channels) {
                // Rebase so the whole window is strictly past.
                TimeValueSeries frame = ch;
                frame.now_tick = ch.ticks[start + window_len - 1] + 1;
                std::vector<bool> masked(ch.size(), false);
                for (std::size_t i : drawn) masked[i] = true;
                const IndexRange window{start, start + window_len};

                ForecastFunction fn;
                if (method == ImputationMethod::basis_fit) {
                    fn = imputation_fit(frame, masked, window, proto.theta_lambda);
                } else {
                    std::vector<double> times, values;
                    for (std::size_t i = window.begin; i < window.end; ++i) {
                        if (masked[i] || !frame.valid[i]) continue;
                        times.push_back(frame.time(i));
                        values.push_back(frame.values[i]);
                    }
                    if (times.empty()) {
                        throw user_error("imputation: window contains no unmasked points");
                    }
                    const PreparedContext<S> prep =
                        model.prepare_context(times, values, proto.theta_lambda);
                    Graph<S> g;
                    ForwardOptions<S> opt;
                    opt.n_tome = proto.n_tome;
                    opt.ablate = proto.ablate;
                    const ForwardResult fr = model.forward(g, prep, opt);
                    fn = model.to_forecast_function(g, fr, prep.norm);
                }

                std::vector<double> times;
                std::vector<std::size_t> targets;
                for (std::size_t i : drawn) {
                    if (!frame.valid[i]) continue;
                    times.push_back(frame.time(i));
                    targets.push_back(i);
                }
                if (targets.empty()) continue;
                const std::vector<double> preds = evaluate(fn, times);
                for (std::size_t j = 0; j < targets.size(); ++j) {
                    sums.add(preds[j], frame.values[targets[j]]);
                }

                // Linear interpolation baseline anchored, per masked step, on
                // its nearest valid unmasked neighbours.
                for (std::size_t t : targets) {
                    std::ptrdiff_t li = static_cast<std::ptrdiff_t>(t) - 1;
                    while (li >= static_cast<std::ptrdiff_t>(window.begin) &&
                           (masked[static_cast<std::size_t>(li)] ||
                            !frame.valid[static_cast<std::size_t>(li)])) {
                        --li;
                    }
                    std::size_t ri = t + 1;
                    while (ri < window.end && (masked[ri] || !frame.valid[ri])) ++ri;
                    const bool has_left = li >= static_cast<std::ptrdiff_t>(window.begin);
                    const bool has_right = ri < window.end;
                    double guess = 0.0;
                    if (has_left && has_right) {
                        const std::size_t l = static_cast<std::size_t>(li);
                        const double span =
                            static_cast<double>(frame.ticks[ri] - frame.ticks[l]);
                        const double f =
                            static_cast<double>(frame.ticks[t] - frame.ticks[l]) / span;
                        guess = frame.values[l] + f * (frame.values[ri] - frame.values[l]);
                    } else if (has_left) {
                        guess = frame.values[static_cast<std::size_t>(li)];
                    } else if (has_right) {
                        guess = frame.values[ri];
                    } else {
                        continue;
                    }
                    const double e = guess - frame.values[t];
                    baseline_se += e * e;
                }
            }
            ++rr.windows;
        }

        rr.points = sums.n;
        rr.mse = sums.n > 0 ? sums.se / static_cast<double>(sums.n) : kNaN;
        rr.nmse = sums.sv2 > 0.0 ? sums.se / sums.sv2 : kNaN;
        rr.baseline_mse = sums.n > 0 ? baseline_se / static_cast<double>(sums.n) : kNaN;
        report.rates.push_back(rr);
    }
    return report;
}

template <typename S>
std::vector<CostSweepRow> cost_sweep(const DamModel<S>& model, const Dataset& data,
                                     const std::vector<int>& contexts, const EvalProtocol& proto,
                                     int reps) {
    if (contexts.empty()) throw user_error("cost sweep needs at least one context size");
    if (reps < 1) throw user_error("cost sweep needs at least one repetition");
    const int max_context = *std::max_element(contexts.begin(), contexts.end());
    const int h_max = *std::max_element(proto.horizons.begin(), proto.horizons.end());
    const IndexRange range = split_range(data, proto.split);

    // One fixed anchor per sweep: the last eligible for the largest context.
    const TimeValueSeries& ch = data.channels.front();
    const std::vector<std::size_t> anchors =
        eligible_anchors(ch, range, h_max, max_context, 0);
    if (anchors.empty()) {
        throw user_error("cost sweep: no anchor has " + std::to_string(max_context) +
                         " valid past samples plus " + std::to_string(h_max) + " target steps");
    }
    const std::size_t anchor = anchors.back();
    const TimeValueSeries rebased = rebase_to_now(ch, anchor);

    Rng root(proto.seed);
    std::vector<CostSweepRow> rows;
    for (int c : contexts) {
        Rng rng = root.split("cost:" + std::to_string(c));
        const HsrConfig hsr{proto.sigma, c};
        const HsrDraw draw = sample_context(rebased, hsr, rng);
        const PreparedContext<S> prep =
            model.prepare_context(draw.times, draw.values, proto.theta_lambda);

        std::vector<double> times_ms;
        times_ms.reserve(static_cast<std::size_t>(reps));
        ForecastFunction fn;
        for (int r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            Graph<S> g;
            ForwardOptions<S> opt;
            opt.n_tome = proto.n_tome;
            opt.ablate = proto.ablate;
            const ForwardResult fr = model.forward(g, prep, opt);
            const auto t1 = std::chrono::steady_clock::now();
            times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            if (r + 1 == reps) fn = model.to_forecast_function(g, fr, prep.norm);
        }

        CostSweepRow row;
        row.context = c;
        row.median_ms = median(times_ms);
        ErrorSums sums;
        std::vector<double> times(static_cast<std::size_t>(h_max));
        for (int h = 1; h <= h_max; ++h) {
            times[static_cast<std::size_t>(h - 1)] =
                ch.time_between(anchor + static_cast<std::size_t>(h), anchor);
        }
        const std::vector<double> preds = evaluate(fn, times);
        for (int h = 1; h <= h_max; ++h) {
            const std::size_t t = anchor + static_cast<std::size_t>(h);
            if (!ch.valid[t]) continue;
            sums.add(preds[static_cast<std::size_t>(h - 1)], ch.values[t]);
        }
        row.mse = sums.n > 0 ? sums.se / static_cast<double>(sums.n) : kNaN;
        rows.push_back(row);
    }
    return rows;
}

const std::vector<std::string>& ablation_component_names() {
    static const std::vector<std::string> names = {"self-attn", "cross-attn", "ff_tv",
                                                   "ff_b",      "ff_b_cross", "tome"};
    return names;
}

template <typename S>
std::vector<std::pair<std::string, ForecastReport>> ablation_sweep(
    const DamModel<S>& model, const Dataset& data, const EvalProtocol& proto,
    const std::vector<std::string>& components) {
    std::vector<std::pair<std::string, ForecastReport>> out;
    out.emplace_back("none", evaluate_forecast(model, data, proto));
    for (const std::string& name : components) {
        EvalProtocol p = proto;
        const AblationMask extra = AblationMask::from_names({name});
        p.ablate.self_attn |= extra.self_attn;
        p.ablate.cross_attn |= extra.cross_attn;
        p.ablate.ff_tv |= extra.ff_tv;
        p.ablate.ff_b |= extra.ff_b;
        p.ablate.ff_b_cross |= extra.ff_b_cross;
        p.ablate.tome |= extra.tome;
        out.emplace_back(name, evaluate_forecast(model, data, p));
    }
    return out;
}

// Explicit instantiations.
template ForecastReport evaluate_forecast<float>(const DamModel<float>&, const Dataset&,
                                                 const EvalProtocol&);
template ForecastReport evaluate_forecast<double>(const DamModel<double>&, const Dataset&,
                                                  const EvalProtocol&);
template HsrTuneResult tune_hsr<float>(const DamModel<float>&, const Dataset&,
                                       const std::vector<int>&, const std::vector<double>&,
                                       EvalProtocol);
template HsrTuneResult tune_hsr<double>(const DamModel<double>&, const Dataset&,
                                        const std::vector<int>&, const std::vector<double>&,
                                        EvalProtocol);
template ImputationReport evaluate_imputation<float>(const DamModel<float>&, const Dataset&,
                                                     const std::vector<double>&,
                                                     const EvalProtocol&, ImputationMethod,
                                                     std::ostream*);
template ImputationReport evaluate_imputation<double>(const DamModel<double>&, const Dataset&,
                                                      const std::vector<double>&,
                                                      const EvalProtocol&, ImputationMethod,
                                                      std::ostream*);
template std::vector<CostSweepRow> cost_sweep<float>(const DamModel<float>&, const Dataset&,
                                                     const std::vector<int>&, const EvalProtocol&,
                                                     int);
template std::vector<CostSweepRow> cost_sweep<double>(const DamModel<double>&, const Dataset&,
                                                      const std::vector<int>&, const EvalProtocol&,
                                                      int);
template std::vector<std::pair<std::string, ForecastReport>> ablation_sweep<float>(
    const DamModel<float>&, const Dataset&, const EvalProtocol&,
    const std::vector<std::string>&);
template std::vector<std::pair<std::string, ForecastReport>> ablation_sweep<double>(
    const DamModel<double>&, const Dataset&, const EvalProtocol&,
    const std::vector<std::string>&);

}  // namespace dam
