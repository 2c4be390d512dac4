#include "dam/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dam/quantiles.hpp"

namespace dam {
namespace {

std::string fmt(double x) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Learning rate schedule

long LrSchedule::total_iters() const {
    long total = 0;
    for (const auto& p : phases) total += p.iters;
    return total;
}

double LrSchedule::lr_at(long step) const {
    if (phases.empty()) throw std::logic_error("lr schedule has no phases");
    long local = step;
    for (std::size_t i = 0; i < phases.size(); ++i) {
        const TrainPhase& p = phases[i];
        const bool last = (i + 1 == phases.size());
        if (local < p.iters || last) {
            if (local >= p.iters) return p.floor;  // past the end: hold the floor
            if (p.warmup > 0 && local < p.warmup) {
                return p.peak * static_cast<double>(local) / static_cast<double>(p.warmup);
            }
            const long span = p.iters - p.warmup;
            if (span <= 0) return p.peak;
            const double progress =
                static_cast<double>(local - p.warmup) / static_cast<double>(span);
            return p.floor +
                   (p.peak - p.floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        }
        local -= p.iters;
    }
    return phases.back().floor;
}

LrSchedule standard_schedule() {
    LrSchedule s;
    s.phases.push_back({1'000'000, 10'000, 1e-3, 1e-14});
    s.phases.push_back({50'000, 2'000, 1e-3, 0.0});
    return s;
}

LrSchedule finetune_schedule() {
    LrSchedule s;
    s.phases.push_back({10'000, 100, 1e-5, 0.0});
    return s;
}

// ---------------------------------------------------------------------------
// Gradient clipping

double ClipState::scale_for(double norm) const {
    if (buffer_.size() < min_history_) return 1.0;
    const double p90 = current_p90();
    if (!(norm > p90) || norm <= 0.0) return 1.0;
    return p90 / norm;
}

void ClipState::record(double norm) {
    if (buffer_.size() < capacity_) {
        buffer_.push_back(norm);
    } else {
        buffer_[head_] = norm;
        head_ = (head_ + 1) % capacity_;
    }
}

double ClipState::current_p90() const {
    if (buffer_.empty()) return std::numeric_limits<double>::quiet_NaN();
    return quantile(buffer_, 0.9);
}

// ---------------------------------------------------------------------------
// Adam

template <typename S>
Adam<S>::Adam(const DamModel<S>& model, AdamConfig cfg) : cfg_(cfg) {
    m_ = model.make_grad_store();
    v_ = model.make_grad_store();
}

template <typename S>
void Adam<S>::step(DamModel<S>& model, const std::vector<Matrix<S>>& grads, double lr) {
    if (grads.size() != m_.size()) throw std::logic_error("adam: gradient store size mismatch");
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S eps = static_cast<S>(cfg_.eps);
    const S bc1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const S step_size = static_cast<S>(lr);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto g = grads[i].array();
        m_[i] = (b1 * m_[i].array() + (S(1) - b1) * g).matrix();
        v_[i] = (b2 * v_[i].array() + (S(1) - b2) * g.square()).matrix();
        model.tensor(i) -=
            (step_size * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps)).matrix();
    }
}

template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------------------

double decay_weight(std::int64_t offset, double half_life) {
    return std::exp2(-static_cast<double>(offset < 0 ? -offset : offset) / half_life);
}

TimeValueSeries slice_series(const TimeValueSeries& series, IndexRange range) {
    if (range.end > series.size() || range.begin > range.end) {
        throw std::invalid_argument("slice_series: range out of bounds");
    }
    TimeValueSeries out;
    out.name = series.name;
    out.resolution = series.resolution;
    out.now_tick = series.now_tick;
    out.ticks.assign(series.ticks.begin() + static_cast<std::ptrdiff_t>(range.begin),
                     series.ticks.begin() + static_cast<std::ptrdiff_t>(range.end));
    out.values.assign(series.values.begin() + static_cast<std::ptrdiff_t>(range.begin),
                      series.values.begin() + static_cast<std::ptrdiff_t>(range.end));
    out.valid.assign(series.valid.begin() + static_cast<std::ptrdiff_t>(range.begin),
                     series.valid.begin() + static_cast<std::ptrdiff_t>(range.end));
    return out;
}

TrainingExample sample_training_example(const std::vector<TimeValueSeries>& train_channels,
                                        const std::vector<double>& utilities,
                                        const TrainConfig& cfg, Rng& rng) {
    if (train_channels.empty()) throw user_error("training requires at least one channel");
    if (utilities.size() != train_channels.size()) {
        throw std::invalid_argument("utilities/channels size mismatch");
    }

    // Channel ~ utility (with replacement); degenerate weights fall back to
    // uniform.
    const double total = std::accumulate(utilities.begin(), utilities.end(), 0.0);
    std::size_t channel = 0;
    if (total > 0.0) {
        const double r = rng.uniform() * total;
        double cum = 0.0;
        for (std::size_t i = 0; i < utilities.size(); ++i) {
            cum += utilities[i];
            if (r < cum || i + 1 == utilities.size()) {
                channel = i;
                break;
            }
        }
    } else {
        channel = static_cast<std::size_t>(rng.bounded(train_channels.size()));
    }

    const TimeValueSeries& ch = train_channels[channel];

    // Anchor: uniform among positions with enough valid strictly-past
    // samples for the context draw (targets use the whole slice and are
    // checked by the draw itself).
    std::vector<std::size_t> eligible;
    std::size_t valid_before = 0;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        if (valid_before >= static_cast<std::size_t>(cfg.context_hsr.n_points)) {
            eligible.push_back(i);
        }
        if (ch.valid[i]) ++valid_before;
    }
    if (eligible.empty()) {
        throw user_error("channel '" + ch.name + "' has no anchor with " +
                         std::to_string(cfg.context_hsr.n_points) + " valid past samples");
    }

    TrainingExample ex;
    ex.channel = channel;
    ex.anchor = eligible[static_cast<std::size_t>(rng.bounded(eligible.size()))];
    const TimeValueSeries rebased = rebase_to_now(ch, ex.anchor);
    ex.context = sample_context(rebased, cfg.context_hsr, rng);
    ex.targets = sample_targets(rebased, cfg.target_hsr, rng);
    return ex;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// A fixed validation window: prepared context plus standardized targets.
template <typename S>
struct ValWindow {
    PreparedContext<S> prepared;
    std::vector<double> target_times;
    std::vector<double> target_std;
};

template <typename S>
std::vector<ValWindow<S>> build_val_windows(const DamModel<S>& model,
                                            const std::vector<TimeValueSeries>& val_channels,
                                            const TrainConfig& cfg, Rng& rng) {
    std::vector<ValWindow<S>> windows;
    std::vector<double> uniform(val_channels.size(), 1.0);
    for (int k = 0; k < cfg.val_windows; ++k) {
        TrainingExample ex;
        try {
            ex = sample_training_example(val_channels, uniform, cfg, rng);
        } catch (const user_error&) {
            break;  // validation split too small for a probe; callers get a notice
        }
        ValWindow<S> w;
        w.prepared = model.prepare_context(ex.context.times, ex.context.values, cfg.theta_lambda);
        w.target_times = ex.targets.times;
        w.target_std.reserve(ex.targets.values.size());
        for (double v : ex.targets.values) {
            w.target_std.push_back((v - w.prepared.norm.med) / w.prepared.norm.iqr);
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

template <typename S>
double probe_val_mse(const DamModel<S>& model, const std::vector<ValWindow<S>>& windows) {
    double se = 0.0;
    std::size_t n = 0;
    for (const auto& w : windows) {
        Graph<S> g;
        const ForwardResult fr = model.forward(g, w.prepared);
        const ForecastFunction fn = model.to_forecast_function(g, fr, w.prepared.norm);
        const std::vector<double> preds = evaluate(fn, w.target_times);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const double p_std = (preds[i] - w.prepared.norm.med) / w.prepared.norm.iqr;
            const double e = p_std - w.target_std[i];
            se += e * e;
        }
        n += preds.size();
    }
    return n > 0 ? se / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

template <typename S>
TrainResult<S> train(DamModel<S>& model, const Dataset& data, const TrainConfig& cfg,
                     std::ostream* log) {
    namespace fs = std::filesystem;
    if (cfg.out_dir.empty()) throw user_error("training needs an output directory");
    if (cfg.minibatch <= 0) throw user_error("minibatch size must be positive");
    fs::create_directories(cfg.out_dir);

    // Split-restricted channels and their sampling utilities.
    std::vector<TimeValueSeries> train_channels, val_channels;
    std::vector<double> utilities;
    for (const auto& ch : data.channels) {
        train_channels.push_back(slice_series(ch, data.split.train));
        val_channels.push_back(slice_series(ch, data.split.valid));
        utilities.push_back(compute_utility(train_channels.back()));
    }

    Rng root(cfg.seed);
    Rng batch_rng = root.split("batch");
    Rng dropout_rng = root.split("dropout");
    Rng val_rng = root.split("val");

    std::vector<ValWindow<S>> val_windows;
    if (cfg.val_every > 0) {
        val_windows = build_val_windows(model, val_channels, cfg, val_rng);
        if (val_windows.empty() && log != nullptr) {
            *log << "note: validation split too small for probes; val_mse disabled\n";
        }
    }

    const long scheduled = cfg.schedule.total_iters();
    const long total = cfg.max_iters >= 0 ? std::min(cfg.max_iters, scheduled) : scheduled;

    std::vector<Matrix<S>> grads = model.make_grad_store();
    Adam<S> opt(model);
    ClipState clip;

    const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw user_error("cannot write " + metrics_path);
    metrics << "step,loss,lr,grad_norm,val_mse\n";

    const std::string checkpoint_dir = (fs::path(cfg.out_dir) / "checkpoint").string();
    const S inv_batch = S(1) / static_cast<S>(cfg.minibatch);

    double mean_loss = 0.0;
    for (long step = 0; step < total; ++step) {
        for (auto& g : grads) g.setZero();

        double loss_sum = 0.0;
        for (int b = 0; b < cfg.minibatch; ++b) {
            const TrainingExample ex =
                sample_training_example(train_channels, utilities, cfg, batch_rng);
            const PreparedContext<S> prepared =
                model.prepare_context(ex.context.times, ex.context.values, cfg.theta_lambda);

            const std::size_t m = ex.targets.values.size();
            Matrix<S> tgt(static_cast<Eigen::Index>(m), 1);
            Matrix<S> w(static_cast<Eigen::Index>(m), 1);
            for (std::size_t i = 0; i < m; ++i) {
                tgt(static_cast<Eigen::Index>(i), 0) = static_cast<S>(
                    (ex.targets.values[i] - prepared.norm.med) / prepared.norm.iqr);
                w(static_cast<Eigen::Index>(i), 0) =
                    static_cast<S>(decay_weight(ex.targets.offsets[i], cfg.decay_half_life));
            }

            Graph<S> g;
            ForwardOptions<S> fopt;
            fopt.training = true;
            fopt.dropout_rng = &dropout_rng;
            fopt.grads = &grads;
            const ForwardResult fr = model.forward(g, prepared, fopt);
            const int pred = model.predict_standardized(g, fr, ex.targets.times);
            const int loss =
                g.huber_loss(pred, g.input(std::move(tgt)), g.input(std::move(w)),
                             static_cast<S>(cfg.huber_delta), S(1) / static_cast<S>(m));
            g.backward(loss);
            loss_sum += static_cast<double>(g.value(loss)(0, 0));
        }

        mean_loss = loss_sum / static_cast<double>(cfg.minibatch);
        const double lr = cfg.schedule.lr_at(step);

        // Batch-mean gradient, then percentile clipping on its global norm.
        double sq = 0.0;
        for (auto& g : grads) {
            g *= inv_batch;
            sq += static_cast<double>(g.template cast<double>().squaredNorm());
        }
        const double grad_norm = std::sqrt(sq);

        if (!std::isfinite(mean_loss) || !std::isfinite(grad_norm)) {
            metrics.flush();
            std::ostringstream msg;
            msg << "training aborted at step " << step << ": non-finite "
                << (std::isfinite(mean_loss) ? "gradient" : "loss") << " (loss=" << mean_loss
                << ", grad_norm=" << grad_norm << ", lr=" << lr
                << "); metrics up to this step are in " << metrics_path;
            throw std::runtime_error(msg.str());
        }

        const double clip_scale = clip.scale_for(grad_norm);
        clip.record(grad_norm);
        if (clip_scale < 1.0) {
            for (auto& g : grads) g *= static_cast<S>(clip_scale);
        }
        opt.step(model, grads, lr);

        std::string val_cell;
        const bool probe = !val_windows.empty() && cfg.val_every > 0 &&
                           ((step + 1) % cfg.val_every == 0 || step + 1 == total);
        if (probe) val_cell = fmt(probe_val_mse(model, val_windows));
        metrics << step << ',' << fmt(mean_loss) << ',' << fmt(lr) << ',' << fmt(grad_norm) << ','
                << val_cell << '\n';

        if (log != nullptr && cfg.log_every > 0 &&
            (step % cfg.log_every == 0 || step + 1 == total)) {
            *log << "step " << step << "/" << total << " loss " << fmt(mean_loss) << " lr "
                 << fmt(lr) << " grad_norm " << fmt(grad_norm)
                 << (probe ? " val_mse " + val_cell : "") << '\n';
            log->flush();
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(model, checkpoint_dir);
        }
    }

    save_checkpoint(model, checkpoint_dir);
    metrics.close();

    TrainResult<S> res;
    res.steps = total;
    res.final_loss = mean_loss;
    res.metrics_path = metrics_path;
    res.checkpoint_dir = checkpoint_dir;
    return res;
}

template TrainResult<float> train<float>(DamModel<float>&, const Dataset&, const TrainConfig&,
                                         std::ostream*);
template TrainResult<double> train<double>(DamModel<double>&, const Dataset&, const TrainConfig&,
                                           std::ostream*);

}  // namespace dam
