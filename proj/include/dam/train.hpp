#pragma once
// Training loop: utility-weighted example sampling, per-example graphs with
// shared gradient accumulators, decay-weighted Huber loss on standardized
// targets, warmup+cosine learning rate, percentile gradient clipping, Adam.

#include <cstdint>
#include <deque>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dam/csv.hpp"
#include "dam/hsr.hpp"
#include "dam/model.hpp"
#include "dam/rng.hpp"

namespace dam {

// One warmup+cosine segment: lr rises linearly from 0 to `peak` over
// `warmup` steps, then follows a half-cosine from `peak` down to `floor`
// over the remaining steps.
struct TrainPhase {
    long iters = 0;
    long warmup = 0;
    double peak = 1e-3;
    double floor = 0.0;
};

struct LrSchedule {
    std::vector<TrainPhase> phases;

    long total_iters() const;
    // Learning rate at a global step (phases concatenate; each phase restarts
    // its own warmup). Steps past the end hold the last phase's floor.
    double lr_at(long step) const;
};

// The published two-phase recipe: 1M iterations (10k warmup, 1e-3 -> 1e-14)
// followed by 50k iterations (2k warmup, 1e-3 -> 0).
LrSchedule standard_schedule();

// Adaptation preset for fitting an already-trained model to new data:
// one short phase, peak 1e-5, 10k iterations.
LrSchedule finetune_schedule();

// Percentile-based gradient clipping. Keeps the most recent pre-clip global
// norms (capped history); once at least `min_history` entries exist, a step
// whose norm exceeds the 90th percentile is scaled down to exactly that
// percentile. The incoming (pre-clip) norm is recorded after the decision.
class ClipState {
public:
    explicit ClipState(std::size_t capacity = 1000, std::size_t min_history = 100)
        : capacity_(capacity), min_history_(min_history) {}

    double scale_for(double norm) const;  // multiplier in (0, 1]
    void record(double norm);
    double current_p90() const;  // NaN until any history exists
    std::size_t history_size() const { return buffer_.size(); }

private:
    std::size_t capacity_;
    std::size_t min_history_;
    std::vector<double> buffer_;
    std::size_t head_ = 0;  // overwrite position once full
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction and no weight decay. A zero gradient leaves the
// parameters bit-identical (moments stay zero, update is 0/(0+eps)).
template <typename S>
class Adam {
public:
    explicit Adam(const DamModel<S>& model, AdamConfig cfg = {});

    void step(DamModel<S>& model, const std::vector<Matrix<S>>& grads, double lr);
    long steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<Matrix<S>> m_, v_;
};

// Loss decay weight for a target at absolute step offset |x|: 2^(-|x|/half_life),
// i.e. 1 at the anchor and 0.5 one half-life away.
double decay_weight(std::int64_t offset, double half_life);

struct TrainConfig {
    HsrConfig context_hsr{720.0, 540};  // sigma, points — context draw (past only)
    HsrConfig target_hsr{720.0, 540};   // target draw (past and future)
    int minibatch = 32;
    LrSchedule schedule = standard_schedule();
    long max_iters = -1;  // >=0 caps the schedule's total (short runs)
    double huber_delta = 1.0;
    double decay_half_life = 360.0;  // steps
    double theta_lambda = 1.0;       // ridge strength for the coefficient init
    std::uint64_t seed = 42;
    long val_every = 500;   // 0 disables the validation probe
    int val_windows = 8;    // fixed validation anchors
    long checkpoint_every = 0;  // 0 = final checkpoint only
    long log_every = 100;       // progress lines to the log stream
    std::string out_dir;        // receives metrics.csv and checkpoint/
};

// One drawn training example: a rebased window plus its context/target draws.
struct TrainingExample {
    std::size_t channel = 0;
    std::size_t anchor = 0;  // index within the channel's train slice
    HsrDraw context;
    HsrDraw targets;
};

// Utility-weighted (with replacement) channel choice, uniform anchor among
// positions with enough valid past for the context draw, then the two HSR
// draws. `train_channels` are the channels restricted to the train split.
TrainingExample sample_training_example(const std::vector<TimeValueSeries>& train_channels,
                                        const std::vector<double>& utilities,
                                        const TrainConfig& cfg, Rng& rng);

template <typename S>
struct TrainResult {
    long steps = 0;
    double final_loss = 0.0;
    std::string metrics_path;
    std::string checkpoint_dir;
};

// Runs the full loop. Writes metrics.csv (step, loss, lr, grad_norm, val_mse;
// the last column is empty except on probe steps) and a final checkpoint
// under cfg.out_dir. Aborts with diagnostics if the loss goes non-finite.
template <typename S>
TrainResult<S> train(DamModel<S>& model, const Dataset& data, const TrainConfig& cfg,
                     std::ostream* log = nullptr);

// Restrict a series to an index range, preserving ticks and the origin.
TimeValueSeries slice_series(const TimeValueSeries& series, IndexRange range);

}  // namespace dam
