#pragma once
// Evaluation protocols: sliding-window forecasting metrics, post-hoc history
// sampling tuning, centered-mask imputation, context-size cost sweeps, and
// component ablations.

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dam/csv.hpp"
#include "dam/hsr.hpp"
#include "dam/model.hpp"

namespace dam {

// Shared evaluation settings. Every metric run draws its context points via
// the history sampling regime from all valid samples strictly before the
// anchor; the seed reseeds those draws and nothing else.
struct EvalProtocol {
    int context_size = 540;
    double sigma = 720.0;
    std::vector<int> horizons = {96};
    std::string split = "test";   // "train" | "valid" | "test"
    std::size_t max_windows = 0;  // 0 = every stride-1 anchor; else evenly strided subset
    std::uint64_t seed = 0;
    double theta_lambda = 1.0;
    int n_tome = -1;  // -1 keeps the training-time merge ratio for the context size
    AblationMask ablate;
};

struct ChannelMetrics {
    std::string name;
    double nmse = 0.0;  // sum(e^2) / sum(v^2) over the evaluated span
    double nmae = 0.0;  // sum(|e|) / sum(|v|)
    double mse = 0.0;
    std::size_t points = 0;
};

struct HorizonReport {
    int horizon = 0;
    std::vector<ChannelMetrics> channels;
    double mean_nmse = 0.0;  // average of the per-channel values
    double mean_nmae = 0.0;
    double mean_mse = 0.0;
};

struct ForecastReport {
    std::vector<HorizonReport> horizons;
    std::size_t windows = 0;  // evaluated (channel, anchor) pairs
};

// Anchors slide with stride 1 over the chosen split (bounded by the largest
// horizon); each anchor gets one forward pass whose forecast function is
// read at every horizon, so shorter-horizon predictions are exact prefixes
// of longer ones.
template <typename S>
ForecastReport evaluate_forecast(const DamModel<S>& model, const Dataset& data,
                                 const EvalProtocol& proto);

// ---------------------------------------------------------------------------
// Post-hoc tuning of the inference-time sampling regime.

struct HsrTuneResult {
    std::vector<int> contexts;   // grid rows
    std::vector<double> sigmas;  // grid columns
    MatrixD score;               // mean NMSE per cell
    int best_context = 0;
    double best_sigma = 0.0;
    double best_score = 0.0;
};

// Grid search over (context size, sigma) on the validation split (unless the
// base protocol says otherwise). The merge target follows the training
// reduction ratio at each context size. Ties prefer the smaller context,
// then the smaller sigma.
template <typename S>
HsrTuneResult tune_hsr(const DamModel<S>& model, const Dataset& data,
                       const std::vector<int>& contexts, const std::vector<double>& sigmas,
                       EvalProtocol proto);

// ---------------------------------------------------------------------------
// Imputation: tiled fixed-length windows, a centered contiguous masked span
// covering rate% of the window across all channels, reconstruction scored on
// the masked samples only.

inline constexpr int kImputationWindowSteps = 1440;

enum class ImputationMethod {
    basis_fit,  // ridge fit of the frequency basis on the unmasked samples
    model,      // backbone forward over the unmasked samples as context
};

struct ImputationRateReport {
    double rate = 0.0;  // percent of the window masked
    bool skipped = false;
    double mse = 0.0;
    double nmse = 0.0;
    double baseline_mse = 0.0;  // linear interpolation across the gap
    std::size_t points = 0;
    std::size_t windows = 0;
};

struct ImputationReport {
    ImputationMethod method = ImputationMethod::basis_fit;
    std::vector<ImputationRateReport> rates;
};

template <typename S>
ImputationReport evaluate_imputation(const DamModel<S>& model, const Dataset& data,
                                     const std::vector<double>& rates, const EvalProtocol& proto,
                                     ImputationMethod method, std::ostream* notices = nullptr);

// ---------------------------------------------------------------------------
// Inference cost versus context size at one fixed anchor.

struct CostSweepRow {
    int context = 0;
    double median_ms = 0.0;  // median forward wall time over the repetitions
    double mse = 0.0;        // horizon MSE from the final repetition's forecast
};

template <typename S>
std::vector<CostSweepRow> cost_sweep(const DamModel<S>& model, const Dataset& data,
                                     const std::vector<int>& contexts, const EvalProtocol& proto,
                                     int reps = 20);

// ---------------------------------------------------------------------------
// Ablations: named component bypasses, baseline ("none") first.

const std::vector<std::string>& ablation_component_names();

template <typename S>
std::vector<std::pair<std::string, ForecastReport>> ablation_sweep(
    const DamModel<S>& model, const Dataset& data, const EvalProtocol& proto,
    const std::vector<std::string>& components);

// Resolve a split name to its index range. Throws user_error on bad names.
IndexRange split_range(const Dataset& data, const std::string& split);

}  // namespace dam
