#pragma once
// Run configuration shared by the command-line tools: a JSON file and/or
// flags resolve into one RunConfig. Unknown keys are rejected loudly, and
// the fully resolved configuration is written next to every run's outputs
// so results can be reproduced from the artifacts alone.

#include <cstdint>
#include <string>
#include <vector>

#include "dam/model.hpp"

namespace dam {

struct TrainSettings {
    std::string preset = "standard";  // "standard" | "finetune"
    int minibatch = 32;
    long max_iters = -1;  // >=0 caps the schedule
    long val_every = 500;
    int val_windows = 8;
    long checkpoint_every = 0;
    long log_every = 100;
    double huber_delta = 1.0;
    double decay_half_life = 360.0;
    double theta_lambda = 1.0;
    int target_points = 540;    // HSR target draw size
    double target_sigma = 720.0;
};

struct RunConfig {
    std::string dataset;     // dataset manifest path
    std::string checkpoint;  // checkpoint directory (optional for some commands)
    std::string out = "out";
    std::string split = "test";
    std::string scalar = "float32";  // "float32" | "float64"
    int context_size = 540;
    double sigma = 720.0;
    int tome = -1;  // -1 = training reduction ratio
    std::vector<int> horizons = {96};
    std::vector<double> at;  // explicit query times in days (forecast/impute)
    std::vector<double> rates = {12.5, 25.0, 37.5, 50.0};
    std::uint64_t seed = 0;
    std::size_t max_windows = 0;  // 0 = full protocol
    int threads = 0;              // 0 = library default; DAM_THREADS overrides
    ModelConfig model;
    TrainSettings train;

    void validate() const;  // throws user_error with a single-line message
};

// Parse a config file into `cfg` (fields present in the JSON overwrite the
// current values; everything else keeps its default). Unknown keys anywhere
// are an error naming the key and the file.
void merge_config_file(RunConfig& cfg, const std::string& path);

// The complete resolved configuration as pretty JSON (round-trips through
// merge_config_file).
std::string resolved_config_json(const RunConfig& cfg);

// Writes resolved_config.json into `dir`.
void write_resolved_config(const RunConfig& cfg, const std::string& dir);

// Records the run's root seed and the per-subsystem generator splits.
void write_run_manifest(const std::string& dir, std::uint64_t seed,
                        const std::vector<std::string>& subsystems);

}  // namespace dam
