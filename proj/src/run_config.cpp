#include "dam/run_config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dam {
namespace {

using ordered_json = nlohmann::ordered_json;

void reject_unknown(const ordered_json& obj, const std::vector<std::string>& known,
                    const std::string& where) {
    for (const auto& item : obj.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw user_error("config: unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <typename T>
void take(const ordered_json& obj, const char* key, T& field) {
    if (obj.contains(key)) {
        try {
            field = obj.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw user_error(std::string("config: key '") + key + "' has the wrong type");
        }
    }
}

}  // namespace

void RunConfig::validate() const {
    if (scalar != "float32" && scalar != "float64") {
        throw user_error("config: scalar must be float32 or float64");
    }
    if (split != "train" && split != "valid" && split != "test") {
        throw user_error("config: split must be train, valid, or test");
    }
    if (context_size <= 0) throw user_error("config: context_size must be positive");
    if (sigma <= 0.0) throw user_error("config: sigma must be positive");
    for (int h : horizons) {
        if (h <= 0) throw user_error("config: horizons must be positive step counts");
    }
    for (double r : rates) {
        if (r < 0.0 || r > 100.0) throw user_error("config: rates must be in [0, 100]");
    }
    if (train.preset != "standard" && train.preset != "finetune") {
        throw user_error("config: train.preset must be standard or finetune");
    }
    if (train.minibatch <= 0) throw user_error("config: train.minibatch must be positive");
    if (train.target_points <= 0) throw user_error("config: train.target_points must be positive");
    if (train.target_sigma <= 0.0) throw user_error("config: train.target_sigma must be positive");
    if (threads < 0) throw user_error("config: threads must be >= 0");
    model.validate();
}

void merge_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw user_error("cannot open config file " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw user_error("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw user_error("config file " + path + " must hold a JSON object");

    reject_unknown(j,
                   {"dataset", "checkpoint", "out", "split", "scalar", "context_size", "sigma",
                    "tome", "horizons", "at", "rates", "seed", "max_windows", "threads", "model",
                    "train"},
                   path);
    take(j, "dataset", cfg.dataset);
    take(j, "checkpoint", cfg.checkpoint);
    take(j, "out", cfg.out);
    take(j, "split", cfg.split);
    take(j, "scalar", cfg.scalar);
    take(j, "context_size", cfg.context_size);
    take(j, "sigma", cfg.sigma);
    take(j, "tome", cfg.tome);
    take(j, "horizons", cfg.horizons);
    take(j, "at", cfg.at);
    take(j, "rates", cfg.rates);
    take(j, "seed", cfg.seed);
    take(j, "max_windows", cfg.max_windows);
    take(j, "threads", cfg.threads);

    if (j.contains("model")) {
        const auto& jm = j.at("model");
        if (!jm.is_object()) throw user_error("config: 'model' must be an object");
        reject_unknown(
            jm, {"d_model", "d_ff", "n_layers", "n_heads", "n_tome", "dropout",
                 "hsr_reference_context"},
            "'model' of " + path);
        take(jm, "d_model", cfg.model.d_model);
        take(jm, "d_ff", cfg.model.d_ff);
        take(jm, "n_layers", cfg.model.n_layers);
        take(jm, "n_heads", cfg.model.n_heads);
        take(jm, "n_tome", cfg.model.n_tome);
        take(jm, "dropout", cfg.model.dropout);
        take(jm, "hsr_reference_context", cfg.model.hsr_reference_context);
    }
    if (j.contains("train")) {
        const auto& jt = j.at("train");
        if (!jt.is_object()) throw user_error("config: 'train' must be an object");
        reject_unknown(jt,
                       {"preset", "minibatch", "max_iters", "val_every", "val_windows",
                        "checkpoint_every", "log_every", "huber_delta", "decay_half_life",
                        "theta_lambda", "target_points", "target_sigma"},
                       "'train' of " + path);
        take(jt, "preset", cfg.train.preset);
        take(jt, "minibatch", cfg.train.minibatch);
        take(jt, "max_iters", cfg.train.max_iters);
        take(jt, "val_every", cfg.train.val_every);
        take(jt, "val_windows", cfg.train.val_windows);
        take(jt, "checkpoint_every", cfg.train.checkpoint_every);
        take(jt, "log_every", cfg.train.log_every);
        take(jt, "huber_delta", cfg.train.huber_delta);
        take(jt, "decay_half_life", cfg.train.decay_half_life);
        take(jt, "theta_lambda", cfg.train.theta_lambda);
        take(jt, "target_points", cfg.train.target_points);
        take(jt, "target_sigma", cfg.train.target_sigma);
    }
}

std::string resolved_config_json(const RunConfig& cfg) {
    ordered_json j;
    j["dataset"] = cfg.dataset;
    j["checkpoint"] = cfg.checkpoint;
    j["out"] = cfg.out;
    j["split"] = cfg.split;
    j["scalar"] = cfg.scalar;
    j["context_size"] = cfg.context_size;
    j["sigma"] = cfg.sigma;
    j["tome"] = cfg.tome;
    j["horizons"] = cfg.horizons;
    j["at"] = cfg.at;
    j["rates"] = cfg.rates;
    j["seed"] = cfg.seed;
    j["max_windows"] = cfg.max_windows;
    j["threads"] = cfg.threads;
    j["model"] = {{"d_model", cfg.model.d_model},
                  {"d_ff", cfg.model.d_ff},
                  {"n_layers", cfg.model.n_layers},
                  {"n_heads", cfg.model.n_heads},
                  {"n_tome", cfg.model.n_tome},
                  {"dropout", cfg.model.dropout},
                  {"hsr_reference_context", cfg.model.hsr_reference_context}};
    j["train"] = {{"preset", cfg.train.preset},
                  {"minibatch", cfg.train.minibatch},
                  {"max_iters", cfg.train.max_iters},
                  {"val_every", cfg.train.val_every},
                  {"val_windows", cfg.train.val_windows},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"log_every", cfg.train.log_every},
                  {"huber_delta", cfg.train.huber_delta},
                  {"decay_half_life", cfg.train.decay_half_life},
                  {"theta_lambda", cfg.train.theta_lambda},
                  {"target_points", cfg.train.target_points},
                  {"target_sigma", cfg.train.target_sigma}};
    return j.dump(2) + "\n";
}

void write_resolved_config(const RunConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path path = fs::path(dir) / "resolved_config.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw user_error("cannot write " + path.string());
    out << resolved_config_json(cfg);
}

void write_run_manifest(const std::string& dir, std::uint64_t seed,
                        const std::vector<std::string>& subsystems) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    ordered_json j;
    j["seed"] = seed;
    j["generator"] = "one root generator, split once per subsystem by label";
    j["subsystem_splits"] = subsystems;
    const fs::path path = fs::path(dir) / "run_manifest.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw user_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace dam
