// Command-line interface: train, forecast, impute, tune, eval, ablate,
// sweep, inspect. Every command writes its resolved configuration and a run
// manifest next to its outputs; failures leave a FAILED marker in the output
// directory and a single-line error on stderr. Exit codes: 0 success, 1 user
// error (flags, config, files), 2 internal error.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dam/csv.hpp"
#include "dam/eval.hpp"
#include "dam/hsr.hpp"
#include "dam/model.hpp"
#include "dam/run_config.hpp"
#include "dam/svg.hpp"
#include "dam/train.hpp"

namespace fs = std::filesystem;
using namespace dam;

namespace {

std::string fmt(double x) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::string one_line(std::string msg) {
    for (char& c : msg) {
        if (c == '\n' || c == '\r') c = ';';
    }
    return msg;
}

// Extra per-command settings that live outside RunConfig.
struct ExtraArgs {
    std::vector<int> contexts;  // tune/sweep grids
    std::vector<double> sigmas; // tune grid
    int reps = 20;              // sweep repetitions
    std::string method = "basis";  // impute: basis | model
    std::vector<std::string> ablate_names;
};

void clear_failed_marker(const std::string& out_dir) {
    std::error_code ec;
    fs::remove(fs::path(out_dir) / "FAILED", ec);
}

void write_failed_marker(const std::string& out_dir, const std::string& msg) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream out(fs::path(out_dir) / "FAILED", std::ios::trunc);
    if (out) out << one_line(msg) << "\n";
}

Dataset load_required_dataset(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw user_error("--dataset is required for this command");
    return load_dataset(cfg.dataset);
}

template <typename S>
DamModel<S> load_required_model(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw user_error("--checkpoint is required for this command");
    return load_checkpoint<S>(cfg.checkpoint);
}

EvalProtocol protocol_from(const RunConfig& cfg) {
    EvalProtocol p;
    p.context_size = cfg.context_size;
    p.sigma = cfg.sigma;
    p.horizons = cfg.horizons;
    p.split = cfg.split;
    p.max_windows = cfg.max_windows;
    p.seed = cfg.seed;
    p.n_tome = cfg.tome;
    return p;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw user_error("cannot write " + path.string());
    return out;
}

// Last valid sample index of the split for a channel (the forecast anchor).
std::size_t anchor_at_split_end(const TimeValueSeries& ch, IndexRange range) {
    for (std::size_t i = range.end; i-- > range.begin;) {
        if (ch.valid[i]) return i;
    }
    throw user_error("channel '" + ch.name + "' has no valid samples in the chosen split");
}

// ---------------------------------------------------------------------------

template <typename S>
int cmd_train(RunConfig& cfg, const ExtraArgs&) {
    const Dataset data = load_required_dataset(cfg);

    Rng root(cfg.seed);
    DamModel<S> model = [&]() {
        if (!cfg.checkpoint.empty()) return load_checkpoint<S>(cfg.checkpoint);
        DamModel<S> m(cfg.model);
        Rng init_rng = root.split("init");
        m.init_params(init_rng);
        return m;
    }();

    TrainConfig tc;
    tc.context_hsr = HsrConfig{cfg.sigma, cfg.context_size};
    tc.target_hsr = HsrConfig{cfg.train.target_sigma, cfg.train.target_points};
    tc.minibatch = cfg.train.minibatch;
    tc.schedule = cfg.train.preset == "finetune" ? finetune_schedule() : standard_schedule();
    tc.max_iters = cfg.train.max_iters;
    tc.huber_delta = cfg.train.huber_delta;
    tc.decay_half_life = cfg.train.decay_half_life;
    tc.theta_lambda = cfg.train.theta_lambda;
    tc.seed = cfg.seed;
    tc.val_every = cfg.train.val_every;
    tc.val_windows = cfg.train.val_windows;
    tc.checkpoint_every = cfg.train.checkpoint_every;
    tc.log_every = cfg.train.log_every;
    tc.out_dir = cfg.out;

    write_run_manifest(cfg.out, cfg.seed, {"init", "batch", "dropout", "val"});
    const TrainResult<S> res = train(model, data, tc, &std::cout);
    std::cout << "trained " << res.steps << " steps; final loss " << fmt(res.final_loss)
              << "; checkpoint at " << res.checkpoint_dir << "\n";
    return 0;
}

template <typename S>
int cmd_forecast(RunConfig& cfg, const ExtraArgs&) {
    const Dataset data = load_required_dataset(cfg);
    const DamModel<S> model = load_required_model<S>(cfg);
    const IndexRange range = split_range(data, cfg.split);
    write_run_manifest(cfg.out, cfg.seed, {"context"});
    Rng root(cfg.seed);

    // Query times: explicit --at offsets, or the tick grid out to the
    // largest horizon.
    std::vector<double> times = cfg.at;
    int h_max = 0;
    if (times.empty()) {
        h_max = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
        for (int h = 1; h <= h_max; ++h) {
            times.push_back(static_cast<double>(h) * data.channels.front().resolution);
        }
    }

    std::ofstream csv = open_out(fs::path(cfg.out) / "forecast.csv");
    csv << "channel,time_days,prediction,truth\n";
    std::vector<SvgSeries> chart;
    for (std::size_t ci = 0; ci < data.channels.size(); ++ci) {
        const TimeValueSeries& ch = data.channels[ci];
        const std::size_t anchor = anchor_at_split_end(ch, range);
        const TimeValueSeries rebased = rebase_to_now(ch, anchor);
        Rng rng = root.split("context").split(ch.name);
        const HsrDraw draw = sample_context(rebased, HsrConfig{cfg.sigma, cfg.context_size}, rng);
        const PreparedContext<S> prep = model.prepare_context(draw.times, draw.values);
        Graph<S> g;
        ForwardOptions<S> opt;
        opt.n_tome = cfg.tome;
        const ForwardResult fr = model.forward(g, prep, opt);
        const ForecastFunction fn = model.to_forecast_function(g, fr, prep.norm);
        save_forecast_function(
            (fs::path(cfg.out) / ("forecast_function_" + ch.name + ".csv")).string(), fn);

        const std::vector<double> preds = evaluate(fn, times);
        for (std::size_t i = 0; i < times.size(); ++i) {
            csv << ch.name << ',' << fmt(times[i]) << ',' << fmt(preds[i]) << ',';
            // Truth exists only for grid-aligned offsets inside the series.
            const double steps = times[i] / ch.resolution;
            const auto step = static_cast<std::int64_t>(std::llround(steps));
            if (std::abs(steps - static_cast<double>(step)) < 1e-9) {
                const std::int64_t idx = static_cast<std::int64_t>(anchor) + step;
                if (idx >= 0 && idx < static_cast<std::int64_t>(ch.size()) &&
                    ch.valid[static_cast<std::size_t>(idx)]) {
                    csv << fmt(ch.values[static_cast<std::size_t>(idx)]);
                }
            }
            csv << '\n';
        }

        if (ci == 0) {
            SvgSeries hist;
            hist.label = ch.name + " (history)";
            hist.color = "#8a8a8a";
            const std::size_t tail = std::min<std::size_t>(anchor + 1, 256);
            for (std::size_t i = anchor + 1 - tail; i <= anchor; ++i) {
                if (!ch.valid[i]) continue;
                hist.x.push_back(rebased.time(i));
                hist.y.push_back(ch.values[i]);
            }
            SvgSeries pred;
            pred.label = ch.name + " (forecast)";
            pred.color = "#d33a3a";
            pred.x = times;
            pred.y = preds;
            chart.push_back(std::move(hist));
            chart.push_back(std::move(pred));
        }
    }
    write_line_chart((fs::path(cfg.out) / "forecast.svg").string(), "Forecast from split end",
                     chart);
    std::cout << "forecast for " << data.channels.size() << " channel(s) at " << times.size()
              << " time(s) written to " << cfg.out << "\n";
    return 0;
}

template <typename S>
int cmd_impute(RunConfig& cfg, const ExtraArgs& extra) {
    const Dataset data = load_required_dataset(cfg);
    ImputationMethod method;
    if (extra.method == "basis") {
        method = ImputationMethod::basis_fit;
    } else if (extra.method == "model") {
        method = ImputationMethod::model;
    } else {
        throw user_error("--method must be basis or model");
    }
    write_run_manifest(cfg.out, cfg.seed, {});

    ImputationReport report;
    if (method == ImputationMethod::model) {
        const DamModel<S> model = load_required_model<S>(cfg);
        report = evaluate_imputation(model, data, cfg.rates, protocol_from(cfg), method,
                                     &std::cout);
    } else {
        // The basis fit needs no weights; a default-config model supplies the
        // frequency set and preparation only.
        const DamModel<S> model{ModelConfig{}};
        report = evaluate_imputation(model, data, cfg.rates, protocol_from(cfg), method,
                                     &std::cout);
    }

    std::ofstream csv = open_out(fs::path(cfg.out) / "imputation.csv");
    csv << "rate_percent,skipped,mse,nmse,baseline_linear_mse,points,windows\n";
    for (const auto& r : report.rates) {
        csv << fmt(r.rate) << ',' << (r.skipped ? 1 : 0) << ',' << fmt(r.mse) << ','
            << fmt(r.nmse) << ',' << fmt(r.baseline_mse) << ',' << r.points << ',' << r.windows
            << '\n';
        if (!r.skipped) {
            std::cout << "rate " << r.rate << "%: mse " << fmt(r.mse) << " (linear baseline "
                      << fmt(r.baseline_mse) << ") over " << r.points << " points\n";
        }
    }
    return 0;
}

template <typename S>
int cmd_tune(RunConfig& cfg, const ExtraArgs& extra) {
    const Dataset data = load_required_dataset(cfg);
    const DamModel<S> model = load_required_model<S>(cfg);
    std::vector<int> contexts = extra.contexts;
    std::vector<double> sigmas = extra.sigmas;
    if (contexts.empty()) contexts = {180, 360, 540, 720, 1080};
    if (sigmas.empty()) sigmas = {180.0, 360.0, 720.0, 1440.0, 2880.0};
    write_run_manifest(cfg.out, cfg.seed, {"context"});

    const HsrTuneResult result = tune_hsr(model, data, contexts, sigmas, protocol_from(cfg));

    std::ofstream csv = open_out(fs::path(cfg.out) / "tune.csv");
    csv << "context_size";
    for (double s : sigmas) csv << ",sigma_" << fmt(s);
    csv << '\n';
    for (std::size_t ri = 0; ri < contexts.size(); ++ri) {
        csv << contexts[ri];
        for (std::size_t si = 0; si < sigmas.size(); ++si) {
            csv << ',' << fmt(result.score(static_cast<Eigen::Index>(ri),
                                           static_cast<Eigen::Index>(si)));
        }
        csv << '\n';
    }

    std::vector<std::string> row_labels, col_labels;
    for (int c : contexts) row_labels.push_back("ctx " + std::to_string(c));
    for (double s : sigmas) col_labels.push_back("sigma " + fmt(s));
    write_heatmap((fs::path(cfg.out) / "tune.svg").string(),
                  "History sampling tuning (mean NMSE, " + cfg.split + " split)", row_labels,
                  col_labels, result.score);

    std::cout << "best context " << result.best_context << ", sigma " << fmt(result.best_sigma)
              << " (mean NMSE " << fmt(result.best_score) << ") on the " << cfg.split
              << " split\n";
    return 0;
}

template <typename S>
int cmd_eval(RunConfig& cfg, const ExtraArgs&) {
    const Dataset data = load_required_dataset(cfg);
    const DamModel<S> model = load_required_model<S>(cfg);
    write_run_manifest(cfg.out, cfg.seed, {"context"});
    const ForecastReport report = evaluate_forecast(model, data, protocol_from(cfg));

    std::ofstream csv = open_out(fs::path(cfg.out) / "eval.csv");
    csv << "horizon,channel,nmse,nmae,mse,points\n";
    for (const auto& hr : report.horizons) {
        for (const auto& ch : hr.channels) {
            csv << hr.horizon << ',' << ch.name << ',' << fmt(ch.nmse) << ',' << fmt(ch.nmae)
                << ',' << fmt(ch.mse) << ',' << ch.points << '\n';
        }
        csv << hr.horizon << ",MEAN," << fmt(hr.mean_nmse) << ',' << fmt(hr.mean_nmae) << ','
            << fmt(hr.mean_mse) << ",\n";
        std::cout << "horizon " << hr.horizon << ": nmse " << fmt(hr.mean_nmse) << " nmae "
                  << fmt(hr.mean_nmae) << " over " << report.windows << " windows\n";
    }
    return 0;
}

template <typename S>
int cmd_ablate(RunConfig& cfg, const ExtraArgs& extra) {
    const Dataset data = load_required_dataset(cfg);
    const DamModel<S> model = load_required_model<S>(cfg);
    std::vector<std::string> components =
        extra.ablate_names.empty() ? ablation_component_names() : extra.ablate_names;
    AblationMask::from_names(components);  // validate names before any work
    write_run_manifest(cfg.out, cfg.seed, {"context"});

    const auto results = ablation_sweep(model, data, protocol_from(cfg), components);
    std::ofstream csv = open_out(fs::path(cfg.out) / "ablate.csv");
    csv << "component,horizon,mean_nmse,mean_nmae,mean_mse,windows\n";
    for (const auto& [name, report] : results) {
        for (const auto& hr : report.horizons) {
            csv << name << ',' << hr.horizon << ',' << fmt(hr.mean_nmse) << ','
                << fmt(hr.mean_nmae) << ',' << fmt(hr.mean_mse) << ',' << report.windows << '\n';
        }
        std::cout << name << ": nmse " << fmt(report.horizons.front().mean_nmse) << "\n";
    }
    return 0;
}

template <typename S>
int cmd_sweep(RunConfig& cfg, const ExtraArgs& extra) {
    const Dataset data = load_required_dataset(cfg);
    const DamModel<S> model = load_required_model<S>(cfg);
    std::vector<int> contexts = extra.contexts;
    if (contexts.empty()) contexts = {135, 270, 540, 1080};
    write_run_manifest(cfg.out, cfg.seed, {"cost"});

    const auto rows = cost_sweep(model, data, contexts, protocol_from(cfg), extra.reps);
    std::ofstream csv = open_out(fs::path(cfg.out) / "sweep.csv");
    csv << "context_size,median_forward_ms,horizon_mse\n";
    for (const auto& row : rows) {
        csv << row.context << ',' << fmt(row.median_ms) << ',' << fmt(row.mse) << '\n';
        std::cout << "context " << row.context << ": " << fmt(row.median_ms) << " ms, mse "
                  << fmt(row.mse) << "\n";
    }
    return 0;
}

template <typename S>
int cmd_inspect(RunConfig& cfg, const ExtraArgs&) {
    const Dataset data = load_required_dataset(cfg);
    const DamModel<S> model = load_required_model<S>(cfg);
    const IndexRange range = split_range(data, cfg.split);
    write_run_manifest(cfg.out, cfg.seed, {"context"});

    const TimeValueSeries& ch = data.channels.front();
    const std::size_t anchor = anchor_at_split_end(ch, range);
    const TimeValueSeries rebased = rebase_to_now(ch, anchor);
    Rng root(cfg.seed);
    Rng rng = root.split("context");
    const HsrDraw draw = sample_context(rebased, HsrConfig{cfg.sigma, cfg.context_size}, rng);
    const PreparedContext<S> prep = model.prepare_context(draw.times, draw.values);

    Graph<S> g;
    AttentionRecord<S> record;
    ForwardOptions<S> opt;
    opt.n_tome = cfg.tome;
    opt.record = &record;
    const ForwardResult fr = model.forward(g, prep, opt);
    (void)fr;

    std::ofstream csv = open_out(fs::path(cfg.out) / "inspect.csv");
    csv << "layer,kind,head,token,tokens_merged,context_first,context_last,cumulative_attention\n";
    for (std::size_t li = 0; li < record.layers.size(); ++li) {
        const auto& layer = record.layers[li];
        const auto emit = [&](const char* kind, const std::vector<Matrix<S>>& probs,
                              Eigen::Index n_lead) {
            for (std::size_t h = 0; h < probs.size(); ++h) {
                const std::vector<double> cum = cumulative_attention(probs[h], n_lead);
                for (std::size_t t = 0; t < cum.size(); ++t) {
                    const auto& prov = layer.provenance[t];
                    csv << li << ',' << kind << ',' << h << ',' << t << ',' << prov.size() << ','
                        << prov.front() << ',' << prov.back() << ',' << fmt(cum[t]) << '\n';
                }
            }
        };
        // Self-attention queries include the affine token (one leading row and
        // column); cross-attention keys lead with the affine token as well.
        emit("self", layer.self_probs, 1);
        emit("cross", layer.cross_probs, 1);
        std::cout << "layer " << li << ": merged " << layer.r << " tokens, "
                  << layer.provenance.size() << " remain\n";
    }
    std::cout << "attention summary written to " << (fs::path(cfg.out) / "inspect.csv").string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int dispatch(const std::string& cmd, RunConfig& cfg, const ExtraArgs& extra) {
    cfg.validate();
    fs::create_directories(cfg.out);
    clear_failed_marker(cfg.out);
    write_resolved_config(cfg, cfg.out);
    try {
        const bool f64 = cfg.scalar == "float64";
        if (cmd == "train") return f64 ? cmd_train<double>(cfg, extra) : cmd_train<float>(cfg, extra);
        if (cmd == "forecast")
            return f64 ? cmd_forecast<double>(cfg, extra) : cmd_forecast<float>(cfg, extra);
        if (cmd == "impute")
            return f64 ? cmd_impute<double>(cfg, extra) : cmd_impute<float>(cfg, extra);
        if (cmd == "tune") return f64 ? cmd_tune<double>(cfg, extra) : cmd_tune<float>(cfg, extra);
        if (cmd == "eval") return f64 ? cmd_eval<double>(cfg, extra) : cmd_eval<float>(cfg, extra);
        if (cmd == "ablate")
            return f64 ? cmd_ablate<double>(cfg, extra) : cmd_ablate<float>(cfg, extra);
        if (cmd == "sweep")
            return f64 ? cmd_sweep<double>(cfg, extra) : cmd_sweep<float>(cfg, extra);
        if (cmd == "inspect")
            return f64 ? cmd_inspect<double>(cfg, extra) : cmd_inspect<float>(cfg, extra);
        throw std::logic_error("unhandled command " + cmd);
    } catch (const std::exception& e) {
        write_failed_marker(cfg.out, e.what());
        throw;
    }
}

bool config_file_sets(const std::string& path, const std::string& key) {
    std::ifstream in(path);
    if (!in) return false;
    try {
        const auto j = nlohmann::json::parse(in);
        return j.is_object() && j.contains(key);
    } catch (const nlohmann::json::exception&) {
        return false;
    }
}

int run(int argc, char** argv) {
    RunConfig cfg;
    cfg.seed = 42;
    ExtraArgs extra;

    // The config file loads first so explicit flags can override it.
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    }
    if (!config_path.empty()) merge_config_file(cfg, config_path);

    // Environment override for the math thread count.
    if (const char* env = std::getenv("DAM_THREADS")) {
        int threads = 0;
        const std::string text(env);
        const auto res = std::from_chars(text.data(), text.data() + text.size(), threads);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size() || threads < 0) {
            throw user_error("DAM_THREADS must be a non-negative integer, got '" + text + "'");
        }
        cfg.threads = threads;
    }

    CLI::App app{"Universal forecaster over irregular time-value pairs"};
    app.require_subcommand(1);

    bool explicit_split = config_file_sets(config_path, "split");
    std::vector<CLI::App*> subs;
    const auto add_shared = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (loaded before flags)");
        sub->add_option("--dataset", cfg.dataset, "dataset manifest path");
        sub->add_option("--checkpoint", cfg.checkpoint, "checkpoint directory");
        sub->add_option("--out", cfg.out, "output directory");
        sub->add_option("--context-size", cfg.context_size, "context points drawn per window");
        sub->add_option("--sigma", cfg.sigma, "history sampling sigma (steps)");
        sub->add_option("--tome", cfg.tome,
                        "merge target token count (-1 keeps the training ratio)");
        sub->add_option("--seed", cfg.seed, "root random seed");
        sub->add_option("--scalar", cfg.scalar, "float32 or float64");
        sub->add_option("--split", cfg.split, "train, valid, or test")
            ->each([&](const std::string&) { explicit_split = true; });
        sub->add_option("--max-windows", cfg.max_windows,
                        "cap evaluated windows (0 = full protocol)");
        sub->add_option("--threads", cfg.threads, "math threads (DAM_THREADS overrides)");
        subs.push_back(sub);
        return sub;
    };

    CLI::App* train_cmd = add_shared(app.add_subcommand("train", "train or fine-tune a model"));
    train_cmd->add_option("--preset", cfg.train.preset, "standard or finetune");
    train_cmd->add_option("--iters", cfg.train.max_iters, "cap the scheduled iteration count");
    train_cmd->add_option("--minibatch", cfg.train.minibatch, "examples per step");

    CLI::App* forecast_cmd =
        add_shared(app.add_subcommand("forecast", "forecast from the end of a split"));
    forecast_cmd->add_option("--horizons", cfg.horizons, "horizons in steps")->delimiter(',');
    forecast_cmd->add_option("--at", cfg.at, "query times in days (any sign)")->delimiter(',');

    CLI::App* impute_cmd =
        add_shared(app.add_subcommand("impute", "reconstruct masked spans"));
    impute_cmd->add_option("--rates", cfg.rates, "mask rates in percent")->delimiter(',');
    impute_cmd->add_option("--method", extra.method, "basis or model");

    CLI::App* tune_cmd = add_shared(
        app.add_subcommand("tune", "grid-search context size and sigma (defaults to valid split)"));
    tune_cmd->add_option("--contexts", extra.contexts, "context sizes to try")->delimiter(',');
    tune_cmd->add_option("--sigmas", extra.sigmas, "sigma values to try")->delimiter(',');
    tune_cmd->add_option("--horizons", cfg.horizons, "horizons in steps")->delimiter(',');

    CLI::App* eval_cmd = add_shared(app.add_subcommand("eval", "sliding-window metrics"));
    eval_cmd->add_option("--horizons", cfg.horizons, "horizons in steps")->delimiter(',');

    CLI::App* ablate_cmd =
        add_shared(app.add_subcommand("ablate", "metrics with components bypassed"));
    ablate_cmd->add_option("--ablate", extra.ablate_names,
                           "components: self-attn cross-attn ff_tv ff_b ff_b_cross tome")
        ->delimiter(',');
    ablate_cmd->add_option("--horizons", cfg.horizons, "horizons in steps")->delimiter(',');

    CLI::App* sweep_cmd =
        add_shared(app.add_subcommand("sweep", "forward cost versus context size"));
    sweep_cmd->add_option("--contexts", extra.contexts, "context sizes to time")->delimiter(',');
    sweep_cmd->add_option("--reps", extra.reps, "repetitions per context");
    sweep_cmd->add_option("--horizons", cfg.horizons, "horizons in steps")->delimiter(',');

    CLI::App* inspect_cmd =
        add_shared(app.add_subcommand("inspect", "attention and merge summary at one anchor"));
    (void)inspect_cmd;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }

    CLI::App* picked = app.get_subcommands().front();
    const std::string cmd = picked->get_name();
    if (cmd == "tune" && !explicit_split) cfg.split = "valid";
    if (cfg.threads > 0) Eigen::setNbThreads(cfg.threads);
    return dispatch(cmd, cfg, extra);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const user_error& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 2;
    }
}
