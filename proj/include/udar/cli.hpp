#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "udar/config.hpp"
#include "udar/data.hpp"
#include "udar/ensemble.hpp"
#include "udar/errors.hpp"
#include "udar/eval.hpp"
#include "udar/manifest.hpp"
#include "udar/model.hpp"
#include "udar/synthgen.hpp"
#include "udar/trainer.hpp"

namespace udar::cli {

// Exit codes, one per error family.
inline constexpr int kOk = 0;
inline constexpr int kOther = 1;
inline constexpr int kUsage = 2;
inline constexpr int kSchema = 3;
inline constexpr int kParse = 4;
inline constexpr int kContract = 5;
inline constexpr int kIo = 6;
inline constexpr int kFormat = 7;

inline std::string out_dir_or_env(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("UDAR_OUT_DIR")) return env;
    return ".";
}

inline std::size_t workers_from_env() {
    if (const char* env = std::getenv("UDAR_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    ShiftConfig config;
    std::string out_dir;
};

struct SynthSummary {
    std::string source_csv;
    std::string target_csv;
    std::string target_eval_csv;
};

inline SynthSummary cmd_synth(const SynthOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest manifest;
    manifest.command = "synth";
    manifest.seed = opt.config.seed;
    manifest.started_at = iso_timestamp_utc();

    const SynthCorpus corpus = generate_corpus(opt.config);
    const std::string dir = out_dir_or_env(opt.out_dir);
    std::filesystem::create_directories(dir);
    SynthSummary s;
    s.source_csv = dir + "/source.csv";
    s.target_csv = dir + "/target.csv";
    s.target_eval_csv = dir + "/target_eval.csv";

    write_recordings_csv(s.source_csv, corpus_to_recordings(corpus.source, nullptr,
                                                            opt.config.sample_rate_hz, false));
    write_recordings_csv(
        s.target_csv, corpus_to_recordings(corpus.target, &corpus.target_hidden_labels,
                                           opt.config.sample_rate_hz, false));
    write_recordings_csv(
        s.target_eval_csv, corpus_to_recordings(corpus.target, &corpus.target_hidden_labels,
                                                opt.config.sample_rate_hz, true));

    manifest.outputs = {s.source_csv, s.target_csv, s.target_eval_csv};
    nlohmann::json digests = nlohmann::json::object();
    for (const auto& p : manifest.outputs) digests[p] = file_digest_hex(p);
    manifest.extra = {{"output_digests", digests}};
    manifest.finished_at = iso_timestamp_utc();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(dir + "/synth_manifest.json", manifest);
    return s;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareOptions {
    std::string input_csv;
    std::string out_prefix;
    std::size_t median_kernel = 3;  // 1 disables filtering
    double window_ms = 1000.0;
    double overlap = 0.5;
    double rate_hz = 0.0;  // 0 derives the rate from timestamps
    std::string scaler_path;  // apply stored statistics instead of fitting
    std::string expect_domain;  // assert every row carries this domain
    std::size_t num_classes = 0;  // 0 derives from labels
    std::uint64_t seed = 1;
    SplitSpec split;
};

struct PrepareSummary {
    std::size_t window_count = 0;
    std::size_t window_len = 0;
    std::size_t stride = 0;
    std::vector<std::string> warnings;
};

inline ChannelScaler load_scaler(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
        ChannelScaler s;
        s.mins = j.at("mins").get<std::vector<double>>();
        s.maxs = j.at("maxs").get<std::vector<double>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad scaler file (" + e.what() + ")");
    }
}

inline void save_scaler(const std::string& path, const ChannelScaler& s) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << nlohmann::json{{"mins", s.mins}, {"maxs", s.maxs}}.dump(2) << "\n";
}

inline PrepareSummary cmd_prepare(const PrepareOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    if (opt.overlap < 0.0 || opt.overlap > 0.95) {
        throw ContractViolation("prepare: overlap must lie in [0, 0.95]");
    }
    if (!(opt.window_ms > 0.0)) throw ContractViolation("prepare: window_ms must be positive");

    RunManifest manifest;
    manifest.command = "prepare";
    manifest.seed = opt.seed;
    manifest.started_at = iso_timestamp_utc();
    manifest.add_input(opt.input_csv);

    std::vector<SensorRecording> recs = read_recordings_csv(opt.input_csv);
    if (recs.empty()) throw ParseError(opt.input_csv + ": no recordings");
    if (!opt.expect_domain.empty()) {
        const Domain want = domain_from_string(opt.expect_domain);
        for (const auto& r : recs) {
            if (r.domain != want) {
                throw ContractViolation("prepare: subject '" + r.subject_id + "' has domain " +
                                        to_string(r.domain) + ", expected " + opt.expect_domain);
            }
        }
    }
    for (const auto& r : recs) {
        if (r.domain == Domain::source && !r.labeled()) {
            throw ContractViolation("prepare: source subject '" + r.subject_id +
                                    "' has no labels; the source domain must be labeled");
        }
    }

    PrepareSummary summary;
    WindowedDataset ds;
    // filter -> window; normalization happens after the split is known
    for (std::size_t i = 0; i < recs.size(); ++i) {
        SensorRecording rec = opt.median_kernel > 1 ? median_filter(recs[i], opt.median_kernel)
                                                    : recs[i];
        const double rate = opt.rate_hz > 0.0 ? opt.rate_hz : rec.sample_rate_hz;
        if (!(rate > 0.0)) {
            throw ContractViolation("prepare: cannot derive sample rate for subject '" +
                                    rec.subject_id + "'; pass --rate-hz");
        }
        const auto W = static_cast<std::size_t>(std::lround(opt.window_ms / 1000.0 * rate));
        if (W == 0) throw ContractViolation("prepare: window shorter than one sample");
        if (ds.window_len == 0) {
            ds.window_len = W;
            ds.channel_count = rec.channel_count();
            summary.window_len = W;
            summary.stride = static_cast<std::size_t>(std::max<long>(
                1, std::lround(static_cast<double>(W) * (1.0 - opt.overlap))));
        } else if (W != ds.window_len) {
            throw ContractViolation("prepare: subject '" + rec.subject_id +
                                    "' implies window length " + std::to_string(W) +
                                    " but the dataset uses " + std::to_string(ds.window_len) +
                                    "; resampling is out of scope");
        } else if (rec.channel_count() != ds.channel_count) {
            throw ContractViolation("prepare: subject '" + rec.subject_id + "' has " +
                                    std::to_string(rec.channel_count()) + " channels, expected " +
                                    std::to_string(ds.channel_count));
        }
        WindowingResult wr = make_windows(rec, ds.window_len, opt.overlap);
        for (auto& warn : wr.warnings) summary.warnings.push_back(std::move(warn));
        for (auto& w : wr.windows) ds.windows.push_back(std::move(w));
    }
    if (ds.windows.empty()) {
        throw ContractViolation("prepare: no windows produced; check --window-ms");
    }

    int max_label = -1;
    for (const auto& w : ds.windows) {
        if (w.label) max_label = std::max(max_label, *w.label);
    }
    ds.num_classes = opt.num_classes > 0 ? opt.num_classes
                                         : static_cast<std::size_t>(max_label + 1);

    // split source windows; fit scaler on the source training split only
    std::vector<std::size_t> source_idx;
    for (std::size_t i = 0; i < ds.windows.size(); ++i) {
        if (ds.windows[i].domain == Domain::source) source_idx.push_back(i);
    }
    ChannelScaler scaler;
    bool scaler_fitted = false;
    if (!source_idx.empty()) {
        WindowedDataset source_view;
        source_view.channel_count = ds.channel_count;
        source_view.window_len = ds.window_len;
        source_view.num_classes = ds.num_classes;
        for (std::size_t i : source_idx) source_view.windows.push_back(ds.windows[i]);
        SplitSpec spec = opt.split;
        spec.seed = opt.seed;
        const SplitResult split = split_dataset(source_view, spec);
        for (auto& w : split.warnings) summary.warnings.push_back(w);
        for (std::size_t k : split.train) ds.windows[source_idx[k]].split = Split::train;
        for (std::size_t k : split.val) ds.windows[source_idx[k]].split = Split::val;
        for (std::size_t k : split.test) ds.windows[source_idx[k]].split = Split::test;
        if (opt.scaler_path.empty()) {
            std::vector<std::size_t> train_rows;
            for (std::size_t k : split.train) train_rows.push_back(source_idx[k]);
            scaler = fit_minmax(ds, train_rows);
            scaler_fitted = true;
        }
    }
    if (!scaler_fitted) {
        if (opt.scaler_path.empty()) {
            throw ContractViolation(
                "prepare: input has no source windows; pass --scaler with the statistics fitted "
                "on the source training split");
        }
        scaler = load_scaler(opt.scaler_path);
        manifest.add_input(opt.scaler_path);
    }
    ds = apply_minmax(std::move(ds), scaler);

    write_windowed(opt.out_prefix, ds, &scaler);
    if (scaler_fitted) save_scaler(opt.out_prefix + ".scaler.json", scaler);

    summary.window_count = ds.windows.size();
    manifest.outputs = {opt.out_prefix + ".meta.json", opt.out_prefix + ".manifest.csv",
                        opt.out_prefix + ".data.f64"};
    if (scaler_fitted) manifest.outputs.push_back(opt.out_prefix + ".scaler.json");
    manifest.extra = {{"warnings", summary.warnings},
                      {"window_len", ds.window_len},
                      {"window_count", ds.windows.size()}};
    manifest.finished_at = iso_timestamp_utc();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(opt.out_prefix + ".run.json", manifest);
    for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
    return summary;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string config_path;
    std::string from_sweep;  // sweep output directory; uses its best_config.json
    std::string source_prefix;
    std::string target_prefix;
    std::string hidden_prefix;  // labeled twin of the target windows
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> ablation_override;
    bool dump_ensemble = false;
};

struct TrainSummary {
    std::string checkpoint_path;
    std::string report_path;
    double best_val_macro_f1 = 0.0;
    double final_target_macro_f1 = std::numeric_limits<double>::quiet_NaN();
};

inline WindowedDataset load_domain_windows(const std::string& prefix, Domain want,
                                           bool strip_labels) {
    LoadedWindows loaded = read_windowed(prefix);
    WindowedDataset& ds = loaded.dataset;
    WindowedDataset out;
    out.channel_count = ds.channel_count;
    out.window_len = ds.window_len;
    out.num_classes = ds.num_classes;
    for (auto& w : ds.windows) {
        if (w.domain != want) continue;
        if (strip_labels) w.label.reset();
        out.windows.push_back(std::move(w));
    }
    if (out.windows.empty()) {
        throw ContractViolation(prefix + ": no " + to_string(want) + "-domain windows");
    }
    return out;
}

/// The hidden twin must describe the same windows (subject and offset order).
inline std::vector<int> hidden_labels_from_twin(const WindowedDataset& target,
                                                const std::string& hidden_prefix) {
    LoadedWindows loaded = read_windowed(hidden_prefix);
    const WindowedDataset& twin = loaded.dataset;
    if (twin.windows.size() != target.windows.size()) {
        throw ContractViolation(hidden_prefix + ": " + std::to_string(twin.windows.size()) +
                                " windows but the target set has " +
                                std::to_string(target.windows.size()));
    }
    std::vector<int> labels;
    labels.reserve(twin.windows.size());
    for (std::size_t i = 0; i < twin.windows.size(); ++i) {
        const Window& a = target.windows[i];
        const Window& b = twin.windows[i];
        if (a.subject_id != b.subject_id || a.offset != b.offset) {
            throw ContractViolation(hidden_prefix + ": window " + std::to_string(i) +
                                    " does not align with the target set");
        }
        if (!b.label) {
            throw ContractViolation(hidden_prefix + ": window " + std::to_string(i) +
                                    " carries no label");
        }
        labels.push_back(*b.label);
    }
    return labels;
}

inline TrainSummary cmd_train(const TrainOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string config_path = opt.config_path;
    if (!opt.from_sweep.empty()) {
        if (!config_path.empty()) {
            throw ContractViolation("train: pass either --config or --from-sweep, not both");
        }
        config_path = opt.from_sweep + "/best_config.json";
    }
    if (config_path.empty()) throw ContractViolation("train: --config (or --from-sweep) required");

    TrainConfig cfg = load_train_config(config_path);
    if (opt.seed_override) cfg.seed = *opt.seed_override;
    if (opt.ablation_override) cfg.ablation = ablation_from_string(*opt.ablation_override);

    RunManifest manifest;
    manifest.command = "train";
    manifest.config_path = config_path;
    manifest.config_hash = file_digest_hex(config_path);
    manifest.seed = cfg.seed;
    manifest.started_at = iso_timestamp_utc();

    const WindowedDataset source = load_domain_windows(opt.source_prefix, Domain::source, false);
    manifest.add_input(opt.source_prefix + ".manifest.csv");
    manifest.add_input(opt.source_prefix + ".data.f64");
    WindowedDataset target;
    std::vector<int> hidden;
    const std::vector<int>* hidden_ptr = nullptr;
    if (!opt.target_prefix.empty()) {
        target = load_domain_windows(opt.target_prefix, Domain::target, true);
        target.num_classes = source.num_classes;
        manifest.add_input(opt.target_prefix + ".manifest.csv");
        manifest.add_input(opt.target_prefix + ".data.f64");
        if (!opt.hidden_prefix.empty()) {
            hidden = hidden_labels_from_twin(target, opt.hidden_prefix);
            hidden_ptr = &hidden;
            manifest.add_input(opt.hidden_prefix + ".manifest.csv");
        }
    } else if (cfg.ablation != AblationMode::baseline) {
        throw ContractViolation("train: --target required for mode " + to_string(cfg.ablation));
    }

    const std::string dir = out_dir_or_env(opt.out_dir);
    std::filesystem::create_directories(dir);
    if (opt.dump_ensemble) cfg.ensemble_dump_csv = dir + "/ensemble.csv";

    TrainResult result = train(source, target, cfg, hidden_ptr);

    TrainSummary summary;
    summary.checkpoint_path = dir + "/checkpoint.json";
    summary.report_path = dir + "/report.csv";
    summary.best_val_macro_f1 = result.report.best_val_macro_f1;
    if (!result.report.epochs.empty()) {
        summary.final_target_macro_f1 = result.report.epochs.back().target_macro_f1;
    }
    save_checkpoint(summary.checkpoint_path, result.model_config, result.params, cfg.seed);
    write_train_report_csv(summary.report_path, result.report);
    save_train_config(dir + "/config_used.json", cfg);

    manifest.outputs = {summary.checkpoint_path, summary.report_path, dir + "/config_used.json"};
    if (opt.dump_ensemble) manifest.outputs.push_back(cfg.ensemble_dump_csv);
    manifest.extra = {{"best_epoch", result.report.best_epoch},
                      {"best_val_macro_f1", result.report.best_val_macro_f1},
                      {"epochs_run", result.report.epochs.size()},
                      {"warnings", result.report.warnings},
                      {"train_wall_clock_seconds", result.report.wall_clock_seconds}};
    manifest.finished_at = iso_timestamp_utc();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(dir + "/run_manifest.json", manifest);
    return summary;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string checkpoint_path;
    std::string data_prefix;
    std::string hidden_prefix;
    std::string out_dir;
    bool export_embeddings = false;
};

struct EvalSummary {
    double macro_f1 = std::numeric_limits<double>::quiet_NaN();
    double mean_entropy = 0.0;
    bool labeled = false;
};

inline EvalSummary cmd_eval(const EvalOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest manifest;
    manifest.command = "eval";
    manifest.started_at = iso_timestamp_utc();
    manifest.add_input(opt.checkpoint_path);

    const Checkpoint ckpt = load_checkpoint(opt.checkpoint_path);
    manifest.seed = ckpt.seed;
    LoadedWindows loaded = read_windowed(opt.data_prefix);
    WindowedDataset& ds = loaded.dataset;
    manifest.add_input(opt.data_prefix + ".manifest.csv");
    manifest.add_input(opt.data_prefix + ".data.f64");
    if (ds.windows.empty()) throw ContractViolation(opt.data_prefix + ": no windows");
    if (ds.channel_count != ckpt.config.channels || ds.window_len != ckpt.config.window_len) {
        throw ContractViolation("eval: dataset windows (" + std::to_string(ds.channel_count) +
                                ", " + std::to_string(ds.window_len) +
                                ") do not match the checkpoint (" +
                                std::to_string(ckpt.config.channels) + ", " +
                                std::to_string(ckpt.config.window_len) + ")");
    }

    std::vector<int> labels;
    bool labeled = true;
    for (const auto& w : ds.windows) {
        if (!w.label) {
            labeled = false;
            break;
        }
    }
    if (labeled) {
        for (const auto& w : ds.windows) labels.push_back(*w.label);
    } else if (!opt.hidden_prefix.empty()) {
        labels = hidden_labels_from_twin(ds, opt.hidden_prefix);
        manifest.add_input(opt.hidden_prefix + ".manifest.csv");
        labeled = true;
    }

    const Array probs =
        detail::predict_probs(ckpt.config, ckpt.params, ds, all_indices(ds));
    const std::vector<int> preds = detail::argmax_rows(probs);
    const double mean_ent = mean_entropy(probs);

    const std::string dir = out_dir_or_env(opt.out_dir);
    std::filesystem::create_directories(dir);

    EvalSummary summary;
    summary.mean_entropy = mean_ent;
    summary.labeled = labeled;
    MetricReport report;
    report.mean_entropy = mean_ent;
    if (labeled) {
        const ConfusionMatrix cm = confusion(labels, preds, ckpt.config.num_classes);
        report = classification_report(cm, mean_ent);
        summary.macro_f1 = report.macro_f1;
        write_confusion_csv(dir + "/confusion.csv", cm);
        manifest.outputs.push_back(dir + "/confusion.csv");
    }
    write_metric_report_csv(dir + "/metrics.csv", report);
    manifest.outputs.push_back(dir + "/metrics.csv");

    {
        std::ofstream out(dir + "/predictions.csv");
        if (!out) throw IoError("cannot write " + dir + "/predictions.csv");
        out << "window_id,prediction,max_prob,entropy\n";
        const auto ents = row_entropies(probs);
        for (std::size_t i = 0; i < ds.windows.size(); ++i) {
            double mx = 0.0;
            for (std::size_t c = 0; c < probs.dim(1); ++c) mx = std::max(mx, probs.at(i, c));
            out << i << "," << preds[i] << "," << format_double(mx) << ","
                << format_double(ents[i]) << "\n";
        }
        manifest.outputs.push_back(dir + "/predictions.csv");
    }
    if (opt.export_embeddings) {
        const auto rows = export_embeddings(ckpt.config, ckpt.params, ds);
        write_embeddings_csv(dir + "/embeddings.csv", rows, ckpt.config.embedding_dim());
        manifest.outputs.push_back(dir + "/embeddings.csv");
    }

    manifest.finished_at = iso_timestamp_utc();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(dir + "/eval_manifest.json", manifest);
    return summary;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOptions {
    std::string config_path;
    std::string source_prefix;
    std::string target_prefix;
    std::string out_dir;
    std::string mode = "search";  // search | alpha-entropy
    std::vector<double> grid_alpha;
    std::vector<double> grid_lambda;
    std::vector<double> grid_eta;
    std::vector<double> grid_window_ms;  // needs raw CSVs
    std::vector<double> grid_overlap;
    std::string raw_source_csv;
    std::string raw_target_csv;
    std::size_t median_kernel = 3;
    std::optional<std::uint64_t> seed_override;
    std::size_t workers = 0;  // 0 = UDAR_WORKERS or 1
};

struct SweepSummary {
    std::string ranked_csv;
    std::string best_config_json;
    std::size_t runs = 0;
};

namespace detail_sweep {

struct GridPoint {
    TrainConfig config;
    double window_ms = 0.0;  // 0 when the prepared datasets are used as-is
    double overlap = -1.0;
};

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t count = std::min(workers, n);
    for (std::size_t w = 0; w < count; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail_sweep

inline SweepSummary cmd_sweep(const SweepOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig base = load_train_config(opt.config_path);
    if (opt.seed_override) base.seed = *opt.seed_override;

    RunManifest manifest;
    manifest.command = "sweep";
    manifest.config_path = opt.config_path;
    manifest.config_hash = file_digest_hex(opt.config_path);
    manifest.seed = base.seed;
    manifest.started_at = iso_timestamp_utc();

    const std::string dir = out_dir_or_env(opt.out_dir);
    std::filesystem::create_directories(dir);
    const std::size_t workers = opt.workers > 0 ? opt.workers : workers_from_env();

    SweepSummary summary;

    if (opt.mode == "alpha-entropy") {
        if (opt.grid_alpha.empty()) {
            throw ContractViolation("sweep: --grid-alpha required for alpha-entropy mode");
        }
        const WindowedDataset source =
            load_domain_windows(opt.source_prefix, Domain::source, false);
        const WindowedDataset target =
            load_domain_windows(opt.target_prefix, Domain::target, true);
        auto factory = [&](double alpha) {
            TrainConfig cfg = base;
            cfg.ensemble.alpha = alpha;
            if (cfg.ablation == AblationMode::baseline) cfg.ablation = AblationMode::full;
            const TrainResult run = train(source, target, cfg);
            std::vector<double> trace;
            for (const auto& e : run.report.epochs) trace.push_back(e.mean_pseudo_entropy);
            return trace;
        };
        const auto rows = alpha_uncertainty_sweep(factory, opt.grid_alpha);
        summary.ranked_csv = dir + "/alpha_entropy.csv";
        std::ofstream out(summary.ranked_csv);
        if (!out) throw IoError("cannot write " + summary.ranked_csv);
        out << "alpha,mean_final_entropy,epochs_to_plateau\n";
        for (const auto& r : rows) {
            out << format_double(r.alpha) << "," << format_double(r.mean_final_entropy) << ","
                << r.epochs_to_plateau << "\n";
        }
        summary.runs = rows.size();
        manifest.outputs = {summary.ranked_csv};
        manifest.finished_at = iso_timestamp_utc();
        manifest.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_run_manifest(dir + "/sweep_manifest.json", manifest);
        return summary;
    }
    if (opt.mode != "search") {
        throw ContractViolation("sweep: unknown mode '" + opt.mode + "' (want search|alpha-entropy)");
    }

    const bool window_grid = !opt.grid_window_ms.empty() || !opt.grid_overlap.empty();
    if (window_grid && (opt.raw_source_csv.empty() || opt.raw_target_csv.empty())) {
        throw ContractViolation(
            "sweep: window grids re-run preprocessing and need --raw-source/--raw-target CSVs");
    }

    auto one_or = [](const std::vector<double>& grid, double fallback) {
        return grid.empty() ? std::vector<double>{fallback} : grid;
    };
    const auto alphas = one_or(opt.grid_alpha, base.ensemble.alpha);
    const auto lambdas = one_or(opt.grid_lambda, base.kernel.lambda);
    const auto etas = one_or(opt.grid_eta, base.optimizer.learning_rate);
    const auto windows_ms = window_grid ? one_or(opt.grid_window_ms, 1000.0)
                                        : std::vector<double>{0.0};
    const auto overlaps = window_grid ? one_or(opt.grid_overlap, 0.5)
                                      : std::vector<double>{-1.0};

    std::vector<detail_sweep::GridPoint> points;
    for (double wms : windows_ms) {
        for (double ov : overlaps) {
            for (double a : alphas) {
                for (double l : lambdas) {
                    for (double e : etas) {
                        detail_sweep::GridPoint pt;
                        pt.config = base;
                        pt.config.ensemble.alpha = a;
                        pt.config.kernel.lambda = l;
                        pt.config.optimizer.learning_rate = e;
                        pt.window_ms = wms;
                        pt.overlap = ov;
                        points.push_back(std::move(pt));
                    }
                }
            }
        }
    }
    if (points.empty()) throw ContractViolation("sweep: empty grid");

    struct RowResult {
        double val_f1 = -1.0;
        std::size_t best_epoch = 0;
        std::string key;
    };
    std::vector<RowResult> rows(points.size());

    if (!window_grid) {
        const WindowedDataset source =
            load_domain_windows(opt.source_prefix, Domain::source, false);
        const WindowedDataset target =
            load_domain_windows(opt.target_prefix, Domain::target, true);
        detail_sweep::parallel_for(points.size(), workers, [&](std::size_t i) {
            const TrainResult run = train(source, target, points[i].config);
            rows[i] = {run.report.best_val_macro_f1, run.report.best_epoch,
                       grid_key(points[i].config)};
        });
    } else {
        // window grids: run prepare per (window_ms, overlap) into a temp area
        std::map<std::pair<double, double>, std::pair<WindowedDataset, WindowedDataset>> cache;
        for (double wms : windows_ms) {
            for (double ov : overlaps) {
                const std::string tmp = dir + "/prep_w" + format_double(wms) + "_o" +
                                        format_double(ov);
                PrepareOptions prep;
                prep.input_csv = opt.raw_source_csv;
                prep.out_prefix = tmp + "_source";
                prep.median_kernel = opt.median_kernel;
                prep.window_ms = wms;
                prep.overlap = ov;
                prep.seed = base.seed;
                cmd_prepare(prep);
                PrepareOptions prep_t = prep;
                prep_t.input_csv = opt.raw_target_csv;
                prep_t.out_prefix = tmp + "_target";
                prep_t.scaler_path = tmp + "_source.scaler.json";
                cmd_prepare(prep_t);
                cache[{wms, ov}] = {
                    load_domain_windows(tmp + "_source", Domain::source, false),
                    load_domain_windows(tmp + "_target", Domain::target, true)};
            }
        }
        detail_sweep::parallel_for(points.size(), workers, [&](std::size_t i) {
            const auto& data = cache.at({points[i].window_ms, points[i].overlap});
            const TrainResult run = train(data.first, data.second, points[i].config);
            rows[i] = {run.report.best_val_macro_f1, run.report.best_epoch,
                       grid_key(points[i].config) + ",window_ms=" +
                           format_double(points[i].window_ms) +
                           ",overlap=" + format_double(points[i].overlap)};
        });
    }

    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (rows[a].val_f1 != rows[b].val_f1) return rows[a].val_f1 > rows[b].val_f1;
        return rows[a].key < rows[b].key;
    });

    summary.ranked_csv = dir + "/ranked.csv";
    summary.best_config_json = dir + "/best_config.json";
    summary.runs = points.size();
    {
        std::ofstream out(summary.ranked_csv);
        if (!out) throw IoError("cannot write " + summary.ranked_csv);
        out << "rank,val_macro_f1,best_epoch,alpha,lambda,eta,window_ms,overlap,key\n";
        for (std::size_t r = 0; r < order.size(); ++r) {
            const auto& pt = points[order[r]];
            out << (r + 1) << "," << format_double(rows[order[r]].val_f1) << ","
                << rows[order[r]].best_epoch << "," << format_double(pt.config.ensemble.alpha)
                << "," << format_double(pt.config.kernel.lambda) << ","
                << format_double(pt.config.optimizer.learning_rate) << ","
                << (pt.window_ms > 0.0 ? format_double(pt.window_ms) : "") << ","
                << (pt.overlap >= 0.0 ? format_double(pt.overlap) : "") << ","
                << rows[order[r]].key << "\n";
        }
    }
    save_train_config(summary.best_config_json, points[order.front()].config);

    manifest.outputs = {summary.ranked_csv, summary.best_config_json};
    manifest.extra = {{"runs", summary.runs}, {"workers", workers}};
    manifest.finished_at = iso_timestamp_utc();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(dir + "/sweep_manifest.json", manifest);
    return summary;
}

// ---------------------------------------------------------------------------
// argument wiring

inline int run(int argc, const char* const* argv) {
    CLI::App app{"uDAR: unsupervised domain adaptation for windowed sensor time-series"};
    app.require_subcommand(1);

    // synth
    SynthOptions synth;
    auto* s = app.add_subcommand("synth", "generate a paired source/target corpus");
    s->add_option("--classes", synth.config.num_classes, "number of classes");
    s->add_option("--channels", synth.config.channels, "channel count (multiple of 3)");
    s->add_option("--window-len", synth.config.window_len, "samples per window");
    s->add_option("--samples-per-class", synth.config.samples_per_class,
                  "windows per class per domain");
    s->add_option("--users", synth.config.users_per_domain, "users per domain");
    double rotation_shift = 0.0, amplitude_scale = 1.0;
    s->add_option("--rotation-shift", rotation_shift, "target-user rotation angle (degrees)");
    s->add_option("--rotation-shift-min", synth.config.rotation_deg_min, "rotation range low");
    s->add_option("--rotation-shift-max", synth.config.rotation_deg_max, "rotation range high");
    s->add_option("--amplitude-scale", amplitude_scale, "target amplitude multiplier");
    s->add_option("--noise-std", synth.config.shift_noise_std, "extra target noise std");
    s->add_option("--base-noise-std", synth.config.base_noise_std, "shared measurement noise std");
    s->add_option("--rate-hz", synth.config.sample_rate_hz, "written sample rate");
    s->add_option("--seed", synth.config.seed, "rng seed");
    s->add_option("--out-dir", synth.out_dir, "output directory");

    // prepare
    PrepareOptions prep;
    auto* p = app.add_subcommand("prepare", "filter, window, normalize a recordings CSV");
    p->add_option("--input", prep.input_csv, "recordings CSV")->required();
    p->add_option("--out", prep.out_prefix, "output file prefix")->required();
    p->add_option("--median-kernel", prep.median_kernel, "odd median filter size (1 = off)");
    p->add_option("--window-ms", prep.window_ms, "window duration in milliseconds");
    p->add_option("--overlap", prep.overlap, "window overlap fraction [0, 0.95]");
    p->add_option("--rate-hz", prep.rate_hz, "sample rate override");
    p->add_option("--scaler", prep.scaler_path, "apply stored min-max statistics");
    p->add_option("--domain", prep.expect_domain, "assert all rows carry this domain");
    p->add_option("--classes", prep.num_classes, "class count override");
    p->add_option("--seed", prep.seed, "split seed");

    // train
    TrainOptions tr;
    std::uint64_t tr_seed = 0;
    std::string tr_ablation;
    auto* t = app.add_subcommand("train", "train with the joint objective");
    t->add_option("--config", tr.config_path, "train config JSON");
    t->add_option("--from-sweep", tr.from_sweep, "sweep output dir; use its best config");
    t->add_option("--source", tr.source_prefix, "source windowed prefix");
    t->add_option("--target", tr.target_prefix, "target windowed prefix");
    t->add_option("--hidden", tr.hidden_prefix, "labeled twin of target (evaluation only)");
    t->add_option("--out", tr.out_dir, "output directory");
    auto* tseed = t->add_option("--seed", tr_seed, "seed override");
    auto* tabl = t->add_option("--ablation", tr_ablation, "baseline|te|te_kcmmd|full");
    t->add_flag("--dump-ensemble", tr.dump_ensemble, "write per-epoch ensemble rows");
    bool emit_default = false;
    t->add_flag("--emit-default-config", emit_default, "print the default config and exit");

    // eval
    EvalOptions ev;
    auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a windowed dataset");
    e->add_option("--checkpoint", ev.checkpoint_path, "checkpoint file")->required();
    e->add_option("--data", ev.data_prefix, "windowed dataset prefix")->required();
    e->add_option("--hidden", ev.hidden_prefix, "labeled twin for hidden-label scoring");
    e->add_option("--out", ev.out_dir, "output directory");
    e->add_flag("--embeddings", ev.export_embeddings, "also export embeddings.csv");

    // sweep
    SweepOptions sw;
    std::uint64_t sw_seed = 0;
    auto* w = app.add_subcommand("sweep", "grid search / alpha-entropy sweep");
    w->add_option("--config", sw.config_path, "base train config JSON")->required();
    w->add_option("--source", sw.source_prefix, "source windowed prefix");
    w->add_option("--target", sw.target_prefix, "target windowed prefix");
    w->add_option("--out", sw.out_dir, "output directory");
    w->add_option("--mode", sw.mode, "search | alpha-entropy");
    w->add_option("--grid-alpha", sw.grid_alpha, "alpha grid")->delimiter(',');
    w->add_option("--grid-lambda", sw.grid_lambda, "lambda grid")->delimiter(',');
    w->add_option("--grid-eta", sw.grid_eta, "learning-rate grid")->delimiter(',');
    w->add_option("--grid-window-ms", sw.grid_window_ms, "window duration grid")->delimiter(',');
    w->add_option("--grid-overlap", sw.grid_overlap, "overlap grid")->delimiter(',');
    w->add_option("--raw-source", sw.raw_source_csv, "raw source CSV for window grids");
    w->add_option("--raw-target", sw.raw_target_csv, "raw target CSV for window grids");
    w->add_option("--median-kernel", sw.median_kernel, "median kernel for window grids");
    w->add_option("--workers", sw.workers, "parallel runs (default UDAR_WORKERS or 1)");
    auto* wseed = w->add_option("--seed", sw_seed, "seed override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? kOk : kUsage;
    }

    try {
        if (s->parsed()) {
            if (s->count("--rotation-shift")) {
                synth.config.rotation_deg_min = rotation_shift;
                synth.config.rotation_deg_max = rotation_shift;
            }
            if (s->count("--amplitude-scale")) {
                synth.config.amplitude_scale_min = amplitude_scale;
                synth.config.amplitude_scale_max = amplitude_scale;
            }
            cmd_synth(synth);
        } else if (p->parsed()) {
            cmd_prepare(prep);
        } else if (t->parsed()) {
            if (emit_default) {
                std::cout << train_config_to_json(default_train_config()).dump(2) << "\n";
                return kOk;
            }
            if (tseed->count()) tr.seed_override = tr_seed;
            if (tabl->count()) tr.ablation_override = tr_ablation;
            if (tr.source_prefix.empty()) {
                throw ContractViolation("train: --source required");
            }
            cmd_train(tr);
        } else if (e->parsed()) {
            cmd_eval(ev);
        } else if (w->parsed()) {
            if (wseed->count()) sw.seed_override = sw_seed;
            cmd_sweep(sw);
        }
        return kOk;
    } catch (const SchemaError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kSchema;
    } catch (const ParseError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kParse;
    } catch (const FormatError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kFormat;
    } catch (const IoError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kIo;
    } catch (const ContractViolation& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kContract;
    } catch (const NumericDomainError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kContract;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kOther;
    }
}

}  // namespace udar::cli
