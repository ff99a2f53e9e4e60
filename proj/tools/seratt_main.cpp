#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ser/config.hpp"
#include "ser/gradcheck.hpp"
#include "ser/json_conv.hpp"
#include "ser/kernels.hpp"
#include "ser/synth.hpp"
#include "ser/vtlp.hpp"

namespace fs = std::filesystem;
using namespace ser;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
};

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig config =
        opts.config_path.empty() ? default_run_config() : load_run_config(opts.config_path);
    if (opts.seed_set) {
        config.seed = opts.seed;
    }
    if (opts.threads >= 0) {
        config.threads = opts.threads;
    }
    kernels::set_max_threads(config.threads);
    return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration file");
    cmd->add_option("--seed", opts.seed, "Override the config seed")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
    cmd->add_option("--threads", opts.threads, "Worker threads (0 = hardware default)");
}

std::vector<int> parse_folds(const std::string& spec, int num_folds) {
    std::vector<int> folds;
    if (spec == "all") {
        for (int i = 0; i < num_folds; ++i) {
            folds.push_back(i);
        }
        return folds;
    }
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string tok = spec.substr(pos, comma == std::string::npos ? spec.npos
                                                                            : comma - pos);
        try {
            folds.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad fold spec: " + spec + " (expected 'all' or e.g. '0,2')");
        }
        if (comma == std::string::npos) {
            break;
        }
        pos = comma + 1;
    }
    if (folds.empty()) {
        throw ConfigError("empty fold spec");
    }
    return folds;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

void write_matrix_csv(const fs::path& path, const TensorT<float>& m) {
    std::ofstream out(path, std::ios::trunc);
    for (i64 i = 0; i < m.shape[0]; ++i) {
        for (i64 j = 0; j < m.shape[1]; ++j) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(m.at2(i, j)));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

int cmd_prepare(const std::string& manifest_path, const std::string& out_dir,
                const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    const auto records = read_manifest_csv(manifest_path);
    FeatureStore store = FeatureStore::create(out_dir, config.features);

    // Extraction is parallel across files; the index is assembled afterwards
    // in manifest order so reruns are byte-identical.
    const i64 n = static_cast<i64>(records.size());
    std::vector<TensorT<float>> powers(records.size()), logmels(records.size());
    std::vector<std::string> errors(records.size());
#pragma omp parallel for schedule(dynamic) num_threads(kernels::max_threads())
    for (i64 i = 0; i < n; ++i) {
        const auto& rec = records[static_cast<std::size_t>(i)];
        try {
            const Waveform wave = read_wav(rec.wav_path);
            const Waveform resampled = wave.sample_rate == config.features.sample_rate
                                           ? wave
                                           : resample_linear(wave, config.features.sample_rate);
            powers[static_cast<std::size_t>(i)] =
                stft_power(resampled, config.features.n_fft, config.features.hop_length,
                           config.features.win_length);
            logmels[static_cast<std::size_t>(i)] =
                power_to_log_mel(powers[static_cast<std::size_t>(i)], config.features);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }

    int failures = 0;
    for (i64 i = 0; i < n; ++i) {
        const auto& rec = records[static_cast<std::size_t>(i)];
        if (!errors[static_cast<std::size_t>(i)].empty()) {
            ++failures;
            std::cerr << "record " << rec.utterance_id << ": "
                      << errors[static_cast<std::size_t>(i)] << "\n";
            continue;
        }
        store.add_utterance(rec.utterance_id, rec.label, logmels[static_cast<std::size_t>(i)],
                            powers[static_cast<std::size_t>(i)]);
    }
    store.save_index();
    std::cout << "prepared " << (records.size() - static_cast<std::size_t>(failures)) << "/"
              << records.size() << " utterances into " << out_dir << "\n";
    if (failures > 0) {
        throw DataError(std::to_string(failures) + " records failed feature extraction");
    }
    return 0;
}

int cmd_synth(const std::string& out_dir, int per_class, double min_seconds, double max_seconds,
              const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    SynthConfig synth;
    synth.per_class = per_class;
    synth.seed = config.seed;
    synth.min_seconds = min_seconds;
    synth.max_seconds = max_seconds;
    const int count = synthesize_corpus(out_dir, config.features, synth);
    std::cout << "synthesized " << count << " utterances into " << out_dir << "\n";
    return 0;
}

int cmd_augment(const std::string& store_dir, int replicas_override, const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    VtlpConfig vtlp = config.vtlp;
    if (replicas_override >= 0) {
        vtlp.replicas = replicas_override;
    }
    FeatureStore store = FeatureStore::open(store_dir);
    for (const auto& rec : store.records()) {
        if (rec.augmented) {
            throw DataError("store already contains augmented records; augment once per store");
        }
    }
    const auto added = generate_replicas(store, vtlp, config.seed);
    store.save_index();
    std::cout << "added " << added.size() << " augmented records (" << vtlp.replicas
              << " replicas per utterance)\n";
    return 0;
}

int cmd_train(const std::string& store_dir, const std::string& out_dir,
              const std::string& fold_spec, const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    const FeatureStore store = FeatureStore::open(store_dir);
    const auto folds = split_folds(non_augmented_utterances(store), config.seed);
    const auto fold_indices = parse_folds(fold_spec, static_cast<int>(folds.size()));

    fs::create_directories(out_dir);
    echo_run_config(out_dir, config);

    std::vector<RunRow> rows;
    RunRow row;
    row.name = "train";
    double wa = 0.0, ua = 0.0, acc = 0.0;
    for (int fi : fold_indices) {
        if (fi < 0 || fi >= static_cast<int>(folds.size())) {
            throw ConfigError("fold index out of range: " + std::to_string(fi));
        }
        const auto& fold = folds[static_cast<std::size_t>(fi)];
        TrainResult res =
            train_fold(store, fold, config.model, config.train, config.segmentation,
                       derive_seed(config.seed, static_cast<std::uint64_t>(fi)));
        const fs::path fold_dir = fs::path(out_dir) / ("fold" + std::to_string(fi));
        fs::create_directories(fold_dir);
        write_metrics_csv(fold_dir / "metrics.csv", res.logs);
        write_confusion_csv(fold_dir / "confusion.csv", res.best_report.confusion);
        save_checkpoint(fold_dir / "best.ckpt", *res.best_model, res.best_meta);
        std::cout << "fold " << fi << ": best epoch " << res.best_meta.best.epoch << "  wa "
                  << res.best_report.wa << "  ua " << res.best_report.ua << "  acc "
                  << res.best_report.acc << "\n";
        row.folds.push_back(fi);
        row.fold_reports.push_back(res.best_report);
        row.fold_logs.push_back(res.logs);
        wa += res.best_report.wa;
        ua += res.best_report.ua;
        acc += res.best_report.acc;
    }
    row.mean.wa = wa / static_cast<double>(fold_indices.size());
    row.mean.ua = ua / static_cast<double>(fold_indices.size());
    row.mean.acc = acc / static_cast<double>(fold_indices.size());
    rows.push_back(std::move(row));
    write_rows_summary_json(fs::path(out_dir) / "summary.json", "train", rows);
    return 0;
}

int cmd_eval(const std::string& store_dir, const std::string& checkpoint_path,
             const std::string& fold_spec, const std::string& out_dir, const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    const FeatureStore store = FeatureStore::open(store_dir);
    auto [model, meta] = load_checkpoint(checkpoint_path);

    std::vector<std::string> ids;
    if (fold_spec.empty()) {
        for (const auto& [id, label] : non_augmented_utterances(store)) {
            ids.push_back(id);
        }
    } else {
        const auto folds = split_folds(non_augmented_utterances(store), config.seed);
        const int fi = parse_folds(fold_spec, static_cast<int>(folds.size())).at(0);
        if (fi < 0 || fi >= static_cast<int>(folds.size())) {
            throw ConfigError("fold index out of range: " + std::to_string(fi));
        }
        ids = folds[static_cast<std::size_t>(fi)].test_ids;
    }

    SegmentationConfig seg;
    seg.window_seconds = meta.window_seconds;
    seg.train_overlap_seconds = meta.train_overlap_seconds;
    seg.test_overlap_seconds = meta.test_overlap_seconds;
    const MetricsReport report = evaluate_utterances(model, meta, store, ids, seg);
    std::printf("utterances %zu  wa %.6f  ua %.6f  acc %.6f\n", ids.size(), report.wa, report.ua,
                report.acc);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_confusion_csv(fs::path(out_dir) / "confusion.csv", report.confusion);
    }
    return 0;
}

int cmd_ablate(const std::string& store_dir, const std::string& out_dir,
               const std::string& fold_spec, const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    const FeatureStore store = FeatureStore::open(store_dir);
    const auto folds = split_folds(non_augmented_utterances(store), config.seed);
    const auto fold_indices = parse_folds(fold_spec, static_cast<int>(folds.size()));

    fs::create_directories(out_dir);
    echo_run_config(out_dir, config);
    const auto rows = run_ablation(store, config.model, config.train, config.segmentation,
                                   folds, fold_indices, config.seed);
    for (const auto& row : rows) {
        const fs::path row_dir = fs::path(out_dir) / row.name;
        fs::create_directories(row_dir);
        for (std::size_t i = 0; i < row.folds.size(); ++i) {
            const fs::path fold_dir = row_dir / ("fold" + std::to_string(row.folds[i]));
            fs::create_directories(fold_dir);
            write_metrics_csv(fold_dir / "metrics.csv", row.fold_logs[i]);
            write_confusion_csv(fold_dir / "confusion.csv", row.fold_reports[i].confusion);
        }
        std::printf("%-22s wa %.6f  ua %.6f  acc %.6f\n", row.name.c_str(), row.mean.wa,
                    row.mean.ua, row.mean.acc);
    }
    write_rows_summary_json(fs::path(out_dir) / "summary.json", "ablation", rows);
    return 0;
}

int cmd_sweep(const std::string& store_dir, const std::string& out_dir, const std::string& kind,
              const std::string& fold_spec, const CommonOpts& opts) {
    const RunConfig config = resolve_config(opts);
    const FeatureStore store = FeatureStore::open(store_dir);
    const auto folds = split_folds(non_augmented_utterances(store), config.seed);
    const auto fold_indices = parse_folds(fold_spec, static_cast<int>(folds.size()));
    const SweepKind sweep_kind = sweep_kind_from_name(kind);

    fs::create_directories(out_dir);
    echo_run_config(out_dir, config);
    const auto rows = run_sweep(sweep_kind, store, config.model, config.train,
                                config.segmentation, folds, fold_indices, config.seed);
    for (const auto& row : rows) {
        const fs::path row_dir = fs::path(out_dir) / row.name;
        fs::create_directories(row_dir);
        for (std::size_t i = 0; i < row.folds.size(); ++i) {
            const fs::path fold_dir = row_dir / ("fold" + std::to_string(row.folds[i]));
            fs::create_directories(fold_dir);
            write_metrics_csv(fold_dir / "metrics.csv", row.fold_logs[i]);
            write_confusion_csv(fold_dir / "confusion.csv", row.fold_reports[i].confusion);
        }
        std::printf("%-20s wa %.6f  ua %.6f  acc %.6f\n", row.name.c_str(), row.mean.wa,
                    row.mean.ua, row.mean.acc);
    }
    write_rows_summary_json(fs::path(out_dir) / "summary.json", sweep_kind_name(sweep_kind),
                            rows);
    return 0;
}

int cmd_gradcheck(const std::string& size, const CommonOpts& opts) {
    resolve_config(opts);
    int repetitions = 1;
    if (size == "large") {
        repetitions = 3;
    } else if (size != "small") {
        throw ConfigError("gradcheck --size must be small or large");
    }
    bool all_pass = true;
    for (int rep = 0; rep < repetitions; ++rep) {
        const auto results = run_gradient_suite(0x5e0a7 + static_cast<std::uint64_t>(rep));
        for (const auto& r : results) {
            std::printf("%-36s max rel err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_err,
                        r.tol, r.pass ? "ok" : "FAIL");
        }
        all_pass = all_pass && gradient_suite_passed(results);
    }
    if (!all_pass) {
        throw NumericError("gradient checks failed");
    }
    std::cout << "all gradient checks passed\n";
    return 0;
}

int cmd_export_repr(const std::string& store_dir, const std::string& checkpoint_path,
                    const std::string& utterance_id, const std::string& out_dir,
                    const CommonOpts& opts) {
    resolve_config(opts);
    const FeatureStore store = FeatureStore::open(store_dir);
    auto [model, meta] = load_checkpoint(checkpoint_path);
    const FeatureRecord& rec = store.record(utterance_id);
    const auto params = store.params();
    const i64 window = params.frames_per_window(meta.window_seconds);
    const i64 hop = std::max<i64>(
        1, params.frames_per_window(meta.window_seconds - meta.test_overlap_seconds));
    const auto segments =
        segment_frames(store.load_logmel(rec), window, hop, rec.utterance_id, rec.label);

    fs::create_directories(out_dir);
    const TensorT<float> batch = segments_to_batch({segments.front()}, meta.feat_mean,
                                                   meta.feat_std, meta.normalize_features);
    auto intro = model.introspect(batch, nullptr);
    write_matrix_csv(fs::path(out_dir) / "repr.csv", intro.attended);
    write_matrix_csv(fs::path(out_dir) / "tokens.csv", intro.tokens);
    if (intro.attn.numel() > 0) {
        const i64 heads = intro.attn.shape[0];
        for (i64 h = 0; h < heads; ++h) {
            TensorT<float> head({intro.attn.shape[1], intro.attn.shape[2]});
            std::copy(intro.attn.ptr() + h * head.numel(),
                      intro.attn.ptr() + (h + 1) * head.numel(), head.ptr());
            write_matrix_csv(fs::path(out_dir) / ("attn_head" + std::to_string(h) + ".csv"),
                             head);
        }
    }
    std::cout << "wrote representation for " << utterance_id << " (" << intro.attended.shape[0]
              << " tokens x " << intro.attended.shape[1] << " channels)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiscale area-attention speech emotion classifier"};
    app.require_subcommand(1);

    CommonOpts opts;

    auto* prepare = app.add_subcommand("prepare", "Extract logMel features from a WAV manifest");
    std::string manifest_path, store_dir, out_dir, fold_spec = "all";
    prepare->add_option("--manifest", manifest_path, "CSV: utterance_id,wav_path,label")
        ->required();
    prepare->add_option("--out", store_dir, "Feature store directory")->required();
    add_common(prepare, opts);

    auto* synth = app.add_subcommand("synth", "Generate the synthetic 4-class corpus");
    int per_class = 25;
    double min_seconds = 2.0, max_seconds = 3.0;
    synth->add_option("--out", store_dir, "Feature store directory")->required();
    synth->add_option("--per-class", per_class, "Utterances per class");
    synth->add_option("--min-seconds", min_seconds, "Shortest utterance duration");
    synth->add_option("--max-seconds", max_seconds, "Longest utterance duration");
    add_common(synth, opts);

    auto* augment = app.add_subcommand("augment", "Append VTLP replicas to a feature store");
    int replicas = -1;
    augment->add_option("--store", store_dir, "Feature store directory")->required();
    augment->add_option("--replicas", replicas, "Replicas per utterance (default from config)");
    add_common(augment, opts);

    auto* train = app.add_subcommand("train", "Train and select the best-ACC checkpoint");
    train->add_option("--store", store_dir, "Feature store directory")->required();
    train->add_option("--out", out_dir, "Run output directory")->required();
    train->add_option("--fold", fold_spec, "Fold index list or 'all'");
    add_common(train, opts);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string checkpoint_path, eval_fold, utterance_id;
    eval->add_option("--store", store_dir, "Feature store directory")->required();
    eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval->add_option("--fold", eval_fold, "Restrict to one fold's test set");
    eval->add_option("--out", out_dir, "Optional output directory");
    add_common(eval, opts);

    auto* ablate = app.add_subcommand("ablate", "Six-row attention/VTLP ablation grid");
    ablate->add_option("--store", store_dir, "Feature store directory")->required();
    ablate->add_option("--out", out_dir, "Output directory")->required();
    ablate->add_option("--fold", fold_spec, "Fold index list or 'all'");
    add_common(ablate, opts);

    auto* sweep = app.add_subcommand("sweep", "Max-area / area-feature / replica-count sweeps");
    std::string sweep_kind;
    sweep->add_option("--store", store_dir, "Feature store directory")->required();
    sweep->add_option("--out", out_dir, "Output directory")->required();
    sweep->add_option("--kind", sweep_kind, "max_area_size | area_features | replica_count")
        ->required();
    sweep->add_option("--fold", fold_spec, "Fold index list or 'all'");
    add_common(sweep, opts);

    auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference suite");
    std::string gradcheck_size = "small";
    gradcheck->add_option("--size", gradcheck_size, "small (one pass) or large (three seeds)");
    add_common(gradcheck, opts);

    auto* export_repr = app.add_subcommand("export-repr",
                                           "Write the pre-FC representation and attention maps");
    export_repr->add_option("--store", store_dir, "Feature store directory")->required();
    export_repr->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    export_repr->add_option("--utterance", utterance_id, "Utterance id")->required();
    export_repr->add_option("--out", out_dir, "Output directory")->required();
    add_common(export_repr, opts);

    auto* dump = app.add_subcommand("dump-config", "Print the default config JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) {
            return cmd_prepare(manifest_path, store_dir, opts);
        }
        if (synth->parsed()) {
            return cmd_synth(store_dir, per_class, min_seconds, max_seconds, opts);
        }
        if (augment->parsed()) {
            return cmd_augment(store_dir, replicas, opts);
        }
        if (train->parsed()) {
            return cmd_train(store_dir, out_dir, fold_spec, opts);
        }
        if (eval->parsed()) {
            return cmd_eval(store_dir, checkpoint_path, eval_fold, out_dir, opts);
        }
        if (ablate->parsed()) {
            return cmd_ablate(store_dir, out_dir, fold_spec, opts);
        }
        if (sweep->parsed()) {
            return cmd_sweep(store_dir, out_dir, sweep_kind, fold_spec, opts);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(gradcheck_size, opts);
        }
        if (export_repr->parsed()) {
            return cmd_export_repr(store_dir, checkpoint_path, utterance_id, out_dir, opts);
        }
        if (dump->parsed()) {
            std::cout << run_config_to_json_text(default_run_config());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "ERROR CONFIG: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "ERROR DATA: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "ERROR NUMERIC: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "ERROR INTERNAL: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
