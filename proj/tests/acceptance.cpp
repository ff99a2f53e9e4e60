// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code is the number of failures.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ser/area_attention.hpp"
#include "ser/config.hpp"
#include "ser/gradcheck.hpp"
#include "ser/kernels.hpp"
#include "ser/reference.hpp"
#include "ser/rng.hpp"
#include "ser/synth.hpp"
#include "ser/train.hpp"
#include "ser/vtlp.hpp"

using namespace ser;
namespace fs = std::filesystem;

namespace {

struct Harness {
    int failures = 0;

    void criterion(int number, const std::string& label, const std::function<bool()>& body) {
        const auto start = std::chrono::steady_clock::now();
        bool ok = false;
        std::string error;
        try {
            ok = body();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s %2d  %s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", number, label.c_str(),
                    seconds, error.empty() ? "" : " -- ", error.c_str());
        std::fflush(stdout);
        if (!ok) {
            ++failures;
        }
    }
};

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "seratt_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

int run_cli(const std::string& cli, const std::string& args) {
    const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) {
        return -1;
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TensorT<double> random_tensor_d(std::vector<i64> shape, Rng& rng) {
    TensorT<double> t(std::move(shape));
    for (auto& v : t.data) {
        v = rng.normal();
    }
    return t;
}

TensorF random_tensor_f(std::vector<i64> shape, Rng& rng) {
    TensorF t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<float>(rng.normal());
    }
    return t;
}

// Desk-scale feature/model configuration used by the synthetic-corpus
// criteria; small enough for the single-threaded learning budget.
FeatureParams desk_features() {
    FeatureParams p;
    p.n_fft = 512;
    p.win_length = 512;
    p.hop_length = 320;  // 50 fps -> 2 s window = 100 frames
    p.n_mels = 26;
    return p;
}

ModelConfig desk_model() {
    ModelConfig config;
    config.parallel_channels = 8;
    config.trunk_channels = {16, 24, 32, 80};
    config.pool_after = {1, 2, 3};
    config.attention.max_height = 2;
    config.attention.max_width = 2;
    config.attention.key_mode = KeyMode::Mean;
    config.attention.value_mode = ValueMode::Sum;
    config.attention.num_heads = 4;
    return config;
}

FeatureParams micro_features() {
    FeatureParams p;
    p.n_fft = 256;
    p.win_length = 256;
    p.hop_length = 640;  // 25 fps -> 2 s window = 50 frames
    p.n_mels = 16;
    return p;
}

ModelConfig micro_model() {
    ModelConfig config;
    config.parallel_channels = 2;
    config.trunk_channels = {4, 80};
    config.pool_after = {1, 2};
    config.attention.max_height = 2;
    config.attention.max_width = 2;
    config.attention.num_heads = 4;
    return config;
}

const fs::path& corpus_100() {
    static const fs::path dir = [] {
        const fs::path d = work_dir() / "corpus100";
        SynthConfig synth;
        synth.per_class = 25;
        synth.seed = 2024;
        synth.min_seconds = 2.0;
        synth.max_seconds = 2.6;
        synthesize_corpus(d, desk_features(), synth);
        return d;
    }();
    return dir;
}

bool equal_logs(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].epoch != b[i].epoch || a[i].loss != b[i].loss ||
            a[i].train_wa != b[i].train_wa || a[i].wa != b[i].wa || a[i].ua != b[i].ua ||
            a[i].acc != b[i].acc) {
            return false;
        }
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    Harness h;

    h.criterion(1, "area enumeration matches the closed form (grids <= 8, bounds <= 4)", [] {
        const auto start = std::chrono::steady_clock::now();
        for (i64 hh = 1; hh <= 8; ++hh) {
            for (i64 ww = 1; ww <= 8; ++ww) {
                for (i64 mh = 1; mh <= 4; ++mh) {
                    for (i64 mw = 1; mw <= 4; ++mw) {
                        i64 expected = 0;
                        for (i64 ah = 1; ah <= std::min(mh, hh); ++ah) {
                            for (i64 aw = 1; aw <= std::min(mw, ww); ++aw) {
                                expected += (hh - ah + 1) * (ww - aw + 1);
                            }
                        }
                        if (static_cast<i64>(enumerate_areas(hh, ww, mh, mw).size()) !=
                            expected) {
                            return false;
                        }
                    }
                }
            }
        }
        const auto areas = enumerate_areas(3, 3, 2, 2);
        if (areas.size() != 25) {
            return false;
        }
        int kinds[2][2] = {};
        for (const auto& a : areas) {
            ++kinds[a.height - 1][a.width - 1];
        }
        if (kinds[0][0] != 9 || kinds[0][1] != 6 || kinds[1][0] != 6 || kinds[1][1] != 4) {
            return false;
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return seconds < 1.0;
    });

    h.criterion(2, "integral-table and sliding-max pooling equal naive oracles (50 grids)", [] {
        const auto start = std::chrono::steady_clock::now();
        Rng rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            const i64 h = 1 + rng.uniform_int(8);
            const i64 w = 1 + rng.uniform_int(8);
            const i64 c = 1 + rng.uniform_int(4);
            const i64 max_h = 1 + rng.uniform_int(4);
            const i64 max_w = 1 + rng.uniform_int(4);
            const TensorF mem = random_tensor_f({h, w, c}, rng);
            const auto tables = build_integral_tables(mem);
            const auto areas = enumerate_areas(h, w, max_h, max_w);
            const i64 a = static_cast<i64>(areas.size());

            TensorF sum_pool({a, c}), mean_pool({a, c}), std_pool({a, c}), max_pool({a, c});
            std::vector<std::int32_t> arow(static_cast<std::size_t>(a * c)),
                acol(static_cast<std::size_t>(a * c));
            kernels::area_stats_pool(tables.sum.ptr(), tables.sumsq.ptr(), h, w, c, max_h,
                                     max_w, sum_pool.ptr(), mean_pool.ptr(), std_pool.ptr());
            kernels::area_max_pool(mem.ptr(), h, w, c, max_h, max_w, max_pool.ptr(),
                                   arow.data(), acol.data());
            for (i64 ai = 0; ai < a; ++ai) {
                const auto& area = areas[static_cast<std::size_t>(ai)];
                for (i64 ch = 0; ch < c; ++ch) {
                    const double s =
                        ref::rect_sum_naive(mem, area.top, area.left, area.height, area.width,
                                            ch);
                    const double m =
                        ref::rect_mean_naive(mem, area.top, area.left, area.height, area.width,
                                             ch);
                    const double sd =
                        ref::rect_std_naive(mem, area.top, area.left, area.height, area.width,
                                            ch);
                    const double mx =
                        ref::rect_max_naive(mem, area.top, area.left, area.height, area.width,
                                            ch);
                    const auto rel = [](double got, double want) {
                        return std::abs(got - want) / std::max(1.0, std::abs(want));
                    };
                    if (rel(sum_pool.at2(ai, ch), s) > 1e-5 ||
                        rel(mean_pool.at2(ai, ch), m) > 1e-5 ||
                        rel(std_pool.at2(ai, ch), sd) > 1e-5) {
                        return false;
                    }
                    if (static_cast<double>(max_pool.at2(ai, ch)) != mx) {
                        return false;
                    }
                }
            }
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return seconds < 10.0;
    });

    h.criterion(3, "max area 1x1 reduces to standard multi-head attention (<= 1e-6)", [] {
        Rng rng(3);
        const i64 h = 4, w = 4, c = 8;
        for (KeyMode kmode : {KeyMode::Max, KeyMode::Mean, KeyMode::Sample}) {
            for (ValueMode vmode : {ValueMode::Max, ValueMode::Mean, ValueMode::Sum}) {
                const TensorT<double> memory = random_tensor_d({h, w, c}, rng);
                const TensorT<double> query({h * w, c}, memory.data);
                AttentionWeights<double> weights;
                weights.init(c, rng);
                AreaConfig config;
                config.max_height = 1;
                config.max_width = 1;
                config.key_mode = kmode;
                config.value_mode = vmode;
                config.num_heads = 4;
                Rng r(1);
                const auto out =
                    area_attention_forward(query, memory, weights, config, Mode::Eval, &r);
                const TensorT<double> flat({h * w, c}, memory.data);
                const TensorT<double> oracle = ref::multihead_attention_naive(
                    query, flat, flat, weights.wq, weights.wk, weights.wv, weights.wo, 4);
                for (i64 i = 0; i < oracle.numel(); ++i) {
                    if (std::abs(out.output[i] - oracle[i]) > 1e-6) {
                        return false;
                    }
                }
            }
        }
        return true;
    });

    std::vector<GradCheckResult> grad_results;
    h.criterion(4, "gradient suite: all layers < 1e-4, end-to-end model < 1e-3", [&] {
        const auto start = std::chrono::steady_clock::now();
        grad_results = run_gradient_suite();
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return gradient_suite_passed(grad_results) && grad_results.size() == 16 &&
               seconds < 120.0;
    });

    h.criterion(5, "Sample-key semantics: eval==mean bitwise, sigma=0 => mean, FD with xi fixed",
                [&] {
        Rng rng(5);
        const TensorF memory = random_tensor_f({3, 4, 4}, rng);
        AreaConfig sample_cfg;
        sample_cfg.key_mode = KeyMode::Sample;
        sample_cfg.num_heads = 2;
        AreaConfig mean_cfg = sample_cfg;
        mean_cfg.key_mode = KeyMode::Mean;

        // (a) Eval-mode Sample equals Mean bitwise, through the whole layer
        const TensorF query({12, 4}, memory.data);
        AttentionWeights<float> weights;
        weights.init(4, rng);
        Rng r1(9), r2(10);
        const auto sample_out =
            area_attention_forward(query, memory, weights, sample_cfg, Mode::Eval, &r1);
        const auto mean_out =
            area_attention_forward(query, memory, weights, mean_cfg, Mode::Eval, &r2);
        if (sample_out.output.data != mean_out.output.data) {
            return false;
        }

        // (b) sigma = 0 areas: Train-mode Sample equals Mean
        const TensorF constant = TensorF::full({3, 3, 2}, 1.25f);
        AreaConfig c2;
        c2.key_mode = KeyMode::Sample;
        Rng r3(11);
        const auto pooled = assemble_pooled_memory(constant, c2, Mode::Train, &r3);
        AreaConfig c2m;
        c2m.key_mode = KeyMode::Mean;
        const auto pooled_mean = assemble_pooled_memory(constant, c2m, Mode::Train, nullptr);
        if (pooled.keys.data != pooled_mean.keys.data) {
            return false;
        }

        // (c) the Sample-mode rows of the gradient suite passed
        if (grad_results.empty()) {
            return false;
        }
        for (const auto& res : grad_results) {
            if (res.name.find("key=sample") != std::string::npos && !res.pass) {
                return false;
            }
        }
        return true;
    });

    h.criterion(6, "VTLP: identity, monotone warp, tone shift, 700 replicas without leakage",
                [&] {
        // identity
        Rng rng(6);
        TensorF power({8, 257});
        for (auto& v : power.data) {
            v = static_cast<float>(std::abs(rng.normal()));
        }
        if (vtlp_spectrogram(power, 1.0, 4800.0, 16000).data != power.data) {
            return false;
        }
        // strict monotonicity and fixed endpoints on a 1000-point grid
        for (double alpha : {0.9, 0.95, 1.05, 1.1}) {
            double prev = -1.0;
            for (int i = 0; i <= 1000; ++i) {
                const double f = 8000.0 * i / 1000.0;
                const double fp = warp_frequency(f, alpha, 4800.0, 8000.0);
                if (fp <= prev) {
                    return false;
                }
                prev = fp;
            }
            if (std::abs(warp_frequency(0.0, alpha, 4800.0, 8000.0)) > 1e-12 ||
                std::abs(warp_frequency(8000.0, alpha, 4800.0, 8000.0) - 8000.0) > 1e-9) {
                return false;
            }
        }
        // 1000 Hz tone at alpha=1.05 peaks at the bin nearest 1050 Hz
        const i64 bins = 257;
        const double bin_hz = 8000.0 / static_cast<double>(bins - 1);
        TensorF tone({2, bins});
        tone.at2(0, std::llround(1000.0 / bin_hz)) = 50.0f;
        tone.at2(1, std::llround(1000.0 / bin_hz)) = 50.0f;
        const TensorF warped = vtlp_spectrogram(tone, 1.05, 4800.0, 16000);
        i64 peak = 0;
        for (i64 k = 0; k < bins; ++k) {
            if (warped.at2(0, k) > warped.at2(0, peak)) {
                peak = k;
            }
        }
        if (peak != std::llround(1050.0 / bin_hz)) {
            return false;
        }

        // 7 replicas on the 100-utterance store; none reach any test fold
        const fs::path dir = work_dir() / "corpus100_aug";
        fs::remove_all(dir);
        fs::copy(corpus_100(), dir, fs::copy_options::recursive);
        FeatureStore store = FeatureStore::open(dir);
        VtlpConfig vtlp;
        vtlp.replicas = 7;
        const auto added = generate_replicas(store, vtlp, 77);
        store.save_index();
        if (added.size() != 700 || store.records().size() != 800) {
            return false;
        }
        const auto folds = split_folds(non_augmented_utterances(store), 77);
        for (const auto& fold : folds) {
            for (const auto& id : fold.test_ids) {
                if (store.record(id).augmented) {
                    return false;
                }
            }
        }
        return true;
    });

    h.criterion(7, "metrics: WA=0.575 UA=0.6 ACC=0.5875 hand case; ACC=(WA+UA)/2 on 100 random",
                [] {
        Confusion confusion{};
        confusion[0] = {8, 2, 0, 0};
        confusion[1] = {0, 5, 5, 0};
        confusion[2] = {5, 5, 10, 0};
        const MetricsReport report = compute_metrics(confusion);
        if (std::abs(report.wa - 0.575) > 1e-15 || std::abs(report.ua - 0.6) > 1e-15 ||
            std::abs(report.acc - 0.5875) > 1e-15) {
            return false;
        }
        Rng rng(7);
        for (int trial = 0; trial < 100; ++trial) {
            Confusion c{};
            for (auto& row : c) {
                for (auto& v : row) {
                    v = rng.uniform_int(50);
                }
            }
            c[1][1] += 1;
            const MetricsReport r = compute_metrics(c);
            if (r.acc != (r.wa + r.ua) / 2.0) {
                return false;
            }
        }
        return true;
    });

    h.criterion(8, "protocol: stratified deterministic 80/20 folds; no augmented leakage", [] {
        const FeatureStore store = FeatureStore::open(corpus_100());
        const auto utterances = non_augmented_utterances(store);
        if (utterances.size() != 100) {
            return false;
        }
        const auto folds = split_folds(utterances, 42);
        const auto folds2 = split_folds(utterances, 42);
        if (folds.size() != 5) {
            return false;
        }
        for (std::size_t f = 0; f < 5; ++f) {
            const auto& fold = folds[f];
            if (fold.train_ids.size() != 80 || fold.test_ids.size() != 20) {
                return false;
            }
            if (fold.train_ids != folds2[f].train_ids || fold.test_ids != folds2[f].test_ids) {
                return false;
            }
            std::set<std::string> train(fold.train_ids.begin(), fold.train_ids.end());
            std::array<int, 4> per_class{};
            for (const auto& id : fold.test_ids) {
                if (train.count(id)) {
                    return false;
                }
                ++per_class[static_cast<std::size_t>(store.record(id).label)];
            }
            for (int c = 0; c < 4; ++c) {
                if (per_class[static_cast<std::size_t>(c)] != 5) {
                    return false;
                }
            }
        }

        // randomized manifests: augmented records derived from test sources
        // can never satisfy the train-membership rule
        Rng rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::pair<std::string, int>> manifest;
            for (int c = 0; c < 4; ++c) {
                const int n = 5 + static_cast<int>(rng.uniform_int(20));
                for (int i = 0; i < n; ++i) {
                    manifest.emplace_back("t" + std::to_string(trial) + "_c" +
                                              std::to_string(c) + "_" + std::to_string(i),
                                          c);
                }
            }
            const auto rfolds = split_folds(manifest, rng.next_u64());
            for (const auto& fold : rfolds) {
                std::set<std::string> train(fold.train_ids.begin(), fold.train_ids.end());
                for (const auto& id : fold.test_ids) {
                    // an augmented replica of `id` has source `id`, which is
                    // not in the train set, so it can never be trained on
                    if (train.count(id)) {
                        return false;
                    }
                }
                if (fold.train_ids.size() + fold.test_ids.size() != manifest.size()) {
                    return false;
                }
            }
        }
        return true;
    });

    h.criterion(9, "learning smoke: train WA >= 0.95 and test ACC >= 0.85, 1 thread, < 10 min",
                [&] {
        const auto start = std::chrono::steady_clock::now();
        kernels::set_max_threads(1);
        const fs::path dir = work_dir() / "corpus100_aug";
        if (!fs::exists(dir / "index.jsonl")) {
            return false;  // criterion 6 builds the augmented store
        }
        const FeatureStore store = FeatureStore::open(dir);
        const auto folds = split_folds(non_augmented_utterances(store), 77);

        TrainConfig tc;
        tc.batch_size = 32;
        tc.epochs = 30;
        tc.early_stop_train_wa = 0.95;
        tc.early_stop_acc = 0.85;
        const TrainResult res = train_fold(store, folds[0], desk_model(), tc,
                                           SegmentationConfig{}, derive_seed(77, 0));
        kernels::set_max_threads(0);

        bool reached_train_wa = false;
        for (const auto& log : res.logs) {
            reached_train_wa = reached_train_wa || log.train_wa >= 0.95;
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("      [smoke: %zu epochs, best acc %.4f, %.0f s]\n", res.logs.size() - 1,
                    res.best_meta.best.acc, seconds);
        return reached_train_wa && res.best_meta.best.acc >= 0.85 && seconds < 600.0;
    });

    h.criterion(10, "ablation emits 6 rows; sweeps emit 9/4/8 cells; 1x1 cell == attention row",
                [] {
        const fs::path dir = work_dir() / "micro_store";
        fs::remove_all(dir);
        SynthConfig synth;
        synth.per_class = 5;
        synth.seed = 10;
        synth.min_seconds = 2.0;
        synth.max_seconds = 2.4;
        synthesize_corpus(dir, micro_features(), synth);
        {
            FeatureStore store = FeatureStore::open(dir);
            VtlpConfig vtlp;
            vtlp.replicas = 7;
            generate_replicas(store, vtlp, 10);
            store.save_index();
        }
        const FeatureStore store = FeatureStore::open(dir);
        const auto folds = split_folds(non_augmented_utterances(store), 10);
        TrainConfig tc;
        tc.batch_size = 8;
        tc.epochs = 1;
        const std::vector<int> fold0 = {0};

        const auto ablation =
            run_ablation(store, micro_model(), tc, SegmentationConfig{}, folds, fold0, 10);
        if (ablation.size() != 6) {
            return false;
        }
        const std::vector<std::string> expected_rows = {
            "cnn", "cnn_vtlp", "attention", "attention_vtlp", "area_attention",
            "area_attention_vtlp"};
        for (std::size_t i = 0; i < 6; ++i) {
            if (ablation[i].name != expected_rows[i]) {
                return false;
            }
        }

        const auto features = run_sweep(SweepKind::AreaFeatures, store, micro_model(), tc,
                                        SegmentationConfig{}, folds, fold0, 10);
        if (features.size() != 9) {
            return false;
        }

        const auto sizes = run_sweep(SweepKind::MaxAreaSize, store, micro_model(), tc,
                                     SegmentationConfig{}, folds, fold0, 10);
        if (sizes.size() != 4 || sizes[0].name != "max_1x1") {
            return false;
        }
        // exact equality of metric logs with the shared seed
        if (!equal_logs(sizes[0].fold_logs[0], ablation[2].fold_logs[0])) {
            return false;
        }

        const auto replicas = run_sweep(SweepKind::ReplicaCount, store, micro_model(), tc,
                                        SegmentationConfig{}, folds, fold0, 10);
        if (replicas.size() != 8 || replicas[0].name != "multiplier_1") {
            return false;
        }
        // multiplier 1 is a no-augmentation run: equals the area_attention row
        return equal_logs(replicas[0].fold_logs[0], ablation[4].fold_logs[0]);
    });

    h.criterion(11, "CLI rerun determinism: identical metric logs and checkpoints bitwise",
                [&] {
        if (cli.empty() || !fs::exists(cli)) {
            std::printf("      [no CLI path given]\n");
            return false;
        }
        const fs::path base = work_dir() / "cli";
        fs::remove_all(base);
        fs::create_directories(base);

        // micro run config file
        RunConfig config;
        config.seed = 99;
        config.features = micro_features();
        config.model = micro_model();
        config.train.batch_size = 8;
        config.train.epochs = 2;
        config.vtlp.replicas = 2;
        const fs::path config_path = base / "config.json";
        std::ofstream(config_path) << run_config_to_json_text(config);

        const std::string cfg = " --config " + config_path.string();

        // synth twice -> identical stores
        if (run_cli(cli, "synth --out " + (base / "s1").string() + " --per-class 5" + cfg) != 0) {
            return false;
        }
        if (run_cli(cli, "synth --out " + (base / "s2").string() + " --per-class 5" + cfg) != 0) {
            return false;
        }
        if (read_bytes(base / "s1" / "index.jsonl") != read_bytes(base / "s2" / "index.jsonl")) {
            return false;
        }
        const FeatureStore s1 = FeatureStore::open(base / "s1");
        for (const auto& rec : s1.records()) {
            if (read_bytes(base / "s1" / rec.logmel_path) !=
                read_bytes(base / "s2" / rec.logmel_path)) {
                return false;
            }
        }

        // augment both -> identical indexes and replica tensors
        if (run_cli(cli, "augment --store " + (base / "s1").string() + cfg) != 0 ||
            run_cli(cli, "augment --store " + (base / "s2").string() + cfg) != 0) {
            return false;
        }
        if (read_bytes(base / "s1" / "index.jsonl") != read_bytes(base / "s2" / "index.jsonl")) {
            return false;
        }

        // train twice -> identical metrics and checkpoint bytes
        if (run_cli(cli, "train --store " + (base / "s1").string() + " --out " +
                             (base / "r1").string() + " --fold 0" + cfg) != 0) {
            return false;
        }
        if (run_cli(cli, "train --store " + (base / "s1").string() + " --out " +
                             (base / "r2").string() + " --fold 0" + cfg) != 0) {
            return false;
        }
        if (read_bytes(base / "r1" / "fold0" / "metrics.csv") !=
                read_bytes(base / "r2" / "fold0" / "metrics.csv") ||
            read_bytes(base / "r1" / "fold0" / "best.ckpt") !=
                read_bytes(base / "r2" / "fold0" / "best.ckpt")) {
            return false;
        }

        // prepare idempotence on real WAV input
        const fs::path wav_dir = base / "wavs";
        fs::create_directories(wav_dir);
        Rng rng(15);
        std::ofstream manifest(base / "manifest.csv");
        manifest << "utterance_id,wav_path,label\n";
        for (int i = 0; i < 3; ++i) {
            Waveform w;
            w.sample_rate = 16000;
            w.samples.resize(16000);
            for (auto& s : w.samples) {
                s = static_cast<float>(rng.uniform(-0.4, 0.4));
            }
            const fs::path wav = wav_dir / ("u" + std::to_string(i) + ".wav");
            write_wav(wav, w);
            manifest << "u" << i << "," << wav.string() << ","
                     << emotion_label_names()[static_cast<std::size_t>(i)] << "\n";
        }
        manifest.close();
        if (run_cli(cli, "prepare --manifest " + (base / "manifest.csv").string() + " --out " +
                             (base / "p1").string() + cfg) != 0) {
            return false;
        }
        if (run_cli(cli, "prepare --manifest " + (base / "manifest.csv").string() + " --out " +
                             (base / "p2").string() + cfg) != 0) {
            return false;
        }
        if (read_bytes(base / "p1" / "index.jsonl") != read_bytes(base / "p2" / "index.jsonl")) {
            return false;
        }

        // eval and export-repr run cleanly on the trained checkpoint
        if (run_cli(cli, "eval --store " + (base / "s1").string() + " --checkpoint " +
                             (base / "r1" / "fold0" / "best.ckpt").string() + cfg) != 0) {
            return false;
        }
        if (run_cli(cli, "export-repr --store " + (base / "s1").string() + " --checkpoint " +
                             (base / "r1" / "fold0" / "best.ckpt").string() +
                             " --utterance neutral_000 --out " + (base / "repr").string() +
                             cfg) != 0) {
            return false;
        }
        if (!fs::exists(base / "repr" / "repr.csv") ||
            !fs::exists(base / "repr" / "attn_head0.csv")) {
            return false;
        }
        // representation rows are tokens, columns the 80 channels
        {
            std::ifstream repr(base / "repr" / "repr.csv");
            std::string first_line;
            std::getline(repr, first_line);
            const i64 cols =
                1 + static_cast<i64>(std::count(first_line.begin(), first_line.end(), ','));
            if (cols != 80) {
                return false;
            }
        }

        // gradcheck exits zero; a bad fold spec exits with the usage code
        if (run_cli(cli, "gradcheck") != 0) {
            return false;
        }
        if (run_cli(cli, "train --store " + (base / "s1").string() + " --out " +
                             (base / "r3").string() + " --fold nope" + cfg) != 1) {
            return false;
        }
        return true;
    });

    std::printf("%s: %d criterion(s) failed\n", h.failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
                h.failures);
    return h.failures;
}
