#include "ser/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "ser/rng.hpp"

namespace ser {

const std::array<std::string, 4>& emotion_label_names() {
    static const std::array<std::string, 4> names = {"neutral", "excitement", "sadness",
                                                     "anger"};
    return names;
}

int emotion_label_id(const std::string& name) {
    const auto& names = emotion_label_names();
    for (int i = 0; i < 4; ++i) {
        if (names[static_cast<std::size_t>(i)] == name) {
            return i;
        }
    }
    throw DataError("unknown emotion label: " + name);
}

std::vector<ManifestRecord> read_manifest_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("empty manifest: " + path.string());
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != "utterance_id,wav_path,label") {
        throw DataError("manifest header must be exactly 'utterance_id,wav_path,label'");
    }
    std::vector<ManifestRecord> records;
    std::unordered_set<std::string> seen;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto first = line.find(',');
        const auto last = line.rfind(',');
        if (first == std::string::npos || last == first) {
            throw DataError("manifest row " + std::to_string(row) +
                            ": expected utterance_id,wav_path,label");
        }
        ManifestRecord rec;
        rec.utterance_id = line.substr(0, first);
        rec.wav_path = line.substr(first + 1, last - first - 1);
        rec.label = emotion_label_id(line.substr(last + 1));
        if (rec.utterance_id.empty()) {
            throw DataError("manifest row " + std::to_string(row) + ": empty utterance_id");
        }
        if (!seen.insert(rec.utterance_id).second) {
            throw DataError("duplicate utterance_id: " + rec.utterance_id);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<FoldSplit> split_folds(const std::vector<std::pair<std::string, int>>& utterances,
                                   std::uint64_t seed, int num_folds, double test_fraction) {
    if (num_folds < 1 || !(test_fraction > 0.0) || !(test_fraction < 1.0)) {
        throw ConfigError("split_folds: invalid fold count or test fraction");
    }
    std::array<std::vector<std::string>, 4> by_class;
    for (const auto& [id, label] : utterances) {
        if (label < 0 || label > 3) {
            throw DataError("split_folds: label out of range for " + id);
        }
        by_class[static_cast<std::size_t>(label)].push_back(id);
    }
    for (int c = 0; c < 4; ++c) {
        const auto n = static_cast<i64>(by_class[static_cast<std::size_t>(c)].size());
        if (n < num_folds) {
            throw ConfigError("split_folds: class '" +
                              emotion_label_names()[static_cast<std::size_t>(c)] +
                              "' has too few utterances (" + std::to_string(n) + ")");
        }
    }

    std::vector<FoldSplit> folds;
    for (int f = 0; f < num_folds; ++f) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(f)));
        FoldSplit fold;
        fold.fold_index = f;
        for (int c = 0; c < 4; ++c) {
            std::vector<std::string> ids = by_class[static_cast<std::size_t>(c)];
            rng.shuffle(ids);
            const i64 n = static_cast<i64>(ids.size());
            i64 n_test = std::llround(test_fraction * static_cast<double>(n));
            n_test = std::clamp<i64>(n_test, 1, n - 1);
            for (i64 i = 0; i < n; ++i) {
                (i < n_test ? fold.test_ids : fold.train_ids)
                    .push_back(ids[static_cast<std::size_t>(i)]);
            }
        }
        std::sort(fold.train_ids.begin(), fold.train_ids.end());
        std::sort(fold.test_ids.begin(), fold.test_ids.end());
        folds.push_back(std::move(fold));
    }
    return folds;
}

MetricsReport compute_metrics(const Confusion& confusion) {
    i64 total = 0, trace = 0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            const i64 v = confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (v < 0) {
                throw DataError("compute_metrics: negative count");
            }
            total += v;
        }
        trace += confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    }
    if (total == 0) {
        throw DataError("compute_metrics: all-zero confusion matrix");
    }
    MetricsReport report;
    report.confusion = confusion;
    report.wa = static_cast<double>(trace) / static_cast<double>(total);
    double recall_sum = 0.0;
    int present = 0;
    for (int i = 0; i < 4; ++i) {
        i64 row = 0;
        for (int j = 0; j < 4; ++j) {
            row += confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
        if (row > 0) {
            recall_sum +=
                static_cast<double>(
                    confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]) /
                static_cast<double>(row);
            ++present;
        }
    }
    report.ua = recall_sum / static_cast<double>(present);
    report.acc = (report.wa + report.ua) / 2.0;
    return report;
}

std::vector<std::pair<std::string, int>> non_augmented_utterances(const FeatureStore& store) {
    std::vector<std::pair<std::string, int>> out;
    for (const auto& rec : store.records()) {
        if (!rec.augmented) {
            out.emplace_back(rec.utterance_id, rec.label);
        }
    }
    return out;
}

namespace {

struct SegmentPlan {
    i64 window_frames = 0;
    i64 train_hop = 0;
    i64 test_hop = 0;
};

SegmentPlan make_plan(const FeatureParams& params, const SegmentationConfig& seg) {
    if (!(seg.window_seconds > 0.0)) {
        throw ConfigError("segmentation: window_seconds must be positive");
    }
    if (seg.train_overlap_seconds >= seg.window_seconds ||
        seg.test_overlap_seconds >= seg.window_seconds) {
        throw ConfigError("segmentation: overlap must be smaller than the window");
    }
    SegmentPlan plan;
    plan.window_frames = params.frames_per_window(seg.window_seconds);
    plan.train_hop = std::max<i64>(
        1, params.frames_per_window(seg.window_seconds - seg.train_overlap_seconds));
    plan.test_hop = std::max<i64>(
        1, params.frames_per_window(seg.window_seconds - seg.test_overlap_seconds));
    if (plan.window_frames < 1) {
        throw ConfigError("segmentation: window shorter than one frame");
    }
    return plan;
}

using TestSet = std::vector<std::pair<int, std::vector<Segment>>>;

MetricsReport evaluate_preloaded(Classifier& model, const CheckpointMeta& meta,
                                 const TestSet& test_sets) {
    Confusion confusion{};
    for (const auto& [label, segments] : test_sets) {
        const std::vector<double> probs = predict_utterance(model, segments, meta);
        const int predicted = argmax_class(probs);
        ++confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(predicted)];
    }
    return compute_metrics(confusion);
}

}  // namespace

MetricsReport evaluate_utterances(Classifier& model, const CheckpointMeta& meta,
                                  const FeatureStore& store,
                                  const std::vector<std::string>& utterance_ids,
                                  const SegmentationConfig& seg) {
    const SegmentPlan plan = make_plan(store.params(), seg);
    TestSet test_sets;
    for (const auto& id : utterance_ids) {
        const FeatureRecord& rec = store.record(id);
        test_sets.emplace_back(rec.label,
                               segment_frames(store.load_logmel(rec), plan.window_frames,
                                              plan.test_hop, rec.utterance_id, rec.label));
    }
    return evaluate_preloaded(model, meta, test_sets);
}

TrainResult train_fold(const FeatureStore& store, const FoldSplit& fold,
                       const ModelConfig& model_config, const TrainConfig& train_config,
                       const SegmentationConfig& seg, std::uint64_t seed) {
    model_config.validate();
    const SegmentPlan plan = make_plan(store.params(), seg);

    const std::unordered_set<std::string> train_set(fold.train_ids.begin(),
                                                    fold.train_ids.end());
    const std::unordered_set<std::string> test_set(fold.test_ids.begin(), fold.test_ids.end());

    std::vector<Segment> train_segments;
    for (const auto& rec : store.records()) {
        bool in_train = false;
        if (!rec.augmented) {
            in_train = train_set.count(rec.utterance_id) > 0;
        } else if (train_config.use_augmented) {
            const bool within_cap = train_config.max_replicas < 0 ||
                                    rec.replica_index < train_config.max_replicas;
            in_train = within_cap && train_set.count(rec.source_utterance_id) > 0;
            if (test_set.count(rec.source_utterance_id) > 0 && in_train) {
                throw DataError("augmented record leaks a test utterance: " + rec.utterance_id);
            }
        }
        if (!in_train) {
            continue;
        }
        auto segments = segment_frames(store.load_logmel(rec), plan.window_frames,
                                       plan.train_hop, rec.utterance_id, rec.label);
        std::move(segments.begin(), segments.end(), std::back_inserter(train_segments));
    }
    if (train_segments.empty()) {
        throw DataError("train_fold: no training segments for fold " +
                        std::to_string(fold.fold_index));
    }

    TestSet test_sets;
    for (const auto& id : fold.test_ids) {
        const FeatureRecord& rec = store.record(id);
        if (rec.augmented) {
            throw DataError("test fold contains an augmented record: " + id);
        }
        test_sets.emplace_back(rec.label,
                               segment_frames(store.load_logmel(rec), plan.window_frames,
                                              plan.test_hop, rec.utterance_id, rec.label));
    }
    if (test_sets.empty()) {
        throw DataError("train_fold: empty test fold");
    }

    CheckpointMeta meta;
    meta.model = model_config;
    meta.features = store.params();
    meta.window_seconds = seg.window_seconds;
    meta.train_overlap_seconds = seg.train_overlap_seconds;
    meta.test_overlap_seconds = seg.test_overlap_seconds;
    meta.normalize_features = train_config.normalize_features;
    if (train_config.normalize_features) {
        double sum = 0.0, sumsq = 0.0;
        i64 count = 0;
        for (const auto& s : train_segments) {
            for (float v : s.features.data) {
                sum += v;
                sumsq += static_cast<double>(v) * v;
                ++count;
            }
        }
        meta.feat_mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sumsq / static_cast<double>(count) -
                                             meta.feat_mean * meta.feat_mean);
        meta.feat_std = var > 0.0 ? std::sqrt(var) : 1.0;
    }

    Classifier model(model_config);
    Rng init_rng(derive_seed(seed, 101));
    model.init(init_rng);
    Rng shuffle_rng(derive_seed(seed, 202));
    Rng forward_rng(derive_seed(seed, 303));

    OptimConfig<float> opt_config;
    opt_config.algo = train_config.optimizer;
    opt_config.lr = static_cast<float>(train_config.lr);
    opt_config.beta1 = static_cast<float>(train_config.beta1);
    opt_config.beta2 = static_cast<float>(train_config.beta2);
    opt_config.weight_decay = static_cast<float>(train_config.weight_decay);
    Optimizer<float> optimizer(opt_config);
    auto params = model.named_parameters();

    TrainResult result;
    const auto record_epoch = [&](int epoch, double loss, double train_wa) {
        const MetricsReport report = evaluate_preloaded(model, meta, test_sets);
        result.logs.push_back({epoch, loss, train_wa, report.wa, report.ua, report.acc});
        if (!result.best_model || report.acc > result.best_meta.best.acc) {
            meta.step = optimizer.step_count();
            meta.rng_state = forward_rng.state();
            meta.best = {report.wa, report.ua, report.acc, epoch};
            result.best_meta = meta;
            result.best_report = report;
            result.best_model = std::make_shared<Classifier>(model);
        }
        return report;
    };

    record_epoch(0, 0.0, 0.0);

    const i64 n_segments = static_cast<i64>(train_segments.size());
    std::vector<i64> order(static_cast<std::size_t>(n_segments));
    for (i64 i = 0; i < n_segments; ++i) {
        order[static_cast<std::size_t>(i)] = i;
    }

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        i64 correct = 0;
        for (i64 start = 0; start < n_segments; start += train_config.batch_size) {
            const i64 stop = std::min<i64>(start + train_config.batch_size, n_segments);
            std::vector<Segment> batch_segments;
            std::vector<int> labels;
            for (i64 i = start; i < stop; ++i) {
                const auto& s = train_segments[static_cast<std::size_t>(
                    order[static_cast<std::size_t>(i)])];
                batch_segments.push_back(s);
                labels.push_back(s.label);
            }
            const TensorT<float> batch = segments_to_batch(
                batch_segments, meta.feat_mean, meta.feat_std, meta.normalize_features);
            NamedTensors<float> grads;
            TensorT<float> logits;
            const float loss = model.backward(batch, labels, &forward_rng, grads, &logits);
            optimizer.step(params, grads);
            loss_sum += static_cast<double>(loss) * static_cast<double>(stop - start);
            for (i64 i = 0; i < stop - start; ++i) {
                int best = 0;
                for (int j = 1; j < model_config.num_classes; ++j) {
                    if (logits.at2(i, j) > logits.at2(i, best)) {
                        best = j;
                    }
                }
                if (best == labels[static_cast<std::size_t>(i)]) {
                    ++correct;
                }
            }
        }
        const double train_wa = static_cast<double>(correct) / static_cast<double>(n_segments);
        const double mean_loss = loss_sum / static_cast<double>(n_segments);
        const MetricsReport report = record_epoch(epoch, mean_loss, train_wa);

        const bool wa_enabled = train_config.early_stop_train_wa <= 1.0;
        const bool acc_enabled = train_config.early_stop_acc <= 1.0;
        if ((wa_enabled || acc_enabled) &&
            (!wa_enabled || train_wa >= train_config.early_stop_train_wa) &&
            (!acc_enabled || report.acc >= train_config.early_stop_acc)) {
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Ablation and sweeps

namespace {

RunRow run_row(const std::string& name, const FeatureStore& store, const ModelConfig& mc,
               const TrainConfig& tc, const SegmentationConfig& seg,
               const std::vector<FoldSplit>& folds, const std::vector<int>& fold_indices,
               std::uint64_t seed) {
    RunRow row;
    row.name = name;
    double wa = 0.0, ua = 0.0, acc = 0.0;
    for (int fi : fold_indices) {
        if (fi < 0 || fi >= static_cast<int>(folds.size())) {
            throw ConfigError("fold index out of range: " + std::to_string(fi));
        }
        const auto& fold = folds[static_cast<std::size_t>(fi)];
        TrainResult res = train_fold(store, fold, mc, tc, seg,
                                     derive_seed(seed, static_cast<std::uint64_t>(fi)));
        row.folds.push_back(fi);
        row.fold_reports.push_back(res.best_report);
        row.fold_logs.push_back(res.logs);
        wa += res.best_report.wa;
        ua += res.best_report.ua;
        acc += res.best_report.acc;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                row.mean.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                    res.best_report
                        .confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            }
        }
    }
    const double n = static_cast<double>(fold_indices.size());
    row.mean.wa = wa / n;
    row.mean.ua = ua / n;
    row.mean.acc = acc / n;
    return row;
}

}  // namespace

std::vector<RunRow> run_ablation(const FeatureStore& store, const ModelConfig& model_config,
                                 const TrainConfig& train_config, const SegmentationConfig& seg,
                                 const std::vector<FoldSplit>& folds,
                                 const std::vector<int>& fold_indices, std::uint64_t seed) {
    struct RowSpec {
        const char* name;
        bool attention;
        bool area_1x1;
        bool augmented;
    };
    const RowSpec specs[] = {
        {"cnn", false, false, false},
        {"cnn_vtlp", false, false, true},
        {"attention", true, true, false},
        {"attention_vtlp", true, true, true},
        {"area_attention", true, false, false},
        {"area_attention_vtlp", true, false, true},
    };
    std::vector<RunRow> rows;
    for (const auto& spec : specs) {
        ModelConfig mc = model_config;
        mc.attention_enabled = spec.attention;
        if (spec.area_1x1) {
            mc.attention.max_height = 1;
            mc.attention.max_width = 1;
        }
        TrainConfig tc = train_config;
        tc.use_augmented = spec.augmented;
        rows.push_back(run_row(spec.name, store, mc, tc, seg, folds, fold_indices, seed));
    }
    return rows;
}

SweepKind sweep_kind_from_name(const std::string& name) {
    if (name == "max_area_size") {
        return SweepKind::MaxAreaSize;
    }
    if (name == "area_features") {
        return SweepKind::AreaFeatures;
    }
    if (name == "replica_count") {
        return SweepKind::ReplicaCount;
    }
    throw ConfigError("unknown sweep kind: " + name +
                      " (expected max_area_size | area_features | replica_count)");
}

std::string sweep_kind_name(SweepKind kind) {
    switch (kind) {
        case SweepKind::MaxAreaSize:
            return "max_area_size";
        case SweepKind::AreaFeatures:
            return "area_features";
        case SweepKind::ReplicaCount:
            return "replica_count";
    }
    return {};
}

std::vector<RunRow> run_sweep(SweepKind kind, const FeatureStore& store,
                              const ModelConfig& model_config, const TrainConfig& train_config,
                              const SegmentationConfig& seg, const std::vector<FoldSplit>& folds,
                              const std::vector<int>& fold_indices, std::uint64_t seed) {
    std::vector<RunRow> rows;
    switch (kind) {
        case SweepKind::MaxAreaSize: {
            for (int size = 1; size <= 4; ++size) {
                ModelConfig mc = model_config;
                mc.attention_enabled = true;
                mc.attention.max_height = size;
                mc.attention.max_width = size;
                TrainConfig tc = train_config;
                tc.use_augmented = false;
                rows.push_back(run_row("max_" + std::to_string(size) + "x" +
                                           std::to_string(size),
                                       store, mc, tc, seg, folds, fold_indices, seed));
            }
            break;
        }
        case SweepKind::AreaFeatures: {
            const std::pair<KeyMode, const char*> keys[] = {{KeyMode::Max, "max"},
                                                            {KeyMode::Mean, "mean"},
                                                            {KeyMode::Sample, "sample"}};
            const std::pair<ValueMode, const char*> values[] = {{ValueMode::Max, "max"},
                                                                {ValueMode::Mean, "mean"},
                                                                {ValueMode::Sum, "sum"}};
            for (const auto& [kmode, kname] : keys) {
                for (const auto& [vmode, vname] : values) {
                    ModelConfig mc = model_config;
                    mc.attention_enabled = true;
                    mc.attention.key_mode = kmode;
                    mc.attention.value_mode = vmode;
                    TrainConfig tc = train_config;
                    tc.use_augmented = false;
                    rows.push_back(run_row(std::string(kname) + "_" + vname, store, mc, tc, seg,
                                           folds, fold_indices, seed));
                }
            }
            break;
        }
        case SweepKind::ReplicaCount: {
            int available = 0;
            for (const auto& rec : store.records()) {
                if (rec.augmented) {
                    available = std::max(available, rec.replica_index + 1);
                }
            }
            if (available < 7) {
                throw ConfigError("replica_count sweep needs a store with 7 replicas "
                                  "(run the augment command first); found " +
                                  std::to_string(available));
            }
            for (int multiplier = 1; multiplier <= 8; ++multiplier) {
                TrainConfig tc = train_config;
                tc.use_augmented = multiplier > 1;
                tc.max_replicas = multiplier - 1;
                rows.push_back(run_row("multiplier_" + std::to_string(multiplier), store,
                                       model_config, tc, seg, folds, fold_indices, seed));
            }
            break;
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Result files

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write metrics csv: " + path.string());
    }
    out << "epoch,loss,train_wa,wa,ua,acc\n";
    for (const auto& log : logs) {
        out << log.epoch << ',' << fmt_double(log.loss) << ',' << fmt_double(log.train_wa) << ','
            << fmt_double(log.wa) << ',' << fmt_double(log.ua) << ',' << fmt_double(log.acc)
            << '\n';
    }
}

void write_confusion_csv(const std::filesystem::path& path, const Confusion& confusion) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write confusion csv: " + path.string());
    }
    out << "true\\pred";
    for (const auto& name : emotion_label_names()) {
        out << ',' << name;
    }
    out << '\n';
    for (int i = 0; i < 4; ++i) {
        out << emotion_label_names()[static_cast<std::size_t>(i)];
        for (int j = 0; j < 4; ++j) {
            out << ',' << confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
        out << '\n';
    }
}

void write_rows_summary_json(const std::filesystem::path& path, const std::string& kind,
                             const std::vector<RunRow>& rows) {
    nlohmann::json j;
    j["kind"] = kind;
    nlohmann::json jrows = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json jr;
        jr["name"] = row.name;
        jr["wa"] = row.mean.wa;
        jr["ua"] = row.mean.ua;
        jr["acc"] = row.mean.acc;
        nlohmann::json per_fold = nlohmann::json::array();
        for (std::size_t i = 0; i < row.fold_reports.size(); ++i) {
            per_fold.push_back({{"fold", row.folds[i]},
                                {"wa", row.fold_reports[i].wa},
                                {"ua", row.fold_reports[i].ua},
                                {"acc", row.fold_reports[i].acc}});
        }
        jr["per_fold"] = per_fold;
        jrows.push_back(jr);
    }
    j["rows"] = jrows;
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write summary json: " + path.string());
    }
    out << j.dump(2) << "\n";
}

}  // namespace ser
