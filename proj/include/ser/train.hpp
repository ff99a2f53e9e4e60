#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ser/feature_store.hpp"
#include "ser/model.hpp"

namespace ser {

// Fixed 4-emotion label set; ids are positional.
const std::array<std::string, 4>& emotion_label_names();
int emotion_label_id(const std::string& name);

struct ManifestRecord {
    std::string utterance_id;
    std::string wav_path;
    int label = -1;
};

// Strict CSV with header exactly "utterance_id,wav_path,label".
std::vector<ManifestRecord> read_manifest_csv(const std::filesystem::path& path);

struct SegmentationConfig {
    double window_seconds = 2.0;
    double train_overlap_seconds = 1.0;
    double test_overlap_seconds = 1.6;
};

struct FoldSplit {
    int fold_index = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

// Five independent stratified 80/20 draws over non-augmented utterances.
// (id, label) pairs; deterministic in `seed`.
std::vector<FoldSplit> split_folds(const std::vector<std::pair<std::string, int>>& utterances,
                                   std::uint64_t seed, int num_folds = 5,
                                   double test_fraction = 0.2);

using Confusion = std::array<std::array<i64, 4>, 4>;  // rows true, cols predicted

struct MetricsReport {
    Confusion confusion{};
    double wa = 0.0;  // trace / total
    double ua = 0.0;  // mean per-class recall, absent classes excluded
    double acc = 0.0; // (wa + ua) / 2
};

MetricsReport compute_metrics(const Confusion& confusion);

struct TrainConfig {
    OptAlgo optimizer = OptAlgo::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    int batch_size = 32;
    int epochs = 50;
    bool use_augmented = true;
    int max_replicas = -1;  // cap on replicas per utterance; -1 = all
    bool normalize_features = false;
    // Early stop once every enabled (<= 1.0) threshold is met.
    double early_stop_train_wa = 2.0;
    double early_stop_acc = 2.0;
};

struct EpochLog {
    int epoch = 0;       // 0 is the pre-training evaluation
    double loss = 0.0;   // mean train loss of the epoch
    double train_wa = 0.0;
    double wa = 0.0, ua = 0.0, acc = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> logs;
    MetricsReport best_report;
    CheckpointMeta best_meta;
    std::shared_ptr<Classifier> best_model;
};

// Trains on the fold's train utterances (plus their augmented replicas when
// enabled), evaluates utterance-level metrics after every epoch, and keeps
// the checkpoint with the highest ACC.
TrainResult train_fold(const FeatureStore& store, const FoldSplit& fold,
                       const ModelConfig& model_config, const TrainConfig& train_config,
                       const SegmentationConfig& seg, std::uint64_t seed);

MetricsReport evaluate_utterances(Classifier& model, const CheckpointMeta& meta,
                                  const FeatureStore& store,
                                  const std::vector<std::string>& utterance_ids,
                                  const SegmentationConfig& seg);

std::vector<std::pair<std::string, int>> non_augmented_utterances(const FeatureStore& store);

struct RunRow {
    std::string name;
    std::vector<int> folds;
    std::vector<MetricsReport> fold_reports;
    std::vector<std::vector<EpochLog>> fold_logs;
    MetricsReport mean;  // wa/ua/acc averaged over folds; confusion summed
};

// Six-row grid {CNN, CNN+VTLP, Attention(1x1), Attention+VTLP, AreaAttention,
// AreaAttention+VTLP}; every row shares the same per-fold seeds and splits.
std::vector<RunRow> run_ablation(const FeatureStore& store, const ModelConfig& model_config,
                                 const TrainConfig& train_config, const SegmentationConfig& seg,
                                 const std::vector<FoldSplit>& folds,
                                 const std::vector<int>& fold_indices, std::uint64_t seed);

enum class SweepKind { MaxAreaSize, AreaFeatures, ReplicaCount };

SweepKind sweep_kind_from_name(const std::string& name);
std::string sweep_kind_name(SweepKind kind);

// MaxAreaSize: square max sizes 1x1..4x4 without augmentation.
// AreaFeatures: {Max,Mean,Sample} x {Max,Mean,Sum} key/value grid.
// ReplicaCount: training-data multiplier 1..8 (m = originals + m-1 replicas).
std::vector<RunRow> run_sweep(SweepKind kind, const FeatureStore& store,
                              const ModelConfig& model_config, const TrainConfig& train_config,
                              const SegmentationConfig& seg, const std::vector<FoldSplit>& folds,
                              const std::vector<int>& fold_indices, std::uint64_t seed);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs);
void write_confusion_csv(const std::filesystem::path& path, const Confusion& confusion);
void write_rows_summary_json(const std::filesystem::path& path, const std::string& kind,
                             const std::vector<RunRow>& rows);

}  // namespace ser
