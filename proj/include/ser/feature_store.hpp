#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ser/audio.hpp"
#include "ser/tensor.hpp"

namespace ser {

struct FeatureRecord {
    std::string utterance_id;
    std::string logmel_path;  // relative to the store root
    std::string power_path;   // relative; empty for augmented records
    int label = -1;
    i64 frames = 0;
    bool augmented = false;
    double alpha = 1.0;
    int replica_index = -1;
    std::string source_utterance_id;
};

// On-disk layout: params.json, index.jsonl (one record per line, stable
// order), features/<id>.logmel.atnt and features/<id>.power.atnt. The linear
// power spectrogram is kept for originals so augmentation can replay the
// shared power -> logMel path.
class FeatureStore {
public:
    static FeatureStore create(const std::filesystem::path& root, const FeatureParams& params);
    static FeatureStore open(const std::filesystem::path& root);

    const FeatureParams& params() const { return params_; }
    const std::vector<FeatureRecord>& records() const { return records_; }
    const std::filesystem::path& root() const { return root_; }

    bool contains(const std::string& utterance_id) const;
    const FeatureRecord& record(const std::string& utterance_id) const;

    void add_utterance(const std::string& utterance_id, int label,
                       const TensorT<float>& logmel, const TensorT<float>& power);
    void add_augmented(const std::string& utterance_id, int label, const TensorT<float>& logmel,
                       const std::string& source_utterance_id, double alpha, int replica_index);

    // Rewrites params.json and index.jsonl; byte-identical across reruns
    // with identical content.
    void save_index() const;

    TensorT<float> load_logmel(const FeatureRecord& rec) const;
    TensorT<float> load_power(const FeatureRecord& rec) const;

private:
    void insert(FeatureRecord rec);

    std::filesystem::path root_;
    FeatureParams params_;
    std::vector<FeatureRecord> records_;
    std::map<std::string, std::size_t> by_id_;
};

}  // namespace ser
