#include "ser/feature_store.hpp"

#include <fstream>

#include "json.hpp"

namespace ser {

namespace {

using nlohmann::json;

json params_to_json(const FeatureParams& p) {
    return json{{"sample_rate", p.sample_rate}, {"n_fft", p.n_fft},
                {"win_length", p.win_length},   {"hop_length", p.hop_length},
                {"n_mels", p.n_mels},           {"fmin", p.fmin},
                {"fmax", p.fmax}};
}

FeatureParams params_from_json(const json& j) {
    FeatureParams p;
    p.sample_rate = j.at("sample_rate").get<int>();
    p.n_fft = j.at("n_fft").get<int>();
    p.win_length = j.at("win_length").get<int>();
    p.hop_length = j.at("hop_length").get<int>();
    p.n_mels = j.at("n_mels").get<int>();
    p.fmin = j.at("fmin").get<float>();
    p.fmax = j.at("fmax").get<float>();
    return p;
}

}  // namespace

FeatureStore FeatureStore::create(const std::filesystem::path& root,
                                  const FeatureParams& params) {
    FeatureStore store;
    store.root_ = root;
    store.params_ = params;
    std::filesystem::create_directories(root / "features");
    store.save_index();
    return store;
}

FeatureStore FeatureStore::open(const std::filesystem::path& root) {
    FeatureStore store;
    store.root_ = root;
    std::ifstream pin(root / "params.json");
    if (!pin) {
        throw DataError("feature store has no params.json: " + root.string());
    }
    json pj;
    try {
        pin >> pj;
    } catch (const json::exception& e) {
        throw DataError("bad params.json: " + std::string(e.what()));
    }
    store.params_ = params_from_json(pj);

    std::ifstream in(root / "index.jsonl");
    if (!in) {
        throw DataError("feature store has no index.jsonl: " + root.string());
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("bad index line: " + std::string(e.what()));
        }
        FeatureRecord rec;
        rec.utterance_id = j.at("utterance_id").get<std::string>();
        rec.logmel_path = j.at("path").get<std::string>();
        rec.power_path = j.value("power_path", std::string());
        rec.label = j.at("label").get<int>();
        rec.frames = j.at("frames").get<i64>();
        const std::string expected_hash = feature_params_hash(store.params_);
        if (j.at("params_hash").get<std::string>() != expected_hash) {
            throw DataError("record params_hash does not match store params: " +
                            rec.utterance_id);
        }
        rec.augmented = j.value("augmented", false);
        rec.alpha = j.value("alpha", 1.0);
        rec.replica_index = j.value("replica_index", -1);
        rec.source_utterance_id = j.value("source_utterance_id", std::string());
        store.insert(std::move(rec));
    }
    return store;
}

bool FeatureStore::contains(const std::string& utterance_id) const {
    return by_id_.count(utterance_id) > 0;
}

const FeatureRecord& FeatureStore::record(const std::string& utterance_id) const {
    const auto it = by_id_.find(utterance_id);
    if (it == by_id_.end()) {
        throw DataError("unknown utterance_id: " + utterance_id);
    }
    return records_[it->second];
}

void FeatureStore::insert(FeatureRecord rec) {
    if (by_id_.count(rec.utterance_id)) {
        throw DataError("duplicate utterance_id: " + rec.utterance_id);
    }
    by_id_.emplace(rec.utterance_id, records_.size());
    records_.push_back(std::move(rec));
}

void FeatureStore::add_utterance(const std::string& utterance_id, int label,
                                 const TensorT<float>& logmel, const TensorT<float>& power) {
    FeatureRecord rec;
    rec.utterance_id = utterance_id;
    rec.logmel_path = "features/" + utterance_id + ".logmel.atnt";
    rec.power_path = "features/" + utterance_id + ".power.atnt";
    rec.label = label;
    rec.frames = logmel.shape[0];
    save_tensor(root_ / rec.logmel_path, logmel);
    save_tensor(root_ / rec.power_path, power);
    insert(std::move(rec));
}

void FeatureStore::add_augmented(const std::string& utterance_id, int label,
                                 const TensorT<float>& logmel,
                                 const std::string& source_utterance_id, double alpha,
                                 int replica_index) {
    FeatureRecord rec;
    rec.utterance_id = utterance_id;
    rec.logmel_path = "features/" + utterance_id + ".logmel.atnt";
    rec.label = label;
    rec.frames = logmel.shape[0];
    rec.augmented = true;
    rec.alpha = alpha;
    rec.replica_index = replica_index;
    rec.source_utterance_id = source_utterance_id;
    save_tensor(root_ / rec.logmel_path, logmel);
    insert(std::move(rec));
}

void FeatureStore::save_index() const {
    {
        std::ofstream out(root_ / "params.json", std::ios::trunc);
        out << params_to_json(params_).dump(2) << "\n";
    }
    std::ofstream out(root_ / "index.jsonl", std::ios::trunc);
    const std::string hash = feature_params_hash(params_);
    for (const auto& rec : records_) {
        json j{{"utterance_id", rec.utterance_id},
               {"path", rec.logmel_path},
               {"label", rec.label},
               {"frames", rec.frames},
               {"params_hash", hash},
               {"augmented", rec.augmented}};
        if (!rec.power_path.empty()) {
            j["power_path"] = rec.power_path;
        }
        if (rec.augmented) {
            j["alpha"] = rec.alpha;
            j["replica_index"] = rec.replica_index;
            j["source_utterance_id"] = rec.source_utterance_id;
        }
        out << j.dump() << "\n";
    }
    if (!out) {
        throw DataError("cannot write index.jsonl under " + root_.string());
    }
}

TensorT<float> FeatureStore::load_logmel(const FeatureRecord& rec) const {
    return load_tensor<float>(root_ / rec.logmel_path);
}

TensorT<float> FeatureStore::load_power(const FeatureRecord& rec) const {
    if (rec.power_path.empty()) {
        throw DataError("record has no power spectrogram: " + rec.utterance_id);
    }
    return load_tensor<float>(root_ / rec.power_path);
}

}  // namespace ser
