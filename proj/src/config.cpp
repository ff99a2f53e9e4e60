#include "ser/config.hpp"

#include <fstream>

#include "ser/json_conv.hpp"

namespace ser {

using nlohmann::json;

std::string key_mode_name(KeyMode mode) {
    switch (mode) {
        case KeyMode::Max:
            return "max";
        case KeyMode::Mean:
            return "mean";
        case KeyMode::Sample:
            return "sample";
    }
    return {};
}

KeyMode key_mode_from_name(const std::string& name) {
    if (name == "max") {
        return KeyMode::Max;
    }
    if (name == "mean") {
        return KeyMode::Mean;
    }
    if (name == "sample") {
        return KeyMode::Sample;
    }
    throw ConfigError("unknown key mode: " + name + " (expected max | mean | sample)");
}

std::string value_mode_name(ValueMode mode) {
    switch (mode) {
        case ValueMode::Max:
            return "max";
        case ValueMode::Mean:
            return "mean";
        case ValueMode::Sum:
            return "sum";
    }
    return {};
}

ValueMode value_mode_from_name(const std::string& name) {
    if (name == "max") {
        return ValueMode::Max;
    }
    if (name == "mean") {
        return ValueMode::Mean;
    }
    if (name == "sum") {
        return ValueMode::Sum;
    }
    throw ConfigError("unknown value mode: " + name + " (expected max | mean | sum)");
}

std::string optimizer_name(OptAlgo algo) {
    return algo == OptAlgo::Sgd ? "sgd" : "adam";
}

OptAlgo optimizer_from_name(const std::string& name) {
    if (name == "sgd") {
        return OptAlgo::Sgd;
    }
    if (name == "adam") {
        return OptAlgo::Adam;
    }
    throw ConfigError("unknown optimizer: " + name + " (expected sgd | adam)");
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
    if (!j.is_object()) {
        throw ConfigError("config section '" + context + "' must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown config key '" + key + "' in " + context);
        }
    }
}

json to_json(const FeatureParams& p) {
    return json{{"sample_rate", p.sample_rate}, {"n_fft", p.n_fft},
                {"win_length", p.win_length},   {"hop_length", p.hop_length},
                {"n_mels", p.n_mels},           {"fmin", p.fmin},
                {"fmax", p.fmax}};
}

FeatureParams feature_params_from_json(const json& j) {
    reject_unknown_keys(
        j, {"sample_rate", "n_fft", "win_length", "hop_length", "n_mels", "fmin", "fmax"},
        "features");
    FeatureParams p;
    p.sample_rate = j.value("sample_rate", p.sample_rate);
    p.n_fft = j.value("n_fft", p.n_fft);
    p.win_length = j.value("win_length", p.n_fft);
    p.hop_length = j.value("hop_length", p.hop_length);
    p.n_mels = j.value("n_mels", p.n_mels);
    p.fmin = j.value("fmin", p.fmin);
    p.fmax = j.value("fmax", p.fmax);
    return p;
}

json to_json(const AreaConfig& c) {
    return json{{"max_height", c.max_height},
                {"max_width", c.max_width},
                {"key_mode", key_mode_name(c.key_mode)},
                {"value_mode", value_mode_name(c.value_mode)},
                {"num_heads", c.num_heads}};
}

AreaConfig area_config_from_json(const json& j) {
    reject_unknown_keys(j, {"max_height", "max_width", "key_mode", "value_mode", "num_heads"},
                        "attention");
    AreaConfig c;
    c.max_height = j.value("max_height", c.max_height);
    c.max_width = j.value("max_width", c.max_width);
    if (j.contains("key_mode")) {
        c.key_mode = key_mode_from_name(j.at("key_mode").get<std::string>());
    }
    if (j.contains("value_mode")) {
        c.value_mode = value_mode_from_name(j.at("value_mode").get<std::string>());
    }
    c.num_heads = j.value("num_heads", c.num_heads);
    if (c.max_height < 1 || c.max_width < 1 || c.num_heads < 1) {
        throw ConfigError("attention: max area bounds and num_heads must be positive");
    }
    return c;
}

json to_json(const ModelConfig& c) {
    return json{{"parallel_channels", c.parallel_channels},
                {"trunk_channels", c.trunk_channels},
                {"time_kernel", c.time_kernel},
                {"freq_kernel", c.freq_kernel},
                {"trunk_kernel", c.trunk_kernel},
                {"pool_after", c.pool_after},
                {"attention", to_json(c.attention)},
                {"attention_enabled", c.attention_enabled},
                {"num_classes", c.num_classes},
                {"logit_averaging", c.logit_averaging}};
}

ModelConfig model_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"parallel_channels", "trunk_channels", "time_kernel", "freq_kernel",
                         "trunk_kernel", "pool_after", "attention", "attention_enabled",
                         "num_classes", "logit_averaging"},
                        "model");
    ModelConfig c;
    c.parallel_channels = j.value("parallel_channels", c.parallel_channels);
    c.trunk_channels = j.value("trunk_channels", c.trunk_channels);
    c.time_kernel = j.value("time_kernel", c.time_kernel);
    c.freq_kernel = j.value("freq_kernel", c.freq_kernel);
    c.trunk_kernel = j.value("trunk_kernel", c.trunk_kernel);
    c.pool_after = j.value("pool_after", c.pool_after);
    if (j.contains("attention")) {
        c.attention = area_config_from_json(j.at("attention"));
    }
    c.attention_enabled = j.value("attention_enabled", c.attention_enabled);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.logit_averaging = j.value("logit_averaging", c.logit_averaging);
    c.validate();
    return c;
}

json to_json(const VtlpConfig& c) {
    return json{{"alpha_min", c.alpha_min},
                {"alpha_max", c.alpha_max},
                {"boundary_hz", c.boundary_hz},
                {"replicas", c.replicas}};
}

VtlpConfig vtlp_config_from_json(const json& j) {
    reject_unknown_keys(j, {"alpha_min", "alpha_max", "boundary_hz", "replicas"}, "vtlp");
    VtlpConfig c;
    c.alpha_min = j.value("alpha_min", c.alpha_min);
    c.alpha_max = j.value("alpha_max", c.alpha_max);
    c.boundary_hz = j.value("boundary_hz", c.boundary_hz);
    c.replicas = j.value("replicas", c.replicas);
    if (!(c.alpha_min > 0.0f) || c.alpha_min > c.alpha_max) {
        throw ConfigError("vtlp: require 0 < alpha_min <= alpha_max");
    }
    if (c.replicas < 0) {
        throw ConfigError("vtlp: replicas must be nonnegative");
    }
    return c;
}

json to_json(const SegmentationConfig& c) {
    return json{{"window_seconds", c.window_seconds},
                {"train_overlap_seconds", c.train_overlap_seconds},
                {"test_overlap_seconds", c.test_overlap_seconds}};
}

SegmentationConfig segmentation_config_from_json(const json& j) {
    reject_unknown_keys(j, {"window_seconds", "train_overlap_seconds", "test_overlap_seconds"},
                        "segmentation");
    SegmentationConfig c;
    c.window_seconds = j.value("window_seconds", c.window_seconds);
    c.train_overlap_seconds = j.value("train_overlap_seconds", c.train_overlap_seconds);
    c.test_overlap_seconds = j.value("test_overlap_seconds", c.test_overlap_seconds);
    if (!(c.window_seconds > 0.0) || c.train_overlap_seconds >= c.window_seconds ||
        c.test_overlap_seconds >= c.window_seconds || c.train_overlap_seconds < 0.0 ||
        c.test_overlap_seconds < 0.0) {
        throw ConfigError("segmentation: require 0 <= overlap < window");
    }
    return c;
}

json to_json(const TrainConfig& c) {
    return json{{"optimizer", optimizer_name(c.optimizer)},
                {"lr", c.lr},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"use_augmented", c.use_augmented},
                {"max_replicas", c.max_replicas},
                {"normalize_features", c.normalize_features},
                {"early_stop_train_wa", c.early_stop_train_wa},
                {"early_stop_acc", c.early_stop_acc}};
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"optimizer", "lr", "beta1", "beta2", "weight_decay", "batch_size",
                         "epochs", "use_augmented", "max_replicas", "normalize_features",
                         "early_stop_train_wa", "early_stop_acc"},
                        "train");
    TrainConfig c;
    if (j.contains("optimizer")) {
        c.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
    }
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.use_augmented = j.value("use_augmented", c.use_augmented);
    c.max_replicas = j.value("max_replicas", c.max_replicas);
    c.normalize_features = j.value("normalize_features", c.normalize_features);
    c.early_stop_train_wa = j.value("early_stop_train_wa", c.early_stop_train_wa);
    c.early_stop_acc = j.value("early_stop_acc", c.early_stop_acc);
    if (c.batch_size < 1 || c.epochs < 0 || !(c.lr > 0.0)) {
        throw ConfigError("train: require batch_size >= 1, epochs >= 0, lr > 0");
    }
    return c;
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

json run_config_to_json(const RunConfig& c) {
    return json{{"seed", c.seed},
                {"threads", c.threads},
                {"features", to_json(c.features)},
                {"segmentation", to_json(c.segmentation)},
                {"vtlp", to_json(c.vtlp)},
                {"model", to_json(c.model)},
                {"train", to_json(c.train)}};
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    reject_unknown_keys(
        j, {"seed", "threads", "features", "segmentation", "vtlp", "model", "train"}, "config");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("features")) {
        c.features = feature_params_from_json(j.at("features"));
    }
    if (j.contains("segmentation")) {
        c.segmentation = segmentation_config_from_json(j.at("segmentation"));
    }
    if (j.contains("vtlp")) {
        c.vtlp = vtlp_config_from_json(j.at("vtlp"));
    }
    if (j.contains("model")) {
        c.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("train")) {
        c.train = train_config_from_json(j.at("train"));
    }
    return c;
}

std::string run_config_to_json_text(const RunConfig& config) {
    return run_config_to_json(config).dump(2) + "\n";
}

void echo_run_config(const std::filesystem::path& run_dir, const RunConfig& config) {
    std::filesystem::create_directories(run_dir);
    std::ofstream out(run_dir / "config.json", std::ios::trunc);
    if (!out) {
        throw DataError("cannot write config echo under " + run_dir.string());
    }
    out << run_config_to_json_text(config);
}

}  // namespace ser
