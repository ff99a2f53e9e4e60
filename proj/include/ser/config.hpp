#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ser/audio.hpp"
#include "ser/model.hpp"
#include "ser/train.hpp"
#include "ser/vtlp.hpp"

namespace ser {

// The operator-facing run configuration. Unknown keys are rejected; every
// field has a default; the fully resolved config is echoed into run
// directories so runs are self-describing.
struct RunConfig {
    std::uint64_t seed = 2024;
    int threads = 0;  // 0 = hardware default
    FeatureParams features;
    SegmentationConfig segmentation;
    VtlpConfig vtlp;
    ModelConfig model;
    TrainConfig train;
};

RunConfig default_run_config();
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json_text(const RunConfig& config);
void echo_run_config(const std::filesystem::path& run_dir, const RunConfig& config);

}  // namespace ser
