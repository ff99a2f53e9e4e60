#pragma once

#include <cstdint>
#include <filesystem>

#include "ser/audio.hpp"

namespace ser {

struct SynthConfig {
    int per_class = 25;
    std::uint64_t seed = 0;
    double min_seconds = 2.0;
    double max_seconds = 3.0;
};

// Emits a 4-class labeled feature store (no WAVs): each class is a distinct
// frequency-band energy signature with per-utterance jitter, written as a
// linear power spectrogram plus the derived logMel, together with a
// manifest.csv whose wav_path column is empty. Returns the utterance count.
int synthesize_corpus(const std::filesystem::path& store_dir, const FeatureParams& params,
                      const SynthConfig& config);

}  // namespace ser
