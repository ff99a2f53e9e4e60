#include "ser/synth.hpp"

#include <cmath>
#include <fstream>

#include "ser/feature_store.hpp"
#include "ser/rng.hpp"
#include "ser/train.hpp"

namespace ser {

namespace {

// Class band centers sit well apart so a +-10% VTLP warp keeps them distinct.
constexpr double kBandCenters[4] = {600.0, 1500.0, 2600.0, 4000.0};

TensorT<float> synth_power(int label, i64 frames, const FeatureParams& params, Rng& rng) {
    const i64 bins = params.n_fft / 2 + 1;
    const double nyquist = params.sample_rate / 2.0;
    const double bin_hz = nyquist / static_cast<double>(bins - 1);

    const double center = kBandCenters[label] * rng.uniform(0.92, 1.08);
    const double width = 0.12 * center;
    const double amp = rng.uniform(0.5, 2.0);
    const double env_period = rng.uniform(20.0, 60.0);
    const double env_phase = rng.uniform(0.0, 6.28318530717958648);
    const double floor_level = 1e-6 * rng.uniform(0.5, 1.5);

    TensorT<float> power({frames, bins});
    for (i64 t = 0; t < frames; ++t) {
        const double env = 0.7 + 0.3 * std::sin(2.0 * 3.14159265358979324 *
                                                    static_cast<double>(t) / env_period +
                                                env_phase);
        for (i64 k = 0; k < bins; ++k) {
            const double f = k * bin_hz;
            const double d = (f - center) / width;
            const double bump = amp * env * std::exp(-0.5 * d * d);
            const double noise = floor_level * (0.5 + rng.uniform());
            power.at2(t, k) = static_cast<float>(bump + noise);
        }
    }
    return power;
}

}  // namespace

int synthesize_corpus(const std::filesystem::path& store_dir, const FeatureParams& params,
                      const SynthConfig& config) {
    if (config.per_class < 1) {
        throw ConfigError("synth: per_class must be positive");
    }
    if (!(config.min_seconds > 0.0) || config.min_seconds > config.max_seconds) {
        throw ConfigError("synth: require 0 < min_seconds <= max_seconds");
    }
    FeatureStore store = FeatureStore::create(store_dir, params);

    std::ofstream manifest(store_dir / "manifest.csv", std::ios::trunc);
    manifest << "utterance_id,wav_path,label\n";

    const double fps = static_cast<double>(params.sample_rate) / params.hop_length;
    int count = 0;
    for (int label = 0; label < 4; ++label) {
        for (int i = 0; i < config.per_class; ++i) {
            char idx[16];
            std::snprintf(idx, sizeof(idx), "%03d", i);
            const std::string id = emotion_label_names()[static_cast<std::size_t>(label)] +
                                   std::string("_") + idx;
            Rng rng(derive_seed(config.seed, hash_string(id)));
            const double seconds = rng.uniform(config.min_seconds, config.max_seconds);
            const i64 frames = std::max<i64>(1, static_cast<i64>(std::llround(seconds * fps)));
            const TensorT<float> power = synth_power(label, frames, params, rng);
            const TensorT<float> logmel = power_to_log_mel(power, params);
            store.add_utterance(id, label, logmel, power);
            manifest << id << ",," << emotion_label_names()[static_cast<std::size_t>(label)]
                     << "\n";
            ++count;
        }
    }
    store.save_index();
    if (!manifest) {
        throw DataError("cannot write manifest.csv under " + store_dir.string());
    }
    return count;
}

}  // namespace ser
