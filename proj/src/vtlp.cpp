#include "ser/vtlp.hpp"

#include <algorithm>
#include <cmath>

#include "ser/rng.hpp"

namespace ser {

double warp_frequency(double f, double alpha, double boundary_hz, double nyquist) {
    if (alpha <= 0.0) {
        throw ConfigError("vtlp: alpha must be positive");
    }
    if (f < 0.0 || f > nyquist) {
        throw ConfigError("vtlp: frequency outside [0, nyquist]");
    }
    const double breakpoint_src = boundary_hz * std::min(alpha, 1.0) / alpha;
    if (f <= breakpoint_src) {
        return f * alpha;
    }
    const double breakpoint_dst = boundary_hz * std::min(alpha, 1.0);
    return nyquist - (nyquist - breakpoint_dst) * (nyquist - f) / (nyquist - breakpoint_src);
}

namespace {

// Inverse of warp_frequency, also piecewise linear.
double unwarp_frequency(double fp, double alpha, double boundary_hz, double nyquist) {
    const double breakpoint_src = boundary_hz * std::min(alpha, 1.0) / alpha;
    const double breakpoint_dst = boundary_hz * std::min(alpha, 1.0);
    if (fp <= breakpoint_dst) {
        return fp / alpha;
    }
    return nyquist - (nyquist - breakpoint_src) * (nyquist - fp) / (nyquist - breakpoint_dst);
}

}  // namespace

TensorT<float> vtlp_spectrogram(const TensorT<float>& power, double alpha, double boundary_hz,
                                int sample_rate) {
    if (alpha <= 0.0) {
        throw ConfigError("vtlp: alpha must be positive");
    }
    if (power.rank() != 2) {
        throw DimensionError("vtlp: power spectrogram must be [T x B]");
    }
    if (alpha == 1.0) {
        return power;
    }
    const i64 t = power.shape[0], b = power.shape[1];
    const double nyquist = sample_rate / 2.0;
    const double bin_hz = nyquist / static_cast<double>(b - 1);

    // Source position per output bin, precomputed once.
    std::vector<double> src_pos(static_cast<std::size_t>(b));
    for (i64 k = 0; k < b; ++k) {
        const double f = std::min(nyquist, k * bin_hz);
        const double src = unwarp_frequency(f, alpha, boundary_hz, nyquist) / bin_hz;
        src_pos[static_cast<std::size_t>(k)] = std::clamp(src, 0.0, static_cast<double>(b - 1));
    }

    TensorT<float> out({t, b});
    for (i64 ti = 0; ti < t; ++ti) {
        const float* in_row = power.ptr() + ti * b;
        float* out_row = out.ptr() + ti * b;
        double in_energy = 0.0, out_energy = 0.0;
        for (i64 k = 0; k < b; ++k) {
            const double pos = src_pos[static_cast<std::size_t>(k)];
            const i64 i0 = static_cast<i64>(pos);
            const i64 i1 = std::min(i0 + 1, b - 1);
            const double frac = pos - static_cast<double>(i0);
            const double v = (1.0 - frac) * in_row[i0] + frac * in_row[i1];
            out_row[k] = static_cast<float>(v);
            out_energy += v;
            in_energy += in_row[k];
        }
        if (out_energy > 0.0) {
            const float scale = static_cast<float>(in_energy / out_energy);
            for (i64 k = 0; k < b; ++k) {
                out_row[k] *= scale;
            }
        }
    }
    return out;
}

std::vector<FeatureRecord> generate_replicas(FeatureStore& store, const VtlpConfig& config,
                                             std::uint64_t seed) {
    if (config.replicas < 0) {
        throw ConfigError("vtlp: replicas must be nonnegative");
    }
    if (!(config.alpha_min > 0.0f) || config.alpha_min > config.alpha_max) {
        throw ConfigError("vtlp: require 0 < alpha_min <= alpha_max");
    }
    const FeatureParams params = store.params();
    if (config.boundary_hz >= params.sample_rate / 2.0f) {
        throw ConfigError("vtlp: boundary_hz must be below the Nyquist frequency");
    }

    std::vector<FeatureRecord> sources;
    for (const auto& rec : store.records()) {
        if (!rec.augmented) {
            sources.push_back(rec);
        }
    }

    std::vector<FeatureRecord> added;
    for (const auto& src : sources) {
        const TensorT<float> power = store.load_power(src);
        for (int r = 0; r < config.replicas; ++r) {
            Rng rng(derive_seed(seed, hash_string(src.utterance_id) ^
                                          static_cast<std::uint64_t>(r)));
            const double alpha = rng.uniform(config.alpha_min, config.alpha_max);
            const TensorT<float> warped =
                vtlp_spectrogram(power, alpha, config.boundary_hz, params.sample_rate);
            const TensorT<float> logmel = power_to_log_mel(warped, params);
            const std::string id = src.utterance_id + "#vtlp" + std::to_string(r);
            store.add_augmented(id, src.label, logmel, src.utterance_id, alpha, r);
            added.push_back(store.record(id));
        }
    }
    return added;
}

}  // namespace ser
