#pragma once

#include <cstdint>
#include <vector>

#include "ser/feature_store.hpp"
#include "ser/tensor.hpp"

namespace ser {

struct VtlpConfig {
    float alpha_min = 0.9f;
    float alpha_max = 1.1f;
    float boundary_hz = 4800.0f;
    int replicas = 7;
};

// Piecewise-linear warp: with F = boundary * min(alpha,1) / alpha,
// f' = f * alpha for f <= F, and above F a linear ramp that fixes the
// Nyquist endpoint. Continuous and strictly increasing on [0, nyquist].
double warp_frequency(double f, double alpha, double boundary_hz, double nyquist);

// Re-samples each frame of a T x (n_fft/2+1) power spectrogram at inverse-
// warped bin centers (linear interpolation), then rescales the frame so its
// total energy matches the input frame.
TensorT<float> vtlp_spectrogram(const TensorT<float>& power, double alpha, double boundary_hz,
                                int sample_rate);

// Appends `replicas` warped copies of every non-augmented record, with
// alpha ~ U[alpha_min, alpha_max] drawn from a per-(utterance, replica)
// stream derived from `seed`. Returns the new records.
std::vector<FeatureRecord> generate_replicas(FeatureStore& store, const VtlpConfig& config,
                                             std::uint64_t seed);

}  // namespace ser
