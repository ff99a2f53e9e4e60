#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ser/tensor.hpp"

namespace ser {

struct Waveform {
    std::vector<float> samples;  // [-1, 1]
    int sample_rate = 0;
};

// 16-bit PCM WAV; stereo is downmixed by averaging.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

Waveform resample_linear(const Waveform& wave, int target_rate);

struct FeatureParams {
    int sample_rate = 16000;
    int n_fft = 1024;
    int win_length = 1024;
    int hop_length = 160;
    int n_mels = 40;
    float fmin = 0.0f;
    float fmax = 8000.0f;

    i64 frames_per_window(double window_seconds) const {
        return static_cast<i64>(
            std::llround(window_seconds * sample_rate / static_cast<double>(hop_length)));
    }
    bool operator==(const FeatureParams&) const = default;
};

std::string feature_params_hash(const FeatureParams& params);

// Hann-windowed, reflect-center-padded |STFT|^2; T = floor(len/hop) + 1 rows,
// n_fft/2 + 1 columns.
TensorT<float> stft_power(const Waveform& wave, int n_fft, int hop_length, int win_length);

// Triangular Slaney-scale filters, area-normalized; [n_mels x (n_fft/2+1)].
TensorT<float> mel_filterbank(int n_mels, int n_fft, int sample_rate, float fmin, float fmax);

struct LogMelSpectrogram {
    TensorT<float> frames;  // T x n_mels, natural log of mel power
    FeatureParams params;
};

// Floor at 1e-10 before the log; silence maps to log_mel_floor().
float log_mel_floor();

// Shared power-spectrogram -> logMel path (augmented and original features
// both go through here).
TensorT<float> power_to_log_mel(const TensorT<float>& power, const FeatureParams& params);

// Resamples to params.sample_rate first when needed.
LogMelSpectrogram log_mel(const Waveform& wave, const FeatureParams& params);

struct Segment {
    TensorT<float> features;  // window_frames x n_mels
    std::string utterance_id;
    int label = -1;
    i64 start_frame = 0;
};

// Fixed-length windows starting at multiples of (window - overlap) frames,
// plus an end-aligned final window when the tail would be uncovered (skipped
// when it duplicates the last regular start). Utterances shorter than one
// window yield a single segment padded on the right with the log floor.
std::vector<Segment> segment_frames(const TensorT<float>& frames, i64 window_frames,
                                    i64 hop_frames, const std::string& utterance_id, int label);

}  // namespace ser
