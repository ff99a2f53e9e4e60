#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "ser/audio.hpp"
#include "ser/rng.hpp"

using namespace ser;
namespace fs = std::filesystem;

namespace {

Waveform sine(double freq_hz, double seconds, int sample_rate, float amplitude = 0.5f) {
    Waveform w;
    w.sample_rate = sample_rate;
    const std::size_t n = static_cast<std::size_t>(seconds * sample_rate);
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        w.samples[i] = amplitude * static_cast<float>(std::sin(
                                       2.0 * 3.14159265358979324 * freq_hz *
                                       static_cast<double>(i) / sample_rate));
    }
    return w;
}

Waveform white_noise(double seconds, int sample_rate, Rng& rng) {
    Waveform w;
    w.sample_rate = sample_rate;
    const std::size_t n = static_cast<std::size_t>(seconds * sample_rate);
    w.samples.resize(n);
    for (auto& s : w.samples) {
        s = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    return w;
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "seratt_test_audio";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("wav round trip and stereo downmix") {
    Rng rng(51);
    Waveform w = white_noise(0.25, 16000, rng);
    const fs::path path = temp_dir() / "mono.wav";
    write_wav(path, w);
    const Waveform back = read_wav(path);
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); i += 100) {
        CHECK(back.samples[i] == doctest::Approx(w.samples[i]).epsilon(1e-3));
    }
    CHECK_THROWS_AS(read_wav(temp_dir() / "missing.wav"), DataError);
}

TEST_CASE("resample_linear changes length proportionally") {
    const Waveform w = sine(440.0, 0.5, 16000);
    const Waveform up = resample_linear(w, 32000);
    CHECK(std::abs(static_cast<double>(up.samples.size()) / w.samples.size() - 2.0) < 0.01);
    CHECK(up.sample_rate == 32000);
}

TEST_CASE("stft of silence is all zero; frame count formula holds") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(16000, 0.0f);
    const TensorF p = stft_power(w, 512, 160, 512);
    CHECK(p.shape[0] == 16000 / 160 + 1);
    CHECK(p.shape[1] == 257);
    for (float v : p.data) {
        CHECK(v == 0.0f);
    }
}

TEST_CASE("stft of a bin-centered sine concentrates energy at that bin") {
    const int n_fft = 512, sr = 16000;
    const int bin = 40;  // exact bin center: f = bin * sr / n_fft
    const double freq = static_cast<double>(bin) * sr / n_fft;
    const Waveform w = sine(freq, 0.5, sr);
    const TensorF p = stft_power(w, n_fft, 160, n_fft);
    // examine an interior frame (away from reflect-padding edges)
    const i64 t = p.shape[0] / 2;
    double total = 0.0, near_bin = 0.0;
    i64 peak = 0;
    for (i64 k = 0; k < p.shape[1]; ++k) {
        total += p.at2(t, k);
        if (p.at2(t, k) > p.at2(t, peak)) {
            peak = k;
        }
        if (std::abs(k - bin) <= 1) {
            near_bin += p.at2(t, k);
        }
    }
    CHECK(peak == bin);
    // Hann windowing spreads a bin-centered tone over the 3-bin main lobe;
    // that lobe carries essentially all the frame energy.
    CHECK(near_bin / total > 0.90);
}

TEST_CASE("stft Parseval sanity on white noise") {
    Rng rng(52);
    const int n_fft = 512;
    const Waveform w = white_noise(0.5, 16000, rng);
    const TensorF p = stft_power(w, n_fft, 160, n_fft);
    const i64 t = p.shape[0] / 2;
    // windowed time-domain energy of the same centered frame
    std::vector<double> window(n_fft);
    for (int i = 0; i < n_fft; ++i) {
        window[static_cast<std::size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * 3.14159265358979324 * i / n_fft);
    }
    const i64 center = t * 160;
    double time_energy = 0.0;
    for (int i = 0; i < n_fft; ++i) {
        const i64 idx = center - n_fft / 2 + i;
        REQUIRE(idx >= 0);
        REQUIRE(idx < static_cast<i64>(w.samples.size()));
        const double v = w.samples[static_cast<std::size_t>(idx)] *
                         window[static_cast<std::size_t>(i)];
        time_energy += v * v;
    }
    // one-sided spectrum: interior bins count twice
    double spec_energy = p.at2(t, 0) + p.at2(t, n_fft / 2);
    for (i64 k = 1; k < n_fft / 2; ++k) {
        spec_energy += 2.0 * p.at2(t, k);
    }
    spec_energy /= n_fft;
    CHECK(spec_energy == doctest::Approx(time_energy).epsilon(0.02));
}

TEST_CASE("stft rejects too-short waveforms and bad configs") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(100, 0.1f);
    CHECK_THROWS_AS(stft_power(w, 512, 160, 512), DataError);
    w.samples.assign(4000, 0.1f);
    CHECK_THROWS_AS(stft_power(w, 500, 160, 500), ConfigError);  // not a power of two
}

TEST_CASE("mel filterbank shape, nonnegativity, monotone peaks, coverage") {
    const TensorF fb = mel_filterbank(40, 1024, 16000, 0.0f, 8000.0f);
    CHECK(fb.shape[0] == 40);
    CHECK(fb.shape[1] == 513);
    i64 prev_peak = -1;
    for (i64 m = 0; m < 40; ++m) {
        float row_sum = 0.0f;
        i64 peak = 0;
        for (i64 k = 0; k < 513; ++k) {
            CHECK(fb.at2(m, k) >= 0.0f);
            row_sum += fb.at2(m, k);
            if (fb.at2(m, k) > fb.at2(m, peak)) {
                peak = k;
            }
        }
        CHECK(row_sum > 0.0f);
        CHECK(peak > prev_peak);
        prev_peak = peak;
    }
    CHECK_THROWS_AS(mel_filterbank(400, 256, 16000, 0.0f, 8000.0f), ConfigError);
    CHECK_THROWS_AS(mel_filterbank(40, 1024, 16000, 4000.0f, 1000.0f), ConfigError);
}

TEST_CASE("mel filter centers match an independent Slaney table within one bin") {
    const int n_mels = 40, n_fft = 1024, sr = 16000;
    const TensorF fb = mel_filterbank(n_mels, n_fft, sr, 0.0f, 8000.0f);
    // independent table: evenly spaced Slaney mels between 0 and 8000 Hz
    const auto hz_to_mel = [](double hz) {
        return hz < 1000.0 ? hz / (200.0 / 3.0)
                           : 15.0 + std::log(hz / 1000.0) / (std::log(6.4) / 27.0);
    };
    const auto mel_to_hz = [](double mel) {
        return mel < 15.0 ? mel * (200.0 / 3.0)
                          : 1000.0 * std::exp((std::log(6.4) / 27.0) * (mel - 15.0));
    };
    const double mel_hi = hz_to_mel(8000.0);
    for (int m = 0; m < n_mels; ++m) {
        const double center_hz = mel_to_hz(mel_hi * (m + 1) / (n_mels + 1));
        const double expected_bin = center_hz * n_fft / sr;
        i64 peak = 0;
        for (i64 k = 0; k < fb.shape[1]; ++k) {
            if (fb.at2(m, k) > fb.at2(m, peak)) {
                peak = k;
            }
        }
        CHECK(std::abs(static_cast<double>(peak) - expected_bin) <= 1.0);
    }
}

TEST_CASE("log_mel floor, scaling shift, and finiteness") {
    FeatureParams params;
    params.n_fft = 512;
    params.win_length = 512;

    Waveform silence;
    silence.sample_rate = 16000;
    silence.samples.assign(8000, 0.0f);
    const LogMelSpectrogram quiet = log_mel(silence, params);
    for (float v : quiet.frames.data) {
        CHECK(v == doctest::Approx(log_mel_floor()));
    }

    Rng rng(53);
    Waveform noise = white_noise(0.5, 16000, rng);
    const LogMelSpectrogram a = log_mel(noise, params);
    CHECK(a.frames.shape[1] == params.n_mels);
    for (float v : a.frames.data) {
        CHECK(std::isfinite(v));
    }

    Waveform doubled = noise;
    for (auto& s : doubled.samples) {
        s *= 2.0f;
    }
    const LogMelSpectrogram b = log_mel(doubled, params);
    const float shift = std::log(4.0f);
    for (i64 i = 0; i < a.frames.numel(); ++i) {
        if (a.frames[i] > log_mel_floor() + 1.0f) {  // away from the floor clamp
            CHECK(b.frames[i] - a.frames[i] == doctest::Approx(shift).epsilon(1e-3));
        }
    }
}

TEST_CASE("segmentation: 5 s utterance in train mode starts at 0,1,2,3 s") {
    // 100 frames/sec grid (16 kHz, hop 160): 5 s = 500 frames, window 200, hop 100
    const TensorF frames({500, 4});
    const auto segs = segment_frames(frames, 200, 100, "u1", 2);
    REQUIRE(segs.size() == 4);
    CHECK(segs[0].start_frame == 0);
    CHECK(segs[1].start_frame == 100);
    CHECK(segs[2].start_frame == 200);
    CHECK(segs[3].start_frame == 300);
    for (const auto& s : segs) {
        CHECK(s.utterance_id == "u1");
        CHECK(s.label == 2);
        CHECK(s.features.shape[0] == 200);
    }
}

TEST_CASE("segmentation: exact-window utterance gives one segment") {
    const TensorF frames({200, 4});
    const auto segs = segment_frames(frames, 200, 100, "u", 0);
    CHECK(segs.size() == 1);
    CHECK(segs[0].start_frame == 0);
}

TEST_CASE("segmentation: 5 s test mode adds the end-aligned window") {
    // window 200, test hop 40: regular starts 0..280, end-aligned 300
    const TensorF frames({500, 4});
    const auto segs = segment_frames(frames, 200, 40, "u", 0);
    REQUIRE(segs.size() == 9);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(segs[i].start_frame == static_cast<i64>(40 * i));
    }
    CHECK(segs.back().start_frame == 300);

    // duplicate end-aligned start is suppressed: T=440 -> starts 0..240, tail 240
    const TensorF frames2({440, 4});
    const auto segs2 = segment_frames(frames2, 200, 40, "u", 0);
    CHECK(segs2.size() == 7);
    CHECK(segs2.back().start_frame == 240);
}

TEST_CASE("segmentation: short utterances are right-padded with the log floor") {
    TensorF frames = TensorF::full({50, 4}, -1.0f);
    const auto segs = segment_frames(frames, 200, 100, "u", 3);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].features.shape[0] == 200);
    CHECK(segs[0].features.at2(0, 0) == -1.0f);
    CHECK(segs[0].features.at2(49, 3) == -1.0f);
    CHECK(segs[0].features.at2(50, 0) == doctest::Approx(log_mel_floor()));
    CHECK(segs[0].features.at2(199, 3) == doctest::Approx(log_mel_floor()));
}

TEST_CASE("segmentation covers every frame in both modes") {
    Rng rng(54);
    for (int trial = 0; trial < 20; ++trial) {
        const i64 t = 1 + rng.uniform_int(700);
        const TensorF frames({t, 2});
        for (i64 hop : {100, 40}) {
            const auto segs = segment_frames(frames, 200, hop, "u", 0);
            std::vector<bool> covered(static_cast<std::size_t>(t), false);
            for (const auto& s : segs) {
                for (i64 f = s.start_frame; f < std::min<i64>(s.start_frame + 200, t); ++f) {
                    covered[static_cast<std::size_t>(f)] = true;
                }
            }
            for (bool c : covered) {
                CHECK(c);
            }
        }
    }
}
