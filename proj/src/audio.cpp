#include "ser/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ser/kernels.hpp"
#include "ser/rng.hpp"

namespace ser {

namespace {

constexpr double kPi = 3.14159265358979323846;

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

// Iterative radix-2 FFT, in place; n must be a power of two.
void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
    const std::size_t n = re.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (std::size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::size_t u = i + j, v = i + j + len / 2;
                const double tr = re[v] * cr - im[v] * ci;
                const double ti = re[v] * ci + im[v] * cr;
                re[v] = re[u] - tr;
                im[v] = im[u] - ti;
                re[u] += tr;
                im[u] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

double hz_to_mel_slaney(double hz) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (hz < min_log_hz) {
        return hz / f_sp;
    }
    return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz_slaney(double mel) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (mel < min_log_mel) {
        return mel * f_sp;
    }
    return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open WAV file: " + path.string());
    }
    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) {
        throw DataError("not a RIFF file: " + path.string());
    }
    read_le<std::uint32_t>(in);
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) {
        throw DataError("not a WAVE file: " + path.string());
    }

    std::uint16_t channels = 0, bits = 0, format = 0;
    std::uint32_t sample_rate = 0;
    std::vector<std::int16_t> pcm;
    bool got_fmt = false, got_data = false;
    while (in) {
        in.read(tag, 4);
        if (!in) {
            break;
        }
        const std::uint32_t size = read_le<std::uint32_t>(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = read_le<std::uint16_t>(in);
            channels = read_le<std::uint16_t>(in);
            sample_rate = read_le<std::uint32_t>(in);
            read_le<std::uint32_t>(in);
            read_le<std::uint16_t>(in);
            bits = read_le<std::uint16_t>(in);
            if (size > 16) {
                in.seekg(size - 16, std::ios::cur);
            }
            got_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            pcm.resize(size / 2);
            in.read(reinterpret_cast<char*>(pcm.data()), size & ~1u);
            got_data = true;
        } else {
            in.seekg(size + (size & 1u), std::ios::cur);
        }
    }
    if (!got_fmt || !got_data) {
        throw DataError("missing fmt/data chunk: " + path.string());
    }
    if (format != 1 || bits != 16) {
        throw DataError("only 16-bit PCM WAV is supported: " + path.string());
    }
    if (channels != 1 && channels != 2) {
        throw DataError("only mono or stereo WAV is supported: " + path.string());
    }

    Waveform wave;
    wave.sample_rate = static_cast<int>(sample_rate);
    const std::size_t frames = pcm.size() / channels;
    wave.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        if (channels == 1) {
            wave.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
        } else {
            const float l = static_cast<float>(pcm[2 * i]) / 32768.0f;
            const float r = static_cast<float>(pcm[2 * i + 1]) / 32768.0f;
            wave.samples[i] = 0.5f * (l + r);
        }
    }
    return wave;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open for writing: " + path.string());
    }
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    out.write("RIFF", 4);
    write_le<std::uint32_t>(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le<std::uint32_t>(out, 16);
    write_le<std::uint16_t>(out, 1);
    write_le<std::uint16_t>(out, 1);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate * 2));
    write_le<std::uint16_t>(out, 2);
    write_le<std::uint16_t>(out, 16);
    out.write("data", 4);
    write_le<std::uint32_t>(out, data_bytes);
    for (float s : wave.samples) {
        const float clamped = std::clamp(s, -1.0f, 1.0f);
        write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(clamped * 32767.0f)));
    }
}

Waveform resample_linear(const Waveform& wave, int target_rate) {
    if (target_rate <= 0) {
        throw ConfigError("resample: target rate must be positive");
    }
    if (wave.sample_rate == target_rate || wave.samples.empty()) {
        Waveform out = wave;
        out.sample_rate = target_rate;
        return out;
    }
    const double ratio = static_cast<double>(wave.sample_rate) / target_rate;
    const std::size_t out_len = static_cast<std::size_t>(
        std::floor(static_cast<double>(wave.samples.size() - 1) / ratio)) + 1;
    Waveform out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const double pos = i * ratio;
        const std::size_t i0 = static_cast<std::size_t>(pos);
        const std::size_t i1 = std::min(i0 + 1, wave.samples.size() - 1);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = static_cast<float>((1.0 - frac) * wave.samples[i0] +
                                            frac * wave.samples[i1]);
    }
    return out;
}

std::string feature_params_hash(const FeatureParams& p) {
    std::ostringstream os;
    os << p.sample_rate << '/' << p.n_fft << '/' << p.win_length << '/' << p.hop_length << '/'
       << p.n_mels << '/' << p.fmin << '/' << p.fmax;
    std::ostringstream hex;
    hex << std::hex << hash_string(os.str());
    return hex.str();
}

TensorT<float> stft_power(const Waveform& wave, int n_fft, int hop_length, int win_length) {
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) {
        throw ConfigError("stft: n_fft must be a power of two");
    }
    if (win_length < 1 || win_length > n_fft || hop_length < 1) {
        throw ConfigError("stft: require 1 <= win_length <= n_fft and hop_length >= 1");
    }
    const i64 len = static_cast<i64>(wave.samples.size());
    const i64 pad = n_fft / 2;
    if (len < pad + 1) {
        throw DataError("stft: waveform shorter than one window after padding");
    }

    // Reflect padding around the signal, matching centered frames.
    const auto sample_at = [&](i64 idx) -> double {
        if (idx < 0) {
            idx = -idx;
        }
        if (idx >= len) {
            idx = 2 * (len - 1) - idx;
        }
        return wave.samples[static_cast<std::size_t>(idx)];
    };

    std::vector<double> window(static_cast<std::size_t>(n_fft), 0.0);
    const i64 off = (n_fft - win_length) / 2;
    for (i64 i = 0; i < win_length; ++i) {
        window[static_cast<std::size_t>(off + i)] =
            0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / win_length);
    }

    const i64 frames = len / hop_length + 1;
    const i64 bins = n_fft / 2 + 1;
    TensorT<float> power({frames, bins});
    std::vector<double> re(static_cast<std::size_t>(n_fft));
    std::vector<double> im(static_cast<std::size_t>(n_fft));
    for (i64 t = 0; t < frames; ++t) {
        const i64 center = t * hop_length;
        for (i64 i = 0; i < n_fft; ++i) {
            re[static_cast<std::size_t>(i)] =
                sample_at(center - pad + i) * window[static_cast<std::size_t>(i)];
            im[static_cast<std::size_t>(i)] = 0.0;
        }
        fft_inplace(re, im);
        for (i64 k = 0; k < bins; ++k) {
            const double p = re[static_cast<std::size_t>(k)] * re[static_cast<std::size_t>(k)] +
                             im[static_cast<std::size_t>(k)] * im[static_cast<std::size_t>(k)];
            power.at2(t, k) = static_cast<float>(p);
        }
    }
    return power;
}

TensorT<float> mel_filterbank(int n_mels, int n_fft, int sample_rate, float fmin, float fmax) {
    if (n_mels < 1) {
        throw ConfigError("mel_filterbank: n_mels must be positive");
    }
    if (!(fmin < fmax) || fmax > sample_rate / 2.0f + 1e-6f) {
        throw ConfigError("mel_filterbank: require fmin < fmax <= sample_rate/2");
    }
    const i64 bins = n_fft / 2 + 1;
    std::vector<double> mel_pts(static_cast<std::size_t>(n_mels) + 2);
    const double mel_lo = hz_to_mel_slaney(fmin);
    const double mel_hi = hz_to_mel_slaney(fmax);
    for (std::size_t i = 0; i < mel_pts.size(); ++i) {
        mel_pts[i] = mel_to_hz_slaney(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                                   (n_mels + 1));
    }

    TensorT<float> fb({n_mels, bins});
    for (i64 m = 0; m < n_mels; ++m) {
        const double f_left = mel_pts[static_cast<std::size_t>(m)];
        const double f_center = mel_pts[static_cast<std::size_t>(m) + 1];
        const double f_right = mel_pts[static_cast<std::size_t>(m) + 2];
        const double norm = 2.0 / (f_right - f_left);
        bool nonempty = false;
        for (i64 k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / n_fft;
            const double up = (f - f_left) / (f_center - f_left);
            const double down = (f_right - f) / (f_right - f_center);
            const double wgt = std::max(0.0, std::min(up, down));
            fb.at2(m, k) = static_cast<float>(wgt * norm);
            nonempty = nonempty || wgt > 0.0;
        }
        if (!nonempty) {
            throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                              " is empty; n_mels too large for the FFT resolution");
        }
    }
    return fb;
}

float log_mel_floor() { return std::log(1e-10f); }

TensorT<float> power_to_log_mel(const TensorT<float>& power, const FeatureParams& params) {
    if (power.rank() != 2 || power.shape[1] != params.n_fft / 2 + 1) {
        throw DimensionError("power_to_log_mel: expected [T x (n_fft/2+1)]");
    }
    const TensorT<float> fb = mel_filterbank(params.n_mels, params.n_fft, params.sample_rate,
                                             params.fmin, params.fmax);
    const i64 t = power.shape[0], bins = power.shape[1], m = params.n_mels;
    TensorT<float> mel({t, m});
    kernels::matmul_nt(power.ptr(), fb.ptr(), mel.ptr(), t, bins, m);
    for (auto& v : mel.data) {
        v = std::log(std::max(v, 1e-10f));
    }
    return mel;
}

LogMelSpectrogram log_mel(const Waveform& wave, const FeatureParams& params) {
    const Waveform resampled = wave.sample_rate == params.sample_rate
                                   ? wave
                                   : resample_linear(wave, params.sample_rate);
    const TensorT<float> power =
        stft_power(resampled, params.n_fft, params.hop_length, params.win_length);
    LogMelSpectrogram out;
    out.frames = power_to_log_mel(power, params);
    out.params = params;
    return out;
}

std::vector<Segment> segment_frames(const TensorT<float>& frames, i64 window_frames,
                                    i64 hop_frames, const std::string& utterance_id, int label) {
    if (window_frames < 1 || hop_frames < 1) {
        throw ConfigError("segmentation: window and hop must be positive frame counts");
    }
    if (frames.rank() != 2) {
        throw DimensionError("segmentation: features must be [T x M]");
    }
    const i64 t = frames.shape[0], m = frames.shape[1];

    std::vector<i64> starts;
    if (t < window_frames) {
        starts.push_back(0);
    } else {
        for (i64 s = 0; s + window_frames <= t; s += hop_frames) {
            starts.push_back(s);
        }
        const i64 tail = t - window_frames;
        if (starts.empty() || starts.back() != tail) {
            starts.push_back(tail);
        }
    }

    std::vector<Segment> segments;
    segments.reserve(starts.size());
    for (i64 s : starts) {
        Segment seg;
        seg.features = TensorT<float>::full({window_frames, m}, log_mel_floor());
        const i64 rows = std::min(window_frames, t - s);
        std::copy(frames.ptr() + s * m, frames.ptr() + (s + rows) * m, seg.features.ptr());
        seg.utterance_id = utterance_id;
        seg.label = label;
        seg.start_frame = s;
        segments.push_back(std::move(seg));
    }
    return segments;
}

}  // namespace ser
