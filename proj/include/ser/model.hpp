#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ser/area_attention.hpp"
#include "ser/audio.hpp"
#include "ser/nn.hpp"

namespace ser {

struct ModelConfig {
    int parallel_channels = 16;
    std::vector<int> trunk_channels = {32, 48, 64, 80};
    std::array<int, 2> time_kernel = {2, 10};
    std::array<int, 2> freq_kernel = {10, 2};
    std::array<int, 2> trunk_kernel = {3, 3};
    std::vector<int> pool_after = {1, 2};  // 1-based trunk layer indices, 2x2 max-pool
    AreaConfig attention;
    bool attention_enabled = true;
    int num_classes = 4;
    bool logit_averaging = false;

    void validate() const;
};

// Parallel time/freq convolutions, a trunk of convolutions ending in an
// 80-channel map, area attention over the flattened token grid, token-mean
// pooling, and a linear classification head. Batchnorm + ReLU follow every
// convolution.
template <typename T>
class ClassifierT {
public:
    explicit ClassifierT(const ModelConfig& config);

    void init(Rng& rng);

    // batch [N x 1 x M x Tseg] -> logits [N x num_classes]
    TensorT<T> forward(const TensorT<T>& batch, Mode mode, Rng* rng);

    // Train-mode forward + full manual backward; fills `grads` (aligned with
    // named_parameters) and returns the cross-entropy loss.
    T backward(const TensorT<T>& batch, const std::vector<int>& labels, Rng* rng,
               NamedTensors<T>& grads, TensorT<T>* logits_out = nullptr);

    std::vector<ParamRef<T>> named_parameters();
    NamedTensors<T> named_tensors() const;  // parameters + buffers, for checkpoints
    void load_named_tensors(const NamedTensors<T>& tensors);

    const ModelConfig& config() const { return config_; }

    // Area-attention internals of the last forward (export path).
    struct Introspection {
        TensorT<T> tokens;    // N_tok x C, attention input
        TensorT<T> attended;  // N_tok x C, attention output (pre-FC representation)
        TensorT<T> attn;      // heads x N_tok x A
    };
    Introspection introspect(const TensorT<T>& single, Rng* rng);

private:
    struct ForwardCache;
    TensorT<T> forward_impl(const TensorT<T>& batch, Mode mode, Rng* rng, ForwardCache* cache);

    ModelConfig config_;
    Conv2d<T> time_conv_, freq_conv_;
    BatchNorm2d<T> time_bn_, freq_bn_;
    std::vector<Conv2d<T>> trunk_;
    std::vector<BatchNorm2d<T>> trunk_bn_;
    MaxPool2d<T> pool_;
    AttentionWeights<T> attn_weights_;
    Linear<T> fc_;
};

using Classifier = ClassifierT<float>;

struct MetricsSnapshot {
    double wa = 0.0, ua = 0.0, acc = 0.0;
    int epoch = -1;
};

struct CheckpointMeta {
    ModelConfig model;
    FeatureParams features;
    double window_seconds = 2.0;
    double train_overlap_seconds = 1.0;
    double test_overlap_seconds = 1.6;
    i64 step = 0;
    std::uint64_t rng_state = 0;
    MetricsSnapshot best;
    bool normalize_features = false;
    double feat_mean = 0.0;
    double feat_std = 1.0;
};

// Container file: magic "ATCK", u32 JSON header length, JSON header (config,
// step, metric record, tensor name list), then named tensor blocks in header
// order, each in the tensor file format.
void save_checkpoint(const std::filesystem::path& path, const Classifier& model,
                     const CheckpointMeta& meta);
std::pair<Classifier, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

// Per-segment class probabilities averaged over the utterance (or logit
// averaging behind the config flag). Ties in the argmax break to the lowest
// class id.
std::vector<double> predict_utterance(Classifier& model, const std::vector<Segment>& segments,
                                      const CheckpointMeta& meta);

int argmax_class(const std::vector<double>& probs);

// Stacks T x M segment features into a [N x 1 x M x T] batch.
TensorT<float> segments_to_batch(const std::vector<Segment>& segments, double feat_mean,
                                 double feat_std, bool normalize);

}  // namespace ser
