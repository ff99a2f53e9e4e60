#pragma once

#include <map>
#include <string>
#include <vector>

#include "ser/kernels.hpp"
#include "ser/rng.hpp"
#include "ser/tensor.hpp"

namespace ser {

enum class Mode { Train, Eval };

template <typename T>
using NamedTensors = std::map<std::string, TensorT<T>>;

template <typename T>
struct LayerStateT {
    NamedTensors<T> parameters;
    NamedTensors<T> buffers;

    TensorT<T>& param(const std::string& name) {
        auto it = parameters.find(name);
        if (it == parameters.end()) {
            throw ConfigError("unknown parameter: " + name);
        }
        return it->second;
    }
    const TensorT<T>& param(const std::string& name) const {
        return const_cast<LayerStateT*>(this)->param(name);
    }
    TensorT<T>& buffer(const std::string& name) {
        auto it = buffers.find(name);
        if (it == buffers.end()) {
            throw ConfigError("unknown buffer: " + name);
        }
        return it->second;
    }
    const TensorT<T>& buffer(const std::string& name) const {
        return const_cast<LayerStateT*>(this)->buffer(name);
    }
};

// Gradient of one layer application: input gradient plus one gradient per
// parameter, same names and shapes as the layer's parameters.
template <typename T>
struct GradBundleT {
    TensorT<T> input_grad;
    NamedTensors<T> param_grads;
};

// Kaiming-uniform fan-in fill: U(-b, b), b = gain * sqrt(3 / fan_in).
template <typename T>
void kaiming_uniform_fill(TensorT<T>& t, i64 fan_in, T gain, Rng& rng);

template <typename T>
class Conv2d {
public:
    Conv2d(i64 in_channels, i64 out_channels, i64 kh, i64 kw, i64 stride_h = 1, i64 stride_w = 1,
           i64 pad_h = 0, i64 pad_w = 0);

    void init(Rng& rng);

    TensorT<T> forward(const TensorT<T>& x) const;
    GradBundleT<T> backward(const TensorT<T>& x, const TensorT<T>& upstream) const;

    kernels::Conv2dGeom geometry(const TensorT<T>& x) const;

    LayerStateT<T> state;  // "weight" [K x C x kh x kw], "bias" [K]
    i64 in_channels, out_channels, kh, kw, stride_h, stride_w, pad_h, pad_w;
};

template <typename T>
class BatchNorm2d {
public:
    explicit BatchNorm2d(i64 channels, T momentum = T(0.1), T eps = T(1e-5));

    struct Cache {
        std::vector<T> mean, invstd;
        TensorT<T> xhat;
    };

    // Train mode normalizes with batch statistics and updates the running
    // buffers; Eval mode reads the buffers and never mutates them.
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Cache* cache = nullptr);
    GradBundleT<T> backward(const TensorT<T>& x, const Cache& cache,
                            const TensorT<T>& upstream) const;

    LayerStateT<T> state;  // params "weight","bias"; buffers "running_mean","running_var"
    i64 channels;
    T momentum, eps;
};

template <typename T>
class Linear {
public:
    Linear(i64 in_features, i64 out_features);

    void init(Rng& rng);

    TensorT<T> forward(const TensorT<T>& x) const;  // x [N x in] -> [N x out]
    GradBundleT<T> backward(const TensorT<T>& x, const TensorT<T>& upstream) const;

    LayerStateT<T> state;  // "weight" [in x out], "bias" [out]
    i64 in_features, out_features;
};

template <typename T>
class MaxPool2d {
public:
    MaxPool2d(i64 pool_h, i64 pool_w) : pool_h(pool_h), pool_w(pool_w) {}

    struct Cache {
        std::vector<std::int32_t> argmax;
    };

    TensorT<T> forward(const TensorT<T>& x, Cache* cache) const;
    TensorT<T> backward(const TensorT<T>& x, const Cache& cache,
                        const TensorT<T>& upstream) const;

    i64 pool_h, pool_w;
};

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream);

// Softmax over the last axis; rows sum to 1.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x);

// Mean cross-entropy over the batch with log-sum-exp stabilization.
// When dlogits is non-null it receives d(loss)/d(logits).
template <typename T>
T cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels,
                TensorT<T>* dlogits = nullptr);

enum class OptAlgo { Sgd, Adam };

template <typename T>
struct OptimConfig {
    OptAlgo algo = OptAlgo::Adam;
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);
};

template <typename T>
struct ParamRef {
    std::string name;
    TensorT<T>* value;
};

// In-place SGD/Adam update over named parameters. Adam moments are slotted
// by name; bias correction follows the shared step count.
template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimConfig<T> config) : config_(config) {}

    void step(const std::vector<ParamRef<T>>& params, const NamedTensors<T>& grads);

    i64 step_count() const { return step_count_; }

private:
    struct Slot {
        TensorT<T> m, v;
    };
    OptimConfig<T> config_;
    std::map<std::string, Slot> slots_;
    i64 step_count_ = 0;
};

}  // namespace ser
