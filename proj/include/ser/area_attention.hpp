#pragma once

#include <cstdint>
#include <vector>

#include "ser/nn.hpp"
#include "ser/rng.hpp"
#include "ser/tensor.hpp"

namespace ser {

enum class KeyMode { Max, Mean, Sample };
enum class ValueMode { Max, Mean, Sum };

struct AreaConfig {
    int max_height = 3;
    int max_width = 3;
    KeyMode key_mode = KeyMode::Mean;
    ValueMode value_mode = ValueMode::Sum;
    int num_heads = 4;
};

// Axis-aligned rectangle on the H x W memory grid, in grid cells.
struct AreaIndex {
    i64 top, left, height, width;

    i64 cells() const { return height * width; }
    bool operator==(const AreaIndex&) const = default;
};

// All rectangles with height <= min(max_h, H) and width <= min(max_w, W), in
// canonical order: height, then width, then top, then left.
std::vector<AreaIndex> enumerate_areas(i64 h, i64 w, i64 max_h, i64 max_w);

// f64 accumulators regardless of the memory dtype: corner differences on f32
// tables would drop the bits the per-area std needs.
struct IntegralTables {
    TensorT<double> sum;    // (H+1) x (W+1) x C, zero first row/column
    TensorT<double> sumsq;  // same layout over squared values

    i64 grid_h() const { return sum.shape[0] - 1; }
    i64 grid_w() const { return sum.shape[1] - 1; }
    i64 channels() const { return sum.shape[2]; }
};

template <typename T>
IntegralTables build_integral_tables(const TensorT<T>& memory);

template <typename T>
struct AreaStats {
    std::vector<T> sum, mean, stddev;  // one entry per channel
};

// O(1) four-corner lookups; population std with negative rounding clamped.
template <typename T>
AreaStats<T> pool_area_stats(const IntegralTables& tables, const AreaIndex& area);

template <typename T>
struct PooledMemory {
    std::vector<AreaIndex> areas;
    TensorT<T> keys;    // A x C
    TensorT<T> values;  // A x C
    TensorT<T> sigma;   // A x C, only when key_mode == Sample
    TensorT<T> xi;      // A x C drawn noise, only for Train-mode Sample
    TensorT<T> mean;    // A x C, kept when Sample needs it for backward
    std::vector<std::int32_t> key_arg_row, key_arg_col;      // Max keys
    std::vector<std::int32_t> value_arg_row, value_arg_col;  // Max values
};

// Keys per key_mode (Max | Mean | Sample), values per value_mode
// (Max | Mean | Sum). Sample draws key = mean + std * xi, xi ~ N(0,1) per
// (area, channel), in Train mode only; Eval-mode Sample degrades to Mean.
template <typename T>
PooledMemory<T> assemble_pooled_memory(const TensorT<T>& memory, const AreaConfig& config,
                                       Mode mode, Rng* rng);

template <typename T>
struct AttentionWeights {
    TensorT<T> wq, wk, wv, wo;  // C x C each

    void init(i64 channels, Rng& rng);
};

template <typename T>
struct AreaAttentionCache {
    TensorT<T> query, memory;
    PooledMemory<T> pooled;
    TensorT<T> q, k, v;     // projected, N x C / A x C
    TensorT<T> attn;        // heads x N x A
    TensorT<T> concat;      // N x C, before the output projection
    AreaConfig config;
    bool valid = false;
};

template <typename T>
struct AreaAttentionOutput {
    TensorT<T> output;  // N x C
    TensorT<T> attn;    // heads x N x A
};

// query [N x C] against memory [H x W x C]; per head softmax(Q K^T / sqrt(dk)) V
// over pooled areas, heads concatenated and projected by wo.
template <typename T>
AreaAttentionOutput<T> area_attention_forward(const TensorT<T>& query, const TensorT<T>& memory,
                                              const AttentionWeights<T>& weights,
                                              const AreaConfig& config, Mode mode, Rng* rng,
                                              AreaAttentionCache<T>* cache = nullptr);

template <typename T>
struct AreaAttentionGrads {
    TensorT<T> query_grad;   // N x C
    TensorT<T> memory_grad;  // H x W x C
    TensorT<T> wq_grad, wk_grad, wv_grad, wo_grad;
};

template <typename T>
AreaAttentionGrads<T> area_attention_backward(const AreaAttentionCache<T>& cache,
                                              const AttentionWeights<T>& weights,
                                              const TensorT<T>& upstream);

// Pooling-gradient routing, accumulated into dmemory [H x W x C]:
// Sum broadcasts, Mean broadcasts / cells, Max routes to the recorded argmax
// cell, Sample routes d(mean) + d(std) * xi by the reparameterization with
// the drawn xi held constant.
template <typename T>
void route_value_grads(const PooledMemory<T>& pooled, ValueMode mode, const TensorT<T>& dvalues,
                       TensorT<T>& dmemory);

template <typename T>
void route_key_grads(const PooledMemory<T>& pooled, KeyMode mode, bool sampled,
                     const TensorT<T>& dkeys, const TensorT<T>& memory, TensorT<T>& dmemory);

}  // namespace ser
