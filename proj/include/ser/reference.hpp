#pragma once

#include <vector>

#include "ser/tensor.hpp"

// Serial naive implementations kept as independent oracles for the OpenMP
// kernels and the area-attention layer. Tests and the benchmark link this;
// the production paths never do.
namespace ser::ref {

template <typename T>
TensorT<T> matmul_naive(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> conv2d_naive(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias,
                        i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w);

// Rectangle statistics by direct summation over an h x w x c grid.
template <typename T>
T rect_sum_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel);

template <typename T>
T rect_mean_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel);

template <typename T>
T rect_std_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel);

template <typename T>
T rect_max_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel);

// Standard multi-head scaled dot-product attention over explicit key/value
// rows: query [N x C], keys/values [A x C], per-head softmax(Q K^T / sqrt(dk)) V,
// heads concatenated then projected by wo.
template <typename T>
TensorT<T> multihead_attention_naive(const TensorT<T>& query, const TensorT<T>& keys,
                                     const TensorT<T>& values, const TensorT<T>& wq,
                                     const TensorT<T>& wk, const TensorT<T>& wv,
                                     const TensorT<T>& wo, int num_heads);

}  // namespace ser::ref
