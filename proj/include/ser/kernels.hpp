#pragma once

#include <cstdint>

#include "ser/tensor.hpp"

// OpenMP-parallel inner loops. Every kernel assigns each output element in
// exactly one thread with a fixed serial reduction order, so results are
// bitwise identical for any thread count. No atomics, no omp reductions.
// ser::ref holds the serial naive counterparts used as test oracles and as
// the baseline in the kernel benchmark.
namespace ser::kernels {

int max_threads();
void set_max_threads(int n);  // n <= 0 restores the hardware default

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);

// c[m x n] = a[k x m]^T * b[k x n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n);

struct Conv2dGeom {
    i64 n, c_in, h, w;
    i64 c_out, kh, kw;
    i64 stride_h, stride_w, pad_h, pad_w;
    i64 h_out, w_out;
};

// Cross-correlation output geometry; throws DimensionError when the kernel
// does not fit the padded input.
Conv2dGeom conv2d_geometry(i64 n, i64 c_in, i64 h, i64 w, i64 c_out, i64 kh, i64 kw,
                           i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w);

template <typename T>
void conv2d_forward(const T* x, const T* weight, const T* bias, T* y, const Conv2dGeom& g);

template <typename T>
void conv2d_backward_input(const T* weight, const T* upstream, T* dx, const Conv2dGeom& g);

template <typename T>
void conv2d_backward_weight(const T* x, const T* upstream, T* dweight, const Conv2dGeom& g);

template <typename T>
void conv2d_backward_bias(const T* upstream, T* dbias, const Conv2dGeom& g);

// Non-overlapping pool_h x pool_w window max; floor division of extents.
// argmax stores h*w flat input offsets (per n,c plane); ties take the
// smallest row-major index.
template <typename T>
void maxpool2d_forward(const T* x, T* y, std::int32_t* argmax, i64 n, i64 c, i64 h, i64 w,
                       i64 pool_h, i64 pool_w);

template <typename T>
void maxpool2d_backward(const std::int32_t* argmax, const T* upstream, T* dx, i64 n, i64 c,
                        i64 h, i64 w, i64 pool_h, i64 pool_w);

// Row-wise stabilized softmax, in place allowed (y may alias x).
template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 cols);

// Summed-area tables over an h x w x c grid: out tables are
// (h+1) x (w+1) x c with a zero first row/column, sum and sum of squares.
// Tables accumulate in f64 regardless of T; f32 corner differences would
// otherwise lose the low bits the std computation depends on.
template <typename T>
void integral_tables(const T* mem, double* sum, double* sumsq, i64 h, i64 w, i64 c);

// Per-area sum/mean/population-std pooled from integral tables, written in
// canonical area order (height, then width, then top, then left). Any of the
// three outputs may be null. Each output is num_areas x c.
template <typename T>
void area_stats_pool(const double* sum, const double* sumsq, i64 h, i64 w, i64 c, i64 max_h,
                     i64 max_w, T* out_sum, T* out_mean, T* out_std);

// Per-area elementwise max via row-then-column monotonic-deque sliding
// windows; same canonical area order. arg_row/arg_col record the argmax cell
// per (area, channel), ties to the smallest (row, col).
template <typename T>
void area_max_pool(const T* mem, i64 h, i64 w, i64 c, i64 max_h, i64 max_w, T* out,
                   std::int32_t* arg_row, std::int32_t* arg_col);

i64 area_count(i64 h, i64 w, i64 max_h, i64 max_w);

}  // namespace ser::kernels
