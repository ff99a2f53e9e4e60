#include "ser/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ser::kernels {

namespace {

int g_max_threads = 0;  // 0 = hardware default

int effective_threads() {
#ifdef _OPENMP
    return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

struct Rect {
    i64 top, left, height, width;
};

// Canonical area order: height, then width, then top, then left.
std::vector<Rect> canonical_areas(i64 h, i64 w, i64 max_h, i64 max_w) {
    std::vector<Rect> areas;
    areas.reserve(static_cast<std::size_t>(area_count(h, w, max_h, max_w)));
    for (i64 hh = 1; hh <= std::min(max_h, h); ++hh) {
        for (i64 ww = 1; ww <= std::min(max_w, w); ++ww) {
            for (i64 top = 0; top + hh <= h; ++top) {
                for (i64 left = 0; left + ww <= w; ++left) {
                    areas.push_back({top, left, hh, ww});
                }
            }
        }
    }
    return areas;
}

}  // namespace

int max_threads() { return effective_threads(); }

void set_max_threads(int n) { g_max_threads = n; }

i64 area_count(i64 h, i64 w, i64 max_h, i64 max_w) {
    i64 count = 0;
    for (i64 hh = 1; hh <= std::min(max_h, h); ++hh) {
        for (i64 ww = 1; ww <= std::min(max_w, w); ++ww) {
            count += (h - hh + 1) * (w - ww + 1);
        }
    }
    return count;
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
    const bool par = m * k * n > 32768;
#pragma omp parallel for if (par) num_threads(effective_threads()) schedule(static)
    for (i64 i = 0; i < m; ++i) {
        T* crow = c + i * n;
        std::fill(crow, crow + n, T(0));
        const T* arow = a + i * k;
        for (i64 p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (i64 j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
    const bool par = m * k * n > 32768;
#pragma omp parallel for if (par) num_threads(effective_threads()) schedule(static)
    for (i64 i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (i64 j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (i64 p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            crow[j] = acc;
        }
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
    const bool par = m * k * n > 32768;
#pragma omp parallel for if (par) num_threads(effective_threads()) schedule(static)
    for (i64 i = 0; i < m; ++i) {
        T* crow = c + i * n;
        std::fill(crow, crow + n, T(0));
        for (i64 p = 0; p < k; ++p) {
            const T av = a[p * m + i];
            const T* brow = b + p * n;
            for (i64 j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

Conv2dGeom conv2d_geometry(i64 n, i64 c_in, i64 h, i64 w, i64 c_out, i64 kh, i64 kw,
                           i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w) {
    if (stride_h < 1 || stride_w < 1 || pad_h < 0 || pad_w < 0) {
        throw DimensionError("conv2d: stride must be >= 1 and padding >= 0");
    }
    if (kh > h + 2 * pad_h || kw > w + 2 * pad_w) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    Conv2dGeom g{n, c_in, h, w, c_out, kh, kw, stride_h, stride_w, pad_h, pad_w, 0, 0};
    g.h_out = (h + 2 * pad_h - kh) / stride_h + 1;
    g.w_out = (w + 2 * pad_w - kw) / stride_w + 1;
    return g;
}

template <typename T>
void conv2d_forward(const T* x, const T* weight, const T* bias, T* y, const Conv2dGeom& g) {
    const bool par = g.n * g.c_out > 1;
#pragma omp parallel for collapse(2) if (par) num_threads(effective_threads()) schedule(static)
    for (i64 n = 0; n < g.n; ++n) {
        for (i64 co = 0; co < g.c_out; ++co) {
            const T bv = bias ? bias[co] : T(0);
            T* yplane = y + (n * g.c_out + co) * g.h_out * g.w_out;
            for (i64 ho = 0; ho < g.h_out; ++ho) {
                for (i64 wo = 0; wo < g.w_out; ++wo) {
                    T acc = bv;
                    const i64 hi0 = ho * g.stride_h - g.pad_h;
                    const i64 wi0 = wo * g.stride_w - g.pad_w;
                    for (i64 ci = 0; ci < g.c_in; ++ci) {
                        const T* xplane = x + (n * g.c_in + ci) * g.h * g.w;
                        const T* wplane = weight + (co * g.c_in + ci) * g.kh * g.kw;
                        for (i64 kh = 0; kh < g.kh; ++kh) {
                            const i64 hi = hi0 + kh;
                            if (hi < 0 || hi >= g.h) {
                                continue;
                            }
                            const T* xrow = xplane + hi * g.w;
                            const T* wrow = wplane + kh * g.kw;
                            for (i64 kw = 0; kw < g.kw; ++kw) {
                                const i64 wi = wi0 + kw;
                                if (wi < 0 || wi >= g.w) {
                                    continue;
                                }
                                acc += xrow[wi] * wrow[kw];
                            }
                        }
                    }
                    yplane[ho * g.w_out + wo] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* weight, const T* upstream, T* dx, const Conv2dGeom& g) {
    // Gather form: each input cell sums contributions over (c_out, kh, kw).
    const bool par = g.n * g.c_in > 1;
#pragma omp parallel for collapse(2) if (par) num_threads(effective_threads()) schedule(static)
    for (i64 n = 0; n < g.n; ++n) {
        for (i64 ci = 0; ci < g.c_in; ++ci) {
            T* dxplane = dx + (n * g.c_in + ci) * g.h * g.w;
            for (i64 hi = 0; hi < g.h; ++hi) {
                for (i64 wi = 0; wi < g.w; ++wi) {
                    T acc = T(0);
                    for (i64 co = 0; co < g.c_out; ++co) {
                        const T* uplane = upstream + (n * g.c_out + co) * g.h_out * g.w_out;
                        const T* wplane = weight + (co * g.c_in + ci) * g.kh * g.kw;
                        for (i64 kh = 0; kh < g.kh; ++kh) {
                            const i64 ho_num = hi + g.pad_h - kh;
                            if (ho_num < 0 || ho_num % g.stride_h != 0) {
                                continue;
                            }
                            const i64 ho = ho_num / g.stride_h;
                            if (ho >= g.h_out) {
                                continue;
                            }
                            for (i64 kw = 0; kw < g.kw; ++kw) {
                                const i64 wo_num = wi + g.pad_w - kw;
                                if (wo_num < 0 || wo_num % g.stride_w != 0) {
                                    continue;
                                }
                                const i64 wo = wo_num / g.stride_w;
                                if (wo >= g.w_out) {
                                    continue;
                                }
                                acc += wplane[kh * g.kw + kw] * uplane[ho * g.w_out + wo];
                            }
                        }
                    }
                    dxplane[hi * g.w + wi] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* upstream, T* dweight, const Conv2dGeom& g) {
    const bool par = g.c_out * g.c_in > 1;
#pragma omp parallel for collapse(2) if (par) num_threads(effective_threads()) schedule(static)
    for (i64 co = 0; co < g.c_out; ++co) {
        for (i64 ci = 0; ci < g.c_in; ++ci) {
            T* wplane = dweight + (co * g.c_in + ci) * g.kh * g.kw;
            for (i64 kh = 0; kh < g.kh; ++kh) {
                for (i64 kw = 0; kw < g.kw; ++kw) {
                    T acc = T(0);
                    for (i64 n = 0; n < g.n; ++n) {
                        const T* xplane = x + (n * g.c_in + ci) * g.h * g.w;
                        const T* uplane = upstream + (n * g.c_out + co) * g.h_out * g.w_out;
                        for (i64 ho = 0; ho < g.h_out; ++ho) {
                            const i64 hi = ho * g.stride_h - g.pad_h + kh;
                            if (hi < 0 || hi >= g.h) {
                                continue;
                            }
                            const T* xrow = xplane + hi * g.w;
                            const T* urow = uplane + ho * g.w_out;
                            for (i64 wo = 0; wo < g.w_out; ++wo) {
                                const i64 wi = wo * g.stride_w - g.pad_w + kw;
                                if (wi < 0 || wi >= g.w) {
                                    continue;
                                }
                                acc += xrow[wi] * urow[wo];
                            }
                        }
                    }
                    wplane[kh * g.kw + kw] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_bias(const T* upstream, T* dbias, const Conv2dGeom& g) {
#pragma omp parallel for if (g.c_out > 1) num_threads(effective_threads()) schedule(static)
    for (i64 co = 0; co < g.c_out; ++co) {
        T acc = T(0);
        for (i64 n = 0; n < g.n; ++n) {
            const T* uplane = upstream + (n * g.c_out + co) * g.h_out * g.w_out;
            for (i64 i = 0; i < g.h_out * g.w_out; ++i) {
                acc += uplane[i];
            }
        }
        dbias[co] = acc;
    }
}

template <typename T>
void maxpool2d_forward(const T* x, T* y, std::int32_t* argmax, i64 n, i64 c, i64 h, i64 w,
                       i64 pool_h, i64 pool_w) {
    const i64 h_out = h / pool_h;
    const i64 w_out = w / pool_w;
    const bool par = n * c > 1;
#pragma omp parallel for collapse(2) if (par) num_threads(effective_threads()) schedule(static)
    for (i64 ni = 0; ni < n; ++ni) {
        for (i64 ci = 0; ci < c; ++ci) {
            const T* xplane = x + (ni * c + ci) * h * w;
            T* yplane = y + (ni * c + ci) * h_out * w_out;
            std::int32_t* aplane = argmax + (ni * c + ci) * h_out * w_out;
            for (i64 ho = 0; ho < h_out; ++ho) {
                for (i64 wo = 0; wo < w_out; ++wo) {
                    T best = xplane[ho * pool_h * w + wo * pool_w];
                    i64 best_idx = ho * pool_h * w + wo * pool_w;
                    for (i64 ph = 0; ph < pool_h; ++ph) {
                        for (i64 pw = 0; pw < pool_w; ++pw) {
                            const i64 idx = (ho * pool_h + ph) * w + wo * pool_w + pw;
                            if (xplane[idx] > best) {
                                best = xplane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    yplane[ho * w_out + wo] = best;
                    aplane[ho * w_out + wo] = static_cast<std::int32_t>(best_idx);
                }
            }
        }
    }
}

template <typename T>
void maxpool2d_backward(const std::int32_t* argmax, const T* upstream, T* dx, i64 n, i64 c,
                        i64 h, i64 w, i64 pool_h, i64 pool_w) {
    const i64 h_out = h / pool_h;
    const i64 w_out = w / pool_w;
    const bool par = n * c > 1;
#pragma omp parallel for collapse(2) if (par) num_threads(effective_threads()) schedule(static)
    for (i64 ni = 0; ni < n; ++ni) {
        for (i64 ci = 0; ci < c; ++ci) {
            T* dxplane = dx + (ni * c + ci) * h * w;
            std::fill(dxplane, dxplane + h * w, T(0));
            const T* uplane = upstream + (ni * c + ci) * h_out * w_out;
            const std::int32_t* aplane = argmax + (ni * c + ci) * h_out * w_out;
            for (i64 i = 0; i < h_out * w_out; ++i) {
                dxplane[aplane[i]] += uplane[i];
            }
        }
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 cols) {
    if (cols < 1) {
        throw DimensionError("softmax over an empty axis");
    }
    const bool par = rows > 8 && rows * cols > 32768;
#pragma omp parallel for if (par) num_threads(effective_threads()) schedule(static)
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mx = xr[0];
        for (i64 j = 1; j < cols; ++j) {
            mx = std::max(mx, xr[j]);
        }
        T denom = T(0);
        for (i64 j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        }
        const T inv = T(1) / denom;
        for (i64 j = 0; j < cols; ++j) {
            yr[j] *= inv;
        }
    }
}

template <typename T>
void integral_tables(const T* mem, double* sum, double* sumsq, i64 h, i64 w, i64 c) {
    const i64 tw = w + 1;
#pragma omp parallel for if (c > 1) num_threads(effective_threads()) schedule(static)
    for (i64 ch = 0; ch < c; ++ch) {
        for (i64 j = 0; j < tw; ++j) {
            sum[j * c + ch] = 0.0;
            sumsq[j * c + ch] = 0.0;
        }
        for (i64 i = 1; i <= h; ++i) {
            sum[i * tw * c + ch] = 0.0;
            sumsq[i * tw * c + ch] = 0.0;
            for (i64 j = 1; j <= w; ++j) {
                const double v = static_cast<double>(mem[((i - 1) * w + (j - 1)) * c + ch]);
                const i64 ij = (i * tw + j) * c + ch;
                const i64 up = ((i - 1) * tw + j) * c + ch;
                const i64 lf = (i * tw + (j - 1)) * c + ch;
                const i64 ul = ((i - 1) * tw + (j - 1)) * c + ch;
                sum[ij] = v + sum[up] + sum[lf] - sum[ul];
                sumsq[ij] = v * v + sumsq[up] + sumsq[lf] - sumsq[ul];
            }
        }
    }
}

template <typename T>
void area_stats_pool(const double* sum, const double* sumsq, i64 h, i64 w, i64 c, i64 max_h,
                     i64 max_w, T* out_sum, T* out_mean, T* out_std) {
    const auto areas = canonical_areas(h, w, max_h, max_w);
    const i64 a_count = static_cast<i64>(areas.size());
    const i64 tw = w + 1;
    const bool par = a_count * c > 4096;
#pragma omp parallel for if (par) num_threads(effective_threads()) schedule(static)
    for (i64 a = 0; a < a_count; ++a) {
        const Rect r = areas[static_cast<std::size_t>(a)];
        const i64 t0 = r.top, l0 = r.left, t1 = r.top + r.height, l1 = r.left + r.width;
        const double inv_cells = 1.0 / static_cast<double>(r.height * r.width);
        for (i64 ch = 0; ch < c; ++ch) {
            const auto corner = [&](const double* table, i64 i, i64 j) {
                return table[(i * tw + j) * c + ch];
            };
            const double s = corner(sum, t1, l1) - corner(sum, t0, l1) - corner(sum, t1, l0) +
                             corner(sum, t0, l0);
            if (out_sum) {
                out_sum[a * c + ch] = static_cast<T>(s);
            }
            const double mean = s * inv_cells;
            if (out_mean) {
                out_mean[a * c + ch] = static_cast<T>(mean);
            }
            if (out_std) {
                if (r.height == 1 && r.width == 1) {
                    // Single cell: variance is exactly zero; the corner
                    // difference would leave cancellation noise under sqrt.
                    out_std[a * c + ch] = T(0);
                } else {
                    const double sq = corner(sumsq, t1, l1) - corner(sumsq, t0, l1) -
                                      corner(sumsq, t1, l0) + corner(sumsq, t0, l0);
                    const double var = std::max(0.0, sq * inv_cells - mean * mean);
                    out_std[a * c + ch] = static_cast<T>(std::sqrt(var));
                }
            }
        }
    }
}

namespace {

// Sliding max over a 1-d strided sequence; emits (value, argindex) per
// window, ties to the smallest index. `idx` is scratch of length >= len.
template <typename T, typename Emit>
void sliding_max_1d(const T* base, i64 len, i64 stride, i64 window, i64* ring, Emit&& emit) {
    i64 head = 0, tail = 0;  // ring holds candidate indices, values decreasing
    for (i64 i = 0; i < len; ++i) {
        const T v = base[i * stride];
        while (tail > head && base[ring[tail - 1] * stride] < v) {
            --tail;
        }
        ring[tail++] = i;
        if (ring[head] <= i - window) {
            ++head;
        }
        if (i >= window - 1) {
            emit(i - window + 1, ring[head]);
        }
    }
}

}  // namespace

template <typename T>
void area_max_pool(const T* mem, i64 h, i64 w, i64 c, i64 max_h, i64 max_w, T* out,
                   std::int32_t* arg_row, std::int32_t* arg_col) {
    const i64 mh = std::min(max_h, h), mw = std::min(max_w, w);
    // Output offset of each (height, width) shape block in canonical order.
    std::vector<i64> shape_base(static_cast<std::size_t>(mh * mw));
    {
        i64 base = 0;
        for (i64 hh = 1; hh <= mh; ++hh) {
            for (i64 ww = 1; ww <= mw; ++ww) {
                shape_base[static_cast<std::size_t>((hh - 1) * mw + (ww - 1))] = base;
                base += (h - hh + 1) * (w - ww + 1);
            }
        }
    }
#pragma omp parallel for if (c > 1) num_threads(effective_threads()) schedule(static)
    for (i64 ch = 0; ch < c; ++ch) {
        std::vector<T> plane(static_cast<std::size_t>(h * w));
        for (i64 i = 0; i < h * w; ++i) {
            plane[static_cast<std::size_t>(i)] = mem[i * c + ch];
        }
        std::vector<T> row_val(static_cast<std::size_t>(h * w));
        std::vector<std::int32_t> row_arg(static_cast<std::size_t>(h * w));
        std::vector<i64> ring(static_cast<std::size_t>(std::max(h, w)));
        // Row pass depends only on the window width; share it across heights.
        for (i64 ww = 1; ww <= mw; ++ww) {
            const i64 cols_out = w - ww + 1;
            for (i64 r = 0; r < h; ++r) {
                const T* src = plane.data() + r * w;
                sliding_max_1d(src, w, i64(1), ww, ring.data(), [&](i64 start, i64 arg) {
                    row_val[static_cast<std::size_t>(r * cols_out + start)] = src[arg];
                    row_arg[static_cast<std::size_t>(r * cols_out + start)] =
                        static_cast<std::int32_t>(arg);
                });
            }
            for (i64 hh = 1; hh <= mh; ++hh) {
                const i64 area_base =
                    shape_base[static_cast<std::size_t>((hh - 1) * mw + (ww - 1))];
                for (i64 c0 = 0; c0 < cols_out; ++c0) {
                    const T* src = row_val.data() + c0;
                    sliding_max_1d(src, h, cols_out, hh, ring.data(), [&](i64 start, i64 arg) {
                        const i64 a = area_base + start * cols_out + c0;
                        out[a * c + ch] = src[arg * cols_out];
                        if (arg_row) {
                            arg_row[a * c + ch] = static_cast<std::int32_t>(arg);
                            arg_col[a * c + ch] =
                                row_arg[static_cast<std::size_t>(arg * cols_out + c0)];
                        }
                    });
                }
            }
        }
    }
}

#define SER_INSTANTIATE(T)                                                                     \
    template void matmul_nn<T>(const T*, const T*, T*, i64, i64, i64);                         \
    template void matmul_nt<T>(const T*, const T*, T*, i64, i64, i64);                         \
    template void matmul_tn<T>(const T*, const T*, T*, i64, i64, i64);                         \
    template void conv2d_forward<T>(const T*, const T*, const T*, T*, const Conv2dGeom&);      \
    template void conv2d_backward_input<T>(const T*, const T*, T*, const Conv2dGeom&);        \
    template void conv2d_backward_weight<T>(const T*, const T*, T*, const Conv2dGeom&);       \
    template void conv2d_backward_bias<T>(const T*, T*, const Conv2dGeom&);                   \
    template void maxpool2d_forward<T>(const T*, T*, std::int32_t*, i64, i64, i64, i64, i64,   \
                                       i64);                                                   \
    template void maxpool2d_backward<T>(const std::int32_t*, const T*, T*, i64, i64, i64, i64, \
                                        i64, i64);                                             \
    template void softmax_rows<T>(const T*, T*, i64, i64);                                     \
    template void integral_tables<T>(const T*, double*, double*, i64, i64, i64);               \
    template void area_stats_pool<T>(const double*, const double*, i64, i64, i64, i64, i64,    \
                                     T*, T*, T*);                                              \
    template void area_max_pool<T>(const T*, i64, i64, i64, i64, i64, T*, std::int32_t*,       \
                                   std::int32_t*);

SER_INSTANTIATE(float)
SER_INSTANTIATE(double)

#undef SER_INSTANTIATE

}  // namespace ser::kernels
