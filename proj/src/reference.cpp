#include "ser/reference.hpp"

#include <algorithm>
#include <cmath>

namespace ser::ref {

template <typename T>
TensorT<T> matmul_naive(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw DimensionError("matmul_naive: incompatible shapes");
    }
    const i64 m = a.shape[0], k = a.shape[1], n = b.shape[1];
    TensorT<T> c({m, n});
    for (i64 i = 0; i < m; ++i) {
        for (i64 j = 0; j < n; ++j) {
            T acc = T(0);
            for (i64 p = 0; p < k; ++p) {
                acc += a.at2(i, p) * b.at2(p, j);
            }
            c.at2(i, j) = acc;
        }
    }
    return c;
}

template <typename T>
TensorT<T> conv2d_naive(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias,
                        i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w) {
    const i64 n = x.shape[0], c_in = x.shape[1], h = x.shape[2], w = x.shape[3];
    const i64 c_out = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3];
    const i64 h_out = (h + 2 * pad_h - kh) / stride_h + 1;
    const i64 w_out = (w + 2 * pad_w - kw) / stride_w + 1;
    TensorT<T> y({n, c_out, h_out, w_out});
    for (i64 ni = 0; ni < n; ++ni) {
        for (i64 co = 0; co < c_out; ++co) {
            for (i64 ho = 0; ho < h_out; ++ho) {
                for (i64 wo = 0; wo < w_out; ++wo) {
                    T acc = bias.numel() > 0 ? bias[co] : T(0);
                    for (i64 ci = 0; ci < c_in; ++ci) {
                        for (i64 r = 0; r < kh; ++r) {
                            for (i64 s = 0; s < kw; ++s) {
                                const i64 hi = ho * stride_h - pad_h + r;
                                const i64 wi = wo * stride_w - pad_w + s;
                                if (hi < 0 || hi >= h || wi < 0 || wi >= w) {
                                    continue;
                                }
                                acc += x.at4(ni, ci, hi, wi) * weight.at4(co, ci, r, s);
                            }
                        }
                    }
                    y.at4(ni, co, ho, wo) = acc;
                }
            }
        }
    }
    return y;
}

template <typename T>
T rect_sum_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel) {
    T acc = T(0);
    for (i64 r = top; r < top + height; ++r) {
        for (i64 c = left; c < left + width; ++c) {
            acc += mem.at3(r, c, channel);
        }
    }
    return acc;
}

template <typename T>
T rect_mean_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel) {
    return rect_sum_naive(mem, top, left, height, width, channel) /
           static_cast<T>(height * width);
}

template <typename T>
T rect_std_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel) {
    const T mean = rect_mean_naive(mem, top, left, height, width, channel);
    T acc = T(0);
    for (i64 r = top; r < top + height; ++r) {
        for (i64 c = left; c < left + width; ++c) {
            const T d = mem.at3(r, c, channel) - mean;
            acc += d * d;
        }
    }
    return std::sqrt(acc / static_cast<T>(height * width));
}

template <typename T>
T rect_max_naive(const TensorT<T>& mem, i64 top, i64 left, i64 height, i64 width, i64 channel) {
    T best = mem.at3(top, left, channel);
    for (i64 r = top; r < top + height; ++r) {
        for (i64 c = left; c < left + width; ++c) {
            best = std::max(best, mem.at3(r, c, channel));
        }
    }
    return best;
}

template <typename T>
TensorT<T> multihead_attention_naive(const TensorT<T>& query, const TensorT<T>& keys,
                                     const TensorT<T>& values, const TensorT<T>& wq,
                                     const TensorT<T>& wk, const TensorT<T>& wv,
                                     const TensorT<T>& wo, int num_heads) {
    const i64 n = query.shape[0], c = query.shape[1], a = keys.shape[0];
    const i64 dk = c / num_heads;
    const auto project = [&](const TensorT<T>& x, const TensorT<T>& w) {
        return matmul_naive(x, w);
    };
    const TensorT<T> q = project(query, wq);
    const TensorT<T> k = project(keys, wk);
    const TensorT<T> v = project(values, wv);

    TensorT<T> concat({n, c});
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    for (int head = 0; head < num_heads; ++head) {
        const i64 off = head * dk;
        for (i64 i = 0; i < n; ++i) {
            std::vector<T> logits(static_cast<std::size_t>(a));
            for (i64 j = 0; j < a; ++j) {
                T acc = T(0);
                for (i64 d = 0; d < dk; ++d) {
                    acc += q.at2(i, off + d) * k.at2(j, off + d);
                }
                logits[static_cast<std::size_t>(j)] = acc * scale;
            }
            const T mx = *std::max_element(logits.begin(), logits.end());
            T denom = T(0);
            for (auto& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (i64 d = 0; d < dk; ++d) {
                T acc = T(0);
                for (i64 j = 0; j < a; ++j) {
                    acc += logits[static_cast<std::size_t>(j)] * v.at2(j, off + d);
                }
                concat.at2(i, off + d) = acc / denom;
            }
        }
    }
    return matmul_naive(concat, wo);
}

#define SER_REF_INSTANTIATE(T)                                                                \
    template TensorT<T> matmul_naive<T>(const TensorT<T>&, const TensorT<T>&);               \
    template TensorT<T> conv2d_naive<T>(const TensorT<T>&, const TensorT<T>&,                \
                                        const TensorT<T>&, i64, i64, i64, i64);              \
    template T rect_sum_naive<T>(const TensorT<T>&, i64, i64, i64, i64, i64);                \
    template T rect_mean_naive<T>(const TensorT<T>&, i64, i64, i64, i64, i64);               \
    template T rect_std_naive<T>(const TensorT<T>&, i64, i64, i64, i64, i64);                \
    template T rect_max_naive<T>(const TensorT<T>&, i64, i64, i64, i64, i64);                \
    template TensorT<T> multihead_attention_naive<T>(                                        \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,          \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int);

SER_REF_INSTANTIATE(float)
SER_REF_INSTANTIATE(double)

#undef SER_REF_INSTANTIATE

}  // namespace ser::ref
