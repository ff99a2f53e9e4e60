#include "ser/area_attention.hpp"

#include <algorithm>
#include <cmath>

namespace ser {

std::vector<AreaIndex> enumerate_areas(i64 h, i64 w, i64 max_h, i64 max_w) {
    if (h < 1 || w < 1) {
        throw DimensionError("enumerate_areas: grid extents must be positive");
    }
    if (max_h < 1 || max_w < 1) {
        throw DimensionError("enumerate_areas: max area bounds must be positive");
    }
    std::vector<AreaIndex> areas;
    areas.reserve(static_cast<std::size_t>(kernels::area_count(h, w, max_h, max_w)));
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

template <typename T>
IntegralTables build_integral_tables(const TensorT<T>& memory) {
    if (memory.rank() != 3) {
        throw DimensionError("build_integral_tables: memory must be [H x W x C]");
    }
    const i64 h = memory.shape[0], w = memory.shape[1], c = memory.shape[2];
    IntegralTables t{TensorT<double>({h + 1, w + 1, c}), TensorT<double>({h + 1, w + 1, c})};
    kernels::integral_tables(memory.ptr(), t.sum.ptr(), t.sumsq.ptr(), h, w, c);
    return t;
}

template <typename T>
AreaStats<T> pool_area_stats(const IntegralTables& tables, const AreaIndex& area) {
    const i64 c = tables.channels();
    const i64 t0 = area.top, l0 = area.left;
    const i64 t1 = area.top + area.height, l1 = area.left + area.width;
    if (t0 < 0 || l0 < 0 || t1 > tables.grid_h() || l1 > tables.grid_w()) {
        throw DimensionError("pool_area_stats: area outside grid");
    }
    AreaStats<T> out;
    out.sum.resize(static_cast<std::size_t>(c));
    out.mean.resize(static_cast<std::size_t>(c));
    out.stddev.resize(static_cast<std::size_t>(c));
    const double inv_cells = 1.0 / static_cast<double>(area.cells());
    for (i64 ch = 0; ch < c; ++ch) {
        const auto corner = [&](const TensorT<double>& tab, i64 i, i64 j) {
            return tab.at3(i, j, ch);
        };
        const double s = corner(tables.sum, t1, l1) - corner(tables.sum, t0, l1) -
                         corner(tables.sum, t1, l0) + corner(tables.sum, t0, l0);
        const double mean = s * inv_cells;
        out.sum[static_cast<std::size_t>(ch)] = static_cast<T>(s);
        out.mean[static_cast<std::size_t>(ch)] = static_cast<T>(mean);
        if (area.cells() == 1) {
            out.stddev[static_cast<std::size_t>(ch)] = T(0);
        } else {
            const double sq = corner(tables.sumsq, t1, l1) - corner(tables.sumsq, t0, l1) -
                              corner(tables.sumsq, t1, l0) + corner(tables.sumsq, t0, l0);
            out.stddev[static_cast<std::size_t>(ch)] =
                static_cast<T>(std::sqrt(std::max(0.0, sq * inv_cells - mean * mean)));
        }
    }
    return out;
}

template <typename T>
PooledMemory<T> assemble_pooled_memory(const TensorT<T>& memory, const AreaConfig& config,
                                       Mode mode, Rng* rng) {
    if (memory.rank() != 3) {
        throw DimensionError("assemble_pooled_memory: memory must be [H x W x C]");
    }
    if (config.key_mode == KeyMode::Sample && rng == nullptr) {
        throw ConfigError("Sample key mode requires an rng");
    }
    const i64 h = memory.shape[0], w = memory.shape[1], c = memory.shape[2];
    const i64 max_h = config.max_height, max_w = config.max_width;

    PooledMemory<T> pooled;
    pooled.areas = enumerate_areas(h, w, max_h, max_w);
    const i64 a = static_cast<i64>(pooled.areas.size());

    const bool need_stats = config.key_mode != KeyMode::Max ||
                            config.value_mode != ValueMode::Max;
    const bool need_max = config.key_mode == KeyMode::Max ||
                          config.value_mode == ValueMode::Max;

    TensorT<T> sum_pool, mean_pool, std_pool, max_pool;
    std::vector<std::int32_t> max_rows, max_cols;
    if (need_stats) {
        const auto tables = build_integral_tables(memory);
        sum_pool = TensorT<T>({a, c});
        mean_pool = TensorT<T>({a, c});
        const bool need_std = config.key_mode == KeyMode::Sample;
        if (need_std) {
            std_pool = TensorT<T>({a, c});
        }
        kernels::area_stats_pool(tables.sum.ptr(), tables.sumsq.ptr(), h, w, c, max_h, max_w,
                                 sum_pool.ptr(), mean_pool.ptr(),
                                 need_std ? std_pool.ptr() : nullptr);
    }
    if (need_max) {
        max_pool = TensorT<T>({a, c});
        max_rows.resize(static_cast<std::size_t>(a * c));
        max_cols.resize(static_cast<std::size_t>(a * c));
        kernels::area_max_pool(memory.ptr(), h, w, c, max_h, max_w, max_pool.ptr(),
                               max_rows.data(), max_cols.data());
    }

    switch (config.key_mode) {
        case KeyMode::Max:
            pooled.keys = max_pool;
            pooled.key_arg_row = max_rows;
            pooled.key_arg_col = max_cols;
            break;
        case KeyMode::Mean:
            pooled.keys = mean_pool;
            break;
        case KeyMode::Sample: {
            pooled.sigma = std_pool;
            pooled.mean = mean_pool;
            if (mode == Mode::Train) {
                pooled.xi = TensorT<T>({a, c});
                for (i64 i = 0; i < a * c; ++i) {
                    pooled.xi[i] = static_cast<T>(rng->normal());
                }
                pooled.keys = TensorT<T>({a, c});
                for (i64 i = 0; i < a * c; ++i) {
                    pooled.keys[i] = mean_pool[i] + std_pool[i] * pooled.xi[i];
                }
            } else {
                pooled.keys = mean_pool;
            }
            break;
        }
    }

    switch (config.value_mode) {
        case ValueMode::Max:
            pooled.values = max_pool;
            pooled.value_arg_row = std::move(max_rows);
            pooled.value_arg_col = std::move(max_cols);
            break;
        case ValueMode::Mean:
            pooled.values = std::move(mean_pool);
            break;
        case ValueMode::Sum:
            pooled.values = std::move(sum_pool);
            break;
    }
    return pooled;
}

template <typename T>
void AttentionWeights<T>::init(i64 channels, Rng& rng) {
    for (TensorT<T>* w : {&wq, &wk, &wv, &wo}) {
        *w = TensorT<T>({channels, channels});
        kaiming_uniform_fill(*w, channels, T(1), rng);
    }
}

namespace {

template <typename T>
void slice_head(const TensorT<T>& x, i64 off, i64 dk, TensorT<T>& out) {
    const i64 rows = x.shape[0], c = x.shape[1];
    out = TensorT<T>({rows, dk});
    for (i64 i = 0; i < rows; ++i) {
        const T* src = x.ptr() + i * c + off;
        std::copy(src, src + dk, out.ptr() + i * dk);
    }
}

template <typename T>
void unslice_head(const TensorT<T>& part, i64 off, TensorT<T>& x) {
    const i64 rows = x.shape[0], c = x.shape[1], dk = part.shape[1];
    for (i64 i = 0; i < rows; ++i) {
        std::copy(part.ptr() + i * dk, part.ptr() + (i + 1) * dk, x.ptr() + i * c + off);
    }
}

}  // namespace

template <typename T>
AreaAttentionOutput<T> area_attention_forward(const TensorT<T>& query, const TensorT<T>& memory,
                                              const AttentionWeights<T>& weights,
                                              const AreaConfig& config, Mode mode, Rng* rng,
                                              AreaAttentionCache<T>* cache) {
    if (query.rank() != 2 || memory.rank() != 3 || query.shape[1] != memory.shape[2]) {
        throw DimensionError("area attention: query [N x C] and memory [H x W x C] required");
    }
    const i64 n = query.shape[0], c = query.shape[1];
    if (config.num_heads < 1 || c % config.num_heads != 0) {
        throw ConfigError("area attention: num_heads must divide the channel count");
    }
    const i64 heads = config.num_heads;
    const i64 dk = c / heads;

    PooledMemory<T> pooled = assemble_pooled_memory(memory, config, mode, rng);
    const i64 a = static_cast<i64>(pooled.areas.size());

    TensorT<T> q({n, c}), k({a, c}), v({a, c});
    kernels::matmul_nn(query.ptr(), weights.wq.ptr(), q.ptr(), n, c, c);
    kernels::matmul_nn(pooled.keys.ptr(), weights.wk.ptr(), k.ptr(), a, c, c);
    kernels::matmul_nn(pooled.values.ptr(), weights.wv.ptr(), v.ptr(), a, c, c);

    TensorT<T> attn({heads, n, a});
    TensorT<T> concat({n, c});
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    TensorT<T> qh, kh, vh;
    for (i64 head = 0; head < heads; ++head) {
        const i64 off = head * dk;
        slice_head(q, off, dk, qh);
        slice_head(k, off, dk, kh);
        slice_head(v, off, dk, vh);
        T* logits = attn.ptr() + head * n * a;
        kernels::matmul_nt(qh.ptr(), kh.ptr(), logits, n, dk, a);
        for (i64 i = 0; i < n * a; ++i) {
            logits[i] *= scale;
        }
        kernels::softmax_rows(logits, logits, n, a);
        TensorT<T> out_h({n, dk});
        kernels::matmul_nn(logits, vh.ptr(), out_h.ptr(), n, a, dk);
        unslice_head(out_h, off, concat);
    }

    AreaAttentionOutput<T> result;
    result.output = TensorT<T>({n, c});
    kernels::matmul_nn(concat.ptr(), weights.wo.ptr(), result.output.ptr(), n, c, c);
    result.attn = attn;

    if (cache) {
        cache->query = query;
        cache->memory = memory;
        cache->pooled = std::move(pooled);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->concat = std::move(concat);
        cache->config = config;
        cache->valid = true;
    }
    return result;
}

template <typename T>
void route_value_grads(const PooledMemory<T>& pooled, ValueMode mode, const TensorT<T>& dvalues,
                       TensorT<T>& dmemory) {
    const i64 h = dmemory.shape[0], w = dmemory.shape[1], c = dmemory.shape[2];
    const i64 a = static_cast<i64>(pooled.areas.size());
    (void)h;
#pragma omp parallel for if (c > 1) schedule(static)
    for (i64 ch = 0; ch < c; ++ch) {
        for (i64 ai = 0; ai < a; ++ai) {
            const AreaIndex& area = pooled.areas[static_cast<std::size_t>(ai)];
            const T g = dvalues.at2(ai, ch);
            if (g == T(0)) {
                continue;
            }
            switch (mode) {
                case ValueMode::Sum:
                    for (i64 r = area.top; r < area.top + area.height; ++r) {
                        for (i64 col = area.left; col < area.left + area.width; ++col) {
                            dmemory[(r * w + col) * c + ch] += g;
                        }
                    }
                    break;
                case ValueMode::Mean: {
                    const T gm = g / static_cast<T>(area.cells());
                    for (i64 r = area.top; r < area.top + area.height; ++r) {
                        for (i64 col = area.left; col < area.left + area.width; ++col) {
                            dmemory[(r * w + col) * c + ch] += gm;
                        }
                    }
                    break;
                }
                case ValueMode::Max: {
                    const i64 r = pooled.value_arg_row[static_cast<std::size_t>(ai * c + ch)];
                    const i64 col = pooled.value_arg_col[static_cast<std::size_t>(ai * c + ch)];
                    dmemory[(r * w + col) * c + ch] += g;
                    break;
                }
            }
        }
    }
}

template <typename T>
void route_key_grads(const PooledMemory<T>& pooled, KeyMode mode, bool sampled,
                     const TensorT<T>& dkeys, const TensorT<T>& memory, TensorT<T>& dmemory) {
    const i64 w = dmemory.shape[1], c = dmemory.shape[2];
    const i64 a = static_cast<i64>(pooled.areas.size());
#pragma omp parallel for if (c > 1) schedule(static)
    for (i64 ch = 0; ch < c; ++ch) {
        for (i64 ai = 0; ai < a; ++ai) {
            const AreaIndex& area = pooled.areas[static_cast<std::size_t>(ai)];
            const T g = dkeys.at2(ai, ch);
            if (g == T(0)) {
                continue;
            }
            switch (mode) {
                case KeyMode::Mean: {
                    const T gm = g / static_cast<T>(area.cells());
                    for (i64 r = area.top; r < area.top + area.height; ++r) {
                        for (i64 col = area.left; col < area.left + area.width; ++col) {
                            dmemory[(r * w + col) * c + ch] += gm;
                        }
                    }
                    break;
                }
                case KeyMode::Max: {
                    const i64 r = pooled.key_arg_row[static_cast<std::size_t>(ai * c + ch)];
                    const i64 col = pooled.key_arg_col[static_cast<std::size_t>(ai * c + ch)];
                    dmemory[(r * w + col) * c + ch] += g;
                    break;
                }
                case KeyMode::Sample: {
                    // key = mean + std * xi; d(mean)/dx = 1/cells,
                    // d(std)/dx = (x - mean) / (cells * std), 0 where std is 0.
                    const T inv_cells = T(1) / static_cast<T>(area.cells());
                    const T gm = g * inv_cells;
                    T gs = T(0);
                    T sig = T(0);
                    if (sampled) {
                        sig = pooled.sigma.at2(ai, ch);
                        gs = g * pooled.xi.at2(ai, ch);
                    }
                    const T mu = sampled ? pooled.mean.at2(ai, ch) : T(0);
                    for (i64 r = area.top; r < area.top + area.height; ++r) {
                        for (i64 col = area.left; col < area.left + area.width; ++col) {
                            T add = gm;
                            if (sampled && sig > T(0)) {
                                add += gs * (memory[(r * w + col) * c + ch] - mu) /
                                       (static_cast<T>(area.cells()) * sig);
                            }
                            dmemory[(r * w + col) * c + ch] += add;
                        }
                    }
                    break;
                }
            }
        }
    }
}

template <typename T>
AreaAttentionGrads<T> area_attention_backward(const AreaAttentionCache<T>& cache,
                                              const AttentionWeights<T>& weights,
                                              const TensorT<T>& upstream) {
    if (!cache.valid) {
        throw ConfigError("area attention backward: cache does not match a forward pass");
    }
    if (upstream.shape != cache.query.shape) {
        throw DimensionError("area attention backward: upstream shape mismatch");
    }
    const i64 n = cache.query.shape[0], c = cache.query.shape[1];
    const i64 a = static_cast<i64>(cache.pooled.areas.size());
    const i64 heads = cache.config.num_heads;
    const i64 dk = c / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    AreaAttentionGrads<T> grads;
    grads.wo_grad = TensorT<T>({c, c});
    kernels::matmul_tn(cache.concat.ptr(), upstream.ptr(), grads.wo_grad.ptr(), c, n, c);
    TensorT<T> dconcat({n, c});
    kernels::matmul_nt(upstream.ptr(), weights.wo.ptr(), dconcat.ptr(), n, c, c);

    TensorT<T> dq({n, c}), dkk({a, c}), dv({a, c});
    TensorT<T> qh, kh, vh, doh;
    for (i64 head = 0; head < heads; ++head) {
        const i64 off = head * dk;
        slice_head(cache.q, off, dk, qh);
        slice_head(cache.k, off, dk, kh);
        slice_head(cache.v, off, dk, vh);
        slice_head(dconcat, off, dk, doh);
        const T* attn = cache.attn.ptr() + head * n * a;

        TensorT<T> dattn({n, a});
        kernels::matmul_nt(doh.ptr(), vh.ptr(), dattn.ptr(), n, dk, a);
        TensorT<T> dvh({a, dk});
        kernels::matmul_tn(attn, doh.ptr(), dvh.ptr(), a, n, dk);

        // softmax rows backward, then the 1/sqrt(dk) logit scale
        TensorT<T> dlogits({n, a});
        for (i64 i = 0; i < n; ++i) {
            const T* arow = attn + i * a;
            const T* drow = dattn.ptr() + i * a;
            T dot = T(0);
            for (i64 j = 0; j < a; ++j) {
                dot += arow[j] * drow[j];
            }
            T* out = dlogits.ptr() + i * a;
            for (i64 j = 0; j < a; ++j) {
                out[j] = arow[j] * (drow[j] - dot) * scale;
            }
        }

        TensorT<T> dqh({n, dk}), dkh({a, dk});
        kernels::matmul_nn(dlogits.ptr(), kh.ptr(), dqh.ptr(), n, a, dk);
        kernels::matmul_tn(dlogits.ptr(), qh.ptr(), dkh.ptr(), a, n, dk);
        unslice_head(dqh, off, dq);
        unslice_head(dkh, off, dkk);
        unslice_head(dvh, off, dv);
    }

    grads.query_grad = TensorT<T>({n, c});
    grads.wq_grad = TensorT<T>({c, c});
    kernels::matmul_nt(dq.ptr(), weights.wq.ptr(), grads.query_grad.ptr(), n, c, c);
    kernels::matmul_tn(cache.query.ptr(), dq.ptr(), grads.wq_grad.ptr(), c, n, c);

    TensorT<T> dkeys({a, c}), dvalues({a, c});
    grads.wk_grad = TensorT<T>({c, c});
    grads.wv_grad = TensorT<T>({c, c});
    kernels::matmul_nt(dkk.ptr(), weights.wk.ptr(), dkeys.ptr(), a, c, c);
    kernels::matmul_tn(cache.pooled.keys.ptr(), dkk.ptr(), grads.wk_grad.ptr(), c, a, c);
    kernels::matmul_nt(dv.ptr(), weights.wv.ptr(), dvalues.ptr(), a, c, c);
    kernels::matmul_tn(cache.pooled.values.ptr(), dv.ptr(), grads.wv_grad.ptr(), c, a, c);

    grads.memory_grad = TensorT<T>(cache.memory.shape);
    route_value_grads(cache.pooled, cache.config.value_mode, dvalues, grads.memory_grad);
    const bool sampled = cache.config.key_mode == KeyMode::Sample && cache.pooled.xi.numel() > 0;
    route_key_grads(cache.pooled, cache.config.key_mode, sampled, dkeys, cache.memory,
                    grads.memory_grad);
    return grads;
}

#define SER_AREA_INSTANTIATE(T)                                                               \
    template struct AttentionWeights<T>;                                                      \
    template IntegralTables build_integral_tables<T>(const TensorT<T>&);                      \
    template AreaStats<T> pool_area_stats<T>(const IntegralTables&, const AreaIndex&);        \
    template PooledMemory<T> assemble_pooled_memory<T>(const TensorT<T>&, const AreaConfig&,  \
                                                       Mode, Rng*);                           \
    template AreaAttentionOutput<T> area_attention_forward<T>(                                \
        const TensorT<T>&, const TensorT<T>&, const AttentionWeights<T>&, const AreaConfig&,  \
        Mode, Rng*, AreaAttentionCache<T>*);                                                  \
    template AreaAttentionGrads<T> area_attention_backward<T>(                                \
        const AreaAttentionCache<T>&, const AttentionWeights<T>&, const TensorT<T>&);         \
    template void route_value_grads<T>(const PooledMemory<T>&, ValueMode, const TensorT<T>&,  \
                                       TensorT<T>&);                                          \
    template void route_key_grads<T>(const PooledMemory<T>&, KeyMode, bool, const TensorT<T>&, \
                                     const TensorT<T>&, TensorT<T>&);

SER_AREA_INSTANTIATE(float)
SER_AREA_INSTANTIATE(double)

#undef SER_AREA_INSTANTIATE

}  // namespace ser
