#include "ser/nn.hpp"

#include <algorithm>
#include <cmath>

namespace ser {

template <typename T>
void kaiming_uniform_fill(TensorT<T>& t, i64 fan_in, T gain, Rng& rng) {
    const double bound = static_cast<double>(gain) * std::sqrt(3.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) {
        v = static_cast<T>(rng.uniform(-bound, bound));
    }
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(i64 in_channels, i64 out_channels, i64 kh, i64 kw, i64 stride_h, i64 stride_w,
                  i64 pad_h, i64 pad_w)
    : in_channels(in_channels),
      out_channels(out_channels),
      kh(kh),
      kw(kw),
      stride_h(stride_h),
      stride_w(stride_w),
      pad_h(pad_h),
      pad_w(pad_w) {
    state.parameters.emplace("weight", TensorT<T>({out_channels, in_channels, kh, kw}));
    state.parameters.emplace("bias", TensorT<T>({out_channels}));
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
    kaiming_uniform_fill(state.param("weight"), in_channels * kh * kw,
                         static_cast<T>(std::sqrt(2.0)), rng);
    std::fill(state.param("bias").data.begin(), state.param("bias").data.end(), T(0));
}

template <typename T>
kernels::Conv2dGeom Conv2d<T>::geometry(const TensorT<T>& x) const {
    if (x.rank() != 4 || x.shape[1] != in_channels) {
        throw DimensionError("conv2d: expected input [N x " + std::to_string(in_channels) +
                             " x H x W]");
    }
    return kernels::conv2d_geometry(x.shape[0], in_channels, x.shape[2], x.shape[3], out_channels,
                                    kh, kw, stride_h, stride_w, pad_h, pad_w);
}

template <typename T>
TensorT<T> Conv2d<T>::forward(const TensorT<T>& x) const {
    const auto g = geometry(x);
    TensorT<T> y({g.n, g.c_out, g.h_out, g.w_out});
    kernels::conv2d_forward(x.ptr(), state.param("weight").ptr(), state.param("bias").ptr(),
                            y.ptr(), g);
    return y;
}

template <typename T>
GradBundleT<T> Conv2d<T>::backward(const TensorT<T>& x, const TensorT<T>& upstream) const {
    const auto g = geometry(x);
    if (upstream.shape != std::vector<i64>{g.n, g.c_out, g.h_out, g.w_out}) {
        throw DimensionError("conv2d backward: upstream shape mismatch");
    }
    GradBundleT<T> out;
    out.input_grad = TensorT<T>(x.shape);
    TensorT<T> dweight({g.c_out, g.c_in, g.kh, g.kw});
    TensorT<T> dbias({g.c_out});
    kernels::conv2d_backward_input(state.param("weight").ptr(), upstream.ptr(),
                                   out.input_grad.ptr(), g);
    kernels::conv2d_backward_weight(x.ptr(), upstream.ptr(), dweight.ptr(), g);
    kernels::conv2d_backward_bias(upstream.ptr(), dbias.ptr(), g);
    out.param_grads.emplace("weight", std::move(dweight));
    out.param_grads.emplace("bias", std::move(dbias));
    return out;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(i64 channels, T momentum, T eps)
    : channels(channels), momentum(momentum), eps(eps) {
    state.parameters.emplace("weight", TensorT<T>::full({channels}, T(1)));
    state.parameters.emplace("bias", TensorT<T>({channels}));
    state.buffers.emplace("running_mean", TensorT<T>({channels}));
    state.buffers.emplace("running_var", TensorT<T>::full({channels}, T(1)));
}

template <typename T>
TensorT<T> BatchNorm2d<T>::forward(const TensorT<T>& x, Mode mode, Cache* cache) {
    if (x.rank() != 4 || x.shape[1] != channels) {
        throw DimensionError("batchnorm: expected input [N x C x H x W]");
    }
    const i64 n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const i64 m = n * h * w;
    std::vector<T> mean(static_cast<std::size_t>(channels));
    std::vector<T> invstd(static_cast<std::size_t>(channels));

    if (mode == Mode::Train) {
        if (m < 2) {
            throw NumericError("batchnorm: batch with a single element per channel has "
                               "degenerate variance");
        }
        auto& rmean = state.buffer("running_mean");
        auto& rvar = state.buffer("running_var");
#pragma omp parallel for if (channels > 1) schedule(static)
        for (i64 c = 0; c < channels; ++c) {
            T acc = T(0);
            for (i64 ni = 0; ni < n; ++ni) {
                const T* plane = x.ptr() + (ni * channels + c) * h * w;
                for (i64 i = 0; i < h * w; ++i) {
                    acc += plane[i];
                }
            }
            const T mu = acc / static_cast<T>(m);
            T var_acc = T(0);
            for (i64 ni = 0; ni < n; ++ni) {
                const T* plane = x.ptr() + (ni * channels + c) * h * w;
                for (i64 i = 0; i < h * w; ++i) {
                    const T d = plane[i] - mu;
                    var_acc += d * d;
                }
            }
            const T var = var_acc / static_cast<T>(m);
            mean[static_cast<std::size_t>(c)] = mu;
            invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps);
            rmean[c] = (T(1) - momentum) * rmean[c] + momentum * mu;
            rvar[c] = (T(1) - momentum) * rvar[c] + momentum * var;
        }
    } else {
        const auto& rmean = state.buffer("running_mean");
        const auto& rvar = state.buffer("running_var");
        for (i64 c = 0; c < channels; ++c) {
            mean[static_cast<std::size_t>(c)] = rmean[c];
            invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(rvar[c] + eps);
        }
    }

    TensorT<T> y(x.shape);
    TensorT<T> xhat(x.shape);
    const auto& gamma = state.param("weight");
    const auto& beta = state.param("bias");
#pragma omp parallel for collapse(2) if (n * channels > 1) schedule(static)
    for (i64 ni = 0; ni < n; ++ni) {
        for (i64 c = 0; c < channels; ++c) {
            const T* xp = x.ptr() + (ni * channels + c) * h * w;
            T* yp = y.ptr() + (ni * channels + c) * h * w;
            T* xh = xhat.ptr() + (ni * channels + c) * h * w;
            const T mu = mean[static_cast<std::size_t>(c)];
            const T is = invstd[static_cast<std::size_t>(c)];
            const T gm = gamma[c];
            const T bt = beta[c];
            for (i64 i = 0; i < h * w; ++i) {
                xh[i] = (xp[i] - mu) * is;
                yp[i] = xh[i] * gm + bt;
            }
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->invstd = std::move(invstd);
        cache->xhat = std::move(xhat);
    }
    return y;
}

template <typename T>
GradBundleT<T> BatchNorm2d<T>::backward(const TensorT<T>& x, const Cache& cache,
                                        const TensorT<T>& upstream) const {
    if (upstream.shape != x.shape) {
        throw DimensionError("batchnorm backward: upstream shape mismatch");
    }
    const i64 n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const i64 m = n * h * w;
    const auto& gamma = state.param("weight");

    GradBundleT<T> out;
    out.input_grad = TensorT<T>(x.shape);
    TensorT<T> dgamma({channels});
    TensorT<T> dbeta({channels});

#pragma omp parallel for if (channels > 1) schedule(static)
    for (i64 c = 0; c < channels; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (i64 ni = 0; ni < n; ++ni) {
            const T* up = upstream.ptr() + (ni * channels + c) * h * w;
            const T* xh = cache.xhat.ptr() + (ni * channels + c) * h * w;
            for (i64 i = 0; i < h * w; ++i) {
                sum_dy += up[i];
                sum_dy_xhat += up[i] * xh[i];
            }
        }
        dbeta[c] = sum_dy;
        dgamma[c] = sum_dy_xhat;
        const T gm = gamma[c];
        const T is = cache.invstd[static_cast<std::size_t>(c)];
        const T inv_m = T(1) / static_cast<T>(m);
        for (i64 ni = 0; ni < n; ++ni) {
            const T* up = upstream.ptr() + (ni * channels + c) * h * w;
            const T* xh = cache.xhat.ptr() + (ni * channels + c) * h * w;
            T* dx = out.input_grad.ptr() + (ni * channels + c) * h * w;
            for (i64 i = 0; i < h * w; ++i) {
                dx[i] = gm * is * inv_m *
                        (static_cast<T>(m) * up[i] - sum_dy - xh[i] * sum_dy_xhat);
            }
        }
    }
    out.param_grads.emplace("weight", std::move(dgamma));
    out.param_grads.emplace("bias", std::move(dbeta));
    return out;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(i64 in_features, i64 out_features)
    : in_features(in_features), out_features(out_features) {
    state.parameters.emplace("weight", TensorT<T>({in_features, out_features}));
    state.parameters.emplace("bias", TensorT<T>({out_features}));
}

template <typename T>
void Linear<T>::init(Rng& rng) {
    kaiming_uniform_fill(state.param("weight"), in_features, static_cast<T>(std::sqrt(2.0)), rng);
    std::fill(state.param("bias").data.begin(), state.param("bias").data.end(), T(0));
}

template <typename T>
TensorT<T> Linear<T>::forward(const TensorT<T>& x) const {
    if (x.rank() != 2 || x.shape[1] != in_features) {
        throw DimensionError("linear: expected input [N x " + std::to_string(in_features) + "]");
    }
    const i64 n = x.shape[0];
    TensorT<T> y({n, out_features});
    kernels::matmul_nn(x.ptr(), state.param("weight").ptr(), y.ptr(), n, in_features,
                       out_features);
    const auto& bias = state.param("bias");
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < out_features; ++j) {
            y.at2(i, j) += bias[j];
        }
    }
    return y;
}

template <typename T>
GradBundleT<T> Linear<T>::backward(const TensorT<T>& x, const TensorT<T>& upstream) const {
    if (upstream.shape != std::vector<i64>{x.shape[0], out_features}) {
        throw DimensionError("linear backward: upstream shape mismatch");
    }
    const i64 n = x.shape[0];
    GradBundleT<T> out;
    out.input_grad = TensorT<T>({n, in_features});
    TensorT<T> dweight({in_features, out_features});
    TensorT<T> dbias({out_features});
    kernels::matmul_nt(upstream.ptr(), state.param("weight").ptr(), out.input_grad.ptr(), n,
                       out_features, in_features);
    kernels::matmul_tn(x.ptr(), upstream.ptr(), dweight.ptr(), in_features, n, out_features);
    for (i64 j = 0; j < out_features; ++j) {
        T acc = T(0);
        for (i64 i = 0; i < n; ++i) {
            acc += upstream.at2(i, j);
        }
        dbias[j] = acc;
    }
    out.param_grads.emplace("weight", std::move(dweight));
    out.param_grads.emplace("bias", std::move(dbias));
    return out;
}

// ---------------------------------------------------------------------------
// MaxPool2d

template <typename T>
TensorT<T> MaxPool2d<T>::forward(const TensorT<T>& x, Cache* cache) const {
    const i64 n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const i64 h_out = h / pool_h, w_out = w / pool_w;
    if (h_out < 1 || w_out < 1) {
        throw DimensionError("maxpool: input smaller than pooling window");
    }
    TensorT<T> y({n, c, h_out, w_out});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(n * c * h_out * w_out));
    kernels::maxpool2d_forward(x.ptr(), y.ptr(), argmax.data(), n, c, h, w, pool_h, pool_w);
    if (cache) {
        cache->argmax = std::move(argmax);
    }
    return y;
}

template <typename T>
TensorT<T> MaxPool2d<T>::backward(const TensorT<T>& x, const Cache& cache,
                                  const TensorT<T>& upstream) const {
    const i64 n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    TensorT<T> dx(x.shape);
    kernels::maxpool2d_backward(cache.argmax.data(), upstream.ptr(), dx.ptr(), n, c, h, w, pool_h,
                                pool_w);
    return dx;
}

// ---------------------------------------------------------------------------
// Elementwise and loss

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (i64 i = 0; i < x.numel(); ++i) {
        y[i] = x[i] > T(0) ? x[i] : T(0);
    }
    return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream) {
    TensorT<T> dx(x.shape);
    for (i64 i = 0; i < x.numel(); ++i) {
        dx[i] = x[i] > T(0) ? upstream[i] : T(0);
    }
    return dx;
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& x) {
    if (x.rank() < 1) {
        throw DimensionError("softmax: rank must be >= 1");
    }
    const i64 cols = x.shape.back();
    const i64 rows = x.numel() / cols;
    TensorT<T> y(x.shape);
    kernels::softmax_rows(x.ptr(), y.ptr(), rows, cols);
    return y;
}

template <typename T>
T cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels, TensorT<T>* dlogits) {
    if (logits.rank() != 2) {
        throw DimensionError("cross_entropy: logits must be [N x D]");
    }
    const i64 n = logits.shape[0], d = logits.shape[1];
    if (d < 1 || static_cast<i64>(labels.size()) != n) {
        throw DimensionError("cross_entropy: labels do not match logits");
    }
    for (int y : labels) {
        if (y < 0 || y >= d) {
            throw DataError("cross_entropy: label out of range");
        }
    }
    TensorT<T> probs = softmax(logits);
    T loss = T(0);
    for (i64 i = 0; i < n; ++i) {
        const T* row = logits.ptr() + i * d;
        T mx = row[0];
        for (i64 j = 1; j < d; ++j) {
            mx = std::max(mx, row[j]);
        }
        T lse = T(0);
        for (i64 j = 0; j < d; ++j) {
            lse += std::exp(row[j] - mx);
        }
        lse = std::log(lse) + mx;
        loss += lse - row[labels[static_cast<std::size_t>(i)]];
    }
    loss /= static_cast<T>(n);
    if (!std::isfinite(loss)) {
        throw NumericError("cross_entropy: non-finite loss");
    }
    if (dlogits) {
        *dlogits = std::move(probs);
        const T inv_n = T(1) / static_cast<T>(n);
        for (i64 i = 0; i < n; ++i) {
            T* row = dlogits->ptr() + i * d;
            row[labels[static_cast<std::size_t>(i)]] -= T(1);
            for (i64 j = 0; j < d; ++j) {
                row[j] *= inv_n;
            }
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
void Optimizer<T>::step(const std::vector<ParamRef<T>>& params, const NamedTensors<T>& grads) {
    ++step_count_;
    const T bc1 = T(1) - std::pow(config_.beta1, static_cast<T>(step_count_));
    const T bc2 = T(1) - std::pow(config_.beta2, static_cast<T>(step_count_));
    for (const auto& ref : params) {
        const auto it = grads.find(ref.name);
        if (it == grads.end()) {
            throw ConfigError("optimizer: missing gradient for " + ref.name);
        }
        const TensorT<T>& g = it->second;
        TensorT<T>& p = *ref.value;
        if (g.shape != p.shape) {
            throw DimensionError("optimizer: gradient shape mismatch for " + ref.name);
        }
        if (!all_finite(g)) {
            throw NumericError("optimizer: non-finite gradient for " + ref.name);
        }
        if (config_.algo == OptAlgo::Sgd) {
            for (i64 i = 0; i < p.numel(); ++i) {
                p[i] -= config_.lr * (g[i] + config_.weight_decay * p[i]);
            }
            continue;
        }
        auto slot_it = slots_.find(ref.name);
        if (slot_it == slots_.end()) {
            slot_it = slots_.emplace(ref.name, Slot{TensorT<T>(p.shape), TensorT<T>(p.shape)})
                          .first;
        }
        Slot& slot = slot_it->second;
        for (i64 i = 0; i < p.numel(); ++i) {
            const T gi = g[i] + config_.weight_decay * p[i];
            slot.m[i] = config_.beta1 * slot.m[i] + (T(1) - config_.beta1) * gi;
            slot.v[i] = config_.beta2 * slot.v[i] + (T(1) - config_.beta2) * gi * gi;
            const T mhat = slot.m[i] / bc1;
            const T vhat = slot.v[i] / bc2;
            p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

#define SER_NN_INSTANTIATE(T)                                                               \
    template void kaiming_uniform_fill<T>(TensorT<T>&, i64, T, Rng&);                       \
    template class Conv2d<T>;                                                               \
    template class BatchNorm2d<T>;                                                          \
    template class Linear<T>;                                                               \
    template class MaxPool2d<T>;                                                            \
    template class Optimizer<T>;                                                            \
    template TensorT<T> relu<T>(const TensorT<T>&);                                         \
    template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);             \
    template TensorT<T> softmax<T>(const TensorT<T>&);                                      \
    template T cross_entropy<T>(const TensorT<T>&, const std::vector<int>&, TensorT<T>*);

SER_NN_INSTANTIATE(float)
SER_NN_INSTANTIATE(double)

#undef SER_NN_INSTANTIATE

}  // namespace ser
