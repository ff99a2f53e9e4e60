#include "ser/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ser/json_conv.hpp"

namespace ser {

void ModelConfig::validate() const {
    if (parallel_channels < 1) {
        throw ConfigError("model: parallel_channels must be positive");
    }
    if (trunk_channels.empty()) {
        throw ConfigError("model: trunk_channels must be non-empty");
    }
    if (trunk_channels.back() != 80) {
        throw ConfigError("model: the final trunk layer must produce 80 channels");
    }
    for (int c : trunk_channels) {
        if (c < 1) {
            throw ConfigError("model: trunk channel counts must be positive");
        }
    }
    if (num_classes < 2) {
        throw ConfigError("model: num_classes must be at least 2");
    }
    for (int p : pool_after) {
        if (p < 1 || p > static_cast<int>(trunk_channels.size())) {
            throw ConfigError("model: pool_after entries must name trunk layers");
        }
    }
    if (attention_enabled &&
        trunk_channels.back() % attention.num_heads != 0) {
        throw ConfigError("model: num_heads must divide the final channel count");
    }
}

namespace {

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3]) {
        throw DimensionError("model: parallel branch outputs have mismatched spatial dims");
    }
    const i64 n = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    const i64 h = a.shape[2], w = a.shape[3];
    TensorT<T> out({n, ca + cb, h, w});
    const i64 plane = h * w;
    for (i64 ni = 0; ni < n; ++ni) {
        std::copy(a.ptr() + ni * ca * plane, a.ptr() + (ni + 1) * ca * plane,
                  out.ptr() + ni * (ca + cb) * plane);
        std::copy(b.ptr() + ni * cb * plane, b.ptr() + (ni + 1) * cb * plane,
                  out.ptr() + (ni * (ca + cb) + ca) * plane);
    }
    return out;
}

template <typename T>
void split_channels(const TensorT<T>& d, i64 ca, TensorT<T>& da, TensorT<T>& db) {
    const i64 n = d.shape[0], c = d.shape[1], h = d.shape[2], w = d.shape[3];
    const i64 cb = c - ca;
    da = TensorT<T>({n, ca, h, w});
    db = TensorT<T>({n, cb, h, w});
    const i64 plane = h * w;
    for (i64 ni = 0; ni < n; ++ni) {
        std::copy(d.ptr() + ni * c * plane, d.ptr() + (ni * c + ca) * plane,
                  da.ptr() + ni * ca * plane);
        std::copy(d.ptr() + (ni * c + ca) * plane, d.ptr() + (ni + 1) * c * plane,
                  db.ptr() + ni * cb * plane);
    }
}

// NCHW item plane -> H x W x C memory grid (tokens in row-major flatten).
template <typename T>
TensorT<T> item_to_grid(const TensorT<T>& map, i64 item) {
    const i64 c = map.shape[1], h = map.shape[2], w = map.shape[3];
    TensorT<T> grid({h, w, c});
    for (i64 ch = 0; ch < c; ++ch) {
        const T* src = map.ptr() + ((item * c + ch) * h * w);
        for (i64 i = 0; i < h * w; ++i) {
            grid[i * c + ch] = src[i];
        }
    }
    return grid;
}

template <typename T>
void grid_grad_to_item(const TensorT<T>& grid_grad, TensorT<T>& dmap, i64 item) {
    const i64 c = dmap.shape[1], h = dmap.shape[2], w = dmap.shape[3];
    for (i64 ch = 0; ch < c; ++ch) {
        T* dst = dmap.ptr() + ((item * c + ch) * h * w);
        for (i64 i = 0; i < h * w; ++i) {
            dst[i] = grid_grad[i * c + ch];
        }
    }
}

template <typename T>
void accumulate(TensorT<T>& into, const TensorT<T>& from) {
    if (into.numel() == 0) {
        into = from;
        return;
    }
    for (i64 i = 0; i < into.numel(); ++i) {
        into[i] += from[i];
    }
}

}  // namespace

template <typename T>
struct ClassifierT<T>::ForwardCache {
    TensorT<T> input;
    TensorT<T> time_pre_bn, freq_pre_bn;
    typename BatchNorm2d<T>::Cache time_bn_cache, freq_bn_cache;
    TensorT<T> time_post_bn, freq_post_bn;
    TensorT<T> concat;

    struct TrunkStage {
        TensorT<T> conv_in;
        TensorT<T> pre_bn;
        typename BatchNorm2d<T>::Cache bn_cache;
        TensorT<T> post_bn;
        TensorT<T> post_relu;
        bool pooled = false;
        typename MaxPool2d<T>::Cache pool_cache;
    };
    std::vector<TrunkStage> trunk;

    TensorT<T> final_map;  // N x 80 x H' x W'
    std::vector<AreaAttentionCache<T>> attn;
    std::vector<TensorT<T>> attended;  // per item, N_tok x C
    TensorT<T> pooled_feat;            // N x C
};

template <typename T>
ClassifierT<T>::ClassifierT(const ModelConfig& config)
    : config_(config),
      time_conv_(1, config.parallel_channels, config.time_kernel[0], config.time_kernel[1], 1, 1,
                 (config.time_kernel[0] - 1) / 2, (config.time_kernel[1] - 1) / 2),
      freq_conv_(1, config.parallel_channels, config.freq_kernel[0], config.freq_kernel[1], 1, 1,
                 (config.freq_kernel[0] - 1) / 2, (config.freq_kernel[1] - 1) / 2),
      time_bn_(config.parallel_channels),
      freq_bn_(config.parallel_channels),
      pool_(2, 2),
      fc_(config.trunk_channels.back(), config.num_classes) {
    config_.validate();
    i64 in_ch = 2 * config.parallel_channels;
    for (int out_ch : config.trunk_channels) {
        trunk_.emplace_back(in_ch, out_ch, config.trunk_kernel[0], config.trunk_kernel[1], 1, 1,
                            (config.trunk_kernel[0] - 1) / 2, (config.trunk_kernel[1] - 1) / 2);
        trunk_bn_.emplace_back(out_ch);
        in_ch = out_ch;
    }
    const i64 channels = config.trunk_channels.back();
    attn_weights_.wq = TensorT<T>({channels, channels});
    attn_weights_.wk = TensorT<T>({channels, channels});
    attn_weights_.wv = TensorT<T>({channels, channels});
    attn_weights_.wo = TensorT<T>({channels, channels});
}

template <typename T>
void ClassifierT<T>::init(Rng& rng) {
    time_conv_.init(rng);
    freq_conv_.init(rng);
    for (auto& conv : trunk_) {
        conv.init(rng);
    }
    attn_weights_.init(config_.trunk_channels.back(), rng);
    fc_.init(rng);
}

template <typename T>
TensorT<T> ClassifierT<T>::forward_impl(const TensorT<T>& batch, Mode mode, Rng* rng,
                                        ForwardCache* cache) {
    if (batch.rank() != 4 || batch.shape[1] != 1) {
        throw DimensionError("model: batch must be [N x 1 x M x T]");
    }
    const i64 n = batch.shape[0];

    const TensorT<T> time_pre = time_conv_.forward(batch);
    const TensorT<T> freq_pre = freq_conv_.forward(batch);
    typename BatchNorm2d<T>::Cache time_bn_cache, freq_bn_cache;
    const TensorT<T> time_post =
        time_bn_.forward(time_pre, mode, cache ? &time_bn_cache : nullptr);
    const TensorT<T> freq_post =
        freq_bn_.forward(freq_pre, mode, cache ? &freq_bn_cache : nullptr);
    TensorT<T> x = concat_channels(relu(time_post), relu(freq_post));

    if (cache) {
        cache->input = batch;
        cache->time_pre_bn = time_pre;
        cache->freq_pre_bn = freq_pre;
        cache->time_bn_cache = std::move(time_bn_cache);
        cache->freq_bn_cache = std::move(freq_bn_cache);
        cache->time_post_bn = time_post;
        cache->freq_post_bn = freq_post;
        cache->concat = x;
        cache->trunk.resize(trunk_.size());
    }

    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        typename ForwardCache::TrunkStage* stage = cache ? &cache->trunk[i] : nullptr;
        if (stage) {
            stage->conv_in = x;
        }
        TensorT<T> pre_bn = trunk_[i].forward(x);
        TensorT<T> post_bn =
            trunk_bn_[i].forward(pre_bn, mode, stage ? &stage->bn_cache : nullptr);
        TensorT<T> post = relu(post_bn);
        if (stage) {
            stage->pre_bn = std::move(pre_bn);
            stage->post_bn = std::move(post_bn);
            stage->post_relu = post;
        }
        const bool pooled = std::find(config_.pool_after.begin(), config_.pool_after.end(),
                                      static_cast<int>(i) + 1) != config_.pool_after.end();
        if (pooled) {
            typename MaxPool2d<T>::Cache pool_cache;
            x = pool_.forward(post, stage ? &pool_cache : nullptr);
            if (stage) {
                stage->pooled = true;
                stage->pool_cache = std::move(pool_cache);
            }
        } else {
            x = std::move(post);
        }
    }

    const i64 c = x.shape[1], gh = x.shape[2], gw = x.shape[3];
    const i64 n_tok = gh * gw;
    if (cache) {
        cache->final_map = x;
        cache->attn.resize(static_cast<std::size_t>(n));
        cache->attended.resize(static_cast<std::size_t>(n));
    }

    TensorT<T> pooled_feat({n, c});
    const std::uint64_t item_base = rng ? rng->next_u64() : 0;
    for (i64 item = 0; item < n; ++item) {
        TensorT<T> grid = item_to_grid(x, item);
        TensorT<T> attended;
        if (config_.attention_enabled) {
            TensorT<T> query({n_tok, c}, grid.data);
            Rng item_rng(derive_seed(item_base, static_cast<std::uint64_t>(item)));
            auto out = area_attention_forward(query, grid, attn_weights_, config_.attention,
                                              mode, &item_rng,
                                              cache ? &cache->attn[static_cast<std::size_t>(item)]
                                                    : nullptr);
            attended = std::move(out.output);
        } else {
            attended = TensorT<T>({n_tok, c}, grid.data);
        }
        const T inv = T(1) / static_cast<T>(n_tok);
        for (i64 ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (i64 tok = 0; tok < n_tok; ++tok) {
                acc += attended.at2(tok, ch);
            }
            pooled_feat.at2(item, ch) = acc * inv;
        }
        if (cache) {
            cache->attended[static_cast<std::size_t>(item)] = std::move(attended);
        }
    }
    if (cache) {
        cache->pooled_feat = pooled_feat;
    }
    return fc_.forward(pooled_feat);
}

template <typename T>
TensorT<T> ClassifierT<T>::forward(const TensorT<T>& batch, Mode mode, Rng* rng) {
    return forward_impl(batch, mode, rng, nullptr);
}

template <typename T>
T ClassifierT<T>::backward(const TensorT<T>& batch, const std::vector<int>& labels, Rng* rng,
                           NamedTensors<T>& grads, TensorT<T>* logits_out) {
    ForwardCache cache;
    TensorT<T> logits = forward_impl(batch, Mode::Train, rng, &cache);

    TensorT<T> dlogits;
    const T loss = cross_entropy(logits, labels, &dlogits);
    if (logits_out) {
        *logits_out = std::move(logits);
    }

    grads.clear();
    const auto add_grads = [&grads](const std::string& prefix, NamedTensors<T>&& bundle) {
        for (auto& [name, g] : bundle) {
            grads.emplace(prefix + "." + name, std::move(g));
        }
    };

    GradBundleT<T> fc_grads = fc_.backward(cache.pooled_feat, dlogits);
    add_grads("fc", std::move(fc_grads.param_grads));

    const i64 n = batch.shape[0];
    const i64 c = cache.final_map.shape[1];
    const i64 gh = cache.final_map.shape[2], gw = cache.final_map.shape[3];
    const i64 n_tok = gh * gw;

    TensorT<T> dmap({n, c, gh, gw});
    TensorT<T> dwq, dwk, dwv, dwo;
    for (i64 item = 0; item < n; ++item) {
        // Token-mean backward: every token row gets dfeat / n_tok.
        TensorT<T> dattended({n_tok, c});
        const T inv = T(1) / static_cast<T>(n_tok);
        for (i64 tok = 0; tok < n_tok; ++tok) {
            for (i64 ch = 0; ch < c; ++ch) {
                dattended.at2(tok, ch) = fc_grads.input_grad.at2(item, ch) * inv;
            }
        }
        if (config_.attention_enabled) {
            auto attn_grads = area_attention_backward(
                cache.attn[static_cast<std::size_t>(item)], attn_weights_, dattended);
            // Queries are the grid items themselves, so both gradient paths
            // land on the same map.
            for (i64 i = 0; i < attn_grads.memory_grad.numel(); ++i) {
                attn_grads.memory_grad[i] += attn_grads.query_grad[i];
            }
            grid_grad_to_item(attn_grads.memory_grad, dmap, item);
            accumulate(dwq, attn_grads.wq_grad);
            accumulate(dwk, attn_grads.wk_grad);
            accumulate(dwv, attn_grads.wv_grad);
            accumulate(dwo, attn_grads.wo_grad);
        } else {
            grid_grad_to_item(dattended, dmap, item);
        }
    }
    if (config_.attention_enabled) {
        grads.emplace("attn.wq", std::move(dwq));
        grads.emplace("attn.wk", std::move(dwk));
        grads.emplace("attn.wv", std::move(dwv));
        grads.emplace("attn.wo", std::move(dwo));
    }

    TensorT<T> d = std::move(dmap);
    for (std::size_t i = trunk_.size(); i-- > 0;) {
        auto& stage = cache.trunk[i];
        if (stage.pooled) {
            d = pool_.backward(stage.post_relu, stage.pool_cache, d);
        }
        d = relu_backward(stage.post_bn, d);
        GradBundleT<T> bn_grads = trunk_bn_[i].backward(stage.pre_bn, stage.bn_cache, d);
        add_grads("trunk" + std::to_string(i + 1) + ".bn", std::move(bn_grads.param_grads));
        GradBundleT<T> conv_grads = trunk_[i].backward(stage.conv_in, bn_grads.input_grad);
        add_grads("trunk" + std::to_string(i + 1) + ".conv", std::move(conv_grads.param_grads));
        d = std::move(conv_grads.input_grad);
    }

    TensorT<T> dtime, dfreq;
    split_channels(d, config_.parallel_channels, dtime, dfreq);
    dtime = relu_backward(cache.time_post_bn, dtime);
    dfreq = relu_backward(cache.freq_post_bn, dfreq);
    GradBundleT<T> time_bn_grads = time_bn_.backward(cache.time_pre_bn, cache.time_bn_cache, dtime);
    GradBundleT<T> freq_bn_grads = freq_bn_.backward(cache.freq_pre_bn, cache.freq_bn_cache, dfreq);
    add_grads("time_bn", std::move(time_bn_grads.param_grads));
    add_grads("freq_bn", std::move(freq_bn_grads.param_grads));
    GradBundleT<T> time_conv_grads = time_conv_.backward(batch, time_bn_grads.input_grad);
    GradBundleT<T> freq_conv_grads = freq_conv_.backward(batch, freq_bn_grads.input_grad);
    add_grads("time_conv", std::move(time_conv_grads.param_grads));
    add_grads("freq_conv", std::move(freq_conv_grads.param_grads));
    return loss;
}

template <typename T>
std::vector<ParamRef<T>> ClassifierT<T>::named_parameters() {
    std::vector<ParamRef<T>> params;
    const auto add_state = [&params](const std::string& prefix, LayerStateT<T>& state) {
        for (auto& [name, tensor] : state.parameters) {
            params.push_back({prefix + "." + name, &tensor});
        }
    };
    add_state("time_conv", time_conv_.state);
    add_state("time_bn", time_bn_.state);
    add_state("freq_conv", freq_conv_.state);
    add_state("freq_bn", freq_bn_.state);
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        add_state("trunk" + std::to_string(i + 1) + ".conv", trunk_[i].state);
        add_state("trunk" + std::to_string(i + 1) + ".bn", trunk_bn_[i].state);
    }
    if (config_.attention_enabled) {
        params.push_back({"attn.wq", &attn_weights_.wq});
        params.push_back({"attn.wk", &attn_weights_.wk});
        params.push_back({"attn.wv", &attn_weights_.wv});
        params.push_back({"attn.wo", &attn_weights_.wo});
    }
    add_state("fc", fc_.state);
    return params;
}

template <typename T>
NamedTensors<T> ClassifierT<T>::named_tensors() const {
    NamedTensors<T> out;
    const auto add_state = [&out](const std::string& prefix, const LayerStateT<T>& state) {
        for (const auto& [name, tensor] : state.parameters) {
            out.emplace(prefix + "." + name, tensor);
        }
        for (const auto& [name, tensor] : state.buffers) {
            out.emplace(prefix + "." + name, tensor);
        }
    };
    add_state("time_conv", time_conv_.state);
    add_state("time_bn", time_bn_.state);
    add_state("freq_conv", freq_conv_.state);
    add_state("freq_bn", freq_bn_.state);
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        add_state("trunk" + std::to_string(i + 1) + ".conv", trunk_[i].state);
        add_state("trunk" + std::to_string(i + 1) + ".bn", trunk_bn_[i].state);
    }
    out.emplace("attn.wq", attn_weights_.wq);
    out.emplace("attn.wk", attn_weights_.wk);
    out.emplace("attn.wv", attn_weights_.wv);
    out.emplace("attn.wo", attn_weights_.wo);
    add_state("fc", fc_.state);
    return out;
}

template <typename T>
void ClassifierT<T>::load_named_tensors(const NamedTensors<T>& tensors) {
    NamedTensors<T> current = named_tensors();
    for (const auto& [name, tensor] : tensors) {
        if (!current.count(name)) {
            throw DataError("checkpoint tensor does not exist in the model: " + name);
        }
    }
    const auto assign = [&tensors](const std::string& name, TensorT<T>& dst) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw DataError("checkpoint is missing tensor: " + name);
        }
        if (it->second.shape != dst.shape) {
            throw DataError("checkpoint tensor shape mismatch: " + name);
        }
        dst = it->second;
    };
    const auto load_state = [&assign](const std::string& prefix, LayerStateT<T>& state) {
        for (auto& [name, tensor] : state.parameters) {
            assign(prefix + "." + name, tensor);
        }
        for (auto& [name, tensor] : state.buffers) {
            assign(prefix + "." + name, tensor);
        }
    };
    load_state("time_conv", time_conv_.state);
    load_state("time_bn", time_bn_.state);
    load_state("freq_conv", freq_conv_.state);
    load_state("freq_bn", freq_bn_.state);
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        load_state("trunk" + std::to_string(i + 1) + ".conv", trunk_[i].state);
        load_state("trunk" + std::to_string(i + 1) + ".bn", trunk_bn_[i].state);
    }
    assign("attn.wq", attn_weights_.wq);
    assign("attn.wk", attn_weights_.wk);
    assign("attn.wv", attn_weights_.wv);
    assign("attn.wo", attn_weights_.wo);
    load_state("fc", fc_.state);
}

template <typename T>
typename ClassifierT<T>::Introspection ClassifierT<T>::introspect(const TensorT<T>& single,
                                                                  Rng* rng) {
    if (single.shape[0] != 1) {
        throw DimensionError("introspect expects a single-item batch");
    }
    ForwardCache cache;
    forward_impl(single, Mode::Eval, rng, &cache);
    Introspection out;
    out.attended = cache.attended[0];
    out.tokens = TensorT<T>({cache.attended[0].shape[0], cache.attended[0].shape[1]},
                            item_to_grid(cache.final_map, 0).data);
    if (config_.attention_enabled) {
        out.attn = cache.attn[0].attn;
    }
    return out;
}

template class ClassifierT<float>;
template class ClassifierT<double>;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'T', 'C', 'K'};

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
    nlohmann::json j;
    j["model"] = to_json(meta.model);
    j["features"] = to_json(meta.features);
    j["window_seconds"] = meta.window_seconds;
    j["train_overlap_seconds"] = meta.train_overlap_seconds;
    j["test_overlap_seconds"] = meta.test_overlap_seconds;
    j["step"] = meta.step;
    j["rng_state"] = meta.rng_state;
    j["best"] = {{"wa", meta.best.wa},
                 {"ua", meta.best.ua},
                 {"acc", meta.best.acc},
                 {"epoch", meta.best.epoch}};
    j["normalize_features"] = meta.normalize_features;
    j["feat_mean"] = meta.feat_mean;
    j["feat_std"] = meta.feat_std;
    return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta meta;
    meta.model = model_config_from_json(j.at("model"));
    meta.features = feature_params_from_json(j.at("features"));
    meta.window_seconds = j.at("window_seconds").get<double>();
    meta.train_overlap_seconds = j.at("train_overlap_seconds").get<double>();
    meta.test_overlap_seconds = j.at("test_overlap_seconds").get<double>();
    meta.step = j.at("step").get<i64>();
    meta.rng_state = j.at("rng_state").get<std::uint64_t>();
    meta.best.wa = j.at("best").at("wa").get<double>();
    meta.best.ua = j.at("best").at("ua").get<double>();
    meta.best.acc = j.at("best").at("acc").get<double>();
    meta.best.epoch = j.at("best").at("epoch").get<int>();
    meta.normalize_features = j.at("normalize_features").get<bool>();
    meta.feat_mean = j.at("feat_mean").get<double>();
    meta.feat_std = j.at("feat_std").get<double>();
    return meta;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Classifier& model,
                     const CheckpointMeta& meta) {
    const NamedTensors<float> tensors = model.named_tensors();
    nlohmann::json header = meta_to_json(meta);
    std::vector<std::string> names;
    names.reserve(tensors.size());
    for (const auto& [name, tensor] : tensors) {
        names.push_back(name);
    }
    header["tensors"] = names;
    const std::string encoded = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open checkpoint for writing: " + path.string());
    }
    out.write(kCheckpointMagic, 4);
    const std::uint32_t len = static_cast<std::uint32_t>(encoded.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(encoded.data(), static_cast<std::streamsize>(encoded.size()));
    for (const auto& [name, tensor] : tensors) {
        const std::uint8_t dt = 0;
        const std::uint8_t rank = static_cast<std::uint8_t>(tensor.rank());
        out.write("ATNT", 4);
        out.write(reinterpret_cast<const char*>(&dt), 1);
        out.write(reinterpret_cast<const char*>(&rank), 1);
        for (i64 e : tensor.shape) {
            const std::uint32_t e32 = static_cast<std::uint32_t>(e);
            out.write(reinterpret_cast<const char*>(&e32), 4);
        }
        out.write(reinterpret_cast<const char*>(tensor.data.data()),
                  static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    }
    if (!out) {
        throw DataError("short checkpoint write: " + path.string());
    }
}

std::pair<Classifier, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint: " + path.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw DataError("bad checkpoint magic: " + path.string());
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string encoded(len, '\0');
    in.read(encoded.data(), len);
    if (!in) {
        throw DataError("truncated checkpoint header: " + path.string());
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(encoded);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header: " + std::string(e.what()));
    }
    CheckpointMeta meta = meta_from_json(header);

    NamedTensors<float> tensors;
    for (const auto& name : header.at("tensors").get<std::vector<std::string>>()) {
        char tmagic[4];
        in.read(tmagic, 4);
        std::uint8_t dt = 0, rank = 0;
        in.read(reinterpret_cast<char*>(&dt), 1);
        in.read(reinterpret_cast<char*>(&rank), 1);
        if (!in || std::memcmp(tmagic, "ATNT", 4) != 0 || dt != 0) {
            throw DataError("bad tensor block in checkpoint: " + name);
        }
        std::vector<i64> shape(rank);
        for (int i = 0; i < rank; ++i) {
            std::uint32_t e32 = 0;
            in.read(reinterpret_cast<char*>(&e32), 4);
            shape[static_cast<std::size_t>(i)] = static_cast<i64>(e32);
        }
        TensorT<float> t(std::move(shape));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) {
            throw DataError("truncated tensor block in checkpoint: " + name);
        }
        tensors.emplace(name, std::move(t));
    }

    Classifier model(meta.model);
    model.load_named_tensors(tensors);
    return {std::move(model), std::move(meta)};
}

TensorT<float> segments_to_batch(const std::vector<Segment>& segments, double feat_mean,
                                 double feat_std, bool normalize) {
    if (segments.empty()) {
        throw DataError("cannot build a batch from zero segments");
    }
    const i64 t = segments.front().features.shape[0];
    const i64 m = segments.front().features.shape[1];
    const i64 n = static_cast<i64>(segments.size());
    TensorT<float> batch({n, 1, m, t});
    const float mu = static_cast<float>(feat_mean);
    const float inv_std = static_cast<float>(1.0 / (feat_std > 0 ? feat_std : 1.0));
    for (i64 i = 0; i < n; ++i) {
        const auto& feat = segments[static_cast<std::size_t>(i)].features;
        if (feat.shape[0] != t || feat.shape[1] != m) {
            throw DimensionError("segments in one batch must share a shape");
        }
        for (i64 mi = 0; mi < m; ++mi) {
            for (i64 ti = 0; ti < t; ++ti) {
                float v = feat.at2(ti, mi);
                if (normalize) {
                    v = (v - mu) * inv_std;
                }
                batch.at4(i, 0, mi, ti) = v;
            }
        }
    }
    return batch;
}

int argmax_class(const std::vector<double>& probs) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

std::vector<double> predict_utterance(Classifier& model, const std::vector<Segment>& segments,
                                      const CheckpointMeta& meta) {
    if (segments.empty()) {
        throw DataError("predict_utterance: no segments");
    }
    for (const auto& seg : segments) {
        if (seg.utterance_id != segments.front().utterance_id) {
            throw DataError("predict_utterance: segments from different utterances");
        }
    }
    const TensorT<float> batch =
        segments_to_batch(segments, meta.feat_mean, meta.feat_std, meta.normalize_features);
    const TensorT<float> logits = model.forward(batch, Mode::Eval, nullptr);
    const i64 n = logits.shape[0], d = logits.shape[1];
    std::vector<double> avg(static_cast<std::size_t>(d), 0.0);
    if (meta.model.logit_averaging) {
        for (i64 i = 0; i < n; ++i) {
            for (i64 j = 0; j < d; ++j) {
                avg[static_cast<std::size_t>(j)] += logits.at2(i, j) / static_cast<double>(n);
            }
        }
        // softmax over the averaged logits
        const double mx = *std::max_element(avg.begin(), avg.end());
        double denom = 0.0;
        for (auto& v : avg) {
            v = std::exp(v - mx);
            denom += v;
        }
        for (auto& v : avg) {
            v /= denom;
        }
        return avg;
    }
    const TensorT<float> probs = softmax(logits);
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < d; ++j) {
            avg[static_cast<std::size_t>(j)] += probs.at2(i, j) / static_cast<double>(n);
        }
    }
    return avg;
}

}  // namespace ser
