#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "ser/area_attention.hpp"
#include "ser/reference.hpp"
#include "ser/rng.hpp"

using namespace ser;

namespace {

TensorF random_tensor(std::vector<i64> shape, Rng& rng, double scale = 1.0) {
    TensorF t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<float>(rng.normal() * scale);
    }
    return t;
}

double max_abs_diff(const TensorF& a, const TensorF& b) {
    REQUIRE(a.shape == b.shape);
    double worst = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return worst;
}

// Area attention by brute force: materialize every area by slicing, pool it
// naively, then run the standard attention oracle over the pooled rows.
TensorF area_attention_by_slicing(const TensorF& query, const TensorF& memory,
                                  const AttentionWeights<float>& weights,
                                  const AreaConfig& config) {
    const i64 c = memory.shape[2];
    const auto areas =
        enumerate_areas(memory.shape[0], memory.shape[1], config.max_height, config.max_width);
    const i64 a = static_cast<i64>(areas.size());
    TensorF keys({a, c}), values({a, c});
    for (i64 ai = 0; ai < a; ++ai) {
        const auto& area = areas[static_cast<std::size_t>(ai)];
        for (i64 ch = 0; ch < c; ++ch) {
            switch (config.key_mode) {
                case KeyMode::Max:
                    keys.at2(ai, ch) = ref::rect_max_naive(memory, area.top, area.left,
                                                           area.height, area.width, ch);
                    break;
                case KeyMode::Mean:
                case KeyMode::Sample:  // eval-mode Sample degrades to Mean
                    keys.at2(ai, ch) = ref::rect_mean_naive(memory, area.top, area.left,
                                                            area.height, area.width, ch);
                    break;
            }
            switch (config.value_mode) {
                case ValueMode::Max:
                    values.at2(ai, ch) = ref::rect_max_naive(memory, area.top, area.left,
                                                             area.height, area.width, ch);
                    break;
                case ValueMode::Mean:
                    values.at2(ai, ch) = ref::rect_mean_naive(memory, area.top, area.left,
                                                              area.height, area.width, ch);
                    break;
                case ValueMode::Sum:
                    values.at2(ai, ch) = ref::rect_sum_naive(memory, area.top, area.left,
                                                             area.height, area.width, ch);
                    break;
            }
        }
    }
    return ref::multihead_attention_naive(query, keys, values, weights.wq, weights.wk,
                                          weights.wv, weights.wo, config.num_heads);
}

}  // namespace

TEST_CASE("enumerate_areas: the 3x3 grid with max 2x2 yields 25 areas in 9/6/6/4 kinds") {
    const auto areas = enumerate_areas(3, 3, 2, 2);
    CHECK(areas.size() == 25);
    int k11 = 0, k12 = 0, k21 = 0, k22 = 0;
    for (const auto& a : areas) {
        if (a.height == 1 && a.width == 1) {
            ++k11;
        } else if (a.height == 1 && a.width == 2) {
            ++k12;
        } else if (a.height == 2 && a.width == 1) {
            ++k21;
        } else {
            ++k22;
        }
    }
    CHECK(k11 == 9);
    CHECK(k12 == 6);
    CHECK(k21 == 6);
    CHECK(k22 == 4);
}

TEST_CASE("enumerate_areas: trivial and clipped cases") {
    CHECK(enumerate_areas(1, 1, 1, 1).size() == 1);
    CHECK(enumerate_areas(2, 3, 1, 2).size() == 10);
    // bounds larger than the grid are clipped
    CHECK(enumerate_areas(2, 2, 9, 9).size() == 9);
    CHECK_THROWS_AS(enumerate_areas(0, 3, 1, 1), DimensionError);
}

TEST_CASE("enumerate_areas count matches the closed form exhaustively") {
    for (i64 h = 1; h <= 8; ++h) {
        for (i64 w = 1; w <= 8; ++w) {
            for (i64 mh = 1; mh <= 4; ++mh) {
                for (i64 mw = 1; mw <= 4; ++mw) {
                    i64 expected = 0;
                    for (i64 hh = 1; hh <= std::min(mh, h); ++hh) {
                        for (i64 ww = 1; ww <= std::min(mw, w); ++ww) {
                            expected += (h - hh + 1) * (w - ww + 1);
                        }
                    }
                    CHECK(static_cast<i64>(enumerate_areas(h, w, mh, mw).size()) == expected);
                    CHECK(kernels::area_count(h, w, mh, mw) == expected);
                }
            }
        }
    }
}

TEST_CASE("enumerate order is height, width, top, left") {
    const auto areas = enumerate_areas(2, 2, 2, 2);
    CHECK(areas[0] == AreaIndex{0, 0, 1, 1});
    CHECK(areas[1] == AreaIndex{0, 1, 1, 1});
    CHECK(areas[2] == AreaIndex{1, 0, 1, 1});
    CHECK(areas[4] == AreaIndex{0, 0, 1, 2});
    CHECK(areas.back() == AreaIndex{0, 0, 2, 2});
}

TEST_CASE("pool_area_stats hand cases") {
    const TensorF mem({1, 2, 1}, {1.0f, 3.0f});
    const auto tables = build_integral_tables(mem);
    const auto stats = pool_area_stats<float>(tables, AreaIndex{0, 0, 1, 2});
    CHECK(stats.sum[0] == doctest::Approx(4.0f));
    CHECK(stats.mean[0] == doctest::Approx(2.0f));
    CHECK(stats.stddev[0] == doctest::Approx(1.0f));

    const auto single = pool_area_stats<float>(tables, AreaIndex{0, 0, 1, 1});
    CHECK(single.sum[0] == doctest::Approx(1.0f));
    CHECK(single.mean[0] == doctest::Approx(1.0f));
    CHECK(single.stddev[0] == 0.0f);

    const TensorF constant = TensorF::full({2, 2, 1}, 5.0f);
    const auto ctables = build_integral_tables(constant);
    const auto cstats = pool_area_stats<float>(ctables, AreaIndex{0, 0, 2, 2});
    CHECK(cstats.sum[0] == doctest::Approx(20.0f));
    CHECK(cstats.mean[0] == doctest::Approx(5.0f));
    CHECK(cstats.stddev[0] == doctest::Approx(0.0f).epsilon(1e-5));
}

TEST_CASE("pooled stats equal naive slicing on random grids") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const i64 h = 1 + rng.uniform_int(8), w = 1 + rng.uniform_int(8);
        const i64 c = 1 + rng.uniform_int(4);
        const TensorF mem = random_tensor({h, w, c}, rng);
        const auto tables = build_integral_tables(mem);
        const auto areas = enumerate_areas(h, w, 4, 4);
        for (const auto& area : areas) {
            const auto stats = pool_area_stats<float>(tables, area);
            for (i64 ch = 0; ch < c; ++ch) {
                const float s = ref::rect_sum_naive(mem, area.top, area.left, area.height,
                                                    area.width, ch);
                const float m = ref::rect_mean_naive(mem, area.top, area.left, area.height,
                                                     area.width, ch);
                const float sd = ref::rect_std_naive(mem, area.top, area.left, area.height,
                                                     area.width, ch);
                CHECK(stats.sum[static_cast<std::size_t>(ch)] ==
                      doctest::Approx(s).epsilon(1e-5));
                CHECK(stats.mean[static_cast<std::size_t>(ch)] ==
                      doctest::Approx(m).epsilon(1e-5));
                CHECK(std::abs(stats.stddev[static_cast<std::size_t>(ch)] - sd) <=
                      1e-5f * std::max(1.0f, std::abs(sd)));
            }
        }
    }
}

TEST_CASE("assemble_pooled_memory: Sample without rng is a config error") {
    AreaConfig config;
    config.key_mode = KeyMode::Sample;
    const TensorF mem({2, 2, 2});
    CHECK_THROWS_AS(assemble_pooled_memory(mem, config, Mode::Train, nullptr), ConfigError);
}

TEST_CASE("assemble_pooled_memory: eval-mode Sample equals Mean keys bitwise") {
    Rng rng(32);
    const TensorF mem = random_tensor({3, 4, 2}, rng);
    AreaConfig sample_cfg;
    sample_cfg.key_mode = KeyMode::Sample;
    AreaConfig mean_cfg;
    mean_cfg.key_mode = KeyMode::Mean;
    Rng r1(5), r2(5);
    const auto pooled_sample = assemble_pooled_memory(mem, sample_cfg, Mode::Eval, &r1);
    const auto pooled_mean = assemble_pooled_memory(mem, mean_cfg, Mode::Eval, &r2);
    CHECK(pooled_sample.keys.data == pooled_mean.keys.data);
    CHECK(pooled_sample.sigma.numel() == pooled_sample.keys.numel());
}

TEST_CASE("assemble_pooled_memory: sigma-zero areas give Sample == Mean even in Train") {
    const TensorF mem = TensorF::full({2, 3, 2}, 1.25f);  // all areas constant
    AreaConfig config;
    config.key_mode = KeyMode::Sample;
    Rng rng(33);
    const auto pooled = assemble_pooled_memory(mem, config, Mode::Train, &rng);
    for (i64 i = 0; i < pooled.keys.numel(); ++i) {
        CHECK(pooled.keys[i] == doctest::Approx(1.25f).epsilon(1e-6));
        CHECK(pooled.sigma[i] == doctest::Approx(0.0f).epsilon(1e-5));
    }
}

TEST_CASE("1x1 max area size: keys and values equal the original items in every mode") {
    Rng rng(34);
    const TensorF mem = random_tensor({3, 3, 2}, rng);
    for (KeyMode kmode : {KeyMode::Max, KeyMode::Mean, KeyMode::Sample}) {
        for (ValueMode vmode : {ValueMode::Max, ValueMode::Mean, ValueMode::Sum}) {
            AreaConfig config;
            config.max_height = 1;
            config.max_width = 1;
            config.key_mode = kmode;
            config.value_mode = vmode;
            Rng r(1);
            const auto pooled = assemble_pooled_memory(mem, config, Mode::Train, &r);
            REQUIRE(pooled.keys.numel() == mem.numel());
            for (i64 i = 0; i < mem.numel(); ++i) {
                CHECK(pooled.keys[i] == doctest::Approx(mem[i]).epsilon(1e-6));
                CHECK(pooled.values[i] == doctest::Approx(mem[i]).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("1x1 reduction matches the standard attention oracle for all modes") {
    Rng rng(35);
    const i64 h = 4, w = 4, c = 8;
    const TensorF memory = random_tensor({h, w, c}, rng);
    const TensorF query({h * w, c}, memory.data);
    AttentionWeights<float> weights;
    weights.init(c, rng);

    TensorF flat({h * w, c}, memory.data);
    for (int heads : {1, 2, 4}) {
        for (KeyMode kmode : {KeyMode::Max, KeyMode::Mean, KeyMode::Sample}) {
            for (ValueMode vmode : {ValueMode::Max, ValueMode::Mean, ValueMode::Sum}) {
                AreaConfig config;
                config.max_height = 1;
                config.max_width = 1;
                config.key_mode = kmode;
                config.value_mode = vmode;
                config.num_heads = heads;
                Rng r(2);
                const auto out =
                    area_attention_forward(query, memory, weights, config, Mode::Eval, &r);
                const TensorF oracle = ref::multihead_attention_naive(
                    query, flat, flat, weights.wq, weights.wk, weights.wv, weights.wo, heads);
                CHECK(max_abs_diff(out.output, oracle) < 1e-5);
            }
        }
    }
}

TEST_CASE("zero memory and query: uniform attention rows, zero output") {
    const i64 h = 2, w = 3, c = 4;
    const TensorF memory({h, w, c});
    const TensorF query({h * w, c});
    AttentionWeights<float> weights;
    Rng rng(36);
    weights.init(c, rng);
    AreaConfig config;
    config.max_height = 2;
    config.max_width = 2;
    config.num_heads = 2;
    Rng r(3);
    const auto out = area_attention_forward(query, memory, weights, config, Mode::Eval, &r);
    const i64 a = out.attn.shape[2];
    for (float v : out.output.data) {
        CHECK(v == doctest::Approx(0.0f));
    }
    for (float v : out.attn.data) {
        CHECK(v == doctest::Approx(1.0f / static_cast<float>(a)).epsilon(1e-6));
    }
}

TEST_CASE("forward equals the naive area-materialization oracle") {
    Rng rng(37);
    const i64 h = 4, w = 4, c = 8;
    const TensorF memory = random_tensor({h, w, c}, rng, 0.7);
    const TensorF query({h * w, c}, memory.data);
    AttentionWeights<float> weights;
    weights.init(c, rng);

    for (KeyMode kmode : {KeyMode::Max, KeyMode::Mean}) {
        for (ValueMode vmode : {ValueMode::Max, ValueMode::Mean, ValueMode::Sum}) {
            AreaConfig config;
            config.max_height = 2;
            config.max_width = 2;
            config.key_mode = kmode;
            config.value_mode = vmode;
            config.num_heads = 2;
            Rng r(4);
            const auto out =
                area_attention_forward(query, memory, weights, config, Mode::Eval, &r);
            const TensorF oracle = area_attention_by_slicing(query, memory, weights, config);
            CHECK(max_abs_diff(out.output, oracle) < 1e-5);
        }
    }
}

TEST_CASE("attention rows are probability distributions over areas") {
    Rng rng(38);
    const TensorF memory = random_tensor({3, 5, 8}, rng);
    const TensorF query = random_tensor({15, 8}, rng);
    AttentionWeights<float> weights;
    weights.init(8, rng);
    AreaConfig config;
    config.max_height = 3;
    config.max_width = 3;
    config.num_heads = 4;
    Rng r(5);
    const auto out = area_attention_forward(query, memory, weights, config, Mode::Eval, &r);
    const i64 heads = out.attn.shape[0], n = out.attn.shape[1], a = out.attn.shape[2];
    for (i64 hd = 0; hd < heads; ++hd) {
        for (i64 i = 0; i < n; ++i) {
            float total = 0.0f;
            for (i64 j = 0; j < a; ++j) {
                const float v = out.attn[(hd * n + i) * a + j];
                CHECK(v >= 0.0f);
                total += v;
            }
            CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
        }
    }
}

TEST_CASE("eval-mode forward is bitwise deterministic") {
    Rng rng(39);
    const TensorF memory = random_tensor({3, 4, 4}, rng);
    const TensorF query = random_tensor({12, 4}, rng);
    AttentionWeights<float> weights;
    weights.init(4, rng);
    AreaConfig config;
    config.key_mode = KeyMode::Sample;  // must still be deterministic in Eval
    config.num_heads = 2;
    Rng r1(10), r2(20);
    const auto a = area_attention_forward(query, memory, weights, config, Mode::Eval, &r1);
    const auto b = area_attention_forward(query, memory, weights, config, Mode::Eval, &r2);
    CHECK(a.output.data == b.output.data);
}

TEST_CASE("channel permutation equivariance (single head)") {
    Rng rng(40);
    const i64 h = 3, w = 3, c = 6;
    const TensorF memory = random_tensor({h, w, c}, rng);
    const TensorF query({h * w, c}, memory.data);
    AttentionWeights<float> weights;
    weights.init(c, rng);
    AreaConfig config;
    config.max_height = 2;
    config.max_width = 2;
    config.num_heads = 1;

    std::vector<i64> perm = {3, 0, 5, 1, 4, 2};
    TensorF memp({h, w, c});
    for (i64 i = 0; i < h * w; ++i) {
        for (i64 ch = 0; ch < c; ++ch) {
            memp[i * c + ch] = memory[i * c + perm[static_cast<std::size_t>(ch)]];
        }
    }
    const TensorF queryp({h * w, c}, memp.data);
    AttentionWeights<float> weightsp;
    const auto permute_both = [&](const TensorF& m) {
        TensorF out({c, c});
        for (i64 i = 0; i < c; ++i) {
            for (i64 j = 0; j < c; ++j) {
                out.at2(i, j) = m.at2(perm[static_cast<std::size_t>(i)],
                                      perm[static_cast<std::size_t>(j)]);
            }
        }
        return out;
    };
    weightsp.wq = permute_both(weights.wq);
    weightsp.wk = permute_both(weights.wk);
    weightsp.wv = permute_both(weights.wv);
    weightsp.wo = permute_both(weights.wo);

    Rng r1(1), r2(1);
    const auto base = area_attention_forward(query, memory, weights, config, Mode::Eval, &r1);
    const auto perm_out =
        area_attention_forward(queryp, memp, weightsp, config, Mode::Eval, &r2);
    for (i64 i = 0; i < h * w; ++i) {
        for (i64 ch = 0; ch < c; ++ch) {
            CHECK(perm_out.output.at2(i, ch) ==
                  doctest::Approx(base.output.at2(i, perm[static_cast<std::size_t>(ch)]))
                      .epsilon(2e-4));
        }
    }
}

TEST_CASE("backward: zero upstream gives zero gradients; stale cache rejected") {
    Rng rng(41);
    const TensorF memory = random_tensor({3, 3, 4}, rng);
    const TensorF query({9, 4}, memory.data);
    AttentionWeights<float> weights;
    weights.init(4, rng);
    AreaConfig config;
    config.num_heads = 2;
    AreaAttentionCache<float> cache;
    Rng r(6);
    area_attention_forward(query, memory, weights, config, Mode::Train, &r, &cache);
    const TensorF zero({9, 4});
    const auto grads = area_attention_backward(cache, weights, zero);
    for (float v : grads.memory_grad.data) {
        CHECK(v == 0.0f);
    }
    for (float v : grads.wq_grad.data) {
        CHECK(v == 0.0f);
    }

    AreaAttentionCache<float> stale;
    CHECK_THROWS_AS(area_attention_backward(stale, weights, zero), ConfigError);
}

TEST_CASE("max-mode routing touches exactly one cell per (area, channel)") {
    Rng rng(42);
    const i64 h = 3, w = 3, c = 2;
    const TensorF memory = random_tensor({h, w, c}, rng);
    AreaConfig config;
    config.max_height = 2;
    config.max_width = 2;
    config.key_mode = KeyMode::Max;
    config.value_mode = ValueMode::Max;
    Rng r(7);
    const auto pooled = assemble_pooled_memory(memory, config, Mode::Train, &r);
    const i64 a = static_cast<i64>(pooled.areas.size());

    for (i64 ai = 0; ai < a; ++ai) {
        for (i64 ch = 0; ch < c; ++ch) {
            TensorF dvalues({a, c});
            dvalues.at2(ai, ch) = 1.0f;
            TensorF dmem({h, w, c});
            route_value_grads(pooled, ValueMode::Max, dvalues, dmem);
            int nonzero = 0;
            for (float v : dmem.data) {
                if (v != 0.0f) {
                    ++nonzero;
                }
            }
            CHECK(nonzero == 1);
        }
    }
}
