// Serial reference vs OpenMP kernels on training-shaped workloads.
#include <benchmark/benchmark.h>

#include "ser/area_attention.hpp"
#include "ser/kernels.hpp"
#include "ser/reference.hpp"
#include "ser/rng.hpp"

using namespace ser;

namespace {

TensorF random_tensor(std::vector<i64> shape, std::uint64_t seed) {
    Rng rng(seed);
    TensorF t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<float>(rng.normal());
    }
    return t;
}

void BM_matmul_serial(benchmark::State& state) {
    const i64 n = state.range(0);
    const TensorF a = random_tensor({n, n}, 1);
    const TensorF b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ref::matmul_naive(a, b).data.data());
    }
}

void BM_matmul_omp(benchmark::State& state) {
    const i64 n = state.range(0);
    const TensorF a = random_tensor({n, n}, 1);
    const TensorF b = random_tensor({n, n}, 2);
    TensorF c({n, n});
    for (auto _ : state) {
        kernels::matmul_nn(a.ptr(), b.ptr(), c.ptr(), n, n, n);
        benchmark::DoNotOptimize(c.data.data());
    }
}

void BM_conv2d_serial(benchmark::State& state) {
    const i64 hw = state.range(0);
    const TensorF x = random_tensor({8, 16, hw, hw}, 3);
    const TensorF w = random_tensor({24, 16, 3, 3}, 4);
    const TensorF bias = random_tensor({24}, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ref::conv2d_naive(x, w, bias, 1, 1, 1, 1).data.data());
    }
}

void BM_conv2d_omp(benchmark::State& state) {
    const i64 hw = state.range(0);
    const TensorF x = random_tensor({8, 16, hw, hw}, 3);
    const TensorF w = random_tensor({24, 16, 3, 3}, 4);
    const TensorF bias = random_tensor({24}, 5);
    const auto g = kernels::conv2d_geometry(8, 16, hw, hw, 24, 3, 3, 1, 1, 1, 1);
    TensorF y({8, 24, g.h_out, g.w_out});
    for (auto _ : state) {
        kernels::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), y.ptr(), g);
        benchmark::DoNotOptimize(y.data.data());
    }
}

// Per-area mean/sum/std by direct slicing per rectangle.
void BM_area_stats_serial(benchmark::State& state) {
    const i64 hw = state.range(0);
    const i64 max_size = state.range(1);
    const TensorF mem = random_tensor({hw, hw, 80}, 6);
    const auto areas = enumerate_areas(hw, hw, max_size, max_size);
    TensorF out({static_cast<i64>(areas.size()), 80});
    for (auto _ : state) {
        for (std::size_t a = 0; a < areas.size(); ++a) {
            const auto& r = areas[a];
            for (i64 c = 0; c < 80; ++c) {
                out.at2(static_cast<i64>(a), c) =
                    ref::rect_std_naive(mem, r.top, r.left, r.height, r.width, c);
            }
        }
        benchmark::DoNotOptimize(out.data.data());
    }
}

void BM_area_stats_tables_omp(benchmark::State& state) {
    const i64 hw = state.range(0);
    const i64 max_size = state.range(1);
    const TensorF mem = random_tensor({hw, hw, 80}, 6);
    const i64 a = kernels::area_count(hw, hw, max_size, max_size);
    TensorF sum({a, 80}), mean({a, 80}), sd({a, 80});
    for (auto _ : state) {
        const auto tables = build_integral_tables(mem);
        kernels::area_stats_pool(tables.sum.ptr(), tables.sumsq.ptr(), hw, hw, 80, max_size,
                                 max_size, sum.ptr(), mean.ptr(), sd.ptr());
        benchmark::DoNotOptimize(sd.data.data());
    }
}

void BM_area_max_serial(benchmark::State& state) {
    const i64 hw = state.range(0);
    const i64 max_size = state.range(1);
    const TensorF mem = random_tensor({hw, hw, 80}, 7);
    const auto areas = enumerate_areas(hw, hw, max_size, max_size);
    TensorF out({static_cast<i64>(areas.size()), 80});
    for (auto _ : state) {
        for (std::size_t a = 0; a < areas.size(); ++a) {
            const auto& r = areas[a];
            for (i64 c = 0; c < 80; ++c) {
                out.at2(static_cast<i64>(a), c) =
                    ref::rect_max_naive(mem, r.top, r.left, r.height, r.width, c);
            }
        }
        benchmark::DoNotOptimize(out.data.data());
    }
}

void BM_area_max_sliding_omp(benchmark::State& state) {
    const i64 hw = state.range(0);
    const i64 max_size = state.range(1);
    const TensorF mem = random_tensor({hw, hw, 80}, 7);
    const i64 a = kernels::area_count(hw, hw, max_size, max_size);
    TensorF out({a, 80});
    std::vector<std::int32_t> arow(static_cast<std::size_t>(a * 80)),
        acol(static_cast<std::size_t>(a * 80));
    for (auto _ : state) {
        kernels::area_max_pool(mem.ptr(), hw, hw, 80, max_size, max_size, out.ptr(),
                               arow.data(), acol.data());
        benchmark::DoNotOptimize(out.data.data());
    }
}

void BM_area_attention_forward(benchmark::State& state) {
    const i64 hw = state.range(0);
    const TensorF mem = random_tensor({hw, hw, 80}, 8);
    const TensorF query({hw * hw, 80}, mem.data);
    AttentionWeights<float> weights;
    Rng rng(9);
    weights.init(80, rng);
    AreaConfig config;
    config.max_height = 3;
    config.max_width = 3;
    config.num_heads = 4;
    for (auto _ : state) {
        Rng r(1);
        benchmark::DoNotOptimize(
            area_attention_forward(query, mem, weights, config, Mode::Eval, &r)
                .output.data.data());
    }
}

}  // namespace

BENCHMARK(BM_matmul_serial)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_matmul_omp)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_serial)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_omp)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_area_stats_serial)->Args({12, 3})->Args({20, 10})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_area_stats_tables_omp)->Args({12, 3})->Args({20, 10})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_area_max_serial)->Args({12, 3})->Args({20, 10})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_area_max_sliding_omp)->Args({12, 3})->Args({20, 10})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_area_attention_forward)->Arg(6)->Arg(10)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
