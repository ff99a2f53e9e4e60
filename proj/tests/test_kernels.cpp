#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "ser/kernels.hpp"
#include "ser/reference.hpp"
#include "ser/rng.hpp"

using namespace ser;

namespace {

TensorF random_tensor(std::vector<i64> shape, Rng& rng) {
    TensorF t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<float>(rng.normal());
    }
    return t;
}

double max_rel_diff(const TensorF& a, const TensorF& b) {
    REQUIRE(a.shape == b.shape);
    double worst = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) {
        const double d = std::abs(static_cast<double>(a[i]) - b[i]);
        const double denom = std::max({1e-8, std::abs(static_cast<double>(a[i])),
                                       std::abs(static_cast<double>(b[i]))});
        worst = std::max(worst, d / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("matmul identity and forced arithmetic") {
    const TensorF eye({2, 2}, {1, 0, 0, 1});
    const TensorF b({2, 2}, {3, 4, 5, 6});
    TensorF out({2, 2});
    kernels::matmul_nn(eye.ptr(), b.ptr(), out.ptr(), 2, 2, 2);
    CHECK(out.data == b.data);

    const TensorF row({1, 2}, {1, 2});
    const TensorF col({2, 1}, {3, 4});
    TensorF prod({1, 1});
    kernels::matmul_nn(row.ptr(), col.ptr(), prod.ptr(), 1, 2, 1);
    CHECK(prod[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
    Rng rng(11);
    const TensorF a = random_tensor({5, 7}, rng);
    const TensorF b = random_tensor({7, 3}, rng);
    TensorF out({5, 3});
    kernels::matmul_nn(a.ptr(), b.ptr(), out.ptr(), 5, 7, 3);
    CHECK(max_rel_diff(out, ref::matmul_naive(a, b)) < 1e-6);
}

TEST_CASE("matmul transpose variants agree with explicit transposes") {
    Rng rng(12);
    const TensorF a = random_tensor({4, 6}, rng);
    const TensorF b = random_tensor({5, 6}, rng);  // b^T is 6 x 5
    TensorF nt({4, 5});
    kernels::matmul_nt(a.ptr(), b.ptr(), nt.ptr(), 4, 6, 5);
    TensorF bt({6, 5});
    for (i64 i = 0; i < 5; ++i) {
        for (i64 j = 0; j < 6; ++j) {
            bt.at2(j, i) = b.at2(i, j);
        }
    }
    CHECK(max_rel_diff(nt, ref::matmul_naive(a, bt)) < 1e-6);

    const TensorF c = random_tensor({6, 4}, rng);  // c^T is 4 x 6
    TensorF tn({4, 5});
    kernels::matmul_tn(c.ptr(), bt.ptr(), tn.ptr(), 4, 6, 5);
    TensorF ct({4, 6});
    for (i64 i = 0; i < 6; ++i) {
        for (i64 j = 0; j < 4; ++j) {
            ct.at2(j, i) = c.at2(i, j);
        }
    }
    CHECK(max_rel_diff(tn, ref::matmul_naive(ct, bt)) < 1e-6);
}

TEST_CASE("conv2d trivial cases") {
    // all-ones 3x3 input, 1x1 kernel of 2, bias 0 -> all twos
    const TensorF x = TensorF::full({1, 1, 3, 3}, 1.0f);
    const TensorF w({1, 1, 1, 1}, {2.0f});
    const TensorF bias({1}, {0.0f});
    auto g = kernels::conv2d_geometry(1, 1, 3, 3, 1, 1, 1, 1, 1, 0, 0);
    TensorF y({1, 1, 3, 3});
    kernels::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), y.ptr(), g);
    for (float v : y.data) {
        CHECK(v == doctest::Approx(2.0f));
    }

    // full-size kernel, no padding -> single dot product
    Rng rng(13);
    const TensorF x2 = random_tensor({1, 1, 3, 3}, rng);
    const TensorF w2 = random_tensor({1, 1, 3, 3}, rng);
    auto g2 = kernels::conv2d_geometry(1, 1, 3, 3, 1, 3, 3, 1, 1, 0, 0);
    TensorF y2({1, 1, 1, 1});
    kernels::conv2d_forward<float>(x2.ptr(), w2.ptr(), nullptr, y2.ptr(), g2);
    float dot = 0.0f;
    for (i64 i = 0; i < 9; ++i) {
        dot += x2[i] * w2[i];
    }
    CHECK(y2[0] == doctest::Approx(dot));
}

TEST_CASE("conv2d matches the direct six-loop oracle") {
    Rng rng(14);
    const TensorF x = random_tensor({2, 3, 8, 8}, rng);
    const TensorF w = random_tensor({5, 3, 3, 3}, rng);
    const TensorF bias = random_tensor({5}, rng);
    auto g = kernels::conv2d_geometry(2, 3, 8, 8, 5, 3, 3, 1, 1, 1, 1);
    TensorF y({2, 5, g.h_out, g.w_out});
    kernels::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), y.ptr(), g);
    CHECK(max_rel_diff(y, ref::conv2d_naive(x, w, bias, 1, 1, 1, 1)) < 1e-6);

    // strided, asymmetric padding
    auto gs = kernels::conv2d_geometry(2, 3, 8, 8, 5, 3, 3, 2, 1, 0, 2);
    TensorF ys({2, 5, gs.h_out, gs.w_out});
    kernels::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), ys.ptr(), gs);
    CHECK(max_rel_diff(ys, ref::conv2d_naive(x, w, bias, 2, 1, 0, 2)) < 1e-6);
}

TEST_CASE("conv2d geometry errors") {
    CHECK_THROWS_AS(kernels::conv2d_geometry(1, 1, 3, 3, 1, 5, 5, 1, 1, 0, 0), DimensionError);
    CHECK_THROWS_AS(kernels::conv2d_geometry(1, 1, 3, 3, 1, 3, 3, 0, 1, 0, 0), DimensionError);
}

TEST_CASE("integral tables: corner equals the total sum") {
    const TensorF mem({2, 2, 1}, {1, 2, 3, 4});
    TensorD sum({3, 3, 1}), sumsq({3, 3, 1});
    kernels::integral_tables(mem.ptr(), sum.ptr(), sumsq.ptr(), 2, 2, 1);
    CHECK(sum.at3(2, 2, 0) == doctest::Approx(10.0));
    CHECK(sumsq.at3(2, 2, 0) == doctest::Approx(30.0));
    CHECK(sum.at3(0, 2, 0) == 0.0);
    CHECK(sum.at3(2, 0, 0) == 0.0);

    TensorD zsum({3, 3, 1}), zsumsq({3, 3, 1});
    const TensorF zeros({2, 2, 1});
    kernels::integral_tables(zeros.ptr(), zsum.ptr(), zsumsq.ptr(), 2, 2, 1);
    for (double v : zsum.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("rectangle sums via 4-corner lookups equal naive summation") {
    Rng rng(15);
    const TensorF mem = random_tensor({6, 5, 3}, rng);
    TensorD sum({7, 6, 3}), sumsq({7, 6, 3});
    kernels::integral_tables(mem.ptr(), sum.ptr(), sumsq.ptr(), 6, 5, 3);
    for (i64 top = 0; top < 6; ++top) {
        for (i64 left = 0; left < 5; ++left) {
            for (i64 h = 1; top + h <= 6; ++h) {
                for (i64 w = 1; left + w <= 5; ++w) {
                    for (i64 c = 0; c < 3; ++c) {
                        const double via_table =
                            sum.at3(top + h, left + w, c) - sum.at3(top, left + w, c) -
                            sum.at3(top + h, left, c) + sum.at3(top, left, c);
                        const double naive = ref::rect_sum_naive(mem, top, left, h, w, c);
                        CHECK(std::abs(via_table - naive) <=
                              1e-5 * std::max(1.0, std::abs(naive)));
                    }
                }
            }
        }
    }
}

TEST_CASE("area max pooling equals the naive per-rectangle oracle exactly") {
    Rng rng(16);
    const TensorF mem = random_tensor({7, 7, 2}, rng);
    const i64 a = kernels::area_count(7, 7, 3, 3);
    TensorF out({a, 2});
    std::vector<std::int32_t> arow(static_cast<std::size_t>(a * 2)),
        acol(static_cast<std::size_t>(a * 2));
    kernels::area_max_pool(mem.ptr(), 7, 7, 2, 3, 3, out.ptr(), arow.data(), acol.data());

    i64 idx = 0;
    for (i64 hh = 1; hh <= 3; ++hh) {
        for (i64 ww = 1; ww <= 3; ++ww) {
            for (i64 top = 0; top + hh <= 7; ++top) {
                for (i64 left = 0; left + ww <= 7; ++left) {
                    for (i64 c = 0; c < 2; ++c) {
                        const float naive = ref::rect_max_naive(mem, top, left, hh, ww, c);
                        CHECK(out.at2(idx, c) == naive);
                        // recorded argmax holds the max value and lies inside
                        const i64 r = arow[static_cast<std::size_t>(idx * 2 + c)];
                        const i64 col = acol[static_cast<std::size_t>(idx * 2 + c)];
                        CHECK(r >= top);
                        CHECK(r < top + hh);
                        CHECK(col >= left);
                        CHECK(col < left + ww);
                        CHECK(mem.at3(r, col, c) == naive);
                    }
                    ++idx;
                }
            }
        }
    }
    CHECK(idx == a);
}

TEST_CASE("area max ties resolve to the smallest (row, col)") {
    // constant plane: every argmax must be the rectangle's top-left cell
    const TensorF mem = TensorF::full({4, 4, 1}, 2.5f);
    const i64 a = kernels::area_count(4, 4, 2, 2);
    TensorF out({a, 1});
    std::vector<std::int32_t> arow(static_cast<std::size_t>(a)),
        acol(static_cast<std::size_t>(a));
    kernels::area_max_pool(mem.ptr(), 4, 4, 1, 2, 2, out.ptr(), arow.data(), acol.data());
    i64 idx = 0;
    for (i64 hh = 1; hh <= 2; ++hh) {
        for (i64 ww = 1; ww <= 2; ++ww) {
            for (i64 top = 0; top + hh <= 4; ++top) {
                for (i64 left = 0; left + ww <= 4; ++left) {
                    CHECK(arow[static_cast<std::size_t>(idx)] == top);
                    CHECK(acol[static_cast<std::size_t>(idx)] == left);
                    ++idx;
                }
            }
        }
    }
}

TEST_CASE("softmax rows are stabilized probability distributions") {
    const TensorF x({2, 2}, {0.0f, 0.0f, 1000.0f, 0.0f});
    TensorF y({2, 2});
    kernels::softmax_rows(x.ptr(), y.ptr(), 2, 2);
    CHECK(y.at2(0, 0) == doctest::Approx(0.5f));
    CHECK(y.at2(0, 1) == doctest::Approx(0.5f));
    CHECK(y.at2(1, 0) == doctest::Approx(1.0f));
    CHECK(y.at2(1, 1) == doctest::Approx(0.0f));
    for (float v : y.data) {
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("kernels are bitwise identical across thread counts") {
    Rng rng(17);
    const TensorF x = random_tensor({2, 3, 9, 9}, rng);
    const TensorF w = random_tensor({4, 3, 3, 3}, rng);
    const TensorF bias = random_tensor({4}, rng);
    auto g = kernels::conv2d_geometry(2, 3, 9, 9, 4, 3, 3, 1, 1, 1, 1);

    kernels::set_max_threads(1);
    TensorF y1({2, 4, g.h_out, g.w_out});
    kernels::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), y1.ptr(), g);
    kernels::set_max_threads(2);
    TensorF y2({2, 4, g.h_out, g.w_out});
    kernels::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), y2.ptr(), g);
    kernels::set_max_threads(0);
    CHECK(y1.data == y2.data);
}
