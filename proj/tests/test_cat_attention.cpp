#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hformer/grad_check.hpp"
#include "hformer/layers.hpp"

using namespace hformer;

namespace {

Tensor<double> rand_t(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    auto t = Tensor<double>::zeros(std::move(s));
    fill_uniform(t, rng, lo, hi);
    return t;
}

// Cyclic roll of an NCHW map by (dy, dx).
Tensor<double> roll(const Tensor<double>& x, int dy, int dx) {
    const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    auto out = Tensor<double>::zeros(x.shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    (*out.data)[(((int64_t)ni * c + ci) * h + (y + dy) % h) * w + (xx + dx) % w] =
                        (*x.data)[(((int64_t)ni * c + ci) * h + y) * w + xx];
    return out;
}

}  // namespace

TEST_CASE("attention: single token returns V") {
    std::mt19937_64 rng(1);
    auto q = rand_t({2, 1, 3}, rng, -5, 5);
    auto k = rand_t({2, 1, 3}, rng, -5, 5);
    auto v = rand_t({2, 1, 3}, rng, -5, 5);
    auto b = rand_t({2, 1, 1}, rng, -5, 5);
    auto out = attention(q, k, v, b, 1);
    for (int64_t i = 0; i < v.numel(); ++i) CHECK((*out.data)[i] == (*v.data)[i]);
}

TEST_CASE("attention: zero queries and bias give the mean of V rows") {
    std::mt19937_64 rng(2);
    auto q = Tensor<double>::zeros({1, 4, 2});
    auto k = rand_t({1, 4, 2}, rng);
    auto v = rand_t({1, 4, 2}, rng);
    auto out = attention(q, k, v, Tensor<double>{}, 1);
    for (int c = 0; c < 2; ++c) {
        double m = 0;
        for (int t = 0; t < 4; ++t) m += (*v.data)[t * 2 + c];
        m /= 4;
        for (int t = 0; t < 4; ++t) CHECK((*out.data)[t * 2 + c] == doctest::Approx(m).epsilon(1e-12));
    }
}

TEST_CASE("attention: d=1 hand-computed example") {
    auto q = Tensor<double>::of({1, 2, 1}, {1, 0});
    auto k = Tensor<double>::of({1, 2, 1}, {1, 0});
    auto v = Tensor<double>::of({1, 2, 1}, {1, 2});
    auto out = attention(q, k, v, Tensor<double>{}, 1);
    CHECK((*out.data)[0] == doctest::Approx(1.26894142).epsilon(1e-7));
    CHECK((*out.data)[1] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("attention: outputs are convex combinations of V rows") {
    std::mt19937_64 rng(3);
    auto q = rand_t({2, 5, 4}, rng, -2, 2);
    auto k = rand_t({2, 5, 4}, rng, -2, 2);
    auto v = rand_t({2, 5, 4}, rng, -3, 3);
    auto b = rand_t({4, 5, 5}, rng, -1, 1);  // 2 heads
    auto out = attention(q, k, v, b, 2);
    for (int bi = 0; bi < 2; ++bi)
        for (int c = 0; c < 4; ++c) {
            const int head = c / 2;  // head-local convexity over the same d-slice
            double lo = 1e99, hi = -1e99;
            for (int t = 0; t < 5; ++t) {
                const double vv = (*v.data)[((int64_t)bi * 5 + t) * 4 + c];
                lo = std::min(lo, vv);
                hi = std::max(hi, vv);
            }
            (void)head;
            for (int t = 0; t < 5; ++t) {
                const double o = (*out.data)[((int64_t)bi * 5 + t) * 4 + c];
                CHECK(o >= lo - 1e-12);
                CHECK(o <= hi + 1e-12);
            }
        }
}

TEST_CASE("attention: with B = 0, jointly permuting K and V token order is a no-op") {
    std::mt19937_64 rng(4);
    auto q = rand_t({1, 3, 2}, rng);
    auto k = rand_t({1, 6, 2}, rng);
    auto v = rand_t({1, 6, 2}, rng);
    auto base = attention(q, k, v, Tensor<double>{}, 1);

    std::vector<int> perm = {4, 2, 0, 5, 1, 3};
    auto kp = Tensor<double>::zeros({1, 6, 2});
    auto vp = Tensor<double>::zeros({1, 6, 2});
    for (int t = 0; t < 6; ++t)
        for (int c = 0; c < 2; ++c) {
            (*kp.data)[t * 2 + c] = (*k.data)[perm[t] * 2 + c];
            (*vp.data)[t * 2 + c] = (*v.data)[perm[t] * 2 + c];
        }
    auto permuted = attention(q, kp, vp, Tensor<double>{}, 1);
    for (int64_t i = 0; i < base.numel(); ++i)
        CHECK((*permuted.data)[i] == doctest::Approx((*base.data)[i]).epsilon(1e-12));
}

TEST_CASE("relative-position tables share entries across equal offsets") {
    auto idx = window_bias_index(3);  // tokens 0..8 on a 3x3 window
    const int t = 9;
    // pairs (4,0) and (8,4) both have offset (+1,+1)
    CHECK(idx[4 * t + 0] == idx[8 * t + 4]);
    // pairs (0,4) and (4,8): offset (-1,-1)
    CHECK(idx[0 * t + 4] == idx[4 * t + 8]);
    CHECK(idx[4 * t + 0] != idx[0 * t + 4]);

    auto gidx = grid_bias_index(2, 3);
    const int g = 6;
    CHECK(gidx[1 * g + 0] == gidx[2 * g + 1]);  // offset (0,+1) shared
}

TEST_CASE("ipsa: zero value/output projections produce zeros") {
    std::mt19937_64 rng(5);
    ParamStore<double> store;
    Ipsa<double> ipsa(store, "ipsa", 4, 4, 4, 2, 1, rng);
    ipsa.v.set_zero();
    ipsa.proj.set_zero();
    auto tokens = rand_t({16, 4}, rng);
    auto out = ipsa.forward(tokens, 1);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK((*out.data)[i] == 0.0);
}

TEST_CASE("ipsa: consistent channel permutation leaves attention unchanged") {
    std::mt19937_64 rng(6);
    ParamStore<double> store;
    Ipsa<double> ipsa(store, "ipsa", 2, 4, 4, 2, 1, rng);
    auto tokens = rand_t({16, 2}, rng);
    auto base = ipsa.forward(tokens, 1);

    // swap the two token features and the matching q/k/v weight rows
    auto swapped = Tensor<double>::zeros({16, 2});
    for (int r = 0; r < 16; ++r) {
        (*swapped.data)[r * 2 + 0] = (*tokens.data)[r * 2 + 1];
        (*swapped.data)[r * 2 + 1] = (*tokens.data)[r * 2 + 0];
    }
    for (Linear<double>* lin : {&ipsa.q, &ipsa.k, &ipsa.v}) {
        auto& wdat = *lin->weight.data;
        std::swap(wdat[0], wdat[2]);
        std::swap(wdat[1], wdat[3]);
    }
    auto permuted = ipsa.forward(swapped, 1);
    for (int64_t i = 0; i < base.numel(); ++i)
        CHECK((*permuted.data)[i] == doctest::Approx((*base.data)[i]).epsilon(1e-12));
}

TEST_CASE("cat_block: translating input by p pixels translates output by p") {
    std::mt19937_64 rng(7);
    ParamStore<double> store;
    CatBlockConfig cfg;
    cfg.channels = 2;
    cfg.patch = 4;
    CatBlock<double> block(store, "blk", cfg, 8, 8, rng);
    auto x = rand_t({1, 2, 8, 8}, rng);
    auto y = block.forward(x);
    auto y_shift = block.forward(roll(x, 4, 4));
    auto y_roll = roll(y, 4, 4);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK((*y_shift.data)[i] == doctest::Approx((*y_roll.data)[i]).epsilon(1e-9));
}

TEST_CASE("cpsa: single patch acts as value projection") {
    std::mt19937_64 rng(8);
    ParamStore<double> store;
    Cpsa<double> cpsa(store, "cpsa", 3, 2, 2, 2, rng);  // H=W=p=2: one patch
    auto tokens = rand_t({4, 3}, rng);
    auto out = cpsa.forward(tokens, 1);

    // expected: proj(v(token)) per channel, token = flattened patch
    auto tok = take(tokens, detail::build_patch_maps(1, 3, 2, 2, 2).to_windows, {3, 1, 4});
    auto expected_tok = cpsa.proj.forward(cpsa.v.forward(tok));
    auto expected = take(expected_tok, detail::build_patch_maps(1, 3, 2, 2, 2).from_windows, {4, 3});
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK((*out.data)[i] == doctest::Approx((*expected.data)[i]).epsilon(1e-12));
}

TEST_CASE("cpsa: constant map gives a patch-periodic output") {
    std::mt19937_64 rng(9);
    ParamStore<double> store;
    Cpsa<double> cpsa(store, "cpsa", 1, 4, 4, 2, rng);  // 2x2 patch grid, zero bias at init
    auto tokens = Tensor<double>::full({16, 1}, 0.73);
    auto out = cpsa.forward(tokens, 1);
    // identical tokens + uniform weights: every patch carries the same pattern
    const auto& o = *out.data;
    auto at = [&](int y, int x) { return o[(size_t)y * 4 + x]; };
    for (int py = 0; py < 2; ++py)
        for (int px = 0; px < 2; ++px)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    CHECK(at(py * 2 + dy, px * 2 + dx) == doctest::Approx(at(dy, dx)).epsilon(1e-12));
}

TEST_CASE("cpsa: two patches at p=1 match a hand-computed oracle") {
    std::mt19937_64 rng(10);
    ParamStore<double> store;
    Cpsa<double> cpsa(store, "cpsa", 1, 1, 2, 1, rng);  // 1x2 map, two 1x1 patches
    const double wq = 0.7, wk = -0.4, wv = 1.3, wp = 0.9;
    const double bq = 0.1, bk = 0.2, bv = -0.3, bp = 0.05;
    (*cpsa.q.weight.data)[0] = wq;
    (*cpsa.q.bias.data)[0] = bq;
    (*cpsa.k.weight.data)[0] = wk;
    (*cpsa.k.bias.data)[0] = bk;
    (*cpsa.v.weight.data)[0] = wv;
    (*cpsa.v.bias.data)[0] = bv;
    (*cpsa.proj.weight.data)[0] = wp;
    (*cpsa.proj.bias.data)[0] = bp;
    (*cpsa.bias_table.data)[0] = 0.3;   // offset -1
    (*cpsa.bias_table.data)[1] = 0.0;   // offset 0
    (*cpsa.bias_table.data)[2] = -0.2;  // offset +1

    const double x0 = 0.6, x1 = -1.1;
    auto tokens = Tensor<double>::of({2, 1}, {x0, x1});
    auto out = cpsa.forward(tokens, 1);

    // hand evaluation of SoftMax(q k^T / sqrt(1) + B) v, then proj
    const double q0 = wq * x0 + bq, q1 = wq * x1 + bq;
    const double k0 = wk * x0 + bk, k1 = wk * x1 + bk;
    const double v0 = wv * x0 + bv, v1 = wv * x1 + bv;
    auto soft2 = [](double a, double b) {
        const double m = std::max(a, b);
        const double ea = std::exp(a - m), eb = std::exp(b - m);
        return std::pair{ea / (ea + eb), eb / (ea + eb)};
    };
    // pair (i,j) looks up offset i-j: B[0][1] = table[0], B[1][0] = table[2]
    auto [w00, w01] = soft2(q0 * k0 + 0.0, q0 * k1 + 0.3);
    auto [w10, w11] = soft2(q1 * k0 + (-0.2), q1 * k1 + 0.0);
    const double o0 = wp * (w00 * v0 + w01 * v1) + bp;
    const double o1 = wp * (w10 * v0 + w11 * v1) + bp;
    CHECK((*out.data)[0] == doctest::Approx(o0).epsilon(1e-12));
    CHECK((*out.data)[1] == doctest::Approx(o1).epsilon(1e-12));
}

TEST_CASE("mlp: zero weights, identity regime, gradients") {
    std::mt19937_64 rng(11);
    ParamStore<double> store;
    Mlp<double> mlp(store, "mlp", 3, 2.0, 2, rng);
    for (auto& l : mlp.layers) l.set_zero();
    auto x = rand_t({5, 3}, rng);
    auto out = mlp.forward(x);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK((*out.data)[i] == 0.0);

    // identity-configured layers on strongly positive inputs: GELU ~ x
    ParamStore<double> store2;
    Mlp<double> mid(store2, "mlp", 3, 1.0, 2, rng);
    for (auto& l : mid.layers) l.set_identity();
    auto xp = rand_t({4, 3}, rng, 8.0, 12.0);
    auto yp = mid.forward(xp);
    for (int64_t i = 0; i < yp.numel(); ++i)
        CHECK((*yp.data)[i] == doctest::Approx((*xp.data)[i]).epsilon(1e-9));

    ParamStore<double> store3;
    Mlp<double> m4(store3, "mlp", 4, 4.0, 3, rng);
    auto xg = rand_t({3, 4}, rng);
    auto f = [&]() { return sum(mul(m4.forward(xg), xg)); };
    CHECK(grad_check(f, xg) < 1e-4);
    CHECK(grad_check(f, m4.layers[0].weight) < 1e-4);
    CHECK(grad_check(f, m4.layers[2].bias) < 1e-4);
}

TEST_CASE("cat_block: zero-branch initialization is the exact identity") {
    std::mt19937_64 rng(12);
    ParamStore<double> store;
    CatBlockConfig cfg;
    cfg.channels = 4;
    cfg.patch = 2;
    cfg.num_heads = 2;
    CatBlock<double> block(store, "blk", cfg, 4, 4, rng);
    block.zero_residual_branches();
    auto x = rand_t({2, 4, 4, 4}, rng);
    auto y = block.forward(x);
    REQUIRE(y.shape == x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK((*y.data)[i] == (*x.data)[i]);  // bitwise
}

TEST_CASE("cat_block: shape preserved across configs") {
    std::mt19937_64 rng(13);
    for (auto [c, p, heads, hh, ww] : {std::tuple{2, 2, 1, 4, 8}, {6, 3, 2, 6, 6}, {4, 1, 4, 2, 3}}) {
        ParamStore<double> store;
        CatBlockConfig cfg;
        cfg.channels = c;
        cfg.patch = p;
        cfg.num_heads = heads;
        CatBlock<double> block(store, "blk", cfg, hh, ww, rng);
        auto x = rand_t({2, c, hh, ww}, rng);
        auto y = block.forward(x);
        CHECK(y.shape == x.shape);
    }
}

TEST_CASE("cat_block: full gradient check at C=4, H=W=4, p=2") {
    std::mt19937_64 rng(14);
    ParamStore<double> store;
    CatBlockConfig cfg;
    cfg.channels = 4;
    cfg.patch = 2;
    CatBlock<double> block(store, "blk", cfg, 4, 4, rng);
    auto x = rand_t({1, 4, 4, 4}, rng);
    auto target = rand_t({1, 4, 4, 4}, rng);
    auto f = [&]() {
        auto d = sub(block.forward(x), target);
        return sum(mul(d, d));
    };
    CHECK(grad_check(f, x) < 1e-4);
    CHECK(grad_check(f, block.ipsa_a.q.weight) < 1e-4);
    CHECK(grad_check(f, block.ipsa_b.proj.bias) < 1e-4);
    CHECK(grad_check(f, block.ipsa_a.bias_table) < 1e-4);
    CHECK(grad_check(f, block.cpsa.bias_table) < 1e-4);
    CHECK(grad_check(f, block.cpsa.v.weight) < 1e-4);
    CHECK(grad_check(f, block.ln3.gamma) < 1e-4);
    CHECK(grad_check(f, block.mlp_b.layers[0].weight) < 1e-4);
}
