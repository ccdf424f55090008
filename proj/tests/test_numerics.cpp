#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hformer/conv.hpp"
#include "hformer/grad_check.hpp"
#include "hformer/loss.hpp"
#include "hformer/tensor.hpp"

using namespace hformer;

namespace {

// Brute-force cross-correlation, independent of the conv2d implementation.
std::vector<double> conv2d_oracle(const std::vector<double>& x, int n, int c, int h, int w,
                                  const std::vector<double>& wt, int o, int kh, int kw,
                                  const std::vector<double>& b, int stride, int pad, int& oh, int& ow) {
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out((size_t)n * o * oh * ow, 0.0);
    for (int ni = 0; ni < n; ++ni)
        for (int oi = 0; oi < o; ++oi)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.empty() ? 0.0 : b[oi];
                    for (int ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[((size_t)(ni * c + ci) * h + iy) * w + ix] *
                                       wt[((size_t)(oi * c + ci) * kh + ky) * kw + kx];
                            }
                    out[((size_t)(ni * o + oi) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(s));
    fill_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("matmul identity and hand values") {
    auto eye = Tensor<double>::of({2, 2}, {1, 0, 0, 1});
    auto x = Tensor<double>::of({2, 2}, {3, -1, 2, 5});
    auto y = matmul(eye, x);
    for (int i = 0; i < 4; ++i) CHECK((*y.data)[i] == (*x.data)[i]);

    auto a = Tensor<double>::of({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::of({2, 1}, {1, 1});
    auto c = matmul(a, b);
    CHECK((*c.data)[0] == doctest::Approx(3.0));
    CHECK((*c.data)[1] == doctest::Approx(7.0));

    CHECK_THROWS(matmul(a, Tensor<double>::zeros({3, 2})));
}

TEST_CASE("matmul gradient matches finite differences") {
    std::mt19937_64 rng(7);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    double err = grad_check([&]() { return sum(matmul(a, b)); }, a);
    CHECK(err < 1e-6);
    err = grad_check([&]() { return sum(matmul(a, b)); }, b);
    CHECK(err < 1e-6);

    // grad of sum(A*B) wrt A is the broadcast column-sum of B^T.
    a.enable_grad();
    a.zero_grad();
    {
        GradTape<double> tape;
        auto loss = sum(matmul(a, b));
        tape.backward(loss);
    }
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            double rowsum = 0;
            for (int j = 0; j < 2; ++j) rowsum += (*b.data)[k * 2 + j];
            CHECK(a.gradvec()[i * 4 + k] == doctest::Approx(rowsum).epsilon(1e-12));
        }
}

TEST_CASE("bmm with transpose flags against matmul") {
    std::mt19937_64 rng(9);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 4, 5}, rng);
    auto c = bmm(a, b);
    CHECK(c.shape == Shape{2, 3, 5});
    for (int bi = 0; bi < 2; ++bi) {
        auto a2 = Tensor<double>::of({3, 4}, std::vector<double>(a.ptr() + bi * 12, a.ptr() + (bi + 1) * 12));
        auto b2 = Tensor<double>::of({4, 5}, std::vector<double>(b.ptr() + bi * 20, b.ptr() + (bi + 1) * 20));
        auto c2 = matmul(a2, b2);
        for (int i = 0; i < 15; ++i) CHECK((*c.data)[bi * 15 + i] == doctest::Approx((*c2.data)[i]));
    }

    auto bt = random_tensor({2, 5, 4}, rng);
    auto ct = bmm(a, bt, false, true);
    CHECK(ct.shape == Shape{2, 3, 5});
    double err = grad_check([&]() { return sum(bmm(a, bt, false, true)); }, a);
    CHECK(err < 1e-6);
    err = grad_check([&]() { return sum(bmm(a, bt, false, true)); }, bt);
    CHECK(err < 1e-6);

    auto at = random_tensor({2, 4, 3}, rng);
    err = grad_check([&]() { return sum(bmm(at, b, true, false)); }, at);
    CHECK(err < 1e-6);
}

TEST_CASE("softmax values, stability, and slice sums") {
    auto x = Tensor<double>::of({2}, {0, 0});
    auto y = softmax(x, 0);
    CHECK((*y.data)[0] == doctest::Approx(0.5));
    CHECK((*y.data)[1] == doctest::Approx(0.5));

    auto x3 = Tensor<double>::of({3}, {1, 2, 3});
    auto y3 = softmax(x3, 0);
    CHECK((*y3.data)[0] == doctest::Approx(0.09003057).epsilon(1e-6));
    CHECK((*y3.data)[1] == doctest::Approx(0.24472847).epsilon(1e-6));
    CHECK((*y3.data)[2] == doctest::Approx(0.66524096).epsilon(1e-6));

    auto big = Tensor<double>::of({2}, {1000, 1000});
    auto yb = softmax(big, 0);
    CHECK((*yb.data)[0] == doctest::Approx(0.5));

    // slices along the axis sum to 1 for random 32-bit inputs in [-50, 50]
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<float> t = Tensor<float>::zeros({4, 6, 3});
        fill_uniform(t, rng, -50.0f, 50.0f);
        const int axis = trial % 3;
        auto s = softmax(t, axis);
        int64_t outer = 1, inner = 1, len = t.shape[axis];
        for (int i = 0; i < axis; ++i) outer *= t.shape[i];
        for (int i = axis + 1; i < 3; ++i) inner *= t.shape[i];
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                double acc = 0;
                for (int64_t i = 0; i < len; ++i) acc += (*s.data)[o * len * inner + i * inner + in];
                CHECK(std::abs(acc - 1.0) < 1e-6);
            }
    }

    double err = grad_check([&]() { return sum(mul(softmax(x3, 0), x3)); }, x3);
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm values and statistics") {
    auto g = Tensor<double>::of({3}, {1, 1, 1});
    auto b = Tensor<double>::of({3}, {0, 0, 0});

    auto c = Tensor<double>::of({1, 3}, {5, 5, 5});
    auto yc = layer_norm(c, g, b);
    for (int i = 0; i < 3; ++i) CHECK(std::abs((*yc.data)[i]) < 1e-9);

    auto x = Tensor<double>::of({1, 3}, {1, 2, 3});
    auto y = layer_norm(x, g, b, 1e-12);
    CHECK((*y.data)[0] == doctest::Approx(-1.2247449).epsilon(1e-6));
    CHECK((*y.data)[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK((*y.data)[2] == doctest::Approx(1.2247449).epsilon(1e-6));

    // pre-affine per-token mean ~0, variance ~1 for non-degenerate inputs
    std::mt19937_64 rng(3);
    auto r = random_tensor({8, 16}, rng, -4.0, 4.0);
    auto yr = layer_norm(r, Tensor<double>::full({16}, 1.0), Tensor<double>::zeros({16}));
    for (int row = 0; row < 8; ++row) {
        double mu = 0, var = 0;
        for (int j = 0; j < 16; ++j) mu += (*yr.data)[row * 16 + j];
        mu /= 16;
        for (int j = 0; j < 16; ++j) {
            double d = (*yr.data)[row * 16 + j] - mu;
            var += d * d;
        }
        var /= 16;
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    auto gg = random_tensor({5}, rng, 0.5, 1.5);
    auto bb = random_tensor({5}, rng);
    auto xx = random_tensor({4, 5}, rng);
    CHECK(grad_check([&]() { return sum(mul(layer_norm(xx, gg, bb), xx)); }, xx) < 1e-4);
    CHECK(grad_check([&]() { return sum(mul(layer_norm(xx, gg, bb), xx)); }, gg) < 1e-4);
    CHECK(grad_check([&]() { return sum(mul(layer_norm(xx, gg, bb), xx)); }, bb) < 1e-4);

    CHECK_THROWS(layer_norm(Tensor<double>::zeros({2, 3}), g, b, 0.0));
}

TEST_CASE("gelu values and gradient") {
    auto x = Tensor<double>::of({3}, {0.0, 1.0, -10.0});
    auto y = gelu(x);
    CHECK((*y.data)[0] == 0.0);
    CHECK((*y.data)[1] == doctest::Approx(0.8413447).epsilon(1e-6));
    CHECK(std::abs((*y.data)[2]) < 1e-8);

    std::mt19937_64 rng(5);
    auto r = random_tensor({17}, rng, -3.0, 3.0);
    CHECK(grad_check([&]() { return sum(mul(gelu(r), r)); }, r) < 1e-6);
}

TEST_CASE("conv2d identity, constants, and nested-loop oracle") {
    auto x = Tensor<double>::of({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w1 = Tensor<double>::of({1, 1, 1, 1}, {1});
    auto y = conv2d(x, w1, Tensor<double>{});
    for (int i = 0; i < 4; ++i) CHECK((*y.data)[i] == (*x.data)[i]);

    auto xc = Tensor<double>::full({1, 1, 5, 5}, 3.0);
    auto w9 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto yc = conv2d(xc, w9, Tensor<double>{}, 1, 1);
    CHECK((*yc.data)[2 * 5 + 2] == doctest::Approx(27.0));  // interior: 9c

    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 12; ++trial) {
        const int h = 3 + int(rng() % 6), w = 3 + int(rng() % 6);
        const int kh = 1 + int(rng() % 3), kw = 1 + int(rng() % 3);
        const int stride = 1 + int(rng() % 2), pad = int(rng() % 2);
        if (h + 2 * pad < kh || w + 2 * pad < kw) continue;
        auto xr = random_tensor({1, 2, h, w}, rng);
        auto wr = random_tensor({3, 2, kh, kw}, rng);
        auto br = random_tensor({3}, rng);
        auto out = conv2d(xr, wr, br, stride, pad);
        int oh = 0, ow = 0;
        auto ref = conv2d_oracle(*xr.data, 1, 2, h, w, *wr.data, 3, kh, kw, *br.data, stride, pad, oh, ow);
        REQUIRE(out.shape == Shape{1, 3, oh, ow});
        for (size_t i = 0; i < ref.size(); ++i) CHECK((*out.data)[i] == ref[i]);  // bit-exact in 64-bit
    }

    auto xg = random_tensor({1, 2, 5, 5}, rng);
    auto wg = random_tensor({2, 2, 3, 3}, rng);
    auto bg = random_tensor({2}, rng);
    CHECK(grad_check([&]() { return sum(mul(conv2d(xg, wg, bg, 2, 1), conv2d(xg, wg, bg, 2, 1))); }, xg) < 1e-6);
    CHECK(grad_check([&]() { return sum(mul(conv2d(xg, wg, bg, 2, 1), conv2d(xg, wg, bg, 2, 1))); }, wg) < 1e-6);
    CHECK(grad_check([&]() { return sum(conv2d(xg, wg, bg)); }, bg) < 1e-6);

    CHECK_THROWS(conv2d(xg, Tensor<double>::zeros({1, 3, 3, 3}), Tensor<double>{}));
}

TEST_CASE("bilinear_resize identity, constants, half-pixel hand values") {
    std::mt19937_64 rng(17);
    auto x = random_tensor({1, 2, 4, 5}, rng);
    auto same = bilinear_resize(x, 4, 5);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK((*same.data)[i] == (*x.data)[i]);

    auto c = Tensor<double>::full({1, 1, 3, 3}, 2.5);
    for (auto [oh, ow] : {std::pair{7, 2}, {1, 9}, {5, 5}}) {
        auto yc = bilinear_resize(c, oh, ow);
        for (int64_t i = 0; i < yc.numel(); ++i) CHECK((*yc.data)[i] == 2.5);  // exact
    }

    // 2x2 -> 4x4, half-pixel centers: src = (dst+0.5)/2 - 0.5
    auto m = Tensor<double>::of({1, 1, 2, 2}, {0, 1, 2, 3});
    auto up = bilinear_resize(m, 4, 4);
    CHECK((*up.data)[0] == 0.0);                                  // corner clamps
    CHECK((*up.data)[1 * 4 + 1] == doctest::Approx(0.75));        // src (0.25, 0.25)
    CHECK((*up.data)[2 * 4 + 2] == doctest::Approx(2.25));        // src (0.75, 0.75)
    CHECK((*up.data)[3 * 4 + 3] == doctest::Approx(3.0));

    auto xg = random_tensor({1, 1, 3, 4}, rng);
    CHECK(grad_check([&]() { return sum(mul(bilinear_resize(xg, 5, 6), bilinear_resize(xg, 5, 6))); }, xg) < 1e-6);
}

TEST_CASE("backward semantics") {
    auto x = Tensor<double>::of({3}, {1, 2, 3}).enable_grad();
    {
        GradTape<double> tape;
        auto loss = sum(x);
        tape.backward(loss);
        for (int i = 0; i < 3; ++i) CHECK(x.gradvec()[i] == 1.0);
        CHECK_THROWS_WITH(tape.backward(loss), doctest::Contains("already consumed"));
    }

    auto x2 = Tensor<double>::of({2}, {1, 2}).enable_grad();
    x2.zero_grad();
    {
        GradTape<double> tape;
        auto loss = sum(mul(x2, x2));
        tape.backward(loss);
    }
    CHECK(x2.gradvec()[0] == doctest::Approx(2.0));
    CHECK(x2.gradvec()[1] == doctest::Approx(4.0));

    {
        GradTape<double> tape;
        auto vec = mul(x2, x2);
        CHECK_THROWS_WITH(tape.backward(vec), doctest::Contains("scalar"));
        auto detached = Tensor<double>::of({1}, {4.0});
        CHECK_THROWS_WITH(tape.backward(detached), doctest::Contains("detached"));
    }
}

TEST_CASE("composite chain matches finite differences") {
    std::mt19937_64 rng(23);
    auto x = random_tensor({2, 6}, rng);
    auto w = random_tensor({6, 3}, rng);
    auto b = random_tensor({3}, rng);
    std::vector<int> labels = {0, 2};
    auto f = [&]() {
        auto h = gelu(add_rowvec(matmul(x, w), b));
        auto logits = reshape(h, {2, 3, 1, 1});
        return cross_entropy(logits, labels);
    };
    CHECK(grad_check(f, x) < 1e-4);
    CHECK(grad_check(f, w) < 1e-4);
    CHECK(grad_check(f, b) < 1e-4);
}

TEST_CASE("grad_check is exact for linear f and tight for quadratic") {
    auto z = Tensor<double>::zeros({3, 3});
    CHECK(grad_check([&]() { return sum(z); }, z) == 0.0);

    std::mt19937_64 rng(29);
    auto x = random_tensor({3, 3}, rng);
    CHECK(grad_check([&]() { return sum(matmul(x, x)); }, x) < 1e-7);
}

TEST_CASE("take gathers and scatter-accumulates") {
    auto x = Tensor<double>::of({4}, {10, 20, 30, 40});
    auto idx = make_index_map({3, 0, 0, 2});
    auto y = take(x, idx, {4});
    CHECK((*y.data)[0] == 40.0);
    CHECK((*y.data)[1] == 10.0);
    CHECK((*y.data)[2] == 10.0);
    CHECK((*y.data)[3] == 30.0);

    x.enable_grad();
    x.zero_grad();
    {
        GradTape<double> tape;
        auto loss = sum(take(x, idx, {4}));
        tape.backward(loss);
    }
    CHECK(x.gradvec()[0] == 2.0);  // index 0 referenced twice
    CHECK(x.gradvec()[1] == 0.0);
    CHECK(x.gradvec()[2] == 1.0);
    CHECK(x.gradvec()[3] == 1.0);
}

TEST_CASE("concat_channels forward and backward") {
    std::mt19937_64 rng(31);
    auto a = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2, 1, 3, 3}, rng);
    auto c = concat_channels<double>({a, b});
    CHECK(c.shape == Shape{2, 3, 3, 3});
    CHECK((*c.data)[0] == (*a.data)[0]);
    CHECK((*c.data)[2 * 9] == (*b.data)[0]);
    CHECK(grad_check([&]() { return sum(mul(concat_channels<double>({a, b}), concat_channels<double>({a, b}))); }, a) < 1e-6);
    CHECK(grad_check([&]() { return sum(mul(concat_channels<double>({a, b}), concat_channels<double>({a, b}))); }, b) < 1e-6);
}

TEST_CASE("cross_entropy values and gradient") {
    auto logits = Tensor<double>::zeros({1, 34, 1, 1});
    std::vector<int> lab = {5};
    auto loss = cross_entropy(logits, lab);
    CHECK(loss.value() == doctest::Approx(std::log(34.0)).epsilon(1e-9));
    CHECK(loss.value() == doctest::Approx(3.52636).epsilon(1e-5));

    // loss -> 0 as the correct-class margin grows
    double prev = 1e9;
    for (double m : {2.0, 5.0, 10.0, 20.0}) {
        auto lg = Tensor<double>::zeros({1, 4, 1, 1});
        (*lg.data)[1] = m;
        std::vector<int> l1 = {1};
        const double v = cross_entropy(lg, l1).value();
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-8);

    std::mt19937_64 rng(37);
    auto lg = Tensor<double>::zeros({1, 3, 2, 2});
    fill_uniform(lg, rng, -1.0, 1.0);
    std::vector<int> labs = {0, 1, 2, 1};
    CHECK(grad_check([&]() { return cross_entropy(lg, labs); }, lg) < 1e-5);

    std::vector<int> bad = {0, 1, 3, 1};
    CHECK_THROWS(cross_entropy(lg, bad));

    std::vector<int> ign = {0, -1, -1, 1};
    CHECK_NOTHROW(cross_entropy(lg, ign, -1));
}

TEST_CASE("non-finite op outputs are rejected") {
    auto x = Tensor<double>::of({2}, {1e308, 1e308});
    CHECK_THROWS_WITH(add(x, x), doctest::Contains("non-finite"));
    auto nan = Tensor<double>::of({2}, {std::numeric_limits<double>::quiet_NaN(), 0.0});
    CHECK_THROWS(softmax(nan, 0));
}

TEST_CASE("add_scaled_broadcast applies gate and pattern") {
    auto x = Tensor<double>::of({2, 1, 2, 1}, {1, 2, 3, 4});
    auto pat = Tensor<double>::of({1, 2, 1}, {10, 20});
    auto gate = Tensor<double>::of({1}, {0.5});
    auto y = add_scaled_broadcast(x, pat, gate);
    CHECK((*y.data)[0] == doctest::Approx(6.0));
    CHECK((*y.data)[1] == doctest::Approx(12.0));
    CHECK((*y.data)[2] == doctest::Approx(8.0));
    CHECK((*y.data)[3] == doctest::Approx(14.0));

    auto zero = Tensor<double>::of({1}, {0.0});
    auto yz = add_scaled_broadcast(x, pat, zero);
    for (int i = 0; i < 4; ++i) CHECK((*yz.data)[i] == (*x.data)[i]);

    CHECK(grad_check([&]() { return sum(mul(add_scaled_broadcast(x, pat, gate), x)); }, x) < 1e-6);
    CHECK(grad_check([&]() { return sum(mul(add_scaled_broadcast(x, pat, gate), x)); }, gate) < 1e-6);
}
