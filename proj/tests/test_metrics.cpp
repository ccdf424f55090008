#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hformer/metrics.hpp"

using namespace hformer;

namespace {

FringeOrderMap make_map(int h, int w, std::vector<uint8_t> v) {
    FringeOrderMap m;
    m.height = h;
    m.width = w;
    m.values = std::move(v);
    return m;
}

// Independent per-class counting oracle for mIoU/MSE/MAE.
struct OracleResult {
    double miou, mse, mae;
};

OracleResult metric_oracle(const std::vector<FringeOrderMap>& pred, const std::vector<FringeOrderMap>& gt,
                           int k) {
    double se = 0, ae = 0;
    int64_t n = 0;
    std::vector<int64_t> inter(k, 0), uni(k, 0);
    for (int c = 0; c < k; ++c) {
        for (size_t s = 0; s < pred.size(); ++s) {
            for (size_t i = 0; i < pred[s].values.size(); ++i) {
                const bool p = pred[s].values[i] == c, g = gt[s].values[i] == c;
                if (p && g) ++inter[c];
                if (p || g) ++uni[c];
            }
        }
    }
    for (size_t s = 0; s < pred.size(); ++s)
        for (size_t i = 0; i < pred[s].values.size(); ++i) {
            const double d = double(pred[s].values[i]) - double(gt[s].values[i]);
            se += d * d;
            ae += std::abs(d);
            ++n;
        }
    double iou_sum = 0;
    int present = 0;
    for (int c = 0; c < k; ++c)
        if (uni[c] > 0) {
            iou_sum += double(inter[c]) / double(uni[c]);
            ++present;
        }
    return {iou_sum / present, se / n, ae / n};
}

}  // namespace

TEST_CASE("identical maps give perfect scores") {
    auto m = make_map(2, 2, {0, 1, 2, 3});
    auto r = evaluate({m}, {m}, 4);
    CHECK(r.miou == 1.0);
    CHECK(r.mse == 0.0);
    CHECK(r.mae == 0.0);
    CHECK(r.pixel_count == 4);
    CHECK(r.sample_count == 1);
}

TEST_CASE("hand-computed mIoU") {
    auto pred = make_map(1, 4, {0, 1, 1, 1});
    auto gt = make_map(1, 4, {0, 0, 1, 1});
    auto r = evaluate({pred}, {gt}, 34);
    CHECK(r.per_class_iou[0] == doctest::Approx(0.5));
    CHECK(r.per_class_iou[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.miou == doctest::Approx(0.5833333).epsilon(1e-6));
    CHECK(r.per_class_iou[5] == -1.0);  // absent class skipped
}

TEST_CASE("hand-computed MSE/MAE") {
    auto pred = make_map(1, 4, {0, 2, 0, 0});
    auto gt = make_map(1, 4, {0, 1, 0, 0});
    CHECK(mse(pred, gt) == doctest::Approx(0.25));
    CHECK(mae(pred, gt) == doctest::Approx(0.25));

    auto p2 = make_map(1, 2, {2, 0});
    auto g2 = make_map(1, 2, {0, 0});
    CHECK(mse(p2, g2) == doctest::Approx(2.0));
    CHECK(mae(p2, g2) == doctest::Approx(1.0));
}

TEST_CASE("matches the brute-force counting oracle on random maps") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + int(rng() % 8);
        std::vector<FringeOrderMap> pred, gt;
        for (int s = 0; s < 3; ++s) {
            std::vector<uint8_t> pv(16 * 16), gv(16 * 16);
            for (auto& v : pv) v = uint8_t(rng() % k);
            for (auto& v : gv) v = uint8_t(rng() % k);
            pred.push_back(make_map(16, 16, pv));
            gt.push_back(make_map(16, 16, gv));
        }
        auto r = evaluate(pred, gt, k);
        auto o = metric_oracle(pred, gt, k);
        CHECK(r.miou == o.miou);  // same counting, exact
        CHECK(r.mse == o.mse);
        CHECK(r.mae == o.mae);

        // integer errors: |e|^2 >= |e|, so MSE >= MAE
        CHECK(r.mse >= r.mae);
    }
}

TEST_CASE("invariant under simultaneous spatial permutation") {
    std::mt19937_64 rng(55);
    std::vector<uint8_t> pv(36), gv(36);
    for (auto& v : pv) v = uint8_t(rng() % 5);
    for (auto& v : gv) v = uint8_t(rng() % 5);
    auto r1 = evaluate({make_map(6, 6, pv)}, {make_map(6, 6, gv)}, 5);

    std::vector<size_t> perm(36);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<uint8_t> pp(36), gp(36);
    for (size_t i = 0; i < 36; ++i) {
        pp[i] = pv[perm[i]];
        gp[i] = gv[perm[i]];
    }
    auto r2 = evaluate({make_map(6, 6, pp)}, {make_map(6, 6, gp)}, 5);
    CHECK(r1.miou == r2.miou);
    CHECK(r1.mse == r2.mse);
    CHECK(r1.mae == r2.mae);
}

TEST_CASE("error cases") {
    CHECK_THROWS(evaluate({}, {}, 4));
    auto a = make_map(2, 2, {0, 0, 0, 0});
    auto b = make_map(1, 4, {0, 0, 0, 0});
    CHECK_THROWS(evaluate({a}, {b}, 4));
}
