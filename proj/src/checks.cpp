#include "hformer/checks.hpp"

#include <random>

#include "hformer/conv.hpp"
#include "hformer/grad_check.hpp"
#include "hformer/loss.hpp"
#include "hformer/model.hpp"

namespace hformer {

namespace {

Tensor<double> rand_t(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    auto t = Tensor<double>::zeros(std::move(s));
    fill_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace

std::vector<CheckResult> primitive_grad_checks() {
    std::mt19937_64 rng(7771);
    std::vector<CheckResult> results;
    auto record = [&](const char* name, double err) { results.push_back({name, err}); };

    {
        auto a = rand_t({3, 4}, rng), b = rand_t({4, 2}, rng);
        record("matmul", std::max(grad_check([&]() { return sum(mul(matmul(a, b), matmul(a, b))); }, a),
                                  grad_check([&]() { return sum(mul(matmul(a, b), matmul(a, b))); }, b)));
    }
    {
        auto a = rand_t({2, 3, 4}, rng), b = rand_t({2, 5, 4}, rng);
        record("bmm", std::max(grad_check([&]() { return sum(mul(bmm(a, b, false, true), bmm(a, b, false, true))); }, a),
                               grad_check([&]() { return sum(mul(bmm(a, b, false, true), bmm(a, b, false, true))); }, b)));
    }
    {
        auto x = rand_t({2, 5}, rng, -3, 3);
        auto r = rand_t({2, 5}, rng);
        record("softmax", grad_check([&]() { return sum(mul(softmax(x, 1), r)); }, x));
    }
    {
        auto x = rand_t({4, 6}, rng);
        auto g = rand_t({6}, rng, 0.5, 1.5);
        auto b = rand_t({6}, rng);
        auto r = rand_t({4, 6}, rng);
        auto f = [&]() { return sum(mul(layer_norm(x, g, b), r)); };
        record("layer_norm", std::max({grad_check(f, x), grad_check(f, g), grad_check(f, b)}));
    }
    {
        auto x = rand_t({11}, rng, -3, 3);
        auto r = rand_t({11}, rng);
        record("gelu", grad_check([&]() { return sum(mul(gelu(x), r)); }, x));
    }
    {
        auto x = rand_t({1, 2, 5, 5}, rng);
        auto w = rand_t({3, 2, 3, 3}, rng);
        auto b = rand_t({3}, rng);
        auto f = [&]() {
            auto y = conv2d(x, w, b, 2, 1);
            return sum(mul(y, y));
        };
        record("conv2d", std::max({grad_check(f, x), grad_check(f, w), grad_check(f, b)}));
    }
    {
        auto x = rand_t({1, 2, 3, 4}, rng);
        auto f = [&]() {
            auto y = bilinear_resize(x, 6, 5);
            return sum(mul(y, y));
        };
        record("bilinear_resize", grad_check(f, x));
    }
    {
        auto x = rand_t({6}, rng);
        auto idx = make_index_map({5, 0, 0, 3, 2, 2, 1, 4});
        auto f = [&]() {
            auto y = take(x, idx, {8});
            return sum(mul(y, y));
        };
        record("take", grad_check(f, x));
    }
    {
        auto a = rand_t({1, 2, 3, 3}, rng);
        auto b = rand_t({1, 1, 3, 3}, rng);
        auto f = [&]() {
            auto y = concat_channels<double>({a, b});
            return sum(mul(y, y));
        };
        record("concat_channels", std::max(grad_check(f, a), grad_check(f, b)));
    }
    {
        auto x = rand_t({2, 1, 3, 3}, rng);
        auto pat = rand_t({1, 3, 3}, rng);
        auto gate = rand_t({1}, rng);
        auto f = [&]() {
            auto y = add_scaled_broadcast(x, pat, gate);
            return sum(mul(y, y));
        };
        record("add_scaled_broadcast", std::max(grad_check(f, x), grad_check(f, gate)));
    }
    {
        auto x = rand_t({1, 3, 2, 2}, rng);
        std::vector<int> labels = {0, 2, 1, 1};
        record("cross_entropy", grad_check([&]() { return cross_entropy(x, labels); }, x));
    }
    {
        auto x = rand_t({3, 4}, rng);
        auto b = rand_t({4}, rng);
        auto f = [&]() {
            auto y = gelu(add_rowvec(x, b));
            return sum(mul(y, y));
        };
        record("add_rowvec", std::max(grad_check(f, x), grad_check(f, b)));
    }
    return results;
}

CheckResult cat_block_grad_check() {
    std::mt19937_64 rng(8882);
    ParamStore<double> store;
    CatBlockConfig cfg;
    cfg.channels = 4;
    cfg.patch = 2;
    CatBlock<double> block(store, "blk", cfg, 4, 4, rng);
    for (auto& e : store.entries()) fill_uniform(e.tensor, rng, -0.35, 0.35);

    auto x = rand_t({1, 4, 4, 4}, rng);
    auto target = rand_t({1, 4, 4, 4}, rng);
    auto f = [&]() {
        auto d = sub(block.forward(x), target);
        return sum(mul(d, d));
    };
    double worst = grad_check(f, x);
    for (auto& e : store.entries()) worst = std::max(worst, grad_check(f, e.tensor));
    return {"cat_block", worst};
}

CheckResult model_grad_check(int samples, uint64_t seed) {
    HformerConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.base_channels = 4;
    cfg.stage_multiplier = 4;
    cfg.num_classes = 4;
    Model<double> model(cfg, seed);
    std::mt19937_64 rng(mix64(seed, 0xc4ec5ull));
    for (auto& e : model.params().entries()) fill_uniform(e.tensor, rng, -0.35, 0.35);

    auto x = rand_t({1, 1, 32, 32}, rng);
    std::vector<int> labels(32 * 32);
    for (auto& l : labels) l = int(rng() % cfg.num_classes);
    auto f = [&]() { return cross_entropy(model.forward(x), labels); };

    double worst = 0.0;
    const auto& entries = model.params().entries();
    for (int s = 0; s < samples; ++s) {
        auto& e = entries[rng() % entries.size()];
        const std::vector<int64_t> coords = {(int64_t)(rng() % e.tensor.numel())};
        worst = std::max(worst, grad_check(f, e.tensor, coords));
    }
    return {"model", worst};
}

}  // namespace hformer
