#pragma once

// Pixelwise cross-entropy over [N,K,H,W] logits, log-sum-exp stabilized,
// averaged over contributing pixels. The backward pass is the fused
// (softmax - one_hot) / count form.

#include "hformer/tensor.hpp"

namespace hformer {

constexpr int kNoIgnoreLabel = -1;

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        int ignore_label = kNoIgnoreLabel) {
    if (logits.shape.size() != 4) throw std::runtime_error("cross_entropy: logits must be [N,K,H,W]");
    const int nb = logits.shape[0], k = logits.shape[1], h = logits.shape[2], w = logits.shape[3];
    const int64_t npix = (int64_t)nb * h * w;
    if ((int64_t)labels.size() != npix)
        throw std::runtime_error("cross_entropy: label count " + std::to_string(labels.size()) +
                                 " does not match pixel count " + std::to_string(npix));
    const int64_t hw = (int64_t)h * w;
    const T* pl = logits.ptr();
    int64_t count = 0;
    double total = 0.0;
    for (int64_t p = 0; p < npix; ++p) {
        const int lab = labels[p];
        if (lab == ignore_label) continue;
        if (lab < 0 || lab >= k)
            throw std::runtime_error("cross_entropy: label " + std::to_string(lab) + " outside [0," +
                                     std::to_string(k - 1) + "]");
        const int64_t n = p / hw, ofs = p % hw;
        const T* px = pl + n * k * hw + ofs;
        T mx = px[0];
        for (int c = 1; c < k; ++c) mx = std::max(mx, px[(int64_t)c * hw]);
        T lse = T(0);
        for (int c = 0; c < k; ++c) lse += std::exp(px[(int64_t)c * hw] - mx);
        lse = std::log(lse) + mx;
        total += double(lse - px[(int64_t)lab * hw]);
        ++count;
    }
    if (count == 0) throw std::runtime_error("cross_entropy: no contributing pixels");
    Tensor<T> out = Tensor<T>::of({1}, {T(total / double(count))});
    detail::check_finite(out, "cross_entropy");
    if (auto* tape = detail::maybe_attach(out, logits.requires_grad())) {
        auto labs = std::make_shared<std::vector<int>>(labels);
        tape->record([logits, out, labs, nb, k, hw, npix, count, ignore_label]() {
            const T g = out.gradvec()[0] / T(count);
            const T* pl = logits.ptr();
            T* gl = logits.gptr();
#pragma omp parallel for schedule(static)
            for (int64_t p = 0; p < npix; ++p) {
                const int lab = (*labs)[p];
                if (lab == ignore_label) continue;
                const int64_t n = p / hw, ofs = p % hw;
                const T* px = pl + n * k * hw + ofs;
                T* gx = gl + n * k * hw + ofs;
                T mx = px[0];
                for (int c = 1; c < k; ++c) mx = std::max(mx, px[(int64_t)c * hw]);
                T denom = T(0);
                for (int c = 0; c < k; ++c) denom += std::exp(px[(int64_t)c * hw] - mx);
                for (int c = 0; c < k; ++c) {
                    const T soft = std::exp(px[(int64_t)c * hw] - mx) / denom;
                    gx[(int64_t)c * hw] += g * (soft - (c == lab ? T(1) : T(0)));
                }
            }
        });
    }
    return out;
}

}  // namespace hformer
