#pragma once

// 2-D convolution (cross-correlation) and bilinear resizing on NCHW tensors.

#include "hformer/tensor.hpp"

namespace hformer {

// x: [N,C,H,W], w: [O,C,kh,kw], bias: [O] (may be empty), symmetric zero
// padding. Cross-correlation semantics (no kernel flip).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride = 1,
                 int padding = 0) {
    if (x.shape.size() != 4 || w.shape.size() != 4)
        throw std::runtime_error("conv2d: need NCHW input and OCHW weight");
    if (x.shape[1] != w.shape[1])
        throw std::runtime_error("conv2d: channel mismatch " + shape_str(x.shape) + " vs " + shape_str(w.shape));
    const bool has_bias = bias.data && bias.numel() > 0;
    if (has_bias && bias.numel() != w.shape[0]) throw std::runtime_error("conv2d: bias length mismatch");
    if (stride < 1) throw std::runtime_error("conv2d: stride must be >= 1");
    const int nb = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const int oc = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (wd + 2 * padding - kw) / stride + 1;
    if (oh < 1 || ow < 1 || (h + 2 * padding) < kh || (wd + 2 * padding) < kw)
        throw std::runtime_error("conv2d: spatial extents incompatible with kernel/stride/padding");

    Tensor<T> out = Tensor<T>::zeros({nb, oc, oh, ow});
    const T* px = x.ptr();
    const T* pw = w.ptr();
    const T* pb = has_bias ? bias.ptr() : nullptr;
    T* po = out.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < nb; ++n) {
        for (int o = 0; o < oc; ++o) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = pb ? pb[o] : T(0);
                    for (int ci = 0; ci < c; ++ci) {
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= wd) continue;
                                acc += px[((int64_t)(n * c + ci) * h + iy) * wd + ix] *
                                       pw[((int64_t)(o * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    po[((int64_t)(n * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    detail::check_finite(out, "conv2d");
    const bool any_grad = x.requires_grad() || w.requires_grad() || (has_bias && bias.requires_grad());
    if (auto* tape = detail::maybe_attach(out, any_grad)) {
        tape->record([x, w, bias, out, nb, c, h, wd, oc, kh, kw, oh, ow, stride, padding, has_bias]() {
            const T* go = out.gptr();
            const T* px = x.ptr();
            const T* pw = w.ptr();
            if (has_bias && bias.requires_grad()) {
                T* gb = bias.gptr();
#pragma omp parallel for schedule(static)
                for (int o = 0; o < oc; ++o) {
                    T acc = T(0);
                    for (int n = 0; n < nb; ++n)
                        for (int64_t i = 0; i < (int64_t)oh * ow; ++i)
                            acc += go[((int64_t)(n * oc + o) * oh * ow) + i];
                    gb[o] += acc;
                }
            }
            if (w.requires_grad()) {
                T* gw = w.gptr();
#pragma omp parallel for collapse(2) schedule(static)
                for (int o = 0; o < oc; ++o) {
                    for (int ci = 0; ci < c; ++ci) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                T acc = T(0);
                                for (int n = 0; n < nb; ++n) {
                                    for (int oy = 0; oy < oh; ++oy) {
                                        const int iy = oy * stride - padding + ky;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int ox = 0; ox < ow; ++ox) {
                                            const int ix = ox * stride - padding + kx;
                                            if (ix < 0 || ix >= wd) continue;
                                            acc += go[((int64_t)(n * oc + o) * oh + oy) * ow + ox] *
                                                   px[((int64_t)(n * c + ci) * h + iy) * wd + ix];
                                        }
                                    }
                                }
                                gw[((int64_t)(o * c + ci) * kh + ky) * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
            if (x.requires_grad()) {
                T* gx = x.gptr();
                // Gather form: each input pixel sums its contributions, so
                // the parallel loop writes disjoint elements.
#pragma omp parallel for collapse(2) schedule(static)
                for (int n = 0; n < nb; ++n) {
                    for (int ci = 0; ci < c; ++ci) {
                        for (int iy = 0; iy < h; ++iy) {
                            for (int ix = 0; ix < wd; ++ix) {
                                T acc = T(0);
                                for (int o = 0; o < oc; ++o) {
                                    for (int ky = 0; ky < kh; ++ky) {
                                        const int oy_num = iy + padding - ky;
                                        if (oy_num < 0 || oy_num % stride != 0) continue;
                                        const int oy = oy_num / stride;
                                        if (oy >= oh) continue;
                                        for (int kx = 0; kx < kw; ++kx) {
                                            const int ox_num = ix + padding - kx;
                                            if (ox_num < 0 || ox_num % stride != 0) continue;
                                            const int ox = ox_num / stride;
                                            if (ox >= ow) continue;
                                            acc += go[((int64_t)(n * oc + o) * oh + oy) * ow + ox] *
                                                   pw[((int64_t)(o * c + ci) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                                gx[((int64_t)(n * c + ci) * h + iy) * wd + ix] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Half-pixel (align-corners off) bilinear resize of [N,C,H,W] to
// [N,C,outH,outW]. Nested-lerp evaluation keeps constants exactly constant.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
    if (x.shape.size() != 4) throw std::runtime_error("bilinear_resize: need NCHW input");
    if (out_h < 1 || out_w < 1) throw std::runtime_error("bilinear_resize: output extents must be >= 1");
    const int nb = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor<T> out = Tensor<T>::zeros({nb, c, out_h, out_w});
    const double sy = double(h) / double(out_h);
    const double sx = double(w) / double(out_w);

    // Source coordinates per output row/column, shared across planes.
    std::vector<int> y0(out_h), x0(out_w);
    std::vector<T> fy(out_h), fx(out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        double src = (oy + 0.5) * sy - 0.5;
        src = std::min(std::max(src, 0.0), double(h - 1));
        y0[oy] = std::min((int)src, h - 1);
        fy[oy] = T(src - y0[oy]);
        if (y0[oy] == h - 1) fy[oy] = T(0);
    }
    for (int ox = 0; ox < out_w; ++ox) {
        double src = (ox + 0.5) * sx - 0.5;
        src = std::min(std::max(src, 0.0), double(w - 1));
        x0[ox] = std::min((int)src, w - 1);
        fx[ox] = T(src - x0[ox]);
        if (x0[ox] == w - 1) fx[ox] = T(0);
    }

    const T* px = x.ptr();
    T* po = out.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < nb; ++n) {
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = px + (int64_t)(n * c + ci) * h * w;
            T* oplane = po + (int64_t)(n * c + ci) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                const int yy = y0[oy];
                const int y1 = std::min(yy + 1, h - 1);
                const T ty = fy[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const int xx = x0[ox];
                    const int x1 = std::min(xx + 1, w - 1);
                    const T tx = fx[ox];
                    const T top = plane[yy * w + xx] + tx * (plane[yy * w + x1] - plane[yy * w + xx]);
                    const T bot = plane[y1 * w + xx] + tx * (plane[y1 * w + x1] - plane[y1 * w + xx]);
                    oplane[oy * out_w + ox] = top + ty * (bot - top);
                }
            }
        }
    }
    detail::check_finite(out, "bilinear_resize");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad())) {
        auto sy0 = std::make_shared<std::vector<int>>(std::move(y0));
        auto sx0 = std::make_shared<std::vector<int>>(std::move(x0));
        auto sfy = std::make_shared<std::vector<T>>(std::move(fy));
        auto sfx = std::make_shared<std::vector<T>>(std::move(fx));
        tape->record([x, out, nb, c, h, w, out_h, out_w, sy0, sx0, sfy, sfx]() {
            const T* go = out.gptr();
            T* gx = x.gptr();
#pragma omp parallel for collapse(2) schedule(static)
            for (int n = 0; n < nb; ++n) {
                for (int ci = 0; ci < c; ++ci) {
                    T* gplane = gx + (int64_t)(n * c + ci) * h * w;
                    const T* gout = go + (int64_t)(n * c + ci) * out_h * out_w;
                    for (int oy = 0; oy < out_h; ++oy) {
                        const int yy = (*sy0)[oy];
                        const int y1 = std::min(yy + 1, h - 1);
                        const T ty = (*sfy)[oy];
                        for (int ox = 0; ox < out_w; ++ox) {
                            const int xx = (*sx0)[ox];
                            const int x1 = std::min(xx + 1, w - 1);
                            const T tx = (*sfx)[ox];
                            const T g = gout[oy * out_w + ox];
                            gplane[yy * w + xx] += g * (T(1) - ty) * (T(1) - tx);
                            gplane[yy * w + x1] += g * (T(1) - ty) * tx;
                            gplane[y1 * w + xx] += g * ty * (T(1) - tx);
                            gplane[y1 * w + x1] += g * ty * tx;
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace hformer
