#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor<T> is a cheap handle: copies share the data buffer and the grad
// state, so enabling gradients through any handle is visible through all of
// them. Gradients are recorded on an explicit GradTape that is replayed
// strictly in reverse execution order, so accumulation order (and therefore
// the result bits) is fixed for a given program on a given platform.
//
// T is float for training/inference and double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hformer/common.hpp"

namespace hformer {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

namespace detail {
template <class T>
struct GradState {
    bool enabled = false;
    std::vector<T> grad;  // sized to match data once required
};
}  // namespace detail

template <class T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<detail::GradState<T>> gstate;

    Tensor() = default;

    int64_t numel() const { return data ? (int64_t)data->size() : 0; }
    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }

    bool requires_grad() const { return gstate && gstate->enabled; }
    T* gptr() const { return gstate->grad.data(); }
    std::vector<T>& gradvec() const { return gstate->grad; }

    T value() const {
        if (numel() != 1) throw std::runtime_error("Tensor::value: tensor is not scalar");
        return (*data)[0];
    }

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<T>>(shape_numel(t.shape), T(0));
        t.gstate = std::make_shared<detail::GradState<T>>();
        return t;
    }

    static Tensor full(Shape s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    static Tensor of(Shape s, std::vector<T> values) {
        if ((int64_t)values.size() != shape_numel(s))
            throw std::runtime_error("Tensor::of: value count does not match shape " + shape_str(s));
        Tensor t = zeros(std::move(s));
        *t.data = std::move(values);
        return t;
    }

    // Marks this tensor as a gradient holder; the grad buffer starts at zero
    // and is shared by every handle copy of this tensor.
    Tensor& enable_grad() {
        gstate->enabled = true;
        gstate->grad.assign(data->size(), T(0));
        return *this;
    }

    void zero_grad() {
        if (requires_grad()) std::fill(gstate->grad.begin(), gstate->grad.end(), T(0));
    }
};

// Shares data and grad state under a new shape (element count must match).
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
    if (shape_numel(s) != x.numel())
        throw std::runtime_error("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
    Tensor<T> t = x;
    t.shape = std::move(s);
    return t;
}

template <class T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, T lo, T hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : *t.data) v = T(d(rng));
}

template <class T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, T mean, T stddev) {
    std::normal_distribution<double> d(mean, stddev);
    for (auto& v : *t.data) v = T(d(rng));
}

// Normal clipped by redraw to +/- 2 stddev.
template <class T>
void fill_trunc_normal(Tensor<T>& t, std::mt19937_64& rng, T stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& v : *t.data) {
        double x = d(rng);
        while (std::abs(x) > 2.0 * stddev) x = d(rng);
        v = T(x);
    }
}

// ---------------------------------------------------------------------------
// GradTape

template <class T>
class GradTape {
  public:
    GradTape() : prev_(current_) { current_ = this; }
    ~GradTape() { current_ = prev_; }
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* current() { return current_; }

    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
    size_t size() const { return ops_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays every recorded op once, in
    // reverse execution order. A tape can only be consumed once.
    void backward(Tensor<T>& loss) {
        if (consumed_) throw std::runtime_error("backward: tape already consumed; build a new tape");
        if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss.shape));
        if (!loss.requires_grad()) throw std::runtime_error("backward: loss is detached from the tape");
        loss.gradvec()[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        consumed_ = true;
    }

  private:
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
    GradTape* prev_ = nullptr;
    static thread_local GradTape* current_;
};

template <class T>
thread_local GradTape<T>* GradTape<T>::current_ = nullptr;

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (const T v : *t.data) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
}

// Returns the active tape if the op should record, and attaches a grad
// buffer to the output.
template <class T>
GradTape<T>* maybe_attach(Tensor<T>& out, bool any_input_grad) {
    GradTape<T>* tape = GradTape<T>::current();
    if (!tape || !any_input_grad) return nullptr;
    out.enable_grad();
    return tape;
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a.shape, b.shape, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t n = out.numel();
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    detail::check_finite(out, "add");
    if (auto* tape = detail::maybe_attach(out, a.requires_grad() || b.requires_grad())) {
        tape->record([a, b, out, n]() {
            const T* go = out.gptr();
            if (a.requires_grad()) {
                T* ga = a.gptr();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                T* gb = b.gptr();
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a.shape, b.shape, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    detail::check_finite(out, "sub");
    if (auto* tape = detail::maybe_attach(out, a.requires_grad() || b.requires_grad())) {
        tape->record([a, b, out, n]() {
            const T* go = out.gptr();
            if (a.requires_grad()) {
                T* ga = a.gptr();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                T* gb = b.gptr();
                for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a.shape, b.shape, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    detail::check_finite(out, "mul");
    if (auto* tape = detail::maybe_attach(out, a.requires_grad() || b.requires_grad())) {
        tape->record([a, b, out, n]() {
            const T* go = out.gptr();
            if (a.requires_grad()) {
                T* ga = a.gptr();
                const T* pb = b.ptr();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
            }
            if (b.requires_grad()) {
                T* gb = b.gptr();
                const T* pa = a.ptr();
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
            }
        });
    }
    return out;
}

// Multiply by a compile-time-known constant.
template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
    detail::check_finite(out, "scale");
    if (auto* tape = detail::maybe_attach(out, a.requires_grad())) {
        tape->record([a, out, c, n]() {
            const T* go = out.gptr();
            T* ga = a.gptr();
            for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

// out[r, :] = x[r, :] + b  for x whose trailing axis matches b.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.shape.empty() || b.shape.size() != 1 || x.shape.back() != b.shape[0])
        throw std::runtime_error("add_rowvec: shape mismatch " + shape_str(x.shape) + " + " + shape_str(b.shape));
    const int64_t c = b.shape[0];
    const int64_t rows = x.numel() / c;
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* px = x.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c; ++j) po[r * c + j] = px[r * c + j] + pb[j];
    detail::check_finite(out, "add_rowvec");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad() || b.requires_grad())) {
        tape->record([x, b, out, rows, c]() {
            const T* go = out.gptr();
            if (x.requires_grad()) {
                T* gx = x.gptr();
                for (int64_t i = 0; i < rows * c; ++i) gx[i] += go[i];
            }
            if (b.requires_grad()) {
                T* gb = b.gptr();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < c; ++j) gb[j] += go[r * c + j];
            }
        });
    }
    return out;
}

// out = x + s * bcast, where s is a learnable scalar (shape [1]) and bcast is
// a fixed per-sample pattern broadcast over the leading batch axis of x.
template <class T>
Tensor<T> add_scaled_broadcast(const Tensor<T>& x, const Tensor<T>& bcast, const Tensor<T>& s) {
    if (s.numel() != 1) throw std::runtime_error("add_scaled_broadcast: gate must be scalar");
    const int64_t m = bcast.numel();
    if (m == 0 || x.numel() % m != 0)
        throw std::runtime_error("add_scaled_broadcast: pattern " + shape_str(bcast.shape) +
                                 " does not tile " + shape_str(x.shape));
    const int64_t batch = x.numel() / m;
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T g = (*s.data)[0];
    const T* px = x.ptr();
    const T* pb = bcast.ptr();
    T* po = out.ptr();
    for (int64_t n = 0; n < batch; ++n)
        for (int64_t i = 0; i < m; ++i) po[n * m + i] = px[n * m + i] + g * pb[i];
    detail::check_finite(out, "add_scaled_broadcast");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad() || s.requires_grad())) {
        tape->record([x, bcast, s, out, batch, m]() {
            const T* go = out.gptr();
            if (x.requires_grad()) {
                T* gx = x.gptr();
                for (int64_t i = 0; i < batch * m; ++i) gx[i] += go[i];
            }
            if (s.requires_grad()) {
                const T* pb = bcast.ptr();
                T acc = T(0);
                for (int64_t n = 0; n < batch; ++n)
                    for (int64_t i = 0; i < m; ++i) acc += go[n * m + i] * pb[i];
                s.gradvec()[0] += acc;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros({1});
    T acc = T(0);
    for (const T v : *x.data) acc += v;
    (*out.data)[0] = acc;
    detail::check_finite(out, "sum");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad())) {
        tape->record([x, out]() {
            const T g = out.gradvec()[0];
            T* gx = x.gptr();
            const int64_t n = x.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    Tensor<T> s = sum(x);
    return scale(s, T(1) / T(x.numel()));
}

// ---------------------------------------------------------------------------
// matmul / batched matmul

namespace detail {

// C[b] (+)= op_a(A[b]) * op_b(B[b]) for each batch slice. Row-parallel over
// (batch, m); each output element is a sequential dot product, so the result
// does not depend on the thread count.
template <class T>
void bmm_kernel(T* c, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t n,
                bool trans_a, bool trans_b, bool accumulate) {
    const int64_t a_sz = m * k, b_sz = k * n, c_sz = m * n;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < batch; ++bi) {
        for (int64_t i = 0; i < m; ++i) {
            const T* pa = a + bi * a_sz;
            const T* pb = b + bi * b_sz;
            T* pc = c + bi * c_sz + i * n;
            if (!accumulate)
                for (int64_t j = 0; j < n; ++j) pc[j] = T(0);
            if (!trans_a && !trans_b) {
                for (int64_t kk = 0; kk < k; ++kk) {
                    const T av = pa[i * k + kk];
                    const T* pbr = pb + kk * n;
                    for (int64_t j = 0; j < n; ++j) pc[j] += av * pbr[j];
                }
            } else if (!trans_a && trans_b) {
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    const T* par = pa + i * k;
                    const T* pbr = pb + j * k;
                    for (int64_t kk = 0; kk < k; ++kk) acc += par[kk] * pbr[kk];
                    pc[j] += acc;
                }
            } else if (trans_a && !trans_b) {
                for (int64_t kk = 0; kk < k; ++kk) {
                    const T av = pa[kk * m + i];
                    const T* pbr = pb + kk * n;
                    for (int64_t j = 0; j < n; ++j) pc[j] += av * pbr[j];
                }
            } else {
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int64_t kk = 0; kk < k; ++kk) acc += pa[kk * m + i] * pb[j * k + kk];
                    pc[j] += acc;
                }
            }
        }
    }
}

}  // namespace detail

// a: [B, M, K] (or [B, K, M] if trans_a), b: [B, K, N] (or [B, N, K] if
// trans_b) -> [B, M, N].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
    if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[0] != b.shape[0])
        throw std::runtime_error("bmm: need matching 3-D batches, got " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int64_t batch = a.shape[0];
    const int64_t m = trans_a ? a.shape[2] : a.shape[1];
    const int64_t k = trans_a ? a.shape[1] : a.shape[2];
    const int64_t kb = trans_b ? b.shape[2] : b.shape[1];
    const int64_t n = trans_b ? b.shape[1] : b.shape[2];
    if (k != kb)
        throw std::runtime_error("bmm: inner extents disagree, " + shape_str(a.shape) + " x " + shape_str(b.shape));
    Tensor<T> out = Tensor<T>::zeros({(int)batch, (int)m, (int)n});
    detail::bmm_kernel(out.ptr(), a.ptr(), b.ptr(), batch, m, k, n, trans_a, trans_b, false);
    detail::check_finite(out, "bmm");
    if (auto* tape = detail::maybe_attach(out, a.requires_grad() || b.requires_grad())) {
        tape->record([a, b, out, batch, m, k, n, trans_a, trans_b]() {
            const T* go = out.gptr();
            // dC = dA opB^T etc.; all four flag cases reduce to kernel calls.
            if (a.requires_grad()) {
                if (!trans_a)
                    detail::bmm_kernel(a.gptr(), go, b.ptr(), batch, m, n, k, false, !trans_b, true);
                else
                    detail::bmm_kernel(a.gptr(), b.ptr(), go, batch, k, n, m, trans_b, true, true);
            }
            if (b.requires_grad()) {
                if (!trans_b)
                    detail::bmm_kernel(b.gptr(), a.ptr(), go, batch, k, m, n, !trans_a, false, true);
                else
                    detail::bmm_kernel(b.gptr(), go, a.ptr(), batch, n, m, k, true, trans_a, true);
            }
        });
    }
    return out;
}

// 2-D matrix product [M,K] x [K,N] -> [M,N].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2)
        throw std::runtime_error("matmul: need 2-D operands, got " + shape_str(a.shape) + " x " + shape_str(b.shape));
    if (a.shape[1] != b.shape[0])
        throw std::runtime_error("matmul: inner extents disagree, " + shape_str(a.shape) + " x " + shape_str(b.shape));
    Tensor<T> a3 = reshape(a, {1, a.shape[0], a.shape[1]});
    Tensor<T> b3 = reshape(b, {1, b.shape[0], b.shape[1]});
    Tensor<T> out = bmm(a3, b3);
    return reshape(out, {a.shape[0], b.shape[1]});
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / gelu

// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int nd = (int)x.shape.size();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw std::runtime_error("softmax: bad axis");
    const int64_t len = x.shape[axis];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape[i];
    for (int i = axis + 1; i < nd; ++i) inner *= x.shape[i];
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* px = x.ptr();
    T* po = out.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            T mx = px[base];
            for (int64_t i = 1; i < len; ++i) mx = std::max(mx, px[base + i * inner]);
            T denom = T(0);
            for (int64_t i = 0; i < len; ++i) {
                const T e = std::exp(px[base + i * inner] - mx);
                po[base + i * inner] = e;
                denom += e;
            }
            for (int64_t i = 0; i < len; ++i) po[base + i * inner] /= denom;
        }
    }
    detail::check_finite(out, "softmax");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad())) {
        tape->record([x, out, outer, inner, len]() {
            const T* po = out.ptr();
            const T* go = out.gptr();
            T* gx = x.gptr();
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * len * inner + in;
                    T dot = T(0);
                    for (int64_t i = 0; i < len; ++i) dot += go[base + i * inner] * po[base + i * inner];
                    for (int64_t i = 0; i < len; ++i)
                        gx[base + i * inner] += po[base + i * inner] * (go[base + i * inner] - dot);
                }
            }
        });
    }
    return out;
}

// Per-row normalization over the last axis, then affine gamma/beta.
// Uses the population variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    if (x.shape.empty()) throw std::runtime_error("layer_norm: empty shape");
    const int64_t c = x.shape.back();
    if (c == 0) throw std::runtime_error("layer_norm: zero-length normalization axis");
    if (gamma.numel() != c || beta.numel() != c)
        throw std::runtime_error("layer_norm: gamma/beta must have length " + std::to_string(c));
    if (eps <= T(0)) throw std::runtime_error("layer_norm: eps must be positive");
    const int64_t rows = x.numel() / c;
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T* px = x.ptr();
    const T* pg = gamma.ptr();
    const T* pb = beta.ptr();
    T* po = out.ptr();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * c;
        T mu = T(0);
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= T(c);
        T var = T(0);
        for (int64_t j = 0; j < c; ++j) {
            const T d = row[j] - mu;
            var += d * d;
        }
        var /= T(c);
        const T inv = T(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < c; ++j) po[r * c + j] = (row[j] - mu) * inv * pg[j] + pb[j];
    }
    detail::check_finite(out, "layer_norm");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        tape->record([x, gamma, beta, out, rows, c, eps]() {
            const T* px = x.ptr();
            const T* pg = gamma.ptr();
            const T* go = out.gptr();
            // gamma/beta accumulate across rows sequentially (fixed order).
            for (int64_t r = 0; r < rows; ++r) {
                const T* row = px + r * c;
                T mu = T(0);
                for (int64_t j = 0; j < c; ++j) mu += row[j];
                mu /= T(c);
                T var = T(0);
                for (int64_t j = 0; j < c; ++j) {
                    const T d = row[j] - mu;
                    var += d * d;
                }
                var /= T(c);
                const T inv = T(1) / std::sqrt(var + eps);
                const T* g = go + r * c;
                if (gamma.requires_grad() || beta.requires_grad()) {
                    T* gg = gamma.requires_grad() ? gamma.gptr() : nullptr;
                    T* gb = beta.requires_grad() ? beta.gptr() : nullptr;
                    for (int64_t j = 0; j < c; ++j) {
                        if (gg) gg[j] += g[j] * (row[j] - mu) * inv;
                        if (gb) gb[j] += g[j];
                    }
                }
                if (x.requires_grad()) {
                    T* gx = x.gptr() + r * c;
                    T mean_dxn = T(0), mean_dxn_xn = T(0);
                    for (int64_t j = 0; j < c; ++j) {
                        const T xn = (row[j] - mu) * inv;
                        const T dxn = g[j] * pg[j];
                        mean_dxn += dxn;
                        mean_dxn_xn += dxn * xn;
                    }
                    mean_dxn /= T(c);
                    mean_dxn_xn /= T(c);
                    for (int64_t j = 0; j < c; ++j) {
                        const T xn = (row[j] - mu) * inv;
                        const T dxn = g[j] * pg[j];
                        gx[j] += inv * (dxn - mean_dxn - xn * mean_dxn_xn);
                    }
                }
            }
        });
    }
    return out;
}

// Exact-erf GELU: x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const int64_t n = out.numel();
    const T* px = x.ptr();
    T* po = out.ptr();
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (int64_t i = 0; i < n; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(px[i] * inv_sqrt2));
        po[i] = px[i] * cdf;
    }
    detail::check_finite(out, "gelu");
    if (auto* tape = detail::maybe_attach(out, x.requires_grad())) {
        tape->record([x, out, n, inv_sqrt2]() {
            const T* px = x.ptr();
            const T* go = out.gptr();
            T* gx = x.gptr();
            const T inv_sqrt2pi = T(0.3989422804014326779);
            for (int64_t i = 0; i < n; ++i) {
                const T cdf = T(0.5) * (T(1) + std::erf(px[i] * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * px[i] * px[i]);
                gx[i] += go[i] * (cdf + px[i] * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Index-map gather: out[i] = x[idx[i]]. Covers every layout rearrangement
// (window partitioning, space-to-depth, head splits, ...) plus table lookups
// with repeats; the backward pass scatter-accumulates, sequentially.

using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

inline IndexMap make_index_map(std::vector<int64_t> v) {
    return std::make_shared<const std::vector<int64_t>>(std::move(v));
}

template <class T>
Tensor<T> take(const Tensor<T>& x, const IndexMap& idx, Shape out_shape) {
    if ((int64_t)idx->size() != shape_numel(out_shape))
        throw std::runtime_error("take: index count does not match output shape " + shape_str(out_shape));
    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
    const int64_t n = out.numel();
    const int64_t xs = x.numel();
    const T* px = x.ptr();
    T* po = out.ptr();
    const int64_t* pi = idx->data();
    for (int64_t i = 0; i < n; ++i) {
        if (pi[i] < 0 || pi[i] >= xs) throw std::runtime_error("take: index out of range");
        po[i] = px[pi[i]];
    }
    if (auto* tape = detail::maybe_attach(out, x.requires_grad())) {
        tape->record([x, out, idx, n]() {
            const T* go = out.gptr();
            T* gx = x.gptr();
            const int64_t* pi = idx->data();
            for (int64_t i = 0; i < n; ++i) gx[pi[i]] += go[i];
        });
    }
    return out;
}

// Concatenates 4-D NCHW tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw std::runtime_error("concat_channels: no inputs");
    const Shape& s0 = xs[0].shape;
    if (s0.size() != 4) throw std::runtime_error("concat_channels: need NCHW inputs");
    int ctotal = 0;
    bool any_grad = false;
    for (const auto& x : xs) {
        if (x.shape.size() != 4 || x.shape[0] != s0[0] || x.shape[2] != s0[2] || x.shape[3] != s0[3])
            throw std::runtime_error("concat_channels: mismatched shapes");
        ctotal += x.shape[1];
        any_grad = any_grad || x.requires_grad();
    }
    const int64_t nb = s0[0], hw = (int64_t)s0[2] * s0[3];
    Tensor<T> out = Tensor<T>::zeros({s0[0], ctotal, s0[2], s0[3]});
    T* po = out.ptr();
    for (int64_t n = 0; n < nb; ++n) {
        int64_t coff = 0;
        for (const auto& x : xs) {
            const int64_t cx = x.shape[1];
            std::copy_n(x.ptr() + n * cx * hw, cx * hw, po + (n * ctotal + coff) * hw);
            coff += cx;
        }
    }
    if (auto* tape = detail::maybe_attach(out, any_grad)) {
        tape->record([xs, out, nb, hw, ctotal]() {
            const T* go = out.gptr();
            for (int64_t n = 0; n < nb; ++n) {
                int64_t coff = 0;
                for (const auto& x : xs) {
                    const int64_t cx = x.shape[1];
                    if (x.requires_grad()) {
                        T* gx = x.gptr() + n * cx * hw;
                        const T* g = go + (n * ctotal + coff) * hw;
                        for (int64_t i = 0; i < cx * hw; ++i) gx[i] += g[i];
                    }
                    coff += cx;
                }
            }
        });
    }
    return out;
}

}  // namespace hformer
