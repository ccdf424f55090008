#pragma once

// Cross Attention Transformer building blocks: scaled dot-product attention
// with relative-position bias, inner-patch self-attention (IPSA, tokens are
// the pixels of a p x p window), cross-patch self-attention (CPSA, tokens
// are the patches of one channel map), the GELU MLP, and the six-step
// pre-norm residual CAT block.
//
// Blocks take and return NCHW feature maps. Internally everything runs in
// token layout [N*H*W, C] with row index ((n*H + y)*W + x); all layout moves
// are index-map gathers, exact and exactly invertible.

#include <map>

#include "hformer/params.hpp"
#include "hformer/tensor.hpp"

namespace hformer {

struct CatBlockConfig {
    int channels = 0;
    int patch = 4;  // p, pixels per window side
    int num_heads = 1;
    double mlp_ratio = 4.0;
    int mlp_layers = 2;
};

inline constexpr double kInitStd = 0.02;

template <class T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Linear() = default;

    Linear(ParamStore<T>& store, const std::string& prefix, int in, int out, std::mt19937_64& rng) {
        Tensor<T> w = Tensor<T>::zeros({in, out});
        fill_trunc_normal(w, rng, T(kInitStd));
        weight = store.add(prefix + ".weight", std::move(w), false);
        bias = store.add(prefix + ".bias", Tensor<T>::zeros({out}), true);
    }

    // Applies to the trailing axis; leading axes are carried through.
    Tensor<T> forward(const Tensor<T>& x) const {
        const int in = weight.shape[0], out = weight.shape[1];
        if (x.shape.back() != in) throw std::runtime_error("Linear: trailing axis mismatch");
        Shape out_shape = x.shape;
        out_shape.back() = out;
        Tensor<T> flat = reshape(x, {(int)(x.numel() / in), in});
        Tensor<T> y = add_rowvec(matmul(flat, weight), bias);
        return reshape(y, std::move(out_shape));
    }

    void set_identity() {
        std::fill(weight.data->begin(), weight.data->end(), T(0));
        const int in = weight.shape[0], out = weight.shape[1];
        for (int i = 0; i < std::min(in, out); ++i) (*weight.data)[i * out + i] = T(1);
        std::fill(bias.data->begin(), bias.data->end(), T(0));
    }

    void set_zero() {
        std::fill(weight.data->begin(), weight.data->end(), T(0));
        std::fill(bias.data->begin(), bias.data->end(), T(0));
    }
};

template <class T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;

    LayerNormLayer() = default;

    LayerNormLayer(ParamStore<T>& store, const std::string& prefix, int channels) {
        gamma = store.add(prefix + ".gamma", Tensor<T>::full({channels}, T(1)), true);
        beta = store.add(prefix + ".beta", Tensor<T>::zeros({channels}), true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <class T>
struct Mlp {
    std::vector<Linear<T>> layers;

    Mlp() = default;

    Mlp(ParamStore<T>& store, const std::string& prefix, int channels, double ratio, int n_layers,
        std::mt19937_64& rng) {
        if (n_layers < 1) throw std::runtime_error("Mlp: need at least one linear layer");
        const int hidden = std::max(1, (int)std::lround(channels * ratio));
        for (int i = 0; i < n_layers; ++i) {
            const int in = i == 0 ? channels : hidden;
            const int out = i == n_layers - 1 ? channels : hidden;
            layers.emplace_back(store, prefix + ".fc" + std::to_string(i), in, out, rng);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = layers[0].forward(x);
        for (size_t i = 1; i < layers.size(); ++i) h = layers[i].forward(gelu(h));
        return h;
    }
};

// ---------------------------------------------------------------------------
// Relative-position bias index tables

// Token pair (i, j) of a p x p window -> offset entry in a (2p-1)^2 table.
inline std::vector<int64_t> window_bias_index(int p) {
    const int t = p * p, span = 2 * p - 1;
    std::vector<int64_t> idx((size_t)t * t);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            const int dy = i / p - j / p + p - 1;
            const int dx = i % p - j % p + p - 1;
            idx[(size_t)i * t + j] = (int64_t)dy * span + dx;
        }
    return idx;
}

// Patch pair over a gh x gw patch grid -> entry in a (2gh-1)(2gw-1) table.
inline std::vector<int64_t> grid_bias_index(int gh, int gw) {
    const int t = gh * gw, span_x = 2 * gw - 1;
    std::vector<int64_t> idx((size_t)t * t);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            const int dy = i / gw - j / gw + gh - 1;
            const int dx = i % gw - j % gw + gw - 1;
            idx[(size_t)i * t + j] = (int64_t)dy * span_x + dx;
        }
    return idx;
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention, Eq.-style: SoftMax(Q K^T / sqrt(d) + B) V.
// q, k, v: [B, T, C]; bias: empty, or [B * num_heads, T, T] matching the
// score tensor. Heads are split from C, attended independently, and
// concatenated back; no output projection here.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& bias,
                    int num_heads = 1) {
    if (q.shape.size() != 3 || k.shape.size() != 3 || v.shape.size() != 3)
        throw std::runtime_error("attention: q/k/v must be [B,T,C]");
    const int b = q.shape[0], tq = q.shape[1], c = q.shape[2];
    const int tk = k.shape[1];
    if (k.shape[0] != b || k.shape[2] != c || v.shape[0] != b || v.shape[1] != tk || v.shape[2] != c)
        throw std::runtime_error("attention: q/k/v shapes disagree");
    if (c % num_heads != 0) throw std::runtime_error("attention: channels not divisible by heads");
    const int d = c / num_heads;

    // (b, h, t, d) <- flat index of (b, t, h*d + d) in the [B,T,C] layout
    auto head_split = [&](int tokens) {
        std::vector<int64_t> split((size_t)b * tokens * c);
        int64_t o = 0;
        for (int bi = 0; bi < b; ++bi)
            for (int h = 0; h < num_heads; ++h)
                for (int ti = 0; ti < tokens; ++ti)
                    for (int di = 0; di < d; ++di) split[o++] = ((int64_t)(bi * tokens + ti)) * c + h * d + di;
        return make_index_map(std::move(split));
    };

    Tensor<T> qh = q, kh = k, vh = v;
    IndexMap merge_idx;
    if (num_heads > 1) {
        IndexMap split_q = head_split(tq);
        IndexMap split_kv = head_split(tk);
        std::vector<int64_t> merge((size_t)b * tq * c);
        int64_t o = 0;
        for (int bi = 0; bi < b; ++bi)
            for (int ti = 0; ti < tq; ++ti)
                for (int ci = 0; ci < c; ++ci) {
                    const int h = ci / d, di = ci % d;
                    merge[o++] = (((int64_t)(bi * num_heads + h) * tq) + ti) * d + di;
                }
        merge_idx = make_index_map(std::move(merge));
        qh = take(q, split_q, {b * num_heads, tq, d});
        kh = take(k, split_kv, {b * num_heads, tk, d});
        vh = take(v, split_kv, {b * num_heads, tk, d});
    }
    Tensor<T> scores = scale(bmm(qh, kh, false, true), T(1) / std::sqrt(T(d)));
    if (bias.data && bias.numel() > 0) {
        if (bias.shape != scores.shape)
            throw std::runtime_error("attention: bias shape " + shape_str(bias.shape) +
                                     " does not match scores " + shape_str(scores.shape));
        scores = add(scores, bias);
    }
    Tensor<T> weights = softmax(scores, 2);
    Tensor<T> out = bmm(weights, vh);
    if (num_heads > 1) out = take(out, merge_idx, {b, tq, c});
    return out;
}

namespace detail {

// Gather indices from token layout [N*H*W, C] into IPSA windows
// [N*nwy*nwx, p*p, C] and back.
struct WindowMaps {
    IndexMap to_windows;
    IndexMap from_windows;
};

inline WindowMaps build_window_maps(int n, int c, int h, int w, int p) {
    const int nwy = h / p, nwx = w / p;
    const int64_t total = (int64_t)n * h * w * c;
    std::vector<int64_t> fwd(total), inv(total);
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int wy = 0; wy < nwy; ++wy)
            for (int wx = 0; wx < nwx; ++wx)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        for (int ci = 0; ci < c; ++ci) {
                            const int64_t tok = ((int64_t)ni * h + (wy * p + dy)) * w + (wx * p + dx);
                            fwd[o] = tok * c + ci;
                            inv[tok * c + ci] = o;
                            ++o;
                        }
    WindowMaps m;
    m.to_windows = make_index_map(std::move(fwd));
    m.from_windows = make_index_map(std::move(inv));
    return m;
}

// Gather indices from token layout [N*H*W, C] into CPSA per-channel patch
// tokens [N*C, nP, p*p] and back.
inline WindowMaps build_patch_maps(int n, int c, int h, int w, int p) {
    const int gh = h / p, gw = w / p;
    const int64_t total = (int64_t)n * h * w * c;
    std::vector<int64_t> fwd(total), inv(total);
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int py = 0; py < gh; ++py)
                for (int px = 0; px < gw; ++px)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx) {
                            const int64_t tok = ((int64_t)ni * h + (py * p + dy)) * w + (px * p + dx);
                            fwd[o] = tok * c + ci;
                            inv[tok * c + ci] = o;
                            ++o;
                        }
    WindowMaps m;
    m.to_windows = make_index_map(std::move(fwd));
    m.from_windows = make_index_map(std::move(inv));
    return m;
}

// Expands a bias table to the [B*heads, T, T] score shape via repeated
// lookups; entry (b, h, i, j) reads table[h * per_head + pair_idx(i, j)].
inline IndexMap expand_bias_index(const std::vector<int64_t>& pair_idx, int batch, int heads,
                                  int64_t per_head) {
    const int64_t tt = (int64_t)pair_idx.size();
    std::vector<int64_t> idx((size_t)batch * heads * tt);
    int64_t o = 0;
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
            for (int64_t ij = 0; ij < tt; ++ij) idx[o++] = h * per_head + pair_idx[ij];
    return make_index_map(std::move(idx));
}

}  // namespace detail

// Inner-patch self-attention over a fixed H x W stage size: the p*p pixels
// of each non-overlapping window are the tokens.
template <class T>
struct Ipsa {
    int channels = 0, h = 0, w = 0, p = 0, heads = 1;
    Linear<T> q, k, v, proj;
    Tensor<T> bias_table;  // [heads * (2p-1)^2]
    std::vector<int64_t> pair_idx;
    mutable std::map<int, detail::WindowMaps> window_cache;
    mutable std::map<int, IndexMap> bias_cache;

    Ipsa() = default;

    Ipsa(ParamStore<T>& store, const std::string& prefix, int channels_, int h_, int w_, int p_,
         int heads_, std::mt19937_64& rng)
        : channels(channels_), h(h_), w(w_), p(p_), heads(heads_) {
        if (p < 1 || h % p != 0 || w % p != 0)
            throw std::runtime_error("Ipsa: stage size " + std::to_string(h) + "x" + std::to_string(w) +
                                     " not divisible by patch " + std::to_string(p));
        if (channels % heads != 0) throw std::runtime_error("Ipsa: channels not divisible by heads");
        q = Linear<T>(store, prefix + ".q", channels, channels, rng);
        k = Linear<T>(store, prefix + ".k", channels, channels, rng);
        v = Linear<T>(store, prefix + ".v", channels, channels, rng);
        proj = Linear<T>(store, prefix + ".proj", channels, channels, rng);
        const int span = 2 * p - 1;
        bias_table = store.add(prefix + ".rel_bias", Tensor<T>::zeros({heads * span * span}), true);
        pair_idx = window_bias_index(p);
    }

    // tokens: [N*H*W, C] for this stage's fixed H, W.
    Tensor<T> forward(const Tensor<T>& tokens, int n) const {
        const int nwin = n * (h / p) * (w / p);
        const int t = p * p;
        auto wit = window_cache.find(n);
        if (wit == window_cache.end())
            wit = window_cache.emplace(n, detail::build_window_maps(n, channels, h, w, p)).first;
        auto bit = bias_cache.find(nwin);
        if (bit == bias_cache.end())
            bit = bias_cache
                      .emplace(nwin, detail::expand_bias_index(pair_idx, nwin, heads,
                                                               (int64_t)(2 * p - 1) * (2 * p - 1)))
                      .first;
        Tensor<T> win = take(tokens, wit->second.to_windows, {nwin, t, channels});
        Tensor<T> bias = take(bias_table, bit->second, {nwin * heads, t, t});
        Tensor<T> att = attention(q.forward(win), k.forward(win), v.forward(win), bias, heads);
        Tensor<T> out = proj.forward(att);
        return take(out, wit->second.from_windows, {n * h * w, channels});
    }
};

// Cross-patch self-attention: each channel map is split into p x p patches;
// the patches are the tokens (dimension p*p), attended single-head per
// channel with a patch-grid relative-position bias.
template <class T>
struct Cpsa {
    int channels = 0, h = 0, w = 0, p = 0;
    Linear<T> q, k, v, proj;
    Tensor<T> bias_table;  // [(2gh-1)*(2gw-1)]
    std::vector<int64_t> pair_idx;
    mutable std::map<int, detail::WindowMaps> patch_cache;
    mutable std::map<int, IndexMap> bias_cache;

    Cpsa() = default;

    Cpsa(ParamStore<T>& store, const std::string& prefix, int channels_, int h_, int w_, int p_,
         std::mt19937_64& rng)
        : channels(channels_), h(h_), w(w_), p(p_) {
        if (p < 1 || h % p != 0 || w % p != 0) throw std::runtime_error("Cpsa: stage size not divisible by patch");
        const int dim = p * p;
        q = Linear<T>(store, prefix + ".q", dim, dim, rng);
        k = Linear<T>(store, prefix + ".k", dim, dim, rng);
        v = Linear<T>(store, prefix + ".v", dim, dim, rng);
        proj = Linear<T>(store, prefix + ".proj", dim, dim, rng);
        const int gh = h / p, gw = w / p;
        bias_table = store.add(prefix + ".rel_bias", Tensor<T>::zeros({(2 * gh - 1) * (2 * gw - 1)}), true);
        pair_idx = grid_bias_index(gh, gw);
    }

    Tensor<T> forward(const Tensor<T>& tokens, int n) const {
        const int gh = h / p, gw = w / p, np = gh * gw, dim = p * p;
        const int batch = n * channels;
        auto pit = patch_cache.find(n);
        if (pit == patch_cache.end())
            pit = patch_cache.emplace(n, detail::build_patch_maps(n, channels, h, w, p)).first;
        auto bit = bias_cache.find(batch);
        if (bit == bias_cache.end())
            bit = bias_cache.emplace(batch, detail::expand_bias_index(pair_idx, batch, 1, 0)).first;
        Tensor<T> tok = take(tokens, pit->second.to_windows, {batch, np, dim});
        Tensor<T> bias = take(bias_table, bit->second, {batch, np, np});
        Tensor<T> att = attention(q.forward(tok), k.forward(tok), v.forward(tok), bias, 1);
        Tensor<T> out = proj.forward(att);
        return take(out, pit->second.from_windows, {n * h * w, channels});
    }
};

namespace detail {

// [N,C,H,W] <-> token layout [N*H*W, C] gather maps.
inline WindowMaps build_token_maps(int n, int c, int h, int w) {
    const int64_t total = (int64_t)n * c * h * w;
    std::vector<int64_t> fwd(total), inv(total);
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ci = 0; ci < c; ++ci) {
                    const int64_t nchw = (((int64_t)ni * c + ci) * h + y) * w + x;
                    fwd[o] = nchw;
                    inv[nchw] = o;
                    ++o;
                }
    WindowMaps m;
    m.to_windows = make_index_map(std::move(fwd));
    m.from_windows = make_index_map(std::move(inv));
    return m;
}

}  // namespace detail

// The six-step pre-norm residual unit:
//   I1 = IPSA(LN(x)) + x
//   M1 = MLP(LN(I1)) + I1
//   C  = CPSA(LN(M1)) + M1
//   M2 = MLP(LN(C))  + C
//   I2 = IPSA(LN(M2)) + M2
//   y  = MLP(LN(I2)) + I2
template <class T>
struct CatBlock {
    CatBlockConfig cfg;
    int h = 0, w = 0;
    LayerNormLayer<T> ln1, ln2, ln3, ln4, ln5, ln6;
    Ipsa<T> ipsa_a, ipsa_b;
    Cpsa<T> cpsa;
    Mlp<T> mlp_a, mlp_b, mlp_c;
    mutable std::map<int, detail::WindowMaps> token_cache;

    CatBlock() = default;

    CatBlock(ParamStore<T>& store, const std::string& prefix, const CatBlockConfig& cfg_, int h_, int w_,
             std::mt19937_64& rng)
        : cfg(cfg_), h(h_), w(w_) {
        const int c = cfg.channels;
        ln1 = LayerNormLayer<T>(store, prefix + ".ln1", c);
        ipsa_a = Ipsa<T>(store, prefix + ".ipsa_a", c, h, w, cfg.patch, cfg.num_heads, rng);
        ln2 = LayerNormLayer<T>(store, prefix + ".ln2", c);
        mlp_a = Mlp<T>(store, prefix + ".mlp_a", c, cfg.mlp_ratio, cfg.mlp_layers, rng);
        ln3 = LayerNormLayer<T>(store, prefix + ".ln3", c);
        cpsa = Cpsa<T>(store, prefix + ".cpsa", c, h, w, cfg.patch, rng);
        ln4 = LayerNormLayer<T>(store, prefix + ".ln4", c);
        mlp_b = Mlp<T>(store, prefix + ".mlp_b", c, cfg.mlp_ratio, cfg.mlp_layers, rng);
        ln5 = LayerNormLayer<T>(store, prefix + ".ln5", c);
        ipsa_b = Ipsa<T>(store, prefix + ".ipsa_b", c, h, w, cfg.patch, cfg.num_heads, rng);
        ln6 = LayerNormLayer<T>(store, prefix + ".ln6", c);
        mlp_c = Mlp<T>(store, prefix + ".mlp_c", c, cfg.mlp_ratio, cfg.mlp_layers, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.shape.size() != 4 || x.shape[1] != cfg.channels || x.shape[2] != h || x.shape[3] != w)
            throw std::runtime_error("CatBlock: expected [N," + std::to_string(cfg.channels) + "," +
                                     std::to_string(h) + "," + std::to_string(w) + "], got " +
                                     shape_str(x.shape));
        const int n = x.shape[0];
        auto tit = token_cache.find(n);
        if (tit == token_cache.end())
            tit = token_cache.emplace(n, detail::build_token_maps(n, cfg.channels, h, w)).first;

        Tensor<T> t = take(x, tit->second.to_windows, {n * h * w, cfg.channels});
        t = add(ipsa_a.forward(ln1.forward(t), n), t);
        t = add(mlp_a.forward(ln2.forward(t)), t);
        t = add(cpsa.forward(ln3.forward(t), n), t);
        t = add(mlp_b.forward(ln4.forward(t)), t);
        t = add(ipsa_b.forward(ln5.forward(t), n), t);
        t = add(mlp_c.forward(ln6.forward(t)), t);
        return take(t, tit->second.from_windows, {n, cfg.channels, h, w});
    }

    // Zeroes every residual branch's last linear map (attention output
    // projections and final MLP layers), making the block an exact identity.
    void zero_residual_branches() {
        ipsa_a.proj.set_zero();
        ipsa_b.proj.set_zero();
        cpsa.proj.set_zero();
        for (Mlp<T>* m : {&mlp_a, &mlp_b, &mlp_c}) m->layers.back().set_zero();
    }
};

}  // namespace hformer
