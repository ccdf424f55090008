#pragma once

// The fringe-order predictor: a strided-conv backbone producing a four-scale
// feature ladder, a CAT-block encoder with patch projections and per-stage
// backbone fusion, a mirrored decoder with patch expanding and skip
// connections, and a multi-scale fusion head emitting per-pixel class
// logits.

#include <array>

#include "hformer/conv.hpp"
#include "hformer/layers.hpp"

namespace hformer {

struct HformerConfig {
    int height = 64, width = 64;  // input size the model instance is built for
    int base_channels = 8;        // C, channels of the finest stage
    int stage_multiplier = 4;     // m, channel growth per 2x downsample
    int blocks_per_stage = 1;
    std::array<int, 4> patch_sizes = {4, 4, 4, 4};  // clamped per stage
    int num_classes = 34;
    int num_heads = 1;
    double mlp_ratio = 4.0;
    int mlp_layers = 2;
    enum class HeadMode { kImprovedFpn, kSingle };
    HeadMode head_mode = HeadMode::kImprovedFpn;
    enum class PosKind { kSinusoidal, kNone };
    PosKind pos_encoding = PosKind::kSinusoidal;
    bool pos_every_stage = true;        // inject position info at stages 2-4 too
    bool backbone_gelu = true;          // disabling leaves a purely affine backbone
    bool projection_layernorm = true;   // LN inside patch projection

    int stage_channels(int i) const {  // i in [0,4)
        int c = base_channels;
        for (int s = 0; s < i; ++s) c *= stage_multiplier;
        return c;
    }
    int stage_h(int i) const { return height / (4 << i); }
    int stage_w(int i) const { return width / (4 << i); }
    int stage_patch(int i) const {
        return std::max(1, std::min({patch_sizes[(size_t)i], stage_h(i), stage_w(i)}));
    }

    void validate() const {
        if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0)
            throw std::runtime_error("model: height and width must be positive multiples of 32");
        if (base_channels < 1 || stage_multiplier < 1) throw std::runtime_error("model: bad channel config");
        if (blocks_per_stage < 1) throw std::runtime_error("model: blocks_per_stage must be >= 1");
        if (num_classes < 2) throw std::runtime_error("model: num_classes must be >= 2");
        if (mlp_layers < 1 || mlp_ratio <= 0) throw std::runtime_error("model: bad MLP config");
        for (int i = 0; i < 4; ++i) {
            const int p = stage_patch(i);
            if (stage_h(i) % p != 0 || stage_w(i) % p != 0)
                throw std::runtime_error("model: stage " + std::to_string(i + 1) + " size " +
                                         std::to_string(stage_h(i)) + "x" + std::to_string(stage_w(i)) +
                                         " not divisible by patch " + std::to_string(p));
            if (stage_channels(i) % num_heads != 0)
                throw std::runtime_error("model: stage channels not divisible by num_heads");
        }
    }
};

template <class T>
struct Conv2dLayer {
    Tensor<T> weight, bias;
    int stride = 1, padding = 0;

    Conv2dLayer() = default;

    Conv2dLayer(ParamStore<T>& store, const std::string& prefix, int in, int out, int k, int stride_,
                int padding_, std::mt19937_64& rng)
        : stride(stride_), padding(padding_) {
        Tensor<T> w = Tensor<T>::zeros({out, in, k, k});
        fill_trunc_normal(w, rng, T(kInitStd));
        weight = store.add(prefix + ".weight", std::move(w), false);
        bias = store.add(prefix + ".bias", Tensor<T>::zeros({out}), true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

// Fixed 2-D sinusoidal position table (rows in the first half of the
// channels, columns in the second) added through a learnable scalar gate.
template <class T>
struct PositionEncoding {
    Tensor<T> table;  // [C,H,W], constant
    Tensor<T> gate;   // [1], learnable, init 1

    PositionEncoding() = default;

    PositionEncoding(ParamStore<T>& store, const std::string& prefix, int c, int h, int w) {
        table = Tensor<T>::zeros({c, h, w});
        const int row_ch = (c + 1) / 2;
        const int col_ch = c - row_ch;
        auto fill = [&](int base, int nch, bool use_row) {
            for (int cc = 0; cc < nch; ++cc) {
                const int k = cc / 2;
                const double denom = std::pow(10000.0, (2.0 * k) / std::max(1, nch));
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const double pos = use_row ? y : x;
                        const double v = (cc % 2 == 0) ? std::sin(pos / denom) : std::cos(pos / denom);
                        (*table.data)[((int64_t)(base + cc) * h + y) * w + x] = T(v);
                    }
            }
        };
        fill(0, row_ch, true);
        fill(row_ch, col_ch, false);
        gate = store.add(prefix + ".gate", Tensor<T>::full({1}, T(1)), true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return add_scaled_broadcast(x, table, gate); }
};

// Two stride-2 stem convolutions to H/4, then three stride-2 convolutions
// growing channels by m per step: the four-scale feature ladder.
template <class T>
struct Backbone {
    Conv2dLayer<T> stem1, stem2, down2, down3, down4;
    bool use_gelu = true;

    Backbone() = default;

    Backbone(ParamStore<T>& store, const HformerConfig& cfg, std::mt19937_64& rng) : use_gelu(cfg.backbone_gelu) {
        const int c = cfg.base_channels, m = cfg.stage_multiplier;
        stem1 = Conv2dLayer<T>(store, "backbone.stem1", 1, c, 3, 2, 1, rng);
        stem2 = Conv2dLayer<T>(store, "backbone.stem2", c, c, 3, 2, 1, rng);
        down2 = Conv2dLayer<T>(store, "backbone.down2", c, c * m, 3, 2, 1, rng);
        down3 = Conv2dLayer<T>(store, "backbone.down3", c * m, c * m * m, 3, 2, 1, rng);
        down4 = Conv2dLayer<T>(store, "backbone.down4", c * m * m, c * m * m * m, 3, 2, 1, rng);
    }

    Tensor<T> act(const Tensor<T>& x) const { return use_gelu ? gelu(x) : x; }

    std::array<Tensor<T>, 4> forward(const Tensor<T>& x) const {
        std::array<Tensor<T>, 4> feats;
        Tensor<T> s = act(stem2.forward(act(stem1.forward(x))));
        feats[0] = s;
        feats[1] = act(down2.forward(feats[0]));
        feats[2] = act(down3.forward(feats[1]));
        feats[3] = act(down4.forward(feats[2]));
        return feats;
    }
};

namespace detail {

// [N,C,H,W] -> space-to-depth tokens [N*(H/2)*(W/2), 4C] (position-major:
// feature index = (dy*2+dx)*C + c) and the inverse for depth-to-space, where
// the token matrix [N*H*W, 4C'] scatters back to [N,4C'/4? ...]; both maps
// are plain bijections.
inline IndexMap s2d_token_map(int n, int c, int h, int w) {
    const int h2 = h / 2, w2 = w / 2;
    std::vector<int64_t> idx((size_t)n * h2 * w2 * 4 * c);
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int y2 = 0; y2 < h2; ++y2)
            for (int x2 = 0; x2 < w2; ++x2)
                for (int pos = 0; pos < 4; ++pos)
                    for (int ci = 0; ci < c; ++ci) {
                        const int y = y2 * 2 + pos / 2, x = x2 * 2 + pos % 2;
                        idx[o++] = (((int64_t)ni * c + ci) * h + y) * w + x;
                    }
    return make_index_map(std::move(idx));
}

// tokens [N*H*W, 4C] -> [N,C,2H,2W] with the matching position-major order.
inline IndexMap d2s_map(int n, int c_out, int h, int w) {
    std::vector<int64_t> idx((size_t)n * c_out * 4 * h * w);
    int64_t o = 0;
    const int64_t tok_w = 4 * c_out;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c_out; ++ci)
            for (int y = 0; y < 2 * h; ++y)
                for (int x = 0; x < 2 * w; ++x) {
                    const int pos = (y % 2) * 2 + (x % 2);
                    const int64_t tok = ((int64_t)ni * h + y / 2) * w + x / 2;
                    idx[o++] = tok * tok_w + pos * c_out + ci;
                }
    return make_index_map(std::move(idx));
}

// [N,C,H,W] -> [N,C,H+2,W+2] with clamped (replicate) borders, so constant
// maps stay constant through the following padding-free convolution.
inline IndexMap replicate_pad1_map(int n, int c, int h, int w) {
    std::vector<int64_t> idx((size_t)n * c * (h + 2) * (w + 2));
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = -1; y <= h; ++y)
                for (int x = -1; x <= w; ++x) {
                    const int yy = std::clamp(y, 0, h - 1), xx = std::clamp(x, 0, w - 1);
                    idx[o++] = (((int64_t)ni * c + ci) * h + yy) * w + xx;
                }
    return make_index_map(std::move(idx));
}

// tokens [N*H*W, C] -> [N,C,H,W]
inline IndexMap tokens_to_nchw_map(int n, int c, int h, int w) {
    std::vector<int64_t> idx((size_t)n * c * h * w);
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) idx[o++] = (((int64_t)ni * h + y) * w + x) * c + ci;
    return make_index_map(std::move(idx));
}

// [N,C,H,W] -> tokens [N*H*W, C]
inline IndexMap nchw_to_tokens_map(int n, int c, int h, int w) {
    std::vector<int64_t> idx((size_t)n * c * h * w);
    int64_t o = 0;
    for (int ni = 0; ni < n; ++ni)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ci = 0; ci < c; ++ci) idx[o++] = (((int64_t)ni * c + ci) * h + y) * w + x;
    return make_index_map(std::move(idx));
}

}  // namespace detail

// 2x2 space-to-depth, LN, linear 4C -> mC: learned 2x downsampling.
template <class T>
struct PatchProjection {
    int c_in = 0, c_out = 0, h = 0, w = 0;  // h, w: input stage size
    bool use_ln = true;
    LayerNormLayer<T> ln;
    Linear<T> linear;
    mutable std::map<int, std::pair<IndexMap, IndexMap>> maps;  // per batch size

    PatchProjection() = default;

    PatchProjection(ParamStore<T>& store, const std::string& prefix, int c_in_, int c_out_, int h_, int w_,
                    bool use_ln_, std::mt19937_64& rng)
        : c_in(c_in_), c_out(c_out_), h(h_), w(w_), use_ln(use_ln_) {
        if (h % 2 != 0 || w % 2 != 0) throw std::runtime_error("PatchProjection: extents must be even");
        if (use_ln) ln = LayerNormLayer<T>(store, prefix + ".ln", 4 * c_in);
        linear = Linear<T>(store, prefix + ".linear", 4 * c_in, c_out, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const int n = x.shape[0];
        auto it = maps.find(n);
        if (it == maps.end())
            it = maps.emplace(n, std::pair{detail::s2d_token_map(n, c_in, h, w),
                                           detail::tokens_to_nchw_map(n, c_out, h / 2, w / 2)})
                     .first;
        Tensor<T> tok = take(x, it->second.first, {n * (h / 2) * (w / 2), 4 * c_in});
        if (use_ln) tok = ln.forward(tok);
        tok = linear.forward(tok);
        return take(tok, it->second.second, {n, c_out, h / 2, w / 2});
    }
};

// Linear C -> 4*(C/m), depth-to-space: learned 2x upsampling.
template <class T>
struct PatchExpanding {
    int c_in = 0, c_out = 0, h = 0, w = 0;  // h, w: input stage size
    Linear<T> linear;
    mutable std::map<int, std::pair<IndexMap, IndexMap>> maps;

    PatchExpanding() = default;

    PatchExpanding(ParamStore<T>& store, const std::string& prefix, int c_in_, int multiplier, int h_,
                   int w_, std::mt19937_64& rng)
        : c_in(c_in_), c_out(c_in_ / multiplier), h(h_), w(w_) {
        if (c_in % multiplier != 0) throw std::runtime_error("PatchExpanding: channels not divisible by m");
        linear = Linear<T>(store, prefix + ".linear", c_in, 4 * c_out, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const int n = x.shape[0];
        auto it = maps.find(n);
        if (it == maps.end())
            it = maps.emplace(n, std::pair{detail::nchw_to_tokens_map(n, c_in, h, w),
                                           detail::d2s_map(n, c_out, h, w)})
                     .first;
        Tensor<T> tok = take(x, it->second.first, {n * h * w, c_in});
        tok = linear.forward(tok);
        return take(tok, it->second.second, {n, c_out, 2 * h, 2 * w});
    }
};

template <class T>
struct EncoderStage {
    std::vector<CatBlock<T>> blocks;

    Tensor<T> run(const Tensor<T>& x) const {
        Tensor<T> t = x;
        for (const auto& b : blocks) t = b.forward(t);
        return t;
    }
};

// Four encoder stages; stages 2-4 fuse the projected previous stage with a
// position-encoded, channel-projected backbone feature by element-wise
// addition. The fourth stage has no trailing projection.
template <class T>
struct Encoder {
    const HformerConfig* cfg = nullptr;
    std::array<EncoderStage<T>, 4> stages;
    std::array<PositionEncoding<T>, 4> pos;
    std::array<bool, 4> pos_active = {false, false, false, false};
    std::array<Conv2dLayer<T>, 4> fuse;  // index 1..3 used
    std::array<PatchProjection<T>, 3> proj;

    Encoder() = default;

    Encoder(ParamStore<T>& store, const HformerConfig& cfg_, std::mt19937_64& rng) : cfg(&cfg_) {
        for (int i = 0; i < 4; ++i) {
            const bool want_pos = cfg->pos_encoding == HformerConfig::PosKind::kSinusoidal &&
                                  (i == 0 || cfg->pos_every_stage);
            if (want_pos) {
                pos[(size_t)i] = PositionEncoding<T>(store, "enc.pos" + std::to_string(i + 1),
                                                     cfg->stage_channels(i), cfg->stage_h(i), cfg->stage_w(i));
                pos_active[(size_t)i] = true;
            }
        }
        for (int i = 1; i < 4; ++i)
            fuse[(size_t)i] = Conv2dLayer<T>(store, "enc.fuse" + std::to_string(i + 1), cfg->stage_channels(i),
                                             cfg->stage_channels(i), 1, 1, 0, rng);
        for (int i = 0; i < 3; ++i)
            proj[(size_t)i] = PatchProjection<T>(store, "enc.proj" + std::to_string(i + 1), cfg->stage_channels(i),
                                                 cfg->stage_channels(i + 1), cfg->stage_h(i), cfg->stage_w(i),
                                                 cfg->projection_layernorm, rng);
        for (int i = 0; i < 4; ++i) {
            CatBlockConfig bc;
            bc.channels = cfg->stage_channels(i);
            bc.patch = cfg->stage_patch(i);
            bc.num_heads = cfg->num_heads;
            bc.mlp_ratio = cfg->mlp_ratio;
            bc.mlp_layers = cfg->mlp_layers;
            for (int b = 0; b < cfg->blocks_per_stage; ++b)
                stages[(size_t)i].blocks.emplace_back(store, "enc.s" + std::to_string(i + 1) + ".b" + std::to_string(b),
                                                      bc, cfg->stage_h(i), cfg->stage_w(i), rng);
        }
    }

    std::array<Tensor<T>, 4> forward(const std::array<Tensor<T>, 4>& feats) const {
        std::array<Tensor<T>, 4> outs;
        Tensor<T> x = pos_active[0] ? pos[0].forward(feats[0]) : feats[0];
        outs[0] = stages[0].run(x);
        for (int i = 1; i < 4; ++i) {
            Tensor<T> lateral = pos_active[(size_t)i] ? pos[(size_t)i].forward(feats[(size_t)i]) : feats[(size_t)i];
            lateral = fuse[(size_t)i].forward(lateral);
            Tensor<T> merged = add(proj[(size_t)i - 1].forward(outs[(size_t)i - 1]), lateral);
            outs[(size_t)i] = stages[(size_t)i].run(merged);
        }
        return outs;
    }
};

// Mirrored decoder: the coarsest stage runs CAT blocks directly on the
// encoder's last output; each following stage expands 2x, concatenates the
// matching-scale encoder output and projects back to the stage width.
template <class T>
struct Decoder {
    const HformerConfig* cfg = nullptr;
    std::array<EncoderStage<T>, 4> stages;          // index 0 = coarsest
    std::array<PatchExpanding<T>, 3> expand;        // between stages
    std::array<Conv2dLayer<T>, 4> merge;            // index 1..3 used

    Decoder() = default;

    Decoder(ParamStore<T>& store, const HformerConfig& cfg_, std::mt19937_64& rng) : cfg(&cfg_) {
        for (int j = 0; j < 3; ++j) {
            const int enc_stage = 3 - j;  // input scale of the expansion
            expand[(size_t)j] = PatchExpanding<T>(store, "dec.expand" + std::to_string(j + 1),
                                                  cfg->stage_channels(enc_stage), cfg->stage_multiplier,
                                                  cfg->stage_h(enc_stage), cfg->stage_w(enc_stage), rng);
        }
        for (int j = 1; j < 4; ++j) {
            const int c = cfg->stage_channels(3 - j);
            merge[(size_t)j] = Conv2dLayer<T>(store, "dec.merge" + std::to_string(j + 1), 2 * c, c, 1, 1, 0, rng);
        }
        for (int j = 0; j < 4; ++j) {
            const int stage = 3 - j;
            CatBlockConfig bc;
            bc.channels = cfg->stage_channels(stage);
            bc.patch = cfg->stage_patch(stage);
            bc.num_heads = cfg->num_heads;
            bc.mlp_ratio = cfg->mlp_ratio;
            bc.mlp_layers = cfg->mlp_layers;
            for (int b = 0; b < cfg->blocks_per_stage; ++b)
                stages[(size_t)j].blocks.emplace_back(store, "dec.s" + std::to_string(j + 1) + ".b" + std::to_string(b),
                                                      bc, cfg->stage_h(stage), cfg->stage_w(stage), rng);
        }
    }

    // enc[0..3] fine -> coarse; returns dec[0..3] coarse -> fine.
    std::array<Tensor<T>, 4> forward(const std::array<Tensor<T>, 4>& enc) const {
        std::array<Tensor<T>, 4> outs;
        outs[0] = stages[0].run(enc[3]);
        for (int j = 1; j < 4; ++j) {
            Tensor<T> up = expand[(size_t)j - 1].forward(outs[(size_t)j - 1]);
            Tensor<T> skip = enc[(size_t)(3 - j)];
            Tensor<T> merged = merge[(size_t)j].forward(concat_channels<T>({up, skip}));
            outs[(size_t)j] = stages[(size_t)j].run(merged);
        }
        return outs;
    }
};

// Multi-scale fusion head: resize every decoder output to the finest decoder
// scale, concatenate, 3x3 conv to class logits, then 4x bilinear upsampling
// to the input resolution. Single-output mode uses only the finest map.
template <class T>
struct FusionHead {
    const HformerConfig* cfg = nullptr;
    int in_ch = 0;
    Conv2dLayer<T> out_conv;
    mutable std::map<int, IndexMap> pad_cache;

    FusionHead() = default;

    FusionHead(ParamStore<T>& store, const HformerConfig& cfg_, std::mt19937_64& rng) : cfg(&cfg_) {
        in_ch = cfg->stage_channels(0);
        if (cfg->head_mode == HformerConfig::HeadMode::kImprovedFpn)
            in_ch = cfg->stage_channels(0) + cfg->stage_channels(1) + cfg->stage_channels(2) + cfg->stage_channels(3);
        out_conv = Conv2dLayer<T>(store, "head.out", in_ch, cfg->num_classes, 3, 1, 0, rng);
    }

    Tensor<T> forward(const std::array<Tensor<T>, 4>& dec) const {
        const int fh = cfg->stage_h(0), fw = cfg->stage_w(0);
        Tensor<T> fused;
        if (cfg->head_mode == HformerConfig::HeadMode::kImprovedFpn) {
            std::vector<Tensor<T>> up;
            for (int j = 0; j < 4; ++j) {
                const Tensor<T>& d = dec[(size_t)j];
                up.push_back(d.shape[2] == fh && d.shape[3] == fw ? d : bilinear_resize(d, fh, fw));
            }
            fused = concat_channels<T>(up);
        } else {
            fused = dec[3];
        }
        const int n = fused.shape[0];
        auto it = pad_cache.find(n);
        if (it == pad_cache.end())
            it = pad_cache.emplace(n, detail::replicate_pad1_map(n, in_ch, fh, fw)).first;
        Tensor<T> padded = take(fused, it->second, {n, in_ch, fh + 2, fw + 2});
        Tensor<T> logits = out_conv.forward(padded);
        return bilinear_resize(logits, cfg->height, cfg->width);
    }
};

template <class T>
class Model {
  public:
    explicit Model(const HformerConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(mix64(seed, 0x40de1ull));
        backbone_ = Backbone<T>(params_, cfg_, rng);
        encoder_ = Encoder<T>(params_, cfg_, rng);
        decoder_ = Decoder<T>(params_, cfg_, rng);
        head_ = FusionHead<T>(params_, cfg_, rng);
    }

    const HformerConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.shape.size() != 4 || x.shape[1] != 1 || x.shape[2] != cfg_.height || x.shape[3] != cfg_.width)
            throw std::runtime_error("Model::forward: expected [N,1," + std::to_string(cfg_.height) + "," +
                                     std::to_string(cfg_.width) + "], got " + shape_str(x.shape));
        return head_.forward(decoder_.forward(encoder_.forward(backbone_.forward(x))));
    }

    Backbone<T>& backbone() { return backbone_; }
    Encoder<T>& encoder() { return encoder_; }
    Decoder<T>& decoder() { return decoder_; }
    FusionHead<T>& head() { return head_; }

    void zero_branch_all_blocks() {
        for (auto& st : encoder_.stages)
            for (auto& b : st.blocks) b.zero_residual_branches();
        for (auto& st : decoder_.stages)
            for (auto& b : st.blocks) b.zero_residual_branches();
    }

  private:
    HformerConfig cfg_;
    ParamStore<T> params_;
    Backbone<T> backbone_;
    Encoder<T> encoder_;
    Decoder<T> decoder_;
    FusionHead<T> head_;
};

// Closed-form parameter count from the configuration alone; the model
// construction must match it exactly.
inline int64_t expected_param_count(const HformerConfig& cfg) {
    auto linear = [](int64_t in, int64_t out) { return in * out + out; };
    auto conv = [](int64_t in, int64_t out, int64_t k) { return out * in * k * k + out; };
    auto mlp = [&](int64_t c) {
        const int64_t hid = std::max<int64_t>(1, std::llround(c * cfg.mlp_ratio));
        int64_t n = 0;
        for (int i = 0; i < cfg.mlp_layers; ++i) {
            const int64_t in = i == 0 ? c : hid;
            const int64_t out = i == cfg.mlp_layers - 1 ? c : hid;
            n += linear(in, out);
        }
        return n;
    };
    auto cat_block = [&](int stage) {
        const int64_t c = cfg.stage_channels(stage);
        const int p = cfg.stage_patch(stage);
        const int gh = cfg.stage_h(stage) / p, gw = cfg.stage_w(stage) / p;
        int64_t n = 6 * 2 * c;                                        // layer norms
        n += 2 * (4 * linear(c, c) + (int64_t)cfg.num_heads * (2 * p - 1) * (2 * p - 1));  // two IPSAs
        n += 4 * linear(p * p, p * p) + (int64_t)(2 * gh - 1) * (2 * gw - 1);              // one CPSA
        n += 3 * mlp(c);
        return n;
    };

    const int64_t c = cfg.base_channels, m = cfg.stage_multiplier;
    int64_t total = 0;
    total += conv(1, c, 3) + conv(c, c, 3);                      // stem
    total += conv(c, c * m, 3) + conv(c * m, c * m * m, 3) + conv(c * m * m, c * m * m * m, 3);
    for (int i = 0; i < 4; ++i) {                                // encoder
        const bool want_pos =
            cfg.pos_encoding == HformerConfig::PosKind::kSinusoidal && (i == 0 || cfg.pos_every_stage);
        if (want_pos) total += 1;  // gate
        if (i >= 1) total += conv(cfg.stage_channels(i), cfg.stage_channels(i), 1);  // fusion
        if (i < 3) {
            if (cfg.projection_layernorm) total += 2 * 4 * (int64_t)cfg.stage_channels(i);
            total += linear(4 * (int64_t)cfg.stage_channels(i), cfg.stage_channels(i + 1));
        }
        total += cfg.blocks_per_stage * cat_block(i);
    }
    for (int j = 0; j < 4; ++j) {                                // decoder
        const int stage = 3 - j;
        if (j >= 1) {
            const int64_t cs = cfg.stage_channels(stage);
            total += linear(cfg.stage_channels(stage + 1), 4 * (cfg.stage_channels(stage + 1) / m));
            total += conv(2 * cs, cs, 1);
        }
        total += cfg.blocks_per_stage * cat_block(stage);
    }
    int64_t head_in = cfg.stage_channels(0);
    if (cfg.head_mode == HformerConfig::HeadMode::kImprovedFpn)
        head_in = cfg.stage_channels(0) + cfg.stage_channels(1) + cfg.stage_channels(2) + cfg.stage_channels(3);
    total += conv(head_in, cfg.num_classes, 3);
    return total;
}

}  // namespace hformer
