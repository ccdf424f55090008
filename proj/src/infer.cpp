#include "hformer/infer.hpp"

#include <cmath>
#include <fstream>

namespace hformer {

namespace {

std::vector<float> flip_image(const std::vector<float>& img, int h, int w, bool fh, bool fv) {
    if (!fh && !fv) return img;
    std::vector<float> out((size_t)h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int sy = fv ? h - 1 - y : y;
            const int sx = fh ? w - 1 - x : x;
            out[(size_t)y * w + x] = img[(size_t)sy * w + sx];
        }
    return out;
}

std::vector<float> flip_classmap(const std::vector<float>& probs, int k, int h, int w, bool fh, bool fv) {
    if (!fh && !fv) return probs;
    std::vector<float> out(probs.size());
    for (int c = 0; c < k; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = fv ? h - 1 - y : y;
                const int sx = fh ? w - 1 - x : x;
                out[((size_t)c * h + y) * w + x] = probs[((size_t)c * h + sy) * w + sx];
            }
    return out;
}

}  // namespace

WindowModel model_window_fn(const Model<float>& model) {
    return [&model](const Tensor<float>& window) { return model.forward(window); };
}

std::vector<FlipMember> tta_members(const EvalConfig& cfg) {
    std::vector<FlipMember> members = {{false, false}};
    if (cfg.hflip) members.push_back({true, false});
    if (cfg.vflip) members.push_back({false, true});
    if (cfg.closure && cfg.hflip && cfg.vflip) members.push_back({true, true});
    return members;
}

std::vector<float> tiled_probabilities(const WindowModel& model, int num_classes,
                                       const std::vector<float>& image, int h, int w,
                                       const EvalConfig& cfg) {
    if ((size_t)h * w != image.size()) throw std::runtime_error("tiled_probabilities: image size mismatch");
    const int win = cfg.window;
    if (win > h || win > w)
        throw std::runtime_error("tiled_probabilities: image " + std::to_string(h) + "x" + std::to_string(w) +
                                 " smaller than window " + std::to_string(win));
    const TileGrid grid = plan_tiles(h, w, win, cfg.stride_y, cfg.stride_x);
    std::vector<std::vector<float>> tiles;
    tiles.reserve(grid.tile_count());
    for (int ry : grid.row_origins) {
        for (int cx : grid.col_origins) {
            Tensor<float> input = Tensor<float>::zeros({1, 1, win, win});
            float* p = input.ptr();
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) p[(size_t)y * win + x] = image[(size_t)(ry + y) * w + (cx + x)];
            Tensor<float> logits = model(input);
            if (logits.shape != Shape{1, num_classes, win, win})
                throw std::runtime_error("tiled_probabilities: model emitted " + shape_str(logits.shape));
            Tensor<float> probs = softmax(logits, 1);
            tiles.emplace_back(probs.data->begin(), probs.data->end());
        }
    }
    return fuse_tiles(grid, tiles, num_classes);
}

std::vector<float> tta_predict(const WindowModel& model, int num_classes, const std::vector<float>& image,
                               int h, int w, const EvalConfig& cfg) {
    const auto members = tta_members(cfg);
    std::vector<double> acc((size_t)num_classes * h * w, 0.0);
    for (const FlipMember& m : members) {
        const auto flipped = flip_image(image, h, w, m.hflip, m.vflip);
        auto probs = tiled_probabilities(model, num_classes, flipped, h, w, cfg);
        probs = flip_classmap(probs, num_classes, h, w, m.hflip, m.vflip);  // inverse flip
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
    }
    std::vector<float> out(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) out[i] = (float)(acc[i] / (double)members.size());
    return out;
}

FringeOrderMap predict_fringe_order(const WindowModel& model, int num_classes,
                                    const std::vector<float>& image, int h, int w, const EvalConfig& cfg) {
    const auto probs = tta_predict(model, num_classes, image, h, w, cfg);
    FringeOrderMap out;
    out.height = h;
    out.width = w;
    out.values.resize((size_t)h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int best = 0;
            float best_p = probs[(size_t)y * w + x];
            for (int c = 1; c < num_classes; ++c) {
                const float p = probs[((size_t)c * h + y) * w + x];
                if (p > best_p) {  // strict: ties keep the smaller class
                    best_p = p;
                    best = c;
                }
            }
            out.values[(size_t)y * w + x] = (uint8_t)best;
        }
    return out;
}

AbsolutePhaseMap unwrap_with_prediction(const WrappedPhaseMap& phase, const FringeOrderMap& order) {
    return unwrap(phase, order);
}

void write_pgm(const std::filesystem::path& path, const FringeOrderMap& order, int num_classes) {
    if (num_classes < 2) throw std::runtime_error("write_pgm: need at least 2 classes");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw UserError("cannot open " + path.string() + " for writing");
    os << "P5\n" << order.width << " " << order.height << "\n255\n";
    std::vector<uint8_t> bytes(order.values.size());
    for (size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = (uint8_t)std::lround(order.values[i] * 255.0 / (num_classes - 1));
    os.write((const char*)bytes.data(), (std::streamsize)bytes.size());
    if (!os) throw UserError("short write to " + path.string());
}

}  // namespace hformer
