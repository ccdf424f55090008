#include "hformer/tiles.hpp"

#include <stdexcept>
#include <string>

namespace hformer {

namespace {

std::vector<int> axis_origins(int dim, int window, int stride) {
    std::vector<int> origins;
    for (int o = 0; o + window < dim; o += stride) origins.push_back(o);
    if (origins.empty() || origins.back() + window < dim) origins.push_back(dim - window);
    // the coverage invariant fails when the stride outruns the window
    for (size_t i = 1; i < origins.size(); ++i)
        if (origins[i] > origins[i - 1] + window)
            throw std::runtime_error("plan_tiles: stride " + std::to_string(stride) +
                                     " leaves pixels uncovered at window " + std::to_string(window));
    return origins;
}

}  // namespace

TileGrid plan_tiles(int image_h, int image_w, int window, int stride_y, int stride_x) {
    if (window < 1 || stride_y < 1 || stride_x < 1) throw std::runtime_error("plan_tiles: bad window/stride");
    if (window > image_h || window > image_w)
        throw std::runtime_error("plan_tiles: window " + std::to_string(window) + " exceeds image " +
                                 std::to_string(image_h) + "x" + std::to_string(image_w));
    TileGrid g;
    g.image_h = image_h;
    g.image_w = image_w;
    g.window = window;
    g.stride_y = stride_y;
    g.stride_x = stride_x;
    g.row_origins = axis_origins(image_h, window, stride_y);
    g.col_origins = axis_origins(image_w, window, stride_x);
    return g;
}

std::vector<float> fuse_tiles(const TileGrid& grid, const std::vector<std::vector<float>>& tiles, int k) {
    const int h = grid.image_h, w = grid.image_w, win = grid.window;
    if (tiles.size() != grid.tile_count()) throw std::runtime_error("fuse_tiles: tile count mismatch");
    for (const auto& t : tiles)
        if (t.size() != (size_t)k * win * win) throw std::runtime_error("fuse_tiles: tile payload size mismatch");

    std::vector<double> acc((size_t)k * h * w, 0.0);
    std::vector<int> cover((size_t)h * w, 0);
    size_t ti = 0;
    for (int ry : grid.row_origins) {
        for (int cx : grid.col_origins) {
            const auto& tile = tiles[ti++];
            for (int c = 0; c < k; ++c)
                for (int y = 0; y < win; ++y)
                    for (int x = 0; x < win; ++x)
                        acc[((size_t)c * h + (ry + y)) * w + (cx + x)] += tile[((size_t)c * win + y) * win + x];
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) ++cover[(size_t)(ry + y) * w + (cx + x)];
        }
    }
    std::vector<float> out((size_t)k * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int n = cover[(size_t)y * w + x];
            if (n == 0) throw std::runtime_error("fuse_tiles: uncovered pixel, grid invariant violated");
            for (int c = 0; c < k; ++c) {
                const size_t i = ((size_t)c * h + y) * w + x;
                out[i] = (float)(acc[i] / n);
            }
        }
    return out;
}

}  // namespace hformer
