#pragma once

// Sliding-window tile planning and overlap fusion for full-image inference.

#include <cstdint>
#include <vector>

namespace hformer {

struct TileGrid {
    int image_h = 0, image_w = 0;
    int window = 0;
    int stride_y = 0, stride_x = 0;
    std::vector<int> row_origins;
    std::vector<int> col_origins;

    size_t tile_count() const { return row_origins.size() * col_origins.size(); }
};

// Origins 0, s, 2s, ... while origin + w < dim, plus a clamped final origin
// dim - w when the last listed window stops short of the edge. Every pixel
// ends up covered and every window lies fully inside the image.
TileGrid plan_tiles(int image_h, int image_w, int window, int stride_y, int stride_x);

// Per-pixel arithmetic mean of all covering tiles' class probabilities.
// tiles[t] has k * window * window entries (class-major), in row-major tile
// order (rows outer, cols inner). Accumulates in double so that the mean of
// identical distributions reproduces them bit-for-bit. Output is
// k * H * W, class-major.
std::vector<float> fuse_tiles(const TileGrid& grid, const std::vector<std::vector<float>>& tiles, int k);

}  // namespace hformer
