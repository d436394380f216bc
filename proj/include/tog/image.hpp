#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tog/geometry.hpp"
#include "tog/tensor.hpp"

namespace tog {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

/// 8-bit RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // 3 * width * height

    Image() = default;
    Image(int w, int h, Rgb fill = {0, 0, 0});

    Rgb get(int x, int y) const;
    void set(int x, int y, Rgb c);
    bool in_bounds(int x, int y) const {
        return x >= 0 && y >= 0 && x < width && y < height;
    }

    /// [H,W,3] float tensor scaled to [0,1].
    Tensor to_tensor() const;
};

// Rasterization visitors cover pixels whose centers lie inside the shape.
// The shape may extend beyond [0,W)x[0,H); callers receive every covered
// integer pixel, in-bounds or not, in row-major order.
void for_each_pixel_in_polygon(const std::vector<Vec2>& convex_ccw_or_cw,
                               const std::function<void(int, int)>& fn);
void for_each_pixel_in_ellipse(Vec2 center, double rx, double ry, double rot_rad,
                               const std::function<void(int, int)>& fn);

void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb c);

/// Outline of a grasp rectangle; the two jaw edges get `jaw` color and the
/// two opening edges `open` color so orientation is visible in overlays.
void draw_rect_outline(Image& img, const GraspRect& g, Rgb jaw, Rgb open);

// Minimal PNG I/O (8-bit RGB, non-interlaced) over zlib. The reader also
// accepts 8-bit RGBA and grayscale by converting to RGB.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace tog
