#include "tog/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include <zlib.h>

#include "tog/errors.hpp"

namespace tog {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = fill.r;
        rgb[i + 1] = fill.g;
        rgb[i + 2] = fill.b;
    }
}

Rgb Image::get(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = c.r;
    rgb[i + 1] = c.g;
    rgb[i + 2] = c.b;
}

Tensor Image::to_tensor() const {
    Tensor t = Tensor::zeros({height, width, 3});
    float* p = t.ptr();
    const std::size_t n = rgb.size();
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<float>(rgb[i]) / 255.0f;
    return t;
}

void for_each_pixel_in_polygon(const std::vector<Vec2>& poly,
                               const std::function<void(int, int)>& fn) {
    if (poly.size() < 3) return;
    double minx = poly[0].x, maxx = poly[0].x, miny = poly[0].y, maxy = poly[0].y;
    for (const Vec2& p : poly) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const int x0 = static_cast<int>(std::floor(minx));
    const int x1 = static_cast<int>(std::ceil(maxx));
    const int y0 = static_cast<int>(std::floor(miny));
    const int y1 = static_cast<int>(std::ceil(maxy));
    const std::size_t n = poly.size();
    for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
            const double cx = px + 0.5, cy = py + 0.5;
            // Inside iff all cross products share a sign (convex polygon).
            bool pos = false, neg = false, inside = true;
            for (std::size_t i = 0; i < n; ++i) {
                const Vec2& a = poly[i];
                const Vec2& b = poly[(i + 1) % n];
                const double cr = (b.x - a.x) * (cy - a.y) - (b.y - a.y) * (cx - a.x);
                if (cr > 0.0) pos = true;
                if (cr < 0.0) neg = true;
                if (pos && neg) {
                    inside = false;
                    break;
                }
            }
            if (inside) fn(px, py);
        }
    }
}

void for_each_pixel_in_ellipse(Vec2 center, double rx, double ry, double rot_rad,
                               const std::function<void(int, int)>& fn) {
    const double r = std::max(rx, ry);
    const int x0 = static_cast<int>(std::floor(center.x - r));
    const int x1 = static_cast<int>(std::ceil(center.x + r));
    const int y0 = static_cast<int>(std::floor(center.y - r));
    const int y1 = static_cast<int>(std::ceil(center.y + r));
    const double c = std::cos(rot_rad), s = std::sin(rot_rad);
    for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
            const double dx = (px + 0.5) - center.x;
            const double dy = (py + 0.5) - center.y;
            const double u = dx * c + dy * s;
            const double v = -dx * s + dy * c;
            if ((u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0) fn(px, py);
        }
    }
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
    // Bresenham
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        if (img.in_bounds(x0, y0)) img.set(x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void draw_rect_outline(Image& img, const GraspRect& g, Rgb jaw, Rgb open) {
    const auto c = rect_corners(g);
    auto px = [](double v) { return static_cast<int>(std::lround(v)); };
    // corners: [+u+v, -u+v, -u-v, +u-v]; edges 0-1 and 2-3 run along u (jaws
    // close across them), edges 1-2 and 3-0 run along v.
    draw_line(img, px(c[0].x), px(c[0].y), px(c[1].x), px(c[1].y), open);
    draw_line(img, px(c[2].x), px(c[2].y), px(c[3].x), px(c[3].y), open);
    draw_line(img, px(c[1].x), px(c[1].y), px(c[2].x), px(c[2].y), jaw);
    draw_line(img, px(c[3].x), px(c[3].y), px(c[0].x), px(c[0].y), jaw);
}

// ---------------------------------------------------------------------------
// PNG container

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                 const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    put_u32(out, static_cast<std::uint32_t>(crc32(0, body.data(), static_cast<uInt>(body.size()))));
}

const std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace

void write_png(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace

    // Filter byte 0 per row; compression handled entirely by deflate.
    const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw[y * (stride + 1)] = 0;
        std::memcpy(raw.data() + y * (stride + 1) + 1, img.rgb.data() + y * stride, stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw IoError("png: deflate failed for '" + path + "'");
    }
    compressed.resize(bound);

    std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", compressed);
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write image '" + path + "'");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing image '" + path + "'");
}

namespace {

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0) {
        throw IoError("'" + path + "' is not a PNG file");
    }

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        const std::uint32_t len = get_u32(buf.data() + pos);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        if (pos + 12 + len > buf.size()) throw IoError("png: truncated chunk in '" + path + "'");
        const std::uint8_t* payload = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = static_cast<int>(get_u32(payload));
            height = static_cast<int>(get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw IoError("png: interlaced images unsupported: '" + path + "'");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw IoError("png: missing IHDR in '" + path + "'");
    if (bit_depth != 8 || (color_type != 2 && color_type != 6 && color_type != 0)) {
        throw IoError("png: only 8-bit RGB/RGBA/gray supported: '" + path + "'");
    }
    const int channels = color_type == 2 ? 3 : (color_type == 6 ? 4 : 1);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raw((stride + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw IoError("png: inflate failed for '" + path + "'");
    }

    // Undo per-row filters in place.
    std::vector<std::uint8_t> prev(stride, 0);
    Image img(width, height);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        std::uint8_t* row = raw.data() + y * (stride + 1) + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(channels) ? row[i - channels] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(channels) ? prev[i - channels] : 0;
            int v = row[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("png: unknown filter type in '" + path + "'");
            }
            row[i] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::memcpy(prev.data(), row, stride);
        for (int x = 0; x < width; ++x) {
            Rgb px;
            if (channels == 1) {
                px = {row[x], row[x], row[x]};
            } else {
                px = {row[x * channels], row[x * channels + 1], row[x * channels + 2]};
            }
            img.set(x, y, px);
        }
    }
    return img;
}

}  // namespace tog
