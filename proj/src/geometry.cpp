#include "tog/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tog/errors.hpp"

namespace tog {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

double polygon_area(const std::vector<Vec2>& poly) {
    // Shoelace; sign depends on winding.
    double acc = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    return 0.5 * acc;
}

// Sutherland-Hodgman clip of a convex subject against one half-plane
// defined by edge (a,b) of a counter-clockwise clip polygon.
std::vector<Vec2> clip_against_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    const std::size_t n = subject.size();
    auto side = [&](const Vec2& p) {
        return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& cur = subject[i];
        const Vec2& nxt = subject[(i + 1) % n];
        const double sc = side(cur);
        const double sn = side(nxt);
        if (sc >= 0.0) out.push_back(cur);
        if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
            const double t = sc / (sc - sn);
            out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
        }
    }
    return out;
}

std::vector<Vec2> ccw_corners(const GraspRect& g) {
    const auto c = rect_corners(g);
    std::vector<Vec2> poly(c.begin(), c.end());
    if (polygon_area(poly) < 0.0) std::reverse(poly.begin(), poly.end());
    return poly;
}

}  // namespace

bool GraspRect::affords(const std::string& task) const {
    return std::find(tasks.begin(), tasks.end(), task) != tasks.end();
}

std::array<Vec2, 4> rect_corners(const GraspRect& g) {
    const double t = static_cast<double>(g.theta_deg) * kDegToRad;
    const Vec2 u{std::cos(t), std::sin(t)};    // opening-width axis
    const Vec2 v{-std::sin(t), std::cos(t)};   // jaw-length axis
    const double hw = 0.5 * g.w;
    const double hh = 0.5 * g.h;
    const double cx = g.x, cy = g.y;
    return {Vec2{cx + hw * u.x + hh * v.x, cy + hw * u.y + hh * v.y},
            Vec2{cx - hw * u.x + hh * v.x, cy - hw * u.y + hh * v.y},
            Vec2{cx - hw * u.x - hh * v.x, cy - hw * u.y - hh * v.y},
            Vec2{cx + hw * u.x - hh * v.x, cy + hw * u.y - hh * v.y}};
}

double rect_area(const GraspRect& g) {
    return static_cast<double>(g.w) * static_cast<double>(g.h);
}

double jaccard(const GraspRect& a, const GraspRect& b) {
    if (rect_area(a) <= 0.0 || rect_area(b) <= 0.0) {
        throw std::domain_error("jaccard: degenerate rectangle with non-positive area");
    }
    std::vector<Vec2> poly = ccw_corners(a);
    const std::vector<Vec2> clip = ccw_corners(b);
    for (std::size_t i = 0; i < clip.size() && !poly.empty(); ++i) {
        poly = clip_against_edge(poly, clip[i], clip[(i + 1) % clip.size()]);
    }
    const double inter = poly.size() >= 3 ? std::abs(polygon_area(poly)) : 0.0;
    const double uni = rect_area(a) + rect_area(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

float angle_diff_deg(float theta1_deg, float theta2_deg) {
    double d = std::fmod(static_cast<double>(theta1_deg) - theta2_deg, 180.0);
    if (d < 0.0) d += 180.0;
    return static_cast<float>(std::min(d, 180.0 - d));
}

bool is_correct(const GraspRect& g, const std::vector<GraspRect>& ground_truth) {
    if (ground_truth.empty()) {
        throw EvalError("is_correct: empty ground-truth grasp set");
    }
    for (const GraspRect& gt : ground_truth) {
        if (angle_diff_deg(g.theta_deg, gt.theta_deg) < 30.0f && jaccard(g, gt) > 0.25) {
            return true;
        }
    }
    return false;
}

int bin_encode(float theta_deg, const OrientationBins& bins) {
    double t = std::fmod(static_cast<double>(theta_deg), static_cast<double>(bins.span_deg));
    if (t < 0.0) t += bins.span_deg;
    int idx = static_cast<int>(t / bins.width());
    if (idx >= bins.count) idx = bins.count - 1;  // guard t == span after rounding
    return idx;
}

float bin_decode(int index, const OrientationBins& bins) {
    if (index < 0 || index >= bins.count) {
        throw IndexError("bin_decode: index " + std::to_string(index) + " outside [0," +
                         std::to_string(bins.count) + ")");
    }
    return (static_cast<float>(index) + 0.5f) * bins.width();
}

std::vector<std::uint8_t> rasterize_rect(const GraspRect& g, int height, int width, float shrink) {
    if (shrink < 0.0f || shrink >= 1.0f) {
        throw ConfigError("rasterize_rect: shrink must be in [0,1)");
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
    const double t = static_cast<double>(g.theta_deg) * kDegToRad;
    const double ux = std::cos(t), uy = std::sin(t);
    const double hw = 0.5 * g.w * (1.0 - static_cast<double>(shrink));
    const double hh = 0.5 * g.h;

    // Bounding box of the full rect to limit the scan.
    const auto corners = rect_corners(g);
    double minx = corners[0].x, maxx = corners[0].x, miny = corners[0].y, maxy = corners[0].y;
    for (const Vec2& c : corners) {
        minx = std::min(minx, c.x);
        maxx = std::max(maxx, c.x);
        miny = std::min(miny, c.y);
        maxy = std::max(maxy, c.y);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(maxx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(maxy)));

    for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
            const double dx = (px + 0.5) - g.x;
            const double dy = (py + 0.5) - g.y;
            const double along = dx * ux + dy * uy;     // opening-width axis
            const double across = -dx * uy + dy * ux;   // jaw-length axis
            if (std::abs(along) <= hw && std::abs(across) <= hh) {
                mask[static_cast<std::size_t>(py) * width + px] = 1;
            }
        }
    }
    return mask;
}

}  // namespace tog
