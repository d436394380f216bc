#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tog/errors.hpp"
#include "tog/geometry.hpp"
#include "tog/rng.hpp"

using namespace tog;

namespace {

// Test-only IoU oracle: count supersampled points inside each rectangle.
// Independent of the polygon-clipping path.
double jaccard_rasterized(const GraspRect& a, const GraspRect& b, int supersample) {
    const auto ca = rect_corners(a);
    const auto cb = rect_corners(b);
    double minx = ca[0].x, maxx = ca[0].x, miny = ca[0].y, maxy = ca[0].y;
    for (const Vec2& c : ca) {
        minx = std::min(minx, c.x); maxx = std::max(maxx, c.x);
        miny = std::min(miny, c.y); maxy = std::max(maxy, c.y);
    }
    for (const Vec2& c : cb) {
        minx = std::min(minx, c.x); maxx = std::max(maxx, c.x);
        miny = std::min(miny, c.y); maxy = std::max(maxy, c.y);
    }
    auto inside = [](const GraspRect& g, double px, double py) {
        const double t = g.theta_deg * 0.017453292519943295;
        const double dx = px - g.x, dy = py - g.y;
        const double along = dx * std::cos(t) + dy * std::sin(t);
        const double across = -dx * std::sin(t) + dy * std::cos(t);
        return std::abs(along) <= 0.5 * g.w && std::abs(across) <= 0.5 * g.h;
    };
    const double step = 1.0 / supersample;
    long long inter = 0, uni = 0;
    for (double py = std::floor(miny) + step / 2; py < std::ceil(maxy); py += step) {
        for (double px = std::floor(minx) + step / 2; px < std::ceil(maxx); px += step) {
            const bool ia = inside(a, px, py);
            const bool ib = inside(b, px, py);
            if (ia && ib) ++inter;
            if (ia || ib) ++uni;
        }
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

GraspRect random_rect(Rng& rng) {
    GraspRect g;
    g.x = rng.uniform_f(20.0f, 80.0f);
    g.y = rng.uniform_f(20.0f, 80.0f);
    g.theta_deg = rng.uniform_f(0.0f, 180.0f);
    g.w = rng.uniform_f(4.0f, 30.0f);
    g.h = rng.uniform_f(4.0f, 20.0f);
    return g;
}

}  // namespace

TEST_CASE("rect_corners: axis-aligned corners and symmetry") {
    GraspRect g{0, 0, 0, 4, 2, {}, -1};
    const auto c = rect_corners(g);
    for (const Vec2& p : c) {
        CHECK(std::abs(std::abs(p.x) - 2.0) < 1e-9);
        CHECK(std::abs(std::abs(p.y) - 1.0) < 1e-9);
    }

    // theta=90 swaps the roles of the w and h axes
    GraspRect g90{0, 0, 90, 4, 2, {}, -1};
    const auto c90 = rect_corners(g90);
    for (const Vec2& p : c90) {
        CHECK(std::abs(std::abs(p.x) - 1.0) < 1e-6);
        CHECK(std::abs(std::abs(p.y) - 2.0) < 1e-6);
    }

    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const GraspRect r = random_rect(rng);
        const auto cc = rect_corners(r);
        double cx = 0, cy = 0;
        for (const Vec2& p : cc) {
            cx += p.x;
            cy += p.y;
        }
        CHECK(std::abs(cx / 4 - r.x) < 1e-4);
        CHECK(std::abs(cy / 4 - r.y) < 1e-4);
    }
}

TEST_CASE("jaccard: identical, disjoint and the one-third offset case") {
    GraspRect a{50, 50, 30, 8, 4, {}, -1};
    CHECK(jaccard(a, a) == doctest::Approx(1.0));

    GraspRect far{10, 10, 30, 8, 4, {}, -1};
    CHECK(jaccard(a, far) == doctest::Approx(0.0));

    // 4x2 rects offset by 2 along w: intersection 4, union 12
    GraspRect r1{0, 0, 0, 4, 2, {}, -1};
    GraspRect r2{2, 0, 0, 4, 2, {}, -1};
    CHECK(jaccard(r1, r2) == doctest::Approx(1.0 / 3.0));

    GraspRect degenerate{0, 0, 0, 0, 2, {}, -1};
    CHECK_THROWS_AS(jaccard(r1, degenerate), std::domain_error);
}

TEST_CASE("jaccard agrees with the supersampled rasterization oracle on 200 pairs") {
    Rng rng(42);
    for (int i = 0; i < 200; ++i) {
        GraspRect a = random_rect(rng);
        GraspRect b = random_rect(rng);
        if (i % 3 == 0) {
            // bias towards overlap so the comparison is not mostly 0 vs 0
            b.x = a.x + rng.uniform_f(-6.0f, 6.0f);
            b.y = a.y + rng.uniform_f(-6.0f, 6.0f);
        }
        const double exact = jaccard(a, b);
        const double approx = jaccard_rasterized(a, b, 4);
        CHECK(std::abs(exact - approx) <= 0.02);
    }
}

TEST_CASE("jaccard invariances: symmetry and joint rigid motion") {
    Rng rng(7);
    for (int i = 0; i < 40; ++i) {
        GraspRect a = random_rect(rng);
        GraspRect b = random_rect(rng);
        b.x = a.x + rng.uniform_f(-8.0f, 8.0f);
        b.y = a.y + rng.uniform_f(-8.0f, 8.0f);
        CHECK(jaccard(a, b) == doctest::Approx(jaccard(b, a)).epsilon(1e-9));

        // translate both and rotate both about the origin by the same angle
        const double phi = rng.uniform(0.0, 360.0);
        const double c = std::cos(phi * 0.017453292519943295);
        const double s = std::sin(phi * 0.017453292519943295);
        auto moved = [&](const GraspRect& g) {
            GraspRect m = g;
            m.x = static_cast<float>(c * g.x - s * g.y + 11.0);
            m.y = static_cast<float>(s * g.x + c * g.y - 3.0);
            m.theta_deg = static_cast<float>(std::fmod(g.theta_deg + phi, 180.0));
            return m;
        };
        CHECK(jaccard(moved(a), moved(b)) == doctest::Approx(jaccard(a, b)).epsilon(1e-4));
    }

    // equals 1 iff identical up to the half-turn symmetry
    GraspRect a{40, 40, 10, 12, 6, {}, -1};
    GraspRect a180 = a;
    a180.theta_deg = 190.0f - 180.0f;  // same physical rect
    CHECK(jaccard(a, a180) == doctest::Approx(1.0));
    GraspRect shifted = a;
    shifted.x += 1.0f;
    CHECK(jaccard(a, shifted) < 1.0);
}

TEST_CASE("angle_diff: wraparound, symmetry, range") {
    CHECK(angle_diff_deg(10, 35) == doctest::Approx(25.0f));
    CHECK(angle_diff_deg(175, 5) == doctest::Approx(10.0f));
    CHECK(angle_diff_deg(63.5f, 63.5f + 180.0f) == doctest::Approx(0.0f));
    CHECK(angle_diff_deg(63.5f, 63.5f - 540.0f) == doctest::Approx(0.0f));

    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const float t1 = rng.uniform_f(-720.0f, 720.0f);
        const float t2 = rng.uniform_f(-720.0f, 720.0f);
        const float d = angle_diff_deg(t1, t2);
        CHECK(d >= 0.0f);
        CHECK(d <= 90.0f);
        CHECK(d == doctest::Approx(angle_diff_deg(t2, t1)));
    }
}

TEST_CASE("is_correct: thresholds are strict and the check is monotone") {
    GraspRect gt{50, 50, 40, 10, 6, {}, -1};

    CHECK(is_correct(gt, {gt}));

    GraspRect rot45 = gt;
    rot45.theta_deg = 85.0f;  // angle difference 45 >= 30
    CHECK_FALSE(is_correct(rot45, {gt}));

    // J exactly 0.25 must fail the strict > comparison: two axis-aligned
    // 4x2 rects offset 2.4 along w give inter 1.6*2=3.2, union 12.8, J=0.25
    GraspRect p{0, 0, 0, 4, 2, {}, -1};
    GraspRect q{2.4f, 0, 0, 4, 2, {}, -1};
    CHECK(jaccard(p, q) == doctest::Approx(0.25));
    CHECK_FALSE(is_correct(p, {q}));

    // angle exactly 30 fails too
    GraspRect tilt = gt;
    tilt.theta_deg = gt.theta_deg + 30.0f;
    CHECK_FALSE(is_correct(tilt, {gt}));

    // monotone: enlarging the ground-truth set never flips true -> false
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        GraspRect g = random_rect(rng);
        std::vector<GraspRect> small = {random_rect(rng)};
        std::vector<GraspRect> big = small;
        big.push_back(g);  // contains an exact match
        const bool before = is_correct(g, small);
        const bool after = is_correct(g, big);
        CHECK((!before || after));
        CHECK(after);
    }

    CHECK_THROWS_AS(is_correct(gt, {}), EvalError);
}

TEST_CASE("orientation bins: edges, round trip, exhaustive property") {
    OrientationBins bins;
    CHECK(bins.width() == doctest::Approx(1.5f));
    CHECK(bin_encode(0.0f, bins) == 0);
    CHECK(bin_decode(0, bins) == doctest::Approx(0.75f));
    CHECK(bin_encode(179.9f, bins) == 119);
    CHECK_THROWS_AS(bin_decode(120, bins), IndexError);
    CHECK_THROWS_AS(bin_decode(-1, bins), IndexError);

    // encode(decode(i)) == i for every bin
    for (int i = 0; i < bins.count; ++i) CHECK(bin_encode(bin_decode(i, bins), bins) == i);

    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const float theta = rng.uniform_f(-360.0f, 540.0f);
        const float back = bin_decode(bin_encode(theta, bins), bins);
        CHECK(angle_diff_deg(theta, back) <= 0.75f + 1e-4f);
    }
}

TEST_CASE("rasterize_rect: pixel block, shrink limit, area convergence") {
    // axis-aligned rect covering exactly a 4x2 pixel block
    GraspRect g{2, 1, 0, 4, 2, {}, -1};
    const auto mask = rasterize_rect(g, 8, 8, 0.0f);
    int count = 0;
    for (std::uint8_t v : mask) count += v;
    CHECK(count == 8);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) CHECK(mask[y * 8 + x] == 1);

    // near-total shrink collapses towards the h-axis center line
    GraspRect wide{32, 32, 0, 40, 4, {}, -1};
    const auto thin = rasterize_rect(wide, 64, 64, 0.999f);
    int thin_count = 0;
    for (std::uint8_t v : thin) thin_count += v;
    CHECK(thin_count == 0);  // half-width below half a pixel leaves nothing

    const auto third = rasterize_rect(wide, 64, 64, 2.0f / 3.0f);
    int third_count = 0;
    for (std::uint8_t v : third) third_count += v;
    CHECK(std::abs(third_count - 40.0 / 3.0 * 4.0) <= 8.0);

    // mask area converges to w*h as the rect grows (<= 2% at 40x20)
    GraspRect big{60, 60, 37, 40, 20, {}, -1};
    const auto bm = rasterize_rect(big, 128, 128, 0.0f);
    double bm_count = 0;
    for (std::uint8_t v : bm) bm_count += v;
    CHECK(std::abs(bm_count - rect_area(big)) / rect_area(big) <= 0.02);

    CHECK_THROWS_AS(rasterize_rect(big, 128, 128, 1.0f), ConfigError);

    // off-image rect yields an empty mask, not an error
    GraspRect off{-50, -50, 10, 8, 4, {}, -1};
    const auto none = rasterize_rect(off, 32, 32, 0.0f);
    for (std::uint8_t v : none) CHECK(v == 0);
}
