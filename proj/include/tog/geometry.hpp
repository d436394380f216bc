#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace tog {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

/// 5D oriented grasp rectangle in image coordinates (origin top-left,
/// y down). `w` is the jaw opening and extends along the direction of
/// `theta_deg`; `h` is the fixed jaw length, perpendicular to it. Theta
/// lives in [0, 180) because a parallel-jaw grasp is symmetric under a
/// half turn.
struct GraspRect {
    float x = 0.0f;
    float y = 0.0f;
    float theta_deg = 0.0f;
    float w = 0.0f;
    float h = 0.0f;
    std::vector<std::string> tasks;
    int object_index = -1;  // scene placement owning this grasp, -1 if detached

    bool affords(const std::string& task) const;
};

struct OrientationBins {
    int count = 120;
    float span_deg = 180.0f;
    float width() const { return span_deg / static_cast<float>(count); }
};

/// Corners of the w-by-h rectangle, counter-clockwise; centroid == center.
std::array<Vec2, 4> rect_corners(const GraspRect& g);

double rect_area(const GraspRect& g);

/// Exact area Jaccard of two oriented rectangles via convex polygon
/// clipping. Throws on zero-area rectangles.
double jaccard(const GraspRect& a, const GraspRect& b);

/// Orientation distance modulo the 180-degree grasp symmetry; in [0, 90].
float angle_diff_deg(float theta1_deg, float theta2_deg);

/// Paper correctness rule: some ground-truth grasp with angle difference
/// strictly below 30 degrees and Jaccard strictly above 0.25.
bool is_correct(const GraspRect& g, const std::vector<GraspRect>& ground_truth);

int bin_encode(float theta_deg, const OrientationBins& bins);
float bin_decode(int index, const OrientationBins& bins);

/// Binary mask of pixels whose centers fall inside g with its opening
/// width scaled by (1 - shrink). Row-major H*W, off-image parts clipped.
std::vector<std::uint8_t> rasterize_rect(const GraspRect& g, int height, int width, float shrink);

}  // namespace tog
