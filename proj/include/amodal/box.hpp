#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amodal/grid.hpp"

namespace amodal {

// Axis-aligned pixel rectangle, half-open: pixel (i,j) is inside iff
// x_min <= j < x_max and y_min <= i < y_max.
struct Box {
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    bool valid() const { return x_min < x_max && y_min < y_max; }
    int width() const { return x_max - x_min; }
    int height() const { return y_max - y_min; }
    long area() const { return static_cast<long>(width()) * height(); }

    bool contains(int x, int y) const { return x >= x_min && x < x_max && y >= y_min && y < y_max; }

    Box clipped(int w, int h) const {
        Box b = *this;
        if (b.x_min < 0) b.x_min = 0;
        if (b.y_min < 0) b.y_min = 0;
        if (b.x_max > w) b.x_max = w;
        if (b.y_max > h) b.y_max = h;
        return b;
    }

    bool operator==(const Box& o) const {
        return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
    }
};

// Occlusion-ratio bin. FG-0 is exactly ratio 0; FG-k covers (lo, hi].
// Ratios above the last bin's hi clamp into the last bin.
struct OcclusionLevel {
    int index = 0;
    double lo = 0.0, hi = 0.0;

    std::string name() const { return "FG-" + std::to_string(index); }
    bool operator==(const OcclusionLevel& o) const { return index == o.index; }
};

// KINS-style bins: 0%, 1-30%, 30-60%, 60-90%.
std::vector<OcclusionLevel> kins_bins();

// Intersection of two boxes per the max-of-mins / min-of-maxes rule.
// Touching boxes (zero-area intersection) count as non-overlapping.
std::optional<Box> pairwise_overlap(const Box& a, const Box& b);

// Envelope box of all pairwise intersections between boxes[i] and the other
// boxes; absent when nothing overlaps instance i.
std::optional<Box> envelope_overlap_region(size_t i, const std::vector<Box>& boxes);

// Bitmask of the box clipped to an h x w image. Throws on non-positive dims.
BinaryMask rasterize_box(const Box& b, int h, int w);

// Bin containing 1 - |visible| / |amodal|. Requires visible subset of amodal
// and amodal nonempty.
OcclusionLevel occlusion_level(const BinaryMask& visible, const BinaryMask& amodal,
                               const std::vector<OcclusionLevel>& bins);

// Tight bounding box of the set pixels; absent for an empty mask.
std::optional<Box> tight_box(const BinaryMask& m);

}  // namespace amodal
