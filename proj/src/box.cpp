#include "amodal/box.hpp"

#include <algorithm>
#include <stdexcept>

namespace amodal {

std::vector<OcclusionLevel> kins_bins() {
    return {
        {0, 0.0, 0.0},
        {1, 0.0, 0.3},
        {2, 0.3, 0.6},
        {3, 0.6, 0.9},
    };
}

std::optional<Box> pairwise_overlap(const Box& a, const Box& b) {
    Box r;
    r.x_min = std::max(a.x_min, b.x_min);
    r.y_min = std::max(a.y_min, b.y_min);
    r.x_max = std::min(a.x_max, b.x_max);
    r.y_max = std::min(a.y_max, b.y_max);
    if (!r.valid()) return std::nullopt;
    return r;
}

std::optional<Box> envelope_overlap_region(size_t i, const std::vector<Box>& boxes) {
    std::optional<Box> env;
    for (size_t j = 0; j < boxes.size(); ++j) {
        if (j == i) continue;
        auto r = pairwise_overlap(boxes[i], boxes[j]);
        if (!r) continue;
        if (!env) {
            env = *r;
        } else {
            env->x_min = std::min(env->x_min, r->x_min);
            env->y_min = std::min(env->y_min, r->y_min);
            env->x_max = std::max(env->x_max, r->x_max);
            env->y_max = std::max(env->y_max, r->y_max);
        }
    }
    return env;
}

BinaryMask rasterize_box(const Box& b, int h, int w) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("rasterize_box: non-positive grid size");
    BinaryMask m(h, w);
    Box c = b.clipped(w, h);
    if (!c.valid()) return m;
    for (int i = c.y_min; i < c.y_max; ++i)
        for (int j = c.x_min; j < c.x_max; ++j) m.at(i, j) = 1;
    return m;
}

OcclusionLevel occlusion_level(const BinaryMask& visible, const BinaryMask& amodal,
                               const std::vector<OcclusionLevel>& bins) {
    if (!visible.same_shape(amodal)) throw std::invalid_argument("occlusion_level: shape mismatch");
    long n_vis = 0, n_amo = 0;
    for (size_t k = 0; k < amodal.v.size(); ++k) {
        if (visible.v[k] && !amodal.v[k])
            throw std::invalid_argument("occlusion_level: visible pixel outside amodal mask");
        n_vis += (visible.v[k] != 0);
        n_amo += (amodal.v[k] != 0);
    }
    if (n_amo == 0) throw std::invalid_argument("occlusion_level: empty amodal mask");
    double ratio = 1.0 - static_cast<double>(n_vis) / static_cast<double>(n_amo);
    if (ratio == 0.0) return bins.front();
    for (size_t k = 1; k < bins.size(); ++k) {
        if (ratio > bins[k].lo && ratio <= bins[k].hi) return bins[k];
    }
    return bins.back();  // above the top bin: clamp
}

std::optional<Box> tight_box(const BinaryMask& m) {
    int x0 = m.w, y0 = m.h, x1 = -1, y1 = -1;
    for (int i = 0; i < m.h; ++i) {
        for (int j = 0; j < m.w; ++j) {
            if (!m.at(i, j)) continue;
            x0 = std::min(x0, j);
            y0 = std::min(y0, i);
            x1 = std::max(x1, j);
            y1 = std::max(y1, i);
        }
    }
    if (x1 < 0) return std::nullopt;
    return Box{x0, y0, x1 + 1, y1 + 1};
}

}  // namespace amodal
