#pragma once

#include <cstdint>
#include <vector>

#include "amodal/errors.hpp"

namespace amodal {

// Real-valued H x W grid in [0,1]; the m_v / m_a / m_r prediction type.
// Indexing is (row i, column j), i.e. (y, x).
struct MaskGrid {
    int h = 0, w = 0;
    std::vector<double> v;

    MaskGrid() = default;
    MaskGrid(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    double& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
    size_t size() const { return v.size(); }
    bool same_shape(const MaskGrid& o) const { return h == o.h && w == o.w; }
};

struct BinaryMask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    BinaryMask() = default;
    BinaryMask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
    uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
    size_t size() const { return v.size(); }
    bool same_shape(const BinaryMask& o) const { return h == o.h && w == o.w; }

    long count() const {
        long n = 0;
        for (uint8_t x : v) n += (x != 0);
        return n;
    }

    bool operator==(const BinaryMask& o) const { return h == o.h && w == o.w && v == o.v; }
};

// RGB image with channel values in [0,1], pixel-interleaved.
struct Image {
    int h = 0, w = 0;
    std::vector<double> rgb;  // 3 * h * w

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(3) * h_ * w_, 0.0) {}

    double& at(int i, int j, int c) { return rgb[3 * (static_cast<size_t>(i) * w + j) + c]; }
    double at(int i, int j, int c) const { return rgb[3 * (static_cast<size_t>(i) * w + j) + c]; }
};

inline BinaryMask binarize(const MaskGrid& m, double threshold) {
    BinaryMask out(m.h, m.w);
    for (size_t k = 0; k < m.v.size(); ++k) out.v[k] = m.v[k] > threshold ? 1 : 0;
    return out;
}

inline MaskGrid to_grid(const BinaryMask& b) {
    MaskGrid out(b.h, b.w);
    for (size_t k = 0; k < b.v.size(); ++k) out.v[k] = b.v[k] ? 1.0 : 0.0;
    return out;
}

}  // namespace amodal
