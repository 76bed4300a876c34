#pragma once

#include <vector>

#include "amodal/box.hpp"
#include "amodal/grid.hpp"

namespace amodal {

struct Pixel {
    int i = 0, j = 0;  // row, column
    bool operator==(const Pixel& o) const { return i == o.i && j == o.j; }
    bool operator<(const Pixel& o) const { return i < o.i || (i == o.i && j < o.j); }
};

struct PixelEdge {
    Pixel a, b;
};

// The neighbor graph around the predicted-overlapping-visible pixels. Each
// unordered pixel pair appears once; gt_consistency[e] is 1 when both
// endpoints fall on the same side of the amodal box.
struct PixelEdgeSet {
    std::vector<PixelEdge> edges;
    std::vector<uint8_t> gt_consistency;
};

struct LossConfig {
    // amodal branch mixture weights
    double alpha1_a = 2.0;
    double alpha2_a = 1.0;
    double alpha3_a = 1.0;
    // region branch BCE weight
    double alpha_r = 1.0;
    // uniform-loss severity
    double K = 1.0;
    // visible-branch threshold for the pov set (strict >)
    double t = 0.5;
    // pixels between edge endpoints; endpoint offset is neighbor_gap + 1
    int neighbor_gap = 1;
    // pairwise loss: colour similarity exp(-dist/sigma) must exceed threshold
    double pairwise_similarity_threshold = 0.3;
    double pairwise_color_sigma = 0.25;
    // dice smoothing for the projection loss
    double dice_eps = 1e-6;
    // log clamping for all BCE-style terms
    double epsilon = 1e-6;
    // ablation toggles (UN / NE / FS)
    bool enable_uniform = true;
    bool enable_neighbor = true;
    bool enable_fusion = true;
};

// All losses are scalars, differentiable in the predicted mask grid. When
// `grad` is non-null it receives d(loss)/d(mask); m_v entering the
// connectivity terms is treated as a constant, so no gradient is reported for
// it there.

// Pixel-level BCE between a predicted grid and a binary target, scaled by
// alpha_r and averaged over all pixels.
double region_loss(const MaskGrid& pred, const BinaryMask& gt, double alpha_r, double eps,
                   MaskGrid* grad = nullptr);

// Pixels inside the overlap region whose predicted visible value exceeds t.
std::vector<Pixel> build_pov_set(const MaskGrid& m_v, const BinaryMask& region, double t);

// Edges from each pov pixel to its 8 neighbors at offset gap+1; neighbors
// falling outside the image are discarded.
PixelEdgeSet build_edge_set(const std::vector<Pixel>& pov, int gap, int h, int w,
                            const Box& amodal_box);

// a1*a2 + (1-a1)*(1-a2): high when both endpoints agree with certainty.
double pred_consistency(const MaskGrid& m_a, const PixelEdge& e);

// BCE between predicted and ground-truth edge consistency; 0 for an empty
// edge set.
double neighbor_loss(const MaskGrid& m_a, const PixelEdgeSet& edges, double eps,
                     MaskGrid* grad = nullptr);

// Mean over region pixels of max(m_v - m_a, 0), scaled by K; 0 for an empty
// region.
double uniform_loss(const MaskGrid& m_a, const MaskGrid& m_v, const BinaryMask& region, double K,
                    MaskGrid* grad = nullptr);

// neighbor + uniform, each dropped when its toggle is off.
double connectivity_loss(const MaskGrid& m_a, const MaskGrid& m_v, const BinaryMask& region,
                         const Box& amodal_box, const LossConfig& cfg, MaskGrid* grad = nullptr);

// Mean of the two per-axis dice losses between the mask's max-projections and
// the box's axis indicators.
double projection_loss(const MaskGrid& m, const Box& box, double dice_eps = 1e-6,
                       MaskGrid* grad = nullptr);

// Mean of -log P(same label) over 8-neighbor pixel pairs inside the box whose
// colour similarity exceeds the threshold; 0 when no pair qualifies.
double pairwise_loss(const MaskGrid& m, const Image& image, const Box& box, double threshold,
                     double sigma, double eps, MaskGrid* grad = nullptr);

struct AmodalLossParts {
    double proj = 0.0, pair = 0.0, con = 0.0;
    double total = 0.0;  // alpha1*proj + alpha2*pair + alpha3*con
};

AmodalLossParts amodal_branch_loss(const MaskGrid& m_a, const MaskGrid& m_v, const Image& image,
                                   const Box& amodal_box, const BinaryMask& region,
                                   const LossConfig& cfg, MaskGrid* grad = nullptr);

struct VisibleLossParts {
    double proj = 0.0, pair = 0.0;
    double total = 0.0;
};

VisibleLossParts visible_branch_loss(const MaskGrid& m_v, const Image& image,
                                     const Box& visible_box, const LossConfig& cfg,
                                     MaskGrid* grad = nullptr);

}  // namespace amodal
