#pragma once

#include <map>
#include <string>
#include <vector>

#include "amodal/datagen.hpp"
#include "amodal/grid.hpp"
#include "amodal/net.hpp"

namespace amodal {

// Final amodal prediction: the amodal branch inside the predicted overlapping
// region, the visible branch elsewhere. With fusion disabled the amodal
// branch is taken everywhere. soft_fusion composites the raw grids before
// thresholding instead of switching per pixel.
BinaryMask fuse(const MaskGrid& m_v, const MaskGrid& m_a, const MaskGrid& m_r, bool enable_fusion,
                double region_threshold = 0.5, bool soft_fusion = false);

// |pred ∩ gt| / |pred ∪ gt|; 0 for an empty prediction. Empty gt is rejected.
double iou(const BinaryMask& pred, const BinaryMask& gt);

struct EvalConfig {
    bool enable_fusion = true;
    double region_threshold = 0.5;
    bool soft_fusion = false;
    std::vector<OcclusionLevel> expected_levels = kins_bins();
    std::string dump_dir;  // per-instance mask panels when non-empty
    int dump_limit = 32;
};

struct LevelStats {
    long count = 0;
    double miou = 0.0;
};

struct EvalReport {
    std::vector<OcclusionLevel> levels;
    std::map<int, LevelStats> fused;    // keyed by level index
    std::map<int, LevelStats> visible;  // visible-only baseline vs amodal gt
    double fused_mean = 0.0;
    double visible_mean = 0.0;
    std::vector<int> empty_levels;  // flagged and omitted from the means
    std::string config_fingerprint;

    std::string to_json_string() const;
    std::string to_csv() const;    // one row per method, per-level columns
    std::string to_table() const;  // human-readable, percent at one decimal
};

// Unweighted average of per-level means; the table aggregation rule.
double mean_of_level_means(const std::vector<double>& level_means);

// Percent formatting at one decimal, half-up with slack for binary
// representation of decimal inputs.
std::string render_one_decimal(double percent);

EvalReport evaluate(const Network& net, const Dataset& data, const EvalConfig& cfg);

}  // namespace amodal
