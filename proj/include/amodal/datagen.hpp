#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amodal/box.hpp"
#include "amodal/grid.hpp"

namespace amodal {

constexpr int kDatasetSchemaVersion = 1;

struct InstanceAnnotation {
    int class_label = 0;
    Box visible_box, amodal_box;
    BinaryMask visible_mask, amodal_mask;  // evaluation only, never read by training losses
    OcclusionLevel level;
};

struct SceneAnnotation {
    std::string image_id;
    int height = 0, width = 0;
    std::vector<InstanceAnnotation> instances;
};

struct GenConfig {
    int width = 64, height = 64;
    int min_instances = 3, max_instances = 5;
    // ellipse, rectangle, convex polygon, vehicle sprite
    std::vector<double> shape_weights{1.0, 1.0, 1.0, 1.0};
    // target share of instances per occlusion level; must sum to 1
    std::vector<double> level_distribution{0.25, 0.25, 0.25, 0.25};
    std::vector<OcclusionLevel> bins = kins_bins();
    double min_object_diameter = 14.0;
    double max_object_diameter = 30.0;
    double texture_noise = 0.03;        // per-channel colour jitter amplitude
    double min_color_separation = 0.4;  // between instance/background base colours
    int distractor_count = 0;           // unannotated occluders, stress-testing only
    int max_placement_attempts = 50;
    uint64_t seed = 1;

    uint64_t hash() const;
};

// JSON config file; unknown keys are rejected, missing keys keep defaults.
GenConfig load_gen_config(const std::string& path);

// One scene: shapes placed with a total depth order, occluders composited on
// top. Amodal masks are recorded before occlusion, visible masks after. The
// per-instance occlusion ratio is resampled toward a target bin drawn from
// level_distribution (best effort, max_placement_attempts tries).
std::pair<Image, SceneAnnotation> generate_scene(const GenConfig& cfg, uint64_t scene_seed);

struct Dataset {
    int width = 0, height = 0;
    std::vector<Image> images;
    std::vector<SceneAnnotation> annotations;
};

// Scene seeds derive from (cfg.seed, image_id), so any generation order
// produces identical datasets.
Dataset generate_dataset(const GenConfig& cfg, int scenes);

void write_dataset(const Dataset& data, const std::string& dir, const GenConfig& cfg);
Dataset read_dataset(const std::string& dir);

// Row-major run-length encoding, alternating zero/one run lengths starting
// with zeros.
std::string rle_encode(const BinaryMask& m);
BinaryMask rle_decode(const std::string& s, int h, int w);

}  // namespace amodal
