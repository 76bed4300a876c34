#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "amodal/box.hpp"
#include "amodal/datagen.hpp"
#include "amodal/grid.hpp"

namespace amodal {

// Dense [channels, height, width] float tensor, channel-major.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.f) {}

    float& at(int k, int i, int j) { return v[(static_cast<size_t>(k) * h + i) * w + j]; }
    float at(int k, int i, int j) const { return v[(static_cast<size_t>(k) * h + i) * w + j]; }
    size_t size() const { return v.size(); }
    void zero() { std::fill(v.begin(), v.end(), 0.f); }
};

struct ModelConfig {
    int in_channels = 3;
    int num_classes = 4;
    int stem_channels = 16;   // stride-2 stem width
    int base_channels = 32;   // pyramid level width
    int mask_channels = 8;    // mask-feature trunk width (head input)
    int head_width = 8;       // dynamic head hidden width
    int head_depth = 3;       // number of 1x1 layers per head
    int class_embed_dim = 8;
    bool class_conditioning = true;
    bool amodal_uses_visible = true;  // feed detached m_v into the amodal head

    // strides follow from the conv layout: stem s2, down4 s2, down8 s2, post8 s1
    static constexpr int kStrideLevel0 = 4;
    static constexpr int kStrideLevel1 = 8;
};

uint64_t model_fingerprint(const ModelConfig& cfg);
std::string fingerprint_hex(uint64_t fp);

// Parameters of one dynamic head: in -> width, (depth-2) x width -> width,
// width -> 1, each layer with bias.
int head_param_count(int in_channels, int width, int depth);

struct InstanceQuery {
    Box visible_box;  // B_v at train time, B_test at test time
    int class_label = 0;

    double center_x() const { return 0.5 * (visible_box.x_min + visible_box.x_max); }
    double center_y() const { return 0.5 * (visible_box.y_min + visible_box.y_max); }

    // half the box diagonal, floored so tiny boxes keep coordinates sane
    double coord_normalizer() const;
};

// channel 0: (x_pixel - center_x)/normalizer, channel 1: same for y, with
// x_pixel = j * stride.
Tensor coord_map(const InstanceQuery& q, int stride, int h, int w);

struct FeaturePyramid {
    struct Level {
        int stride = 0;
        Tensor grid;
    };
    std::vector<Level> levels;
};

struct HeadParams {
    std::vector<float> visible, region, amodal;
};

struct BranchOutputs {
    MaskGrid m_v, m_a, m_r;  // shared shape, sigmoid outputs at image resolution
};

struct Param {
    std::string name;
    std::vector<float> value, grad, mom;

    void init(std::string n, size_t count) {
        name = std::move(n);
        value.assign(count, 0.f);
        grad.assign(count, 0.f);
        mom.assign(count, 0.f);
    }
};

// Cached activations for one image plus gradient accumulators filled by
// instance backward passes.
struct SceneContext {
    int img_h = 0, img_w = 0;
    Tensor input;
    Tensor act_stem, act_p4, act_c8, act_p8;  // backbone activations (post-relu)
    Tensor act_tsum;                          // p4 + upsampled p8 (trunk conv input)
    Tensor act_trunk;                         // mask features at stride 4
    Tensor d_p4, d_p8, d_trunk;
    bool has_grad = false;
};

// Per-instance forward cache: enough to backprop the three heads.
struct InstanceState {
    InstanceQuery query;
    int cell_i = 0, cell_j = 0;     // controller read cell on the stride-8 level
    std::vector<float> ctrl_in;     // center feature ++ class embedding
    std::vector<float> theta;       // generated head parameters, visible|region|amodal
    Tensor coord;                   // [2, h4, w4]
    std::array<Tensor, 3> head_in;  // branch inputs (visible, region, amodal)
    std::array<std::vector<Tensor>, 3> head_acts;  // per-layer outputs, last = logits
    Tensor mv_s4;                                  // sigmoid visible logits at stride 4 (detached)
    BranchOutputs out;
};

// Per-instance supervision: boxes plus the rasterized envelope overlapping
// region (all zeros when the instance overlaps nothing).
struct InstanceTargets {
    Box visible_box, amodal_box;
    BinaryMask region;
};

std::vector<InstanceTargets> training_targets(const SceneAnnotation& scene, int h, int w);

class Network {
public:
    Network(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    uint64_t fingerprint() const { return model_fingerprint(cfg_); }

    SceneContext forward_scene(const Image& img) const;
    FeaturePyramid extract_features(const Image& img) const;
    HeadParams generate_head_params(const FeaturePyramid& pyr, const InstanceQuery& q) const;
    InstanceState forward_instance(const SceneContext& ctx, const InstanceQuery& q) const;

    // Accumulates parameter gradients and feature-map gradients in ctx.
    // d_mv / d_ma / d_mr are loss gradients w.r.t. the sigmoid outputs.
    void backward_instance(SceneContext& ctx, const InstanceState& st, const MaskGrid& d_mv,
                           const MaskGrid& d_ma, const MaskGrid& d_mr);
    // Runs once per scene after all its instances.
    void backward_scene(SceneContext& ctx);

    void zero_grad();
    // value -= lr * (momentum-filtered (grad*scale + wd*value)), with global
    // norm clipping of the scaled gradient. clip <= 0 disables clipping.
    void sgd_step(double lr, double momentum, double weight_decay, double scale, double clip);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;

    void save(const std::string& path) const;
    static Network load(const std::string& path);
    static Network load(const std::string& path, const ModelConfig& expected);

    int total_head_params() const;
    int controller_in_dim() const;

private:
    void controller_forward(const Tensor& p8, const InstanceQuery& q, int* cell_i, int* cell_j,
                            std::vector<float>* ctrl_in, std::vector<float>* theta) const;
    std::array<int, 3> head_in_channels() const;

    ModelConfig cfg_;
    Param stem_w_, stem_b_;
    Param down4_w_, down4_b_;
    Param down8_w_, down8_b_;
    Param post8_w_, post8_b_;
    Param trunk_w_, trunk_b_;
    Param ctrl_w_, ctrl_b_;
    Param class_embed_;
};

}  // namespace amodal
