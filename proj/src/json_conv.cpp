#include "amodal/json_conv.hpp"

#include "amodal/errors.hpp"

namespace amodal {

using nlohmann::json;

json model_config_to_json(const ModelConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"num_classes", c.num_classes},
                {"stem_channels", c.stem_channels},
                {"base_channels", c.base_channels},
                {"mask_channels", c.mask_channels},
                {"head_width", c.head_width},
                {"head_depth", c.head_depth},
                {"class_embed_dim", c.class_embed_dim},
                {"class_conditioning", c.class_conditioning},
                {"amodal_uses_visible", c.amodal_uses_visible}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    reject_unknown_keys(j, model_config_to_json(c), "model");
    c.in_channels = j.value("in_channels", c.in_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.mask_channels = j.value("mask_channels", c.mask_channels);
    c.head_width = j.value("head_width", c.head_width);
    c.head_depth = j.value("head_depth", c.head_depth);
    c.class_embed_dim = j.value("class_embed_dim", c.class_embed_dim);
    c.class_conditioning = j.value("class_conditioning", c.class_conditioning);
    c.amodal_uses_visible = j.value("amodal_uses_visible", c.amodal_uses_visible);
    return c;
}

json loss_config_to_json(const LossConfig& c) {
    return json{{"alpha1_a", c.alpha1_a},
                {"alpha2_a", c.alpha2_a},
                {"alpha3_a", c.alpha3_a},
                {"alpha_r", c.alpha_r},
                {"K", c.K},
                {"t", c.t},
                {"neighbor_gap", c.neighbor_gap},
                {"pairwise_similarity_threshold", c.pairwise_similarity_threshold},
                {"pairwise_color_sigma", c.pairwise_color_sigma},
                {"dice_eps", c.dice_eps},
                {"epsilon", c.epsilon},
                {"enable_uniform", c.enable_uniform},
                {"enable_neighbor", c.enable_neighbor},
                {"enable_fusion", c.enable_fusion}};
}

LossConfig loss_config_from_json(const json& j) {
    LossConfig c;
    reject_unknown_keys(j, loss_config_to_json(c), "loss");
    c.alpha1_a = j.value("alpha1_a", c.alpha1_a);
    c.alpha2_a = j.value("alpha2_a", c.alpha2_a);
    c.alpha3_a = j.value("alpha3_a", c.alpha3_a);
    c.alpha_r = j.value("alpha_r", c.alpha_r);
    c.K = j.value("K", c.K);
    c.t = j.value("t", c.t);
    c.neighbor_gap = j.value("neighbor_gap", c.neighbor_gap);
    c.pairwise_similarity_threshold =
        j.value("pairwise_similarity_threshold", c.pairwise_similarity_threshold);
    c.pairwise_color_sigma = j.value("pairwise_color_sigma", c.pairwise_color_sigma);
    c.dice_eps = j.value("dice_eps", c.dice_eps);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.enable_uniform = j.value("enable_uniform", c.enable_uniform);
    c.enable_neighbor = j.value("enable_neighbor", c.enable_neighbor);
    c.enable_fusion = j.value("enable_fusion", c.enable_fusion);
    return c;
}

void reject_unknown_keys(const json& j, const json& reference, const std::string& scope) {
    if (!j.is_object()) throw ConfigError("config section '" + scope + "' must be an object");
    for (const auto& [key, val] : j.items())
        if (!reference.contains(key))
            throw ConfigError("unknown config key '" + key + "' in section '" + scope + "'");
}

}  // namespace amodal
