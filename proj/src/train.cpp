#include "amodal/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "amodal/errors.hpp"
#include "amodal/json_conv.hpp"
#include "amodal/rng.hpp"

namespace amodal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json train_config_to_json(const TrainConfig& c) {
    return json{{"total_iterations", c.total_iterations},
                {"batch_size", c.batch_size},
                {"base_lr", c.base_lr},
                {"lr_milestones", c.lr_milestones},
                {"lr_decay", c.lr_decay},
                {"optimizer", c.optimizer},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"grad_clip", c.grad_clip},
                {"weight_visible", c.weight_visible},
                {"weight_amodal", c.weight_amodal},
                {"weight_region", c.weight_region},
                {"loss", loss_config_to_json(c.loss)},
                {"model", model_config_to_json(c.model)},
                {"dataset_dir", c.dataset_dir},
                {"out_dir", c.out_dir},
                {"seed", c.seed},
                {"checkpoint_every", c.checkpoint_every},
                {"log_every", c.log_every}};
}

void validate(const TrainConfig& c) {
    if (c.total_iterations <= 0) throw ConfigError("total_iterations must be positive");
    if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (c.base_lr <= 0) throw ConfigError("base_lr must be positive");
    if (c.optimizer != "sgd") throw ConfigError("unsupported optimizer: " + c.optimizer);
    for (size_t k = 1; k < c.lr_milestones.size(); ++k)
        if (c.lr_milestones[k] <= c.lr_milestones[k - 1])
            throw ConfigError("lr_milestones must be increasing");
    if (c.loss.t <= 0.0 || c.loss.t >= 1.0) throw ConfigError("loss.t must lie in (0,1)");
    if (c.loss.neighbor_gap < 1) throw ConfigError("loss.neighbor_gap must be >= 1");
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open train config: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid train config " + path + ": " + e.what());
    }
    TrainConfig c;
    reject_unknown_keys(j, train_config_to_json(c), "train");
    c.total_iterations = j.value("total_iterations", c.total_iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.lr_milestones = j.value("lr_milestones", c.lr_milestones);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.weight_visible = j.value("weight_visible", c.weight_visible);
    c.weight_amodal = j.value("weight_amodal", c.weight_amodal);
    c.weight_region = j.value("weight_region", c.weight_region);
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    validate(c);
    return c;
}

void apply_env_overrides(TrainConfig* cfg) {
    if (const char* d = std::getenv("AMODAL_DATASET_DIR")) cfg->dataset_dir = d;
    if (const char* o = std::getenv("AMODAL_OUT_DIR")) cfg->out_dir = o;
}

double lr_at(const TrainConfig& cfg, int iteration) {
    const double frac = static_cast<double>(iteration) / cfg.total_iterations;
    double lr = cfg.base_lr;
    for (double m : cfg.lr_milestones)
        if (frac >= m) lr *= cfg.lr_decay;
    return lr;
}

TrainResult train(const TrainConfig& cfg) {
    if (cfg.dataset_dir.empty()) throw ConfigError("dataset_dir not set");
    return train(cfg, read_dataset(cfg.dataset_dir));
}

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
    validate(cfg);
    if (data.images.empty()) throw DataError("training dataset is empty");
    long n_instances = 0;
    for (const auto& ann : data.annotations) n_instances += ann.instances.size();
    if (n_instances == 0) throw DataError("training dataset has no instances");

    fs::create_directories(cfg.out_dir);
    const std::string log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
    std::ofstream log(log_path);
    if (!log) throw DataError("cannot write " + log_path);

    // region targets are static; compute them once
    std::vector<std::vector<InstanceTargets>> targets;
    targets.reserve(data.annotations.size());
    for (const auto& ann : data.annotations)
        targets.push_back(training_targets(ann, data.height, data.width));

    Network net(cfg.model, cfg.seed);
    Rng rng(derive_seed(cfg.seed, "train-batches"));

    TrainResult result;
    result.log_path = log_path;
    const auto t0 = std::chrono::steady_clock::now();

    for (int it = 0; it < cfg.total_iterations; ++it) {
        const double lr = lr_at(cfg, it);
        net.zero_grad();

        RunRecord rec;
        rec.iteration = it;
        rec.lr = lr;
        long batch_instances = 0;

        for (int bs = 0; bs < cfg.batch_size; ++bs) {
            const int s = rng.uniform_int(0, static_cast<int>(data.images.size()) - 1);
            if (data.annotations[s].instances.empty()) continue;
            SceneContext ctx = net.forward_scene(data.images[s]);
            for (size_t k = 0; k < data.annotations[s].instances.size(); ++k) {
                const InstanceAnnotation& inst = data.annotations[s].instances[k];
                const InstanceTargets& tgt = targets[s][k];
                InstanceQuery q{inst.visible_box, inst.class_label};
                InstanceState st = net.forward_instance(ctx, q);

                MaskGrid g_v, g_a, g_r;
                const VisibleLossParts vis =
                    visible_branch_loss(st.out.m_v, data.images[s], tgt.visible_box, cfg.loss, &g_v);
                const AmodalLossParts amo = amodal_branch_loss(
                    st.out.m_a, st.out.m_v, data.images[s], tgt.amodal_box, tgt.region, cfg.loss, &g_a);
                double reg = 0.0;
                if (cfg.loss.enable_fusion) {
                    reg = region_loss(st.out.m_r, tgt.region, cfg.loss.alpha_r, cfg.loss.epsilon, &g_r);
                } else {
                    g_r = MaskGrid(st.out.m_r.h, st.out.m_r.w);
                }

                auto check = [&](double x, const char* term) {
                    if (!std::isfinite(x))
                        throw NumericError(std::string("non-finite ") + term + " at iteration " +
                                           std::to_string(it) + " (scene " +
                                           data.annotations[s].image_id + ")");
                };
                check(vis.total, "visible_branch_loss");
                check(amo.total, "amodal_branch_loss");
                check(reg, "region_loss");

                for (double& x : g_v.v) x *= cfg.weight_visible;
                for (double& x : g_a.v) x *= cfg.weight_amodal;
                for (double& x : g_r.v) x *= cfg.weight_region;
                net.backward_instance(ctx, st, g_v, g_a, g_r);

                rec.visible += cfg.weight_visible * vis.total;
                rec.amodal_proj += cfg.weight_amodal * cfg.loss.alpha1_a * amo.proj;
                rec.amodal_pair += cfg.weight_amodal * cfg.loss.alpha2_a * amo.pair;
                rec.amodal_con += cfg.weight_amodal * cfg.loss.alpha3_a * amo.con;
                rec.region += cfg.weight_region * reg;
                ++batch_instances;
            }
            net.backward_scene(ctx);
        }

        if (batch_instances == 0) continue;
        const double inv = 1.0 / static_cast<double>(batch_instances);
        rec.visible *= inv;
        rec.amodal_proj *= inv;
        rec.amodal_pair *= inv;
        rec.amodal_con *= inv;
        rec.region *= inv;
        rec.total = rec.visible + rec.amodal_proj + rec.amodal_pair + rec.amodal_con + rec.region;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        net.sgd_step(lr, cfg.momentum, cfg.weight_decay, inv, cfg.grad_clip);

        if (it % cfg.log_every == 0) {
            log << json{{"iteration", rec.iteration},
                        {"lr", rec.lr},
                        {"total", rec.total},
                        {"visible", rec.visible},
                        {"amodal_proj", rec.amodal_proj},
                        {"amodal_pair", rec.amodal_pair},
                        {"amodal_con", rec.amodal_con},
                        {"region", rec.region},
                        {"wall_ms", rec.wall_ms}}
                       .dump()
                << "\n";
            result.records.push_back(rec);
        }

        if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 &&
            it + 1 < cfg.total_iterations) {
            char name[64];
            snprintf(name, sizeof(name), "checkpoint_iter_%06d.json", it + 1);
            net.save((fs::path(cfg.out_dir) / name).string());
        }
    }

    result.final_checkpoint = (fs::path(cfg.out_dir) / "checkpoint_final.json").string();
    net.save(result.final_checkpoint);
    return result;
}

}  // namespace amodal
