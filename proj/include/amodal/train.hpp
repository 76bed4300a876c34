#pragma once

#include <string>
#include <vector>

#include "amodal/datagen.hpp"
#include "amodal/losses.hpp"
#include "amodal/net.hpp"

namespace amodal {

struct TrainConfig {
    int total_iterations = 6000;
    int batch_size = 8;
    double base_lr = 0.01;
    // milestone fractions of total_iterations; the learning rate drops by
    // lr_decay at each
    std::vector<double> lr_milestones{2.0 / 3.0, 0.9};
    double lr_decay = 0.1;
    std::string optimizer = "sgd";
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double grad_clip = 10.0;  // global norm; <= 0 disables
    // inter-branch weights of the summed objective
    double weight_visible = 1.0;
    double weight_amodal = 1.0;
    double weight_region = 1.0;
    LossConfig loss;
    ModelConfig model;
    std::string dataset_dir;
    std::string out_dir = "out";
    uint64_t seed = 1;
    int checkpoint_every = 2000;
    int log_every = 1;
};

TrainConfig load_train_config(const std::string& path);
// AMODAL_DATASET_DIR / AMODAL_OUT_DIR take precedence over the config file.
void apply_env_overrides(TrainConfig* cfg);

struct RunRecord {
    int iteration = 0;
    double lr = 0.0;
    double total = 0.0;
    double visible = 0.0;
    double amodal_proj = 0.0, amodal_pair = 0.0, amodal_con = 0.0;
    double region = 0.0;
    double wall_ms = 0.0;
};

double lr_at(const TrainConfig& cfg, int iteration);

struct TrainResult {
    std::vector<RunRecord> records;
    std::string final_checkpoint;
    std::string log_path;
};

// Joint optimization of the three branches with the staged learning rate.
// Per-iteration records land in out_dir/train_log.jsonl; checkpoints at the
// configured cadence plus a final one.
TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, const Dataset& data);

}  // namespace amodal
