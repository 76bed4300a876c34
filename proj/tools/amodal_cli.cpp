// Command-line front end: generate / train / eval / gradcheck / ablate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "amodal/datagen.hpp"
#include "amodal/errors.hpp"
#include "amodal/fusion.hpp"
#include "amodal/gradcheck.hpp"
#include "amodal/train.hpp"

namespace fs = std::filesystem;
using namespace amodal;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int cmd_generate(const std::string& config_path, const std::string& out_dir, int scenes,
                 uint64_t seed, bool seed_set) {
    GenConfig cfg;
    if (!config_path.empty()) cfg = load_gen_config(config_path);
    if (seed_set) cfg.seed = seed;
    Dataset data = generate_dataset(cfg, scenes);
    write_dataset(data, out_dir, cfg);
    long instances = 0;
    for (const auto& ann : data.annotations) instances += ann.instances.size();
    std::cout << "wrote " << scenes << " scenes (" << instances << " instances) to " << out_dir
              << "\n";
    return kExitOk;
}

int cmd_train(TrainConfig cfg) {
    TrainResult res = train(cfg);
    std::cout << "finished " << cfg.total_iterations << " iterations\n"
              << "final checkpoint: " << res.final_checkpoint << "\n"
              << "log: " << res.log_path << "\n";
    if (!res.records.empty()) {
        const RunRecord& last = res.records.back();
        printf("last losses: total=%.4f visible=%.4f amodal(proj=%.4f pair=%.4f con=%.4f) region=%.4f\n",
               last.total, last.visible, last.amodal_proj, last.amodal_pair, last.amodal_con,
               last.region);
    }
    return kExitOk;
}

int cmd_eval(const std::string& dataset_dir, const std::string& checkpoint,
             const std::string& out_path, const std::string& csv_path, const EvalConfig& ecfg) {
    Dataset data = read_dataset(dataset_dir);
    Network net = Network::load(checkpoint);
    EvalReport report = evaluate(net, data, ecfg);
    std::cout << report.to_table();
    if (!report.empty_levels.empty()) {
        std::cout << "warning: empty occlusion levels omitted from the mean:";
        for (int idx : report.empty_levels) std::cout << " FG-" << idx;
        std::cout << "\n";
    }
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f) throw DataError("cannot write report: " + out_path);
        f << report.to_json_string() << "\n";
        std::cout << "report: " << out_path << "\n";
    }
    if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        if (!f) throw DataError("cannot write csv: " + csv_path);
        f << report.to_csv();
        std::cout << "csv: " << csv_path << "\n";
    }
    return kExitOk;
}

int cmd_gradcheck(uint64_t seed, double step, double tol) {
    bool all_pass = true;
    for (const auto& r : run_gradcheck(seed, step, tol)) {
        printf("%-22s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_err,
               r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        std::cerr << "gradient check failed (tolerance " << tol << ")\n";
        return kExitNumeric;
    }
    return kExitOk;
}

// The 8 toggle combinations of the ablation grid, full model first.
const bool kAblationGrid[8][3] = {
    {true, true, true},  {false, true, true},  {true, false, true},  {false, false, true},
    {true, true, false}, {false, true, false}, {true, false, false}, {false, false, false},
};

int cmd_ablate(TrainConfig base, const std::string& eval_dataset, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Dataset train_data = read_dataset(base.dataset_dir);
    Dataset eval_data =
        eval_dataset.empty() ? read_dataset(base.dataset_dir) : read_dataset(eval_dataset);

    std::ostringstream csv;
    csv << "row,UN,NE,FS";
    for (const auto& lvl : kins_bins()) csv << "," << lvl.name();
    csv << ",mean\n";

    for (int row = 0; row < 8; ++row) {
        TrainConfig cfg = base;
        cfg.loss.enable_uniform = kAblationGrid[row][0];
        cfg.loss.enable_neighbor = kAblationGrid[row][1];
        cfg.loss.enable_fusion = kAblationGrid[row][2];
        cfg.out_dir = (fs::path(out_dir) / ("row" + std::to_string(row + 1))).string();
        std::cout << "=== ablation row " << row + 1 << " (UN=" << cfg.loss.enable_uniform
                  << " NE=" << cfg.loss.enable_neighbor << " FS=" << cfg.loss.enable_fusion
                  << ") ===\n";
        train(cfg, train_data);

        Network net = Network::load((fs::path(cfg.out_dir) / "checkpoint_final.json").string());
        EvalConfig ecfg;
        ecfg.enable_fusion = cfg.loss.enable_fusion;
        EvalReport report = evaluate(net, eval_data, ecfg);
        std::cout << report.to_table();

        csv << row + 1 << "," << (kAblationGrid[row][0] ? "yes" : "no") << ","
            << (kAblationGrid[row][1] ? "yes" : "no") << ","
            << (kAblationGrid[row][2] ? "yes" : "no");
        for (const auto& lvl : kins_bins()) {
            const auto it = report.fused.find(lvl.index);
            csv << ","
                << (it != report.fused.end() ? render_one_decimal(it->second.miou * 100.0) : "-");
        }
        csv << "," << render_one_decimal(report.fused_mean * 100.0) << "\n";
    }

    const std::string csv_path = (fs::path(out_dir) / "ablation.csv").string();
    std::ofstream f(csv_path);
    if (!f) throw DataError("cannot write " + csv_path);
    f << csv.str();
    std::cout << "combined table: " << csv_path << "\n" << csv.str();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"box-supervised amodal segmentation toolkit"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "produce a synthetic occluded-scene dataset");
    std::string gen_config, gen_out;
    int gen_scenes = 100;
    uint64_t gen_seed = 1;
    gen->add_option("--config", gen_config, "generator config JSON");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--scenes", gen_scenes, "number of scenes");
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "base RNG seed");

    // train
    auto* tr = app.add_subcommand("train", "train the three-branch network");
    std::string tr_config, tr_dataset, tr_out;
    int tr_iters = 0, tr_batch = 0;
    double tr_lr = 0.0;
    uint64_t tr_seed = 0;
    bool tr_no_un = false, tr_no_ne = false, tr_no_fs = false;
    tr->add_option("--config", tr_config, "train config JSON");
    auto* tr_ds = tr->add_option("--dataset", tr_dataset, "dataset directory");
    auto* tr_od = tr->add_option("--out", tr_out, "output directory");
    auto* tr_it = tr->add_option("--iterations", tr_iters, "total iterations");
    auto* tr_bs = tr->add_option("--batch-size", tr_batch, "scenes per iteration");
    auto* tr_lr_o = tr->add_option("--base-lr", tr_lr, "base learning rate");
    auto* tr_sd = tr->add_option("--seed", tr_seed, "RNG seed");
    tr->add_flag("--no-uniform", tr_no_un, "disable the uniform loss (UN off)");
    tr->add_flag("--no-neighbor", tr_no_ne, "disable the neighbor loss (NE off)");
    tr->add_flag("--no-fusion", tr_no_fs, "disable the region branch and fusion (FS off)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_dataset, ev_ckpt, ev_out, ev_csv, ev_dump;
    bool ev_soft = false, ev_no_fs = false;
    double ev_thr = 0.5;
    ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--out", ev_out, "report JSON path");
    ev->add_option("--csv", ev_csv, "flat table CSV path");
    ev->add_option("--dump-dir", ev_dump, "write side-by-side mask panels here");
    ev->add_option("--region-threshold", ev_thr, "binarization threshold for m_r");
    ev->add_flag("--soft-fusion", ev_soft, "composite soft masks before thresholding");
    ev->add_flag("--no-fusion", ev_no_fs, "take the amodal branch everywhere");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all loss gradients");
    uint64_t gc_seed = 7;
    double gc_step = 1e-4, gc_tol = 1e-3;
    gc->add_option("--seed", gc_seed, "fixture RNG seed");
    gc->add_option("--step", gc_step, "finite-difference step");
    gc->add_option("--tol", gc_tol, "max relative error");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and evaluate the 8-row UN/NE/FS toggle grid");
    std::string ab_config, ab_dataset, ab_eval_dataset, ab_out;
    int ab_iters = 0;
    ab->add_option("--config", ab_config, "train config JSON");
    auto* ab_ds = ab->add_option("--dataset", ab_dataset, "training dataset directory");
    ab->add_option("--eval-dataset", ab_eval_dataset, "evaluation dataset (default: training set)");
    ab->add_option("--out", ab_out, "output directory")->required();
    auto* ab_it = ab->add_option("--iterations", ab_iters, "iterations per row");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints message/usage
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed())
            return cmd_generate(gen_config, gen_out, gen_scenes, gen_seed, gen_seed_opt->count() > 0);

        if (tr->parsed()) {
            TrainConfig cfg;
            if (!tr_config.empty()) cfg = load_train_config(tr_config);
            apply_env_overrides(&cfg);
            if (tr_ds->count()) cfg.dataset_dir = tr_dataset;
            if (tr_od->count()) cfg.out_dir = tr_out;
            if (tr_it->count()) cfg.total_iterations = tr_iters;
            if (tr_bs->count()) cfg.batch_size = tr_batch;
            if (tr_lr_o->count()) cfg.base_lr = tr_lr;
            if (tr_sd->count()) cfg.seed = tr_seed;
            if (tr_no_un) cfg.loss.enable_uniform = false;
            if (tr_no_ne) cfg.loss.enable_neighbor = false;
            if (tr_no_fs) cfg.loss.enable_fusion = false;
            if (cfg.dataset_dir.empty()) throw ConfigError("train: --dataset or config dataset_dir required");
            return cmd_train(cfg);
        }

        if (ev->parsed()) {
            EvalConfig ecfg;
            ecfg.enable_fusion = !ev_no_fs;
            ecfg.soft_fusion = ev_soft;
            ecfg.region_threshold = ev_thr;
            ecfg.dump_dir = ev_dump;
            return cmd_eval(ev_dataset, ev_ckpt, ev_out, ev_csv, ecfg);
        }

        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_step, gc_tol);

        if (ab->parsed()) {
            TrainConfig cfg;
            if (!ab_config.empty()) cfg = load_train_config(ab_config);
            apply_env_overrides(&cfg);
            if (ab_ds->count()) cfg.dataset_dir = ab_dataset;
            if (ab_it->count()) cfg.total_iterations = ab_iters;
            if (cfg.dataset_dir.empty()) throw ConfigError("ablate: --dataset or config dataset_dir required");
            return cmd_ablate(cfg, ab_eval_dataset, ab_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
