#include "amodal/fusion.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "amodal/png_io.hpp"
#include "amodal/rng.hpp"

namespace amodal {

using nlohmann::json;

BinaryMask fuse(const MaskGrid& m_v, const MaskGrid& m_a, const MaskGrid& m_r, bool enable_fusion,
                double region_threshold, bool soft_fusion) {
    if (!m_v.same_shape(m_a) || !m_v.same_shape(m_r))
        throw std::invalid_argument("fuse: shape mismatch");
    BinaryMask out(m_v.h, m_v.w);
    if (!enable_fusion) {
        for (size_t k = 0; k < out.v.size(); ++k) out.v[k] = m_a.v[k] > 0.5 ? 1 : 0;
        return out;
    }
    if (soft_fusion) {
        for (size_t k = 0; k < out.v.size(); ++k) {
            const double mixed = m_a.v[k] * m_r.v[k] + m_v.v[k] * (1.0 - m_r.v[k]);
            out.v[k] = mixed > 0.5 ? 1 : 0;
        }
        return out;
    }
    for (size_t k = 0; k < out.v.size(); ++k) {
        const bool in_region = m_r.v[k] > region_threshold;
        out.v[k] = (in_region ? m_a.v[k] : m_v.v[k]) > 0.5 ? 1 : 0;
    }
    return out;
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("iou: shape mismatch");
    long inter = 0, uni = 0;
    for (size_t k = 0; k < pred.v.size(); ++k) {
        const bool p = pred.v[k], g = gt.v[k];
        inter += (p && g);
        uni += (p || g);
    }
    if (gt.count() == 0) throw std::invalid_argument("iou: empty ground truth");
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_of_level_means(const std::vector<double>& level_means) {
    if (level_means.empty()) return 0.0;
    double s = 0.0;
    for (double x : level_means) s += x;
    return s / static_cast<double>(level_means.size());
}

std::string render_one_decimal(double percent) {
    // decimal half-up; the slack keeps values like 73.35 (not representable
    // in binary) from rounding down
    const double scaled = std::floor(percent * 10.0 + 0.5 + 1e-7) / 10.0;
    char buf[32];
    snprintf(buf, sizeof(buf), "%.1f", scaled);
    return buf;
}

namespace {

void dump_panels(const std::string& dir, const std::string& tag, const BinaryMask& gt,
                 const BranchOutputs& out, const BinaryMask& fused) {
    const int h = gt.h, w = gt.w, sep = 2;
    const int panels = 5;
    const int W = panels * w + (panels - 1) * sep;
    std::vector<uint8_t> rgb(static_cast<size_t>(3) * h * W, 32);
    auto put = [&](int panel, int i, int j, double val) {
        const int x = panel * (w + sep) + j;
        const uint8_t g = static_cast<uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
        for (int c = 0; c < 3; ++c) rgb[3 * (static_cast<size_t>(i) * W + x) + c] = g;
    };
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            put(0, i, j, gt.at(i, j));
            put(1, i, j, out.m_v.at(i, j));
            put(2, i, j, out.m_a.at(i, j));
            put(3, i, j, out.m_r.at(i, j));
            put(4, i, j, fused.at(i, j));
        }
    }
    write_png_rgb8((std::filesystem::path(dir) / (tag + ".png")).string(), W, h, rgb);
}

}  // namespace

EvalReport evaluate(const Network& net, const Dataset& data, const EvalConfig& cfg) {
    EvalReport report;
    report.config_fingerprint = to_hex64(net.fingerprint());

    std::map<int, std::pair<long, double>> fused_acc, visible_acc;  // count, iou sum
    std::map<int, OcclusionLevel> seen_levels;
    int dumped = 0;
    if (!cfg.dump_dir.empty()) std::filesystem::create_directories(cfg.dump_dir);

    for (size_t s = 0; s < data.images.size(); ++s) {
        const SceneAnnotation& ann = data.annotations[s];
        if (ann.instances.empty()) continue;
        SceneContext ctx = net.forward_scene(data.images[s]);
        for (size_t k = 0; k < ann.instances.size(); ++k) {
            const InstanceAnnotation& inst = ann.instances[k];
            InstanceQuery q{inst.visible_box, inst.class_label};
            InstanceState st = net.forward_instance(ctx, q);
            const BinaryMask fused =
                fuse(st.out.m_v, st.out.m_a, st.out.m_r, cfg.enable_fusion, cfg.region_threshold,
                     cfg.soft_fusion);
            const double f_iou = iou(fused, inst.amodal_mask);
            const double v_iou = iou(binarize(st.out.m_v, 0.5), inst.amodal_mask);
            auto& fa = fused_acc[inst.level.index];
            fa.first += 1;
            fa.second += f_iou;
            auto& va = visible_acc[inst.level.index];
            va.first += 1;
            va.second += v_iou;
            seen_levels.emplace(inst.level.index, inst.level);
            if (!cfg.dump_dir.empty() && dumped < cfg.dump_limit) {
                dump_panels(cfg.dump_dir, ann.image_id + "_i" + std::to_string(k),
                            inst.amodal_mask, st.out, fused);
                ++dumped;
            }
        }
    }

    std::vector<double> f_means, v_means;
    for (const auto& [idx, lvl] : seen_levels) {
        report.levels.push_back(lvl);
        const auto& fa = fused_acc[idx];
        const auto& va = visible_acc[idx];
        report.fused[idx] = {fa.first, fa.second / fa.first};
        report.visible[idx] = {va.first, va.second / va.first};
        f_means.push_back(report.fused[idx].miou);
        v_means.push_back(report.visible[idx].miou);
    }
    report.fused_mean = mean_of_level_means(f_means);
    report.visible_mean = mean_of_level_means(v_means);
    for (const auto& lvl : cfg.expected_levels)
        if (!seen_levels.count(lvl.index)) report.empty_levels.push_back(lvl.index);
    return report;
}

std::string EvalReport::to_json_string() const {
    json fj = json::object(), vj = json::object();
    for (const auto& lvl : levels) {
        const auto& f = fused.at(lvl.index);
        const auto& v = visible.at(lvl.index);
        fj[lvl.name()] = {{"miou", f.miou}, {"count", f.count}};
        vj[lvl.name()] = {{"miou", v.miou}, {"count", v.count}};
    }
    json j{{"config_fingerprint", config_fingerprint},
           {"fused", std::move(fj)},
           {"fused_mean", fused_mean},
           {"visible_baseline", std::move(vj)},
           {"visible_mean", visible_mean},
           {"empty_levels", empty_levels}};
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "method";
    for (const auto& lvl : levels) out << "," << lvl.name();
    out << ",mean\n";
    auto row = [&](const std::string& name, const std::map<int, LevelStats>& stats, double mean) {
        out << name;
        for (const auto& lvl : levels) out << "," << render_one_decimal(stats.at(lvl.index).miou * 100.0);
        out << "," << render_one_decimal(mean * 100.0) << "\n";
    };
    row("fused", fused, fused_mean);
    row("visible_baseline", visible, visible_mean);
    return out.str();
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    out << "method            ";
    for (const auto& lvl : levels) out << "  " << lvl.name();
    out << "   mean\n";
    auto row = [&](const std::string& name, const std::map<int, LevelStats>& stats, double mean) {
        out << name;
        for (size_t p = name.size(); p < 18; ++p) out << ' ';
        for (const auto& lvl : levels) out << "  " << render_one_decimal(stats.at(lvl.index).miou * 100.0);
        out << "   " << render_one_decimal(mean * 100.0) << "\n";
    };
    row("fused", fused, fused_mean);
    row("visible_baseline", visible, visible_mean);
    return out.str();
}

}  // namespace amodal
