#include "amodal/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "amodal/errors.hpp"
#include "amodal/png_io.hpp"
#include "amodal/rng.hpp"

namespace amodal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json gen_config_to_json(const GenConfig& c) {
    json bins = json::array();
    for (const auto& b : c.bins) bins.push_back({{"index", b.index}, {"lo", b.lo}, {"hi", b.hi}});
    return json{{"width", c.width},
                {"height", c.height},
                {"min_instances", c.min_instances},
                {"max_instances", c.max_instances},
                {"shape_weights", c.shape_weights},
                {"level_distribution", c.level_distribution},
                {"bins", bins},
                {"min_object_diameter", c.min_object_diameter},
                {"max_object_diameter", c.max_object_diameter},
                {"texture_noise", c.texture_noise},
                {"min_color_separation", c.min_color_separation},
                {"distractor_count", c.distractor_count},
                {"max_placement_attempts", c.max_placement_attempts},
                {"seed", c.seed}};
}

struct Shape {
    int family = 0;  // 0 ellipse, 1 rectangle, 2 convex polygon, 3 vehicle sprite
    double cx = 0, cy = 0;
    double a = 0, b = 0, rot = 0;                    // ellipse / rectangle
    std::vector<std::pair<double, double>> poly;     // polygon, local coords, CCW
    double scale = 0;
    int dir = 1;  // sprite facing
    double radius = 0;                               // conservative extent bound
};

bool sprite_member(const Shape& s, double u, double v) {
    const double sc = s.scale;
    if (std::abs(u) <= sc && v >= -0.15 * sc && v <= 0.45 * sc) return true;  // body
    if (std::abs(u - 0.1 * sc * s.dir) <= 0.45 * sc && v >= -0.6 * sc && v < -0.15 * sc)
        return true;  // cabin
    for (int side = -1; side <= 1; side += 2) {
        const double du = u - side * 0.55 * sc, dv = v - 0.45 * sc;
        if (du * du + dv * dv <= 0.25 * sc * 0.25 * sc) return true;  // wheels
    }
    return false;
}

bool shape_member(const Shape& s, double px, double py) {
    const double u0 = px - s.cx, v0 = py - s.cy;
    switch (s.family) {
        case 0: {
            const double c = std::cos(s.rot), sn = std::sin(s.rot);
            const double u = c * u0 + sn * v0, v = -sn * u0 + c * v0;
            return (u / s.a) * (u / s.a) + (v / s.b) * (v / s.b) <= 1.0;
        }
        case 1: {
            const double c = std::cos(s.rot), sn = std::sin(s.rot);
            const double u = c * u0 + sn * v0, v = -sn * u0 + c * v0;
            return std::abs(u) <= s.a && std::abs(v) <= s.b;
        }
        case 2: {
            const size_t n = s.poly.size();
            for (size_t k = 0; k < n; ++k) {
                const auto& p1 = s.poly[k];
                const auto& p2 = s.poly[(k + 1) % n];
                const double cross = (p2.first - p1.first) * (v0 - p1.second) -
                                     (p2.second - p1.second) * (u0 - p1.first);
                if (cross < 0) return false;
            }
            return true;
        }
        default:
            return sprite_member(s, u0, v0);
    }
}

BinaryMask rasterize_shape(const Shape& s, int h, int w) {
    BinaryMask m(h, w);
    const int i0 = std::max(0, static_cast<int>(std::floor(s.cy - s.radius)) - 1);
    const int i1 = std::min(h - 1, static_cast<int>(std::ceil(s.cy + s.radius)) + 1);
    const int j0 = std::max(0, static_cast<int>(std::floor(s.cx - s.radius)) - 1);
    const int j1 = std::min(w - 1, static_cast<int>(std::ceil(s.cx + s.radius)) + 1);
    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j)
            if (shape_member(s, j + 0.5, i + 0.5)) m.at(i, j) = 1;
    return m;
}

// convex hull (monotone chain) of local points
std::vector<std::pair<double, double>> convex_hull(std::vector<std::pair<double, double>> pts) {
    std::sort(pts.begin(), pts.end());
    auto cross = [](const std::pair<double, double>& o, const std::pair<double, double>& a,
                    const std::pair<double, double>& b) {
        return (a.first - o.first) * (b.second - o.second) -
               (a.second - o.second) * (b.first - o.first);
    };
    std::vector<std::pair<double, double>> hull(2 * pts.size());
    size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    const size_t lower = k + 1;
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
        hull[k++] = *it;
    }
    hull.resize(k - 1);
    return hull;  // counter-clockwise in (x, y-down) terms after the cross sign above
}

Shape sample_shape(Rng& rng, const GenConfig& cfg, int family) {
    Shape s;
    s.family = family;
    const double d = rng.uniform(cfg.min_object_diameter, cfg.max_object_diameter);
    s.radius = 0.5 * d;
    switch (family) {
        case 0:
            s.a = 0.5 * d;
            s.b = 0.5 * d * rng.uniform(0.5, 0.95);
            s.rot = rng.uniform(0.0, M_PI);
            break;
        case 1:
            s.a = 0.5 * d * rng.uniform(0.75, 1.0);
            s.b = 0.5 * d * rng.uniform(0.45, 0.8);
            s.rot = rng.uniform(0.0, M_PI);
            break;
        case 2: {
            const int k = rng.uniform_int(5, 8);
            std::vector<std::pair<double, double>> pts;
            for (int q = 0; q < k; ++q) {
                const double ang = rng.uniform(0.0, 2.0 * M_PI);
                const double r = 0.5 * d * rng.uniform(0.55, 1.0);
                pts.push_back({r * std::cos(ang), r * std::sin(ang)});
            }
            s.poly = convex_hull(pts);
            break;
        }
        default:
            s.scale = 0.5 * d * 0.95;
            s.dir = rng.uniform() < 0.5 ? -1 : 1;
            break;
    }
    return s;
}

int bin_index(double ratio, const std::vector<OcclusionLevel>& bins) {
    if (ratio == 0.0) return bins.front().index;
    for (size_t k = 1; k < bins.size(); ++k)
        if (ratio > bins[k].lo && ratio <= bins[k].hi) return bins[k].index;
    return bins.back().index;
}

// Per-instance target distribution for non-front instances, chosen so the
// realized mix (with the forced FG-0 front instance) tracks the configured
// one: q0 = (n*p0 - 1)/(n - 1), qk = pk * n/(n - 1), clamped and normalized.
std::vector<double> adjusted_distribution(const std::vector<double>& p, int n) {
    std::vector<double> q(p.size(), 0.0);
    if (n <= 1) return p;
    q[0] = std::max(0.0, (n * p[0] - 1.0) / (n - 1.0));
    double total = q[0];
    for (size_t k = 1; k < p.size(); ++k) {
        q[k] = p[k] * n / (n - 1.0);
        total += q[k];
    }
    for (double& x : q) x /= total;
    return q;
}

struct Placed {
    Shape shape;
    BinaryMask amodal, visible;
    int family = 0;
};

struct Rgb {
    double r = 0, g = 0, b = 0;
};

double color_dist(const Rgb& a, const Rgb& b) {
    return std::sqrt((a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) +
                     (a.b - b.b) * (a.b - b.b));
}

Rgb sample_color(Rng& rng, const std::vector<Rgb>& taken, double min_sep) {
    double sep = min_sep;
    for (int attempt = 0;; ++attempt) {
        Rgb c{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        bool ok = true;
        for (const Rgb& t : taken)
            if (color_dist(c, t) < sep) ok = false;
        if (ok) return c;
        if (attempt > 0 && attempt % 25 == 0) sep *= 0.9;
    }
}

}  // namespace

uint64_t GenConfig::hash() const { return fnv1a64(gen_config_to_json(*this).dump()); }

GenConfig load_gen_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open generator config: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid generator config " + path + ": " + e.what());
    }
    GenConfig c;
    const json defaults = gen_config_to_json(c);
    for (const auto& [key, val] : j.items()) {
        if (!defaults.contains(key)) throw ConfigError("unknown generator config key: " + key);
    }
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.min_instances = j.value("min_instances", c.min_instances);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.shape_weights = j.value("shape_weights", c.shape_weights);
    c.level_distribution = j.value("level_distribution", c.level_distribution);
    if (j.contains("bins")) {
        c.bins.clear();
        for (const auto& bj : j.at("bins"))
            c.bins.push_back({bj.at("index").get<int>(), bj.at("lo").get<double>(),
                              bj.at("hi").get<double>()});
    }
    c.min_object_diameter = j.value("min_object_diameter", c.min_object_diameter);
    c.max_object_diameter = j.value("max_object_diameter", c.max_object_diameter);
    c.texture_noise = j.value("texture_noise", c.texture_noise);
    c.min_color_separation = j.value("min_color_separation", c.min_color_separation);
    c.distractor_count = j.value("distractor_count", c.distractor_count);
    c.max_placement_attempts = j.value("max_placement_attempts", c.max_placement_attempts);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::pair<Image, SceneAnnotation> generate_scene(const GenConfig& cfg, uint64_t scene_seed) {
    double dist_total = 0.0;
    for (double x : cfg.level_distribution) dist_total += x;
    if (std::abs(dist_total - 1.0) > 1e-6)
        throw ConfigError("GenConfig: level_distribution must sum to 1");
    if (cfg.level_distribution.size() != cfg.bins.size())
        throw ConfigError("GenConfig: one distribution entry per occlusion bin");
    if (cfg.max_object_diameter + 4 > std::min(cfg.width, cfg.height))
        throw ConfigError("GenConfig: objects too large for the image");

    Rng rng(scene_seed);
    const int h = cfg.height, w = cfg.width;
    const int n = rng.uniform_int(cfg.min_instances, cfg.max_instances);
    const std::vector<double> q = adjusted_distribution(cfg.level_distribution, n);

    // placement order is front to back: instance k is occluded exactly by 0..k-1
    std::vector<Placed> placed;
    BinaryMask front_union(h, w);
    for (int k = 0; k < n; ++k) {
        const int target = (k == 0) ? cfg.bins.front().index : rng.weighted_choice(q);
        Placed best;
        bool has_best = false;
        double best_score = 1e9;
        for (int attempt = 0; attempt < cfg.max_placement_attempts; ++attempt) {
            Shape s = sample_shape(rng, cfg, rng.weighted_choice(cfg.shape_weights));
            const double margin = s.radius + 1.0;
            if (k > 0 && target != cfg.bins.front().index) {
                // aim near an already placed (fronter) instance to get occluded
                const Placed& anchor = placed[rng.uniform_int(0, k - 1)];
                const double ang = rng.uniform(0.0, 2.0 * M_PI);
                const double rad = rng.uniform(0.25, 0.95) * (s.radius + anchor.shape.radius);
                s.cx = std::clamp(anchor.shape.cx + rad * std::cos(ang), margin, w - margin);
                s.cy = std::clamp(anchor.shape.cy + rad * std::sin(ang), margin, h - margin);
            } else {
                s.cx = rng.uniform(margin, w - margin);
                s.cy = rng.uniform(margin, h - margin);
            }
            BinaryMask amodal = rasterize_shape(s, h, w);
            const long area = amodal.count();
            if (area < 16) continue;
            BinaryMask visible = amodal;
            long vis = 0;
            for (size_t px = 0; px < visible.v.size(); ++px) {
                if (front_union.v[px]) visible.v[px] = 0;
                vis += visible.v[px];
            }
            if (vis == 0) continue;
            const double ratio = 1.0 - static_cast<double>(vis) / area;
            const int level = bin_index(ratio, cfg.bins);
            const auto& tb = cfg.bins[target];
            double score;
            if (level == target)
                score = 0.0;
            else if (target == cfg.bins.front().index)
                score = ratio;
            else
                score = ratio < tb.lo ? tb.lo - ratio : ratio - tb.hi;
            if (score < best_score) {
                best_score = score;
                best = Placed{s, std::move(amodal), std::move(visible), s.family};
                has_best = true;
            }
            if (score == 0.0) break;
        }
        if (!has_best) {
            // crowded scene: fall back to any spot with some free pixels
            for (int attempt = 0; attempt < 1000 && !has_best; ++attempt) {
                Shape s = sample_shape(rng, cfg, rng.weighted_choice(cfg.shape_weights));
                const double margin = s.radius + 1.0;
                s.cx = rng.uniform(margin, w - margin);
                s.cy = rng.uniform(margin, h - margin);
                BinaryMask amodal = rasterize_shape(s, h, w);
                if (amodal.count() < 16) continue;
                BinaryMask visible = amodal;
                long vis = 0;
                for (size_t px = 0; px < visible.v.size(); ++px) {
                    if (front_union.v[px]) visible.v[px] = 0;
                    vis += visible.v[px];
                }
                if (vis == 0) continue;
                best = Placed{s, std::move(amodal), std::move(visible), s.family};
                has_best = true;
            }
            if (!has_best) throw NumericError("generate_scene: could not place instance");
        }
        for (size_t px = 0; px < front_union.v.size(); ++px)
            front_union.v[px] |= best.amodal.v[px];
        placed.push_back(std::move(best));
    }

    // unannotated distractors drawn on top of everything
    std::vector<Placed> distractors;
    for (int dcount = 0; dcount < cfg.distractor_count; ++dcount) {
        for (int attempt = 0; attempt < cfg.max_placement_attempts; ++attempt) {
            Shape s = sample_shape(rng, cfg, rng.weighted_choice(cfg.shape_weights));
            const double margin = s.radius + 1.0;
            s.cx = rng.uniform(margin, w - margin);
            s.cy = rng.uniform(margin, h - margin);
            BinaryMask amodal = rasterize_shape(s, h, w);
            if (amodal.count() < 16) continue;
            bool ok = true;
            for (const Placed& p : placed) {
                long would_keep = 0;
                for (size_t px = 0; px < amodal.v.size(); ++px)
                    would_keep += (p.visible.v[px] && !amodal.v[px]);
                if (would_keep < 4) ok = false;
            }
            if (!ok) continue;
            for (Placed& p : placed)
                for (size_t px = 0; px < amodal.v.size(); ++px)
                    if (amodal.v[px]) p.visible.v[px] = 0;
            distractors.push_back(Placed{s, std::move(amodal), BinaryMask(), s.family});
            break;
        }
    }

    // colours: background first, then one per drawn shape
    std::vector<Rgb> palette;
    palette.push_back(sample_color(rng, palette, cfg.min_color_separation));
    for (size_t k = 0; k < placed.size() + distractors.size(); ++k)
        palette.push_back(sample_color(rng, palette, cfg.min_color_separation));

    std::vector<uint8_t> bytes(static_cast<size_t>(3) * h * w);
    auto put_pixel = [&](int i, int j, const Rgb& c) {
        const double vals[3] = {c.r, c.g, c.b};
        for (int ch = 0; ch < 3; ++ch) {
            double x = vals[ch] + rng.uniform(-cfg.texture_noise, cfg.texture_noise);
            x = std::clamp(x, 0.0, 1.0);
            bytes[3 * (static_cast<size_t>(i) * w + j) + ch] =
                static_cast<uint8_t>(std::lround(x * 255.0));
        }
    };
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) put_pixel(i, j, palette[0]);
    // back to front: the last placed instance is the deepest
    for (int k = static_cast<int>(placed.size()) - 1; k >= 0; --k)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                if (placed[k].amodal.at(i, j)) put_pixel(i, j, palette[1 + k]);
    for (size_t d = 0; d < distractors.size(); ++d)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                if (distractors[d].amodal.at(i, j)) put_pixel(i, j, palette[1 + placed.size() + d]);

    SceneAnnotation ann;
    ann.height = h;
    ann.width = w;
    // report instances in a depth-independent order
    std::vector<int> order(placed.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
    for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.uniform_int(0, static_cast<int>(k) - 1)]);
    for (int idx : order) {
        const Placed& p = placed[idx];
        InstanceAnnotation inst;
        inst.class_label = p.family;
        inst.amodal_mask = p.amodal;
        inst.visible_mask = p.visible;
        inst.amodal_box = *tight_box(p.amodal);
        inst.visible_box = *tight_box(p.visible);
        inst.level = occlusion_level(p.visible, p.amodal, cfg.bins);
        ann.instances.push_back(std::move(inst));
    }

    return {bytes_to_image(h, w, bytes), std::move(ann)};
}

Dataset generate_dataset(const GenConfig& cfg, int scenes) {
    Dataset data;
    data.width = cfg.width;
    data.height = cfg.height;
    for (int s = 0; s < scenes; ++s) {
        char id[32];
        snprintf(id, sizeof(id), "scene_%06d", s);
        auto [img, ann] = generate_scene(cfg, derive_seed(cfg.seed, id));
        ann.image_id = id;
        data.images.push_back(std::move(img));
        data.annotations.push_back(std::move(ann));
    }
    return data;
}

std::string rle_encode(const BinaryMask& m) {
    std::ostringstream out;
    size_t k = 0;
    uint8_t cur = 0;
    bool first = true;
    while (k < m.v.size()) {
        size_t run = 0;
        while (k < m.v.size() && (m.v[k] != 0) == (cur != 0)) {
            ++run;
            ++k;
        }
        if (!first) out << ' ';
        out << run;
        first = false;
        cur = !cur;
    }
    if (m.v.empty()) out << 0;
    return out.str();
}

BinaryMask rle_decode(const std::string& s, int h, int w) {
    BinaryMask m(h, w);
    std::istringstream in(s);
    size_t k = 0;
    uint8_t cur = 0;
    long run;
    while (in >> run) {
        if (run < 0 || k + run > m.v.size()) throw DataError("corrupt mask run-length encoding");
        for (long q = 0; q < run; ++q) m.v[k++] = cur;
        cur = !cur;
    }
    if (k != m.v.size()) throw DataError("corrupt mask run-length encoding: wrong total");
    return m;
}

namespace {

json box_to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from_json(const json& j) {
    return Box{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

json annotation_to_json(const SceneAnnotation& ann) {
    json insts = json::array();
    for (const auto& inst : ann.instances) {
        insts.push_back({{"class_label", inst.class_label},
                         {"visible_box", box_to_json(inst.visible_box)},
                         {"amodal_box", box_to_json(inst.amodal_box)},
                         {"visible_mask_rle", rle_encode(inst.visible_mask)},
                         {"amodal_mask_rle", rle_encode(inst.amodal_mask)},
                         {"occlusion_level",
                          {{"index", inst.level.index}, {"lo", inst.level.lo}, {"hi", inst.level.hi}}}});
    }
    return json{{"schema_version", kDatasetSchemaVersion},
                {"image_id", ann.image_id},
                {"height", ann.height},
                {"width", ann.width},
                {"instances", std::move(insts)}};
}

SceneAnnotation annotation_from_json(const json& j, const std::string& path) {
    if (j.value("schema_version", -1) != kDatasetSchemaVersion)
        throw DataError("unsupported annotation schema version in " + path + " (expected " +
                        std::to_string(kDatasetSchemaVersion) + ")");
    SceneAnnotation ann;
    ann.image_id = j.at("image_id");
    ann.height = j.at("height");
    ann.width = j.at("width");
    for (const auto& ij : j.at("instances")) {
        InstanceAnnotation inst;
        inst.class_label = ij.at("class_label");
        inst.visible_box = box_from_json(ij.at("visible_box"));
        inst.amodal_box = box_from_json(ij.at("amodal_box"));
        inst.visible_mask = rle_decode(ij.at("visible_mask_rle"), ann.height, ann.width);
        inst.amodal_mask = rle_decode(ij.at("amodal_mask_rle"), ann.height, ann.width);
        inst.level.index = ij.at("occlusion_level").at("index");
        inst.level.lo = ij.at("occlusion_level").at("lo");
        inst.level.hi = ij.at("occlusion_level").at("hi");
        ann.instances.push_back(std::move(inst));
    }
    return ann;
}

}  // namespace

void write_dataset(const Dataset& data, const std::string& dir, const GenConfig& cfg) {
    fs::create_directories(dir);
    json ids = json::array();
    for (size_t s = 0; s < data.images.size(); ++s) {
        const std::string& id = data.annotations[s].image_id;
        ids.push_back(id);
        write_png_rgb8((fs::path(dir) / (id + ".png")).string(), data.width, data.height,
                       image_to_bytes(data.images[s]));
        std::ofstream f(fs::path(dir) / (id + ".json"));
        if (!f) throw DataError("cannot write annotation for " + id);
        f << annotation_to_json(data.annotations[s]).dump();
    }
    json manifest{{"schema_version", kDatasetSchemaVersion},
                  {"config_hash", to_hex64(cfg.hash())},
                  {"width", data.width},
                  {"height", data.height},
                  {"scene_ids", std::move(ids)}};
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir);
    f << manifest.dump(2);
}

Dataset read_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw DataError("missing manifest.json in " + dir);
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw DataError(std::string("corrupt manifest: ") + e.what());
    }
    if (manifest.value("schema_version", -1) != kDatasetSchemaVersion)
        throw DataError("unsupported dataset schema version in " + dir + " (expected " +
                        std::to_string(kDatasetSchemaVersion) + ")");
    Dataset data;
    data.width = manifest.at("width");
    data.height = manifest.at("height");
    for (const auto& idj : manifest.at("scene_ids")) {
        const std::string id = idj;
        const std::string png_path = (fs::path(dir) / (id + ".png")).string();
        int w = 0, h = 0;
        std::vector<uint8_t> bytes;
        read_png_rgb8(png_path, &w, &h, &bytes);
        if (w != data.width || h != data.height)
            throw DataError("image size mismatch for " + id);
        data.images.push_back(bytes_to_image(h, w, bytes));

        std::ifstream af(fs::path(dir) / (id + ".json"));
        if (!af) throw DataError("missing annotation for " + id);
        json aj;
        try {
            af >> aj;
        } catch (const json::exception& e) {
            throw DataError("corrupt annotation for " + id + ": " + e.what());
        }
        data.annotations.push_back(annotation_from_json(aj, id));
    }
    return data;
}

}  // namespace amodal
