#include "amodal/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "amodal/losses.hpp"
#include "amodal/rng.hpp"

namespace amodal {

namespace {

constexpr int kSize = 8;

MaskGrid random_grid(Rng& rng, double lo = 0.2, double hi = 0.8) {
    MaskGrid m(kSize, kSize);
    for (double& x : m.v) x = rng.uniform(lo, hi);
    return m;
}

BinaryMask random_mask(Rng& rng, double p = 0.5) {
    BinaryMask m(kSize, kSize);
    for (auto& x : m.v) x = rng.uniform() < p ? 1 : 0;
    return m;
}

// small palette so the pairwise loss sees both qualifying and rejected edges
Image palette_image(Rng& rng) {
    Image img(kSize, kSize);
    const double palette[3][3] = {{0.9, 0.2, 0.2}, {0.2, 0.9, 0.3}, {0.25, 0.3, 0.9}};
    for (int i = 0; i < kSize; ++i) {
        for (int j = 0; j < kSize; ++j) {
            const int p = rng.uniform_int(0, 2);
            for (int c = 0; c < 3; ++c)
                img.at(i, j, c) = palette[p][c] + rng.uniform(-0.02, 0.02);
        }
    }
    return img;
}

// separate per-row and per-column maxima so finite differences do not flip
// the argmax
void separate_maxima(MaskGrid& m, double margin = 2e-2) {
    for (int pass = 0; pass < 12; ++pass) {
        bool changed = false;
        for (int j = 0; j < m.w; ++j) {
            int arg = 0;
            for (int i = 1; i < m.h; ++i)
                if (m.at(i, j) > m.at(arg, j)) arg = i;
            for (int i = 0; i < m.h; ++i)
                if (i != arg && m.at(arg, j) - m.at(i, j) < margin) {
                    m.at(i, j) = m.at(arg, j) - 1.5 * margin;
                    changed = true;
                }
        }
        for (int i = 0; i < m.h; ++i) {
            int arg = 0;
            for (int j = 1; j < m.w; ++j)
                if (m.at(i, j) > m.at(i, arg)) arg = j;
            for (int j = 0; j < m.w; ++j)
                if (j != arg && m.at(i, arg) - m.at(i, j) < margin) {
                    m.at(i, j) = m.at(i, arg) - 1.5 * margin;
                    changed = true;
                }
        }
        if (!changed) break;
    }
    for (double& x : m.v) x = std::min(std::max(x, 0.05), 0.95);
}

// keep the uniform-loss hinge away from its kink
void separate_from(MaskGrid& m_a, const MaskGrid& m_v, double margin = 2e-2) {
    for (size_t k = 0; k < m_a.v.size(); ++k)
        if (std::abs(m_a.v[k] - m_v.v[k]) < margin)
            m_a.v[k] = m_v.v[k] + (m_a.v[k] >= m_v.v[k] ? margin : -margin);
}

double check_one(const std::function<double(const MaskGrid&, MaskGrid*)>& f, const MaskGrid& at,
                 double step) {
    MaskGrid analytic;
    f(at, &analytic);
    double worst = 0.0;
    MaskGrid probe = at;
    for (size_t k = 0; k < at.v.size(); ++k) {
        probe.v[k] = at.v[k] + step;
        const double up = f(probe, nullptr);
        probe.v[k] = at.v[k] - step;
        const double down = f(probe, nullptr);
        probe.v[k] = at.v[k];
        const double fd = (up - down) / (2.0 * step);
        const double a = analytic.v[k];
        const double err = std::abs(a - fd) / std::max({1e-3, std::abs(a), std::abs(fd)});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(uint64_t seed, double step, double tol) {
    Rng rng(seed);
    LossConfig cfg;

    const BinaryMask gt = random_mask(rng);
    BinaryMask region = random_mask(rng, 0.6);
    const Box amodal_box{1, 2, 7, 7};
    const Box visible_box{1, 2, 5, 6};
    const Image image = palette_image(rng);

    const MaskGrid m_pred = random_grid(rng);
    MaskGrid m_v = random_grid(rng);
    MaskGrid m_a = random_grid(rng);
    separate_from(m_a, m_v);

    MaskGrid m_proj = random_grid(rng);
    separate_maxima(m_proj);

    MaskGrid m_branch = random_grid(rng);
    separate_maxima(m_branch);
    separate_from(m_branch, m_v);

    const auto pov = build_pov_set(m_v, region, cfg.t);
    const auto edges = build_edge_set(pov, cfg.neighbor_gap, kSize, kSize, amodal_box);

    std::vector<GradCheckResult> results;
    auto add = [&](const std::string& name,
                   const std::function<double(const MaskGrid&, MaskGrid*)>& f, const MaskGrid& at) {
        const double err = check_one(f, at, step);
        results.push_back({name, err, err < tol});
    };

    add("region_loss",
        [&](const MaskGrid& m, MaskGrid* g) { return region_loss(m, gt, cfg.alpha_r, cfg.epsilon, g); },
        m_pred);
    add("neighbor_loss",
        [&](const MaskGrid& m, MaskGrid* g) { return neighbor_loss(m, edges, cfg.epsilon, g); }, m_a);
    add("uniform_loss",
        [&](const MaskGrid& m, MaskGrid* g) { return uniform_loss(m, m_v, region, cfg.K, g); }, m_a);
    add("connectivity_loss",
        [&](const MaskGrid& m, MaskGrid* g) {
            return connectivity_loss(m, m_v, region, amodal_box, cfg, g);
        },
        m_a);
    add("projection_loss",
        [&](const MaskGrid& m, MaskGrid* g) { return projection_loss(m, amodal_box, cfg.dice_eps, g); },
        m_proj);
    add("pairwise_loss",
        [&](const MaskGrid& m, MaskGrid* g) {
            return pairwise_loss(m, image, amodal_box, cfg.pairwise_similarity_threshold,
                                 cfg.pairwise_color_sigma, cfg.epsilon, g);
        },
        m_proj);
    add("amodal_branch_loss",
        [&](const MaskGrid& m, MaskGrid* g) {
            return amodal_branch_loss(m, m_v, image, amodal_box, region, cfg, g).total;
        },
        m_branch);
    add("visible_branch_loss",
        [&](const MaskGrid& m, MaskGrid* g) {
            return visible_branch_loss(m, image, visible_box, cfg, g).total;
        },
        m_proj);
    return results;
}

}  // namespace amodal
