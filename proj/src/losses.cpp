#include "amodal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace amodal {

namespace {

double clamp(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

void reset_grad(MaskGrid* grad, int h, int w) {
    if (!grad) return;
    grad->h = h;
    grad->w = w;
    grad->v.assign(static_cast<size_t>(h) * w, 0.0);
}

}  // namespace

double region_loss(const MaskGrid& pred, const BinaryMask& gt, double alpha_r, double eps,
                   MaskGrid* grad) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("region_loss: shape mismatch");
    reset_grad(grad, pred.h, pred.w);
    const double n = static_cast<double>(pred.size());
    double loss = 0.0;
    for (size_t k = 0; k < pred.v.size(); ++k) {
        const double p = gt.v[k] ? 1.0 : 0.0;
        const double q = clamp(pred.v[k], eps, 1.0 - eps);
        loss += p * std::log(q) + (1.0 - p) * std::log(1.0 - q);
        if (grad && pred.v[k] > eps && pred.v[k] < 1.0 - eps)
            grad->v[k] = -(alpha_r / n) * (p / q - (1.0 - p) / (1.0 - q));
    }
    return -(alpha_r / n) * loss;
}

std::vector<Pixel> build_pov_set(const MaskGrid& m_v, const BinaryMask& region, double t) {
    if (m_v.h != region.h || m_v.w != region.w)
        throw std::invalid_argument("build_pov_set: shape mismatch");
    std::vector<Pixel> pov;
    for (int i = 0; i < m_v.h; ++i)
        for (int j = 0; j < m_v.w; ++j)
            if (region.at(i, j) && m_v.at(i, j) > t) pov.push_back({i, j});
    return pov;
}

PixelEdgeSet build_edge_set(const std::vector<Pixel>& pov, int gap, int h, int w,
                            const Box& amodal_box) {
    const int off = gap + 1;
    std::set<std::pair<Pixel, Pixel>> seen;
    PixelEdgeSet out;
    for (const Pixel& p : pov) {
        for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
                if (di == 0 && dj == 0) continue;
                Pixel q{p.i + di * off, p.j + dj * off};
                if (q.i < 0 || q.i >= h || q.j < 0 || q.j >= w) continue;
                auto key = p < q ? std::make_pair(p, q) : std::make_pair(q, p);
                if (!seen.insert(key).second) continue;
                bool in_a = amodal_box.contains(p.j, p.i);
                bool in_b = amodal_box.contains(q.j, q.i);
                out.edges.push_back({key.first, key.second});
                out.gt_consistency.push_back(in_a == in_b ? 1 : 0);
            }
        }
    }
    return out;
}

double pred_consistency(const MaskGrid& m_a, const PixelEdge& e) {
    const double a1 = m_a.at(e.a.i, e.a.j);
    const double a2 = m_a.at(e.b.i, e.b.j);
    return a1 * a2 + (1.0 - a1) * (1.0 - a2);
}

double neighbor_loss(const MaskGrid& m_a, const PixelEdgeSet& edges, double eps, MaskGrid* grad) {
    reset_grad(grad, m_a.h, m_a.w);
    const size_t n_e = edges.edges.size();
    if (n_e == 0) return 0.0;
    double loss = 0.0;
    for (size_t k = 0; k < n_e; ++k) {
        const PixelEdge& e = edges.edges[k];
        const double c = edges.gt_consistency[k] ? 1.0 : 0.0;
        const double raw = pred_consistency(m_a, e);
        const double ce = clamp(raw, eps, 1.0 - eps);
        loss += c * std::log(ce) + (1.0 - c) * std::log(1.0 - ce);
        if (grad && raw > eps && raw < 1.0 - eps) {
            const double dl_dce = -(c / ce - (1.0 - c) / (1.0 - ce)) / static_cast<double>(n_e);
            const double a1 = m_a.at(e.a.i, e.a.j);
            const double a2 = m_a.at(e.b.i, e.b.j);
            grad->at(e.a.i, e.a.j) += dl_dce * (2.0 * a2 - 1.0);
            grad->at(e.b.i, e.b.j) += dl_dce * (2.0 * a1 - 1.0);
        }
    }
    return -loss / static_cast<double>(n_e);
}

double uniform_loss(const MaskGrid& m_a, const MaskGrid& m_v, const BinaryMask& region, double K,
                    MaskGrid* grad) {
    if (!m_a.same_shape(m_v) || m_a.h != region.h || m_a.w != region.w)
        throw std::invalid_argument("uniform_loss: shape mismatch");
    reset_grad(grad, m_a.h, m_a.w);
    long n_r = region.count();
    if (n_r == 0) return 0.0;
    double loss = 0.0;
    for (size_t k = 0; k < m_a.v.size(); ++k) {
        if (!region.v[k]) continue;
        const double d = m_v.v[k] - m_a.v[k];
        if (d > 0.0) {
            loss += d;
            if (grad) grad->v[k] = -K / static_cast<double>(n_r);
        }
    }
    return K * loss / static_cast<double>(n_r);
}

double connectivity_loss(const MaskGrid& m_a, const MaskGrid& m_v, const BinaryMask& region,
                         const Box& amodal_box, const LossConfig& cfg, MaskGrid* grad) {
    reset_grad(grad, m_a.h, m_a.w);
    double total = 0.0;
    MaskGrid part;
    if (cfg.enable_neighbor) {
        auto pov = build_pov_set(m_v, region, cfg.t);
        auto edges = build_edge_set(pov, cfg.neighbor_gap, m_a.h, m_a.w, amodal_box);
        total += neighbor_loss(m_a, edges, cfg.epsilon, grad ? &part : nullptr);
        if (grad)
            for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += part.v[k];
    }
    if (cfg.enable_uniform) {
        total += uniform_loss(m_a, m_v, region, cfg.K, grad ? &part : nullptr);
        if (grad)
            for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += part.v[k];
    }
    return total;
}

namespace {

// Dice loss between a projection vector and a binary target, with the
// gradient routed back to the (first) argmax pixel of each row or column.
struct AxisProjection {
    std::vector<double> value;
    std::vector<int> argmax;
};

AxisProjection project_cols(const MaskGrid& m) {
    AxisProjection p;
    p.value.assign(m.w, 0.0);
    p.argmax.assign(m.w, 0);
    for (int j = 0; j < m.w; ++j) {
        double best = m.at(0, j);
        int arg = 0;
        for (int i = 1; i < m.h; ++i) {
            if (m.at(i, j) > best) {
                best = m.at(i, j);
                arg = i;
            }
        }
        p.value[j] = best;
        p.argmax[j] = arg;
    }
    return p;
}

AxisProjection project_rows(const MaskGrid& m) {
    AxisProjection p;
    p.value.assign(m.h, 0.0);
    p.argmax.assign(m.h, 0);
    for (int i = 0; i < m.h; ++i) {
        double best = m.at(i, 0);
        int arg = 0;
        for (int j = 1; j < m.w; ++j) {
            if (m.at(i, j) > best) {
                best = m.at(i, j);
                arg = j;
            }
        }
        p.value[i] = best;
        p.argmax[i] = arg;
    }
    return p;
}

double dice_loss(const std::vector<double>& x, const std::vector<double>& t, double eps,
                 std::vector<double>* dx) {
    double inter = 0.0, sx = 0.0, st = 0.0;
    for (size_t k = 0; k < x.size(); ++k) {
        inter += x[k] * t[k];
        sx += x[k] * x[k];
        st += t[k] * t[k];
    }
    const double denom = sx + st + eps;
    if (dx) {
        dx->assign(x.size(), 0.0);
        for (size_t k = 0; k < x.size(); ++k)
            (*dx)[k] = -2.0 * t[k] / denom + 4.0 * inter * x[k] / (denom * denom);
    }
    return 1.0 - 2.0 * inter / denom;
}

}  // namespace

double projection_loss(const MaskGrid& m, const Box& box, double dice_eps, MaskGrid* grad) {
    if (!box.valid()) throw std::invalid_argument("projection_loss: degenerate box");
    reset_grad(grad, m.h, m.w);
    Box b = box.clipped(m.w, m.h);
    if (!b.valid()) throw std::invalid_argument("projection_loss: box outside grid");

    std::vector<double> tx(m.w, 0.0), ty(m.h, 0.0);
    for (int j = b.x_min; j < b.x_max; ++j) tx[j] = 1.0;
    for (int i = b.y_min; i < b.y_max; ++i) ty[i] = 1.0;

    AxisProjection px = project_cols(m);
    AxisProjection py = project_rows(m);

    std::vector<double> dpx, dpy;
    const double lx = dice_loss(px.value, tx, dice_eps, grad ? &dpx : nullptr);
    const double ly = dice_loss(py.value, ty, dice_eps, grad ? &dpy : nullptr);
    if (grad) {
        for (int j = 0; j < m.w; ++j) grad->at(px.argmax[j], j) += 0.5 * dpx[j];
        for (int i = 0; i < m.h; ++i) grad->at(i, py.argmax[i]) += 0.5 * dpy[i];
    }
    return 0.5 * (lx + ly);
}

double pairwise_loss(const MaskGrid& m, const Image& image, const Box& box, double threshold,
                     double sigma, double eps, MaskGrid* grad) {
    if (m.h != image.h || m.w != image.w)
        throw std::invalid_argument("pairwise_loss: mask/image shape mismatch");
    reset_grad(grad, m.h, m.w);
    Box b = box.clipped(m.w, m.h);
    if (!b.valid()) return 0.0;

    // four forward offsets enumerate each unordered 8-neighbor pair once
    static constexpr int kOff[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};

    struct Term {
        int i1, j1, i2, j2;
    };
    std::vector<Term> terms;
    for (int i = b.y_min; i < b.y_max; ++i) {
        for (int j = b.x_min; j < b.x_max; ++j) {
            for (const auto& o : kOff) {
                const int i2 = i + o[0], j2 = j + o[1];
                if (i2 < b.y_min || i2 >= b.y_max || j2 < b.x_min || j2 >= b.x_max) continue;
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = image.at(i, j, c) - image.at(i2, j2, c);
                    d2 += d * d;
                }
                const double sim = std::exp(-std::sqrt(d2) / sigma);
                if (sim > threshold) terms.push_back({i, j, i2, j2});
            }
        }
    }
    if (terms.empty()) return 0.0;

    const double n = static_cast<double>(terms.size());
    double loss = 0.0;
    for (const Term& t : terms) {
        const double m1 = m.at(t.i1, t.j1);
        const double m2 = m.at(t.i2, t.j2);
        const double raw = m1 * m2 + (1.0 - m1) * (1.0 - m2);
        const double p = std::max(raw, eps);
        loss += -std::log(p);
        if (grad && raw > eps) {
            const double dl_dp = -1.0 / (p * n);
            grad->at(t.i1, t.j1) += dl_dp * (2.0 * m2 - 1.0);
            grad->at(t.i2, t.j2) += dl_dp * (2.0 * m1 - 1.0);
        }
    }
    return loss / n;
}

AmodalLossParts amodal_branch_loss(const MaskGrid& m_a, const MaskGrid& m_v, const Image& image,
                                   const Box& amodal_box, const BinaryMask& region,
                                   const LossConfig& cfg, MaskGrid* grad) {
    reset_grad(grad, m_a.h, m_a.w);
    AmodalLossParts parts;
    MaskGrid g;
    parts.proj = projection_loss(m_a, amodal_box, cfg.dice_eps, grad ? &g : nullptr);
    if (grad)
        for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += cfg.alpha1_a * g.v[k];
    parts.pair = pairwise_loss(m_a, image, amodal_box, cfg.pairwise_similarity_threshold,
                               cfg.pairwise_color_sigma, cfg.epsilon, grad ? &g : nullptr);
    if (grad)
        for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += cfg.alpha2_a * g.v[k];
    parts.con = connectivity_loss(m_a, m_v, region, amodal_box, cfg, grad ? &g : nullptr);
    if (grad)
        for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += cfg.alpha3_a * g.v[k];
    parts.total = cfg.alpha1_a * parts.proj + cfg.alpha2_a * parts.pair + cfg.alpha3_a * parts.con;
    return parts;
}

VisibleLossParts visible_branch_loss(const MaskGrid& m_v, const Image& image,
                                     const Box& visible_box, const LossConfig& cfg,
                                     MaskGrid* grad) {
    reset_grad(grad, m_v.h, m_v.w);
    VisibleLossParts parts;
    MaskGrid g;
    parts.proj = projection_loss(m_v, visible_box, cfg.dice_eps, grad ? &g : nullptr);
    if (grad)
        for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += g.v[k];
    parts.pair = pairwise_loss(m_v, image, visible_box, cfg.pairwise_similarity_threshold,
                               cfg.pairwise_color_sigma, cfg.epsilon, grad ? &g : nullptr);
    if (grad)
        for (size_t k = 0; k < grad->v.size(); ++k) grad->v[k] += g.v[k];
    parts.total = parts.proj + parts.pair;
    return parts;
}

}  // namespace amodal
