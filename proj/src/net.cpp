#include "amodal/net.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "amodal/errors.hpp"
#include "amodal/json_conv.hpp"
#include "amodal/rng.hpp"

namespace amodal {

using nlohmann::json;

namespace {

inline int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }

// 3x3 convolution, padding 1. Weight layout: [out_c][in_c][ky][kx].
void conv3x3_forward(const Tensor& in, const std::vector<float>& w, const std::vector<float>& b,
                     int out_c, int stride, bool relu, Tensor& out) {
    const int ho = conv_out_dim(in.h, stride);
    const int wo = conv_out_dim(in.w, stride);
    out = Tensor(out_c, ho, wo);
    for (int o = 0; o < out_c; ++o) {
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                float acc = b[o];
                const int yc = i * stride, xc = j * stride;
                for (int c = 0; c < in.c; ++c) {
                    const size_t wbase = ((static_cast<size_t>(o) * in.c + c) * 3) * 3;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int y = yc + ky - 1;
                        if (y < 0 || y >= in.h) continue;
                        const float* row = &in.v[(static_cast<size_t>(c) * in.h + y) * in.w];
                        for (int kx = 0; kx < 3; ++kx) {
                            const int x = xc + kx - 1;
                            if (x < 0 || x >= in.w) continue;
                            acc += row[x] * w[wbase + ky * 3 + kx];
                        }
                    }
                }
                out.at(o, i, j) = relu ? std::max(acc, 0.f) : acc;
            }
        }
    }
}

// d_out is the gradient w.r.t. the post-activation output.
void conv3x3_backward(const Tensor& in, const Tensor& out, const std::vector<float>& w, int out_c,
                      int stride, bool relu, const Tensor& d_out, Tensor* d_in,
                      std::vector<float>* d_w, std::vector<float>* d_b) {
    if (d_in && (d_in->c != in.c || d_in->h != in.h || d_in->w != in.w)) *d_in = Tensor(in.c, in.h, in.w);
    for (int o = 0; o < out_c; ++o) {
        for (int i = 0; i < out.h; ++i) {
            for (int j = 0; j < out.w; ++j) {
                float g = d_out.at(o, i, j);
                if (relu && out.at(o, i, j) <= 0.f) continue;
                if (g == 0.f) continue;
                (*d_b)[o] += g;
                const int yc = i * stride, xc = j * stride;
                for (int c = 0; c < in.c; ++c) {
                    const size_t wbase = ((static_cast<size_t>(o) * in.c + c) * 3) * 3;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int y = yc + ky - 1;
                        if (y < 0 || y >= in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int x = xc + kx - 1;
                            if (x < 0 || x >= in.w) continue;
                            (*d_w)[wbase + ky * 3 + kx] += g * in.at(c, y, x);
                            if (d_in) d_in->at(c, y, x) += g * w[wbase + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

void nearest_up2(const Tensor& in, int ho, int wo, Tensor& out) {
    out = Tensor(in.c, ho, wo);
    for (int c = 0; c < in.c; ++c)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) out.at(c, i, j) = in.at(c, std::min(i / 2, in.h - 1), std::min(j / 2, in.w - 1));
}

void nearest_up2_backward(const Tensor& d_out, Tensor& d_in) {
    for (int c = 0; c < d_out.c; ++c)
        for (int i = 0; i < d_out.h; ++i)
            for (int j = 0; j < d_out.w; ++j)
                d_in.at(c, std::min(i / 2, d_in.h - 1), std::min(j / 2, d_in.w - 1)) += d_out.at(c, i, j);
}

struct BilinearTap {
    int y0, y1, x0, x1;
    float fy, fx;
};

inline BilinearTap bilinear_tap(int i, int j, int hi, int wi, int ho, int wo) {
    BilinearTap t;
    const float sy = (i + 0.5f) * static_cast<float>(hi) / ho - 0.5f;
    const float sx = (j + 0.5f) * static_cast<float>(wi) / wo - 0.5f;
    float y0f = std::floor(sy), x0f = std::floor(sx);
    t.fy = sy - y0f;
    t.fx = sx - x0f;
    t.y0 = std::clamp(static_cast<int>(y0f), 0, hi - 1);
    t.y1 = std::clamp(static_cast<int>(y0f) + 1, 0, hi - 1);
    t.x0 = std::clamp(static_cast<int>(x0f), 0, wi - 1);
    t.x1 = std::clamp(static_cast<int>(x0f) + 1, 0, wi - 1);
    return t;
}

void bilinear_resize(const float* in, int hi, int wi, float* out, int ho, int wo) {
    for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
            const BilinearTap t = bilinear_tap(i, j, hi, wi, ho, wo);
            const float a = in[t.y0 * wi + t.x0], b = in[t.y0 * wi + t.x1];
            const float c = in[t.y1 * wi + t.x0], d = in[t.y1 * wi + t.x1];
            out[i * wo + j] = (1 - t.fy) * ((1 - t.fx) * a + t.fx * b) + t.fy * ((1 - t.fx) * c + t.fx * d);
        }
    }
}

void bilinear_resize_backward(const float* d_out, int ho, int wo, float* d_in, int hi, int wi) {
    for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
            const float g = d_out[i * wo + j];
            if (g == 0.f) continue;
            const BilinearTap t = bilinear_tap(i, j, hi, wi, ho, wo);
            d_in[t.y0 * wi + t.x0] += g * (1 - t.fy) * (1 - t.fx);
            d_in[t.y0 * wi + t.x1] += g * (1 - t.fy) * t.fx;
            d_in[t.y1 * wi + t.x0] += g * t.fy * (1 - t.fx);
            d_in[t.y1 * wi + t.x1] += g * t.fy * t.fx;
        }
    }
}

}  // namespace

uint64_t model_fingerprint(const ModelConfig& cfg) { return fnv1a64(model_config_to_json(cfg).dump()); }

std::string fingerprint_hex(uint64_t fp) { return to_hex64(fp); }

int head_param_count(int in_channels, int width, int depth) {
    int n = in_channels * width + width;                  // first layer
    n += (depth - 2) * (width * width + width);           // hidden layers
    n += width + 1;                                       // output layer
    return n;
}

std::vector<InstanceTargets> training_targets(const SceneAnnotation& scene, int h, int w) {
    std::vector<Box> amodal_boxes;
    for (const auto& inst : scene.instances) amodal_boxes.push_back(inst.amodal_box);
    std::vector<InstanceTargets> out;
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        InstanceTargets t;
        t.visible_box = scene.instances[i].visible_box;
        t.amodal_box = scene.instances[i].amodal_box;
        auto env = envelope_overlap_region(i, amodal_boxes);
        t.region = env ? rasterize_box(*env, h, w) : BinaryMask(h, w);
        out.push_back(std::move(t));
    }
    return out;
}

double InstanceQuery::coord_normalizer() const {
    const double w = visible_box.width();
    const double h = visible_box.height();
    return std::max(0.5 * std::sqrt(w * w + h * h), 4.0);
}

Tensor coord_map(const InstanceQuery& q, int stride, int h, int w) {
    Tensor m(2, h, w);
    const double cx = q.center_x(), cy = q.center_y();
    const double norm = q.coord_normalizer();
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            m.at(0, i, j) = static_cast<float>((j * stride - cx) / norm);
            m.at(1, i, j) = static_cast<float>((i * stride - cy) / norm);
        }
    }
    return m;
}

std::array<int, 3> Network::head_in_channels() const {
    const int base = cfg_.mask_channels + 2;
    return {base, base, base + 1};  // visible, region, amodal (+ m_v channel)
}

int Network::total_head_params() const {
    auto in = head_in_channels();
    int n = 0;
    for (int c : in) n += head_param_count(c, cfg_.head_width, cfg_.head_depth);
    return n;
}

int Network::controller_in_dim() const { return cfg_.base_channels + cfg_.class_embed_dim; }

Network::Network(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    auto init_conv = [&](Param& w, Param& b, const std::string& name, int in_c, int out_c) {
        w.init(name + ".w", static_cast<size_t>(out_c) * in_c * 9);
        b.init(name + ".b", out_c);
        const double stddev = std::sqrt(2.0 / (in_c * 9.0));
        for (float& x : w.value) x = static_cast<float>(rng.normal(0.0, stddev));
    };
    init_conv(stem_w_, stem_b_, "stem", cfg_.in_channels, cfg_.stem_channels);
    init_conv(down4_w_, down4_b_, "down4", cfg_.stem_channels, cfg_.base_channels);
    init_conv(down8_w_, down8_b_, "down8", cfg_.base_channels, cfg_.base_channels);
    init_conv(post8_w_, post8_b_, "post8", cfg_.base_channels, cfg_.base_channels);
    init_conv(trunk_w_, trunk_b_, "trunk", cfg_.base_channels, cfg_.mask_channels);

    const int n_theta = total_head_params();
    const int n_in = controller_in_dim();
    ctrl_w_.init("controller.w", static_cast<size_t>(n_theta) * n_in);
    ctrl_b_.init("controller.b", n_theta);
    for (float& x : ctrl_w_.value) x = static_cast<float>(rng.normal(0.0, 0.01));

    class_embed_.init("class_embed", static_cast<size_t>(cfg_.num_classes) * cfg_.class_embed_dim);
    for (float& x : class_embed_.value) x = static_cast<float>(rng.normal(0.0, 0.2));
}

std::vector<Param*> Network::params() {
    return {&stem_w_, &stem_b_, &down4_w_, &down4_b_, &down8_w_, &down8_b_, &post8_w_,
            &post8_b_, &trunk_w_, &trunk_b_, &ctrl_w_, &ctrl_b_, &class_embed_};
}

std::vector<const Param*> Network::params() const {
    auto self = const_cast<Network*>(this);
    std::vector<const Param*> out;
    for (Param* p : self->params()) out.push_back(p);
    return out;
}

SceneContext Network::forward_scene(const Image& img) const {
    if (img.h <= 0 || img.w <= 0) throw std::invalid_argument("forward_scene: empty image");
    SceneContext ctx;
    ctx.img_h = img.h;
    ctx.img_w = img.w;
    ctx.input = Tensor(3, img.h, img.w);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < img.h; ++i)
            for (int j = 0; j < img.w; ++j) ctx.input.at(c, i, j) = static_cast<float>(img.at(i, j, c));

    conv3x3_forward(ctx.input, stem_w_.value, stem_b_.value, cfg_.stem_channels, 2, true, ctx.act_stem);
    conv3x3_forward(ctx.act_stem, down4_w_.value, down4_b_.value, cfg_.base_channels, 2, true, ctx.act_p4);
    conv3x3_forward(ctx.act_p4, down8_w_.value, down8_b_.value, cfg_.base_channels, 2, true, ctx.act_c8);
    conv3x3_forward(ctx.act_c8, post8_w_.value, post8_b_.value, cfg_.base_channels, 1, true, ctx.act_p8);

    Tensor up8;
    nearest_up2(ctx.act_p8, ctx.act_p4.h, ctx.act_p4.w, up8);
    ctx.act_tsum = ctx.act_p4;
    for (size_t k = 0; k < ctx.act_tsum.v.size(); ++k) ctx.act_tsum.v[k] += up8.v[k];
    conv3x3_forward(ctx.act_tsum, trunk_w_.value, trunk_b_.value, cfg_.mask_channels, 1, true, ctx.act_trunk);
    return ctx;
}

FeaturePyramid Network::extract_features(const Image& img) const {
    SceneContext ctx = forward_scene(img);
    FeaturePyramid pyr;
    pyr.levels.push_back({ModelConfig::kStrideLevel0, std::move(ctx.act_p4)});
    pyr.levels.push_back({ModelConfig::kStrideLevel1, std::move(ctx.act_p8)});
    return pyr;
}

void Network::controller_forward(const Tensor& p8, const InstanceQuery& q, int* cell_i, int* cell_j,
                                 std::vector<float>* ctrl_in, std::vector<float>* theta) const {
    const double cx = q.center_x(), cy = q.center_y();
    const int stride = ModelConfig::kStrideLevel1;
    const int max_x = p8.w * stride, max_y = p8.h * stride;
    if (cx < 0 || cy < 0 || cx >= max_x || cy >= max_y)
        throw std::invalid_argument("instance query center outside image");
    *cell_i = std::clamp(static_cast<int>(cy) / stride, 0, p8.h - 1);
    *cell_j = std::clamp(static_cast<int>(cx) / stride, 0, p8.w - 1);

    const int n_in = controller_in_dim();
    ctrl_in->assign(n_in, 0.f);
    for (int c = 0; c < cfg_.base_channels; ++c) (*ctrl_in)[c] = p8.at(c, *cell_i, *cell_j);
    if (cfg_.class_conditioning) {
        if (q.class_label < 0 || q.class_label >= cfg_.num_classes)
            throw std::invalid_argument("class label out of range");
        for (int e = 0; e < cfg_.class_embed_dim; ++e)
            (*ctrl_in)[cfg_.base_channels + e] =
                class_embed_.value[static_cast<size_t>(q.class_label) * cfg_.class_embed_dim + e];
    }

    const int n_theta = total_head_params();
    theta->assign(n_theta, 0.f);
    for (int r = 0; r < n_theta; ++r) {
        float acc = ctrl_b_.value[r];
        const float* row = &ctrl_w_.value[static_cast<size_t>(r) * n_in];
        for (int k = 0; k < n_in; ++k) acc += row[k] * (*ctrl_in)[k];
        (*theta)[r] = acc;
    }
}

HeadParams Network::generate_head_params(const FeaturePyramid& pyr, const InstanceQuery& q) const {
    const Tensor* p8 = nullptr;
    for (const auto& lvl : pyr.levels)
        if (lvl.stride == ModelConfig::kStrideLevel1) p8 = &lvl.grid;
    if (!p8) throw std::invalid_argument("generate_head_params: missing stride-8 level");
    int ci, cj;
    std::vector<float> ctrl_in, theta;
    controller_forward(*p8, q, &ci, &cj, &ctrl_in, &theta);

    auto in = head_in_channels();
    HeadParams hp;
    size_t off = 0;
    auto take = [&](int cin) {
        const size_t n = head_param_count(cin, cfg_.head_width, cfg_.head_depth);
        std::vector<float> v(theta.begin() + off, theta.begin() + off + n);
        off += n;
        return v;
    };
    hp.visible = take(in[0]);
    hp.region = take(in[1]);
    hp.amodal = take(in[2]);
    return hp;
}

namespace {

// Per-pixel MLP made of 1x1 layers; relu on all but the last layer.
void head_forward(const Tensor& in, const float* theta, int width, int depth,
                  std::vector<Tensor>& acts) {
    acts.clear();
    const Tensor* cur = &in;
    size_t off = 0;
    for (int l = 0; l < depth; ++l) {
        const int cin = cur->c;
        const int cout = (l == depth - 1) ? 1 : width;
        const bool relu = l != depth - 1;
        Tensor out(cout, cur->h, cur->w);
        const float* w = theta + off;
        const float* b = theta + off + static_cast<size_t>(cout) * cin;
        const int npix = cur->h * cur->w;
        for (int o = 0; o < cout; ++o) {
            float* dst = &out.v[static_cast<size_t>(o) * npix];
            for (int p = 0; p < npix; ++p) dst[p] = b[o];
            for (int c = 0; c < cin; ++c) {
                const float wv = w[o * cin + c];
                const float* src = &cur->v[static_cast<size_t>(c) * npix];
                for (int p = 0; p < npix; ++p) dst[p] += wv * src[p];
            }
            if (relu)
                for (int p = 0; p < npix; ++p) dst[p] = std::max(dst[p], 0.f);
        }
        off += static_cast<size_t>(cout) * cin + cout;
        acts.push_back(std::move(out));
        cur = &acts.back();
    }
}

// Gradient w.r.t. theta and the head input. d_last is the gradient w.r.t.
// the final logits.
void head_backward(const Tensor& in, const std::vector<Tensor>& acts, const float* theta,
                   int width, int depth, const Tensor& d_last, float* d_theta, Tensor* d_in) {
    // offsets of each layer inside theta
    std::vector<size_t> offs(depth);
    std::vector<int> cins(depth), couts(depth);
    size_t off = 0;
    int cin = in.c;
    for (int l = 0; l < depth; ++l) {
        const int cout = (l == depth - 1) ? 1 : width;
        offs[l] = off;
        cins[l] = cin;
        couts[l] = cout;
        off += static_cast<size_t>(cout) * cin + cout;
        cin = cout;
    }

    Tensor d_cur = d_last;
    for (int l = depth - 1; l >= 0; --l) {
        const Tensor& input = (l == 0) ? in : acts[l - 1];
        const Tensor& output = acts[l];
        const bool relu = l != depth - 1;
        const int npix = input.h * input.w;
        const float* w = theta + offs[l];
        float* dw = d_theta + offs[l];
        float* db = d_theta + offs[l] + static_cast<size_t>(couts[l]) * cins[l];

        if (relu)
            for (size_t k = 0; k < d_cur.v.size(); ++k)
                if (output.v[k] <= 0.f) d_cur.v[k] = 0.f;

        Tensor d_prev(cins[l], input.h, input.w);
        for (int o = 0; o < couts[l]; ++o) {
            const float* g = &d_cur.v[static_cast<size_t>(o) * npix];
            float gsum = 0.f;
            for (int p = 0; p < npix; ++p) gsum += g[p];
            db[o] += gsum;
            for (int c = 0; c < cins[l]; ++c) {
                const float* src = &input.v[static_cast<size_t>(c) * npix];
                float acc = 0.f;
                for (int p = 0; p < npix; ++p) acc += g[p] * src[p];
                dw[o * cins[l] + c] += acc;
                const float wv = w[o * cins[l] + c];
                float* dst = &d_prev.v[static_cast<size_t>(c) * npix];
                for (int p = 0; p < npix; ++p) dst[p] += wv * g[p];
            }
        }
        d_cur = std::move(d_prev);
    }
    if (d_in) *d_in = std::move(d_cur);
}

MaskGrid sigmoid_upsample(const Tensor& logits4, int ho, int wo) {
    std::vector<float> full(static_cast<size_t>(ho) * wo);
    bilinear_resize(logits4.v.data(), logits4.h, logits4.w, full.data(), ho, wo);
    MaskGrid m(ho, wo);
    for (size_t k = 0; k < full.size(); ++k) m.v[k] = 1.0 / (1.0 + std::exp(-static_cast<double>(full[k])));
    return m;
}

// dL/d(logits at stride 4) from dL/d(sigmoid output at full resolution).
Tensor mask_grad_to_logits4(const MaskGrid& m, const MaskGrid& d_m, int h4, int w4) {
    std::vector<float> d_full(m.size());
    for (size_t k = 0; k < m.v.size(); ++k)
        d_full[k] = static_cast<float>(d_m.v[k] * m.v[k] * (1.0 - m.v[k]));
    Tensor d4(1, h4, w4);
    bilinear_resize_backward(d_full.data(), m.h, m.w, d4.v.data(), h4, w4);
    return d4;
}

}  // namespace

InstanceState Network::forward_instance(const SceneContext& ctx, const InstanceQuery& q) const {
    InstanceState st;
    st.query = q;
    controller_forward(ctx.act_p8, q, &st.cell_i, &st.cell_j, &st.ctrl_in, &st.theta);

    const int h4 = ctx.act_trunk.h, w4 = ctx.act_trunk.w;
    st.coord = coord_map(q, ModelConfig::kStrideLevel0, h4, w4);

    const auto in_ch = head_in_channels();
    auto build_input = [&](int branch, const Tensor* extra) {
        Tensor x(in_ch[branch], h4, w4);
        std::copy(ctx.act_trunk.v.begin(), ctx.act_trunk.v.end(), x.v.begin());
        std::copy(st.coord.v.begin(), st.coord.v.end(),
                  x.v.begin() + ctx.act_trunk.v.size());
        if (extra)
            std::copy(extra->v.begin(), extra->v.end(),
                      x.v.begin() + ctx.act_trunk.v.size() + st.coord.v.size());
        return x;
    };

    const int width = cfg_.head_width, depth = cfg_.head_depth;
    const int nv = head_param_count(in_ch[0], width, depth);
    const int nr = head_param_count(in_ch[1], width, depth);

    st.head_in[0] = build_input(0, nullptr);
    head_forward(st.head_in[0], st.theta.data(), width, depth, st.head_acts[0]);

    st.head_in[1] = build_input(1, nullptr);
    head_forward(st.head_in[1], st.theta.data() + nv, width, depth, st.head_acts[1]);

    // detached visible prediction as the amodal clue channel
    const Tensor& logit_v4 = st.head_acts[0].back();
    st.mv_s4 = Tensor(1, h4, w4);
    if (cfg_.amodal_uses_visible)
        for (size_t k = 0; k < logit_v4.v.size(); ++k)
            st.mv_s4.v[k] = 1.f / (1.f + std::exp(-logit_v4.v[k]));

    st.head_in[2] = build_input(2, &st.mv_s4);
    head_forward(st.head_in[2], st.theta.data() + nv + nr, width, depth, st.head_acts[2]);

    st.out.m_v = sigmoid_upsample(st.head_acts[0].back(), ctx.img_h, ctx.img_w);
    st.out.m_r = sigmoid_upsample(st.head_acts[1].back(), ctx.img_h, ctx.img_w);
    st.out.m_a = sigmoid_upsample(st.head_acts[2].back(), ctx.img_h, ctx.img_w);
    return st;
}

void Network::backward_instance(SceneContext& ctx, const InstanceState& st, const MaskGrid& d_mv,
                                const MaskGrid& d_ma, const MaskGrid& d_mr) {
    const int h4 = ctx.act_trunk.h, w4 = ctx.act_trunk.w;
    if (!ctx.has_grad) {
        ctx.d_p4 = Tensor(cfg_.base_channels, ctx.act_p4.h, ctx.act_p4.w);
        ctx.d_p8 = Tensor(cfg_.base_channels, ctx.act_p8.h, ctx.act_p8.w);
        ctx.d_trunk = Tensor(cfg_.mask_channels, h4, w4);
        ctx.has_grad = true;
    }

    const auto in_ch = head_in_channels();
    const int width = cfg_.head_width, depth = cfg_.head_depth;
    const int nv = head_param_count(in_ch[0], width, depth);
    const int nr = head_param_count(in_ch[1], width, depth);

    std::vector<float> d_theta(st.theta.size(), 0.f);
    const std::array<const MaskGrid*, 3> d_out{&d_mv, &d_mr, &d_ma};
    const std::array<const MaskGrid*, 3> out{&st.out.m_v, &st.out.m_r, &st.out.m_a};
    const std::array<size_t, 3> theta_off{0, static_cast<size_t>(nv), static_cast<size_t>(nv) + nr};

    for (int br = 0; br < 3; ++br) {
        Tensor d_logit4 = mask_grad_to_logits4(*out[br], *d_out[br], h4, w4);
        Tensor d_in;
        head_backward(st.head_in[br], st.head_acts[br], st.theta.data() + theta_off[br], width,
                      depth, d_logit4, d_theta.data() + theta_off[br], &d_in);
        // route input gradients: trunk channels accumulate, coord and the
        // detached m_v channel are dropped
        for (int c = 0; c < cfg_.mask_channels; ++c)
            for (size_t k = 0; k < static_cast<size_t>(h4) * w4; ++k)
                ctx.d_trunk.v[static_cast<size_t>(c) * h4 * w4 + k] +=
                    d_in.v[static_cast<size_t>(c) * h4 * w4 + k];
    }

    // controller backward
    const int n_in = controller_in_dim();
    const int n_theta = static_cast<int>(st.theta.size());
    std::vector<float> d_x(n_in, 0.f);
    for (int r = 0; r < n_theta; ++r) {
        const float g = d_theta[r];
        if (g == 0.f) continue;
        ctrl_b_.grad[r] += g;
        float* wrow_g = &ctrl_w_.grad[static_cast<size_t>(r) * n_in];
        const float* wrow = &ctrl_w_.value[static_cast<size_t>(r) * n_in];
        for (int k = 0; k < n_in; ++k) {
            wrow_g[k] += g * st.ctrl_in[k];
            d_x[k] += g * wrow[k];
        }
    }
    for (int c = 0; c < cfg_.base_channels; ++c) ctx.d_p8.at(c, st.cell_i, st.cell_j) += d_x[c];
    if (cfg_.class_conditioning)
        for (int e = 0; e < cfg_.class_embed_dim; ++e)
            class_embed_.grad[static_cast<size_t>(st.query.class_label) * cfg_.class_embed_dim + e] +=
                d_x[cfg_.base_channels + e];
}

void Network::backward_scene(SceneContext& ctx) {
    if (!ctx.has_grad) return;

    // trunk conv (relu) on tsum
    Tensor d_tsum;
    conv3x3_backward(ctx.act_tsum, ctx.act_trunk, trunk_w_.value, cfg_.mask_channels, 1, true,
                     ctx.d_trunk, &d_tsum, &trunk_w_.grad, &trunk_b_.grad);

    // tsum = p4 + up2(p8)
    for (size_t k = 0; k < d_tsum.v.size(); ++k) ctx.d_p4.v[k] += d_tsum.v[k];
    nearest_up2_backward(d_tsum, ctx.d_p8);

    Tensor d_c8;
    conv3x3_backward(ctx.act_c8, ctx.act_p8, post8_w_.value, cfg_.base_channels, 1, true, ctx.d_p8,
                     &d_c8, &post8_w_.grad, &post8_b_.grad);
    conv3x3_backward(ctx.act_p4, ctx.act_c8, down8_w_.value, cfg_.base_channels, 2, true, d_c8,
                     &ctx.d_p4, &down8_w_.grad, &down8_b_.grad);
    Tensor d_stem;
    conv3x3_backward(ctx.act_stem, ctx.act_p4, down4_w_.value, cfg_.base_channels, 2, true,
                     ctx.d_p4, &d_stem, &down4_w_.grad, &down4_b_.grad);
    conv3x3_backward(ctx.input, ctx.act_stem, stem_w_.value, cfg_.stem_channels, 2, true, d_stem,
                     nullptr, &stem_w_.grad, &stem_b_.grad);

    ctx.d_p4.zero();
    ctx.d_p8.zero();
    ctx.d_trunk.zero();
    ctx.has_grad = false;
}

void Network::zero_grad() {
    for (Param* p : params()) std::fill(p->grad.begin(), p->grad.end(), 0.f);
}

void Network::sgd_step(double lr, double momentum, double weight_decay, double scale, double clip) {
    double norm2 = 0.0;
    for (Param* p : params())
        for (float g : p->grad) norm2 += static_cast<double>(g) * g * scale * scale;
    double mult = scale;
    const double norm = std::sqrt(norm2);
    if (clip > 0.0 && norm > clip) mult *= clip / norm;
    for (Param* p : params()) {
        for (size_t k = 0; k < p->value.size(); ++k) {
            const double g = p->grad[k] * mult + weight_decay * p->value[k];
            p->mom[k] = static_cast<float>(momentum * p->mom[k] + g);
            p->value[k] -= static_cast<float>(lr * p->mom[k]);
        }
    }
}

void Network::save(const std::string& path) const {
    json j;
    j["schema_version"] = 1;
    j["config"] = model_config_to_json(cfg_);
    j["fingerprint"] = fingerprint_hex(fingerprint());
    json tensors = json::object();
    for (const Param* p : params()) tensors[p->name] = p->value;
    j["tensors"] = std::move(tensors);
    std::ofstream f(path);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f << j.dump();
}

Network Network::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint " + path + ": " + e.what());
    }
    if (j.value("schema_version", 0) != 1)
        throw DataError("unsupported checkpoint schema version in " + path);
    ModelConfig cfg = model_config_from_json(j.at("config"));
    const std::string fp = j.value("fingerprint", "");
    if (fp != fingerprint_hex(model_fingerprint(cfg)))
        throw ConfigError("checkpoint fingerprint mismatch in " + path);
    Network net(cfg, 0);
    for (Param* p : net.params()) {
        const auto& arr = j.at("tensors").at(p->name);
        if (arr.size() != p->value.size())
            throw DataError("checkpoint tensor size mismatch for " + p->name);
        for (size_t k = 0; k < p->value.size(); ++k) p->value[k] = arr[k].get<float>();
    }
    return net;
}

Network Network::load(const std::string& path, const ModelConfig& expected) {
    Network net = load(path);
    if (net.fingerprint() != model_fingerprint(expected))
        throw ConfigError("checkpoint does not match the requested model config");
    return net;
}

}  // namespace amodal
