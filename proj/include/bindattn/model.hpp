#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bindattn/common.hpp"
#include "bindattn/maskgen.hpp"
#include "bindattn/numerics.hpp"
#include "bindattn/scene.hpp"

namespace bindattn {

// RANDOM exercises the generic transformer path. ROUTING builds weights whose
// only action is to move attribute one-hots from source to destination slots
// through attention, which makes the sampled state an exact, hand-checkable
// function of the masks. ROUTING_AT confines that transport to a single layer.
enum class WeightMode { Random, Routing, RoutingAtLayer };

inline const char* weight_mode_name(WeightMode m) {
    switch (m) {
        case WeightMode::Random: return "RANDOM";
        case WeightMode::Routing: return "ROUTING";
        case WeightMode::RoutingAtLayer: return "ROUTING_AT";
    }
    return "?";
}

struct ModelConfig {
    int dim = 32;
    int heads = 4;
    int layers = 12;
    int steps = 8;
    double cfg_scale = 0.0;
    int threads = 1;
    int text_len_per_tag = 2;
    int global_text_len = -1;  // -1: text_len_per_tag * #global tags
    WeightMode weight_mode = WeightMode::Random;
    int routing_layer = -1;  // ROUTING_AT only
    uint64_t weight_seed = 1;

    void validate() const {
        if (dim < 28) throw ValidationError("dim must be >= 28 to fit the channel plan");
        if (heads < 1) throw ValidationError("heads must be >= 1");
        if (dim % heads != 0) throw ValidationError("dim must be divisible by heads");
        if (layers < 1) throw ValidationError("layers must be >= 1");
        if (steps < 1) throw ValidationError("steps must be >= 1");
        if (threads < 1) throw ValidationError("threads must be >= 1");
        if (text_len_per_tag < 1) throw ValidationError("text_len_per_tag must be >= 1");
        if (cfg_scale < 0.0) throw ValidationError("cfg_scale must be >= 0");
        if (global_text_len < -1) throw ValidationError("global_text_len must be >= -1");
        if (weight_mode == WeightMode::RoutingAtLayer &&
            (routing_layer < 0 || routing_layer >= layers))
            throw ValidationError("routing_layer must lie in [0, layers)");
    }

    int resolved_global_text_len(const SceneSpec& scene) const {
        if (global_text_len >= 0) return global_text_len;
        return text_len_per_tag * int(scene.global_tags.size());
    }
};

struct LayerWeights {
    Mat w_q, w_k, w_v, w_o;  // dim x dim
    Mat mlp_in;              // dim x 4dim
    Mat mlp_out;             // 4dim x dim
    std::vector<double> norm1_scale, norm1_shift, norm2_scale, norm2_shift;
};

struct ModelWeights {
    int dim = 0;
    int heads = 0;
    WeightMode mode = WeightMode::Random;
    int routing_layer = -1;
    uint64_t seed = 0;
    std::vector<LayerWeights> layers;
    Mat velocity_head;  // dim x dim
    Mat decode_head;    // dim x 3

    // Zero matrices with identity per-channel modulation: every layer is an
    // exact identity map, which the tests use as a fixed point.
    static ModelWeights zeros(int dim, int heads, int layers) {
        ModelWeights w;
        w.dim = dim;
        w.heads = heads;
        w.layers.resize(layers);
        for (LayerWeights& lw : w.layers) {
            lw.w_q = Mat(dim, dim);
            lw.w_k = Mat(dim, dim);
            lw.w_v = Mat(dim, dim);
            lw.w_o = Mat(dim, dim);
            lw.mlp_in = Mat(dim, 4 * dim);
            lw.mlp_out = Mat(4 * dim, dim);
            lw.norm1_scale.assign(dim, 1.0);
            lw.norm1_shift.assign(dim, 0.0);
            lw.norm2_scale.assign(dim, 1.0);
            lw.norm2_shift.assign(dim, 0.0);
        }
        w.velocity_head = Mat(dim, dim);
        w.decode_head = Mat(dim, 3);
        return w;
    }
};

// Color assigned to each attribute slot once the accumulated magnitude
// saturates the quantizer; +-1 entries only so saturation yields pure colors.
constexpr double kSlotPalette[FeatureLayout::kAttrSlots][3] = {
    {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, -1},
    {1, -1, 1},  {-1, 1, 1},  {1, 1, 1},   {-1, -1, -1},
};

inline ModelWeights make_weights(const ModelConfig& cfg) {
    cfg.validate();
    ModelWeights w = ModelWeights::zeros(cfg.dim, cfg.heads, cfg.layers);
    w.mode = cfg.weight_mode;
    w.routing_layer = (cfg.weight_mode == WeightMode::RoutingAtLayer) ? cfg.routing_layer : -1;
    w.seed = cfg.weight_seed;

    if (cfg.weight_mode == WeightMode::Random) {
        RngStream ws(cfg.weight_seed);
        double s_in = 1.0 / std::sqrt(double(cfg.dim));
        double s_mid = 1.0 / std::sqrt(double(4 * cfg.dim));
        auto fill = [&](Mat& m, const char* label, int l, double scale) {
            std::vector<double> n = ws.derive(label, uint64_t(l)).normals(m.data.size());
            for (size_t i = 0; i < n.size(); ++i) m.data[i] = n[i] * scale;
        };
        for (int l = 0; l < cfg.layers; ++l) {
            LayerWeights& lw = w.layers[l];
            fill(lw.w_q, "w_q", l, s_in);
            fill(lw.w_k, "w_k", l, s_in);
            fill(lw.w_v, "w_v", l, s_in);
            fill(lw.w_o, "w_o", l, s_in);
            fill(lw.mlp_in, "mlp_in", l, s_in);
            fill(lw.mlp_out, "mlp_out", l, s_mid);
        }
        fill(w.velocity_head, "velocity", 0, s_in);
        fill(w.decode_head, "decode", 0, s_in);
        return w;
    }

    FeatureLayout fl = FeatureLayout::for_dim(cfg.dim);
    IndexRange transport = (cfg.weight_mode == WeightMode::Routing)
                               ? hard_band(cfg.layers, 1.0 / 3.0, 2.0 / 3.0)
                               : IndexRange{cfg.routing_layer, cfg.routing_layer + 1};
    for (int l = 0; l < cfg.layers; ++l) {
        LayerWeights& lw = w.layers[l];
        for (int i = 0; i < cfg.dim; ++i) lw.w_o.at(i, i) = 1.0;
        if (transport.contains(l))
            for (int s = 0; s < FeatureLayout::kAttrSlots; ++s)
                lw.w_v.at(fl.attr_src.begin + s, fl.attr_dst.begin + s) = 1.0;
    }
    for (int s = 0; s < FeatureLayout::kAttrSlots; ++s) {
        int c = fl.attr_dst.begin + s;
        w.velocity_head.at(c, c) = -1.0;
        for (int ch = 0; ch < 3; ++ch) w.decode_head.at(c, ch) = kSlotPalette[s][ch];
    }
    return w;
}

// --- weights snapshot -------------------------------------------------------

namespace detail {
inline WeightMode parse_weight_mode(const std::string& name, const std::string& src) {
    if (name == "RANDOM") return WeightMode::Random;
    if (name == "ROUTING") return WeightMode::Routing;
    if (name == "ROUTING_AT") return WeightMode::RoutingAtLayer;
    throw ParseError(src, "unknown weight mode '" + name + "'");
}
}  // namespace detail

inline void save_weights(const std::string& path, const ModelWeights& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path);
    out << "BINDW v1 dim=" << w.dim << " heads=" << w.heads << " layers=" << w.layers.size()
        << " mode=" << weight_mode_name(w.mode) << " routing_layer=" << w.routing_layer
        << " seed=" << w.seed << "\n";
    auto put = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(sizeof(double) * v.size()));
    };
    for (const LayerWeights& lw : w.layers) {
        put(lw.w_q.data);
        put(lw.w_k.data);
        put(lw.w_v.data);
        put(lw.w_o.data);
        put(lw.mlp_in.data);
        put(lw.mlp_out.data);
        put(lw.norm1_scale);
        put(lw.norm1_shift);
        put(lw.norm2_scale);
        put(lw.norm2_shift);
    }
    put(w.velocity_head.data);
    put(w.decode_head.data);
    if (!out) throw ValidationError("short write: " + path);
}

inline ModelWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read file: " + path);
    std::string header;
    std::getline(in, header);
    int dim = 0, heads = 0, layers = 0, routing_layer = -1;
    unsigned long long seed = 0;
    char mode[32] = {0};
    if (std::sscanf(header.c_str(), "BINDW v1 dim=%d heads=%d layers=%d mode=%31s routing_layer=%d seed=%llu",
                    &dim, &heads, &layers, mode, &routing_layer, &seed) != 6)
        throw ParseError(path, "bad weights header '" + header + "'");
    if (dim < 1 || heads < 1 || layers < 1)
        throw ParseError(path, "non-positive dimensions in weights header");
    ModelWeights w = ModelWeights::zeros(dim, heads, layers);
    w.mode = detail::parse_weight_mode(mode, path);
    w.routing_layer = routing_layer;
    w.seed = seed;
    auto get = [&](std::vector<double>& v) {
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(sizeof(double) * v.size()));
        if (!in) throw ParseError(path, "truncated weights payload");
    };
    for (LayerWeights& lw : w.layers) {
        get(lw.w_q.data);
        get(lw.w_k.data);
        get(lw.w_v.data);
        get(lw.w_o.data);
        get(lw.mlp_in.data);
        get(lw.mlp_out.data);
        get(lw.norm1_scale);
        get(lw.norm1_shift);
        get(lw.norm2_scale);
        get(lw.norm2_shift);
    }
    get(w.velocity_head.data);
    get(w.decode_head.data);
    return w;
}

// --- state construction -----------------------------------------------------

inline void add_time_embedding(Mat& x, const FeatureLayout& fl, double t) {
    double s = std::sin(t), c = std::cos(t);
    for (int r = 0; r < x.rows; ++r) {
        x.at(r, fl.time.begin) += s;
        x.at(r, fl.time.begin + 1) += c;
    }
}

inline Mat init_state(const SceneSpec& scene, const TokenLayout& lay, const CellAssignment& asg,
                      const ModelConfig& cfg) {
    cfg.validate();
    FeatureLayout fl = FeatureLayout::for_dim(cfg.dim);
    Mat x(lay.seq_len, cfg.dim);
    RngStream root(scene.seed);
    RngStream text_root = root.derive("text");

    if (lay.global_text.size() > 0 && !scene.global_tags.empty()) {
        Mat g = embed_text(scene.global_tags, cfg.dim, cfg.text_len_per_tag, text_root.derive(""));
        for (int r = 0; r < lay.global_text.size(); ++r)
            std::memcpy(x.row(lay.global_text.begin + r), g.row(r % g.rows),
                        sizeof(double) * cfg.dim);
    }
    for (size_t i = 0; i < lay.instances.size(); ++i) {
        const InstanceSpec& spec = scene.instances[i];
        Mat e = embed_text(spec.tags, cfg.dim, cfg.text_len_per_tag, text_root.derive(spec.id));
        if (e.rows != lay.instances[i].text.size())
            throw ShapeError("text embedding rows do not match the token layout");
        for (int r = 0; r < e.rows; ++r)
            std::memcpy(x.row(lay.instances[i].text.begin + r), e.row(r), sizeof(double) * cfg.dim);
    }

    constexpr double kPi = 3.14159265358979323846;
    bool innate_attr = cfg.weight_mode != WeightMode::Random;
    for (int cell = 0; cell < asg.h * asg.w; ++cell) {
        int r = lay.cell_token(cell);
        RngStream cs = root.derive("image", uint64_t(cell));
        for (int j = fl.content.begin; j < fl.content.end; ++j) x.at(r, j) = cs.uniform(-1.0, 1.0);
        int ch = cell / asg.w, cw = cell % asg.w;
        x.at(r, fl.pos.begin + 0) = std::cos(kPi * (ch + 0.5) / asg.h);
        x.at(r, fl.pos.begin + 1) = std::sin(kPi * (ch + 0.5) / asg.h);
        x.at(r, fl.pos.begin + 2) = std::cos(kPi * (cw + 0.5) / asg.w);
        x.at(r, fl.pos.begin + 3) = std::sin(kPi * (cw + 0.5) / asg.w);
        double ctrl = scene.control ? (*scene.control)[cell] : 0.0;
        for (int j = fl.control.begin; j < fl.control.end; ++j) x.at(r, j) = ctrl;
        if (innate_attr && asg.owner[cell] >= 0)
            for (const std::string& tag : scene.instances[asg.owner[cell]].tags)
                x.at(r, fl.attr_src.begin + tag_slot(tag)) = 1.0;
    }

    for (size_t i = 0; i < lay.instances.size(); ++i) {
        const auto& inst = lay.instances[i];
        for (int n = 0; n < inst.bridge.size(); ++n)
            std::memcpy(x.row(inst.bridge.begin + n), x.row(lay.bridge_source(int(i), n)),
                        sizeof(double) * cfg.dim);
    }
    return x;
}

// --- forward pass -----------------------------------------------------------

namespace detail {

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

inline Mat modulated(const Mat& x, const std::vector<double>& scale,
                     const std::vector<double>& shift) {
    if (int(scale.size()) != x.cols || int(shift.size()) != x.cols)
        throw ShapeError("modulation vectors must match the channel count");
    Mat y(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < x.cols; ++c) y.at(r, c) = scale[c] * x.at(r, c) + shift[c];
    return y;
}

// Runs fn(r0, r1) over a partition of [0, rows). Each row is handled by
// exactly one worker, so results are identical for every thread count.
template <class F>
inline void parallel_rows(int rows, int threads, F&& fn) {
    int n = std::clamp(threads, 1, std::max(rows, 1));
    if (n <= 1) {
        fn(0, rows);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(n);
    int base = rows / n, rem = rows % n, start = 0;
    for (int t = 0; t < n; ++t) {
        int len = base + (t < rem ? 1 : 0);
        int r0 = start, r1 = start + len;
        start = r1;
        pool.emplace_back([&fn, &errors, t, r0, r1] {
            try {
                fn(r0, r1);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (std::thread& th : pool) th.join();
    for (std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline void transformer_layer(Mat& x, const LayerWeights& lw, const LayerMask& mask, int heads,
                              int threads) {
    const int seq = x.rows, d = x.cols;
    if (mask.seq != seq) throw ShapeError("mask size does not match the sequence length");
    if (heads < 1 || d % heads != 0) throw ShapeError("dim must be divisible by heads");
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));

    Mat y = detail::modulated(x, lw.norm1_scale, lw.norm1_shift);
    Mat q = affine(y, lw.w_q, {});
    Mat k = affine(y, lw.w_k, {});
    Mat v = affine(y, lw.w_v, {});
    Mat ctx(seq, d);

    detail::parallel_rows(seq, threads, [&](int r0, int r1) {
        std::vector<double> scores(seq);
        for (int r = r0; r < r1; ++r) {
            const uint8_t* allow = mask.allow.data() + size_t(r) * seq;
            for (int h = 0; h < heads; ++h) {
                const int off = h * dh;
                const double* qr = q.row(r) + off;
                for (int c = 0; c < seq; ++c) {
                    if (!allow[c]) {
                        scores[c] = 0.0;
                        continue;
                    }
                    const double* kr = k.row(c) + off;
                    double s = 0.0;
                    for (int j = 0; j < dh; ++j) s += qr[j] * kr[j];
                    scores[c] = s * inv_sqrt;
                }
                std::vector<double> wts = masked_softmax_row(
                    {scores.data(), size_t(seq)}, {allow, size_t(seq)});
                double* out = ctx.row(r) + off;
                for (int c = 0; c < seq; ++c) {
                    if (!allow[c]) continue;  // skipped, never accumulated
                    const double wc = wts[c];
                    const double* vr = v.row(c) + off;
                    for (int j = 0; j < dh; ++j) out[j] += wc * vr[j];
                }
            }
        }
    });

    Mat attn = affine(ctx, lw.w_o, {});
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn.data[i];

    Mat z = detail::modulated(x, lw.norm2_scale, lw.norm2_shift);
    Mat mid = affine(z, lw.mlp_in, {});
    for (double& vv : mid.data) vv = detail::gelu(vv);
    Mat mo = affine(mid, lw.mlp_out, {});
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += mo.data[i];
}

// (bridge row, backing image row) pairs, refreshed at every layer entry when
// the schedule uses per-layer bridge copies.
inline std::vector<std::pair<int, int>> bridge_copies(const TokenLayout& lay) {
    std::vector<std::pair<int, int>> out;
    for (size_t i = 0; i < lay.instances.size(); ++i) {
        const auto& inst = lay.instances[i];
        for (int n = 0; n < inst.bridge.size(); ++n)
            out.push_back({inst.bridge.begin + n, lay.bridge_source(int(i), n)});
    }
    return out;
}

inline void forward(Mat& x, const ModelWeights& w, const std::vector<LayerMask>& masks,
                    const std::vector<std::pair<int, int>>& per_layer_copies, int threads,
                    std::vector<Mat>* trace = nullptr) {
    if (masks.size() != w.layers.size())
        throw ShapeError("mask count " + std::to_string(masks.size()) +
                         " does not match layer count " + std::to_string(w.layers.size()));
    for (size_t l = 0; l < w.layers.size(); ++l) {
        for (auto [dst, src] : per_layer_copies)
            std::memcpy(x.row(dst), x.row(src), sizeof(double) * x.cols);
        transformer_layer(x, w.layers[l], masks[l], w.heads, threads);
        if (trace) trace->push_back(x);
    }
}

// Velocity for the image rows only, one row per cell in layout order.
inline Mat velocity_field(const Mat& y, const ModelWeights& w, const TokenLayout& lay) {
    Mat img(lay.image.size(), y.cols);
    for (int n = 0; n < lay.image.size(); ++n)
        std::memcpy(img.row(n), y.row(lay.image.begin + n), sizeof(double) * y.cols);
    return affine(img, w.velocity_head, {});
}

// --- sampling ---------------------------------------------------------------

struct SampleResult {
    Mat state;
    int forward_passes = 0;
    int steps_done = 0;
    int steps_total = 0;
};

// layer_trace, when given, receives the conditional branch's working state
// after every layer of every step: steps * layers matrices in order.
inline SampleResult sample_from(Mat x, const SceneSpec& scene, const TokenLayout& lay,
                                const CellAssignment& asg, const BindingSchedule& sch,
                                const ModelConfig& cfg, const ModelWeights& w,
                                std::vector<Mat>* layer_trace = nullptr) {
    cfg.validate();
    sch.validate();
    if (sch.layers() != int(w.layers.size()))
        throw ShapeError("schedule has " + std::to_string(sch.layers()) + " layers, weights have " +
                         std::to_string(w.layers.size()));
    if (x.rows != lay.seq_len || x.cols != cfg.dim)
        throw ShapeError("state shape does not match the token layout");

    FeatureLayout fl = FeatureLayout::for_dim(cfg.dim);
    std::vector<LayerMask> masks = assemble_schedule_masks(lay, sch);
    std::vector<std::pair<int, int>> copies;
    if (sch.policy.bridge_mode == BridgeMode::PerLayerCopy) copies = bridge_copies(lay);

    // The unconditional branch runs the same weights over an instance-free
    // print of the scene: global text only, everything soft, no bridges. Its
    // image rows are re-seeded from the conditional state every step.
    const bool guided = cfg.cfg_scale != 0.0;
    SceneSpec uncond_scene;
    CellAssignment uncond_asg;
    TokenLayout uncond_lay;
    Mat uncond_state;
    std::vector<LayerMask> uncond_masks;
    if (guided) {
        uncond_scene = scene;
        uncond_scene.instances.clear();
        uncond_asg = rasterize_and_assign(uncond_scene);
        uncond_lay = build_token_layout(uncond_scene, uncond_asg, cfg.text_len_per_tag,
                                        lay.global_text.size(), false);
        uncond_state = init_state(uncond_scene, uncond_lay, uncond_asg, cfg);
        BindingSchedule usch;
        usch.modes.assign(sch.layers(), BindingMode::SoftImage);
        uncond_masks = assemble_schedule_masks(uncond_lay, usch);
    }

    SampleResult res;
    res.steps_total = cfg.steps;
    const double dt = 1.0 / cfg.steps;
    for (int s = 0; s < cfg.steps; ++s) {
        const double t = 1.0 - double(s) / cfg.steps;
        Mat work = x;
        add_time_embedding(work, fl, t);
        forward(work, w, masks, copies, cfg.threads, layer_trace);
        ++res.forward_passes;
        Mat v = velocity_field(work, w, lay);

        if (guided) {
            for (int n = 0; n < lay.image.size(); ++n)
                std::memcpy(uncond_state.row(uncond_lay.image.begin + n),
                            x.row(lay.image.begin + n), sizeof(double) * cfg.dim);
            Mat uwork = uncond_state;
            add_time_embedding(uwork, fl, t);
            forward(uwork, w, uncond_masks, {}, cfg.threads);
            ++res.forward_passes;
            Mat vu = velocity_field(uwork, w, uncond_lay);
            for (size_t i = 0; i < v.data.size(); ++i)
                v.data[i] = vu.data[i] + cfg.cfg_scale * (v.data[i] - vu.data[i]);
            uncond_state = std::move(uwork);  // text rows persist; image rows get re-seeded
        }

        // Image rows step from the pre-forward state; all other rows keep the
        // layer-evolved values.
        for (int n = 0; n < lay.image.size(); ++n) {
            int r = lay.image.begin + n;
            for (int c = 0; c < cfg.dim; ++c) x.at(r, c) -= dt * v.at(n, c);
        }
        for (int r = 0; r < lay.seq_len; ++r)
            if (lay.info(r).kind != TokenKind::Image)
                std::memcpy(x.row(r), work.row(r), sizeof(double) * cfg.dim);
        ++res.steps_done;
        if (!x.all_finite())
            throw NumericalDivergence("non-finite state after step " + std::to_string(s));
    }
    res.state = std::move(x);
    return res;
}

inline SampleResult sample(const SceneSpec& scene, const TokenLayout& lay,
                           const CellAssignment& asg, const BindingSchedule& sch,
                           const ModelConfig& cfg, const ModelWeights& w,
                           std::vector<Mat>* layer_trace = nullptr) {
    return sample_from(init_state(scene, lay, asg, cfg), scene, lay, asg, sch, cfg, w, layer_trace);
}

// --- decoding ---------------------------------------------------------------

struct ImageRGB {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> px;  // row-major RGB triplets
};

inline ImageRGB decode(const SampleResult& r, const TokenLayout& lay, const CellAssignment& asg,
                       const Mat& head, int cell_px) {
    if (r.steps_done != r.steps_total)
        throw ValidationError("decode requires a fully sampled state");
    if (cell_px < 1) throw ValidationError("cell_px must be >= 1");
    if (head.rows != r.state.cols || head.cols != 3)
        throw ShapeError("decode head must be dim x 3");
    ImageRGB img;
    img.width = asg.w * cell_px;
    img.height = asg.h * cell_px;
    img.px.assign(size_t(img.width) * img.height * 3, 0);
    for (int cell = 0; cell < asg.h * asg.w; ++cell) {
        const int row = lay.cell_token(cell);
        uint8_t rgb[3];
        for (int ch = 0; ch < 3; ++ch) {
            double y = 0.0;
            for (int j = 0; j < r.state.cols; ++j) y += r.state.at(row, j) * head.at(j, ch);
            rgb[ch] = uint8_t(std::clamp(std::lround(127.5 + 127.5 * y), 0l, 255l));
        }
        const int cy = cell / asg.w, cx = cell % asg.w;
        for (int py = 0; py < cell_px; ++py)
            for (int px = 0; px < cell_px; ++px) {
                size_t o = (size_t(cy * cell_px + py) * img.width + size_t(cx * cell_px + px)) * 3;
                img.px[o] = rgb[0];
                img.px[o + 1] = rgb[1];
                img.px[o + 2] = rgb[2];
            }
    }
    return img;
}

inline void write_ppm(const std::string& path, const ImageRGB& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.px.data()), std::streamsize(img.px.size()));
    if (!out) throw ValidationError("short write: " + path);
}

}  // namespace bindattn
