#pragma once

#include <algorithm>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bindattn/common.hpp"
#include "bindattn/maskgen.hpp"
#include "bindattn/model.hpp"
#include "bindattn/scene.hpp"

namespace bindattn {

// Boolean influence closure over the forward dynamics: entry (q, k) is set
// when token k's initial value can affect token q's state after all layers.
// Residual paths keep a row's own history, attention unions the allowed keys'
// histories, and a per-layer bridge copy *overwrites* the bridge row's history
// with its backing image row's, discarding the bridge's own initial value.
inline LayerMask reachability(const TokenLayout& lay, const BindingSchedule& sch) {
    sch.validate();
    const int seq = lay.seq_len;
    std::vector<uint8_t> reach(size_t(seq) * seq, 0);
    for (int i = 0; i < seq; ++i) reach[size_t(i) * seq + i] = 1;

    std::vector<std::pair<int, int>> copies;
    if (sch.policy.bridge_mode == BridgeMode::PerLayerCopy) copies = bridge_copies(lay);

    for (int l = 0; l < sch.layers(); ++l) {
        for (auto [dst, src] : copies)
            std::memcpy(&reach[size_t(dst) * seq], &reach[size_t(src) * seq], size_t(seq));
        LayerMask m = assemble_layer_mask(lay, sch.modes[l], sch.policy);
        std::vector<uint8_t> next = reach;
        for (int q = 0; q < seq; ++q) {
            uint8_t* out = &next[size_t(q) * seq];
            const uint8_t* allow = &m.allow[size_t(q) * seq];
            for (int k = 0; k < seq; ++k) {
                if (!allow[k]) continue;
                const uint8_t* src_row = &reach[size_t(k) * seq];
                for (int j = 0; j < seq; ++j) out[j] |= src_row[j];
            }
        }
        reach = std::move(next);
    }

    LayerMask out;
    out.seq = seq;
    out.allow = std::move(reach);
    return out;
}

// True when no influence crosses between different non-global families
// (instances, or the background). Global text rows are exempt on both sides.
inline bool reach_block_diagonal_non_global(const LayerMask& reach, const TokenLayout& lay) {
    auto family = [&](int t) {
        const TokenInfo& info = lay.info(t);
        if (info.kind == TokenKind::GlobalText) return -1;  // exempt
        return info.instance >= 0 ? info.instance : -2;     // -2: background
    };
    for (int q = 0; q < reach.seq; ++q) {
        int fq = family(q);
        if (fq == -1) continue;
        for (int k = 0; k < reach.seq; ++k) {
            int fk = family(k);
            if (fk == -1) continue;
            if (fq != fk && reach.at(q, k)) return false;
        }
    }
    return true;
}

// --- leakage ----------------------------------------------------------------

inline constexpr uint8_t kLeakFlagZeroVector = 1;     // instance accumulator has zero norm
inline constexpr uint8_t kLeakFlagZeroAttribute = 2;  // target attribute vector has zero norm
inline constexpr uint8_t kLeakFlagEmptyRegion = 4;    // instance owns no image tokens

struct LeakageReport {
    int n = 0;
    std::vector<double> values;  // n*n cosines, row = measured instance
    std::vector<uint8_t> flags;

    double at(int i, int j) const { return values[size_t(i) * n + j]; }
    uint8_t flag_at(int i, int j) const { return flags[size_t(i) * n + j]; }
    double fidelity(int i) const { return at(i, i); }
    double mean_fidelity() const {
        if (n == 0) return 0.0;
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += at(i, i);
        return s / n;
    }
};

// Cosine between each instance's mean destination-attribute vector (over its
// image rows) and each instance's tag multi-hot. Diagonal entries are the
// fidelity; off-diagonal entries measure attribute leakage.
inline LeakageReport leakage_matrix(const Mat& state, const TokenLayout& lay,
                                    const SceneSpec& scene, const FeatureLayout& fl) {
    const int n = int(lay.instances.size());
    const int slots = FeatureLayout::kAttrSlots;
    LeakageReport rep;
    rep.n = n;
    rep.values.assign(size_t(n) * n, 0.0);
    rep.flags.assign(size_t(n) * n, 0);

    std::vector<std::vector<double>> mean(n, std::vector<double>(slots, 0.0));
    std::vector<bool> empty(n, false);
    for (int i = 0; i < n; ++i) {
        const auto& toks = lay.instances[i].image_tokens;
        if (toks.empty()) {
            empty[i] = true;
            continue;
        }
        for (int q : toks)
            for (int s = 0; s < slots; ++s) mean[i][s] += state.at(q, fl.attr_dst.begin + s);
        for (int s = 0; s < slots; ++s) mean[i][s] /= double(toks.size());
    }
    std::vector<std::vector<double>> attr(n, std::vector<double>(slots, 0.0));
    for (int j = 0; j < n; ++j)
        for (const std::string& tag : scene.instances[j].tags) attr[j][tag_slot(tag)] += 1.0;

    for (int i = 0; i < n; ++i) {
        double ni = 0.0;
        for (double v : mean[i]) ni += v * v;
        for (int j = 0; j < n; ++j) {
            uint8_t& flag = rep.flags[size_t(i) * n + j];
            if (empty[i]) flag |= kLeakFlagEmptyRegion;
            double nj = 0.0, num = 0.0;
            for (int s = 0; s < slots; ++s) {
                nj += attr[j][s] * attr[j][s];
                num += mean[i][s] * attr[j][s];
            }
            if (ni == 0.0) flag |= kLeakFlagZeroVector;
            if (nj == 0.0) flag |= kLeakFlagZeroAttribute;
            if (flag == 0) rep.values[size_t(i) * n + j] = num / (std::sqrt(ni) * std::sqrt(nj));
        }
    }
    return rep;
}

// --- single-instance oracle -------------------------------------------------

// Runs the instance's text and bridge rows alone, with nothing masked, through
// the same layer stack and time schedule as a full sampling run. Because those
// rows only ever attend within their own family, the full run must agree with
// this reduced system bit-for-bit at every layer of every step.
inline std::vector<Mat> single_instance_oracle(const Mat& x0, const TokenLayout& lay, int instance,
                                               const ModelConfig& cfg, const ModelWeights& w) {
    if (instance < 0 || instance >= int(lay.instances.size()))
        throw UnknownInstance("instance index " + std::to_string(instance) + " out of range");
    cfg.validate();
    const auto& inst = lay.instances[instance];
    const int nt = inst.text.size(), nb = inst.bridge.size(), n = nt + nb;
    Mat o(n, x0.cols);
    for (int r = 0; r < nt; ++r)
        std::memcpy(o.row(r), x0.row(inst.text.begin + r), sizeof(double) * x0.cols);
    for (int r = 0; r < nb; ++r)
        std::memcpy(o.row(nt + r), x0.row(inst.bridge.begin + r), sizeof(double) * x0.cols);

    FeatureLayout fl = FeatureLayout::for_dim(cfg.dim);
    LayerMask all;
    all.seq = n;
    all.allow.assign(size_t(n) * n, 1);
    std::vector<LayerMask> masks(w.layers.size(), all);

    std::vector<Mat> trace;
    trace.reserve(size_t(cfg.steps) * w.layers.size());
    for (int s = 0; s < cfg.steps; ++s) {
        add_time_embedding(o, fl, 1.0 - double(s) / cfg.steps);
        forward(o, w, masks, {}, 1, &trace);
    }
    return trace;
}

// --- vital-layer search -----------------------------------------------------

struct SearchEntry {
    int layer = 0;
    double fidelity = 0.0;
    double delta = 0.0;
};

struct SearchReport {
    double baseline_fidelity = 0.0;
    std::vector<SearchEntry> entries;
    int argmax_layer = -1;
};

// Baseline: everything soft. Each entry hardens a single layer and reports
// the mean-fidelity change, exposing which layers matter for binding.
inline SearchReport vital_layer_search(const SceneSpec& scene, const ModelConfig& cfg,
                                       const ModelWeights& w,
                                       const SchedulePolicy& policy = {}) {
    cfg.validate();
    CellAssignment asg = rasterize_and_assign(scene);
    TokenLayout lay = build_token_layout(scene, asg, cfg.text_len_per_tag,
                                         cfg.resolved_global_text_len(scene), true);
    FeatureLayout fl = FeatureLayout::for_dim(cfg.dim);
    auto fidelity_for = [&](const BindingSchedule& sch) {
        SampleResult r = sample(scene, lay, asg, sch, cfg, w);
        return leakage_matrix(r.state, lay, scene, fl).mean_fidelity();
    };

    BindingSchedule base;
    base.policy = policy;
    base.modes.assign(cfg.layers, BindingMode::SoftImage);

    SearchReport rep;
    rep.baseline_fidelity = fidelity_for(base);
    for (int l = 0; l < cfg.layers; ++l) {
        BindingSchedule sch = base;
        sch.modes[l] = BindingMode::HardImage;
        double f = fidelity_for(sch);
        rep.entries.push_back({l, f, f - rep.baseline_fidelity});
    }
    rep.argmax_layer =
        int(std::max_element(rep.entries.begin(), rep.entries.end(),
                             [](const SearchEntry& a, const SearchEntry& b) {
                                 return a.delta < b.delta;
                             }) -
            rep.entries.begin());
    return rep;
}

// --- ablation ---------------------------------------------------------------

struct AblationArm {
    std::string name;
    double fidelity = 0.0;
    LeakageReport leakage;
    bool reach_block_diagonal = false;
};

// One named arm of the ablation grid: a schedule plus the layout choice
// (the NAIVE arm drops bridge tokens entirely).
struct ArmSpec {
    BindingSchedule schedule;
    bool bridges = true;
};

inline const std::vector<std::string>& ablation_arm_names() {
    static const std::vector<std::string> names = {
        "FULL", "NAIVE", "NO_TEXT_BINDING", "HARD_AT_INPUT", "HARD_AT_MIDDLE", "HARD_AT_OUTPUT",
    };
    return names;
}

inline ArmSpec ablation_arm(const std::string& name, int layers) {
    SchedulePolicy pol;
    if (name == "FULL") return {default_schedule(layers, pol), true};
    if (name == "NAIVE") {
        BindingSchedule s;
        s.policy = pol;
        s.modes.assign(layers, BindingMode::NaiveIsolation);
        return {std::move(s), false};
    }
    if (name == "NO_TEXT_BINDING") {
        SchedulePolicy p = pol;
        p.text_binding_enabled = false;
        return {default_schedule(layers, p), true};
    }
    if (name == "HARD_AT_INPUT") return {default_schedule(layers, pol, 0.0, 1.0 / 3.0), true};
    if (name == "HARD_AT_MIDDLE") return {default_schedule(layers, pol, 1.0 / 3.0, 2.0 / 3.0), true};
    if (name == "HARD_AT_OUTPUT") return {default_schedule(layers, pol, 2.0 / 3.0, 1.0), true};
    std::string known;
    for (const std::string& n : ablation_arm_names()) known += (known.empty() ? "" : "|") + n;
    throw ValidationError("unknown ablation arm '" + name + "' (expected " + known + ")");
}

inline AblationArm run_ablation_arm(const SceneSpec& scene, const ModelConfig& cfg,
                                    const ModelWeights& w, const std::string& name) {
    cfg.validate();
    ArmSpec spec = ablation_arm(name, cfg.layers);
    CellAssignment asg = rasterize_and_assign(scene);
    TokenLayout lay = build_token_layout(scene, asg, cfg.text_len_per_tag,
                                         cfg.resolved_global_text_len(scene), spec.bridges);
    SampleResult r = sample(scene, lay, asg, spec.schedule, cfg, w);
    AblationArm a;
    a.name = name;
    a.leakage = leakage_matrix(r.state, lay, scene, FeatureLayout::for_dim(cfg.dim));
    a.fidelity = a.leakage.mean_fidelity();
    a.reach_block_diagonal = reach_block_diagonal_non_global(reachability(lay, spec.schedule), lay);
    return a;
}

inline std::vector<AblationArm> run_ablation(const SceneSpec& scene, const ModelConfig& cfg,
                                             const ModelWeights& w) {
    std::vector<AblationArm> arms;
    for (const std::string& name : ablation_arm_names())
        arms.push_back(run_ablation_arm(scene, cfg, w, name));
    return arms;
}

// --- reports ----------------------------------------------------------------

inline nlohmann::json leakage_report_json(const std::string& scene_id,
                                          const std::string& schedule_id,
                                          const LeakageReport& rep) {
    nlohmann::json j;
    j["scene_id"] = scene_id;
    j["schedule_id"] = schedule_id;
    nlohmann::json fid = nlohmann::json::array();
    nlohmann::json leak = nlohmann::json::array();
    nlohmann::json flags = nlohmann::json::array();
    for (int i = 0; i < rep.n; ++i) {
        fid.push_back(rep.fidelity(i));
        nlohmann::json lrow = nlohmann::json::array(), frow = nlohmann::json::array();
        for (int k = 0; k < rep.n; ++k) {
            lrow.push_back(rep.at(i, k));
            frow.push_back(int(rep.flag_at(i, k)));
        }
        leak.push_back(std::move(lrow));
        flags.push_back(std::move(frow));
    }
    j["fidelity"] = std::move(fid);
    j["leakage"] = std::move(leak);
    j["flags"] = std::move(flags);
    return j;
}

inline nlohmann::json search_report_json(const std::string& scene_id,
                                         const std::string& schedule_id, const SearchReport& rep) {
    nlohmann::json j;
    j["scene_id"] = scene_id;
    j["schedule_id"] = schedule_id;
    j["baseline_fidelity"] = rep.baseline_fidelity;
    nlohmann::json entries = nlohmann::json::array();
    for (const SearchEntry& e : rep.entries)
        entries.push_back({{"layer", e.layer}, {"fidelity", e.fidelity}, {"delta", e.delta}});
    j["entries"] = std::move(entries);
    j["argmax_layer"] = rep.argmax_layer;
    return j;
}

inline nlohmann::json ablation_report_json(const std::string& scene_id,
                                           const std::vector<AblationArm>& arms) {
    nlohmann::json j;
    j["scene_id"] = scene_id;
    nlohmann::json out = nlohmann::json::array();
    for (const AblationArm& a : arms)
        out.push_back({{"name", a.name},
                       {"fidelity", a.fidelity},
                       {"reach_block_diagonal", a.reach_block_diagonal}});
    j["arms"] = std::move(out);
    return j;
}

}  // namespace bindattn
