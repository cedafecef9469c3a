// Command-line surface: render scenes to PPM, dump per-layer binding masks,
// sweep for vital binding layers, and analyze ablation arms. Every successful
// run emits a manifest whose config digest covers all input bytes that affect
// the output, so reruns can be compared byte-for-byte.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bindattn/analysis.hpp"

namespace fs = std::filesystem;

namespace bindattn {
namespace {

constexpr const char* kToolVersion = "bindattn 1.0.0";

struct Options {
    std::string command;
    std::string scene_path;
    std::string out;
    std::string out_dir = "masks";
    std::string dump_masks;
    std::string schedule = "default";
    std::string hard_range;  // "lo:hi" layer fractions; empty keeps the default band
    bool no_text_binding = false;
    std::string soft_text_keys = "on";
    bool background_soft = false;
    std::string bridge = "persistent";
    std::string weights = "random";
    std::string arm = "FULL";
    double cfg_scale = 0.0;
    int steps = 8;
    int layers = 12;
    int dim = 32;
    int heads = 4;
    int threads = 1;
    int text_len = 2;
    int global_text_len = -1;
    std::uint64_t weight_seed = 1;
    int cell_px = 16;
};

struct Resolved {
    ModelConfig model;
    SchedulePolicy policy;
    double hard_lo = 1.0 / 3.0;
    double hard_hi = 2.0 / 3.0;
};

bool parse_on_off(const std::string& v, const char* flag) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw ValidationError(std::string(flag) + ": expected 'on' or 'off', got '" + v + "'");
}

Resolved resolve(const Options& o) {
    Resolved r;
    r.model.dim = o.dim;
    r.model.heads = o.heads;
    r.model.layers = o.layers;
    r.model.steps = o.steps;
    r.model.cfg_scale = o.cfg_scale;
    r.model.threads = o.threads;
    r.model.text_len_per_tag = o.text_len;
    r.model.global_text_len = o.global_text_len;
    r.model.weight_seed = o.weight_seed;
    if (o.weights == "random") {
        r.model.weight_mode = WeightMode::Random;
    } else if (o.weights == "routing") {
        r.model.weight_mode = WeightMode::Routing;
    } else if (o.weights.rfind("routing-at:", 0) == 0) {
        const std::string layer = o.weights.substr(11);
        int m = 0, used = 0;
        if (std::sscanf(layer.c_str(), "%d%n", &m, &used) != 1 || used != int(layer.size()))
            throw ValidationError("--weights: expected routing-at:<layer>, got '" + o.weights +
                                  "'");
        r.model.weight_mode = WeightMode::RoutingAtLayer;
        r.model.routing_layer = m;
    } else {
        throw ValidationError("--weights: unknown mode '" + o.weights +
                              "' (expected random|routing|routing-at:<layer>)");
    }
    r.policy.text_binding_enabled = !o.no_text_binding;
    r.policy.soft_text_keys = parse_on_off(o.soft_text_keys, "--soft-text-keys");
    r.policy.background_soft_in_hard_layers = o.background_soft;
    if (o.bridge == "persistent") {
        r.policy.bridge_mode = BridgeMode::Persistent;
    } else if (o.bridge == "per-layer") {
        r.policy.bridge_mode = BridgeMode::PerLayerCopy;
    } else {
        throw ValidationError("--bridge: expected 'persistent' or 'per-layer', got '" + o.bridge +
                              "'");
    }
    if (!o.hard_range.empty()) {
        double lo = 0.0, hi = 0.0;
        int used = 0;
        if (std::sscanf(o.hard_range.c_str(), "%lf:%lf%n", &lo, &hi, &used) != 2 ||
            used != int(o.hard_range.size()))
            throw ValidationError("--hard-range: expected 'lo:hi', got '" + o.hard_range + "'");
        r.hard_lo = lo;
        r.hard_hi = hi;
    }
    if (o.cell_px < 1) throw ValidationError("--cell-px must be >= 1");
    r.model.validate();
    return r;
}

BindingSchedule make_schedule(const Options& o, const Resolved& r) {
    if (o.schedule == "default")
        return default_schedule(r.model.layers, r.policy, r.hard_lo, r.hard_hi);
    BindingSchedule s;
    s.policy = r.policy;
    if (o.schedule == "all-hard") {
        s.modes.assign(r.model.layers, BindingMode::HardImage);
    } else if (o.schedule == "all-soft") {
        s.modes.assign(r.model.layers, BindingMode::SoftImage);
    } else if (o.schedule == "naive") {
        s.modes.assign(r.model.layers, BindingMode::NaiveIsolation);
    } else {
        throw ValidationError("--schedule: unknown schedule '" + o.schedule +
                              "' (expected default|all-hard|all-soft|naive)");
    }
    return s;
}

// The naive schedule models isolation without helper tokens, so its layout
// carries no bridge rows.
bool layout_has_bridges(const Options& o) { return o.schedule != "naive"; }

// Canonical serialization of every resolved knob that can change output bytes.
// Thread count is deliberately absent: results are thread-invariant by
// contract, and the manifest must be byte-identical across thread counts.
std::string canonical_config(const Options& o, const Resolved& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "command=%s;schedule=%s;hard=%.17g:%.17g;text_binding=%d;soft_text_keys=%d;"
                  "background_soft=%d;bridge=%d;weights=%s;routing_layer=%d;weight_seed=%llu;"
                  "cfg=%.17g;steps=%d;layers=%d;dim=%d;heads=%d;text_len=%d;global_text_len=%d;"
                  "cell_px=%d;arm=%s",
                  o.command.c_str(), o.schedule.c_str(), r.hard_lo, r.hard_hi,
                  int(r.policy.text_binding_enabled), int(r.policy.soft_text_keys),
                  int(r.policy.background_soft_in_hard_layers),
                  int(r.policy.bridge_mode == BridgeMode::PerLayerCopy),
                  weight_mode_name(r.model.weight_mode), r.model.routing_layer,
                  static_cast<unsigned long long>(r.model.weight_seed), r.model.cfg_scale,
                  r.model.steps, r.model.layers, r.model.dim, r.model.heads,
                  r.model.text_len_per_tag, r.model.global_text_len, o.cell_px, o.arm.c_str());
    return buf;
}

std::string digest_hex(const std::string& scene_bytes, const std::string& config) {
    std::uint64_t h =
        fnv1a64(scene_bytes + '\x1f' + config + '\x1f' + kToolVersion);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_manifest(const std::string& path, const Options& o, std::uint64_t scene_seed,
                    const std::string& digest, const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["command"] = o.command;
    m["scene"] = o.scene_path;
    m["config_digest"] = digest;
    m["seed"] = scene_seed;
    m["outputs"] = outputs;
    m["tool_version"] = kToolVersion;
    write_text_file(path, m.dump(2) + "\n");
}

std::string scene_stem(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_render(const Options& o) {
    const std::string bytes = read_file(o.scene_path);
    SceneSpec scene = parse_scene(bytes, o.scene_path);
    Resolved r = resolve(o);
    BindingSchedule sch = make_schedule(o, r);
    ModelWeights w = make_weights(r.model);
    CellAssignment asg = rasterize_and_assign(scene);
    TokenLayout lay = build_token_layout(scene, asg, r.model.text_len_per_tag,
                                         r.model.resolved_global_text_len(scene),
                                         layout_has_bridges(o));
    SampleResult res = sample(scene, lay, asg, sch, r.model, w);
    ImageRGB img = decode(res, lay, asg, w.decode_head, o.cell_px);
    const std::string out = o.out.empty() ? "out.ppm" : o.out;
    write_ppm(out, img);
    std::vector<std::string> outputs{out};
    if (!o.dump_masks.empty()) {
        fs::create_directories(o.dump_masks);
        std::vector<std::string> files = dump_schedule_masks(o.dump_masks, lay, sch);
        outputs.insert(outputs.end(), files.begin(), files.end());
    }
    write_manifest(out + ".manifest.json", o, scene.seed, digest_hex(bytes, canonical_config(o, r)),
                   outputs);
    return 0;
}

int cmd_masks(const Options& o) {
    const std::string bytes = read_file(o.scene_path);
    SceneSpec scene = parse_scene(bytes, o.scene_path);
    Resolved r = resolve(o);
    BindingSchedule sch = make_schedule(o, r);
    CellAssignment asg = rasterize_and_assign(scene);
    TokenLayout lay = build_token_layout(scene, asg, r.model.text_len_per_tag,
                                         r.model.resolved_global_text_len(scene),
                                         layout_has_bridges(o));
    fs::create_directories(o.out_dir);
    std::vector<std::string> outputs = dump_schedule_masks(o.out_dir, lay, sch);
    write_manifest(o.out_dir + "/manifest.json", o, scene.seed,
                   digest_hex(bytes, canonical_config(o, r)), outputs);
    return 0;
}

int cmd_search(const Options& o) {
    const std::string bytes = read_file(o.scene_path);
    SceneSpec scene = parse_scene(bytes, o.scene_path);
    Resolved r = resolve(o);
    ModelWeights w = make_weights(r.model);
    SearchReport rep = vital_layer_search(scene, r.model, w, r.policy);
    nlohmann::json j = search_report_json(scene_stem(o.scene_path), "all-soft+hard-at-layer", rep);
    const std::string out = o.out.empty() ? "search.json" : o.out;
    write_text_file(out, j.dump(2) + "\n");
    write_manifest(out + ".manifest.json", o, scene.seed, digest_hex(bytes, canonical_config(o, r)),
                   {out});
    return 0;
}

int cmd_analyze(const Options& o) {
    const std::string bytes = read_file(o.scene_path);
    SceneSpec scene = parse_scene(bytes, o.scene_path);
    Resolved r = resolve(o);
    ArmSpec spec = ablation_arm(o.arm, r.model.layers);
    ModelWeights w = make_weights(r.model);
    CellAssignment asg = rasterize_and_assign(scene);
    TokenLayout lay = build_token_layout(scene, asg, r.model.text_len_per_tag,
                                         r.model.resolved_global_text_len(scene), spec.bridges);
    SampleResult res = sample(scene, lay, asg, spec.schedule, r.model, w);
    LeakageReport rep = leakage_matrix(res.state, lay, scene, FeatureLayout::for_dim(r.model.dim));
    LayerMask reach = reachability(lay, spec.schedule);

    nlohmann::json j = leakage_report_json(scene_stem(o.scene_path), o.arm, rep);
    j["arm"] = o.arm;
    j["bridges"] = spec.bridges;
    j["mean_fidelity"] = rep.mean_fidelity();
    j["reach_block_diagonal"] = reach_block_diagonal_non_global(reach, lay);

    const std::string out = o.out.empty() ? "analysis.json" : o.out;
    const std::string reach_path = out + ".reach.txt";
    write_text_file(out, j.dump(2) + "\n");
    write_text_file(reach_path, format_bindmask(reach, r.model.layers, "CLOSURE", "REACH"));
    write_manifest(out + ".manifest.json", o, scene.seed, digest_hex(bytes, canonical_config(o, r)),
                   {out, reach_path});
    return 0;
}

int dispatch(const Options& o) {
    if (o.command == "render") return cmd_render(o);
    if (o.command == "masks") return cmd_masks(o);
    if (o.command == "search") return cmd_search(o);
    if (o.command == "analyze") return cmd_analyze(o);
    throw ValidationError("unknown command '" + o.command +
                          "' (expected render|masks|search|analyze)");
}

}  // namespace
}  // namespace bindattn

int main(int argc, char** argv) {
    using namespace bindattn;
    Options o;
    CLI::App app{
        "Joint-attention binding engine: render scenes, dump binding masks, "
        "sweep for vital layers, analyze ablation arms."};
    app.add_option("command", o.command, "render|masks|search|analyze")->required();
    app.add_option("scene", o.scene_path, "scene JSON file")->required();
    app.add_option("--out", o.out, "output file (render: PPM image; search/analyze: JSON report)");
    app.add_option("--out-dir", o.out_dir, "output directory for the masks command");
    app.add_option("--dump-masks", o.dump_masks,
                   "render: also dump per-layer masks to this directory");
    app.add_option("--schedule", o.schedule,
                   "per-layer binding schedule: default|all-hard|all-soft|naive");
    app.add_option("--hard-range", o.hard_range,
                   "hard band lo:hi as layer fractions for the default schedule");
    app.add_flag("--no-text-binding", o.no_text_binding,
                 "bind instance text through its image tokens instead of bridge tokens");
    app.add_option("--soft-text-keys", o.soft_text_keys,
                   "soft layers: image queries may read text keys (on|off)");
    app.add_flag("--background-soft", o.background_soft,
                 "background image queries read all image keys even in hard layers");
    app.add_option("--bridge", o.bridge, "bridge update mode: persistent|per-layer");
    app.add_option("--weights", o.weights,
                   "weight construction: random|routing|routing-at:<layer>");
    app.add_option("--weight-seed", o.weight_seed, "seed for random weight construction");
    app.add_option("--arm", o.arm,
                   "analyze: FULL|NAIVE|NO_TEXT_BINDING|HARD_AT_INPUT|HARD_AT_MIDDLE|"
                   "HARD_AT_OUTPUT");
    app.add_option("--cfg", o.cfg_scale, "classifier-free guidance scale (0 disables)");
    app.add_option("--steps", o.steps, "sampling steps");
    app.add_option("--layers", o.layers, "transformer layers");
    app.add_option("--dim", o.dim, "model width");
    app.add_option("--heads", o.heads, "attention heads");
    app.add_option("--threads", o.threads, "worker threads for attention rows");
    app.add_option("--text-len", o.text_len, "text tokens per tag");
    app.add_option("--global-text-len", o.global_text_len,
                   "global text tokens (-1: text-len x number of global tags)");
    app.add_option("--cell-px", o.cell_px, "rendered pixels per image cell");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return dispatch(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return e.kind() == ErrorKind::NumericalDivergence ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
}
