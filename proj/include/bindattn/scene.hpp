#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bindattn/common.hpp"
#include "bindattn/numerics.hpp"

namespace bindattn {

// How the embedding width d is carved into channels. Fixed-size reserved tail
// (control is always the last 4 dims), content takes whatever is left in front.
// The attribute channel is split into a source half (what a token *is*; read by
// the routing value projection) and a destination half (what attention has
// delivered to it; written by the routing construction, read by the metrics).
struct FeatureLayout {
    static constexpr int kAttrSlots = 8;

    IndexRange content;
    IndexRange time;
    IndexRange attr_src;
    IndexRange attr_dst;
    IndexRange pos;
    IndexRange control;

    static FeatureLayout for_dim(int d) {
        const int reserved = 2 + 2 * kAttrSlots + 4 + 4;
        if (d < reserved + 2)
            throw ValidationError("embedding width " + std::to_string(d) +
                                  " too small; need at least " + std::to_string(reserved + 2));
        FeatureLayout p;
        int cursor = 0;
        auto take = [&cursor](int n) {
            IndexRange r{cursor, cursor + n};
            cursor += n;
            return r;
        };
        p.content = take(d - reserved);
        p.time = take(2);
        p.attr_src = take(kAttrSlots);
        p.attr_dst = take(kAttrSlots);
        p.pos = take(4);
        p.control = take(4);
        return p;
    }
};

// Stable tag -> attribute slot assignment, independent of any scene context.
// Distinct tags may collide (documented; the metrics then cannot separate them).
inline int tag_slot(std::string_view tag) {
    return int(fnv1a64(tag) % uint64_t(FeatureLayout::kAttrSlots));
}

struct Region {
    enum class Kind { Bbox, Cells };
    Kind kind = Kind::Bbox;
    std::array<int, 4> bbox = {0, 0, 0, 0};            // r0, c0, r1, c1 inclusive
    std::vector<std::pair<int, int>> cells;            // explicit (row, col) list

    std::vector<std::pair<int, int>> expand() const {
        if (kind == Kind::Cells) return cells;
        std::vector<std::pair<int, int>> out;
        for (int r = bbox[0]; r <= bbox[2]; ++r)
            for (int c = bbox[1]; c <= bbox[3]; ++c) out.push_back({r, c});
        return out;
    }
};

struct InstanceSpec {
    std::string id;
    int z = 0;
    std::vector<std::string> tags;
    Region region;
};

struct SceneSpec {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<std::string> global_tags;
    uint64_t seed = 0;
    std::optional<std::vector<double>> control;  // row-major H*W, clamped to [0,1]
    std::vector<InstanceSpec> instances;
};

// Per-cell ownership after z-order resolution. owner[cell] is an index into
// scene.instances, or -1 for background. cells_of lists each instance's cells
// in row-major order.
struct CellAssignment {
    int h = 0;
    int w = 0;
    std::vector<int> owner;
    std::vector<std::vector<int>> cells_of;
    std::vector<int> background_cells;
};

inline CellAssignment rasterize_and_assign(const SceneSpec& scene) {
    const int H = scene.grid_h, W = scene.grid_w;
    if (H < 1 || W < 1) throw ValidationError("grid must be at least 1x1");
    CellAssignment asg;
    asg.h = H;
    asg.w = W;
    asg.owner.assign(size_t(H) * W, -1);
    std::vector<int> z_of(size_t(H) * W, 0);
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        const InstanceSpec& inst = scene.instances[i];
        for (auto [r, c] : inst.region.expand()) {
            if (r < 0 || r >= H || c < 0 || c >= W)
                throw ValidationError("instance '" + inst.id + "' cell (" + std::to_string(r) +
                                      "," + std::to_string(c) + ") outside " + std::to_string(H) +
                                      "x" + std::to_string(W) + " grid");
            int cell = r * W + c;
            // Highest z wins; equal z goes to the later-listed instance.
            if (asg.owner[cell] < 0 || inst.z >= z_of[cell]) {
                asg.owner[cell] = int(i);
                z_of[cell] = inst.z;
            }
        }
    }
    asg.cells_of.assign(scene.instances.size(), {});
    for (int cell = 0; cell < H * W; ++cell) {
        if (asg.owner[cell] >= 0)
            asg.cells_of[asg.owner[cell]].push_back(cell);
        else
            asg.background_cells.push_back(cell);
    }
    for (size_t i = 0; i < scene.instances.size(); ++i)
        if (asg.cells_of[i].empty())
            throw EmptyInstanceRegion("instance '" + scene.instances[i].id +
                                      "' owns no cells after occlusion");
    return asg;
}

enum class TokenKind { GlobalText, InstanceText, Image, Bridge };

struct TokenInfo {
    TokenKind kind = TokenKind::Image;
    int instance = -1;  // owning instance index; -1 for global text / background image
};

// Canonical token ordering: [global_text][per-instance text][image][per-instance
// bridge]. Bridge token n of an instance mirrors that instance's n-th cell in
// row-major order.
struct TokenLayout {
    struct InstanceTokens {
        std::string id;
        IndexRange text;
        IndexRange bridge;
        std::vector<int> image_tokens;  // ascending
    };

    int seq_len = 0;
    bool has_bridges = false;
    IndexRange global_text;
    std::vector<InstanceTokens> instances;
    IndexRange image;
    std::vector<int> background_image;
    std::vector<TokenInfo> token_info;

    const TokenInfo& info(int token) const { return token_info[token]; }

    int instance_index(std::string_view id) const {
        for (size_t i = 0; i < instances.size(); ++i)
            if (instances[i].id == id) return int(i);
        throw UnknownInstance("no instance with id '" + std::string(id) + "'");
    }

    // Image token backing bridge token n of instance i.
    int bridge_source(int instance, int n) const { return instances[instance].image_tokens[n]; }

    int cell_token(int cell) const { return image.begin + cell; }
};

inline TokenLayout build_token_layout(const SceneSpec& scene, const CellAssignment& asg,
                                      int text_len_per_tag, int global_text_len,
                                      bool include_bridges) {
    if (text_len_per_tag < 1) throw ValidationError("text_len_per_tag must be >= 1");
    if (global_text_len < 0) throw ValidationError("global_text_len must be >= 0");
    TokenLayout lay;
    lay.has_bridges = include_bridges;
    int cursor = 0;
    lay.global_text = {cursor, cursor + global_text_len};
    cursor = lay.global_text.end;
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        TokenLayout::InstanceTokens inst;
        inst.id = scene.instances[i].id;
        int len = text_len_per_tag * int(scene.instances[i].tags.size());
        inst.text = {cursor, cursor + len};
        cursor = inst.text.end;
        lay.instances.push_back(std::move(inst));
    }
    lay.image = {cursor, cursor + asg.h * asg.w};
    cursor = lay.image.end;
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        for (int cell : asg.cells_of[i]) lay.instances[i].image_tokens.push_back(lay.cell_token(cell));
        if (include_bridges) {
            int len = int(asg.cells_of[i].size());
            lay.instances[i].bridge = {cursor, cursor + len};
            cursor += len;
        } else {
            lay.instances[i].bridge = {cursor, cursor};
        }
    }
    for (int cell : asg.background_cells) lay.background_image.push_back(lay.cell_token(cell));
    lay.seq_len = cursor;

    lay.token_info.assign(lay.seq_len, {});
    for (int q = lay.global_text.begin; q < lay.global_text.end; ++q)
        lay.token_info[q] = {TokenKind::GlobalText, -1};
    for (size_t i = 0; i < lay.instances.size(); ++i) {
        for (int q = lay.instances[i].text.begin; q < lay.instances[i].text.end; ++q)
            lay.token_info[q] = {TokenKind::InstanceText, int(i)};
        for (int q = lay.instances[i].bridge.begin; q < lay.instances[i].bridge.end; ++q)
            lay.token_info[q] = {TokenKind::Bridge, int(i)};
    }
    for (int q = lay.image.begin; q < lay.image.end; ++q) lay.token_info[q] = {TokenKind::Image, -1};
    for (size_t i = 0; i < lay.instances.size(); ++i)
        for (int q : lay.instances[i].image_tokens) lay.token_info[q].instance = int(i);
    return lay;
}

// Deterministic text encoding. Each tag's rows depend only on (stream, tag), so
// an instance's encoding is bit-identical no matter what else is in the scene.
// Wide embeddings also carry the tag's one-hot attribute slot in the source
// attribute block; narrow ones (unit tests) are pure noise.
inline Mat embed_text(const std::vector<std::string>& tags, int dim, int text_len_per_tag,
                      const RngStream& stream) {
    if (tags.empty()) throw ValidationError("embed_text: empty tag list");
    if (dim < 4) throw ValidationError("embed_text: dim must be >= 4");
    if (text_len_per_tag < 1) throw ValidationError("embed_text: text_len_per_tag must be >= 1");
    std::optional<FeatureLayout> part;
    if (dim >= 28) part = FeatureLayout::for_dim(dim);
    Mat rows(text_len_per_tag * int(tags.size()), dim);
    int r = 0;
    for (const std::string& tag : tags) {
        RngStream tag_stream = stream.derive(tag);
        for (int k = 0; k < text_len_per_tag; ++k, ++r) {
            if (part) {
                for (int j = part->content.begin; j < part->content.end; ++j)
                    rows.at(r, j) = tag_stream.uniform(-1.0, 1.0);
                rows.at(r, part->attr_src.begin + tag_slot(tag)) = 1.0;
            } else {
                for (int j = 0; j < dim; ++j) rows.at(r, j) = tag_stream.uniform(-1.0, 1.0);
            }
        }
    }
    return rows;
}

// --- Scene document parsing ------------------------------------------------

namespace detail {

using json = nlohmann::json;

inline void expect_keys(const json& j, const std::string& path,
                        std::initializer_list<const char*> allowed) {
    for (auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) ok = ok || (key == a);
        if (!ok) throw ParseError(path, "unknown field '" + key + "'");
    }
}

inline const json& field(const json& j, const std::string& path, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw ParseError(path, std::string("missing field '") + name + "'");
    return *it;
}

inline int as_int(const json& j, const std::string& path) {
    if (!j.is_number_integer() && !j.is_number_unsigned())
        throw ParseError(path, "expected an integer");
    return j.get<int>();
}

inline uint64_t as_seed(const json& j, const std::string& path) {
    if (j.is_number_unsigned()) return j.get<uint64_t>();
    if (j.is_number_integer()) {
        int64_t v = j.get<int64_t>();
        if (v < 0) throw ParseError(path, "seed must be non-negative");
        return uint64_t(v);
    }
    throw ParseError(path, "expected an integer seed");
}

inline std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ParseError(path, "expected a string");
    return j.get<std::string>();
}

inline Region parse_region(const json& j, const std::string& path) {
    if (!j.is_object()) throw ParseError(path, "expected an object");
    expect_keys(j, path, {"bbox", "cells"});
    bool has_bbox = j.contains("bbox"), has_cells = j.contains("cells");
    if (has_bbox == has_cells)
        throw ParseError(path, "region needs exactly one of 'bbox' or 'cells'");
    Region region;
    if (has_bbox) {
        const json& b = j["bbox"];
        if (!b.is_array() || b.size() != 4)
            throw ParseError(path + ".bbox", "expected [r0, c0, r1, c1]");
        region.kind = Region::Kind::Bbox;
        for (int k = 0; k < 4; ++k)
            region.bbox[k] = as_int(b[k], path + ".bbox[" + std::to_string(k) + "]");
    } else {
        const json& cs = j["cells"];
        if (!cs.is_array()) throw ParseError(path + ".cells", "expected an array");
        region.kind = Region::Kind::Cells;
        for (size_t k = 0; k < cs.size(); ++k) {
            std::string p = path + ".cells[" + std::to_string(k) + "]";
            if (!cs[k].is_array() || cs[k].size() != 2) throw ParseError(p, "expected [r, c]");
            region.cells.push_back({as_int(cs[k][0], p), as_int(cs[k][1], p)});
        }
    }
    return region;
}

}  // namespace detail

// Semantic checks shared by parsed documents. Programmatic SceneSpec values
// (e.g. the instance-free layout used by classifier-free guidance) may skip the
// instance-count floor, so it is enforced here rather than in the type.
inline void validate_scene(const SceneSpec& scene) {
    if (scene.grid_h < 1 || scene.grid_w < 1) throw ValidationError("grid must be at least 1x1");
    int cells = scene.grid_h * scene.grid_w;
    if (scene.instances.empty()) throw ValidationError("scene needs at least one instance");
    if (int(scene.instances.size()) > cells)
        throw ValidationError("more instances (" + std::to_string(scene.instances.size()) +
                              ") than grid cells (" + std::to_string(cells) + ")");
    std::set<std::string> ids;
    for (const InstanceSpec& inst : scene.instances) {
        if (inst.id.empty()) throw ValidationError("instance id must be non-empty");
        if (!ids.insert(inst.id).second)
            throw ValidationError("duplicate instance id '" + inst.id + "'");
        if (inst.tags.empty())
            throw ValidationError("instance '" + inst.id + "' has no tags");
        for (const std::string& t : inst.tags)
            if (t.empty()) throw ValidationError("instance '" + inst.id + "' has an empty tag");
        if (inst.region.kind == Region::Kind::Bbox) {
            const auto& b = inst.region.bbox;
            if (b[0] > b[2] || b[1] > b[3])
                throw ValidationError("instance '" + inst.id + "' bbox corners reversed");
            if (b[0] < 0 || b[1] < 0 || b[2] >= scene.grid_h || b[3] >= scene.grid_w)
                throw ValidationError("instance '" + inst.id + "' bbox outside grid");
        } else {
            if (inst.region.cells.empty())
                throw ValidationError("instance '" + inst.id + "' has an empty cell list");
            std::set<std::pair<int, int>> seen;
            for (auto [r, c] : inst.region.cells) {
                if (r < 0 || r >= scene.grid_h || c < 0 || c >= scene.grid_w)
                    throw ValidationError("instance '" + inst.id + "' cell outside grid");
                if (!seen.insert({r, c}).second)
                    throw ValidationError("instance '" + inst.id + "' lists cell (" +
                                          std::to_string(r) + "," + std::to_string(c) + ") twice");
            }
        }
    }
    if (scene.control && int(scene.control->size()) != cells)
        throw ValidationError("control grid size does not match the cell grid");
}

inline SceneSpec parse_scene(const std::string& content, const std::string& source_name) {
    using detail::as_int;
    using detail::as_seed;
    using detail::as_string;
    using detail::expect_keys;
    using detail::field;
    using json = nlohmann::json;

    json doc;
    try {
        doc = json::parse(content);
    } catch (const json::parse_error& e) {
        throw ParseError(source_name, e.what());
    }
    if (!doc.is_object()) throw ParseError(source_name, "scene document must be an object");
    expect_keys(doc, source_name, {"grid", "global_tags", "seed", "control", "instances"});

    SceneSpec scene;
    const json& grid = field(doc, source_name, "grid");
    if (!grid.is_object()) throw ParseError(source_name + ".grid", "expected an object");
    expect_keys(grid, source_name + ".grid", {"h", "w"});
    scene.grid_h = as_int(field(grid, source_name + ".grid", "h"), source_name + ".grid.h");
    scene.grid_w = as_int(field(grid, source_name + ".grid", "w"), source_name + ".grid.w");

    const json& gtags = field(doc, source_name, "global_tags");
    if (!gtags.is_array()) throw ParseError(source_name + ".global_tags", "expected an array");
    for (size_t i = 0; i < gtags.size(); ++i)
        scene.global_tags.push_back(
            as_string(gtags[i], source_name + ".global_tags[" + std::to_string(i) + "]"));

    scene.seed = as_seed(field(doc, source_name, "seed"), source_name + ".seed");

    if (doc.contains("control")) {
        const json& ctl = doc["control"];
        std::string cpath = source_name + ".control";
        if (!ctl.is_array() || int(ctl.size()) != scene.grid_h)
            throw ParseError(cpath, "expected " + std::to_string(scene.grid_h) + " rows");
        std::vector<double> values;
        for (int r = 0; r < scene.grid_h; ++r) {
            const json& row = ctl[r];
            if (!row.is_array() || int(row.size()) != scene.grid_w)
                throw ParseError(cpath + "[" + std::to_string(r) + "]",
                                 "expected " + std::to_string(scene.grid_w) + " values");
            for (int c = 0; c < scene.grid_w; ++c) {
                const json& v = row[c];
                if (!v.is_number())
                    throw ParseError(cpath + "[" + std::to_string(r) + "][" + std::to_string(c) +
                                         "]",
                                     "expected a number");
                values.push_back(std::clamp(v.get<double>(), 0.0, 1.0));
            }
        }
        scene.control = std::move(values);
    }

    const json& insts = field(doc, source_name, "instances");
    if (!insts.is_array()) throw ParseError(source_name + ".instances", "expected an array");
    for (size_t i = 0; i < insts.size(); ++i) {
        std::string path = source_name + ".instances[" + std::to_string(i) + "]";
        const json& j = insts[i];
        if (!j.is_object()) throw ParseError(path, "expected an object");
        expect_keys(j, path, {"id", "z", "tags", "region"});
        InstanceSpec inst;
        inst.id = as_string(field(j, path, "id"), path + ".id");
        inst.z = as_int(field(j, path, "z"), path + ".z");
        const json& tags = field(j, path, "tags");
        if (!tags.is_array()) throw ParseError(path + ".tags", "expected an array");
        for (size_t t = 0; t < tags.size(); ++t)
            inst.tags.push_back(as_string(tags[t], path + ".tags[" + std::to_string(t) + "]"));
        inst.region = detail::parse_region(field(j, path, "region"), path + ".region");
        scene.instances.push_back(std::move(inst));
    }

    validate_scene(scene);
    return scene;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline SceneSpec parse_scene_file(const std::string& path) {
    return parse_scene(read_file(path), path);
}

}  // namespace bindattn
