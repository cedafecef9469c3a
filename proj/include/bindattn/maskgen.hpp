#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "bindattn/common.hpp"
#include "bindattn/scene.hpp"

namespace bindattn {

// Per-layer image-query regime. Text behaviour is layer-independent (policy
// only); NAIVE drops bridges entirely and isolates each instance's text+image.
enum class BindingMode { HardImage, SoftImage, NaiveIsolation };

enum class BridgeMode { Persistent, PerLayerCopy };

struct SchedulePolicy {
    bool text_binding_enabled = true;
    bool soft_text_keys = true;                 // soft layers: image q may read T_i and T_g
    bool background_soft_in_hard_layers = false;
    BridgeMode bridge_mode = BridgeMode::Persistent;
};

inline const char* mode_name(BindingMode m) {
    switch (m) {
        case BindingMode::HardImage: return "HARD";
        case BindingMode::SoftImage: return "SOFT";
        case BindingMode::NaiveIsolation: return "NAIVE";
    }
    return "?";
}

struct BindingSchedule {
    std::vector<BindingMode> modes;  // one per layer
    SchedulePolicy policy;

    int layers() const { return int(modes.size()); }

    void validate() const {
        bool any_naive = false, all_naive = true;
        for (BindingMode m : modes) {
            any_naive = any_naive || (m == BindingMode::NaiveIsolation);
            all_naive = all_naive && (m == BindingMode::NaiveIsolation);
        }
        if (any_naive && !all_naive)
            throw ValidationError("NAIVE isolation must apply to all layers uniformly");
    }
};

// Layer band [floor(lo*L), ceil(hi*L)); empty when lo == hi. Shared by the
// default schedule and the routing weight construction so the two can never
// disagree about where the hard band sits.
inline IndexRange hard_band(int layers, double lo, double hi) {
    if (lo < 0.0 || hi > 1.0 || lo > hi)
        throw ValidationError("hard band fractions must satisfy 0 <= lo <= hi <= 1");
    if (lo == hi) return {0, 0};
    return {int(std::floor(lo * layers)), int(std::ceil(hi * layers))};
}

inline BindingSchedule default_schedule(int layers, const SchedulePolicy& policy,
                                        double lo = 1.0 / 3.0, double hi = 2.0 / 3.0) {
    IndexRange band = hard_band(layers, lo, hi);
    BindingSchedule sch;
    sch.policy = policy;
    sch.modes.assign(layers, BindingMode::SoftImage);
    for (int l = band.begin; l < band.end && l < layers; ++l)
        sch.modes[l] = BindingMode::HardImage;
    return sch;
}

// Dense boolean attention mask for one layer; allow[q*seq+k] = 1 means query q
// may read key k.
struct LayerMask {
    int seq = 0;
    std::vector<uint8_t> allow;

    uint8_t at(int q, int k) const { return allow[size_t(q) * seq + k]; }
    void set(int q, int k) { allow[size_t(q) * seq + k] = 1; }
};

namespace detail {
inline void check_instance(const TokenLayout& lay, int i) {
    if (i < 0 || i >= int(lay.instances.size()))
        throw UnknownInstance("instance index " + std::to_string(i) + " out of range (have " +
                              std::to_string(lay.instances.size()) + ")");
}
inline bool is_instance_image(const TokenLayout& lay, int i, int t) {
    const TokenInfo& info = lay.info(t);
    return info.kind == TokenKind::Image && info.instance == i;
}
}  // namespace detail

// q and k both inside instance i's text+bridge family.
inline bool text_binding_predicate(const TokenLayout& lay, int i, int q, int k) {
    detail::check_instance(lay, i);
    const auto& inst = lay.instances[i];
    auto member = [&](int t) { return inst.text.contains(t) || inst.bridge.contains(t); };
    return member(q) && member(k);
}

// Image query of instance i restricted to its own text and cells.
inline bool hard_image_predicate(const TokenLayout& lay, int i, int q, int k) {
    detail::check_instance(lay, i);
    if (!detail::is_instance_image(lay, i, q)) return false;
    return lay.instances[i].text.contains(k) || detail::is_instance_image(lay, i, k);
}

// Image query of instance i reading any image token (bridges are not image tokens).
inline bool soft_image_predicate(const TokenLayout& lay, int i, int q, int k) {
    detail::check_instance(lay, i);
    if (!detail::is_instance_image(lay, i, q)) return false;
    return lay.image.contains(k);
}

inline LayerMask assemble_layer_mask(const TokenLayout& lay, BindingMode mode,
                                     const SchedulePolicy& policy) {
    LayerMask m;
    m.seq = lay.seq_len;
    m.allow.assign(size_t(m.seq) * m.seq, 0);
    auto allow_range = [&](int q, const IndexRange& r) {
        for (int k = r.begin; k < r.end; ++k) m.set(q, k);
    };
    auto allow_list = [&](int q, const std::vector<int>& ks) {
        for (int k : ks) m.set(q, k);
    };
    for (int q = 0; q < m.seq; ++q) {
        const TokenInfo& info = lay.info(q);
        switch (info.kind) {
            case TokenKind::GlobalText:
                allow_range(q, lay.global_text);
                allow_range(q, lay.image);
                break;
            case TokenKind::InstanceText: {
                const auto& inst = lay.instances[info.instance];
                allow_range(q, inst.text);
                if (mode == BindingMode::NaiveIsolation || !policy.text_binding_enabled)
                    allow_list(q, inst.image_tokens);
                else
                    allow_range(q, inst.bridge);
                break;
            }
            case TokenKind::Bridge: {
                const auto& inst = lay.instances[info.instance];
                allow_range(q, inst.text);
                allow_range(q, inst.bridge);
                break;
            }
            case TokenKind::Image: {
                if (info.instance < 0) {
                    allow_range(q, lay.global_text);
                    bool wide = (mode == BindingMode::SoftImage) ||
                                policy.background_soft_in_hard_layers;
                    if (wide)
                        allow_range(q, lay.image);
                    else
                        allow_list(q, lay.background_image);
                    break;
                }
                const auto& inst = lay.instances[info.instance];
                if (mode == BindingMode::SoftImage) {
                    allow_range(q, lay.image);
                    if (policy.soft_text_keys) {
                        allow_range(q, inst.text);
                        allow_range(q, lay.global_text);
                    }
                } else {  // HARD and NAIVE image rows share the own-text + own-cells keys
                    allow_range(q, inst.text);
                    allow_list(q, inst.image_tokens);
                }
                break;
            }
        }
        m.set(q, q);
    }
    return m;
}

inline std::vector<LayerMask> assemble_schedule_masks(const TokenLayout& lay,
                                                      const BindingSchedule& sch) {
    sch.validate();
    std::vector<LayerMask> out;
    out.reserve(sch.modes.size());
    for (BindingMode mode : sch.modes) out.push_back(assemble_layer_mask(lay, mode, sch.policy));
    return out;
}

// --- serialization ----------------------------------------------------------

inline std::string format_bindmask(const LayerMask& m, int layer, const std::string& mode,
                                   const std::string& header_word = "BINDMASK") {
    std::string out = header_word + " v1 seq=" + std::to_string(m.seq) +
                      " layer=" + std::to_string(layer) + " mode=" + mode + "\n";
    out.reserve(out.size() + size_t(m.seq) * (m.seq + 1));
    for (int q = 0; q < m.seq; ++q) {
        for (int k = 0; k < m.seq; ++k) out.push_back(m.at(q, k) ? '1' : '0');
        out.push_back('\n');
    }
    return out;
}

struct ParsedMask {
    LayerMask mask;
    int layer = 0;
    std::string mode;
    std::string header_word;
};

inline ParsedMask parse_bindmask(const std::string& content, const std::string& source_name) {
    size_t eol = content.find('\n');
    if (eol == std::string::npos) throw ParseError(source_name, "missing header line");
    std::string header = content.substr(0, eol);
    ParsedMask out;
    char word[32] = {0}, mode[32] = {0};
    int seq = 0, layer = 0;
    if (std::sscanf(header.c_str(), "%31s v1 seq=%d layer=%d mode=%31s", word, &seq, &layer,
                    mode) != 4)
        throw ParseError(source_name, "bad header '" + header + "'");
    if (seq < 0) throw ParseError(source_name, "negative seq");
    out.header_word = word;
    out.layer = layer;
    out.mode = mode;
    out.mask.seq = seq;
    out.mask.allow.assign(size_t(seq) * seq, 0);
    size_t pos = eol + 1;
    for (int q = 0; q < seq; ++q) {
        size_t end = content.find('\n', pos);
        if (end == std::string::npos) end = content.size();
        std::string_view row(content.data() + pos, end - pos);
        if (int(row.size()) != seq)
            throw ParseError(source_name, "row " + std::to_string(q) + " has " +
                                              std::to_string(row.size()) + " cells, want " +
                                              std::to_string(seq));
        for (int k = 0; k < seq; ++k) {
            if (row[k] != '0' && row[k] != '1')
                throw ParseError(source_name, "row " + std::to_string(q) + " has non-binary cell");
            if (row[k] == '1') out.mask.set(q, k);
        }
        pos = end + 1;
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path);
    out << content;
}

inline void write_bindmask(const std::string& path, const LayerMask& m, int layer,
                           const std::string& mode, const std::string& header_word = "BINDMASK") {
    write_text_file(path, format_bindmask(m, layer, mode, header_word));
}

// 255 = allowed, 0 = blocked; one pixel per (q, k).
inline void write_mask_pgm(const std::string& path, const LayerMask& m) {
    std::string out = "P5\n" + std::to_string(m.seq) + " " + std::to_string(m.seq) + "\n255\n";
    out.reserve(out.size() + m.allow.size());
    for (uint8_t v : m.allow) out.push_back(char(v ? 255 : 0));
    write_text_file(path, out);
}

inline std::vector<uint64_t> pack_mask(const LayerMask& m) {
    std::vector<uint64_t> words((m.allow.size() + 63) / 64, 0);
    for (size_t i = 0; i < m.allow.size(); ++i)
        if (m.allow[i]) words[i / 64] |= (uint64_t(1) << (i % 64));
    return words;
}

inline LayerMask unpack_mask(const std::vector<uint64_t>& words, int seq) {
    LayerMask m;
    m.seq = seq;
    m.allow.assign(size_t(seq) * seq, 0);
    for (size_t i = 0; i < m.allow.size(); ++i)
        m.allow[i] = uint8_t((words[i / 64] >> (i % 64)) & 1);
    return m;
}

// Writes mask_L00.txt / mask_L00.pgm pairs into dir; returns the file names.
inline std::vector<std::string> dump_schedule_masks(const std::string& dir,
                                                    const TokenLayout& lay,
                                                    const BindingSchedule& sch) {
    std::vector<std::string> files;
    for (int l = 0; l < sch.layers(); ++l) {
        LayerMask m = assemble_layer_mask(lay, sch.modes[l], sch.policy);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "mask_L%02d", l);
        std::string txt = dir + "/" + stem + ".txt";
        std::string pgm = dir + "/" + stem + ".pgm";
        write_bindmask(txt, m, l, mode_name(sch.modes[l]));
        write_mask_pgm(pgm, m);
        files.push_back(txt);
        files.push_back(pgm);
    }
    return files;
}

}  // namespace bindattn
