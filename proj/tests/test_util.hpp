#pragma once

// Shared helpers for the test suites: canonical fixtures and random scene
// generation driven by the library's own deterministic streams.

#include <algorithm>
#include <string>
#include <vector>

#include "bindattn/numerics.hpp"
#include "bindattn/scene.hpp"

namespace testutil {

using namespace bindattn;

// The 2x2 reference scene used throughout: instance A on the top row, B on the
// bottom row, one tag each, one global tag, no background cells.
inline SceneSpec canonical_scene() {
    SceneSpec s;
    s.grid_h = 2;
    s.grid_w = 2;
    s.global_tags = {"backdrop"};
    s.seed = 7;
    InstanceSpec a;
    a.id = "A";
    a.z = 0;
    a.tags = {"red"};
    a.region.kind = Region::Kind::Bbox;
    a.region.bbox = {0, 0, 0, 1};
    InstanceSpec b;
    b.id = "B";
    b.z = 0;
    b.tags = {"blue"};
    b.region.kind = Region::Kind::Bbox;
    b.region.bbox = {1, 0, 1, 1};
    s.instances = {a, b};
    return s;
}

// Random scene with non-overlapping cell regions (no occlusion corner cases) and
// at least one cell per instance. Optionally leaves some cells as background.
inline SceneSpec random_scene(RngStream& rng, int max_inst, int max_h, int max_w) {
    SceneSpec s;
    s.grid_h = 1 + int(rng.next_u64() % max_h);
    s.grid_w = 1 + int(rng.next_u64() % max_w);
    int cells = s.grid_h * s.grid_w;
    int want = 1 + int(rng.next_u64() % max_inst);
    int n_inst = std::min(want, cells);
    s.seed = rng.next_u64();

    static const std::vector<std::string> tag_pool = {"red",  "blue", "green", "gold",
                                                      "matte", "glass", "round", "tall"};
    int n_global = int(rng.next_u64() % 3);
    for (int g = 0; g < n_global; ++g)
        s.global_tags.push_back(tag_pool[rng.next_u64() % tag_pool.size()]);

    std::vector<int> perm(cells);
    for (int i = 0; i < cells; ++i) perm[i] = i;
    for (int i = cells - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.next_u64() % uint64_t(i + 1)]);

    // Deal each instance a disjoint, nonempty slice of the shuffled cells; leave
    // the remainder (if any) as background.
    int spare = cells - n_inst;
    int take_extra = spare > 0 ? int(rng.next_u64() % uint64_t(spare + 1)) : 0;
    int assigned = n_inst + take_extra;
    int cursor = 0;
    for (int i = 0; i < n_inst; ++i) {
        InstanceSpec inst;
        inst.id = std::string(1, char('A' + i));
        inst.z = int(rng.next_u64() % 4);
        int n_tags = 1 + int(rng.next_u64() % 2);
        for (int t = 0; t < n_tags; ++t)
            inst.tags.push_back(tag_pool[rng.next_u64() % tag_pool.size()]);
        int remaining_insts = n_inst - i;
        int remaining_cells = assigned - cursor;
        int max_take = remaining_cells - (remaining_insts - 1);
        int take = 1 + int(rng.next_u64() % uint64_t(max_take));
        if (i == n_inst - 1) take = remaining_cells;
        inst.region.kind = Region::Kind::Cells;
        for (int c = 0; c < take; ++c) {
            int cell = perm[cursor++];
            inst.region.cells.push_back({cell / s.grid_w, cell % s.grid_w});
        }
        s.instances.push_back(inst);
    }
    return s;
}

}  // namespace testutil
