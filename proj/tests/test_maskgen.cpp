#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "bindattn/maskgen.hpp"
#include "test_util.hpp"

using namespace bindattn;

namespace {

// Independent per-(q,k) clause evaluator used as the oracle. Decides each pair
// from scratch with naive membership scans; the production assembler fills
// whole blocks instead.
bool in_range(const IndexRange& r, int k) { return r.contains(k); }

bool in_list(const std::vector<int>& xs, int k) {
    for (int x : xs)
        if (x == k) return true;
    return false;
}

bool oracle_allow(const TokenLayout& lay, BindingMode mode, const SchedulePolicy& pol, int q,
                  int k) {
    if (q == k) return true;
    const TokenInfo& iq = lay.info(q);
    auto in_image = [&](int t) { return in_range(lay.image, t); };
    switch (iq.kind) {
        case TokenKind::GlobalText:
            return in_range(lay.global_text, k) || in_image(k);
        case TokenKind::InstanceText: {
            const auto& inst = lay.instances[iq.instance];
            if (mode == BindingMode::NaiveIsolation || !pol.text_binding_enabled)
                return in_range(inst.text, k) || in_list(inst.image_tokens, k);
            return in_range(inst.text, k) || in_range(inst.bridge, k);
        }
        case TokenKind::Bridge: {
            const auto& inst = lay.instances[iq.instance];
            return in_range(inst.text, k) || in_range(inst.bridge, k);
        }
        case TokenKind::Image: {
            if (iq.instance < 0) {
                bool wide = (mode == BindingMode::SoftImage) || pol.background_soft_in_hard_layers;
                if (in_range(lay.global_text, k)) return true;
                return wide ? in_image(k) : in_list(lay.background_image, k);
            }
            const auto& inst = lay.instances[iq.instance];
            if (mode == BindingMode::SoftImage) {
                if (in_image(k)) return true;
                if (pol.soft_text_keys &&
                    (in_range(inst.text, k) || in_range(lay.global_text, k)))
                    return true;
                return false;
            }
            // HARD and NAIVE image rows share the own-text + own-cells key set.
            return in_range(inst.text, k) || in_list(inst.image_tokens, k);
        }
    }
    return false;
}

std::set<int> row_keys(const LayerMask& m, int q) {
    std::set<int> out;
    for (int k = 0; k < m.seq; ++k)
        if (m.at(q, k)) out.insert(k);
    return out;
}

TokenLayout canonical_layout(bool bridges = true) {
    SceneSpec s = testutil::canonical_scene();
    auto asg = rasterize_and_assign(s);
    return build_token_layout(s, asg, 2, 2, bridges);
}

}  // namespace

TEST_CASE("binding predicates on the canonical layout") {
    TokenLayout lay = canonical_layout();
    int A = lay.instance_index("A");

    CHECK(text_binding_predicate(lay, A, 2, 11));
    CHECK(!text_binding_predicate(lay, A, 2, 6));
    CHECK(!text_binding_predicate(lay, A, 2, 4));

    CHECK(hard_image_predicate(lay, A, 6, 7));
    CHECK(hard_image_predicate(lay, A, 6, 3));
    CHECK(!hard_image_predicate(lay, A, 6, 8));
    CHECK(!hard_image_predicate(lay, A, 2, 6));

    CHECK(soft_image_predicate(lay, A, 6, 8));
    CHECK(!soft_image_predicate(lay, A, 6, 12));
    CHECK(!soft_image_predicate(lay, A, 2, 6));

    CHECK_THROWS_AS(text_binding_predicate(lay, 5, 2, 3), UnknownInstance);
    CHECK_THROWS_AS(hard_image_predicate(lay, -1, 2, 3), UnknownInstance);
}

TEST_CASE("assemble_layer_mask canonical rows") {
    TokenLayout lay = canonical_layout();
    SchedulePolicy pol;

    LayerMask hard = assemble_layer_mask(lay, BindingMode::HardImage, pol);
    CHECK(row_keys(hard, 6) == std::set<int>{2, 3, 6, 7});
    CHECK(row_keys(hard, 9) == std::set<int>{4, 5, 8, 9});
    CHECK(row_keys(hard, 0) == std::set<int>{0, 1, 6, 7, 8, 9});
    CHECK(row_keys(hard, 2) == std::set<int>{2, 3, 10, 11});
    CHECK(row_keys(hard, 10) == std::set<int>{2, 3, 10, 11});
    CHECK(row_keys(hard, 13) == std::set<int>{4, 5, 12, 13});

    LayerMask soft = assemble_layer_mask(lay, BindingMode::SoftImage, pol);
    CHECK(row_keys(soft, 6) == std::set<int>{0, 1, 2, 3, 6, 7, 8, 9});
    CHECK(row_keys(soft, 8) == std::set<int>{0, 1, 4, 5, 6, 7, 8, 9});
    // Text and bridge rows are identical across layer modes.
    CHECK(row_keys(soft, 2) == row_keys(hard, 2));
    CHECK(row_keys(soft, 10) == row_keys(hard, 10));
    CHECK(row_keys(soft, 0) == row_keys(hard, 0));

    SchedulePolicy no_soft_text = pol;
    no_soft_text.soft_text_keys = false;
    LayerMask soft2 = assemble_layer_mask(lay, BindingMode::SoftImage, no_soft_text);
    CHECK(row_keys(soft2, 6) == std::set<int>{6, 7, 8, 9});
}

TEST_CASE("assemble_layer_mask without text binding") {
    TokenLayout lay = canonical_layout(false);
    SchedulePolicy pol;
    pol.text_binding_enabled = false;
    LayerMask hard = assemble_layer_mask(lay, BindingMode::HardImage, pol);
    CHECK(hard.seq == 10);
    CHECK(row_keys(hard, 2) == std::set<int>{2, 3, 6, 7});
    CHECK(row_keys(hard, 6) == std::set<int>{2, 3, 6, 7});
}

TEST_CASE("assemble_layer_mask naive isolation") {
    TokenLayout lay = canonical_layout(false);
    SchedulePolicy pol;
    LayerMask naive = assemble_layer_mask(lay, BindingMode::NaiveIsolation, pol);
    CHECK(row_keys(naive, 2) == std::set<int>{2, 3, 6, 7});
    CHECK(row_keys(naive, 6) == std::set<int>{2, 3, 6, 7});
    CHECK(row_keys(naive, 4) == std::set<int>{4, 5, 8, 9});
    CHECK(row_keys(naive, 0) == std::set<int>{0, 1, 6, 7, 8, 9});
}

TEST_CASE("background rows honour the soft-in-hard policy flag") {
    SceneSpec s = testutil::canonical_scene();
    s.instances[0].region.bbox = {0, 0, 0, 0};  // A at (0,0)
    s.instances[1].region.bbox = {0, 1, 0, 1};  // B at (0,1); bottom row background
    auto asg = rasterize_and_assign(s);
    TokenLayout lay = build_token_layout(s, asg, 2, 2, true);
    REQUIRE(lay.background_image == std::vector<int>{8, 9});

    SchedulePolicy pol;
    LayerMask hard = assemble_layer_mask(lay, BindingMode::HardImage, pol);
    CHECK(row_keys(hard, 8) == std::set<int>{0, 1, 8, 9});

    pol.background_soft_in_hard_layers = true;
    LayerMask hard2 = assemble_layer_mask(lay, BindingMode::HardImage, pol);
    CHECK(row_keys(hard2, 8) == std::set<int>{0, 1, 6, 7, 8, 9});

    pol.background_soft_in_hard_layers = false;
    LayerMask soft = assemble_layer_mask(lay, BindingMode::SoftImage, pol);
    CHECK(row_keys(soft, 8) == std::set<int>{0, 1, 6, 7, 8, 9});
}

TEST_CASE("single full-coverage instance under HARD excludes global text and bridges") {
    SceneSpec s = testutil::canonical_scene();
    s.instances.pop_back();
    s.instances[0].region.bbox = {0, 0, 1, 1};
    auto asg = rasterize_and_assign(s);
    TokenLayout lay = build_token_layout(s, asg, 2, 2, true);
    // Layout: T_g=[0,2) T_A=[2,4) image=[4,8) B_A=[8,12).
    LayerMask hard = assemble_layer_mask(lay, BindingMode::HardImage, SchedulePolicy{});
    CHECK(row_keys(hard, 4) == std::set<int>{2, 3, 4, 5, 6, 7});
}

TEST_CASE("masks never have an empty row and always keep the diagonal") {
    RngStream rng(3111);
    for (int trial = 0; trial < 25; ++trial) {
        SceneSpec s = testutil::random_scene(rng, 5, 5, 5);
        auto asg = rasterize_and_assign(s);
        for (bool bridges : {true, false}) {
            SchedulePolicy pol;
            pol.text_binding_enabled = bridges;
            TokenLayout lay = build_token_layout(s, asg, 2, 2 * int(s.global_tags.size()), bridges);
            for (BindingMode mode :
                 {BindingMode::HardImage, BindingMode::SoftImage, BindingMode::NaiveIsolation}) {
                LayerMask m = assemble_layer_mask(lay, mode, pol);
                for (int q = 0; q < m.seq; ++q) {
                    CHECK(m.at(q, q));
                }
            }
        }
    }
}

TEST_CASE("text-bridge and image blocks are symmetric within each instance") {
    TokenLayout lay = canonical_layout();
    SchedulePolicy pol;
    for (BindingMode mode : {BindingMode::HardImage, BindingMode::SoftImage}) {
        LayerMask m = assemble_layer_mask(lay, mode, pol);
        for (const auto& inst : lay.instances) {
            std::vector<int> text_bridge;
            for (int t = inst.text.begin; t < inst.text.end; ++t) text_bridge.push_back(t);
            for (int t = inst.bridge.begin; t < inst.bridge.end; ++t) text_bridge.push_back(t);
            for (int q : text_bridge)
                for (int k : text_bridge) CHECK(m.at(q, k) == m.at(k, q));
            for (int q : inst.image_tokens)
                for (int k : inst.image_tokens) CHECK(m.at(q, k) == m.at(k, q));
        }
    }
}

TEST_CASE("soft rows dominate hard rows on image keys") {
    RngStream rng(909);
    for (int trial = 0; trial < 20; ++trial) {
        SceneSpec s = testutil::random_scene(rng, 5, 5, 5);
        auto asg = rasterize_and_assign(s);
        TokenLayout lay = build_token_layout(s, asg, 2, 2 * int(s.global_tags.size()), true);
        SchedulePolicy pol;
        LayerMask hard = assemble_layer_mask(lay, BindingMode::HardImage, pol);
        LayerMask soft = assemble_layer_mask(lay, BindingMode::SoftImage, pol);
        for (const auto& inst : lay.instances)
            for (int q : inst.image_tokens)
                for (int k = lay.image.begin; k < lay.image.end; ++k)
                    if (hard.at(q, k)) CHECK(soft.at(q, k));
    }
}

TEST_CASE("assembled masks match the independent clause oracle") {
    RngStream rng(112233);
    for (int trial = 0; trial < 30; ++trial) {
        SceneSpec s = testutil::random_scene(rng, 5, 6, 6);
        auto asg = rasterize_and_assign(s);
        int combo = trial % 8;
        SchedulePolicy pol;
        pol.text_binding_enabled = combo & 1;
        pol.soft_text_keys = combo & 2;
        pol.background_soft_in_hard_layers = combo & 4;
        TokenLayout lay = build_token_layout(s, asg, 2, 2 * int(s.global_tags.size()),
                                             pol.text_binding_enabled);
        for (BindingMode mode :
             {BindingMode::HardImage, BindingMode::SoftImage, BindingMode::NaiveIsolation}) {
            if (mode == BindingMode::NaiveIsolation && lay.has_bridges) continue;
            LayerMask m = assemble_layer_mask(lay, mode, pol);
            for (int q = 0; q < m.seq; ++q)
                for (int k = 0; k < m.seq; ++k)
                    REQUIRE(bool(m.at(q, k)) == oracle_allow(lay, mode, pol, q, k));
        }
    }
}

TEST_CASE("default_schedule places the hard band") {
    BindingSchedule sch = default_schedule(12, SchedulePolicy{});
    REQUIRE(sch.modes.size() == 12);
    for (int l = 0; l < 12; ++l) {
        BindingMode want = (l >= 4 && l < 8) ? BindingMode::HardImage : BindingMode::SoftImage;
        CHECK(sch.modes[l] == want);
    }

    BindingSchedule all_hard = default_schedule(12, SchedulePolicy{}, 0.0, 1.0);
    for (auto m : all_hard.modes) CHECK(m == BindingMode::HardImage);

    BindingSchedule all_soft = default_schedule(12, SchedulePolicy{}, 0.5, 0.5);
    for (auto m : all_soft.modes) CHECK(m == BindingMode::SoftImage);

    // lo == hi is all-soft even when lo*L is not an integer.
    BindingSchedule all_soft2 = default_schedule(12, SchedulePolicy{}, 0.33, 0.33);
    for (auto m : all_soft2.modes) CHECK(m == BindingMode::SoftImage);

    CHECK_THROWS_AS(default_schedule(12, SchedulePolicy{}, 0.7, 0.3), ValidationError);
    CHECK_THROWS_AS(default_schedule(12, SchedulePolicy{}, -0.1, 0.5), ValidationError);
}

TEST_CASE("schedule validation") {
    SchedulePolicy pol;
    BindingSchedule sch;
    sch.policy = pol;
    sch.modes = {BindingMode::NaiveIsolation, BindingMode::HardImage};
    CHECK_THROWS_AS(sch.validate(), ValidationError);
    sch.modes = {BindingMode::NaiveIsolation, BindingMode::NaiveIsolation};
    CHECK_NOTHROW(sch.validate());
}

TEST_CASE("BINDMASK text round trip and PGM bytes") {
    TokenLayout lay = canonical_layout();
    LayerMask m = assemble_layer_mask(lay, BindingMode::HardImage, SchedulePolicy{});

    std::string text = format_bindmask(m, 3, "HARD", "BINDMASK");
    CHECK(text.rfind("BINDMASK v1 seq=14 layer=3 mode=HARD\n", 0) == 0);
    ParsedMask back = parse_bindmask(text, "inline");
    CHECK(back.layer == 3);
    CHECK(back.mode == "HARD");
    CHECK(back.mask.seq == m.seq);
    CHECK(back.mask.allow == m.allow);
    CHECK(back.header_word == "BINDMASK");

    CHECK_THROWS_AS(parse_bindmask("BINDMASK v2 seq=2 layer=0 mode=HARD\n01\n10\n", "inline"),
                    ParseError);
    CHECK_THROWS_AS(parse_bindmask("BINDMASK v1 seq=2 layer=0 mode=HARD\n01\n", "inline"),
                    ParseError);

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "bindattn_maskdump_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_mask_pgm((dir / "m.pgm").string(), m);
    std::string pgm = read_file((dir / "m.pgm").string());
    CHECK(pgm.rfind("P5\n14 14\n255\n", 0) == 0);
    size_t header = std::string("P5\n14 14\n255\n").size();
    REQUIRE(pgm.size() == header + 14 * 14);
    for (size_t i = header; i < pgm.size(); ++i) {
        unsigned char b = pgm[i];
        CHECK((b == 0 || b == 255));
    }
    // Allowed pixel count matches the mask.
    size_t ones = 0;
    for (auto v : m.allow) ones += v;
    size_t white = 0;
    for (size_t i = header; i < pgm.size(); ++i) white += (unsigned char)pgm[i] == 255;
    CHECK(white == ones);
    fs::remove_all(dir);
}

TEST_CASE("packed bitset round trip") {
    RngStream rng(8);
    LayerMask m;
    m.seq = 37;
    m.allow.assign(37 * 37, 0);
    for (auto& v : m.allow) v = uint8_t(rng.next_u64() & 1);
    auto packed = pack_mask(m);
    LayerMask back = unpack_mask(packed, m.seq);
    CHECK(back.allow == m.allow);
}
