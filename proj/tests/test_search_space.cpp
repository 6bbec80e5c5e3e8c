#include <string>
#include <vector>

#include "doctest.h"
#include "voxnas/errors.hpp"
#include "voxnas/search_space.hpp"

using namespace voxnas;

namespace {

TaskStats heart_like() {
    TaskStats s;
    s.median_d = 115;
    s.median_h = 320;
    s.median_w = 320;
    s.min_d = 90;
    s.min_h = 320;
    s.min_w = 320;
    return s;
}

TaskStats thin_depth() {  // prostate-like: depth can be as thin as 11
    TaskStats s;
    s.median_d = 20;
    s.median_h = 320;
    s.median_w = 320;
    s.min_d = 11;
    s.min_h = 256;
    s.min_w = 256;
    return s;
}

}  // namespace

TEST_CASE("patch candidates from median extents") {
    CHECK(patch_hw_candidates(heart_like(), 16) == std::vector<int64_t>{320, 304, 288, 272, 256});

    TaskStats brain;
    brain.median_d = 138;
    brain.median_h = 240;
    brain.median_w = 240;
    brain.min_d = 138;
    brain.min_h = 240;
    brain.min_w = 240;
    CHECK(patch_hw_candidates(brain, 16) == std::vector<int64_t>{240, 224, 208, 192, 176});

    // max(h, w) drives the list.
    TaskStats asym = brain;
    asym.median_h = 100;
    CHECK(patch_hw_candidates(asym, 16)[0] == 240);

    TaskStats tiny;
    tiny.median_d = 16;
    tiny.median_h = 16;
    tiny.median_w = 16;
    tiny.min_d = 16;
    tiny.min_h = 16;
    tiny.min_w = 16;
    CHECK(patch_hw_candidates(tiny, 16) == std::vector<int64_t>{16});

    TaskStats d112 = heart_like();
    d112.median_d = 112;
    CHECK(patch_d_candidates(d112, 16) == std::vector<int64_t>{112, 96, 80, 64, 48});
    TaskStats d11 = thin_depth();
    d11.median_d = 11;
    CHECK(patch_d_candidates(d11, 4) == std::vector<int64_t>{8, 4});
    TaskStats d4 = d11;
    d4.median_d = 4;
    d4.min_d = 4;
    CHECK(patch_d_candidates(d4, 4) == std::vector<int64_t>{4});
}

TEST_CASE("stride restriction walks the minimum extent") {
    SUBCASE("roomy volume searches stages 3 and 4") {
        const StrideRule r = restrict_strides(heart_like());
        CHECK(r.depth[0] == std::vector<int64_t>{2});
        CHECK(r.depth[1] == std::vector<int64_t>{2});
        CHECK(r.depth[2] == std::vector<int64_t>{2, 1});
        CHECK(r.depth[3] == std::vector<int64_t>{2, 1});
        CHECK(r.hw[2] == std::vector<int64_t>{2, 1});
        CHECK(r.divisor_d == 16);
        CHECK(r.divisor_hw == 16);
    }

    SUBCASE("thin depth pins late stages to stride 1") {
        const StrideRule r = restrict_strides(thin_depth());
        // 11 -> 5 -> 2: stages 3/4 see extents below 4 and lose stride 2.
        CHECK(r.depth[0] == std::vector<int64_t>{2});
        CHECK(r.depth[1] == std::vector<int64_t>{2});
        CHECK(r.depth[2] == std::vector<int64_t>{1});
        CHECK(r.depth[3] == std::vector<int64_t>{1});
        CHECK(r.divisor_d == 4);
        CHECK(r.divisor_hw == 16);
    }

    SUBCASE("flat volume never strides the depth axis") {
        TaskStats s = thin_depth();
        s.min_d = 3;
        s.median_d = 4;
        const StrideRule r = restrict_strides(s);
        for (int i = 0; i < 4; ++i) CHECK(r.depth[static_cast<size_t>(i)] == std::vector<int64_t>{1});
        CHECK(r.divisor_d == 1);
    }
}

TEST_CASE("schema has the fixed decision order and count") {
    const DecisionSchema schema = build_schema(heart_like());
    REQUIRE(schema.decisions.size() == kDecisionCount);
    const char* names[] = {"patch_hw", "patch_d",   "stride3_d", "stride3_hw", "stride4_d", "stride4_hw",
                           "pool",     "dilation2", "dilation3", "dilation4",  "activation", "skip_1_2",
                           "skip_1_3", "skip_1_4",  "skip_2_3",  "skip_2_4",   "skip_3_4"};
    for (size_t i = 0; i < kDecisionCount; ++i) CHECK(schema.decisions[i].name == names[i]);

    CHECK(schema.decisions[0].ints == std::vector<int64_t>{320, 304, 288, 272, 256});
    CHECK(schema.decisions[6].strs == std::vector<std::string>{"max", "avg"});
    CHECK(schema.decisions[7].ints == std::vector<int64_t>{1, 2, 3});
    CHECK(schema.decisions[10].strs == std::vector<std::string>{"relu", "leaky_relu", "elu"});
    CHECK(schema.decisions[11].strs == std::vector<std::string>{"connect", "zero"});
    CHECK(schema.stride1_d == 2);
    CHECK(schema.stride2_hw == 2);

    CHECK(schema_space_size(schema) == 4147200ull);
}

TEST_CASE("max_architecture picks the first entry of every list") {
    const DecisionSchema schema = build_schema(heart_like());
    const ArchChoice c = max_architecture(schema);
    REQUIRE(c.indices.size() == kDecisionCount);
    for (int64_t idx : c.indices) CHECK(idx == 0);
    CHECK(schema.decisions[0].ints[static_cast<size_t>(c.indices[0])] == 320);
    CHECK(schema.decisions[2].ints[static_cast<size_t>(c.indices[2])] == 2);  // stride3_d
    validate_choice(schema, c);  // must not throw
}

TEST_CASE("validate_choice names the offending decision") {
    const DecisionSchema schema = build_schema(heart_like());
    ArchChoice c = max_architecture(schema);

    ArchChoice short_c = c;
    short_c.indices.pop_back();
    CHECK_THROWS_AS(validate_choice(schema, short_c), ArgumentError);

    ArchChoice bad = c;
    bad.indices[8] = 99;  // dilation3
    bool threw = false;
    try {
        validate_choice(schema, bad);
    } catch (const ArgumentError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("dilation3") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("validate_stats rejects degenerate inputs") {
    TaskStats s = heart_like();
    CHECK_NOTHROW(validate_stats(s));
    s.min_d = 200;  // min above median
    CHECK_THROWS_AS(validate_stats(s), ArgumentError);
    s = heart_like();
    s.median_h = 0;
    CHECK_THROWS_AS(validate_stats(s), ArgumentError);
    s = heart_like();
    s.in_channels = 0;
    CHECK_THROWS_AS(validate_stats(s), ArgumentError);
}

TEST_CASE("schema and choice json round trips deterministically") {
    const DecisionSchema schema = build_schema(thin_depth());
    const std::string text = schema_to_json(schema);
    CHECK(schema_to_json(schema) == text);  // byte-stable

    const DecisionSchema back = schema_from_json(text);
    REQUIRE(back.decisions.size() == schema.decisions.size());
    for (size_t i = 0; i < schema.decisions.size(); ++i) {
        CHECK(back.decisions[i].name == schema.decisions[i].name);
        CHECK(back.decisions[i].numeric == schema.decisions[i].numeric);
        CHECK(back.decisions[i].ints == schema.decisions[i].ints);
        CHECK(back.decisions[i].strs == schema.decisions[i].strs);
    }
    CHECK(back.divisor_d == schema.divisor_d);
    CHECK(back.divisor_hw == schema.divisor_hw);
    CHECK(back.in_channels == schema.in_channels);
    CHECK(schema_to_json(back) == text);

    CHECK_THROWS_AS(schema_from_json("{"), FormatError);

    const ArchChoice c = max_architecture(schema);
    CHECK(choice_from_json(choice_to_json(c)) == c);
    CHECK_THROWS_AS(choice_from_json("not json"), FormatError);
}

TEST_CASE("patch candidates error when the dataset cannot fit one patch") {
    TaskStats s;
    s.median_d = 2;
    s.median_h = 8;
    s.median_w = 8;
    s.min_d = 2;
    s.min_h = 8;
    s.min_w = 8;
    // divisor 16 > median 8: every candidate falls below the divisor.
    CHECK_THROWS_AS(patch_hw_candidates(s, 16), ConfigError);
}
