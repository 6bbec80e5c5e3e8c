#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "voxnas/rng.hpp"
#include "voxnas/supernet.hpp"

using namespace voxnas;

namespace {

TaskStats cube16() {
    TaskStats s;
    s.median_d = s.median_h = s.median_w = 16;
    s.min_d = s.min_h = s.min_w = 16;
    return s;
}

Supernet<float> make_net(int64_t base = 2, uint64_t seed = 5) {
    SupernetConfig cfg;
    cfg.base_channels = base;
    return Supernet<float>(cfg, build_schema(cube16()), seed);
}

Tensor5<float> rand_input(Shape5 s, uint64_t seed) {
    Tensor5<float> t(s);
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("supernet widths and construction") {
    const Supernet<float> net = make_net(2);
    CHECK(net.stage_width(1) == 2);
    CHECK(net.stage_width(2) == 4);
    CHECK(net.stage_width(3) == 8);
    CHECK(net.stage_width(4) == 16);
    CHECK(net.bottleneck_width() == 32);

    SupernetConfig bad;
    bad.base_channels = 3;
    CHECK_THROWS_AS(Supernet<float>(bad, build_schema(cube16()), 0), ArgumentError);
    bad.base_channels = 0;
    CHECK_THROWS_AS(Supernet<float>(bad, build_schema(cube16()), 0), ArgumentError);
}

TEST_CASE("parameter store holds the documented shapes") {
    const Supernet<float> net = make_net(2);
    const ParamStore<float>& ps = net.params();

    auto shape_of = [&](const char* name) { return ps.tensors[ps.index_of(name)].shape; };
    CHECK(shape_of("enc1_conv1_k") == Shape5{2, 1, 3, 3, 3});
    CHECK(shape_of("enc2_conv1_k") == Shape5{4, 2, 3, 3, 3});
    CHECK(shape_of("bneck_conv1_k") == Shape5{32, 16, 3, 3, 3});
    // Decoder stage 2 consumes stage-3 features plus the halved stage-2 link.
    CHECK(shape_of("dec2_conv1_k") == Shape5{4, 10, 3, 3, 3});
    CHECK(shape_of("link3_k") == Shape5{4, 8, 1, 1, 1});
    CHECK(shape_of("skip_1_2_k") == Shape5{10, 2, 1, 1, 1});
    CHECK(shape_of("skip_3_4_k") == Shape5{40, 8, 1, 1, 1});
    CHECK(shape_of("head2_k") == Shape5{1, 4, 1, 1, 1});
    CHECK(shape_of("final_k") == Shape5{1, 1, 1, 1, 1});
    CHECK(shape_of("enc1_in1_gamma") == Shape5{1, 2, 1, 1, 1});

    // Norm scales start at one, biases and offsets at zero.
    for (float v : ps.tensors[ps.index_of("enc1_in1_gamma")].data) CHECK(v == 1.0f);
    for (float v : ps.tensors[ps.index_of("enc1_in1_beta")].data) CHECK(v == 0.0f);
    for (float v : ps.tensors[ps.index_of("dec3_conv2_b")].data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(ps.index_of("no_such_param"), ArgumentError);
}

TEST_CASE("kernel init respects the fan-in bound") {
    const Supernet<float> net = make_net(4, 11);
    const ParamStore<float>& ps = net.params();
    for (size_t i = 0; i < ps.names.size(); ++i) {
        if (ps.names[i].size() < 2 || ps.names[i].substr(ps.names[i].size() - 2) != "_k") continue;
        const Shape5 s = ps.tensors[i].shape;
        const double bound = std::sqrt(6.0 / static_cast<double>(s.c * s.d * s.h * s.w));
        float biggest = 0.0f;
        for (float v : ps.tensors[i].data) {
            CHECK(std::abs(v) <= bound);
            biggest = std::max(biggest, std::abs(v));
        }
        CHECK(biggest > 0.0f);
    }
}

TEST_CASE("seeding is deterministic") {
    const Supernet<float> a = make_net(2, 7), b = make_net(2, 7), c = make_net(2, 8);
    REQUIRE(a.params().tensors.size() == b.params().tensors.size());
    bool all_equal = true, any_diff_seed = false;
    for (size_t i = 0; i < a.params().tensors.size(); ++i) {
        if (a.params().tensors[i].data != b.params().tensors[i].data) all_equal = false;
        if (a.params().tensors[i].data != c.params().tensors[i].data) any_diff_seed = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
}

TEST_CASE("resolve maps choices onto concrete settings") {
    const DecisionSchema schema = build_schema(cube16());
    // cube16: patches {16,8}, stride3 searchable {2,1}, stride4 fixed {1}.
    REQUIRE(schema.decisions[2].ints == std::vector<int64_t>{2, 1});
    REQUIRE(schema.decisions[4].ints == std::vector<int64_t>{1});

    const ArchRealization top = resolve(schema, max_architecture(schema));
    CHECK(top.patch_hw == 16);
    CHECK(top.patch_d == 16);
    CHECK(top.stage_stride[0] == Axes3{2, 2, 2});
    CHECK(top.stage_stride[1] == Axes3{2, 2, 2});
    CHECK(top.stage_stride[2] == Axes3{2, 2, 2});
    CHECK(top.stage_stride[3] == Axes3{1, 1, 1});
    CHECK(top.dilation == std::array<int64_t, 4>{1, 1, 1, 1});
    CHECK(top.pool == PoolKind::kMax);
    CHECK(top.act == ActKind::kRelu);
    for (bool s : top.skip) CHECK(s);

    ArchChoice c = max_architecture(schema);
    c.indices[1] = 1;   // patch_d -> 8
    c.indices[2] = 1;   // stride3_d -> 1
    c.indices[6] = 1;   // pool -> avg
    c.indices[7] = 1;   // dilation2 -> 2
    c.indices[9] = 2;   // dilation4 -> 3
    c.indices[10] = 2;  // activation -> elu
    c.indices[13] = 1;  // skip_1_4 -> zero
    const ArchRealization r = resolve(schema, c);
    CHECK(r.patch_d == 8);
    CHECK(r.stage_stride[2] == Axes3{1, 2, 2});
    CHECK(r.pool == PoolKind::kAvg);
    CHECK(r.dilation == std::array<int64_t, 4>{1, 2, 1, 3});
    CHECK(r.act == ActKind::kElu);
    CHECK(r.skip == std::array<bool, 6>{true, true, false, true, true, true});
}

TEST_CASE("forward preserves the input spatial shape") {
    const Supernet<float> net = make_net(2);
    const DecisionSchema schema = build_schema(cube16());
    const ArchRealization r = resolve(schema, max_architecture(schema));

    Graph<float> g;
    const NodeId x = g.leaf(rand_input(Shape5{1, 1, 8, 16, 16}, 3), false);
    const ForwardResult<float> fr = net.forward(g, x, r, false);
    CHECK(g.value(fr.logits).shape == Shape5{1, 1, 8, 16, 16});
    CHECK(g.value(fr.logits).all_finite());

    // Batched input, different choice.
    ArchChoice c = max_architecture(schema);
    c.indices[2] = 1;  // stride3_d -> 1
    c.indices[13] = 1;
    c.indices[16] = 1;
    const ArchRealization r2 = resolve(schema, c);
    Graph<float> g2;
    const NodeId x2 = g2.leaf(rand_input(Shape5{2, 1, 8, 8, 8}, 4), false);
    const ForwardResult<float> fr2 = net.forward(g2, x2, r2, false);
    CHECK(g2.value(fr2.logits).shape == Shape5{2, 1, 8, 8, 8});

    // Indivisible extents are rejected up front.
    Graph<float> g3;
    const NodeId x3 = g3.leaf(rand_input(Shape5{1, 1, 15, 16, 16}, 5), false);
    CHECK_THROWS_AS(net.forward(g3, x3, r, false), ShapeError);
    Graph<float> g4;
    const NodeId x4 = g4.leaf(rand_input(Shape5{1, 2, 8, 16, 16}, 6), false);
    CHECK_THROWS_AS(net.forward(g4, x4, r, false), ShapeError);
}

TEST_CASE("forward is deterministic") {
    const Supernet<float> net = make_net(2);
    const ArchRealization r = resolve(build_schema(cube16()), max_architecture(build_schema(cube16())));
    const Tensor5<float> x = rand_input(Shape5{1, 1, 8, 8, 8}, 9);

    Graph<float> ga, gb;
    const auto fa = net.forward(ga, ga.leaf(x, false), r, false);
    const auto fb = net.forward(gb, gb.leaf(x, false), r, false);
    CHECK(ga.value(fa.logits).data == gb.value(fb.logits).data);
}

TEST_CASE("active parameters track the skip choices") {
    const Supernet<float> net = make_net(2);
    const DecisionSchema schema = build_schema(cube16());
    const ParamStore<float>& ps = net.params();

    ArchChoice all_on = max_architecture(schema);
    ArchChoice all_off = all_on;
    for (size_t i = 11; i < 17; ++i) all_off.indices[i] = 1;

    const std::vector<size_t> on = net.active_param_ids(resolve(schema, all_on));
    const std::vector<size_t> off = net.active_param_ids(resolve(schema, all_off));
    CHECK(on.size() == off.size() + 12);  // six skip convs, kernel + bias each

    const std::set<size_t> on_set(on.begin(), on.end()), off_set(off.begin(), off.end());
    CHECK(on_set.size() == on.size());
    for (size_t id : off) CHECK(on_set.count(id) == 1);
    for (size_t e = 0; e < kSkipEdgeCount; ++e) {
        const std::string base = "skip_" + std::to_string(kSkipEdges[e].first) + "_" +
                                 std::to_string(kSkipEdges[e].second);
        CHECK(on_set.count(ps.index_of(base + "_k")) == 1);
        CHECK(off_set.count(ps.index_of(base + "_k")) == 0);
    }

    // The forward pass consumes exactly the active set.
    Graph<float> g;
    const NodeId x = g.leaf(rand_input(Shape5{1, 1, 8, 8, 8}, 2), false);
    const auto fr = net.forward(g, x, resolve(schema, all_off), true);
    std::set<size_t> used;
    for (const auto& [pid, leaf] : fr.params) {
        used.insert(pid);
        CHECK(g.requires_grad(leaf));
    }
    CHECK(used == off_set);

    Graph<float> g2;
    const auto fr2 = net.forward(g2, g2.leaf(rand_input(Shape5{1, 1, 8, 8, 8}, 2), false),
                                 resolve(schema, all_off), false);
    for (const auto& [pid, leaf] : fr2.params) CHECK_FALSE(g2.requires_grad(leaf));
}

TEST_CASE("matching block projects and resizes a skip source") {
    const Supernet<float> net = make_net(2);
    Graph<float> g;
    const NodeId feat = g.leaf(rand_input(Shape5{1, 2, 4, 8, 8}, 21), false);
    // Edge 2 is 1 -> 4: project stage-1 width onto decoder-4 input channels.
    const NodeId m = net.matching(g, feat, 2, Axes3{2, 2, 2}, false, nullptr);
    CHECK(g.value(m).shape == Shape5{1, 40, 2, 2, 2});
    CHECK(g.value(m).all_finite());
    CHECK_THROWS_AS(net.matching(g, feat, 6, Axes3{2, 2, 2}, false, nullptr), ArgumentError);
}

TEST_CASE("store cast round trip") {
    const Supernet<float> net = make_net(2, 13);
    const ParamStore<double> pd = net.params().cast<double>();
    const Supernet<double> netd(net.config(), build_schema(cube16()), pd);
    CHECK(netd.params().total_elements() == net.params().total_elements());
    CHECK(netd.params().names == net.params().names);

    Graph<double> g;
    const ArchRealization r = resolve(build_schema(cube16()), max_architecture(build_schema(cube16())));
    Tensor5<double> x = rand_input(Shape5{1, 1, 8, 8, 8}, 17).cast<double>();
    const auto fr = netd.forward(g, g.leaf(x, false), r, false);
    CHECK(g.value(fr.logits).all_finite());
}
