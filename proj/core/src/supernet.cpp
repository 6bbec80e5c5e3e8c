#include "voxnas/supernet.hpp"

#include <algorithm>
#include <cmath>

#include "voxnas/errors.hpp"
#include "voxnas/rng.hpp"

namespace voxnas {

namespace {

// Decision positions in the fixed schema order.
enum : size_t {
    kDPatchHw = 0,
    kDPatchD,
    kDStride3D,
    kDStride3Hw,
    kDStride4D,
    kDStride4Hw,
    kDPool,
    kDDil2,
    kDDil3,
    kDDil4,
    kDAct,
    kDSkip0,
};

int64_t int_at(const DecisionSchema& s, size_t decision, int64_t index) {
    return s.decisions[decision].ints[static_cast<size_t>(index)];
}

const std::string& str_at(const DecisionSchema& s, size_t decision, int64_t index) {
    return s.decisions[decision].strs[static_cast<size_t>(index)];
}

}  // namespace

ArchRealization resolve(const DecisionSchema& schema, const ArchChoice& choice) {
    if (schema.decisions.size() != kDecisionCount)
        throw ArgumentError("resolve: schema has " + std::to_string(schema.decisions.size()) +
                            " decisions, expected " + std::to_string(kDecisionCount));
    validate_choice(schema, choice);

    ArchRealization r;
    r.patch_hw = int_at(schema, kDPatchHw, choice.indices[kDPatchHw]);
    r.patch_d = int_at(schema, kDPatchD, choice.indices[kDPatchD]);
    r.stage_stride[0] = {schema.stride1_d, schema.stride1_hw, schema.stride1_hw};
    r.stage_stride[1] = {schema.stride2_d, schema.stride2_hw, schema.stride2_hw};
    const int64_t s3d = int_at(schema, kDStride3D, choice.indices[kDStride3D]);
    const int64_t s3hw = int_at(schema, kDStride3Hw, choice.indices[kDStride3Hw]);
    const int64_t s4d = int_at(schema, kDStride4D, choice.indices[kDStride4D]);
    const int64_t s4hw = int_at(schema, kDStride4Hw, choice.indices[kDStride4Hw]);
    r.stage_stride[2] = {s3d, s3hw, s3hw};
    r.stage_stride[3] = {s4d, s4hw, s4hw};
    r.pool = pool_kind_from_string(str_at(schema, kDPool, choice.indices[kDPool]));
    r.dilation = {1, int_at(schema, kDDil2, choice.indices[kDDil2]), int_at(schema, kDDil3, choice.indices[kDDil3]),
                  int_at(schema, kDDil4, choice.indices[kDDil4])};
    r.act = act_kind_from_string(str_at(schema, kDAct, choice.indices[kDAct]));
    for (size_t e = 0; e < kSkipEdgeCount; ++e)
        r.skip[e] = str_at(schema, kDSkip0 + e, choice.indices[kDSkip0 + e]) == "connect";
    return r;
}

template <typename T>
size_t ParamStore<T>::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw ArgumentError("param store: no parameter named '" + name + "'");
}

template <typename T>
Supernet<T>::Supernet(SupernetConfig config, const DecisionSchema& schema, uint64_t seed) : cfg_(config) {
    if (cfg_.base_channels < 2 || cfg_.base_channels % 2 != 0)
        throw ArgumentError("supernet: base_channels must be even and >= 2, got " +
                            std::to_string(cfg_.base_channels));
    if (cfg_.in_channels < 1 || cfg_.out_channels < 1)
        throw ArgumentError("supernet: channel counts must be positive");
    if (schema.in_channels != cfg_.in_channels || schema.out_channels != cfg_.out_channels)
        throw ArgumentError("supernet: config channels (" + std::to_string(cfg_.in_channels) + "," +
                            std::to_string(cfg_.out_channels) + ") disagree with schema (" +
                            std::to_string(schema.in_channels) + "," + std::to_string(schema.out_channels) + ")");
    allocate(seed);
    index_params();
}

template <typename T>
Supernet<T>::Supernet(SupernetConfig config, const DecisionSchema& schema, ParamStore<T> store)
    : cfg_(config), store_(std::move(store)) {
    if (schema.in_channels != cfg_.in_channels || schema.out_channels != cfg_.out_channels)
        throw ArgumentError("supernet: config channels disagree with schema");
    index_params();
}

template <typename T>
void Supernet<T>::allocate(uint64_t seed) {
    Rng rng(seed);
    auto conv = [&](const std::string& name, int64_t co, int64_t ci, int64_t k) {
        Tensor5<T> w(Shape5{co, ci, k, k, k});
        const double bound = std::sqrt(6.0 / static_cast<double>(ci * k * k * k));
        for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
        store_.add(name + "_k", std::move(w));
        store_.add(name + "_b", Tensor5<T>(Shape5{1, co, 1, 1, 1}));
    };
    auto norm = [&](const std::string& name, int64_t c) {
        store_.add(name + "_gamma", Tensor5<T>(Shape5{1, c, 1, 1, 1}, T(1)));
        store_.add(name + "_beta", Tensor5<T>(Shape5{1, c, 1, 1, 1}));
    };
    auto block = [&](const std::string& name, int64_t ci, int64_t co) {
        conv(name + "_conv1", co, ci, 3);
        norm(name + "_in1", co);
        conv(name + "_conv2", co, co, 3);
        norm(name + "_in2", co);
    };

    const int64_t wb = bottleneck_width();
    auto dec_in = [&](int s) {  // channels entering decoder stage s's first conv
        return (s == 4 ? wb : stage_width(s + 1)) + stage_width(s) / 2;
    };

    for (int s = 1; s <= 4; ++s) block("enc" + std::to_string(s), s == 1 ? cfg_.in_channels : stage_width(s - 1),
                                       stage_width(s));
    block("bneck", stage_width(4), wb);
    for (int s = 1; s <= 4; ++s) block("dec" + std::to_string(s), dec_in(s), stage_width(s));
    for (int s = 1; s <= 4; ++s) conv("link" + std::to_string(s), stage_width(s) / 2, stage_width(s), 1);
    for (const auto& [i, j] : kSkipEdges)
        conv("skip_" + std::to_string(i) + "_" + std::to_string(j), dec_in(j), stage_width(i), 1);
    for (int s = 1; s <= 3; ++s) conv("head" + std::to_string(s), cfg_.out_channels, stage_width(s), 1);
    conv("final", cfg_.out_channels, cfg_.out_channels, 1);
}

template <typename T>
void Supernet<T>::index_params() {
    auto blk = [&](const std::string& name) {
        typename ParamIds::Block b;
        b.k1 = store_.index_of(name + "_conv1_k");
        b.b1 = store_.index_of(name + "_conv1_b");
        b.g1 = store_.index_of(name + "_in1_gamma");
        b.be1 = store_.index_of(name + "_in1_beta");
        b.k2 = store_.index_of(name + "_conv2_k");
        b.b2 = store_.index_of(name + "_conv2_b");
        b.g2 = store_.index_of(name + "_in2_gamma");
        b.be2 = store_.index_of(name + "_in2_beta");
        return b;
    };
    for (int s = 1; s <= 4; ++s) {
        ids_.enc[static_cast<size_t>(s - 1)] = blk("enc" + std::to_string(s));
        ids_.dec[static_cast<size_t>(s - 1)] = blk("dec" + std::to_string(s));
        ids_.link_k[static_cast<size_t>(s - 1)] = store_.index_of("link" + std::to_string(s) + "_k");
        ids_.link_b[static_cast<size_t>(s - 1)] = store_.index_of("link" + std::to_string(s) + "_b");
    }
    ids_.bneck = blk("bneck");
    for (size_t e = 0; e < kSkipEdgeCount; ++e) {
        const std::string name =
            "skip_" + std::to_string(kSkipEdges[e].first) + "_" + std::to_string(kSkipEdges[e].second);
        ids_.skip_k[e] = store_.index_of(name + "_k");
        ids_.skip_b[e] = store_.index_of(name + "_b");
    }
    for (int s = 1; s <= 3; ++s) {
        ids_.head_k[static_cast<size_t>(s - 1)] = store_.index_of("head" + std::to_string(s) + "_k");
        ids_.head_b[static_cast<size_t>(s - 1)] = store_.index_of("head" + std::to_string(s) + "_b");
    }
    ids_.final_k = store_.index_of("final_k");
    ids_.final_b = store_.index_of("final_b");
}

template <typename T>
NodeId Supernet<T>::pleaf(Graph<T>& g, size_t param, BindCtx& ctx) const {
    if (ctx.external) return (*ctx.external)[param];
    const NodeId id = g.leaf(store_.tensors[param], ctx.train);
    if (ctx.leaves) ctx.leaves->push_back({param, id});
    return id;
}

template <typename T>
NodeId Supernet<T>::conv_block(Graph<T>& g, NodeId x, const typename ParamIds::Block& ids, int64_t dilation,
                               ActKind act, BindCtx& ctx) const {
    const Axes3 dil{dilation, dilation, dilation};
    NodeId t = g.conv3d(x, pleaf(g, ids.k1, ctx), pleaf(g, ids.b1, ctx), dil);
    t = g.instance_norm(t, pleaf(g, ids.g1, ctx), pleaf(g, ids.be1, ctx));
    t = g.activation(t, act);
    t = g.conv3d(t, pleaf(g, ids.k2, ctx), pleaf(g, ids.b2, ctx), dil);
    t = g.instance_norm(t, pleaf(g, ids.g2, ctx), pleaf(g, ids.be2, ctx));
    return g.activation(t, act);
}

template <typename T>
NodeId Supernet<T>::match_node(Graph<T>& g, NodeId feature, size_t edge, Axes3 target_spatial, BindCtx& ctx) const {
    NodeId t = g.conv3d(feature, pleaf(g, ids_.skip_k[edge], ctx), pleaf(g, ids_.skip_b[edge], ctx), {1, 1, 1});
    const Shape5& s = g.value(t).shape;
    if (s.d != target_spatial.d || s.h != target_spatial.h || s.w != target_spatial.w)
        t = g.resize_trilinear(t, target_spatial.d, target_spatial.h, target_spatial.w);
    return t;
}

template <typename T>
NodeId Supernet<T>::matching(Graph<T>& g, NodeId feature, size_t edge, Axes3 target_spatial, bool train,
                             std::vector<std::pair<size_t, NodeId>>* leaves) const {
    if (edge >= kSkipEdgeCount) throw ArgumentError("matching: edge index out of range");
    BindCtx ctx{train, leaves, nullptr};
    return match_node(g, feature, edge, target_spatial, ctx);
}

template <typename T>
NodeId Supernet<T>::build_forward(Graph<T>& g, NodeId x, const ArchRealization& r, BindCtx ctx) const {
    const Shape5 xs = g.value(x).shape;
    if (xs.c != cfg_.in_channels)
        throw ShapeError("supernet forward: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                         xs.str());
    if (xs.n < 1 || xs.d < 1 || xs.h < 1 || xs.w < 1)
        throw ShapeError("supernet forward: degenerate input " + xs.str());
    Axes3 prod{1, 1, 1};
    for (const Axes3& st : r.stage_stride) {
        prod.d *= st.d;
        prod.h *= st.h;
        prod.w *= st.w;
    }
    if (xs.d % prod.d || xs.h % prod.h || xs.w % prod.w)
        throw ShapeError("supernet forward: input " + xs.str() + " not divisible by cumulative strides (" +
                         std::to_string(prod.d) + "," + std::to_string(prod.h) + "," + std::to_string(prod.w) + ")");

    // Encoder: per stage conv-IN-act x2 at the incoming resolution, then pool.
    std::array<NodeId, 4> enc_out{};
    NodeId cur = x;
    for (int s = 1; s <= 4; ++s) {
        cur = conv_block(g, cur, ids_.enc[static_cast<size_t>(s - 1)], r.dilation[static_cast<size_t>(s - 1)], r.act,
                         ctx);
        enc_out[static_cast<size_t>(s - 1)] = cur;
        const Axes3 st = r.stage_stride[static_cast<size_t>(s - 1)];
        if (st.d != 1 || st.h != 1 || st.w != 1) cur = g.pool3d(cur, r.pool, st);
    }

    cur = conv_block(g, cur, ids_.bneck, 1, r.act, ctx);

    // Decoder: resize up, concat halved-channel link, add matched skips, block.
    std::array<NodeId, 4> dec_out{};
    for (int j = 4; j >= 1; --j) {
        const Shape5 target = g.value(enc_out[static_cast<size_t>(j - 1)]).shape;
        const Shape5 have = g.value(cur).shape;
        NodeId up = cur;
        if (have.d != target.d || have.h != target.h || have.w != target.w)
            up = g.resize_trilinear(cur, target.d, target.h, target.w);
        const NodeId link = g.conv3d(enc_out[static_cast<size_t>(j - 1)], pleaf(g, ids_.link_k[static_cast<size_t>(j - 1)], ctx),
                                     pleaf(g, ids_.link_b[static_cast<size_t>(j - 1)], ctx), {1, 1, 1});
        NodeId cat = g.concat_channels(up, link);
        for (size_t e = 0; e < kSkipEdgeCount; ++e) {
            if (kSkipEdges[e].second != j || !r.skip[e]) continue;
            const NodeId m =
                match_node(g, enc_out[static_cast<size_t>(kSkipEdges[e].first - 1)], e, {target.d, target.h, target.w}, ctx);
            cat = g.add(cat, m);
        }
        cur = conv_block(g, cat, ids_.dec[static_cast<size_t>(j - 1)], 1, r.act, ctx);
        dec_out[static_cast<size_t>(j - 1)] = cur;
    }

    // Deep supervision: stage-2/3 heads resized to stage-1 resolution, summed.
    NodeId sum = g.conv3d(dec_out[0], pleaf(g, ids_.head_k[0], ctx), pleaf(g, ids_.head_b[0], ctx), {1, 1, 1});
    for (int s = 2; s <= 3; ++s) {
        NodeId h = g.conv3d(dec_out[static_cast<size_t>(s - 1)], pleaf(g, ids_.head_k[static_cast<size_t>(s - 1)], ctx),
                            pleaf(g, ids_.head_b[static_cast<size_t>(s - 1)], ctx), {1, 1, 1});
        const Shape5& hs = g.value(h).shape;
        if (hs.d != xs.d || hs.h != xs.h || hs.w != xs.w) h = g.resize_trilinear(h, xs.d, xs.h, xs.w);
        sum = g.add(sum, h);
    }
    return g.conv3d(sum, pleaf(g, ids_.final_k, ctx), pleaf(g, ids_.final_b, ctx), {1, 1, 1});
}

template <typename T>
ForwardResult<T> Supernet<T>::forward(Graph<T>& g, NodeId x, const ArchRealization& r, bool train) const {
    ForwardResult<T> res;
    res.logits = build_forward(g, x, r, BindCtx{train, &res.params, nullptr});
    return res;
}

template <typename T>
NodeId Supernet<T>::forward_with_leaves(Graph<T>& g, NodeId x, const ArchRealization& r,
                                        const std::vector<NodeId>& param_leaves) const {
    if (param_leaves.size() != store_.tensors.size())
        throw ArgumentError("forward_with_leaves: expected " + std::to_string(store_.tensors.size()) + " leaves, got " +
                            std::to_string(param_leaves.size()));
    return build_forward(g, x, r, BindCtx{false, nullptr, &param_leaves});
}

template <typename T>
std::vector<size_t> Supernet<T>::active_param_ids(const ArchRealization& r) const {
    std::vector<bool> inactive(store_.tensors.size(), false);
    for (size_t e = 0; e < kSkipEdgeCount; ++e) {
        if (r.skip[e]) continue;
        inactive[ids_.skip_k[e]] = true;
        inactive[ids_.skip_b[e]] = true;
    }
    std::vector<size_t> out;
    out.reserve(store_.tensors.size());
    for (size_t i = 0; i < store_.tensors.size(); ++i)
        if (!inactive[i]) out.push_back(i);
    return out;
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template class Supernet<float>;
template class Supernet<double>;

}  // namespace voxnas
