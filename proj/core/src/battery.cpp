// The standard gradient-check battery: every differentiable op at small
// shapes, the feature-matching composition, and a full network forward with
// shared weights checked through caller-minted leaves.

#include <utility>

#include "voxnas/grad_check.hpp"
#include "voxnas/ops.hpp"
#include "voxnas/rng.hpp"
#include "voxnas/supernet.hpp"

namespace voxnas {

namespace {

Tensor5<double> urand(Shape5 s, Rng& rng, double lo, double hi) {
    Tensor5<double> t(s);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Globally distinct values on a coarse grid, bounded away from zero: safe
// for FD through max-pool argmaxes and activation kinks (step 0.013 >> 2h).
Tensor5<double> distinct_grid(Shape5 s, Rng& rng) {
    Tensor5<double> t(s);
    const int64_t n = t.numel();
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(i + 1))]);
    for (int64_t i = 0; i < n; ++i)
        t.data[static_cast<size_t>(i)] =
            (static_cast<double>(perm[static_cast<size_t>(i)] - n / 2) + 0.25) * 0.013;
    return t;
}

// Reduces a non-scalar node to a scalar via a fixed random weighting, so
// every output element contributes with its own coefficient.
LossBuilder weighted(std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)> body,
                     Tensor5<double> w) {
    return [body = std::move(body), w = std::move(w)](Graph<double>& g,
                                                      const std::vector<NodeId>& in) {
        const NodeId y = body(g, in);
        return g.sum_all(g.mul(y, g.leaf(w, false)));
    };
}

}  // namespace

std::vector<GradCheckCase> gradcheck_battery(uint64_t seed, int64_t sample_per_tensor) {
    Rng rng(seed);
    std::vector<GradCheckCase> out;
    auto run = [&](const std::string& name, const std::vector<Tensor5<double>>& inputs,
                   const LossBuilder& build) {
        out.push_back({name, grad_check(inputs, build, 1e-4, sample_per_tensor, seed)});
    };

    // conv3d, both kernel extents, dilations 1-3 plus one anisotropic.
    {
        const Tensor5<double> x = urand(Shape5{1, 2, 3, 4, 4}, rng, -1.0, 1.0);
        const Tensor5<double> k = urand(Shape5{3, 2, 1, 1, 1}, rng, -1.0, 1.0);
        const Tensor5<double> b = urand(Shape5{1, 3, 1, 1, 1}, rng, -0.5, 0.5);
        const Tensor5<double> w = urand(Shape5{1, 3, 3, 4, 4}, rng, -1.0, 1.0);
        run("conv3d_k1", {x, k, b}, weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.conv3d(in[0], in[1], in[2]);
            }, w));
    }
    for (int64_t dil : {1, 2, 3}) {
        const Tensor5<double> x = urand(Shape5{1, 2, 4, 6, 6}, rng, -1.0, 1.0);
        const Tensor5<double> k = urand(Shape5{2, 2, 3, 3, 3}, rng, -1.0, 1.0);
        const Tensor5<double> b = urand(Shape5{1, 2, 1, 1, 1}, rng, -0.5, 0.5);
        const Tensor5<double> w = urand(Shape5{1, 2, 4, 6, 6}, rng, -1.0, 1.0);
        run("conv3d_k3_dil" + std::to_string(dil), {x, k, b},
            weighted([dil](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.conv3d(in[0], in[1], in[2], Axes3{dil, dil, dil});
            }, w));
    }
    {
        const Tensor5<double> x = urand(Shape5{1, 2, 4, 6, 6}, rng, -1.0, 1.0);
        const Tensor5<double> k = urand(Shape5{2, 2, 3, 3, 3}, rng, -1.0, 1.0);
        const Tensor5<double> b = urand(Shape5{1, 2, 1, 1, 1}, rng, -0.5, 0.5);
        const Tensor5<double> w = urand(Shape5{1, 2, 4, 6, 6}, rng, -1.0, 1.0);
        run("conv3d_k3_dil_1_2_2", {x, k, b},
            weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.conv3d(in[0], in[1], in[2], Axes3{1, 2, 2});
            }, w));
    }

    // pool3d: max over distinct values (stable argmax under +-h), avg plain.
    for (const auto& [tag, stride] :
         {std::pair<const char*, Axes3>{"pool3d_max_222", {2, 2, 2}},
          std::pair<const char*, Axes3>{"pool3d_max_122", {1, 2, 2}}}) {
        const Tensor5<double> x = distinct_grid(Shape5{1, 2, 4, 6, 6}, rng);
        const Tensor5<double> w = urand(
            Shape5{1, 2, 4 / stride.d, 6 / stride.h, 6 / stride.w}, rng, -1.0, 1.0);
        run(tag, {x}, weighted([s = stride](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.pool3d(in[0], PoolKind::kMax, s);
            }, w));
    }
    {
        const Tensor5<double> x = urand(Shape5{1, 2, 4, 6, 6}, rng, -1.0, 1.0);
        const Tensor5<double> w = urand(Shape5{1, 2, 2, 3, 3}, rng, -1.0, 1.0);
        run("pool3d_avg_222", {x}, weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.pool3d(in[0], PoolKind::kAvg, Axes3{2, 2, 2});
            }, w));
    }

    {
        const Tensor5<double> x = urand(Shape5{1, 2, 4, 4, 4}, rng, -1.0, 1.0);
        const Tensor5<double> gamma = urand(Shape5{1, 2, 1, 1, 1}, rng, 0.5, 1.5);
        const Tensor5<double> beta = urand(Shape5{1, 2, 1, 1, 1}, rng, -0.5, 0.5);
        const Tensor5<double> w = urand(Shape5{1, 2, 4, 4, 4}, rng, -1.0, 1.0);
        run("instance_norm", {x, gamma, beta},
            weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.instance_norm(in[0], in[1], in[2]);
            }, w));
    }

    for (const auto& [tag, from, to] :
         {std::tuple<const char*, Shape5, Axes3>{"resize_trilinear_up", {1, 2, 3, 4, 4}, {4, 6, 6}},
          std::tuple<const char*, Shape5, Axes3>{"resize_trilinear_down", {1, 2, 4, 6, 6}, {2, 3, 3}},
          std::tuple<const char*, Shape5, Axes3>{"resize_trilinear_degenerate",
                                                 {1, 1, 1, 4, 4},
                                                 {3, 4, 4}}}) {
        const Tensor5<double> x = urand(from, rng, -1.0, 1.0);
        const Tensor5<double> w = urand(Shape5{from.n, from.c, to.d, to.h, to.w}, rng, -1.0, 1.0);
        run(tag, {x}, weighted([t = to](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.resize_trilinear(in[0], t.d, t.h, t.w);
            }, w));
    }

    // Feature matching: 1x1x1 conv then resize to the target extents.
    {
        const Tensor5<double> x = urand(Shape5{1, 2, 3, 4, 4}, rng, -1.0, 1.0);
        const Tensor5<double> k = urand(Shape5{3, 2, 1, 1, 1}, rng, -1.0, 1.0);
        const Tensor5<double> b = urand(Shape5{1, 3, 1, 1, 1}, rng, -0.5, 0.5);
        const Tensor5<double> w = urand(Shape5{1, 3, 4, 6, 6}, rng, -1.0, 1.0);
        run("matching_op", {x, k, b},
            weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.resize_trilinear(g.conv3d(in[0], in[1], in[2]), 4, 6, 6);
            }, w));
    }

    for (const ActKind act : {ActKind::kRelu, ActKind::kLeakyRelu, ActKind::kElu}) {
        const Tensor5<double> x = distinct_grid(Shape5{1, 2, 3, 4, 4}, rng);
        const Tensor5<double> w = urand(Shape5{1, 2, 3, 4, 4}, rng, -1.0, 1.0);
        run(std::string("activation_") + to_string(act), {x},
            weighted([act](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.activation(in[0], act);
            }, w));
    }
    {
        const Tensor5<double> x = urand(Shape5{1, 2, 3, 4, 4}, rng, -2.0, 2.0);
        const Tensor5<double> w = urand(Shape5{1, 2, 3, 4, 4}, rng, -1.0, 1.0);
        run("tanh", {x}, weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.tanh(in[0]);
            }, w));
        run("sigmoid", {x}, weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                return g.sigmoid(in[0]);
            }, w));
    }
    {
        const Tensor5<double> a = urand(Shape5{1, 2, 3, 4, 4}, rng, -1.0, 1.0);
        const Tensor5<double> b = urand(Shape5{1, 2, 3, 4, 4}, rng, -1.0, 1.0);
        const Tensor5<double> w = urand(Shape5{1, 4, 3, 4, 4}, rng, -1.0, 1.0);
        run("concat_slice_add_scale", {a, b},
            weighted([](Graph<double>& g, const std::vector<NodeId>& in) {
                const NodeId cat = g.concat_channels(in[0], in[1]);
                const NodeId left = g.slice_channels(cat, 0, 2);
                const NodeId right = g.slice_channels(cat, 2, 2);
                return g.concat_channels(g.add(left, g.scale(right, 0.7)), g.mul(left, right));
            }, w));
    }

    {
        Tensor5<double> pred = urand(Shape5{1, 2, 4, 4, 4}, rng, 0.1, 0.9);
        Tensor5<double> target(Shape5{1, 2, 4, 4, 4});
        for (auto& v : target.data) v = rng.coin() ? 1.0 : 0.0;
        run("dice_loss", {pred}, [target](Graph<double>& g, const std::vector<NodeId>& in) {
            return g.dice_loss(in[0], g.leaf(target, false));
        });
    }

    {
        const Tensor5<double> logits = urand(Shape5{1, 5, 1, 1, 1}, rng, -1.5, 1.5);
        run("log_prob_categorical", {logits}, [](Graph<double>& g, const std::vector<NodeId>& in) {
            return g.log_prob_categorical(in[0], 2);
        });
        run("entropy_categorical", {logits}, [](Graph<double>& g, const std::vector<NodeId>& in) {
            return g.entropy_categorical(in[0]);
        });
    }

    // Full network forward with shared weights bound to harness leaves.
    {
        TaskStats stats;
        stats.median_d = stats.min_d = 4;
        stats.median_h = stats.min_h = 6;
        stats.median_w = stats.min_w = 6;
        stats.in_channels = 1;
        stats.out_channels = 1;
        const DecisionSchema schema = build_schema(stats);
        SupernetConfig cfg;
        cfg.base_channels = 2;
        cfg.in_channels = 1;
        cfg.out_channels = 1;
        const Supernet<double> net(cfg, schema, seed + 1);

        ArchChoice choice = max_architecture(schema);
        auto set = [&](const char* name, const std::string& repr) {
            for (size_t i = 0; i < schema.decisions.size(); ++i) {
                if (schema.decisions[i].name != name) continue;
                for (size_t j = 0; j < schema.decisions[i].size(); ++j)
                    if (schema.decisions[i].choice_repr(j) == repr) choice.indices[i] = static_cast<int64_t>(j);
            }
        };
        set("dilation2", "2");
        set("dilation3", "3");
        set("pool", "avg");        // C1 everywhere, so FD stays clean
        set("activation", "elu");
        const ArchRealization r = resolve(schema, choice);

        std::vector<Tensor5<double>> inputs;
        inputs.push_back(urand(Shape5{1, 1, 4, 6, 6}, rng, -1.0, 1.0));
        for (const auto& t : net.params().tensors) inputs.push_back(t);
        // Small weighting keeps the FD evaluation noise of the deep
        // composition below the relative-error floor for near-zero-gradient
        // elements; comparisons for meaningful gradients are scale-invariant.
        const Tensor5<double> w = urand(Shape5{1, 1, 4, 6, 6}, rng, -0.01, 0.01);
        const int64_t per_tensor = sample_per_tensor > 0 ? sample_per_tensor : 48;
        LossBuilder build = weighted(
            [&net, r](Graph<double>& g, const std::vector<NodeId>& in) {
                const std::vector<NodeId> leaves(in.begin() + 1, in.end());
                return net.forward_with_leaves(g, in[0], r, leaves);
            },
            w);
        out.push_back({"supernet_forward", grad_check(inputs, build, 1e-4, per_tensor, seed)});
    }

    return out;
}

}  // namespace voxnas
