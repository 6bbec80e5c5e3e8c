#include <benchmark/benchmark.h>

#include "voxnas/controller.hpp"
#include "voxnas/engine.hpp"
#include "voxnas/graph.hpp"
#include "voxnas/rng.hpp"
#include "voxnas/search_space.hpp"
#include "voxnas/supernet.hpp"

namespace {

using namespace voxnas;

Tensor5<float> rand_tensor(Shape5 s, uint64_t seed) {
    Rng rng(seed);
    Tensor5<float> t(s);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

DecisionSchema bench_schema() {
    TaskStats st;
    st.median_d = st.min_d = 16;
    st.median_h = st.min_h = st.median_w = st.min_w = 48;
    return build_schema(st);
}

void BM_conv3d_forward(benchmark::State& state) {
    const int64_t c = state.range(0);
    const Tensor5<float> x = rand_tensor(Shape5{1, c, 16, 32, 32}, 1);
    const Tensor5<float> k = rand_tensor(Shape5{c, c, 3, 3, 3}, 2);
    const Tensor5<float> b = rand_tensor(Shape5{1, c, 1, 1, 1}, 3);
    for (auto _ : state) {
        Graph<float> g;
        const NodeId y = g.conv3d(g.leaf(x, false), g.leaf(k, false), g.leaf(b, false));
        benchmark::DoNotOptimize(g.value(y).ptr());
    }
    state.SetItemsProcessed(state.iterations() * x.shape.spatial() * c * c * 27);
}
BENCHMARK(BM_conv3d_forward)->Arg(4)->Arg(8);

void BM_conv3d_train_step(benchmark::State& state) {
    const int64_t c = state.range(0);
    const Tensor5<float> x = rand_tensor(Shape5{1, c, 16, 32, 32}, 1);
    const Tensor5<float> k = rand_tensor(Shape5{c, c, 3, 3, 3}, 2);
    const Tensor5<float> b = rand_tensor(Shape5{1, c, 1, 1, 1}, 3);
    for (auto _ : state) {
        Graph<float> g;
        const NodeId kid = g.leaf(k, true);
        const NodeId loss = g.sum_all(g.conv3d(g.leaf(x, true), kid, g.leaf(b, true)));
        g.backward(loss);
        benchmark::DoNotOptimize(g.grad(kid).ptr());
    }
}
BENCHMARK(BM_conv3d_train_step)->Arg(4)->Arg(8);

void BM_supernet_forward(benchmark::State& state) {
    const DecisionSchema schema = bench_schema();
    SupernetConfig cfg;
    cfg.base_channels = state.range(0);
    const Supernet<float> net(cfg, schema, 7);
    const ArchRealization r = resolve(schema, max_architecture(schema));
    const Tensor5<float> x = rand_tensor(Shape5{1, 1, 16, 48, 48}, 4);
    for (auto _ : state) {
        Graph<float> g;
        const ForwardResult<float> fr = net.forward(g, g.leaf(x, false), r, false);
        benchmark::DoNotOptimize(g.value(fr.logits).ptr());
    }
}
BENCHMARK(BM_supernet_forward)->Arg(2)->Arg(4);

void BM_controller_sample(benchmark::State& state) {
    const DecisionSchema schema = bench_schema();
    const Controller ctrl(ControllerConfig{}, schema, 11);
    Rng rng(3);
    for (auto _ : state) {
        const Rollout r = ctrl.sample(rng);
        benchmark::DoNotOptimize(r.actions.indices.data());
    }
}
BENCHMARK(BM_controller_sample);

void BM_controller_update(benchmark::State& state) {
    const DecisionSchema schema = bench_schema();
    Controller ctrl(ControllerConfig{}, schema, 11);
    Rng rng(3);
    std::vector<Rollout> rollouts;
    std::vector<double> rewards;
    for (int i = 0; i < 20; ++i) {
        rollouts.push_back(ctrl.sample(rng));
        rewards.push_back(0.25 + 0.5 * rng.uniform());
    }
    for (auto _ : state) {
        const UpdateStats s = ctrl.reinforce_update(rollouts, rewards);
        benchmark::DoNotOptimize(s.loss);
    }
}
BENCHMARK(BM_controller_update);

}  // namespace

BENCHMARK_MAIN();
