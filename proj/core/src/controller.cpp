#include "voxnas/controller.hpp"

#include <algorithm>
#include <cmath>

#include "voxnas/errors.hpp"
#include "voxnas/graph.hpp"

namespace voxnas {

namespace {

std::vector<double> softmax_double(const Tensor5<float>& logits) {
    const int64_t k = logits.shape.c;
    std::vector<double> p(static_cast<size_t>(k));
    double mx = logits.data[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(logits.data[static_cast<size_t>(i)]));
    double sum = 0.0;
    for (int64_t i = 0; i < k; ++i) {
        p[static_cast<size_t>(i)] = std::exp(static_cast<double>(logits.data[static_cast<size_t>(i)]) - mx);
        sum += p[static_cast<size_t>(i)];
    }
    for (auto& v : p) v /= sum;
    return p;
}

double entropy_of(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace

Controller::Controller(ControllerConfig cfg, const DecisionSchema& schema, uint64_t seed)
    : cfg_(cfg), schema_(schema) {
    if (cfg_.hidden < 1 || cfg_.embed < 1) throw ArgumentError("controller: hidden/embed sizes must be positive");
    if (schema_.decisions.empty()) throw ArgumentError("controller: schema has no decisions");

    Rng rng(seed);
    const int64_t H = cfg_.hidden, E = cfg_.embed;
    auto uniform_tensor = [&](Shape5 s, double bound) {
        Tensor5<float> t(s);
        for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
        return t;
    };

    wx_ = store_.add("lstm_wx", uniform_tensor(Shape5{4 * H, E, 1, 1, 1}, 1.0 / std::sqrt(static_cast<double>(E))));
    wh_ = store_.add("lstm_wh", uniform_tensor(Shape5{4 * H, H, 1, 1, 1}, 1.0 / std::sqrt(static_cast<double>(H))));
    b_ = store_.add("lstm_b", Tensor5<float>(Shape5{1, 4 * H, 1, 1, 1}));
    start_ = store_.add("start", uniform_tensor(Shape5{1, E, 1, 1, 1}, 0.1));
    for (size_t t = 0; t < schema_.decisions.size(); ++t)
        offset_.push_back(store_.add("offset_" + std::to_string(t), uniform_tensor(Shape5{1, E, 1, 1, 1}, 0.1)));
    embed_.resize(schema_.decisions.size());
    for (size_t t = 0; t < schema_.decisions.size(); ++t)
        for (size_t ch = 0; ch < schema_.decisions[t].size(); ++ch)
            embed_[t].push_back(store_.add("embed_" + std::to_string(t) + "_" + std::to_string(ch),
                                           uniform_tensor(Shape5{1, E, 1, 1, 1}, 0.1)));
    for (size_t t = 0; t < schema_.decisions.size(); ++t) {
        const int64_t k = static_cast<int64_t>(schema_.decisions[t].size());
        // Zero heads make the initial policy exactly uniform.
        head_k_.push_back(store_.add("head_" + std::to_string(t) + "_k", Tensor5<float>(Shape5{k, H, 1, 1, 1})));
        head_b_.push_back(store_.add("head_" + std::to_string(t) + "_b", Tensor5<float>(Shape5{1, k, 1, 1, 1})));
    }

    adam_ = Adam<float>(AdamConfig{cfg_.lr, cfg_.weight_decay, 0.9, 0.999, 1e-8}, store_.tensors.size());
}

NodeId Controller::pleaf(Graph<float>& g, size_t param, bool train,
                         std::vector<std::pair<size_t, NodeId>>* leaves) const {
    const NodeId id = g.leaf(store_.tensors[param], train);
    if (leaves) leaves->push_back({param, id});
    return id;
}

template <typename Pick>
std::vector<Controller::StepTrace> Controller::unroll(Graph<float>& g, bool train,
                                                      const std::vector<int64_t>* actions, Pick pick,
                                                      std::vector<std::pair<size_t, NodeId>>* leaves,
                                                      std::vector<NodeId>& memo,
                                                      std::vector<int64_t>& taken) const {
    auto leaf_of = [&](size_t param) {
        if (memo[param] < 0) memo[param] = pleaf(g, param, train, leaves);
        return memo[param];
    };

    const int64_t H = cfg_.hidden;
    const NodeId wx = leaf_of(wx_), wh = leaf_of(wh_), bias = leaf_of(b_);
    const NodeId zero4h = g.leaf(Tensor5<float>(Shape5{1, 4 * H, 1, 1, 1}), false);
    NodeId h = g.leaf(Tensor5<float>(Shape5{1, H, 1, 1, 1}), false);
    NodeId c = g.leaf(Tensor5<float>(Shape5{1, H, 1, 1, 1}), false);

    std::vector<StepTrace> traces;
    traces.reserve(schema_.decisions.size());
    taken.clear();

    for (size_t t = 0; t < schema_.decisions.size(); ++t) {
        const NodeId base = t == 0 ? leaf_of(start_) : leaf_of(embed_[t - 1][static_cast<size_t>(taken[t - 1])]);
        const NodeId x = g.add(base, leaf_of(offset_[t]));
        const NodeId z = g.add(g.conv3d(x, wx, bias, {1, 1, 1}), g.conv3d(h, wh, zero4h, {1, 1, 1}));
        const NodeId gi = g.sigmoid(g.slice_channels(z, 0, H));
        const NodeId gf = g.sigmoid(g.slice_channels(z, H, H));
        const NodeId gg = g.tanh(g.slice_channels(z, 2 * H, H));
        const NodeId go = g.sigmoid(g.slice_channels(z, 3 * H, H));
        c = g.add(g.mul(gf, c), g.mul(gi, gg));
        h = g.mul(go, g.tanh(c));

        const NodeId logits = g.conv3d(h, leaf_of(head_k_[t]), leaf_of(head_b_[t]), {1, 1, 1});
        StepTrace trace{logits, softmax_double(g.value(logits))};
        const int64_t a = actions ? (*actions)[t] : pick(t, trace.probs);
        if (a < 0 || static_cast<size_t>(a) >= schema_.decisions[t].size())
            throw ArgumentError("controller: action " + std::to_string(a) + " out of range at decision '" +
                                schema_.decisions[t].name + "'");
        taken.push_back(a);
        traces.push_back(std::move(trace));
    }
    return traces;
}

Rollout Controller::sample(Rng& rng) const {
    Graph<float> g;
    std::vector<int64_t> taken;
    std::vector<NodeId> memo(store_.tensors.size(), -1);
    auto pick = [&rng](size_t, const std::vector<double>& p) {
        return rng.categorical(p.data(), static_cast<int64_t>(p.size()));
    };
    const auto traces = unroll(g, false, nullptr, pick, nullptr, memo, taken);

    Rollout r;
    r.actions.indices = taken;
    for (size_t t = 0; t < traces.size(); ++t) {
        r.log_probs.push_back(std::log(traces[t].probs[static_cast<size_t>(taken[t])]));
        r.entropies.push_back(entropy_of(traces[t].probs));
    }
    return r;
}

Rollout Controller::greedy_rollout() const {
    Graph<float> g;
    std::vector<int64_t> taken;
    std::vector<NodeId> memo(store_.tensors.size(), -1);
    auto pick = [](size_t, const std::vector<double>& p) {
        int64_t best = 0;
        for (size_t i = 1; i < p.size(); ++i)
            if (p[i] > p[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
        return best;
    };
    const auto traces = unroll(g, false, nullptr, pick, nullptr, memo, taken);
    Rollout r;
    r.actions.indices = taken;
    for (size_t t = 0; t < traces.size(); ++t) {
        r.log_probs.push_back(std::log(traces[t].probs[static_cast<size_t>(taken[t])]));
        r.entropies.push_back(entropy_of(traces[t].probs));
    }
    return r;
}

ArchChoice Controller::greedy() const { return greedy_rollout().actions; }

UpdateStats Controller::reinforce_update(const std::vector<Rollout>& rollouts, const std::vector<double>& rewards) {
    if (rollouts.empty()) throw ArgumentError("reinforce_update: no rollouts");
    if (rollouts.size() != rewards.size())
        throw ArgumentError("reinforce_update: " + std::to_string(rollouts.size()) + " rollouts vs " +
                            std::to_string(rewards.size()) + " rewards");
    for (const Rollout& r : rollouts)
        if (r.actions.indices.size() != schema_.decisions.size())
            throw ArgumentError("reinforce_update: rollout length mismatch");
    double mean_reward = 0.0;
    for (double r : rewards) {
        if (!std::isfinite(r)) throw NumericError("reinforce_update: non-finite reward");
        mean_reward += r;
    }
    mean_reward /= static_cast<double>(rewards.size());

    if (!baseline_init_) {
        baseline_ = mean_reward;
        baseline_init_ = true;
    }

    Graph<float> g;
    // One leaf per parameter across all rollouts, so each leaf's gradient
    // accumulates every use before the single Adam step.
    std::vector<std::pair<size_t, NodeId>> leaves;
    std::vector<NodeId> memo(store_.tensors.size(), -1);
    double entropy_acc = 0.0;
    NodeId total = -1;

    for (size_t r = 0; r < rollouts.size(); ++r) {
        std::vector<int64_t> taken;
        auto no_pick = [](size_t, const std::vector<double>&) -> int64_t { return 0; };
        const auto traces = unroll(g, true, &rollouts[r].actions.indices, no_pick, &leaves, memo, taken);

        NodeId sum_lp = -1, sum_h = -1;
        double rollout_entropy = 0.0;
        for (size_t t = 0; t < traces.size(); ++t) {
            const NodeId lp = g.log_prob_categorical(traces[t].logits, rollouts[r].actions.indices[t]);
            const NodeId he = g.entropy_categorical(traces[t].logits);
            rollout_entropy += g.value(he).data[0];
            sum_lp = t == 0 ? lp : g.add(sum_lp, lp);
            sum_h = t == 0 ? he : g.add(sum_h, he);
        }
        entropy_acc += rollout_entropy / static_cast<double>(traces.size());

        const float adv = static_cast<float>(rewards[r] - baseline_);
        const NodeId term =
            g.add(g.scale(sum_lp, -adv), g.scale(sum_h, -static_cast<float>(cfg_.entropy_coef)));
        total = r == 0 ? term : g.add(total, term);
    }

    const NodeId loss = g.scale(total, 1.0f / static_cast<float>(rollouts.size()));
    g.backward(loss);
    for (auto [idx, node] : leaves) adam_.step(idx, store_.tensors[idx], g.grad(node));

    UpdateStats stats;
    stats.mean_reward = mean_reward;
    stats.mean_entropy = entropy_acc / static_cast<double>(rollouts.size());
    stats.loss = static_cast<double>(g.value(loss).data[0]);
    stats.baseline = baseline_;
    baseline_ = cfg_.baseline_decay * baseline_ + (1.0 - cfg_.baseline_decay) * mean_reward;
    return stats;
}

}  // namespace voxnas
