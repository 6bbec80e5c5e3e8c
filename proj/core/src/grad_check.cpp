#include "voxnas/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "voxnas/errors.hpp"
#include "voxnas/rng.hpp"

namespace voxnas {

namespace {

double eval_loss(const std::vector<Tensor5<double>>& inputs, const LossBuilder& build) {
    Graph<double> g;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const auto& t : inputs) ids.push_back(g.leaf(t, false));
    const NodeId loss = build(g, ids);
    const auto& v = g.value(loss);
    if (v.numel() != 1) throw ShapeError("grad_check: loss must be scalar, got " + v.shape.str());
    return v.data[0];
}

}  // namespace

GradCheckReport grad_check(const std::vector<Tensor5<double>>& inputs, const LossBuilder& build, double h,
                           int64_t max_elems_per_input, uint64_t seed) {
    // Analytic gradients from one taped pass.
    Graph<double> g;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const auto& t : inputs) ids.push_back(g.leaf(t, true));
    const NodeId loss = build(g, ids);
    g.backward(loss);

    std::vector<Tensor5<double>> analytic;
    analytic.reserve(inputs.size());
    for (NodeId id : ids) analytic.push_back(g.grad(id));

    GradCheckReport rep;
    Rng rng(seed);
    std::vector<Tensor5<double>> probe = inputs;
    for (size_t i = 0; i < probe.size(); ++i) {
        const int64_t n = probe[i].numel();
        std::vector<int64_t> elems;
        if (max_elems_per_input > 0 && n > max_elems_per_input) {
            // Distinct sample, deterministic per seed.
            std::vector<int64_t> all(static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) all[static_cast<size_t>(j)] = j;
            for (int64_t j = 0; j < max_elems_per_input; ++j) {
                const int64_t pick = j + rng.uniform_int(n - j);
                std::swap(all[static_cast<size_t>(j)], all[static_cast<size_t>(pick)]);
            }
            elems.assign(all.begin(), all.begin() + static_cast<size_t>(max_elems_per_input));
            std::sort(elems.begin(), elems.end());
        } else {
            elems.resize(static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) elems[static_cast<size_t>(j)] = j;
        }

        for (int64_t j : elems) {
            const double orig = probe[i].data[static_cast<size_t>(j)];
            probe[i].data[static_cast<size_t>(j)] = orig + h;
            const double fp = eval_loss(probe, build);
            probe[i].data[static_cast<size_t>(j)] = orig - h;
            const double fm = eval_loss(probe, build);
            probe[i].data[static_cast<size_t>(j)] = orig;

            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i].data[static_cast<size_t>(j)];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            rep.checked += 1;
        }
    }
    return rep;
}

}  // namespace voxnas
